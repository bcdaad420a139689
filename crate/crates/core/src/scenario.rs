//! Scenario files: the JSON schema, semantic validation and conversion to
//! a [`Scenario`].

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arp::{Scenario, DEFAULT_MAX_ITERATIONS, DEFAULT_RETRAIN_EPOCHS};
use crate::costmodel::{CostCurve, CurveKind, DeviceProfile, EdgeProfile, ProfileSamples};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Camera, CameraSet, Point2};
use crate::splat2d::{AggregateParams, FitParams, DEFAULT_LAMBDA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    pub id: u32,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceEntry {
    pub id: u32,
    pub bandwidth_mb_s: f64,
    pub max_cameras: usize,
    /// `[[image_count, seconds], ...]`
    pub train_curve: Vec<(u64, f64)>,
    pub init_curve: Vec<(u64, f64)>,
    /// `[[image_count, megabytes], ...]`
    pub size_curve: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeEntry {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub bandwidth_mb_s: f64,
    pub aggregate_curve: Vec<(u64, f64)>,
    pub devices: Vec<DeviceEntry>,
}

fn default_max_iterations() -> usize {
    DEFAULT_MAX_ITERATIONS
}

fn default_retrain_epochs() -> usize {
    DEFAULT_RETRAIN_EPOCHS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub step_d: f64,
    pub threshold_s: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_retrain_epochs")]
    pub retrain_epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Settings for the image-fitting half of an end-to-end run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplatSettings {
    pub gaussians_per_device: usize,
    pub iterations: usize,
    pub lambda: f64,
    pub step_size: f64,
    pub aggregate_step_size: f64,
    /// Side of the square crop each camera sees, in image pixels.
    pub crop_px: usize,
    pub strip_px: usize,
}

impl Default for SplatSettings {
    fn default() -> Self {
        Self {
            gaussians_per_device: 48,
            iterations: 200,
            lambda: DEFAULT_LAMBDA,
            step_size: 1.0,
            aggregate_step_size: AggregateParams::default().step_size,
            crop_px: 32,
            strip_px: 8,
        }
    }
}

impl SplatSettings {
    pub fn fit_params(&self, seed: u64) -> FitParams {
        FitParams {
            num_gaussians: self.gaussians_per_device,
            iterations: self.iterations,
            lambda: self.lambda,
            step_size: self.step_size,
            seed,
        }
    }

    pub fn aggregate_params(&self, epochs: usize, seed: u64) -> AggregateParams {
        AggregateParams {
            epochs,
            lambda: self.lambda,
            step_size: self.aggregate_step_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub bounding_box: BoundingBox,
    pub cameras: Vec<CameraEntry>,
    pub edges: Vec<EdgeEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud_aggregate_curve: Option<Vec<(u64, f64)>>,
    pub params: Params,
    #[serde(default)]
    pub splat: SplatSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

/// One finding, located by a JSON pointer into the scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    fn error(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            path: path.into(),
            message: message.into(),
        }
    }

    fn warning(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        let path = if self.path.is_empty() {
            "/"
        } else {
            &self.path
        };
        write!(f, "{level}: {path}: {}", self.message)
    }
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

impl ScenarioFile {
    /// Parses the document; a schema violation comes back as a diagnostic
    /// pointing at the offending value.
    pub fn parse(text: &str) -> std::result::Result<Self, Diagnostic> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = pointer(e.path());
            Diagnostic::error(path, e.into_inner().to_string())
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<std::result::Result<Self, Diagnostic>> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    /// Every violated invariant, errors first in document order, then
    /// warnings.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let b = &self.bounding_box;
        let box_ok = [b.min_x, b.min_y, b.max_x, b.max_y]
            .iter()
            .all(|v| v.is_finite())
            && b.min_x < b.max_x
            && b.min_y < b.max_y;
        if !box_ok {
            out.push(Diagnostic::error(
                "/bounding_box",
                "must be finite with min_x < max_x and min_y < max_y",
            ));
        }

        if self.cameras.is_empty() {
            out.push(Diagnostic::warning("/cameras", "scenario has no cameras"));
        }
        let mut seen: HashMap<u32, usize> = HashMap::new();
        for (i, c) in self.cameras.iter().enumerate() {
            let at = format!("/cameras/{i}");
            if let Some(first) = seen.insert(c.id, i) {
                seen.insert(c.id, first);
                out.push(Diagnostic::error(
                    format!("{at}/id"),
                    format!(
                        "duplicate camera id {} (first at /cameras/{first}/id)",
                        c.id
                    ),
                ));
            }
            let p = Point2::new(c.x, c.y);
            if !p.is_finite() {
                out.push(Diagnostic::error(at, "coordinates must be finite"));
            } else if box_ok && !b.contains(&p) {
                out.push(Diagnostic::error(
                    at,
                    format!(
                        "camera {} at ({}, {}) lies outside the bounding box",
                        c.id, c.x, c.y
                    ),
                ));
            }
        }

        if self.edges.is_empty() {
            out.push(Diagnostic::error("/edges", "at least one edge is required"));
        }
        let mut seen: HashMap<u32, usize> = HashMap::new();
        let mut capacity = 0usize;
        for (i, e) in self.edges.iter().enumerate() {
            let at = format!("/edges/{i}");
            if let Some(first) = seen.insert(e.id, i) {
                seen.insert(e.id, first);
                out.push(Diagnostic::error(
                    format!("{at}/id"),
                    format!("duplicate edge id {} (first at /edges/{first}/id)", e.id),
                ));
            }
            let p = Point2::new(e.x, e.y);
            if !p.is_finite() {
                out.push(Diagnostic::error(at.clone(), "coordinates must be finite"));
            } else if box_ok && !b.contains(&p) {
                out.push(Diagnostic::error(
                    at.clone(),
                    format!(
                        "edge {} at ({}, {}) lies outside the bounding box",
                        e.id, e.x, e.y
                    ),
                ));
            }
            check_bandwidth(&mut out, &format!("{at}/bandwidth_mb_s"), e.bandwidth_mb_s);
            check_curve(
                &mut out,
                &format!("{at}/aggregate_curve"),
                &e.aggregate_curve,
            );
            if e.devices.is_empty() {
                out.push(Diagnostic::error(
                    format!("{at}/devices"),
                    "edge has no devices",
                ));
            }
            let mut dev_seen: HashMap<u32, usize> = HashMap::new();
            for (j, d) in e.devices.iter().enumerate() {
                let dat = format!("{at}/devices/{j}");
                if let Some(first) = dev_seen.insert(d.id, j) {
                    dev_seen.insert(d.id, first);
                    out.push(Diagnostic::error(
                        format!("{dat}/id"),
                        format!(
                            "duplicate device id {} in edge {} (first at {at}/devices/{first}/id)",
                            d.id, e.id
                        ),
                    ));
                }
                check_bandwidth(&mut out, &format!("{dat}/bandwidth_mb_s"), d.bandwidth_mb_s);
                check_curve(&mut out, &format!("{dat}/train_curve"), &d.train_curve);
                check_curve(&mut out, &format!("{dat}/init_curve"), &d.init_curve);
                check_curve(&mut out, &format!("{dat}/size_curve"), &d.size_curve);
                if d.max_cameras == 0 {
                    out.push(Diagnostic::warning(
                        format!("{dat}/max_cameras"),
                        format!("device {} can hold no cameras and will be ignored", d.id),
                    ));
                }
                capacity = capacity.saturating_add(d.max_cameras);
            }
        }
        if !self.edges.is_empty() && capacity < self.cameras.len() {
            out.push(Diagnostic::error(
                "/edges",
                format!(
                    "devices hold at most {capacity} cameras in total but the scenario has {}",
                    self.cameras.len()
                ),
            ));
        }
        if let Some(c) = &self.cloud_aggregate_curve {
            check_curve(&mut out, "/cloud_aggregate_curve", c);
        }

        let p = &self.params;
        if !(p.step_d.is_finite() && p.step_d > 0.0) {
            out.push(Diagnostic::error(
                "/params/step_d",
                format!("must be positive, got {}", p.step_d),
            ));
        }
        if !(p.threshold_s.is_finite() && p.threshold_s > 0.0) {
            out.push(Diagnostic::error(
                "/params/threshold_s",
                format!("must be positive, got {}", p.threshold_s),
            ));
        }
        if p.retrain_epochs == 0 {
            out.push(Diagnostic::error(
                "/params/retrain_epochs",
                "must be at least 1",
            ));
        }

        let s = &self.splat;
        if s.gaussians_per_device == 0 {
            out.push(Diagnostic::error(
                "/splat/gaussians_per_device",
                "must be at least 1",
            ));
        }
        if !(0.0..=1.0).contains(&s.lambda) {
            out.push(Diagnostic::error(
                "/splat/lambda",
                format!("must lie in [0, 1], got {}", s.lambda),
            ));
        }
        for (name, v) in [
            ("step_size", s.step_size),
            ("aggregate_step_size", s.aggregate_step_size),
        ] {
            if !(v.is_finite() && v > 0.0) {
                out.push(Diagnostic::error(
                    format!("/splat/{name}"),
                    format!("must be positive, got {v}"),
                ));
            }
        }
        if s.crop_px == 0 {
            out.push(Diagnostic::error("/splat/crop_px", "must be at least 1"));
        }

        out.sort_by_key(|d| d.severity == Severity::Warning);
        out
    }

    /// Converts a validated document.
    pub fn to_scenario(&self) -> Result<Scenario> {
        if let Some(d) = self
            .validate()
            .into_iter()
            .find(|d| d.severity == Severity::Error)
        {
            return Err(Error::invalid(d.to_string()));
        }
        let cameras: CameraSet = self
            .cameras
            .iter()
            .map(|c| Camera::new(c.id, c.x, c.y))
            .collect();
        let curve =
            |kind, pts: &Vec<(u64, f64)>| CostCurve::fit(ProfileSamples::new(kind, pts.clone()));
        let mut edges = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            let mut devices = Vec::with_capacity(e.devices.len());
            for d in &e.devices {
                devices.push(DeviceProfile {
                    device_id: d.id,
                    train_curve: curve(CurveKind::TrainTime, &d.train_curve)?,
                    init_curve: curve(CurveKind::InitTime, &d.init_curve)?,
                    size_curve: curve(CurveKind::ModelSize, &d.size_curve)?,
                    bandwidth: d.bandwidth_mb_s,
                    max_cameras: d.max_cameras,
                });
            }
            edges.push(EdgeProfile {
                edge_id: e.id,
                position: Point2::new(e.x, e.y),
                bandwidth_to_cloud: e.bandwidth_mb_s,
                aggregate_curve: curve(CurveKind::AggregateTime, &e.aggregate_curve)?,
                devices,
            });
        }
        let cloud_aggregate_curve = self
            .cloud_aggregate_curve
            .as_ref()
            .map(|c| curve(CurveKind::AggregateTime, c))
            .transpose()?;
        Ok(Scenario {
            cameras,
            edges,
            bounding_box: self.bounding_box,
            step_d: self.params.step_d,
            threshold: self.params.threshold_s,
            max_iterations: self.params.max_iterations,
            retrain_epochs: self.params.retrain_epochs,
            seed: self.params.seed,
            cloud_aggregate_curve,
        })
    }
}

fn check_bandwidth(out: &mut Vec<Diagnostic>, at: &str, v: f64) {
    if !(v.is_finite() && v > 0.0) {
        out.push(Diagnostic::error(
            at,
            format!("bandwidth must be positive, got {v}"),
        ));
    }
}

fn check_curve(out: &mut Vec<Diagnostic>, at: &str, points: &[(u64, f64)]) {
    let samples = ProfileSamples::new(CurveKind::TrainTime, points.to_vec());
    if let Err((index, err)) = samples.check() {
        let path = match (index, &err) {
            (Some(i), Error::NonMonotone(..)) => format!("{at}/{}", i + 1),
            (Some(i), _) => format!("{at}/{i}"),
            (None, _) => at.to_string(),
        };
        out.push(Diagnostic::error(path, err.to_string()));
    }
}
