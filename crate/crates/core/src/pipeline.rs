//! End-to-end run: plan, simulate, fit each device's crops, aggregate at
//! the edges, fuse at the cloud and score the result.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arp::{plan, plan_even, Plan};
use crate::costmodel::{DeviceId, EdgeId};
use crate::error::{Error, Result};
use crate::geometry::{CameraSet, Point2, WeightedPartition};
use crate::scenario::{ScenarioFile, SplatSettings};
use crate::sim::{simulate, CloudMode, LatencyReport};
use crate::splat2d::{
    aggregate_models, evaluate_model, fit, merge_by_owner, AggregateParams, CanvasFrame,
    ImageBuffer, Quality, SplatModel, View,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    Merge,
    Aggregate,
}

impl FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "merge" => Ok(Fusion::Merge),
            "aggregate" => Ok(Fusion::Aggregate),
            other => Err(Error::invalid(format!(
                "unknown fusion mode {other:?} (expected merge or aggregate)"
            ))),
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::Merge => "merge",
            Fusion::Aggregate => "aggregate",
        })
    }
}

/// Square crop of side `crop` centred on each camera, shifted to stay on
/// the canvas.
pub fn camera_views(cams: &CameraSet, frame: &CanvasFrame, crop: usize) -> Vec<View> {
    let (cw, ch) = (crop.min(frame.width), crop.min(frame.height));
    cams.iter()
        .map(|c| {
            let p = frame.to_canvas(c.position);
            let place = |centre: f64, size: usize, extent: usize| {
                let start = (centre - size as f64 / 2.0).round().max(0.0) as usize;
                start.min(extent - size)
            };
            View::new(
                place(p.x, cw, frame.width),
                place(p.y, ch, frame.height),
                cw,
                ch,
            )
        })
        .collect()
}

/// A device's trained model and the crops it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceModel {
    pub edge_id: EdgeId,
    pub device_id: DeviceId,
    pub model: SplatModel,
    pub views: Vec<View>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    edge_id: EdgeId,
    device_id: DeviceId,
    file: String,
    views: Vec<View>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    frame: CanvasFrame,
    partition: WeightedPartition,
    devices: Vec<ManifestEntry>,
}

const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_FORMAT: &str = "tiersplat-device-models";

/// Device models on disk: one model file per device plus a manifest with
/// their views and the partition they were planned under.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    pub frame: CanvasFrame,
    pub partition: WeightedPartition,
    pub devices: Vec<DeviceModel>,
}

impl ModelSet {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.devices.len());
        for d in &self.devices {
            let file = format!("edge{}_device{}.model", d.edge_id, d.device_id);
            d.model.save(dir.join(&file))?;
            entries.push(ManifestEntry {
                edge_id: d.edge_id,
                device_id: d.device_id,
                file,
                views: d.views.clone(),
            });
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            frame: self.frame,
            partition: self.partition.clone(),
            devices: entries,
        };
        std::fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        if manifest.format != MANIFEST_FORMAT || manifest.version != 1 {
            return Err(Error::invalid(format!(
                "{}: not a version 1 {MANIFEST_FORMAT} manifest",
                dir.join(MANIFEST_FILE).display()
            )));
        }
        let devices = manifest
            .devices
            .into_iter()
            .map(|e| {
                Ok(DeviceModel {
                    edge_id: e.edge_id,
                    device_id: e.device_id,
                    model: SplatModel::load(dir.join(&e.file))?,
                    views: e.views,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            frame: manifest.frame,
            partition: manifest.partition,
            devices,
        })
    }
}

/// Canvas frame laying `image` over the world rectangle of `partition`.
pub fn frame_for(partition: &WeightedPartition, image: &ImageBuffer) -> CanvasFrame {
    CanvasFrame {
        world: partition.bounding_box,
        width: image.width,
        height: image.height,
    }
}

fn device_seed(seed: u64, edge: EdgeId, device: DeviceId) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (u64::from(edge) << 32 | u64::from(device))
}

/// Fits one model per device on the crops of the cameras the plan gives it.
/// Devices with no cameras produce no model.
pub fn fit_devices(
    plan: &Plan,
    image: &ImageBuffer,
    frame: &CanvasFrame,
    settings: &SplatSettings,
    seed: u64,
) -> Result<Vec<DeviceModel>> {
    let jobs: Vec<(EdgeId, DeviceId, Vec<View>)> = plan
        .per_edge
        .iter()
        .flat_map(|(&edge, region)| {
            region
                .sub_regions
                .iter()
                .filter(|(_, cams)| !cams.is_empty())
                .map(move |(&device, cams)| {
                    (edge, device, camera_views(cams, frame, settings.crop_px))
                })
        })
        .collect();
    let fitted: Vec<Result<DeviceModel>> = jobs
        .into_par_iter()
        .enumerate()
        .map(|(k, (edge_id, device_id, views))| {
            let params = settings.fit_params(device_seed(seed, edge_id, device_id));
            let (mut model, trace) = fit(image, &views, &params)?;
            log::debug!(
                "edge {edge_id} device {device_id}: {} views, loss {:.5} -> {:.5}",
                views.len(),
                trace.initial_loss,
                trace.final_loss
            );
            for g in &mut model.gaussians {
                g.id += (k as u64) << 32;
            }
            Ok(DeviceModel {
                edge_id,
                device_id,
                model,
                views,
            })
        })
        .collect();
    fitted.into_iter().collect()
}

/// Aggregates device models per edge, then fuses the edge models.
pub fn fuse_hierarchy(
    devices: &[DeviceModel],
    partition: &WeightedPartition,
    frame: &CanvasFrame,
    fusion: Fusion,
    params: &AggregateParams,
) -> Result<SplatModel> {
    let mut per_edge: BTreeMap<EdgeId, Vec<(SplatModel, Vec<View>)>> = BTreeMap::new();
    for d in devices {
        per_edge
            .entry(d.edge_id)
            .or_default()
            .push((d.model.clone(), d.views.clone()));
    }
    let edges: Vec<(EdgeId, SplatModel, Vec<View>)> = per_edge
        .into_iter()
        .map(|(edge, models)| {
            let views: Vec<View> = models.iter().flat_map(|(_, v)| v.iter().copied()).collect();
            let p = AggregateParams {
                seed: params.seed ^ u64::from(edge),
                ..*params
            };
            let mut model = aggregate_models(&models, &p)?;
            for g in &mut model.gaussians {
                g.id |= u64::from(edge) << 40;
            }
            Ok((edge, model, views))
        })
        .collect::<Result<_>>()?;
    if edges.is_empty() {
        return Ok(SplatModel::new((frame.width, frame.height)));
    }
    match fusion {
        Fusion::Merge => {
            let cut: Vec<(SplatModel, EdgeId)> =
                edges.into_iter().map(|(e, m, _)| (m, e)).collect();
            merge_by_owner(&cut, |p| partition.assign_cell(&frame.to_world(p)))
        }
        Fusion::Aggregate => {
            let whole: Vec<(SplatModel, Vec<View>)> =
                edges.into_iter().map(|(_, m, v)| (m, v)).collect();
            aggregate_models(&whole, params)
        }
    }
}

/// Full-image and boundary-strip quality of `model` against `image`, with
/// strips taken along the partition's region boundaries.
pub fn score(
    model: &SplatModel,
    image: &ImageBuffer,
    partition: &WeightedPartition,
    frame: &CanvasFrame,
    strip_px: usize,
) -> Result<Quality> {
    let owner = |x: usize, y: usize| {
        let p = frame.to_world(Point2::new(x as f64 + 0.5, y as f64 + 0.5));
        partition.assign_cell(&p).unwrap_or(0)
    };
    evaluate_model(model, image, owner, strip_px)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub even: bool,
    pub fusion: Fusion,
    /// Retraining epochs for both edge and cloud aggregation.
    pub epochs: usize,
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            even: false,
            fusion: Fusion::Aggregate,
            epochs: crate::arp::DEFAULT_RETRAIN_EPOCHS,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub fusion: Fusion,
    pub psnr: f64,
    pub ssim: f64,
    pub strip_psnr: Option<f64>,
    pub strip_ssim: Option<f64>,
    pub strip_px: usize,
    pub gaussians: usize,
    pub end_to_end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub plan: Plan,
    pub report: LatencyReport,
    pub model: SplatModel,
    pub metrics: Metrics,
}

pub const PLAN_FILE: &str = "plan.json";
pub const REPORT_FILE: &str = "report.json";
pub const MODEL_FILE: &str = "fused.model";
pub const METRICS_FILE: &str = "metrics.json";

impl RunOutput {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join(PLAN_FILE),
            serde_json::to_string_pretty(&self.plan)?,
        )?;
        std::fs::write(
            dir.join(REPORT_FILE),
            serde_json::to_string_pretty(&self.report)?,
        )?;
        self.model.save(dir.join(MODEL_FILE))?;
        std::fs::write(
            dir.join(METRICS_FILE),
            serde_json::to_string_pretty(&self.metrics)?,
        )?;
        Ok(())
    }
}

/// Runs every stage in order; a failure names the stage it came from.
pub fn run_end_to_end(
    file: &ScenarioFile,
    image: &ImageBuffer,
    opts: &RunOptions,
) -> Result<RunOutput> {
    let scenario = file.to_scenario().map_err(|e| e.in_stage("validate"))?;
    let seed = opts.seed.unwrap_or(scenario.seed);
    let plan = if opts.even {
        plan_even(&scenario)
    } else {
        plan(&scenario)
    }
    .map_err(|e| e.in_stage("plan"))?;

    let cloud = match opts.fusion {
        Fusion::Merge => CloudMode::Merge,
        Fusion::Aggregate => CloudMode::for_scenario(&scenario),
    };
    let report = simulate(&scenario, &plan, &cloud).map_err(|e| e.in_stage("simulate"))?;

    let frame = frame_for(&plan.partition, image);
    let devices =
        fit_devices(&plan, image, &frame, &file.splat, seed).map_err(|e| e.in_stage("fit"))?;
    let agg = file.splat.aggregate_params(opts.epochs, seed);
    let model = fuse_hierarchy(&devices, &plan.partition, &frame, opts.fusion, &agg)
        .map_err(|e| e.in_stage("fuse"))?;
    let quality = score(&model, image, &plan.partition, &frame, file.splat.strip_px)
        .map_err(|e| e.in_stage("evaluate"))?;
    let metrics = Metrics {
        fusion: opts.fusion,
        psnr: quality.psnr,
        ssim: quality.ssim,
        strip_psnr: quality.strip_psnr,
        strip_ssim: quality.strip_ssim,
        strip_px: file.splat.strip_px,
        gaussians: model.len(),
        end_to_end: report.end_to_end,
    };
    Ok(RunOutput {
        plan,
        report,
        model,
        metrics,
    })
}
