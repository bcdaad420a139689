//! Adaptive region planning.
//!
//! Regions start as the plain Voronoi cells of the edge sites. Each round the
//! edge whose predicted completion time deviates most from the mean has its
//! cell shrunk (too slow) or grown (too fast) by moving all of its boundaries
//! a distance `d` along their normals, realised as a change of the site's
//! additive weight.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::costmodel::{CostCurve, EdgeId, EdgeProfile};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, CameraId, CameraSet, Point2, Site, WeightedPartition};
use crate::rtp::{solve_even, solve_rtp, RegionPlan};

pub const DEFAULT_MAX_ITERATIONS: usize = 200;
pub const DEFAULT_RETRAIN_EPOCHS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub cameras: CameraSet,
    pub edges: Vec<EdgeProfile>,
    pub bounding_box: BoundingBox,
    /// Boundary step in metres.
    pub step_d: f64,
    /// Residual threshold in seconds.
    pub threshold: f64,
    pub max_iterations: usize,
    pub retrain_epochs: usize,
    pub seed: u64,
    /// Cloud-side aggregation time keyed by the total camera count.
    pub cloud_aggregate_curve: Option<CostCurve>,
}

impl Scenario {
    pub fn edge(&self, edge_id: EdgeId) -> Option<&EdgeProfile> {
        self.edges.iter().find(|e| e.edge_id == edge_id)
    }

    fn check(&self) -> Result<()> {
        if self.edges.is_empty() {
            return Err(Error::invalid("scenario has no edges"));
        }
        if self.step_d.is_nan() || self.step_d <= 0.0 {
            return Err(Error::invalid(format!(
                "step_d must be positive, got {}",
                self.step_d
            )));
        }
        if self.threshold.is_nan() || self.threshold <= 0.0 {
            return Err(Error::invalid(format!(
                "threshold must be positive, got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    /// Plain Voronoi partition of the edge sites.
    pub fn voronoi(&self) -> Result<WeightedPartition> {
        let sites = self
            .edges
            .iter()
            .map(|e| Site {
                site_id: e.edge_id,
                position: e.position,
                weight: 0.0,
            })
            .collect();
        WeightedPartition::new(sites, self.bounding_box)
    }
}

/// Predicted per-edge completion time and its parts, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeTime {
    pub train: f64,
    pub aggregate: f64,
    pub upload: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Arp,
    Even,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub strategy: Strategy,
    pub partition: WeightedPartition,
    pub per_edge: BTreeMap<EdgeId, RegionPlan>,
    pub predicted_edge_times: BTreeMap<EdgeId, EdgeTime>,
    pub iterations_used: usize,
    pub residual_ratio_history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<BTreeMap<EdgeId, Vec<Point2>>>,
}

impl Plan {
    pub fn max_edge_total(&self) -> f64 {
        self.predicted_edge_times
            .values()
            .map(|t| t.total)
            .fold(0.0, f64::max)
    }

    pub fn edge_cameras(&self, edge_id: EdgeId) -> Vec<CameraId> {
        self.per_edge
            .get(&edge_id)
            .map(|r| {
                let mut ids: Vec<_> = r.sub_regions.values().flat_map(|s| s.ids()).collect();
                ids.sort_unstable();
                ids
            })
            .unwrap_or_default()
    }

    pub fn attach_boundaries(&mut self, resolution: usize) -> Result<()> {
        let mut out = BTreeMap::new();
        for s in &self.partition.sites {
            out.insert(
                s.site_id,
                self.partition
                    .cell_boundary_polyline(s.site_id, resolution)?,
            );
        }
        self.boundaries = Some(out);
        Ok(())
    }
}

/// Edge completion time for a finished region plan. Edge model size is
/// the sum of its device model sizes.
pub fn edge_time_for_region(edge: &EdgeProfile, region: &RegionPlan) -> Result<EdgeTime> {
    let mut size = 0.0;
    for a in &region.allocations {
        let device = edge
            .devices
            .iter()
            .find(|d| d.device_id == a.device_id)
            .ok_or_else(|| {
                Error::PlanMismatch(format!(
                    "edge {} has no device {}",
                    edge.edge_id, a.device_id
                ))
            })?;
        size += device.size_curve.eval(a.camera_count);
    }
    let train = region.predicted_makespan;
    let aggregate = edge.aggregate_curve.eval(region.camera_count());
    let upload = size / edge.bandwidth_to_cloud;
    Ok(EdgeTime {
        train,
        aggregate,
        upload,
        total: train + aggregate + upload,
    })
}

/// Predicted completion time of `edge` when it serves `cams`.
pub fn edge_time(edge: &EdgeProfile, cams: &CameraSet) -> Result<EdgeTime> {
    edge_time_for_region(edge, &solve_rtp(edge, cams)?)
}

#[derive(Clone)]
struct Evaluation {
    per_edge: BTreeMap<EdgeId, RegionPlan>,
    times: BTreeMap<EdgeId, EdgeTime>,
    mean: f64,
    residual: f64,
}

impl Evaluation {
    fn ratio(&self) -> f64 {
        if self.mean > 0.0 {
            self.residual / self.mean
        } else {
            0.0
        }
    }

    fn max_total(&self) -> f64 {
        self.times.values().map(|t| t.total).fold(0.0, f64::max)
    }

    /// Edge deviating most from the mean, lowest id on ties.
    fn outlier(&self) -> (EdgeId, bool) {
        let mut best: Option<(f64, EdgeId, f64)> = None;
        for (&id, t) in &self.times {
            let dev = (t.total - self.mean).abs();
            if best.is_none_or(|(b, _, _)| dev > b) {
                best = Some((dev, id, t.total));
            }
        }
        let (_, id, total) = best.expect("at least one edge");
        (id, total > self.mean)
    }
}

/// Edges whose cell holds more cameras than their devices can take.
struct Overload {
    edges: Vec<(EdgeId, usize, usize)>,
}

impl Overload {
    fn excess(&self) -> usize {
        self.edges.iter().map(|&(_, r, c)| r - c).sum()
    }

    fn worst(&self) -> EdgeId {
        self.edges
            .iter()
            .max_by(|a, b| (a.1 - a.2).cmp(&(b.1 - b.2)).then(b.0.cmp(&a.0)))
            .expect("non-empty overload")
            .0
    }

    fn describe(&self) -> String {
        self.edges
            .iter()
            .map(|(e, r, c)| format!("edge {e} needs {r} cameras but holds {c}"))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

fn evaluate(
    scenario: &Scenario,
    partition: &WeightedPartition,
    solve: fn(&EdgeProfile, &CameraSet) -> Result<RegionPlan>,
) -> Result<std::result::Result<Evaluation, Overload>> {
    let cells = partition.partition_cameras(&scenario.cameras)?;
    let mut per_edge = BTreeMap::new();
    let mut times = BTreeMap::new();
    let mut overload = Vec::new();
    for edge in &scenario.edges {
        let cams = &cells[&edge.edge_id];
        match solve(edge, cams) {
            Ok(region) => {
                times.insert(edge.edge_id, edge_time_for_region(edge, &region)?);
                per_edge.insert(edge.edge_id, region);
            }
            Err(Error::Infeasible {
                edge,
                required,
                capacity,
            }) => overload.push((edge, required, capacity)),
            Err(e) => return Err(e),
        }
    }
    if !overload.is_empty() {
        return Ok(Err(Overload { edges: overload }));
    }
    let mean = times.values().map(|t| t.total).sum::<f64>() / times.len() as f64;
    let residual = times
        .values()
        .map(|t| (t.total - mean).abs())
        .fold(0.0, f64::max);
    Ok(Ok(Evaluation {
        per_edge,
        times,
        mean,
        residual,
    }))
}

/// Per-edge bookkeeping for step halving.
struct StepState {
    step: f64,
    /// Most recent accepted adjustment signs, newest first.
    signs: [i8; 2],
}

/// Runs the region-planning loop and returns the most balanced iterate.
pub fn plan(scenario: &Scenario) -> Result<Plan> {
    scenario.check()?;
    let mut partition = scenario.voronoi()?;
    let mut steps: BTreeMap<EdgeId, StepState> = scenario
        .edges
        .iter()
        .map(|e| {
            (
                e.edge_id,
                StepState {
                    step: scenario.step_d,
                    signs: [0, 0],
                },
            )
        })
        .collect();
    let mut iterations = 0;
    let mut least: Option<Overload> = None;

    // The initial cells may overload an edge; shrink the worst offender until
    // every edge can hold its cameras.
    let mut current = loop {
        match evaluate(scenario, &partition, solve_rtp)? {
            Ok(ev) => break ev,
            Err(overload) => {
                let worst = overload.worst();
                if least
                    .as_ref()
                    .is_none_or(|l| overload.excess() < l.excess())
                {
                    least = Some(overload);
                }
                if iterations >= scenario.max_iterations {
                    let least = least.expect("recorded above");
                    return Err(Error::NoFeasiblePartition {
                        iterations,
                        diagnosis: format!(
                            "at best {} cameras over capacity: {}",
                            least.excess(),
                            least.describe()
                        ),
                    });
                }
                let step = steps[&worst].step;
                partition.site_mut(worst).expect("edge site").weight -= step;
                iterations += 1;
            }
        }
    };

    let mut history = vec![current.ratio()];
    let mut best = (current.ratio(), partition.clone(), current.clone());
    let mut best_is_last = true;

    while current.residual > scenario.threshold && iterations < scenario.max_iterations {
        iterations += 1;
        let (target, too_slow) = current.outlier();
        let sign: i8 = if too_slow { -1 } else { 1 };
        let state = steps.get_mut(&target).expect("edge state");
        if state.signs[0] == -sign && state.signs[1] == sign {
            state.step *= 0.5;
        }
        let mut candidate = partition.clone();
        candidate.site_mut(target).expect("edge site").weight += f64::from(sign) * state.step;
        match evaluate(scenario, &candidate, solve_rtp)? {
            // A move that leaves the slowest edge slower than before has
            // overshot; it is refused like an infeasible one.
            Ok(ev) if ev.max_total() > current.max_total() => {
                log::debug!("edge {target}: move overshoots, halving its step");
                state.step *= 0.5;
            }
            Ok(ev) => {
                state.signs = [sign, state.signs[0]];
                partition = candidate;
                current = ev;
                history.push(current.ratio());
                best_is_last = current.ratio() < best.0;
                if best_is_last {
                    best = (current.ratio(), partition.clone(), current.clone());
                }
            }
            Err(_) => {
                log::debug!("edge {target}: move rejected, halving its step");
                state.step *= 0.5;
            }
        }
    }

    let (ratio, best_partition, chosen) = best;
    if !best_is_last {
        // The final entry always describes the returned plan.
        history.push(ratio);
    }
    Ok(Plan {
        strategy: Strategy::Arp,
        partition: best_partition,
        per_edge: chosen.per_edge,
        predicted_edge_times: chosen.times,
        iterations_used: iterations,
        residual_ratio_history: history,
        boundaries: None,
    })
}

/// Plain Voronoi regions with cameras split evenly across each edge's devices.
pub fn plan_even(scenario: &Scenario) -> Result<Plan> {
    scenario.check()?;
    let partition = scenario.voronoi()?;
    let ev = match evaluate(scenario, &partition, solve_even)? {
        Ok(ev) => ev,
        Err(overload) => {
            let (edge, required, capacity) = overload.edges[0];
            return Err(Error::Infeasible {
                edge,
                required,
                capacity,
            });
        }
    };
    Ok(Plan {
        strategy: Strategy::Even,
        partition,
        residual_ratio_history: vec![ev.ratio()],
        per_edge: ev.per_edge,
        predicted_edge_times: ev.times,
        iterations_used: 0,
        boundaries: None,
    })
}
