//! Discrete-event execution of a plan through the device, edge and cloud
//! stages.
//!
//! Devices start together at t = 0 and run init, train and upload back to
//! back. An edge aggregates once its last device upload lands, then uploads
//! its model; the cloud fuses once every edge upload has arrived. Links are
//! not shared, so a stage's duration never depends on what else is running.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::arp::{plan, plan_even, EdgeTime, Plan, Scenario, Strategy};
use crate::costmodel::{CostCurve, DeviceId, EdgeId};
use crate::error::{Error, Result};
use crate::rtp::device_time;

/// How the cloud fuses edge models.
#[derive(Debug, Clone, PartialEq)]
pub enum CloudMode {
    /// Boundary-cut concatenation; takes no measurable time.
    Merge,
    /// Retraining, timed by a curve over the total camera count.
    Aggregate(CostCurve),
}

impl CloudMode {
    /// Aggregate when the scenario profiles the cloud, merge otherwise.
    pub fn for_scenario(scenario: &Scenario) -> Self {
        scenario
            .cloud_aggregate_curve
            .clone()
            .map_or(CloudMode::Merge, CloudMode::Aggregate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    DeviceInitDone,
    DeviceTrainDone,
    DeviceUploadDone,
    EdgeAggregateDone,
    EdgeUploadDone,
    CloudAggregateDone,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub edge_id: Option<EdgeId>,
    pub device_id: Option<DeviceId>,
}

impl Event {
    /// At equal times an edge sorts after its devices and the cloud after
    /// every edge, so an aggregation never precedes what it waits on.
    fn key(&self) -> (f64, EdgeId, DeviceId, EventKind) {
        (
            self.time,
            self.edge_id.unwrap_or(EdgeId::MAX),
            self.device_id.unwrap_or(DeviceId::MAX),
            self.kind,
        )
    }
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceTimeline {
    pub edge_id: EdgeId,
    pub device_id: DeviceId,
    pub camera_count: usize,
    pub init_done: f64,
    pub train_done: f64,
    pub upload_done: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub events: Vec<Event>,
    pub per_device: Vec<DeviceTimeline>,
    /// Stage durations per edge; `total` is when its upload reaches the cloud.
    pub per_edge: BTreeMap<EdgeId, EdgeTime>,
    pub cloud_aggregate: f64,
    pub end_to_end: f64,
}

impl LatencyReport {
    /// One row per stage: `entity,stage,start,end,duration`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["entity", "stage", "start", "end", "duration"])?;
        let mut row = |entity: String, stage: &str, start: f64, end: f64| {
            w.write_record([
                entity,
                stage.to_string(),
                start.to_string(),
                end.to_string(),
                (end - start).to_string(),
            ])
        };
        for d in &self.per_device {
            let entity = format!("edge{}/device{}", d.edge_id, d.device_id);
            row(entity.clone(), "init", 0.0, d.init_done)?;
            row(entity.clone(), "train", d.init_done, d.train_done)?;
            row(entity, "upload", d.train_done, d.upload_done)?;
        }
        for (id, t) in &self.per_edge {
            let entity = format!("edge{id}");
            row(entity.clone(), "aggregate", t.train, t.train + t.aggregate)?;
            row(entity, "upload", t.train + t.aggregate, t.total)?;
        }
        let start = self.end_to_end - self.cloud_aggregate;
        row("cloud".to_string(), "aggregate", start, self.end_to_end)?;
        w.flush()?;
        Ok(())
    }
}

struct EdgeProgress {
    pending_devices: usize,
    camera_count: usize,
    model_size: f64,
    ready_at: f64,
    aggregate: f64,
    upload: f64,
}

fn check_consistent(scenario: &Scenario, plan: &Plan) -> Result<()> {
    let plan_edges: BTreeSet<_> = plan.per_edge.keys().copied().collect();
    let scenario_edges: BTreeSet<_> = scenario.edges.iter().map(|e| e.edge_id).collect();
    if plan_edges != scenario_edges {
        return Err(Error::PlanMismatch(format!(
            "plan edges {plan_edges:?} differ from scenario edges {scenario_edges:?}"
        )));
    }
    let mut planned: Vec<_> = plan
        .per_edge
        .keys()
        .flat_map(|&e| plan.edge_cameras(e))
        .collect();
    planned.sort_unstable();
    let mut expected = scenario.cameras.ids();
    expected.sort_unstable();
    if planned != expected {
        return Err(Error::PlanMismatch(
            "planned cameras do not match the scenario cameras".into(),
        ));
    }
    Ok(())
}

/// Executes `plan` as an event timeline.
pub fn simulate(scenario: &Scenario, plan: &Plan, cloud: &CloudMode) -> Result<LatencyReport> {
    check_consistent(scenario, plan)?;
    let mut queue: BinaryHeap<Reverse<Event>> = BinaryHeap::new();
    let mut durations: BTreeMap<(EdgeId, DeviceId), (f64, f64)> = BTreeMap::new();
    let mut timelines: BTreeMap<(EdgeId, DeviceId), DeviceTimeline> = BTreeMap::new();
    let mut edges: BTreeMap<EdgeId, EdgeProgress> = BTreeMap::new();

    for (&edge_id, region) in &plan.per_edge {
        let edge = scenario.edge(edge_id).expect("checked above");
        let mut progress = EdgeProgress {
            pending_devices: region.allocations.len(),
            camera_count: region.camera_count(),
            model_size: 0.0,
            ready_at: 0.0,
            aggregate: 0.0,
            upload: 0.0,
        };
        for alloc in &region.allocations {
            let device = edge
                .devices
                .iter()
                .find(|d| d.device_id == alloc.device_id)
                .ok_or_else(|| {
                    Error::PlanMismatch(format!("edge {edge_id} has no device {}", alloc.device_id))
                })?;
            let t = device_time(device, alloc.camera_count)?;
            progress.model_size += device.size_curve.eval(alloc.camera_count);
            durations.insert(
                (edge_id, device.device_id),
                (t.predicted_train, t.predicted_upload),
            );
            timelines.insert(
                (edge_id, device.device_id),
                DeviceTimeline {
                    edge_id,
                    device_id: device.device_id,
                    camera_count: alloc.camera_count,
                    init_done: 0.0,
                    train_done: 0.0,
                    upload_done: 0.0,
                },
            );
            queue.push(Reverse(Event {
                time: t.predicted_init,
                kind: EventKind::DeviceInitDone,
                edge_id: Some(edge_id),
                device_id: Some(device.device_id),
            }));
        }
        progress.aggregate = edge.aggregate_curve.eval(progress.camera_count);
        progress.upload = progress.model_size / edge.bandwidth_to_cloud;
        if progress.pending_devices == 0 {
            queue.push(Reverse(Event {
                time: progress.aggregate,
                kind: EventKind::EdgeAggregateDone,
                edge_id: Some(edge_id),
                device_id: None,
            }));
        }
        edges.insert(edge_id, progress);
    }

    let cloud_duration = match cloud {
        CloudMode::Merge => 0.0,
        CloudMode::Aggregate(curve) => curve.eval(scenario.cameras.len()),
    };
    let mut edges_pending = edges.len();
    let mut per_edge = BTreeMap::new();
    let mut events = Vec::new();
    let mut end_to_end = 0.0;

    while let Some(Reverse(ev)) = queue.pop() {
        events.push(ev);
        let edge_id = ev.edge_id;
        let next = |kind, time, device_id| Event {
            time,
            kind,
            edge_id,
            device_id,
        };
        match ev.kind {
            EventKind::DeviceInitDone => {
                let key = (
                    edge_id.expect("device event"),
                    ev.device_id.expect("device event"),
                );
                timelines.get_mut(&key).expect("device").init_done = ev.time;
                let train = durations[&key].0;
                queue.push(Reverse(next(
                    EventKind::DeviceTrainDone,
                    ev.time + train,
                    ev.device_id,
                )));
            }
            EventKind::DeviceTrainDone => {
                let key = (
                    edge_id.expect("device event"),
                    ev.device_id.expect("device event"),
                );
                timelines.get_mut(&key).expect("device").train_done = ev.time;
                let upload = durations[&key].1;
                queue.push(Reverse(next(
                    EventKind::DeviceUploadDone,
                    ev.time + upload,
                    ev.device_id,
                )));
            }
            EventKind::DeviceUploadDone => {
                let key = (
                    edge_id.expect("device event"),
                    ev.device_id.expect("device event"),
                );
                timelines.get_mut(&key).expect("device").upload_done = ev.time;
                let progress = edges.get_mut(&key.0).expect("edge");
                progress.pending_devices -= 1;
                if progress.pending_devices == 0 {
                    progress.ready_at = ev.time;
                    let at = ev.time + progress.aggregate;
                    queue.push(Reverse(next(EventKind::EdgeAggregateDone, at, None)));
                }
            }
            EventKind::EdgeAggregateDone => {
                let progress = &edges[&edge_id.expect("edge event")];
                let at = ev.time + progress.upload;
                queue.push(Reverse(next(EventKind::EdgeUploadDone, at, None)));
            }
            EventKind::EdgeUploadDone => {
                let id = edge_id.expect("edge event");
                let progress = &edges[&id];
                per_edge.insert(
                    id,
                    EdgeTime {
                        train: progress.ready_at,
                        aggregate: progress.aggregate,
                        upload: progress.upload,
                        total: ev.time,
                    },
                );
                edges_pending -= 1;
                if edges_pending == 0 {
                    queue.push(Reverse(Event {
                        time: ev.time + cloud_duration,
                        kind: EventKind::CloudAggregateDone,
                        edge_id: None,
                        device_id: None,
                    }));
                }
            }
            EventKind::CloudAggregateDone => end_to_end = ev.time,
        }
    }

    Ok(LatencyReport {
        events,
        per_device: timelines.into_values().collect(),
        per_edge,
        cloud_aggregate: cloud_duration,
        end_to_end,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: Strategy,
    pub end_to_end: f64,
    pub per_edge: BTreeMap<EdgeId, EdgeTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyComparison {
    pub even: StrategyRow,
    pub arp: StrategyRow,
    /// `(even - arp) / even` of the end-to-end latency.
    pub reduction: f64,
}

/// Simulates the even baseline and the planned partition side by side.
pub fn compare_strategies(scenario: &Scenario, cloud: &CloudMode) -> Result<StrategyComparison> {
    let row = |p: &Plan| -> Result<StrategyRow> {
        let report = simulate(scenario, p, cloud)?;
        Ok(StrategyRow {
            strategy: p.strategy,
            end_to_end: report.end_to_end,
            per_edge: report.per_edge,
        })
    };
    let even = row(&plan_even(scenario)?)?;
    let arp = row(&plan(scenario)?)?;
    let reduction = if even.end_to_end > 0.0 {
        (even.end_to_end - arp.end_to_end) / even.end_to_end
    } else {
        0.0
    };
    Ok(StrategyComparison {
        even,
        arp,
        reduction,
    })
}
