//! Resource-aware task partitioning: split one edge's cameras across its
//! devices so the slowest device finishes as early as possible.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::costmodel::{largest_within, DeviceId, DeviceProfile, EdgeId, EdgeProfile};
use crate::error::{Error, Result};
use crate::geometry::{longest_axis_order, CameraSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceAllocation {
    pub device_id: DeviceId,
    pub camera_count: usize,
    pub predicted_init: f64,
    pub predicted_train: f64,
    pub predicted_upload: f64,
    pub predicted_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPlan {
    pub edge_id: EdgeId,
    /// Ascending device id.
    pub allocations: Vec<DeviceAllocation>,
    pub sub_regions: BTreeMap<DeviceId, CameraSet>,
    pub predicted_makespan: f64,
}

impl RegionPlan {
    pub fn camera_count(&self) -> usize {
        self.allocations.iter().map(|a| a.camera_count).sum()
    }
}

/// Predicted init, train and upload seconds for `camera_count` images.
pub fn device_time(profile: &DeviceProfile, camera_count: usize) -> Result<DeviceAllocation> {
    if camera_count > profile.max_cameras {
        return Err(Error::OverCapacity {
            device: profile.device_id,
            requested: camera_count,
            max: profile.max_cameras,
        });
    }
    let predicted_init = profile.init_curve.eval(camera_count);
    let predicted_train = profile.train_curve.eval(camera_count);
    let predicted_upload = profile.upload_time(camera_count);
    Ok(DeviceAllocation {
        device_id: profile.device_id,
        camera_count,
        predicted_init,
        predicted_train,
        predicted_upload,
        predicted_total: predicted_init + predicted_train + predicted_upload,
    })
}

fn sorted_devices(edge: &EdgeProfile) -> Result<Vec<&DeviceProfile>> {
    if edge.devices.is_empty() {
        return Err(Error::NoDevices(edge.edge_id));
    }
    let mut devices: Vec<&DeviceProfile> = edge.devices.iter().collect();
    devices.sort_by_key(|d| d.device_id);
    for d in &devices {
        if d.max_cameras == 0 {
            log::warn!(
                "edge {}: device {} has no capacity and is left idle",
                edge.edge_id,
                d.device_id
            );
        }
    }
    Ok(devices)
}

fn makespan(devices: &[&DeviceProfile], counts: &[usize]) -> f64 {
    devices
        .iter()
        .zip(counts)
        .map(|(d, &c)| d.total_time(c))
        .fold(0.0, f64::max)
}

/// Min-max camera counts, aligned with the devices sorted by id.
///
/// Bisection on a time budget finds the smallest budget whose per-device
/// capacities cover `required`; surplus is then trimmed from the slowest
/// device and a single-move local search certifies the result.
fn min_max_counts(
    edge_id: EdgeId,
    devices: &[&DeviceProfile],
    required: usize,
) -> Result<Vec<usize>> {
    let capacity: usize = devices.iter().map(|d| d.max_cameras).sum();
    if required > capacity {
        return Err(Error::Infeasible {
            edge: edge_id,
            required,
            capacity,
        });
    }
    if required == 0 {
        return Ok(vec![0; devices.len()]);
    }
    let cap_at = |budget: f64| -> Vec<usize> {
        devices
            .iter()
            .map(|d| largest_within(budget, d.max_cameras, |n| d.total_time(n)).count)
            .collect()
    };
    let full: Vec<usize> = devices.iter().map(|d| d.max_cameras).collect();
    let (mut lo, mut hi) = (0.0_f64, makespan(devices, &full));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cap_at(mid).iter().sum::<usize>() >= required {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut counts = cap_at(hi);

    let mut assigned: usize = counts.iter().sum();
    while assigned > required {
        // Slowest loaded device gives one up; ties drop the highest id first.
        let k = (0..devices.len())
            .filter(|&k| counts[k] > 0)
            .max_by(|&a, &b| {
                devices[a]
                    .total_time(counts[a])
                    .total_cmp(&devices[b].total_time(counts[b]))
                    .then(a.cmp(&b))
            })
            .expect("surplus implies a loaded device");
        counts[k] -= 1;
        assigned -= 1;
    }
    while assigned < required {
        let k = (0..devices.len())
            .filter(|&k| counts[k] < devices[k].max_cameras)
            .min_by(|&a, &b| {
                devices[a]
                    .total_time(counts[a] + 1)
                    .total_cmp(&devices[b].total_time(counts[b] + 1))
                    .then(a.cmp(&b))
            })
            .expect("feasibility implies spare capacity");
        counts[k] += 1;
        assigned += 1;
    }

    improve_by_single_moves(devices, &mut counts);
    Ok(counts)
}

fn improve_by_single_moves(devices: &[&DeviceProfile], counts: &mut [usize]) {
    'search: loop {
        let current = makespan(devices, counts);
        for from in 0..devices.len() {
            if counts[from] == 0 || devices[from].total_time(counts[from]) < current {
                continue;
            }
            for to in 0..devices.len() {
                if to == from || counts[to] >= devices[to].max_cameras {
                    continue;
                }
                counts[from] -= 1;
                counts[to] += 1;
                if makespan(devices, counts) < current {
                    continue 'search;
                }
                counts[from] += 1;
                counts[to] -= 1;
            }
        }
        break;
    }
}

/// Builds the plan for given counts (aligned with `devices`), cutting the
/// cameras into contiguous chunks along their longer axis.
fn region_plan(
    edge_id: EdgeId,
    devices: &[&DeviceProfile],
    counts: &[usize],
    cams: &CameraSet,
) -> Result<RegionPlan> {
    let ordered = longest_axis_order(cams);
    let mut allocations = Vec::with_capacity(devices.len());
    let mut sub_regions = BTreeMap::new();
    let mut offset = 0;
    for (d, &c) in devices.iter().zip(counts) {
        allocations.push(device_time(d, c)?);
        sub_regions.insert(
            d.device_id,
            CameraSet::new(ordered.cameras[offset..offset + c].to_vec()),
        );
        offset += c;
    }
    debug_assert_eq!(offset, cams.len());
    let predicted_makespan = allocations
        .iter()
        .map(|a| a.predicted_total)
        .fold(0.0, f64::max);
    Ok(RegionPlan {
        edge_id,
        allocations,
        sub_regions,
        predicted_makespan,
    })
}

/// Min-max allocation of `cams` over the edge's devices.
pub fn solve_rtp(edge: &EdgeProfile, cams: &CameraSet) -> Result<RegionPlan> {
    let devices = sorted_devices(edge)?;
    let counts = min_max_counts(edge.edge_id, &devices, cams.len())?;
    region_plan(edge.edge_id, &devices, &counts, cams)
}

/// Equal split regardless of device speed; the remainder goes to the lowest
/// device ids. Devices without capacity are skipped.
pub fn solve_even(edge: &EdgeProfile, cams: &CameraSet) -> Result<RegionPlan> {
    let devices = sorted_devices(edge)?;
    let usable: Vec<usize> = (0..devices.len())
        .filter(|&k| devices[k].max_cameras > 0)
        .collect();
    if usable.is_empty() && !cams.is_empty() {
        return Err(Error::NoDevices(edge.edge_id));
    }
    let mut counts = vec![0; devices.len()];
    if !usable.is_empty() {
        let (share, rem) = (cams.len() / usable.len(), cams.len() % usable.len());
        for (rank, &k) in usable.iter().enumerate() {
            counts[k] = share + usize::from(rank < rem);
            if counts[k] > devices[k].max_cameras {
                return Err(Error::OverCapacity {
                    device: devices[k].device_id,
                    requested: counts[k],
                    max: devices[k].max_cameras,
                });
            }
        }
    }
    region_plan(edge.edge_id, &devices, &counts, cams)
}

/// Slowest device's predicted time for `camera_count` cameras on this edge.
pub fn estimate_makespan(edge: &EdgeProfile, camera_count: usize) -> Result<f64> {
    let devices = sorted_devices(edge)?;
    let counts = min_max_counts(edge.edge_id, &devices, camera_count)?;
    Ok(makespan(&devices, &counts))
}
