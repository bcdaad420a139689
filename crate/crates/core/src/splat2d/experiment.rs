//! Region-split fitting and fusion on a single image.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{Point2, Site, SiteId, WeightedPartition};

use super::fit::{fit, FitParams};
use super::fusion::{aggregate_models, merge_models, AggregateParams, CanvasFrame};
use super::image::ImageBuffer;
use super::metrics::{boundary_strip_mask, masked_psnr, masked_ssim, psnr, ssim};
use super::model::{SplatModel, View};
use super::render::render;

/// Procedural test scene: a shaded backdrop with blobs, a ring and a bar,
/// laid out so features cross the canvas midlines.
pub fn reference_image(size: usize) -> ImageBuffer {
    let s = size as f64;
    ImageBuffer::from_fn(size, size, |x, y| {
        let (x, y) = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
        let blob = |cx: f64, cy: f64, r: f64| {
            (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * r * r)).exp()
        };
        let step = |t: f64| 1.0 / (1.0 + (-t / 0.012).exp());
        let mut v = 0.18 + 0.22 * x + 0.1 * y;
        v += 0.45 * blob(0.3, 0.32, 0.09);
        v += 0.35 * blob(0.72, 0.7, 0.07);
        v -= 0.12 * blob(0.78, 0.25, 0.1);
        let r = ((x - 0.5).powi(2) + (y - 0.5).powi(2)).sqrt();
        v += 0.3 * step(0.16 - r) * step(r - 0.09);
        let bar = (x - y + 0.35).abs();
        v += 0.25 * step(0.03 - bar) * step(0.9 - y) * step(y - 0.05);
        v.clamp(0.0, 1.0)
    })
}

/// Square crops of side `crop` on a `stride` grid covering the canvas.
pub fn crop_grid(width: usize, height: usize, crop: usize, stride: usize) -> Vec<View> {
    let starts = |extent: usize| -> Vec<usize> {
        if crop >= extent {
            return vec![0];
        }
        let mut v: Vec<usize> = (0..=extent - crop).step_by(stride.max(1)).collect();
        if *v.last().expect("non-empty") != extent - crop {
            v.push(extent - crop);
        }
        v
    };
    let mut out = Vec::new();
    for &y in &starts(height) {
        for &x in &starts(width) {
            out.push(View::new(x, y, crop.min(width), crop.min(height)));
        }
    }
    out
}

/// Region centres used for a `k`-way split of a canvas: one centre, two
/// halves, or four quadrants.
pub fn standard_sites(k: usize, width: usize, height: usize) -> Vec<Point2> {
    let (w, h) = (width as f64, height as f64);
    match k {
        1 => vec![Point2::new(0.5 * w, 0.5 * h)],
        2 => vec![
            Point2::new(0.25 * w, 0.5 * h),
            Point2::new(0.75 * w, 0.5 * h),
        ],
        _ => vec![
            Point2::new(0.25 * w, 0.25 * h),
            Point2::new(0.75 * w, 0.25 * h),
            Point2::new(0.25 * w, 0.75 * h),
            Point2::new(0.75 * w, 0.75 * h),
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    pub psnr: f64,
    pub ssim: f64,
    pub strip_psnr: Option<f64>,
    pub strip_ssim: Option<f64>,
}

/// Scores a fused model against the full image, also on the strip of
/// pixels within `strip_px` of a region boundary.
pub fn evaluate_model(
    model: &SplatModel,
    truth: &ImageBuffer,
    owner: impl Fn(usize, usize) -> u32,
    strip_px: usize,
) -> Result<Quality> {
    let rendered = render(model, &View::full(truth.width, truth.height))?;
    let mask = boundary_strip_mask(truth.width, truth.height, strip_px, owner);
    Ok(Quality {
        psnr: psnr(&rendered, truth)?,
        ssim: ssim(&rendered, truth)?,
        strip_psnr: masked_psnr(&rendered, truth, &mask)?,
        strip_ssim: masked_ssim(&rendered, truth, &mask)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionOutcome {
    pub regions: usize,
    pub gaussians_per_region: usize,
    pub merge: Quality,
    pub aggregate: Quality,
    pub merged_count: usize,
    pub aggregated_count: usize,
}

/// Splits the canvas among `sites`, fits one model per region on the crops
/// whose centre falls in it, and fuses the region models both ways.
pub fn fusion_experiment(
    truth: &ImageBuffer,
    sites: &[Point2],
    views: &[View],
    total_gaussians: usize,
    fit_params: &FitParams,
    aggregate: &AggregateParams,
    strip_px: usize,
) -> Result<FusionOutcome> {
    let frame = CanvasFrame::identity(truth.width, truth.height);
    let partition = WeightedPartition::new(
        sites
            .iter()
            .enumerate()
            .map(|(i, &position)| Site {
                site_id: i as SiteId,
                position,
                weight: 0.0,
            })
            .collect(),
        frame.world,
    )?;
    let per_region = (total_gaussians / sites.len()).max(1);
    let mut regions: Vec<(SiteId, Vec<View>)> = partition
        .sites
        .iter()
        .map(|s| (s.site_id, Vec::new()))
        .collect();
    for v in views {
        let owner = partition.assign_cell(&v.center())?;
        regions[owner as usize].1.push(*v);
    }
    let fits: Vec<Result<(SplatModel, SiteId, Vec<View>)>> = regions
        .into_par_iter()
        .filter(|(_, vs)| !vs.is_empty())
        .map(|(site, vs)| {
            let params = FitParams {
                num_gaussians: per_region,
                seed: fit_params.seed.wrapping_add(u64::from(site)),
                ..*fit_params
            };
            let (mut model, _) = fit(truth, &vs, &params)?;
            for g in &mut model.gaussians {
                g.id += u64::from(site) << 32;
            }
            Ok((model, site, vs))
        })
        .collect();
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;

    let cut: Vec<(SplatModel, SiteId)> = fits.iter().map(|(m, s, _)| (m.clone(), *s)).collect();
    let merged = merge_models(&cut, &partition, &frame)?;
    let whole: Vec<(SplatModel, Vec<View>)> = fits.into_iter().map(|(m, _, vs)| (m, vs)).collect();
    let aggregated = aggregate_models(&whole, aggregate)?;

    let owner = |x: usize, y: usize| {
        partition
            .assign_cell(&Point2::new(x as f64 + 0.5, y as f64 + 0.5))
            .unwrap_or(0)
    };
    Ok(FusionOutcome {
        regions: sites.len(),
        gaussians_per_region: per_region,
        merge: evaluate_model(&merged, truth, owner, strip_px)?,
        aggregate: evaluate_model(&aggregated, truth, owner, strip_px)?,
        merged_count: merged.len(),
        aggregated_count: aggregated.len(),
    })
}
