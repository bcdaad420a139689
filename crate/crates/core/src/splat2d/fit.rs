//! Gradient-descent fitting of a Gaussian set to target views.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

use super::image::ImageBuffer;
use super::metrics::{loss_with_grad, DEFAULT_LAMBDA};
use super::model::{Gaussian2D, SplatModel, View};
use super::render::{render, render_backward, Gradients, PARAMS};

/// Per-parameter step multipliers, in the order of
/// `[x, y, ln s1, ln s2, rotation, logit opacity, intensity]`.
const GROUP_SCALE: [f64; PARAMS] = [0.5, 0.5, 0.05, 0.05, 0.05, 0.2, 0.05];
/// Largest single-step change per parameter, before `step_size`.
const GROUP_CLAMP: [f64; PARAMS] = [1.0, 1.0, 0.2, 0.2, 0.2, 0.5, 0.1];
const MIN_SCALE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub num_gaussians: usize,
    pub iterations: usize,
    pub lambda: f64,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            num_gaussians: 64,
            iterations: 300,
            lambda: DEFAULT_LAMBDA,
            step_size: 1.0,
            seed: 0,
        }
    }
}

/// Loss over the target set before and after optimisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub history: Vec<f64>,
}

/// A view paired with the image it should render to.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub view: View,
    pub image: ImageBuffer,
}

impl Target {
    pub fn from_truth(truth: &ImageBuffer, view: View) -> Self {
        Self {
            view,
            image: truth.crop(view.x, view.y, view.width, view.height),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Summed loss and gradients over `targets`, reduced in target order.
pub fn loss_and_gradients(
    model: &SplatModel,
    targets: &[Target],
    lambda: f64,
) -> Result<(f64, Gradients)> {
    let per_view: Vec<Result<(f64, Gradients)>> = targets
        .par_iter()
        .map(|t| {
            let rendered = render(model, &t.view)?;
            let (l, d_image) = loss_with_grad(&rendered, &t.image, lambda)?;
            let mut g = render_backward(model, &t.view, &d_image)?;
            let n = t.image.len().max(1) as f64;
            g.footprint.iter_mut().for_each(|f| *f /= n);
            Ok((l, g))
        })
        .collect();
    let mut total = 0.0;
    let mut grads = Gradients::zeros(model.len());
    for r in per_view {
        let (l, g) = r?;
        total += l;
        grads.add(&g);
    }
    Ok((total, grads))
}

pub fn total_loss(model: &SplatModel, targets: &[Target], lambda: f64) -> Result<f64> {
    let losses: Vec<Result<f64>> = targets
        .par_iter()
        .map(|t| {
            let rendered = render(model, &t.view)?;
            super::metrics::loss(&rendered, &t.image, lambda)
        })
        .collect();
    losses.into_iter().sum()
}

/// One preconditioned descent step. Each Gaussian's gradient is divided by
/// the mean blend weight it carried, so sparse and dense Gaussians move at
/// comparable rates.
pub(crate) fn descend(model: &mut SplatModel, grads: &Gradients, lr: f64) {
    let max_scale = (model.canvas.0.max(model.canvas.1) as f64).max(1.0);
    for ((g, d), &w) in model
        .gaussians
        .iter_mut()
        .zip(&grads.params)
        .zip(&grads.footprint)
    {
        if w <= 0.0 {
            continue;
        }
        let norm = 1.0 / (w + 1e-3);
        let mut delta = [0.0; PARAMS];
        for k in 0..PARAMS {
            let limit = GROUP_CLAMP[k] * lr.min(1.0);
            delta[k] = (-lr * GROUP_SCALE[k] * d[k] * norm).clamp(-limit, limit);
        }
        g.position.x += delta[0];
        g.position.y += delta[1];
        g.scale[0] = (g.scale[0].ln() + delta[2])
            .exp()
            .clamp(MIN_SCALE, max_scale);
        g.scale[1] = (g.scale[1].ln() + delta[3])
            .exp()
            .clamp(MIN_SCALE, max_scale);
        g.rotation += delta[4];
        g.opacity = sigmoid(logit(g.opacity) + delta[5]);
        g.intensity = (g.intensity + delta[6]).clamp(0.0, 1.0);
        *g = g.sanitized();
    }
}

/// Full-batch descent from `model` on `targets`; returns the lowest-loss
/// iterate, so the result never scores worse than the input.
pub fn refine(
    model: &SplatModel,
    targets: &[Target],
    iterations: usize,
    lambda: f64,
    step_size: f64,
) -> Result<(SplatModel, FitTrace)> {
    if targets.is_empty() {
        return Err(Error::invalid("no views to fit"));
    }
    if step_size.is_nan() || step_size <= 0.0 || !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!(
            "step_size {step_size} must be positive and lambda {lambda} within [0, 1]"
        )));
    }
    let mut current = model.clone();
    let mut best = (f64::INFINITY, current.clone());
    let mut history = Vec::with_capacity(iterations + 1);
    let mut lr = step_size;
    let mut previous = f64::INFINITY;
    for it in 0..=iterations {
        let (l, grads) = loss_and_gradients(&current, targets, lambda)?;
        if !l.is_finite() {
            return Err(Error::Diverged(it));
        }
        history.push(l);
        if l < best.0 {
            best = (l, current.clone());
        }
        if l > previous {
            lr *= 0.5;
        }
        previous = l;
        if it < iterations {
            descend(&mut current, &grads, lr);
        }
    }
    let trace = FitTrace {
        initial_loss: history[0],
        final_loss: best.0,
        history,
    };
    Ok((best.1, trace))
}

/// Seeds `count` Gaussians at intensity-weighted random pixels of `views`.
pub fn initialize(
    truth: &ImageBuffer,
    views: &[View],
    count: usize,
    seed: u64,
    first_id: u64,
) -> SplatModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut covered = vec![false; truth.len()];
    for v in views {
        for y in v.y..v.y + v.height {
            for x in v.x..v.x + v.width {
                covered[y * truth.width + x] = true;
            }
        }
    }
    let pixels: Vec<usize> = (0..truth.len()).filter(|&i| covered[i]).collect();
    let mut cumulative = Vec::with_capacity(pixels.len());
    let mut acc = 0.0;
    for &i in &pixels {
        acc += truth.pixels[i] + 0.02;
        cumulative.push(acc);
    }
    let scale = 0.5 * (pixels.len() as f64 / count.max(1) as f64).sqrt();
    let mut model = SplatModel::new((truth.width, truth.height));
    for k in 0..count {
        if pixels.is_empty() {
            break;
        }
        let r = rng.gen_range(0.0..acc);
        let at = cumulative
            .partition_point(|&c| c <= r)
            .min(pixels.len() - 1);
        let i = pixels[at];
        let (px, py) = (i % truth.width, i / truth.width);
        let g = Gaussian2D {
            position: Point2::new(
                px as f64 + rng.gen_range(0.0..1.0),
                py as f64 + rng.gen_range(0.0..1.0),
            ),
            scale: [
                scale * rng.gen_range(0.8..1.25),
                scale * rng.gen_range(0.8..1.25),
            ],
            rotation: rng.gen_range(0.0..std::f64::consts::PI),
            opacity: 0.6,
            intensity: truth.pixels[i],
            depth: rng.gen_range(0.0..1.0),
            id: first_id + k as u64,
        };
        model.gaussians.push(g.sanitized());
    }
    model
}

/// Fits a fresh model to the crops `views` of `truth`.
pub fn fit(
    truth: &ImageBuffer,
    views: &[View],
    params: &FitParams,
) -> Result<(SplatModel, FitTrace)> {
    if views.is_empty() {
        return Err(Error::invalid("no views to fit"));
    }
    if params.num_gaussians == 0 {
        return Err(Error::invalid("num_gaussians must be at least 1"));
    }
    if let Some(v) = views.iter().find(|v| !v.fits((truth.width, truth.height))) {
        return Err(Error::invalid(format!(
            "view at ({}, {}) exceeds the image",
            v.x, v.y
        )));
    }
    let model = initialize(truth, views, params.num_gaussians, params.seed, 0);
    let targets: Vec<Target> = views
        .iter()
        .map(|&v| Target::from_truth(truth, v))
        .collect();
    refine(
        &model,
        &targets,
        params.iterations,
        params.lambda,
        params.step_size,
    )
}
