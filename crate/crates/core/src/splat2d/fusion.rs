//! Boundary-cut merge and synthetic-view aggregation of device models.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Point2, SiteId, WeightedPartition};

use super::fit::{loss_and_gradients, total_loss, Target};
use super::metrics::DEFAULT_LAMBDA;
use super::model::{SplatModel, View};
use super::render::render;

/// Maps canvas pixels onto the world rectangle the partition lives in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanvasFrame {
    pub world: BoundingBox,
    pub width: usize,
    pub height: usize,
}

impl CanvasFrame {
    /// Canvas and world coincide.
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            world: BoundingBox {
                min_x: 0.0,
                min_y: 0.0,
                max_x: width as f64,
                max_y: height as f64,
            },
            width,
            height,
        }
    }

    pub fn to_world(&self, p: Point2) -> Point2 {
        Point2::new(
            self.world.min_x + p.x / self.width as f64 * self.world.width(),
            self.world.min_y + p.y / self.height as f64 * self.world.height(),
        )
    }

    pub fn to_canvas(&self, p: Point2) -> Point2 {
        Point2::new(
            (p.x - self.world.min_x) / self.world.width() * self.width as f64,
            (p.y - self.world.min_y) / self.world.height() * self.height as f64,
        )
    }
}

fn common_canvas<'a>(mut canvases: impl Iterator<Item = &'a SplatModel>) -> Result<(usize, usize)> {
    let first = canvases
        .next()
        .ok_or_else(|| Error::invalid("no models to fuse"))?
        .canvas;
    for m in canvases {
        if m.canvas != first {
            return Err(Error::DimensionMismatch(
                first.0, first.1, m.canvas.0, m.canvas.1,
            ));
        }
    }
    Ok(first)
}

/// Keeps from each model the Gaussians `owner` places with that model's key.
pub fn merge_by_owner<K: PartialEq>(
    models: &[(SplatModel, K)],
    owner: impl Fn(Point2) -> Result<K>,
) -> Result<SplatModel> {
    let canvas = common_canvas(models.iter().map(|(m, _)| m))?;
    let mut out = SplatModel::new(canvas);
    for (model, key) in models {
        for g in &model.gaussians {
            if owner(g.position)? == *key {
                out.gaussians.push(*g);
            }
        }
    }
    Ok(out)
}

/// Cuts each model at its own cell boundary and concatenates the pieces.
pub fn merge_models(
    models: &[(SplatModel, SiteId)],
    partition: &WeightedPartition,
    frame: &CanvasFrame,
) -> Result<SplatModel> {
    merge_by_owner(models, |p| partition.assign_cell(&frame.to_world(p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateParams {
    pub epochs: usize,
    pub lambda: f64,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for AggregateParams {
    fn default() -> Self {
        Self {
            epochs: crate::arp::DEFAULT_RETRAIN_EPOCHS,
            lambda: DEFAULT_LAMBDA,
            step_size: 1.0,
            seed: 0,
        }
    }
}

/// Concatenates whole models and retrains on views rendered from each
/// contributing model. Only the models themselves are consulted; the
/// images they were trained on never enter.
///
/// Each epoch takes one descent step per view in a seeded order, with the
/// step shrinking linearly over the epochs. The
/// concatenation and every epoch's end state are scored on the synthetic
/// views and the best one is returned.
pub fn aggregate_models(
    models: &[(SplatModel, Vec<View>)],
    params: &AggregateParams,
) -> Result<SplatModel> {
    if params.epochs == 0 {
        return Err(Error::invalid("aggregation needs at least one epoch"));
    }
    let canvas = common_canvas(models.iter().map(|(m, _)| m))?;
    let mut targets = Vec::new();
    let mut model = SplatModel::new(canvas);
    for (m, views) in models {
        for v in views {
            targets.push(Target {
                view: *v,
                image: render(m, v)?,
            });
        }
        model.gaussians.extend(m.gaussians.iter().copied());
    }
    for (k, g) in model.gaussians.iter_mut().enumerate() {
        g.id = k as u64;
    }
    if targets.is_empty() {
        return Ok(model);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..targets.len()).collect();
    let mut best = (total_loss(&model, &targets, params.lambda)?, model.clone());
    for epoch in 0..params.epochs {
        // Linear decay settles the per-view steps onto a common optimum.
        let lr = params.step_size * (1.0 - epoch as f64 / params.epochs as f64);
        order.shuffle(&mut rng);
        for &i in &order {
            let (l, grads) =
                loss_and_gradients(&model, std::slice::from_ref(&targets[i]), params.lambda)?;
            if !l.is_finite() {
                return Err(Error::Diverged(epoch));
            }
            super::fit::descend(&mut model, &grads, lr);
        }
        let l = total_loss(&model, &targets, params.lambda)?;
        if !l.is_finite() {
            return Err(Error::Diverged(epoch));
        }
        log::debug!("aggregate epoch {epoch}: synthetic loss {l:.6}");
        if l < best.0 {
            best = (l, model.clone());
        }
    }
    Ok(best.1)
}
