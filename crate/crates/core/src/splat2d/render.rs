//! Tile-based α-blending rasterizer and its reverse pass.

use super::image::ImageBuffer;
use super::model::{Gaussian2D, SplatModel, View, MIN_ALPHA};
use crate::error::{Error, Result};

const TILE: usize = 16;

/// Number of optimized parameters per Gaussian:
/// `[x, y, ln s1, ln s2, rotation, logit opacity, intensity]`.
pub const PARAMS: usize = 7;

pub type ParamGrad = [f64; PARAMS];

/// A Gaussian with its trigonometry and cutoff box precomputed.
#[derive(Debug, Clone, Copy)]
struct Prepared {
    index: usize,
    g: Gaussian2D,
    sin: f64,
    cos: f64,
    lo: [f64; 2],
    hi: [f64; 2],
}

/// Depth-sorted Gaussians binned into the tiles of one view.
struct Raster {
    items: Vec<Prepared>,
    tiles_x: usize,
    tiles: Vec<Vec<u32>>,
}

fn check_view(model: &SplatModel, view: &View) -> Result<()> {
    if !view.fits(model.canvas) {
        return Err(Error::invalid(format!(
            "view {}x{} at ({}, {}) exceeds the {}x{} canvas",
            view.width, view.height, view.x, view.y, model.canvas.0, model.canvas.1
        )));
    }
    Ok(())
}

impl Raster {
    fn build(model: &SplatModel, view: &View) -> Self {
        let mut items: Vec<Prepared> = model
            .gaussians
            .iter()
            .enumerate()
            .filter_map(|(index, g)| {
                let [hx, hy] = g.cutoff_extent()?;
                // Slack so rounding never drops a pixel the skip rule keeps.
                let (hx, hy) = (hx * (1.0 + 1e-9) + 1e-9, hy * (1.0 + 1e-9) + 1e-9);
                let (sin, cos) = g.rotation.sin_cos();
                Some(Prepared {
                    index,
                    g: *g,
                    sin,
                    cos,
                    lo: [g.position.x - hx, g.position.y - hy],
                    hi: [g.position.x + hx, g.position.y + hy],
                })
            })
            .collect();
        items.sort_by(|a, b| a.g.depth.total_cmp(&b.g.depth).then(a.g.id.cmp(&b.g.id)));

        let tiles_x = view.width.div_ceil(TILE);
        let tiles_y = view.height.div_ceil(TILE);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        for (k, item) in items.iter().enumerate() {
            // Pixel centres covered by the box, in view coordinates.
            let first = |lo: f64, origin: usize| (lo - origin as f64 - 0.5).ceil().max(0.0);
            let last = |hi: f64, origin: usize| (hi - origin as f64 - 0.5).floor();
            let (u0, u1) = (first(item.lo[0], view.x), last(item.hi[0], view.x));
            let (v0, v1) = (first(item.lo[1], view.y), last(item.hi[1], view.y));
            if u1 < u0 || v1 < v0 || u0 >= view.width as f64 || v0 >= view.height as f64 {
                continue;
            }
            let u1 = (u1 as usize).min(view.width - 1);
            let v1 = (v1 as usize).min(view.height - 1);
            for ty in (v0 as usize) / TILE..=v1 / TILE {
                for tx in (u0 as usize) / TILE..=u1 / TILE {
                    tiles[ty * tiles_x + tx].push(k as u32);
                }
            }
        }
        Raster {
            items,
            tiles_x,
            tiles,
        }
    }

    fn tile_of(&self, u: usize, v: usize) -> &[u32] {
        &self.tiles[(v / TILE) * self.tiles_x + u / TILE]
    }
}

/// Renders `view` of the model. Pixels composite front to back over a black
/// background.
pub fn render(model: &SplatModel, view: &View) -> Result<ImageBuffer> {
    check_view(model, view)?;
    let raster = Raster::build(model, view);
    let mut out = ImageBuffer::new(view.width, view.height);
    for v in 0..view.height {
        for u in 0..view.width {
            let p = view.pixel_center(u, v);
            let mut color = 0.0;
            let mut transmittance = 1.0;
            for &k in raster.tile_of(u, v) {
                let it = &raster.items[k as usize];
                let (q, _, _) = it.g.mahalanobis_sq(it.sin, it.cos, &p);
                let alpha = it.g.opacity * (-0.5 * q).exp();
                if alpha < MIN_ALPHA {
                    continue;
                }
                color += it.g.intensity * alpha * transmittance;
                transmittance *= 1.0 - alpha;
            }
            out.set(u, v, color.clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

/// Per-Gaussian gradients from one view plus the blend weight each Gaussian
/// carried, summed over the view's pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<ParamGrad>,
    pub footprint: Vec<f64>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            params: vec![[0.0; PARAMS]; n],
            footprint: vec![0.0; n],
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.footprint.iter_mut().zip(&other.footprint) {
            *a += b;
        }
    }
}

struct Contribution {
    item: u32,
    alpha: f64,
    transmittance: f64,
    u1: f64,
    u2: f64,
}

/// Back-propagates `d_image` (the loss gradient with respect to each
/// rendered pixel) to the parameters of every Gaussian in the model.
pub fn render_backward(
    model: &SplatModel,
    view: &View,
    d_image: &ImageBuffer,
) -> Result<Gradients> {
    check_view(model, view)?;
    if d_image.width != view.width || d_image.height != view.height {
        return Err(Error::DimensionMismatch(
            d_image.width,
            d_image.height,
            view.width,
            view.height,
        ));
    }
    let raster = Raster::build(model, view);
    let mut grads = Gradients::zeros(model.len());
    let mut stack: Vec<Contribution> = Vec::new();
    for v in 0..view.height {
        for u in 0..view.width {
            let p = view.pixel_center(u, v);
            stack.clear();
            let mut color = 0.0;
            let mut transmittance = 1.0;
            for &k in raster.tile_of(u, v) {
                let it = &raster.items[k as usize];
                let (q, u1, u2) = it.g.mahalanobis_sq(it.sin, it.cos, &p);
                let alpha = it.g.opacity * (-0.5 * q).exp();
                if alpha < MIN_ALPHA {
                    continue;
                }
                stack.push(Contribution {
                    item: k,
                    alpha,
                    transmittance,
                    u1,
                    u2,
                });
                color += it.g.intensity * alpha * transmittance;
                transmittance *= 1.0 - alpha;
            }
            for c in &stack {
                grads.footprint[raster.items[c.item as usize].index] += c.alpha * c.transmittance;
            }
            let g = d_image.get(u, v);
            if g == 0.0 || !(0.0..=1.0).contains(&color) {
                continue;
            }
            let mut after = 0.0;
            for c in stack.iter().rev() {
                let it = &raster.items[c.item as usize];
                let gs = &it.g;
                let out = &mut grads.params[it.index];
                out[6] += g * c.alpha * c.transmittance;
                let d_alpha = g * c.transmittance * (gs.intensity - after);
                after = gs.intensity * c.alpha + (1.0 - c.alpha) * after;

                out[5] += d_alpha * c.alpha * (1.0 - gs.opacity);
                let dq = -0.5 * c.alpha * d_alpha;
                let i1 = 1.0 / (gs.scale[0] * gs.scale[0]);
                let i2 = 1.0 / (gs.scale[1] * gs.scale[1]);
                let (a1, a2) = (c.u1 * i1, c.u2 * i2);
                out[0] += dq * (-2.0 * a1 * it.cos + 2.0 * a2 * it.sin);
                out[1] += dq * (-2.0 * a1 * it.sin - 2.0 * a2 * it.cos);
                out[2] += dq * (-2.0 * c.u1 * a1);
                out[3] += dq * (-2.0 * c.u2 * a2);
                out[4] += dq * 2.0 * c.u1 * c.u2 * (i1 - i2);
            }
        }
    }
    Ok(grads)
}
