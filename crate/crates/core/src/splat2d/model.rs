use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Opacity below which a Gaussian's contribution at a pixel is dropped.
pub const MIN_ALPHA: f64 = 1e-4;

/// Opacity kept strictly inside (0, 1).
const OPACITY_EPS: f64 = 1e-6;

/// One planar Gaussian. Covariance is `R diag(s1², s2²) Rᵀ` with `R` the
/// rotation by `rotation` radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian2D {
    pub position: Point2,
    pub scale: [f64; 2],
    pub rotation: f64,
    pub opacity: f64,
    pub intensity: f64,
    /// Compositing order key, nearest first.
    pub depth: f64,
    /// Stable tiebreak for equal depths.
    pub id: u64,
}

/// Inverse covariance `[[a, b], [b, c]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Gaussian2D {
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation.sin_cos();
        let (v1, v2) = (self.scale[0].powi(2), self.scale[1].powi(2));
        [
            [c * c * v1 + s * s * v2, c * s * (v1 - v2)],
            [c * s * (v1 - v2), s * s * v1 + c * c * v2],
        ]
    }

    pub fn conic(&self) -> Conic {
        let (s, c) = self.rotation.sin_cos();
        let (i1, i2) = (self.scale[0].powi(-2), self.scale[1].powi(-2));
        Conic {
            a: c * c * i1 + s * s * i2,
            b: c * s * (i1 - i2),
            c: s * s * i1 + c * c * i2,
        }
    }

    /// Mahalanobis-squared distance from the centre, in the rotated frame.
    #[inline]
    pub(crate) fn mahalanobis_sq(&self, sin: f64, cos: f64, p: &Point2) -> (f64, f64, f64) {
        let dx = p.x - self.position.x;
        let dy = p.y - self.position.y;
        let u1 = cos * dx + sin * dy;
        let u2 = -sin * dx + cos * dy;
        let q = (u1 / self.scale[0]).powi(2) + (u2 / self.scale[1]).powi(2);
        (q, u1, u2)
    }

    /// `α · exp(-½ (p - x)ᵀ Σ⁻¹ (p - x))`.
    pub fn opacity_at(&self, p: &Point2) -> f64 {
        let (sin, cos) = self.rotation.sin_cos();
        let (q, _, _) = self.mahalanobis_sq(sin, cos, p);
        self.opacity * (-0.5 * q).exp()
    }

    /// Half-extents of the axis-aligned box outside which the opacity is
    /// always below [`MIN_ALPHA`]. `None` if the Gaussian never reaches it.
    pub fn cutoff_extent(&self) -> Option<[f64; 2]> {
        if self.opacity <= MIN_ALPHA {
            return None;
        }
        let r = (2.0 * (self.opacity / MIN_ALPHA).ln()).sqrt();
        let cov = self.covariance();
        Some([r * cov[0][0].sqrt(), r * cov[1][1].sqrt()])
    }

    /// Clamps parameters into their valid ranges.
    pub fn sanitized(mut self) -> Self {
        self.opacity = self.opacity.clamp(OPACITY_EPS, 1.0 - OPACITY_EPS);
        self.intensity = self.intensity.clamp(0.0, 1.0);
        self.scale = self.scale.map(|s| s.clamp(1e-3, 1e4));
        self
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite()
            && self.scale.iter().all(|s| s.is_finite())
            && self.rotation.is_finite()
            && self.opacity.is_finite()
            && self.intensity.is_finite()
            && self.depth.is_finite()
    }
}

/// Canvas-aligned crop rectangle, the 2D stand-in for a camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct View {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl View {
    pub const fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub const fn full(width: usize, height: usize) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn fits(&self, canvas: (usize, usize)) -> bool {
        self.x + self.width <= canvas.0 && self.y + self.height <= canvas.1
    }

    pub fn center(&self) -> Point2 {
        Point2::new(
            self.x as f64 + 0.5 * self.width as f64,
            self.y as f64 + 0.5 * self.height as f64,
        )
    }

    /// Canvas coordinates of the centre of view pixel `(u, v)`.
    #[inline]
    pub fn pixel_center(&self, u: usize, v: usize) -> Point2 {
        Point2::new((self.x + u) as f64 + 0.5, (self.y + v) as f64 + 0.5)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplatModel {
    pub gaussians: Vec<Gaussian2D>,
    pub canvas: (usize, usize),
}

const MODEL_FORMAT: &str = "tiersplat-model";
const MODEL_VERSION: u32 = 1;

/// `[x, y, s1, s2, rotation, opacity, intensity, depth, id]`
type GaussianRecord = (f64, f64, f64, f64, f64, f64, f64, f64, u64);

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    canvas: [usize; 2],
    gaussians: Vec<GaussianRecord>,
}

impl SplatModel {
    pub fn new(canvas: (usize, usize)) -> Self {
        Self {
            gaussians: Vec::new(),
            canvas,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            canvas: [self.canvas.0, self.canvas.1],
            gaussians: self
                .gaussians
                .iter()
                .map(|g| {
                    (
                        g.position.x,
                        g.position.y,
                        g.scale[0],
                        g.scale[1],
                        g.rotation,
                        g.opacity,
                        g.intensity,
                        g.depth,
                        g.id,
                    )
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model file {} v{}",
                file.format, file.version
            )));
        }
        let gaussians = file
            .gaussians
            .into_iter()
            .map(
                |(x, y, s1, s2, rotation, opacity, intensity, depth, id)| Gaussian2D {
                    position: Point2::new(x, y),
                    scale: [s1, s2],
                    rotation,
                    opacity,
                    intensity,
                    depth,
                    id,
                },
            )
            .collect::<Vec<_>>();
        if let Some(bad) = gaussians
            .iter()
            .find(|g| !g.is_finite() || g.scale.iter().any(|&s| s <= 0.0))
        {
            return Err(Error::invalid(format!(
                "gaussian {} has invalid parameters",
                bad.id
            )));
        }
        Ok(Self {
            gaussians,
            canvas: (file.canvas[0], file.canvas[1]),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub type Mat3 = [[f64; 3]; 3];

fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[j][i] = a[i][j];
        }
    }
    out
}

/// Screen-space covariance `J W Σ Wᵀ Jᵀ` for a view transform `W` and the
/// Jacobian `J` of the local affine approximation of the projection.
#[allow(clippy::needless_range_loop)]
pub fn project_covariance(sigma: &Mat3, view: &Mat3, jacobian: &Mat3) -> Result<Mat3> {
    for i in 0..3 {
        for j in 0..i {
            let (a, b) = (sigma[i][j], sigma[j][i]);
            if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::invalid(format!(
                    "covariance not symmetric at ({i}, {j}): {a} vs {b}"
                )));
            }
        }
    }
    let jw = matmul(jacobian, view);
    let mut out = matmul(&matmul(&jw, sigma), &transpose(&jw));
    // Symmetrize away rounding.
    for i in 0..3 {
        for j in 0..i {
            let m = 0.5 * (out[i][j] + out[j][i]);
            out[i][j] = m;
            out[j][i] = m;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(s1: f64, s2: f64, rot: f64) -> Gaussian2D {
        Gaussian2D {
            position: Point2::new(3.0, -2.0),
            scale: [s1, s2],
            rotation: rot,
            opacity: 0.7,
            intensity: 0.4,
            depth: 0.0,
            id: 0,
        }
    }

    const I3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    #[test]
    fn identity_projection_keeps_sigma() {
        let sigma = [[2.0, 0.3, 0.1], [0.3, 1.0, -0.2], [0.1, -0.2, 0.5]];
        assert_eq!(project_covariance(&sigma, &I3, &I3).unwrap(), sigma);
    }

    #[test]
    fn scaled_jacobian() {
        let two = [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]];
        let out = project_covariance(&I3, &I3, &two).unwrap();
        assert_eq!(out, [[4.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 4.0]]);
    }

    #[test]
    fn asymmetric_sigma_rejected() {
        let sigma = [[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(project_covariance(&sigma, &I3, &I3).is_err());
    }

    #[test]
    fn opacity_peaks_at_centre() {
        let g = gaussian(2.0, 5.0, 0.4);
        assert_eq!(g.opacity_at(&g.position), 0.7);
    }

    #[test]
    fn isotropic_one_sigma() {
        let g = gaussian(1.5, 1.5, 0.0);
        let p = Point2::new(g.position.x + 1.5 * 0.6, g.position.y - 1.5 * 0.8);
        assert!((g.opacity_at(&p) - 0.7 * (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn anisotropic_matches_explicit_inverse() {
        let g = gaussian(0.8, 3.1, 1.1);
        let cov = g.covariance();
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let inv = [
            [cov[1][1] / det, -cov[0][1] / det],
            [-cov[1][0] / det, cov[0][0] / det],
        ];
        for p in [
            Point2::new(4.0, -1.0),
            Point2::new(1.0, 0.5),
            Point2::new(3.3, -4.0),
        ] {
            let d = [p.x - g.position.x, p.y - g.position.y];
            let q = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1])
                + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
            let expected = 0.7 * (-0.5 * q).exp();
            assert!((g.opacity_at(&p) - expected).abs() < 1e-12);
        }
        let k = g.conic();
        assert!((k.a - inv[0][0]).abs() < 1e-12);
        assert!((k.b - inv[0][1]).abs() < 1e-12);
        assert!((k.c - inv[1][1]).abs() < 1e-12);
    }

    #[test]
    fn cutoff_box_bounds_the_skip_region() {
        let g = gaussian(1.0, 4.0, 0.7);
        let [hx, hy] = g.cutoff_extent().unwrap();
        // Points just outside the box along each axis fall below the threshold.
        for p in [
            Point2::new(g.position.x + hx * 1.001, g.position.y),
            Point2::new(g.position.x, g.position.y - hy * 1.001),
        ] {
            assert!(g.opacity_at(&p) < MIN_ALPHA);
        }
    }

    #[test]
    fn model_file_round_trip() {
        let m = SplatModel {
            gaussians: vec![gaussian(1.0, 2.0, 0.3), gaussian(0.1, 0.2, -1.0)],
            canvas: (16, 8),
        };
        let text = m.to_json().unwrap();
        assert!(text.contains("\"version\":1"));
        assert_eq!(SplatModel::from_json(&text).unwrap(), m);
    }
}
