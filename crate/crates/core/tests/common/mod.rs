#![allow(dead_code)]

pub mod gen;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tiersplat::geometry::Point2;
use tiersplat::splat2d::*;

/// Per-pixel evaluator written from the blending definition: sort by
/// (depth, id), explicit 2×2 inverse, no tiles or cutoff box.
fn naive_blend(model: &SplatModel, p: Point2) -> (f64, Vec<u64>) {
    let mut gs: Vec<&Gaussian2D> = model.gaussians.iter().collect();
    gs.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.id.cmp(&b.id)));
    let mut color = 0.0;
    let mut t = 1.0;
    let mut used = Vec::new();
    for g in gs {
        let (s, c) = g.rotation.sin_cos();
        let r = [[c, -s], [s, c]];
        let d = [g.scale[0].powi(2), g.scale[1].powi(2)];
        let mut cov = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] = (0..2).map(|k| r[i][k] * d[k] * r[j][k]).sum();
            }
        }
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let inv = [
            [cov[1][1] / det, -cov[0][1] / det],
            [-cov[1][0] / det, cov[0][0] / det],
        ];
        let v = [p.x - g.position.x, p.y - g.position.y];
        let q = v[0] * (inv[0][0] * v[0] + inv[0][1] * v[1])
            + v[1] * (inv[1][0] * v[0] + inv[1][1] * v[1]);
        let a = g.opacity * (-0.5 * q).exp();
        if a < MIN_ALPHA {
            continue;
        }
        used.push(g.id);
        color += g.intensity * a * t;
        t *= 1.0 - a;
    }
    (color, used)
}

pub fn naive_pixel(model: &SplatModel, p: Point2) -> f64 {
    naive_blend(model, p).0.clamp(0.0, 1.0)
}

pub fn random_model(rng: &mut ChaCha8Rng, n: usize, canvas: (usize, usize)) -> SplatModel {
    let gaussians = (0..n)
        .map(|k| Gaussian2D {
            position: Point2::new(
                rng.gen_range(0.0..canvas.0 as f64),
                rng.gen_range(0.0..canvas.1 as f64),
            ),
            scale: [rng.gen_range(1.0..6.0), rng.gen_range(1.0..6.0)],
            rotation: rng.gen_range(-3.0..3.0),
            opacity: rng.gen_range(0.05..0.95),
            intensity: rng.gen_range(0.05..0.95),
            depth: rng.gen_range(0.0..1.0),
            id: k as u64,
        })
        .collect();
    SplatModel { gaussians, canvas }
}

pub fn apply(model: &SplatModel, gi: usize, k: usize, h: f64) -> SplatModel {
    let mut m = model.clone();
    let g = &mut m.gaussians[gi];
    match k {
        0 => g.position.x += h,
        1 => g.position.y += h,
        2 => g.scale[0] *= h.exp(),
        3 => g.scale[1] *= h.exp(),
        4 => g.rotation += h,
        5 => {
            let z = (g.opacity / (1.0 - g.opacity)).ln() + h;
            g.opacity = 1.0 / (1.0 + (-z).exp());
        }
        _ => g.intensity += h,
    }
    m
}

const PARAM_NAMES: [&str; PARAMS] = [
    "x",
    "y",
    "ln_s1",
    "ln_s2",
    "rotation",
    "logit_opacity",
    "intensity",
];

/// True when nothing non-smooth happens between the two perturbed models:
/// same contributing Gaussians at every pixel, no clamping, and (with an L1
/// term) no pixel crossing its target value.
fn stencil_is_smooth(
    a: &SplatModel,
    b: &SplatModel,
    view: &View,
    truth: &ImageBuffer,
    lambda: f64,
) -> bool {
    for v in 0..view.height {
        for u in 0..view.width {
            let p = view.pixel_center(u, v);
            let (ca, ua) = naive_blend(a, p);
            let (cb, ub) = naive_blend(b, p);
            if ua != ub || !(0.0..=1.0).contains(&ca) || !(0.0..=1.0).contains(&cb) {
                return false;
            }
            let t = truth.get(u, v);
            if lambda < 1.0 && (ca - t).signum() != (cb - t).signum() {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Default)]
pub struct GradientStats {
    pub cases: usize,
    pub parameters: usize,
    /// Stencils at h = 1e-4 that crossed a skip-threshold, clamp or L1 kink
    /// and were re-checked at h = 1e-6.
    pub rechecked: usize,
    pub worst_relative_error: f64,
    pub failures: Vec<String>,
}

/// Central-difference check of loss∘render over random models of at most
/// five Gaussians on 16×16 views.
pub fn gradient_check(seed: u64, cases: usize) -> GradientStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = GradientStats::default();
    for case in 0..cases {
        let n = rng.gen_range(1..=5);
        let model = random_model(&mut rng, n, (24, 24));
        let view = View::new(rng.gen_range(0..=8), rng.gen_range(0..=8), 16, 16);
        let phase = rng.gen_range(0.0..6.0);
        let truth = ImageBuffer::from_fn(16, 16, |x, y| {
            0.5 + 0.4 * ((x as f64 * 0.4 + phase).sin() * (y as f64 * 0.25).cos())
        });
        let lambda = [0.0, 0.2, 1.0][case % 3];
        let target = [Target {
            view,
            image: truth.clone(),
        }];
        let (_, grads) = loss_and_gradients(&model, &target, lambda).unwrap();
        let f = |m: &SplatModel| loss(&render(m, &view).unwrap(), &truth, lambda).unwrap();
        for gi in 0..n {
            for (k, param) in PARAM_NAMES.iter().enumerate() {
                let mut h = 1e-4;
                let (mut plus, mut minus) = (apply(&model, gi, k, h), apply(&model, gi, k, -h));
                if !stencil_is_smooth(&plus, &minus, &view, &truth, lambda) {
                    stats.rechecked += 1;
                    h = 1e-6;
                    plus = apply(&model, gi, k, h);
                    minus = apply(&model, gi, k, -h);
                }
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                let an = grads.params[gi][k];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                stats.worst_relative_error = stats.worst_relative_error.max(rel);
                stats.parameters += 1;
                if rel > 1e-3 {
                    stats.failures.push(format!(
                        "case {case} gaussian {gi} {}: analytic {an} vs fd {fd} (h {h})",
                        param
                    ));
                }
            }
        }
        stats.cases += 1;
    }
    stats
}

pub struct MetricFixture {
    pub name: &'static str,
    pub a: ImageBuffer,
    pub b: ImageBuffer,
    pub ssim: f64,
    pub psnr: f64,
}

/// Pattern pairs scored by a float64 reference SSIM (11×11 Gaussian window,
/// σ = 1.5, zero padding, mean over all pixels) and a reference PSNR.
pub fn metric_fixtures() -> Vec<MetricFixture> {
    let pair = |w, h, fa: fn(f64, f64) -> f64, fb: fn(f64, f64) -> f64| {
        (
            ImageBuffer::from_fn(w, h, |x, y| fa(x as f64, y as f64)),
            ImageBuffer::from_fn(w, h, |x, y| fb(x as f64, y as f64)),
        )
    };
    let (wa, wb) = pair(
        16,
        16,
        |x, y| 0.5 + 0.4 * (0.7 * x).sin() * (0.3 * y).cos(),
        |x, y| 0.5 + 0.3 * (0.2 * x + 0.5 * y).cos(),
    );
    let (ha, hb) = pair(
        20,
        13,
        |x, y| ((x * 37.0 + y * 91.0) % 97.0) / 96.0,
        |x, y| ((x * 53.0 + y * 29.0 + 11.0) % 89.0) / 88.0,
    );
    let (ta, tb) = pair(
        7,
        5,
        |x, y| (x + 2.0 * y) / 20.0,
        |x, y| 1.0 - (x * y) / 24.0,
    );
    vec![
        MetricFixture {
            name: "waves",
            a: wa,
            b: wb,
            ssim: 0.33237193288839634,
            psnr: 10.635648095675032,
        },
        MetricFixture {
            name: "hash",
            a: ha,
            b: hb,
            ssim: 0.2464723341729646,
            psnr: 7.695183480736963,
        },
        MetricFixture {
            name: "tiny",
            a: ta,
            b: tb,
            ssim: 0.2883945353820554,
            psnr: 4.606102179274949,
        },
    ]
}
