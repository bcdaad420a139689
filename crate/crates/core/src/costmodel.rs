//! Profiled cost curves: image count to seconds or megabytes.
//!
//! Curves are piecewise linear through the profile samples, anchored at the
//! origin on the left and extended with the last segment's slope on the right.
//! That keeps them monotone, exact at the samples and cheap to invert.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    TrainTime,
    InitTime,
    ModelSize,
    AggregateTime,
}

impl std::str::FromStr for CurveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train_time" => Ok(Self::TrainTime),
            "init_time" => Ok(Self::InitTime),
            "model_size" => Ok(Self::ModelSize),
            "aggregate_time" => Ok(Self::AggregateTime),
            other => Err(Error::invalid(format!("unknown curve kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSamples {
    pub kind: CurveKind,
    /// `(image_count, value)` pairs.
    pub points: Vec<(u64, f64)>,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    image_count: u64,
    value: f64,
}

impl ProfileSamples {
    pub fn new(kind: CurveKind, points: Vec<(u64, f64)>) -> Self {
        Self { kind, points }
    }

    /// Reads `image_count,value` rows (with that header).
    pub fn from_csv<R: Read>(kind: CurveKind, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let points = rdr
            .deserialize::<CsvRow>()
            .map(|row| row.map(|r| (r.image_count, r.value)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { kind, points })
    }

    /// Checks the sample invariants, returning the index of the first
    /// offending pair `(i, i + 1)` where relevant.
    pub fn check(&self) -> Result<(), (Option<usize>, Error)> {
        if self.points.len() < 2 {
            return Err((None, Error::TooFewSamples(self.points.len())));
        }
        for (i, &(n, v)) in self.points.iter().enumerate() {
            if n < 1 {
                return Err((
                    Some(i),
                    Error::invalid(format!("sample {i}: image count must be at least 1")),
                ));
            }
            if !v.is_finite() || v < 0.0 {
                return Err((
                    Some(i),
                    Error::invalid(format!(
                        "sample {i}: value {v} must be finite and non-negative"
                    )),
                ));
            }
        }
        for (i, w) in self.points.windows(2).enumerate() {
            let ((n0, v0), (n1, v1)) = (w[0], w[1]);
            if n1 <= n0 || v1 < v0 {
                return Err((Some(i), Error::NonMonotone(n0, v0, n1, v1)));
            }
        }
        Ok(())
    }
}

/// Monotone piecewise-linear curve fitted to profile samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCurve {
    samples: ProfileSamples,
    extrapolation_slope: f64,
}

/// Result of [`CostCurve::invert`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inversion {
    pub count: usize,
    /// The search hit its upper bound; the true answer may be larger.
    pub saturated: bool,
}

impl CostCurve {
    pub fn fit(samples: ProfileSamples) -> Result<Self> {
        samples.check().map_err(|(_, e)| e)?;
        let n = samples.points.len();
        let (c0, v0) = samples.points[n - 2];
        let (c1, v1) = samples.points[n - 1];
        let extrapolation_slope = (v1 - v0) / (c1 - c0) as f64;
        Ok(Self {
            samples,
            extrapolation_slope,
        })
    }

    /// Straight line through the origin with the given slope per image.
    pub fn linear(kind: CurveKind, slope: f64) -> Result<Self> {
        Self::fit(ProfileSamples::new(
            kind,
            vec![(1, slope), (2, 2.0 * slope)],
        ))
    }

    pub fn zero(kind: CurveKind) -> Self {
        Self::linear(kind, 0.0).expect("zero curve is valid")
    }

    pub fn kind(&self) -> CurveKind {
        self.samples.kind
    }

    pub fn samples(&self) -> &ProfileSamples {
        &self.samples
    }

    pub fn extrapolation_slope(&self) -> f64 {
        self.extrapolation_slope
    }

    /// Breakpoints of the fitted curve, starting at the origin anchor.
    pub fn breakpoints(&self) -> Vec<Point2> {
        std::iter::once(Point2::new(0.0, 0.0))
            .chain(
                self.samples
                    .points
                    .iter()
                    .map(|&(n, v)| Point2::new(n as f64, v)),
            )
            .collect()
    }

    pub fn eval(&self, image_count: usize) -> f64 {
        if image_count == 0 {
            return 0.0;
        }
        let n = image_count as u64;
        let pts = &self.samples.points;
        match pts.binary_search_by_key(&n, |&(c, _)| c) {
            Ok(i) => pts[i].1,
            Err(0) => {
                let (c0, v0) = pts[0];
                v0 * n as f64 / c0 as f64
            }
            Err(i) if i == pts.len() => {
                let (cl, vl) = pts[i - 1];
                vl + self.extrapolation_slope * (n - cl) as f64
            }
            Err(i) => {
                let (c0, v0) = pts[i - 1];
                let (c1, v1) = pts[i];
                v0 + (v1 - v0) * (n - c0) as f64 / (c1 - c0) as f64
            }
        }
    }

    pub fn eval_checked(&self, image_count: i64) -> Result<f64> {
        usize::try_from(image_count)
            .map(|n| self.eval(n))
            .map_err(|_| Error::NegativeCount(image_count))
    }

    /// Largest `n ≤ limit` with `eval(n) ≤ budget` (0 when none).
    pub fn invert(&self, budget: f64, limit: usize) -> Inversion {
        largest_within(budget, limit, |n| self.eval(n))
    }
}

/// Binary search for the largest `n` in `0..=limit` with `f(n) ≤ budget`,
/// for non-decreasing `f` with `f(0) = 0`.
pub(crate) fn largest_within(budget: f64, limit: usize, f: impl Fn(usize) -> f64) -> Inversion {
    if budget.is_nan() || budget < 0.0 {
        return Inversion {
            count: 0,
            saturated: false,
        };
    }
    if f(limit) <= budget {
        return Inversion {
            count: limit,
            saturated: true,
        };
    }
    // f(lo) ≤ budget < f(hi)
    let (mut lo, mut hi) = (0usize, limit);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if f(mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Inversion {
        count: lo,
        saturated: false,
    }
}

pub type EdgeId = u32;
pub type DeviceId = u32;

/// Profiled behaviour of one device. Bandwidth is in MB/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: DeviceId,
    pub train_curve: CostCurve,
    pub init_curve: CostCurve,
    pub size_curve: CostCurve,
    pub bandwidth: f64,
    pub max_cameras: usize,
}

impl DeviceProfile {
    /// Init + train + upload seconds for `count` images, ignoring the cap.
    pub fn total_time(&self, count: usize) -> f64 {
        self.init_curve.eval(count) + self.train_curve.eval(count) + self.upload_time(count)
    }

    pub fn upload_time(&self, count: usize) -> f64 {
        self.size_curve.eval(count) / self.bandwidth
    }
}

/// An edge site with its devices. `bandwidth_to_cloud` is in MB/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeProfile {
    pub edge_id: EdgeId,
    pub position: Point2,
    pub bandwidth_to_cloud: f64,
    pub aggregate_curve: CostCurve,
    pub devices: Vec<DeviceProfile>,
}

impl EdgeProfile {
    pub fn capacity(&self) -> usize {
        self.devices.iter().map(|d| d.max_cameras).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point() -> CostCurve {
        CostCurve::fit(ProfileSamples::new(
            CurveKind::TrainTime,
            vec![(10, 100.0), (20, 200.0)],
        ))
        .unwrap()
    }

    #[test]
    fn reproduces_samples() {
        assert_eq!(two_point().eval(10), 100.0);
        assert_eq!(two_point().eval(20), 200.0);
    }

    #[test]
    fn interpolates_midpoint() {
        assert_eq!(two_point().eval(15), 150.0);
    }

    #[test]
    fn extrapolates_with_last_slope() {
        // slope (200 - 100) / (20 - 10) = 10 s/image, so 200 + 10 * 10.
        assert_eq!(two_point().extrapolation_slope(), 10.0);
        assert_eq!(two_point().eval(30), 300.0);
    }

    #[test]
    fn anchored_at_origin() {
        assert_eq!(two_point().eval(0), 0.0);
        assert_eq!(two_point().eval(5), 50.0);
    }

    #[test]
    fn three_point_segment() {
        let c = CostCurve::fit(ProfileSamples::new(
            CurveKind::ModelSize,
            vec![(4, 10.0), (8, 30.0), (16, 34.0)],
        ))
        .unwrap();
        // Independent segment equation on (8,30)-(16,34).
        let oracle = |n: f64| 30.0 + (34.0 - 30.0) / (16.0 - 8.0) * (n - 8.0);
        for n in 9..16 {
            assert!((c.eval(n) - oracle(n as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_samples() {
        let short = ProfileSamples::new(CurveKind::TrainTime, vec![(1, 1.0)]);
        assert!(matches!(
            CostCurve::fit(short),
            Err(Error::TooFewSamples(1))
        ));
        let dec = ProfileSamples::new(CurveKind::TrainTime, vec![(1, 5.0), (2, 4.0)]);
        match CostCurve::fit(dec) {
            Err(Error::NonMonotone(1, a, 2, b)) => assert_eq!((a, b), (5.0, 4.0)),
            other => panic!("unexpected {other:?}"),
        }
        let dup = ProfileSamples::new(CurveKind::TrainTime, vec![(3, 1.0), (3, 2.0)]);
        assert!(matches!(CostCurve::fit(dup), Err(Error::NonMonotone(..))));
    }

    #[test]
    fn negative_count_errors() {
        assert!(matches!(
            two_point().eval_checked(-1),
            Err(Error::NegativeCount(-1))
        ));
        assert_eq!(two_point().eval_checked(15).unwrap(), 150.0);
    }

    #[test]
    fn invert_zero_budget() {
        assert_eq!(two_point().invert(0.0, 1000).count, 0);
    }

    #[test]
    fn invert_matches_linear_scan() {
        let c = two_point();
        let scan = (0..=200).filter(|&n| c.eval(n) <= 150.0).max().unwrap();
        assert_eq!(scan, 15);
        assert_eq!(
            c.invert(150.0, 200),
            Inversion {
                count: 15,
                saturated: false
            }
        );
    }

    #[test]
    fn invert_saturates_at_limit() {
        let inv = two_point().invert(1e9, 200);
        assert_eq!(
            inv,
            Inversion {
                count: 200,
                saturated: true
            }
        );
    }

    #[test]
    fn csv_ingest() {
        let text = "image_count,value\n10,100\n20, 200\n";
        let s = ProfileSamples::from_csv(CurveKind::InitTime, text.as_bytes()).unwrap();
        assert_eq!(s.points, vec![(10, 100.0), (20, 200.0)]);
    }
}
