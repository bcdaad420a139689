//! Planar primitives and additively weighted Voronoi partitions.
//!
//! A point `p` belongs to the site minimizing `|p - site| - weight`. Raising a
//! site's weight pushes every boundary of its cell outward by the same amount
//! along the boundary normal, and the cells always tile the plane.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CameraId = u32;
pub type SiteId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    fn lerp(&self, other: &Point2, t: f64) -> Point2 {
        Point2::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }
}

/// Axis-aligned rectangle, inclusive on all sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BoundingBox {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    /// Smallest box enclosing all points. `None` for an empty iterator.
    pub fn enclosing<'a>(points: impl IntoIterator<Item = &'a Point2>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut bbox = BoundingBox::new(first.x, first.y, first.x, first.y);
        for p in it {
            bbox.min_x = bbox.min_x.min(p.x);
            bbox.min_y = bbox.min_y.min(p.y);
            bbox.max_x = bbox.max_x.max(p.x);
            bbox.max_y = bbox.max_y.max(p.y);
        }
        Some(bbox)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub id: CameraId,
    #[serde(flatten)]
    pub position: Point2,
}

impl Camera {
    pub const fn new(id: CameraId, x: f64, y: f64) -> Self {
        Self {
            id,
            position: Point2::new(x, y),
        }
    }
}

/// Ordered list of camera positions. Order is preserved exactly as given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CameraSet {
    pub cameras: Vec<Camera>,
}

impl CameraSet {
    pub fn new(cameras: Vec<Camera>) -> Self {
        Self { cameras }
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Camera> {
        self.cameras.iter()
    }

    pub fn ids(&self) -> Vec<CameraId> {
        self.cameras.iter().map(|c| c.id).collect()
    }

    /// `count` cameras on the unit-spaced x axis. Only the count matters to
    /// the cost curves, so this stands in wherever a layout is required.
    pub fn placeholder(count: usize) -> Self {
        (0..count)
            .map(|i| Camera::new(i as CameraId, i as f64, 0.0))
            .collect()
    }
}

impl FromIterator<Camera> for CameraSet {
    fn from_iter<T: IntoIterator<Item = Camera>>(iter: T) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a CameraSet {
    type Item = &'a Camera;
    type IntoIter = std::slice::Iter<'a, Camera>;

    fn into_iter(self) -> Self::IntoIter {
        self.cameras.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub site_id: SiteId,
    #[serde(flatten)]
    pub position: Point2,
    pub weight: f64,
}

impl Site {
    pub const fn new(site_id: SiteId, x: f64, y: f64, weight: f64) -> Self {
        Self {
            site_id,
            position: Point2::new(x, y),
            weight,
        }
    }

    fn score(&self, p: &Point2) -> f64 {
        p.distance(&self.position) - self.weight
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPartition {
    pub sites: Vec<Site>,
    pub bounding_box: BoundingBox,
}

impl WeightedPartition {
    pub fn new(sites: Vec<Site>, bounding_box: BoundingBox) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &sites {
            if !seen.insert(s.site_id) {
                return Err(Error::invalid(format!("duplicate site id {}", s.site_id)));
            }
            if !s.position.is_finite() || !s.weight.is_finite() {
                return Err(Error::invalid(format!("site {} is not finite", s.site_id)));
            }
        }
        Ok(Self {
            sites,
            bounding_box,
        })
    }

    pub fn site(&self, site_id: SiteId) -> Option<&Site> {
        self.sites.iter().find(|s| s.site_id == site_id)
    }

    pub fn site_mut(&mut self, site_id: SiteId) -> Option<&mut Site> {
        self.sites.iter_mut().find(|s| s.site_id == site_id)
    }

    /// Site minimizing `distance - weight`, lowest id on exact ties.
    ///
    /// The rule is defined for every finite point; callers that need the
    /// point inside the box check that themselves.
    pub fn assign_cell(&self, p: &Point2) -> Result<SiteId> {
        let mut best: Option<(f64, SiteId)> = None;
        for s in &self.sites {
            let score = s.score(p);
            best = match best {
                None => Some((score, s.site_id)),
                Some((b, id)) if score < b || (score == b && s.site_id < id) => {
                    Some((score, s.site_id))
                }
                keep => keep,
            };
        }
        best.map(|(_, id)| id).ok_or(Error::NoSites)
    }

    /// Splits `cams` by cell. Every site gets an entry, possibly empty, and
    /// cameras keep their input order within each set.
    pub fn partition_cameras(&self, cams: &CameraSet) -> Result<BTreeMap<SiteId, CameraSet>> {
        if self.sites.is_empty() {
            return Err(Error::NoSites);
        }
        let mut out: BTreeMap<SiteId, CameraSet> = self
            .sites
            .iter()
            .map(|s| (s.site_id, CameraSet::default()))
            .collect();
        for cam in cams {
            if !self.bounding_box.contains(&cam.position) {
                return Err(Error::CameraOutsideBox(cam.id));
            }
            let site = self.assign_cell(&cam.position)?;
            out.get_mut(&site)
                .expect("every site has an entry")
                .cameras
                .push(*cam);
        }
        Ok(out)
    }

    /// Closed polyline (first vertex repeated at the end) approximating the
    /// boundary of `site_id`'s cell, traced on a `resolution`² sample grid.
    ///
    /// Every vertex assigns to `site_id` or lies on a tie. An empty cell
    /// yields an empty polyline.
    pub fn cell_boundary_polyline(
        &self,
        site_id: SiteId,
        resolution: usize,
    ) -> Result<Vec<Point2>> {
        if resolution < 8 {
            return Err(Error::invalid(format!(
                "boundary resolution must be at least 8, got {resolution}"
            )));
        }
        if self.site(site_id).is_none() {
            return Err(Error::UnknownSite(site_id));
        }
        let grid = CellGrid::sample(self, site_id, resolution)?;
        let Some(corners) = grid.outer_boundary() else {
            return Ok(Vec::new());
        };
        let mut poly = Vec::with_capacity(corners.len() + 1);
        for (i, j) in corners {
            poly.push(self.snap_corner(&grid, site_id, i, j)?);
        }
        poly.push(poly[0]);
        Ok(poly)
    }

    /// Moves a grid corner that falls outside the cell onto the cell side of
    /// the boundary, bisecting toward the centre of an adjacent inside square.
    fn snap_corner(&self, grid: &CellGrid, site_id: SiteId, i: usize, j: usize) -> Result<Point2> {
        let corner = grid.corner(i, j);
        if self.owns(site_id, &corner)? {
            return Ok(corner);
        }
        let inside = grid
            .squares_around(i, j)
            .find(|&(a, b)| grid.is_inside(a, b))
            .map(|(a, b)| grid.square_center(a, b))
            .expect("boundary corner touches an inside square");
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        // lo end is inside, hi end is outside.
        for _ in 0..48 {
            let mid = 0.5 * (lo + hi);
            if self.owns(site_id, &inside.lerp(&corner, mid))? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(inside.lerp(&corner, lo))
    }

    fn owns(&self, site_id: SiteId, p: &Point2) -> Result<bool> {
        if self.assign_cell(p)? == site_id {
            return Ok(true);
        }
        let own = self.site(site_id).map(|s| s.score(p));
        let best = self
            .sites
            .iter()
            .map(|s| s.score(p))
            .fold(f64::INFINITY, f64::min);
        Ok(own == Some(best))
    }
}

/// Square grid over the bounding box; square `(i, j)` is inside when its
/// centre assigns to the traced site.
struct CellGrid {
    bbox: BoundingBox,
    n: usize,
    inside: Vec<bool>,
}

impl CellGrid {
    fn sample(partition: &WeightedPartition, site_id: SiteId, n: usize) -> Result<Self> {
        let mut grid = CellGrid {
            bbox: partition.bounding_box,
            n,
            inside: vec![false; n * n],
        };
        for j in 0..n {
            for i in 0..n {
                let c = grid.square_center(i, j);
                grid.inside[j * n + i] = partition.assign_cell(&c)? == site_id;
            }
        }
        grid.keep_largest_component();
        Ok(grid)
    }

    fn is_inside(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && self.inside[j * self.n + i]
    }

    fn corner(&self, i: usize, j: usize) -> Point2 {
        Point2::new(
            self.bbox.min_x + self.bbox.width() * i as f64 / self.n as f64,
            self.bbox.min_y + self.bbox.height() * j as f64 / self.n as f64,
        )
    }

    fn square_center(&self, i: usize, j: usize) -> Point2 {
        Point2::new(
            self.bbox.min_x + self.bbox.width() * (i as f64 + 0.5) / self.n as f64,
            self.bbox.min_y + self.bbox.height() * (j as f64 + 0.5) / self.n as f64,
        )
    }

    /// The (up to four) squares sharing corner `(i, j)`.
    fn squares_around(&self, i: usize, j: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        [(0, 0), (1, 0), (0, 1), (1, 1)]
            .into_iter()
            .filter_map(move |(di, dj)| Some((i.checked_sub(di)?, j.checked_sub(dj)?)))
            .filter(|&(a, b)| a < self.n && b < self.n)
    }

    /// Sampling can leave stray islands near ties; only the largest
    /// 4-connected component is traced.
    fn keep_largest_component(&mut self) {
        let n = self.n;
        let mut label = vec![usize::MAX; n * n];
        let mut best: Option<(usize, usize)> = None; // (size, label)
        let mut next = 0;
        for start in 0..n * n {
            if !self.inside[start] || label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = next;
            let mut size = 0;
            while let Some(k) = stack.pop() {
                size += 1;
                let (i, j) = (k % n, k / n);
                let neighbours = [
                    (i.wrapping_sub(1), j),
                    (i + 1, j),
                    (i, j.wrapping_sub(1)),
                    (i, j + 1),
                ];
                for (a, b) in neighbours {
                    if a < n && b < n {
                        let idx = b * n + a;
                        if self.inside[idx] && label[idx] == usize::MAX {
                            label[idx] = next;
                            stack.push(idx);
                        }
                    }
                }
            }
            if best.is_none_or(|(s, _)| size > s) {
                best = Some((size, next));
            }
            next += 1;
        }
        if let Some((_, keep)) = best {
            for (flag, l) in self.inside.iter_mut().zip(&label) {
                *flag = *flag && *l == keep;
            }
        }
    }

    /// Outer boundary of the inside squares as grid corners, counter-clockwise,
    /// with collinear corners removed.
    fn outer_boundary(&self) -> Option<Vec<(usize, usize)>> {
        // Directed edges keep the inside on the left.
        let mut next: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
        let mut start: Option<(usize, usize)> = None;
        for j in 0..self.n {
            for i in 0..self.n {
                if !self.is_inside(i, j) {
                    continue;
                }
                let below = j > 0 && self.is_inside(i, j - 1);
                let above = self.is_inside(i, j + 1);
                let left = i > 0 && self.is_inside(i - 1, j);
                let right = self.is_inside(i + 1, j);
                let mut edges = Vec::new();
                if !below {
                    edges.push(((i, j), (i + 1, j)));
                }
                if !right {
                    edges.push(((i + 1, j), (i + 1, j + 1)));
                }
                if !above {
                    edges.push(((i + 1, j + 1), (i, j + 1)));
                }
                if !left {
                    edges.push(((i, j + 1), (i, j)));
                }
                for (a, b) in edges {
                    if start.is_none() {
                        // Scan order makes the first edge the bottom edge of the
                        // lowest-leftmost square, which lies on the outer loop.
                        start = Some(a);
                    }
                    next.entry(a).or_default().push(b);
                }
            }
        }
        let start = start?;
        let mut loop_pts = vec![start];
        let mut prev_dir: (i64, i64) = (1, 0);
        let mut cur = start;
        loop {
            let outs = next.get(&cur).expect("boundary edges form closed loops");
            // At pinch corners prefer the left-most turn so the loop stays on
            // the outer boundary of a single component.
            let chosen = if outs.len() == 1 {
                outs[0]
            } else {
                let turn_rank = |b: &(usize, usize)| {
                    let d = (b.0 as i64 - cur.0 as i64, b.1 as i64 - cur.1 as i64);
                    let cross = prev_dir.0 * d.1 - prev_dir.1 * d.0;
                    let dot = prev_dir.0 * d.0 + prev_dir.1 * d.1;
                    match (cross.signum(), dot.signum()) {
                        (1, _) => 0,
                        (0, 1) => 1,
                        (-1, _) => 2,
                        _ => 3,
                    }
                };
                *outs.iter().min_by_key(|b| turn_rank(b)).expect("non-empty")
            };
            prev_dir = (
                chosen.0 as i64 - cur.0 as i64,
                chosen.1 as i64 - cur.1 as i64,
            );
            cur = chosen;
            if cur == start {
                break;
            }
            loop_pts.push(cur);
        }
        Some(drop_collinear(loop_pts))
    }
}

fn drop_collinear(pts: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    let n = pts.len();
    if n < 3 {
        return pts;
    }
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let a = pts[(k + n - 1) % n];
        let b = pts[k];
        let c = pts[(k + 1) % n];
        let cross = (b.0 as i64 - a.0 as i64) * (c.1 as i64 - b.1 as i64)
            - (b.1 as i64 - a.1 as i64) * (c.0 as i64 - b.0 as i64);
        if cross != 0 {
            out.push(b);
        }
    }
    out
}

/// Cameras sorted along the longer side of their bounding rectangle (x when
/// width ≥ height), ties by camera id.
pub fn longest_axis_order(cams: &CameraSet) -> CameraSet {
    let Some(bbox) = BoundingBox::enclosing(cams.iter().map(|c| &c.position)) else {
        return CameraSet::default();
    };
    let by_x = bbox.width() >= bbox.height();
    let mut sorted = cams.cameras.clone();
    sorted.sort_by(|a, b| {
        let (ka, kb) = if by_x {
            (a.position.x, b.position.x)
        } else {
            (a.position.y, b.position.y)
        };
        ka.total_cmp(&kb).then(a.id.cmp(&b.id))
    });
    CameraSet::new(sorted)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_sites(wa: f64, wb: f64) -> WeightedPartition {
        WeightedPartition::new(
            vec![Site::new(0, 0.0, 0.0, wa), Site::new(1, 10.0, 0.0, wb)],
            BoundingBox::new(-10.0, -10.0, 20.0, 10.0),
        )
        .unwrap()
    }

    #[test]
    fn nearest_site_with_zero_weights() {
        let p = two_sites(0.0, 0.0);
        assert_eq!(p.assign_cell(&Point2::new(2.0, 0.0)).unwrap(), 0);
    }

    #[test]
    fn exact_tie_goes_to_lowest_id() {
        let p = two_sites(0.0, 0.0);
        assert_eq!(p.assign_cell(&Point2::new(5.0, 0.0)).unwrap(), 0);
        // Same tie with the site list reversed.
        let mut q = p.clone();
        q.sites.reverse();
        assert_eq!(q.assign_cell(&Point2::new(5.0, 0.0)).unwrap(), 0);
    }

    #[test]
    fn weight_pulls_point_into_heavier_cell() {
        // 6 - 0 = 6 against 4 - 3 = 1.
        let p = two_sites(0.0, 3.0);
        assert_eq!(p.assign_cell(&Point2::new(6.0, 0.0)).unwrap(), 1);
    }

    #[test]
    fn empty_partition_errors() {
        let p = WeightedPartition::new(vec![], BoundingBox::new(0.0, 0.0, 1.0, 1.0)).unwrap();
        assert!(matches!(
            p.assign_cell(&Point2::new(0.5, 0.5)),
            Err(Error::NoSites)
        ));
    }

    #[test]
    fn duplicate_site_ids_rejected() {
        let r = WeightedPartition::new(
            vec![Site::new(3, 0.0, 0.0, 0.0), Site::new(3, 1.0, 0.0, 0.0)],
            BoundingBox::new(0.0, 0.0, 1.0, 1.0),
        );
        assert!(r.is_err());
    }

    fn four_cams() -> CameraSet {
        CameraSet::new(vec![
            Camera::new(0, 1.0, 1.0),
            Camera::new(1, 2.0, -1.0),
            Camera::new(2, 8.0, 1.0),
            Camera::new(3, 9.0, -1.0),
        ])
    }

    #[test]
    fn symmetric_split() {
        let out = two_sites(0.0, 0.0).partition_cameras(&four_cams()).unwrap();
        assert_eq!(out[&0].ids(), vec![0, 1]);
        assert_eq!(out[&1].ids(), vec![2, 3]);
    }

    #[test]
    fn heavy_weight_captures_everything() {
        // Site 0 needs weight above max over cameras of (d0 - d1) to win all.
        let cams = four_cams();
        let w = cams
            .iter()
            .map(|c| {
                c.position.distance(&Point2::new(0.0, 0.0))
                    - c.position.distance(&Point2::new(10.0, 0.0))
            })
            .fold(f64::NEG_INFINITY, f64::max)
            + 1e-9;
        let part = two_sites(w, 0.0);
        let out = part.partition_cameras(&cams).unwrap();
        for c in &cams {
            assert_eq!(part.assign_cell(&c.position).unwrap(), 0);
        }
        assert_eq!(out[&0].len(), 4);
        assert!(out[&1].is_empty());
    }

    #[test]
    fn empty_camera_set() {
        let out = two_sites(0.0, 0.0)
            .partition_cameras(&CameraSet::default())
            .unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.values().all(CameraSet::is_empty));
    }

    #[test]
    fn camera_outside_box_is_named() {
        let cams = CameraSet::new(vec![Camera::new(7, 100.0, 0.0)]);
        match two_sites(0.0, 0.0).partition_cameras(&cams) {
            Err(Error::CameraOutsideBox(7)) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_site_boundary_is_the_box() {
        let part = WeightedPartition::new(
            vec![Site::new(4, 1.0, 1.0, 0.0)],
            BoundingBox::new(0.0, 0.0, 4.0, 2.0),
        )
        .unwrap();
        let poly = part.cell_boundary_polyline(4, 8).unwrap();
        assert_eq!(poly.len(), 5);
        assert_eq!(poly.first(), poly.last());
        let mut corners: Vec<(f64, f64)> = poly[..4].iter().map(|p| (p.x, p.y)).collect();
        corners.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(
            corners,
            vec![(0.0, 0.0), (0.0, 2.0), (4.0, 0.0), (4.0, 2.0)]
        );
    }

    #[test]
    fn bisector_boundary_near_x_zero() {
        let part = WeightedPartition::new(
            vec![Site::new(0, -5.0, 0.0, 0.0), Site::new(1, 5.0, 0.0, 0.0)],
            BoundingBox::new(-10.0, -10.0, 10.0, 10.0),
        )
        .unwrap();
        let res = 32;
        let cell = 20.0 / res as f64;
        for site in [0, 1] {
            let poly = part.cell_boundary_polyline(site, res).unwrap();
            let interior: Vec<_> = poly.iter().filter(|p| p.x.abs() < 10.0 - 1e-9).collect();
            assert!(!interior.is_empty());
            for p in interior {
                assert!(p.x.abs() <= cell, "vertex {p:?} off the bisector");
            }
        }
    }

    #[test]
    fn resolution_and_site_checked() {
        let part = two_sites(0.0, 0.0);
        assert!(part.cell_boundary_polyline(0, 7).is_err());
        assert!(matches!(
            part.cell_boundary_polyline(9, 16),
            Err(Error::UnknownSite(9))
        ));
    }

    #[test]
    fn longest_axis_horizontal_line() {
        let cams = CameraSet::new(vec![
            Camera::new(5, 3.0, 0.0),
            Camera::new(1, -1.0, 0.0),
            Camera::new(9, 7.0, 0.0),
            Camera::new(2, 0.0, 0.0),
        ]);
        assert_eq!(longest_axis_order(&cams).ids(), vec![1, 2, 5, 9]);
    }

    #[test]
    fn square_box_sorts_by_x() {
        let cams = CameraSet::new(vec![
            Camera::new(0, 1.0, 0.0),
            Camera::new(1, 0.0, 1.0),
            Camera::new(2, 0.5, 0.5),
        ]);
        assert_eq!(longest_axis_order(&cams).ids(), vec![1, 2, 0]);
    }

    #[test]
    fn equal_keys_break_by_id() {
        let cams = CameraSet::new(vec![
            Camera::new(4, 1.0, 0.0),
            Camera::new(2, 1.0, 0.0),
            Camera::new(3, 0.0, 0.0),
        ]);
        assert_eq!(longest_axis_order(&cams).ids(), vec![3, 2, 4]);
    }
}
