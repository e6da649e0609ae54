//! Planar geometry: poses, frame transforms, polyline projection, and
//! oriented-box collision tests.
//!
//! Everything here is a pure function over immutable values. Angles are kept
//! in (−π, π] after every operation so long rollouts cannot drift out of
//! range. Touching boxes count as intersecting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{wrap_angle, Real};

pub type Point<S> = [S; 2];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("polyline needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("polyline has a zero-length segment at index {0}")]
    ZeroLengthSegment(usize),
    #[error("oriented box half-extents must be strictly positive")]
    NonPositiveExtents,
}

/// Planar rigid pose. `heading` stays in (−π, π].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D<S> {
    pub x: S,
    pub y: S,
    pub heading: S,
}

impl<S: Real> Pose2D<S> {
    pub fn new(x: S, y: S, heading: S) -> Self {
        Pose2D { x, y, heading: wrap_angle(heading) }
    }

    pub fn identity() -> Self {
        Pose2D { x: S::zero(), y: S::zero(), heading: S::zero() }
    }

    pub fn position(&self) -> Point<S> {
        [self.x, self.y]
    }

    /// Map a point expressed in this pose's frame into the world frame.
    pub fn point_to_world(&self, p: Point<S>) -> Point<S> {
        let (sin, cos) = self.heading.sin_cos();
        [self.x + p[0] * cos - p[1] * sin, self.y + p[0] * sin + p[1] * cos]
    }

    /// Map a world point into this pose's frame.
    pub fn point_to_frame(&self, p: Point<S>) -> Point<S> {
        let (sin, cos) = self.heading.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [dx * cos + dy * sin, -dx * sin + dy * cos]
    }

    /// Compose: the pose of `child` (expressed in this frame) in the world frame.
    pub fn compose(&self, child: &Pose2D<S>) -> Pose2D<S> {
        let p = self.point_to_world(child.position());
        Pose2D::new(p[0], p[1], self.heading + child.heading)
    }
}

/// Transform world points into `frame` coordinates.
pub fn to_frame<S: Real>(points: &[Point<S>], frame: &Pose2D<S>) -> Vec<Point<S>> {
    points.iter().map(|&p| frame.point_to_frame(p)).collect()
}

/// Transform frame-local points back into world coordinates.
pub fn from_frame<S: Real>(points: &[Point<S>], frame: &Pose2D<S>) -> Vec<Point<S>> {
    points.iter().map(|&p| frame.point_to_world(p)).collect()
}

pub fn dist<S: Real>(a: Point<S>, b: Point<S>) -> S {
    dist_sq(a, b).sqrt()
}

pub fn dist_sq<S: Real>(a: Point<S>, b: Point<S>) -> S {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Ordered vertex chain with precomputed cumulative arclength.
///
/// Serializes as the bare vertex list; deserialization revalidates and
/// rebuilds the arclength table, so invalid polylines cannot enter through
/// files.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline<S> {
    points: Vec<Point<S>>,
    cumulative_arclength: Vec<S>,
}

impl<S: Real + Serialize> Serialize for Polyline<S> {
    fn serialize<Ser: serde::Serializer>(&self, s: Ser) -> Result<Ser::Ok, Ser::Error> {
        self.points.serialize(s)
    }
}

impl<'de, S: Real + Deserialize<'de>> Deserialize<'de> for Polyline<S> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let points = Vec::<Point<S>>::deserialize(d)?;
        Polyline::new(points).map_err(serde::de::Error::custom)
    }
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection<S> {
    /// Arclength of the nearest point, in [0, total_length].
    pub arclength: S,
    /// Signed offset, positive left of the direction of travel.
    pub lateral_offset: S,
    pub segment_index: usize,
}

impl<S: Real> Polyline<S> {
    pub fn new(points: Vec<Point<S>>) -> Result<Self, GeometryError> {
        if points.len() < 2 {
            return Err(GeometryError::TooFewPoints(points.len()));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        cumulative.push(S::zero());
        for i in 1..points.len() {
            let d = dist(points[i - 1], points[i]);
            if d <= S::zero() {
                return Err(GeometryError::ZeroLengthSegment(i - 1));
            }
            let prev = cumulative[i - 1];
            cumulative.push(prev + d);
        }
        Ok(Polyline { points, cumulative_arclength: cumulative })
    }

    pub fn points(&self) -> &[Point<S>] {
        &self.points
    }

    pub fn cumulative_arclength(&self) -> &[S] {
        &self.cumulative_arclength
    }

    pub fn total_length(&self) -> S {
        *self.cumulative_arclength.last().unwrap()
    }

    pub fn num_segments(&self) -> usize {
        self.points.len() - 1
    }

    /// Point at a given arclength, clamped to the polyline's ends.
    pub fn point_at(&self, s: S) -> Point<S> {
        let (i, t) = self.locate(s);
        let a = self.points[i];
        let b = self.points[i + 1];
        [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
    }

    /// Tangent direction (unit vector) at a given arclength.
    pub fn tangent_at(&self, s: S) -> Point<S> {
        let (i, _) = self.locate(s);
        let a = self.points[i];
        let b = self.points[i + 1];
        let len = dist(a, b);
        [(b[0] - a[0]) / len, (b[1] - a[1]) / len]
    }

    /// Tangent angle at a given arclength.
    pub fn heading_at(&self, s: S) -> S {
        let t = self.tangent_at(s);
        t[1].atan2(t[0])
    }

    /// Discrete curvature estimate at a given arclength: tangent-angle change
    /// over a small arclength window, clamped at the polyline ends.
    pub fn curvature_at(&self, s: S, half_window: S) -> S {
        let total = self.total_length();
        let lo = (s - half_window).max(S::zero());
        let hi = (s + half_window).min(total);
        if hi <= lo {
            return S::zero();
        }
        let dh = wrap_angle(self.heading_at(hi) - self.heading_at(lo));
        dh / (hi - lo)
    }

    fn locate(&self, s: S) -> (usize, S) {
        let total = self.total_length();
        let s = s.max(S::zero()).min(total);
        // binary search over cumulative arclength
        let cum = &self.cumulative_arclength;
        let mut lo = 0usize;
        let mut hi = cum.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if cum[mid] <= s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let seg_len = cum[lo + 1] - cum[lo];
        let t = ((s - cum[lo]) / seg_len).max(S::zero()).min(S::one());
        (lo, t)
    }
}

/// Nearest-point projection of `p` onto `line`.
///
/// Ties between segments (shared vertices) resolve to the lower segment
/// index, which keeps downstream metrics deterministic.
pub fn project_onto_polyline<S: Real>(p: Point<S>, line: &Polyline<S>) -> Projection<S> {
    let pts = line.points();
    let cum = line.cumulative_arclength();
    let mut best = Projection {
        arclength: S::zero(),
        lateral_offset: S::zero(),
        segment_index: 0,
    };
    let mut best_d2 = S::infinity();
    for i in 0..line.num_segments() {
        let a = pts[i];
        let b = pts[i + 1];
        let ab = [b[0] - a[0], b[1] - a[1]];
        let seg_len = cum[i + 1] - cum[i];
        let t_raw = ((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / (seg_len * seg_len);
        let t = t_raw.max(S::zero()).min(S::one());
        let closest = [a[0] + ab[0] * t, a[1] + ab[1] * t];
        let d2 = dist_sq(p, closest);
        if d2 < best_d2 {
            best_d2 = d2;
            let dir = [ab[0] / seg_len, ab[1] / seg_len];
            let rel = [p[0] - closest[0], p[1] - closest[1]];
            // positive left of travel direction
            let lateral = dir[0] * rel[1] - dir[1] * rel[0];
            best = Projection {
                arclength: cum[i] + seg_len * t,
                lateral_offset: lateral,
                segment_index: i,
            };
        }
    }
    best
}

/// Rectangle with arbitrary heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox<S> {
    pub center: Point<S>,
    /// (length/2, width/2): extents along the heading axis and its normal.
    pub half_extents: [S; 2],
    pub heading: S,
}

impl<S: Real> OrientedBox<S> {
    pub fn new(center: Point<S>, half_extents: [S; 2], heading: S) -> Result<Self, GeometryError> {
        if half_extents[0] <= S::zero() || half_extents[1] <= S::zero() {
            return Err(GeometryError::NonPositiveExtents);
        }
        Ok(OrientedBox { center, half_extents, heading: wrap_angle(heading) })
    }

    pub fn corners(&self) -> [Point<S>; 4] {
        let (sin, cos) = self.heading.sin_cos();
        let [hl, hw] = self.half_extents;
        let mk = |sx: S, sy: S| {
            [
                self.center[0] + sx * hl * cos - sy * hw * sin,
                self.center[1] + sx * hl * sin + sy * hw * cos,
            ]
        };
        let one = S::one();
        [mk(one, one), mk(-one, one), mk(-one, -one), mk(one, -one)]
    }

    /// Local axes: (heading direction, left normal).
    pub fn axes(&self) -> [Point<S>; 2] {
        let (sin, cos) = self.heading.sin_cos();
        [[cos, sin], [-sin, cos]]
    }

    pub fn contains(&self, p: Point<S>) -> bool {
        let [u, v] = self.axes();
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        let du = (d[0] * u[0] + d[1] * u[1]).abs();
        let dv = (d[0] * v[0] + d[1] * v[1]).abs();
        du <= self.half_extents[0] && dv <= self.half_extents[1]
    }

    /// Distance from the center to the box boundary along a unit direction.
    pub fn exit_distance(&self, dir: Point<S>) -> S {
        let [u, v] = self.axes();
        let du = (dir[0] * u[0] + dir[1] * u[1]).abs();
        let dv = (dir[0] * v[0] + dir[1] * v[1]).abs();
        let tiny = S::of(1e-12);
        let tu = if du > tiny { self.half_extents[0] / du } else { S::infinity() };
        let tv = if dv > tiny { self.half_extents[1] / dv } else { S::infinity() };
        tu.min(tv)
    }
}

fn project_corners<S: Real>(corners: &[Point<S>; 4], axis: Point<S>) -> (S, S) {
    let mut lo = S::infinity();
    let mut hi = S::neg_infinity();
    for c in corners {
        let d = c[0] * axis[0] + c[1] * axis[1];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

/// Separating-axis test over the 4 candidate axes. Touching counts as
/// intersecting.
pub fn obb_intersects<S: Real>(a: &OrientedBox<S>, b: &OrientedBox<S>) -> bool {
    obb_separation_margin(a, b) <= S::zero()
}

/// Largest separation (positive) or smallest overlap (negative) over the four
/// SAT axes. The boxes intersect iff the margin is ≤ 0; magnitudes near zero
/// mean near-tangency.
pub fn obb_separation_margin<S: Real>(a: &OrientedBox<S>, b: &OrientedBox<S>) -> S {
    let ca = a.corners();
    let cb = b.corners();
    let mut margin = S::neg_infinity();
    for axis in a.axes().into_iter().chain(b.axes()) {
        let (lo_a, hi_a) = project_corners(&ca, axis);
        let (lo_b, hi_b) = project_corners(&cb, axis);
        let sep = (lo_b - hi_a).max(lo_a - hi_b);
        margin = margin.max(sep);
    }
    margin
}

/// Nearest positive hit distance of a ray against a box, if any.
///
/// The ray origin may be inside the box, in which case the exit point counts
/// as the hit at its (positive) distance.
pub fn ray_box_intersect<S: Real>(
    origin: Point<S>,
    dir: Point<S>,
    bbox: &OrientedBox<S>,
) -> Option<S> {
    // slab test in the box frame
    let [u, v] = bbox.axes();
    let rel = [origin[0] - bbox.center[0], origin[1] - bbox.center[1]];
    let o = [rel[0] * u[0] + rel[1] * u[1], rel[0] * v[0] + rel[1] * v[1]];
    let d = [dir[0] * u[0] + dir[1] * u[1], dir[0] * v[0] + dir[1] * v[1]];
    let mut t_min = S::neg_infinity();
    let mut t_max = S::infinity();
    let tiny = S::of(1e-12);
    for k in 0..2 {
        if d[k].abs() < tiny {
            if o[k].abs() > bbox.half_extents[k] {
                return None;
            }
        } else {
            let t1 = (-bbox.half_extents[k] - o[k]) / d[k];
            let t2 = (bbox.half_extents[k] - o[k]) / d[k];
            t_min = t_min.max(t1.min(t2));
            t_max = t_max.min(t1.max(t2));
        }
    }
    if t_max < t_min || t_max < S::zero() {
        return None;
    }
    Some(if t_min >= S::zero() { t_min } else { t_max })
}

/// Nearest positive hit distance of a ray against a segment, if any.
pub fn ray_segment_intersect<S: Real>(
    origin: Point<S>,
    dir: Point<S>,
    a: Point<S>,
    b: Point<S>,
) -> Option<S> {
    let seg = [b[0] - a[0], b[1] - a[1]];
    let denom = dir[0] * seg[1] - dir[1] * seg[0];
    let tiny = S::of(1e-12);
    if denom.abs() < tiny {
        return None; // parallel; grazing hits are not needed by callers
    }
    let rel = [a[0] - origin[0], a[1] - origin[1]];
    let t = (rel[0] * seg[1] - rel[1] * seg[0]) / denom;
    let u = (rel[0] * dir[1] - rel[1] * dir[0]) / denom;
    if t >= S::zero() && (S::zero()..=S::one()).contains(&u) {
        Some(t)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[[f64; 2]]) -> Polyline<f64> {
        Polyline::new(points.to_vec()).unwrap()
    }

    #[test]
    fn polyline_rejects_degenerate_input() {
        assert_eq!(
            Polyline::<f64>::new(vec![[0.0, 0.0]]),
            Err(GeometryError::TooFewPoints(1))
        );
        assert_eq!(
            Polyline::new(vec![[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]),
            Err(GeometryError::ZeroLengthSegment(0))
        );
    }

    #[test]
    fn projection_at_endpoint() {
        let l = line(&[[0.0, 0.0], [10.0, 0.0]]);
        let p = project_onto_polyline([0.0, 0.0], &l);
        assert_eq!(p.arclength, 0.0);
        assert_eq!(p.lateral_offset, 0.0);
        assert_eq!(p.segment_index, 0);
    }

    #[test]
    fn projection_axis_aligned() {
        let l = line(&[[0.0, 0.0], [10.0, 0.0]]);
        let p = project_onto_polyline([5.0, 2.0], &l);
        assert!((p.arclength - 5.0).abs() < 1e-12);
        assert!((p.lateral_offset - 2.0).abs() < 1e-12);
    }

    #[test]
    fn projection_sign_is_left_positive() {
        let l = line(&[[0.0, 0.0], [0.0, 10.0]]); // traveling +y; left is -x
        let p = project_onto_polyline([-1.0, 5.0], &l);
        assert!((p.lateral_offset - 1.0).abs() < 1e-12);
        let p = project_onto_polyline([1.0, 5.0], &l);
        assert!((p.lateral_offset + 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_tie_prefers_lower_segment() {
        // corner at (1,0); point equidistant from both segments projects to the
        // shared vertex of segments 0 and 1
        let l = line(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]);
        let p = project_onto_polyline([2.0, -1.0], &l);
        assert_eq!(p.segment_index, 0);
        assert!((p.arclength - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_clamps_to_ends() {
        let l = line(&[[0.0, 0.0], [10.0, 0.0]]);
        let p = project_onto_polyline([20.0, 3.0], &l);
        assert!((p.arclength - 10.0).abs() < 1e-12);
        let p = project_onto_polyline([-5.0, 3.0], &l);
        assert_eq!(p.arclength, 0.0);
    }

    #[test]
    fn obb_identity_intersects() {
        let a = OrientedBox::new([0.0, 0.0], [1.0, 0.5], 0.3).unwrap();
        assert!(obb_intersects(&a, &a));
    }

    #[test]
    fn obb_disjoint() {
        let a = OrientedBox::new([0.0, 0.0], [0.5, 0.5], 0.0).unwrap();
        let b = OrientedBox::new([100.0, 0.0], [0.5, 0.5], 0.0).unwrap();
        assert!(!obb_intersects(&a, &b));
    }

    #[test]
    fn obb_touching_counts_as_intersecting() {
        let a = OrientedBox::new([0.0, 0.0], [1.0, 1.0], 0.0).unwrap();
        let b = OrientedBox::new([2.0, 0.0], [1.0, 1.0], 0.0).unwrap();
        assert!(obb_intersects(&a, &b));
    }

    #[test]
    fn obb_rejects_bad_extents() {
        assert!(OrientedBox::new([0.0, 0.0], [0.0, 1.0], 0.0).is_err());
        assert!(OrientedBox::new([0.0, 0.0], [1.0, -1.0], 0.0).is_err());
    }

    #[test]
    fn to_frame_identity() {
        let pts = vec![[1.0, 2.0], [-3.0, 0.5]];
        let out = to_frame(&pts, &Pose2D::identity());
        assert_eq!(out, pts);
    }

    #[test]
    fn to_frame_quarter_turn() {
        let frame = Pose2D::new(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let out = to_frame(&[[1.0, 0.0]], &frame);
        assert!((out[0][0] - 0.0).abs() < 1e-12);
        assert!((out[0][1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn exit_distance_axis_aligned() {
        let b = OrientedBox::new([0.0f64, 0.0], [2.0, 1.0], 0.0).unwrap();
        assert!((b.exit_distance([1.0, 0.0]) - 2.0).abs() < 1e-12);
        assert!((b.exit_distance([0.0, 1.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ray_box_hit_front_face() {
        let b = OrientedBox::new([5.0f64, 0.0], [1.0, 1.0], 0.0).unwrap();
        let t = ray_box_intersect([0.0, 0.0], [1.0, 0.0], &b).unwrap();
        assert!((t - 4.0).abs() < 1e-12);
        assert!(ray_box_intersect([0.0, 0.0], [-1.0, 0.0], &b).is_none());
    }

    #[test]
    fn ray_segment_basic() {
        let t =
            ray_segment_intersect([0.0f64, 0.0], [1.0, 0.0], [3.0, -1.0], [3.0, 1.0]).unwrap();
        assert!((t - 3.0).abs() < 1e-12);
        assert!(ray_segment_intersect([0.0f64, 0.0], [1.0, 0.0], [3.0, 1.0], [3.0, 2.0])
            .is_none());
    }

    #[test]
    fn polyline_point_and_heading_lookup() {
        let l = line(&[[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]]);
        assert_eq!(l.point_at(5.0), [5.0, 0.0]);
        let p = l.point_at(15.0);
        assert!((p[0] - 10.0).abs() < 1e-12 && (p[1] - 5.0).abs() < 1e-12);
        assert!((l.heading_at(5.0) - 0.0).abs() < 1e-12);
        assert!((l.heading_at(15.0) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn geometry_works_at_f32() {
        let l = Polyline::<f32>::new(vec![[0.0, 0.0], [10.0, 0.0]]).unwrap();
        let p = project_onto_polyline([5.0f32, 2.0], &l);
        assert!((p.arclength - 5.0).abs() < 1e-5);
    }
}
