//! Tunnel geometry for steering tasks and the steering integral `∫ ds/W(s)`.
//!
//! A path starts at the origin heading along +x and is built from straight
//! runs and circular arcs (positive angle turns left). The tunnel width is a
//! piecewise-linear function of normalized arc length; two knots may share
//! the same `s` to express a step in width.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{domain, ModelError};

/// Relative tolerance between successive trapezoid estimates.
pub const QUADRATURE_REL_TOL: f64 = 1e-9;
/// Upper bound on the number of trapezoid intervals per piece (2^20).
pub const QUADRATURE_MAX_INTERVALS: usize = 1 << 20;
const QUADRATURE_MIN_INTERVALS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Segment {
    Straight {
        length: f64,
    },
    /// Circular arc of the given radius; `angle` in radians, positive = left.
    Arc {
        radius: f64,
        angle: f64,
    },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Straight { length } => length,
            Segment::Arc { radius, angle } => radius * angle.abs(),
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        match *self {
            Segment::Straight { length } => {
                if !length.is_finite() || length <= 0.0 {
                    return Err(domain(format!("straight length must be > 0, got {length}")));
                }
            }
            Segment::Arc { radius, angle } => {
                if !radius.is_finite() || radius <= 0.0 {
                    return Err(domain(format!("arc radius must be > 0, got {radius}")));
                }
                if !angle.is_finite() || angle == 0.0 {
                    return Err(domain("arc angle must be finite and non-zero"));
                }
            }
        }
        Ok(())
    }
}

/// Piecewise-linear width over normalized arc length, as `(s, width)` knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WidthProfile {
    pub knots: Vec<(f64, f64)>,
}

impl WidthProfile {
    pub fn constant(width: f64) -> Self {
        Self {
            knots: vec![(0.0, width), (1.0, width)],
        }
    }

    pub fn linear(start: f64, end: f64) -> Self {
        Self {
            knots: vec![(0.0, start), (1.0, end)],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let knots = &self.knots;
        if knots.len() < 2 {
            return Err(domain("width profile needs at least two knots"));
        }
        if knots[0].0 != 0.0 || knots[knots.len() - 1].0 != 1.0 {
            return Err(domain("width profile must start at s = 0 and end at s = 1"));
        }
        for &(s, w) in knots {
            if !s.is_finite() || !w.is_finite() {
                return Err(domain("width profile values must be finite"));
            }
            if w <= 0.0 {
                return Err(domain(format!(
                    "width must be > 0 everywhere, got {w} at s = {s}"
                )));
            }
        }
        if knots.windows(2).any(|k| k[1].0 < k[0].0) {
            return Err(domain("width profile knots must be sorted by s"));
        }
        Ok(())
    }

    /// Width at normalized arc length `s` (right-continuous at steps).
    pub fn at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        let mut chosen = None;
        for (i, k) in self.knots.windows(2).enumerate() {
            if k[1].0 > k[0].0 && k[0].0 <= s {
                chosen = Some(i);
                if s < k[1].0 {
                    break;
                }
            }
        }
        match chosen {
            Some(i) => {
                let (s0, w0) = self.knots[i];
                let (s1, w1) = self.knots[i + 1];
                if s >= s1 {
                    w1
                } else if s == s0 {
                    w0
                } else {
                    w0 + (w1 - w0) * (s - s0) / (s1 - s0)
                }
            }
            None => self.knots[0].1,
        }
    }

    /// Non-degenerate linear pieces `((s0, w0), (s1, w1))`.
    fn pieces(&self) -> impl Iterator<Item = ((f64, f64), (f64, f64))> + '_ {
        self.knots
            .windows(2)
            .filter(|k| k[1].0 > k[0].0)
            .map(|k| (k[0], k[1]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub segments: Vec<Segment>,
    pub width_profile: WidthProfile,
}

/// Nearest point on the centerline for a query position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the nearest centerline point.
    pub arc_length: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy)]
struct Pose {
    x: f64,
    y: f64,
    heading: f64,
}

impl PathSpec {
    /// Straight tunnel of constant width.
    pub fn straight_tunnel(length: f64, width: f64) -> Self {
        Self {
            segments: vec![Segment::Straight { length }],
            width_profile: WidthProfile::constant(width),
        }
    }

    /// Closed circular tunnel of constant width (one full left turn).
    pub fn circular_tunnel(radius: f64, width: f64) -> Self {
        Self {
            segments: vec![Segment::Arc { radius, angle: TAU }],
            width_profile: WidthProfile::constant(width),
        }
    }

    /// Straight tunnel whose width changes linearly from `start` to `end`.
    pub fn tapered_tunnel(length: f64, start: f64, end: f64) -> Self {
        Self {
            segments: vec![Segment::Straight { length }],
            width_profile: WidthProfile::linear(start, end),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.segments.is_empty() {
            return Err(domain("path has no segments"));
        }
        for seg in &self.segments {
            seg.validate()?;
        }
        let length = self.total_length();
        if length.is_nan() || length <= 0.0 {
            return Err(domain("path length must be > 0"));
        }
        self.width_profile.validate()
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(Segment::length).sum()
    }

    /// Width at an absolute arc length.
    pub fn width_at(&self, arc_length: f64) -> f64 {
        self.width_profile.at(arc_length / self.total_length())
    }

    /// Concatenates two paths; the second starts where the first ends and the
    /// width profiles are rescaled by their share of the total length.
    pub fn concat(&self, other: &PathSpec) -> PathSpec {
        let l1 = self.total_length();
        let l2 = other.total_length();
        let total = l1 + l2;
        let split = l1 / total;
        let mut knots: Vec<(f64, f64)> = self
            .width_profile
            .knots
            .iter()
            .map(|&(s, w)| (s * split, w))
            .collect();
        knots.extend(
            other
                .width_profile
                .knots
                .iter()
                .map(|&(s, w)| ((split + s * (l2 / total)).min(1.0), w)),
        );
        if let Some(last) = knots.last_mut() {
            last.0 = 1.0;
        }
        let mut segments = self.segments.clone();
        segments.extend_from_slice(&other.segments);
        PathSpec {
            segments,
            width_profile: WidthProfile { knots },
        }
    }

    fn segment_starts(&self) -> Vec<(Pose, f64)> {
        let mut pose = Pose {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
        };
        let mut offset = 0.0;
        let mut out = Vec::with_capacity(self.segments.len());
        for seg in &self.segments {
            out.push((pose, offset));
            pose = advance(pose, seg, seg.length());
            offset += seg.length();
        }
        out
    }

    /// Centerline position at an absolute arc length (clamped to the path).
    pub fn point_at(&self, arc_length: f64) -> [f64; 2] {
        let starts = self.segment_starts();
        let total = self.total_length();
        let d = arc_length.clamp(0.0, total);
        for (seg, (pose, offset)) in self.segments.iter().zip(&starts).rev() {
            if d >= *offset {
                let p = advance(*pose, seg, (d - offset).min(seg.length()));
                return [p.x, p.y];
            }
        }
        [0.0, 0.0]
    }

    /// All locally nearest centerline points, one or more per segment.
    ///
    /// Closed paths have several candidates near the start/end point; callers
    /// pick among them using their own progress along the path.
    pub fn projection_candidates(&self, q: [f64; 2]) -> Vec<Projection> {
        let mut out = Vec::new();
        for (seg, (pose, offset)) in self.segments.iter().zip(self.segment_starts()) {
            match *seg {
                Segment::Straight { length } => {
                    let (dx, dy) = (pose.heading.cos(), pose.heading.sin());
                    let along = ((q[0] - pose.x) * dx + (q[1] - pose.y) * dy).clamp(0.0, length);
                    let px = pose.x + along * dx;
                    let py = pose.y + along * dy;
                    out.push(Projection {
                        arc_length: offset + along,
                        distance: (q[0] - px).hypot(q[1] - py),
                    });
                }
                Segment::Arc { radius, angle } => {
                    let turn = angle.signum();
                    let (cx, cy) = arc_center(pose, radius, turn);
                    let start_dir = (pose.y - cy).atan2(pose.x - cx);
                    let q_dir = (q[1] - cy).atan2(q[0] - cx);
                    let swept = (turn * (q_dir - start_dir)).rem_euclid(TAU);
                    let sweep = angle.abs();
                    let mut alphas = vec![0.0, sweep];
                    let mut a = swept;
                    while a <= sweep {
                        alphas.push(a);
                        a += TAU;
                    }
                    for alpha in alphas {
                        let p = advance(pose, seg, alpha * radius);
                        out.push(Projection {
                            arc_length: offset + alpha * radius,
                            distance: (q[0] - p.x).hypot(q[1] - p.y),
                        });
                    }
                }
            }
        }
        out
    }

    /// Arc length `d` at which `∫_0^d ds/W(s)` reaches `integral`.
    ///
    /// Uses the closed-form inverse of each linear width piece.
    pub fn arc_length_for_integral(&self, integral: f64) -> f64 {
        let total = self.total_length();
        let mut acc = 0.0;
        for ((s0, w0), (s1, w1)) in self.width_profile.pieces() {
            let len = total * (s1 - s0);
            let piece = piece_integral_exact(len, w0, w1);
            if integral <= acc + piece {
                let rem = integral - acc;
                let local = if w0 == w1 {
                    rem * w0
                } else {
                    // W(u) = w0 + k·u, ∫ du/W = ln(W(u)/w0)/k
                    let k = (w1 - w0) / len;
                    w0 * ((k * rem).exp() - 1.0) / k
                };
                return (total * s0 + local.clamp(0.0, len)).min(total);
            }
            acc += piece;
        }
        total
    }
}

fn arc_center(pose: Pose, radius: f64, turn: f64) -> (f64, f64) {
    (
        pose.x - turn * radius * pose.heading.sin(),
        pose.y + turn * radius * pose.heading.cos(),
    )
}

fn advance(pose: Pose, seg: &Segment, distance: f64) -> Pose {
    match *seg {
        Segment::Straight { .. } => Pose {
            x: pose.x + distance * pose.heading.cos(),
            y: pose.y + distance * pose.heading.sin(),
            heading: pose.heading,
        },
        Segment::Arc { radius, angle } => {
            let turn = angle.signum();
            let (cx, cy) = arc_center(pose, radius, turn);
            let start_dir = (pose.y - cy).atan2(pose.x - cx);
            let dir = start_dir + turn * distance / radius;
            Pose {
                x: cx + radius * dir.cos(),
                y: cy + radius * dir.sin(),
                heading: pose.heading + turn * distance / radius,
            }
        }
    }
}

/// `∫_0^len du / W(u)` for W linear from `w0` to `w1`.
fn piece_integral_exact(len: f64, w0: f64, w1: f64) -> f64 {
    if w0 == w1 {
        len / w0
    } else {
        len * (w1 / w0).ln() / (w1 - w0)
    }
}

/// Composite trapezoid rule with interval halving until successive estimates
/// differ by less than [`QUADRATURE_REL_TOL`] (relative), capped at
/// [`QUADRATURE_MAX_INTERVALS`].
pub fn integrate_trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    let mut intervals = 1usize;
    let mut estimate = 0.5 * width * (f(lo) + f(hi));
    loop {
        let h = width / (2 * intervals) as f64;
        let mid_sum: f64 = (0..intervals).map(|i| f(lo + (2 * i + 1) as f64 * h)).sum();
        let refined = 0.5 * estimate + h * mid_sum;
        intervals *= 2;
        let converged = (refined - estimate).abs() < QUADRATURE_REL_TOL * refined.abs();
        estimate = refined;
        if (converged && intervals >= QUADRATURE_MIN_INTERVALS)
            || intervals >= QUADRATURE_MAX_INTERVALS
        {
            return estimate;
        }
    }
}

/// Steering difficulty `∫_C ds/W(s)`.
///
/// Constant-width pieces use the exact `length/W`; varying pieces are
/// integrated numerically with [`integrate_trapezoid`].
pub fn steering_difficulty(path: &PathSpec) -> Result<f64, ModelError> {
    path.validate()?;
    let total = path.total_length();
    Ok(path
        .width_profile
        .pieces()
        .map(|((s0, w0), (s1, w1))| {
            let len = total * (s1 - s0);
            if w0 == w1 {
                len / w0
            } else {
                len * integrate_trapezoid(|u| 1.0 / (w0 + (w1 - w0) * u), 0.0, 1.0)
            }
        })
        .sum())
}

/// Steering integral by quadrature on every piece, with no closed forms.
pub fn steering_integral_quadrature(path: &PathSpec) -> Result<f64, ModelError> {
    path.validate()?;
    let total = path.total_length();
    Ok(path
        .width_profile
        .pieces()
        .map(|((s0, w0), (s1, w1))| {
            let len = total * (s1 - s0);
            len * integrate_trapezoid(|u| 1.0 / (w0 + (w1 - w0) * u), 0.0, 1.0)
        })
        .sum())
}

/// Steering integral from the per-piece closed form `L·ln(W1/W0)/(W1−W0)`.
pub fn steering_integral_exact(path: &PathSpec) -> Result<f64, ModelError> {
    path.validate()?;
    let total = path.total_length();
    Ok(path
        .width_profile
        .pieces()
        .map(|((s0, w0), (s1, w1))| piece_integral_exact(total * (s1 - s0), w0, w1))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn straight_constant_is_length_over_width() {
        assert_eq!(
            steering_difficulty(&PathSpec::straight_tunnel(200.0, 10.0)).unwrap(),
            20.0
        );
    }

    #[test]
    fn full_circle() {
        let d = steering_difficulty(&PathSpec::circular_tunnel(50.0, 5.0)).unwrap();
        assert!(rel(d, TAU * 50.0 / 5.0) < 1e-12);
        assert!((d - 62.83185307179586).abs() < 1e-9);
    }

    #[test]
    fn tapered_matches_closed_form() {
        let path = PathSpec::tapered_tunnel(100.0, 10.0, 20.0);
        let closed = 100.0 / 10.0 * 2f64.ln();
        assert!(rel(steering_difficulty(&path).unwrap(), closed) < 1e-6);
        assert!(rel(steering_integral_exact(&path).unwrap(), closed) < 1e-12);
    }

    #[test]
    fn quadrature_agrees_with_closed_forms() {
        for path in [
            PathSpec::straight_tunnel(200.0, 10.0),
            PathSpec::circular_tunnel(50.0, 5.0),
            PathSpec::tapered_tunnel(100.0, 10.0, 20.0),
        ] {
            let q = steering_integral_quadrature(&path).unwrap();
            let e = steering_integral_exact(&path).unwrap();
            assert!(rel(q, e) < 1e-6, "{q} vs {e}");
        }
    }

    #[test]
    fn rejects_invalid_paths() {
        let mut p = PathSpec::straight_tunnel(100.0, 10.0);
        p.segments.clear();
        assert!(steering_difficulty(&p).is_err());
        let p = PathSpec::tapered_tunnel(100.0, 10.0, 0.0);
        assert!(steering_difficulty(&p).is_err());
        let p = PathSpec::tapered_tunnel(100.0, -1.0, 4.0);
        assert!(steering_difficulty(&p).is_err());
        let mut p = PathSpec::straight_tunnel(100.0, 10.0);
        p.width_profile.knots = vec![(0.0, 1.0), (0.7, 2.0), (0.5, 2.0), (1.0, 1.0)];
        assert!(steering_difficulty(&p).is_err());
        p.width_profile.knots = vec![(0.1, 1.0), (1.0, 1.0)];
        assert!(steering_difficulty(&p).is_err());
    }

    #[test]
    fn width_profile_steps_are_right_continuous() {
        let w = WidthProfile {
            knots: vec![(0.0, 4.0), (0.5, 4.0), (0.5, 8.0), (1.0, 8.0)],
        };
        assert_eq!(w.at(0.25), 4.0);
        assert_eq!(w.at(0.5), 8.0);
        assert_eq!(w.at(1.0), 8.0);
        let straight = PathSpec {
            segments: vec![Segment::Straight { length: 100.0 }],
            width_profile: w,
        };
        assert!(
            rel(
                steering_difficulty(&straight).unwrap(),
                50.0 / 4.0 + 50.0 / 8.0
            ) < 1e-12
        );
    }

    #[test]
    fn circle_geometry_closes() {
        let c = PathSpec::circular_tunnel(50.0, 5.0);
        let end = c.point_at(c.total_length());
        assert!(end[0].abs() < 1e-9 && end[1].abs() < 1e-9);
        let top = c.point_at(c.total_length() / 2.0);
        assert!((top[0]).abs() < 1e-9 && (top[1] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn projection_on_straight_and_arc() {
        let s = PathSpec::straight_tunnel(100.0, 10.0);
        let p = s.projection_candidates([40.0, 3.0]);
        assert_eq!(p.len(), 1);
        assert!((p[0].arc_length - 40.0).abs() < 1e-12);
        assert!((p[0].distance - 3.0).abs() < 1e-12);

        let c = PathSpec::circular_tunnel(50.0, 5.0);
        let best = c
            .projection_candidates([52.0, 50.0])
            .into_iter()
            .min_by(|a, b| a.distance.total_cmp(&b.distance))
            .unwrap();
        assert!((best.distance - 2.0).abs() < 1e-9);
        assert!((best.arc_length - c.total_length() / 4.0).abs() < 1e-9);
    }

    #[test]
    fn integral_inverse_roundtrips() {
        let p = PathSpec::tapered_tunnel(100.0, 10.0, 20.0);
        for d in [0.0f64, 12.5, 50.0, 99.0] {
            // W(u) = 10 + u/10, so the prefix integral is 10·ln(W(d)/10).
            let j = 10.0 * ((10.0 + d / 10.0) / 10.0).ln();
            assert!((p.arc_length_for_integral(j) - d).abs() < 1e-9);
        }
    }

    fn arb_path() -> impl Strategy<Value = PathSpec> {
        let seg = prop_oneof![
            (1.0f64..300.0).prop_map(|length| Segment::Straight { length }),
            (5.0f64..100.0, -6.0f64..6.0)
                .prop_filter("non-zero angle", |(_, a)| a.abs() > 0.05)
                .prop_map(|(radius, angle)| Segment::Arc { radius, angle }),
        ];
        (
            proptest::collection::vec(seg, 1..4),
            proptest::collection::vec((0.0f64..1.0, 1.0f64..40.0), 0..4),
            1.0f64..40.0,
            1.0f64..40.0,
        )
            .prop_map(|(segments, mut inner, w0, w1)| {
                inner.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut knots = vec![(0.0, w0)];
                knots.extend(inner);
                knots.push((1.0, w1));
                PathSpec {
                    segments,
                    width_profile: WidthProfile { knots },
                }
            })
    }

    proptest! {
        #[test]
        fn steering_is_additive_under_concat(p1 in arb_path(), p2 in arb_path()) {
            let d1 = steering_difficulty(&p1).unwrap();
            let d2 = steering_difficulty(&p2).unwrap();
            let joined = steering_difficulty(&p1.concat(&p2)).unwrap();
            prop_assert!(rel(joined, d1 + d2) < 1e-9, "{} vs {}", joined, d1 + d2);
        }

        #[test]
        fn quadrature_tracks_exact(p in arb_path()) {
            let q = steering_integral_quadrature(&p).unwrap();
            let e = steering_integral_exact(&p).unwrap();
            prop_assert!(rel(q, e) < 1e-6);
        }
    }
}
