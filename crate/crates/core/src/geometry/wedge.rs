//! Horizontal visibility wedges attached to map points.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use std::f64::consts::TAU;

use super::{wrap_angle, GeometryError};

/// Angular slack for arc-boundary membership.
const ARC_EPS: f64 = 1e-9;

/// Wedge-shaped visibility volume of a map point: a horizontal arc from
/// `gamma_a` counter-clockwise to `gamma_b`, out to `range` meters, with
/// detection probability `detection_prob` inside.
///
/// Boundaries are closed. The arc span is fixed at construction, so a
/// wedge built with `gamma_b − gamma_a = 2π` stays a full circle while
/// `gamma_a == gamma_b` is a zero-measure arc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityWedge {
    gamma_a: f64,
    gamma_b: f64,
    span: f64,
    range: f64,
    detection_prob: f64,
}

impl VisibilityWedge {
    pub fn new(gamma_a: f64, gamma_b: f64, range: f64, detection_prob: f64) -> Result<Self, GeometryError> {
        if !(gamma_a.is_finite() && gamma_b.is_finite() && range.is_finite()) {
            return Err(GeometryError::NonFinite("wedge"));
        }
        if range <= 0.0 {
            return Err(GeometryError::NonPositiveRange(range));
        }
        if !(0.0..=1.0).contains(&detection_prob) {
            return Err(GeometryError::BadDetectionProbability(detection_prob));
        }
        let span = if gamma_a == gamma_b {
            0.0
        } else {
            let s = (gamma_b - gamma_a).rem_euclid(TAU);
            if s == 0.0 {
                TAU
            } else {
                s
            }
        };
        Ok(VisibilityWedge {
            gamma_a: wrap_angle(gamma_a),
            gamma_b: wrap_angle(gamma_b),
            span,
            range,
            detection_prob,
        })
    }

    pub fn full_circle(range: f64, detection_prob: f64) -> Result<Self, GeometryError> {
        Self::new(-std::f64::consts::PI, std::f64::consts::PI, range, detection_prob)
    }

    /// Build from the start angle and an explicit arc span in [0, 2π].
    /// Unlike [`Self::new`] this keeps spans of exactly 2π intact
    /// regardless of rounding in `gamma_a + span`.
    pub fn with_span(gamma_a: f64, span: f64, range: f64, detection_prob: f64) -> Result<Self, GeometryError> {
        let mut w = Self::new(gamma_a, gamma_a + span, range, detection_prob)?;
        w.span = span.clamp(0.0, TAU);
        Ok(w)
    }

    pub fn gamma_a(&self) -> f64 {
        self.gamma_a
    }

    pub fn gamma_b(&self) -> f64 {
        self.gamma_b
    }

    /// Counter-clockwise arc length from `gamma_a` to `gamma_b`, in [0, 2π].
    pub fn span(&self) -> f64 {
        self.span
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn detection_prob(&self) -> f64 {
        self.detection_prob
    }
}

/// True iff the observer lies inside the wedge anchored at `point`: the
/// horizontal bearing from point to observer falls on the arc and the
/// horizontal range is at most `wedge.range()`.
///
/// An observer exactly at the point is inside by definition.
pub fn in_wedge(observer: &Vector3<f64>, point: &Vector3<f64>, wedge: &VisibilityWedge) -> bool {
    let dx = observer.x - point.x;
    let dy = observer.y - point.y;
    let dist = (dx * dx + dy * dy).sqrt();
    if dist > wedge.range {
        return false;
    }
    if dist == 0.0 {
        return true;
    }
    let bearing = dy.atan2(dx);
    let rel = (bearing - wedge.gamma_a).rem_euclid(TAU);
    rel <= wedge.span + ARC_EPS || rel >= TAU - ARC_EPS
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn v(x: f64, y: f64) -> Vector3<f64> {
        Vector3::new(x, y, 0.0)
    }

    #[test]
    fn full_circle_contains_everything_in_range() {
        let w = VisibilityWedge::new(-PI, PI, 50.0, 1.0).unwrap();
        assert!(in_wedge(&v(10.0, 0.0), &v(0.0, 0.0), &w));
        assert!(in_wedge(&v(-3.0, 7.0), &v(0.0, 0.0), &w));
        assert!(!in_wedge(&v(60.0, 0.0), &v(0.0, 0.0), &w));
    }

    #[test]
    fn narrow_arc_excludes_perpendicular_bearing() {
        let w = VisibilityWedge::new(-0.1, 0.1, 50.0, 1.0).unwrap();
        // Observer at bearing π/2 from the point, range 10.
        assert!(!in_wedge(&v(0.0, 10.0), &v(0.0, 0.0), &w));
        assert!(in_wedge(&v(10.0, 0.0), &v(0.0, 0.0), &w));
    }

    #[test]
    fn boundary_is_closed() {
        let w = VisibilityWedge::new(-0.5, 0.5, 10.0, 1.0).unwrap();
        assert!(in_wedge(&v(10.0, 0.0), &v(0.0, 0.0), &w));
        let b = 0.5f64;
        assert!(in_wedge(&v(5.0 * b.cos(), 5.0 * b.sin()), &v(0.0, 0.0), &w));
    }

    #[test]
    fn zero_measure_arc_only_exact_bearing() {
        let w = VisibilityWedge::new(0.3, 0.3, 10.0, 1.0).unwrap();
        assert_eq!(w.span(), 0.0);
        assert!(in_wedge(&v(5.0 * 0.3f64.cos(), 5.0 * 0.3f64.sin()), &v(0.0, 0.0), &w));
        assert!(!in_wedge(&v(5.0 * 0.4f64.cos(), 5.0 * 0.4f64.sin()), &v(0.0, 0.0), &w));
    }

    #[test]
    fn observer_at_point_is_inside() {
        let w = VisibilityWedge::new(0.0, 0.1, 10.0, 1.0).unwrap();
        assert!(in_wedge(&v(0.0, 0.0), &v(0.0, 0.0), &w));
    }

    #[test]
    fn constructor_validates() {
        assert!(VisibilityWedge::new(0.0, 1.0, 0.0, 1.0).is_err());
        assert!(VisibilityWedge::new(0.0, 1.0, -3.0, 1.0).is_err());
        assert!(VisibilityWedge::new(0.0, 1.0, 5.0, 1.5).is_err());
        let w = VisibilityWedge::new(3.0 * PI / 2.0, 0.0, 5.0, 1.0).unwrap();
        assert!((w.gamma_a() - (-PI / 2.0)).abs() < 1e-12);
    }

    /// Brute-force arc membership: rotate the arc so it starts at zero.
    fn oracle_in_wedge(observer: &Vector3<f64>, point: &Vector3<f64>, gamma_a: f64, span: f64, range: f64) -> bool {
        let dx = observer.x - point.x;
        let dy = observer.y - point.y;
        if (dx * dx + dy * dy).sqrt() > range {
            return false;
        }
        if dx == 0.0 && dy == 0.0 {
            return true;
        }
        let mut rel = dy.atan2(dx) - gamma_a;
        while rel < 0.0 {
            rel += TAU;
        }
        while rel >= TAU {
            rel -= TAU;
        }
        rel <= span + ARC_EPS || rel >= TAU - ARC_EPS
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn agrees_with_arc_oracle(
            ga in -7.0..7.0f64, span_frac in 0.0..1.0f64,
            r in 0.1..100.0f64,
            ox in -120.0..120.0f64, oy in -120.0..120.0f64,
            px in -20.0..20.0f64, py in -20.0..20.0f64,
        ) {
            let gb = ga + span_frac * TAU;
            let w = VisibilityWedge::new(ga, gb, r, 0.9).unwrap();
            let obs = v(ox, oy);
            let pt = v(px, py);
            prop_assert_eq!(
                in_wedge(&obs, &pt, &w),
                oracle_in_wedge(&obs, &pt, ga, w.span(), r)
            );
        }

        #[test]
        fn invariant_under_rigid_motion(
            ga in -3.0..3.0f64, span in 0.0..6.28f64, r in 1.0..50.0f64,
            ox in -40.0..40.0f64, oy in -40.0..40.0f64,
            px in -10.0..10.0f64, py in -10.0..10.0f64,
            tx in -100.0..100.0f64, ty in -100.0..100.0f64, rot in -3.0..3.0f64,
        ) {
            let w = VisibilityWedge::new(ga, ga + span, r, 0.9).unwrap();
            let before = in_wedge(&v(ox, oy), &v(px, py), &w);
            let (s, c) = rot.sin_cos();
            let m = |x: f64, y: f64| v(c * x - s * y + tx, s * x + c * y + ty);
            let w2 = VisibilityWedge::new(ga + rot, ga + span + rot, r, 0.9).unwrap();
            let after = in_wedge(&m(ox, oy), &m(px, py), &w2);
            prop_assert_eq!(before, after);
        }
    }
}
