//! Ellipse primitives for unsafe sets.
//!
//! Conics use the convention `A x² + B xy + C y² + D x + E y + F = 0`.
//! Canonical ellipses carry a center, semi-axes `a ≥ b > 0` and the
//! rotation of the major axis from +x in `(−π/2, π/2]`.

mod enclosing;

pub(crate) use enclosing::min_enclosing_canonical;
pub use enclosing::min_enclosing_ellipse;

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

/// Minor semi-axis used for single points and collinear point sets, meters.
pub const EPS_MIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("empty point set")]
    EmptyPointSet,
    #[error("non-finite point ({0}, {1})")]
    NonFinitePoint(f64, f64),
    #[error("not an ellipse")]
    NotAnEllipse,
    #[error("degenerate conic")]
    DegenerateConic,
    #[error("negative inflation margin {0}")]
    NegativeMargin(f64),
}

pub type Point = [f64; 2];

/// General conic coefficients `[A, B, C, D, E, F]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConicEllipse(pub [f64; 6]);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanonicalEllipse {
    pub center: Point,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub rotation: f64,
}

/// An inflated cluster ellipse moving at constant velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnsafeSet {
    /// Creation order within one clustering pass.
    pub index: usize,
    pub ellipse: CanonicalEllipse,
    pub velocity: [f64; 2],
    pub member_ids: Vec<u64>,
    /// Filled in by prioritization; `None` until then.
    pub priority_distance: Option<f64>,
}

/// Result of a membership test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub inside: bool,
    /// `a²b² − (b²x'² + a²y'²)` in the ellipse-aligned frame: positive inside,
    /// zero on the boundary, negative outside.
    pub margin: f64,
}

impl ConicEllipse {
    /// Builds the conic whose zero set is the boundary of `e`.
    pub fn from_canonical(e: &CanonicalEllipse) -> Self {
        let (s, c) = e.rotation.sin_cos();
        let ia = 1.0 / (e.semi_major * e.semi_major);
        let ib = 1.0 / (e.semi_minor * e.semi_minor);
        let a = c * c * ia + s * s * ib;
        let b = 2.0 * c * s * (ia - ib);
        let cc = s * s * ia + c * c * ib;
        let [x0, y0] = e.center;
        let d = -2.0 * a * x0 - b * y0;
        let ee = -b * x0 - 2.0 * cc * y0;
        let f = a * x0 * x0 + b * x0 * y0 + cc * y0 * y0 - 1.0;
        ConicEllipse([a, b, cc, d, ee, f])
    }

    pub fn discriminant(&self) -> f64 {
        let [a, b, c, ..] = self.0;
        b * b - 4.0 * a * c
    }

    pub fn evaluate(&self, p: Point) -> f64 {
        let [a, b, c, d, e, f] = self.0;
        let [x, y] = p;
        a * x * x + b * x * y + c * y * y + d * x + e * y + f
    }

    /// Coefficients scaled so that the quadratic part is positive definite
    /// and the largest coefficient magnitude is one.
    pub fn normalized(&self) -> Self {
        let scale = self.0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sign = if self.0[0] + self.0[2] < 0.0 {
            -1.0
        } else {
            1.0
        };
        if scale == 0.0 {
            return *self;
        }
        ConicEllipse(self.0.map(|v| sign * v / scale))
    }
}

/// Error-free product: `a·b = p + e` exactly.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Error-free sum: `a + b = s + e` exactly.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Conic value at `p`, accurate as if computed in twice the working
/// precision.
fn conic_at(k: &[f64; 6], p: Point) -> f64 {
    let [a, b, c, d, e, f] = *k;
    let [x, y] = p;
    let (ax, ax_lo) = two_prod(a, x);
    let (bx, bx_lo) = two_prod(b, x);
    let (cy, cy_lo) = two_prod(c, y);
    let terms = [
        (ax, x),
        (ax_lo, x),
        (bx, y),
        (bx_lo, y),
        (cy, y),
        (cy_lo, y),
        (d, x),
        (e, y),
        (f, 1.0),
    ];
    let (mut sum, mut err) = (0.0, 0.0);
    for (u, v) in terms {
        let (prod, prod_lo) = two_prod(u, v);
        let (s, s_lo) = two_sum(sum, prod);
        sum = s;
        err += prod_lo + s_lo;
    }
    sum + err
}

/// Converts general conic coefficients into center, semi-axes and rotation.
pub fn conic_to_canonical(conic: &ConicEllipse) -> Result<CanonicalEllipse, GeometryError> {
    if conic.0.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NotAnEllipse);
    }
    let disc = conic.discriminant();
    if !(disc < 0.0) {
        return Err(GeometryError::NotAnEllipse);
    }
    // Power-of-two scaling keeps the coefficients exact.
    let scale = conic.0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sign = if conic.0[0] + conic.0[2] < 0.0 {
        -1.0
    } else {
        1.0
    };
    let k = sign * 2f64.powi(-(scale.log2().round() as i32));
    let [a, b, c, d, e, f] = conic.0.map(|v| v * k);

    // Work in the eigenframe of [[A, B/2], [B/2, C]]; this keeps thin
    // ellipses far better conditioned than the closed-form center formula.
    let mean = 0.5 * (a + c);
    let root = (0.25 * (a - c) * (a - c) + 0.25 * b * b).sqrt();
    let lambda_large = mean + root;
    let lambda_small = (a * c - 0.25 * b * b) / lambda_large;
    if !(lambda_small > 0.0) {
        return Err(GeometryError::DegenerateConic);
    }
    // Direction of the major axis (eigenvector of the small eigenvalue).
    let axis = 0.5 * (-b).atan2(c - a);
    let (sn, cs) = axis.sin_cos();
    let d_major = cs * d + sn * e;
    let d_minor = -sn * d + cs * e;
    let u0 = -d_major / (2.0 * lambda_small);
    let v0 = -d_minor / (2.0 * lambda_large);
    let cx = cs * u0 - sn * v0;
    let cy = sn * u0 + cs * v0;
    // The conic is stationary at its center, so evaluating it there only
    // picks up center error at second order. The terms are large and
    // nearly cancel far from the origin, hence the compensated sum.
    let z = -conic_at(&[a, b, c, d, e, f], [cx, cy]);
    if !(z > 0.0) {
        return Err(GeometryError::DegenerateConic);
    }
    let semi_major = (z / lambda_small).sqrt();
    let semi_minor = (z / lambda_large).sqrt();

    let rotation = if (semi_major - semi_minor).abs() <= 1e-12 * semi_major {
        0.0
    } else {
        normalize_axis_angle(axis)
    };

    Ok(CanonicalEllipse {
        center: [cx, cy],
        semi_major,
        semi_minor,
        rotation,
    })
}

/// Maps an axis direction (defined modulo π) into `(−π/2, π/2]`.
pub fn normalize_axis_angle(theta: f64) -> f64 {
    let mut t = theta % PI;
    if t <= -FRAC_PI_2 {
        t += PI;
    } else if t > FRAC_PI_2 {
        t -= PI;
    }
    t
}

pub fn inflate(e: &CanonicalEllipse, margin: f64) -> Result<CanonicalEllipse, GeometryError> {
    if !(margin >= 0.0) {
        return Err(GeometryError::NegativeMargin(margin));
    }
    Ok(CanonicalEllipse {
        semi_major: e.semi_major + margin,
        semi_minor: e.semi_minor + margin,
        ..*e
    })
}

/// Position of the set after `n` steps of `tau` seconds at its velocity.
pub fn propagate(set: &UnsafeSet, n: usize, tau: f64) -> CanonicalEllipse {
    let t = tau * n as f64;
    let e = &set.ellipse;
    CanonicalEllipse {
        center: [
            e.center[0] + set.velocity[0] * t,
            e.center[1] + set.velocity[1] * t,
        ],
        ..*e
    }
}

/// Signed membership margin of `p` together with its gradient w.r.t. `p`.
pub fn membership_margin(e: &CanonicalEllipse, p: Point) -> (f64, [f64; 2]) {
    let (s, c) = e.rotation.sin_cos();
    let dx = p[0] - e.center[0];
    let dy = p[1] - e.center[1];
    let xr = c * dx + s * dy;
    let yr = -s * dx + c * dy;
    let a2 = e.semi_major * e.semi_major;
    let b2 = e.semi_minor * e.semi_minor;
    let margin = a2 * b2 - (b2 * xr * xr + a2 * yr * yr);
    let gx = -(2.0 * b2 * xr * c - 2.0 * a2 * yr * s);
    let gy = -(2.0 * b2 * xr * s + 2.0 * a2 * yr * c);
    (margin, [gx, gy])
}

/// Boundary points count as inside.
pub fn contains(e: &CanonicalEllipse, p: Point) -> Membership {
    let (margin, _) = membership_margin(e, p);
    Membership {
        inside: margin >= 0.0,
        margin,
    }
}

impl CanonicalEllipse {
    pub fn area(&self) -> f64 {
        PI * self.semi_major * self.semi_minor
    }

    pub fn circle(center: Point, radius: f64) -> Self {
        CanonicalEllipse {
            center,
            semi_major: radius,
            semi_minor: radius,
            rotation: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit_circle() -> CanonicalEllipse {
        CanonicalEllipse::circle([0.0, 0.0], 1.0)
    }

    #[test]
    fn unit_circle_conic() {
        let e = conic_to_canonical(&ConicEllipse([1.0, 0.0, 1.0, 0.0, 0.0, -1.0])).unwrap();
        assert_abs_diff_eq!(e.center[0], 0.0);
        assert_abs_diff_eq!(e.center[1], 0.0);
        assert_abs_diff_eq!(e.semi_major, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.semi_minor, 1.0, epsilon = 1e-15);
        assert_eq!(e.rotation, 0.0);
    }

    #[test]
    fn axis_aligned_conic() {
        let e = conic_to_canonical(&ConicEllipse([0.25, 0.0, 1.0, 0.0, 0.0, -1.0])).unwrap();
        assert_abs_diff_eq!(e.semi_major, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.semi_minor, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.rotation, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rotated_translated_conic() {
        // x'²/4 + y'² = 1 rotated by 30° and moved to (3, −2), expanded by hand:
        // A = c²/4 + s², B = 2cs(1/4 − 1), C = s²/4 + c².
        let (s, c) = (0.5f64, 3f64.sqrt() / 2.0);
        let a = c * c / 4.0 + s * s;
        let b = 2.0 * c * s * (0.25 - 1.0);
        let cc = s * s / 4.0 + c * c;
        let (x0, y0) = (3.0, -2.0);
        let conic = ConicEllipse([
            a,
            b,
            cc,
            -2.0 * a * x0 - b * y0,
            -b * x0 - 2.0 * cc * y0,
            a * x0 * x0 + b * x0 * y0 + cc * y0 * y0 - 1.0,
        ]);
        let e = conic_to_canonical(&conic).unwrap();
        assert_abs_diff_eq!(e.center[0], 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.center[1], -2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.semi_major, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.semi_minor, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.rotation, PI / 6.0, epsilon = 1e-9);
    }

    #[test]
    fn rejects_non_ellipses() {
        // Hyperbola x² − y² = 1.
        assert_eq!(
            conic_to_canonical(&ConicEllipse([1.0, 0.0, -1.0, 0.0, 0.0, -1.0])),
            Err(GeometryError::NotAnEllipse)
        );
        // x² + y² + 1 = 0 has no real points.
        assert_eq!(
            conic_to_canonical(&ConicEllipse([1.0, 0.0, 1.0, 0.0, 0.0, 1.0])),
            Err(GeometryError::DegenerateConic)
        );
    }

    #[test]
    fn inflate_examples() {
        let e = CanonicalEllipse {
            center: [0.0, 0.0],
            semi_major: 2.0,
            semi_minor: 1.0,
            rotation: 0.0,
        };
        let big = inflate(&e, 1.0).unwrap();
        assert_eq!((big.semi_major, big.semi_minor), (3.0, 2.0));
        assert_eq!(inflate(&e, 0.0).unwrap(), e);

        let tilted = CanonicalEllipse {
            center: [5.0, 5.0],
            semi_major: 1.5,
            semi_minor: 0.5,
            rotation: PI / 4.0,
        };
        let t = inflate(&tilted, 0.25).unwrap();
        assert_eq!((t.semi_major, t.semi_minor), (1.75, 0.75));
        assert_eq!((t.center, t.rotation), (tilted.center, tilted.rotation));
        assert!(inflate(&e, -0.1).is_err());
    }

    fn set_at(center: Point, velocity: [f64; 2]) -> UnsafeSet {
        UnsafeSet {
            index: 0,
            ellipse: CanonicalEllipse::circle(center, 1.0),
            velocity,
            member_ids: vec![1],
            priority_distance: None,
        }
    }

    #[test]
    fn propagate_examples() {
        let p = propagate(&set_at([0.0, 0.0], [1.0, 0.0]), 40, 0.1);
        assert_abs_diff_eq!(p.center[0], 4.0, epsilon = 1e-12);
        assert_eq!(p.center[1], 0.0);

        let s = set_at([2.0, 3.0], [-0.5, 0.25]);
        assert_eq!(propagate(&s, 0, 0.1).center, [2.0, 3.0]);
        let p = propagate(&s, 10, 0.1);
        assert_abs_diff_eq!(p.center[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.center[1], 3.25, epsilon = 1e-12);
        assert_eq!(p.semi_major, s.ellipse.semi_major);
    }

    #[test]
    fn contains_examples() {
        assert!(contains(&unit_circle(), [0.0, 0.0]).inside);
        assert!(contains(&unit_circle(), [0.0, 0.0]).margin > 0.0);
        let out = contains(&unit_circle(), [2.0, 0.0]);
        assert!(!out.inside);
        assert!(out.margin < 0.0);
        assert!(contains(&unit_circle(), [1.0, 0.0]).inside);
    }

    #[test]
    fn membership_gradient_matches_finite_differences() {
        let e = CanonicalEllipse {
            center: [1.0, -0.5],
            semi_major: 2.5,
            semi_minor: 1.2,
            rotation: 0.7,
        };
        let p = [0.3, 0.9];
        let (_, g) = membership_margin(&e, p);
        let h = 1e-6;
        for k in 0..2 {
            let mut hi = p;
            let mut lo = p;
            hi[k] += h;
            lo[k] -= h;
            let fd = (membership_margin(&e, hi).0 - membership_margin(&e, lo).0) / (2.0 * h);
            assert_abs_diff_eq!(g[k], fd, epsilon = 1e-6);
        }
    }

    fn canonical_strategy() -> impl Strategy<Value = CanonicalEllipse> {
        (
            -50.0..50.0f64,
            -50.0..50.0f64,
            0.05..20.0f64,
            0.05..1.0f64,
            -FRAC_PI_2 + 1e-6..FRAC_PI_2,
        )
            .prop_map(|(x, y, a, ratio, rot)| CanonicalEllipse {
                center: [x, y],
                semi_major: a,
                semi_minor: a * ratio,
                rotation: rot,
            })
    }

    fn angle_gap(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(PI);
        d.min(PI - d)
    }

    proptest! {
        #[test]
        fn canonical_round_trip(e in canonical_strategy()) {
            let back = conic_to_canonical(&ConicEllipse::from_canonical(&e)).unwrap();
            let scale = e.semi_major.max(1.0);
            prop_assert!((back.center[0] - e.center[0]).abs() < 1e-9 * scale.max(e.center[0].abs()));
            prop_assert!((back.center[1] - e.center[1]).abs() < 1e-9 * scale.max(e.center[1].abs()));
            prop_assert!((back.semi_major - e.semi_major).abs() < 1e-9 * scale);
            prop_assert!((back.semi_minor - e.semi_minor).abs() < 1e-9 * scale);
            if e.semi_major - e.semi_minor > 1e-6 * e.semi_major {
                prop_assert!(angle_gap(back.rotation, e.rotation) < 1e-6);
            }
        }

        #[test]
        fn rescale_invariance(e in canonical_strategy(), k in prop_oneof![-1e3..-1e-3f64, 1e-3..1e3f64]) {
            let conic = ConicEllipse::from_canonical(&e);
            let scaled = ConicEllipse(conic.0.map(|v| v * k));
            let a = conic_to_canonical(&conic).unwrap();
            let b = conic_to_canonical(&scaled).unwrap();
            // Round-off in the conic form grows with (offset / minor axis)².
            let r = e.center[0].abs().max(e.center[1].abs()) / e.semi_minor;
            let tol = 1e-13 * (1.0 + r * r);
            prop_assert!((a.semi_major - b.semi_major).abs() <= tol * a.semi_major);
            prop_assert!((a.semi_minor - b.semi_minor).abs() <= tol * a.semi_major);
            prop_assert!(angle_gap(a.rotation, b.rotation) <= tol.max(1e-12));
        }

        #[test]
        fn inflation_is_monotone(e in canonical_strategy(), s in 0.0..5.0f64, px in -60.0..60.0f64, py in -60.0..60.0f64) {
            if contains(&e, [px, py]).inside {
                prop_assert!(contains(&inflate(&e, s).unwrap(), [px, py]).inside);
            }
        }

        #[test]
        fn membership_agrees_with_conic_sign(e in canonical_strategy(), px in -80.0..80.0f64, py in -80.0..80.0f64) {
            let conic = ConicEllipse::from_canonical(&e).normalized();
            let residual = conic.evaluate([px, py]);
            prop_assume!(residual.abs() > 1e-9);
            prop_assert_eq!(contains(&e, [px, py]).inside, residual < 0.0);
        }
    }
}
