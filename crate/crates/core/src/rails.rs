//! Rail geometry: each control mass rides a 1-d curve fixed in the body
//! frame (translated to the geometric center), evaluated together with its
//! first three derivatives.

use crate::geometry::{GeometryError, Vec3};
use crate::real::{Dual, Dual64, Real};

/// Position and first three derivatives of a rail at one parameter value.
#[derive(Clone, Copy, Debug)]
pub struct RailPoint<T> {
    pub pos: Vec3<T>,
    pub d1: Vec3<T>,
    pub d2: Vec3<T>,
    pub d3: Vec3<T>,
}

impl<T: Real> RailPoint<T> {
    pub fn zeros() -> Self {
        RailPoint {
            pos: Vec3::zeros(),
            d1: Vec3::zeros(),
            d2: Vec3::zeros(),
            d3: Vec3::zeros(),
        }
    }
}

/// A rail curve. The closed set of shapes covers everything the shipped
/// experiments need; the constant rail doubles as the static-structure
/// "rail 0".
#[derive(Clone, Debug, PartialEq)]
pub enum RailCurve {
    /// Fixed point (zero derivatives).
    Constant(Vec3<f64>),
    /// Circle `center + radius (cos(theta) u + sin(theta) v)`.
    Circle {
        radius: f64,
        center: Vec3<f64>,
        u: Vec3<f64>,
        v: Vec3<f64>,
    },
    /// Test fixture: a circle reporting a corrupted second derivative.
    #[cfg(test)]
    BrokenCircle { radius: f64 },
}

impl RailCurve {
    pub fn eval<T: Real>(&self, theta: T) -> RailPoint<T> {
        match self {
            RailCurve::Constant(p) => RailPoint {
                pos: Vec3::from_f64(*p),
                d1: Vec3::zeros(),
                d2: Vec3::zeros(),
                d3: Vec3::zeros(),
            },
            RailCurve::Circle {
                radius,
                center,
                u,
                v,
            } => {
                let (c, s) = (theta.cos(), theta.sin());
                let u = Vec3::from_f64(*u);
                let v = Vec3::from_f64(*v);
                let center = Vec3::from_f64(*center);
                let r = T::from_f64(*radius);
                let radial = u.scale(c).add(v.scale(s)).scale(r);
                let tangent = v.scale(c).sub(u.scale(s)).scale(r);
                RailPoint {
                    pos: center.add(radial),
                    d1: tangent,
                    d2: radial.neg(),
                    d3: tangent.neg(),
                }
            }
            #[cfg(test)]
            RailCurve::BrokenCircle { radius } => {
                let circle = RailCurve::Circle {
                    radius: *radius,
                    center: Vec3::zeros(),
                    u: Vec3::new(1.0, 0.0, 0.0),
                    v: Vec3::new(0.0, 0.0, 1.0),
                };
                let mut p = circle.eval(theta);
                p.d2 = p.d2.scale(T::from_f64(1.5));
                p
            }
        }
    }
}

/// Circle rail with orthonormality check on the in-plane axes.
pub fn circular_rail(
    radius: f64,
    center: Vec3<f64>,
    u: Vec3<f64>,
    v: Vec3<f64>,
) -> Result<RailCurve, GeometryError> {
    let nu = u.norm();
    let nv = v.norm();
    let dot = u.dot(v);
    if (nu - 1.0).abs() > 1e-10 || (nv - 1.0).abs() > 1e-10 || dot.abs() > 1e-10 {
        return Err(GeometryError::NotOrthonormal { nu, nv, dot });
    }
    Ok(RailCurve::Circle {
        radius,
        center,
        u,
        v,
    })
}

/// The set of rails for one machine. Index 0 is the constant offset of the
/// static structure's center of mass; indices 1..=n carry the control masses.
#[derive(Clone, Debug, PartialEq)]
pub struct RailSet {
    pub static_offset: Vec3<f64>,
    pub rails: Vec<RailCurve>,
}

impl RailSet {
    pub fn new(static_offset: Vec3<f64>, rails: Vec<RailCurve>) -> Self {
        RailSet {
            static_offset,
            rails,
        }
    }

    pub fn n_control(&self) -> usize {
        self.rails.len()
    }

    /// Rail `i` for `0 <= i <= n`, where rail 0 is the constant offset.
    pub fn eval<T: Real>(&self, i: usize, theta: T) -> RailPoint<T> {
        if i == 0 {
            RailPoint {
                pos: Vec3::from_f64(self.static_offset),
                d1: Vec3::zeros(),
                d2: Vec3::zeros(),
                d3: Vec3::zeros(),
            }
        } else {
            self.rails[i - 1].eval(theta)
        }
    }
}

/// One failed sample from [`verify_derivatives`].
#[derive(Clone, Debug)]
pub struct DerivativeMismatch {
    pub theta: f64,
    pub order: usize,
    pub component: usize,
    pub expected: f64,
    pub got: f64,
}

/// Report of an analytic-vs-dual consistency sweep over a rail.
#[derive(Clone, Debug, Default)]
pub struct DerivativeReport {
    pub mismatches: Vec<DerivativeMismatch>,
    pub max_rel_error: f64,
}

impl DerivativeReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Check that the rail's returned derivatives agree with dual-number
/// differentiation of the next-lower order, to 1e-10 relative.
pub fn verify_derivatives(rail: &RailCurve, thetas: &[f64]) -> DerivativeReport {
    let mut report = DerivativeReport::default();
    let tol = 1e-10;
    for &theta in thetas {
        let base = rail.eval(theta);
        let lifted: RailPoint<Dual64> = rail.eval(Dual::new(theta, 1.0));
        let pairs: [(usize, Vec3<Dual64>, Vec3<f64>); 3] = [
            (1, lifted.pos, base.d1),
            (2, lifted.d1, base.d2),
            (3, lifted.d2, base.d3),
        ];
        for (order, dual_lower, claimed) in pairs {
            for c in 0..3 {
                let expected = dual_lower.0[c].eps;
                let got = claimed.0[c];
                let scale = 1.0 + expected.abs();
                let rel = (expected - got).abs() / scale;
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel > tol {
                    report.mismatches.push(DerivativeMismatch {
                        theta,
                        order,
                        component: c,
                        expected,
                        got,
                    });
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    const E1: Vec3<f64> = Vec3([1.0, 0.0, 0.0]);
    const E3: Vec3<f64> = Vec3([0.0, 0.0, 1.0]);

    #[test]
    fn mass_directly_below_center_at_minus_half_pi() {
        let rail = circular_rail(0.9, Vec3::zeros(), E1, E3).unwrap();
        let p = rail.eval(-std::f64::consts::FRAC_PI_2);
        assert!((p.pos.0[0]).abs() < 1e-15);
        assert!((p.pos.0[1]).abs() < 1e-15);
        assert!((p.pos.0[2] + 0.9).abs() < 1e-15);
    }

    #[test]
    fn circle_at_zero_parameter() {
        let c = Vec3::new(0.1, -0.2, 0.3);
        let rail = circular_rail(2.0, c, E1, E3).unwrap();
        let p = rail.eval(0.0);
        assert!((p.pos.0[0] - (c.0[0] + 2.0)).abs() < 1e-15);
        assert!((p.d1.0[2] - 2.0).abs() < 1e-15);
        // circle identities: d2 = -(pos - center), d3 = -d1
        for theta in [0.0, 0.4, 1.7, -2.2] {
            let p = rail.eval(theta);
            for i in 0..3 {
                assert!((p.d2.0[i] + (p.pos.0[i] - c.0[i])).abs() < 1e-14);
                assert!((p.d3.0[i] + p.d1.0[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rejects_non_orthonormal_axes() {
        let err = circular_rail(1.0, Vec3::zeros(), E1, Vec3::new(1e-6, 0.0, 1.0));
        assert!(err.is_err());
        let err = circular_rail(1.0, Vec3::zeros(), Vec3::new(1.1, 0.0, 0.0), E3);
        assert!(err.is_err());
    }

    #[test]
    fn derivative_sweep_passes_for_circle_and_constant() {
        let rail = circular_rail(0.7, Vec3::new(0.0, 0.1, 0.0), E1, E3).unwrap();
        let thetas: Vec<f64> = (0..100).map(|i| i as f64 * 0.063 - 3.0).collect();
        assert!(verify_derivatives(&rail, &thetas).passed());

        let fixed = RailCurve::Constant(Vec3::new(0.2, 0.0, -0.1));
        let report = verify_derivatives(&fixed, &thetas);
        assert!(report.passed());
        let p = fixed.eval(1.0f64);
        assert_eq!(p.d1.0, [0.0; 3]);
        assert_eq!(p.d2.0, [0.0; 3]);
        assert_eq!(p.d3.0, [0.0; 3]);
    }

    #[test]
    fn derivative_sweep_flags_wrong_second_derivative() {
        let bad = RailCurve::BrokenCircle { radius: 1.0 };
        let report = verify_derivatives(&bad, &[0.3, 0.9]);
        assert!(!report.passed());
        assert_eq!(report.mismatches[0].theta, 0.3);
        assert_eq!(report.mismatches[0].order, 2);
    }
}
