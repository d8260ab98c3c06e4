//! Optimal-control layer: cost functions, Hamiltonian, closed-form control
//! law with a Newton fallback, endpoint function and its gradients, desired
//! paths, and obstacle potentials.
//!
//! A concrete problem implements [`OcModel`]; every method is generic over
//! the scalar so the boundary-value machinery can push dual numbers through
//! the same code it evaluates.

use crate::real::{Dual, Real};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OcError {
    #[error("problem is not regular: control weight {index} is {value} at mu = {mu}")]
    NotRegular { index: usize, value: f64, mu: f64 },
    #[error("control Newton iteration did not converge in {max_iter} steps (residual {residual:.3e})")]
    ControlNewtonStalled { max_iter: usize, residual: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Scalar coefficient, either fixed or affine in the continuation parameter.
///
/// The affine form evaluates as a convex combination so the anchor values are
/// reproduced exactly at both anchor parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScalarMap {
    Const(f64),
    Affine { mu0: f64, v0: f64, mu1: f64, v1: f64 },
}

impl ScalarMap {
    pub fn eval<T: Real>(&self, mu: T) -> T {
        match *self {
            ScalarMap::Const(c) => T::from_f64(c),
            ScalarMap::Affine { mu0, v0, mu1, v1 } => {
                let s = (T::from_f64(mu0) - mu) / T::from_f64(mu0 - mu1);
                (T::one() - s).scale(v0) + s.scale(v1)
            }
        }
    }

    pub fn constant(&self) -> bool {
        matches!(self, ScalarMap::Const(_))
    }
}

/// Cost coefficients. `gamma` must stay positive for the problem to be
/// regular; the maps let continuation schedules move `alpha`, `gamma`, or
/// obstacle heights with `mu`.
#[derive(Clone, Debug)]
pub struct CostWeights {
    pub alpha: ScalarMap,
    pub beta: f64,
    pub gamma: Vec<ScalarMap>,
    pub delta: f64,
    pub upsilon_a: f64,
    pub upsilon_b: f64,
    pub a_e: f64,
    pub b_e: f64,
}

impl CostWeights {
    pub fn check_regular(&self, mu: f64) -> Result<(), OcError> {
        for (i, g) in self.gamma.iter().enumerate() {
            let v = g.eval(mu);
            if v <= 0.0 {
                return Err(OcError::NotRegular {
                    index: i,
                    value: v,
                    mu,
                });
            }
        }
        Ok(())
    }
}

/// Inner shape of the desired path between the blend-in/out times.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PathShape {
    /// Degenerate target that stays at the start value.
    Constant,
    /// Linearly growing sinusoid `[za + (zb-za) tau] sin(half_turns pi tau)`
    /// with `tau` normalized time.
    SinusoidRamp { half_turns: f64 },
    /// Cubic with zero slope at both endpoint times.
    CubicRest,
}

/// One component of a desired GC path: sigmoid-blended between the start
/// value, an inner shape, and the end value.
#[derive(Clone, Debug)]
pub struct DesiredPath {
    pub start: f64,
    pub end: ScalarMap,
    pub t_start: f64,
    pub t_end: f64,
    pub epsilon: f64,
    pub shape: PathShape,
}

/// Time-reversed sigmoid: smooth approximation of the reversed unit step.
pub fn reversed_sigmoid<T: Real>(t: T, epsilon: f64) -> T {
    (T::one() + (-t.scale(1.0 / epsilon)).tanh()).scale(0.5)
}

impl DesiredPath {
    fn inner<T: Real>(&self, t: T, end: T) -> T {
        let start = T::from_f64(self.start);
        match self.shape {
            PathShape::Constant => start,
            PathShape::SinusoidRamp { half_turns } => {
                let tau = (t - T::from_f64(self.t_start))
                    .scale(1.0 / (self.t_end - self.t_start));
                (start + (end - start) * tau)
                    * (tau.scale(half_turns * std::f64::consts::PI)).sin()
            }
            PathShape::CubicRest => {
                let cubic = |t: T| {
                    let third = T::from_f64(1.0 / 3.0);
                    -third * t * t * t
                        + t * t * T::from_f64(0.5 * (self.t_start + self.t_end))
                        - t.scale(self.t_start * self.t_end)
                };
                let qa = cubic(T::from_f64(self.t_start));
                let qb = cubic(T::from_f64(self.t_end));
                let k1 = (end - start) / (qb - qa);
                // componentwise zero guard from the 2-d construction
                if k1.value() == 0.0 {
                    return T::zero();
                }
                let k2 = end / k1 - qb;
                k1 * (cubic(t) + k2)
            }
        }
    }

    /// Evaluates the blended path at time `t`.
    pub fn eval<T: Real>(&self, t: T, mu: T) -> T {
        let end = self.end.eval(mu);
        let start = T::from_f64(self.start);
        let w = reversed_sigmoid(t - T::from_f64(self.t_start), self.epsilon);
        let y = reversed_sigmoid(T::from_f64(self.t_end) - t, self.epsilon);
        let inner = self.inner(t, end);
        (start * w + inner * (T::one() - w)) * (T::one() - y) + end * y
    }
}

/// Obstacle boundary transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObstacleBoundary {
    Sigmoid { epsilon: f64 },
    QuarticCutoff,
}

/// Circular obstacle penalized through a potential of height `height`.
#[derive(Clone, Debug)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
    pub height: ScalarMap,
    pub boundary: ObstacleBoundary,
}

impl Obstacle {
    /// Distance guard below which the gradient direction is ambiguous.
    const CENTER_GUARD: f64 = 1e-12;

    pub fn potential<T: Real>(&self, z: [T; 2], mu: T) -> T {
        let h = self.height.eval(mu);
        let dx = z[0] - T::from_f64(self.center[0]);
        let dy = z[1] - T::from_f64(self.center[1]);
        let dist_sq = dx * dx + dy * dy;
        let dist = if dist_sq.value() < Self::CENTER_GUARD * Self::CENTER_GUARD {
            T::zero()
        } else {
            dist_sq.sqrt()
        };
        let y = dist - T::from_f64(self.radius);
        match self.boundary {
            ObstacleBoundary::Sigmoid { epsilon } => h * reversed_sigmoid(y, epsilon),
            ObstacleBoundary::QuarticCutoff => h * (T::zero().max(-y)).powi(4),
        }
    }

    /// Analytic gradient of the potential with respect to `z`.
    pub fn potential_grad<T: Real>(&self, z: [T; 2], mu: T) -> [T; 2] {
        let h = self.height.eval(mu);
        let dx = z[0] - T::from_f64(self.center[0]);
        let dy = z[1] - T::from_f64(self.center[1]);
        let dist_sq = dx * dx + dy * dy;
        if dist_sq.value() < Self::CENTER_GUARD * Self::CENTER_GUARD {
            // removable direction ambiguity at the exact center
            return [T::zero(), T::zero()];
        }
        let dist = dist_sq.sqrt();
        let slope = match self.boundary {
            ObstacleBoundary::Sigmoid { epsilon } => {
                let th = ((T::from_f64(self.radius) - dist).scale(1.0 / epsilon)).tanh();
                -(T::one() - th * th).scale(0.5 / epsilon) * h
            }
            ObstacleBoundary::QuarticCutoff => {
                let cut = T::zero().max(T::from_f64(self.radius) - dist);
                -(cut * cut * cut) * h.scale(4.0)
            }
        };
        let scale = slope / dist;
        [dx * scale, dy * scale]
    }

    /// Value and gradient with an explicit at-center flag.
    pub fn value_and_gradient(&self, z: [f64; 2], mu: f64) -> (f64, [f64; 2], bool) {
        let v = self.potential(z, mu);
        let g = self.potential_grad(z, mu);
        let dx = z[0] - self.center[0];
        let dy = z[1] - self.center[1];
        let at_center = (dx * dx + dy * dy).sqrt() < Self::CENTER_GUARD;
        (v, g, at_center)
    }
}

/// A regular optimal-control problem with closed-form control elimination and
/// analytic state gradient of the Hamiltonian.
pub trait OcModel {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    /// Number of prescribed initial conditions.
    fn n_initial(&self) -> usize;
    /// Number of prescribed final conditions.
    fn n_final(&self) -> usize;

    fn dynamics<T: Real>(&self, t: T, x: &[T], u: &[T], mu: T, out: &mut [T]);
    fn running_cost<T: Real>(&self, t: T, x: &[T], u: &[T], mu: T) -> T;
    fn endpoint_cost<T: Real>(&self, a: T, xa: &[T], b: T, xb: &[T], mu: T) -> T;
    fn initial_conditions<T: Real>(&self, a: T, xa: &[T], mu: T, out: &mut [T]);
    fn final_conditions<T: Real>(&self, b: T, xb: &[T], mu: T, out: &mut [T]);
    /// Control that makes the Hamiltonian stationary in `u` (closed form).
    fn control_law<T: Real>(&self, t: T, x: &[T], lam: &[T], mu: T, out: &mut [T]);
    /// Analytic gradient of the Hamiltonian with respect to the state.
    fn grad_x<T: Real>(&self, t: T, x: &[T], lam: &[T], u: &[T], mu: T, out: &mut [T]);
    /// Control weights at `mu` (the diagonal of the control Hessian).
    fn control_weights(&self, mu: f64) -> Vec<f64>;
    /// Cheap validity check used by drivers to stop with a clean diagnostic.
    fn regular_at(&self, mu: f64) -> bool {
        self.control_weights(mu).iter().all(|&g| g > 0.0)
    }
}

/// `H = L + lambda . f`.
pub fn hamiltonian<M: OcModel, T: Real>(m: &M, t: T, x: &[T], lam: &[T], u: &[T], mu: T) -> T {
    let mut f = vec![T::zero(); m.state_dim()];
    m.dynamics(t, x, u, mu, &mut f);
    let mut h = m.running_cost(t, x, u, mu);
    for (l, fi) in lam.iter().zip(f.iter()) {
        h += *l * *fi;
    }
    h
}

/// Hamiltonian with the control eliminated through the closed-form law.
pub fn regular_hamiltonian<M: OcModel, T: Real>(m: &M, t: T, x: &[T], lam: &[T], mu: T) -> T {
    let mut u = vec![T::zero(); m.control_dim()];
    m.control_law(t, x, lam, mu, &mut u);
    hamiltonian(m, t, x, lam, &u, mu)
}

/// Right-hand side of the controlled equations: `x' = f(x, pi)`,
/// `lambda' = -H_x(x, lambda, pi)`.
pub fn regular_rhs<M: OcModel, T: Real>(
    m: &M,
    t: T,
    x: &[T],
    lam: &[T],
    mu: T,
    dx: &mut [T],
    dlam: &mut [T],
) {
    let nu = m.control_dim();
    let mut u = vec![T::zero(); nu];
    m.control_law(t, x, lam, mu, &mut u);
    m.dynamics(t, x, &u, mu, dx);
    m.grad_x(t, x, lam, &u, mu, dlam);
    for v in dlam.iter_mut() {
        *v = -*v;
    }
}

/// Gradient of `H` with respect to the control, by dual numbers. Used to
/// assert the closed-form law and to drive the Newton fallback.
pub fn control_gradient<M: OcModel>(
    m: &M,
    t: f64,
    x: &[f64],
    lam: &[f64],
    u: &[f64],
    mu: f64,
) -> Vec<f64> {
    let nu = m.control_dim();
    let xl: Vec<Dual<f64>> = x.iter().map(|&v| Dual::constant(v)).collect();
    let ll: Vec<Dual<f64>> = lam.iter().map(|&v| Dual::constant(v)).collect();
    (0..nu)
        .map(|j| {
            let ul: Vec<Dual<f64>> = u
                .iter()
                .enumerate()
                .map(|(i, &v)| Dual::new(v, if i == j { 1.0 } else { 0.0 }))
                .collect();
            hamiltonian(
                m,
                Dual::constant(t),
                &xl,
                &ll,
                &ul,
                Dual::constant(mu),
            )
            .eps
        })
        .collect()
}

/// Control Hessian `H_uu` by nested duals.
pub fn control_hessian<M: OcModel>(
    m: &M,
    t: f64,
    x: &[f64],
    lam: &[f64],
    u: &[f64],
    mu: f64,
) -> Vec<Vec<f64>> {
    type D2 = Dual<Dual<f64>>;
    let nu = m.control_dim();
    let xl: Vec<D2> = x.iter().map(|&v| D2::from_f64(v)).collect();
    let ll: Vec<D2> = lam.iter().map(|&v| D2::from_f64(v)).collect();
    let mut hess = vec![vec![0.0; nu]; nu];
    for i in 0..nu {
        for j in 0..nu {
            let ul: Vec<D2> = u
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let outer = if k == i { 1.0 } else { 0.0 };
                    let inner = if k == j { 1.0 } else { 0.0 };
                    Dual::new(Dual::new(v, inner), Dual::new(outer, 0.0))
                })
                .collect();
            hess[i][j] = hamiltonian(m, D2::from_f64(t), &xl, &ll, &ul, D2::from_f64(mu))
                .eps
                .eps;
        }
    }
    hess
}

/// Newton fallback for the stationary control, for models without (or as a
/// cross-check of) the closed form.
pub fn control_law_newton<M: OcModel>(
    m: &M,
    t: f64,
    x: &[f64],
    lam: &[f64],
    mu: f64,
    u0: &[f64],
    max_iter: usize,
) -> Result<Vec<f64>, OcError> {
    for (i, &g) in m.control_weights(mu).iter().enumerate() {
        if g <= 0.0 {
            return Err(OcError::NotRegular {
                index: i,
                value: g,
                mu,
            });
        }
    }
    let nu = m.control_dim();
    if u0.len() != nu {
        return Err(OcError::DimensionMismatch {
            expected: nu,
            got: u0.len(),
        });
    }
    let mut u = u0.to_vec();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let grad = control_gradient(m, t, x, lam, &u, mu);
        residual = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if residual <= 1e-12 {
            return Ok(u);
        }
        let hess = control_hessian(m, t, x, lam, &u, mu);
        // the problems here have diagonal H_uu; solve the small dense system
        // by Gaussian elimination to stay general
        let mut a: Vec<Vec<f64>> = hess;
        let mut b = grad;
        for col in 0..nu {
            let mut piv = col;
            for row in col + 1..nu {
                if a[row][col].abs() > a[piv][col].abs() {
                    piv = row;
                }
            }
            if a[piv][col].abs() < 1e-300 {
                return Err(OcError::ControlNewtonStalled {
                    max_iter,
                    residual,
                });
            }
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..nu {
                let f = a[row][col] / a[col][col];
                for k in col..nu {
                    let t = a[col][k];
                    a[row][k] -= f * t;
                }
                let t = b[col];
                b[row] -= f * t;
            }
        }
        for i in (0..nu).rev() {
            let mut s = b[i];
            for k in i + 1..nu {
                s -= a[i][k] * b[k];
            }
            b[i] = s / a[i][i];
        }
        for i in 0..nu {
            u[i] -= b[i];
        }
    }
    let grad = control_gradient(m, t, x, lam, &u, mu);
    let residual_final = grad.iter().fold(residual, |a, g| a.max(g.abs()));
    if residual_final <= 1e-12 {
        Ok(u)
    } else {
        Err(OcError::ControlNewtonStalled {
            max_iter,
            residual: residual_final,
        })
    }
}

/// Endpoint function `G = p + xi . sigma + nu . psi`.
pub fn endpoint_function<M: OcModel, T: Real>(
    m: &M,
    a: T,
    xa: &[T],
    xi: &[T],
    b: T,
    xb: &[T],
    nu: &[T],
    mu: T,
) -> T {
    let mut sigma = vec![T::zero(); m.n_initial()];
    m.initial_conditions(a, xa, mu, &mut sigma);
    let mut psi = vec![T::zero(); m.n_final()];
    m.final_conditions(b, xb, mu, &mut psi);
    let mut g = m.endpoint_cost(a, xa, b, xb, mu);
    for (c, s) in xi.iter().zip(sigma) {
        g += *c * s;
    }
    for (c, p) in nu.iter().zip(psi) {
        g += *c * p;
    }
    g
}

fn lift_const<T: Real>(v: &[T]) -> Vec<Dual<T>> {
    v.iter().map(|&c| Dual::constant(c)).collect()
}

/// `G_{x(a)}^T` by one inner dual pass per state component.
pub fn endpoint_grad_xa<M: OcModel, T: Real>(
    m: &M,
    a: T,
    xa: &[T],
    xi: &[T],
    b: T,
    xb: &[T],
    nu: &[T],
    mu: T,
) -> Vec<T> {
    let xil = lift_const(xi);
    let nul = lift_const(nu);
    let xbl = lift_const(xb);
    (0..xa.len())
        .map(|j| {
            let xal: Vec<Dual<T>> = xa
                .iter()
                .enumerate()
                .map(|(i, &v)| Dual::new(v, if i == j { T::one() } else { T::zero() }))
                .collect();
            endpoint_function(
                m,
                Dual::constant(a),
                &xal,
                &xil,
                Dual::constant(b),
                &xbl,
                &nul,
                Dual::constant(mu),
            )
            .eps
        })
        .collect()
}

/// `G_{x(b)}^T` by one inner dual pass per state component.
pub fn endpoint_grad_xb<M: OcModel, T: Real>(
    m: &M,
    a: T,
    xa: &[T],
    xi: &[T],
    b: T,
    xb: &[T],
    nu: &[T],
    mu: T,
) -> Vec<T> {
    let xil = lift_const(xi);
    let nul = lift_const(nu);
    let xal = lift_const(xa);
    (0..xb.len())
        .map(|j| {
            let xbl: Vec<Dual<T>> = xb
                .iter()
                .enumerate()
                .map(|(i, &v)| Dual::new(v, if i == j { T::one() } else { T::zero() }))
                .collect();
            endpoint_function(
                m,
                Dual::constant(a),
                &xal,
                &xil,
                Dual::constant(b),
                &xbl,
                &nul,
                Dual::constant(mu),
            )
            .eps
        })
        .collect()
}

/// `G_a` (scalar derivative with respect to the initial time).
pub fn endpoint_grad_a<M: OcModel, T: Real>(
    m: &M,
    a: T,
    xa: &[T],
    xi: &[T],
    b: T,
    xb: &[T],
    nu: &[T],
    mu: T,
) -> T {
    endpoint_function(
        m,
        Dual::variable(a),
        &lift_const(xa),
        &lift_const(xi),
        Dual::constant(b),
        &lift_const(xb),
        &lift_const(nu),
        Dual::constant(mu),
    )
    .eps
}

/// `G_b` (scalar derivative with respect to the final time).
pub fn endpoint_grad_b<M: OcModel, T: Real>(
    m: &M,
    a: T,
    xa: &[T],
    xi: &[T],
    b: T,
    xb: &[T],
    nu: &[T],
    mu: T,
) -> T {
    endpoint_function(
        m,
        Dual::constant(a),
        &lift_const(xa),
        &lift_const(xi),
        Dual::variable(b),
        &lift_const(xb),
        &lift_const(nu),
        Dual::constant(mu),
    )
    .eps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::Dual64;

    #[test]
    fn scalar_map_exact_at_anchors() {
        let m = ScalarMap::Affine {
            mu0: 0.95,
            v0: 20.0,
            mu1: 1e-5,
            v1: 5000.0,
        };
        assert_eq!(m.eval(0.95f64), 20.0);
        assert_eq!(m.eval(1e-5f64), 5000.0);
        let h = ScalarMap::Affine {
            mu0: 0.95,
            v0: 0.1,
            mu1: 1e-5,
            v1: 1000.0,
        };
        assert_eq!(h.eval(0.95f64), 0.1);
        assert_eq!(h.eval(1e-5f64), 1000.0);
        // slope is constant (affine): derivative independent of mu
        let d1 = m.eval(Dual64::variable(0.5)).eps;
        let d2 = m.eval(Dual64::variable(-3.0)).eps;
        assert!((d1 - d2).abs() < 1e-9 * d1.abs());
    }

    #[test]
    fn reversed_sigmoid_midpoint() {
        assert!((reversed_sigmoid(0.0f64, 0.01) - 0.5).abs() < 1e-15);
        assert!(reversed_sigmoid(1.0f64, 0.01) < 1e-10);
        assert!((reversed_sigmoid(-1.0f64, 0.01) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn sinusoid_path_hits_paper_value() {
        // t = b_e: inner path value is 1 * sin(9 pi / 2) = 1
        let p = DesiredPath {
            start: 0.0,
            end: ScalarMap::Const(1.0),
            t_start: 0.0,
            t_end: 2.0,
            epsilon: 0.01,
            shape: PathShape::SinusoidRamp { half_turns: 4.5 },
        };
        let inner = p.inner(2.0f64, 1.0);
        assert!((inner - 1.0).abs() < 1e-12);
        // blended path interpolates the endpoints
        assert!((p.eval(0.0f64, 0.0) - 0.0).abs() <= 1e-6);
        assert!((p.eval(2.0f64, 0.0) - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn cubic_path_endpoint_interpolation_and_rest() {
        let p = DesiredPath {
            start: 0.0,
            end: ScalarMap::Const(1.0),
            t_start: 0.0,
            t_end: 0.5,
            epsilon: 0.01,
            shape: PathShape::CubicRest,
        };
        assert!((p.eval(0.0f64, 0.0) - 0.0).abs() <= 1e-6);
        assert!((p.eval(0.5f64, 0.0) - 1.0).abs() <= 1e-6);
        // inner cubic has zero slope at both endpoint times
        for t in [0.0, 0.5] {
            let d = p
                .inner(Dual64::variable(t), Dual64::constant(1.0))
                .eps;
            assert!(d.abs() <= 1e-4, "slope {d} at t = {t}");
        }
        // zero-span component: k1 = 0 guard
        let flat = DesiredPath {
            start: 0.0,
            end: ScalarMap::Const(0.0),
            t_start: 0.0,
            t_end: 0.5,
            epsilon: 0.01,
            shape: PathShape::CubicRest,
        };
        assert_eq!(flat.eval(0.3f64, 0.0), 0.0);
    }

    #[test]
    fn obstacle_values_and_gradients() {
        let quartic = Obstacle {
            center: [0.0, 0.0],
            radius: 0.2,
            height: ScalarMap::Const(2.0),
            boundary: ObstacleBoundary::QuarticCutoff,
        };
        // outside the radius: identically zero
        let (v, g, flag) = quartic.value_and_gradient([0.3, 0.0], 0.0);
        assert_eq!(v, 0.0);
        assert_eq!(g, [0.0, 0.0]);
        assert!(!flag);
        // at the center: h * rho^4, flag raised, gradient zeroed
        let (v, g, flag) = quartic.value_and_gradient([0.0, 0.0], 0.0);
        assert!((v - 2.0 * 0.2f64.powi(4)).abs() < 1e-15);
        assert_eq!(g, [0.0, 0.0]);
        assert!(flag);

        let sigmoid = Obstacle {
            center: [0.0, 0.0],
            radius: 0.2,
            height: ScalarMap::Const(3.0),
            boundary: ObstacleBoundary::Sigmoid { epsilon: 0.01 },
        };
        let (v, _, _) = sigmoid.value_and_gradient([0.0, 0.0], 0.0);
        assert!((v - 3.0).abs() < 1e-8); // rho >> epsilon

        // gradient matches a dual pass through the potential
        let mut s = 5u64;
        let mut rng = move || {
            s ^= s >> 12;
            s ^= s << 25;
            s ^= s >> 27;
            (s.wrapping_mul(0x2545F4914F6CDD1D) >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for obs in [&quartic, &sigmoid] {
            for _ in 0..50 {
                let z = [rng() * 0.8, rng() * 0.8];
                let g = obs.potential_grad([z[0], z[1]], 0.0);
                for j in 0..2 {
                    let zl = [
                        Dual64::new(z[0], if j == 0 { 1.0 } else { 0.0 }),
                        Dual64::new(z[1], if j == 1 { 1.0 } else { 0.0 }),
                    ];
                    let d = obs.potential(zl, Dual64::constant(0.0)).eps;
                    assert!(
                        (d - g[j]).abs() <= 1e-10 * (1.0 + d.abs()),
                        "component {j} at {z:?}: dual {d} vs analytic {}",
                        g[j]
                    );
                }
            }
        }
    }
}
