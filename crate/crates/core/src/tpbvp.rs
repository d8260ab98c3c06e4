//! Normalization of the controlled equations onto `s in [0, 1]` with the
//! expanded dependent vector `[x; costate; xi; nu; (a); (b)]`, and assembly of
//! the normalized velocity, boundary-condition function, and their Jacobians.
//!
//! Unknown constants are read from the left-endpoint vector; the
//! corresponding trailing columns of the right-endpoint Jacobian are zero by
//! construction. First-order quantities are analytic; every Jacobian here is
//! produced by dual-number differentiation of those quantities.

use crate::linalg::DMat;
use crate::ocp::{
    endpoint_grad_a, endpoint_grad_b, endpoint_grad_xa, endpoint_grad_xb, regular_hamiltonian,
    regular_rhs, OcModel,
};
use crate::real::{Dual, Dual64, Real};

/// Integration window and which endpoints are unknowns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeSpec {
    pub a: f64,
    pub b: f64,
    pub free_a: bool,
    pub free_b: bool,
}

impl TimeSpec {
    pub fn fixed(a: f64, b: f64) -> Self {
        TimeSpec {
            a,
            b,
            free_a: false,
            free_b: false,
        }
    }
}

/// Index bookkeeping for the expanded dependent vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpandedLayout {
    pub nx: usize,
    pub k1: usize,
    pub k2: usize,
    pub free_a: bool,
    pub free_b: bool,
}

impl ExpandedLayout {
    pub fn dim(&self) -> usize {
        2 * self.nx + self.k1 + self.k2 + self.free_a as usize + self.free_b as usize
    }
    pub fn state(&self) -> std::ops::Range<usize> {
        0..self.nx
    }
    pub fn costate(&self) -> std::ops::Range<usize> {
        self.nx..2 * self.nx
    }
    pub fn multipliers_initial(&self) -> std::ops::Range<usize> {
        2 * self.nx..2 * self.nx + self.k1
    }
    pub fn multipliers_final(&self) -> std::ops::Range<usize> {
        2 * self.nx + self.k1..2 * self.nx + self.k1 + self.k2
    }
    pub fn a_index(&self) -> Option<usize> {
        self.free_a.then_some(2 * self.nx + self.k1 + self.k2)
    }
    pub fn b_index(&self) -> Option<usize> {
        self.free_b
            .then_some(2 * self.nx + self.k1 + self.k2 + self.free_a as usize)
    }
    /// First index of the constant block (everything past the costate).
    pub fn constants_start(&self) -> usize {
        2 * self.nx
    }
}

/// A controlled problem normalized onto the unit interval, exposing exactly
/// what a global boundary-value solver wants: velocity, boundary residual,
/// and their Jacobians with respect to the endpoint vectors and the
/// continuation parameter.
#[derive(Clone, Debug)]
pub struct NormalizedProblem<M: OcModel> {
    pub model: M,
    pub time: TimeSpec,
    layout: ExpandedLayout,
}

impl<M: OcModel> NormalizedProblem<M> {
    pub fn new(model: M, time: TimeSpec) -> Self {
        let layout = ExpandedLayout {
            nx: model.state_dim(),
            k1: model.n_initial(),
            k2: model.n_final(),
            free_a: time.free_a,
            free_b: time.free_b,
        };
        NormalizedProblem {
            model,
            time,
            layout,
        }
    }

    pub fn layout(&self) -> ExpandedLayout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn endpoint_times<T: Real>(&self, z: &[T]) -> (T, T) {
        let a = match self.layout.a_index() {
            Some(i) => z[i],
            None => T::from_f64(self.time.a),
        };
        let b = match self.layout.b_index() {
            Some(i) => z[i],
            None => T::from_f64(self.time.b),
        };
        (a, b)
    }

    /// Normalized velocity: `T * [f; -H_x; 0]` with `t(s) = a + T s`.
    pub fn rhs_generic<T: Real>(&self, s: f64, z: &[T], mu: T, out: &mut [T]) {
        let nx = self.layout.nx;
        let (a, b) = self.endpoint_times(z);
        let span = b - a;
        let t = a + span.scale(s);
        let mut dx = vec![T::zero(); nx];
        let mut dlam = vec![T::zero(); nx];
        regular_rhs(&self.model, t, &z[..nx], &z[nx..2 * nx], mu, &mut dx, &mut dlam);
        for i in 0..nx {
            out[i] = dx[i] * span;
            out[nx + i] = dlam[i] * span;
        }
        for v in out[2 * nx..].iter_mut() {
            *v = T::zero();
        }
    }

    pub fn rhs(&self, s: f64, z: &[f64], mu: f64, out: &mut [f64]) {
        self.rhs_generic(s, z, mu, out);
    }

    /// Jacobian of the normalized velocity with respect to the expanded
    /// vector, one dual sweep per column.
    pub fn rhs_jacobian(&self, s: f64, z: &[f64], mu: f64, out: &mut DMat) {
        let dim = self.dim();
        debug_assert_eq!(out.rows(), dim);
        debug_assert_eq!(out.cols(), dim);
        let mut lifted: Vec<Dual64> = z.iter().map(|&v| Dual::constant(v)).collect();
        let mut col = vec![Dual64::from_f64(0.0); dim];
        let mul = Dual::constant(mu);
        // constant-block columns other than the free times are zero
        let active: Vec<usize> = (0..2 * self.layout.nx)
            .chain(self.layout.a_index())
            .chain(self.layout.b_index())
            .collect();
        out.fill(0.0);
        for &j in &active {
            lifted[j].eps = 1.0;
            self.rhs_generic(s, &lifted, mul, &mut col);
            lifted[j].eps = 0.0;
            for i in 0..dim {
                out.set(i, j, col[i].eps);
            }
        }
    }

    /// Jacobian of the normalized velocity with respect to the continuation
    /// parameter.
    pub fn rhs_jacobian_mu(&self, s: f64, z: &[f64], mu: f64, out: &mut [f64]) {
        let dim = self.dim();
        let lifted: Vec<Dual64> = z.iter().map(|&v| Dual::constant(v)).collect();
        let mut col = vec![Dual64::from_f64(0.0); dim];
        self.rhs_generic(s, &lifted, Dual::variable(mu), &mut col);
        for i in 0..dim {
            out[i] = col[i].eps;
        }
    }

    /// Two-point boundary residual. Multipliers and free endpoint times are
    /// taken from the left-endpoint vector.
    pub fn boundary_generic<T: Real>(&self, z0: &[T], z1: &[T], mu: T, out: &mut [T]) {
        let l = self.layout;
        let nx = l.nx;
        let (a, b) = self.endpoint_times(z0);
        let xa = &z0[..nx];
        let lam_a = &z0[nx..2 * nx];
        let xb = &z1[..nx];
        let lam_b = &z1[nx..2 * nx];
        let xi = &z0[l.multipliers_initial()];
        let nu = &z0[l.multipliers_final()];

        let mut row = 0;
        if l.free_a {
            out[row] = regular_hamiltonian(&self.model, a, xa, lam_a, mu)
                - endpoint_grad_a(&self.model, a, xa, xi, b, xb, nu, mu);
            row += 1;
        }
        let ga = endpoint_grad_xa(&self.model, a, xa, xi, b, xb, nu, mu);
        for i in 0..nx {
            out[row + i] = lam_a[i] + ga[i];
        }
        row += nx;
        self.model
            .initial_conditions(a, xa, mu, &mut out[row..row + l.k1]);
        row += l.k1;
        if l.free_b {
            out[row] = regular_hamiltonian(&self.model, b, xb, lam_b, mu)
                + endpoint_grad_b(&self.model, a, xa, xi, b, xb, nu, mu);
            row += 1;
        }
        let gb = endpoint_grad_xb(&self.model, a, xa, xi, b, xb, nu, mu);
        for i in 0..nx {
            out[row + i] = lam_b[i] - gb[i];
        }
        row += nx;
        self.model
            .final_conditions(b, xb, mu, &mut out[row..row + l.k2]);
    }

    pub fn boundary(&self, z0: &[f64], z1: &[f64], mu: f64, out: &mut [f64]) {
        self.boundary_generic(z0, z1, mu, out);
    }

    /// All three boundary Jacobians by outer dual sweeps (the endpoint
    /// gradients inside nest a second dual level).
    pub fn boundary_jacobians(
        &self,
        z0: &[f64],
        z1: &[f64],
        mu: f64,
        j0: &mut DMat,
        j1: &mut DMat,
        jmu: &mut [f64],
    ) {
        let dim = self.dim();
        let mut l0: Vec<Dual64> = z0.iter().map(|&v| Dual::constant(v)).collect();
        let mut l1: Vec<Dual64> = z1.iter().map(|&v| Dual::constant(v)).collect();
        let mut col = vec![Dual64::from_f64(0.0); dim];
        let mul = Dual::constant(mu);
        for j in 0..dim {
            l0[j].eps = 1.0;
            self.boundary_generic(&l0, &l1, mul, &mut col);
            l0[j].eps = 0.0;
            for i in 0..dim {
                j0.set(i, j, col[i].eps);
            }
        }
        // the right-endpoint constant block never enters the residual
        let active: Vec<usize> = (0..2 * self.layout.nx).collect();
        j1.fill(0.0);
        for &j in &active {
            l1[j].eps = 1.0;
            self.boundary_generic(&l0, &l1, mul, &mut col);
            l1[j].eps = 0.0;
            for i in 0..dim {
                j1.set(i, j, col[i].eps);
            }
        }
        self.boundary_generic(&l0, &l1, Dual::variable(mu), &mut col);
        for i in 0..dim {
            jmu[i] = col[i].eps;
        }
    }
}

impl<M: OcModel> crate::continuation::ParamBvp for NormalizedProblem<M> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }
    fn rhs(&self, s: f64, y: &[f64], lam: f64, out: &mut [f64]) {
        NormalizedProblem::rhs(self, s, y, lam, out);
    }
    fn rhs_jac_y(&self, s: f64, y: &[f64], lam: f64, out: &mut DMat) {
        self.rhs_jacobian(s, y, lam, out);
    }
    fn rhs_jac_lam(&self, s: f64, y: &[f64], lam: f64, out: &mut [f64]) {
        self.rhs_jacobian_mu(s, y, lam, out);
    }
    fn bc(&self, ya: &[f64], yb: &[f64], lam: f64, out: &mut [f64]) {
        self.boundary(ya, yb, lam, out);
    }
    fn bc_jacs(
        &self,
        ya: &[f64],
        yb: &[f64],
        lam: f64,
        ja: &mut DMat,
        jb: &mut DMat,
        jlam: &mut [f64],
    ) {
        self.boundary_jacobians(ya, yb, lam, ja, jb, jlam);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ball_seed_model, disk_seed_model, disk_tracking_model};
    use crate::ocp::ObstacleBoundary;

    fn rng_stream(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed.max(1);
        move || {
            s ^= s >> 12;
            s ^= s << 25;
            s ^= s >> 27;
            (s.wrapping_mul(0x2545F4914F6CDD1D) >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        }
    }

    #[test]
    fn layout_bookkeeping_all_time_modes() {
        for (free_a, free_b) in [(false, false), (true, false), (false, true), (true, true)] {
            let model = disk_tracking_model();
            let time = TimeSpec {
                a: 0.0,
                b: 2.0,
                free_a,
                free_b,
            };
            let p = NormalizedProblem::new(model, time);
            let l = p.layout();
            // the boundary residual must match the unknown count: the system
            // is square
            let expected = 2 * l.nx + l.k1 + l.k2 + free_a as usize + free_b as usize;
            assert_eq!(p.dim(), expected);
            assert_eq!(l.nx, 10);
            assert_eq!(l.k1, 10);
            assert_eq!(l.k2, 7);
            let z0 = vec![0.1; p.dim()];
            let z1 = vec![0.2; p.dim()];
            let mut out = vec![f64::NAN; p.dim()];
            p.boundary(&z0, &z1, 0.95, &mut out);
            assert!(out.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn constant_rows_are_zero_and_scale_linear_in_span() {
        let model = disk_tracking_model();
        let mut r = rng_stream(3);
        let p1 = NormalizedProblem::new(model.clone(), TimeSpec::fixed(0.0, 1.0));
        let p2 = NormalizedProblem::new(model, TimeSpec::fixed(0.0, 2.0));
        let dim = p1.dim();
        for _ in 0..10 {
            let z: Vec<f64> = (0..dim).map(|_| r()).collect();
            let mut o1 = vec![0.0; dim];
            let mut o2 = vec![0.0; dim];
            p1.rhs(0.37, &z, 0.9, &mut o1);
            p2.rhs(0.37, &z, 0.9, &mut o2);
            for i in 2 * 10..dim {
                assert_eq!(o1[i], 0.0);
                assert_eq!(o2[i], 0.0);
            }
            // doubling the window doubles the velocity... at matching t;
            // with a = 0 both evaluate t = span * s, so compare p2 at s with
            // p1 evaluated at t = 2 s: instead check pure scaling with a
            // time-independent state by zeroing the tracking weight
        }
        // time-independent check: unit window vs doubled window at s = 0
        let z: Vec<f64> = (0..dim).map(|_| r()).collect();
        let mut o1 = vec![0.0; dim];
        let mut o2 = vec![0.0; dim];
        p1.rhs(0.0, &z, 0.9, &mut o1);
        p2.rhs(0.0, &z, 0.9, &mut o2);
        for i in 0..2 * 10 {
            assert!((o2[i] - 2.0 * o1[i]).abs() <= 1e-12 * (1.0 + o1[i].abs()));
        }
    }

    fn fd_rhs_jacobian<M: OcModel>(
        p: &NormalizedProblem<M>,
        s: f64,
        z: &[f64],
        mu: f64,
    ) -> DMat {
        let dim = p.dim();
        let mut out = DMat::zeros(dim, dim);
        let h = 1e-6;
        let mut plus = vec![0.0; dim];
        let mut minus = vec![0.0; dim];
        for j in 0..dim {
            let mut zp = z.to_vec();
            zp[j] += h;
            let mut zm = z.to_vec();
            zm[j] -= h;
            p.rhs(s, &zp, mu, &mut plus);
            p.rhs(s, &zm, mu, &mut minus);
            for i in 0..dim {
                out.set(i, j, (plus[i] - minus[i]) / (2.0 * h));
            }
        }
        out
    }

    #[test]
    fn rhs_jacobian_matches_finite_differences_and_clairaut() {
        for free in [false, true] {
            let model = disk_tracking_model();
            let time = TimeSpec {
                a: 0.0,
                b: 2.0,
                free_a: free,
                free_b: free,
            };
            let p = NormalizedProblem::new(model, time);
            let dim = p.dim();
            let mut r = rng_stream(11);
            let mut z: Vec<f64> = (0..dim).map(|_| 0.5 * r()).collect();
            if let Some(i) = p.layout().a_index() {
                z[i] = 0.0;
            }
            if let Some(i) = p.layout().b_index() {
                z[i] = 2.0;
            }
            let mut jac = DMat::zeros(dim, dim);
            p.rhs_jacobian(0.3, &z, 0.7, &mut jac);
            let fd = fd_rhs_jacobian(&p, 0.3, &z, 0.7);
            for i in 0..dim {
                for j in 0..dim {
                    let scale = 1.0 + fd.at(i, j).abs();
                    assert!(
                        (jac.at(i, j) - fd.at(i, j)).abs() / scale <= 1e-6,
                        "free={free} ({i},{j}): dual {} vs fd {}",
                        jac.at(i, j),
                        fd.at(i, j)
                    );
                }
            }
            // Clairaut block: d(-T H_x)/d lambda = -(d(T f)/dx)^T
            let nx = 10;
            for i in 0..nx {
                for j in 0..nx {
                    let lhs = jac.at(nx + i, nx + j);
                    let rhs = -jac.at(j, i);
                    assert!(
                        (lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()),
                        "clairaut ({i},{j})"
                    );
                }
            }
            // mu-independent problem slice: the seeding model at fixed mu has
            // mu-dependence, so instead check the mu column is consistent
            let mut jmu = vec![0.0; dim];
            p.rhs_jacobian_mu(0.3, &z, 0.7, &mut jmu);
            let h = 1e-6;
            let mut plus = vec![0.0; dim];
            let mut minus = vec![0.0; dim];
            p.rhs(0.3, &z, 0.7 + h, &mut plus);
            p.rhs(0.3, &z, 0.7 - h, &mut minus);
            for i in 0..dim {
                let fd = (plus[i] - minus[i]) / (2.0 * h);
                assert!((jmu[i] - fd).abs() <= 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn mu_independent_problem_has_zero_mu_jacobian() {
        // fix every map to a constant: nothing depends on mu
        let mut model = disk_tracking_model();
        model.weights.alpha = crate::ocp::ScalarMap::Const(20.0);
        let p = NormalizedProblem::new(model, TimeSpec::fixed(0.0, 2.0));
        let dim = p.dim();
        let mut r = rng_stream(17);
        let z: Vec<f64> = (0..dim).map(|_| r()).collect();
        let mut jmu = vec![0.0; dim];
        p.rhs_jacobian_mu(0.4, &z, 0.3, &mut jmu);
        for v in &jmu {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn boundary_jacobians_match_finite_differences() {
        for (free_a, free_b) in [(false, false), (true, true)] {
            let model = disk_tracking_model();
            let p = NormalizedProblem::new(
                model,
                TimeSpec {
                    a: 0.0,
                    b: 2.0,
                    free_a,
                    free_b,
                },
            );
            let dim = p.dim();
            let mut r = rng_stream(23);
            let mut z0: Vec<f64> = (0..dim).map(|_| 0.4 * r()).collect();
            let z1: Vec<f64> = (0..dim).map(|_| 0.4 * r()).collect();
            if let Some(i) = p.layout().a_index() {
                z0[i] = 0.1;
            }
            if let Some(i) = p.layout().b_index() {
                z0[i] = 1.9;
            }
            let mut j0 = DMat::zeros(dim, dim);
            let mut j1 = DMat::zeros(dim, dim);
            let mut jmu = vec![0.0; dim];
            p.boundary_jacobians(&z0, &z1, 0.8, &mut j0, &mut j1, &mut jmu);

            let h = 1e-6;
            let mut plus = vec![0.0; dim];
            let mut minus = vec![0.0; dim];
            for j in 0..dim {
                let mut zp = z0.clone();
                zp[j] += h;
                let mut zm = z0.clone();
                zm[j] -= h;
                p.boundary(&zp, &z1, 0.8, &mut plus);
                p.boundary(&zm, &z1, 0.8, &mut minus);
                for i in 0..dim {
                    let fd = (plus[i] - minus[i]) / (2.0 * h);
                    assert!(
                        (j0.at(i, j) - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                        "j0 ({i},{j}) free=({free_a},{free_b})"
                    );
                }
                let mut zp = z1.clone();
                zp[j] += h;
                let mut zm = z1.clone();
                zm[j] -= h;
                p.boundary(&z0, &zp, 0.8, &mut plus);
                p.boundary(&z0, &zm, 0.8, &mut minus);
                for i in 0..dim {
                    let fd = (plus[i] - minus[i]) / (2.0 * h);
                    assert!(
                        (j1.at(i, j) - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                        "j1 ({i},{j})"
                    );
                }
            }
            // z1 trailing columns: the constant block is read from z0 only
            for i in 0..dim {
                for j in p.layout().constants_start()..dim {
                    assert_eq!(j1.at(i, j), 0.0);
                }
            }
            p.boundary(&z0, &z1, 0.8 + h, &mut plus);
            p.boundary(&z0, &z1, 0.8 - h, &mut minus);
            for i in 0..dim {
                let fd = (plus[i] - minus[i]) / (2.0 * h);
                assert!((jmu[i] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "jmu {i}");
            }
        }
    }

    #[test]
    fn degenerate_rest_point_is_an_exact_solution() {
        // disk seeding family at parameter 0: rest state, zero costate and
        // multipliers satisfy the boundary conditions and the costate rows of
        // the velocity to machine precision
        let model = disk_seed_model();
        let p = NormalizedProblem::new(model, TimeSpec::fixed(0.0, 2.0));
        let dim = p.dim();
        let mut z = vec![0.0; dim];
        for i in 0..4 {
            z[i] = -std::f64::consts::FRAC_PI_2;
        }
        let mut bc = vec![0.0; dim];
        p.boundary(&z, &z, 0.0, &mut bc);
        for v in &bc {
            assert!(v.abs() <= 1e-12, "bc residual {v:.3e}");
        }
        let mut vel = vec![0.0; dim];
        for s in [0.0, 0.33, 0.8, 1.0] {
            p.rhs(s, &z, 0.0, &mut vel);
            for v in &vel {
                assert!(v.abs() <= 1e-12, "velocity residual {v:.3e} at s={s}");
            }
        }

        // same for the ball seeding family
        let model = ball_seed_model(ObstacleBoundary::Sigmoid { epsilon: 0.01 }, 0.1);
        let p = NormalizedProblem::new(model.clone(), TimeSpec::fixed(0.0, 0.5));
        let dim = p.dim();
        let mut z = vec![0.0; dim];
        z[..3].copy_from_slice(&model.boundary.theta_start);
        z[6] = 1.0; // identity quaternion
        let mut bc = vec![0.0; dim];
        p.boundary(&z, &z, 0.0, &mut bc);
        for v in &bc {
            assert!(v.abs() <= 1e-12, "ball bc residual {v:.3e}");
        }
        let mut vel = vec![0.0; dim];
        p.rhs(0.5, &z, 0.0, &mut vel);
        for v in &vel {
            assert!(v.abs() <= 1e-12, "ball velocity residual {v:.3e}");
        }
    }
}
