//! Concrete problem builders: the rolling-disk and rolling-ball controlled
//! boundary-value problems, the standard experiment parameter sets, and the
//! small analytic test problems used to validate the continuation engines.

use crate::dynamics::{ball_mass_matrix, ball_rhs, disk_rhs, BallParams, DiskParams};
use crate::geometry::{
    body_frame_jacobian, body_vertical, body_vertical_jacobian,
    planar_velocity_jacobian, planar_velocity_matrix, quat_kinematic_jacobian,
    quat_kinematic_matrix, rotation_matrix, Vec3,
};
use crate::ocp::{
    CostWeights, DesiredPath, Obstacle, ObstacleBoundary, OcModel, PathShape, ScalarMap,
};
use crate::rails::{circular_rail, RailSet};
use crate::real::Real;

/// Boundary data of the disk problem. The GC position is defined, not
/// integrated: `z(t) = z_start - r (phi(t) - phi_start)`.
#[derive(Clone, Debug)]
pub struct DiskBoundary {
    pub theta_start: Vec<f64>,
    pub theta_dot_start: Vec<f64>,
    pub phi_start: f64,
    pub z_start: f64,
    pub z_dot_start: f64,
    /// Prescribed first spatial component of the CM (relative to the GC) at
    /// the final time.
    pub cm_target: f64,
    pub theta_dot_end: Vec<f64>,
    pub z_end: ScalarMap,
    pub z_dot_end: f64,
}

/// The rolling-disk trajectory-tracking problem.
#[derive(Clone, Debug)]
pub struct DiskModel {
    pub params: DiskParams,
    pub weights: CostWeights,
    pub boundary: DiskBoundary,
    pub path: DesiredPath,
}

impl DiskModel {
    pub fn n(&self) -> usize {
        self.params.n_control()
    }

    /// Kinematic reconstruction of the GC position from the roll angle.
    pub fn gc_position<T: Real>(&self, phi: T) -> T {
        T::from_f64(self.boundary.z_start)
            - (phi - T::from_f64(self.boundary.phi_start)).scale(self.params.radius)
    }

    /// First spatial component of the CM relative to the GC.
    fn cm_first_component<T: Real>(&self, theta: &[T], phi: T) -> T {
        let total = self.params.total_mass();
        let mut c1 = T::zero();
        let mut c3 = T::zero();
        for i in 0..=self.n() {
            let m_i = self.params.masses[i];
            if m_i == 0.0 {
                continue;
            }
            let th = if i == 0 { T::zero() } else { theta[i - 1] };
            let p = self.params.rails.eval(i, th).pos;
            c1 += p.0[0].scale(m_i / total);
            c3 += p.0[2].scale(m_i / total);
        }
        phi.cos() * c1 - phi.sin() * c3
    }
}

impl OcModel for DiskModel {
    fn state_dim(&self) -> usize {
        2 * self.n() + 2
    }
    fn control_dim(&self) -> usize {
        self.n()
    }
    fn n_initial(&self) -> usize {
        2 * self.n() + 2
    }
    fn n_final(&self) -> usize {
        self.n() + 3
    }

    fn dynamics<T: Real>(&self, t: T, x: &[T], u: &[T], _mu: T, out: &mut [T]) {
        if disk_rhs(&self.params, t, x, u, out).is_err() {
            out.fill(T::from_f64(f64::NAN));
        }
    }

    fn running_cost<T: Real>(&self, t: T, x: &[T], u: &[T], mu: T) -> T {
        let n = self.n();
        let phi = x[2 * n];
        let phi_dot = x[2 * n + 1];
        let track = self.gc_position(phi) - self.path.eval(t, mu);
        let r = self.params.radius;
        let mut cost = self.weights.alpha.eval(mu) * track * track.scale(0.5)
            + (phi_dot * phi_dot).scale(0.5 * self.weights.beta * r * r)
            + T::from_f64(self.weights.delta);
        for (i, g) in self.weights.gamma.iter().enumerate() {
            cost += g.eval(mu) * u[i] * u[i].scale(0.5);
        }
        cost
    }

    fn endpoint_cost<T: Real>(&self, a: T, _xa: &[T], b: T, _xb: &[T], _mu: T) -> T {
        let da = a - T::from_f64(self.weights.a_e);
        let db = b - T::from_f64(self.weights.b_e);
        da * da.scale(0.5 * self.weights.upsilon_a) + db * db.scale(0.5 * self.weights.upsilon_b)
    }

    fn initial_conditions<T: Real>(&self, _a: T, xa: &[T], _mu: T, out: &mut [T]) {
        let n = self.n();
        for i in 0..n {
            out[i] = xa[i] - T::from_f64(self.boundary.theta_start[i]);
            out[n + i] = xa[n + i] - T::from_f64(self.boundary.theta_dot_start[i]);
        }
        out[2 * n] = xa[2 * n] - T::from_f64(self.boundary.phi_start);
        out[2 * n + 1] =
            -xa[2 * n + 1].scale(self.params.radius) - T::from_f64(self.boundary.z_dot_start);
    }

    fn final_conditions<T: Real>(&self, _b: T, xb: &[T], mu: T, out: &mut [T]) {
        let n = self.n();
        let phi = xb[2 * n];
        out[0] = self.cm_first_component(&xb[..n], phi) - T::from_f64(self.boundary.cm_target);
        for i in 0..n {
            out[1 + i] = xb[n + i] - T::from_f64(self.boundary.theta_dot_end[i]);
        }
        out[1 + n] = self.gc_position(phi) - self.boundary.z_end.eval(mu);
        out[2 + n] =
            -xb[2 * n + 1].scale(self.params.radius) - T::from_f64(self.boundary.z_dot_end);
    }

    fn control_law<T: Real>(&self, _t: T, x: &[T], lam: &[T], mu: T, out: &mut [T]) {
        let n = self.n();
        let p = &self.params;
        let phi = x[2 * n];
        let (sin_phi, cos_phi) = (phi.sin(), phi.cos());
        let r = T::from_f64(p.radius);
        let lam_phi_dot = lam[2 * n + 1];

        // denominator of the angular equation
        let mut denom = T::from_f64(p.inertia);
        for i in 0..=n {
            let m_i = p.masses[i];
            if m_i == 0.0 {
                continue;
            }
            let th = if i == 0 { T::zero() } else { x[i - 1] };
            let rp = p.rails.eval(i, th);
            let e1 = r * sin_phi + rp.pos.0[0];
            let e3 = r * cos_phi + rp.pos.0[2];
            denom += (e1 * e1 + e3 * e3).scale(m_i);
        }
        for i in 1..=n {
            let rp = p.rails.eval(i, x[i - 1]);
            let e1 = r * sin_phi + rp.pos.0[0];
            let e3 = r * cos_phi + rp.pos.0[2];
            let lever = (e3 * rp.d1.0[0] - e1 * rp.d1.0[2]).scale(p.masses[i]);
            let gamma = self.weights.gamma[i - 1].eval(mu);
            out[i - 1] = -(lam[n + i - 1] + lam_phi_dot * lever / denom) / gamma;
        }
    }

    fn grad_x<T: Real>(&self, t: T, x: &[T], lam: &[T], u: &[T], mu: T, out: &mut [T]) {
        let n = self.n();
        let p = &self.params;
        let phi = x[2 * n];
        let phi_dot = x[2 * n + 1];
        let (sin_phi, cos_phi) = (phi.sin(), phi.cos());
        let r = T::from_f64(p.radius);
        let g = T::from_f64(p.gravity);
        let lam_phi = lam[2 * n];
        let lam_phi_dot = lam[2 * n + 1];
        let g_r_term = g + r * phi_dot * phi_dot;

        // assemble N, D, and the phi / phi-dot sums in one pass
        let mut numer = T::from_f64(-p.radius * p.external_force);
        let mut denom = T::from_f64(p.inertia);
        let mut dn_dphi = T::zero();
        let mut dd_dphi = T::zero();
        let mut dn_dphidot = T::zero();
        for i in 0..=n {
            let m_i = p.masses[i];
            if m_i == 0.0 {
                continue;
            }
            let (th, thd, acc) = if i == 0 {
                (T::zero(), T::zero(), T::zero())
            } else {
                (x[i - 1], x[n + i - 1], u[i - 1])
            };
            let rp = p.rails.eval(i, th);
            let (z1, z3) = (rp.pos.0[0], rp.pos.0[2]);
            let (d1, d3) = (rp.d1.0[0], rp.d1.0[2]);
            let (dd1, dd3) = (rp.d2.0[0], rp.d2.0[2]);
            let e1 = r * sin_phi + z1;
            let e3 = r * cos_phi + z3;
            let swirl1 = -(phi_dot + phi_dot) * thd * d3 + thd * thd * dd1 + acc * d1;
            let swirl3 = (phi_dot + phi_dot) * thd * d1 + thd * thd * dd3 + acc * d3;

            numer += (g_r_term * (z3 * sin_phi - z1 * cos_phi) + e3 * swirl1 - e1 * swirl3)
                .scale(m_i);
            denom += (e1 * e1 + e3 * e3).scale(m_i);
            dn_dphi += (g_r_term * (z3 * cos_phi + z1 * sin_phi)
                - r * (sin_phi * swirl1 + cos_phi * swirl3))
                .scale(m_i);
            dd_dphi += (r * (z1 * cos_phi - z3 * sin_phi)).scale(2.0 * m_i);
            dn_dphidot += ((r * phi_dot) * (z3 * sin_phi - z1 * cos_phi)
                - thd * (e3 * d3 + e1 * d1))
                .scale(2.0 * m_i);
        }
        let inv_d = T::one() / denom;

        // per-control-rail partials
        for i in 1..=n {
            let m_i = p.masses[i];
            let th = x[i - 1];
            let thd = x[n + i - 1];
            let acc = u[i - 1];
            let rp = p.rails.eval(i, th);
            let (z1, z3) = (rp.pos.0[0], rp.pos.0[2]);
            let (d1, d3) = (rp.d1.0[0], rp.d1.0[2]);
            let (dd1, dd3) = (rp.d2.0[0], rp.d2.0[2]);
            let (d3_1, d3_3) = (rp.d3.0[0], rp.d3.0[2]);
            let e1 = r * sin_phi + z1;
            let e3 = r * cos_phi + z3;
            let swirl1 = -(phi_dot + phi_dot) * thd * d3 + thd * thd * dd1 + acc * d1;
            let swirl3 = (phi_dot + phi_dot) * thd * d1 + thd * thd * dd3 + acc * d3;
            let dswirl1 = -(phi_dot + phi_dot) * thd * dd3 + thd * thd * d3_1 + acc * dd1;
            let dswirl3 = (phi_dot + phi_dot) * thd * dd1 + thd * thd * d3_3 + acc * dd3;

            let dk_dth = g_r_term * (d3 * sin_phi - d1 * cos_phi)
                + d3 * swirl1
                + e3 * dswirl1
                - d1 * swirl3
                - e1 * dswirl3;
            let dp_dth = (e1 * d1 + e3 * d3).scale(2.0);
            let dkappa_dth = (denom * dk_dth - numer * dp_dth).scale(m_i) * inv_d * inv_d;
            out[i - 1] = lam_phi_dot * dkappa_dth;

            let dkappa_dthd = ((e3 * (-phi_dot * d3 + thd * dd1)
                - e1 * (phi_dot * d1 + thd * dd3))
                .scale(2.0 * m_i))
                * inv_d;
            out[n + i - 1] = lam[i - 1] + lam_phi_dot * dkappa_dthd;
        }

        // phi row: tracking penalty plus the angular-equation partial
        let track = self.gc_position(phi) - self.path.eval(t, mu);
        let alpha = self.weights.alpha.eval(mu);
        let dkappa_dphi = (denom * dn_dphi - numer * dd_dphi) * inv_d * inv_d;
        out[2 * n] = -(alpha * track).scale(p.radius) + lam_phi_dot * dkappa_dphi;

        // phi-dot row
        let dkappa_dphidot = dn_dphidot * inv_d;
        out[2 * n + 1] = phi_dot.scale(self.weights.beta * p.radius * p.radius)
            + lam_phi
            + lam_phi_dot * dkappa_dphidot;
    }

    fn control_weights(&self, mu: f64) -> Vec<f64> {
        self.weights.gamma.iter().map(|g| g.eval(mu)).collect()
    }
}

/// Boundary data of the ball problem.
#[derive(Clone, Debug)]
pub struct BallBoundary {
    pub theta_start: Vec<f64>,
    pub theta_dot_start: Vec<f64>,
    pub quat_start: [f64; 4],
    pub omega_start: [f64; 3],
    pub z_start: [f64; 2],
    /// Prescribed planar CM position (relative to the GC) at the final time.
    pub cm_target: [f64; 2],
    pub theta_dot_end: Vec<f64>,
    pub omega_end: [f64; 3],
    pub z_end: [ScalarMap; 2],
}

/// The rolling-ball tracking / obstacle-avoidance problem.
#[derive(Clone, Debug)]
pub struct BallModel {
    pub params: BallParams,
    pub weights: CostWeights,
    pub boundary: BallBoundary,
    pub path: [DesiredPath; 2],
    pub obstacles: Vec<Obstacle>,
}

impl BallModel {
    pub fn n(&self) -> usize {
        self.params.n_control()
    }

    /// Planar CM position relative to the GC, rotated into the spatial frame.
    fn cm_planar<T: Real>(&self, theta: &[T], q: [T; 4]) -> [T; 2] {
        let total = self.params.total_mass();
        let mut cm = Vec3::zeros();
        for i in 0..=self.n() {
            let m_i = self.params.masses[i];
            if m_i == 0.0 {
                continue;
            }
            let th = if i == 0 { T::zero() } else { theta[i - 1] };
            cm = cm.add(self.params.rails.eval(i, th).pos.scale(T::from_f64(m_i / total)));
        }
        let spatial = rotation_matrix(q).mul_vec(cm);
        [spatial.0[0], spatial.0[1]]
    }
}

impl OcModel for BallModel {
    fn state_dim(&self) -> usize {
        2 * self.n() + 9
    }
    fn control_dim(&self) -> usize {
        self.n()
    }
    fn n_initial(&self) -> usize {
        2 * self.n() + 9
    }
    fn n_final(&self) -> usize {
        self.n() + 7
    }

    fn dynamics<T: Real>(&self, t: T, x: &[T], u: &[T], _mu: T, out: &mut [T]) {
        if ball_rhs(&self.params, t, x, u, out).is_err() {
            out.fill(T::from_f64(f64::NAN));
        }
    }

    fn running_cost<T: Real>(&self, t: T, x: &[T], u: &[T], mu: T) -> T {
        let n = self.n();
        let q = [x[2 * n], x[2 * n + 1], x[2 * n + 2], x[2 * n + 3]];
        let omega = Vec3::new(x[2 * n + 4], x[2 * n + 5], x[2 * n + 6]);
        let z = [x[2 * n + 7], x[2 * n + 8]];
        let r = self.params.radius;

        let mut cost = T::from_f64(self.weights.delta);
        let alpha = self.weights.alpha.eval(mu);
        for c in 0..2 {
            let e = z[c] - self.path[c].eval(t, mu);
            cost += alpha * e * e.scale(0.5);
        }
        if self.weights.beta != 0.0 {
            let pv = planar_velocity_matrix(q);
            for row in pv {
                let v = row[0] * omega.0[0] + row[1] * omega.0[1] + row[2] * omega.0[2];
                cost += v * v.scale(0.5 * self.weights.beta * r * r);
            }
        }
        for (i, gm) in self.weights.gamma.iter().enumerate() {
            cost += gm.eval(mu) * u[i] * u[i].scale(0.5);
        }
        for obs in &self.obstacles {
            cost += obs.potential(z, mu);
        }
        cost
    }

    fn endpoint_cost<T: Real>(&self, a: T, _xa: &[T], b: T, _xb: &[T], _mu: T) -> T {
        let da = a - T::from_f64(self.weights.a_e);
        let db = b - T::from_f64(self.weights.b_e);
        da * da.scale(0.5 * self.weights.upsilon_a) + db * db.scale(0.5 * self.weights.upsilon_b)
    }

    fn initial_conditions<T: Real>(&self, _a: T, xa: &[T], _mu: T, out: &mut [T]) {
        let n = self.n();
        for i in 0..n {
            out[i] = xa[i] - T::from_f64(self.boundary.theta_start[i]);
            out[n + i] = xa[n + i] - T::from_f64(self.boundary.theta_dot_start[i]);
        }
        for i in 0..4 {
            out[2 * n + i] = xa[2 * n + i] - T::from_f64(self.boundary.quat_start[i]);
        }
        for i in 0..3 {
            out[2 * n + 4 + i] = xa[2 * n + 4 + i] - T::from_f64(self.boundary.omega_start[i]);
        }
        for i in 0..2 {
            out[2 * n + 7 + i] = xa[2 * n + 7 + i] - T::from_f64(self.boundary.z_start[i]);
        }
    }

    fn final_conditions<T: Real>(&self, _b: T, xb: &[T], mu: T, out: &mut [T]) {
        let n = self.n();
        let q = [xb[2 * n], xb[2 * n + 1], xb[2 * n + 2], xb[2 * n + 3]];
        let cm = self.cm_planar(&xb[..n], q);
        out[0] = cm[0] - T::from_f64(self.boundary.cm_target[0]);
        out[1] = cm[1] - T::from_f64(self.boundary.cm_target[1]);
        for i in 0..n {
            out[2 + i] = xb[n + i] - T::from_f64(self.boundary.theta_dot_end[i]);
        }
        for i in 0..3 {
            out[2 + n + i] = xb[2 * n + 4 + i] - T::from_f64(self.boundary.omega_end[i]);
        }
        for i in 0..2 {
            out[5 + n + i] = xb[2 * n + 7 + i] - self.boundary.z_end[i].eval(mu);
        }
    }

    fn control_law<T: Real>(&self, _t: T, x: &[T], lam: &[T], mu: T, out: &mut [T]) {
        let n = self.n();
        let p = &self.params;
        let q = [x[2 * n], x[2 * n + 1], x[2 * n + 2], x[2 * n + 3]];
        let gamma_up = body_vertical(q);
        let r = T::from_f64(p.radius);
        let lam_omega = Vec3::new(lam[2 * n + 4], lam[2 * n + 5], lam[2 * n + 6]);
        let mass = ball_mass_matrix(p, &x[..n], q);
        // mass matrix is symmetric, so this gives lam_omega^T M^{-1} (.)
        let w = match mass.solve(lam_omega) {
            Some(w) => w,
            None => {
                out.fill(T::from_f64(f64::NAN));
                return;
            }
        };
        for i in 1..=n {
            let rp = p.rails.eval(i, x[i - 1]);
            let s_i = gamma_up.scale(r).add(rp.pos);
            let lever = s_i.cross(rp.d1).scale(T::from_f64(p.masses[i]));
            let gm = self.weights.gamma[i - 1].eval(mu);
            out[i - 1] = -(lam[n + i - 1] + w.dot(lever)) / gm;
        }
    }

    fn grad_x<T: Real>(&self, t: T, x: &[T], lam: &[T], u: &[T], mu: T, out: &mut [T]) {
        let n = self.n();
        let p = &self.params;
        let q = [x[2 * n], x[2 * n + 1], x[2 * n + 2], x[2 * n + 3]];
        let omega = Vec3::new(x[2 * n + 4], x[2 * n + 5], x[2 * n + 6]);
        let z = [x[2 * n + 7], x[2 * n + 8]];
        let lam_q = [lam[2 * n], lam[2 * n + 1], lam[2 * n + 2], lam[2 * n + 3]];
        let lam_omega = Vec3::new(lam[2 * n + 4], lam[2 * n + 5], lam[2 * n + 6]);
        let lam_z = [lam[2 * n + 7], lam[2 * n + 8]];
        let r = T::from_f64(p.radius);
        let g = T::from_f64(p.gravity);
        let gamma_up = body_vertical(q);

        let mass = ball_mass_matrix(p, &x[..n], q);
        // forcing bracket and angular acceleration
        let inertia: Vec3<T> = Vec3::from_f64(p.inertia);
        let i_omega = Vec3::new(
            inertia.0[0] * omega.0[0],
            inertia.0[1] * omega.0[1],
            inertia.0[2] * omega.0[2],
        );
        let has_force = p.external_force.0 != [0.0; 3];
        let body_force = if has_force {
            rotation_matrix(q).tr_mul_vec(Vec3::from_f64(p.external_force))
        } else {
            Vec3::zeros()
        };
        let mut forcing = omega.cross(i_omega);
        if has_force {
            forcing = forcing.add(body_force.cross(gamma_up).scale(r));
        }
        struct RailData<T> {
            mass: f64,
            s: Vec3<T>,
            pos: Vec3<T>,
            d1: Vec3<T>,
            d2: Vec3<T>,
            d3: Vec3<T>,
            theta_dot: T,
            accel: T,
            /// `Omega x (Omega x zeta + 2 theta_dot zeta') + theta_dot^2 zeta'' + accel zeta'`
            swirl: Vec3<T>,
        }
        let mut rails: Vec<RailData<T>> = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let m_i = p.masses[i];
            let (th, thd, acc) = if i == 0 {
                (T::zero(), T::zero(), T::zero())
            } else {
                (x[i - 1], x[n + i - 1], u[i - 1])
            };
            let rp = p.rails.eval(i, th);
            let s = gamma_up.scale(r).add(rp.pos);
            let swirl = omega
                .cross(omega.cross(rp.pos).add(rp.d1.scale(thd + thd)))
                .add(rp.d2.scale(thd * thd))
                .add(rp.d1.scale(acc));
            if m_i != 0.0 {
                forcing = forcing.add(s.cross(gamma_up.scale(g).add(swirl)).scale(T::from_f64(m_i)));
            }
            rails.push(RailData {
                mass: m_i,
                s,
                pos: rp.pos,
                d1: rp.d1,
                d2: rp.d2,
                d3: rp.d3,
                theta_dot: thd,
                accel: acc,
                swirl,
            });
        }
        let nan_fill = |out: &mut [T]| out.fill(T::from_f64(f64::NAN));
        let kappa = match mass.solve(forcing) {
            Some(k) => k,
            None => return nan_fill(out),
        };
        // mass matrix is symmetric: w^T = lam_omega^T M^{-1}
        let w = match mass.solve(lam_omega) {
            Some(w) => w,
            None => return nan_fill(out),
        };

        // w . Sym(hat(a) hat(b)) kappa without forming the matrices
        let sym_term = |a: Vec3<T>, b: Vec3<T>| -> T {
            (w.dot(a.cross(b.cross(kappa))) + w.dot(b.cross(a.cross(kappa)))).scale(0.5)
        };

        // theta and theta-dot rows
        for i in 1..=n {
            let rd = &rails[i];
            let m_i = rd.mass;
            let dswirl = omega
                .cross(omega.cross(rd.d1).add(rd.d2.scale(rd.theta_dot + rd.theta_dot)))
                .add(rd.d3.scale(rd.theta_dot * rd.theta_dot))
                .add(rd.d2.scale(rd.accel));
            let bracket = rd
                .d1
                .cross(gamma_up.scale(g).add(rd.swirl))
                .add(rd.s.cross(dswirl));
            out[i - 1] = (w.dot(bracket) - sym_term(rd.s, rd.d1).scale(2.0)).scale(m_i);

            let dswirl_thd = rd.s.cross(
                omega
                    .cross(rd.d1)
                    .add(rd.d2.scale(rd.theta_dot))
                    .scale(T::from_f64(2.0)),
            );
            out[n + i - 1] = lam[i - 1] + w.dot(dswirl_thd).scale(m_i);
        }

        // quaternion rows
        let pv = planar_velocity_matrix(q);
        let pv_omega = [
            pv[0][0] * omega.0[0] + pv[0][1] * omega.0[1] + pv[0][2] * omega.0[2],
            pv[1][0] * omega.0[0] + pv[1][1] * omega.0[1] + pv[1][2] * omega.0[2],
        ];
        let beta_r2 = self.weights.beta * p.radius * p.radius;
        // r [beta r (Qt Omega) + lam_z]
        let planar_mult = [
            (pv_omega[0].scale(beta_r2 / p.radius) + lam_z[0]).scale(p.radius),
            (pv_omega[1].scale(beta_r2 / p.radius) + lam_z[1]).scale(p.radius),
        ];
        let dpv = planar_velocity_jacobian(q, omega);
        let dqk = quat_kinematic_jacobian(omega);
        let dgamma = body_vertical_jacobian(q);
        let dforce = if has_force {
            body_frame_jacobian(q, Vec3::from_f64(p.external_force))
        } else {
            [[T::zero(); 4]; 3]
        };
        // common = sum_i m_i (-g zeta_i + r swirl_i) - r body_force
        let mut common = body_force.scale(-r);
        for rd in &rails {
            if rd.mass == 0.0 {
                continue;
            }
            common = common.add(rd.pos.scale(-g).add(rd.swirl.scale(r)).scale(T::from_f64(rd.mass)));
        }
        for j in 0..4 {
            let dg_j = Vec3::new(dgamma[0][j], dgamma[1][j], dgamma[2][j]);
            let mut acc = dg_j.cross(common).dot(w);
            if has_force {
                let df_j = Vec3::new(dforce[0][j], dforce[1][j], dforce[2][j]);
                acc += df_j.cross(gamma_up).dot(w).scale(p.radius);
            }
            let mut sym_sum = T::zero();
            for rd in &rails {
                if rd.mass == 0.0 {
                    continue;
                }
                sym_sum += sym_term(rd.s, dg_j).scale(rd.mass);
            }
            acc -= sym_sum.scale(2.0 * p.radius);
            out[2 * n + j] = planar_mult[0] * dpv[0][j]
                + planar_mult[1] * dpv[1][j]
                + (lam_q[0] * dqk[0][j]
                    + lam_q[1] * dqk[1][j]
                    + lam_q[2] * dqk[2][j]
                    + lam_q[3] * dqk[3][j])
                    .scale(0.5)
                + acc;
        }

        // omega rows
        let qk = quat_kinematic_matrix(q);
        for j in 0..3 {
            let mut e_j = Vec3::zeros();
            e_j.0[j] = T::one();
            let i_ej = Vec3::new(
                inertia.0[0] * e_j.0[0],
                inertia.0[1] * e_j.0[1],
                inertia.0[2] * e_j.0[2],
            );
            let mut db = e_j.cross(i_omega).add(omega.cross(i_ej));
            for rd in &rails {
                if rd.mass == 0.0 {
                    continue;
                }
                let inner = e_j
                    .cross(omega.cross(rd.pos).add(rd.d1.scale(rd.theta_dot + rd.theta_dot)))
                    .add(omega.cross(e_j.cross(rd.pos)));
                db = db.add(rd.s.cross(inner).scale(T::from_f64(rd.mass)));
            }
            out[2 * n + 4 + j] = planar_mult[0] * pv[0][j]
                + planar_mult[1] * pv[1][j]
                + (lam_q[0] * qk[0][j]
                    + lam_q[1] * qk[1][j]
                    + lam_q[2] * qk[2][j]
                    + lam_q[3] * qk[3][j])
                    .scale(0.5)
                + w.dot(db);
        }

        // planar position rows
        let alpha = self.weights.alpha.eval(mu);
        for c in 0..2 {
            out[2 * n + 7 + c] = alpha * (z[c] - self.path[c].eval(t, mu));
        }
        for obs in &self.obstacles {
            let grad = obs.potential_grad(z, mu);
            out[2 * n + 7] += grad[0];
            out[2 * n + 8] += grad[1];
        }
    }

    fn control_weights(&self, mu: f64) -> Vec<f64> {
        self.weights.gamma.iter().map(|g| g.eval(mu)).collect()
    }
}

// --- standard experiment parameter sets ---

const E1: Vec3<f64> = Vec3([1.0, 0.0, 0.0]);
const E3: Vec3<f64> = Vec3([0.0, 0.0, 1.0]);

/// Disk used by the trajectory-tracking experiments: four concentric rails in
/// the rolling plane, unit masses, unit radius and gravity.
pub fn disk_tracking_params() -> DiskParams {
    let radii = [0.9, 19.0 / 30.0, 11.0 / 30.0, 0.1];
    DiskParams {
        masses: vec![1.0; 5],
        radius: 1.0,
        inertia: 1.0,
        gravity: 1.0,
        rails: RailSet::new(
            Vec3::zeros(),
            radii
                .iter()
                .map(|&r| circular_rail(r, Vec3::zeros(), E1, E3).unwrap())
                .collect(),
        ),
        external_force: 0.0,
    }
}

/// Start configuration of the tracking disk: all control masses directly
/// below the GC, everything at rest.
pub fn disk_tracking_boundary(z_end: ScalarMap) -> DiskBoundary {
    DiskBoundary {
        theta_start: vec![-std::f64::consts::FRAC_PI_2; 4],
        theta_dot_start: vec![0.0; 4],
        phi_start: 0.0,
        z_start: 0.0,
        z_dot_start: 0.0,
        cm_target: 0.0,
        theta_dot_end: vec![0.0; 4],
        z_end,
        z_dot_end: 0.0,
    }
}

/// The trajectory-tracking disk problem with the tracking weight ramped by
/// the continuation parameter.
pub fn disk_tracking_model() -> DiskModel {
    let alpha = ScalarMap::Affine {
        mu0: 0.95,
        v0: 20.0,
        mu1: 1e-5,
        v1: 5000.0,
    };
    DiskModel {
        params: disk_tracking_params(),
        weights: CostWeights {
            alpha,
            beta: 0.0,
            gamma: vec![ScalarMap::Const(0.1); 4],
            delta: 0.0,
            upsilon_a: 0.0,
            upsilon_b: 0.0,
            a_e: 0.0,
            b_e: 2.0,
        },
        boundary: disk_tracking_boundary(ScalarMap::Const(1.0)),
        path: DesiredPath {
            start: 0.0,
            end: ScalarMap::Const(1.0),
            t_start: 0.0,
            t_end: 2.0,
            epsilon: 0.01,
            shape: PathShape::SinusoidRamp { half_turns: 4.5 },
        },
    }
}

/// Seeding family for the tracking disk: the parameter moves the final
/// position (and with it the desired path) from the rest configuration to
/// the experiment target, holding the tracking weight at its start value.
pub fn disk_seed_model() -> DiskModel {
    let mut m = disk_tracking_model();
    let z_end = ScalarMap::Affine {
        mu0: 0.0,
        v0: 0.0,
        mu1: 1.0,
        v1: 1.0,
    };
    m.weights.alpha = ScalarMap::Const(20.0);
    m.boundary.z_end = z_end;
    m.path.end = z_end;
    m
}

/// Ball used by the obstacle-avoidance experiments: three circular rails with
/// normals along the body axes. The in-plane phases are chosen so the
/// standard start configuration puts the system CM on the vertical axis,
/// which the seeding strategy requires.
pub fn ball_obstacle_params() -> BallParams {
    let theta_start = [0.0, 2.0369, 0.7044];
    let radii = [0.95, 0.9, 0.85];
    // balance: r2 sin(th2+x2) = -r3 cos(th3), r1 cos(th1+x1) = -r3 sin(th3)
    let chi3 = 0.0f64;
    let c3 = (theta_start[2] + chi3).cos();
    let s3 = (theta_start[2] + chi3).sin();
    let chi1 = (-radii[2] * s3 / radii[0]).acos() - theta_start[0];
    let chi2 = (-radii[2] * c3 / radii[1]).asin() - theta_start[1];

    let rail1 = circular_rail(
        radii[0],
        Vec3::zeros(),
        Vec3::new(0.0, chi1.cos(), chi1.sin()),
        Vec3::new(0.0, -chi1.sin(), chi1.cos()),
    )
    .unwrap();
    let rail2 = circular_rail(
        radii[1],
        Vec3::zeros(),
        Vec3::new(chi2.sin(), 0.0, chi2.cos()),
        Vec3::new(chi2.cos(), 0.0, -chi2.sin()),
    )
    .unwrap();
    let rail3 = circular_rail(
        radii[2],
        Vec3::zeros(),
        Vec3::new(chi3.cos(), chi3.sin(), 0.0),
        Vec3::new(-chi3.sin(), chi3.cos(), 0.0),
    )
    .unwrap();
    BallParams {
        masses: vec![1.0; 4],
        radius: 1.0,
        inertia: Vec3::new(1.0, 1.0, 1.0),
        gravity: 1.0,
        rails: RailSet::new(Vec3::zeros(), vec![rail1, rail2, rail3]),
        external_force: Vec3::zeros(),
    }
}

pub fn ball_obstacle_boundary(z_end: [ScalarMap; 2]) -> BallBoundary {
    BallBoundary {
        theta_start: vec![0.0, 2.0369, 0.7044],
        theta_dot_start: vec![0.0; 3],
        quat_start: [1.0, 0.0, 0.0, 0.0],
        omega_start: [0.0; 3],
        z_start: [0.0, 0.0],
        cm_target: [0.0, 0.0],
        theta_dot_end: vec![0.0; 3],
        omega_end: [0.0; 3],
        z_end,
    }
}

fn ball_paths(z_end: [ScalarMap; 2]) -> [DesiredPath; 2] {
    z_end.map(|end| DesiredPath {
        start: 0.0,
        end,
        t_start: 0.0,
        t_end: 0.5,
        epsilon: 0.01,
        shape: PathShape::CubicRest,
    })
}

/// The obstacle-avoidance ball problem with obstacle heights ramped by the
/// continuation parameter.
pub fn ball_obstacle_model(boundary: ObstacleBoundary) -> BallModel {
    let height = ScalarMap::Affine {
        mu0: 0.95,
        v0: 0.1,
        mu1: 1e-5,
        v1: 1000.0,
    };
    let z_end = [ScalarMap::Const(1.0), ScalarMap::Const(1.0)];
    BallModel {
        params: ball_obstacle_params(),
        weights: CostWeights {
            alpha: ScalarMap::Const(20.0),
            beta: 0.0,
            gamma: vec![ScalarMap::Const(10.0); 3],
            delta: 0.0,
            upsilon_a: 0.0,
            upsilon_b: 0.0,
            a_e: 0.0,
            b_e: 0.5,
        },
        boundary: ball_obstacle_boundary(z_end),
        path: ball_paths(z_end),
        obstacles: vec![
            Obstacle {
                center: [0.3, 0.3],
                radius: 0.2,
                height,
                boundary,
            },
            Obstacle {
                center: [0.7, 0.7],
                radius: 0.2,
                height,
                boundary,
            },
        ],
    }
}

/// Seeding family for the ball: the parameter moves the final position, the
/// desired path, and the obstacle heights from the degenerate rest problem to
/// the experiment configuration at its continuation start.
pub fn ball_seed_model(boundary: ObstacleBoundary, h_start: f64) -> BallModel {
    let mut m = ball_obstacle_model(boundary);
    let z_end = [
        ScalarMap::Affine {
            mu0: 0.0,
            v0: 0.0,
            mu1: 1.0,
            v1: 1.0,
        },
        ScalarMap::Affine {
            mu0: 0.0,
            v0: 0.0,
            mu1: 1.0,
            v1: 1.0,
        },
    ];
    m.boundary.z_end = z_end;
    m.path = ball_paths(z_end);
    for obs in &mut m.obstacles {
        obs.height = ScalarMap::Affine {
            mu0: 0.0,
            v0: 0.0,
            mu1: 1.0,
            v1: h_start,
        };
    }
    m
}

/// Second-stage schedule of the cutoff-obstacle experiment: obstacle heights
/// held, control weights ramped down by the continuation parameter.
pub fn ball_gamma_stage2_model() -> BallModel {
    let mut m = ball_obstacle_model(ObstacleBoundary::QuarticCutoff);
    m.weights.alpha = ScalarMap::Const(30.0);
    m.weights.gamma = vec![
        ScalarMap::Affine {
            mu0: 0.95,
            v0: 10.0,
            mu1: 1e-5,
            v1: -1000.0,
        };
        3
    ];
    for obs in &mut m.obstacles {
        obs.height = ScalarMap::Const(9.1e14);
    }
    m
}

// --- analytic test curves for the continuation engines ---

use crate::continuation::ParamBvp;
use crate::linalg::DMat;

/// `y' = 0` with boundary condition `y(0)^2 + lam^2 = 1`: the solution curve
/// is the unit circle, with folds at `lam = +-1`.
#[derive(Clone, Copy, Debug)]
pub struct CircleCurve;

impl ParamBvp for CircleCurve {
    fn dim(&self) -> usize {
        1
    }
    fn rhs(&self, _s: f64, _y: &[f64], _lam: f64, out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn rhs_jac_y(&self, _s: f64, _y: &[f64], _lam: f64, out: &mut DMat) {
        out.fill(0.0);
    }
    fn rhs_jac_lam(&self, _s: f64, _y: &[f64], _lam: f64, out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn bc(&self, ya: &[f64], _yb: &[f64], lam: f64, out: &mut [f64]) {
        out[0] = ya[0] * ya[0] + lam * lam - 1.0;
    }
    fn bc_jacs(
        &self,
        ya: &[f64],
        _yb: &[f64],
        lam: f64,
        ja: &mut DMat,
        jb: &mut DMat,
        jlam: &mut [f64],
    ) {
        ja.set(0, 0, 2.0 * ya[0]);
        jb.fill(0.0);
        jlam[0] = 2.0 * lam;
    }
}

/// The Bratu family `y'' + lam e^y = 0`, `y(0) = y(1) = 0`, as a first-order
/// system. Its fold sits near `lam = 3.51383`.
#[derive(Clone, Copy, Debug)]
pub struct BratuCurve;

impl ParamBvp for BratuCurve {
    fn dim(&self) -> usize {
        2
    }
    fn rhs(&self, _s: f64, y: &[f64], lam: f64, out: &mut [f64]) {
        out[0] = y[1];
        out[1] = -lam * y[0].exp();
    }
    fn rhs_jac_y(&self, _s: f64, y: &[f64], lam: f64, out: &mut DMat) {
        out.fill(0.0);
        out.set(0, 1, 1.0);
        out.set(1, 0, -lam * y[0].exp());
    }
    fn rhs_jac_lam(&self, _s: f64, y: &[f64], _lam: f64, out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = -y[0].exp();
    }
    fn bc(&self, ya: &[f64], yb: &[f64], _lam: f64, out: &mut [f64]) {
        out[0] = ya[0];
        out[1] = yb[0];
    }
    fn bc_jacs(
        &self,
        _ya: &[f64],
        _yb: &[f64],
        _lam: f64,
        ja: &mut DMat,
        jb: &mut DMat,
        jlam: &mut [f64],
    ) {
        ja.fill(0.0);
        jb.fill(0.0);
        ja.set(0, 0, 1.0);
        jb.set(1, 0, 1.0);
        jlam.fill(0.0);
    }
}

/// Residual report of a candidate extremal against its normalized problem.
#[derive(Clone, Debug)]
pub struct ResidualReport {
    /// Dense-sampled normalized defect of the interpolant.
    pub max_ode_defect: f64,
    /// Max-norm of the boundary residual.
    pub max_bc_residual: f64,
    /// Largest stationarity violation of the control over dense samples.
    pub max_control_gradient: f64,
    /// `max |q| - 1` over the mesh for the ball, absent for the disk.
    pub versor_drift: Option<f64>,
}

/// Layout hook for post-hoc checks that need to find the versor block.
pub trait StateBlocks {
    /// Offset of a 4-component unit-quaternion block in the state, if any.
    fn versor_offset(&self) -> Option<usize> {
        None
    }
}

impl StateBlocks for DiskModel {}
impl StateBlocks for BallModel {
    fn versor_offset(&self) -> Option<usize> {
        Some(2 * self.n())
    }
}

/// Verify the stationarity conditions on a solved mesh: ODE defect, boundary
/// residual, control-gradient residual, and versor drift where applicable.
pub fn extremal_residuals<M: OcModel + StateBlocks>(
    problem: &crate::tpbvp::NormalizedProblem<M>,
    solution: &crate::bvp::MeshSolution,
    mu: f64,
) -> ResidualReport {
    use crate::continuation::{raw_residuals, CurvePoint};
    let point = CurvePoint {
        y: solution.clone(),
        lam: mu,
    };
    let (max_ode_defect, max_bc_residual) = raw_residuals(problem, &point);

    let nx = problem.model.state_dim();
    let nu = problem.model.control_dim();
    let mut max_hu: f64 = 0.0;
    let mut drift: Option<f64> = problem.model.versor_offset().map(|_| 0.0);
    let mesh = solution.mesh();
    let mut zbuf = vec![0.0; solution.dim()];
    let mut u = vec![0.0; nu];
    for i in 0..mesh.len() {
        let samples = if i + 1 < mesh.len() { 3 } else { 1 };
        for k in 0..samples {
            let s = mesh[i] + (mesh.get(i + 1).unwrap_or(&mesh[i]) - mesh[i]) * k as f64 / 3.0;
            solution.eval_into(s, &mut zbuf);
            let t = problem.time.a + (problem.time.b - problem.time.a) * s;
            let x = &zbuf[..nx];
            let lam = &zbuf[nx..2 * nx];
            problem.model.control_law(t, x, lam, mu, &mut u);
            if u.iter().all(|v| v.is_finite()) {
                let grad = crate::ocp::control_gradient(&problem.model, t, x, lam, &u, mu);
                for g in grad {
                    max_hu = max_hu.max(g.abs());
                }
            }
            if let (Some(off), Some(d)) = (problem.model.versor_offset(), drift.as_mut()) {
                let q = &x[off..off + 4];
                let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
                *d = d.max((norm - 1.0).abs());
            }
        }
    }
    ResidualReport {
        max_ode_defect,
        max_bc_residual,
        max_control_gradient: max_hu,
        versor_drift: drift,
    }
}
