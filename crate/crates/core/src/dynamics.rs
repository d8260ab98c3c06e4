//! Uncontrolled equations of motion for the rolling disk and rolling ball
//! actuated by internal point masses on rails, plus a reference adaptive
//! Runge-Kutta integrator used for validation runs.
//!
//! State layouts (flat slices used by every generic kernel):
//!   disk: `[theta(n); theta_dot(n); phi; phi_dot]`
//!   ball: `[theta(n); theta_dot(n); q(4); omega(3); z(2)]`

use crate::geometry::{hat_squared, body_vertical, rotation_matrix, Mat3, Vec3};
use crate::rails::RailSet;
use crate::real::Real;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("degenerate inertia: denominator {denom} is not positive")]
    DegenerateInertia { denom: f64 },
    #[error("mass matrix is singular or nearly singular (cond estimate {cond:.3e})")]
    SingularMassMatrix { cond: f64 },
    #[error("integration step size underflow at t = {t} (stiffness?)")]
    StepUnderflow { t: f64 },
}

/// Parameters of the rolling disk. `masses[0]` is the static structure, and
/// `masses[1..]` pair with `rails.rails` in order.
#[derive(Clone, Debug)]
pub struct DiskParams {
    pub masses: Vec<f64>,
    pub radius: f64,
    pub inertia: f64,
    pub gravity: f64,
    pub rails: RailSet,
    /// First spatial component of the external force at the GC. Constant;
    /// zero in every shipped experiment.
    pub external_force: f64,
}

impl DiskParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.radius <= 0.0 {
            return Err(DynamicsError::InvalidParameter("radius must be positive"));
        }
        if self.inertia <= 0.0 {
            return Err(DynamicsError::InvalidParameter("inertia must be positive"));
        }
        if self.masses.iter().any(|&m| m < 0.0) {
            return Err(DynamicsError::InvalidParameter("masses must be nonnegative"));
        }
        if self.masses.len() != self.rails.n_control() + 1 {
            return Err(DynamicsError::InvalidParameter(
                "need one mass per rail plus the static structure",
            ));
        }
        Ok(())
    }

    pub fn n_control(&self) -> usize {
        self.rails.n_control()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n_control() + 2
    }
}

/// Parameters of the rolling ball; same mass/rail pairing as the disk.
#[derive(Clone, Debug)]
pub struct BallParams {
    pub masses: Vec<f64>,
    pub radius: f64,
    /// Principal moments of inertia of the static structure.
    pub inertia: Vec3<f64>,
    pub gravity: f64,
    pub rails: RailSet,
    /// Constant external force at the GC (spatial frame); zero in every
    /// shipped experiment.
    pub external_force: Vec3<f64>,
}

impl BallParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.radius <= 0.0 {
            return Err(DynamicsError::InvalidParameter("radius must be positive"));
        }
        if self.inertia.0.iter().any(|&d| d <= 0.0) {
            return Err(DynamicsError::InvalidParameter(
                "principal inertias must be positive",
            ));
        }
        if self.masses.iter().any(|&m| m < 0.0) {
            return Err(DynamicsError::InvalidParameter("masses must be nonnegative"));
        }
        if self.masses.len() != self.rails.n_control() + 1 {
            return Err(DynamicsError::InvalidParameter(
                "need one mass per rail plus the static structure",
            ));
        }
        Ok(())
    }

    pub fn n_control(&self) -> usize {
        self.rails.n_control()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n_control() + 9
    }
}

/// Disk state in named form; the solvers use the flat layout.
#[derive(Clone, Debug, PartialEq)]
pub struct DiskState {
    pub theta: Vec<f64>,
    pub theta_dot: Vec<f64>,
    pub phi: f64,
    pub phi_dot: f64,
}

impl DiskState {
    pub fn rest(theta: Vec<f64>, phi: f64) -> Self {
        let n = theta.len();
        DiskState {
            theta,
            theta_dot: vec![0.0; n],
            phi,
            phi_dot: 0.0,
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.theta.len() + 2);
        out.extend_from_slice(&self.theta);
        out.extend_from_slice(&self.theta_dot);
        out.push(self.phi);
        out.push(self.phi_dot);
        out
    }

    pub fn from_flat(n: usize, x: &[f64]) -> Self {
        DiskState {
            theta: x[..n].to_vec(),
            theta_dot: x[n..2 * n].to_vec(),
            phi: x[2 * n],
            phi_dot: x[2 * n + 1],
        }
    }
}

/// Ball state in named form.
#[derive(Clone, Debug, PartialEq)]
pub struct BallState {
    pub theta: Vec<f64>,
    pub theta_dot: Vec<f64>,
    pub quat: [f64; 4],
    pub omega: Vec3<f64>,
    pub z: [f64; 2],
}

impl BallState {
    pub fn rest(theta: Vec<f64>) -> Self {
        let n = theta.len();
        BallState {
            theta,
            theta_dot: vec![0.0; n],
            quat: [1.0, 0.0, 0.0, 0.0],
            omega: Vec3::zeros(),
            z: [0.0, 0.0],
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.theta.len() + 9);
        out.extend_from_slice(&self.theta);
        out.extend_from_slice(&self.theta_dot);
        out.extend_from_slice(&self.quat);
        out.extend_from_slice(&self.omega.0);
        out.extend_from_slice(&self.z);
        out
    }

    pub fn from_flat(n: usize, x: &[f64]) -> Self {
        BallState {
            theta: x[..n].to_vec(),
            theta_dot: x[n..2 * n].to_vec(),
            quat: [x[2 * n], x[2 * n + 1], x[2 * n + 2], x[2 * n + 3]],
            omega: Vec3::new(x[2 * n + 4], x[2 * n + 5], x[2 * n + 6]),
            z: [x[2 * n + 7], x[2 * n + 8]],
        }
    }
}

/// Angular acceleration of the disk (the scalar phi-ddot equation).
pub fn disk_angular_accel<T: Real>(
    p: &DiskParams,
    _t: T,
    x: &[T],
    u: &[T],
) -> Result<T, DynamicsError> {
    let n = p.n_control();
    let phi = x[2 * n];
    let phi_dot = x[2 * n + 1];
    let (sin_phi, cos_phi) = (phi.sin(), phi.cos());
    let r = T::from_f64(p.radius);
    let g = T::from_f64(p.gravity);

    let mut numer = T::from_f64(-p.radius * p.external_force);
    let mut denom = T::from_f64(p.inertia);
    for i in 0..=n {
        let m_i = p.masses[i];
        if m_i == 0.0 {
            continue;
        }
        let (theta_i, theta_dot_i, accel_i) = if i == 0 {
            (T::zero(), T::zero(), T::zero())
        } else {
            (x[i - 1], x[n + i - 1], u[i - 1])
        };
        let rp = p.rails.eval(i, theta_i);
        let (z1, z3) = (rp.pos.0[0], rp.pos.0[2]);
        let (d1_1, d1_3) = (rp.d1.0[0], rp.d1.0[2]);
        let (d2_1, d2_3) = (rp.d2.0[0], rp.d2.0[2]);

        let e1_arm = r * sin_phi + z1;
        let e3_arm = r * cos_phi + z3;
        let k = (g + r * phi_dot * phi_dot) * (z3 * sin_phi - z1 * cos_phi)
            + e3_arm
                * (-(phi_dot + phi_dot) * theta_dot_i * d1_3
                    + theta_dot_i * theta_dot_i * d2_1
                    + accel_i * d1_1)
            - e1_arm
                * ((phi_dot + phi_dot) * theta_dot_i * d1_1
                    + theta_dot_i * theta_dot_i * d2_3
                    + accel_i * d1_3);
        numer += k.scale(m_i);
        denom += (e1_arm * e1_arm + e3_arm * e3_arm).scale(m_i);
    }
    if denom.value() <= 0.0 {
        return Err(DynamicsError::DegenerateInertia {
            denom: denom.value(),
        });
    }
    Ok(numer / denom)
}

/// Full disk state derivative `[theta_dot; u; phi_dot; accel]`.
pub fn disk_rhs<T: Real>(
    p: &DiskParams,
    t: T,
    x: &[T],
    u: &[T],
    out: &mut [T],
) -> Result<(), DynamicsError> {
    let n = p.n_control();
    let accel = disk_angular_accel(p, t, x, u)?;
    out[..n].copy_from_slice(&x[n..2 * n]);
    out[n..2 * n].copy_from_slice(u);
    out[2 * n] = x[2 * n + 1];
    out[2 * n + 1] = accel;
    Ok(())
}

/// The 3x3 matrix multiplying omega-dot in the ball equations:
/// `sum_i m_i hat(s_i)^2 - diag(inertia)` with `s_i = r Gamma + zeta_i`.
pub fn ball_mass_matrix<T: Real>(p: &BallParams, theta: &[T], q: [T; 4]) -> Mat3<T> {
    let n = p.n_control();
    let gamma = body_vertical(q);
    let r = T::from_f64(p.radius);
    let mut m = Mat3::diag(Vec3::from_f64(p.inertia)).scale(-T::one());
    for i in 0..=n {
        let m_i = p.masses[i];
        if m_i == 0.0 {
            continue;
        }
        let theta_i = if i == 0 { T::zero() } else { theta[i - 1] };
        let rp = p.rails.eval(i, theta_i);
        let s_i = gamma.scale(r).add(rp.pos);
        m = m.add(&hat_squared(s_i).scale(T::from_f64(m_i)));
    }
    m
}

/// Condition estimate of the mass matrix via the explicit 3x3 inverse.
pub fn ball_mass_matrix_checked(
    p: &BallParams,
    theta: &[f64],
    q: [f64; 4],
) -> Result<Mat3<f64>, DynamicsError> {
    let m = ball_mass_matrix(p, theta, q);
    let a = &m.0;
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    let norm: f64 = a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    // ||A^-1||_F = ||adj A||_F / |det|
    let mut adj_norm_sq = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
            let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
            let c = a[i1][j1] * a[i2][j2] - a[i1][j2] * a[i2][j1];
            adj_norm_sq += c * c;
        }
    }
    let cond = if det.abs() > 0.0 {
        norm * adj_norm_sq.sqrt() / det.abs()
    } else {
        f64::INFINITY
    };
    if !cond.is_finite() || cond > 1e12 {
        return Err(DynamicsError::SingularMassMatrix { cond });
    }
    Ok(m)
}

/// The forcing bracket of the ball's angular equation (everything the mass
/// matrix inverse is applied to).
fn ball_forcing<T: Real>(p: &BallParams, x: &[T], u: &[T]) -> Vec3<T> {
    let n = p.n_control();
    let q = [x[2 * n], x[2 * n + 1], x[2 * n + 2], x[2 * n + 3]];
    let omega = Vec3::new(x[2 * n + 4], x[2 * n + 5], x[2 * n + 6]);
    let gamma = body_vertical(q);
    let r = T::from_f64(p.radius);
    let g = T::from_f64(p.gravity);

    let inertia: Vec3<T> = Vec3::from_f64(p.inertia);
    let i_omega = Vec3::new(
        inertia.0[0] * omega.0[0],
        inertia.0[1] * omega.0[1],
        inertia.0[2] * omega.0[2],
    );
    let mut b = omega.cross(i_omega);
    if p.external_force.0 != [0.0; 3] {
        let gamma_f = rotation_matrix(q).tr_mul_vec(Vec3::from_f64(p.external_force));
        b = b.add(gamma_f.cross(gamma).scale(r));
    }
    for i in 0..=n {
        let m_i = p.masses[i];
        if m_i == 0.0 {
            continue;
        }
        let (theta_i, theta_dot_i, accel_i) = if i == 0 {
            (T::zero(), T::zero(), T::zero())
        } else {
            (x[i - 1], x[n + i - 1], u[i - 1])
        };
        let rp = p.rails.eval(i, theta_i);
        let s_i = gamma.scale(r).add(rp.pos);
        let swirl = omega.cross(rp.pos).add(rp.d1.scale(theta_dot_i + theta_dot_i));
        let inner = gamma
            .scale(g)
            .add(omega.cross(swirl))
            .add(rp.d2.scale(theta_dot_i * theta_dot_i))
            .add(rp.d1.scale(accel_i));
        b = b.add(s_i.cross(inner).scale(T::from_f64(m_i)));
    }
    b
}

/// Angular acceleration of the ball (solves the 3x3 system).
pub fn ball_angular_accel<T: Real>(
    p: &BallParams,
    _t: T,
    x: &[T],
    u: &[T],
) -> Result<Vec3<T>, DynamicsError> {
    let n = p.n_control();
    let q = [x[2 * n], x[2 * n + 1], x[2 * n + 2], x[2 * n + 3]];
    let m = ball_mass_matrix(p, &x[..n], q);
    let b = ball_forcing(p, x, u);
    m.solve(b).ok_or(DynamicsError::SingularMassMatrix {
        cond: f64::INFINITY,
    })
}

/// Full ball state derivative
/// `[theta_dot; u; quat rate; omega_dot; planar GC velocity]`.
pub fn ball_rhs<T: Real>(
    p: &BallParams,
    t: T,
    x: &[T],
    u: &[T],
    out: &mut [T],
) -> Result<(), DynamicsError> {
    let n = p.n_control();
    let q = [x[2 * n], x[2 * n + 1], x[2 * n + 2], x[2 * n + 3]];
    let omega = Vec3::new(x[2 * n + 4], x[2 * n + 5], x[2 * n + 6]);
    let accel = ball_angular_accel(p, t, x, u)?;

    out[..n].copy_from_slice(&x[n..2 * n]);
    out[n..2 * n].copy_from_slice(u);
    let qk = crate::geometry::quat_kinematic_matrix(q);
    let half = T::from_f64(0.5);
    for i in 0..4 {
        out[2 * n + i] = half * (qk[i][0] * omega.0[0] + qk[i][1] * omega.0[1] + qk[i][2] * omega.0[2]);
    }
    out[2 * n + 4] = accel.0[0];
    out[2 * n + 5] = accel.0[1];
    out[2 * n + 6] = accel.0[2];
    let pv = crate::geometry::planar_velocity_matrix(q);
    let r = T::from_f64(p.radius);
    for i in 0..2 {
        out[2 * n + 7 + i] =
            r * (pv[i][0] * omega.0[0] + pv[i][1] * omega.0[1] + pv[i][2] * omega.0[2]);
    }
    Ok(())
}

/// Dense output of a validation integration: accepted step times and states.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn last(&self) -> (&f64, &Vec<f64>) {
        (self.t.last().unwrap(), self.y.last().unwrap())
    }
}

/// Adaptive Dormand-Prince 5(4) with PI step control. `tol` is used as the
/// relative tolerance; the absolute tolerance is `tol * 1e-2`.
pub fn integrate<F>(
    mut rhs: F,
    y0: &[f64],
    t_span: (f64, f64),
    tol: f64,
) -> Result<Trajectory, DynamicsError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    assert!(tol > 0.0, "tolerance must be positive");
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    const C: [f64; 6] = [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    // embedded 4th order weights
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];

    let dim = y0.len();
    let (t0, tf) = t_span;
    let span = tf - t0;
    let rtol = tol;
    let atol = tol * 1e-2;

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    rhs(t, &y, &mut k[0]);

    let mut h = (span / 100.0).abs().min(0.1).max(1e-8) * span.signum();
    let mut traj = Trajectory {
        t: vec![t],
        y: vec![y.clone()],
    };
    let mut err_prev: f64 = 1.0;
    let mut ytmp = vec![0.0; dim];
    let mut y5 = vec![0.0; dim];

    while (tf - t) * span.signum() > 0.0 {
        if (t + h - tf) * span.signum() > 0.0 {
            h = tf - t;
        }
        if h.abs() < 1e-14 * span.abs() {
            return Err(DynamicsError::StepUnderflow { t });
        }
        for stage in 0..6 {
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(stage + 1) {
                    acc += A[stage][j] * kj[i];
                }
                ytmp[i] = y[i] + h * acc;
            }
            let ts = t + C[stage] * h;
            let (head, tail) = k.split_at_mut(stage + 1);
            let _ = head;
            rhs(ts, &ytmp, &mut tail[0]);
        }
        // 5th order solution is stage 6's argument (FSAL layout)
        for i in 0..dim {
            let mut acc = 0.0;
            for j in 0..6 {
                acc += A[5][j] * k[j][i];
            }
            y5[i] = y[i] + h * acc;
        }
        // error = y5 - y4
        let mut err: f64 = 0.0;
        for i in 0..dim {
            let mut acc4 = 0.0;
            for j in 0..7 {
                acc4 += B4[j] * k[j][i];
            }
            let y4 = y[i] + h * acc4;
            let sc = atol + rtol * y[i].abs().max(y5[i].abs());
            let e = (y5[i] - y4) / sc;
            err += e * e;
        }
        err = (err / dim as f64).sqrt();

        if err <= 1.0 {
            t += h;
            y.copy_from_slice(&y5);
            k[0] = k[6].clone();
            traj.t.push(t);
            traj.y.push(y.clone());
            let fac = 0.9 * err.max(1e-10).powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
            h *= fac.clamp(0.2, 5.0);
            err_prev = err.max(1e-10);
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::quat_flat;
    use crate::rails::{circular_rail, RailCurve, RailSet};

    const E1: Vec3<f64> = Vec3([1.0, 0.0, 0.0]);
    const E3: Vec3<f64> = Vec3([0.0, 0.0, 1.0]);

    fn disk_1rail() -> DiskParams {
        DiskParams {
            masses: vec![1.0, 1.0],
            radius: 1.0,
            inertia: 1.0,
            gravity: 1.0,
            rails: RailSet::new(
                Vec3::zeros(),
                vec![circular_rail(0.5, Vec3::zeros(), E1, E3).unwrap()],
            ),
            external_force: 0.0,
        }
    }

    /// The trajectory-tracking disk: four concentric rails, all masses 1.
    pub fn disk_4rail() -> DiskParams {
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

    fn ball_bare() -> BallParams {
        BallParams {
            masses: vec![1.0],
            radius: 1.0,
            inertia: Vec3::new(1.0, 1.0, 1.0),
            gravity: 1.0,
            rails: RailSet::new(Vec3::zeros(), vec![]),
            external_force: Vec3::zeros(),
        }
    }

    #[test]
    fn disk_accel_trivial_cases() {
        // n=0, centered CM, no force: always zero
        let p = DiskParams {
            masses: vec![1.0],
            radius: 1.0,
            inertia: 1.0,
            gravity: 1.0,
            rails: RailSet::new(Vec3::zeros(), vec![]),
            external_force: 0.0,
        };
        for (phi, phi_dot) in [(0.0, 0.0), (0.7, -0.4), (-2.0, 3.0)] {
            let x = vec![phi, phi_dot];
            let a = disk_angular_accel(&p, 0.0, &x, &[]).unwrap();
            assert!(a.abs() < 1e-15);
        }
    }

    #[test]
    fn disk_accel_hand_computed_value() {
        let p = disk_1rail();
        let x = vec![0.0, 0.0, 0.0, 0.0];
        let u = vec![1.0];
        let a = disk_angular_accel(&p, 0.0, &x, &u).unwrap();
        assert!((a - (-0.75 / 3.25)).abs() < 1e-15, "a = {a}");
    }

    #[test]
    fn disk_rest_is_balanced_at_minus_half_pi() {
        let p = disk_4rail();
        let s = DiskState::rest(vec![-std::f64::consts::FRAC_PI_2; 4], 0.0);
        let a = disk_angular_accel(&p, 0.0, &s.to_flat(), &[0.0; 4]).unwrap();
        assert!(a.abs() < 1e-15);
    }

    #[test]
    fn disk_rhs_layout() {
        let p = disk_1rail();
        let x = vec![0.3, 0.7, 0.1, -0.2];
        let u = vec![0.5];
        let mut out = vec![0.0; 4];
        disk_rhs(&p, 0.0, &x, &u, &mut out).unwrap();
        assert_eq!(out[0], 0.7); // theta-dot pass-through
        assert_eq!(out[1], 0.5); // control pass-through
        assert_eq!(out[2], -0.2); // phi-dot pass-through
        let a = disk_angular_accel(&p, 0.0, &x, &u).unwrap();
        assert_eq!(out[3], a);
    }

    #[test]
    fn disk_denominator_dominated_by_inertia() {
        let p = disk_4rail();
        // denominator >= d2 > 0 whatever the state: probe the error path never
        // fires over a sweep of states
        for k in 0..200 {
            let v = (k as f64) * 0.37 - 30.0;
            let x = vec![v, -v, 0.5 * v, v.sin(), v.cos(), 2.0 * v, 0.1 * v, -3.0 * v, v, 0.3];
            assert!(disk_angular_accel(&p, 0.0, &x[..10], &[0.0; 4]).is_ok());
        }
    }

    #[test]
    fn bare_ball_mass_matrix_is_expected_diagonal() {
        let p = ball_bare();
        let m = ball_mass_matrix(&p, &[], [1.0, 0.0, 0.0, 0.0]);
        let expect = [[-2.0, 0.0, 0.0], [0.0, -2.0, 0.0], [0.0, 0.0, -1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((m.0[i][j] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn ball_mass_matrix_symmetric_and_negative_definite() {
        let p = crate::models::ball_obstacle_params();
        let mut s = 1u64;
        let mut rng = move || {
            s ^= s >> 12;
            s ^= s << 25;
            s ^= s >> 27;
            (s.wrapping_mul(0x2545F4914F6CDD1D) >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..100 {
            let q = crate::geometry::Versor::from_unnormalized([rng(), rng(), rng(), rng()])
                .unwrap()
                .components();
            let theta = [rng() * 3.0, rng() * 3.0, rng() * 3.0];
            let m = ball_mass_matrix(&p, &theta, q);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((m.0[i][j] - m.0[j][i]).abs() < 1e-14);
                }
            }
            // -M positive definite via leading principal minors
            let a = m.scale(-1.0).0;
            let m1 = a[0][0];
            let m2 = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            let m3 = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
            assert!(m1 > 0.0 && m2 > 0.0 && m3 > 0.0);
            assert!(ball_mass_matrix_checked(&p, &theta, q).is_ok());
        }
    }

    #[test]
    fn ball_rest_has_zero_accel() {
        let p = ball_bare();
        let s = BallState::rest(vec![]);
        let a = ball_angular_accel(&p, 0.0, &s.to_flat(), &[]).unwrap();
        for c in a.0 {
            assert!(c.abs() < 1e-15);
        }
        let gamma = body_vertical(s.quat);
        assert_eq!(gamma.0, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn ball_planar_velocity_cases() {
        let p = ball_bare();
        let mut s = BallState::rest(vec![]);
        s.omega = Vec3::new(0.0, 0.0, 1.0);
        let mut out = vec![0.0; 9];
        ball_rhs(&p, 0.0, &s.to_flat(), &[], &mut out).unwrap();
        assert!(out[7].abs() < 1e-15 && out[8].abs() < 1e-15);
        s.omega = Vec3::new(0.0, 1.0, 0.0);
        ball_rhs(&p, 0.0, &s.to_flat(), &[], &mut out).unwrap();
        assert!((out[7] - 1.0).abs() < 1e-15 && out[8].abs() < 1e-15);
    }

    #[test]
    fn free_rolling_reduction() {
        // all point masses at the GC: angular dynamics keep only rigid terms
        let p = BallParams {
            masses: vec![1.0, 0.5],
            radius: 1.0,
            inertia: Vec3::new(1.0, 2.0, 3.0),
            gravity: 1.0,
            rails: RailSet::new(Vec3::zeros(), vec![RailCurve::Constant(Vec3::zeros())]),
            external_force: Vec3::zeros(),
        };
        let mut s = BallState::rest(vec![0.3]);
        s.omega = Vec3::new(0.4, -0.2, 0.8);
        s.quat = crate::geometry::Versor::from_unnormalized([0.9, 0.1, -0.3, 0.2])
            .unwrap()
            .components();
        let a = ball_angular_accel(&p, 0.0, &s.to_flat(), &[0.0]).unwrap();
        // rigid reference: [sum m_i hat(r Gamma)^2 - I]^-1 (Omega x I Omega)
        let gamma = body_vertical(s.quat);
        let m = hat_squared(gamma.scale(1.0))
            .scale(1.5)
            .sub(&Mat3::diag(p.inertia));
        let i_omega = Vec3::new(1.0 * 0.4, 2.0 * -0.2, 3.0 * 0.8);
        let expect = m.solve(s.omega.cross(i_omega)).unwrap();
        for i in 0..3 {
            assert!((a.0[i] - expect.0[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn integrate_exponential() {
        let traj = integrate(|_t, y, dy| dy[0] = y[0], &[1.0], (0.0, 1.0), 1e-10).unwrap();
        let (tf, yf) = traj.last();
        assert!((tf - 1.0).abs() < 1e-14);
        assert!((yf[0] - 1.0f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn integrate_rest_disk_stays_at_rest() {
        let p = disk_4rail();
        let s = DiskState::rest(vec![-std::f64::consts::FRAC_PI_2; 4], 0.0);
        let y0 = s.to_flat();
        let n = p.n_control();
        let traj = integrate(
            |t, y, dy| {
                disk_rhs(&p, t, y, &vec![0.0; n], dy).unwrap();
            },
            &y0,
            (0.0, 2.0),
            1e-10,
        )
        .unwrap();
        let (_, yf) = traj.last();
        for (a, b) in yf.iter().zip(y0.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Independent total-energy oracle built from definitions only (no reuse
    /// of the equations of motion).
    fn ball_energy(p: &BallParams, x: &[f64]) -> f64 {
        let n = p.n_control();
        let s = BallState::from_flat(n, x);
        let rot = rotation_matrix(s.quat);
        let omega_sp = rot.mul_vec(s.omega);
        let gc_vel = omega_sp.cross(Vec3::new(0.0, 0.0, p.radius));
        let mut e = 0.5
            * (p.inertia.0[0] * s.omega.0[0] * s.omega.0[0]
                + p.inertia.0[1] * s.omega.0[1] * s.omega.0[1]
                + p.inertia.0[2] * s.omega.0[2] * s.omega.0[2]);
        for i in 0..=n {
            let m_i = p.masses[i];
            let theta_i = if i == 0 { 0.0 } else { s.theta[i - 1] };
            let theta_dot_i = if i == 0 { 0.0 } else { s.theta_dot[i - 1] };
            let rp = p.rails.eval(i, theta_i);
            // body-frame velocity of the mass: Omega x zeta + zeta' theta_dot
            let v_body = s.omega.cross(rp.pos).add(rp.d1.scale(theta_dot_i));
            let v_sp = gc_vel.add(rot.mul_vec(v_body));
            let height = rot.mul_vec(rp.pos).0[2];
            e += m_i * (0.5 * v_sp.dot(v_sp) + p.gravity * height);
        }
        e
    }

    #[test]
    fn locked_mass_ball_conserves_energy_and_gamma_norm() {
        // one locked control mass well off-center plus a tumbling start
        let p = BallParams {
            masses: vec![1.0, 1.0],
            radius: 1.0,
            inertia: Vec3::new(1.0, 1.0, 1.0),
            gravity: 1.0,
            rails: RailSet::new(
                Vec3::zeros(),
                vec![circular_rail(0.6, Vec3::zeros(), E1, E3).unwrap()],
            ),
            external_force: Vec3::zeros(),
        };
        let mut s = BallState::rest(vec![0.9]);
        s.omega = Vec3::new(0.5, -0.3, 0.7);
        let y0 = s.to_flat();
        let e0 = ball_energy(&p, &y0);
        let traj = integrate(
            |t, y, dy| {
                ball_rhs(&p, t, y, &[0.0], dy).unwrap();
            },
            &y0,
            (0.0, 10.0),
            1e-10,
        )
        .unwrap();
        let mut max_drift: f64 = 0.0;
        let mut max_gamma: f64 = 0.0;
        for y in &traj.y {
            let e = ball_energy(&p, y);
            max_drift = max_drift.max((e - e0).abs() / e0.abs().max(1.0));
            let q = [y[2], y[3], y[4], y[5]];
            let gamma = body_vertical(q);
            max_gamma = max_gamma.max((gamma.norm() - 1.0).abs());
        }
        assert!(max_drift <= 1e-6, "energy drift {max_drift:.3e}");
        assert!(max_gamma <= 1e-9, "gamma norm drift {max_gamma:.3e}");
        // quaternion itself stays near unit
        let (_, yf) = traj.last();
        let qn: f64 = quat_flat([yf[2], yf[3], yf[4], yf[5]])
            .dot(quat_flat([yf[2], yf[3], yf[4], yf[5]]))
            + yf[2] * yf[2];
        assert!((qn.sqrt() - 1.0).abs() < 1e-8);
    }
}
