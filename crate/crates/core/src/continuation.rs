//! Predictor-corrector continuation for parameterized two-point
//! boundary-value problems: a pseudo-arclength engine with Newton correction
//! and optional polish, and a sweep engine that rides each unit tangent as
//! far as a monotone parameter sweep will go. Both trace solution curves
//! through turning points.

use crate::bvp::{
    inner_product, norm, solve, solve_linear, BvpError, BvpProblem, MeshSolution,
    SolverOptions,
};
use crate::linalg::DMat;
use thiserror::Error;

/// A two-point boundary-value problem family over a scalar parameter, with
/// the Jacobians the continuation systems need.
pub trait ParamBvp {
    fn dim(&self) -> usize;
    fn rhs(&self, s: f64, y: &[f64], lam: f64, out: &mut [f64]);
    fn rhs_jac_y(&self, s: f64, y: &[f64], lam: f64, out: &mut DMat);
    fn rhs_jac_lam(&self, s: f64, y: &[f64], lam: f64, out: &mut [f64]);
    fn bc(&self, ya: &[f64], yb: &[f64], lam: f64, out: &mut [f64]);
    /// All three boundary Jacobians at once (implementations that share work
    /// across them should override this and leave the single-matrix variants
    /// to the default).
    fn bc_jacs(&self, ya: &[f64], yb: &[f64], lam: f64, ja: &mut DMat, jb: &mut DMat, jlam: &mut [f64]);

    fn bc_jac_ya(&self, ya: &[f64], yb: &[f64], lam: f64, out: &mut DMat) {
        let n = self.dim();
        let mut jb = DMat::zeros(n, n);
        let mut jlam = vec![0.0; n];
        self.bc_jacs(ya, yb, lam, out, &mut jb, &mut jlam);
    }
    fn bc_jac_yb(&self, ya: &[f64], yb: &[f64], lam: f64, out: &mut DMat) {
        let n = self.dim();
        let mut ja = DMat::zeros(n, n);
        let mut jlam = vec![0.0; n];
        self.bc_jacs(ya, yb, lam, &mut ja, out, &mut jlam);
    }
    fn bc_jac_lam(&self, ya: &[f64], yb: &[f64], lam: f64, out: &mut [f64]) {
        let n = self.dim();
        let mut ja = DMat::zeros(n, n);
        let mut jb = DMat::zeros(n, n);
        self.bc_jacs(ya, yb, lam, &mut ja, &mut jb, out);
    }
}

/// Boundary linearization data frozen at one point of the curve.
struct FrozenBc {
    ga: DMat,
    gb: DMat,
    glam: Vec<f64>,
    /// Boundary residual at the frozen point (only the correction system
    /// needs it).
    g: Vec<f64>,
}

impl FrozenBc {
    fn at<P: ParamBvp>(base: &P, y: &MeshSolution, lam: f64) -> FrozenBc {
        let n = base.dim();
        let mut ga = DMat::zeros(n, n);
        let mut gb = DMat::zeros(n, n);
        let mut glam = vec![0.0; n];
        base.bc_jacs(y.first(), y.last(), lam, &mut ga, &mut gb, &mut glam);
        let mut g = vec![0.0; n];
        base.bc(y.first(), y.last(), lam, &mut g);
        FrozenBc { ga, gb, glam, g }
    }
}

#[derive(Debug, Error)]
pub enum ContinuationError {
    #[error("tangent system is rank deficient (fold in the tangent system)")]
    FoldInTangentSystem,
    #[error("tangent norm {norm:.3e} is degenerate")]
    DegenerateTangent { norm: f64 },
    #[error("tangent orientation is ambiguous (inner product with previous tangent is zero)")]
    AmbiguousOrientation,
    #[error("correction did not converge within {max_corrections} iterations")]
    CorrectionDiverged { max_corrections: usize },
    #[error("solver failure: {0}")]
    Solver(#[from] BvpError),
}

/// A solution of the underlying problem at one parameter value.
#[derive(Clone, Debug)]
pub struct CurvePoint {
    pub y: MeshSolution,
    pub lam: f64,
}

/// Curve tangent: mesh function plus parameter direction.
#[derive(Clone, Debug)]
pub struct Tangent {
    pub v: MeshSolution,
    pub tau: f64,
}

impl Tangent {
    pub fn norm(&self) -> f64 {
        norm(&self.v, self.tau)
    }
    pub fn dot(&self, other: &Tangent) -> f64 {
        inner_product(&self.v, self.tau, &other.v, other.tau)
    }
    fn scaled(&self, c: f64) -> Tangent {
        let nodes = self.v.n_nodes();
        let dim = self.v.dim();
        let mut values = Vec::with_capacity(nodes * dim);
        let mut derivs = Vec::with_capacity(nodes * dim);
        for i in 0..nodes {
            values.extend(self.v.node(i).iter().map(|x| c * x));
            derivs.extend(self.v.node_deriv(i).iter().map(|x| c * x));
        }
        Tangent {
            v: MeshSolution::from_nodes(self.v.mesh().to_vec(), values, derivs, dim),
            tau: c * self.tau,
        }
    }
}

/// Options of the pseudo-arclength engine. Defaults follow the usual
/// concrete suggestions for these problems.
#[derive(Clone, Debug)]
pub struct PacOptions {
    /// Maximum number of points to compute beyond the start point.
    pub max_points: usize,
    pub sigma_init: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Steplength reduction factor after a failed correction.
    pub sigma_reduce: f64,
    /// Steplength increase factor after fast convergence.
    pub sigma_increase: f64,
    /// Maximum Newton corrections per step.
    pub max_corrections: usize,
    /// Correction count at or below which the steplength may grow.
    pub fast_corrections: usize,
    /// Relative correction-size threshold declaring convergence.
    pub convergence: f64,
    /// Initial tangent direction: -2, -1, 1, or 2. Magnitude 2 orients by
    /// the parameter direction rather than the raw tangent sign.
    pub direction: i8,
    pub polish: bool,
    pub solver: SolverOptions,
}

impl Default for PacOptions {
    fn default() -> Self {
        PacOptions {
            max_points: 40,
            sigma_init: 0.5,
            sigma_min: 1e-4,
            sigma_max: 0.5,
            sigma_reduce: 0.25,
            sigma_increase: 2.0,
            max_corrections: 5,
            fast_corrections: 3,
            convergence: 1e-3,
            direction: 1,
            polish: true,
            solver: SolverOptions::default(),
        }
    }
}

/// Options of the sweep engine: a per-step cap on the tangent steplength.
#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub sigma_max: Vec<f64>,
    pub direction: i8,
    pub solver: SolverOptions,
}

/// Why a trace stopped.
#[derive(Clone, Debug, PartialEq)]
pub enum TraceFlag {
    /// All requested points were computed.
    ExhaustedSteps,
    /// The caller's stop predicate accepted a point.
    TargetReached,
    /// The steplength fell below its minimum.
    SteplengthUnderflow,
    /// A tangent system could not be solved.
    TangentFailure(String),
    /// A sweep step made no parameter progress.
    NoProgress,
}

/// A traced (partial) solution curve with per-step diagnostics.
#[derive(Clone, Debug)]
pub struct Trace {
    pub points: Vec<CurvePoint>,
    /// Accepted tangent steplength per computed point (entry 0 for the
    /// start point).
    pub sigmas: Vec<f64>,
    /// Unit tangent used to reach each computed point (none for the start).
    pub tangents: Vec<Tangent>,
    pub flag: TraceFlag,
}

// --- augmented boundary-value systems ---

/// Shared layout: `[v-or-y (n); scalar channel; quadrature channel w]`.
fn split_augmented(sol: &MeshSolution, n: usize) -> (MeshSolution, f64) {
    let head = sol.head_components(n);
    let scalar = sol.node(0)[n];
    (head, scalar)
}

/// Linearization of the problem around a point, closed by the
/// pseudo-arclength constraint against the previous tangent.
struct LinearTangentSystem<'a, P: ParamBvp> {
    base: &'a P,
    point: &'a CurvePoint,
    prev: &'a Tangent,
    frozen: FrozenBc,
}

impl<'a, P: ParamBvp> LinearTangentSystem<'a, P> {
    fn new(base: &'a P, point: &'a CurvePoint, prev: &'a Tangent) -> Self {
        let frozen = FrozenBc::at(base, &point.y, point.lam);
        LinearTangentSystem {
            base,
            point,
            prev,
            frozen,
        }
    }
    fn n(&self) -> usize {
        self.base.dim()
    }
}

impl<P: ParamBvp> BvpProblem for LinearTangentSystem<'_, P> {
    fn dim(&self) -> usize {
        self.n() + 2
    }
    fn is_linear(&self) -> bool {
        true
    }
    fn rhs(&self, s: f64, x: &[f64], out: &mut [f64]) {
        let n = self.n();
        let mut yj = vec![0.0; n];
        self.point.y.eval_into(s, &mut yj);
        let mut jac = DMat::zeros(n, n);
        self.base.rhs_jac_y(s, &yj, self.point.lam, &mut jac);
        let mut flam = vec![0.0; n];
        self.base.rhs_jac_lam(s, &yj, self.point.lam, &mut flam);
        out[..n].fill(0.0);
        jac.mul_vec_add(&x[..n], &mut out[..n]);
        for i in 0..n {
            out[i] += flam[i] * x[n];
        }
        out[n] = 0.0;
        let mut vp = vec![0.0; self.prev.v.dim()];
        self.prev.v.eval_into(s, &mut vp);
        out[n + 1] = vp.iter().zip(&x[..n]).map(|(a, b)| a * b).sum();
    }
    fn rhs_jac(&self, s: f64, _x: &[f64], out: &mut DMat) {
        let n = self.n();
        let mut yj = vec![0.0; n];
        self.point.y.eval_into(s, &mut yj);
        let mut jac = DMat::zeros(n, n);
        self.base.rhs_jac_y(s, &yj, self.point.lam, &mut jac);
        let mut flam = vec![0.0; n];
        self.base.rhs_jac_lam(s, &yj, self.point.lam, &mut flam);
        out.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                out.set(i, j, jac.at(i, j));
            }
            out.set(i, n, flam[i]);
        }
        let mut vp = vec![0.0; self.prev.v.dim()];
        self.prev.v.eval_into(s, &mut vp);
        for j in 0..n {
            out.set(n + 1, j, vp[j]);
        }
    }
    fn bc(&self, xa: &[f64], xb: &[f64], out: &mut [f64]) {
        let n = self.n();
        out[..n].fill(0.0);
        self.frozen.ga.mul_vec_add(&xa[..n], &mut out[..n]);
        self.frozen.gb.mul_vec_add(&xb[..n], &mut out[..n]);
        let tau = xa[n];
        for i in 0..n {
            out[i] += self.frozen.glam[i] * tau;
        }
        out[n] = xa[n + 1];
        out[n + 1] = xb[n + 1] + self.prev.tau * tau - 1.0;
    }
    fn bc_jac(&self, _xa: &[f64], _xb: &[f64], ja: &mut DMat, jb: &mut DMat) {
        let n = self.n();
        ja.fill(0.0);
        jb.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                ja.set(i, j, self.frozen.ga.at(i, j));
                jb.set(i, j, self.frozen.gb.at(i, j));
            }
            // the scalar channel is read from the left endpoint
            ja.set(i, n, self.frozen.glam[i]);
        }
        ja.set(n, n + 1, 1.0);
        ja.set(n + 1, n, self.prev.tau);
        jb.set(n + 1, n + 1, 1.0);
    }
}

/// Newton correction system around a corrector iterate, closed by
/// orthogonality to the step tangent.
struct CorrectionSystem<'a, P: ParamBvp> {
    base: &'a P,
    corrector: &'a CurvePoint,
    tangent: &'a Tangent,
    frozen: FrozenBc,
}

impl<'a, P: ParamBvp> CorrectionSystem<'a, P> {
    fn new(base: &'a P, corrector: &'a CurvePoint, tangent: &'a Tangent) -> Self {
        let frozen = FrozenBc::at(base, &corrector.y, corrector.lam);
        CorrectionSystem {
            base,
            corrector,
            tangent,
            frozen,
        }
    }
}

impl<P: ParamBvp> BvpProblem for CorrectionSystem<'_, P> {
    fn dim(&self) -> usize {
        self.base.dim() + 2
    }
    fn is_linear(&self) -> bool {
        true
    }
    fn rhs(&self, s: f64, x: &[f64], out: &mut [f64]) {
        let n = self.base.dim();
        let mut yc = vec![0.0; n];
        let mut dyc = vec![0.0; n];
        self.corrector.y.eval_into(s, &mut yc);
        self.corrector.y.eval_deriv_into(s, &mut dyc);
        let mut jac = DMat::zeros(n, n);
        self.base.rhs_jac_y(s, &yc, self.corrector.lam, &mut jac);
        let mut flam = vec![0.0; n];
        self.base.rhs_jac_lam(s, &yc, self.corrector.lam, &mut flam);
        let mut f = vec![0.0; n];
        self.base.rhs(s, &yc, self.corrector.lam, &mut f);
        out[..n].fill(0.0);
        jac.mul_vec_add(&x[..n], &mut out[..n]);
        for i in 0..n {
            out[i] += flam[i] * x[n] - dyc[i] + f[i];
        }
        out[n] = 0.0;
        let mut v = vec![0.0; self.tangent.v.dim()];
        self.tangent.v.eval_into(s, &mut v);
        out[n + 1] = v.iter().zip(&x[..n]).map(|(a, b)| a * b).sum();
    }
    fn rhs_jac(&self, s: f64, _x: &[f64], out: &mut DMat) {
        let n = self.base.dim();
        let mut yc = vec![0.0; n];
        self.corrector.y.eval_into(s, &mut yc);
        let mut jac = DMat::zeros(n, n);
        self.base.rhs_jac_y(s, &yc, self.corrector.lam, &mut jac);
        let mut flam = vec![0.0; n];
        self.base.rhs_jac_lam(s, &yc, self.corrector.lam, &mut flam);
        out.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                out.set(i, j, jac.at(i, j));
            }
            out.set(i, n, flam[i]);
        }
        let mut v = vec![0.0; self.tangent.v.dim()];
        self.tangent.v.eval_into(s, &mut v);
        for j in 0..n {
            out.set(n + 1, j, v[j]);
        }
    }
    fn bc(&self, xa: &[f64], xb: &[f64], out: &mut [f64]) {
        let n = self.base.dim();
        out[..n].copy_from_slice(&self.frozen.g);
        self.frozen.ga.mul_vec_add(&xa[..n], &mut out[..n]);
        self.frozen.gb.mul_vec_add(&xb[..n], &mut out[..n]);
        let dlam = xa[n];
        for i in 0..n {
            out[i] += self.frozen.glam[i] * dlam;
        }
        out[n] = xa[n + 1];
        out[n + 1] = xb[n + 1] + self.tangent.tau * dlam;
    }
    fn bc_jac(&self, _xa: &[f64], _xb: &[f64], ja: &mut DMat, jb: &mut DMat) {
        let n = self.base.dim();
        ja.fill(0.0);
        jb.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                ja.set(i, j, self.frozen.ga.at(i, j));
                jb.set(i, j, self.frozen.gb.at(i, j));
            }
            ja.set(i, n, self.frozen.glam[i]);
        }
        ja.set(n, n + 1, 1.0);
        ja.set(n + 1, n, self.tangent.tau);
        jb.set(n + 1, n + 1, 1.0);
    }
}

/// Full nonlinear problem closed by orthogonality to a tangent through an
/// anchor point. Serves both the polish step and the sweep step.
struct OrthogonalSystem<'a, P: ParamBvp> {
    base: &'a P,
    tangent: &'a Tangent,
    anchor_y: MeshSolution,
    anchor_lam: f64,
}

impl<P: ParamBvp> BvpProblem for OrthogonalSystem<'_, P> {
    fn dim(&self) -> usize {
        self.base.dim() + 2
    }
    fn rhs(&self, s: f64, x: &[f64], out: &mut [f64]) {
        let n = self.base.dim();
        let lam = x[n];
        self.base.rhs(s, &x[..n], lam, &mut out[..n]);
        out[n] = 0.0;
        let mut v = vec![0.0; self.tangent.v.dim()];
        self.tangent.v.eval_into(s, &mut v);
        let mut anchor = vec![0.0; n];
        self.anchor_y.eval_into(s, &mut anchor);
        out[n + 1] = v
            .iter()
            .zip(x[..n].iter().zip(&anchor))
            .map(|(t, (y, a))| t * (y - a))
            .sum();
    }
    fn rhs_jac(&self, s: f64, x: &[f64], out: &mut DMat) {
        let n = self.base.dim();
        let lam = x[n];
        let mut jac = DMat::zeros(n, n);
        self.base.rhs_jac_y(s, &x[..n], lam, &mut jac);
        let mut flam = vec![0.0; n];
        self.base.rhs_jac_lam(s, &x[..n], lam, &mut flam);
        out.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                out.set(i, j, jac.at(i, j));
            }
            out.set(i, n, flam[i]);
        }
        let mut v = vec![0.0; self.tangent.v.dim()];
        self.tangent.v.eval_into(s, &mut v);
        for j in 0..n {
            out.set(n + 1, j, v[j]);
        }
    }
    fn bc(&self, xa: &[f64], xb: &[f64], out: &mut [f64]) {
        let n = self.base.dim();
        let lam = xa[n];
        self.base.bc(&xa[..n], &xb[..n], lam, &mut out[..n]);
        out[n] = xa[n + 1];
        out[n + 1] = xb[n + 1] + self.tangent.tau * (lam - self.anchor_lam);
    }
    fn bc_jac(&self, xa: &[f64], xb: &[f64], ja: &mut DMat, jb: &mut DMat) {
        let n = self.base.dim();
        let lam = xa[n];
        ja.fill(0.0);
        jb.fill(0.0);
        let mut ga = DMat::zeros(n, n);
        let mut gb = DMat::zeros(n, n);
        let mut glam = vec![0.0; n];
        self.base
            .bc_jacs(&xa[..n], &xb[..n], lam, &mut ga, &mut gb, &mut glam);
        for i in 0..n {
            for j in 0..n {
                ja.set(i, j, ga.at(i, j));
                jb.set(i, j, gb.at(i, j));
            }
            ja.set(i, n, glam[i]);
        }
        ja.set(n, n + 1, 1.0);
        ja.set(n + 1, n, self.tangent.tau);
        jb.set(n + 1, n + 1, 1.0);
    }
}

/// Nonlinear unit-tangent system (arclength closure).
struct UnitTangentSystem<'a, P: ParamBvp> {
    base: &'a P,
    point: &'a CurvePoint,
    frozen: FrozenBc,
}

impl<'a, P: ParamBvp> UnitTangentSystem<'a, P> {
    fn new(base: &'a P, point: &'a CurvePoint) -> Self {
        let frozen = FrozenBc::at(base, &point.y, point.lam);
        UnitTangentSystem {
            base,
            point,
            frozen,
        }
    }
}

impl<P: ParamBvp> BvpProblem for UnitTangentSystem<'_, P> {
    fn dim(&self) -> usize {
        self.base.dim() + 2
    }
    fn rhs(&self, s: f64, x: &[f64], out: &mut [f64]) {
        let n = self.base.dim();
        let mut yj = vec![0.0; n];
        self.point.y.eval_into(s, &mut yj);
        let mut jac = DMat::zeros(n, n);
        self.base.rhs_jac_y(s, &yj, self.point.lam, &mut jac);
        let mut flam = vec![0.0; n];
        self.base.rhs_jac_lam(s, &yj, self.point.lam, &mut flam);
        out[..n].fill(0.0);
        jac.mul_vec_add(&x[..n], &mut out[..n]);
        for i in 0..n {
            out[i] += flam[i] * x[n];
        }
        out[n] = 0.0;
        out[n + 1] = x[..n].iter().map(|v| v * v).sum();
    }
    fn rhs_jac(&self, s: f64, x: &[f64], out: &mut DMat) {
        let n = self.base.dim();
        let mut yj = vec![0.0; n];
        self.point.y.eval_into(s, &mut yj);
        let mut jac = DMat::zeros(n, n);
        self.base.rhs_jac_y(s, &yj, self.point.lam, &mut jac);
        let mut flam = vec![0.0; n];
        self.base.rhs_jac_lam(s, &yj, self.point.lam, &mut flam);
        out.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                out.set(i, j, jac.at(i, j));
            }
            out.set(i, n, flam[i]);
        }
        for j in 0..n {
            out.set(n + 1, j, 2.0 * x[j]);
        }
    }
    fn bc(&self, xa: &[f64], xb: &[f64], out: &mut [f64]) {
        let n = self.base.dim();
        out[..n].fill(0.0);
        self.frozen.ga.mul_vec_add(&xa[..n], &mut out[..n]);
        self.frozen.gb.mul_vec_add(&xb[..n], &mut out[..n]);
        let tau = xa[n];
        for i in 0..n {
            out[i] += self.frozen.glam[i] * tau;
        }
        out[n] = xa[n + 1];
        out[n + 1] = xb[n + 1] + tau * tau - 1.0;
    }
    fn bc_jac(&self, xa: &[f64], _xb: &[f64], ja: &mut DMat, jb: &mut DMat) {
        let n = self.base.dim();
        ja.fill(0.0);
        jb.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                ja.set(i, j, self.frozen.ga.at(i, j));
                jb.set(i, j, self.frozen.gb.at(i, j));
            }
            ja.set(i, n, self.frozen.glam[i]);
        }
        ja.set(n, n + 1, 1.0);
        ja.set(n + 1, n, 2.0 * xa[n]);
        jb.set(n + 1, n + 1, 1.0);
    }
}

/// Solver options for the augmented systems: defect control is limited to
/// the base components plus the scalar channel; the quadrature channel rides
/// along piecewise interpolants and must not drive refinement.
fn augmented_solver(base_dim: usize, solver: &SolverOptions) -> SolverOptions {
    SolverOptions {
        defect_components: Some(base_dim + 1),
        label: "orthogonal",
        ..*solver
    }
}

/// Options for the linearized helper systems (tangents, corrections): their
/// forcing carries the interpolation error of the point they linearize
/// around, so chasing the full tolerance only thrashes the mesh.
fn linearized_solver(base_dim: usize, solver: &SolverOptions) -> SolverOptions {
    let mut opts = augmented_solver(base_dim, solver);
    opts.tol *= 100.0;
    opts.label = "linearized";
    opts
}

/// Thin a mesh to roughly `target` nodes for helper solves that do not need
/// the full resolution of the point they linearize around.
fn decimated(mesh: &[f64], target: usize) -> Vec<f64> {
    let n = mesh.len();
    if n <= target {
        return mesh.to_vec();
    }
    let stride = n.div_ceil(target);
    let mut out: Vec<f64> = mesh.iter().copied().step_by(stride).collect();
    if *out.last().unwrap() != mesh[n - 1] {
        out.push(mesh[n - 1]);
    }
    out
}

/// Cumulative trapezoid of `v . v` on the tangent's own mesh; the customary
/// initial guess for the quadrature channel.
fn cumulative_square_integral(v: &MeshSolution) -> Vec<f64> {
    let n = v.n_nodes();
    let mut out = vec![0.0; n];
    let mut prev: f64 = v.node(0).iter().map(|x| x * x).sum();
    for i in 1..n {
        let cur: f64 = v.node(i).iter().map(|x| x * x).sum();
        out[i] = out[i - 1] + 0.5 * (v.mesh()[i] - v.mesh()[i - 1]) * (prev + cur);
        prev = cur;
    }
    out
}

fn augmented_guess(v: &MeshSolution, scalar: f64, w: Option<&[f64]>) -> MeshSolution {
    let n = v.dim();
    let nodes = v.n_nodes();
    let mut values = Vec::with_capacity(nodes * (n + 2));
    let mut derivs = Vec::with_capacity(nodes * (n + 2));
    for i in 0..nodes {
        values.extend_from_slice(v.node(i));
        values.push(scalar);
        values.push(w.map_or(0.0, |w| w[i]));
        derivs.extend_from_slice(v.node_deriv(i));
        derivs.push(0.0);
        derivs.push(0.0);
    }
    MeshSolution::from_nodes(v.mesh().to_vec(), values, derivs, n + 2)
}

/// Tangent from the linearized system with the pseudo-arclength closure,
/// seeded by the previous tangent. Not yet normalized.
pub fn tangent_linear<P: ParamBvp>(
    base: &P,
    point: &CurvePoint,
    prev: &Tangent,
    solver: &SolverOptions,
) -> Result<Tangent, ContinuationError> {
    let system = LinearTangentSystem::new(base, point, prev);
    let v_guess = prev.v.resample(&decimated(point.y.mesh(), 1200));
    let w = cumulative_square_integral(&v_guess);
    let guess = augmented_guess(&v_guess, prev.tau, Some(&w));
    let solver = linearized_solver(base.dim(), solver);
    let sol = match solve_linear(&system, &guess, &solver) {
        Ok(s) => s,
        Err(BvpError::RankDeficient) => return Err(ContinuationError::FoldInTangentSystem),
        Err(e) => return Err(e.into()),
    };
    let (v, tau) = split_augmented(&sol, base.dim());
    Ok(Tangent { v, tau })
}

/// Unit tangent from the nonlinear arclength-closed system, seeded from
/// `(0, 1)`.
pub fn tangent_unit_nonlinear<P: ParamBvp>(
    base: &P,
    point: &CurvePoint,
    solver: &SolverOptions,
) -> Result<Tangent, ContinuationError> {
    tangent_unit_seeded(base, point, None, solver)
}

/// Unit tangent with an explicit warm start (the previous step's tangent
/// converges in a couple of iterations; the cold start is `(0, 1)`).
pub fn tangent_unit_seeded<P: ParamBvp>(
    base: &P,
    point: &CurvePoint,
    seed: Option<&Tangent>,
    solver: &SolverOptions,
) -> Result<Tangent, ContinuationError> {
    let system = UnitTangentSystem::new(base, point);
    let coarse = decimated(point.y.mesh(), 1200);
    let guess = match seed {
        Some(t) => {
            let v = t.v.resample(&coarse);
            let w = cumulative_square_integral(&v);
            augmented_guess(&v, t.tau, Some(&w))
        }
        None => {
            let zero = MeshSolution::constant(&vec![0.0; base.dim()], 2).resample(&coarse);
            augmented_guess(&zero, 1.0, None)
        }
    };
    let sol = solve(&system, &guess, &linearized_solver(base.dim(), solver))?;
    let (v, tau) = split_augmented(&sol, base.dim());
    Ok(Tangent { v, tau })
}

/// Normalize a tangent to unit Hilbert norm.
pub fn normalize_tangent(t: &Tangent) -> Result<Tangent, ContinuationError> {
    let kappa = t.norm();
    if kappa < 1e-14 || !kappa.is_finite() {
        return Err(ContinuationError::DegenerateTangent { norm: kappa });
    }
    Ok(t.scaled(1.0 / kappa))
}

/// First-order prediction along a tangent.
pub fn predict(point: &CurvePoint, tangent: &Tangent, sigma: f64) -> CurvePoint {
    CurvePoint {
        y: point.y.axpy(sigma, &tangent.v),
        lam: point.lam + sigma * tangent.tau,
    }
}

/// Orient a tangent: against the previous tangent when one exists, else by
/// the direction flag (magnitude 2 forces the parameter direction).
pub fn orient_tangent(
    tangent: Tangent,
    previous: Option<&Tangent>,
    direction: i8,
) -> Result<Tangent, ContinuationError> {
    let kappa = match previous {
        Some(prev) => prev.dot(&tangent),
        None => {
            let mut d = direction as f64;
            if direction.abs() == 2 && tangent.tau < 0.0 {
                d = -d;
            }
            d
        }
    };
    if kappa == 0.0 {
        return Err(ContinuationError::AmbiguousOrientation);
    }
    Ok(if kappa < 0.0 {
        tangent.scaled(-1.0)
    } else {
        tangent
    })
}

/// Iterated Newton correction of a predictor onto the curve. Returns the
/// corrected point and the number of corrections taken.
pub fn correct_newton<P: ParamBvp>(
    base: &P,
    predictor: &CurvePoint,
    tangent: &Tangent,
    opts: &PacOptions,
) -> Result<(CurvePoint, usize), ContinuationError> {
    let n = base.dim();
    let predictor_norm = norm(&predictor.y, predictor.lam).max(1e-14);
    let mut corrector = predictor.clone();
    for k in 1..=opts.max_corrections {
        let system = CorrectionSystem::new(base, &corrector, tangent);
        let zero = MeshSolution::constant(&vec![0.0; n], 2).resample(corrector.y.mesh());
        let guess = augmented_guess(&zero, 0.0, None);
        // the correction forcing carries the corrector's own defect; chasing
        // it below the parent tolerance only thrashes the mesh
        let sol = solve_linear(&system, &guess, &linearized_solver(n, &opts.solver))?;
        let (dy, dlam) = split_augmented(&sol, n);
        // adopt the (possibly refined) correction mesh
        let updated = corrector.y.resample(dy.mesh()).axpy(1.0, &dy);
        corrector = CurvePoint {
            y: updated,
            lam: corrector.lam + dlam,
        };
        let step = norm(&dy, dlam);
        if step / predictor_norm < opts.convergence {
            return Ok((corrector, k));
        }
    }
    Err(ContinuationError::CorrectionDiverged {
        max_corrections: opts.max_corrections,
    })
}

/// Re-solve the full problem with orthogonality to the tangent through the
/// predictor, starting from the corrected point.
pub fn polish<P: ParamBvp>(
    base: &P,
    corrected: &CurvePoint,
    tangent: &Tangent,
    predictor: &CurvePoint,
    solver: &SolverOptions,
) -> Result<CurvePoint, ContinuationError> {
    let system = OrthogonalSystem {
        base,
        tangent,
        anchor_y: predictor.y.clone(),
        anchor_lam: predictor.lam,
    };
    let guess = augmented_guess(&corrected.y, corrected.lam, None);
    let sol = solve(&system, &guess, &augmented_solver(base.dim(), solver))?;
    let (y, lam) = split_augmented(&sol, base.dim());
    Ok(CurvePoint { y, lam })
}

/// Pseudo-arclength predictor-corrector continuation. The stop predicate is
/// consulted on every accepted point.
pub fn pac_bvp<P: ParamBvp>(
    base: &P,
    start: CurvePoint,
    opts: &PacOptions,
    mut stop: impl FnMut(&CurvePoint) -> bool,
) -> Trace {
    let mut points = vec![start];
    let mut sigmas = vec![0.0];
    let mut tangents: Vec<Tangent> = Vec::new();
    let mut sigma = opts.sigma_init;
    let mut prev_tangent = Tangent {
        v: MeshSolution::constant(&vec![0.0; base.dim()], 2),
        tau: 1.0,
    };
    let mut flag = TraceFlag::ExhaustedSteps;

    'steps: for j in 0..opts.max_points {
        let point = points.last().unwrap();
        let raw = match tangent_linear(base, point, &prev_tangent, &opts.solver) {
            Ok(t) => t,
            Err(e) => {
                flag = TraceFlag::TangentFailure(e.to_string());
                break;
            }
        };
        let oriented = if j == 0 {
            let mut d = opts.direction as f64;
            if opts.direction.abs() == 2 && raw.tau < 0.0 {
                d = -d;
            }
            if d < 0.0 {
                raw.scaled(-1.0)
            } else {
                raw
            }
        } else {
            raw
        };
        let tangent = match normalize_tangent(&oriented) {
            Ok(t) => t,
            Err(e) => {
                flag = TraceFlag::TangentFailure(e.to_string());
                break;
            }
        };

        loop {
            let predictor = predict(points.last().unwrap(), &tangent, sigma);
            // a failed polish counts as a failed step: accepted points must
            // satisfy the raw problem to solver accuracy, which the merely
            // gamma-converged corrector does not guarantee
            let attempt = correct_newton(base, &predictor, &tangent, opts).and_then(
                |(corrected, k)| {
                    if opts.polish {
                        polish(base, &corrected, &tangent, &predictor, &opts.solver)
                            .map(|p| (p, k))
                    } else {
                        Ok((corrected, k))
                    }
                },
            );
            match attempt {
                Ok((accepted, k)) => {
                    sigmas.push(sigma);
                    let hit = stop(&accepted);
                    points.push(accepted);
                    if k <= opts.fast_corrections {
                        sigma = (sigma * opts.sigma_increase).min(opts.sigma_max);
                    }
                    tangents.push(tangent.clone());
                    prev_tangent = tangent;
                    if hit {
                        flag = TraceFlag::TargetReached;
                        break 'steps;
                    }
                    break;
                }
                Err(_) => {
                    sigma *= opts.sigma_reduce;
                    if sigma < opts.sigma_min {
                        flag = TraceFlag::SteplengthUnderflow;
                        break 'steps;
                    }
                }
            }
        }
    }
    Trace {
        points,
        sigmas,
        tangents,
        flag,
    }
}

/// Sweep predictor-corrector continuation: at each accepted point compute a
/// unit tangent, orient it, then advance the steplength monotonically from
/// zero as far as the sweep solver manages (this is how folds are rounded).
pub fn pac_s3_bvp<P: ParamBvp>(
    base: &P,
    start: CurvePoint,
    opts: &SweepOptions,
    mut stop: impl FnMut(&CurvePoint) -> bool,
) -> Trace {
    let mut points = vec![start];
    let mut sigmas = vec![0.0];
    let mut tangents: Vec<Tangent> = Vec::new();
    let mut prev_tangent: Option<Tangent> = None;
    let mut flag = TraceFlag::ExhaustedSteps;

    for j in 0..opts.sigma_max.len() {
        let point = points.last().unwrap();
        let tangent = match tangent_unit_seeded(base, point, prev_tangent.as_ref(), &opts.solver)
            .and_then(|t| normalize_tangent(&t))
            .and_then(|t| orient_tangent(t, prev_tangent.as_ref(), opts.direction))
        {
            Ok(t) => t,
            Err(e) => {
                flag = TraceFlag::TangentFailure(e.to_string());
                break;
            }
        };

        let cap = opts.sigma_max[j];
        if cap <= 0.0 {
            flag = TraceFlag::NoProgress;
            break;
        }
        let (accepted, reached) = sweep_step(base, point, &tangent, cap, &opts.solver);
        if reached == 0.0 {
            flag = TraceFlag::NoProgress;
            break;
        }
        sigmas.push(reached);
        let accepted = accepted.expect("nonzero progress implies a solution");
        let hit = stop(&accepted);
        points.push(accepted);
        tangents.push(tangent.clone());
        prev_tangent = Some(tangent);
        if hit {
            flag = TraceFlag::TargetReached;
            break;
        }
    }
    Trace {
        points,
        sigmas,
        tangents,
        flag,
    }
}

/// A parameterized problem frozen at one parameter value, usable by the
/// plain boundary-value solver (seeding sweeps, re-verification).
pub struct AtParameter<'a, P: ParamBvp> {
    pub base: &'a P,
    pub lam: f64,
}

impl<'a, P: ParamBvp> AtParameter<'a, P> {
    pub fn new(base: &'a P, lam: f64) -> Self {
        AtParameter { base, lam }
    }
}

impl<P: ParamBvp> BvpProblem for AtParameter<'_, P> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn rhs(&self, s: f64, y: &[f64], out: &mut [f64]) {
        self.base.rhs(s, y, self.lam, out);
    }
    fn rhs_jac(&self, s: f64, y: &[f64], out: &mut DMat) {
        self.base.rhs_jac_y(s, y, self.lam, out);
    }
    fn bc(&self, ya: &[f64], yb: &[f64], out: &mut [f64]) {
        self.base.bc(ya, yb, self.lam, out);
    }
    fn bc_jac(&self, ya: &[f64], yb: &[f64], ja: &mut DMat, jb: &mut DMat) {
        let mut jlam = vec![0.0; self.base.dim()];
        self.base.bc_jacs(ya, yb, self.lam, ja, jb, &mut jlam);
    }
}

/// One sweep step: advance the steplength monotonically from zero toward
/// `cap`, re-solving the orthogonality-closed system with tangent-predictor
/// warm starts (the guess choice is what makes long sweeps cheap).
fn sweep_step<P: ParamBvp>(
    base: &P,
    point: &CurvePoint,
    tangent: &Tangent,
    cap: f64,
    solver: &SolverOptions,
) -> (Option<CurvePoint>, f64) {
    let opts = augmented_solver(base.dim(), solver);
    let min_step = 1e-10 * cap;
    let mut reached = 0.0;
    let mut current = point.clone();
    let mut step = cap; // greedy first try
    let mut streak = 0u32;
    let mut any = false;
    loop {
        let remaining = cap - reached;
        if remaining <= min_step {
            break;
        }
        let attempt = step.min(remaining);
        let sigma = reached + attempt;
        let system = OrthogonalSystem {
            base,
            tangent,
            anchor_y: point.y.axpy(sigma, &tangent.v),
            anchor_lam: point.lam + sigma * tangent.tau,
        };
        let predicted = predict(&current, tangent, attempt);
        let guess = augmented_guess(&predicted.y, predicted.lam, None);
        match solve(&system, &guess, &opts) {
            Ok(sol) => {
                let (y, lam) = split_augmented(&sol, base.dim());
                current = CurvePoint { y, lam };
                reached = sigma;
                any = true;
                streak += 1;
                if streak >= 2 {
                    step *= 2.0;
                    streak = 0;
                }
            }
            Err(_) => {
                streak = 0;
                step = if step >= cap { cap / 8.0 } else { step * 0.5 };
                if step < min_step {
                    break;
                }
            }
        }
    }
    if any {
        (Some(current), reached)
    } else {
        (None, 0.0)
    }
}

/// Residuals of a curve point against the raw problem (no closure
/// equations): dense-sampled normalized defect and boundary residual.
pub fn raw_residuals<P: ParamBvp>(base: &P, point: &CurvePoint) -> (f64, f64) {
    let n = base.dim();
    let mut sv = vec![0.0; n];
    let mut dv = vec![0.0; n];
    let mut fv = vec![0.0; n];
    let mesh = point.y.mesh();
    let mut defect: f64 = 0.0;
    for i in 0..mesh.len() - 1 {
        for k in 0..10 {
            let s = mesh[i] + (mesh[i + 1] - mesh[i]) * (k as f64 + 0.5) / 10.0;
            point.y.eval_into(s, &mut sv);
            point.y.eval_deriv_into(s, &mut dv);
            base.rhs(s, &sv, point.lam, &mut fv);
            for c in 0..n {
                defect = defect.max((dv[c] - fv[c]).abs() / (1.0 + fv[c].abs()));
            }
        }
    }
    let mut bc = vec![0.0; n];
    base.bc(point.y.first(), point.y.last(), point.lam, &mut bc);
    let bc_norm = bc.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    (defect, bc_norm)
}
