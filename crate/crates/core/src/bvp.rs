//! Global-method nonlinear two-point boundary-value solver on `[0, 1]`:
//! three-point Lobatto IIIA collocation (order 4) with the midpoint
//! eliminated, damped Newton on the collocated system with user Jacobians,
//! defect-driven mesh adaptation, and a monotone parameter-sweep driver.
//!
//! The continuous solution is the piecewise cubic Hermite interpolant through
//! the node values and node derivatives; its midpoint value coincides with
//! the eliminated collocation midpoint.

use crate::linalg::DMat;
use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BvpError {
    #[error("Newton iteration stalled (scaled residual {residual:.3e} after {iterations} iterations)")]
    NewtonStalled { residual: f64, iterations: usize },
    #[error("mesh overflow: {nodes} nodes but defect {defect:.3e} still above tolerance")]
    MeshOverflow { nodes: usize, defect: f64 },
    #[error("collocation matrix is rank deficient")]
    RankDeficient,
}

/// Solver options. `tol` bounds the normalized defect of the returned
/// interpolant.
#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_newton: usize,
    /// Damping factors tried are `2^0 .. 2^-max_halvings`.
    pub max_halvings: u32,
    pub max_mesh: usize,
    /// When false the mesh is kept fixed and the defect is only reported.
    pub adapt: bool,
    /// Restrict defect-based error control to the leading components
    /// (auxiliary quadrature channels riding along piecewise interpolants
    /// would otherwise drive spurious refinement).
    pub defect_components: Option<usize>,
    /// Diagnostic label shown by the mesh debugging output.
    pub label: &'static str,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_newton: 40,
            max_halvings: 10,
            max_mesh: 10_000,
            adapt: true,
            defect_components: None,
            label: "",
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolverOptions {
            tol,
            ..Default::default()
        }
    }
}

/// A first-order two-point boundary-value problem on `[0, 1]` with square
/// boundary conditions.
pub trait BvpProblem {
    fn dim(&self) -> usize;
    /// Linear problems get one exact Newton step; a stall is then reported
    /// as rank deficiency.
    fn is_linear(&self) -> bool {
        false
    }
    fn rhs(&self, s: f64, y: &[f64], out: &mut [f64]);
    fn rhs_jac(&self, s: f64, y: &[f64], out: &mut DMat);
    fn bc(&self, ya: &[f64], yb: &[f64], out: &mut [f64]);
    fn bc_jac(&self, ya: &[f64], yb: &[f64], ja: &mut DMat, jb: &mut DMat);
}

/// Solution on an adaptive mesh: node values plus node derivatives defining
/// the continuous interpolant, and the reported defect.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshSolution {
    mesh: Vec<f64>,
    values: Vec<f64>,
    derivs: Vec<f64>,
    dim: usize,
    pub residual: f64,
}

impl MeshSolution {
    pub fn from_nodes(mesh: Vec<f64>, values: Vec<f64>, derivs: Vec<f64>, dim: usize) -> Self {
        assert_eq!(values.len(), mesh.len() * dim);
        assert_eq!(derivs.len(), mesh.len() * dim);
        assert!(mesh.windows(2).all(|w| w[0] < w[1]), "mesh must increase");
        MeshSolution {
            mesh,
            values,
            derivs,
            dim,
            residual: f64::NAN,
        }
    }

    /// Constant function on a uniform mesh with zero derivative.
    pub fn constant(value: &[f64], nodes: usize) -> Self {
        let dim = value.len();
        let mesh: Vec<f64> = (0..nodes)
            .map(|i| i as f64 / (nodes - 1) as f64)
            .collect();
        let mut values = Vec::with_capacity(nodes * dim);
        for _ in 0..nodes {
            values.extend_from_slice(value);
        }
        MeshSolution {
            mesh,
            values: values.clone(),
            derivs: vec![0.0; values.len()],
            dim,
            residual: f64::NAN,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }
    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.mesh.len()
    }
    pub fn mesh(&self) -> &[f64] {
        &self.mesh
    }
    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
    pub fn node_deriv(&self, i: usize) -> &[f64] {
        &self.derivs[i * self.dim..(i + 1) * self.dim]
    }
    pub fn first(&self) -> &[f64] {
        self.node(0)
    }
    pub fn last(&self) -> &[f64] {
        self.node(self.n_nodes() - 1)
    }

    fn interval_of(&self, s: f64) -> usize {
        let n = self.mesh.len();
        match self
            .mesh
            .binary_search_by(|probe| probe.partial_cmp(&s).unwrap())
        {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    /// Cubic Hermite evaluation.
    pub fn eval_into(&self, s: f64, out: &mut [f64]) {
        let i = self.interval_of(s);
        let (s0, s1) = (self.mesh[i], self.mesh[i + 1]);
        let h = s1 - s0;
        let tau = (s - s0) / h;
        let t2 = tau * tau;
        let t3 = t2 * tau;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + tau;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let y0 = self.node(i);
        let y1 = self.node(i + 1);
        let d0 = self.node_deriv(i);
        let d1 = self.node_deriv(i + 1);
        for c in 0..self.dim {
            out[c] = h00 * y0[c] + h * h10 * d0[c] + h01 * y1[c] + h * h11 * d1[c];
        }
    }

    /// Derivative of the interpolant.
    pub fn eval_deriv_into(&self, s: f64, out: &mut [f64]) {
        let i = self.interval_of(s);
        let (s0, s1) = (self.mesh[i], self.mesh[i + 1]);
        let h = s1 - s0;
        let tau = (s - s0) / h;
        let t2 = tau * tau;
        let g00 = (6.0 * t2 - 6.0 * tau) / h;
        let g10 = 3.0 * t2 - 4.0 * tau + 1.0;
        let g01 = (-6.0 * t2 + 6.0 * tau) / h;
        let g11 = 3.0 * t2 - 2.0 * tau;
        let y0 = self.node(i);
        let y1 = self.node(i + 1);
        let d0 = self.node_deriv(i);
        let d1 = self.node_deriv(i + 1);
        for c in 0..self.dim {
            out[c] = g00 * y0[c] + g10 * d0[c] + g01 * y1[c] + g11 * d1[c];
        }
    }

    pub fn eval(&self, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(s, &mut out);
        out
    }

    /// Resample onto a new mesh (values and derivatives from the interpolant).
    pub fn resample(&self, mesh: &[f64]) -> MeshSolution {
        let dim = self.dim;
        let mut values = vec![0.0; mesh.len() * dim];
        let mut derivs = vec![0.0; mesh.len() * dim];
        for (i, &s) in mesh.iter().enumerate() {
            self.eval_into(s, &mut values[i * dim..(i + 1) * dim]);
            self.eval_deriv_into(s, &mut derivs[i * dim..(i + 1) * dim]);
        }
        MeshSolution {
            mesh: mesh.to_vec(),
            values,
            derivs,
            dim,
            residual: f64::NAN,
        }
    }

    /// `self + scale * other`, on this solution's mesh.
    pub fn axpy(&self, scale: f64, other: &MeshSolution) -> MeshSolution {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        let mut tmp = vec![0.0; self.dim];
        for (i, &s) in self.mesh.iter().enumerate() {
            other.eval_into(s, &mut tmp);
            for c in 0..self.dim {
                out.values[i * self.dim + c] += scale * tmp[c];
            }
            other.eval_deriv_into(s, &mut tmp);
            for c in 0..self.dim {
                out.derivs[i * self.dim + c] += scale * tmp[c];
            }
        }
        out.residual = f64::NAN;
        out
    }

    /// Restrict to the leading `dim` components.
    pub fn head_components(&self, dim: usize) -> MeshSolution {
        assert!(dim <= self.dim);
        let n = self.n_nodes();
        let mut values = Vec::with_capacity(n * dim);
        let mut derivs = Vec::with_capacity(n * dim);
        for i in 0..n {
            values.extend_from_slice(&self.node(i)[..dim]);
            derivs.extend_from_slice(&self.node_deriv(i)[..dim]);
        }
        MeshSolution {
            mesh: self.mesh.clone(),
            values,
            derivs,
            dim,
            residual: self.residual,
        }
    }

    /// Append constant trailing components (used to extend a solution with
    /// auxiliary channels).
    pub fn with_trailing(&self, extra: &[f64]) -> MeshSolution {
        let dim = self.dim + extra.len();
        let n = self.n_nodes();
        let mut values = Vec::with_capacity(n * dim);
        let mut derivs = Vec::with_capacity(n * dim);
        for i in 0..n {
            values.extend_from_slice(self.node(i));
            values.extend_from_slice(extra);
            derivs.extend_from_slice(self.node_deriv(i));
            derivs.extend(std::iter::repeat(0.0).take(extra.len()));
        }
        MeshSolution {
            mesh: self.mesh.clone(),
            values,
            derivs,
            dim,
            residual: f64::NAN,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().chain(self.derivs.iter()).all(|v| v.is_finite())
    }
}

/// Inner product on the solution space: integral of the pointwise dot product
/// over `[0, 1]` plus the product of the scalar channels. Trapezoid rule on
/// the merged mesh, each merged interval subdivided for quadrature accuracy.
pub fn inner_product(u: &MeshSolution, tau_u: f64, v: &MeshSolution, tau_v: f64) -> f64 {
    const SUBDIV: usize = 8;
    let mut grid: Vec<f64> = u.mesh.iter().chain(v.mesh.iter()).copied().collect();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    let dim = u.dim.min(v.dim);
    let mut ub = vec![0.0; u.dim];
    let mut vb = vec![0.0; v.dim];
    let dot_at = |s: f64, ub: &mut [f64], vb: &mut [f64]| {
        u.eval_into(s, ub);
        v.eval_into(s, vb);
        ub[..dim].iter().zip(&vb[..dim]).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut acc = 0.0;
    for w in grid.windows(2) {
        let h = (w[1] - w[0]) / SUBDIV as f64;
        let mut prev = dot_at(w[0], &mut ub, &mut vb);
        for k in 1..=SUBDIV {
            let s = w[0] + h * k as f64;
            let cur = dot_at(s.min(w[1]), &mut ub, &mut vb);
            acc += 0.5 * h * (prev + cur);
            prev = cur;
        }
    }
    acc + tau_u * tau_v
}

/// Norm induced by [`inner_product`].
pub fn norm(u: &MeshSolution, tau: f64) -> f64 {
    inner_product(u, tau, u, tau).sqrt()
}

// --- collocation internals ---

struct Workspace {
    dim: usize,
    f_nodes: Vec<f64>,
    f_mid: Vec<f64>,
    y_mid: Vec<f64>,
    residual: Vec<f64>,
}

/// Collocation residual for all intervals plus boundary rows.
fn assemble_residual<P: BvpProblem>(
    p: &P,
    mesh: &[f64],
    y: &[f64],
    ws: &mut Workspace,
) -> bool {
    let m = ws.dim;
    let n = mesh.len();
    let mut finite = true;
    for i in 0..n {
        p.rhs(mesh[i], &y[i * m..(i + 1) * m], &mut ws.f_nodes[i * m..(i + 1) * m]);
    }
    for i in 0..n - 1 {
        let h = mesh[i + 1] - mesh[i];
        let (yi, yi1) = (&y[i * m..(i + 1) * m], &y[(i + 1) * m..(i + 2) * m]);
        let (fi, fi1) = (
            &ws.f_nodes[i * m..(i + 1) * m],
            &ws.f_nodes[(i + 1) * m..(i + 2) * m],
        );
        for c in 0..m {
            ws.y_mid[i * m + c] = 0.5 * (yi[c] + yi1[c]) - 0.125 * h * (fi1[c] - fi[c]);
        }
        let smid = mesh[i] + 0.5 * h;
        let (ym, fm) = (
            &ws.y_mid[i * m..(i + 1) * m],
            &mut ws.f_mid[i * m..(i + 1) * m],
        );
        p.rhs(smid, ym, fm);
        for c in 0..m {
            let r = yi1[c] - yi[c] - h / 6.0 * (fi[c] + 4.0 * fm[c] + fi1[c]);
            ws.residual[i * m + c] = r;
            finite &= r.is_finite();
        }
    }
    let bc_row = (n - 1) * m;
    p.bc(
        &y[..m],
        &y[(n - 1) * m..n * m],
        &mut ws.residual[bc_row..bc_row + m],
    );
    finite &= ws.residual[bc_row..bc_row + m].iter().all(|v| v.is_finite());
    finite
}

fn residual_norm(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Scaled convergence measure: collocation rows relative to `h (1 + |f|)`,
/// boundary rows absolute.
fn scaled_residuals(mesh: &[f64], ws: &Workspace) -> (f64, f64) {
    let m = ws.dim;
    let n = mesh.len();
    let mut col: f64 = 0.0;
    for i in 0..n - 1 {
        let h = mesh[i + 1] - mesh[i];
        for c in 0..m {
            let f_scale = 1.0 + ws.f_mid[i * m + c].abs();
            col = col.max(ws.residual[i * m + c].abs() / (h * f_scale));
        }
    }
    let bc = ws.residual[(n - 1) * m..]
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    (col, bc)
}

fn assemble_jacobian<P: BvpProblem>(
    p: &P,
    mesh: &[f64],
    y: &[f64],
    ws: &Workspace,
    triplets: &mut Vec<Triplet<usize, usize, f64>>,
) {
    let m = ws.dim;
    let n = mesh.len();
    triplets.clear();
    let mut a_i = DMat::zeros(m, m);
    let mut a_i1 = DMat::zeros(m, m);
    let mut a_m = DMat::zeros(m, m);
    p.rhs_jac(mesh[0], &y[..m], &mut a_i1);
    for i in 0..n - 1 {
        std::mem::swap(&mut a_i, &mut a_i1);
        p.rhs_jac(mesh[i + 1], &y[(i + 1) * m..(i + 2) * m], &mut a_i1);
        let h = mesh[i + 1] - mesh[i];
        let smid = mesh[i] + 0.5 * h;
        p.rhs_jac(smid, &ws.y_mid[i * m..(i + 1) * m], &mut a_m);

        // d r_i / d y_i = -I - h/6 (A_i + 2 A_m + h/2 A_m A_i)
        // d r_i / d y_{i+1} = I - h/6 (A_{i+1} + 2 A_m - h/2 A_m A_{i+1})
        let ami = a_m.mul_mat(&a_i);
        let ami1 = a_m.mul_mat(&a_i1);
        let row0 = i * m;
        for r in 0..m {
            for c in 0..m {
                let ident = if r == c { 1.0 } else { 0.0 };
                let left = -ident
                    - h / 6.0 * (a_i.at(r, c) + 2.0 * a_m.at(r, c) + 0.5 * h * ami.at(r, c));
                let right = ident
                    - h / 6.0 * (a_i1.at(r, c) + 2.0 * a_m.at(r, c) - 0.5 * h * ami1.at(r, c));
                if left != 0.0 {
                    triplets.push(Triplet::new(row0 + r, i * m + c, left));
                }
                if right != 0.0 {
                    triplets.push(Triplet::new(row0 + r, (i + 1) * m + c, right));
                }
            }
        }
    }
    let mut ja = DMat::zeros(m, m);
    let mut jb = DMat::zeros(m, m);
    p.bc_jac(&y[..m], &y[(n - 1) * m..n * m], &mut ja, &mut jb);
    let row0 = (n - 1) * m;
    for r in 0..m {
        for c in 0..m {
            let va = ja.at(r, c);
            if va != 0.0 {
                triplets.push(Triplet::new(row0 + r, c, va));
            }
            let vb = jb.at(r, c);
            if vb != 0.0 {
                triplets.push(Triplet::new(row0 + r, (n - 1) * m + c, vb));
            }
        }
    }
}

/// Damped Newton on a fixed mesh with Jacobian reuse: the factorization is
/// kept across iterations while full steps contract well and refreshed at the
/// current iterate otherwise. On success `y` holds the solution and the
/// workspace holds its residual data.
fn newton_on_mesh<P: BvpProblem>(
    p: &P,
    mesh: &[f64],
    y: &mut Vec<f64>,
    ws: &mut Workspace,
    opts: &SolverOptions,
) -> Result<usize, BvpError> {
    let m = ws.dim;
    let n = mesh.len();
    let unknowns = n * m;
    let mut triplets: Vec<Triplet<usize, usize, f64>> = Vec::new();
    let col_tol = opts.tol / 30.0;
    let bc_tol = 0.1 * opts.tol;

    let finite = assemble_residual(p, mesh, y, ws);
    if !finite {
        return Err(BvpError::NewtonStalled {
            residual: f64::NAN,
            iterations: 0,
        });
    }
    let mut r_norm = residual_norm(&ws.residual);

    let factorize = |y: &[f64],
                     ws: &Workspace,
                     triplets: &mut Vec<Triplet<usize, usize, f64>>|
     -> Result<faer::sparse::linalg::solvers::Lu<usize, f64>, BvpError> {
        assemble_jacobian(p, mesh, y, ws, triplets);
        let mat: SparseColMat<usize, f64> =
            SparseColMat::try_new_from_triplets(unknowns, unknowns, triplets)
                .map_err(|_| BvpError::RankDeficient)?;
        mat.sp_lu().map_err(|_| BvpError::RankDeficient)
    };

    let mut lu = factorize(y, ws, &mut triplets)?;
    let mut fresh = true;
    let mut frozen_steps = 0usize;
    let mut delta_v = vec![0.0; unknowns];
    let mut y_old = vec![0.0; unknowns];
    let newton_debug = std::env::var_os("TRUNDLE_NEWTON_DEBUG").is_some();
    for iter in 0..opts.max_newton {
        let (col, bc) = scaled_residuals(mesh, ws);
        if newton_debug {
            eprintln!(
                "[newton {} n={} iter {iter}] r={r_norm:.3e} col={col:.3e}/{col_tol:.1e} bc={bc:.3e}/{bc_tol:.1e} fresh={fresh}",
                opts.label,
                mesh.len()
            );
        }
        if col <= col_tol && bc <= bc_tol {
            return Ok(iter);
        }
        let rhs = faer::Mat::from_fn(unknowns, 1, |i, _| -ws.residual[i]);
        let delta = lu.solve(&rhs);
        let mut delta_finite = true;
        for i in 0..unknowns {
            delta_v[i] = delta[(i, 0)];
            delta_finite &= delta_v[i].is_finite();
        }
        if !delta_finite {
            if fresh {
                return Err(BvpError::RankDeficient);
            }
            lu = factorize(y, ws, &mut triplets)?;
            fresh = true;
            continue;
        }

        // monotone residual-norm line search
        let mut accepted = false;
        let mut damping = 1.0;
        y_old.copy_from_slice(y);
        let mut new_norm = r_norm;
        for _ in 0..=opts.max_halvings {
            for i in 0..unknowns {
                y[i] = y_old[i] + damping * delta_v[i];
            }
            let finite = assemble_residual(p, mesh, y, ws);
            if finite {
                new_norm = residual_norm(&ws.residual);
                if new_norm < r_norm * (1.0 - 1e-4 * damping) || new_norm <= 1e-14 {
                    accepted = true;
                    break;
                }
            }
            damping *= 0.5;
        }
        if !accepted {
            y.copy_from_slice(&y_old);
            let _ = assemble_residual(p, mesh, y, ws);
            if !fresh {
                // the stale factorization may be the culprit
                lu = factorize(y, ws, &mut triplets)?;
                fresh = true;
                continue;
            }
            let (col, bc) = scaled_residuals(mesh, ws);
            if p.is_linear() {
                return Err(BvpError::RankDeficient);
            }
            return Err(BvpError::NewtonStalled {
                residual: col.max(bc),
                iterations: iter,
            });
        }
        let contraction = new_norm / r_norm.max(1e-300);
        r_norm = new_norm;
        // secondary convergence test: a vanishing accepted step means the
        // iterate is at the attractor to machine precision even when the
        // residual gates sit below the roundoff floor (large solutions).
        // The boundary rows still have to hold to a scale-aware tolerance;
        // the mesh loop re-checks the interior defect either way.
        let step_inf = delta_v
            .iter()
            .fold(0.0f64, |a, v| a.max((damping * v).abs()));
        let y_inf = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if step_inf <= 1e-11 * (1.0 + y_inf) {
            let (_, bc) = scaled_residuals(mesh, ws);
            if bc <= bc_tol * (1.0 + y_inf) {
                return Ok(iter + 1);
            }
        }
        // keep the factorization while full steps make progress (frozen
        // iterations cost a fraction of a refactorization), refreshing
        // periodically and whenever damping kicks in
        if damping < 1.0 || contraction > 0.5 || frozen_steps >= 6 {
            lu = factorize(y, ws, &mut triplets)?;
            fresh = true;
            frozen_steps = 0;
        } else {
            fresh = false;
            frozen_steps += 1;
        }
    }
    let (col, bc) = scaled_residuals(mesh, ws);
    if col <= col_tol && bc <= bc_tol {
        return Ok(opts.max_newton);
    }
    if p.is_linear() {
        return Err(BvpError::RankDeficient);
    }
    Err(BvpError::NewtonStalled {
        residual: col.max(bc),
        iterations: opts.max_newton,
    })
}

/// Normalized defect of the interpolant per interval, sampled at the two
/// interior Gauss points (where the collocation defect peaks).
fn interval_defects(sol: &MeshSolution, p: &impl BvpProblem, components: usize) -> Vec<f64> {
    let m = sol.dim();
    let n = sol.n_nodes();
    let watched = components.min(m);
    let mut sv = vec![0.0; m];
    let mut dv = vec![0.0; m];
    let mut fv = vec![0.0; m];
    let offsets = [0.5 - 0.5 / 3.0f64.sqrt(), 0.5 + 0.5 / 3.0f64.sqrt()];
    (0..n - 1)
        .map(|i| {
            let h = sol.mesh[i + 1] - sol.mesh[i];
            let mut worst: f64 = 0.0;
            for &o in &offsets {
                let s = sol.mesh[i] + o * h;
                sol.eval_into(s, &mut sv);
                sol.eval_deriv_into(s, &mut dv);
                p.rhs(s, &sv, &mut fv);
                for c in 0..watched {
                    let d = (dv[c] - fv[c]).abs() / (1.0 + fv[c].abs());
                    worst = worst.max(d);
                }
            }
            worst
        })
        .collect()
}

fn solution_from_state<P: BvpProblem>(p: &P, mesh: &[f64], y: &[f64]) -> MeshSolution {
    let m = p.dim();
    let n = mesh.len();
    let mut derivs = vec![0.0; n * m];
    for i in 0..n {
        p.rhs(mesh[i], &y[i * m..(i + 1) * m], &mut derivs[i * m..(i + 1) * m]);
    }
    MeshSolution::from_nodes(mesh.to_vec(), y.to_vec(), derivs, m)
}

/// Defect-equidistributed mesh: each old interval contributes nodes in
/// proportion to its estimated resolution demand (`defect^(1/4)` scaling for
/// the order-4 scheme). Coarsening is limited to a factor of four per pass.
fn equidistributed_mesh(mesh: &[f64], defects: &[f64], target: f64) -> Vec<f64> {
    let n = mesh.len();
    let mut weights = Vec::with_capacity(n - 1);
    let mut total = 0.0;
    for d in defects {
        // redistribution only ever removes nodes (growth belongs to the
        // refinement pass): intervals already near the gate keep their
        // density, clearly over-resolved ones give nodes up
        let w = (d / (0.1 * target)).powf(0.25).clamp(0.25, 1.0);
        weights.push(w);
        total += w;
    }
    let new_intervals = (total.ceil() as usize).max(10);
    let mut new_mesh = Vec::with_capacity(new_intervals + 1);
    new_mesh.push(mesh[0]);
    let step = total / new_intervals as f64;
    // never emit slivers: intervals below this width are numerically
    // degenerate for the interpolant
    let min_gap = 1e-9 * (mesh[n - 1] - mesh[0]);
    let mut acc = 0.0;
    let mut next = step;
    for i in 0..n - 1 {
        let w = weights[i];
        while next <= acc + w - 1e-12 {
            let frac = (next - acc) / w;
            let s = mesh[i] + frac * (mesh[i + 1] - mesh[i]);
            if s - *new_mesh.last().unwrap() > min_gap && mesh[n - 1] - s > min_gap {
                new_mesh.push(s);
            }
            next += step;
        }
        acc += w;
    }
    new_mesh.push(mesh[n - 1]);
    new_mesh
}

/// Solve a nonlinear TPBVP starting from `guess`. The guess supplies both the
/// initial mesh and the initial iterate.
pub fn solve<P: BvpProblem>(
    p: &P,
    guess: &MeshSolution,
    opts: &SolverOptions,
) -> Result<MeshSolution, BvpError> {
    assert_eq!(guess.dim(), p.dim(), "guess dimension mismatch");
    let m = p.dim();
    let mut mesh = guess.mesh().to_vec();
    let mut y: Vec<f64> = Vec::with_capacity(mesh.len() * m);
    for i in 0..mesh.len() {
        y.extend_from_slice(guess.node(i));
    }
    let mut coarsened = false;
    // a solution that already passed the defect gate before a coarsening
    // attempt; returned if the attempt goes badly
    let mut fallback: Option<MeshSolution> = None;
    let debug = std::env::var_os("TRUNDLE_MESH_DEBUG").map(|_| std::time::Instant::now());
    let mut rounds = 0usize;

    loop {
        rounds += 1;
        let n = mesh.len();
        let mut ws = Workspace {
            dim: m,
            f_nodes: vec![0.0; n * m],
            f_mid: vec![0.0; (n - 1) * m],
            y_mid: vec![0.0; (n - 1) * m],
            residual: vec![0.0; n * m],
        };
        match newton_on_mesh(p, &mesh, &mut y, &mut ws, opts) {
            Ok(_) => {}
            Err(e) => {
                if let Some(best) = fallback {
                    return Ok(best);
                }
                return Err(e);
            }
        }
        let mut sol = solution_from_state(p, &mesh, &y);
        let defects = interval_defects(&sol, p, opts.defect_components.unwrap_or(m));
        let worst = defects.iter().fold(0.0f64, |a, &d| a.max(d));
        // reported residual carries a safety factor over the sampled defect
        sol.residual = 2.0 * worst;
        if !opts.adapt || worst <= 0.5 * opts.tol {
            if let Some(t0) = &debug {
                eprintln!(
                    "[solve {}] dim {m}: {} -> {} nodes, {rounds} rounds, {:?}",
                    opts.label,
                    guess.n_nodes(),
                    mesh.len(),
                    t0.elapsed()
                );
            }
            // one equidistribution pass when the mesh is clearly
            // over-resolved, so meshes do not ratchet up across
            // continuation steps
            if opts.adapt && !coarsened {
                let balanced = equidistributed_mesh(&mesh, &defects, opts.tol);
                fallback = Some(sol.clone());
                if std::env::var_os("TRUNDLE_MESH_DEBUG").is_some() {
                    eprintln!(
                        "[mesh] dim {m}: converged on {} nodes, balanced {} (worst defect {worst:.2e})",
                        mesh.len(),
                        balanced.len()
                    );
                }
                if balanced.len() + mesh.len() / 32 < mesh.len() {
                    coarsened = true;
                    mesh = balanced;
                    y.clear();
                    let mut buf = vec![0.0; m];
                    for &s in &mesh {
                        sol.eval_into(s, &mut buf);
                        y.extend_from_slice(&buf);
                    }
                    continue;
                }
            }
            return Ok(sol);
        }
        if std::env::var_os("TRUNDLE_MESH_DEBUG").is_some() {
            let over = defects.iter().filter(|&&d| d > 0.5 * opts.tol).count();
            // per-component defect at the worst interval's first Gauss point
            let watched = opts.defect_components.unwrap_or(m).min(m);
            let wi = defects
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0);
            let h = mesh[wi + 1] - mesh[wi];
            let sg = mesh[wi] + (0.5 - 0.5 / 3.0f64.sqrt()) * h;
            let mut sv = vec![0.0; m];
            let mut dvv = vec![0.0; m];
            let mut fvv = vec![0.0; m];
            sol.eval_into(sg, &mut sv);
            sol.eval_deriv_into(sg, &mut dvv);
            p.rhs(sg, &sv, &mut fvv);
            let percomp: Vec<String> = (0..watched)
                .map(|c| format!("{:.1e}", (dvv[c] - fvv[c]).abs() / (1.0 + fvv[c].abs())))
                .collect();
            eprintln!(
                "[refine {}] dim {m}: {} nodes, worst {worst:.2e}, {over} offending, comp defects {percomp:?}",
                opts.label,
                mesh.len()
            );
            if m == 4 {
                let y0 = sol.node(wi);
                let y1n = sol.node(wi + 1);
                let d0 = sol.node_deriv(wi);
                let d1 = sol.node_deriv(wi + 1);
                eprintln!(
                    "    interval {wi} h={h:.3e}: y2 nodes ({:.9e},{:.9e}), d(y1) nodes ({:.9e},{:.9e}), node mismatch ({:.1e},{:.1e})",
                    y0[1], y1n[1], d0[0], d1[0],
                    (y0[1] - d0[0]).abs(), (y1n[1] - d1[0]).abs()
                );
            }
        }
        // refine offending intervals
        let mut new_mesh = Vec::with_capacity(mesh.len() * 2);
        for i in 0..n - 1 {
            new_mesh.push(mesh[i]);
            if defects[i] > 0.5 * opts.tol {
                let (a, b) = (mesh[i], mesh[i + 1]);
                let min_gap = 1e-9;
                if defects[i] > 50.0 * opts.tol && b - a > 3.0 * min_gap {
                    let t1 = a + (b - a) / 3.0;
                    let t2 = a + 2.0 * (b - a) / 3.0;
                    if t1 > a && t2 > t1 && b > t2 {
                        new_mesh.push(t1);
                        new_mesh.push(t2);
                    }
                } else if b - a > 2.0 * min_gap {
                    let mid = 0.5 * (a + b);
                    if mid > a && b > mid {
                        new_mesh.push(mid);
                    }
                }
            }
        }
        new_mesh.push(mesh[n - 1]);
        if new_mesh.len() == mesh.len() || new_mesh.len() > opts.max_mesh {
            if let Some(best) = fallback {
                // refinement after a coarsening attempt hit a wall; the
                // pre-coarsen solution already satisfied the gate
                return Ok(best);
            }
            return Err(BvpError::MeshOverflow {
                nodes: new_mesh.len().max(mesh.len()),
                defect: worst,
            });
        }
        mesh = new_mesh;
        y.clear();
        let mut buf = vec![0.0; m];
        for &s in &mesh {
            sol.eval_into(s, &mut buf);
            y.extend_from_slice(&buf);
        }
    }
}

/// Solve a problem declared linear: identical contract to [`solve`], with
/// stalls reported as rank deficiency (a singular tangent system at a fold).
pub fn solve_linear<P: BvpProblem>(
    p: &P,
    guess: &MeshSolution,
    opts: &SolverOptions,
) -> Result<MeshSolution, BvpError> {
    debug_assert!(p.is_linear());
    solve(p, guess, opts)
}

/// Outcome of a monotone parameter sweep.
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub solution: MeshSolution,
    pub reached: f64,
    pub solves: usize,
}

/// Advance a problem family monotonically from `start` toward `target`,
/// re-solving at each substep and reusing the previous solution as the next
/// guess. Partial progress is a valid outcome; `reached == start` means no
/// progress at all. The first attempt is the full remaining span, after
/// which the step falls back to an eighth of the span, halving on failure
/// and doubling after two consecutive successes.
pub fn sweep_solve<P, F>(
    family: F,
    start: f64,
    target: f64,
    guess: &MeshSolution,
    opts: &SolverOptions,
) -> SweepOutcome
where
    P: BvpProblem,
    F: Fn(f64) -> P,
{
    let span = target - start;
    let mut current = guess.clone();
    let mut reached = start;
    let mut solves = 0;
    if span == 0.0 {
        return SweepOutcome {
            solution: current,
            reached,
            solves,
        };
    }
    let min_step = 1e-10 * span.abs();
    let mut step = span; // greedy first try
    let mut streak = 0u32;
    loop {
        let remaining = target - reached;
        if remaining.abs() <= min_step {
            break;
        }
        let attempt = if step.abs() > remaining.abs() {
            remaining
        } else {
            step
        };
        let sigma = reached + attempt;
        let problem = family(sigma);
        let debug = std::env::var_os("TRUNDLE_MESH_DEBUG").map(|_| std::time::Instant::now());
        match solve(&problem, &current, opts) {
            Ok(sol) => {
                if let Some(t0) = debug {
                    eprintln!(
                        "[sweep ok] sigma {sigma:.4} ({:?}, mesh {})",
                        t0.elapsed(),
                        sol.n_nodes()
                    );
                }
                solves += 1;
                current = sol;
                reached = sigma;
                streak += 1;
                if streak >= 2 {
                    step *= 2.0;
                    streak = 0;
                }
            }
            Err(e) => {
                if let Some(t0) = debug {
                    eprintln!("[sweep fail] sigma {sigma:.4} ({:?}): {e}", t0.elapsed());
                }
                solves += 1;
                streak = 0;
                // greedy failure drops to the prescribed baseline first
                step = if step.abs() >= span.abs() {
                    span / 8.0
                } else {
                    step * 0.5
                };
                if step.abs() < min_step {
                    break;
                }
            }
        }
    }
    SweepOutcome {
        solution: current,
        reached,
        solves,
    }
}


#[cfg(test)]
mod profile_tests {
    use super::*;
    use crate::continuation::AtParameter;
    use crate::models::disk_seed_model;
    use crate::tpbvp::{NormalizedProblem, TimeSpec};
    use std::time::Instant;

    #[test]
    #[ignore]
    fn phase_timing() {
        let problem = NormalizedProblem::new(disk_seed_model(), TimeSpec::fixed(0.0, 2.0));
        let frozen = AtParameter::new(&problem, 0.02);
        let mut z = vec![0.0; problem.dim()];
        for i in 0..4 {
            z[i] = -std::f64::consts::FRAC_PI_2;
        }
        let guess = MeshSolution::constant(&z, 21);
        let sol = solve(&frozen, &guess, &SolverOptions::with_tol(1e-8)).unwrap();
        let n = sol.n_nodes();
        let m = frozen.dim();
        println!("mesh {n} nodes, dim {m}");
        let mesh = sol.mesh().to_vec();
        let y: Vec<f64> = (0..n).flat_map(|i| sol.node(i).to_vec()).collect();
        let mut ws = Workspace {
            dim: m,
            f_nodes: vec![0.0; n * m],
            f_mid: vec![0.0; (n - 1) * m],
            y_mid: vec![0.0; (n - 1) * m],
            residual: vec![0.0; n * m],
        };
        let t0 = Instant::now();
        for _ in 0..5 {
            assemble_residual(&frozen, &mesh, &y, &mut ws);
        }
        println!("residual: {:?}", t0.elapsed() / 5);
        let mut trips = Vec::new();
        let t0 = Instant::now();
        for _ in 0..3 {
            assemble_jacobian(&frozen, &mesh, &y, &ws, &mut trips);
        }
        println!("jacobian assembly: {:?} ({} nnz)", t0.elapsed() / 3, trips.len());
        let unknowns = n * m;
        let t0 = Instant::now();
        let mat: SparseColMat<usize, f64> =
            SparseColMat::try_new_from_triplets(unknowns, unknowns, &trips).unwrap();
        println!("triplet->csc: {:?}", t0.elapsed());
        let t0 = Instant::now();
        let lu = mat.sp_lu().unwrap();
        println!("sp_lu factorize: {:?}", t0.elapsed());
        let rhs = faer::Mat::from_fn(unknowns, 1, |i, _| ws.residual[i]);
        let t0 = Instant::now();
        for _ in 0..5 {
            let _x = lu.solve(&rhs);
        }
        println!("lu solve: {:?}", t0.elapsed() / 5);
        let t0 = Instant::now();
        let _d = interval_defects(&sol, &frozen, frozen.dim());
        println!("defect estimate: {:?}", t0.elapsed());
    }
}
