//! Temporary profiling harness for the disk seeding flow.
use std::time::Instant;
use trundle::bvp::{solve, MeshSolution, SolverOptions};
use trundle::continuation::AtParameter;
use trundle::models::disk_seed_model;
use trundle::tpbvp::{NormalizedProblem, TimeSpec};

fn main() {
    let problem = NormalizedProblem::new(disk_seed_model(), TimeSpec::fixed(0.0, 2.0));
    let mut z = vec![0.0; problem.dim()];
    for i in 0..4 {
        z[i] = -std::f64::consts::FRAC_PI_2;
    }
    let guess = MeshSolution::constant(&z, 21);
    // time one rhs, one jacobian, then a short mu-hat step
    let t0 = Instant::now();
    let mut out = vec![0.0; problem.dim()];
    for _ in 0..1000 {
        trundle::continuation::ParamBvp::rhs(&problem, 0.3, &z, 0.1, &mut out);
    }
    println!("rhs eval: {:?}/call", t0.elapsed() / 1000);
    let mut jac = trundle::DMat::zeros(problem.dim(), problem.dim());
    let t0 = Instant::now();
    for _ in 0..100 {
        trundle::continuation::ParamBvp::rhs_jac_y(&problem, 0.3, &z, 0.1, &mut jac);
    }
    println!("rhs jac: {:?}/call", t0.elapsed() / 100);
    let mut ja = trundle::DMat::zeros(problem.dim(), problem.dim());
    let mut jb = trundle::DMat::zeros(problem.dim(), problem.dim());
    let mut jmu = vec![0.0; problem.dim()];
    let t0 = Instant::now();
    for _ in 0..10 {
        trundle::continuation::ParamBvp::bc_jacs(&problem, &z, &z, 0.1, &mut ja, &mut jb, &mut jmu);
    }
    println!("bc jacs: {:?}/call", t0.elapsed() / 10);
    for mu in [0.01, 0.05, 0.1] {
        let t0 = Instant::now();
        let r = solve(&AtParameter::new(&problem, mu), &guess, &SolverOptions::with_tol(1e-8));
        match &r {
            Ok(s) => println!(
                "solve at {mu}: {:?}, nodes {}, residual {:.2e}",
                t0.elapsed(),
                s.n_nodes(),
                s.residual
            ),
            Err(e) => println!("solve at {mu}: {:?} FAILED {e}", t0.elapsed()),
        }
    }
}
