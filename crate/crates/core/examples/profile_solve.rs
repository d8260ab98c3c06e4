//! Temporary: phase timing of one large collocation solve.
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
    let t0 = Instant::now();
    let s1 = solve(&AtParameter::new(&problem, 0.01), &guess, &SolverOptions::with_tol(1e-8)).unwrap();
    println!("cold solve 0.01: {:?} nodes {}", t0.elapsed(), s1.n_nodes());
    // warm solve from the dense previous solution
    let t0 = Instant::now();
    let s2 = solve(&AtParameter::new(&problem, 0.02), &s1, &SolverOptions::with_tol(1e-8)).unwrap();
    println!("warm solve 0.02: {:?} nodes {}", t0.elapsed(), s2.n_nodes());
    let t0 = Instant::now();
    let s3 = solve(&AtParameter::new(&problem, 0.04), &s2, &SolverOptions::with_tol(1e-8)).unwrap();
    println!("warm solve 0.04: {:?} nodes {}", t0.elapsed(), s3.n_nodes());
    // mesh histogram of s1
    let mesh = s1.mesh();
    let mut buckets = [0usize; 10];
    for w in mesh.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        buckets[(mid * 10.0) as usize % 10] += 1;
    }
    println!("mesh node distribution by tenths: {buckets:?}");
}
