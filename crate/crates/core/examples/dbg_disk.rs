//! Temporary: step-by-step timing of the disk seed + continuation flow.
use std::time::Instant;
use trundle::bvp::{solve, sweep_solve, MeshSolution, SolverOptions};
use trundle::continuation::{pac_s3_bvp, AtParameter, CurvePoint, SweepOptions};
use trundle::models::{disk_seed_model, disk_tracking_model};
use trundle::tpbvp::{NormalizedProblem, TimeSpec};

fn main() {
    let tol = 1e-8;
    let solver = SolverOptions::with_tol(tol);
    let seed_problem = NormalizedProblem::new(disk_seed_model(), TimeSpec::fixed(0.0, 2.0));
    let mut z = vec![0.0; seed_problem.dim()];
    for i in 0..4 {
        z[i] = -std::f64::consts::FRAC_PI_2;
    }
    let guess = MeshSolution::constant(&z, 81);
    let t0 = Instant::now();
    // seed at a loose tolerance; only the landing point needs full accuracy
    let outcome = sweep_solve(
        |mu_hat| AtParameter::new(&seed_problem, mu_hat),
        0.0,
        1.0,
        &guess,
        &SolverOptions::with_tol(1e-6),
    );
    println!(
        "seed: reached {} in {} solves, {:?}, mesh {}",
        outcome.reached,
        outcome.solves,
        t0.elapsed(),
        outcome.solution.n_nodes()
    );
    let main_problem = NormalizedProblem::new(disk_tracking_model(), TimeSpec::fixed(0.0, 2.0));
    let t0 = Instant::now();
    let seeded = solve(&AtParameter::new(&main_problem, 0.95), &outcome.solution, &solver).unwrap();
    println!("transfer: {:?}, mesh {}", t0.elapsed(), seeded.n_nodes());

    let start = CurvePoint { y: seeded, lam: 0.95 };
    let alpha = disk_tracking_model().weights.alpha;
    // hold the steplength down through the early turning points, then ramp
    let sigma_max: Vec<f64> = (0..40)
        .map(|j| (30.0 * 4.0f64.powi((j as i32 - 2).max(0))).min(3000.0))
        .collect();
    let opts = SweepOptions {
        sigma_max,
        direction: -2,
        solver,
    };
    let mut last = Instant::now();
    let trace = pac_s3_bvp(&main_problem, start, &opts, |p| {
        let a = alpha.eval(p.lam);
        println!(
            "point: {:?} elapsed, mu {:+.4}, alpha {:.1}, mesh {}",
            last.elapsed(),
            p.lam,
            a,
            p.y.n_nodes()
        );
        last = Instant::now();
        a >= 2000.0
    });
    println!("flag: {:?}, {} points", trace.flag, trace.points.len());
}
