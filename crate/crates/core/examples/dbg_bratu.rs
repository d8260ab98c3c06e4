//! Temporary: find where the Bratu pseudo-arclength trace fails.
use trundle::bvp::{solve, MeshSolution, SolverOptions};
use trundle::continuation::{pac_bvp, AtParameter, CurvePoint, PacOptions, TraceFlag};
use trundle::models::BratuCurve;

fn main() {
    let solver = SolverOptions::with_tol(1e-8);
    let guess = MeshSolution::constant(&[0.0, 0.0], 21);
    let start = solve(&AtParameter::new(&BratuCurve, 0.0), &guess, &solver).unwrap();
    println!("start mesh {}", start.n_nodes());
    let base = CurvePoint { y: start, lam: 0.0 };
    let opts = PacOptions {
        max_points: 400,
        sigma_init: 0.05,
        sigma_max: 0.05,
        sigma_min: 1e-6,
        direction: 2,
        solver,
        ..Default::default()
    };
    let mut best = f64::MIN;
    let mut count = 0;
    let trace = pac_bvp(&BratuCurve, base, &opts, |p| {
        best = best.max(p.lam);
        count += 1;
        if count % 20 == 0 {
            println!("point {count}: lam {:+.5}, mesh {}", p.lam, p.y.n_nodes());
        }
        p.lam < best - 0.4
    });
    println!("flag {:?}, points {}, best lam {best:.6}", trace.flag, trace.points.len());
    if let Some(p) = trace.points.last() {
        println!("last: lam {:+.6}, mesh {}", p.lam, p.y.n_nodes());
    }
}
