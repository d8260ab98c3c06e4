//! Temporary: why does the circle sweep stop early?
use trundle::bvp::{MeshSolution, SolverOptions};
use trundle::continuation::{pac_s3_bvp, CurvePoint, SweepOptions};
use trundle::models::CircleCurve;

fn main() {
    let start = CurvePoint {
        y: MeshSolution::constant(&[1.0], 5),
        lam: 0.0,
    };
    let opts = SweepOptions {
        sigma_max: vec![0.9; 12],
        direction: 2,
        solver: SolverOptions::with_tol(1e-10),
    };
    let trace = pac_s3_bvp(&CircleCurve, start, &opts, |_| false);
    println!("flag: {:?}", trace.flag);
    for (i, p) in trace.points.iter().enumerate() {
        println!(
            "point {i}: y(0) = {:+.6}, lam = {:+.6}, r2 = {:.9}, sigma = {:.4}",
            p.y.first()[0],
            p.lam,
            p.y.first()[0].powi(2) + p.lam.powi(2),
            trace.sigmas[i]
        );
    }
}
