//! Indirect optimal control of rolling robots actuated by internal point
//! masses on rails: uncontrolled and controlled equations of motion, a
//! collocation two-point boundary-value solver, and two predictor-corrector
//! continuation engines that trace extremal curves through turning points.

pub mod bvp;
pub mod continuation;
pub mod dynamics;
pub mod geometry;
pub mod linalg;
pub mod models;
pub mod ocp;
pub mod tpbvp;
pub mod rails;
pub mod real;

pub use geometry::{Mat3, Vec3, Versor};
pub use linalg::DMat;
pub use real::{Dual, Dual64, Real};
