//! Versor algebra, rotation matrices, and the hat/hat-squared maps used by
//! every dynamics and derivative formula in this crate.
//!
//! Everything is generic over [`Real`] so the same code paths can be
//! differentiated with dual numbers. Quaternions are stored as `[w; x; y; z]`
//! arrays and are *not* renormalized inside the generic kernels: the
//! boundary-value formulation treats the versor block as a free R^4 vector and
//! only monitors its drift.

use crate::real::{Dual, Dual64, Real};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("quaternion norm {norm} is too far from 1 to renormalize")]
    NotAVersor { norm: f64 },
    #[error("in-plane axes are not orthonormal (|u|={nu}, |v|={nv}, u.v={dot})")]
    NotOrthonormal { nu: f64, nv: f64, dot: f64 },
}

/// 3-vector over any scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec3<T>(pub [T; 3]);

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x1: T, x2: T, x3: T) -> Self {
        Vec3([x1, x2, x3])
    }
    #[inline]
    pub fn zeros() -> Self {
        Vec3([T::zero(); 3])
    }
    #[inline]
    pub fn from_f64(v: Vec3<f64>) -> Self {
        Vec3([
            T::from_f64(v.0[0]),
            T::from_f64(v.0[1]),
            T::from_f64(v.0[2]),
        ])
    }
    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }
    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Vec3([
            self.0[1] * o.0[2] - self.0[2] * o.0[1],
            self.0[2] * o.0[0] - self.0[0] * o.0[2],
            self.0[0] * o.0[1] - self.0[1] * o.0[0],
        ])
    }
    #[inline]
    pub fn add(self, o: Self) -> Self {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
    #[inline]
    pub fn sub(self, o: Self) -> Self {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
    #[inline]
    pub fn scale(self, c: T) -> Self {
        Vec3([self.0[0] * c, self.0[1] * c, self.0[2] * c])
    }
    #[inline]
    pub fn neg(self) -> Self {
        Vec3([-self.0[0], -self.0[1], -self.0[2]])
    }
    #[inline]
    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }
    pub fn is_finite(self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

/// Row-major 3x3 matrix over any scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3<T>(pub [[T; 3]; 3]);

impl<T: Real> Mat3<T> {
    #[inline]
    pub fn zeros() -> Self {
        Mat3([[T::zero(); 3]; 3])
    }
    #[inline]
    pub fn identity() -> Self {
        let mut m = Self::zeros();
        for i in 0..3 {
            m.0[i][i] = T::one();
        }
        m
    }
    pub fn diag(d: Vec3<T>) -> Self {
        let mut m = Self::zeros();
        for i in 0..3 {
            m.0[i][i] = d.0[i];
        }
        m
    }
    #[inline]
    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        Vec3([
            self.0[0][0] * v.0[0] + self.0[0][1] * v.0[1] + self.0[0][2] * v.0[2],
            self.0[1][0] * v.0[0] + self.0[1][1] * v.0[1] + self.0[1][2] * v.0[2],
            self.0[2][0] * v.0[0] + self.0[2][1] * v.0[1] + self.0[2][2] * v.0[2],
        ])
    }
    /// `transpose(self) * v`.
    #[inline]
    pub fn tr_mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        Vec3([
            self.0[0][0] * v.0[0] + self.0[1][0] * v.0[1] + self.0[2][0] * v.0[2],
            self.0[0][1] * v.0[0] + self.0[1][1] * v.0[1] + self.0[2][1] * v.0[2],
            self.0[0][2] * v.0[0] + self.0[1][2] * v.0[1] + self.0[2][2] * v.0[2],
        ])
    }
    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut r = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = T::zero();
                for k in 0..3 {
                    s += self.0[i][k] * o.0[k][j];
                }
                r.0[i][j] = s;
            }
        }
        r
    }
    pub fn transpose(&self) -> Self {
        let mut r = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                r.0[i][j] = self.0[j][i];
            }
        }
        r
    }
    pub fn add(&self, o: &Self) -> Self {
        let mut r = *self;
        for i in 0..3 {
            for j in 0..3 {
                r.0[i][j] += o.0[i][j];
            }
        }
        r
    }
    pub fn sub(&self, o: &Self) -> Self {
        let mut r = *self;
        for i in 0..3 {
            for j in 0..3 {
                r.0[i][j] -= o.0[i][j];
            }
        }
        r
    }
    pub fn scale(&self, c: T) -> Self {
        let mut r = *self;
        for i in 0..3 {
            for j in 0..3 {
                r.0[i][j] *= c;
            }
        }
        r
    }
    /// Symmetric part `(A + A^T)/2`.
    pub fn sym(&self) -> Self {
        self.add(&self.transpose()).scale(T::from_f64(0.5))
    }

    /// Solve `self * x = b` by LU with partial pivoting. Pivot selection
    /// compares innermost real magnitudes so dual arithmetic follows the same
    /// branch as the plain evaluation. Returns `None` when a pivot vanishes.
    pub fn solve(&self, b: Vec3<T>) -> Option<Vec3<T>> {
        let mut a = self.0;
        let mut x = b.0;
        let mut perm = [0usize, 1, 2];
        for col in 0..3 {
            let mut piv = col;
            let mut best = a[perm[col]][col].value().abs();
            for row in col + 1..3 {
                let mag = a[perm[row]][col].value().abs();
                if mag > best {
                    best = mag;
                    piv = row;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return None;
            }
            perm.swap(col, piv);
            let inv = T::one() / a[perm[col]][col];
            for row in col + 1..3 {
                let f = a[perm[row]][col] * inv;
                a[perm[row]][col] = f;
                for j in col + 1..3 {
                    let t = a[perm[col]][j];
                    a[perm[row]][j] = a[perm[row]][j] - f * t;
                }
            }
        }
        // forward substitution on permuted rows
        let mut y = [T::zero(); 3];
        for i in 0..3 {
            let mut s = x[perm[i]];
            for j in 0..i {
                s = s - a[perm[i]][j] * y[j];
            }
            y[i] = s;
        }
        // back substitution
        for i in (0..3).rev() {
            let mut s = y[i];
            for j in i + 1..3 {
                s = s - a[perm[i]][j] * x[j];
            }
            x[i] = s / a[perm[i]][i];
        }
        Some(Vec3(x))
    }
}

/// Skew-symmetric cross-product matrix: `hat(v) * w == v x w`.
pub fn hat<T: Real>(v: Vec3<T>) -> Mat3<T> {
    let z = T::zero();
    Mat3([
        [z, -v.0[2], v.0[1]],
        [v.0[2], z, -v.0[0]],
        [-v.0[1], v.0[0], z],
    ])
}

/// The symmetric matrix `hat(v)^2`, written out explicitly.
pub fn hat_squared<T: Real>(v: Vec3<T>) -> Mat3<T> {
    let (a, b, c) = (v.0[0], v.0[1], v.0[2]);
    Mat3([
        [-(b * b + c * c), a * b, a * c],
        [a * b, -(a * a + c * c), b * c],
        [a * c, b * c, -(a * a + b * b)],
    ])
}

// --- quaternion kernels (raw [w, x, y, z] arrays, no unit constraint) ---

/// Embed a vector as a pure quaternion `[0; v]`.
#[inline]
pub fn quat_sharp<T: Real>(v: Vec3<T>) -> [T; 4] {
    [T::zero(), v.0[0], v.0[1], v.0[2]]
}

/// Vector part of a quaternion.
#[inline]
pub fn quat_flat<T: Real>(q: [T; 4]) -> Vec3<T> {
    Vec3([q[1], q[2], q[3]])
}

/// Hamilton product.
pub fn quat_mul<T: Real>(p: [T; 4], q: [T; 4]) -> [T; 4] {
    let pv = quat_flat(p);
    let qv = quat_flat(q);
    let w = p[0] * q[0] - pv.dot(qv);
    let v = qv.scale(p[0]).add(pv.scale(q[0])).add(pv.cross(qv));
    [w, v.0[0], v.0[1], v.0[2]]
}

#[inline]
pub fn quat_conj<T: Real>(q: [T; 4]) -> [T; 4] {
    [q[0], -q[1], -q[2], -q[3]]
}

/// Rotation matrix of a (unit) quaternion, as an explicit polynomial in the
/// components. For non-unit input this is the same polynomial, which is what
/// the boundary-value formulation differentiates.
pub fn rotation_matrix<T: Real>(q: [T; 4]) -> Mat3<T> {
    let (q0, q1, q2, q3) = (q[0], q[1], q[2], q[3]);
    let two = T::from_f64(2.0);
    let one = T::one();
    Mat3([
        [
            one - two * (q2 * q2 + q3 * q3),
            two * (q1 * q2 - q0 * q3),
            two * (q1 * q3 + q0 * q2),
        ],
        [
            two * (q1 * q2 + q0 * q3),
            one - two * (q1 * q1 + q3 * q3),
            two * (q2 * q3 - q0 * q1),
        ],
        [
            two * (q1 * q3 - q0 * q2),
            two * (q2 * q3 + q0 * q1),
            one - two * (q1 * q1 + q2 * q2),
        ],
    ])
}

/// Body-frame vertical `rotation^T * e3` (third row of the rotation matrix).
pub fn body_vertical<T: Real>(q: [T; 4]) -> Vec3<T> {
    let (q0, q1, q2, q3) = (q[0], q[1], q[2], q[3]);
    let two = T::from_f64(2.0);
    Vec3([
        two * (q1 * q3 - q0 * q2),
        two * (q2 * q3 + q0 * q1),
        T::one() - two * (q1 * q1 + q2 * q2),
    ])
}

/// `d(body_vertical)/dq` as a 3x4 matrix (columns indexed by q0..q3).
pub fn body_vertical_jacobian<T: Real>(q: [T; 4]) -> [[T; 4]; 3] {
    let (q0, q1, q2, q3) = (q[0], q[1], q[2], q[3]);
    let two = T::from_f64(2.0);
    [
        [-two * q2, two * q3, -two * q0, two * q1],
        [two * q1, two * q0, two * q3, two * q2],
        [T::zero(), -two * (q1 + q1), -two * (q2 + q2), T::zero()],
    ]
}

/// `d(rotation^T * f)/dq` as a 3x4 matrix for a constant spatial vector `f`.
pub fn body_frame_jacobian<T: Real>(q: [T; 4], f: Vec3<T>) -> [[T; 4]; 3] {
    let (q0, q1, q2, q3) = (q[0], q[1], q[2], q[3]);
    let (f1, f2, f3) = (f.0[0], f.0[1], f.0[2]);
    let two = T::from_f64(2.0);
    [
        [
            two * (q3 * f2 - q2 * f3),
            two * (q2 * f2 + q3 * f3),
            two * (-(q2 + q2) * f1 + q1 * f2 - q0 * f3),
            two * (-(q3 + q3) * f1 + q0 * f2 + q1 * f3),
        ],
        [
            two * (-q3 * f1 + q1 * f3),
            two * (q2 * f1 - (q1 + q1) * f2 + q0 * f3),
            two * (q1 * f1 + q3 * f3),
            two * (-q0 * f1 - (q3 + q3) * f2 + q2 * f3),
        ],
        [
            two * (q2 * f1 - q1 * f2),
            two * (q3 * f1 - q0 * f2 - (q1 + q1) * f3),
            two * (q0 * f1 + q3 * f2 - (q2 + q2) * f3),
            two * (q1 * f1 + q2 * f2),
        ],
    ]
}

/// 4x3 matrix `Q(q)` with `dq/dt = (1/2) Q(q) omega` reproducing the
/// quaternion product `(1/2) q [0; omega]`.
pub fn quat_kinematic_matrix<T: Real>(q: [T; 4]) -> [[T; 3]; 4] {
    let (q0, q1, q2, q3) = (q[0], q[1], q[2], q[3]);
    [
        [-q1, -q2, -q3],
        [q0, -q3, q2],
        [q3, q0, -q1],
        [-q2, q1, q0],
    ]
}

/// `d(Q(q) omega)/dq` as a 4x4 matrix.
pub fn quat_kinematic_jacobian<T: Real>(omega: Vec3<T>) -> [[T; 4]; 4] {
    let (w1, w2, w3) = (omega.0[0], omega.0[1], omega.0[2]);
    let z = T::zero();
    [
        [z, -w1, -w2, -w3],
        [w1, z, w3, -w2],
        [w2, -w3, z, w1],
        [w3, w2, -w1, z],
    ]
}

/// 2x3 matrix with `zdot = r * planar_velocity_matrix(q) * omega`, i.e. the
/// first two components of `(rotation(q) * omega) x e3`.
pub fn planar_velocity_matrix<T: Real>(q: [T; 4]) -> [[T; 3]; 2] {
    let (q0, q1, q2, q3) = (q[0], q[1], q[2], q[3]);
    let two = T::from_f64(2.0);
    let one = T::one();
    [
        [
            two * (q1 * q2 + q0 * q3),
            one - two * (q1 * q1 + q3 * q3),
            two * (q2 * q3 - q0 * q1),
        ],
        [
            -(one - two * (q2 * q2 + q3 * q3)),
            -two * (q1 * q2 - q0 * q3),
            -two * (q1 * q3 + q0 * q2),
        ],
    ]
}

/// `d(planar_velocity_matrix(q) * omega)/dq` as a 2x4 matrix.
pub fn planar_velocity_jacobian<T: Real>(q: [T; 4], omega: Vec3<T>) -> [[T; 4]; 2] {
    let (q0, q1, q2, q3) = (q[0], q[1], q[2], q[3]);
    let (w1, w2, w3) = (omega.0[0], omega.0[1], omega.0[2]);
    let two = T::from_f64(2.0);
    [
        [
            two * (q3 * w1 - q1 * w3),
            two * (q2 * w1 - (q1 + q1) * w2 - q0 * w3),
            two * (q1 * w1 + q3 * w3),
            two * (q0 * w1 - (q3 + q3) * w2 + q2 * w3),
        ],
        [
            two * (q3 * w2 - q2 * w3),
            two * (-q2 * w2 - q3 * w3),
            two * ((q2 + q2) * w1 - q1 * w2 - q0 * w3),
            two * ((q3 + q3) * w1 + q0 * w2 - q1 * w3),
        ],
    ]
}

/// Unit quaternion parameterizing an orientation. Constructors renormalize
/// silently for small drift and reject gross violations, which usually signal
/// a bug upstream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Versor([f64; 4]);

impl Versor {
    pub const IDENTITY: Versor = Versor([1.0, 0.0, 0.0, 0.0]);

    pub fn new(q0: f64, q1: f64, q2: f64, q3: f64) -> Result<Self, GeometryError> {
        let norm = (q0 * q0 + q1 * q1 + q2 * q2 + q3 * q3).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(GeometryError::NotAVersor { norm });
        }
        Ok(Versor([q0 / norm, q1 / norm, q2 / norm, q3 / norm]))
    }

    /// Normalize an arbitrary non-zero quaternion.
    pub fn from_unnormalized(q: [f64; 4]) -> Result<Self, GeometryError> {
        let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm < 1e-12 || !norm.is_finite() {
            return Err(GeometryError::NotAVersor { norm });
        }
        Ok(Versor([q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm]))
    }

    #[inline]
    pub fn components(&self) -> [f64; 4] {
        self.0
    }

    pub fn rotation(&self) -> Mat3<f64> {
        rotation_matrix(self.0)
    }

    /// Rotate a body-frame vector into the spatial frame.
    pub fn body_to_spatial(&self, y: Vec3<f64>) -> Vec3<f64> {
        self.rotation().mul_vec(y)
    }

    /// Rotate a spatial-frame vector into the body frame.
    pub fn spatial_to_body(&self, y: Vec3<f64>) -> Vec3<f64> {
        self.rotation().tr_mul_vec(y)
    }
}

/// Directional derivative helper re-exported at the geometry level so callers
/// validating rotation/rail formulas do not need to reach into `real`.
pub fn dual_directional_derivative<F>(f: F, x: &[f64], dir: &[f64], out_len: usize) -> Vec<f64>
where
    F: Fn(&[Dual64], &mut [Dual64]),
{
    crate::real::directional_derivative(f, x, dir, out_len)
}

/// Lift raw f64 quaternion components into any scalar type.
#[inline]
pub fn lift_quat<T: Real>(q: [f64; 4]) -> [T; 4] {
    [
        T::from_f64(q[0]),
        T::from_f64(q[1]),
        T::from_f64(q[2]),
        T::from_f64(q[3]),
    ]
}

/// Dual-lift of a Vec3 against a direction, for derivative checks.
pub fn lift_vec3(v: Vec3<f64>, d: Vec3<f64>) -> Vec3<Dual64> {
    Vec3([
        Dual::new(v.0[0], d.0[0]),
        Dual::new(v.0[1], d.0[1]),
        Dual::new(v.0[2], d.0[2]),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng_stream(seed: u64) -> impl FnMut() -> f64 {
        // xorshift*: deterministic, no dependency
        let mut s = seed.max(1);
        move || {
            s ^= s >> 12;
            s ^= s << 25;
            s ^= s >> 27;
            let x = s.wrapping_mul(0x2545F4914F6CDD1D);
            (x >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        }
    }

    fn rand_vec3(r: &mut impl FnMut() -> f64) -> Vec3<f64> {
        Vec3([r(), r(), r()])
    }

    fn rand_versor(r: &mut impl FnMut() -> f64) -> Versor {
        loop {
            let q = [r(), r(), r(), r()];
            if let Ok(v) = Versor::from_unnormalized(q) {
                return v;
            }
        }
    }

    #[test]
    fn hat_of_e3() {
        let m = hat(Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(
            m.0,
            [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
        );
    }

    #[test]
    fn hat_of_zero_is_zero() {
        assert_eq!(hat(Vec3::<f64>::zeros()).0, Mat3::zeros().0);
    }

    #[test]
    fn hat_annihilates_own_vector() {
        let v = Vec3::new(1.0, 2.0, 3.0);
        let w = hat(v).mul_vec(v);
        for c in w.0 {
            assert_eq!(c, 0.0);
        }
    }

    #[test]
    fn hat_matches_cross_product_and_antisymmetry() {
        let mut r = rng_stream(7);
        for _ in 0..100 {
            let v = rand_vec3(&mut r);
            let w = rand_vec3(&mut r);
            let hv = hat(v).mul_vec(w);
            let c = v.cross(w);
            let hw = hat(w).mul_vec(v);
            for i in 0..3 {
                assert!((hv.0[i] - c.0[i]).abs() < 1e-14);
                // hat(v) w = -hat(w) v
                assert!((hv.0[i] + hw.0[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn hat_squared_cases() {
        let m = hat_squared(Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(m.0, [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 0.0]]);
        assert_eq!(hat_squared(Vec3::<f64>::zeros()).0, Mat3::zeros().0);
        let mut r = rng_stream(11);
        for _ in 0..50 {
            let v = rand_vec3(&mut r);
            let a = hat_squared(v);
            let b = hat(v).mul_mat(&hat(v));
            for i in 0..3 {
                for j in 0..3 {
                    assert!((a.0[i][j] - b.0[i][j]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn hat_product_transpose_identity() {
        // hat(a) hat(b) = (hat(b) hat(a))^T
        let mut r = rng_stream(13);
        for _ in 0..50 {
            let a = rand_vec3(&mut r);
            let b = rand_vec3(&mut r);
            let lhs = hat(a).mul_mat(&hat(b));
            let rhs = hat(b).mul_mat(&hat(a)).transpose();
            for i in 0..3 {
                for j in 0..3 {
                    assert!((lhs.0[i][j] - rhs.0[i][j]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn rotation_identity_and_pi_about_e3() {
        let id = Versor::IDENTITY.rotation();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(id.0[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
        let r = Versor::new(0.0, 0.0, 0.0, 1.0).unwrap().rotation();
        let expect = [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((r.0[i][j] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rotations_orthogonal_unit_det() {
        let mut r = rng_stream(17);
        for _ in 0..1000 {
            let q = rand_versor(&mut r);
            let m = q.rotation();
            let mtm = m.transpose().mul_mat(&m);
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((mtm.0[i][j] - expect).abs() < 1e-12);
                }
            }
            let det = m.0[0][0] * (m.0[1][1] * m.0[2][2] - m.0[1][2] * m.0[2][1])
                - m.0[0][1] * (m.0[1][0] * m.0[2][2] - m.0[1][2] * m.0[2][0])
                + m.0[0][2] * (m.0[1][0] * m.0[2][1] - m.0[1][1] * m.0[2][0]);
            assert!((det - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_maps_round_trip() {
        let q = Versor::IDENTITY;
        let y = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(q.body_to_spatial(y).0, y.0);
        let q = Versor::new(0.0, 0.0, 0.0, 1.0).unwrap();
        let e1 = Vec3::new(1.0, 0.0, 0.0);
        let r = q.body_to_spatial(e1);
        assert!((r.0[0] + 1.0).abs() < 1e-15 && r.0[1].abs() < 1e-15);
        let mut rng = rng_stream(23);
        for _ in 0..100 {
            let q = rand_versor(&mut rng);
            let y = rand_vec3(&mut rng);
            let back = q.spatial_to_body(q.body_to_spatial(y));
            for i in 0..3 {
                assert!((back.0[i] - y.0[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kinematic_matrix_matches_quaternion_product() {
        // identity versor, omega = e3
        let q = [1.0, 0.0, 0.0, 0.0];
        let m = quat_kinematic_matrix(q);
        let qdot: Vec<f64> = (0..4).map(|i| 0.5 * m[i][2]).collect();
        assert_eq!(qdot, vec![0.0, 0.0, 0.0, 0.5]);

        let mut rng = rng_stream(29);
        for _ in 0..100 {
            let q = rand_versor(&mut rng).components();
            let w = rand_vec3(&mut rng);
            let m = quat_kinematic_matrix(q);
            let prod = quat_mul(q, quat_sharp(w));
            for i in 0..4 {
                let mi = m[i][0] * w.0[0] + m[i][1] * w.0[1] + m[i][2] * w.0[2];
                assert!((mi - prod[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn planar_velocity_matches_cross_product() {
        let q = [1.0, 0.0, 0.0, 0.0];
        let m = planar_velocity_matrix(q);
        // omega = e1, r = 1: (omega x e3)_12 = (0, -1)
        let v = [m[0][0], m[1][0]];
        assert!((v[0] - 0.0).abs() < 1e-15 && (v[1] + 1.0).abs() < 1e-15);

        let mut rng = rng_stream(31);
        for _ in 0..100 {
            let q = rand_versor(&mut rng);
            let w = rand_vec3(&mut rng);
            let omega_sp = q.body_to_spatial(w);
            let expect = omega_sp.cross(Vec3::new(0.0, 0.0, 1.0));
            let m = planar_velocity_matrix(q.components());
            for i in 0..2 {
                let mi = m[i][0] * w.0[0] + m[i][1] * w.0[1] + m[i][2] * w.0[2];
                assert!((mi - expect.0[i]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn body_vertical_two_routes_agree() {
        let mut rng = rng_stream(37);
        for _ in 0..100 {
            let q = rand_versor(&mut rng);
            let g1 = body_vertical(q.components());
            let g2 = q.spatial_to_body(Vec3::new(0.0, 0.0, 1.0));
            for i in 0..3 {
                assert!((g1.0[i] - g2.0[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn quaternion_jacobians_match_duals() {
        let mut rng = rng_stream(41);
        for _ in 0..50 {
            let q = [rng(), rng(), rng(), rng()]; // deliberately not unit
            let f = rand_vec3(&mut rng);
            let w = rand_vec3(&mut rng);
            for j in 0..4 {
                let mut dir = [0.0; 4];
                dir[j] = 1.0;
                let lq: [Dual64; 4] = std::array::from_fn(|i| Dual::new(q[i], dir[i]));

                let jac = body_vertical_jacobian(q);
                let g = body_vertical(lq);
                for i in 0..3 {
                    assert!((g.0[i].eps - jac[i][j]).abs() < 1e-13);
                }

                let jac = body_frame_jacobian(q, f);
                let lf = Vec3::from_f64(f);
                let gt = rotation_matrix(lq).tr_mul_vec(lf);
                for i in 0..3 {
                    assert!((gt.0[i].eps - jac[i][j]).abs() < 1e-13);
                }

                let jac = quat_kinematic_jacobian(w);
                let lw = Vec3::from_f64(w);
                let m = quat_kinematic_matrix(lq);
                for i in 0..4 {
                    let mi = m[i][0] * lw.0[0] + m[i][1] * lw.0[1] + m[i][2] * lw.0[2];
                    assert!((mi.eps - jac[i][j]).abs() < 1e-13);
                }

                let jac = planar_velocity_jacobian(q, w);
                let m = planar_velocity_matrix(lq);
                for i in 0..2 {
                    let mi = m[i][0] * lw.0[0] + m[i][1] * lw.0[1] + m[i][2] * lw.0[2];
                    assert!((mi.eps - jac[i][j]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn versor_constructor_tolerance() {
        assert!(Versor::new(1.0 + 5e-7, 0.0, 0.0, 0.0).is_ok());
        assert!(matches!(
            Versor::new(1.1, 0.0, 0.0, 0.0),
            Err(GeometryError::NotAVersor { .. })
        ));
    }

    #[test]
    fn mat3_solve_against_known_system() {
        let m = Mat3([[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]]);
        let x = Vec3::new(1.0, -2.0, 0.5);
        let b = m.mul_vec(x);
        let got = m.solve(b).unwrap();
        for i in 0..3 {
            assert!((got.0[i] - x.0[i]).abs() < 1e-13);
        }
        // row 2 = 2*row 1: elimination hits a zero pivot
        let s = Mat3([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]]);
        assert!(s.solve(Vec3::new(1.0, 2.0, 0.0)).is_none());
    }

    #[test]
    fn dual_directional_derivative_cases() {
        // f(x) = x^2 at 3 along 1 -> 6
        let out = dual_directional_derivative(
            |x, out| out[0] = x[0] * x[0],
            &[3.0],
            &[1.0],
            1,
        );
        assert_eq!(out[0], 6.0);
        // f(x) = sin x at 0 -> 1
        let out = dual_directional_derivative(|x, out| out[0] = x[0].sin(), &[0.0], &[1.0], 1);
        assert_eq!(out[0], 1.0);
        // random polynomial vs central differences
        let f = |x: f64| 0.3 * x * x * x - 1.2 * x * x + 0.7 * x - 2.0;
        let mut r = rng_stream(43);
        for _ in 0..20 {
            let x = 2.0 * r();
            let out = dual_directional_derivative(
                |v, out| {
                    let x = v[0];
                    out[0] = x * x * x * Dual64::from_f64(0.3)
                        - x * x * Dual64::from_f64(1.2)
                        + x * Dual64::from_f64(0.7)
                        - Dual64::from_f64(2.0);
                },
                &[x],
                &[1.0],
                1,
            );
            let h = 1e-6;
            let fd = (f(x + h) - f(x - h)) / (2.0 * h);
            assert!((out[0] - fd).abs() <= 1e-8 * (1.0 + fd.abs()));
        }
    }
}
