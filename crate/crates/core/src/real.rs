//! Scalar abstraction used by every model function in this crate.
//!
//! All dynamics, cost, and boundary functions are written once, generic over
//! [`Real`], and evaluated either with `f64` or with [`Dual`] to obtain exact
//! forward-mode directional derivatives. `Dual<Dual<f64>>` nests for the
//! second derivatives needed by the boundary-condition Jacobians.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Real:
    Copy
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn from_f64(v: f64) -> Self;
    /// Innermost real part. Used for branching (pivot selection, cutoffs);
    /// never for arithmetic.
    fn value(self) -> f64;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    /// Multiply by a plain constant.
    fn scale(self, c: f64) -> Self {
        self * Self::from_f64(c)
    }

    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn is_finite(self) -> bool;

    /// Value-branch max; not smooth across ties, which is fine for the
    /// cutoff functions it is used in.
    fn max(self, other: Self) -> Self {
        if self.value() >= other.value() {
            self
        } else {
            other
        }
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Forward-mode dual number with a single derivative channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T: Real> {
    pub re: T,
    pub eps: T,
}

impl<T: Real> Dual<T> {
    #[inline]
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }
    /// Constant (zero derivative).
    #[inline]
    pub fn constant(re: T) -> Self {
        Dual { re, eps: T::zero() }
    }
    /// Seed with unit derivative.
    #[inline]
    pub fn variable(re: T) -> Self {
        Dual { re, eps: T::one() }
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}
impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}
impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}
impl<T: Real> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = T::one() / o.re;
        Dual::new(self.re * inv, (self.eps - self.re * inv * o.eps) * inv)
    }
}
impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}
impl<T: Real> AddAssign for Dual<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}
impl<T: Real> SubAssign for Dual<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}
impl<T: Real> MulAssign for Dual<T> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<T: Real> Real for Dual<T> {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Dual::constant(T::from_f64(v))
    }
    #[inline]
    fn value(self) -> f64 {
        self.re.value()
    }
    #[inline]
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.eps * self.re.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -(self.eps * self.re.sin()))
    }
    #[inline]
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        Dual::new(t, self.eps * (T::one() - t * t))
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.eps * e)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual::new(s, self.eps / (s + s))
    }
    #[inline]
    fn abs(self) -> Self {
        if self.re.value() < 0.0 {
            -self
        } else {
            self
        }
    }
    fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::one(),
            1 => self,
            _ if n > 1 => {
                let mut acc = self;
                for _ in 1..n {
                    acc = acc * self;
                }
                acc
            }
            _ => Self::one() / self.powi(-n),
        }
    }
    #[inline]
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.eps.is_finite()
    }
}

pub type Dual64 = Dual<f64>;

/// Derivative of a scalar function of one variable.
pub fn derivative<F>(f: F, x: f64) -> f64
where
    F: Fn(Dual64) -> Dual64,
{
    f(Dual::new(x, 1.0)).eps
}

/// Exact directional derivative of a vector function: returns `(∂f/∂x)·d`.
///
/// Non-finite intermediates propagate into the output as NaN/inf; callers
/// that care should check `is_finite` on the result.
pub fn directional_derivative<F>(f: F, x: &[f64], dir: &[f64], out_len: usize) -> Vec<f64>
where
    F: Fn(&[Dual64], &mut [Dual64]),
{
    let lifted: Vec<Dual64> = x
        .iter()
        .zip(dir.iter())
        .map(|(&v, &d)| Dual::new(v, d))
        .collect();
    let mut out = vec![Dual64::from_f64(0.0); out_len];
    f(&lifted, &mut out);
    out.iter().map(|d| d.eps).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_of_square() {
        let d = derivative(|x| x * x, 3.0);
        assert_eq!(d, 6.0);
    }

    #[test]
    fn derivative_of_sin_at_zero() {
        let d = derivative(|x| x.sin(), 0.0);
        assert_eq!(d, 1.0);
    }

    #[test]
    fn nested_duals_give_second_derivative() {
        // f(x) = x^3, f''(2) = 12
        let x: Dual<Dual64> = Dual::new(Dual::new(2.0, 1.0), Dual::new(1.0, 0.0));
        let y = x * x * x;
        assert!((y.eps.eps - 12.0).abs() < 1e-14);
    }

    #[test]
    fn division_rule() {
        // d/dx (1/x) at 2 = -1/4
        let d = derivative(|x| Dual64::one() / x, 2.0);
        assert!((d + 0.25).abs() < 1e-15);
    }

    #[test]
    fn tanh_and_exp_chain() {
        let d = derivative(|x| (x * x).tanh(), 0.7);
        let t = (0.49f64).tanh();
        assert!((d - 1.4 * (1.0 - t * t)).abs() < 1e-14);
        let d = derivative(|x| x.exp(), 1.0);
        assert!((d - 1.0f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn powi_negative_exponent() {
        let d = derivative(|x| x.powi(-2), 2.0);
        assert!((d + 2.0 / 8.0).abs() < 1e-14);
    }
}
