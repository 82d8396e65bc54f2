//! Scalar abstraction shared by plain reals and forward-mode dual numbers.
//!
//! Every vector field, the RK4 integrator and the loss are written once over
//! [`Scalar`]. Instantiating them with [`Dual`] propagates `K` tangent
//! directions alongside the value. The value part of a dual computation goes
//! through exactly the same floating-point operations as the `f64`
//! instantiation, so both agree bit for bit.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + Send
    + Sync
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
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn from_f64(v: f64) -> Self;

    /// Primal value.
    fn value(self) -> f64;

    fn exp(self) -> Self;

    fn tanh(self) -> Self;

    /// True when the value and every tangent component are finite.
    fn is_finite(self) -> bool;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn powi(self, n: u32) -> Self {
        let mut acc = Self::one();
        for _ in 0..n {
            acc *= self;
        }
        acc
    }
}

/// Hyperbolic tangent through a single `exp`, with a series near zero; agrees
/// with `f64::tanh` to 4e-15 relative.
#[inline]
pub fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a < 0.0625 {
        let x2 = x * x;
        let p = -1382.0 / 155925.0;
        let p = 62.0 / 2835.0 + x2 * p;
        let p = -17.0 / 315.0 + x2 * p;
        let p = 2.0 / 15.0 + x2 * p;
        let p = -1.0 / 3.0 + x2 * p;
        x + x * x2 * p
    } else if a > 20.0 {
        1.0f64.copysign(x)
    } else {
        let e = (2.0 * a).exp();
        (1.0 - 2.0 / (e + 1.0)).copysign(x)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        tanh(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Dual number carrying `K` tangent components.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const K: usize> {
    pub re: f64,
    pub eps: [f64; K],
}

/// Tangent batch width used by the forward-mode gradient engine.
pub type Dual8 = Dual<8>;

impl<const K: usize> Dual<K> {
    pub fn constant(re: f64) -> Self {
        Dual { re, eps: [0.0; K] }
    }

    /// Independent variable seeded along tangent direction `dir`.
    pub fn variable(re: f64, dir: usize) -> Self {
        let mut eps = [0.0; K];
        eps[dir] = 1.0;
        Dual { re, eps }
    }

    #[inline]
    fn map_eps(self, f: impl Fn(f64) -> f64) -> [f64; K] {
        let mut out = self.eps;
        for e in out.iter_mut() {
            *e = f(*e);
        }
        out
    }
}

impl<const K: usize> Add for Dual<K> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (a, b) in eps.iter_mut().zip(rhs.eps.iter()) {
            *a += *b;
        }
        Dual {
            re: self.re + rhs.re,
            eps,
        }
    }
}

impl<const K: usize> Sub for Dual<K> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        let mut eps = self.eps;
        for (a, b) in eps.iter_mut().zip(rhs.eps.iter()) {
            *a -= *b;
        }
        Dual {
            re: self.re - rhs.re,
            eps,
        }
    }
}

impl<const K: usize> Mul for Dual<K> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut eps = [0.0; K];
        for i in 0..K {
            eps[i] = self.eps[i] * rhs.re + self.re * rhs.eps[i];
        }
        Dual {
            re: self.re * rhs.re,
            eps,
        }
    }
}

impl<const K: usize> Div for Dual<K> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let q = self.re / rhs.re;
        let mut eps = [0.0; K];
        for i in 0..K {
            eps[i] = (self.eps[i] - q * rhs.eps[i]) / rhs.re;
        }
        Dual { re: q, eps }
    }
}

impl<const K: usize> Neg for Dual<K> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual {
            re: -self.re,
            eps: self.map_eps(|e| -e),
        }
    }
}

impl<const K: usize> AddAssign for Dual<K> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const K: usize> SubAssign for Dual<K> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<const K: usize> MulAssign for Dual<K> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<const K: usize> Add<f64> for Dual<K> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: f64) -> Self {
        Dual {
            re: self.re + rhs,
            eps: self.eps,
        }
    }
}

impl<const K: usize> Sub<f64> for Dual<K> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: f64) -> Self {
        Dual {
            re: self.re - rhs,
            eps: self.eps,
        }
    }
}

impl<const K: usize> Mul<f64> for Dual<K> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        Dual {
            re: self.re * rhs,
            eps: self.map_eps(|e| e * rhs),
        }
    }
}

impl<const K: usize> Div<f64> for Dual<K> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        Dual {
            re: self.re / rhs,
            eps: self.map_eps(|e| e / rhs),
        }
    }
}

impl<const K: usize> Scalar for Dual<K> {
    #[inline]
    fn from_f64(v: f64) -> Self {
        Dual::constant(v)
    }
    #[inline]
    fn value(self) -> f64 {
        self.re
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual {
            re: e,
            eps: self.map_eps(|d| d * e),
        }
    }
    #[inline]
    fn tanh(self) -> Self {
        let t = tanh(self.re);
        let dt = 1.0 - t * t;
        Dual {
            re: t,
            eps: self.map_eps(|d| d * dt),
        }
    }
    #[inline]
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.eps.iter().all(|e| e.is_finite())
    }
}
