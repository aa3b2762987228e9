//! Forward-mode dual numbers, so that every component equation is written
//! once and differentiated exactly.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic needed by the component equations.
pub trait Scalar:
    Clone
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn powf(&self, a: f64) -> Self;

    /// `ln(1 + e^x)` without overflow.
    fn softplus(&self) -> Self {
        let v = self.value();
        if v > 30.0 {
            self.clone()
        } else {
            (self.exp() + 1.0).ln()
        }
    }

    /// Logistic function.
    fn sigmoid(&self) -> Self {
        let e = (-self.clone()).exp();
        (e + 1.0).powf(-1.0)
    }
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn powf(&self, a: f64) -> Self {
        f64::powf(*self, a)
    }
    fn softplus(&self) -> Self {
        if *self > 30.0 {
            *self
        } else {
            self.exp().ln_1p()
        }
    }
}

/// A value with its gradient. An empty gradient means "constant".
#[derive(Clone, Debug, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: Vec<f64>,
}

impl Dual {
    /// The `i`-th of `n` independent variables.
    pub fn var(v: f64, i: usize, n: usize) -> Dual {
        let mut d = vec![0.0; n];
        d[i] = 1.0;
        Dual { v, d }
    }

    fn chain(&self, v: f64, dv: f64) -> Dual {
        Dual {
            v,
            d: self.d.iter().map(|x| x * dv).collect(),
        }
    }

    fn combine(a: &[f64], ca: f64, b: &[f64], cb: f64) -> Vec<f64> {
        let n = a.len().max(b.len());
        (0..n)
            .map(|i| ca * a.get(i).copied().unwrap_or(0.0) + cb * b.get(i).copied().unwrap_or(0.0))
            .collect()
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual {
            v: self.v + o.v,
            d: Dual::combine(&self.d, 1.0, &o.d, 1.0),
        }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual {
            v: self.v - o.v,
            d: Dual::combine(&self.d, 1.0, &o.d, -1.0),
        }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual {
            v: self.v * o.v,
            d: Dual::combine(&self.d, o.v, &o.d, self.v),
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let inv = 1.0 / o.v;
        Dual {
            v: self.v * inv,
            d: Dual::combine(&self.d, inv, &o.d, -self.v * inv * inv),
        }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        self.chain(-self.v, -1.0)
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    fn add(mut self, c: f64) -> Dual {
        self.v += c;
        self
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    fn sub(mut self, c: f64) -> Dual {
        self.v -= c;
        self
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    fn mul(self, c: f64) -> Dual {
        self.chain(self.v * c, c)
    }
}

impl Div<f64> for Dual {
    type Output = Dual;
    fn div(self, c: f64) -> Dual {
        self.chain(self.v / c, 1.0 / c)
    }
}

impl Scalar for Dual {
    fn cst(v: f64) -> Self {
        Dual { v, d: Vec::new() }
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn sin(&self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(&self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn exp(&self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn ln(&self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    fn powf(&self, a: f64) -> Self {
        if a == 0.0 {
            return Dual::cst(1.0);
        }
        self.chain(self.v.powf(a), a * self.v.powf(a - 1.0))
    }
    fn softplus(&self) -> Self {
        let s = 1.0 / (1.0 + (-self.v).exp());
        self.chain(self.v.softplus(), s)
    }
    fn sigmoid(&self) -> Self {
        let s = 1.0 / (1.0 + (-self.v).exp());
        self.chain(s, s * (1.0 - s))
    }
}

/// Smooth minimum: `b - w·softplus((b - a)/w)`, tends to `min(a, b)` as
/// `w → 0`.
pub fn smooth_min<S: Scalar>(a: S, b: S, w: f64) -> S {
    b.clone() - ((b - a) / w).softplus() * w
}

/// Smooth maximum, the mirror image of [`smooth_min`].
pub fn smooth_max<S: Scalar>(a: S, b: S, w: f64) -> S {
    -smooth_min(-a, -b, w)
}
