//! Forward-mode differentiation values.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A scalar dual number `re + eps * ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }

    pub fn constant(re: f64) -> Self {
        Self { re, eps: 0.0 }
    }

    pub fn variable(re: f64) -> Self {
        Self { re, eps: 1.0 }
    }

    pub fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        Self::new(r, self.eps / (2.0 * r))
    }

    pub fn exp(self) -> Self {
        let e = self.re.exp();
        Self::new(e, self.eps * e)
    }

    pub fn ln(self) -> Self {
        Self::new(self.re.ln(), self.eps / self.re)
    }

    pub fn sin(self) -> Self {
        Self::new(self.re.sin(), self.eps * self.re.cos())
    }

    pub fn cos(self) -> Self {
        Self::new(self.re.cos(), -self.eps * self.re.sin())
    }

    pub fn tanh(self) -> Self {
        let t = self.re.tanh();
        Self::new(t, self.eps * (1.0 - t * t))
    }

    pub fn powi(self, n: i32) -> Self {
        Self::new(self.re.powi(n), self.eps * n as f64 * self.re.powi(n - 1))
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual::new(
            self.re / o.re,
            (self.eps * o.re - self.re * o.eps) / (o.re * o.re),
        )
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    fn mul(self, k: f64) -> Dual {
        Dual::new(self.re * k, self.eps * k)
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    fn add(self, k: f64) -> Dual {
        Dual::new(self.re + k, self.eps)
    }
}

/// A tensor carrying a primal value and one tangent direction.
#[derive(Clone, Debug, PartialEq)]
pub struct DualTensor {
    primal: Tensor,
    tangent: Tensor,
}

impl DualTensor {
    pub fn new(primal: Tensor, tangent: Tensor) -> Result<Self> {
        if primal.shape() != tangent.shape() {
            primal.same_shape(&tangent)?;
        }
        Ok(Self { primal, tangent })
    }

    /// A value with zero tangent.
    pub fn constant(primal: Tensor) -> Self {
        let tangent = Tensor::zeros(primal.shape());
        Self { primal, tangent }
    }

    pub fn primal(&self) -> &Tensor {
        &self.primal
    }

    pub fn tangent(&self) -> &Tensor {
        &self.tangent
    }

    pub fn into_parts(self) -> (Tensor, Tensor) {
        (self.primal, self.tangent)
    }

    pub fn shape(&self) -> &[usize] {
        self.primal.shape()
    }

    pub fn add(&self, other: &DualTensor) -> Result<DualTensor> {
        Ok(DualTensor {
            primal: self.primal.add(&other.primal)?,
            tangent: self.tangent.add(&other.tangent)?,
        })
    }

    pub fn scale(&self, k: f64) -> DualTensor {
        DualTensor {
            primal: self.primal.scale(k),
            tangent: self.tangent.scale(k),
        }
    }

    /// Elementwise product rule.
    pub fn mul(&self, other: &DualTensor) -> Result<DualTensor> {
        self.primal.same_shape(&other.primal)?;
        let p = self.primal.zip_with(&other.primal, |a, b| a * b);
        let t1 = self.primal.zip_with(&other.tangent, |a, b| a * b);
        let t2 = self.tangent.zip_with(&other.primal, |a, b| a * b);
        Ok(DualTensor {
            primal: p,
            tangent: t1.add(&t2)?,
        })
    }

    /// Applies a scalar function elementwise through dual arithmetic.
    pub fn map(&self, f: impl Fn(Dual) -> Dual) -> DualTensor {
        let n = self.primal.len();
        let mut p = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        for (&a, &b) in self.primal.data().iter().zip(self.tangent.data()) {
            let d = f(Dual::new(a, b));
            p.push(d.re);
            t.push(d.eps);
        }
        DualTensor {
            primal: Tensor::from_parts(self.shape().to_vec(), p),
            tangent: Tensor::from_parts(self.shape().to_vec(), t),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.primal.is_finite() && self.tangent.is_finite() {
            Ok(())
        } else {
            Err(Error::Data("non-finite value in dual tensor".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let x = Dual::variable(3.0);
        let y = x * x;
        assert_eq!((y.re, y.eps), (9.0, 6.0));
    }

    #[test]
    fn quotient_and_chain() {
        let x = Dual::variable(0.7);
        let y = (x.sin() / (x * x + 1.0)).exp();
        let f = |v: f64| (v.sin() / (v * v + 1.0)).exp();
        let h = 1e-6;
        let fd = (f(0.7 + h) - f(0.7 - h)) / (2.0 * h);
        assert!((y.eps - fd).abs() < 1e-8);
    }
}
