//! Directional derivatives: forward-mode JVP and the central-difference oracle.

use super::dual::{Dual, DualTensor};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A map between tensors that can be evaluated, and optionally pushed forward
/// along a tangent direction.
pub trait Differentiable {
    fn eval(&self, x: &Tensor) -> Result<Tensor>;

    /// Evaluates primal and tangent together. Stages without a dual rule keep
    /// the default, which refuses.
    fn eval_dual(&self, x: &DualTensor) -> Result<DualTensor> {
        let _ = x;
        Err(Error::Unsupported(format!(
            "stage `{}` has no forward-mode rule",
            self.name()
        )))
    }

    fn name(&self) -> &str {
        "anonymous"
    }
}

/// Returns `(f(x), D_v f(x))`.
pub fn jvp<F: Differentiable + ?Sized>(f: &F, x: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    x.same_shape(v)?;
    let out = f.eval_dual(&DualTensor::new(x.clone(), v.clone())?)?;
    out.check_finite()?;
    Ok(out.into_parts())
}

/// Central difference `(f(x + h v) - f(x - h v)) / 2h`.
pub fn finite_difference<F: Differentiable + ?Sized>(
    f: &F,
    x: &Tensor,
    v: &Tensor,
    h: f64,
) -> Result<Tensor> {
    if !(h > 0.0) {
        return Err(Error::Argument(format!("step {h} must be positive")));
    }
    x.same_shape(v)?;
    let mut xp = x.clone();
    xp.axpy(h, v)?;
    let mut xm = x.clone();
    xm.axpy(-h, v)?;
    let fp = f.eval(&xp)?;
    let fm = f.eval(&xm)?;
    Ok(fp.sub(&fm)?.scale(0.5 / h))
}

/// Normwise relative error `max|a - b| / max(max|b|, floor)`.
pub fn relative_error(a: &Tensor, b: &Tensor, floor: f64) -> Result<f64> {
    let diff = super::tensor::max_abs_diff(a, b)?;
    Ok(diff / b.max_abs().max(floor))
}

/// Elementwise scalar function defined once over dual numbers.
pub struct Elementwise<F> {
    name: String,
    f: F,
}

impl<F: Fn(Dual) -> Dual> Elementwise<F> {
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<F: Fn(Dual) -> Dual> Differentiable for Elementwise<F> {
    fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let out = x.map(|v| (self.f)(Dual::constant(v)).re);
        if !out.is_finite() {
            return Err(Error::Data(format!("`{}` produced a non-finite value", self.name)));
        }
        Ok(out)
    }

    fn eval_dual(&self, x: &DualTensor) -> Result<DualTensor> {
        let out = x.map(&self.f);
        out.check_finite()?;
        Ok(out)
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// A primal-only stage, e.g. a table lookup or clamp with no tangent rule.
pub struct Opaque<F> {
    name: String,
    f: F,
}

impl<F: Fn(&Tensor) -> Result<Tensor>> Opaque<F> {
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<F: Fn(&Tensor) -> Result<Tensor>> Differentiable for Opaque<F> {
    fn eval(&self, x: &Tensor) -> Result<Tensor> {
        (self.f)(x)
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// Sequential composition of stages.
#[derive(Default)]
pub struct Pipeline {
    stages: Vec<Box<dyn Differentiable + Send + Sync>>,
}

impl Pipeline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn then(mut self, stage: impl Differentiable + Send + Sync + 'static) -> Self {
        self.stages.push(Box::new(stage));
        self
    }
}

impl Differentiable for Pipeline {
    fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for s in &self.stages {
            cur = s.eval(&cur)?;
        }
        Ok(cur)
    }

    fn eval_dual(&self, x: &DualTensor) -> Result<DualTensor> {
        let mut cur = x.clone();
        for s in &self.stages {
            cur = s.eval_dual(&cur)?;
        }
        Ok(cur)
    }

    fn name(&self) -> &str {
        "pipeline"
    }
}
