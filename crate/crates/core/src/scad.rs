//! SCAD penalty and the group norm it is applied to.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_A: f64 = 3.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScadParams {
    lambda: f64,
    a: f64,
}

impl ScadParams {
    pub fn new(lambda: f64, a: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::domain(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if !(a > 2.0 && a.is_finite()) {
            return Err(Error::domain(format!("SCAD `a` must exceed 2, got {a}")));
        }
        Ok(ScadParams { lambda, a })
    }

    pub fn with_lambda(lambda: f64) -> Result<Self> {
        ScadParams::new(lambda, DEFAULT_A)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn derivative(&self, theta: f64) -> Result<f64> {
        scad_derivative(theta, self)
    }

    pub fn value(&self, theta: f64) -> Result<f64> {
        scad_value(theta, self)
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("SCAD argument must be >= 0, got {theta}")))
    }
}

/// `p'_λ(θ)`; identically zero when λ = 0.
pub fn scad_derivative(theta: f64, params: &ScadParams) -> Result<f64> {
    check_theta(theta)?;
    let (lambda, a) = (params.lambda, params.a);
    if lambda == 0.0 {
        return Ok(0.0);
    }
    if theta <= lambda {
        Ok(lambda)
    } else {
        Ok((a * lambda - theta).max(0.0) / (a - 1.0))
    }
}

/// `p_λ(θ)`, the antiderivative of [`scad_derivative`] with `p_λ(0) = 0`.
pub fn scad_value(theta: f64, params: &ScadParams) -> Result<f64> {
    check_theta(theta)?;
    let (lambda, a) = (params.lambda, params.a);
    if theta <= lambda {
        Ok(lambda * theta)
    } else if theta <= a * lambda {
        Ok(-(theta * theta - 2.0 * a * lambda * theta + lambda * lambda) / (2.0 * (a - 1.0)))
    } else {
        Ok((a + 1.0) * lambda * lambda / 2.0)
    }
}

pub fn group_norm(b: &[f64]) -> f64 {
    b.iter().map(|v| v * v).sum::<f64>().sqrt()
}
