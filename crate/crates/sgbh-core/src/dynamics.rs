//! Model nonlinearities and coefficient families: the convection flux
//! p(u) = u^(delta+1), the reaction c(u) = u(1-u^delta)(u^delta-gamma), the
//! C^1 truncation bridge, and the noise-coefficient families g with their
//! growth/Lipschitz contracts.

use serde::Serialize;

use crate::error::SgbhError;

/// Hard ceiling on |u| before the integrator reports a blowup.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// Model coefficients. `epsilon` scales the noise; epsilon = 0 is admitted so
/// the same parameter set drives deterministic skeleton runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: i32,
    pub epsilon: f64,
}

impl ModelParams {
    pub fn new(
        nu: f64,
        alpha: f64,
        beta: f64,
        gamma: f64,
        delta: i32,
        epsilon: f64,
    ) -> Result<Self, SgbhError> {
        let p = ModelParams {
            nu,
            alpha,
            beta,
            gamma,
            delta,
            epsilon,
        };
        let violations = p.violations();
        if violations.is_empty() {
            Ok(p)
        } else {
            Err(SgbhError::Invalid(violations.join("; ")))
        }
    }

    /// Every violated parameter constraint, one message each (empty = valid).
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            v.push(format!("nu must be positive, got {}", self.nu));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            v.push(format!("alpha must be nonnegative, got {}", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            v.push(format!("beta must be nonnegative, got {}", self.beta));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            v.push(format!("gamma must be at least 1, got {}", self.gamma));
        }
        if self.delta < 1 {
            v.push(format!("delta must be a positive integer, got {}", self.delta));
        }
        if !(self.epsilon >= 0.0 && self.epsilon <= 1.0) {
            v.push(format!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        v
    }

    /// Convection weight alpha / (delta + 1) of the conservative flux form.
    pub fn convection_weight(&self) -> f64 {
        self.alpha / (self.delta as f64 + 1.0)
    }

    /// Default norm-monitor exponent: the smallest even integer exceeding
    /// max(6, 2 delta + 1).
    pub fn default_monitor_p(&self) -> u32 {
        let floor = (6.max(2 * self.delta + 1) + 1) as u32;
        floor + floor % 2
    }
}

/// Convection flux p(u) = u^(delta+1).
pub fn p_nl(u: f64, delta: i32) -> f64 {
    u.powi(delta + 1)
}

/// d/du of the convection flux: (delta+1) u^delta.
pub fn p_nl_prime(u: f64, delta: i32) -> f64 {
    (delta as f64 + 1.0) * u.powi(delta)
}

/// Reaction c(u) = u (1 - u^delta)(u^delta - gamma).
pub fn c_nl(u: f64, delta: i32, gamma: f64) -> f64 {
    let ud = u.powi(delta);
    u * (1.0 - ud) * (ud - gamma)
}

/// d/du of the reaction, from the expanded form
/// c(u) = (1+gamma) u^(delta+1) - u^(2 delta + 1) - gamma u.
pub fn c_nl_prime(u: f64, delta: i32, gamma: f64) -> f64 {
    let d = delta as f64;
    (1.0 + gamma) * (d + 1.0) * u.powi(delta) - (2.0 * d + 1.0) * u.powi(2 * delta) - gamma
}

/// C^1 truncation: 1 on |r| <= R, 0 on |r| >= R+1, smoothstep bridge between.
/// The bridge derivative peaks at 3/2, so the map is globally 2-Lipschitz.
pub fn cutoff(r: f64, r_threshold: f64) -> f64 {
    debug_assert!(r_threshold > 0.0, "cutoff threshold must be positive");
    let a = r.abs();
    if a <= r_threshold {
        1.0
    } else if a >= r_threshold + 1.0 {
        0.0
    } else {
        let th = a - r_threshold;
        1.0 - th * th * (3.0 - 2.0 * th)
    }
}

/// Noise-coefficient families. All are autonomous in (t, x):
/// - Constant: g = K
/// - Linear: g = K sqrt(1 + r^2) / sqrt(2) — smooth, |g| <= K(1+|r|),
///   globally K-Lipschitz (actual modulus K/sqrt(2))
/// - BoundedSigmoid: g = K tanh(L r / K) — |g| < K, L-Lipschitz
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GCoefficient {
    Constant { k: f64 },
    Linear { k: f64 },
    BoundedSigmoid { k: f64, l: f64 },
}

fn positive(name: &str, v: f64) -> Result<(), SgbhError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SgbhError::Invalid(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl GCoefficient {
    pub fn constant(k: f64) -> Result<Self, SgbhError> {
        positive("growth constant K", k)?;
        Ok(GCoefficient::Constant { k })
    }

    pub fn linear(k: f64) -> Result<Self, SgbhError> {
        positive("growth constant K", k)?;
        Ok(GCoefficient::Linear { k })
    }

    pub fn bounded_sigmoid(k: f64, l: f64) -> Result<Self, SgbhError> {
        positive("bound K", k)?;
        positive("Lipschitz constant L", l)?;
        Ok(GCoefficient::BoundedSigmoid { k, l })
    }

    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            GCoefficient::Constant { k } => k,
            GCoefficient::Linear { k } => k * (1.0 + r * r).sqrt() / std::f64::consts::SQRT_2,
            GCoefficient::BoundedSigmoid { k, l } => k * (l * r / k).tanh(),
        }
    }

    pub fn deriv(&self, r: f64) -> f64 {
        match *self {
            GCoefficient::Constant { .. } => 0.0,
            GCoefficient::Linear { k } => {
                k * r / ((1.0 + r * r).sqrt() * std::f64::consts::SQRT_2)
            }
            GCoefficient::BoundedSigmoid { k, l } => {
                let c = (l * r / k).cosh();
                l / (c * c)
            }
        }
    }

    /// Declared global Lipschitz constant.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            GCoefficient::Constant { .. } => 0.0,
            GCoefficient::Linear { k } => k,
            GCoefficient::BoundedSigmoid { l, .. } => l,
        }
    }

    /// Declared growth constant K.
    pub fn growth(&self) -> f64 {
        match *self {
            GCoefficient::Constant { k }
            | GCoefficient::Linear { k }
            | GCoefficient::BoundedSigmoid { k, .. } => k,
        }
    }

    /// Whether sup |g| <= K holds (the bounded-coefficient regime).
    pub fn is_bounded(&self) -> bool {
        !matches!(self, GCoefficient::Linear { .. })
    }
}

/// Family evaluation with the (t, x) slots of the general contract; the
/// built-in families are autonomous, so both are ignored.
pub fn g_eval(coeff: &GCoefficient, _t: f64, _x: f64, r: f64) -> f64 {
    coeff.eval(r)
}

/// Norm-monitor exponent admissibility: linear-growth coefficients need
/// p > max(6, 2 delta + 1); bounded coefficients need p >= 2 delta + 1.
pub fn monitor_exponent_violation(p: u32, delta: i32, g: &GCoefficient) -> Option<String> {
    let p = p as i32;
    if g.is_bounded() {
        if p < 2 * delta + 1 {
            return Some(format!(
                "monitor exponent p = {p} must satisfy p >= 2*delta+1 = {} for bounded noise coefficients",
                2 * delta + 1
            ));
        }
    } else {
        let floor = 6.max(2 * delta + 1);
        if p <= floor {
            return Some(format!(
                "monitor exponent p = {p} must satisfy p > max(6, 2*delta+1) = {floor} for linear-growth noise coefficients"
            ));
        }
    }
    None
}
