//! Spatial state at one time: values at the interior nodes of a uniform
//! Dirichlet grid. Boundary values are implicitly zero and never stored.

use crate::error::SgbhError;

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Vec<f64>,
    h: f64,
}

impl Field {
    pub fn new(values: Vec<f64>, h: f64) -> Self {
        assert!(h > 0.0 && !values.is_empty());
        Field { values, h }
    }

    pub fn zeros(n: usize, h: f64) -> Self {
        Field::new(vec![0.0; n], h)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// h * sum |u_i|^p, the discrete L^p norm raised to the p-th power.
    pub fn lp_norm_pow(&self, p: f64) -> f64 {
        assert!(p >= 1.0);
        self.h * self.values.iter().map(|v| v.abs().powf(p)).sum::<f64>()
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        self.lp_norm_pow(p).powf(1.0 / p)
    }

    pub fn l2_norm(&self) -> f64 {
        (self.h * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn lp_dist(&self, other: &Field, p: f64) -> f64 {
        assert_eq!(self.len(), other.len());
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs().powf(p))
            .sum();
        (self.h * s).powf(1.0 / p)
    }

    pub fn sup_dist(&self, other: &Field) -> f64 {
        assert_eq!(self.len(), other.len());
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn check_finite(&self, step: usize) -> Result<(), SgbhError> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(SgbhError::Blowup {
                step,
                threshold: f64::INFINITY,
            })
        }
    }
}
