//! Uniform mesh on [0,1] with homogeneous Dirichlet boundary and the
//! eigensystem of -d^2/dx^2.
//!
//! Interior nodes x_i = i*h with h = 1/(n+1). Eigenpairs: lambda_j = j^2 pi^2,
//! phi_j(x) = sqrt(2) sin(j pi x). Sampled on the mesh, phi_j is an exact
//! eigenvector of the second-difference matrix with ghost zeros, with discrete
//! eigenvalue (4/h^2) sin^2(j pi h / 2); the implicit stepper therefore
//! diagonalizes exactly in this basis.

use std::f64::consts::{PI, SQRT_2};

use crate::error::SgbhError;
use crate::field::Field;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    n_interior: usize,
    h: f64,
    nodes: Vec<f64>,
}

impl Grid {
    pub fn new(n_interior: usize) -> Result<Self, SgbhError> {
        if n_interior < 3 {
            return Err(SgbhError::DegenerateGrid(n_interior));
        }
        let h = 1.0 / (n_interior as f64 + 1.0);
        let nodes = (1..=n_interior).map(|i| i as f64 * h).collect();
        Ok(Grid {
            n_interior,
            h,
            nodes,
        })
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn eigenpair(&self, j: usize) -> EigenPair {
        EigenPair::new(j)
    }

    /// Eigenvalue of the Dirichlet second-difference matrix for the sampled
    /// j-th sine mode: (4/h^2) sin^2(j pi h / 2).
    pub fn discrete_eigenvalue(&self, j: usize) -> f64 {
        let s = (j as f64 * PI * self.h / 2.0).sin();
        4.0 / (self.h * self.h) * s * s
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::new(self.nodes.iter().map(|&x| f(x)).collect(), self.h)
    }

    pub fn zero_field(&self) -> Field {
        Field::zeros(self.n_interior, self.h)
    }

    pub fn sample_mode(&self, j: usize, amplitude: f64) -> Field {
        let pair = self.eigenpair(j);
        self.sample(|x| amplitude * pair.phi(x))
    }

    /// Midpoint quadrature of the inner product with phi_j: h * sum u_i phi_j(x_i).
    pub fn project(&self, field: &Field, j: usize) -> Result<f64, SgbhError> {
        if j == 0 || j > self.n_interior {
            return Err(SgbhError::Aliasing {
                j,
                n: self.n_interior,
            });
        }
        assert_eq!(field.len(), self.n_interior, "field lives on another grid");
        let pair = self.eigenpair(j);
        let s: f64 = field
            .values()
            .iter()
            .zip(&self.nodes)
            .map(|(u, &x)| u * pair.phi(x))
            .sum();
        Ok(self.h * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenPair {
    pub index: usize,
    pub lambda: f64,
}

impl EigenPair {
    pub fn new(j: usize) -> Self {
        assert!(j >= 1, "mode indices start at 1");
        let jf = j as f64;
        EigenPair {
            index: j,
            lambda: jf * jf * PI * PI,
        }
    }

    pub fn phi(&self, x: f64) -> f64 {
        SQRT_2 * (self.index as f64 * PI * x).sin()
    }
}
