//! Densities on uniform grids: the numerical carrier for distribution sums.
//!
//! Summing independent symmetric unimodal errors preserves symmetry and
//! central dominance; these grids let the engines (and the tests) exercise
//! that closure numerically via direct convolution.

use crate::error::{Error, Result};
use rayon::prelude::*;

/// A density sampled on `lo + j*step`, `j = 0..n-1`, with trapezoid mass
/// normalized to 1 by the constructors used throughout the crate.
#[derive(Clone, Debug)]
pub struct GridDensity {
    lo: f64,
    step: f64,
    mass: Vec<f64>,
}

impl GridDensity {
    pub fn new(lo: f64, step: f64, mass: Vec<f64>) -> Result<Self> {
        if step <= 0.0 || !step.is_finite() {
            return Err(Error::invalid("grid step must be positive"));
        }
        if mass.len() < 2 {
            return Err(Error::invalid("grid needs at least two points"));
        }
        if mass.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::invalid("grid mass must be finite and non-negative"));
        }
        Ok(Self { lo, step, mass })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.lo + (self.mass.len() - 1) as f64 * self.step
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn n(&self) -> usize {
        self.mass.len()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn x(&self, j: usize) -> f64 {
        self.lo + j as f64 * self.step
    }

    /// Trapezoid mass.
    pub fn integral(&self) -> f64 {
        let inner: f64 = self.mass[1..self.mass.len() - 1].iter().sum();
        (inner + 0.5 * (self.mass[0] + self.mass[self.mass.len() - 1])) * self.step
    }

    /// Grid mean (trapezoid-weighted).
    pub fn mean(&self) -> f64 {
        let n = self.mass.len();
        let mut acc = 0.5 * (self.x(0) * self.mass[0] + self.x(n - 1) * self.mass[n - 1]);
        for j in 1..n - 1 {
            acc += self.x(j) * self.mass[j];
        }
        acc * self.step / self.integral()
    }

    pub fn normalize(&mut self) {
        let total = self.integral();
        if total > 0.0 {
            for m in &mut self.mass {
                *m /= total;
            }
        }
    }

    /// Density of the sum of two independent grid-sampled variables.
    /// Steps must match; supports add.
    pub fn convolve(&self, other: &GridDensity) -> Result<GridDensity> {
        let rel = (self.step - other.step).abs() / self.step.max(other.step);
        if rel > 1e-12 {
            return Err(Error::MismatchedGridStep(self.step, other.step));
        }
        let (a, b) = (&self.mass, &other.mass);
        let n = a.len() + b.len() - 1;
        let step = self.step;
        let mass: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|k| {
                let j_lo = k.saturating_sub(b.len() - 1);
                let j_hi = k.min(a.len() - 1);
                let mut acc = 0.0;
                for j in j_lo..=j_hi {
                    acc += a[j] * b[k - j];
                }
                acc * step
            })
            .collect();
        GridDensity::new(self.lo + other.lo, step, mass)
    }

    /// Even about the support midpoint, within `tol` per mirrored pair.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.mass.len();
        (0..n / 2).all(|j| (self.mass[j] - self.mass[n - 1 - j]).abs() <= tol)
    }

    /// Non-increasing away from the support midpoint, within `tol` per
    /// adjacent-bin comparison.
    pub fn is_central_dominant(&self, tol: f64) -> bool {
        let n = self.mass.len();
        let c = (n - 1) / 2;
        let right_ok = (c..n - 1).all(|j| self.mass[j + 1] <= self.mass[j] + tol);
        let left_ok = (0..c).all(|j| self.mass[j] <= self.mass[j + 1] + tol);
        right_ok && left_ok
    }

    /// Cumulative trapezoid integral for CDF queries.
    pub fn cdf(&self) -> GridCdf {
        let n = self.mass.len();
        let mut cum = Vec::with_capacity(n);
        cum.push(0.0);
        let mut acc = 0.0;
        for j in 1..n {
            acc += 0.5 * (self.mass[j - 1] + self.mass[j]) * self.step;
            cum.push(acc);
        }
        GridCdf { lo: self.lo, step: self.step, cum }
    }
}

/// Linear-interpolated cumulative distribution on a uniform grid.
#[derive(Clone, Debug)]
pub struct GridCdf {
    lo: f64,
    step: f64,
    cum: Vec<f64>,
}

impl GridCdf {
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.cum.len();
        let t = (x - self.lo) / self.step;
        if t <= 0.0 {
            return 0.0;
        }
        if t >= (n - 1) as f64 {
            return self.cum[n - 1];
        }
        let j = t as usize;
        let w = t - j as f64;
        self.cum[j] * (1.0 - w) + self.cum[j + 1] * w
    }

    pub fn total(&self) -> f64 {
        *self.cum.last().unwrap()
    }
}
