//! Convolutional PML with polynomial grading.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absorbing boundary parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmlSpec {
    /// Layer thickness in cells.
    pub thickness: usize,
    /// Polynomial grading order of σ and κ.
    pub order: f64,
    /// Theoretical normal-incidence reflection used to size σ_max.
    pub reflection: f64,
}

impl Default for PmlSpec {
    fn default() -> Self {
        Self {
            thickness: 10,
            order: 3.0,
            reflection: 1e-4,
        }
    }
}

impl PmlSpec {
    pub fn validate(&self) -> Result<()> {
        if self.thickness < 4 {
            return Err(Error::Config(format!(
                "PML thickness must be at least 4 cells, got {}",
                self.thickness
            )));
        }
        if !(self.order >= 1.0) {
            return Err(Error::Config(format!(
                "PML grading order must be >= 1, got {}",
                self.order
            )));
        }
        if !(self.reflection > 0.0 && self.reflection < 1.0) {
            return Err(Error::Config(format!(
                "PML reflection must lie in (0, 1), got {}",
                self.reflection
            )));
        }
        Ok(())
    }
}

// Complex-frequency-shift maximum, in units of c/a.
const ALPHA_MAX: f64 = 0.02;

/// Update coefficients along one axis.
///
/// `e_*` are sampled at integer nodes `0..=n`, `h_*` at half nodes `i + 1/2`
/// for `i in 0..n`.
#[derive(Debug, Clone)]
pub(crate) struct AxisProfile {
    pub e_b: Vec<f32>,
    pub e_a: Vec<f32>,
    pub e_kinv: Vec<f32>,
    pub e_active: Vec<bool>,
    pub h_b: Vec<f32>,
    pub h_a: Vec<f32>,
    pub h_kinv: Vec<f32>,
    pub h_active: Vec<bool>,
}

impl AxisProfile {
    /// Profile with no absorbing layer.
    pub fn none(n: usize) -> Self {
        Self {
            e_b: vec![0.0; n + 1],
            e_a: vec![0.0; n + 1],
            e_kinv: vec![1.0; n + 1],
            e_active: vec![false; n + 1],
            h_b: vec![0.0; n],
            h_a: vec![0.0; n],
            h_kinv: vec![1.0; n],
            h_active: vec![false; n],
        }
    }

    /// Graded profile for `n` cells, cell size `dx`, time step `dt`,
    /// with background refractive index `n_bg`.
    pub fn graded(spec: &PmlSpec, n: usize, dx: f64, dt: f64, n_bg: f64) -> Self {
        let layer = spec.thickness as f64;
        let depth = layer * dx;
        let m = spec.order;
        let sigma_max = -(m + 1.0) * spec.reflection.ln() / (2.0 * n_bg * depth);
        let kappa_max = 1.0;
        let coeffs = |x: f64| -> (f32, f32, f32, bool) {
            let d = (layer - x).max(x - (n as f64 - layer)).max(0.0) / layer;
            let d = d.min(1.0);
            if d <= 0.0 {
                return (0.0, 0.0, 1.0, false);
            }
            let grade = d.powf(m);
            let sigma = sigma_max * grade;
            let kappa = 1.0 + (kappa_max - 1.0) * grade;
            let alpha = ALPHA_MAX * (1.0 - d);
            let b = (-(sigma / kappa + alpha) * dt).exp();
            let a = sigma / (sigma * kappa + kappa * kappa * alpha) * (b - 1.0);
            (b as f32, a as f32, (1.0 / kappa) as f32, true)
        };
        let mut p = Self::none(n);
        for i in 0..=n {
            let (b, a, k, act) = coeffs(i as f64);
            p.e_b[i] = b;
            p.e_a[i] = a;
            p.e_kinv[i] = k;
            p.e_active[i] = act;
        }
        for i in 0..n {
            let (b, a, k, act) = coeffs(i as f64 + 0.5);
            p.h_b[i] = b;
            p.h_a[i] = a;
            p.h_kinv[i] = k;
            p.h_active[i] = act;
        }
        p
    }
}
