//! Normalized unit system.
//!
//! All solver quantities use c = 1 and lattice constant a = 1, so lengths are
//! in units of a, times in units of a/c and frequencies in units of c/a.
//! Physical values enter only through [`UnitSystem`].

use serde::{Deserialize, Serialize};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default lattice constant relative to the cavity wavelength.
pub const DEFAULT_A_OVER_LAMBDA: f64 = 0.27;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSystem {
    /// Physical lattice constant in nm.
    pub a_nm: f64,
}

impl UnitSystem {
    pub fn from_lattice_constant_nm(a_nm: f64) -> Self {
        Self { a_nm }
    }

    /// Anchor the lattice to a physical cavity wavelength with `a = a_over_lambda * lambda_cav`.
    pub fn from_cavity_wavelength_nm(lambda_cav_nm: f64, a_over_lambda: f64) -> Self {
        Self {
            a_nm: a_over_lambda * lambda_cav_nm,
        }
    }

    /// Normalized wavelength (units of a) to nm.
    pub fn wavelength_to_nm(&self, lambda_norm: f64) -> f64 {
        lambda_norm * self.a_nm
    }

    pub fn wavelength_from_nm(&self, lambda_nm: f64) -> f64 {
        lambda_nm / self.a_nm
    }

    /// Normalized frequency a/λ to a wavelength in nm.
    pub fn frequency_to_nm(&self, freq_norm: f64) -> f64 {
        self.a_nm / freq_norm
    }

    pub fn frequency_from_nm(&self, lambda_nm: f64) -> f64 {
        self.a_nm / lambda_nm
    }

    /// Converts a normalized rate (units of c/a) to s⁻¹.
    pub fn rate_to_si(&self, rate_norm: f64) -> f64 {
        rate_norm * SPEED_OF_LIGHT / (self.a_nm * 1e-9)
    }

    /// Converts a normalized time (units of a/c) to seconds.
    pub fn time_to_si(&self, t_norm: f64) -> f64 {
        t_norm * self.a_nm * 1e-9 / SPEED_OF_LIGHT
    }
}

impl Default for UnitSystem {
    fn default() -> Self {
        Self::from_cavity_wavelength_nm(921.0, DEFAULT_A_OVER_LAMBDA)
    }
}
