//! Run configuration: schema, strict parsing, validation and canonical form.
//!
//! A config file is TOML. `experiment` selects the run; every other table
//! is optional and filled with defaults. Tables that do not apply to the
//! selected experiment are rejected, so the canonical form of a config lists
//! exactly the knobs the run uses.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pcsim_core::ensemble::{EnsembleSettings, RateSettings};
use pcsim_core::fdtd::{Dimensionality, PmlSpec};
use pcsim_core::geometry::{
    make_single_defect_cavity, Defect, DomainSpec, HoleOverride, Lattice, LatticeKind,
    PhotonicCrystalSpec, Slab,
};
use pcsim_core::modal::{CavitySettings, Polarization};
use pcsim_core::photon::{EmitterModel, LifetimeFitOptions, Pairing, PulseTrain};
use pcsim_core::units::{UnitSystem, DEFAULT_A_OVER_LAMBDA};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Resonance,
    Purcell,
    SingleRate,
    Ensemble,
    RateMap,
    Bandgap,
    PhotonStats,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        Self::Resonance,
        Self::Purcell,
        Self::SingleRate,
        Self::Ensemble,
        Self::RateMap,
        Self::Bandgap,
        Self::PhotonStats,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Resonance => "resonance",
            Self::Purcell => "purcell",
            Self::SingleRate => "single-rate",
            Self::Ensemble => "ensemble",
            Self::RateMap => "rate-map",
            Self::Bandgap => "bandgap",
            Self::PhotonStats => "photon-stats",
        }
    }

    /// Experiments that draw random numbers and therefore need a seed.
    pub fn is_stochastic(self) -> bool {
        matches!(self, Self::Ensemble | Self::Bandgap | Self::PhotonStats)
    }

    /// Whether the experiment runs the field solver on a crystal.
    pub fn uses_structure(self) -> bool {
        !matches!(self, Self::Purcell | Self::PhotonStats)
    }

    fn sections(self) -> &'static [&'static str] {
        match self {
            Self::Resonance => &["resonance"],
            Self::Purcell => &["purcell"],
            Self::SingleRate => &["excitation", "single_rate"],
            Self::Ensemble => &["excitation", "ensemble"],
            Self::RateMap => &["excitation", "resonance", "rate_map"],
            Self::Bandgap => &["excitation", "bandgap"],
            Self::PhotonStats => &["photon_stats"],
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
                format!(
                    "unknown experiment kind `{s}` (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatticeConfig {
    pub a: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlabConfig {
    pub n: f64,
    pub d: f64,
    /// Effective index used by 2D-TE runs.
    pub n_eff: f64,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        GeometryConfig::default().lattice
    }
}

impl Default for SlabConfig {
    fn default() -> Self {
        GeometryConfig::default().slab
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideConfig {
    pub site: [i32; 2],
    #[serde(default)]
    pub shift: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefectConfig {
    pub removed: Vec<[i32; 2]>,
    pub overrides: Vec<OverrideConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    pub lattice: LatticeConfig,
    pub slab: SlabConfig,
    /// Periods along x, rows along y.
    pub extent: [usize; 2],
    /// Apply the default single-defect cavity to the defect-free crystal.
    pub cavity: bool,
    pub defect: DefectConfig,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let d = PhotonicCrystalSpec::default();
        Self {
            lattice: LatticeConfig {
                a: d.lattice.a,
                r: d.lattice.r,
            },
            slab: SlabConfig {
                n: d.slab.n,
                d: d.slab.d,
                n_eff: d.slab.n_eff,
            },
            extent: d.extent,
            cavity: false,
            defect: DefectConfig::default(),
        }
    }
}

impl GeometryConfig {
    /// Crystal spec without the cavity step.
    fn base_spec(&self) -> PhotonicCrystalSpec {
        PhotonicCrystalSpec {
            lattice: Lattice {
                kind: LatticeKind::Triangular,
                a: self.lattice.a,
                r: self.lattice.r,
            },
            slab: Slab {
                n: self.slab.n,
                d: self.slab.d,
                n_eff: self.slab.n_eff,
            },
            extent: self.extent,
            defect: Defect {
                removed: self.defect.removed.clone(),
                overrides: self
                    .defect
                    .overrides
                    .iter()
                    .map(|o| HoleOverride {
                        site: o.site,
                        shift: o.shift,
                        radius: o.radius,
                    })
                    .collect(),
            },
        }
    }

    pub fn spec(&self) -> Result<PhotonicCrystalSpec, CliError> {
        let base = self.base_spec();
        if self.cavity {
            Ok(make_single_defect_cavity(&base)?)
        } else {
            Ok(base)
        }
    }

    fn check(&self, errors: &mut Vec<String>) {
        let base = self.base_spec();
        errors.extend(
            base.violations()
                .into_iter()
                .map(|v| format!("geometry: {v}")),
        );
        if self.cavity && !base.defect.is_empty() {
            errors.push("geometry: `cavity = true` applies the default defect and cannot be combined with an explicit [geometry.defect]".into());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DimConfig {
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "3d")]
    ThreeD,
}

impl DimConfig {
    pub fn dimensionality(self) -> Dimensionality {
        match self {
            DimConfig::TwoD => Dimensionality::TwoDTe,
            DimConfig::ThreeD => Dimensionality::ThreeD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PmlConfig {
    pub thickness: usize,
    pub order: f64,
    pub reflection: f64,
}

impl Default for PmlConfig {
    fn default() -> Self {
        let p = PmlSpec::default();
        Self {
            thickness: p.thickness,
            order: p.order,
            reflection: p.reflection,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub dimensionality: DimConfig,
    /// Cells per lattice constant; defaults to 20 in 2D and 12 in 3D.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution: Option<f64>,
    pub courant: f64,
    pub pml: PmlConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dimensionality: DimConfig::TwoD,
            resolution: None,
            courant: 0.5,
            pml: PmlConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn resolution(&self) -> f64 {
        self.resolution.unwrap_or(match self.dimensionality {
            DimConfig::TwoD => 20.0,
            DimConfig::ThreeD => 12.0,
        })
    }

    pub fn pml(&self) -> PmlSpec {
        PmlSpec {
            thickness: self.pml.thickness,
            order: self.pml.order,
            reflection: self.pml.reflection,
        }
    }

    fn check(&self, errors: &mut Vec<String>) {
        if !(self.resolution() >= 8.0) {
            errors.push(format!(
                "solver.resolution must be at least 8 cells per a, got {}",
                self.resolution()
            ));
        }
        let limit = self.dimensionality.dimensionality().courant_limit();
        if !(self.courant > 0.0 && self.courant <= limit) {
            errors.push(format!(
                "solver.courant must lie in (0, {limit:.6}], got {}",
                self.courant
            ));
        }
        if let Err(e) = self.pml().validate() {
            errors.push(format!("solver.pml: {e}"));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainConfig {
    pub padding: f64,
    pub cladding: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        let d = DomainSpec::default();
        Self {
            padding: d.padding,
            cladding: d.cladding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnitsConfig {
    /// Physical cavity wavelength anchoring the lattice constant.
    pub lambda_cav_nm: f64,
    pub a_over_lambda: f64,
}

impl Default for UnitsConfig {
    fn default() -> Self {
        Self {
            lambda_cav_nm: 921.0,
            a_over_lambda: DEFAULT_A_OVER_LAMBDA,
        }
    }
}

impl UnitsConfig {
    pub fn system(&self) -> UnitSystem {
        UnitSystem::from_cavity_wavelength_nm(self.lambda_cav_nm, self.a_over_lambda)
    }
}

/// Broadband dipole pulse and stopping rule for rate runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExcitationConfig {
    pub pulse_center: f64,
    pub pulse_bandwidth: f64,
    pub flux_half_width: f64,
    pub max_time: f64,
    pub decay_threshold: f64,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        let r = RateSettings::default();
        Self {
            pulse_center: r.pulse_center,
            pulse_bandwidth: r.pulse_bandwidth,
            flux_half_width: r.flux_half_width,
            max_time: r.max_time,
            decay_threshold: r.decay_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResonanceConfig {
    pub polarization: Polarization,
    pub pulse_center: f64,
    pub pulse_bandwidth: f64,
    pub band: [f64; 2],
    pub settle_time: f64,
    pub ring_time: f64,
    pub dft_stride: u64,
    pub source_offset: [f64; 3],
    /// Objective numerical aperture for the collection efficiency (3D only).
    pub collection_na: f64,
    /// Height of the collection plane above the slab top (3D only).
    pub collection_height: f64,
}

impl Default for ResonanceConfig {
    fn default() -> Self {
        let c = CavitySettings::default();
        Self {
            polarization: Polarization::XDipole,
            pulse_center: c.pulse_center,
            pulse_bandwidth: c.pulse_bandwidth,
            band: c.band,
            settle_time: c.settle_time,
            ring_time: c.ring_time,
            dft_stride: c.dft_stride,
            source_offset: c.source_offset,
            collection_na: 0.6,
            collection_height: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PurcellConfig {
    pub q: f64,
    /// Mode volume in units of `(λ/n)³`.
    pub v_mode: f64,
    pub wavelength_nm: f64,
    pub n: f64,
    /// Base rate of an uncoupled emitter in the crystal.
    pub f_pc: f64,
    /// Spatial and orientation overlap with the cavity field.
    pub overlap: f64,
    /// Emitter-cavity coupling strength in s⁻¹ for the weak-coupling check.
    pub g_per_second: f64,
    /// Emitter detunings in cavity linewidths.
    pub detunings: Vec<f64>,
}

impl Default for PurcellConfig {
    fn default() -> Self {
        Self {
            q: 5000.0,
            v_mode: 0.5,
            wavelength_nm: 921.0,
            n: 3.6,
            f_pc: 0.2,
            overlap: 1.0,
            g_per_second: 0.0,
            detunings: (-10..=10).map(|k| 0.5 * k as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SingleRateConfig {
    pub position: [f64; 2],
    pub orientation: [f64; 3],
    /// Emission frequency a/λ.
    pub frequency: f64,
}

impl Default for SingleRateConfig {
    fn default() -> Self {
        Self {
            position: [0.0, 0.0],
            orientation: [1.0, 0.0, 0.0],
            frequency: DEFAULT_A_OVER_LAMBDA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub n_emitters: usize,
    /// Emission band as a/λ limits.
    pub frequency_band: [f64; 2],
    pub center: [f64; 2],
    pub radius: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        let e = EnsembleSettings::default();
        Self {
            n_emitters: e.n_emitters,
            frequency_band: e.frequency_band,
            center: e.center,
            radius: e.radius,
        }
    }
}

impl EnsembleConfig {
    pub fn settings(&self) -> EnsembleSettings {
        EnsembleSettings {
            n_emitters: self.n_emitters,
            frequency_band: self.frequency_band,
            center: self.center,
            radius: self.radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateMapConfig {
    /// In-plane offsets from the cavity center, units of a.
    pub offsets: Vec<[f64; 2]>,
    /// Detunings in cavity linewidths.
    pub detunings: Vec<f64>,
}

impl Default for RateMapConfig {
    fn default() -> Self {
        Self {
            offsets: [-0.5, -0.25, 0.0, 0.25, 0.5]
                .iter()
                .map(|&x| [x, 0.0])
                .collect(),
            detunings: vec![-20.0, -5.0, -2.0, -1.0, 0.0, 1.0, 2.0, 5.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandgapConfig {
    /// Frequency grid a/λ from `f_min` to `f_max` in `n_points` samples.
    pub f_min: f64,
    pub f_max: f64,
    pub n_points: usize,
    pub n_probe: usize,
    pub radius: f64,
}

impl Default for BandgapConfig {
    fn default() -> Self {
        Self {
            f_min: 0.2,
            f_max: 0.4,
            n_points: 41,
            n_probe: 8,
            radius: 1.2,
        }
    }
}

impl BandgapConfig {
    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.n_points;
        (0..n)
            .map(|k| self.f_min + (self.f_max - self.f_min) * k as f64 / (n - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhotonSource {
    /// Two-level emitter, at most one photon per pulse.
    SingleEmitter,
    /// Poisson-distributed photon number per pulse (control).
    Poissonian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhotonStatsConfig {
    pub source: PhotonSource,
    /// Mean photons per pulse for the Poissonian control.
    pub mean_photons: f64,
    pub lifetime_ps: f64,
    pub p_exc: f64,
    pub eta_det: f64,
    /// Background counts per second on each detector.
    pub background_rate: f64,
    pub period_ps: f64,
    pub n_pulses: u64,
    pub jitter_ps: f64,
    pub bin_width_ps: i64,
    pub window_ps: i64,
    pub pairing: Pairing,
    pub decay_bin_ps: f64,
    pub irf_fwhm_ps: f64,
    /// Bulk lifetime for the rate-enhancement ratio.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_lifetime_ps: Option<f64>,
    /// Analyze recorded `channel,t_ps` timestamps instead of simulating.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timestamps_file: Option<PathBuf>,
}

impl Default for PhotonStatsConfig {
    fn default() -> Self {
        Self {
            source: PhotonSource::SingleEmitter,
            mean_photons: 1.0,
            lifetime_ps: 650.0,
            p_exc: 1.0,
            eta_det: 0.05,
            background_rate: 0.0,
            period_ps: 13_000.0,
            n_pulses: 100_000,
            jitter_ps: 0.0,
            bin_width_ps: 100,
            window_ps: 52_000,
            pairing: Pairing::StartStop,
            decay_bin_ps: 50.0,
            irf_fwhm_ps: 50.0,
            reference_lifetime_ps: None,
            timestamps_file: None,
        }
    }
}

impl PhotonStatsConfig {
    pub fn model(&self) -> EmitterModel {
        EmitterModel {
            lifetime_ps: self.lifetime_ps,
            p_exc: self.p_exc,
            eta_det: self.eta_det,
            background_rate: self.background_rate,
        }
    }

    pub fn train(&self) -> PulseTrain {
        PulseTrain {
            period_ps: self.period_ps,
            n_pulses: self.n_pulses,
            jitter_ps: self.jitter_ps,
        }
    }

    pub fn fit_options(&self) -> LifetimeFitOptions {
        LifetimeFitOptions {
            irf_fwhm_ps: self.irf_fwhm_ps,
            period_ps: Some(self.period_ps),
        }
    }

    fn check(&self, errors: &mut Vec<String>) {
        let mut push = |m: String| errors.push(format!("photon_stats: {m}"));
        if let Err(e) = self.model().validate() {
            push(e.to_string());
        }
        if let Err(e) = self.train().validate() {
            push(e.to_string());
        }
        if self.n_pulses == 0 {
            push("n_pulses must be positive".into());
        }
        if !(self.mean_photons >= 0.0) {
            push(format!(
                "mean_photons must be non-negative, got {}",
                self.mean_photons
            ));
        }
        if self.bin_width_ps <= 0 || self.window_ps <= 0 || self.window_ps % self.bin_width_ps != 0
        {
            push(format!(
                "window_ps ({}) must be a positive integer multiple of bin_width_ps ({})",
                self.window_ps, self.bin_width_ps
            ));
        }
        if (self.window_ps as f64) < 3.5 * self.period_ps {
            push("window_ps must cover at least three side peaks (3.5 periods)".into());
        }
        if !(self.decay_bin_ps > 0.0 && self.decay_bin_ps < self.period_ps) {
            push("decay_bin_ps must be positive and shorter than the period".into());
        }
        if !(self.irf_fwhm_ps > 0.0) {
            push("irf_fwhm_ps must be positive".into());
        }
        if let Some(t) = self.reference_lifetime_ps {
            if !(t > 0.0) {
                push(format!("reference_lifetime_ps must be positive, got {t}"));
            }
        }
    }
}

/// Parsed configuration. After [`load`] every section used by the experiment
/// is present and all others are absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub experiment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Geometry table stored in a separate file; inlined by canonicalization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometryConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<UnitsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excitation: Option<ExcitationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resonance: Option<ResonanceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purcell: Option<PurcellConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single_rate: Option<SingleRateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_map: Option<RateMapConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandgap: Option<BandgapConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photon_stats: Option<PhotonStatsConfig>,
}

/// A validated, canonical configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig {
    pub kind: ExperimentKind,
    pub config: RunConfig,
    /// Canonical TOML text.
    pub canonical: String,
    /// sha256 over the canonical text without `output_dir`.
    pub hash: String,
    /// External files the run reads, resolved against the config location.
    pub inputs: Vec<PathBuf>,
}

impl ValidatedConfig {
    pub fn seed(&self) -> u64 {
        self.config.seed.unwrap_or(0)
    }

    pub fn geometry(&self) -> &GeometryConfig {
        self.config
            .geometry
            .as_ref()
            .expect("canonical config has geometry")
    }

    pub fn solver(&self) -> &SolverConfig {
        self.config
            .solver
            .as_ref()
            .expect("canonical config has solver")
    }

    pub fn domain(&self) -> DomainSpec {
        let d = self.config.domain.clone().unwrap_or_default();
        DomainSpec {
            padding: d.padding,
            cladding: d.cladding,
            pml_cells: self.solver().pml.thickness,
        }
    }

    pub fn units(&self) -> UnitSystem {
        self.config.units.clone().unwrap_or_default().system()
    }

    pub fn rate_settings(&self) -> RateSettings {
        let s = self.solver();
        let e = self.config.excitation.clone().unwrap_or_default();
        RateSettings {
            courant: s.courant,
            pml: s.pml(),
            pulse_center: e.pulse_center,
            pulse_bandwidth: e.pulse_bandwidth,
            flux_half_width: e.flux_half_width,
            max_time: e.max_time,
            decay_threshold: e.decay_threshold,
        }
    }

    pub fn cavity_settings(&self) -> CavitySettings {
        let s = self.solver();
        let r = self.config.resonance.clone().unwrap_or_default();
        CavitySettings {
            courant: s.courant,
            pml: s.pml(),
            pulse_center: r.pulse_center,
            pulse_bandwidth: r.pulse_bandwidth,
            band: r.band,
            settle_time: r.settle_time,
            ring_time: r.ring_time,
            dft_stride: r.dft_stride,
            source_offset: r.source_offset,
        }
    }
}

/// Overrides applied on top of the file before validation.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// Experiment named on the command line; must match the file if both are given.
    pub experiment: Option<ExperimentKind>,
    pub seed: Option<u64>,
}

fn parse_toml<T: serde::de::DeserializeOwned>(
    text: &str,
    origin: &str,
    errors: &mut Vec<String>,
) -> Option<T> {
    let de = toml::Deserializer::new(text);
    let mut unknown = Vec::new();
    match serde_ignored::deserialize(de, |path| unknown.push(path.to_string().replace(".?", ""))) {
        Ok(v) => {
            errors.extend(
                unknown
                    .into_iter()
                    .map(|p| format!("{origin}: unknown key `{p}`")),
            );
            Some(v)
        }
        Err(e) => {
            errors.push(format!("{origin}: {}", e.to_string().trim_end()));
            None
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        context: format!("cannot read {}", path.display()),
        source,
    })
}

/// Reads, validates and canonicalizes a config file, reporting every error at once.
pub fn load(path: &Path, overrides: &Overrides) -> Result<ValidatedConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    validate_str(&text, base, overrides)
}

/// Validates config text; relative file references resolve against `base`.
pub fn validate_str(
    text: &str,
    base: &Path,
    overrides: &Overrides,
) -> Result<ValidatedConfig, CliError> {
    let mut errors = Vec::new();
    let Some(mut cfg) = parse_toml::<RunConfig>(text, "config", &mut errors) else {
        return Err(CliError::Config(errors));
    };

    let kind = match (cfg.experiment.as_str(), overrides.experiment) {
        ("", None) => {
            errors.push("`experiment` is required".into());
            None
        }
        ("", Some(k)) => Some(k),
        (s, cli) => match s.parse::<ExperimentKind>() {
            Ok(k) => {
                if let Some(c) = cli.filter(|&c| c != k) {
                    errors.push(format!(
                        "config is a `{k}` experiment but the `{c}` subcommand was used"
                    ));
                }
                Some(k)
            }
            Err(e) => return Err(CliError::Usage(e)),
        },
    };
    if overrides.seed.is_some() {
        cfg.seed = overrides.seed;
    }

    if let Some(file) = cfg.geometry_file.take() {
        let resolved = base.join(&file);
        if cfg.geometry.is_some() {
            errors.push(
                "`geometry_file` and an inline [geometry] table are mutually exclusive".into(),
            );
        } else if !resolved.is_file() {
            errors.push(format!(
                "geometry_file `{}` does not exist",
                resolved.display()
            ));
        } else {
            let text = read(&resolved)?;
            cfg.geometry = parse_toml::<GeometryConfig>(
                &text,
                &format!("geometry_file `{}`", file.display()),
                &mut errors,
            );
        }
    }

    let Some(kind) = kind else {
        return Err(CliError::Config(errors));
    };
    cfg.experiment = kind.name().to_string();

    let mut inputs = Vec::new();
    check_sections(&mut cfg, kind, &mut errors);
    if kind.is_stochastic() && cfg.seed.is_none() {
        errors.push(format!("`seed` is required for the stochastic `{kind}` experiment (set it in the file or pass --seed)"));
    }
    if kind.uses_structure() {
        cfg.geometry.as_ref().expect("filled").check(&mut errors);
        let solver = cfg.solver.as_mut().expect("filled");
        solver.check(&mut errors);
        solver.resolution = Some(solver.resolution());
        let d = cfg.domain.as_ref().expect("filled");
        if !(d.padding >= 0.0 && d.cladding > 0.0) {
            errors.push("domain.padding must be non-negative and domain.cladding positive".into());
        }
        let u = cfg.units.as_ref().expect("filled");
        if !(u.lambda_cav_nm > 0.0 && u.a_over_lambda > 0.0) {
            errors.push("units.lambda_cav_nm and units.a_over_lambda must be positive".into());
        }
    }
    check_experiment(&cfg, kind, base, &mut errors, &mut inputs);

    if !errors.is_empty() {
        return Err(CliError::Config(errors));
    }
    let canonical = toml::to_string(&cfg)
        .map_err(|e| CliError::Config(vec![format!("cannot serialize config: {e}")]))?;
    let hash = {
        let mut hashed = cfg.clone();
        hashed.output_dir = None;
        let text = toml::to_string(&hashed).expect("serializable");
        hex::encode(Sha256::digest(text.as_bytes()))
    };
    Ok(ValidatedConfig {
        kind,
        config: cfg,
        canonical,
        hash,
        inputs,
    })
}

/// Fills the sections the experiment uses and rejects the others.
fn check_sections(cfg: &mut RunConfig, kind: ExperimentKind, errors: &mut Vec<String>) {
    let own = kind.sections();
    let structure = kind.uses_structure();
    macro_rules! section {
        ($field:ident, $used:expr) => {
            let name = stringify!($field);
            if $used {
                cfg.$field.get_or_insert_with(Default::default);
            } else if cfg.$field.is_some() {
                errors.push(format!(
                    "[{name}] does not apply to the `{kind}` experiment"
                ));
            }
        };
    }
    section!(geometry, structure);
    section!(solver, structure);
    section!(domain, structure);
    section!(units, structure);
    section!(excitation, own.contains(&"excitation"));
    section!(resonance, own.contains(&"resonance"));
    section!(purcell, own.contains(&"purcell"));
    section!(single_rate, own.contains(&"single_rate"));
    section!(ensemble, own.contains(&"ensemble"));
    section!(rate_map, own.contains(&"rate_map"));
    section!(bandgap, own.contains(&"bandgap"));
    section!(photon_stats, own.contains(&"photon_stats"));
}

fn check_experiment(
    cfg: &RunConfig,
    kind: ExperimentKind,
    base: &Path,
    errors: &mut Vec<String>,
    inputs: &mut Vec<PathBuf>,
) {
    if let Some(e) = &cfg.excitation {
        let s = RateSettings {
            pulse_center: e.pulse_center,
            pulse_bandwidth: e.pulse_bandwidth,
            flux_half_width: e.flux_half_width,
            max_time: e.max_time,
            decay_threshold: e.decay_threshold,
            ..Default::default()
        };
        if let Err(err) = s.validate() {
            errors.push(format!("excitation: {err}"));
        }
    }
    if let Some(r) = &cfg.resonance {
        if !(r.band[0] > 0.0 && r.band[1] > r.band[0]) {
            errors.push(format!(
                "resonance.band must be increasing positive frequencies, got {:?}",
                r.band
            ));
        }
        if !(r.pulse_center > 0.0
            && r.pulse_bandwidth > 0.0
            && r.ring_time > 0.0
            && r.settle_time >= 0.0)
        {
            errors.push("resonance: pulse, ring_time and settle_time must be positive".into());
        }
        if r.dft_stride == 0 {
            errors.push("resonance.dft_stride must be at least 1".into());
        }
        if !(r.collection_na > 0.0 && r.collection_na <= 1.0) {
            errors.push(format!(
                "resonance.collection_na must lie in (0, 1], got {}",
                r.collection_na
            ));
        }
    }
    let geometry_defect_free = cfg
        .geometry
        .as_ref()
        .is_none_or(|g| !g.cavity && g.defect.removed.is_empty() && g.defect.overrides.is_empty());
    match kind {
        ExperimentKind::Purcell => {
            let p = cfg.purcell.as_ref().expect("filled");
            if !(p.q > 0.0 && p.v_mode > 0.0 && p.wavelength_nm > 0.0 && p.n > 0.0) {
                errors.push("purcell: q, v_mode, wavelength_nm and n must be positive".into());
            }
            if !(0.0..=1.0).contains(&p.overlap) || !(p.f_pc >= 0.0) {
                errors.push("purcell: overlap must lie in [0, 1] and f_pc be non-negative".into());
            }
            if p.detunings.is_empty() {
                errors.push("purcell.detunings must not be empty".into());
            }
        }
        ExperimentKind::SingleRate => {
            let s = cfg.single_rate.as_ref().expect("filled");
            let norm = s.orientation.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                errors.push(format!(
                    "single_rate.orientation must be a unit vector, |u| = {norm}"
                ));
            }
            if !(s.frequency > 0.0) {
                errors.push("single_rate.frequency must be positive".into());
            }
        }
        ExperimentKind::Ensemble => {
            let e = cfg.ensemble.as_ref().expect("filled");
            if e.n_emitters == 0 {
                errors.push("ensemble.n_emitters must be at least 1".into());
            }
            if !(e.frequency_band[0] > 0.0 && e.frequency_band[1] >= e.frequency_band[0]) {
                errors.push(format!(
                    "ensemble.frequency_band must be increasing and positive, got {:?}",
                    e.frequency_band
                ));
            }
            if !(e.radius >= 0.0) {
                errors.push("ensemble.radius must be non-negative".into());
            }
        }
        ExperimentKind::RateMap => {
            let m = cfg.rate_map.as_ref().expect("filled");
            if m.offsets.is_empty() || m.detunings.is_empty() {
                errors.push("rate_map.offsets and rate_map.detunings must not be empty".into());
            }
        }
        ExperimentKind::Bandgap => {
            let b = cfg.bandgap.as_ref().expect("filled");
            if !(b.f_min > 0.0 && b.f_max > b.f_min && b.n_points >= 3) {
                errors.push("bandgap: need 0 < f_min < f_max and n_points >= 3".into());
            }
            if b.n_probe == 0 || !(b.radius >= 0.0) {
                errors.push("bandgap: n_probe must be positive and radius non-negative".into());
            }
            if !geometry_defect_free {
                errors.push(
                    "bandgap scans need a defect-free crystal (no cavity, no [geometry.defect])"
                        .into(),
                );
            }
        }
        ExperimentKind::PhotonStats => {
            let p = cfg.photon_stats.as_ref().expect("filled");
            p.check(errors);
            if let Some(f) = &p.timestamps_file {
                let resolved = base.join(f);
                if resolved.is_file() {
                    inputs.push(resolved);
                } else {
                    errors.push(format!(
                        "photon_stats.timestamps_file `{}` does not exist",
                        resolved.display()
                    ));
                }
            }
        }
        ExperimentKind::Resonance => {}
    }
}
