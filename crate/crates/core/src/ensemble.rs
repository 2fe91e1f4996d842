//! Spontaneous-emission rate modification of single emitters and ensembles.
//!
//! Every rate is a ratio of spectral radiation resistances at the emitter
//! frequency: one broadband dipole run in the structure, one in a homogeneous
//! medium of the slab index, with identical grid, dipole and absorber.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdtd::{Dimensionality, PmlSpec, SimulationGrid};
use crate::geometry::{MaterialMap, PhotonicStructure};
use crate::sources::{
    radiated_power, DipoleSource, FluxSurface, PowerFlag, PowerOptions, PowerResult,
};

/// Point emitter: position (units of a), unit dipole orientation and
/// emission frequency (c/a).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterSpec {
    pub position: [f64; 3],
    pub orientation: [f64; 3],
    pub frequency: f64,
}

impl EmitterSpec {
    /// Emitter detuned by `detuning` cavity linewidths: `λ = λ_c (1 + detuning/Q)`.
    pub fn detuned(
        position: [f64; 3],
        orientation: [f64; 3],
        cavity_wavelength: f64,
        q: f64,
        detuning: f64,
    ) -> Self {
        Self {
            position,
            orientation,
            frequency: 1.0 / (cavity_wavelength * (1.0 + detuning / q)),
        }
    }

    /// Wavelength in units of a.
    pub fn wavelength(&self) -> f64 {
        1.0 / self.frequency
    }

    /// `(λ − λ_c)/Δλ` with `Δλ = λ_c/Q`.
    pub fn detuning(&self, cavity_wavelength: f64, q: f64) -> f64 {
        (self.wavelength() - cavity_wavelength) / (cavity_wavelength / q)
    }

    pub fn validate(&self, structure: &PhotonicStructure) -> Result<()> {
        let norm = self.orientation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "emitter orientation must be a unit vector, |u| = {norm}"
            )));
        }
        if !(self.frequency > 0.0) {
            return Err(Error::InvalidInput(format!(
                "emitter frequency must be positive, got {}",
                self.frequency
            )));
        }
        if !structure.can_host(self.position) {
            return Err(Error::InvalidInput(format!(
                "emitter at {:?} is outside the crystal or inside an air hole",
                self.position
            )));
        }
        Ok(())
    }
}

/// Solver and excitation settings shared by all rate runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSettings {
    pub courant: f64,
    pub pml: PmlSpec,
    /// Center frequency of the broadband pulse (c/a).
    pub pulse_center: f64,
    /// Spectral standard deviation of the pulse (c/a).
    pub pulse_bandwidth: f64,
    /// Half-width of the flux box around the dipole (units of a).
    pub flux_half_width: f64,
    pub max_time: f64,
    pub decay_threshold: f64,
}

impl Default for RateSettings {
    fn default() -> Self {
        Self {
            courant: 0.5,
            pml: PmlSpec::default(),
            pulse_center: 0.3,
            pulse_bandwidth: 0.05,
            flux_half_width: 0.3,
            max_time: 3000.0,
            decay_threshold: 1e-6,
        }
    }
}

impl RateSettings {
    pub fn validate(&self) -> Result<()> {
        self.pml.validate()?;
        if !(self.pulse_center > 0.0 && self.pulse_bandwidth > 0.0) {
            return Err(Error::Config(
                "pulse center and bandwidth must be positive".into(),
            ));
        }
        if !(self.flux_half_width > 0.0 && self.max_time > 0.0 && self.decay_threshold > 0.0) {
            return Err(Error::Config(
                "flux_half_width, max_time and decay_threshold must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Ratio spectrum at one position and orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSpectrum {
    pub frequencies: Vec<f64>,
    /// Γ/Γ₀ per frequency.
    pub ratios: Vec<f64>,
    /// Spectral radiation resistance in the structure.
    pub p_pc: Vec<f64>,
    /// Spectral radiation resistance in the homogeneous reference.
    pub p_bulk: Vec<f64>,
    pub flag: PowerFlag,
}

fn run_power(
    map: &MaterialMap,
    eps: Vec<f64>,
    dipole: &DipoleSource,
    freqs: &[f64],
    settings: &RateSettings,
) -> Result<PowerResult> {
    let mut grid = SimulationGrid::new(
        map.dim,
        map.layout,
        eps,
        settings.courant,
        Some(settings.pml),
    )?;
    dipole.check_resolvable(&grid)?;
    let mut center = dipole.position;
    if map.dim == Dimensionality::TwoDTe {
        center[2] = 0.0;
    }
    let flux = FluxSurface::around(center, settings.flux_half_width);
    let opts = PowerOptions {
        max_time: settings.max_time,
        decay_threshold: settings.decay_threshold,
        frequencies: freqs.to_vec(),
        ..Default::default()
    };
    radiated_power(&mut grid, dipole, &flux, &opts)
}

/// Γ/Γ₀ at every frequency in `freqs` for one dipole position and orientation.
pub fn rate_spectrum(
    structure: &PhotonicStructure,
    position: [f64; 3],
    orientation: [f64; 3],
    freqs: &[f64],
    settings: &RateSettings,
) -> Result<RateSpectrum> {
    settings.validate()?;
    if freqs.is_empty() {
        return Err(Error::InvalidInput("no frequencies requested".into()));
    }
    let dipole = DipoleSource::pulse(
        position,
        orientation,
        settings.pulse_center,
        settings.pulse_bandwidth,
    )?;
    let map = &structure.map;
    let pc = run_power(map, map.eps.clone(), &dipole, freqs, settings)?;
    let bulk_eps = vec![structure.spec.index(map.dim).powi(2); map.eps.len()];
    let bulk = run_power(map, bulk_eps, &dipole, freqs, settings)?;
    let p_pc: Vec<f64> = pc.spectrum.iter().map(|s| s.resistance).collect();
    let p_bulk: Vec<f64> = bulk.spectrum.iter().map(|s| s.resistance).collect();
    let ratios = p_pc.iter().zip(&p_bulk).map(|(a, b)| a / b).collect();
    let flag = if pc.flag == PowerFlag::Ok && bulk.flag == PowerFlag::Ok {
        PowerFlag::Ok
    } else {
        PowerFlag::InsufficientDecay
    };
    Ok(RateSpectrum {
        frequencies: freqs.to_vec(),
        ratios,
        p_pc,
        p_bulk,
        flag,
    })
}

/// Rate modification of one emitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub emitter: EmitterSpec,
    /// Γ/Γ₀ = p_pc / p_bulk.
    pub ratio: f64,
    pub p_pc: f64,
    pub p_bulk: f64,
    pub flag: PowerFlag,
    pub resolution: f64,
}

pub fn single_emitter_rate(
    structure: &PhotonicStructure,
    emitter: &EmitterSpec,
    settings: &RateSettings,
) -> Result<RateResult> {
    emitter.validate(structure)?;
    let s = rate_spectrum(
        structure,
        emitter.position,
        emitter.orientation,
        &[emitter.frequency],
        settings,
    )?;
    Ok(RateResult {
        emitter: *emitter,
        ratio: s.ratios[0],
        p_pc: s.p_pc[0],
        p_bulk: s.p_bulk[0],
        flag: s.flag,
        resolution: structure.map.provenance.resolution,
    })
}

/// Random emitters over a focal disc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSettings {
    pub n_emitters: usize,
    /// Emission frequencies (c/a); wavelengths are drawn uniformly between
    /// the corresponding wavelength limits.
    pub frequency_band: [f64; 2],
    /// Center of the sampling disc (units of a).
    pub center: [f64; 2],
    /// Radius of the sampling disc (units of a).
    pub radius: f64,
}

impl Default for EnsembleSettings {
    fn default() -> Self {
        Self {
            n_emitters: 200,
            frequency_band: [0.265, 0.285],
            center: [0.0, 0.0],
            radius: 1.2,
        }
    }
}

/// Uniform random unit vector: in-plane for 2D-TE, over the sphere in 3D.
fn random_orientation(rng: &mut ChaCha8Rng, dim: Dimensionality) -> [f64; 3] {
    match dim {
        Dimensionality::TwoDTe => {
            let phi = rng.gen::<f64>() * 2.0 * PI;
            [phi.cos(), phi.sin(), 0.0]
        }
        Dimensionality::ThreeD => UnitSphere.sample(rng),
    }
}

/// Draws emitter specs deterministically from `seed`, rejecting air-hole positions.
pub fn plan_ensemble(
    structure: &PhotonicStructure,
    settings: &EnsembleSettings,
    seed: u64,
) -> Result<Vec<EmitterSpec>> {
    let [f_lo, f_hi] = settings.frequency_band;
    if settings.n_emitters == 0 {
        return Err(Error::InvalidInput(
            "ensemble needs at least one emitter".into(),
        ));
    }
    if !(f_lo > 0.0 && f_hi >= f_lo) {
        return Err(Error::InvalidInput(format!(
            "invalid frequency band {:?}",
            settings.frequency_band
        )));
    }
    if !(settings.radius >= 0.0) {
        return Err(Error::InvalidInput(
            "sampling radius must be non-negative".into(),
        ));
    }
    let (l_lo, l_hi) = (1.0 / f_hi, 1.0 / f_lo);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = structure.dim();
    let mut out = Vec::with_capacity(settings.n_emitters);
    let max_attempts = 1000 * settings.n_emitters;
    let mut attempts = 0;
    while out.len() < settings.n_emitters {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidInput(
                "could not place emitters in dielectric inside the sampling disc".into(),
            ));
        }
        let r = settings.radius * rng.gen::<f64>().sqrt();
        let phi = rng.gen::<f64>() * 2.0 * PI;
        let position = [
            settings.center[0] + r * phi.cos(),
            settings.center[1] + r * phi.sin(),
            0.0,
        ];
        let orientation = random_orientation(&mut rng, dim);
        let wavelength = l_lo + (l_hi - l_lo) * rng.gen::<f64>();
        if !structure.can_host(position) {
            continue;
        }
        out.push(EmitterSpec {
            position,
            orientation,
            frequency: 1.0 / wavelength,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub mean: f64,
    /// Sample variance (zero for a single emitter).
    pub variance: f64,
    pub emitters: Vec<RateResult>,
    /// More than 10 % of emitters carry a power-run warning.
    pub flagged: bool,
}

impl EnsembleResult {
    pub fn from_results(emitters: Vec<RateResult>) -> Result<Self> {
        if emitters.is_empty() {
            return Err(Error::InvalidInput("empty ensemble".into()));
        }
        let n = emitters.len() as f64;
        let mean = emitters.iter().map(|r| r.ratio).sum::<f64>() / n;
        let variance = if emitters.len() > 1 {
            emitters
                .iter()
                .map(|r| (r.ratio - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0)
        } else {
            0.0
        };
        let warned = emitters.iter().filter(|r| r.flag != PowerFlag::Ok).count();
        Ok(Self {
            mean,
            variance,
            flagged: warned as f64 > 0.1 * n,
            emitters,
        })
    }
}

/// Runs every emitter job; results are ordered by job index regardless of
/// scheduling.
pub fn run_ensemble(
    structure: &PhotonicStructure,
    jobs: &[EmitterSpec],
    settings: &RateSettings,
) -> Result<EnsembleResult> {
    let results = jobs
        .par_iter()
        .map(|e| single_emitter_rate(structure, e, settings))
        .collect::<Result<Vec<_>>>()?;
    EnsembleResult::from_results(results)
}

/// Plans and runs a seeded ensemble.
pub fn ensemble_rate_suppression(
    structure: &PhotonicStructure,
    ensemble: &EnsembleSettings,
    seed: u64,
    settings: &RateSettings,
) -> Result<EnsembleResult> {
    let jobs = plan_ensemble(structure, ensemble, seed)?;
    run_ensemble(structure, &jobs, settings)
}

/// Γ/Γ₀ over in-plane offsets from the cavity center and detunings in linewidths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateMap {
    pub offsets: Vec<[f64; 2]>,
    pub detunings: Vec<f64>,
    /// `values[offset][detuning]`; `None` where the offset falls in an air hole.
    pub values: Vec<Vec<Option<f64>>>,
    pub flags: Vec<PowerFlag>,
}

impl RateMap {
    pub fn get(&self, offset: usize, detuning: usize) -> Option<f64> {
        self.values[offset][detuning]
    }

    /// Largest entry with its (offset, detuning) indices.
    pub fn argmax(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if let Some(v) = *v {
                    if best.is_none_or(|b| v > b.2) {
                        best = Some((i, j, v));
                    }
                }
            }
        }
        best
    }
}

/// Cavity reference for detuning axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityReference {
    /// Wavelength in units of a.
    pub wavelength: f64,
    pub q: f64,
    /// Unit vector of the cavity field at its antinode; map emitters are aligned with it.
    pub polarization: [f64; 3],
}

/// One structure run per offset; each run yields the whole detuning axis.
pub fn rate_map(
    structure: &PhotonicStructure,
    cavity: &CavityReference,
    offsets: &[[f64; 2]],
    detunings: &[f64],
    settings: &RateSettings,
) -> Result<RateMap> {
    if offsets.is_empty() || detunings.is_empty() {
        return Err(Error::InvalidInput(
            "rate map needs at least one offset and one detuning".into(),
        ));
    }
    if !(cavity.wavelength > 0.0 && cavity.q > 0.0) {
        return Err(Error::InvalidInput(
            "cavity wavelength and Q must be positive".into(),
        ));
    }
    let freqs: Vec<f64> = detunings
        .iter()
        .map(|&d| {
            EmitterSpec::detuned(
                [0.0; 3],
                cavity.polarization,
                cavity.wavelength,
                cavity.q,
                d,
            )
            .frequency
        })
        .collect();
    let rows = offsets
        .par_iter()
        .map(|o| {
            let p = [o[0], o[1], 0.0];
            if !structure.can_host(p) {
                return Ok((vec![None; freqs.len()], PowerFlag::Ok));
            }
            let s = rate_spectrum(structure, p, cavity.polarization, &freqs, settings)?;
            Ok((s.ratios.into_iter().map(Some).collect(), s.flag))
        })
        .collect::<Result<Vec<_>>>()?;
    let (values, flags) = rows.into_iter().unzip();
    Ok(RateMap {
        offsets: offsets.to_vec(),
        detunings: detunings.to_vec(),
        values,
        flags,
    })
}

/// Probe-averaged Γ/Γ₀ spectrum of a structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuppressionSpectrum {
    pub frequencies: Vec<f64>,
    pub mean_ratio: Vec<f64>,
    pub probes: Vec<EmitterSpec>,
}

/// Contiguous sub-threshold frequency range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    /// Lower and upper edge frequencies (c/a).
    pub f_lo: f64,
    pub f_hi: f64,
}

impl Gap {
    pub fn contains(&self, f: f64) -> bool {
        (self.f_lo..=self.f_hi).contains(&f)
    }
}

/// Mean ratio at or below which a frequency counts as inside the gap.
pub const GAP_THRESHOLD: f64 = 0.5;

/// Averages rate spectra over `n_probe` seeded probe dipoles within `radius` of the center.
pub fn suppression_spectrum(
    structure: &PhotonicStructure,
    freqs: &[f64],
    n_probe: usize,
    radius: f64,
    seed: u64,
    settings: &RateSettings,
) -> Result<SuppressionSpectrum> {
    let plan = EnsembleSettings {
        n_emitters: n_probe,
        frequency_band: [
            freqs[0].min(freqs[freqs.len() - 1]),
            freqs[0].max(freqs[freqs.len() - 1]),
        ],
        center: [0.0, 0.0],
        radius,
    };
    let probes = plan_ensemble(structure, &plan, seed)?;
    let spectra = probes
        .par_iter()
        .map(|p| rate_spectrum(structure, p.position, p.orientation, freqs, settings))
        .collect::<Result<Vec<_>>>()?;
    let mean_ratio = (0..freqs.len())
        .map(|k| spectra.iter().map(|s| s.ratios[k]).sum::<f64>() / spectra.len() as f64)
        .collect();
    Ok(SuppressionSpectrum {
        frequencies: freqs.to_vec(),
        mean_ratio,
        probes,
    })
}

/// Widest contiguous run of frequencies with mean ratio below `threshold`.
///
/// Edges are interpolated linearly between the bracketing samples.
pub fn detect_gap(spectrum: &SuppressionSpectrum, threshold: f64) -> Result<Gap> {
    let f = &spectrum.frequencies;
    let m = &spectrum.mean_ratio;
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < f.len() {
        if m[i] < threshold {
            let start = i;
            while i + 1 < f.len() && m[i + 1] < threshold {
                i += 1;
            }
            if best.is_none_or(|(a, b)| f[i] - f[start] > f[b] - f[a]) {
                best = Some((start, i));
            }
        }
        i += 1;
    }
    let (a, b) = best.ok_or(Error::NoGap { threshold })?;
    let cross = |i: usize, j: usize| f[i] + (threshold - m[i]) / (m[j] - m[i]) * (f[j] - f[i]);
    let f_lo = if a > 0 { cross(a - 1, a) } else { f[a] };
    let f_hi = if b + 1 < f.len() {
        cross(b, b + 1)
    } else {
        f[b]
    };
    Ok(Gap { f_lo, f_hi })
}

/// Suppression spectrum plus the detected gap.
pub fn bandgap_scan(
    structure: &PhotonicStructure,
    freqs: &[f64],
    n_probe: usize,
    radius: f64,
    seed: u64,
    settings: &RateSettings,
) -> Result<(SuppressionSpectrum, Gap)> {
    if !structure.spec.defect.is_empty() {
        return Err(Error::InvalidInput(
            "band-gap scans need a defect-free crystal".into(),
        ));
    }
    let spectrum = suppression_spectrum(structure, freqs, n_probe, radius, seed, settings)?;
    let gap = detect_gap(&spectrum, GAP_THRESHOLD)?;
    Ok((spectrum, gap))
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::geometry::{DomainSpec, PhotonicCrystalSpec};

    fn structure() -> PhotonicStructure {
        PhotonicStructure::build(
            PhotonicCrystalSpec::default(),
            Dimensionality::TwoDTe,
            12.0,
            &DomainSpec::default(),
        )
        .unwrap()
    }

    #[test]
    fn detuning_round_trip() {
        let e = EmitterSpec::detuned([0.0; 3], [1.0, 0.0, 0.0], 3.3, 700.0, 2.5);
        assert!((e.detuning(3.3, 700.0) - 2.5).abs() < 1e-9);
    }

    #[test]
    fn plan_is_seeded_and_avoids_holes() {
        let s = structure();
        let plan = EnsembleSettings {
            n_emitters: 40,
            ..Default::default()
        };
        let a = plan_ensemble(&s, &plan, 9).unwrap();
        let b = plan_ensemble(&s, &plan, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, plan_ensemble(&s, &plan, 10).unwrap());
        for e in &a {
            assert!(s.eps_at(e.position).unwrap() > 1.0);
            let r = (e.position[0].powi(2) + e.position[1].powi(2)).sqrt();
            assert!(r <= 1.2 + 1e-12);
            assert!(e.frequency >= 0.265 - 1e-12 && e.frequency <= 0.285 + 1e-12);
            assert!((e.orientation[0].hypot(e.orientation[1]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn emitter_in_hole_is_rejected() {
        let s = structure();
        let e = EmitterSpec {
            position: [1.0, 0.0, 0.0],
            orientation: [1.0, 0.0, 0.0],
            frequency: 0.27,
        };
        assert!(e.validate(&s).is_err());
    }

    #[test]
    fn gap_detection_picks_widest_run() {
        let spectrum = SuppressionSpectrum {
            frequencies: (0..10).map(|i| i as f64).collect(),
            mean_ratio: vec![1.0, 0.4, 1.0, 0.9, 0.2, 0.1, 0.1, 0.3, 0.9, 1.0],
            probes: Vec::new(),
        };
        let g = detect_gap(&spectrum, 0.5).unwrap();
        assert!((g.f_lo - (3.0 + 0.4 / 0.7)).abs() < 1e-12);
        assert!((g.f_hi - (7.0 + 0.2 / 0.6)).abs() < 1e-12);
        let flat = SuppressionSpectrum {
            mean_ratio: vec![1.0; 10],
            ..spectrum
        };
        assert!(matches!(detect_gap(&flat, 0.5), Err(Error::NoGap { .. })));
    }

    #[test]
    fn single_emitter_ensemble_has_zero_variance() {
        let e = EmitterSpec {
            position: [0.0; 3],
            orientation: [1.0, 0.0, 0.0],
            frequency: 0.3,
        };
        let r = RateResult {
            emitter: e,
            ratio: 0.37,
            p_pc: 0.37,
            p_bulk: 1.0,
            flag: PowerFlag::Ok,
            resolution: 16.0,
        };
        let ens = EnsembleResult::from_results(vec![r]).unwrap();
        assert_eq!(ens.mean, 0.37);
        assert_eq!(ens.variance, 0.0);
        assert!(!ens.flagged);
    }
}
