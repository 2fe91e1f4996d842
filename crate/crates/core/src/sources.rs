//! Dipole excitation and power instrumentation.
//!
//! Spontaneous-emission rate ratios are obtained from classical dipole
//! radiated power: the same dipole is run in the structure and in a
//! homogeneous reference and the powers are divided.

use std::f64::consts::PI;
use std::path::Path;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdtd::{
    advance, Component, FluxBox, Monitor, SimulationGrid, SourceTerm, SourceWork, Waveform,
};
use crate::units::UnitSystem;

/// Time envelope of a dipole.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Envelope {
    /// Gaussian pulse; `bandwidth` is the spectral standard deviation in c/a.
    Pulse { f0: f64, bandwidth: f64 },
    /// Continuous wave with a raised-cosine turn-on of length `ramp`.
    Continuous { f0: f64, ramp: f64 },
}

impl Envelope {
    pub fn center_frequency(&self) -> f64 {
        match *self {
            Envelope::Pulse { f0, .. } | Envelope::Continuous { f0, .. } => f0,
        }
    }

    pub fn max_frequency(&self) -> f64 {
        match *self {
            Envelope::Pulse { f0, bandwidth } => f0 + 3.0 * bandwidth,
            Envelope::Continuous { f0, .. } => f0,
        }
    }

    fn waveform(&self, dt: f64) -> Waveform {
        match *self {
            Envelope::Pulse { f0, bandwidth } => Waveform::gaussian(f0, bandwidth, dt),
            Envelope::Continuous { f0, ramp } => Waveform::Continuous { f0, ramp },
        }
    }
}

/// Point electric dipole, described by its current moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipoleSource {
    /// Position in units of a.
    pub position: [f64; 3],
    /// Unit orientation vector.
    pub orientation: [f64; 3],
    pub envelope: Envelope,
    /// Current-moment amplitude (current density times cell volume).
    pub amplitude: f64,
}

impl DipoleSource {
    pub fn new(
        position: [f64; 3],
        orientation: [f64; 3],
        envelope: Envelope,
        amplitude: f64,
    ) -> Result<Self> {
        let norm = orientation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() < 1e-9) {
            return Err(Error::InvalidInput(format!(
                "dipole orientation must be a unit vector, |u| = {norm}"
            )));
        }
        match envelope {
            Envelope::Pulse { f0, bandwidth } if !(bandwidth > 0.0 && f0 > 0.0) => {
                return Err(Error::InvalidInput(format!(
                    "pulse needs f0 > 0 and bandwidth > 0, got f0 = {f0}, bandwidth = {bandwidth}"
                )))
            }
            Envelope::Continuous { f0, .. } if !(f0 > 0.0) => {
                return Err(Error::InvalidInput(format!(
                    "CW frequency must be positive, got {f0}"
                )))
            }
            _ => {}
        }
        Ok(Self {
            position,
            orientation,
            envelope,
            amplitude,
        })
    }

    /// Unit-amplitude pulsed dipole.
    pub fn pulse(
        position: [f64; 3],
        orientation: [f64; 3],
        f0: f64,
        bandwidth: f64,
    ) -> Result<Self> {
        Self::new(
            position,
            orientation,
            Envelope::Pulse { f0, bandwidth },
            1.0,
        )
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    /// Requires at least 10 cells per wavelength in the densest material.
    pub fn check_resolvable(&self, grid: &SimulationGrid) -> Result<()> {
        let n_max = grid
            .eps_cells()
            .iter()
            .fold(1.0f64, |m, e| m.max(*e))
            .sqrt();
        let cells = 1.0 / (self.envelope.center_frequency() * n_max * grid.dx());
        if cells < 10.0 {
            return Err(Error::InvalidInput(format!(
                "source frequency {} resolved by only {cells:.1} cells per wavelength (need >= 10)",
                self.envelope.center_frequency()
            )));
        }
        Ok(())
    }

    /// Current terms, one per nonzero orientation component, each snapped to
    /// the nearest node of the matching field component.
    pub fn terms(&self, grid: &SimulationGrid) -> Result<Vec<SourceTerm>> {
        let dv = grid.layout().cell_volume();
        let waveform = self.envelope.waveform(grid.dt());
        let mut out = Vec::new();
        for axis in 0..3 {
            let u = self.orientation[axis];
            if u == 0.0 {
                continue;
            }
            let c = Component::electric(axis);
            if !grid.dimensionality().has(c) {
                return Err(Error::InvalidInput(format!(
                    "orientation has a {c} part, which this grid does not carry"
                )));
            }
            let index = grid.nearest_node(c, self.position).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "dipole position {:?} outside the grid",
                    self.position
                ))
            })?;
            out.push(SourceTerm {
                component: c,
                index,
                amplitude: self.amplitude * u / dv,
                waveform,
            });
        }
        Ok(out)
    }
}

/// Closed axis-aligned box (rectangle in 2D) for flux integration, in units of a.
///
/// Faces are snapped to the nearest lattice nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxSurface {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl FluxSurface {
    /// Cube (square in 2D) of half-width `half` centered on `center`.
    pub fn around(center: [f64; 3], half: f64) -> Self {
        Self {
            lo: center.map(|c| c - half),
            hi: center.map(|c| c + half),
        }
    }

    fn node_box(&self, grid: &SimulationGrid) -> ([usize; 3], [usize; 3]) {
        let l = grid.layout();
        let snap = |x: f64, a: usize| ((x - l.origin[a]) / l.dx).round().max(0.0) as usize;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..grid.dimensionality().ndim() {
            lo[a] = snap(self.lo[a], a);
            hi[a] = snap(self.hi[a], a);
        }
        (lo, hi)
    }

    pub(crate) fn monitor(&self, grid: &SimulationGrid) -> Result<FluxBox> {
        let (lo, hi) = self.node_box(grid);
        FluxBox::new("flux", grid, lo, hi)
    }
}

/// Stopping rule for a power run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerOptions {
    /// Hard cap on simulated time (units of a/c).
    pub max_time: f64,
    /// Stop once energy left in the flux box falls below this fraction of the work done.
    pub decay_threshold: f64,
    /// Frequencies (c/a) at which to report the spectral radiation resistance.
    pub frequencies: Vec<f64>,
    /// For CW runs: number of final periods over which power is averaged.
    pub cw_average_periods: f64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            max_time: 400.0,
            decay_threshold: 1e-4,
            frequencies: Vec::new(),
            cw_average_periods: 10.0,
        }
    }
}

/// Outcome of a radiated-power run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerFlag {
    Ok,
    /// More than 1 % of the emitted energy was still inside the box at the end.
    InsufficientDecay,
}

/// Radiation resistance at one frequency: time-averaged power per unit
/// squared current-moment amplitude, times two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralPower {
    pub frequency: f64,
    pub resistance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    /// Pulse: time-integrated outward flux. CW: cycle-averaged outward flux.
    pub power: f64,
    /// Same quantity from the source work −∫E·J.
    pub work: f64,
    /// Energy left in the box at the end over the work done.
    pub residual_fraction: f64,
    pub flag: PowerFlag,
    pub spectrum: Vec<SpectralPower>,
    pub steps: u64,
}

impl PowerResult {
    /// Relative disagreement between flux and work bookkeeping.
    pub fn flux_work_mismatch(&self) -> f64 {
        if self.work == 0.0 {
            return 0.0;
        }
        ((self.power - self.work) / self.work).abs()
    }

    /// Radiation resistance at the requested frequency closest to `f`.
    pub fn resistance_at(&self, f: f64) -> Option<f64> {
        self.spectrum
            .iter()
            .min_by(|a, b| (a.frequency - f).abs().total_cmp(&(b.frequency - f).abs()))
            .map(|s| s.resistance)
    }
}

/// Radiated power of `dipole` through `flux`, starting from the grid's current state.
///
/// Pulsed dipoles run until the boxed energy decays below the threshold or
/// `max_time` is reached; CW dipoles run to `max_time` and average the last
/// periods.
pub fn radiated_power(
    grid: &mut SimulationGrid,
    dipole: &DipoleSource,
    flux: &FluxSurface,
    opts: &PowerOptions,
) -> Result<PowerResult> {
    let mut flux_mon = flux.monitor(grid)?;
    if !flux_mon.contains_point(grid, dipole.position) {
        return Err(Error::Config(format!(
            "flux surface {:?}..{:?} does not enclose the dipole at {:?}",
            flux.lo, flux.hi, dipole.position
        )));
    }
    let terms = dipole.terms(grid)?;
    grid.check_sources(&terms)?;
    let mut work = SourceWork::new("work", terms.len(), &opts.frequencies);

    let dt = grid.dt();
    let max_steps = (opts.max_time / dt).ceil() as u64;
    let (lo, hi) = (flux_mon.lo, flux_mon.hi);
    let cell_hi = [
        hi[0],
        hi[1],
        if grid.dimensionality().ndim() == 2 {
            1
        } else {
            hi[2]
        },
    ];
    let off_time = dipole.envelope.waveform(dt).turn_off_time(dt);
    let check_every = ((1.0 / dipole.envelope.center_frequency()) / dt)
        .ceil()
        .max(1.0) as u64;
    let mut residual = 0.0;
    let mut steps = 0u64;
    while steps < max_steps {
        {
            let mut mons: [&mut dyn Monitor; 2] = [&mut flux_mon, &mut work];
            advance(grid, &terms, &mut mons);
        }
        steps += 1;
        if let Some(off) = off_time {
            if steps.is_multiple_of(check_every) && grid.time() > off {
                let boxed = grid.energy_in_box(lo, cell_hi);
                residual = if work.work() > 0.0 {
                    boxed / work.work()
                } else {
                    0.0
                };
                if residual < opts.decay_threshold {
                    break;
                }
            }
        }
    }

    let (power, work_total) = match dipole.envelope {
        Envelope::Pulse { .. } => {
            if off_time.is_some() {
                let boxed = grid.energy_in_box(lo, cell_hi);
                residual = if work.work() > 0.0 {
                    boxed / work.work()
                } else {
                    0.0
                };
            }
            (flux_mon.energy(), work.work())
        }
        Envelope::Continuous { f0, .. } => {
            let n_avg = ((opts.cw_average_periods / f0) / dt).round() as usize;
            let avg = |s: &[f64]| {
                let n = n_avg.min(s.len()).max(1);
                s[s.len() - n..].iter().sum::<f64>() / n as f64
            };
            residual = 0.0;
            (avg(flux_mon.power()), avg(&work.series()))
        }
    };

    let dv = grid.layout().cell_volume();
    let spectrum = opts
        .frequencies
        .iter()
        .enumerate()
        .map(|(fi, &f)| {
            let m2: f64 = (0..terms.len())
                .map(|s| (work.current_spectrum(s, fi) * dv).norm_sqr())
                .sum();
            let s = work.spectral_density(fi, dv);
            SpectralPower {
                frequency: f,
                resistance: if m2 > 0.0 { PI * s / m2 } else { 0.0 },
            }
        })
        .collect();

    let flag = if residual > 0.01 {
        PowerFlag::InsufficientDecay
    } else {
        PowerFlag::Ok
    };
    Ok(PowerResult {
        power: power.max(0.0),
        work: work_total,
        residual_fraction: residual,
        flag,
        spectrum,
        steps,
    })
}

/// Windowing applied before the transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumWindow {
    /// Length in samples of the half-Hann taper applied to the end of the series.
    pub taper: usize,
    /// Zero-padding factor (transform length is the next power of two above
    /// `pad_factor * len`).
    pub pad_factor: usize,
}

impl Default for SpectrumWindow {
    fn default() -> Self {
        Self {
            taper: 0,
            pad_factor: 4,
        }
    }
}

/// Magnitude spectrum on a uniform frequency grid (normalized units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<f64>,
}

impl Spectrum {
    pub fn df(&self) -> f64 {
        if self.frequencies.len() > 1 {
            self.frequencies[1] - self.frequencies[0]
        } else {
            0.0
        }
    }

    /// |X(f)|², the intensity spectrum.
    pub fn power(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a * a).collect()
    }

    pub fn wavelengths_nm(&self, units: &UnitSystem) -> Vec<f64> {
        self.frequencies
            .iter()
            .map(|&f| {
                if f > 0.0 {
                    units.frequency_to_nm(f)
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }

    /// Indices of local maxima whose amplitude exceeds `min_fraction` of the global maximum.
    pub fn peaks(&self, min_fraction: f64) -> Vec<usize> {
        let a = &self.amplitudes;
        let max = a.iter().cloned().fold(0.0, f64::max);
        (1..a.len().saturating_sub(1))
            .filter(|&i| a[i] > a[i - 1] && a[i] >= a[i + 1] && a[i] >= min_fraction * max)
            .collect()
    }

    /// Writes `frequency,amplitude` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = csv::Writer::from_path(path)?;
        out.write_record(["frequency", "amplitude"])?;
        for (f, a) in self.frequencies.iter().zip(&self.amplitudes) {
            out.serialize((f, a))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Windowed DFT magnitude of a uniformly sampled series, `|Σ x_n e^{iωt_n}|·dt`.
pub fn emission_spectrum(series: &[f64], dt: f64, window: SpectrumWindow) -> Result<Spectrum> {
    if series.is_empty() {
        return Err(Error::InvalidInput("empty time series".into()));
    }
    if series.len() < 2 * window.taper {
        return Err(Error::InvalidInput(format!(
            "series of {} samples is shorter than twice the taper ({})",
            series.len(),
            window.taper
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let n = series.len();
    let len = (n * window.pad_factor.max(1)).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); len];
    for (i, &x) in series.iter().enumerate() {
        let from_end = n - 1 - i;
        let w = if window.taper > 0 && from_end < window.taper {
            let u = from_end as f64 / window.taper as f64;
            0.5 * (1.0 - (PI * u).cos())
        } else {
            1.0
        };
        buf[i] = Complex::new(x * w, 0.0);
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    let half = len / 2 + 1;
    let df = 1.0 / (len as f64 * dt);
    Ok(Spectrum {
        frequencies: (0..half).map(|k| k as f64 * df).collect(),
        amplitudes: buf[..half].iter().map(|c| c.norm() * dt).collect(),
    })
}
