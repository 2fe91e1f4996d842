//! Cavity resonances and cavity-QED figures of merit.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdtd::{
    advance, Component, Dimensionality, FieldDft, GridLayout, Monitor, PmlSpec, PointProbe,
    SimulationGrid, Waveform,
};
use crate::fit::least_squares;
use crate::geometry::PhotonicStructure;
use crate::sources::DipoleSource;
use crate::units::{UnitSystem, SPEED_OF_LIGHT};

/// One decaying mode found in a ringdown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    /// Frequency in c/a.
    pub frequency: f64,
    pub q: f64,
    /// Field amplitude at the first sample.
    pub amplitude: f64,
    /// Field (amplitude) decay time in a/c.
    pub decay_time: f64,
    /// Residual energy of the fit over filtered signal energy.
    pub residual_fraction: f64,
}

impl Resonance {
    /// Wavelength in units of a.
    pub fn wavelength(&self) -> f64 {
        1.0 / self.frequency
    }
}

/// Output of [`find_resonances`]; `diagnostics` explains rejected candidates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResonanceSearch {
    pub modes: Vec<Resonance>,
    pub diagnostics: Vec<String>,
}

/// Candidates whose fit leaves more than this fraction of the signal are rejected.
pub const MAX_RESIDUAL_FRACTION: f64 = 0.5;

/// Minimum `γ·T` (envelope decay exponent over the record) for a mode to count as decaying.
pub const MIN_DECAY: f64 = 0.5;

/// Minimum ratio of a candidate peak to the median spectral magnitude in band.
pub const MIN_PROMINENCE: f64 = 8.0;

const MAX_CANDIDATES: usize = 6;

fn fft(buf: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::new();
    let plan = if inverse {
        planner.plan_fft_inverse(buf.len())
    } else {
        planner.plan_fft_forward(buf.len())
    };
    plan.process(buf);
}

/// Weighted straight-line fit, returns (intercept, slope).
fn line_fit(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((x, y), w)| w * (x - mx) * (y - my))
        .sum();
    let sxx: f64 = x.iter().zip(w).map(|(x, w)| w * (x - mx) * (x - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

/// Extracts decaying modes from a ringdown recorded after the source turned off.
///
/// Each spectral peak inside `band` (c/a) is isolated by a Gaussian bandpass,
/// then `A e^{-t/τ} cos(ωt + φ)` is fitted to the filtered late-time signal.
/// `Q = ωτ/2`. Modes are sorted by decreasing amplitude.
pub fn find_resonances(series: &[f64], dt: f64, band: (f64, f64)) -> Result<ResonanceSearch> {
    if series.len() < 32 {
        return Err(Error::InvalidInput(format!(
            "ringdown of {} samples is too short",
            series.len()
        )));
    }
    let nyquist = 0.5 / dt;
    if !(band.0 >= 0.0 && band.0 < band.1 && band.1 <= nyquist) {
        return Err(Error::InvalidInput(format!(
            "band {band:?} must be increasing and below the Nyquist frequency {nyquist}"
        )));
    }
    let n = series.len();
    let len = (2 * n).next_power_of_two();
    let df = 1.0 / (len as f64 * dt);
    let mut spec: Vec<Complex64> = series.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    spec.resize(len, Complex64::new(0.0, 0.0));
    fft(&mut spec, false);

    // peak detection on a Hann-windowed copy to suppress truncation sidelobes
    let mut hann: Vec<Complex64> = series
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            Complex64::new(
                x * (0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()),
                0.0,
            )
        })
        .collect();
    hann.resize(len, Complex64::new(0.0, 0.0));
    fft(&mut hann, false);
    let mag: Vec<f64> = hann.iter().map(|c| c.norm()).collect();

    let k_lo = ((band.0 / df).ceil() as usize).max(1);
    let k_hi = ((band.1 / df).floor() as usize).min(len / 2 - 1);
    let band_max = (k_lo..=k_hi).map(|k| mag[k]).fold(0.0, f64::max);
    let mut out = ResonanceSearch::default();
    if band_max == 0.0 {
        out.diagnostics.push("no spectral content in band".into());
        return Ok(out);
    }
    let mut sorted: Vec<f64> = mag[k_lo..=k_hi].to_vec();
    sorted.sort_by(f64::total_cmp);
    let floor = sorted[sorted.len() / 2];
    // a peak must dominate a neighbourhood of a few Hann main lobes and
    // stand well clear of the median spectral level
    let reach = 4 * len / n;
    let mut peaks: Vec<usize> = (k_lo..=k_hi)
        .filter(|&k| {
            let lo = k.saturating_sub(reach).max(1);
            let hi = (k + reach).min(len / 2);
            mag[k] >= 0.05 * band_max
                && mag[k] >= MIN_PROMINENCE * floor
                && (lo..=hi).all(|m| m == k || mag[m] < mag[k])
        })
        .collect();
    if peaks.is_empty() {
        out.diagnostics.push(format!(
            "no spectral peak rises {MIN_PROMINENCE}x above the median level in band"
        ));
        return Ok(out);
    }
    peaks.sort_by(|a, b| mag[*b].total_cmp(&mag[*a]));
    peaks.truncate(MAX_CANDIDATES);

    let band_width = band.1 - band.0;
    let t: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
    for &kp in &peaks {
        let fp = kp as f64 * df;
        let gap = peaks
            .iter()
            .filter(|&&k| k != kp)
            .map(|&k| (k as f64 - kp as f64).abs() * df)
            .fold(f64::INFINITY, f64::min);
        let min_half = (8.0 / (n as f64 * dt)).max(0.1 * band_width);
        let half = (0.5 * gap).min(0.25 * band_width).max(min_half);
        let sigma_f = 0.5 * half;
        let mut z: Vec<Complex64> = (0..len)
            .map(|k| {
                if k == 0 || k > len / 2 {
                    return Complex64::new(0.0, 0.0);
                }
                let f = k as f64 * df;
                let g = (-(f - fp).powi(2) / (2.0 * sigma_f * sigma_f)).exp();
                spec[k] * (2.0 * g / len as f64)
            })
            .collect();
        fft(&mut z, true);
        let sigma_t = 1.0 / (2.0 * PI * sigma_f);
        let edge = ((4.0 * sigma_t / dt).ceil() as usize).min(n / 4);
        let (i0, i1) = (edge, n - edge);
        if i1 <= i0 + 16 {
            out.diagnostics.push(format!(
                "peak at {fp:.5}: too few samples after filter trimming"
            ));
            continue;
        }
        let ts: Vec<f64> = t[i0..i1].iter().map(|&x| x - t[i0]).collect();
        let zs = &z[i0..i1];
        let y: Vec<f64> = zs.iter().map(|c| c.re).collect();
        let energy: f64 = y.iter().map(|v| v * v).sum();

        // starting point from the analytic signal
        let w: Vec<f64> = zs.iter().map(|c| c.norm_sqr()).collect();
        let logamp: Vec<f64> = zs.iter().map(|c| c.norm().max(1e-300).ln()).collect();
        let (ln_a, slope) = line_fit(&ts, &logamp, &w);
        let mut phase = Vec::with_capacity(zs.len());
        let mut acc = 0.0;
        let mut prev = zs[0].arg();
        for c in zs {
            let a = c.arg();
            let mut d = a - prev;
            d -= (2.0 * PI) * (d / (2.0 * PI)).round();
            acc += d;
            phase.push(zs[0].arg() + acc);
            prev = a;
        }
        let (phi0, omega0) = line_fit(&ts, &phase, &w);
        let p0 = [ln_a.exp(), (-slope).max(1e-6 * omega0.abs()), omega0, phi0];
        let fit = least_squares(
            |p, r| {
                for (i, (&t, &y)) in ts.iter().zip(&y).enumerate() {
                    r[i] = p[0] * (-p[1] * t).exp() * (p[2] * t + p[3]).cos() - y;
                }
            },
            &p0,
            ts.len(),
        );
        let fit = match fit {
            Ok(f) => f,
            Err(e) => {
                out.diagnostics.push(format!("peak at {fp:.5}: {e}"));
                continue;
            }
        };
        let [a, gamma, omega, _] = [fit.params[0], fit.params[1], fit.params[2], fit.params[3]];
        let resid = fit.cost / energy;
        if !(gamma > 0.0) || !(omega > 0.0) {
            out.diagnostics.push(format!(
                "peak at {fp:.5}: no decaying component (rate {gamma:.3e})"
            ));
            continue;
        }
        let visible = gamma * (n - 1) as f64 * dt;
        if visible < MIN_DECAY {
            out.diagnostics.push(format!(
                "peak at {fp:.5}: envelope decays by only {:.1}% over the record",
                100.0 * (1.0 - (-visible).exp())
            ));
            continue;
        }
        if resid > MAX_RESIDUAL_FRACTION {
            out.diagnostics.push(format!(
                "peak at {fp:.5}: fit residual {:.0}% of signal energy",
                100.0 * resid
            ));
            continue;
        }
        let tau = 1.0 / gamma;
        out.modes.push(Resonance {
            frequency: omega / (2.0 * PI),
            q: omega * tau / 2.0,
            amplitude: a.abs() * (gamma * t[i0]).exp(),
            decay_time: tau,
            residual_fraction: resid,
        });
    }
    out.modes
        .sort_by(|a, b| b.amplitude.total_cmp(&a.amplitude));
    // neighbouring candidates can converge onto the same mode
    let resolution = 2.0 / (n as f64 * dt);
    let mut kept: Vec<Resonance> = Vec::new();
    for m in out.modes.drain(..) {
        match kept
            .iter()
            .find(|k| (k.frequency - m.frequency).abs() < resolution.max(k.frequency / k.q))
        {
            Some(k) => out.diagnostics.push(format!(
                "candidate at {:.5} merged into mode at {:.5}",
                m.frequency, k.frequency
            )),
            None => kept.push(m),
        }
    }
    out.modes = kept;
    if out.modes.is_empty() && out.diagnostics.is_empty() {
        out.diagnostics.push("no spectral peaks in band".into());
    }
    Ok(out)
}

/// Intensity Lorentzian `A / (1 + 4Q²(x/x_c − 1)²) + B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    pub center: f64,
    pub q: f64,
    pub amplitude: f64,
    pub background: f64,
    /// One-sigma errors of (center, Q, amplitude, background) from the
    /// residual-scaled normal matrix.
    pub errors: [f64; 4],
    /// Root-mean-square residual.
    pub rms_residual: f64,
}

impl LorentzianFit {
    pub fn eval(&self, x: f64) -> f64 {
        lorentzian(&[self.center, self.q, self.amplitude, self.background], x)
    }
}

fn lorentzian(p: &[f64], x: f64) -> f64 {
    let d = x / p[0] - 1.0;
    p[2] / (1.0 + 4.0 * p[1] * p[1] * d * d) + p[3]
}

/// Least-squares Lorentzian fit; `x` may be wavelength or frequency.
pub fn fit_lorentzian(x: &[f64], y: &[f64]) -> Result<LorentzianFit> {
    if x.len() != y.len() || x.len() < 8 {
        return Err(Error::InvalidInput(
            "need at least 8 matching (x, y) samples".into(),
        ));
    }
    let (imax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(ymax > ymin) || imax == 0 || imax == y.len() - 1 {
        return Err(Error::FitFailed(
            "data are not peaked inside the window".into(),
        ));
    }
    let halfmax = 0.5 * (ymax + ymin);
    let left = (0..imax).rev().find(|&i| y[i] < halfmax).unwrap_or(0);
    let right = (imax..y.len())
        .find(|&i| y[i] < halfmax)
        .unwrap_or(y.len() - 1);
    let fwhm = (x[right] - x[left]).abs().max(1e-300);
    let xc = x[imax];
    let p0 = [xc, xc.abs() / fwhm, ymax - ymin, ymin];
    let fit = least_squares(
        |p, r| {
            for (i, (&x, &y)) in x.iter().zip(y).enumerate() {
                r[i] = lorentzian(p, x) - y;
            }
        },
        &p0,
        x.len(),
    )?;
    let p = &fit.params;
    if !(p[1].abs() > 0.0) {
        return Err(Error::FitFailed("fitted linewidth is degenerate".into()));
    }
    let dof = (x.len() - 4) as f64;
    let s2 = fit.cost / dof;
    let errors = parameter_errors(lorentzian, p, x, s2);
    Ok(LorentzianFit {
        center: p[0],
        q: p[1].abs(),
        amplitude: p[2],
        background: p[3],
        errors,
        rms_residual: (fit.cost / x.len() as f64).sqrt(),
    })
}

/// Standard errors from `s² (JᵀJ)⁻¹` with a central-difference Jacobian.
pub(crate) fn parameter_errors<const P: usize>(
    model: impl Fn(&[f64], f64) -> f64,
    p: &[f64],
    x: &[f64],
    s2: f64,
) -> [f64; P] {
    let mut jtj = nalgebra::DMatrix::<f64>::zeros(P, P);
    let mut q = p.to_vec();
    let grads: Vec<Vec<f64>> = (0..P)
        .map(|j| {
            let h = 1e-6 * p[j].abs().max(1e-9);
            x.iter()
                .map(|&xv| {
                    q[j] = p[j] + h;
                    let a = model(&q, xv);
                    q[j] = p[j] - h;
                    let b = model(&q, xv);
                    q[j] = p[j];
                    (a - b) / (2.0 * h)
                })
                .collect()
        })
        .collect();
    for a in 0..P {
        for b in 0..P {
            jtj[(a, b)] = grads[a].iter().zip(&grads[b]).map(|(u, v)| u * v).sum();
        }
    }
    let mut out = [f64::NAN; P];
    if let Some(inv) = jtj.try_inverse() {
        for (a, o) in out.iter_mut().enumerate() {
            *o = (s2 * inv[(a, a)]).max(0.0).sqrt();
        }
    }
    out
}

/// `(∫ ε|E|² dV) / max(ε|E|²)` in the grid's length units (area in 2D).
pub fn mode_volume(intensity: &[f64], eps: &[f64], cell_volume: f64) -> Result<f64> {
    if intensity.len() != eps.len() {
        return Err(Error::InvalidInput(format!(
            "field has {} cells but permittivity map has {}",
            intensity.len(),
            eps.len()
        )));
    }
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for (&e2, &eps) in intensity.iter().zip(eps) {
        let u = eps * e2;
        sum += u;
        max = max.max(u);
    }
    if max <= 0.0 {
        return Err(Error::InvalidInput("mode field is identically zero".into()));
    }
    Ok(sum * cell_volume / max)
}

/// Volume (area in 2D) expressed in units of `(λ/n)^ndim`.
pub fn volume_in_cubic_wavelengths(volume: f64, wavelength: f64, n: f64, ndim: usize) -> f64 {
    volume / (wavelength / n).powi(ndim as i32)
}

/// `(3 / 4π²) (λ/n)³ Q / V` with `V` in the same length units as `λ`.
pub fn purcell_factor(q: f64, v_mode: f64, wavelength: f64, n: f64) -> Result<f64> {
    if !(q > 0.0 && v_mode > 0.0 && wavelength > 0.0 && n > 0.0) {
        return Err(Error::InvalidInput(format!(
            "Purcell factor needs positive inputs (Q = {q}, V = {v_mode}, λ = {wavelength}, n = {n})"
        )));
    }
    Ok(3.0 / (4.0 * PI * PI) * (wavelength / n).powi(3) * q / v_mode)
}

/// Inputs of the single-mode rate-enhancement expression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnhancementInput {
    pub f_cav: f64,
    pub f_pc: f64,
    /// Orientation/position overlap `(E(r)·μ / |E_max||μ|)²`.
    pub overlap: f64,
    pub wavelength: f64,
    pub cavity_wavelength: f64,
    pub q: f64,
}

impl EnhancementInput {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::InvalidInput(format!(
                "overlap must lie in [0, 1], got {}",
                self.overlap
            )));
        }
        if !(self.f_pc >= 0.0 && self.f_cav >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "F_cav and F_PC must be non-negative, got {} and {}",
                self.f_cav, self.f_pc
            )));
        }
        if !(self.wavelength > 0.0 && self.cavity_wavelength > 0.0 && self.q > 0.0) {
            return Err(Error::InvalidInput(
                "wavelengths and Q must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `Γ/Γ₀ = F_cav · overlap / (1 + 4Q²(λ/λ_cav − 1)²) + F_PC`.
pub fn rate_enhancement(input: &EnhancementInput) -> Result<f64> {
    input.validate()?;
    let d = input.wavelength / input.cavity_wavelength - 1.0;
    Ok(input.f_cav * input.overlap / (1.0 + 4.0 * input.q * input.q * d * d) + input.f_pc)
}

/// Squared normalized projection of the local field onto the dipole axis.
pub fn orientation_overlap(e_local: [Complex64; 3], e_max: f64, dipole: [f64; 3]) -> Result<f64> {
    let mu = dipole.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(e_max > 0.0 && mu > 0.0) {
        return Err(Error::InvalidInput(
            "field maximum and dipole must be nonzero".into(),
        ));
    }
    let proj: Complex64 = e_local.iter().zip(&dipole).map(|(e, m)| e * *m).sum();
    Ok((proj.norm_sqr() / (e_max * e_max * mu * mu)).min(1.0))
}

/// Cavity energy decay rate `κ = πc/(λQ)`, in normalized units and s⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayRate {
    pub normalized: f64,
    pub per_second: f64,
}

pub fn cavity_decay_rate(wavelength: f64, q: f64, units: &UnitSystem) -> Result<DecayRate> {
    if !(wavelength > 0.0 && q > 0.0) {
        return Err(Error::InvalidInput(format!(
            "λ and Q must be positive, got {wavelength} and {q}"
        )));
    }
    let normalized = PI / (wavelength * q);
    Ok(DecayRate {
        normalized,
        per_second: PI * SPEED_OF_LIGHT / (units.wavelength_to_nm(wavelength) * 1e-9 * q),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingCheck {
    pub weak: bool,
    /// `κ/|g|`; infinite for `g = 0`.
    pub margin: f64,
}

/// Weak coupling holds when κ exceeds |g| (both in the same units).
pub fn weak_coupling_check(kappa: f64, g: f64) -> CouplingCheck {
    let margin = if g == 0.0 {
        f64::INFINITY
    } else {
        kappa / g.abs()
    };
    CouplingCheck {
        weak: kappa > g.abs(),
        margin,
    }
}

/// `|E|²` averaged onto cell centers from a frequency-domain field record,
/// plus the cell-centered complex components.
pub fn cell_field(
    dft: &FieldDft,
    f: usize,
    layout: &GridLayout,
    dim: Dimensionality,
) -> (Vec<[Complex64; 3]>, Vec<f64>) {
    let [nx, ny, nz] = layout.dims;
    let ndim = dim.ndim();
    let mut e = vec![[Complex64::new(0.0, 0.0); 3]; layout.n_cells()];
    for axis in 0..ndim {
        let data = dft.component(f, axis);
        let shape = dft.shape(axis);
        let others: Vec<usize> = (0..ndim).filter(|&a| a != axis).collect();
        let corners = 1usize << others.len();
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for c in 0..corners {
                        let mut idx = [i, j, k];
                        for (b, &o) in others.iter().enumerate() {
                            idx[o] += (c >> b) & 1;
                        }
                        acc += data[(idx[0] * shape[1] + idx[1]) * shape[2] + idx[2]];
                    }
                    e[layout.cell_index(i, j, k)][axis] = acc / corners as f64;
                }
            }
        }
    }
    let intensity = e
        .iter()
        .map(|v| v.iter().map(|c| c.norm_sqr()).sum())
        .collect();
    (e, intensity)
}

/// Fraction of upward power radiated into the cone `|k∥| ≤ NA·k`.
///
/// `ex`, `ey` are complex tangential field samples on an `nx × ny` plane
/// (row-major, x slowest) with spacing `dx`, in a medium of index `n`, at
/// frequency `f` (c/a). Power per plane wave is `k_z(|E_x|²+|E_y|²) + |k_x E_x + k_y E_y|²/k_z`.
pub fn collection_efficiency(
    ex: &[Complex64],
    ey: &[Complex64],
    dims: [usize; 2],
    dx: f64,
    f: f64,
    n: f64,
    na: f64,
) -> Result<f64> {
    let [nx, ny] = dims;
    if ex.len() != nx * ny || ey.len() != nx * ny {
        return Err(Error::InvalidInput(
            "plane field does not match its dimensions".into(),
        ));
    }
    if !(na > 0.0 && na <= n) {
        return Err(Error::InvalidInput(format!(
            "NA must lie in (0, n], got {na}"
        )));
    }
    let transform = |src: &[Complex64]| {
        let mut buf = src.to_vec();
        let mut planner = FftPlanner::new();
        let row = planner.plan_fft_forward(ny);
        for r in buf.chunks_mut(ny) {
            row.process(r);
        }
        let col = planner.plan_fft_forward(nx);
        let mut tmp = vec![Complex64::new(0.0, 0.0); nx];
        for j in 0..ny {
            for i in 0..nx {
                tmp[i] = buf[i * ny + j];
            }
            col.process(&mut tmp);
            for i in 0..nx {
                buf[i * ny + j] = tmp[i];
            }
        }
        buf
    };
    let fx = transform(ex);
    let fy = transform(ey);
    let k = 2.0 * PI * f * n;
    let kfreq = |m: usize, len: usize| {
        let s = if m <= len / 2 {
            m as f64
        } else {
            m as f64 - len as f64
        };
        2.0 * PI * s / (len as f64 * dx)
    };
    let (mut total, mut inside) = (0.0, 0.0);
    for i in 0..nx {
        let kx = kfreq(i, nx);
        for j in 0..ny {
            let ky = kfreq(j, ny);
            let kp2 = kx * kx + ky * ky;
            if kp2 >= k * k {
                continue;
            }
            let kz = (k * k - kp2).sqrt();
            let a = fx[i * ny + j];
            let b = fy[i * ny + j];
            let p = kz * (a.norm_sqr() + b.norm_sqr()) + (a * kx + b * ky).norm_sqr() / kz;
            total += p;
            if kp2.sqrt() <= na * 2.0 * PI * f {
                inside += p;
            }
        }
    }
    if total <= 0.0 {
        return Err(Error::InvalidInput(
            "no propagating upward power in the plane".into(),
        ));
    }
    Ok(inside / total)
}

/// Dominant in-plane field direction of a cavity mode at its center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarization {
    XDipole,
    YDipole,
}

impl Polarization {
    pub fn axis(self) -> usize {
        match self {
            Polarization::XDipole => 0,
            Polarization::YDipole => 1,
        }
    }

    pub fn unit_vector(self) -> [f64; 3] {
        let mut u = [0.0; 3];
        u[self.axis()] = 1.0;
        u
    }
}

/// Ringdown run settings for [`analyze_cavity`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavitySettings {
    pub courant: f64,
    pub pml: PmlSpec,
    pub pulse_center: f64,
    pub pulse_bandwidth: f64,
    /// Search band (c/a).
    pub band: [f64; 2],
    /// Delay after source turn-off before the ringdown is recorded.
    pub settle_time: f64,
    /// Length of the recorded ringdown.
    pub ring_time: f64,
    /// Field DFT accumulated every `dft_stride` steps.
    pub dft_stride: u64,
    /// Excitation point relative to the cavity center (units of a); slightly
    /// off-center so that modes odd about the center are also excited.
    pub source_offset: [f64; 3],
}

impl Default for CavitySettings {
    fn default() -> Self {
        Self {
            courant: 0.5,
            pml: PmlSpec::default(),
            pulse_center: 0.3,
            pulse_bandwidth: 0.05,
            band: [0.26, 0.34],
            settle_time: 60.0,
            ring_time: 1500.0,
            dft_stride: 4,
            source_offset: [0.0, 0.0, 0.0],
        }
    }
}

/// Cavity mode with its figures of merit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceMode {
    pub frequency: f64,
    /// Wavelength in units of a.
    pub wavelength: f64,
    pub wavelength_nm: f64,
    pub q: f64,
    /// Mode volume in units of `(λ/n)^d`.
    pub v_mode: f64,
    /// Mode volume in units of `a^d`.
    pub v_mode_normalized: f64,
    /// Mode volume in grid cells.
    pub v_mode_cells: f64,
    pub polarization: Polarization,
    pub kappa: DecayRate,
    /// Slab index used for the `(λ/n)` unit.
    pub index: f64,
    #[serde(skip)]
    pub field: Vec<[Complex64; 3]>,
    #[serde(skip)]
    pub layout: Option<GridLayout>,
}

impl ResonanceMode {
    /// Unit vector of the dominant field direction at the cavity center.
    pub fn polarization_vector(&self) -> [f64; 3] {
        self.polarization.unit_vector()
    }

    /// Purcell factor of this mode (3D expression; for 2D runs it uses the
    /// area in place of the volume).
    pub fn purcell_factor(&self) -> Result<f64> {
        purcell_factor(self.q, self.v_mode, 1.0, 1.0)
    }

    /// `|E|` at the cell holding `p`, normalized to the mode maximum of `√(ε|E|²)`.
    pub fn field_at(&self, p: [f64; 3]) -> Option<[Complex64; 3]> {
        let l = self.layout?;
        let c = l.cell_of(p)?;
        self.field.get(l.cell_index(c[0], c[1], c[2])).copied()
    }
}

/// Finds the strongest cavity resonance with a ringdown run, then records its
/// field profile with a second run and evaluates Q, V_mode and κ.
pub fn analyze_cavity(
    structure: &PhotonicStructure,
    polarization: Polarization,
    settings: &CavitySettings,
    units: &UnitSystem,
) -> Result<ResonanceMode> {
    let map = &structure.map;
    let dim = map.dim;
    let dipole = DipoleSource::pulse(
        settings.source_offset,
        polarization.unit_vector(),
        settings.pulse_center,
        settings.pulse_bandwidth,
    )?;
    let fresh = || {
        SimulationGrid::new(
            dim,
            map.layout,
            map.eps.clone(),
            settings.courant,
            Some(settings.pml),
        )
    };
    let mut grid = fresh()?;
    dipole.check_resolvable(&grid)?;
    let terms = dipole.terms(&grid)?;
    let dt = grid.dt();
    let off = Waveform::gaussian(settings.pulse_center, settings.pulse_bandwidth, dt)
        .turn_off_time(dt)
        .expect("pulses turn off");
    let start = ((off + settings.settle_time) / dt).ceil() as u64;
    let total = start + (settings.ring_time / dt).ceil() as u64;
    let c = Component::electric(polarization.axis());
    let mut probe = PointProbe::at("ringdown", &grid, c, settings.source_offset)?;
    for _ in 0..total {
        let mut mons: [&mut dyn Monitor; 1] = [&mut probe];
        advance(&mut grid, &terms, &mut mons);
    }
    let ring = &probe.values()[start as usize..];
    let search = find_resonances(ring, dt, (settings.band[0], settings.band[1]))?;
    let res = *search.modes.first().ok_or_else(|| {
        Error::FitFailed(format!(
            "no cavity resonance in band: {}",
            search.diagnostics.join("; ")
        ))
    })?;

    let mut grid = fresh()?;
    let mut dft =
        FieldDft::new("mode", &grid, &[res.frequency], settings.dft_stride).starting_at(start);
    for _ in 0..total {
        let mut mons: [&mut dyn Monitor; 1] = [&mut dft];
        advance(&mut grid, &terms, &mut mons);
    }
    let (mut field, intensity) = cell_field(&dft, 0, &map.layout, dim);
    let energy: Vec<f64> = intensity.iter().zip(&map.eps).map(|(i, e)| i * e).collect();
    let max = energy.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::FitFailed("mode field vanished".into()));
    }
    let scale = 1.0 / max.sqrt();
    for v in &mut field {
        for c in v.iter_mut() {
            *c *= scale;
        }
    }
    let cell = map.layout.cell_volume();
    let v_norm = mode_volume(&intensity, &map.eps, cell)?;
    let n = structure.spec.index(dim);
    let wavelength = 1.0 / res.frequency;
    // dominant component within half a period of the center
    let mut comp = [0.0f64; 2];
    let [nx, ny, nz] = map.layout.dims;
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let p = map.layout.cell_center(i, j, k);
                if p[0].hypot(p[1]) <= 0.5 && p[2].abs() <= 0.5 {
                    let f = field[map.layout.cell_index(i, j, k)];
                    comp[0] += f[0].norm_sqr();
                    comp[1] += f[1].norm_sqr();
                }
            }
        }
    }
    let polarization = if comp[0] >= comp[1] {
        Polarization::XDipole
    } else {
        Polarization::YDipole
    };
    Ok(ResonanceMode {
        frequency: res.frequency,
        wavelength,
        wavelength_nm: units.wavelength_to_nm(wavelength),
        q: res.q,
        v_mode: volume_in_cubic_wavelengths(v_norm, wavelength, n, dim.ndim()),
        v_mode_normalized: v_norm,
        v_mode_cells: v_norm / cell,
        polarization,
        kappa: cavity_decay_rate(wavelength, res.q, units)?,
        index: n,
        field,
        layout: Some(map.layout),
    })
}

/// Collection efficiency of a 3D mode into a lens of numerical aperture `na`,
/// from the field on the cell layer `height` above the slab top surface.
pub fn mode_collection_efficiency(
    mode: &ResonanceMode,
    structure: &PhotonicStructure,
    height: f64,
    pml_cells: usize,
    na: f64,
) -> Result<f64> {
    let layout = mode
        .layout
        .ok_or_else(|| Error::InvalidInput("mode carries no field layout".into()))?;
    if structure.map.dim != Dimensionality::ThreeD {
        return Err(Error::InvalidInput(
            "collection efficiency needs a 3D mode".into(),
        ));
    }
    let z = 0.5 * structure.spec.slab.d + height;
    let [nx, ny, nz] = layout.dims;
    let k = ((z - layout.origin[2]) / layout.dx).floor();
    if k < pml_cells as f64 || k >= (nz - pml_cells) as f64 {
        return Err(Error::MonitorOutOfBounds {
            name: "collection plane".into(),
            reason: format!("z = {z} lies in the absorbing layer"),
        });
    }
    let k = k as usize;
    let mut ex = Vec::with_capacity(nx * ny);
    let mut ey = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let f = mode.field[layout.cell_index(i, j, k)];
            ex.push(f[0]);
            ey.push(f[1]);
        }
    }
    collection_efficiency(&ex, &ey, [nx, ny], layout.dx, mode.frequency, 1.0, na)
}
