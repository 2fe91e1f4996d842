//! Pulsed single-emitter photon streams, HBT coincidence analysis and
//! lifetime fitting.
//!
//! Times are integer picoseconds.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::fit::least_squares;

pub use crate::modal::{fit_lorentzian, LorentzianFit};

/// Two-level emitter under pulsed excitation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterModel {
    pub lifetime_ps: f64,
    /// Probability that a pulse excites the emitter.
    pub p_exc: f64,
    /// Probability that an emitted photon is collected and detected.
    pub eta_det: f64,
    /// Poissonian background on each detector, counts per second.
    pub background_rate: f64,
}

impl EmitterModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.lifetime_ps > 0.0) {
            return Err(Error::InvalidInput(format!(
                "lifetime must be positive, got {}",
                self.lifetime_ps
            )));
        }
        for (name, p) in [("p_exc", self.p_exc), ("eta_det", self.eta_det)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidInput(format!(
                    "{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        if !(self.background_rate >= 0.0) {
            return Err(Error::InvalidInput(
                "background rate must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Fraction of detected counts that come from the emitter, per channel,
    /// for a given repetition period.
    pub fn signal_fraction(&self, period_ps: f64) -> f64 {
        let s = 0.5 * self.p_exc * self.eta_det;
        let b = self.background_rate * period_ps * 1e-12;
        if s + b == 0.0 {
            0.0
        } else {
            s / (s + b)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseTrain {
    pub period_ps: f64,
    pub n_pulses: u64,
    /// Standard deviation of the pulse arrival time.
    #[serde(default)]
    pub jitter_ps: f64,
}

impl PulseTrain {
    pub fn new(n_pulses: u64) -> Self {
        Self {
            period_ps: 13_000.0,
            n_pulses,
            jitter_ps: 0.0,
        }
    }

    pub fn duration_ps(&self) -> f64 {
        self.period_ps * self.n_pulses as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period_ps > 0.0) || !(self.jitter_ps >= 0.0) {
            return Err(Error::InvalidInput(
                "repetition period must be positive and jitter non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Detection timestamps on the two HBT detectors, each sorted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhotonStreams {
    pub channels: [Vec<i64>; 2],
}

impl PhotonStreams {
    pub fn total(&self) -> usize {
        self.channels[0].len() + self.channels[1].len()
    }

    pub fn swapped(&self) -> Self {
        Self {
            channels: [self.channels[1].clone(), self.channels[0].clone()],
        }
    }

    pub fn shifted(&self, dt: i64) -> Self {
        Self {
            channels: self
                .channels
                .clone()
                .map(|c| c.into_iter().map(|t| t + dt).collect()),
        }
    }

    /// Writes `channel,t_ps` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = csv::Writer::from_path(path)?;
        out.write_record(["channel", "t_ps"])?;
        for (c, ts) in self.channels.iter().enumerate() {
            for t in ts {
                out.serialize((c, t))?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut s = Self::default();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;
        for row in reader.deserialize() {
            let (c, t): (usize, i64) = row?;
            let n = s.channels.len();
            s.channels
                .get_mut(c)
                .ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "{}: channel {c} out of range (0..{n})",
                        path.display()
                    ))
                })?
                .push(t);
        }
        for c in &mut s.channels {
            c.sort_unstable();
        }
        Ok(s)
    }
}

fn add_background(rng: &mut ChaCha8Rng, rate_per_s: f64, duration_ps: f64, out: &mut Vec<i64>) {
    if rate_per_s <= 0.0 {
        return;
    }
    let gap = Exp::new(rate_per_s * 1e-12).expect("positive rate");
    let mut t = gap.sample(rng);
    while t < duration_ps {
        out.push(t.floor() as i64);
        t += gap.sample(rng);
    }
}

fn finish(mut channels: [Vec<i64>; 2]) -> PhotonStreams {
    for c in &mut channels {
        c.sort_unstable();
    }
    PhotonStreams { channels }
}

fn pulse_time(
    rng: &mut ChaCha8Rng,
    train: &PulseTrain,
    k: u64,
    jitter: &Option<Normal<f64>>,
) -> f64 {
    let t = k as f64 * train.period_ps;
    match jitter {
        Some(n) => t + n.sample(rng),
        None => t,
    }
}

/// Two-level emitter: at most one photon per pulse, split 50/50.
pub fn simulate_photon_stream(
    model: &EmitterModel,
    train: &PulseTrain,
    seed: u64,
) -> Result<PhotonStreams> {
    model.validate()?;
    train.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decay = Exp::new(1.0 / model.lifetime_ps).expect("positive lifetime");
    let jitter =
        (train.jitter_ps > 0.0).then(|| Normal::new(0.0, train.jitter_ps).expect("valid jitter"));
    let mut channels: [Vec<i64>; 2] = [Vec::new(), Vec::new()];
    for k in 0..train.n_pulses {
        let t0 = pulse_time(&mut rng, train, k, &jitter);
        if rng.gen::<f64>() >= model.p_exc {
            continue;
        }
        let t = t0 + decay.sample(&mut rng);
        if rng.gen::<f64>() >= model.eta_det {
            continue;
        }
        let c = usize::from(rng.gen::<bool>());
        channels[c].push(t.floor() as i64);
    }
    for c in &mut channels {
        add_background(&mut rng, model.background_rate, train.duration_ps(), c);
    }
    Ok(finish(channels))
}

/// Control source: Poisson-distributed photon number per pulse with mean
/// `mean_photons`, each photon delayed by the same exponential law.
pub fn simulate_poissonian_stream(
    mean_photons: f64,
    model: &EmitterModel,
    train: &PulseTrain,
    seed: u64,
) -> Result<PhotonStreams> {
    model.validate()?;
    train.validate()?;
    if !(mean_photons >= 0.0) {
        return Err(Error::InvalidInput(
            "mean photon number must be non-negative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decay = Exp::new(1.0 / model.lifetime_ps).expect("positive lifetime");
    let jitter =
        (train.jitter_ps > 0.0).then(|| Normal::new(0.0, train.jitter_ps).expect("valid jitter"));
    let count = (mean_photons > 0.0).then(|| Poisson::new(mean_photons).expect("positive mean"));
    let mut channels: [Vec<i64>; 2] = [Vec::new(), Vec::new()];
    for k in 0..train.n_pulses {
        let t0 = pulse_time(&mut rng, train, k, &jitter);
        let n = count.as_ref().map_or(0, |p| p.sample(&mut rng) as u64);
        for _ in 0..n {
            let t = t0 + decay.sample(&mut rng);
            if rng.gen::<f64>() < model.eta_det {
                let c = usize::from(rng.gen::<bool>());
                channels[c].push(t.floor() as i64);
            }
        }
    }
    for c in &mut channels {
        add_background(&mut rng, model.background_rate, train.duration_ps(), c);
    }
    Ok(finish(channels))
}

/// How detection events are paired into delays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Each channel-0 start is paired with the first channel-1 stop after it;
    /// stops pass a delay line equal to the window so negative delays appear.
    StartStop,
    /// Every pair within the window.
    FullCorrelation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub bin_width_ps: i64,
    /// Delays cover `[-window_ps, window_ps)`.
    pub window_ps: i64,
    pub counts: Vec<u64>,
    pub starts: usize,
    pub stops: usize,
    /// Number of pairs that fell inside the window (equals the sum of counts).
    pub pairs: u64,
    pub pairing: Pairing,
}

impl CoincidenceHistogram {
    /// Delay at the center of bin `i`.
    pub fn delay(&self, i: usize) -> f64 {
        (i as i64 * self.bin_width_ps - self.window_ps) as f64 + 0.5 * self.bin_width_ps as f64
    }

    /// Sum of counts with bin centers in `[lo, hi)`.
    pub fn area(&self, lo: f64, hi: f64) -> f64 {
        (0..self.counts.len())
            .filter(|&i| (lo..hi).contains(&self.delay(i)))
            .map(|i| self.counts[i] as f64)
            .sum()
    }

    /// Writes `delay_ps,counts` CSV with bin-center delays.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = csv::Writer::from_path(path)?;
        out.write_record(["delay_ps", "counts"])?;
        for (i, c) in self.counts.iter().enumerate() {
            out.serialize((self.delay(i), c))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads `delay_ps,counts` CSV written with uniform bins.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut delays = Vec::new();
        let mut counts = Vec::new();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)?;
        for row in reader.deserialize() {
            let (d, c): (f64, u64) = row?;
            delays.push(d);
            counts.push(c);
        }
        if delays.len() < 2 {
            return Err(Error::InvalidInput(
                "histogram needs at least two bins".into(),
            ));
        }
        let bw = (delays[1] - delays[0]).round() as i64;
        let window = (-(delays[0] - 0.5 * bw as f64)).round() as i64;
        let pairs = counts.iter().sum();
        Ok(Self {
            bin_width_ps: bw,
            window_ps: window,
            counts,
            starts: 0,
            stops: 0,
            pairs,
            pairing: Pairing::StartStop,
        })
    }
}

/// Bins delays `t_stop − t_start` over `±window_ps`.
pub fn hbt_histogram(
    streams: &PhotonStreams,
    bin_width_ps: i64,
    window_ps: i64,
    pairing: Pairing,
) -> Result<CoincidenceHistogram> {
    if bin_width_ps <= 0 || window_ps <= 0 || window_ps % bin_width_ps != 0 {
        return Err(Error::InvalidInput(format!(
            "window {window_ps} ps must be a positive multiple of the bin width {bin_width_ps} ps"
        )));
    }
    let [starts, stops] = &streams.channels;
    if starts.is_empty() || stops.is_empty() {
        return Err(Error::InvalidInput(
            "both detector channels need events".into(),
        ));
    }
    let n_bins = (2 * window_ps / bin_width_ps) as usize;
    let mut counts = vec![0u64; n_bins];
    let mut pairs = 0u64;
    let mut record = |d: i64| {
        if (-window_ps..window_ps).contains(&d) {
            counts[((d + window_ps) / bin_width_ps) as usize] += 1;
            pairs += 1;
        }
    };
    match pairing {
        Pairing::StartStop => {
            let mut j = 0;
            for &t1 in starts {
                while j < stops.len() && stops[j] + window_ps < t1 {
                    j += 1;
                }
                if j == stops.len() {
                    break;
                }
                record(stops[j] + window_ps - t1 - window_ps);
            }
        }
        Pairing::FullCorrelation => {
            let mut lo = 0;
            for &t1 in starts {
                while lo < stops.len() && stops[lo] < t1 - window_ps {
                    lo += 1;
                }
                let mut j = lo;
                while j < stops.len() && stops[j] < t1 + window_ps {
                    record(stops[j] - t1);
                    j += 1;
                }
            }
        }
    }
    Ok(CoincidenceHistogram {
        bin_width_ps,
        window_ps,
        counts,
        starts: starts.len(),
        stops: stops.len(),
        pairs,
        pairing,
    })
}

/// Which peak areas produced a g²(0) value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaMode {
    /// Counts summed over a full repetition period around each peak.
    FullPeriod,
    /// Counts minus the fitted flat background within ±3 fitted decay constants.
    FittedWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Value {
    pub value: f64,
    pub error: f64,
    pub mode: AreaMode,
}

/// g²(0) estimate. `raw` includes background; `corrected` removes the
/// fitted flat background and is absent when peaks overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Estimate {
    pub raw: G2Value,
    pub corrected: Option<G2Value>,
    /// Decay constant of the fitted double-sided exponential peaks.
    pub peak_tau_ps: Option<f64>,
    pub side_peaks: usize,
    pub warning: Option<String>,
}

impl G2Estimate {
    /// Value reported by default (background not subtracted).
    pub fn value(&self) -> f64 {
        self.raw.value
    }
}

/// Number of side peaks per side inside a histogram window.
fn side_peaks(hist: &CoincidenceHistogram, period: f64) -> usize {
    let w = hist.window_ps as f64;
    ((w - 0.5 * period) / period).floor().max(0.0) as usize
}

fn ratio_with_error(central: f64, sides: &[f64]) -> (f64, f64) {
    let total: f64 = sides.iter().sum();
    let mean = total / sides.len() as f64;
    let g = central / mean;
    let err = if central > 0.0 {
        g * (1.0 / central + 1.0 / total).sqrt()
    } else {
        1.0 / mean
    };
    (g, err)
}

/// Comb of double-sided exponential peaks sharing one decay constant, plus a flat floor.
fn comb_model(p: &[f64], t: f64, period: f64, k: usize) -> f64 {
    let tau = p[0].abs().max(1e-9);
    let mut v = p[1];
    for (m, a) in p[2..].iter().enumerate() {
        let center = (m as f64 - k as f64) * period;
        v += a * (-(t - center).abs() / tau).exp();
    }
    v
}

/// Estimates g²(0) from a pulsed coincidence histogram with period `period_ps`.
///
/// Peaks are fitted with double-sided exponentials that share one decay
/// constant. When the fitted constant exceeds a third of the period the
/// peaks overlap and only full-period area integration is reported.
pub fn g2_zero(hist: &CoincidenceHistogram, period_ps: f64) -> Result<G2Estimate> {
    let k = side_peaks(hist, period_ps);
    if k < 3 {
        return Err(Error::InvalidInput(format!(
            "histogram window ±{} ps holds {k} side peaks per side; need at least 3",
            hist.window_ps
        )));
    }
    let half = 0.5 * period_ps;
    let area = |c: f64, h: f64| hist.area(c - h, c + h);
    let sides: Vec<f64> = (1..=k)
        .flat_map(|m| [m as f64, -(m as f64)])
        .map(|m| area(m * period_ps, half))
        .collect();
    if sides.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidInput(
            "no coincidences in the side peaks".into(),
        ));
    }
    let (g_raw, e_raw) = ratio_with_error(area(0.0, half), &sides);
    let raw = G2Value {
        value: g_raw,
        error: e_raw,
        mode: AreaMode::FullPeriod,
    };

    // shared-decay fit over the peaks inside the window
    let t: Vec<f64> = (0..hist.counts.len()).map(|i| hist.delay(i)).collect();
    let y: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let floor0 = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut p0 = vec![period_ps / 20.0, floor0];
    for m in 0..=2 * k {
        let c = (m as f64 - k as f64) * period_ps;
        let peak = (0..t.len())
            .filter(|&i| (t[i] - c).abs() < half)
            .map(|i| y[i])
            .fold(0.0, f64::max);
        p0.push((peak - floor0).max(0.0));
    }
    let n_peaks = 2 * k + 1;
    let fit = least_squares(
        |p, r| {
            for i in 0..t.len() {
                let m = comb_model(p, t[i], period_ps, k);
                r[i] = (m - y[i]) / y[i].max(m).max(1.0).sqrt();
            }
        },
        &p0,
        t.len(),
    );
    let (corrected, tau, warning) = match fit {
        Ok(f) => {
            let tau = f.params[0].abs();
            let floor = f.params[1];
            if tau > period_ps / 3.0 {
                (
                    None,
                    Some(tau),
                    Some(format!(
                        "peaks overlap (fitted decay {tau:.0} ps > period/3); reporting full-period areas only"
                    )),
                )
            } else {
                let h = (3.0 * tau).min(half);
                let net = |c: f64| {
                    let bins = (0..t.len()).filter(|&i| (t[i] - c).abs() < h).count() as f64;
                    (area(c, h) - floor * bins).max(0.0)
                };
                let sides: Vec<f64> = (1..=k)
                    .flat_map(|m| [m as f64, -(m as f64)])
                    .map(|m| net(m * period_ps))
                    .collect();
                let (g, e) = ratio_with_error(net(0.0), &sides);
                debug_assert_eq!(f.params.len(), n_peaks + 2);
                (
                    Some(G2Value {
                        value: g,
                        error: e,
                        mode: AreaMode::FittedWindow,
                    }),
                    Some(tau),
                    None,
                )
            }
        }
        Err(e) => (
            None,
            None,
            Some(format!(
                "peak fit failed ({e}); reporting full-period areas only"
            )),
        ),
    };
    Ok(G2Estimate {
        raw,
        corrected,
        peak_tau_ps: tau,
        side_peaks: k,
        warning,
    })
}

/// Histogram of arrival times after the excitation pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayTrace {
    pub bin_width_ps: f64,
    /// Time of the left edge of bin 0.
    pub start_ps: f64,
    pub counts: Vec<f64>,
}

impl DecayTrace {
    /// Bins arrival times folded into `[0, period)` relative to their pulse.
    pub fn from_arrivals(arrivals_ps: &[f64], bin_width_ps: f64, period_ps: f64) -> Result<Self> {
        if !(bin_width_ps > 0.0 && period_ps > bin_width_ps) {
            return Err(Error::InvalidInput(
                "bin width must be positive and shorter than the period".into(),
            ));
        }
        let n = (period_ps / bin_width_ps).floor() as usize;
        let mut counts = vec![0.0; n];
        for &t in arrivals_ps {
            let b = (t.rem_euclid(period_ps) / bin_width_ps) as usize;
            if b < n {
                counts[b] += 1.0;
            }
        }
        Ok(Self {
            bin_width_ps,
            start_ps: 0.0,
            counts,
        })
    }

    pub fn time(&self, i: usize) -> f64 {
        self.start_ps + (i as f64 + 0.5) * self.bin_width_ps
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Instrument response and repetition used by [`fit_lifetime`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifetimeFitOptions {
    /// Full width at half maximum of the Gaussian instrument response.
    pub irf_fwhm_ps: f64,
    /// Repetition period; earlier pulses' tails are folded into the model.
    pub period_ps: Option<f64>,
}

impl Default for LifetimeFitOptions {
    fn default() -> Self {
        Self {
            irf_fwhm_ps: 50.0,
            period_ps: Some(13_000.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifetimeFit {
    pub tau_ps: f64,
    pub tau_error_ps: f64,
    /// Total emitter counts per period (integral of the decay).
    pub amplitude: f64,
    /// Excitation time.
    pub t0_ps: f64,
    /// Flat floor, counts per bin.
    pub background: f64,
    /// Poisson deviance per degree of freedom.
    pub reduced_deviance: f64,
}

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// Unit-area exponential decay convolved with a unit-area Gaussian, at `t` after excitation.
fn exp_gauss(t: f64, tau: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let arg = (s2 / tau - t) / (std::f64::consts::SQRT_2 * sigma);
    let expo = s2 / (2.0 * tau * tau) - t / tau;
    if arg > 25.0 {
        // far before excitation: the Gaussian tail dominates
        return 0.0;
    }
    0.5 / tau * expo.exp() * erfc(arg)
}

/// Emitter part of the decay model at time `t`: folded pulses convolved
/// with the instrument response, per unit time.
fn decay_density(p: &[f64], t: f64, sigma: f64, period: Option<f64>) -> f64 {
    let amp = p[0];
    let tau = p[1].exp();
    let t0 = p[2];
    let mut v = exp_gauss(t - t0, tau, sigma);
    if let Some(period) = period {
        let mut m = 1.0;
        loop {
            let term = exp_gauss(t - t0 + m * period, tau, sigma);
            v += term + exp_gauss(t - t0 - m * period, tau, sigma);
            if term < 1e-12 * v || m > 200.0 {
                break;
            }
            m += 1.0;
        }
    }
    amp * v
}

/// Poisson maximum-likelihood fit of a single exponential convolved with a
/// Gaussian instrument response, with a free flat floor.
pub fn fit_lifetime(trace: &DecayTrace, opts: &LifetimeFitOptions) -> Result<LifetimeFit> {
    let n = trace.counts.len();
    let bw = trace.bin_width_ps;
    if n < 10 {
        return Err(Error::InvalidInput(format!(
            "decay trace has {n} bins; need at least 10"
        )));
    }
    if !(opts.irf_fwhm_ps > 0.0) {
        return Err(Error::InvalidInput(
            "instrument response width must be positive".into(),
        ));
    }
    let sigma = opts.irf_fwhm_ps / FWHM_PER_SIGMA;
    let (imax, &ymax) = trace
        .counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    let tail = &trace.counts[n - (n / 10).max(1)..];
    let floor0 = tail.iter().sum::<f64>() / tail.len() as f64;
    if !(ymax > floor0 + 3.0 * floor0.max(1.0).sqrt()) {
        return Err(Error::FitFailed(
            "trace shows no decay above its floor".into(),
        ));
    }
    // 1/e point after the maximum for a starting lifetime
    let target = floor0 + (ymax - floor0) / std::f64::consts::E;
    let i_e = (imax..n)
        .find(|&i| trace.counts[i] < target)
        .unwrap_or(n - 1);
    let tau0 = ((i_e - imax) as f64 * bw).max(bw);
    let span = n as f64 * bw;
    if opts.period_ps.is_none() && span < 2.0 * tau0 {
        return Err(Error::InvalidInput(format!(
            "trace spans {span} ps, less than twice the decay time"
        )));
    }
    let signal: f64 = trace.counts.iter().map(|c| (c - floor0).max(0.0)).sum();
    let p0 = [signal, tau0.ln(), trace.time(imax) - sigma, floor0];
    let sub = [-0.375, -0.125, 0.125, 0.375];
    let model = |p: &[f64], i: usize| {
        let c = trace.time(i);
        sub.iter()
            .map(|s| decay_density(p, c + s * bw, sigma, opts.period_ps))
            .sum::<f64>()
            * 0.25
            * bw
            + p[3]
    };
    let deviance = |m: f64, y: f64| {
        let m = m.max(1e-300);
        let d = if y > 0.0 {
            2.0 * (m - y + y * (y / m).ln())
        } else {
            2.0 * m
        };
        d.max(0.0)
    };
    let fit = least_squares(
        |p, r| {
            for (i, &y) in trace.counts.iter().enumerate() {
                let m = model(p, i);
                r[i] = (m - y).signum() * deviance(m, y).sqrt();
            }
        },
        &p0,
        n,
    )?;
    let p = fit.params.clone();
    let tau = p[1].exp();
    if !(tau.is_finite() && tau < 1e3 * span) || p[0] <= 0.0 {
        return Err(Error::FitFailed(format!(
            "no decaying component (fitted lifetime {tau:.3e} ps)"
        )));
    }
    // Fisher information for Poisson counts
    let mut info = nalgebra::Matrix4::<f64>::zeros();
    let mut q = p.clone();
    let grads: Vec<[f64; 4]> = (0..n)
        .map(|i| {
            let mut g = [0.0; 4];
            for (j, gj) in g.iter_mut().enumerate() {
                let h = 1e-6 * p[j].abs().max(1e-6);
                q[j] = p[j] + h;
                let a = model(&q, i);
                q[j] = p[j] - h;
                let b = model(&q, i);
                q[j] = p[j];
                *gj = (a - b) / (2.0 * h);
            }
            g
        })
        .collect();
    for (i, g) in grads.iter().enumerate() {
        let w = 1.0 / model(&p, i).max(1e-12);
        for a in 0..4 {
            for b in 0..4 {
                info[(a, b)] += w * g[a] * g[b];
            }
        }
    }
    let tau_error = info
        .try_inverse()
        .map(|c| c[(1, 1)].max(0.0).sqrt() * tau)
        .unwrap_or(f64::NAN);
    Ok(LifetimeFit {
        tau_ps: tau,
        tau_error_ps: tau_error,
        amplitude: p[0],
        t0_ps: p[2],
        background: p[3],
        reduced_deviance: fit.cost / (n as f64 - 4.0),
    })
}

/// Rate enhancement `τ_ref/τ` with first-order error propagation.
pub fn rate_ratio(tau_ref: f64, tau_ref_err: f64, tau: f64, tau_err: f64) -> Result<(f64, f64)> {
    if !(tau_ref > 0.0 && tau > 0.0) {
        return Err(Error::InvalidInput("lifetimes must be positive".into()));
    }
    let r = tau_ref / tau;
    let err = r * ((tau_ref_err / tau_ref).powi(2) + (tau_err / tau).powi(2)).sqrt();
    Ok((r, err))
}

/// Synthetic decay trace: `counts` photons with exponential delays, Gaussian
/// timing noise of the given FWHM, excitation at `t0_ps`, folded into one period.
pub fn synthetic_decay_trace(
    tau_ps: f64,
    counts: usize,
    irf_fwhm_ps: f64,
    t0_ps: f64,
    bin_width_ps: f64,
    period_ps: f64,
    seed: u64,
) -> Result<DecayTrace> {
    if !(tau_ps > 0.0 && irf_fwhm_ps >= 0.0) {
        return Err(Error::InvalidInput(
            "lifetime must be positive and IRF width non-negative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decay = Exp::new(1.0 / tau_ps).expect("positive lifetime");
    let noise = Normal::new(0.0, irf_fwhm_ps / FWHM_PER_SIGMA).expect("valid width");
    let arrivals: Vec<f64> = (0..counts)
        .map(|_| t0_ps + decay.sample(&mut rng) + noise.sample(&mut rng))
        .collect();
    DecayTrace::from_arrivals(&arrivals, bin_width_ps, period_ps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ideal(eta: f64) -> EmitterModel {
        EmitterModel {
            lifetime_ps: 650.0,
            p_exc: 1.0,
            eta_det: eta,
            background_rate: 0.0,
        }
    }

    #[test]
    fn no_excitation_gives_empty_streams() {
        let m = EmitterModel {
            p_exc: 0.0,
            ..ideal(0.5)
        };
        let s = simulate_photon_stream(&m, &PulseTrain::new(1000), 1).unwrap();
        assert_eq!(s.total(), 0);
    }

    #[test]
    fn periodic_streams_fill_one_bin() {
        let ch0: Vec<i64> = (0..500).map(|k| k * 13_000).collect();
        let ch1: Vec<i64> = ch0.iter().map(|t| t + 500).collect();
        let s = PhotonStreams {
            channels: [ch0, ch1],
        };
        for pairing in [Pairing::StartStop, Pairing::FullCorrelation] {
            let h = hbt_histogram(&s, 100, 2000, pairing).unwrap();
            let nz: Vec<usize> = (0..h.counts.len()).filter(|&i| h.counts[i] > 0).collect();
            assert_eq!(nz.len(), 1, "{pairing:?}");
            assert_eq!(h.delay(nz[0]), 550.0);
            assert_eq!(h.pairs, 500);
        }
    }

    #[test]
    fn histogram_rejects_bad_inputs() {
        let s = PhotonStreams {
            channels: [vec![1, 2], vec![]],
        };
        assert!(hbt_histogram(&s, 100, 1000, Pairing::StartStop).is_err());
        let s = PhotonStreams {
            channels: [vec![1, 2], vec![3]],
        };
        assert!(hbt_histogram(&s, 300, 1000, Pairing::StartStop).is_err());
    }

    #[test]
    fn lifetime_fit_recovers_short_decay() {
        let tr = synthetic_decay_trace(650.0, 10_000, 50.0, 1000.0, 50.0, 13_000.0, 4).unwrap();
        let f = fit_lifetime(&tr, &LifetimeFitOptions::default()).unwrap();
        assert!((f.tau_ps / 650.0 - 1.0).abs() < 0.04, "{f:?}");
        assert!(f.tau_error_ps > 0.0 && f.tau_error_ps < 30.0);
    }

    #[test]
    fn flat_trace_fails() {
        let tr = DecayTrace {
            bin_width_ps: 50.0,
            start_ps: 0.0,
            counts: vec![20.0; 100],
        };
        assert!(matches!(
            fit_lifetime(&tr, &LifetimeFitOptions::default()),
            Err(Error::FitFailed(_))
        ));
    }

    #[test]
    fn ratio_of_measured_lifetimes() {
        let (r, _) = rate_ratio(1700.0, 0.0, 650.0, 0.0).unwrap();
        assert!((r - 2.615).abs() < 1e-3);
    }
}
