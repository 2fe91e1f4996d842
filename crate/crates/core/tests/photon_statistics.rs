use pcsim_core::photon::*;
use proptest::prelude::*;
use rayon::prelude::*;

const PERIOD: f64 = 13_000.0;

fn emitter(lifetime_ps: f64, eta: f64, background: f64) -> EmitterModel {
    EmitterModel {
        lifetime_ps,
        p_exc: 1.0,
        eta_det: eta,
        background_rate: background,
    }
}

fn histogram(s: &PhotonStreams) -> CoincidenceHistogram {
    hbt_histogram(s, 100, 52_000, Pairing::StartStop).unwrap()
}

/// Kolmogorov distribution tail Q(λ) = 2 Σ (-1)^{k-1} e^{-2k²λ²}.
fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut q = 0.0;
    for k in 1..100 {
        let k = k as f64;
        q += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    q.clamp(0.0, 1.0)
}

#[test]
fn detected_counts_match_binomial_expectation() {
    let m = EmitterModel {
        lifetime_ps: 650.0,
        p_exc: 0.7,
        eta_det: 0.05,
        background_rate: 0.0,
    };
    let n = 200_000u64;
    let s = simulate_photon_stream(&m, &PulseTrain::new(n), 11).unwrap();
    let p = m.p_exc * m.eta_det;
    let expected = n as f64 * p;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    assert!(
        (s.total() as f64 - expected).abs() < 3.0 * sigma,
        "{} vs {expected}",
        s.total()
    );
}

#[test]
fn emission_delays_are_exponential() {
    let m = emitter(650.0, 1.0, 0.0);
    let s = simulate_photon_stream(&m, &PulseTrain::new(5000), 5).unwrap();
    let mut delays: Vec<f64> = s
        .channels
        .iter()
        .flatten()
        .map(|&t| (t as f64).rem_euclid(PERIOD) + 0.5)
        .collect();
    delays.sort_by(f64::total_cmp);
    let n = delays.len();
    let d = delays
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = 1.0 - (-x / 650.0).exp();
            (cdf - i as f64 / n as f64)
                .abs()
                .max(((i + 1) as f64 / n as f64 - cdf).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks_p_value(d, n) > 0.01, "D = {d}");
}

#[test]
fn ideal_emitter_has_empty_central_peak() {
    let s =
        simulate_photon_stream(&emitter(650.0, 0.1, 0.0), &PulseTrain::new(100_000), 21).unwrap();
    let h = histogram(&s);
    let g = g2_zero(&h, PERIOD).unwrap();
    assert!(g.value() < 0.05, "{g:?}");
    assert_eq!(h.area(-6500.0, 6500.0), 0.0);
    // side peaks repeat every period
    for k in 1..=3 {
        let c = k as f64 * PERIOD;
        assert!(h.area(c - 2000.0, c + 2000.0) > 0.9 * h.area(c - 6500.0, c + 6500.0));
    }
}

#[test]
fn poissonian_control_is_uncorrelated() {
    let m = emitter(650.0, 0.3, 0.0);
    let s = simulate_poissonian_stream(1.0, &m, &PulseTrain::new(400_000), 8).unwrap();
    let all_pairs = hbt_histogram(&s, 100, 52_000, Pairing::FullCorrelation).unwrap();
    let g = g2_zero(&all_pairs, PERIOD).unwrap();
    assert!((g.raw.value - 1.0).abs() < 0.05, "{g:?}");
    assert!((g.raw.value - 1.0).abs() < 3.0 * g.raw.error, "{g:?}");
    let c = g.corrected.unwrap();
    assert!((c.value - 1.0).abs() < 3.0 * c.error, "{c:?}");
}

#[test]
fn start_stop_pairing_piles_up_at_high_count_rates() {
    // only the first stop after each start is kept, which depletes the
    // central peak once a few percent of pulses give a stop
    let m = emitter(650.0, 0.3, 0.0);
    let s = simulate_poissonian_stream(1.0, &m, &PulseTrain::new(400_000), 9).unwrap();
    let ss = g2_zero(&histogram(&s), PERIOD).unwrap();
    let fc = g2_zero(
        &hbt_histogram(&s, 100, 52_000, Pairing::FullCorrelation).unwrap(),
        PERIOD,
    )
    .unwrap();
    assert!(
        ss.raw.value < fc.raw.value - 0.02,
        "{} vs {}",
        ss.raw.value,
        fc.raw.value
    );
}

#[test]
fn background_mixture_follows_signal_fraction() {
    // targets spanning shallow to deep antibunching dips
    for (i, target) in [0.14f64, 0.04, 0.03, 0.23, 0.05, 0.16]
        .into_iter()
        .enumerate()
    {
        let rho = (1.0 - target).sqrt();
        let eta = 0.1;
        let signal_per_channel = 0.5 * eta;
        let bg_per_period = signal_per_channel * (1.0 - rho) / rho;
        let bg_rate = bg_per_period / (PERIOD * 1e-12);
        let m = emitter(650.0, eta, bg_rate);
        assert!((m.signal_fraction(PERIOD) - rho).abs() < 1e-12);
        let s = simulate_photon_stream(&m, &PulseTrain::new(200_000), 100 + i as u64).unwrap();
        let g = g2_zero(&histogram(&s), PERIOD).unwrap();
        let expected = 1.0 - rho * rho;
        assert!(
            (g.raw.value - expected).abs() < 3.0 * g.raw.error,
            "target {target}: {} ± {}",
            g.raw.value,
            g.raw.error
        );
        // background removal recovers near-ideal antibunching
        assert!(g.corrected.unwrap().value < g.raw.value);
    }
}

#[test]
fn long_lifetime_switches_to_area_mode() {
    let s =
        simulate_photon_stream(&emitter(7960.0, 0.1, 0.0), &PulseTrain::new(100_000), 3).unwrap();
    let g = g2_zero(&histogram(&s), PERIOD).unwrap();
    assert!(g.corrected.is_none());
    assert!(g.warning.as_deref().unwrap_or("").contains("overlap"));
    // Adjacent-pulse pairs leak into the central period. With delay difference
    // Laplace(τ), the central window holds e^{-T/2τ} and side peak k loses
    // ½(e^{-(2k-1)a} - e^{-(2k+1)a}), a = T/2τ.
    let a = PERIOD / (2.0 * 7960.0);
    let k = g.side_peaks;
    let side: f64 = (1..=k)
        .map(|k| {
            1.0 - 0.5 * ((-(2.0 * k as f64 - 1.0) * a).exp() - (-(2.0 * k as f64 + 1.0) * a).exp())
        })
        .sum::<f64>()
        / k as f64;
    let expected = (-a).exp() / side;
    assert!(
        (g.raw.value - expected).abs() < 3.0 * g.raw.error,
        "{g:?} vs {expected}"
    );
}

#[test]
fn too_narrow_window_is_rejected() {
    let s = simulate_photon_stream(&emitter(650.0, 0.1, 0.0), &PulseTrain::new(10_000), 3).unwrap();
    let h = hbt_histogram(&s, 100, 30_000, Pairing::StartStop).unwrap();
    assert!(g2_zero(&h, PERIOD).is_err());
}

#[test]
fn histogram_conserves_pairs() {
    let s = simulate_photon_stream(&emitter(650.0, 0.2, 5e4), &PulseTrain::new(20_000), 4).unwrap();
    for pairing in [Pairing::StartStop, Pairing::FullCorrelation] {
        let h = hbt_histogram(&s, 100, 52_000, pairing).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), h.pairs);
    }
}

#[test]
fn full_correlation_estimator_is_symmetric_under_channel_swap() {
    let s = simulate_photon_stream(&emitter(650.0, 0.2, 2e4), &PulseTrain::new(50_000), 6).unwrap();
    let a = hbt_histogram(&s, 100, 52_000, Pairing::FullCorrelation).unwrap();
    let b = hbt_histogram(&s.swapped(), 100, 52_000, Pairing::FullCorrelation).unwrap();
    let ga = g2_zero(&a, PERIOD).unwrap();
    let gb = g2_zero(&b, PERIOD).unwrap();
    assert_eq!(ga.raw.value, gb.raw.value);
    // start-stop pairing differs in which pairs it forms, but agrees statistically
    let c = g2_zero(&histogram(&s.swapped()), PERIOD).unwrap();
    let d = g2_zero(&histogram(&s), PERIOD).unwrap();
    assert!((c.raw.value - d.raw.value).abs() < 3.0 * (c.raw.error + d.raw.error));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn g2_is_translation_invariant(shift in -1_000_000_000i64..1_000_000_000, seed in 0u64..1000) {
        let s = simulate_photon_stream(&emitter(650.0, 0.2, 1e4), &PulseTrain::new(20_000), seed).unwrap();
        let a = g2_zero(&histogram(&s), PERIOD).unwrap();
        let b = g2_zero(&histogram(&s.shifted(shift)), PERIOD).unwrap();
        prop_assert_eq!(a.raw, b.raw);
    }
}

fn lifetime_of(tau: f64, counts: usize, seed: u64) -> LifetimeFit {
    let tr = synthetic_decay_trace(tau, counts, 50.0, 800.0, 50.0, PERIOD, seed).unwrap();
    fit_lifetime(&tr, &LifetimeFitOptions::default()).unwrap()
}

#[test]
fn lifetimes_are_recovered_under_instrument_response() {
    for (tau, tol) in [(650.0, 0.02), (1700.0, 0.02), (7960.0, 0.10)] {
        let f = lifetime_of(tau, 10_000, 42);
        assert!((f.tau_ps / tau - 1.0).abs() < tol, "τ = {tau}: {f:?}");
    }
}

#[test]
fn lifetime_fit_is_unbiased() {
    let taus: Vec<f64> = (0..100u64)
        .into_par_iter()
        .map(|s| lifetime_of(650.0, 10_000, 1000 + s).tau_ps)
        .collect();
    let mean = taus.iter().sum::<f64>() / taus.len() as f64;
    assert!((mean / 650.0 - 1.0).abs() < 0.01, "mean {mean}");
}

#[test]
fn enhancement_from_measured_lifetimes() {
    let a = lifetime_of(650.0, 10_000, 7);
    let b = lifetime_of(1700.0, 10_000, 8);
    let (r, err) = rate_ratio(b.tau_ps, b.tau_error_ps, a.tau_ps, a.tau_error_ps).unwrap();
    assert!((r - 2.6).abs() < 0.1, "{r} ± {err}");
    assert!(err > 0.0);
}

#[test]
fn lorentzian_fits() {
    let q = 5000.0;
    let x: Vec<f64> = (0..400).map(|i| 920.0 + i as f64 * 0.005).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|&l| 3.0 / (1.0 + 4.0 * q * q * (l / 921.0 - 1.0).powi(2)) + 0.1)
        .collect();
    let f = fit_lorentzian(&x, &y).unwrap();
    assert!(f.rms_residual < 1e-9);
    assert!((f.q / q - 1.0).abs() < 1e-9);
    assert!((f.center - 921.0).abs() < 1e-9);
}
