use std::f64::consts::PI;

use pcsim_core::fdtd::*;
use pcsim_core::sources::*;
use pcsim_core::Error;

const BW: f64 = 0.1;

fn grid(dim: Dimensionality, res: f64, half_a: f64, eps: f64) -> SimulationGrid {
    let pml = PmlSpec::default();
    let h = (half_a * res).round() as usize + pml.thickness;
    let half = match dim {
        Dimensionality::TwoDTe => [h, h, 0],
        Dimensionality::ThreeD => [h, h, h],
    };
    let layout = GridLayout::centered(dim, half, 1.0 / res);
    SimulationGrid::uniform(dim, layout, eps, 0.5, Some(pml)).unwrap()
}

fn power(
    dim: Dimensionality,
    res: f64,
    eps: f64,
    f0: f64,
    orientation: [f64; 3],
    box_half: f64,
) -> PowerResult {
    let mut g = grid(dim, res, 0.75, eps);
    let d = DipoleSource::pulse([0.0; 3], orientation, f0, BW).unwrap();
    let opts = PowerOptions {
        frequencies: vec![f0],
        max_time: 200.0,
        ..Default::default()
    };
    radiated_power(&mut g, &d, &FluxSurface::around([0.0; 3], box_half), &opts).unwrap()
}

/// Continuum radiation resistance of a unit current moment: ω/8 per unit
/// length in 2D, nω²/6π in 3D.
fn resistance(dim: Dimensionality, n: f64, w: f64) -> f64 {
    match dim {
        Dimensionality::TwoDTe => w / 8.0,
        Dimensionality::ThreeD => n * w * w / (6.0 * PI),
    }
}

/// Energy radiated by the unit Gaussian-modulated sine current moment,
/// (1/π)∫R(ω)|M(ω)|²dω with M the closed-form transform of the pulse.
fn analytic_energy(dim: Dimensionality, n: f64, f0: f64) -> f64 {
    let sigma = 1.0 / (2.0 * PI * BW);
    let w0 = 2.0 * PI * f0;
    let dw = 1e-4;
    let mut sum = 0.0;
    let mut w = 0.5 * dw;
    while w < 20.0 {
        let m = sigma * (2.0 * PI).sqrt() / 2.0
            * ((-(sigma * (w - w0)).powi(2) / 2.0).exp()
                - (-(sigma * (w + w0)).powi(2) / 2.0).exp());
        sum += resistance(dim, n, w) * m * m * dw;
        w += dw;
    }
    sum / PI
}

fn slope(res: &[f64], err: &[f64]) -> f64 {
    let x: Vec<f64> = res.iter().map(|r| r.ln()).collect();
    let y: Vec<f64> = err.iter().map(|e| e.ln()).collect();
    let (mx, my) = (
        x.iter().sum::<f64>() / x.len() as f64,
        y.iter().sum::<f64>() / y.len() as f64,
    );
    let num: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    -num / den
}

#[test]
fn zero_amplitude_radiates_nothing() {
    let mut g = grid(Dimensionality::TwoDTe, 10.0, 0.75, 1.0);
    let d = DipoleSource::pulse([0.0; 3], [1.0, 0.0, 0.0], 0.27, BW)
        .unwrap()
        .with_amplitude(0.0);
    let r = radiated_power(
        &mut g,
        &d,
        &FluxSurface::around([0.0; 3], 0.4),
        &PowerOptions::default(),
    )
    .unwrap();
    assert_eq!(r.power, 0.0);
    assert_eq!(r.work, 0.0);
}

#[test]
fn flux_surface_must_enclose_the_dipole() {
    let mut g = grid(Dimensionality::TwoDTe, 10.0, 0.75, 1.0);
    let d = DipoleSource::pulse([0.0; 3], [1.0, 0.0, 0.0], 0.27, BW).unwrap();
    let err = radiated_power(
        &mut g,
        &d,
        &FluxSurface::around([0.5, 0.5, 0.0], 0.2),
        &PowerOptions::default(),
    );
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn invalid_dipoles_are_rejected() {
    assert!(DipoleSource::pulse([0.0; 3], [1.0, 1.0, 0.0], 0.27, BW).is_err());
    assert!(DipoleSource::pulse([0.0; 3], [1.0, 0.0, 0.0], 0.27, 0.0).is_err());
    let g = grid(Dimensionality::TwoDTe, 10.0, 0.75, 12.96);
    let d = DipoleSource::pulse([0.0; 3], [1.0, 0.0, 0.0], 0.5, BW).unwrap();
    assert!(d.check_resolvable(&g).is_err());
    let z = DipoleSource::pulse([0.0; 3], [0.0, 0.0, 1.0], 0.27, BW).unwrap();
    assert!(z.terms(&g).is_err());
}

#[test]
fn vacuum_2d_power_converges_to_the_line_dipole_value() {
    let exact = analytic_energy(Dimensionality::TwoDTe, 1.0, 0.27);
    let res = [10.0, 20.0, 40.0];
    let err: Vec<f64> = res
        .iter()
        .map(|&r| {
            let p = power(Dimensionality::TwoDTe, r, 1.0, 0.27, [1.0, 0.0, 0.0], 0.45);
            (p.power / exact - 1.0).abs()
        })
        .collect();
    assert!(err[1] < 0.05, "{err:?}");
    assert!(slope(&res, &err) >= 1.7, "{err:?}");
}

#[test]
fn vacuum_3d_power_converges_to_the_point_dipole_value() {
    let exact = analytic_energy(Dimensionality::ThreeD, 1.0, 0.27);
    let res = [8.0, 12.0, 16.0];
    let results: Vec<PowerResult> = res
        .iter()
        .map(|&r| power(Dimensionality::ThreeD, r, 1.0, 0.27, [1.0, 0.0, 0.0], 0.45))
        .collect();
    let err: Vec<f64> = results
        .iter()
        .map(|p| (p.power / exact - 1.0).abs())
        .collect();
    assert!(err[1] < 0.05, "{err:?}");
    assert!(slope(&res, &err) >= 1.7, "{err:?}");
    for p in &results {
        assert_eq!(p.flag, PowerFlag::Ok);
        assert!(p.flux_work_mismatch() < 0.02, "{p:?}");
        // spectral resistance at the carrier agrees with the continuum value
        let r = p.resistance_at(0.27).unwrap()
            / resistance(Dimensionality::ThreeD, 1.0, 2.0 * PI * 0.27);
        assert!((r - 1.0).abs() < 0.02, "{r}");
    }
}

#[test]
fn homogeneous_medium_scales_power_by_index() {
    let p1 = power(
        Dimensionality::ThreeD,
        12.0,
        1.0,
        0.15,
        [1.0, 0.0, 0.0],
        0.45,
    )
    .power;
    for n in [1.5, 2.65, 3.6] {
        let pn = power(
            Dimensionality::ThreeD,
            12.0,
            n * n,
            0.15,
            [1.0, 0.0, 0.0],
            0.45,
        )
        .power;
        assert!(
            (pn / p1 / n - 1.0).abs() < 0.05,
            "n = {n}: ratio {}",
            pn / p1
        );
    }
}

#[test]
fn power_does_not_depend_on_the_enclosing_surface() {
    for dim in [Dimensionality::TwoDTe, Dimensionality::ThreeD] {
        let res = if dim == Dimensionality::TwoDTe {
            20.0
        } else {
            12.0
        };
        let a = power(dim, res, 1.0, 0.27, [1.0, 0.0, 0.0], 0.3);
        let b = power(dim, res, 1.0, 0.27, [1.0, 0.0, 0.0], 0.6);
        assert!(
            (a.power / b.power - 1.0).abs() < 0.01,
            "{dim:?}: {} vs {}",
            a.power,
            b.power
        );
        for p in [&a, &b] {
            assert!(p.flux_work_mismatch() < 0.02);
        }
    }
}

#[test]
fn vacuum_power_is_isotropic() {
    let s = 0.5f64.sqrt();
    let t = (1.0f64 / 3.0).sqrt();
    let cases = [
        (
            Dimensionality::TwoDTe,
            20.0,
            vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [s, s, 0.0]],
        ),
        (
            Dimensionality::ThreeD,
            12.0,
            vec![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [t, t, t]],
        ),
    ];
    for (dim, res, dirs) in cases {
        let p: Vec<f64> = dirs
            .iter()
            .map(|&u| power(dim, res, 1.0, 0.27, u, 0.45).power)
            .collect();
        for v in &p {
            assert!((v / p[0] - 1.0).abs() < 0.03, "{dim:?}: {p:?}");
        }
    }
}

#[test]
fn continuous_wave_power_matches_the_spectral_resistance() {
    let f = 0.27;
    let pulse = power(Dimensionality::TwoDTe, 20.0, 1.0, f, [1.0, 0.0, 0.0], 0.45);
    let mut g = grid(Dimensionality::TwoDTe, 20.0, 0.75, 1.0);
    let d = DipoleSource::new(
        [0.0; 3],
        [1.0, 0.0, 0.0],
        Envelope::Continuous { f0: f, ramp: 20.0 },
        1.0,
    )
    .unwrap();
    let opts = PowerOptions {
        max_time: 120.0,
        ..Default::default()
    };
    let cw = radiated_power(&mut g, &d, &FluxSurface::around([0.0; 3], 0.45), &opts).unwrap();
    // a unit sine current moment radiates R/2 on average
    let expected = 0.5 * pulse.resistance_at(f).unwrap();
    assert!(
        (cw.power / expected - 1.0).abs() < 0.02,
        "{} vs {expected}",
        cw.power
    );
}

#[test]
fn spectrum_of_a_sinusoid_peaks_at_its_frequency() {
    let dt = 0.02;
    let f0 = 0.31;
    let x: Vec<f64> = (0..4000)
        .map(|i| (2.0 * PI * f0 * i as f64 * dt).sin())
        .collect();
    let s = emission_spectrum(
        &x,
        dt,
        SpectrumWindow {
            taper: 500,
            pad_factor: 1,
        },
    )
    .unwrap();
    let k = s.peaks(0.5);
    assert_eq!(k.len(), 1);
    assert!((s.frequencies[k[0]] - f0).abs() <= s.df());
}

#[test]
fn two_sinusoids_give_two_peaks() {
    let dt = 0.02;
    let n = 4000;
    let df = 1.0 / (n as f64 * dt);
    let (f1, f2) = (0.3, 0.3 + 6.0 * df);
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            (2.0 * PI * f1 * t).sin() + (2.0 * PI * f2 * t).sin()
        })
        .collect();
    let s = emission_spectrum(
        &x,
        dt,
        SpectrumWindow {
            taper: 1000,
            pad_factor: 1,
        },
    )
    .unwrap();
    let k = s.peaks(0.5);
    assert_eq!(k.len(), 2, "{k:?}");
    assert!((s.frequencies[k[0]] - f1).abs() <= s.df());
    assert!((s.frequencies[k[1]] - f2).abs() <= s.df());
}

#[test]
fn decaying_sinusoid_has_lorentzian_width() {
    let dt = 0.05;
    let tau = 80.0;
    let x: Vec<f64> = (0..40_000)
        .map(|i| {
            let t = i as f64 * dt;
            (-t / tau).exp() * (2.0 * PI * 0.3 * t).cos()
        })
        .collect();
    let s = emission_spectrum(&x, dt, SpectrumWindow::default()).unwrap();
    // full width at half maximum of |X|², in frequency
    let p = s.power();
    let k = s.peaks(0.5)[0];
    let half = p[k] / 2.0;
    let cross = |mut i: usize, step: isize| {
        while p[i] > half {
            i = (i as isize + step) as usize;
        }
        let j = (i as isize - step) as usize;
        let (a, b) = (p[i], p[j]);
        s.frequencies[i] + (half - a) / (b - a) * (s.frequencies[j] - s.frequencies[i])
    };
    let fwhm = cross(k, 1) - cross(k, -1);
    let expected = 1.0 / (PI * tau);
    assert!((fwhm / expected - 1.0).abs() < 0.10, "{fwhm} vs {expected}");
}

#[test]
fn empty_series_is_rejected() {
    assert!(emission_spectrum(&[], 0.1, SpectrumWindow::default()).is_err());
}
