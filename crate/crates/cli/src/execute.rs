//! Experiment runners. Each writes its result files into the staging area of
//! an [`OutputWriter`]; JSON results carry the config hash and seed.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use pcsim_core::ensemble::{
    detect_gap, plan_ensemble, rate_map, run_ensemble, single_emitter_rate, suppression_spectrum,
    CavityReference, EmitterSpec, GAP_THRESHOLD,
};
use pcsim_core::fdtd::{sidecar_path, write_raw_f32, Dimensionality};
use pcsim_core::geometry::PhotonicStructure;
use pcsim_core::modal::{
    analyze_cavity, cavity_decay_rate, mode_collection_efficiency, purcell_factor,
    rate_enhancement, weak_coupling_check, EnhancementInput,
};
use pcsim_core::photon::{
    fit_lifetime, g2_zero, hbt_histogram, rate_ratio, simulate_photon_stream,
    simulate_poissonian_stream, DecayTrace, PhotonStreams,
};
use pcsim_core::units::UnitSystem;
use pcsim_core::Error;

use crate::config::{ExperimentKind, PhotonSource, ValidatedConfig};
use crate::error::CliError;
use crate::output::{sha256_file, FileEntry, Manifest, OutputWriter, MANIFEST};

pub const TOOL: &str = "pcsim";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const CONFIG_COPY: &str = "config.toml";

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    experiment: &'a str,
    config_hash: &'a str,
    seed: Option<u64>,
    tool_version: &'a str,
    result: T,
}

fn envelope<'a, T: Serialize>(cfg: &'a ValidatedConfig, result: T) -> Envelope<'a, T> {
    Envelope {
        experiment: cfg.kind.name(),
        config_hash: &cfg.hash,
        seed: cfg.config.seed,
        tool_version: VERSION,
        result,
    }
}

/// Files an experiment writes, in manifest order.
pub fn planned_outputs(cfg: &ValidatedConfig) -> Vec<String> {
    let mut files: Vec<&str> = match cfg.kind {
        ExperimentKind::Resonance => vec![
            "eps.f32",
            "eps.f32.json",
            "mode_intensity.f32",
            "mode_intensity.f32.json",
            "resonance.json",
        ],
        ExperimentKind::Purcell => vec!["enhancement.csv", "purcell.json"],
        ExperimentKind::SingleRate => vec!["power.csv", "rate.json"],
        ExperimentKind::Ensemble => vec!["ensemble.csv", "summary.json"],
        ExperimentKind::RateMap => vec!["cavity.json", "rate_map.csv"],
        ExperimentKind::Bandgap => vec!["gap.json", "gap_scan.csv"],
        ExperimentKind::PhotonStats => {
            let mut f = vec!["decay.csv", "g2.json", "histogram.csv", "lifetime.json"];
            if cfg
                .config
                .photon_stats
                .as_ref()
                .is_some_and(|p| p.timestamps_file.is_none())
            {
                f.push("timestamps.csv");
            }
            f
        }
    };
    files.push(CONFIG_COPY);
    files.sort();
    files.push(MANIFEST);
    files.into_iter().map(String::from).collect()
}

fn input_entries(cfg: &ValidatedConfig) -> Result<Vec<FileEntry>, CliError> {
    cfg.inputs
        .iter()
        .map(|p| {
            let (sha, bytes) = sha256_file(p)?;
            Ok(FileEntry {
                path: p.display().to_string(),
                sha256: Some(sha),
                bytes: Some(bytes),
            })
        })
        .collect()
}

fn manifest(cfg: &ValidatedConfig, dry_run: bool, wall_time_s: f64) -> Result<Manifest, CliError> {
    Ok(Manifest {
        tool: TOOL.into(),
        version: VERSION.into(),
        experiment: cfg.kind.name().into(),
        config_hash: cfg.hash.clone(),
        seed: cfg.config.seed,
        dry_run,
        wall_time_s,
        inputs: input_entries(cfg)?,
        files: Vec::new(),
    })
}

/// Manifest of the files a run would produce, without running it.
pub fn dry_run(cfg: &ValidatedConfig) -> Result<Manifest, CliError> {
    let mut m = manifest(cfg, true, 0.0)?;
    m.files = planned_outputs(cfg)
        .into_iter()
        .filter(|f| f != MANIFEST)
        .map(|path| FileEntry {
            path,
            sha256: None,
            bytes: None,
        })
        .collect();
    Ok(m)
}

/// Runs the experiment and publishes its outputs into `out`.
pub fn execute(cfg: &ValidatedConfig, out: &Path) -> Result<Manifest, CliError> {
    let start = Instant::now();
    let w = OutputWriter::create(out)?;
    w.write_text(CONFIG_COPY, &cfg.canonical)?;
    match cfg.kind {
        ExperimentKind::Resonance => resonance(cfg, &w)?,
        ExperimentKind::Purcell => purcell(cfg, &w)?,
        ExperimentKind::SingleRate => single_rate(cfg, &w)?,
        ExperimentKind::Ensemble => ensemble(cfg, &w)?,
        ExperimentKind::RateMap => map(cfg, &w)?,
        ExperimentKind::Bandgap => bandgap(cfg, &w)?,
        ExperimentKind::PhotonStats => photon_stats(cfg, &w)?,
    }
    let m = manifest(cfg, false, start.elapsed().as_secs_f64())?;
    w.commit(m)
}

fn structure(cfg: &ValidatedConfig) -> Result<PhotonicStructure, CliError> {
    let solver = cfg.solver();
    Ok(PhotonicStructure::build(
        cfg.geometry().spec()?,
        solver.dimensionality.dimensionality(),
        solver.resolution(),
        &cfg.domain(),
    )?)
}

fn resonance(cfg: &ValidatedConfig, w: &OutputWriter) -> Result<(), CliError> {
    let s = structure(cfg)?;
    let r = cfg
        .config
        .resonance
        .clone()
        .expect("canonical config has resonance");
    let mode = analyze_cavity(&s, r.polarization, &cfg.cavity_settings(), &cfg.units())?;
    let collection = if s.dim() == Dimensionality::ThreeD {
        Some(mode_collection_efficiency(
            &mode,
            &s,
            r.collection_height,
            cfg.solver().pml.thickness,
            r.collection_na,
        )?)
    } else {
        None
    };
    let result = json!({
        "mode": mode,
        "purcell_factor": mode.purcell_factor()?,
        "collection_na": r.collection_na,
        "collection_efficiency": collection,
    });
    w.write_json("resonance.json", &envelope(cfg, result))?;

    s.map.write(&w.path("eps.f32"))?;
    let intensity: Vec<f32> = mode
        .field
        .iter()
        .map(|e| e.iter().map(|c| c.norm_sqr()).sum::<f64>() as f32)
        .collect();
    let path = w.path("mode_intensity.f32");
    write_raw_f32(&path, &intensity)?;
    let meta = json!({
        "shape": s.map.layout.dims,
        "component": "|E|^2",
        "frequency": mode.frequency,
        "units": "normalized so that max(eps |E|^2) = 1",
        "dtype": "f32",
        "byte_order": "little",
        "order": "x slowest, z fastest",
        "dx": s.map.layout.dx,
        "origin": s.map.layout.origin,
    });
    w.write_json(&file_name(&sidecar_path(&path)), &meta)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .expect("file path")
        .to_string_lossy()
        .into_owned()
}

fn purcell(cfg: &ValidatedConfig, w: &OutputWriter) -> Result<(), CliError> {
    let p = cfg
        .config
        .purcell
        .clone()
        .expect("canonical config has purcell");
    // V in units of (λ/n)³, so λ = n = 1 in the formula
    let f_cav = purcell_factor(p.q, p.v_mode, 1.0, 1.0)?;
    let units = UnitSystem::from_lattice_constant_nm(p.wavelength_nm);
    let kappa = cavity_decay_rate(1.0, p.q, &units)?;
    let coupling = weak_coupling_check(kappa.per_second, p.g_per_second);
    let mut rows = Vec::with_capacity(p.detunings.len());
    for &d in &p.detunings {
        let wavelength = p.wavelength_nm * (1.0 + d / p.q);
        let ratio = rate_enhancement(&EnhancementInput {
            f_cav,
            f_pc: p.f_pc,
            overlap: p.overlap,
            wavelength,
            cavity_wavelength: p.wavelength_nm,
            q: p.q,
        })?;
        rows.push(vec![
            d.to_string(),
            wavelength.to_string(),
            ratio.to_string(),
        ]);
    }
    w.write_csv(
        "enhancement.csv",
        &["detuning", "wavelength_nm", "ratio"],
        rows,
    )?;
    let result = json!({
        "f_cav": f_cav,
        "peak_enhancement": f_cav * p.overlap + p.f_pc,
        "kappa_per_second": kappa.per_second,
        "g_per_second": p.g_per_second,
        "weak_coupling": coupling.weak,
        "coupling_margin": if coupling.margin.is_finite() { Some(coupling.margin) } else { None },
    });
    w.write_json("purcell.json", &envelope(cfg, result))
}

fn single_rate(cfg: &ValidatedConfig, w: &OutputWriter) -> Result<(), CliError> {
    let s = structure(cfg)?;
    let p = cfg
        .config
        .single_rate
        .clone()
        .expect("canonical config has single_rate");
    let emitter = EmitterSpec {
        position: [p.position[0], p.position[1], 0.0],
        orientation: p.orientation,
        frequency: p.frequency,
    };
    let r = single_emitter_rate(&s, &emitter, &cfg.rate_settings())?;
    w.write_csv(
        "power.csv",
        &["P", "flag"],
        [vec![r.p_pc.to_string(), flag(r.flag)]],
    )?;
    let result = json!({
        "rate": r,
        "wavelength_nm": cfg.units().frequency_to_nm(p.frequency),
    });
    w.write_json("rate.json", &envelope(cfg, result))
}

fn flag(f: pcsim_core::sources::PowerFlag) -> String {
    serde_json::to_value(f)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

fn ensemble(cfg: &ValidatedConfig, w: &OutputWriter) -> Result<(), CliError> {
    let s = structure(cfg)?;
    let e = cfg
        .config
        .ensemble
        .clone()
        .expect("canonical config has ensemble");
    let jobs = plan_ensemble(&s, &e.settings(), cfg.seed())?;
    eprintln!("pcsim: {} emitters planned", jobs.len());
    let res = run_ensemble(&s, &jobs, &cfg.rate_settings())?;
    let rows = res.emitters.iter().enumerate().map(|(i, r)| {
        let em = &r.emitter;
        vec![
            i.to_string(),
            em.position[0].to_string(),
            em.position[1].to_string(),
            em.orientation[0].to_string(),
            em.orientation[1].to_string(),
            em.wavelength().to_string(),
            r.ratio.to_string(),
            flag(r.flag),
        ]
    });
    w.write_csv(
        "ensemble.csv",
        &[
            "emitter_id",
            "x",
            "y",
            "ux",
            "uy",
            "lambda",
            "ratio",
            "flag",
        ],
        rows,
    )?;
    let summary = json!({
        "mean": res.mean,
        "variance": res.variance,
        "n_emitters": res.emitters.len(),
        "flagged": res.flagged,
        "resolution": cfg.solver().resolution(),
    });
    w.write_json("summary.json", &envelope(cfg, summary))
}

fn map(cfg: &ValidatedConfig, w: &OutputWriter) -> Result<(), CliError> {
    let s = structure(cfg)?;
    let r = cfg
        .config
        .resonance
        .clone()
        .expect("canonical config has resonance");
    let m = cfg
        .config
        .rate_map
        .clone()
        .expect("canonical config has rate_map");
    let mode = analyze_cavity(&s, r.polarization, &cfg.cavity_settings(), &cfg.units())?;
    let reference = CavityReference {
        wavelength: mode.wavelength,
        q: mode.q,
        polarization: mode.polarization_vector(),
    };
    let rm = rate_map(
        &s,
        &reference,
        &m.offsets,
        &m.detunings,
        &cfg.rate_settings(),
    )?;
    let mut header = vec!["x".to_string(), "y".to_string()];
    header.extend(m.detunings.iter().map(|d| d.to_string()));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = rm.offsets.iter().zip(&rm.values).map(|(o, row)| {
        let mut fields = vec![o[0].to_string(), o[1].to_string()];
        // empty cells mark offsets inside air holes
        fields.extend(
            row.iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default()),
        );
        fields
    });
    w.write_csv("rate_map.csv", &header, rows)?;
    let result = json!({
        "cavity": reference,
        "mode": mode,
        "argmax": rm.argmax().map(|(i, j, v)| json!({"offset": rm.offsets[i], "detuning": rm.detunings[j], "ratio": v})),
        "flags": rm.flags,
    });
    w.write_json("cavity.json", &envelope(cfg, result))
}

fn bandgap(cfg: &ValidatedConfig, w: &OutputWriter) -> Result<(), CliError> {
    let s = structure(cfg)?;
    let b = cfg
        .config
        .bandgap
        .clone()
        .expect("canonical config has bandgap");
    let units = cfg.units();
    let freqs = b.frequencies();
    let spectrum = suppression_spectrum(
        &s,
        &freqs,
        b.n_probe,
        b.radius,
        cfg.seed(),
        &cfg.rate_settings(),
    )?;
    let rows = spectrum
        .frequencies
        .iter()
        .zip(&spectrum.mean_ratio)
        .map(|(&f, &m)| {
            vec![
                (1.0 / f).to_string(),
                units.frequency_to_nm(f).to_string(),
                m.to_string(),
            ]
        });
    w.write_csv(
        "gap_scan.csv",
        &["lambda_norm", "lambda_nm", "mean_ratio"],
        rows,
    )?;
    let gap = match detect_gap(&spectrum, GAP_THRESHOLD) {
        Ok(g) => Some(json!({
            "f_lo": g.f_lo,
            "f_hi": g.f_hi,
            "lambda_lo_nm": units.frequency_to_nm(g.f_hi),
            "lambda_hi_nm": units.frequency_to_nm(g.f_lo),
        })),
        Err(Error::NoGap { .. }) => {
            eprintln!("pcsim: no gap detected below threshold {GAP_THRESHOLD}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let result = json!({
        "threshold": GAP_THRESHOLD,
        "gap": gap,
        "probes": spectrum.probes,
        "a_nm": units.a_nm,
    });
    w.write_json("gap.json", &envelope(cfg, result))
}

fn photon_stats(cfg: &ValidatedConfig, w: &OutputWriter) -> Result<(), CliError> {
    let p = cfg
        .config
        .photon_stats
        .clone()
        .expect("canonical config has photon_stats");
    let streams = match cfg.inputs.first() {
        Some(file) => PhotonStreams::read_csv(file)?,
        None => {
            let s = match p.source {
                PhotonSource::SingleEmitter => {
                    simulate_photon_stream(&p.model(), &p.train(), cfg.seed())?
                }
                PhotonSource::Poissonian => {
                    simulate_poissonian_stream(p.mean_photons, &p.model(), &p.train(), cfg.seed())?
                }
            };
            s.write_csv(&w.path("timestamps.csv"))?;
            s
        }
    };
    let hist = hbt_histogram(&streams, p.bin_width_ps, p.window_ps, p.pairing)?;
    hist.write_csv(&w.path("histogram.csv"))?;
    let g2 = g2_zero(&hist, p.period_ps)?;
    w.write_json(
        "g2.json",
        &envelope(
            cfg,
            json!({"g2": g2, "pairs": hist.pairs, "starts": hist.starts, "stops": hist.stops}),
        ),
    )?;

    let arrivals: Vec<f64> = streams
        .channels
        .iter()
        .flatten()
        .map(|&t| t as f64)
        .collect();
    let trace = DecayTrace::from_arrivals(&arrivals, p.decay_bin_ps, p.period_ps)?;
    let rows = trace
        .counts
        .iter()
        .enumerate()
        .map(|(i, c)| vec![trace.time(i).to_string(), c.to_string()]);
    w.write_csv("decay.csv", &["t_ps", "counts"], rows)?;
    let fit = fit_lifetime(&trace, &p.fit_options())?;
    let ratio = p
        .reference_lifetime_ps
        .map(|tau_ref| rate_ratio(tau_ref, 0.0, fit.tau_ps, fit.tau_error_ps))
        .transpose()?
        .map(|(r, e)| json!({"reference_lifetime_ps": p.reference_lifetime_ps, "ratio": r, "error": e}));
    w.write_json(
        "lifetime.json",
        &envelope(cfg, json!({"fit": fit, "rate_enhancement": ratio})),
    )
}
