use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn pcsim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcsim"))
        .args(args)
        .current_dir(dir)
        .env_remove("PCSIM_OUT")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn timing_free(mut m: Value) -> Value {
    m.as_object_mut().unwrap().remove("wall_time_s");
    m
}

const PHOTONS: &str = r#"
experiment = "photon-stats"
seed = 42
[photon_stats]
n_pulses = 20000
eta_det = 0.2
"#;

#[test]
fn validate_prints_an_idempotent_canonical_form() {
    let d = TempDir::new().unwrap();
    write(
        d.path(),
        "a.toml",
        "experiment = \"bandgap\"\nseed = 1\n[bandgap]\nn_points = 11\n",
    );
    let first = pcsim(&["validate", "--config", "a.toml"], d.path());
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let canonical = String::from_utf8(first.stdout.clone()).unwrap();
    assert!(canonical.contains("resolution = 20.0"), "{canonical}");
    write(d.path(), "b.toml", &canonical);
    let second = pcsim(&["validate", "--config", "b.toml"], d.path());
    assert_eq!(String::from_utf8(second.stdout.clone()).unwrap(), canonical);
    assert_eq!(stderr(&second), stderr(&first));
}

#[test]
fn oversized_holes_are_rejected_with_the_constraint() {
    let d = TempDir::new().unwrap();
    write(
        d.path(),
        "c.toml",
        "experiment = \"single-rate\"\n[geometry.lattice]\nr = 0.6\n",
    );
    let o = pcsim(&["single-rate", "--config", "c.toml"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("r < a/2"), "{}", stderr(&o));
}

#[test]
fn every_config_problem_is_reported_at_once() {
    let d = TempDir::new().unwrap();
    let text = "experiment = \"ensemble\"\ncolour = 1\n[ensemble]\nn_emiters = 5\n[solver]\nresolution = 4.0\n[purcell]\n";
    write(d.path(), "c.toml", text);
    let o = pcsim(&["ensemble", "--config", "c.toml"], d.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for needle in [
        "`colour`",
        "`ensemble.n_emiters`",
        "resolution",
        "[purcell]",
        "`seed` is required",
    ] {
        assert!(err.contains(needle), "missing {needle} in {err}");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let d = TempDir::new().unwrap();
    write(d.path(), "k.toml", "experiment = \"tomography\"\n");
    write(d.path(), "p.toml", "experiment = \"purcell\"\n");
    let cases: [&[&str]; 6] = [
        &["validate", "--config", "k.toml"],
        &["ensemble", "--config", "p.toml"],
        &["purcell", "--config", "missing.toml"],
        &["purcell", "--config", "p.toml", "--threads", "many"],
        &[
            "validate",
            "--config",
            "p.toml",
            "--seed",
            "9223372036854775808",
        ],
        &["scatter"],
    ];
    for args in cases {
        let o = pcsim(args, d.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    assert!(stderr(&pcsim(cases[0], d.path())).contains("unknown experiment kind"));
    assert_eq!(pcsim(&["--help"], d.path()).status.code(), Some(0));
}

#[test]
fn dry_run_lists_outputs_without_writing() {
    let d = TempDir::new().unwrap();
    write(d.path(), "p.toml", PHOTONS);
    let o = pcsim(
        &[
            "photon-stats",
            "--config",
            "p.toml",
            "--out",
            "out",
            "--dry-run",
        ],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m["dry_run"], true);
    let files: Vec<&str> = m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["path"].as_str().unwrap())
        .collect();
    assert!(files.contains(&"g2.json") && files.contains(&"timestamps.csv"));
    assert!(!d.path().join("out").exists());
}

#[test]
fn same_seed_gives_identical_outputs_regardless_of_threads() {
    let d = TempDir::new().unwrap();
    write(d.path(), "p.toml", PHOTONS);
    for (out, threads) in [("a", "1"), ("b", "3")] {
        let o = pcsim(
            &[
                "photon-stats",
                "--config",
                "p.toml",
                "--out",
                out,
                "--threads",
                threads,
            ],
            d.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let (a, b) = (
        json(d.path().join("a/manifest.json")),
        json(d.path().join("b/manifest.json")),
    );
    assert_eq!(timing_free(a.clone()), timing_free(b));
    // checksums in the manifest describe the files on disk
    for f in a["files"].as_array().unwrap() {
        let bytes = fs::read(d.path().join("a").join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64);
    }
    let g2 = json(d.path().join("a/g2.json"));
    assert!(
        g2["result"]["g2"]["raw"]["value"].as_f64().unwrap() < 0.05,
        "{g2}"
    );

    let o = pcsim(
        &[
            "photon-stats",
            "--config",
            "p.toml",
            "--out",
            "c",
            "--seed",
            "43",
        ],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(
        json(d.path().join("c/manifest.json"))["config_hash"],
        a["config_hash"]
    );
}

#[test]
fn purcell_outputs_follow_the_mode_figures() {
    let d = TempDir::new().unwrap();
    write(d.path(), "p.toml", "experiment = \"purcell\"\n[purcell]\nq = 1600\nv_mode = 0.5\nf_pc = 0.0\ndetunings = [0.0, 1.0]\n");
    let o = pcsim(&["purcell", "--config", "p.toml", "--out", "o"], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = json(d.path().join("o/purcell.json"));
    let f_cav = r["result"]["f_cav"].as_f64().unwrap();
    let expected = 3.0 / (4.0 * std::f64::consts::PI.powi(2)) * 1600.0 / 0.5;
    assert!(
        (f_cav / expected - 1.0).abs() < 1e-9,
        "{f_cav} vs {expected}"
    );
    let csv = fs::read_to_string(d.path().join("o/enhancement.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "detuning,wavelength_nm,ratio");
    let on_resonance: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
    assert!((on_resonance / f_cav - 1.0).abs() < 1e-9);
}

#[test]
fn tiny_ensemble_is_reproducible() {
    let d = TempDir::new().unwrap();
    let text = "experiment = \"ensemble\"\nseed = 9\n[geometry]\nextent = [5, 5]\n[solver]\nresolution = 8.0\n[ensemble]\nn_emitters = 2\nradius = 0.8\n";
    write(d.path(), "e.toml", text);
    for out in ["a", "b"] {
        let o = pcsim(&["ensemble", "--config", "e.toml", "--out", out], d.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["ensemble.csv", "summary.json"] {
        assert_eq!(
            fs::read(d.path().join("a").join(f)).unwrap(),
            fs::read(d.path().join("b").join(f)).unwrap()
        );
    }
    let csv = fs::read_to_string(d.path().join("a/ensemble.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("emitter_id,x,y,ux,uy,lambda,ratio,flag\n"));
}

#[test]
fn runtime_failure_leaves_no_partial_outputs() {
    let d = TempDir::new().unwrap();
    write(d.path(), "t.csv", "channel,t_ps\n0,12.5\n1,not-a-time\n");
    write(
        d.path(),
        "p.toml",
        "experiment = \"photon-stats\"\nseed = 1\n[photon_stats]\ntimestamps_file = \"t.csv\"\n",
    );
    let o = pcsim(
        &["photon-stats", "--config", "p.toml", "--out", "out"],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let left: Vec<_> = fs::read_dir(d.path().join("out"))
        .map(|r| r.collect())
        .unwrap_or_default();
    assert!(left.is_empty(), "{left:?}");
}

#[test]
fn output_root_comes_from_the_environment() {
    let d = TempDir::new().unwrap();
    write(d.path(), "p.toml", "experiment = \"purcell\"\n");
    let o = Command::new(env!("CARGO_BIN_EXE_pcsim"))
        .args(["purcell", "--config", "p.toml"])
        .current_dir(d.path())
        .env("PCSIM_OUT", d.path().join("runs"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let runs: Vec<_> = fs::read_dir(d.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(runs.len(), 1);
    let name = runs[0].to_string_lossy().into_owned();
    assert!(name.starts_with("purcell-"), "{name}");
    assert!(d
        .path()
        .join("runs")
        .join(&name)
        .join("manifest.json")
        .is_file());
}

#[test]
fn shipped_configs_validate_and_plan() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let kind = path.file_stem().unwrap().to_str().unwrap().to_string();
        let config = path.to_str().unwrap();
        let o = pcsim(&["validate", "--config", config], &dir);
        assert_eq!(o.status.code(), Some(0), "{kind}: {}", stderr(&o));
        let o = pcsim(&[&kind, "--config", config, "--dry-run"], &dir);
        assert_eq!(o.status.code(), Some(0), "{kind}: {}", stderr(&o));
        seen += 1;
    }
    assert_eq!(seen, 7);
}
