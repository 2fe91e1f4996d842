use std::path::Path;

use pcsim_cli::config::{validate_str, ExperimentKind, Overrides, ValidatedConfig};
use pcsim_cli::error::CliError;
use proptest::prelude::*;

fn validate(text: &str) -> Result<ValidatedConfig, CliError> {
    validate_str(text, Path::new("."), &Overrides::default())
}

fn ensemble_config(seed: u64, r: f64, res: f64, n: usize, extent: usize) -> String {
    format!(
        "experiment = \"ensemble\"\nseed = {seed}\n[geometry]\nextent = [{extent}, {extent}]\n\
         [geometry.lattice]\nr = {r}\n[solver]\nresolution = {res}\n[ensemble]\nn_emitters = {n}\n"
    )
}

proptest! {
    #[test]
    fn canonical_form_is_a_fixed_point(
        seed in 0..=i64::MAX as u64, r in 0.05f64..0.45, res in 8.0f64..40.0, n in 1usize..300, extent in 3usize..21,
    ) {
        let first = validate(&ensemble_config(seed, r, res, n, extent)).unwrap();
        let second = validate(&first.canonical).unwrap();
        prop_assert_eq!(&second.canonical, &first.canonical);
        prop_assert_eq!(&second.hash, &first.hash);
        prop_assert_eq!(second.kind, ExperimentKind::Ensemble);
    }

    #[test]
    fn hash_ignores_output_dir_but_not_the_seed(seed in 0u64..1_000_000, dir in "[a-z]{1,12}") {
        let base = ensemble_config(seed, 0.3, 16.0, 10, 11);
        let a = validate(&base).unwrap();
        let b = validate(&format!("output_dir = \"{dir}\"\n{base}")).unwrap();
        prop_assert_eq!(&a.hash, &b.hash);
        prop_assert_ne!(&a.canonical, &b.canonical);
        let c = validate(&ensemble_config(seed + 1, 0.3, 16.0, 10, 11)).unwrap();
        prop_assert_ne!(a.hash, c.hash);
    }
}

#[test]
fn defaults_are_written_out() {
    let v = validate("experiment = \"single-rate\"\n[solver]\ndimensionality = \"3d\"\n").unwrap();
    assert!(v.canonical.contains("resolution = 12.0"), "{}", v.canonical);
    assert!(v.canonical.contains("[single_rate]"));
    assert!(!v.canonical.contains("[ensemble]"));
    let twod = validate("experiment = \"single-rate\"\n").unwrap();
    assert!(twod.canonical.contains("resolution = 20.0"));
}

#[test]
fn seed_override_fills_a_missing_seed() {
    let text = "experiment = \"photon-stats\"\n";
    assert!(matches!(validate(text), Err(CliError::Config(_))));
    let o = Overrides {
        experiment: None,
        seed: Some(3),
    };
    let v = validate_str(text, Path::new("."), &o).unwrap();
    assert_eq!(v.seed(), 3);
}

#[test]
fn problems_are_collected_not_short_circuited() {
    let text = "experiment = \"bandgap\"\nseed = 1\n[geometry]\ncavity = true\n[geometry.lattice]\nr = 0.55\n\
                [solver]\ncourant = 0.9\n[bandgap]\nn_points = 2\n";
    let Err(CliError::Config(errors)) = validate(text) else {
        panic!("expected config errors");
    };
    assert!(errors.len() >= 4, "{errors:?}");
    assert!(errors.iter().any(|e| e.contains("r < a/2")));
    assert!(errors.iter().any(|e| e.contains("defect-free")));
}

#[test]
fn unknown_kind_is_a_usage_error() {
    assert!(matches!(
        validate("experiment = \"lasing\"\n"),
        Err(CliError::Usage(_))
    ));
    assert_eq!(
        validate("experiment = \"lasing\"\n")
            .unwrap_err()
            .exit_code(),
        2
    );
}
