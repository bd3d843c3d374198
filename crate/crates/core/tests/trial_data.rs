use std::path::PathBuf;

use proptest::prelude::*;
use sweetspot::trial_data::{read_trial_csv, write_trial_csv, CovariateColumns, IdColumn};
use sweetspot::{
    load_trial_csv, simulate_null_trial, simulate_sweetspot_trial, CsvSchema, Error, NullSimConfig, OutcomeKind,
    SpotDefinition, SweetSpotSimConfig,
};

fn example_file() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/example_null.csv")
}

#[test]
fn bundled_example_round_trips() {
    let path = example_file();
    let ds = load_trial_csv(&path, &CsvSchema::synthetic()).unwrap();
    let sim = simulate_null_trial(&NullSimConfig { seed: 7, ..Default::default() }).unwrap();
    assert_eq!(ds, sim.dataset);

    let mut written = Vec::new();
    write_trial_csv(&ds, &mut written).unwrap();
    assert_eq!(written, std::fs::read(&path).unwrap());
    assert_eq!(read_trial_csv(written.as_slice(), &CsvSchema::synthetic()).unwrap(), ds);
}

#[test]
fn null_trial_has_requested_shape() {
    for seed in 0..5 {
        let t = simulate_null_trial(&NullSimConfig { seed, ..Default::default() }).unwrap();
        assert_eq!(t.dataset.len(), 400);
        assert_eq!(t.dataset.n_covariates(), 10);
        assert_eq!(t.dataset.outcome_kind(), OutcomeKind::Binary);
        assert!(t.truth.outcome_prob.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

#[test]
fn zero_signal_trial_is_a_fair_coin() {
    let cfg = NullSimConfig {
        base_treatment_effect: 0.0,
        noise_sd: 0.0,
        coefficient_override: Some(vec![0.0; 10]),
        seed: 3,
        ..Default::default()
    };
    let t = simulate_null_trial(&cfg).unwrap();
    assert!(t.truth.outcome_prob.iter().all(|&p| p == 0.5));
}

#[test]
fn treated_rate_is_lower_by_the_unclamped_effect() {
    let (mut diff, mut clamp_free) = (0.0, 0.0);
    let seeds = 200;
    for seed in 0..seeds {
        let t = simulate_null_trial(&NullSimConfig { seed, ..Default::default() }).unwrap();
        let rate = |treated: bool| {
            let ys: Vec<f64> = t.dataset.patients().iter().filter(|p| p.treated == treated).map(|p| p.outcome).collect();
            ys.iter().sum::<f64>() / ys.len() as f64
        };
        diff += rate(false) - rate(true);
        clamp_free += 1.0 - t.truth.clamp_count as f64 / t.dataset.n_treated() as f64;
    }
    let (diff, clamp_free) = (diff / seeds as f64, clamp_free / seeds as f64);
    assert!(diff > 0.0);
    assert!((diff - 0.05 * clamp_free).abs() <= 0.02, "difference {diff}, clamp-free {clamp_free}");
}

#[test]
fn spot_covers_the_requested_fraction() {
    for def in [SpotDefinition::SeverityQuantileBand, SpotDefinition::CovariateRegion] {
        let mut fraction = 0.0;
        for seed in 0..100 {
            let cfg = SweetSpotSimConfig {
                base: NullSimConfig { seed, ..Default::default() },
                spot_fraction: 0.3,
                spot_definition: def,
                ..Default::default()
            };
            let t = simulate_sweetspot_trial(&cfg).unwrap();
            fraction += t.truth.in_spot.iter().filter(|&&m| m).count() as f64 / t.dataset.len() as f64;
        }
        fraction /= 100.0;
        assert!((0.25..=0.35).contains(&fraction), "{def:?}: {fraction}");
    }
}

#[test]
fn benefit_is_larger_inside_the_spot() {
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for seed in 0..100 {
        let cfg = SweetSpotSimConfig {
            base: NullSimConfig { seed, ..Default::default() },
            extra_effect: 0.3,
            ..Default::default()
        };
        let t = simulate_sweetspot_trial(&cfg).unwrap();
        for (in_spot, want) in [(true, &mut inside), (false, &mut outside)] {
            let arm_mean = |treated: bool| {
                let ys: Vec<f64> = t
                    .dataset
                    .patients()
                    .iter()
                    .zip(&t.truth.in_spot)
                    .filter(|(p, &m)| p.treated == treated && m == in_spot)
                    .map(|(p, _)| p.outcome)
                    .collect();
                ys.iter().sum::<f64>() / ys.len() as f64
            };
            want.push(arm_mean(false) - arm_mean(true));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&inside) > mean(&outside) + 0.1, "{} vs {}", mean(&inside), mean(&outside));
}

#[test]
fn generators_are_pure_functions_of_their_config() {
    let cfg = SweetSpotSimConfig {
        base: NullSimConfig { seed: 99, ..Default::default() },
        spot_definition: SpotDefinition::CovariateRegion,
        ..Default::default()
    };
    let a = simulate_sweetspot_trial(&cfg).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap()
        .install(|| simulate_sweetspot_trial(&cfg).unwrap());
    assert_eq!(a, b);
    let other = simulate_sweetspot_trial(&SweetSpotSimConfig { base: NullSimConfig { seed: 100, ..cfg.base.clone() }, ..cfg.clone() }).unwrap();
    assert_ne!(a.dataset, other.dataset);
}

#[test]
fn extra_effect_zero_reproduces_the_null_generator() {
    let base = NullSimConfig { seed: 11, ..Default::default() };
    let null = simulate_null_trial(&base).unwrap();
    let spot = simulate_sweetspot_trial(&SweetSpotSimConfig { base, extra_effect: 0.0, ..Default::default() }).unwrap();
    assert_eq!(null.dataset, spot.dataset);
}

#[test]
fn csv_errors_name_the_problem() {
    let schema = CsvSchema::new("treat", "y", CovariateColumns::Named(vec!["a".into(), "b".into()]));
    let missing = read_trial_csv("treat,y,a\n1,0,0.5\n0,1,0.1\n".as_bytes(), &schema).unwrap_err();
    assert!(matches!(&missing, Error::MissingColumn(c) if c == "b"), "{missing:?}");

    let parse = read_trial_csv("treat,y,a,b\n1,0,0.5,1\n0,1,abc,2\n".as_bytes(), &schema).unwrap_err();
    assert!(matches!(&parse, Error::Parse { row: 2, column, .. } if column == "a"), "{parse:?}");

    let treat = read_trial_csv("treat,y,a,b\n2,0,0.5,1\n0,1,0.1,2\n".as_bytes(), &schema).unwrap_err();
    assert!(treat.is_validation());

    let nan = read_trial_csv("treat,y,a,b\n1,0,NaN,1\n0,1,0.1,2\n".as_bytes(), &schema).unwrap_err();
    assert!(matches!(nan, Error::Validation(_)));

    let inf = read_trial_csv("treat,y,a,b\n1,0,inf,1\n0,1,0.1,2\n".as_bytes(), &schema).unwrap_err();
    assert!(matches!(inf, Error::Validation(_)));
}

#[test]
fn row_order_and_ids_are_preserved() {
    let schema = CsvSchema { id_col: IdColumn::Named("pid".into()), ..CsvSchema::new("t", "y", CovariateColumns::Rest) };
    let ds = read_trial_csv("pid,x,t,y\nz9,1.5,1,0\na1,-2,0,1\nm3,0,1,1\n".as_bytes(), &schema).unwrap();
    let ids: Vec<&str> = ds.patients().iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, ["z9", "a1", "m3"]);
    assert_eq!(ds.covariate_names(), ["x"]);
    assert_eq!(ds.patients()[1].covariates, vec![-2.0]);
}

proptest! {
    #[test]
    fn write_then_load_is_identity(seed in 0u64..1000, n in 4usize..40, p in 1usize..5) {
        let cfg = NullSimConfig { seed, n_patients: n, n_covariates: p, ..Default::default() };
        // tiny trials can miss an arm; those are rejected by validation
        let Ok(t) = simulate_null_trial(&cfg) else { return Ok(()); };
        let mut buf = Vec::new();
        write_trial_csv(&t.dataset, &mut buf).unwrap();
        prop_assert_eq!(read_trial_csv(buf.as_slice(), &CsvSchema::synthetic()).unwrap(), t.dataset);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..300)) {
        let _ = read_trial_csv(bytes.as_slice(), &CsvSchema::synthetic());
    }

    #[test]
    fn mangled_tables_never_panic(cells in prop::collection::vec("[-0-9a-z.,\"\n ]{0,6}", 0..30)) {
        let mut text = String::from("id,treat,outcome,x1\n");
        text.push_str(&cells.join(","));
        let _ = read_trial_csv(text.as_bytes(), &CsvSchema::synthetic());
    }
}
