//! End-to-end checks of the generator/pipeline loop: on noise-free
//! scenarios the detected milestones, labels, and lags must equal the
//! planted ground truth exactly.

use std::collections::BTreeMap;

use recovera_core::ingest::parse_dataset;
use recovera_core::milestones::compute_milestones;
use recovera_core::model::SequenceLabel;
use recovera_core::report::{run_pipeline, PipelineOptions};
use recovera_core::synth::{generate_scenario, GroundTruth, ScenarioSpec};
use recovera_core::trajectory::{assign_sequences, FitCell, LagMode};

fn spec(units: u32, seed: u64) -> ScenarioSpec {
    let json = format!(
        r#"{{
            "unit_count": {units},
            "landfall_date": "2017-08-25",
            "horizon_weeks": 14,
            "rng_seed": {seed}
        }}"#
    );
    serde_json::from_str(&json).expect("spec json")
}

fn generate(units: u32, seed: u64) -> (tempfile::TempDir, ScenarioSpec, GroundTruth) {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(units, seed);
    let truth = generate_scenario(&s, dir.path()).unwrap();
    (dir, s, truth)
}

#[test]
fn zero_noise_milestones_match_truth_exactly() {
    let (dir, s, truth) = generate(100, 7);
    let cfg = s.config();
    let ds = parse_dataset(dir.path(), &cfg).unwrap();
    assert_eq!(ds.roster.len(), truth.unit_count as usize);

    let (sets, _log) = compute_milestones(&ds, &cfg);
    let mut mismatches = 0;
    for (unit, unit_truth) in &truth.units {
        let got = &sets[unit];
        if got != &unit_truth.milestones {
            mismatches += 1;
            if mismatches <= 5 {
                eprintln!(
                    "unit {unit}: got {got:?}, planted {:?}",
                    unit_truth.milestones
                );
            }
        }
    }
    assert_eq!(mismatches, 0, "{mismatches}/100 units disagree with truth");
}

#[test]
fn zero_noise_labels_and_lags_match_truth() {
    let (dir, s, truth) = generate(100, 11);
    let cfg = s.config();
    let ds = parse_dataset(dir.path(), &cfg).unwrap();
    let (sets, _) = compute_milestones(&ds, &cfg);
    let assignments = assign_sequences(&sets, LagMode::Cumulative);
    let by_unit: BTreeMap<_, _> = assignments.iter().map(|a| (&a.unit, a)).collect();
    for (unit, unit_truth) in &truth.units {
        let a = by_unit[unit];
        assert_eq!(a.label, unit_truth.label, "unit {unit}");
        let lags = a.lags.expect("classified units have lags").as_array();
        for k in 0..3 {
            assert_eq!(lags[k], unit_truth.lags[k], "unit {unit} lag{}", k + 1);
        }
    }
}

#[test]
fn zero_noise_regression_recovers_planted_slopes() {
    let (dir, s, truth) = generate(700, 13);
    let cfg = s.config();
    let ds = parse_dataset(dir.path(), &cfg).unwrap();
    let bundle = run_pipeline(&ds, &cfg, PipelineOptions::default(), None).unwrap();
    let mut checked = 0;
    for label in SequenceLabel::SEQUENCES {
        let Some(row) = bundle.regression.rows.get(&label) else {
            continue;
        };
        let planted = &truth.planted_slopes[&label];
        if let FitCell::Ok { beta1, n, .. } = &row.lag2_on_lag1 {
            if *n >= 20 {
                assert!(
                    (beta1 - planted.lag2_on_lag1.slope).abs() <= 0.02,
                    "{label}: slope {beta1} vs planted {} (n = {n})",
                    planted.lag2_on_lag1.slope
                );
                checked += 1;
            }
        }
        if let FitCell::Ok { beta1, n, .. } = &row.lag3_on_lag2 {
            if *n >= 20 {
                assert!(
                    (beta1 - planted.lag3_on_lag2.slope).abs() <= 0.02,
                    "{label}: slope {beta1} vs planted {}",
                    planted.lag3_on_lag2.slope
                );
                checked += 1;
            }
        }
    }
    assert!(checked >= 8, "only {checked} fits had enough members");
}

#[test]
fn noisy_scenario_regression_within_tolerance() {
    // Lag noise plus 10% gross outliers: the robust fits still land within
    // +/-0.05 of the planted slopes, and evacuation-rate jitter leaves the
    // detectors close to truth.
    let dir = tempfile::tempdir().unwrap();
    let mut s = spec(700, 23);
    // Outlier units displace lag2 by +5 weeks; give the chain room.
    s.horizon_weeks = 26;
    s.noise.lag_sd = 0.1;
    s.noise.outlier_fraction = 0.1;
    s.noise.rate_sd = 0.005;
    let truth = generate_scenario(&s, dir.path()).unwrap();
    let cfg = s.config();
    let ds = parse_dataset(dir.path(), &cfg).unwrap();
    let bundle = run_pipeline(&ds, &cfg, PipelineOptions::default(), None).unwrap();

    let mut checked = 0;
    for label in SequenceLabel::SEQUENCES {
        let Some(row) = bundle.regression.rows.get(&label) else {
            continue;
        };
        let planted = &truth.planted_slopes[&label];
        for (cell, line) in [
            (&row.lag2_on_lag1, planted.lag2_on_lag1),
            (&row.lag3_on_lag2, planted.lag3_on_lag2),
        ] {
            if let FitCell::Ok { beta1, n, .. } = cell {
                if *n >= 40 {
                    assert!(
                        (beta1 - line.slope).abs() <= 0.05,
                        "{label}: noisy slope {beta1} vs planted {} (n = {n})",
                        line.slope
                    );
                    checked += 1;
                }
            }
        }
    }
    assert!(checked >= 6, "only {checked} noisy fits had enough members");

    // Evacuation jitter tolerance: most units still detect within a day.
    let (sets, _) = compute_milestones(&ds, &cfg);
    let mut close = 0;
    for (unit, t) in &truth.units {
        let planted = t.milestones.evacuation.unwrap();
        if let Some(got) = sets[unit].evacuation {
            if ((got - planted) * 7.0).abs() <= 1.0 + 1e-9 {
                close += 1;
            }
        }
    }
    assert!(
        close >= 630,
        "evacuation within a day for only {close}/700 units"
    );
}

#[test]
fn planted_income_correlation_recovered() {
    let (dir, s, truth) = generate(300, 17);
    let cfg = s.config();
    let ds = parse_dataset(dir.path(), &cfg).unwrap();
    let bundle = run_pipeline(&ds, &cfg, PipelineOptions::default(), None).unwrap();
    let corr = bundle.correlations.expect("enough complete units");
    // income is variable 4, lag1 variable 0.
    let r = corr.r[4][0].expect("income/lag1 correlation defined");
    assert!(
        (r - truth.income_lag_correlation).abs() <= 0.1,
        "recovered r {r} vs planted {}",
        truth.income_lag_correlation
    );
}

#[test]
fn generator_output_passes_ingest_validation() {
    // Schema closure: whatever the generator emits, the parser accepts.
    for seed in [1u64, 2, 3] {
        let (dir, s, _) = generate(12, seed);
        let cfg = s.config();
        parse_dataset(dir.path(), &cfg).unwrap();
    }
}
