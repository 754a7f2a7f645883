//! Seeded scenario generator with planted ground truth, plus the
//! independent brute-force oracles the test suite checks the pipeline
//! against. Generation is single-threaded and byte-deterministic for a
//! fixed seed.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    days_to_weeks, validate_config, MilestoneKind, MilestoneSet, SequenceLabel, StudyConfig, UnitId,
};

/// Smallest index `i` such that `predicate` holds at `i..i+run_length`,
/// found by exhaustive scan. The reference implementation every detector's
/// minimality is checked against; deliberately naive.
pub fn scan_oracle<T>(
    series: &[T],
    predicate: impl Fn(&T) -> bool,
    run_length: usize,
) -> Option<usize> {
    if run_length == 0 || series.len() < run_length {
        return None;
    }
    'outer: for start in 0..=(series.len() - run_length) {
        for item in &series[start..start + run_length] {
            if !predicate(item) {
                continue 'outer;
            }
        }
        return Some(start);
    }
    None
}

/// Closed-form least-squares line fit, the reference the Huber fit is
/// compared against when no residual is flagged as an outlier.
pub fn ols_oracle(x: &[f64], y: &[f64]) -> Result<(f64, f64), SynthError> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return Err(SynthError::ConstantRegressor);
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if sxx == 0.0 {
        return Err(SynthError::ConstantRegressor);
    }
    let beta1 = sxy / sxx;
    let beta0 = my - beta1 * mx;
    Ok((beta0, beta1))
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible scenario spec: {0}")]
    InfeasibleSpec(String),
    #[error("regressor is constant")]
    ConstantRegressor,
    #[error("io error writing scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot encode ground truth: {0}")]
    Json(#[from] serde_json::Error),
}

/// Noise model applied on top of the clean planted series.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Replace each clean visit count by a Poisson draw with that mean.
    #[serde(default)]
    pub poisson_visits: bool,
    /// Gaussian sd added to evacuation rates before integer rounding.
    #[serde(default)]
    pub rate_sd: f64,
    /// Gaussian sd (weeks) added to planted lag2/lag3 targets.
    #[serde(default)]
    pub lag_sd: f64,
    /// Fraction of units whose lag2 is grossly displaced (+5 weeks).
    #[serde(default)]
    pub outlier_fraction: f64,
}

/// Linear pair (intercept, slope) tying one lag to the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedLine {
    pub intercept: f64,
    pub slope: f64,
}

/// Per-sequence regression structure planted into the lags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedSlopes {
    pub lag2_on_lag1: PlantedLine,
    pub lag3_on_lag2: PlantedLine,
}

impl Default for PlantedSlopes {
    fn default() -> Self {
        // Slopes >= 1 keep lag1 <= lag2 <= lag3 structural across the
        // sampled lag1 range.
        PlantedSlopes {
            lag2_on_lag1: PlantedLine {
                intercept: 0.6,
                slope: 1.25,
            },
            lag3_on_lag2: PlantedLine {
                intercept: 0.5,
                slope: 1.15,
            },
        }
    }
}

/// Explicit per-unit plant overriding the sampling distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedUnit {
    pub label: SequenceLabel,
    /// Evacuation recovery day offset since landfall.
    pub evac_day: u32,
    pub lag1_weeks: f64,
}

/// Ramp shape of the pre-recovery visit series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampShape {
    #[default]
    Linear,
    Logistic,
}

/// Everything a scenario needs to be reproduced from a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub unit_count: u32,
    pub landfall_date: NaiveDate,
    pub horizon_weeks: u32,
    pub rng_seed: u64,
    /// Mean daily visits per (unit, category) before landfall.
    #[serde(default = "default_visit_level")]
    pub visit_baseline_level: u32,
    #[serde(default)]
    pub ramp: RampShape,
    /// Tracked users per unit in the evacuation table.
    #[serde(default = "default_evac_users")]
    pub evac_user_count: u32,
    /// Baseline evacuation rate; multiplied by `evac_user_count` it must
    /// stay integral to keep the planted series exact.
    #[serde(default = "default_evac_rate")]
    pub evac_baseline_rate: f64,
    /// Residents per unit in the weekly home-tag table.
    #[serde(default = "default_moveout_users")]
    pub moveout_users_per_unit: u32,
    /// Baseline weekly movers per unit.
    #[serde(default = "default_moveout_movers")]
    pub moveout_baseline_movers: u32,
    /// Relative sequence frequencies used when `planted_units` is absent.
    #[serde(default = "default_mix")]
    pub sequence_mix: BTreeMap<SequenceLabel, f64>,
    /// Sampled evacuation-day range (days since landfall), inclusive.
    #[serde(default = "default_evac_days")]
    pub evac_day_range: (u32, u32),
    /// Sampled lag1 range in weeks, inclusive.
    #[serde(default = "default_lag1_range")]
    pub lag1_weeks_range: (f64, f64),
    #[serde(default)]
    pub planted_slopes: BTreeMap<SequenceLabel, PlantedSlopes>,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Target Pearson correlation between income and lag1.
    #[serde(default = "default_income_corr")]
    pub income_lag_correlation: f64,
    #[serde(default = "default_income_mean")]
    pub income_mean: f64,
    #[serde(default = "default_income_sd")]
    pub income_sd: f64,
    /// Claims per unit, inclusive range.
    #[serde(default = "default_claims")]
    pub claims_per_unit_range: (u32, u32),
    /// Explicit per-unit plants; when present, lengths must equal
    /// `unit_count`.
    #[serde(default)]
    pub planted_units: Option<Vec<PlantedUnit>>,
    /// Study configuration the scenario is built against; defaults to the
    /// standard calendar derived from `landfall_date`.
    #[serde(default)]
    pub study_config: Option<StudyConfig>,
}

fn default_visit_level() -> u32 {
    1000
}
fn default_evac_users() -> u32 {
    1000
}
fn default_evac_rate() -> f64 {
    0.2
}
fn default_moveout_users() -> u32 {
    40
}
fn default_moveout_movers() -> u32 {
    4
}
fn default_evac_days() -> (u32, u32) {
    (2, 12)
}
fn default_lag1_range() -> (f64, f64) {
    (0.5, 4.5)
}
fn default_income_corr() -> f64 {
    -0.5
}
fn default_income_mean() -> f64 {
    60_000.0
}
fn default_income_sd() -> f64 {
    15_000.0
}
fn default_claims() -> (u32, u32) {
    (1, 3)
}
fn default_mix() -> BTreeMap<SequenceLabel, f64> {
    SequenceLabel::SEQUENCES
        .into_iter()
        .zip([0.23, 0.19, 0.18, 0.17, 0.12, 0.11])
        .collect()
}

impl ScenarioSpec {
    pub fn load_json(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn config(&self) -> StudyConfig {
        self.study_config
            .clone()
            .unwrap_or_else(|| StudyConfig::for_landfall(self.landfall_date))
    }
}

/// Per-unit planted truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTruth {
    pub milestones: MilestoneSet,
    pub label: SequenceLabel,
    pub lags: [f64; 3],
}

/// What the generator planted, exactly consistent with the emitted CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub unit_count: u32,
    pub landfall_date: NaiveDate,
    pub horizon_weeks: u32,
    pub rng_seed: u64,
    pub units: BTreeMap<UnitId, UnitTruth>,
    pub planted_slopes: BTreeMap<SequenceLabel, PlantedSlopes>,
    pub income_lag_correlation: f64,
}

impl GroundTruth {
    pub fn load_json(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

struct UnitPlan {
    unit: UnitId,
    evac_day: u32,
    /// Recovery day offsets since landfall for the two activity categories.
    essential_day: u32,
    nonessential_day: u32,
    /// Whole weeks since the landfall week.
    moveout_week: u32,
    truth: UnitTruth,
}

/// Generates the five CSV tables plus `ground_truth.json` and a matching
/// `config.json` into `out_dir`. Identical spec and seed give byte-identical
/// files.
pub fn generate_scenario(spec: &ScenarioSpec, out_dir: &Path) -> Result<GroundTruth, SynthError> {
    let cfg = spec.config();
    validate_spec(spec, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);

    let plans = plan_units(spec, &cfg, &mut rng)?;

    std::fs::create_dir_all(out_dir)?;
    write_visits(spec, &cfg, &plans, out_dir, &mut rng)?;
    write_evac(spec, &cfg, &plans, out_dir, &mut rng)?;
    write_hometags(spec, &cfg, &plans, out_dir, &mut rng)?;
    write_claims(spec, &plans, out_dir, &mut rng)?;
    write_income(spec, &plans, out_dir, &mut rng)?;

    let truth = GroundTruth {
        unit_count: spec.unit_count,
        landfall_date: spec.landfall_date,
        horizon_weeks: spec.horizon_weeks,
        rng_seed: spec.rng_seed,
        units: plans
            .iter()
            .map(|p| (p.unit.clone(), p.truth.clone()))
            .collect(),
        planted_slopes: effective_slopes(spec),
        income_lag_correlation: spec.income_lag_correlation,
    };

    let gt_json = serde_json::to_string_pretty(&truth)?;
    std::fs::write(out_dir.join("ground_truth.json"), gt_json)?;
    let cfg_json = serde_json::to_string_pretty(&cfg)?;
    std::fs::write(out_dir.join("config.json"), cfg_json)?;
    Ok(truth)
}

fn effective_slopes(spec: &ScenarioSpec) -> BTreeMap<SequenceLabel, PlantedSlopes> {
    SequenceLabel::SEQUENCES
        .into_iter()
        .map(|l| (l, spec.planted_slopes.get(&l).copied().unwrap_or_default()))
        .collect()
}

fn validate_spec(spec: &ScenarioSpec, cfg: &StudyConfig) -> Result<(), SynthError> {
    let fail = |msg: String| Err(SynthError::InfeasibleSpec(msg));
    if spec.unit_count < 2 {
        return fail("unit_count must be >= 2 so movers have a destination".into());
    }
    if !(0.0..=0.5).contains(&spec.noise.outlier_fraction) {
        return fail(format!(
            "outlier_fraction {} outside [0, 0.5]",
            spec.noise.outlier_fraction
        ));
    }
    if spec.horizon_weeks < 4 {
        return fail("horizon_weeks must be >= 4".into());
    }
    let horizon_days = spec.horizon_weeks * 7;
    if spec.evac_day_range.1 + cfg.evac_run_days > horizon_days
        || spec.evac_day_range.0 > spec.evac_day_range.1
    {
        return fail("evac_day_range does not fit the horizon".into());
    }
    if let Some(units) = &spec.planted_units {
        if units.len() != spec.unit_count as usize {
            return fail(format!(
                "planted_units has {} entries for unit_count {}",
                units.len(),
                spec.unit_count
            ));
        }
        for (i, u) in units.iter().enumerate() {
            if u.label == SequenceLabel::Other {
                return fail(format!("planted unit {i}: label must be Seq1..Seq6"));
            }
            if u.evac_day + cfg.evac_run_days > horizon_days {
                return fail(format!("planted unit {i}: evac_day beyond horizon"));
            }
            if u.lag1_weeks <= 0.0 {
                return fail(format!("planted unit {i}: lag1 must be positive"));
            }
        }
    }
    if spec.moveout_baseline_movers == 0
        || spec.moveout_baseline_movers * 4 > spec.moveout_users_per_unit
    {
        return fail("moveout movers must satisfy 0 < 4*movers <= users".into());
    }
    if spec.evac_baseline_rate <= 0.0 || spec.evac_baseline_rate > 0.45 {
        return fail("evac_baseline_rate must lie in (0, 0.45]".into());
    }
    let base_evac = spec.evac_baseline_rate * spec.evac_user_count as f64;
    if (base_evac - base_evac.round()).abs() > 1e-9 {
        return fail("evac_baseline_rate * evac_user_count must be integral".into());
    }
    if validate_config(cfg).is_err() {
        return fail("embedded study_config is invalid".into());
    }
    Ok(())
}

/// The weekly grid anchor: the move-out baseline window start.
fn anchor_week(cfg: &StudyConfig) -> NaiveDate {
    cfg.moveout_baseline_window.start
}

/// Index of the grid week containing landfall.
fn landfall_week_index(cfg: &StudyConfig) -> i64 {
    cfg.landfall_date
        .signed_duration_since(anchor_week(cfg))
        .num_days()
        / 7
}

fn unit_name(i: u32, width: usize) -> UnitId {
    UnitId::new(format!("U{i:0width$}"))
}

fn plan_units(
    spec: &ScenarioSpec,
    cfg: &StudyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<UnitPlan>, SynthError> {
    let slopes = effective_slopes(spec);
    let horizon_days = (spec.horizon_weeks * 7) as i64;
    let width = (spec.unit_count as f64).log10().ceil().max(4.0) as usize;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    // Deadline in days since landfall; evacuation plants must respect it.
    let deadline_days = cfg
        .evac_deadline
        .signed_duration_since(cfg.landfall_date)
        .num_days();

    let labels: Vec<SequenceLabel> = match &spec.planted_units {
        Some(units) => units.iter().map(|u| u.label).collect(),
        None => {
            let weights: Vec<(SequenceLabel, f64)> = spec
                .sequence_mix
                .iter()
                .filter(|(_, w)| **w > 0.0)
                .map(|(l, w)| (*l, *w))
                .collect();
            if weights.is_empty() {
                return Err(SynthError::InfeasibleSpec("sequence_mix is empty".into()));
            }
            let total: f64 = weights.iter().map(|(_, w)| w).sum();
            (0..spec.unit_count)
                .map(|_| {
                    let mut pick = rng.random::<f64>() * total;
                    for (l, w) in &weights {
                        pick -= w;
                        if pick <= 0.0 {
                            return *l;
                        }
                    }
                    weights.last().unwrap().0
                })
                .collect()
        }
    };

    let mut plans = Vec::with_capacity(spec.unit_count as usize);
    for i in 0..spec.unit_count {
        let unit = unit_name(i, width);
        let label = labels[i as usize];
        let seq_slopes = slopes[&label];

        let (evac_day, lag1_target) = match &spec.planted_units {
            Some(units) => {
                let u = &units[i as usize];
                (u.evac_day, u.lag1_weeks)
            }
            None => {
                let day = rng.random_range(spec.evac_day_range.0..=spec.evac_day_range.1);
                let lag1 = rng.random_range(spec.lag1_weeks_range.0..=spec.lag1_weeks_range.1);
                (day, lag1)
            }
        };
        if (evac_day as i64) >= deadline_days {
            return Err(SynthError::InfeasibleSpec(format!(
                "unit {unit}: planted evacuation day {evac_day} is past the deadline"
            )));
        }

        // Per-unit noise folds into the chain intercepts so the move-out
        // grid constraint can still be solved exactly through the chain.
        let mut eps1 = 0.0;
        let mut eps2 = 0.0;
        if spec.noise.lag_sd > 0.0 {
            eps1 = spec.noise.lag_sd * normal.sample(rng);
            eps2 = spec.noise.lag_sd * normal.sample(rng);
        }
        if spec.noise.outlier_fraction > 0.0 && rng.random::<f64>() < spec.noise.outlier_fraction {
            eps1 += 5.0;
        }
        let chain = [
            PlantedLine {
                intercept: seq_slopes.lag2_on_lag1.intercept + eps1,
                slope: seq_slopes.lag2_on_lag1.slope,
            },
            PlantedLine {
                intercept: seq_slopes.lag3_on_lag2.intercept + eps2,
                slope: seq_slopes.lag3_on_lag2.slope,
            },
        ];

        let plan = snap_plan(
            unit,
            label,
            evac_day,
            lag1_target,
            chain,
            horizon_days,
            spec.horizon_weeks,
            cfg,
        )?;
        plans.push(plan);
    }
    Ok(plans)
}

/// Places the three post-evacuation milestones on the grids the detectors
/// can actually resolve: sevenths of a week for the activity milestones
/// and whole grid weeks for move-out. The move-out grid constraint is
/// solved exactly through the affine lag chain (back-solving earlier lags,
/// forward-solving later ones), so the planted linear relations survive in
/// the emitted data up to day-resolution rounding.
fn snap_plan(
    unit: UnitId,
    label: SequenceLabel,
    evac_day: u32,
    lag1_target: f64,
    chain: [PlantedLine; 2],
    horizon_days: i64,
    horizon_weeks: u32,
    cfg: &StudyConfig,
) -> Result<UnitPlan, SynthError> {
    let tail = label.tail_order().expect("validated Seq1..Seq6");
    let move_pos = tail
        .iter()
        .position(|k| *k == MilestoneKind::MoveOut)
        .expect("every sequence places move-out");
    let t1 = days_to_weeks(evac_day as i64);

    // Noiseless target chain anchored at the sampled lag1.
    let mut targets = [lag1_target, 0.0, 0.0];
    for k in 1..3 {
        targets[k] = chain[k - 1].intercept + chain[k - 1].slope * targets[k - 1];
    }

    let week_min = (evac_day as i64 / 7) + 1;
    let week_max = horizon_weeks as i64 - cfg.steady_state_run_weeks as i64;
    let week0 = ((t1 + targets[move_pos]).round() as i64).max(week_min);

    'week: for week in week0..=week_max {
        // Solve the chain exactly against the move-out constraint.
        let mut lags = targets;
        lags[move_pos] = week as f64 - t1;
        for k in (0..move_pos).rev() {
            lags[k] = (lags[k + 1] - chain[k].intercept) / chain[k].slope;
        }
        for k in (move_pos + 1)..3 {
            lags[k] = chain[k - 1].intercept + chain[k - 1].slope * lags[k - 1];
        }
        if lags[0] <= 0.0 {
            continue;
        }

        let mut essential_day = 0u32;
        let mut nonessential_day = 0u32;
        let mut times = [0f64; 3];
        let mut prev = t1;
        for (pos, kind) in tail.iter().enumerate() {
            let time = match kind {
                MilestoneKind::MoveOut => {
                    if week as f64 <= prev {
                        continue 'week;
                    }
                    week as f64
                }
                activity => {
                    let mut day = ((t1 + lags[pos]) * 7.0).round().max(0.0) as i64;
                    while days_to_weeks(day) <= prev {
                        day += 1;
                    }
                    if day + cfg.activity_run_days as i64 > horizon_days {
                        return Err(SynthError::InfeasibleSpec(format!(
                            "unit {unit}: activity day {day} beyond horizon"
                        )));
                    }
                    match activity {
                        MilestoneKind::Essential => essential_day = day as u32,
                        MilestoneKind::NonEssential => nonessential_day = day as u32,
                        _ => unreachable!(),
                    }
                    days_to_weeks(day)
                }
            };
            times[pos] = time;
            prev = time;
        }

        let mut milestones = MilestoneSet::default();
        milestones.set(MilestoneKind::Evacuation, Some(t1));
        for (pos, kind) in tail.iter().enumerate() {
            milestones.set(*kind, Some(times[pos]));
        }
        let lags = [times[0] - t1, times[1] - t1, times[2] - t1];
        return Ok(UnitPlan {
            unit,
            evac_day,
            essential_day,
            nonessential_day,
            moveout_week: week as u32,
            truth: UnitTruth {
                milestones,
                label,
                lags,
            },
        });
    }
    Err(SynthError::InfeasibleSpec(format!(
        "unit {unit}: no feasible move-out week within the horizon"
    )))
}

/// Clean pre-recovery ramp value for offset `d` of `r` ramp days, rising
/// from `lo` to `hi` fractions of the baseline. Strictly below the
/// detection threshold by construction (`hi` < threshold).
fn ramp_fraction(shape: RampShape, d: u32, r: u32, lo: f64, hi: f64) -> f64 {
    if r == 0 {
        return hi;
    }
    let x = d as f64 / r as f64;
    match shape {
        RampShape::Linear => lo + (hi - lo) * x,
        RampShape::Logistic => {
            let s = |t: f64| 1.0 / (1.0 + (-12.0 * (t - 0.5)).exp());
            let (s0, s1) = (s(0.0), s(1.0));
            lo + (hi - lo) * ((s(x) - s0) / (s1 - s0))
        }
    }
}

fn write_visits(
    spec: &ScenarioSpec,
    cfg: &StudyConfig,
    plans: &[UnitPlan],
    out_dir: &Path,
    rng: &mut ChaCha8Rng,
) -> Result<(), SynthError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(out_dir.join("visits.csv"))?);
    writeln!(w, "date,unit,category,visits")?;
    let start = cfg.visit_window().start;
    let end = cfg.landfall_date + chrono::Duration::days((spec.horizon_weeks * 7 - 1) as i64);
    let level = spec.visit_baseline_level as f64;

    let sample = |clean: f64, rng: &mut ChaCha8Rng| -> u64 {
        if spec.noise.poisson_visits && clean > 0.0 {
            Poisson::new(clean)
                .map(|p| p.sample(rng) as u64)
                .unwrap_or(0)
        } else {
            clean.round() as u64
        }
    };

    let mut date = start;
    while date <= end {
        let day_offset = date.signed_duration_since(cfg.landfall_date).num_days();
        for plan in plans {
            for (category, rec_day) in [
                ("essential", plan.essential_day),
                ("nonessential", plan.nonessential_day),
            ] {
                let clean = if day_offset < 0 || (day_offset as u32) >= rec_day {
                    level
                } else {
                    // Strictly below the 90% threshold: ramp tops out at 75%.
                    level * ramp_fraction(spec.ramp, day_offset as u32, rec_day, 0.30, 0.75)
                };
                let visits = sample(clean, rng);
                writeln!(w, "{date},{unit},{category},{visits}", unit = plan.unit)?;
            }
        }
        date += chrono::Duration::days(1);
    }
    w.flush()?;
    Ok(())
}

fn write_evac(
    spec: &ScenarioSpec,
    cfg: &StudyConfig,
    plans: &[UnitPlan],
    out_dir: &Path,
    rng: &mut ChaCha8Rng,
) -> Result<(), SynthError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(out_dir.join("evac.csv"))?);
    writeln!(w, "date,unit,evacuees,users")?;
    let users = spec.evac_user_count;
    let base = (spec.evac_baseline_rate * users as f64).round() as i64;
    // Displaced rate: double the baseline (relative deviation 1.0 >> 0.1).
    let displaced = (2 * base).min(users as i64);
    let start = cfg.evac_baseline_window.start;
    let end = cfg.landfall_date + chrono::Duration::days((spec.horizon_weeks * 7 - 1) as i64);
    let normal = Normal::new(0.0, spec.noise.rate_sd.max(0.0)).ok();

    let mut date = start;
    while date <= end {
        let day_offset = date.signed_duration_since(cfg.landfall_date).num_days();
        for plan in plans {
            let clean = if day_offset < 0 || (day_offset as u32) >= plan.evac_day {
                base
            } else {
                displaced
            };
            let evacuees = match (&normal, spec.noise.rate_sd > 0.0) {
                (Some(n), true) => {
                    let jitter = n.sample(rng) * users as f64;
                    (clean as f64 + jitter).round().clamp(0.0, users as f64) as i64
                }
                _ => clean,
            };
            writeln!(w, "{date},{unit},{evacuees},{users}", unit = plan.unit)?;
        }
        date += chrono::Duration::days(1);
    }
    w.flush()?;
    Ok(())
}

/// Move-out percent-change pattern (relative to the baseline mover count):
/// disturbed weeks alternate between two far-apart levels, then the series
/// holds the last disturbed level from the planted week onward, making the
/// planted week the first whose change from its predecessor is small.
fn movers_for_week(week_rel_landfall: i64, planted_week: u32, base: u32) -> u32 {
    let hi = base * 3; // +200 percent
    let mid = base + base / 2 + 1; // comfortably > 10 points away from hi and 0
    if week_rel_landfall < 0 {
        return base;
    }
    let w = week_rel_landfall as u32;
    if planted_week == 0 {
        return base;
    }
    if w < planted_week {
        if w % 2 == 0 {
            hi
        } else {
            mid
        }
    } else {
        // Steady at the last disturbed level.
        if (planted_week - 1) % 2 == 0 {
            hi
        } else {
            mid
        }
    }
}

fn write_hometags(
    spec: &ScenarioSpec,
    cfg: &StudyConfig,
    plans: &[UnitPlan],
    out_dir: &Path,
    rng: &mut ChaCha8Rng,
) -> Result<(), SynthError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(out_dir.join("hometags.csv"))?);
    writeln!(w, "week_start,user,unit")?;

    let anchor = anchor_week(cfg);
    let landfall_week = landfall_week_index(cfg);
    let last_week = landfall_week + spec.horizon_weeks as i64 - 1;
    let n_units = plans.len();
    let per_unit = spec.moveout_users_per_unit as usize;

    // resident[u] = indices of users currently homed in unit u.
    let mut home: Vec<usize> = (0..n_units * per_unit).map(|uid| uid / per_unit).collect();
    let user_name = |uid: usize| format!("p{uid:06}");

    // Week 0: observe every user in their home unit.
    for (uid, &hu) in home.iter().enumerate() {
        writeln!(
            w,
            "{anchor},{user},{unit}",
            user = user_name(uid),
            unit = plans[hu].unit
        )?;
    }

    let mut final_week_pinned = false;
    for week in 1..=last_week {
        let week_start = anchor + chrono::Duration::days(7 * week);
        // Mover counts per unit this week.
        let counts: Vec<u32> = plans
            .iter()
            .map(|p| {
                movers_for_week(
                    week - landfall_week,
                    p.moveout_week,
                    spec.moveout_baseline_movers,
                )
            })
            .collect();

        // Pick movers per unit, then rotate destinations so every unit
        // receives exactly as many users as it sends and nobody "moves"
        // to their current unit. One pass over `home` builds the
        // per-unit resident index.
        let mut residents_of: Vec<Vec<usize>> = vec![Vec::with_capacity(per_unit); n_units];
        for (uid, &hu) in home.iter().enumerate() {
            residents_of[hu].push(uid);
        }
        let mut movers: Vec<usize> = Vec::new();
        let mut src_unit: Vec<usize> = Vec::new();
        for (u, &k) in counts.iter().enumerate() {
            let residents = &residents_of[u];
            let k = (k as usize).min(residents.len());
            let chosen = rand::seq::index::sample(rng, residents.len(), k);
            for idx in chosen.iter() {
                movers.push(residents[idx]);
                src_unit.push(u);
            }
        }
        let total = movers.len();
        if total > 0 {
            let max_block = counts.iter().map(|&c| c as usize).max().unwrap_or(0);
            if max_block * 2 > total {
                return Err(SynthError::InfeasibleSpec(
                    "mover pattern too concentrated to route between units".into(),
                ));
            }
            for i in 0..total {
                let dest = src_unit[(i + max_block) % total];
                debug_assert_ne!(dest, src_unit[i]);
                let uid = movers[i];
                home[uid] = dest;
                writeln!(
                    w,
                    "{week_start},{user},{unit}",
                    user = user_name(uid),
                    unit = plans[dest].unit
                )?;
            }
            if week == last_week {
                final_week_pinned = true;
            }
        }
    }
    // Pin the grid end when the final week had no mover rows.
    if !final_week_pinned {
        let final_week = anchor + chrono::Duration::days(7 * last_week);
        writeln!(
            w,
            "{final_week},{user},{unit}",
            user = user_name(0),
            unit = plans[home[0]].unit
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_claims(
    spec: &ScenarioSpec,
    plans: &[UnitPlan],
    out_dir: &Path,
    rng: &mut ChaCha8Rng,
) -> Result<(), SynthError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(out_dir.join("claims.csv"))?);
    writeln!(w, "claim_id,source,building_id,unit,damage,property_value")?;
    let mut claim_no = 0u32;
    for (i, plan) in plans.iter().enumerate() {
        let n = rng.random_range(spec.claims_per_unit_range.0..=spec.claims_per_unit_range.1);
        for b in 0..n {
            let building = format!("B{i:05}_{b}");
            let source = if rng.random::<f64>() < 0.7 {
                "NFIP"
            } else {
                "IA"
            };
            let value = rng.random_range(120_000..=600_000);
            let ratio = rng.random_range(0.05..0.90);
            let damage = ((value as f64 * ratio) as u64).max(1);
            writeln!(
                w,
                "c{claim_no:06},{source},{building},{unit},{damage},{value}",
                unit = plan.unit
            )?;
            claim_no += 1;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_income(
    spec: &ScenarioSpec,
    plans: &[UnitPlan],
    out_dir: &Path,
    rng: &mut ChaCha8Rng,
) -> Result<(), SynthError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(out_dir.join("income.csv"))?);
    writeln!(w, "unit,median_household_income")?;

    // Plant income as rho * z(lag1) + sqrt(1 - rho^2) * noise.
    let lag1s: Vec<f64> = plans.iter().map(|p| p.truth.lags[0]).collect();
    let m = crate::stats::mean(&lag1s).unwrap_or(0.0);
    let sd = crate::stats::sample_sd(&lag1s).unwrap_or(0.0);
    let rho = spec.income_lag_correlation.clamp(-1.0, 1.0);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    for plan in plans {
        let z1 = if sd > 0.0 {
            (plan.truth.lags[0] - m) / sd
        } else {
            0.0
        };
        let z = rho * z1 + (1.0 - rho * rho).sqrt() * normal.sample(rng);
        let income = (spec.income_mean + spec.income_sd * z).max(0.0).round() as u64;
        writeln!(w, "{unit},{income}", unit = plan.unit)?;
    }
    w.flush()?;
    Ok(())
}
