//! Per-unit baselines and the four recovery detectors.
//!
//! Detection conventions:
//! - activity (essential / non-essential): earliest post-landfall day `d`
//!   whose visits stay at or above `threshold * baseline` for the
//!   configured run of consecutive days; reported as `d / 7` weeks.
//! - evacuation: earliest day whose rate stays within the relative
//!   tolerance of its weekday baseline for the run, before the deadline.
//! - move-out: earliest grid week (relative to the week containing
//!   landfall) whose percent-change-from-baseline differs from the
//!   previous week's by at most the tolerance, for the configured number
//!   of consecutive week pairs; reported in whole weeks.
//!
//! The reported timestamp is always the first day/week of the qualifying
//! run, and the horizon is the last date present in the dataset.

use std::collections::BTreeMap;

use chrono::Datelike;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{evac_rate, Category, Dataset};
use crate::model::{
    days_to_weeks, EvacDeviationMode, MilestoneKind, MilestoneSet, StudyConfig, UnitId,
};

/// Why a detector stopped, mirrored into `milestones.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeReason {
    Recovered,
    NeverMet,
    DeadlinePassed,
    UndefinedBaseline,
}

impl OutcomeReason {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeReason::Recovered => "recovered",
            OutcomeReason::NeverMet => "never_met",
            OutcomeReason::DeadlinePassed => "deadline_passed",
            OutcomeReason::UndefinedBaseline => "undefined_baseline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "recovered" => Some(OutcomeReason::Recovered),
            "never_met" => Some(OutcomeReason::NeverMet),
            "deadline_passed" => Some(OutcomeReason::DeadlinePassed),
            "undefined_baseline" => Some(OutcomeReason::UndefinedBaseline),
            _ => None,
        }
    }
}

/// Result of one detector on one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub unit: UnitId,
    pub kind: MilestoneKind,
    /// Weeks since landfall; present iff `reason == Recovered`.
    pub time: Option<f64>,
    pub reason: OutcomeReason,
    /// True when a zero/undefined weekday baseline forced the absolute
    /// tolerance fallback.
    pub fallback_used: bool,
}

/// Detector verdict before unit/kind attribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub time: Option<f64>,
    pub reason: OutcomeReason,
    pub fallback_used: bool,
}

impl Detection {
    fn recovered(time: f64) -> Self {
        Detection {
            time: Some(time),
            reason: OutcomeReason::Recovered,
            fallback_used: false,
        }
    }

    fn censored(reason: OutcomeReason) -> Self {
        Detection {
            time: None,
            reason,
            fallback_used: false,
        }
    }
}

/// Pre-landfall baselines. `None` marks a unit whose required window held
/// no usable data (EmptyWindow).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BaselineSet {
    /// Mean daily visits over the visit window; imputed zero days count.
    pub visit: BTreeMap<(UnitId, Category), Option<f64>>,
    /// Mean rate per weekday (Monday = index 0) over the evacuation window.
    pub evac_weekday: BTreeMap<UnitId, [Option<f64>; 7]>,
    /// Mean of all defined pre-landfall rates; scale for the zero-baseline
    /// fallback tolerance.
    pub evac_overall: BTreeMap<UnitId, Option<f64>>,
    /// Mean weekly move-out rate over the move-out window.
    pub moveout: BTreeMap<UnitId, Option<f64>>,
}

/// Arithmetic means over the configured windows, weekday-grouped for
/// evacuation. Undefined rate days are skipped; imputed zero visit days
/// are not.
pub fn compute_baselines(ds: &Dataset, cfg: &StudyConfig) -> BaselineSet {
    let mut out = BaselineSet::default();

    let window = cfg.visit_window();
    for ((unit, cat), series) in &ds.visits {
        let mut sum = 0.0;
        let mut n = 0u32;
        for date in window.days() {
            if let Some(i) = Dataset::day_index(&ds.visits_range, date) {
                sum += series.values[i] as f64;
                n += 1;
            }
        }
        let baseline = (n > 0).then(|| sum / n as f64);
        out.visit.insert((unit.clone(), *cat), baseline);
    }

    for (unit, series) in &ds.evac {
        let mut wd_sum = [0.0f64; 7];
        let mut wd_n = [0u32; 7];
        let mut pre_sum = 0.0;
        let mut pre_n = 0u32;
        for (i, obs) in series.iter().enumerate() {
            let date = ds.evac_range.start + chrono::Duration::days(i as i64);
            let Some(rate) = evac_rate(*obs) else {
                continue;
            };
            if date < cfg.landfall_date {
                pre_sum += rate;
                pre_n += 1;
            }
            if cfg.evac_baseline_window.contains(date) {
                let wd = date.weekday().num_days_from_monday() as usize;
                wd_sum[wd] += rate;
                wd_n[wd] += 1;
            }
        }
        let mut weekday = [None; 7];
        for wd in 0..7 {
            if wd_n[wd] > 0 {
                weekday[wd] = Some(wd_sum[wd] / wd_n[wd] as f64);
            }
        }
        out.evac_weekday.insert(unit.clone(), weekday);
        out.evac_overall
            .insert(unit.clone(), (pre_n > 0).then(|| pre_sum / pre_n as f64));
    }

    for (unit, series) in &ds.moveout.counts {
        let mut sum = 0.0;
        let mut n = 0u32;
        for (w, obs) in series.iter().enumerate() {
            let week_start = ds.hometags.grid[w];
            if cfg.moveout_baseline_window.contains(week_start) {
                if let Some((m, p)) = obs {
                    sum += *m as f64 / *p as f64;
                    n += 1;
                }
            }
        }
        out.moveout
            .insert(unit.clone(), (n > 0).then(|| sum / n as f64));
    }

    out
}

/// Activity detector over a post-landfall series. `values[i]` /
/// `imputed[i]` describe the day `day_offsets[0] + i` days after landfall;
/// the caller supplies the offset of the first element.
pub fn detect_activity_recovery(
    values: &[u64],
    imputed: &[bool],
    first_day_offset: i64,
    baseline: Option<f64>,
    cfg: &StudyConfig,
) -> Detection {
    let Some(baseline) = baseline else {
        return Detection::censored(OutcomeReason::UndefinedBaseline);
    };
    if baseline == 0.0 && (values.is_empty() || imputed.iter().all(|&i| i)) {
        // A flat-zero unit with no recorded post-landfall signal cannot be
        // distinguished from missing data.
        return Detection::censored(OutcomeReason::UndefinedBaseline);
    }
    let run = cfg.activity_run_days as usize;
    let threshold = cfg.activity_threshold * baseline;
    if values.len() < run {
        return Detection::censored(OutcomeReason::NeverMet);
    }
    'outer: for start in 0..=(values.len() - run) {
        for i in start..start + run {
            if (values[i] as f64) < threshold {
                continue 'outer;
            }
        }
        return Detection::recovered(days_to_weeks(first_day_offset + start as i64));
    }
    Detection::censored(OutcomeReason::NeverMet)
}

/// Evacuation detector. `rates[i]` is the rate `first_day_offset + i` days
/// after landfall (`None` for gap days, which never qualify).
pub fn detect_evacuation_recovery(
    rates: &[Option<f64>],
    first_day_offset: i64,
    weekday_baselines: &[Option<f64>; 7],
    overall_pre_mean: Option<f64>,
    cfg: &StudyConfig,
) -> Detection {
    // Without any pre-landfall signal there is no baseline of any kind.
    let all_undefined = weekday_baselines.iter().all(|b| b.is_none());
    if all_undefined && overall_pre_mean.is_none() {
        return Detection::censored(OutcomeReason::UndefinedBaseline);
    }

    let run = cfg.evac_run_days as usize;
    if rates.len() < run {
        return Detection::censored(OutcomeReason::NeverMet);
    }
    let landfall_wd = cfg.landfall_date.weekday().num_days_from_monday() as i64;
    let deadline_offset = cfg
        .evac_deadline
        .signed_duration_since(cfg.landfall_date)
        .num_days();

    let mut fallback_used = false;
    let mut qualifies = |i: usize| -> bool {
        let Some(rate) = rates[i] else {
            return false;
        };
        let day = first_day_offset + i as i64;
        let wd = ((landfall_wd + day).rem_euclid(7)) as usize;
        match cfg.evac_deviation_mode {
            EvacDeviationMode::RelativeRate => match weekday_baselines[wd] {
                Some(b) if b > 0.0 => (rate - b).abs() / b <= cfg.evac_tolerance,
                _ => {
                    // Zero or missing weekday baseline: absolute tolerance
                    // scaled by the unit's overall pre-landfall mean.
                    fallback_used = true;
                    let scale = overall_pre_mean.unwrap_or(0.0);
                    rate.abs() <= cfg.evac_tolerance * scale
                }
            },
            EvacDeviationMode::PctChangePoints => {
                // Steady-state reading: consecutive-day percent changes
                // within the tolerance, in percentage points.
                let pct = |j: usize| -> Option<f64> {
                    let r = rates[j]?;
                    let d = first_day_offset + j as i64;
                    let w = ((landfall_wd + d).rem_euclid(7)) as usize;
                    match weekday_baselines[w] {
                        Some(b) if b > 0.0 => Some(100.0 * (r - b) / b),
                        _ => None,
                    }
                };
                if i == 0 {
                    return false;
                }
                match (pct(i), pct(i - 1)) {
                    (Some(a), Some(b)) => (a - b).abs() <= 100.0 * cfg.evac_tolerance,
                    _ => false,
                }
            }
        }
    };

    let mut first_any: Option<i64> = None;
    'outer: for start in 0..=(rates.len() - run) {
        for i in start..start + run {
            if !qualifies(i) {
                continue 'outer;
            }
        }
        let day = first_day_offset + start as i64;
        if day < deadline_offset {
            let mut det = Detection::recovered(days_to_weeks(day));
            det.fallback_used = fallback_used;
            return det;
        }
        first_any.get_or_insert(day);
        break;
    }
    let mut det = if first_any.is_some() {
        Detection::censored(OutcomeReason::DeadlinePassed)
    } else {
        Detection::censored(OutcomeReason::NeverMet)
    };
    det.fallback_used = fallback_used;
    det
}

/// Move-out detector over grid-week rates. `rates[w]` corresponds to grid
/// week `w`; `landfall_week` is the (possibly out-of-grid) index of the
/// week containing landfall. A candidate week `w >= landfall_week`
/// qualifies when each of the `steady_state_run_weeks` consecutive week
/// pairs ending at `w`, `w+1`, ... stays within the tolerance, and the
/// detected time is `w - landfall_week` whole weeks.
pub fn detect_moveout_recovery(
    rates: &[Option<f64>],
    landfall_week: i64,
    baseline: Option<f64>,
    cfg: &StudyConfig,
) -> Detection {
    let Some(baseline) = baseline else {
        return Detection::censored(OutcomeReason::UndefinedBaseline);
    };
    if baseline <= 0.0 {
        return Detection::censored(OutcomeReason::UndefinedBaseline);
    }
    let pct = |w: usize| -> Option<f64> {
        rates
            .get(w)
            .copied()
            .flatten()
            .map(|r| 100.0 * (r - baseline) / baseline)
    };
    let run = cfg.steady_state_run_weeks as usize;
    let first_candidate = landfall_week.max(1) as usize;
    for w in first_candidate..rates.len() {
        let mut ok = true;
        for j in 0..run {
            let (Some(prev), Some(cur)) = ((w + j).checked_sub(1).and_then(pct), pct(w + j)) else {
                ok = false;
                break;
            };
            if (cur - prev).abs() > cfg.steady_state_tolerance {
                ok = false;
                break;
            }
        }
        if ok {
            return Detection::recovered((w as i64 - landfall_week) as f64);
        }
    }
    Detection::censored(OutcomeReason::NeverMet)
}

/// All four detectors for every roster unit, in parallel, with output
/// deterministic in unit order. Censored milestones stay `None` in the
/// [`MilestoneSet`]; the outcome log explains each one.
pub fn compute_milestones(
    ds: &Dataset,
    cfg: &StudyConfig,
) -> (BTreeMap<UnitId, MilestoneSet>, Vec<DetectionOutcome>) {
    let baselines = compute_baselines(ds, cfg);
    let units: Vec<&UnitId> = ds.roster.iter().collect();

    let per_unit: Vec<(UnitId, MilestoneSet, Vec<DetectionOutcome>)> = units
        .par_iter()
        .map(|unit| {
            let mut set = MilestoneSet::default();
            let mut log = Vec::with_capacity(4);

            // Evacuation.
            let det = match ds.evac.get(*unit) {
                Some(series) => {
                    let (post, offset) = post_slice(series, &ds.evac_range, cfg);
                    let rates = crate::ingest::evac_rate_series(post);
                    let wd = baselines
                        .evac_weekday
                        .get(*unit)
                        .copied()
                        .unwrap_or([None; 7]);
                    let overall = baselines.evac_overall.get(*unit).copied().flatten();
                    detect_evacuation_recovery(&rates, offset, &wd, overall, cfg)
                }
                None => Detection::censored(OutcomeReason::UndefinedBaseline),
            };
            set.set(MilestoneKind::Evacuation, det.time);
            log.push(outcome(unit, MilestoneKind::Evacuation, det));

            // Essential / non-essential activity.
            for (cat, kind) in [
                (Category::Essential, MilestoneKind::Essential),
                (Category::NonEssential, MilestoneKind::NonEssential),
            ] {
                let key = ((*unit).clone(), cat);
                let det = match ds.visits.get(&key) {
                    Some(series) => {
                        let baseline = baselines.visit.get(&key).copied().flatten();
                        let start =
                            Dataset::day_index(&ds.visits_range, cfg.landfall_date).unwrap_or(0);
                        let offset = if ds.visits_range.start > cfg.landfall_date {
                            ds.visits_range
                                .start
                                .signed_duration_since(cfg.landfall_date)
                                .num_days()
                        } else {
                            0
                        };
                        if ds.visits_range.end < cfg.landfall_date {
                            Detection::censored(OutcomeReason::NeverMet)
                        } else {
                            detect_activity_recovery(
                                &series.values[start..],
                                &series.imputed[start..],
                                offset,
                                baseline,
                                cfg,
                            )
                        }
                    }
                    None => Detection::censored(OutcomeReason::UndefinedBaseline),
                };
                set.set(kind, det.time);
                log.push(outcome(unit, kind, det));
            }

            // Move-out.
            let det = match ds.moveout.counts.get(*unit) {
                Some(series) => {
                    let baseline = baselines.moveout.get(*unit).copied().flatten();
                    let rates: Vec<Option<f64>> = series
                        .iter()
                        .map(|o| o.map(|(m, p)| m as f64 / p as f64))
                        .collect();
                    let anchor = ds.hometags.grid.first().copied();
                    match anchor {
                        Some(anchor) => {
                            let landfall_week = cfg
                                .landfall_date
                                .signed_duration_since(anchor)
                                .num_days()
                                .div_euclid(7);
                            detect_moveout_recovery(&rates, landfall_week, baseline, cfg)
                        }
                        None => Detection::censored(OutcomeReason::UndefinedBaseline),
                    }
                }
                None => Detection::censored(OutcomeReason::UndefinedBaseline),
            };
            set.set(MilestoneKind::MoveOut, det.time);
            log.push(outcome(unit, MilestoneKind::MoveOut, det));

            ((*unit).clone(), set, log)
        })
        .collect();

    let mut sets = BTreeMap::new();
    let mut log = Vec::with_capacity(per_unit.len() * 4);
    for (unit, set, outcomes) in per_unit {
        sets.insert(unit, set);
        log.extend(outcomes);
    }
    (sets, log)
}

fn outcome(unit: &UnitId, kind: MilestoneKind, det: Detection) -> DetectionOutcome {
    DetectionOutcome {
        unit: unit.clone(),
        kind,
        time: det.time,
        reason: det.reason,
        fallback_used: det.fallback_used,
    }
}

/// Post-landfall slice of a dense daily series plus the day offset of its
/// first element relative to landfall.
fn post_slice<'a, T>(
    series: &'a [T],
    range: &crate::model::DateRange,
    cfg: &StudyConfig,
) -> (&'a [T], i64) {
    if range.end < cfg.landfall_date {
        return (&series[0..0], 0);
    }
    if range.start >= cfg.landfall_date {
        let offset = range
            .start
            .signed_duration_since(cfg.landfall_date)
            .num_days();
        return (series, offset);
    }
    let start = cfg
        .landfall_date
        .signed_duration_since(range.start)
        .num_days() as usize;
    (&series[start..], 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::scan_oracle;

    fn cfg() -> StudyConfig {
        StudyConfig::harvey_2017()
    }

    fn recovered_weeks(det: &Detection) -> f64 {
        assert_eq!(det.reason, OutcomeReason::Recovered, "{det:?}");
        det.time.unwrap()
    }

    #[test]
    fn activity_ramp_example() {
        // baseline 100, series [50,60,70,92,95,96,...] -> day 3.
        let mut values = vec![50, 60, 70, 92, 95, 96];
        values.extend(std::iter::repeat(96).take(10));
        let imputed = vec![false; values.len()];
        let det = detect_activity_recovery(&values, &imputed, 0, Some(100.0), &cfg());
        assert_eq!(recovered_weeks(&det), 3.0 / 7.0);
        // Cross-check against the exhaustive scan.
        let oracle = scan_oracle(&values, |v| *v as f64 >= 90.0, 3);
        assert_eq!(oracle, Some(3));
    }

    #[test]
    fn activity_immediate_recovery() {
        let values = vec![95; 8];
        let imputed = vec![false; 8];
        let det = detect_activity_recovery(&values, &imputed, 0, Some(100.0), &cfg());
        assert_eq!(recovered_weeks(&det), 0.0);
    }

    #[test]
    fn activity_broken_run() {
        // [95,95,80,95,95,95]: run of 3 broken at day 2, first full run at 3.
        let values = vec![95, 95, 80, 95, 95, 95];
        let imputed = vec![false; 6];
        let det = detect_activity_recovery(&values, &imputed, 0, Some(100.0), &cfg());
        assert_eq!(recovered_weeks(&det), 3.0 / 7.0);
        assert_eq!(scan_oracle(&values, |v| *v as f64 >= 90.0, 3), Some(3));
    }

    #[test]
    fn activity_never_met_and_undefined() {
        let values = vec![10; 20];
        let imputed = vec![false; 20];
        let det = detect_activity_recovery(&values, &imputed, 0, Some(100.0), &cfg());
        assert_eq!(det.reason, OutcomeReason::NeverMet);

        // Zero baseline with recorded post data: trivially recovered.
        let det = detect_activity_recovery(&values, &imputed, 0, Some(0.0), &cfg());
        assert_eq!(recovered_weeks(&det), 0.0);

        // Zero baseline and nothing but imputed days: undefined.
        let values = vec![0; 20];
        let imputed = vec![true; 20];
        let det = detect_activity_recovery(&values, &imputed, 0, Some(0.0), &cfg());
        assert_eq!(det.reason, OutcomeReason::UndefinedBaseline);

        let det = detect_activity_recovery(&values, &imputed, 0, None, &cfg());
        assert_eq!(det.reason, OutcomeReason::UndefinedBaseline);
    }

    #[test]
    fn activity_monotone_in_threshold() {
        let values: Vec<u64> = vec![50, 80, 88, 91, 93, 95, 97, 99, 100, 100, 100, 100];
        let imputed = vec![false; values.len()];
        let mut prev_day: Option<f64> = Some(0.0);
        let mut c = cfg();
        for t in [0.5, 0.7, 0.85, 0.9, 0.95, 1.0] {
            c.activity_threshold = t;
            let det = detect_activity_recovery(&values, &imputed, 0, Some(100.0), &c);
            match (prev_day, det.time) {
                (Some(p), Some(cur)) => {
                    assert!(cur >= p, "threshold {t} moved detection earlier");
                    prev_day = Some(cur);
                }
                (None, Some(_)) => panic!("detection reappeared after never_met"),
                _ => prev_day = None,
            }
        }
    }

    #[test]
    fn evacuation_identity_recovers_at_landfall() {
        let rates = vec![Some(0.2); 14];
        let wd = [Some(0.2); 7];
        let det = detect_evacuation_recovery(&rates, 0, &wd, Some(0.2), &cfg());
        assert_eq!(recovered_weeks(&det), 0.0);
    }

    #[test]
    fn evacuation_ramp_example() {
        // baseline 0.2 all weekdays, rates [0.5,0.4,0.21,0.21,0.21,...]:
        // |0.21-0.2|/0.2 = 0.05 <= 0.1, so days 2..4 qualify -> day 2.
        let mut rates = vec![Some(0.5), Some(0.4)];
        rates.extend(std::iter::repeat(Some(0.21)).take(10));
        let wd = [Some(0.2); 7];
        let det = detect_evacuation_recovery(&rates, 0, &wd, Some(0.2), &cfg());
        assert_eq!(recovered_weeks(&det), 2.0 / 7.0);
        let vals: Vec<f64> = rates.iter().map(|r| r.unwrap()).collect();
        assert_eq!(
            scan_oracle(&vals, |r| (r - 0.2).abs() / 0.2 <= 0.1, 3),
            Some(2)
        );
    }

    #[test]
    fn evacuation_deadline_rule() {
        let mut c = cfg();
        c.evac_deadline = c.landfall_date + chrono::Duration::days(5);
        // Qualifying run starts at day 6, past the deadline.
        let mut rates = vec![Some(0.5); 6];
        rates.extend(std::iter::repeat(Some(0.2)).take(10));
        let wd = [Some(0.2); 7];
        let det = detect_evacuation_recovery(&rates, 0, &wd, Some(0.2), &c);
        assert_eq!(det.reason, OutcomeReason::DeadlinePassed);
        assert_eq!(det.time, None);

        // Recovery must start strictly before the deadline: a run starting
        // exactly on the deadline day is censored, one day earlier is not.
        let run_from = |start: usize| -> Vec<Option<f64>> {
            let mut r = vec![Some(0.5); start];
            r.extend(std::iter::repeat(Some(0.2)).take(10));
            r
        };
        let det = detect_evacuation_recovery(&run_from(5), 0, &wd, Some(0.2), &c);
        assert_eq!(det.reason, OutcomeReason::DeadlinePassed);
        let det = detect_evacuation_recovery(&run_from(4), 0, &wd, Some(0.2), &c);
        assert_eq!(recovered_weeks(&det), 4.0 / 7.0);
    }

    #[test]
    fn evacuation_zero_baseline_fallback() {
        // All weekday baselines zero: fall back to absolute tolerance
        // scaled by the overall pre-landfall mean (0.1), so |rate| <= 0.01.
        let mut rates = vec![Some(0.5), Some(0.005)];
        rates.extend(std::iter::repeat(Some(0.0)).take(6));
        let wd = [Some(0.0); 7];
        let det = detect_evacuation_recovery(&rates, 0, &wd, Some(0.1), &cfg());
        assert!(det.fallback_used);
        assert_eq!(recovered_weeks(&det), 1.0 / 7.0);
    }

    #[test]
    fn evacuation_pct_change_mode() {
        // Steady-state reading: consecutive-day percent changes within
        // 100 * tolerance points. pcts [150, 100, 95, 100, 100, ...] give
        // diffs [-, 50, 5, 5, 0, ...]: first run of three qualifying days
        // starts at day 2.
        let mut c = cfg();
        c.evac_deviation_mode = EvacDeviationMode::PctChangePoints;
        let mut rates = vec![Some(0.5), Some(0.4), Some(0.39), Some(0.40), Some(0.40)];
        rates.extend(std::iter::repeat(Some(0.40)).take(6));
        let wd = [Some(0.2); 7];
        let det = detect_evacuation_recovery(&rates, 0, &wd, Some(0.2), &c);
        assert_eq!(recovered_weeks(&det), 2.0 / 7.0);
    }

    #[test]
    fn evacuation_gap_days_never_qualify() {
        let rates = vec![Some(0.2), None, Some(0.2), Some(0.2), Some(0.2), Some(0.2)];
        let wd = [Some(0.2); 7];
        let det = detect_evacuation_recovery(&rates, 0, &wd, Some(0.2), &cfg());
        // Days 0..2 cannot host a full run through the gap; first run at 2.
        assert_eq!(recovered_weeks(&det), 2.0 / 7.0);
    }

    #[test]
    fn moveout_constant_rate_first_candidate() {
        // Grid week 3 contains landfall; constant rate everywhere, so the
        // first post-landfall week with a predecessor is week 3 itself.
        let rates = vec![Some(0.1); 8];
        let det = detect_moveout_recovery(&rates, 3, Some(0.1), &cfg());
        assert_eq!(recovered_weeks(&det), 0.0);
    }

    #[test]
    fn moveout_pct_sequence_example() {
        // pct [80,40,25,24,23] at weeks 1..=5, tolerance 10, run 1:
        // |24-25| <= 10 first holds at week 4.
        let baseline = 0.1;
        let pcts = [80.0, 40.0, 25.0, 24.0, 23.0];
        let mut rates = vec![Some(baseline)]; // week 0, pct 0
        rates.extend(pcts.iter().map(|p| Some(baseline * (1.0 + p / 100.0))));
        let det = detect_moveout_recovery(&rates, 1, Some(baseline), &cfg());
        assert_eq!(recovered_weeks(&det), 3.0); // week 4 = 3 weeks after week 1

        // Same detection expressed through the exhaustive pair-difference scan.
        let pct_series: Vec<f64> = rates
            .iter()
            .map(|r| 100.0 * (r.unwrap() - baseline) / baseline)
            .collect();
        let diffs: Vec<f64> = pct_series.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        // diffs[i] corresponds to week i+1.
        assert_eq!(scan_oracle(&diffs[..], |d| *d <= 10.0, 1), Some(3));
    }

    #[test]
    fn moveout_oscillation_never_met() {
        let baseline = 0.1;
        let mut rates = vec![Some(baseline)];
        for i in 0..10 {
            let pct = if i % 2 == 0 { 20.0 } else { -20.0 };
            rates.push(Some(baseline * (1.0 + pct / 100.0)));
        }
        let det = detect_moveout_recovery(&rates, 1, Some(baseline), &cfg());
        assert_eq!(det.reason, OutcomeReason::NeverMet);
    }

    #[test]
    fn moveout_undefined_baseline() {
        let rates = vec![Some(0.1); 5];
        let det = detect_moveout_recovery(&rates, 1, Some(0.0), &cfg());
        assert_eq!(det.reason, OutcomeReason::UndefinedBaseline);
        let det = detect_moveout_recovery(&rates, 1, None, &cfg());
        assert_eq!(det.reason, OutcomeReason::UndefinedBaseline);
    }

    #[test]
    fn baseline_constant_series() {
        let tmp = tempfile::tempdir().unwrap();
        let c = cfg();
        // 21 days of 100 visits before landfall.
        let mut visits = String::from("date,unit,category,visits\n");
        for date in c.visit_window().days() {
            visits.push_str(&format!("{date},A,essential,100\n"));
        }
        std::fs::write(tmp.path().join("visits.csv"), visits).unwrap();
        std::fs::write(tmp.path().join("evac.csv"), "date,unit,evacuees,users\n").unwrap();
        std::fs::write(tmp.path().join("hometags.csv"), "week_start,user,unit\n").unwrap();
        std::fs::write(
            tmp.path().join("claims.csv"),
            "claim_id,source,building_id,unit,damage,property_value\n",
        )
        .unwrap();
        std::fs::write(
            tmp.path().join("income.csv"),
            "unit,median_household_income\n",
        )
        .unwrap();
        let ds = crate::ingest::parse_dataset(tmp.path(), &c).unwrap();
        let b = compute_baselines(&ds, &c);
        assert_eq!(
            b.visit[&(UnitId::from("A"), Category::Essential)],
            Some(100.0)
        );
    }

    #[test]
    fn baseline_all_zero_series() {
        let tmp = tempfile::tempdir().unwrap();
        let c = cfg();
        let mut visits = String::from("date,unit,category,visits\n");
        for date in c.visit_window().days() {
            visits.push_str(&format!("{date},A,essential,0\n"));
        }
        std::fs::write(tmp.path().join("visits.csv"), visits).unwrap();
        std::fs::write(tmp.path().join("evac.csv"), "date,unit,evacuees,users\n").unwrap();
        std::fs::write(tmp.path().join("hometags.csv"), "week_start,user,unit\n").unwrap();
        std::fs::write(
            tmp.path().join("claims.csv"),
            "claim_id,source,building_id,unit,damage,property_value\n",
        )
        .unwrap();
        std::fs::write(
            tmp.path().join("income.csv"),
            "unit,median_household_income\n",
        )
        .unwrap();
        let ds = crate::ingest::parse_dataset(tmp.path(), &c).unwrap();
        let b = compute_baselines(&ds, &c);
        assert_eq!(
            b.visit[&(UnitId::from("A"), Category::Essential)],
            Some(0.0)
        );
    }

    #[test]
    fn baseline_weekday_grouping() {
        let tmp = tempfile::tempdir().unwrap();
        let c = cfg();
        // Mondays 0.1, all other days 0.3 across the evacuation window.
        let mut evac = String::from("date,unit,evacuees,users\n");
        let mut date = c.evac_baseline_window.start;
        while date <= c.evac_baseline_window.end {
            let evacuees = if date.weekday() == chrono::Weekday::Mon {
                10
            } else {
                30
            };
            evac.push_str(&format!("{date},A,{evacuees},100\n"));
            date += chrono::Duration::days(1);
        }
        std::fs::write(tmp.path().join("evac.csv"), evac).unwrap();
        std::fs::write(tmp.path().join("visits.csv"), "date,unit,category,visits\n").unwrap();
        std::fs::write(tmp.path().join("hometags.csv"), "week_start,user,unit\n").unwrap();
        std::fs::write(
            tmp.path().join("claims.csv"),
            "claim_id,source,building_id,unit,damage,property_value\n",
        )
        .unwrap();
        std::fs::write(
            tmp.path().join("income.csv"),
            "unit,median_household_income\n",
        )
        .unwrap();
        let ds = crate::ingest::parse_dataset(tmp.path(), &c).unwrap();
        let b = compute_baselines(&ds, &c);
        let wd = b.evac_weekday[&UnitId::from("A")];
        assert_eq!(wd[0], Some(0.1)); // Monday
        for i in 1..7 {
            assert_eq!(wd[i], Some(0.3), "weekday {i}");
        }
    }

    #[test]
    fn compute_milestones_empty_unit_censored() {
        let tmp = tempfile::tempdir().unwrap();
        let c = cfg();
        // Unit B appears only in income: every milestone censored.
        std::fs::write(
            tmp.path().join("visits.csv"),
            "date,unit,category,visits\n2017-08-25,A,essential,10\n",
        )
        .unwrap();
        std::fs::write(tmp.path().join("evac.csv"), "date,unit,evacuees,users\n").unwrap();
        std::fs::write(tmp.path().join("hometags.csv"), "week_start,user,unit\n").unwrap();
        std::fs::write(
            tmp.path().join("claims.csv"),
            "claim_id,source,building_id,unit,damage,property_value\n",
        )
        .unwrap();
        std::fs::write(
            tmp.path().join("income.csv"),
            "unit,median_household_income\nB,50000\n",
        )
        .unwrap();
        let ds = crate::ingest::parse_dataset(tmp.path(), &c).unwrap();
        let (sets, log) = compute_milestones(&ds, &c);
        let b = &sets[&UnitId::from("B")];
        assert!(!b.is_complete());
        assert_eq!(b.evacuation, None);
        assert_eq!(b.moveout, None);
        assert_eq!(
            log.iter().filter(|o| o.unit == UnitId::from("B")).count(),
            4
        );
    }

    #[test]
    fn identity_scenario_recovers_everything_at_landfall() {
        // Two units at their baselines through the whole horizon: every
        // milestone lands on 0.0 weeks.
        let tmp = tempfile::tempdir().unwrap();
        let c = cfg();
        let start = c.moveout_baseline_window.start; // 2017-07-09, a Sunday
        let end = c.landfall_date + chrono::Duration::days(27);

        let mut visits = String::from("date,unit,category,visits\n");
        let mut evac = String::from("date,unit,evacuees,users\n");
        let mut date = c.visit_window().start;
        while date <= end {
            for unit in ["A", "B"] {
                visits.push_str(&format!("{date},{unit},essential,100\n"));
                visits.push_str(&format!("{date},{unit},nonessential,80\n"));
            }
            date += chrono::Duration::days(1);
        }
        let mut date = c.evac_baseline_window.start;
        while date <= end {
            for unit in ["A", "B"] {
                evac.push_str(&format!("{date},{unit},20,100\n"));
            }
            date += chrono::Duration::days(1);
        }
        // 10 residents per unit; one fixed user swaps between the units
        // every week, keeping the move-out rate constant at 0.1.
        let mut tags = String::from("week_start,user,unit\n");
        let mut week = start;
        let mut wi = 0;
        while week <= end {
            for unit in ["A", "B"] {
                for i in 0..9 {
                    tags.push_str(&format!("{week},{unit}_p{i},{unit}\n"));
                }
            }
            let (ua, ub) = if wi % 2 == 0 { ("A", "B") } else { ("B", "A") };
            tags.push_str(&format!("{week},swap_a,{ua}\n"));
            tags.push_str(&format!("{week},swap_b,{ub}\n"));
            week += chrono::Duration::days(7);
            wi += 1;
        }
        std::fs::write(tmp.path().join("visits.csv"), visits).unwrap();
        std::fs::write(tmp.path().join("evac.csv"), evac).unwrap();
        std::fs::write(tmp.path().join("hometags.csv"), tags).unwrap();
        std::fs::write(
            tmp.path().join("claims.csv"),
            "claim_id,source,building_id,unit,damage,property_value\n",
        )
        .unwrap();
        std::fs::write(
            tmp.path().join("income.csv"),
            "unit,median_household_income\nA,50000\nB,60000\n",
        )
        .unwrap();

        let ds = crate::ingest::parse_dataset(tmp.path(), &c).unwrap();
        let (sets, log) = compute_milestones(&ds, &c);
        for unit in ["A", "B"] {
            let ms = &sets[&UnitId::from(unit)];
            assert_eq!(ms.evacuation, Some(0.0), "{unit} evacuation");
            assert_eq!(ms.essential, Some(0.0), "{unit} essential");
            assert_eq!(ms.nonessential, Some(0.0), "{unit} nonessential");
            assert_eq!(ms.moveout, Some(0.0), "{unit} moveout");
        }
        assert!(log
            .iter()
            .all(|o| o.reason == OutcomeReason::Recovered && !o.fallback_used));
    }

    #[test]
    fn detection_invariant_to_thread_count() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = crate::synth::tests::small_spec(8);
        crate::synth::generate_scenario(&spec, tmp.path()).unwrap();
        let c = spec.config();
        let ds = crate::ingest::parse_dataset(tmp.path(), &c).unwrap();

        let pool1 = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let r1 = pool1.install(|| compute_milestones(&ds, &c));
        let r4 = pool4.install(|| compute_milestones(&ds, &c));
        assert_eq!(r1.0, r4.0);
        assert_eq!(r1.1, r4.1);
    }
}
