//! Milestone-ordering classification, per-sequence descriptive statistics,
//! cumulative lags, per-sequence robust lag regressions, and lag /
//! vulnerability correlations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{MilestoneKind, MilestoneSet, SequenceLabel, UnitId};
use crate::regress::{huber_fit, HuberParams, RegressError};
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("milestone set has censored milestones; lags undefined")]
    CensoredMilestone,
    #[error("need at least {needed} complete observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("no assignments supplied")]
    Empty,
}

/// Time elapsed from the first milestone to the 2nd, 3rd and 4th, in
/// weeks. With the consecutive-difference sensitivity mode the fields hold
/// successive gaps instead and the monotonicity invariant does not apply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagTriple {
    pub lag1: f64,
    pub lag2: f64,
    pub lag3: f64,
}

impl LagTriple {
    pub fn as_array(&self) -> [f64; 3] {
        [self.lag1, self.lag2, self.lag3]
    }
}

/// How lags are measured from the ordered milestone times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagMode {
    /// lag_k = t_{k+1} - t_1 (cumulative from the first milestone).
    #[default]
    Cumulative,
    /// lag_k = t_{k+1} - t_k (consecutive differences).
    Consecutive,
}

/// One unit's classified trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceAssignment {
    pub unit: UnitId,
    pub label: SequenceLabel,
    /// The four (kind, time) pairs sorted ascending with the canonical
    /// tie-break; absent when any milestone is censored.
    pub ordered_milestones: Option<[(MilestoneKind, f64); 4]>,
    /// Absent when the label is `Other` or any milestone is censored.
    pub lags: Option<LagTriple>,
}

/// Sorts the four milestones ascending by time, breaking exact ties by
/// canonical priority (Evacuation, Essential, NonEssential, MoveOut).
/// `None` when any milestone is censored.
pub fn ordered_milestones(ms: &MilestoneSet) -> Option<[(MilestoneKind, f64); 4]> {
    let mut pairs = [(MilestoneKind::Evacuation, 0.0); 4];
    for (i, kind) in MilestoneKind::ALL.into_iter().enumerate() {
        pairs[i] = (kind, ms.get(kind)?);
    }
    pairs.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap()
            .then(a.0.priority().cmp(&b.0.priority()))
    });
    Some(pairs)
}

/// Maps a milestone set to its canonical sequence label: censored sets and
/// orderings that do not start with evacuation are `Other`.
pub fn classify_sequence(ms: &MilestoneSet) -> SequenceLabel {
    let Some(ordered) = ordered_milestones(ms) else {
        return SequenceLabel::Other;
    };
    if ordered[0].0 != MilestoneKind::Evacuation {
        return SequenceLabel::Other;
    }
    let tail = [ordered[1].0, ordered[2].0, ordered[3].0];
    SequenceLabel::from_tail_order(tail).unwrap_or(SequenceLabel::Other)
}

/// Lags measured from the first milestone of the tie-broken ascending
/// ordering. Censored sets carry no lags.
pub fn compute_lags(ms: &MilestoneSet, mode: LagMode) -> Result<LagTriple, TrajectoryError> {
    let ordered = ordered_milestones(ms).ok_or(TrajectoryError::CensoredMilestone)?;
    let t = [ordered[0].1, ordered[1].1, ordered[2].1, ordered[3].1];
    Ok(match mode {
        LagMode::Cumulative => LagTriple {
            lag1: t[1] - t[0],
            lag2: t[2] - t[0],
            lag3: t[3] - t[0],
        },
        LagMode::Consecutive => LagTriple {
            lag1: t[1] - t[0],
            lag2: t[2] - t[1],
            lag3: t[3] - t[2],
        },
    })
}

/// Classifies every unit and computes lags for the Seq1–Seq6 members.
pub fn assign_sequences(
    sets: &BTreeMap<UnitId, MilestoneSet>,
    mode: LagMode,
) -> Vec<SequenceAssignment> {
    sets.iter()
        .map(|(unit, ms)| {
            let label = classify_sequence(ms);
            let ordered = ordered_milestones(ms);
            let lags = if label == SequenceLabel::Other {
                None
            } else {
                compute_lags(ms, mode).ok()
            };
            SequenceAssignment {
                unit: unit.clone(),
                label,
                ordered_milestones: ordered,
                lags,
            }
        })
        .collect()
}

/// Counts and percentages per label, all seven labels always present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceDistribution {
    pub total: usize,
    pub rows: Vec<DistributionRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub label: SequenceLabel,
    pub count: usize,
    pub frequency_pct: f64,
}

pub fn sequence_distribution(
    assignments: &[SequenceAssignment],
) -> Result<SequenceDistribution, TrajectoryError> {
    if assignments.is_empty() {
        return Err(TrajectoryError::Empty);
    }
    let total = assignments.len();
    let rows = SequenceLabel::ALL
        .into_iter()
        .map(|label| {
            let count = assignments.iter().filter(|a| a.label == label).count();
            DistributionRow {
                label,
                count,
                frequency_pct: 100.0 * count as f64 / total as f64,
            }
        })
        .collect();
    Ok(SequenceDistribution { total, rows })
}

/// Per-sequence descriptive statistics: per-milestone mean/sd of recovery
/// times, mean maximum duration, and rank by mean maximum duration
/// (1 = fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceStats {
    pub rows: BTreeMap<SequenceLabel, SequenceStatsRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceStatsRow {
    pub count: usize,
    pub frequency_pct: f64,
    /// Keyed in `MilestoneKind::ALL` order: evacuation, essential,
    /// nonessential, moveout.
    pub milestone_mean: [f64; 4],
    /// `None` when the sequence has fewer than two members.
    pub milestone_sd: [Option<f64>; 4],
    pub mean_max_duration: f64,
    pub rank: usize,
}

pub fn sequence_stats(
    assignments: &[SequenceAssignment],
    sets: &BTreeMap<UnitId, MilestoneSet>,
) -> Result<SequenceStats, TrajectoryError> {
    if assignments.is_empty() {
        return Err(TrajectoryError::Empty);
    }
    let total = assignments.len();
    let mut rows: BTreeMap<SequenceLabel, SequenceStatsRow> = BTreeMap::new();

    for label in SequenceLabel::SEQUENCES {
        let members: Vec<&SequenceAssignment> =
            assignments.iter().filter(|a| a.label == label).collect();
        if members.is_empty() {
            continue;
        }
        let mut by_kind: [Vec<f64>; 4] = Default::default();
        let mut maxima: Vec<f64> = Vec::with_capacity(members.len());
        for m in &members {
            let ms = &sets[&m.unit];
            for (i, kind) in MilestoneKind::ALL.into_iter().enumerate() {
                by_kind[i].push(ms.get(kind).expect("Seq members are complete"));
            }
            let ordered = m.ordered_milestones.expect("Seq members are complete");
            maxima.push(ordered[3].1);
        }
        let mut milestone_mean = [0.0; 4];
        let mut milestone_sd = [None; 4];
        for i in 0..4 {
            milestone_mean[i] = stats::mean(&by_kind[i]).unwrap();
            milestone_sd[i] = stats::sample_sd(&by_kind[i]);
        }
        rows.insert(
            label,
            SequenceStatsRow {
                count: members.len(),
                frequency_pct: 100.0 * members.len() as f64 / total as f64,
                milestone_mean,
                milestone_sd,
                mean_max_duration: stats::mean(&maxima).unwrap(),
                rank: 0,
            },
        );
    }

    // Rank ascending by mean maximum duration; ties resolve by label order.
    let mut order: Vec<SequenceLabel> = rows.keys().copied().collect();
    order.sort_by(|a, b| {
        rows[a]
            .mean_max_duration
            .partial_cmp(&rows[b].mean_max_duration)
            .unwrap()
            .then(a.cmp(b))
    });
    for (i, label) in order.into_iter().enumerate() {
        rows.get_mut(&label).unwrap().rank = i + 1;
    }
    Ok(SequenceStats { rows })
}

/// One fitted cell of the per-sequence regression table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FitCell {
    Ok {
        beta0: f64,
        beta1: f64,
        se_beta0: f64,
        se_beta1: f64,
        p_beta1: f64,
        stars: String,
        n: usize,
        converged: bool,
    },
    Insufficient {
        n: usize,
    },
    Failed {
        reason: String,
    },
}

/// Significance stars at the 0.1 / 0.05 / 0.01 levels.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRegression {
    pub lag2_on_lag1: FitCell,
    pub lag3_on_lag2: FitCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTable {
    /// Min-max normalize each lag variable within the sequence before
    /// fitting (sensitivity option).
    pub normalized: bool,
    pub rows: BTreeMap<SequenceLabel, SequenceRegression>,
}

/// Fits lag2 on lag1 and lag3 on lag2 per sequence; a failed cell leaves
/// the other cells intact.
pub fn regression_table(
    assignments: &[SequenceAssignment],
    params: HuberParams,
    normalize: bool,
) -> RegressionTable {
    let mut rows = BTreeMap::new();
    for label in SequenceLabel::SEQUENCES {
        let lags: Vec<[f64; 3]> = assignments
            .iter()
            .filter(|a| a.label == label)
            .filter_map(|a| a.lags.map(|l| l.as_array()))
            .collect();
        if lags.is_empty() {
            continue;
        }
        let column = |k: usize| -> Vec<f64> {
            let v: Vec<f64> = lags.iter().map(|l| l[k]).collect();
            if normalize {
                minmax(&v)
            } else {
                v
            }
        };
        let fit_pair = |x: Vec<f64>, y: Vec<f64>| -> FitCell {
            if x.len() < 3 {
                return FitCell::Insufficient { n: x.len() };
            }
            match huber_fit(&x, &y, params) {
                Ok(fit) => FitCell::Ok {
                    beta0: fit.beta0,
                    beta1: fit.beta1,
                    se_beta0: fit.se_beta0,
                    se_beta1: fit.se_beta1,
                    p_beta1: fit.p_beta1,
                    stars: significance_stars(fit.p_beta1).to_string(),
                    n: fit.n,
                    converged: fit.converged,
                },
                Err(RegressError::TooFewObservations { got, .. }) => {
                    FitCell::Insufficient { n: got }
                }
                Err(e) => FitCell::Failed {
                    reason: e.to_string(),
                },
            }
        };
        rows.insert(
            label,
            SequenceRegression {
                lag2_on_lag1: fit_pair(column(0), column(1)),
                lag3_on_lag2: fit_pair(column(1), column(2)),
            },
        );
    }
    RegressionTable {
        normalized: normalize,
        rows,
    }
}

fn minmax(v: &[f64]) -> Vec<f64> {
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        v.iter().map(|x| (x - min) / (max - min)).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Per-unit observation for the correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationInput {
    pub unit: UnitId,
    pub lags: Option<LagTriple>,
    pub pde: Option<f64>,
    pub income: Option<f64>,
}

pub const CORRELATION_VARS: [&str; 5] = ["lag1", "lag2", "lag3", "pde", "income"];

/// Pairwise Pearson correlations among lags, damage extent and income,
/// with two-sided t-test p-values and pairwise-complete deletion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub vars: Vec<String>,
    /// `r[i][j]`; `None` off the diagonal when a pair has < 3 complete
    /// observations or a constant variable.
    pub r: Vec<Vec<Option<f64>>>,
    pub p: Vec<Vec<Option<f64>>>,
    pub n: Vec<Vec<usize>>,
}

pub fn correlations(inputs: &[CorrelationInput]) -> Result<CorrelationMatrix, TrajectoryError> {
    let value = |input: &CorrelationInput, var: usize| -> Option<f64> {
        match var {
            0 => input.lags.map(|l| l.lag1),
            1 => input.lags.map(|l| l.lag2),
            2 => input.lags.map(|l| l.lag3),
            3 => input.pde,
            4 => input.income,
            _ => unreachable!(),
        }
    };
    let complete = inputs
        .iter()
        .filter(|i| (0..5).all(|v| value(i, v).is_some()))
        .count();
    if complete < 3 {
        return Err(TrajectoryError::TooFewObservations {
            needed: 3,
            got: complete,
        });
    }

    let k = 5;
    let mut r = vec![vec![None; k]; k];
    let mut p = vec![vec![None; k]; k];
    let mut n = vec![vec![0usize; k]; k];
    for i in 0..k {
        for j in 0..k {
            let pairs: Vec<(f64, f64)> = inputs
                .iter()
                .filter_map(|inp| Some((value(inp, i)?, value(inp, j)?)))
                .collect();
            n[i][j] = pairs.len();
            if i == j {
                r[i][j] = Some(1.0);
                p[i][j] = Some(0.0);
                continue;
            }
            if pairs.len() < 3 {
                continue;
            }
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Some(rv) = stats::pearson(&xs, &ys) {
                let df = (pairs.len() - 2) as f64;
                let denom = (1.0 - rv * rv).max(f64::MIN_POSITIVE);
                let t = rv * (df / denom).sqrt();
                r[i][j] = Some(rv);
                p[i][j] = Some(stats::t_two_sided_p(t, df));
            }
        }
    }
    Ok(CorrelationMatrix {
        vars: CORRELATION_VARS.iter().map(|s| s.to_string()).collect(),
        r,
        p,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn set(evac: f64, ess: f64, non: f64, move_out: f64) -> MilestoneSet {
        MilestoneSet {
            evacuation: Some(evac),
            essential: Some(ess),
            nonessential: Some(non),
            moveout: Some(move_out),
        }
    }

    #[test]
    fn classify_table_rows() {
        // Seq1 means from the study tables order as evac < ess < noness < moveout.
        assert_eq!(
            classify_sequence(&set(0.85, 2.79, 4.76, 7.95)),
            SequenceLabel::Seq1
        );
        assert_eq!(
            classify_sequence(&set(0.83, 5.27, 3.43, 8.49)),
            SequenceLabel::Seq2
        );
        assert_eq!(
            classify_sequence(&set(0.85, 3.73, 8.91, 6.12)),
            SequenceLabel::Seq3
        );
        assert_eq!(
            classify_sequence(&set(0.75, 7.18, 9.70, 4.08)),
            SequenceLabel::Seq4
        );
        assert_eq!(
            classify_sequence(&set(0.82, 8.63, 3.97, 6.52)),
            SequenceLabel::Seq5
        );
        assert_eq!(
            classify_sequence(&set(0.72, 9.29, 6.77, 4.17)),
            SequenceLabel::Seq6
        );
    }

    #[test]
    fn classify_full_tie_is_seq1() {
        assert_eq!(
            classify_sequence(&set(2.0, 2.0, 2.0, 2.0)),
            SequenceLabel::Seq1
        );
    }

    #[test]
    fn classify_non_evacuation_first_is_other() {
        assert_eq!(
            classify_sequence(&set(2.0, 1.0, 3.0, 4.0)),
            SequenceLabel::Other
        );
    }

    #[test]
    fn classify_censored_is_other() {
        let mut ms = set(1.0, 2.0, 3.0, 4.0);
        ms.moveout = None;
        assert_eq!(classify_sequence(&ms), SequenceLabel::Other);
    }

    #[test]
    fn exhaustive_orderings() {
        // All 24 strict orderings of four distinct times: exactly the six
        // evacuation-first ones map to Seq1..Seq6, the rest to Other.
        let times = [1.0, 2.0, 3.0, 4.0];
        let mut seq_count = 0;
        let mut other_count = 0;
        let mut seen = std::collections::BTreeSet::new();
        let kinds = MilestoneKind::ALL;
        let perms = permutations(&[0, 1, 2, 3]);
        assert_eq!(perms.len(), 24);
        for perm in perms {
            let mut ms = MilestoneSet::default();
            for (slot, &kind_idx) in perm.iter().enumerate() {
                ms.set(kinds[kind_idx], Some(times[slot]));
            }
            let label = classify_sequence(&ms);
            if label == SequenceLabel::Other {
                other_count += 1;
            } else {
                seq_count += 1;
                seen.insert(label);
            }
        }
        assert_eq!(seq_count, 6);
        assert_eq!(other_count, 18);
        assert_eq!(seen.len(), 6);
    }

    fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for (i, &head) in items.iter().enumerate() {
            let rest: Vec<usize> = items
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, &v)| v)
                .collect();
            for mut tail in permutations(&rest) {
                tail.insert(0, head);
                out.push(tail);
            }
        }
        out
    }

    #[test]
    fn lags_from_table_means() {
        let lags = compute_lags(&set(0.85, 2.79, 4.76, 7.95), LagMode::Cumulative).unwrap();
        assert!((lags.lag1 - 1.94).abs() < 1e-9);
        assert!((lags.lag2 - 3.91).abs() < 1e-9);
        assert!((lags.lag3 - 7.10).abs() < 1e-9);
    }

    #[test]
    fn lags_degenerate_and_unit_spacing() {
        let lags = compute_lags(&set(2.0, 2.0, 2.0, 2.0), LagMode::Cumulative).unwrap();
        assert_eq!((lags.lag1, lags.lag2, lags.lag3), (0.0, 0.0, 0.0));

        let ms = set(0.0, 1.0, 2.0, 3.0);
        let lags = compute_lags(&ms, LagMode::Cumulative).unwrap();
        assert_eq!((lags.lag1, lags.lag2, lags.lag3), (1.0, 2.0, 3.0));
        let cons = compute_lags(&ms, LagMode::Consecutive).unwrap();
        assert_eq!((cons.lag1, cons.lag2, cons.lag3), (1.0, 1.0, 1.0));
    }

    #[test]
    fn lags_censored_error() {
        let mut ms = set(0.0, 1.0, 2.0, 3.0);
        ms.essential = None;
        assert_eq!(
            compute_lags(&ms, LagMode::Cumulative).unwrap_err(),
            TrajectoryError::CensoredMilestone
        );
    }

    fn assignments_from(sets: &BTreeMap<UnitId, MilestoneSet>) -> Vec<SequenceAssignment> {
        assign_sequences(sets, LagMode::Cumulative)
    }

    #[test]
    fn distribution_singleton() {
        let mut sets = BTreeMap::new();
        sets.insert(UnitId::from("A"), set(1.0, 2.0, 5.0, 3.0)); // Seq3
        let assignments = assignments_from(&sets);
        let dist = sequence_distribution(&assignments).unwrap();
        for row in &dist.rows {
            if row.label == SequenceLabel::Seq3 {
                assert_eq!(row.count, 1);
                assert_eq!(row.frequency_pct, 100.0);
            } else {
                assert_eq!(row.count, 0);
            }
        }
    }

    #[test]
    fn distribution_percentage_format_matches_tables() {
        // 183 of 786 prints as 23.28, 30 of 786 as 3.82.
        assert_eq!(format!("{:.2}", 100.0 * 183.0 / 786.0), "23.28");
        assert_eq!(format!("{:.2}", 100.0 * 30.0 / 786.0), "3.82");
    }

    #[test]
    fn distribution_percentages_sum_to_100() {
        let mut sets = BTreeMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..37 {
            let t: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..10.0)).collect();
            sets.insert(UnitId::new(format!("u{i}")), set(t[0], t[1], t[2], t[3]));
        }
        let assignments = assignments_from(&sets);
        let dist = sequence_distribution(&assignments).unwrap();
        let total: usize = dist.rows.iter().map(|r| r.count).sum();
        let pct: f64 = dist.rows.iter().map(|r| r.frequency_pct).sum();
        assert_eq!(total, 37);
        assert!((pct - 100.0).abs() < 0.05);
    }

    #[test]
    fn stats_zero_variance_members() {
        let mut sets = BTreeMap::new();
        sets.insert(UnitId::from("A"), set(1.0, 2.0, 3.0, 4.0));
        sets.insert(UnitId::from("B"), set(1.0, 2.0, 3.0, 4.0));
        let assignments = assignments_from(&sets);
        let stats = sequence_stats(&assignments, &sets).unwrap();
        let row = &stats.rows[&SequenceLabel::Seq1];
        assert_eq!(row.count, 2);
        for sd in row.milestone_sd.iter() {
            assert_eq!(*sd, Some(0.0));
        }
        assert_eq!(row.mean_max_duration, 4.0);
        assert_eq!(row.rank, 1);
    }

    #[test]
    fn stats_single_member_sd_omitted() {
        let mut sets = BTreeMap::new();
        sets.insert(UnitId::from("A"), set(1.0, 2.0, 3.0, 4.0));
        let assignments = assignments_from(&sets);
        let stats = sequence_stats(&assignments, &sets).unwrap();
        let row = &stats.rows[&SequenceLabel::Seq1];
        assert_eq!(row.milestone_sd, [None; 4]);
    }

    /// Naive two-pass oracle, deliberately separate from `stats::mean` /
    /// `stats::sample_sd`: accumulate into f64 via fold, then a second
    /// pass for squared deviations.
    fn naive_mean_sd(values: &[f64]) -> (f64, Option<f64>) {
        let n = values.len() as f64;
        let mean = values.iter().fold(0.0, |acc, v| acc + v / n);
        if values.len() < 2 {
            return (mean, None);
        }
        let ss = values.iter().fold(0.0, |acc, v| acc + (v - mean).powi(2));
        (mean, Some((ss / (n - 1.0)).sqrt()))
    }

    #[test]
    fn stats_match_naive_oracle_on_random_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut sets = BTreeMap::new();
        for i in 0..200 {
            let evac = rng.random_range(0.0..2.0);
            let rest: Vec<f64> = (0..3).map(|_| rng.random_range(2.0..12.0)).collect();
            sets.insert(
                UnitId::new(format!("u{i:03}")),
                set(evac, rest[0], rest[1], rest[2]),
            );
        }
        let assignments = assignments_from(&sets);
        let stats = sequence_stats(&assignments, &sets).unwrap();
        for (label, row) in &stats.rows {
            let times: Vec<f64> = assignments
                .iter()
                .filter(|a| a.label == *label)
                .map(|a| sets[&a.unit].essential.unwrap())
                .collect();
            let (om, osd) = naive_mean_sd(&times);
            assert!((row.milestone_mean[1] - om).abs() < 1e-10, "{label}");
            match (row.milestone_sd[1], osd) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-10),
                (a, b) => assert_eq!(a, b),
            }
        }
    }

    #[test]
    fn regression_table_insufficient_members() {
        let mut sets = BTreeMap::new();
        sets.insert(UnitId::from("A"), set(0.0, 1.0, 2.0, 3.0));
        sets.insert(UnitId::from("B"), set(0.0, 1.5, 2.5, 3.5));
        let assignments = assignments_from(&sets);
        let table = regression_table(&assignments, HuberParams::default(), false);
        let row = &table.rows[&SequenceLabel::Seq1];
        assert!(matches!(row.lag2_on_lag1, FitCell::Insufficient { n: 2 }));
        assert!(matches!(row.lag3_on_lag2, FitCell::Insufficient { n: 2 }));
    }

    #[test]
    fn regression_recovers_planted_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut sets = BTreeMap::new();
        for i in 0..80 {
            let lag1 = rng.random_range(0.5..3.0);
            let lag2 = 0.6 + 1.25 * lag1;
            let lag3 = 0.5 + 1.15 * lag2;
            sets.insert(
                UnitId::new(format!("u{i:03}")),
                set(0.5, 0.5 + lag1, 0.5 + lag2, 0.5 + lag3),
            );
        }
        let assignments = assignments_from(&sets);
        assert!(assignments.iter().all(|a| a.label == SequenceLabel::Seq1));
        let table = regression_table(&assignments, HuberParams::default(), false);
        match &table.rows[&SequenceLabel::Seq1].lag2_on_lag1 {
            FitCell::Ok {
                beta0,
                beta1,
                stars,
                ..
            } => {
                assert!((beta1 - 1.25).abs() < 1e-8);
                assert!((beta0 - 0.6).abs() < 1e-8);
                assert_eq!(stars, "***");
            }
            other => panic!("unexpected cell {other:?}"),
        }
    }

    #[test]
    fn lag_invariants_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let mut t: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..10.0)).collect();
            let ms = set(t[0], t[1], t[2], t[3]);
            let lags = compute_lags(&ms, LagMode::Cumulative).unwrap();
            assert!(0.0 <= lags.lag1 && lags.lag1 <= lags.lag2 && lags.lag2 <= lags.lag3);
            // Permutation invariance: same times in any insertion order
            // classify identically.
            t.reverse();
            let label1 = classify_sequence(&ms);
            let label2 = classify_sequence(&ms.clone());
            assert_eq!(label1, label2);
        }
    }

    #[test]
    fn correlations_diagonal_and_self() {
        let inputs: Vec<CorrelationInput> = (0..10)
            .map(|i| {
                let v = i as f64;
                CorrelationInput {
                    unit: UnitId::new(format!("u{i}")),
                    lags: Some(LagTriple {
                        lag1: v,
                        lag2: v,
                        lag3: 2.0 * v,
                    }),
                    pde: Some(0.1 * v),
                    income: Some(50_000.0 - 100.0 * v),
                }
            })
            .collect();
        let m = correlations(&inputs).unwrap();
        for i in 0..5 {
            assert_eq!(m.r[i][i], Some(1.0));
        }
        // lag1 vs lag2 are identical series: r = 1.
        assert!((m.r[0][1].unwrap() - 1.0).abs() < 1e-12);
        assert!((m.r[0][4].unwrap() + 1.0).abs() < 1e-12);
        assert!(m.p[0][2].unwrap() < 1e-6);
    }

    #[test]
    fn correlations_independent_noise_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let inputs: Vec<CorrelationInput> = (0..500)
            .map(|i| CorrelationInput {
                unit: UnitId::new(format!("u{i}")),
                lags: Some(LagTriple {
                    lag1: rng.random::<f64>(),
                    lag2: rng.random::<f64>(),
                    lag3: rng.random::<f64>(),
                }),
                pde: Some(rng.random::<f64>()),
                income: Some(rng.random::<f64>()),
            })
            .collect();
        let m = correlations(&inputs).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert!(
                        m.r[i][j].unwrap().abs() < 0.12,
                        "r[{i}][{j}] = {:?}",
                        m.r[i][j]
                    );
                }
            }
        }
    }

    #[test]
    fn correlations_too_few_observations() {
        let inputs = vec![
            CorrelationInput {
                unit: UnitId::from("A"),
                lags: None,
                pde: Some(0.5),
                income: Some(1.0),
            };
            10
        ];
        assert!(matches!(
            correlations(&inputs),
            Err(TrajectoryError::TooFewObservations { .. })
        ));
    }

    #[test]
    fn correlations_pairwise_complete_deletion() {
        // income missing for half the units: income pairs use fewer n.
        let inputs: Vec<CorrelationInput> = (0..20)
            .map(|i| {
                let v = i as f64;
                CorrelationInput {
                    unit: UnitId::new(format!("u{i}")),
                    lags: Some(LagTriple {
                        lag1: v,
                        lag2: v + 1.0,
                        lag3: v + 2.0,
                    }),
                    pde: Some(0.05 * v),
                    income: (i % 2 == 0).then_some(40_000.0 + 10.0 * v),
                }
            })
            .collect();
        let m = correlations(&inputs).unwrap();
        assert_eq!(m.n[0][1], 20);
        assert_eq!(m.n[0][4], 10);
        assert_eq!(m.n[4][4], 10);
    }

    proptest::proptest! {
        #[test]
        fn classification_total_and_lags_ordered(
            times in proptest::collection::vec(
                proptest::option::weighted(0.9, 0.0..200.0f64), 4)
        ) {
            let ms = MilestoneSet {
                evacuation: times[0],
                essential: times[1],
                nonessential: times[2],
                moveout: times[3],
            };
            let label = classify_sequence(&ms);
            proptest::prop_assert_eq!(label, classify_sequence(&ms.clone()));
            if !ms.is_complete() {
                proptest::prop_assert_eq!(label, SequenceLabel::Other);
                proptest::prop_assert!(compute_lags(&ms, LagMode::Cumulative).is_err());
                return Ok(());
            }
            let ordered = ordered_milestones(&ms).unwrap();
            // Ascending with the canonical tie-break.
            for w in ordered.windows(2) {
                proptest::prop_assert!(
                    w[0].1 < w[1].1
                        || (w[0].1 == w[1].1 && w[0].0.priority() < w[1].0.priority())
                );
            }
            if ordered[0].0 == MilestoneKind::Evacuation {
                proptest::prop_assert_ne!(label, SequenceLabel::Other);
            } else {
                proptest::prop_assert_eq!(label, SequenceLabel::Other);
            }
            let lags = compute_lags(&ms, LagMode::Cumulative).unwrap();
            proptest::prop_assert!(0.0 <= lags.lag1);
            proptest::prop_assert!(lags.lag1 <= lags.lag2 && lags.lag2 <= lags.lag3);
            // Consecutive gaps sum back to the cumulative total.
            let cons = compute_lags(&ms, LagMode::Consecutive).unwrap();
            proptest::prop_assert!(
                (cons.lag1 + cons.lag2 + cons.lag3 - lags.lag3).abs() < 1e-9
            );
        }
    }
}
