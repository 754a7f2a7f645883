//! Property-damage-extent scores (claim merging, capping, min-max
//! normalization), income/PDE quantiles, and the disparity cross-tabs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ClaimRecord, ClaimSource};
use crate::model::{PdeUnitStatistic, SequenceLabel, StudyConfig, UnitId};
use crate::stats;
use crate::trajectory::SequenceAssignment;

#[derive(Debug, Error, PartialEq)]
pub enum VulnError {
    #[error("{field} must be positive")]
    NonPositiveValue { field: &'static str },
    #[error("need at least {needed} values for {needed}-quantile breaks, got {got}")]
    TooFewValues { needed: usize, got: usize },
}

/// One effective claim per building after NFIP-precedence merging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveClaim {
    pub building_id: String,
    pub unit: UnitId,
    pub source_used: ClaimSource,
    /// Sum of the used source's damage amounts, before capping.
    pub damage: u64,
    pub property_value: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MergeWarning {
    ConflictingPropertyValue {
        building_id: String,
        values: Vec<u64>,
        used: u64,
    },
    ConflictingUnit {
        building_id: String,
        used: UnitId,
    },
}

/// Collapses claims to one effective claim per building: NFIP rows win
/// when present (their damages summed), IA rows are the fallback.
/// Conflicting property values use the maximum and produce a warning.
pub fn merge_claims(claims: &[ClaimRecord]) -> (Vec<EffectiveClaim>, Vec<MergeWarning>) {
    let mut by_building: BTreeMap<&str, Vec<&ClaimRecord>> = BTreeMap::new();
    for c in claims {
        by_building.entry(&c.building_id).or_default().push(c);
    }

    let mut out = Vec::with_capacity(by_building.len());
    let mut warnings = Vec::new();
    for (building, mut rows) in by_building {
        rows.sort_by(|a, b| a.claim_id.cmp(&b.claim_id));
        let source_used = if rows.iter().any(|r| r.source == ClaimSource::Nfip) {
            ClaimSource::Nfip
        } else {
            ClaimSource::Ia
        };
        let damage: u64 = rows
            .iter()
            .filter(|r| r.source == source_used)
            .map(|r| r.damage)
            .sum();

        let mut values: Vec<u64> = rows.iter().map(|r| r.property_value).collect();
        values.sort_unstable();
        values.dedup();
        let property_value = *values.last().expect("building has rows");
        if values.len() > 1 {
            warnings.push(MergeWarning::ConflictingPropertyValue {
                building_id: building.to_string(),
                values: values.clone(),
                used: property_value,
            });
        }

        let unit = rows[0].unit.clone();
        if rows.iter().any(|r| r.unit != unit) {
            warnings.push(MergeWarning::ConflictingUnit {
                building_id: building.to_string(),
                used: unit.clone(),
            });
        }

        out.push(EffectiveClaim {
            building_id: building.to_string(),
            unit,
            source_used,
            damage,
            property_value,
        });
    }
    (out, warnings)
}

/// Capped damage ratio: min(damage, source cap) / property value.
pub fn pde_raw(
    damage: u64,
    property_value: u64,
    source: ClaimSource,
    cfg: &StudyConfig,
) -> Result<f64, VulnError> {
    if property_value == 0 {
        return Err(VulnError::NonPositiveValue {
            field: "property_value",
        });
    }
    if damage == 0 {
        return Err(VulnError::NonPositiveValue { field: "damage" });
    }
    let cap = match source {
        ClaimSource::Nfip => cfg.nfip_cap,
        ClaimSource::Ia => cfg.ia_cap,
    };
    Ok(damage.min(cap) as f64 / property_value as f64)
}

/// (v - min) / (max - min); a degenerate range maps everything to 0.
pub fn minmax_normalize(raws: &[f64]) -> Vec<f64> {
    assert!(!raws.is_empty());
    let min = raws.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        raws.iter().map(|v| (v - min) / (max - min)).collect()
    } else {
        vec![0.0; raws.len()]
    }
}

/// Per-building damage score over merged claims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeScore {
    pub building_id: String,
    pub unit: UnitId,
    pub source_used: ClaimSource,
    pub raw: f64,
    pub normalized: f64,
}

/// Merges claims and produces capped, normalized per-building scores.
/// Normalization pools both sources unless the config asks for per-source
/// rescaling.
pub fn pde_scores(
    claims: &[ClaimRecord],
    cfg: &StudyConfig,
) -> Result<(Vec<PdeScore>, Vec<MergeWarning>), VulnError> {
    let (merged, warnings) = merge_claims(claims);
    let mut raws = Vec::with_capacity(merged.len());
    for c in &merged {
        raws.push(pde_raw(c.damage, c.property_value, c.source_used, cfg)?);
    }
    let normalized = if merged.is_empty() {
        Vec::new()
    } else if cfg.pde_normalize_per_source {
        let mut normalized = vec![0.0; merged.len()];
        for source in [ClaimSource::Nfip, ClaimSource::Ia] {
            let idx: Vec<usize> = merged
                .iter()
                .enumerate()
                .filter(|(_, c)| c.source_used == source)
                .map(|(i, _)| i)
                .collect();
            if idx.is_empty() {
                continue;
            }
            let group: Vec<f64> = idx.iter().map(|&i| raws[i]).collect();
            for (&i, v) in idx.iter().zip(minmax_normalize(&group)) {
                normalized[i] = v;
            }
        }
        normalized
    } else {
        minmax_normalize(&raws)
    };

    let scores = merged
        .into_iter()
        .zip(raws)
        .zip(normalized)
        .map(|((c, raw), normalized)| PdeScore {
            building_id: c.building_id,
            unit: c.unit,
            source_used: c.source_used,
            raw,
            normalized,
        })
        .collect();
    Ok((scores, warnings))
}

/// Equal-probability class breaks via the inclusive empirical quantile
/// convention. Membership intervals are half-open `(b_{j-1}, b_j]` with
/// the top class closed, so a value equal to a break lands in the lower
/// class deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBreaks {
    pub k: usize,
    /// The k-1 interior break points.
    pub breaks: Vec<f64>,
}

impl QuantileBreaks {
    /// 1-based class membership.
    pub fn class_of(&self, v: f64) -> usize {
        for (j, b) in self.breaks.iter().enumerate() {
            if v <= *b {
                return j + 1;
            }
        }
        self.k
    }

    pub fn label_of(&self, v: f64) -> String {
        format!("Q{}", self.class_of(v))
    }
}

pub fn quantile_breaks(values: &[f64], k: usize) -> Result<QuantileBreaks, VulnError> {
    assert!(k >= 2);
    if values.len() < k {
        return Err(VulnError::TooFewValues {
            needed: k,
            got: values.len(),
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let breaks = (1..k)
        .map(|j| stats::quantile_sorted(&sorted, j as f64 / k as f64))
        .collect();
    Ok(QuantileBreaks { k, breaks })
}

/// Per-unit damage and income with quartile memberships.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilityProfile {
    pub unit: UnitId,
    /// Aggregated normalized damage score; 0 when the unit has no claims.
    pub pde: f64,
    pub income: Option<f64>,
    /// 1-based class among the dataset-wide PDE breaks.
    pub pde_quantile: usize,
    /// 1-based class among units that have income data.
    pub income_quantile: Option<usize>,
}

/// Builds profiles for every roster unit: unit-level PDE aggregation
/// (mean by default), quantile memberships for PDE (all units) and income
/// (units with income rows).
pub fn build_profiles(
    roster: &std::collections::BTreeSet<UnitId>,
    scores: &[PdeScore],
    income: &BTreeMap<UnitId, u64>,
    cfg: &StudyConfig,
) -> Result<BTreeMap<UnitId, VulnerabilityProfile>, VulnError> {
    let mut per_unit: BTreeMap<&UnitId, Vec<f64>> = BTreeMap::new();
    for s in scores {
        per_unit.entry(&s.unit).or_default().push(s.normalized);
    }
    let aggregate = |vals: &[f64]| -> f64 {
        match cfg.pde_unit_statistic {
            PdeUnitStatistic::Mean => stats::mean(vals).unwrap_or(0.0),
            PdeUnitStatistic::Median => stats::median(vals).unwrap_or(0.0),
            PdeUnitStatistic::Max => vals.iter().copied().fold(0.0, f64::max),
        }
    };

    let k = cfg.income_quantile_count as usize;
    let pde_values: BTreeMap<&UnitId, f64> = roster
        .iter()
        .map(|u| (u, per_unit.get(u).map(|v| aggregate(v)).unwrap_or(0.0)))
        .collect();
    let pde_vec: Vec<f64> = pde_values.values().copied().collect();
    let pde_breaks = quantile_breaks(&pde_vec, k)?;

    let income_vec: Vec<f64> = roster
        .iter()
        .filter_map(|u| income.get(u).map(|v| *v as f64))
        .collect();
    let income_breaks = if income_vec.len() >= k {
        Some(quantile_breaks(&income_vec, k)?)
    } else {
        None
    };

    Ok(roster
        .iter()
        .map(|unit| {
            let pde = pde_values[unit];
            let unit_income = income.get(unit).map(|v| *v as f64);
            let income_quantile = match (&income_breaks, unit_income) {
                (Some(b), Some(v)) => Some(b.class_of(v)),
                _ => None,
            };
            (
                unit.clone(),
                VulnerabilityProfile {
                    unit: unit.clone(),
                    pde,
                    income: unit_income,
                    pde_quantile: pde_breaks.class_of(pde),
                    income_quantile,
                },
            )
        })
        .collect())
}

/// Sequence frequency per income quartile, one panel for each extreme PDE
/// quartile, with the uniform-expectation reference per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTabs {
    pub income_classes: usize,
    pub panels: Vec<CrossTabPanel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTabPanel {
    /// PDE class the panel filters on (1 = lowest damage, k = highest).
    pub pde_quantile: usize,
    pub rows: Vec<CrossTabRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTabRow {
    pub label: SequenceLabel,
    /// Counts per income class, index 0 = Q1.
    pub counts: Vec<usize>,
    /// Uniform reference: row total / income class count.
    pub expected: f64,
}

pub fn sequence_by_quantile(
    assignments: &[SequenceAssignment],
    profiles: &BTreeMap<UnitId, VulnerabilityProfile>,
    cfg: &StudyConfig,
) -> CrossTabs {
    let k = cfg.income_quantile_count as usize;
    let panels = [1, k]
        .into_iter()
        .map(|pde_q| {
            let rows = SequenceLabel::ALL
                .into_iter()
                .map(|label| {
                    let mut counts = vec![0usize; k];
                    for a in assignments.iter().filter(|a| a.label == label) {
                        let Some(profile) = profiles.get(&a.unit) else {
                            continue;
                        };
                        if profile.pde_quantile != pde_q {
                            continue;
                        }
                        if let Some(iq) = profile.income_quantile {
                            counts[iq - 1] += 1;
                        }
                    }
                    let total: usize = counts.iter().sum();
                    CrossTabRow {
                        label,
                        counts,
                        expected: total as f64 / k as f64,
                    }
                })
                .collect();
            CrossTabPanel {
                pde_quantile: pde_q,
                rows,
            }
        })
        .collect();
    CrossTabs {
        income_classes: k,
        panels,
    }
}

/// Member-income summary per sequence: group mean with the interquartile
/// range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncomeSummary {
    pub count: usize,
    pub mean: f64,
    pub q1: f64,
    pub q3: f64,
}

pub fn income_by_sequence(
    assignments: &[SequenceAssignment],
    profiles: &BTreeMap<UnitId, VulnerabilityProfile>,
) -> BTreeMap<SequenceLabel, IncomeSummary> {
    let mut out = BTreeMap::new();
    for label in SequenceLabel::ALL {
        let mut incomes: Vec<f64> = assignments
            .iter()
            .filter(|a| a.label == label)
            .filter_map(|a| profiles.get(&a.unit).and_then(|p| p.income))
            .collect();
        if incomes.is_empty() {
            continue;
        }
        incomes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.insert(
            label,
            IncomeSummary {
                count: incomes.len(),
                mean: stats::mean(&incomes).unwrap(),
                q1: stats::quantile_sorted(&incomes, 0.25),
                q3: stats::quantile_sorted(&incomes, 0.75),
            },
        );
    }
    out
}

/// Percent change of group mean lags against the sequence-wide mean, for
/// the upper (top income class) and lower (bottom class) groups. Positive
/// means slower than the sequence average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityTable {
    pub rows: BTreeMap<SequenceLabel, [LagDisparity; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LagDisparity {
    pub upper: Option<f64>,
    pub lower: Option<f64>,
}

pub fn lag_percent_change(
    assignments: &[SequenceAssignment],
    profiles: &BTreeMap<UnitId, VulnerabilityProfile>,
    cfg: &StudyConfig,
) -> DisparityTable {
    let k = cfg.income_quantile_count as usize;
    let mut rows = BTreeMap::new();
    for label in SequenceLabel::SEQUENCES {
        let members: Vec<(&SequenceAssignment, Option<usize>)> = assignments
            .iter()
            .filter(|a| a.label == label && a.lags.is_some())
            .map(|a| {
                let q = profiles.get(&a.unit).and_then(|p| p.income_quantile);
                (a, q)
            })
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut disparities = [LagDisparity::default(); 3];
        for lag_idx in 0..3 {
            let all: Vec<f64> = members
                .iter()
                .map(|(a, _)| a.lags.unwrap().as_array()[lag_idx])
                .collect();
            let overall = stats::mean(&all).unwrap();
            let group_mean = |class: usize| -> Option<f64> {
                let vals: Vec<f64> = members
                    .iter()
                    .filter(|(_, q)| *q == Some(class))
                    .map(|(a, _)| a.lags.unwrap().as_array()[lag_idx])
                    .collect();
                stats::mean(&vals)
            };
            let pct = |g: f64| {
                if overall == 0.0 {
                    0.0
                } else {
                    100.0 * (g - overall) / overall
                }
            };
            disparities[lag_idx] = LagDisparity {
                upper: group_mean(k).map(pct),
                lower: group_mean(1).map(pct),
            };
        }
        rows.insert(label, disparities);
    }
    DisparityTable { rows }
}
