//! Report bundle assembly and the on-disk formats: milestone/sequence/
//! vulnerability CSVs, table-shaped JSON reports, and run metadata.
//!
//! Output is byte-deterministic: map iteration is ordered, JSON numbers
//! use the shortest round-trip decimal encoding, and human-facing CSV
//! columns are fixed at two decimals.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Dataset, IngestError};
use crate::milestones::{compute_milestones, DetectionOutcome, OutcomeReason};
use crate::model::{MilestoneKind, MilestoneSet, SequenceLabel, StudyConfig, UnitId};
use crate::regress::HuberParams;
use crate::trajectory::{
    assign_sequences, correlations, regression_table, sequence_distribution, sequence_stats,
    CorrelationInput, CorrelationMatrix, LagMode, LagTriple, RegressionTable, SequenceAssignment,
    SequenceDistribution, SequenceStats, TrajectoryError,
};
use crate::vulnerability::{
    build_profiles, income_by_sequence, lag_percent_change, pde_scores, sequence_by_quantile,
    CrossTabs, DisparityTable, IncomeSummary, MergeWarning, VulnError, VulnerabilityProfile,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Vulnerability(#[from] VulnError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot encode {what}: {source}")]
    Json {
        what: &'static str,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Knobs surfaced by the CLI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub lag_mode: LagMode,
    pub normalize_lags: bool,
    pub huber: HuberParams,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            lag_mode: LagMode::Cumulative,
            normalize_lags: false,
            huber: HuberParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool_version: String,
    /// FNV-1a hash of the canonical config JSON.
    pub config_hash: String,
    /// Seed echoed from `ground_truth.json` when the data directory was
    /// produced by the generator.
    pub seed: Option<u64>,
}

/// Everything the `report` command computes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub milestones: BTreeMap<UnitId, MilestoneSet>,
    pub outcome_log: Vec<DetectionOutcome>,
    pub assignments: Vec<SequenceAssignment>,
    pub distribution: SequenceDistribution,
    pub stats: SequenceStats,
    pub regression: RegressionTable,
    pub profiles: BTreeMap<UnitId, VulnerabilityProfile>,
    pub crosstabs: CrossTabs,
    pub income_summary: BTreeMap<SequenceLabel, IncomeSummary>,
    pub disparity: DisparityTable,
    /// Absent when fewer than three units carry all five quantities.
    pub correlations: Option<CorrelationMatrix>,
    pub merge_warnings: Vec<MergeWarning>,
    pub metadata: RunMetadata,
}

/// Runs milestones -> sequences -> regression -> vulnerability -> disparity
/// over a parsed dataset.
pub fn run_pipeline(
    ds: &Dataset,
    cfg: &StudyConfig,
    opts: PipelineOptions,
    seed: Option<u64>,
) -> Result<ReportBundle, PipelineError> {
    let (milestones, outcome_log) = compute_milestones(ds, cfg);
    let assignments = assign_sequences(&milestones, opts.lag_mode);
    let distribution = sequence_distribution(&assignments)?;
    let stats = sequence_stats(&assignments, &milestones)?;
    let regression = regression_table(&assignments, opts.huber, opts.normalize_lags);

    let (scores, merge_warnings) = pde_scores(&ds.claims, cfg)?;
    let profiles = build_profiles(&ds.roster, &scores, &ds.income, cfg)?;
    let crosstabs = sequence_by_quantile(&assignments, &profiles, cfg);
    let income_summary = income_by_sequence(&assignments, &profiles);
    let disparity = lag_percent_change(&assignments, &profiles, cfg);

    let corr_inputs: Vec<CorrelationInput> = assignments
        .iter()
        .map(|a| {
            let p = profiles.get(&a.unit);
            CorrelationInput {
                unit: a.unit.clone(),
                lags: a.lags,
                pde: p.map(|p| p.pde),
                income: p.and_then(|p| p.income),
            }
        })
        .collect();
    let correlations = match correlations(&corr_inputs) {
        Ok(m) => Some(m),
        Err(TrajectoryError::TooFewObservations { .. }) => None,
        Err(e) => return Err(e.into()),
    };

    Ok(ReportBundle {
        milestones,
        outcome_log,
        assignments,
        distribution,
        stats,
        regression,
        profiles,
        crosstabs,
        income_summary,
        disparity,
        correlations,
        merge_warnings,
        metadata: RunMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(cfg),
            seed,
        },
    })
}

/// FNV-1a over the canonical config JSON.
pub fn config_hash(cfg: &StudyConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let mut h: u64 = 0xcbf29ce484222325;
    for b in json.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// Shortest decimal that round-trips; used for machine-readable columns.
fn fmt_weeks(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt_weeks(v: Option<f64>) -> String {
    v.map(fmt_weeks).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// milestones.csv

pub fn write_milestones_csv(
    path: &Path,
    sets: &BTreeMap<UnitId, MilestoneSet>,
    log: &[DetectionOutcome],
) -> Result<(), PipelineError> {
    let mut reasons: BTreeMap<(&UnitId, MilestoneKind), OutcomeReason> = BTreeMap::new();
    for o in log {
        reasons.insert((&o.unit, o.kind), o.reason);
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    (|| -> std::io::Result<()> {
        writeln!(
            w,
            "unit,evac_weeks,essential_weeks,nonessential_weeks,moveout_weeks,\
             evac_reason,essential_reason,nonessential_reason,moveout_reason"
        )?;
        for (unit, ms) in sets {
            let reason = |kind| {
                reasons
                    .get(&(unit, kind))
                    .map(|r| r.as_str())
                    .unwrap_or("recovered")
            };
            writeln!(
                w,
                "{unit},{},{},{},{},{},{},{},{}",
                fmt_opt_weeks(ms.evacuation),
                fmt_opt_weeks(ms.essential),
                fmt_opt_weeks(ms.nonessential),
                fmt_opt_weeks(ms.moveout),
                reason(MilestoneKind::Evacuation),
                reason(MilestoneKind::Essential),
                reason(MilestoneKind::NonEssential),
                reason(MilestoneKind::MoveOut),
            )?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

/// Reads back what `write_milestones_csv` produced.
pub fn read_milestones_csv(
    path: &Path,
) -> Result<BTreeMap<UnitId, (MilestoneSet, [OutcomeReason; 4])>, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        })?;
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let bad = |msg: String| PipelineError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(format!("row {}: {msg}", i + 2)),
        };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let parse_weeks = |s: &str| -> Result<Option<f64>, PipelineError> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>()
                .map(Some)
                .map_err(|e| bad(format!("weeks field {s:?}: {e}")))
        };
        let unit = UnitId::from(rec.get(0).unwrap_or_default());
        let ms = MilestoneSet {
            evacuation: parse_weeks(rec.get(1).unwrap_or_default())?,
            essential: parse_weeks(rec.get(2).unwrap_or_default())?,
            nonessential: parse_weeks(rec.get(3).unwrap_or_default())?,
            moveout: parse_weeks(rec.get(4).unwrap_or_default())?,
        };
        let reason = |idx: usize| {
            OutcomeReason::parse(rec.get(idx).unwrap_or_default())
                .unwrap_or(OutcomeReason::Recovered)
        };
        out.insert(unit, (ms, [reason(5), reason(6), reason(7), reason(8)]));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// sequences.csv / lags.csv

pub fn write_sequences_csv(
    path: &Path,
    assignments: &[SequenceAssignment],
    lags_only: bool,
) -> Result<(), PipelineError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    (|| -> std::io::Result<()> {
        writeln!(w, "unit,label,lag1,lag2,lag3")?;
        for a in assignments {
            if lags_only && a.lags.is_none() {
                continue;
            }
            let (l1, l2, l3) = match a.lags {
                Some(l) => (fmt_weeks(l.lag1), fmt_weeks(l.lag2), fmt_weeks(l.lag3)),
                None => (String::new(), String::new(), String::new()),
            };
            writeln!(w, "{},{},{l1},{l2},{l3}", a.unit, a.label)?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

pub fn read_sequences_csv(
    path: &Path,
) -> Result<Vec<(UnitId, SequenceLabel, Option<LagTriple>)>, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        })?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let bad = |msg: String| PipelineError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(msg),
        };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let unit = UnitId::from(rec.get(0).unwrap_or_default());
        let label =
            SequenceLabel::parse(rec.get(1).unwrap_or_default()).unwrap_or(SequenceLabel::Other);
        let lag = |i: usize| -> Result<Option<f64>, PipelineError> {
            let s = rec.get(i).unwrap_or_default();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse()
                .map(Some)
                .map_err(|e| bad(format!("lag field {s:?}: {e}")))
        };
        let lags = match (lag(2)?, lag(3)?, lag(4)?) {
            (Some(lag1), Some(lag2), Some(lag3)) => Some(LagTriple { lag1, lag2, lag3 }),
            _ => None,
        };
        out.push((unit, label, lags));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// distribution.csv / sequence_stats.csv (two-decimal human tables)

pub fn write_distribution_csv(
    path: &Path,
    dist: &SequenceDistribution,
) -> Result<(), PipelineError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    (|| -> std::io::Result<()> {
        writeln!(w, "label,count,frequency_pct")?;
        for row in &dist.rows {
            writeln!(w, "{},{},{:.2}", row.label, row.count, row.frequency_pct)?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

pub fn write_sequence_stats_csv(path: &Path, stats: &SequenceStats) -> Result<(), PipelineError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    (|| -> std::io::Result<()> {
        writeln!(
            w,
            "label,count,frequency_pct,evacuation_mean,evacuation_sd,essential_mean,\
             essential_sd,nonessential_mean,nonessential_sd,moveout_mean,moveout_sd,\
             mean_max_duration,rank"
        )?;
        for (label, row) in &stats.rows {
            let sd = |i: usize| {
                row.milestone_sd[i]
                    .map(|v| format!("{v:.2}"))
                    .unwrap_or_default()
            };
            writeln!(
                w,
                "{label},{},{:.2},{:.2},{},{:.2},{},{:.2},{},{:.2},{},{:.2},{}",
                row.count,
                row.frequency_pct,
                row.milestone_mean[0],
                sd(0),
                row.milestone_mean[1],
                sd(1),
                row.milestone_mean[2],
                sd(2),
                row.milestone_mean[3],
                sd(3),
                row.mean_max_duration,
                row.rank,
            )?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// vulnerability.csv

pub fn write_vulnerability_csv(
    path: &Path,
    profiles: &BTreeMap<UnitId, VulnerabilityProfile>,
) -> Result<(), PipelineError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    (|| -> std::io::Result<()> {
        writeln!(w, "unit,pde,income,pde_quantile,income_quantile")?;
        for (unit, p) in profiles {
            let income = p
                .income
                .map(|v| format!("{}", v as u64))
                .unwrap_or_default();
            let iq = p
                .income_quantile
                .map(|q| format!("Q{q}"))
                .unwrap_or_default();
            writeln!(
                w,
                "{unit},{},{income},Q{},{iq}",
                fmt_weeks(p.pde),
                p.pde_quantile
            )?;
        }
        w.flush()
    })()
    .map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// JSON reports

/// Pretty-printed deterministic JSON with a trailing newline.
pub fn write_json_report<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let json = serde_json::to_string_pretty(value).map_err(|source| PipelineError::Json {
        what: "json report",
        source,
    })?;
    std::fs::write(path, json + "\n").map_err(io_err(path))
}

/// `disparity.json`: sequence -> lag -> {upper, lower}.
pub fn write_disparity_json(path: &Path, table: &DisparityTable) -> Result<(), PipelineError> {
    write_json_report(path, &disparity_json(table))
}

/// `disparity.json` shape: sequence -> lag -> {upper, lower}.
fn disparity_json(table: &DisparityTable) -> BTreeMap<String, BTreeMap<String, serde_json::Value>> {
    table
        .rows
        .iter()
        .map(|(label, lags)| {
            let inner = lags
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    (
                        format!("lag{}", i + 1),
                        serde_json::json!({ "upper": d.upper, "lower": d.lower }),
                    )
                })
                .collect();
            (label.to_string(), inner)
        })
        .collect()
}

/// The fixed list of report artifacts the `report` command writes, before
/// charts.
pub const REPORT_FILES: [&str; 7] = [
    "milestones.csv",
    "distribution.csv",
    "sequence_stats.csv",
    "regression.json",
    "correlations.json",
    "crosstabs.json",
    "disparity.json",
];

/// Writes the full bundle: the seven table-shaped report files, the
/// supporting CSVs, run metadata, and the SVG charts. Returns the paths
/// written.
pub fn write_report(bundle: &ReportBundle, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    let mut track = |p: PathBuf| {
        written.push(p.clone());
        p
    };

    write_milestones_csv(
        &track(out_dir.join("milestones.csv")),
        &bundle.milestones,
        &bundle.outcome_log,
    )?;
    write_sequences_csv(
        &track(out_dir.join("sequences.csv")),
        &bundle.assignments,
        false,
    )?;
    write_distribution_csv(
        &track(out_dir.join("distribution.csv")),
        &bundle.distribution,
    )?;
    write_sequence_stats_csv(&track(out_dir.join("sequence_stats.csv")), &bundle.stats)?;
    write_vulnerability_csv(&track(out_dir.join("vulnerability.csv")), &bundle.profiles)?;
    write_json_report(&track(out_dir.join("regression.json")), &bundle.regression)?;
    write_json_report(
        &track(out_dir.join("correlations.json")),
        &bundle.correlations,
    )?;
    #[derive(Serialize)]
    struct CrossTabsJson<'a> {
        #[serde(flatten)]
        tabs: &'a CrossTabs,
        income_by_sequence: &'a BTreeMap<SequenceLabel, IncomeSummary>,
    }
    write_json_report(
        &track(out_dir.join("crosstabs.json")),
        &CrossTabsJson {
            tabs: &bundle.crosstabs,
            income_by_sequence: &bundle.income_summary,
        },
    )?;
    write_disparity_json(&track(out_dir.join("disparity.json")), &bundle.disparity)?;
    write_json_report(&track(out_dir.join("run.json")), &bundle.metadata)?;

    for (name, svg) in crate::svg::charts(bundle) {
        let path = track(out_dir.join(name));
        std::fs::write(&path, svg).map_err(io_err(&path))?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_dataset;
    use crate::synth::{generate_scenario, tests::small_spec};

    #[test]
    fn report_files_cover_bundle_and_round_trip() {
        let data = tempfile::tempdir().unwrap();
        let spec = small_spec(8);
        generate_scenario(&spec, data.path()).unwrap();
        let cfg = spec.config();
        let ds = parse_dataset(data.path(), &cfg).unwrap();
        let bundle = run_pipeline(&ds, &cfg, PipelineOptions::default(), Some(42)).unwrap();

        let out = tempfile::tempdir().unwrap();
        let written = write_report(&bundle, out.path()).unwrap();
        for name in REPORT_FILES {
            assert!(
                out.path().join(name).is_file(),
                "{name} missing from report output"
            );
        }
        let svgs = written
            .iter()
            .filter(|p| p.extension().is_some_and(|e| e == "svg"))
            .count();
        assert!(svgs >= 4, "only {svgs} charts written");

        // Round-trip: written CSVs are accepted by their own readers.
        let ms = read_milestones_csv(&out.path().join("milestones.csv")).unwrap();
        assert_eq!(ms.len(), bundle.milestones.len());
        for (unit, (set, _)) in &ms {
            assert_eq!(set, &bundle.milestones[unit]);
        }
        let seqs = read_sequences_csv(&out.path().join("sequences.csv")).unwrap();
        assert_eq!(seqs.len(), bundle.assignments.len());
        for ((unit, label, lags), a) in seqs.iter().zip(&bundle.assignments) {
            assert_eq!(unit, &a.unit);
            assert_eq!(label, &a.label);
            assert_eq!(lags, &a.lags);
        }
    }

    #[test]
    fn config_hash_stable_and_sensitive() {
        let cfg = StudyConfig::harvey_2017();
        let h1 = config_hash(&cfg);
        let h2 = config_hash(&cfg);
        assert_eq!(h1, h2);
        let mut other = cfg.clone();
        other.activity_threshold = 0.95;
        assert_ne!(h1, config_hash(&other));
    }

    #[test]
    fn identical_runs_byte_identical() {
        let data = tempfile::tempdir().unwrap();
        let spec = small_spec(6);
        generate_scenario(&spec, data.path()).unwrap();
        let cfg = spec.config();
        let ds = parse_dataset(data.path(), &cfg).unwrap();

        let out1 = tempfile::tempdir().unwrap();
        let out2 = tempfile::tempdir().unwrap();
        let b1 = run_pipeline(&ds, &cfg, PipelineOptions::default(), None).unwrap();
        let b2 = run_pipeline(&ds, &cfg, PipelineOptions::default(), None).unwrap();
        let files1 = write_report(&b1, out1.path()).unwrap();
        write_report(&b2, out2.path()).unwrap();
        for f in files1 {
            let name = f.file_name().unwrap();
            let a = std::fs::read(out1.path().join(name)).unwrap();
            let b = std::fs::read(out2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name:?} differs between identical runs");
        }
    }
}
