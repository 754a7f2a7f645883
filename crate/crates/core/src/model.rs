//! Core domain vocabulary: identifiers, calendars, study configuration,
//! milestone and sequence types shared by every stage of the pipeline.

use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque key for a spatial unit (census tract or block group).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitId(pub String);

impl UnitId {
    pub fn new(s: impl Into<String>) -> Self {
        UnitId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for UnitId {
    fn from(s: &str) -> Self {
        UnitId(s.to_string())
    }
}

/// The four population-activity recovery milestones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MilestoneKind {
    Evacuation,
    Essential,
    NonEssential,
    MoveOut,
}

impl MilestoneKind {
    pub const ALL: [MilestoneKind; 4] = [
        MilestoneKind::Evacuation,
        MilestoneKind::Essential,
        MilestoneKind::NonEssential,
        MilestoneKind::MoveOut,
    ];

    /// Canonical tie-break priority: evacuation first, move-out last.
    pub fn priority(self) -> u8 {
        match self {
            MilestoneKind::Evacuation => 0,
            MilestoneKind::Essential => 1,
            MilestoneKind::NonEssential => 2,
            MilestoneKind::MoveOut => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MilestoneKind::Evacuation => "evacuation",
            MilestoneKind::Essential => "essential",
            MilestoneKind::NonEssential => "nonessential",
            MilestoneKind::MoveOut => "moveout",
        }
    }
}

/// Per-unit recovery times in fractional weeks since landfall.
///
/// Day-resolution milestones are stored as `day / 7`, week-resolution ones
/// as whole weeks. A `None` entry means the milestone was never reached
/// within the data horizon (censored); censoring is always explicit and
/// never encoded as a sentinel value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MilestoneSet {
    pub evacuation: Option<f64>,
    pub essential: Option<f64>,
    pub nonessential: Option<f64>,
    pub moveout: Option<f64>,
}

impl MilestoneSet {
    pub fn get(&self, kind: MilestoneKind) -> Option<f64> {
        match kind {
            MilestoneKind::Evacuation => self.evacuation,
            MilestoneKind::Essential => self.essential,
            MilestoneKind::NonEssential => self.nonessential,
            MilestoneKind::MoveOut => self.moveout,
        }
    }

    pub fn set(&mut self, kind: MilestoneKind, time: Option<f64>) {
        match kind {
            MilestoneKind::Evacuation => self.evacuation = time,
            MilestoneKind::Essential => self.essential = time,
            MilestoneKind::NonEssential => self.nonessential = time,
            MilestoneKind::MoveOut => self.moveout = time,
        }
    }

    /// True when all four milestones were reached.
    pub fn is_complete(&self) -> bool {
        MilestoneKind::ALL.iter().all(|&k| self.get(k).is_some())
    }
}

/// Canonical milestone orderings. Seq1–Seq6 are the six orderings that
/// start with evacuation recovery; everything else (including any censored
/// unit) is `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SequenceLabel {
    Seq1,
    Seq2,
    Seq3,
    Seq4,
    Seq5,
    Seq6,
    Other,
}

impl SequenceLabel {
    pub const ALL: [SequenceLabel; 7] = [
        SequenceLabel::Seq1,
        SequenceLabel::Seq2,
        SequenceLabel::Seq3,
        SequenceLabel::Seq4,
        SequenceLabel::Seq5,
        SequenceLabel::Seq6,
        SequenceLabel::Other,
    ];

    pub const SEQUENCES: [SequenceLabel; 6] = [
        SequenceLabel::Seq1,
        SequenceLabel::Seq2,
        SequenceLabel::Seq3,
        SequenceLabel::Seq4,
        SequenceLabel::Seq5,
        SequenceLabel::Seq6,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SequenceLabel::Seq1 => "Seq1",
            SequenceLabel::Seq2 => "Seq2",
            SequenceLabel::Seq3 => "Seq3",
            SequenceLabel::Seq4 => "Seq4",
            SequenceLabel::Seq5 => "Seq5",
            SequenceLabel::Seq6 => "Seq6",
            SequenceLabel::Other => "Other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.as_str() == s)
    }

    /// The milestone ordering each sequence encodes, evacuation omitted
    /// (it always comes first).
    pub fn tail_order(self) -> Option<[MilestoneKind; 3]> {
        use MilestoneKind::*;
        match self {
            SequenceLabel::Seq1 => Some([Essential, NonEssential, MoveOut]),
            SequenceLabel::Seq2 => Some([NonEssential, Essential, MoveOut]),
            SequenceLabel::Seq3 => Some([Essential, MoveOut, NonEssential]),
            SequenceLabel::Seq4 => Some([MoveOut, Essential, NonEssential]),
            SequenceLabel::Seq5 => Some([NonEssential, MoveOut, Essential]),
            SequenceLabel::Seq6 => Some([MoveOut, NonEssential, Essential]),
            SequenceLabel::Other => None,
        }
    }

    /// Inverse of [`tail_order`](Self::tail_order).
    pub fn from_tail_order(tail: [MilestoneKind; 3]) -> Option<Self> {
        Self::SEQUENCES
            .into_iter()
            .find(|l| l.tail_order() == Some(tail))
    }
}

impl fmt::Display for SequenceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inclusive calendar date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        DateRange { start, end }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.start.iter_days().take_while(move |d| *d <= self.end)
    }
}

/// How evacuation-rate deviation from baseline is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvacDeviationMode {
    /// |rate - baseline| / baseline <= tolerance.
    #[default]
    RelativeRate,
    /// |pct_change(rate)| <= 100 * tolerance percentage points.
    PctChangePoints,
}

/// How building-level damage scores aggregate to a unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeUnitStatistic {
    #[default]
    Mean,
    Median,
    Max,
}

/// Study parameters. Loaded from a single JSON document with keys exactly
/// matching the field names; dates are ISO-8601 `YYYY-MM-DD`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub landfall_date: NaiveDate,
    /// Length in days of the visit baseline window, which always ends the
    /// day before landfall.
    pub visit_baseline_window: u32,
    pub evac_baseline_window: DateRange,
    pub moveout_baseline_window: DateRange,
    pub activity_threshold: f64,
    pub activity_run_days: u32,
    pub evac_tolerance: f64,
    pub evac_run_days: u32,
    pub evac_deadline: NaiveDate,
    /// Steady-state tolerance in percentage points.
    pub steady_state_tolerance: f64,
    pub steady_state_run_weeks: u32,
    pub nfip_cap: u64,
    pub ia_cap: u64,
    pub income_quantile_count: u32,
    #[serde(default)]
    pub evac_deviation_mode: EvacDeviationMode,
    #[serde(default)]
    pub pde_unit_statistic: PdeUnitStatistic,
    /// Min-max normalize damage ratios per claim source instead of pooled.
    #[serde(default)]
    pub pde_normalize_per_source: bool,
}

impl StudyConfig {
    /// Defaults anchored at a given landfall date. Window offsets follow
    /// the Hurricane Harvey study calendar: a 21-day visit baseline, a
    /// four-week evacuation baseline ending 20 days before landfall, a
    /// five-week move-out baseline ending 13 days before landfall, and an
    /// evacuation deadline 90 days after landfall.
    pub fn for_landfall(landfall: NaiveDate) -> Self {
        let days = |n: i64| chrono::Duration::days(n);
        StudyConfig {
            landfall_date: landfall,
            visit_baseline_window: 21,
            evac_baseline_window: DateRange::new(landfall - days(47), landfall - days(20)),
            moveout_baseline_window: DateRange::new(landfall - days(47), landfall - days(13)),
            activity_threshold: 0.90,
            activity_run_days: 3,
            evac_tolerance: 0.10,
            evac_run_days: 3,
            evac_deadline: landfall + days(90),
            steady_state_tolerance: 10.0,
            steady_state_run_weeks: 1,
            nfip_cap: 500_000,
            ia_cap: 50_000,
            income_quantile_count: 4,
            evac_deviation_mode: EvacDeviationMode::default(),
            pde_unit_statistic: PdeUnitStatistic::default(),
            pde_normalize_per_source: false,
        }
    }

    /// The 2017 Hurricane Harvey study calendar: landfall 2017-08-25,
    /// evacuation baseline Jul 9 – Aug 5, move-out baseline Jul 9 – Aug 12,
    /// evacuation deadline Thanksgiving (Nov 23).
    pub fn harvey_2017() -> Self {
        Self::for_landfall(NaiveDate::from_ymd_opt(2017, 8, 25).unwrap())
    }

    /// Inclusive visit baseline window: `visit_baseline_window` days ending
    /// the day before landfall.
    pub fn visit_window(&self) -> DateRange {
        let end = self.landfall_date - chrono::Duration::days(1);
        let start = self.landfall_date - chrono::Duration::days(self.visit_baseline_window as i64);
        DateRange::new(start, end)
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let cfg: StudyConfig = serde_json::from_str(&text).map_err(|e| ConfigError::Malformed {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        validate_config(&cfg).map_err(ConfigError::Invalid)?;
        Ok(cfg)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("invalid config: {}", format_violations(.0))]
    Invalid(Vec<ConfigViolation>),
}

fn format_violations(vs: &[ConfigViolation]) -> String {
    vs.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// A single violated configuration invariant.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigViolation {
    #[error("{window} window overlaps or follows landfall")]
    WindowOverlapsLandfall { window: &'static str },
    #[error("{name} must lie in (0, 1]")]
    NonPositiveThreshold { name: &'static str },
    #[error("evac_deadline must fall after landfall")]
    DeadlineBeforeLandfall,
    #[error("{name} must be >= 1")]
    ZeroRunLength { name: &'static str },
    #[error("{name} must be > 0")]
    NonPositiveCap { name: &'static str },
    #[error("{name} must be >= 2")]
    QuantileCountTooSmall { name: &'static str },
}

/// Checks every invariant and reports all violations at once.
pub fn validate_config(cfg: &StudyConfig) -> Result<StudyConfig, Vec<ConfigViolation>> {
    let mut violations = Vec::new();

    if cfg.visit_baseline_window == 0 {
        violations.push(ConfigViolation::ZeroRunLength {
            name: "visit_baseline_window",
        });
    }
    if cfg.evac_baseline_window.end >= cfg.landfall_date
        || cfg.evac_baseline_window.start > cfg.evac_baseline_window.end
    {
        violations.push(ConfigViolation::WindowOverlapsLandfall {
            window: "evac_baseline",
        });
    }
    if cfg.moveout_baseline_window.end >= cfg.landfall_date
        || cfg.moveout_baseline_window.start > cfg.moveout_baseline_window.end
    {
        violations.push(ConfigViolation::WindowOverlapsLandfall {
            window: "moveout_baseline",
        });
    }
    if !(cfg.activity_threshold > 0.0 && cfg.activity_threshold <= 1.0) {
        violations.push(ConfigViolation::NonPositiveThreshold {
            name: "activity_threshold",
        });
    }
    if !(cfg.evac_tolerance > 0.0 && cfg.evac_tolerance <= 1.0) {
        violations.push(ConfigViolation::NonPositiveThreshold {
            name: "evac_tolerance",
        });
    }
    if cfg.steady_state_tolerance <= 0.0 {
        violations.push(ConfigViolation::NonPositiveThreshold {
            name: "steady_state_tolerance",
        });
    }
    if cfg.evac_deadline <= cfg.landfall_date {
        violations.push(ConfigViolation::DeadlineBeforeLandfall);
    }
    if cfg.activity_run_days == 0 {
        violations.push(ConfigViolation::ZeroRunLength {
            name: "activity_run_days",
        });
    }
    if cfg.evac_run_days == 0 {
        violations.push(ConfigViolation::ZeroRunLength {
            name: "evac_run_days",
        });
    }
    if cfg.steady_state_run_weeks == 0 {
        violations.push(ConfigViolation::ZeroRunLength {
            name: "steady_state_run_weeks",
        });
    }
    if cfg.nfip_cap == 0 {
        violations.push(ConfigViolation::NonPositiveCap { name: "nfip_cap" });
    }
    if cfg.ia_cap == 0 {
        violations.push(ConfigViolation::NonPositiveCap { name: "ia_cap" });
    }
    if cfg.income_quantile_count < 2 {
        violations.push(ConfigViolation::QuantileCountTooSmall {
            name: "income_quantile_count",
        });
    }

    if violations.is_empty() {
        Ok(cfg.clone())
    } else {
        Err(violations)
    }
}

/// Signed fractional weeks between a date and landfall, computed as exact
/// day difference divided by 7. Exact for multiples of 7 days and strictly
/// monotone in `d`.
pub fn weeks_since_landfall(d: NaiveDate, cfg: &StudyConfig) -> f64 {
    days_to_weeks(d.signed_duration_since(cfg.landfall_date).num_days())
}

/// The single day-to-week conversion used across the pipeline.
pub fn days_to_weeks(days: i64) -> f64 {
    days as f64 / 7.0
}
