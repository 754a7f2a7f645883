//! Parsing, validation, and aggregation of the five input tables into a
//! [`Dataset`], including the weekly home-tag carry-forward rule and the
//! evacuation / move-out rate computations.
//!
//! All series are gap-free over their declared date range: missing visit
//! days become explicit zeros flagged as imputed, while missing rate days
//! stay undefined (a denominator cannot be fabricated).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_config, ConfigViolation, DateRange, StudyConfig, UnitId};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing input file: {path}")]
    MissingFile { path: String },
    #[error("{file} row {row}, column {column}: {reason}")]
    Schema {
        file: &'static str,
        row: u64,
        column: &'static str,
        reason: String,
    },
    #[error("{file} row {row}: negative count in column {column}")]
    NegativeCount {
        file: &'static str,
        row: u64,
        column: &'static str,
    },
    #[error("evac.csv row {row}: evacuees exceed users")]
    EvacueesExceedUsers { row: u64 },
    #[error("evac.csv row {row}: users must be positive")]
    DivisionByZeroUsers { row: u64 },
    #[error("invalid study config: {0:?}")]
    InvalidConfig(Vec<ConfigViolation>),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Point-of-interest visit category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Essential,
    NonEssential,
}

impl Category {
    pub const ALL: [Category; 2] = [Category::Essential, Category::NonEssential];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Essential => "essential",
            Category::NonEssential => "nonessential",
        }
    }
}

/// Claim data source; NFIP takes precedence over IA when both exist for a
/// building.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClaimSource {
    Nfip,
    Ia,
}

impl ClaimSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ClaimSource::Nfip => "NFIP",
            ClaimSource::Ia => "IA",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub claim_id: String,
    pub source: ClaimSource,
    pub building_id: String,
    pub unit: UnitId,
    pub damage: u64,
    pub property_value: u64,
}

/// One weekly home-location observation; `unit` absent means the user
/// produced no home signal that week.
#[derive(Debug, Clone, PartialEq)]
pub struct HomeTagRecord {
    pub week_start: NaiveDate,
    pub user: String,
    pub unit: Option<UnitId>,
}

/// Daily visit counts for one (unit, category), dense over the declared
/// range. `imputed[i]` marks days with no recorded row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitSeries {
    pub values: Vec<u64>,
    pub imputed: Vec<bool>,
}

/// Daily evacuation observations for one unit, dense over the declared
/// range; gap days are `None` (rate undefined).
pub type EvacSeries = Vec<Option<(u64, u64)>>;

/// Weekly home-tag table after carry-forward: per user, a filled unit for
/// every grid week from the first observation onward.
#[derive(Debug, Clone, PartialEq)]
pub struct HomeTagTable {
    /// Week-start dates, 7 days apart, anchored at the earliest observed
    /// week.
    pub grid: Vec<NaiveDate>,
    pub users: BTreeMap<String, FilledUser>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilledUser {
    /// Index into `grid` of the first observed week.
    pub first_week: usize,
    /// One unit per grid week starting at `first_week`.
    pub units: Vec<UnitId>,
}

impl HomeTagTable {
    /// The user's filled unit at a grid week, if observed by then.
    pub fn unit_at<'a>(&self, user: &'a FilledUser, week: usize) -> Option<&'a UnitId> {
        week.checked_sub(user.first_week)
            .and_then(|i| user.units.get(i))
    }

    /// Flattens back into one record per (user, observed week).
    pub fn to_records(&self) -> Vec<HomeTagRecord> {
        let mut out = Vec::new();
        for (user, filled) in &self.users {
            for (i, unit) in filled.units.iter().enumerate() {
                out.push(HomeTagRecord {
                    week_start: self.grid[filled.first_week + i],
                    user: user.clone(),
                    unit: Some(unit.clone()),
                });
            }
        }
        out
    }
}

/// Weekly move-out counts per unit: `Some((movers, population))` where the
/// population is the unit's resident count in the *previous* week. The
/// first grid week and zero-population weeks are undefined.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MoveoutRates {
    pub counts: BTreeMap<UnitId, Vec<Option<(u64, u64)>>>,
}

impl MoveoutRates {
    pub fn rate(&self, unit: &UnitId, week: usize) -> Option<f64> {
        self.counts
            .get(unit)?
            .get(week)
            .copied()
            .flatten()
            .map(|(m, p)| m as f64 / p as f64)
    }
}

/// Validated, aggregated event tables keyed by unit and date/week.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub visits_range: DateRange,
    pub visits: BTreeMap<(UnitId, Category), VisitSeries>,
    pub evac_range: DateRange,
    pub evac: BTreeMap<UnitId, EvacSeries>,
    pub hometags: HomeTagTable,
    pub moveout: MoveoutRates,
    pub claims: Vec<ClaimRecord>,
    pub income: BTreeMap<UnitId, u64>,
    pub roster: BTreeSet<UnitId>,
}

impl Dataset {
    pub fn day_index(range: &DateRange, d: NaiveDate) -> Option<usize> {
        let off = d.signed_duration_since(range.start).num_days();
        if off < 0 || d > range.end {
            None
        } else {
            Some(off as usize)
        }
    }

    /// Re-serializes the canonical aggregated tables; parsing them again
    /// reproduces this dataset exactly.
    pub fn write_csv_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;

        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("visits.csv"))?);
        writeln!(w, "date,unit,category,visits")?;
        for date in self.visits_range.days() {
            let i = Self::day_index(&self.visits_range, date).unwrap();
            for ((unit, cat), series) in &self.visits {
                if !series.imputed[i] {
                    writeln!(w, "{date},{unit},{},{}", cat.as_str(), series.values[i])?;
                }
            }
        }
        w.flush()?;

        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("evac.csv"))?);
        writeln!(w, "date,unit,evacuees,users")?;
        for date in self.evac_range.days() {
            let i = Self::day_index(&self.evac_range, date).unwrap();
            for (unit, series) in &self.evac {
                if let Some((e, u)) = series[i] {
                    writeln!(w, "{date},{unit},{e},{u}")?;
                }
            }
        }
        w.flush()?;

        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("hometags.csv"))?);
        writeln!(w, "week_start,user,unit")?;
        for (user, filled) in &self.hometags.users {
            for (i, unit) in filled.units.iter().enumerate() {
                let week = self.hometags.grid[filled.first_week + i];
                writeln!(w, "{week},{user},{unit}")?;
            }
        }
        w.flush()?;

        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("claims.csv"))?);
        writeln!(w, "claim_id,source,building_id,unit,damage,property_value")?;
        for c in &self.claims {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.claim_id,
                c.source.as_str(),
                c.building_id,
                c.unit,
                c.damage,
                c.property_value
            )?;
        }
        w.flush()?;

        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("income.csv"))?);
        writeln!(w, "unit,median_household_income")?;
        for (unit, income) in &self.income {
            writeln!(w, "{unit},{income}")?;
        }
        w.flush()?;
        Ok(())
    }
}

fn open_reader(dir: &Path, name: &'static str) -> Result<csv::Reader<std::fs::File>, IngestError> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(IngestError::MissingFile {
            path: path.display().to_string(),
        });
    }
    let file = std::fs::File::open(&path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .buffer_capacity(1 << 20)
        .from_reader(file))
}

fn check_header(
    rdr: &mut csv::Reader<std::fs::File>,
    file: &'static str,
    expected: &[&str],
) -> Result<(), IngestError> {
    let headers = rdr.headers().map_err(|e| IngestError::Schema {
        file,
        row: 1,
        column: "header",
        reason: e.to_string(),
    })?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(IngestError::Schema {
            file,
            row: 1,
            column: "header",
            reason: format!("expected {expected:?}, found {got:?}"),
        });
    }
    Ok(())
}

/// Fixed-format ISO `YYYY-MM-DD` parser; fast path for bulk ingestion.
fn parse_date(
    bytes: &[u8],
    file: &'static str,
    row: u64,
    column: &'static str,
) -> Result<NaiveDate, IngestError> {
    let bad = || IngestError::Schema {
        file,
        row,
        column,
        reason: format!("invalid date {:?}", String::from_utf8_lossy(bytes)),
    };
    if bytes.len() != 10 || bytes[4] != b'-' || bytes[7] != b'-' {
        return Err(bad());
    }
    let num = |s: &[u8]| -> Option<u32> {
        let mut v = 0u32;
        for &b in s {
            if !b.is_ascii_digit() {
                return None;
            }
            v = v * 10 + (b - b'0') as u32;
        }
        Some(v)
    };
    let y = num(&bytes[0..4]).ok_or_else(bad)?;
    let m = num(&bytes[5..7]).ok_or_else(bad)?;
    let d = num(&bytes[8..10]).ok_or_else(bad)?;
    NaiveDate::from_ymd_opt(y as i32, m, d).ok_or_else(bad)
}

fn parse_int(
    bytes: &[u8],
    file: &'static str,
    row: u64,
    column: &'static str,
) -> Result<i64, IngestError> {
    let s = std::str::from_utf8(bytes).map_err(|_| IngestError::Schema {
        file,
        row,
        column,
        reason: "not utf-8".to_string(),
    })?;
    s.trim().parse::<i64>().map_err(|_| IngestError::Schema {
        file,
        row,
        column,
        reason: format!("invalid integer {s:?}"),
    })
}

fn field<'r>(
    rec: &'r csv::ByteRecord,
    idx: usize,
    file: &'static str,
    row: u64,
    column: &'static str,
) -> Result<&'r [u8], IngestError> {
    rec.get(idx).ok_or(IngestError::Schema {
        file,
        row,
        column,
        reason: "missing field".to_string(),
    })
}

fn to_string_field(
    bytes: &[u8],
    file: &'static str,
    row: u64,
    column: &'static str,
) -> Result<String, IngestError> {
    let s = std::str::from_utf8(bytes).map_err(|_| IngestError::Schema {
        file,
        row,
        column,
        reason: "not utf-8".to_string(),
    })?;
    if s.is_empty() {
        return Err(IngestError::Schema {
            file,
            row,
            column,
            reason: "empty value".to_string(),
        });
    }
    Ok(s.to_string())
}

/// Parses and validates the five tables, aggregates duplicates, fills
/// gaps, applies carry-forward, and derives the rate series.
pub fn parse_dataset(dir: &Path, cfg: &StudyConfig) -> Result<Dataset, IngestError> {
    validate_config(cfg).map_err(IngestError::InvalidConfig)?;

    let mut roster: BTreeSet<UnitId> = BTreeSet::new();

    // visits.csv — duplicate (date, unit, category) rows are summed.
    const VISITS: &str = "visits.csv";
    let mut rdr = open_reader(dir, VISITS)?;
    check_header(&mut rdr, VISITS, &["date", "unit", "category", "visits"])?;
    let mut unit_ids: Vec<UnitId> = Vec::new();
    let mut unit_lookup: HashMap<Vec<u8>, u32> = HashMap::new();
    let mut visit_rows: Vec<(NaiveDate, u32, Category, u64)> = Vec::new();
    let mut rec = csv::ByteRecord::new();
    let mut row = 1u64;
    loop {
        match rdr.read_byte_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                return Err(IngestError::Schema {
                    file: VISITS,
                    row: row + 1,
                    column: "line",
                    reason: e.to_string(),
                })
            }
        }
        row += 1;
        let date = parse_date(field(&rec, 0, VISITS, row, "date")?, VISITS, row, "date")?;
        let unit_bytes = field(&rec, 1, VISITS, row, "unit")?;
        if unit_bytes.is_empty() {
            return Err(IngestError::Schema {
                file: VISITS,
                row,
                column: "unit",
                reason: "empty value".to_string(),
            });
        }
        let unit_idx = match unit_lookup.get(unit_bytes) {
            Some(&i) => i,
            None => {
                let id = UnitId::new(String::from_utf8_lossy(unit_bytes).into_owned());
                let i = unit_ids.len() as u32;
                unit_lookup.insert(unit_bytes.to_vec(), i);
                unit_ids.push(id);
                i
            }
        };
        let category = match field(&rec, 2, VISITS, row, "category")? {
            b"essential" => Category::Essential,
            b"nonessential" => Category::NonEssential,
            other => {
                return Err(IngestError::Schema {
                    file: VISITS,
                    row,
                    column: "category",
                    reason: format!("unknown category {:?}", String::from_utf8_lossy(other)),
                })
            }
        };
        let visits = parse_int(
            field(&rec, 3, VISITS, row, "visits")?,
            VISITS,
            row,
            "visits",
        )?;
        if visits < 0 {
            return Err(IngestError::NegativeCount {
                file: VISITS,
                row,
                column: "visits",
            });
        }
        visit_rows.push((date, unit_idx, category, visits as u64));
    }

    let (visits_range, visits) = if visit_rows.is_empty() {
        // An empty table still yields a valid (single-day, empty) block.
        let today = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
        (DateRange::new(today, today), BTreeMap::new())
    } else {
        let start = visit_rows.iter().map(|r| r.0).min().unwrap();
        let end = visit_rows.iter().map(|r| r.0).max().unwrap();
        let len = (end.signed_duration_since(start).num_days() + 1) as usize;
        let mut dense: HashMap<(u32, Category), VisitSeries> = HashMap::new();
        for (date, unit_idx, cat, count) in visit_rows {
            let i = date.signed_duration_since(start).num_days() as usize;
            let series = dense.entry((unit_idx, cat)).or_insert_with(|| VisitSeries {
                values: vec![0; len],
                imputed: vec![true; len],
            });
            series.values[i] += count;
            series.imputed[i] = false;
        }
        let mut out: BTreeMap<(UnitId, Category), VisitSeries> = BTreeMap::new();
        for ((unit_idx, cat), series) in dense {
            let unit = unit_ids[unit_idx as usize].clone();
            roster.insert(unit.clone());
            out.insert((unit, cat), series);
        }
        (DateRange::new(start, end), out)
    };

    // evac.csv — one row per (date, unit).
    const EVAC: &str = "evac.csv";
    let mut rdr = open_reader(dir, EVAC)?;
    check_header(&mut rdr, EVAC, &["date", "unit", "evacuees", "users"])?;
    let mut evac_rows: Vec<(NaiveDate, UnitId, u64, u64)> = Vec::new();
    let mut seen: BTreeSet<(NaiveDate, UnitId)> = BTreeSet::new();
    let mut row = 1u64;
    let mut rec = csv::ByteRecord::new();
    loop {
        match rdr.read_byte_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                return Err(IngestError::Schema {
                    file: EVAC,
                    row: row + 1,
                    column: "line",
                    reason: e.to_string(),
                })
            }
        }
        row += 1;
        let date = parse_date(field(&rec, 0, EVAC, row, "date")?, EVAC, row, "date")?;
        let unit = UnitId::new(to_string_field(
            field(&rec, 1, EVAC, row, "unit")?,
            EVAC,
            row,
            "unit",
        )?);
        let evacuees = parse_int(
            field(&rec, 2, EVAC, row, "evacuees")?,
            EVAC,
            row,
            "evacuees",
        )?;
        let users = parse_int(field(&rec, 3, EVAC, row, "users")?, EVAC, row, "users")?;
        if evacuees < 0 {
            return Err(IngestError::NegativeCount {
                file: EVAC,
                row,
                column: "evacuees",
            });
        }
        if users <= 0 {
            return Err(IngestError::DivisionByZeroUsers { row });
        }
        if evacuees > users {
            return Err(IngestError::EvacueesExceedUsers { row });
        }
        if !seen.insert((date, unit.clone())) {
            return Err(IngestError::Schema {
                file: EVAC,
                row,
                column: "date",
                reason: format!("duplicate (date, unit) = ({date}, {unit})"),
            });
        }
        evac_rows.push((date, unit, evacuees as u64, users as u64));
    }
    let (evac_range, evac) = build_evac_series(evac_rows, &mut roster);

    // hometags.csv — weekly observations, empty unit field means absent.
    const TAGS: &str = "hometags.csv";
    let mut rdr = open_reader(dir, TAGS)?;
    check_header(&mut rdr, TAGS, &["week_start", "user", "unit"])?;
    let mut tag_rows: Vec<HomeTagRecord> = Vec::new();
    let mut seen: BTreeSet<(NaiveDate, String)> = BTreeSet::new();
    let mut row = 1u64;
    let mut rec = csv::ByteRecord::new();
    loop {
        match rdr.read_byte_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                return Err(IngestError::Schema {
                    file: TAGS,
                    row: row + 1,
                    column: "line",
                    reason: e.to_string(),
                })
            }
        }
        row += 1;
        let week_start = parse_date(
            field(&rec, 0, TAGS, row, "week_start")?,
            TAGS,
            row,
            "week_start",
        )?;
        let user = to_string_field(field(&rec, 1, TAGS, row, "user")?, TAGS, row, "user")?;
        let unit_bytes = field(&rec, 2, TAGS, row, "unit")?;
        let unit = if unit_bytes.is_empty() {
            None
        } else {
            Some(UnitId::new(to_string_field(unit_bytes, TAGS, row, "unit")?))
        };
        if !seen.insert((week_start, user.clone())) {
            return Err(IngestError::Schema {
                file: TAGS,
                row,
                column: "user",
                reason: format!("duplicate (week_start, user) = ({week_start}, {user})"),
            });
        }
        tag_rows.push(HomeTagRecord {
            week_start,
            user,
            unit,
        });
    }
    let hometags = carry_forward(&tag_rows)?;
    for filled in hometags.users.values() {
        for unit in &filled.units {
            roster.insert(unit.clone());
        }
    }
    let moveout = moveout_rates(&hometags);

    // claims.csv
    const CLAIMS: &str = "claims.csv";
    let mut rdr = open_reader(dir, CLAIMS)?;
    check_header(
        &mut rdr,
        CLAIMS,
        &[
            "claim_id",
            "source",
            "building_id",
            "unit",
            "damage",
            "property_value",
        ],
    )?;
    let mut claims: Vec<ClaimRecord> = Vec::new();
    let mut row = 1u64;
    let mut rec = csv::ByteRecord::new();
    loop {
        match rdr.read_byte_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                return Err(IngestError::Schema {
                    file: CLAIMS,
                    row: row + 1,
                    column: "line",
                    reason: e.to_string(),
                })
            }
        }
        row += 1;
        let claim_id = to_string_field(
            field(&rec, 0, CLAIMS, row, "claim_id")?,
            CLAIMS,
            row,
            "claim_id",
        )?;
        let source = match field(&rec, 1, CLAIMS, row, "source")? {
            b"NFIP" => ClaimSource::Nfip,
            b"IA" => ClaimSource::Ia,
            other => {
                return Err(IngestError::Schema {
                    file: CLAIMS,
                    row,
                    column: "source",
                    reason: format!("unknown source {:?}", String::from_utf8_lossy(other)),
                })
            }
        };
        let building_id = to_string_field(
            field(&rec, 2, CLAIMS, row, "building_id")?,
            CLAIMS,
            row,
            "building_id",
        )?;
        let unit = UnitId::new(to_string_field(
            field(&rec, 3, CLAIMS, row, "unit")?,
            CLAIMS,
            row,
            "unit",
        )?);
        let damage = parse_int(
            field(&rec, 4, CLAIMS, row, "damage")?,
            CLAIMS,
            row,
            "damage",
        )?;
        let property_value = parse_int(
            field(&rec, 5, CLAIMS, row, "property_value")?,
            CLAIMS,
            row,
            "property_value",
        )?;
        // Zero-damage records indicate damage unrelated to flooding and are
        // rejected at parse, as are non-positive property values.
        if damage <= 0 {
            return Err(IngestError::Schema {
                file: CLAIMS,
                row,
                column: "damage",
                reason: "damage must be > 0".to_string(),
            });
        }
        if property_value <= 0 {
            return Err(IngestError::Schema {
                file: CLAIMS,
                row,
                column: "property_value",
                reason: "property_value must be > 0".to_string(),
            });
        }
        roster.insert(unit.clone());
        claims.push(ClaimRecord {
            claim_id,
            source,
            building_id,
            unit,
            damage: damage as u64,
            property_value: property_value as u64,
        });
    }
    claims.sort_by(|a, b| a.claim_id.cmp(&b.claim_id));

    // income.csv — one row per unit.
    const INCOME: &str = "income.csv";
    let mut rdr = open_reader(dir, INCOME)?;
    check_header(&mut rdr, INCOME, &["unit", "median_household_income"])?;
    let mut income: BTreeMap<UnitId, u64> = BTreeMap::new();
    let mut row = 1u64;
    let mut rec = csv::ByteRecord::new();
    loop {
        match rdr.read_byte_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                return Err(IngestError::Schema {
                    file: INCOME,
                    row: row + 1,
                    column: "line",
                    reason: e.to_string(),
                })
            }
        }
        row += 1;
        let unit = UnitId::new(to_string_field(
            field(&rec, 0, INCOME, row, "unit")?,
            INCOME,
            row,
            "unit",
        )?);
        let value = parse_int(
            field(&rec, 1, INCOME, row, "median_household_income")?,
            INCOME,
            row,
            "median_household_income",
        )?;
        if value < 0 {
            return Err(IngestError::NegativeCount {
                file: INCOME,
                row,
                column: "median_household_income",
            });
        }
        if income.insert(unit.clone(), value as u64).is_some() {
            return Err(IngestError::Schema {
                file: INCOME,
                row,
                column: "unit",
                reason: format!("duplicate unit {unit}"),
            });
        }
        roster.insert(unit);
    }

    Ok(Dataset {
        visits_range,
        visits,
        evac_range,
        evac,
        hometags,
        moveout,
        claims,
        income,
        roster,
    })
}

fn build_evac_series(
    rows: Vec<(NaiveDate, UnitId, u64, u64)>,
    roster: &mut BTreeSet<UnitId>,
) -> (DateRange, BTreeMap<UnitId, EvacSeries>) {
    if rows.is_empty() {
        let d = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
        return (DateRange::new(d, d), BTreeMap::new());
    }
    let start = rows.iter().map(|r| r.0).min().unwrap();
    let end = rows.iter().map(|r| r.0).max().unwrap();
    let len = (end.signed_duration_since(start).num_days() + 1) as usize;
    let mut out: BTreeMap<UnitId, EvacSeries> = BTreeMap::new();
    for (date, unit, evacuees, users) in rows {
        roster.insert(unit.clone());
        let series = out.entry(unit).or_insert_with(|| vec![None; len]);
        let i = date.signed_duration_since(start).num_days() as usize;
        series[i] = Some((evacuees, users));
    }
    (DateRange::new(start, end), out)
}

/// Evacuation rate for one series day: evacuees / users.
pub fn evac_rate(obs: Option<(u64, u64)>) -> Option<f64> {
    obs.map(|(e, u)| e as f64 / u as f64)
}

/// Daily evacuation rates for one unit; gap days stay undefined.
pub fn evac_rate_series(series: &[Option<(u64, u64)>]) -> Vec<Option<f64>> {
    series.iter().map(|obs| evac_rate(*obs)).collect()
}

/// Fills each user's weekly home tags forward: every week after the first
/// observation carries the most recent known unit; weeks before the first
/// observation stay absent. Idempotent.
pub fn carry_forward(records: &[HomeTagRecord]) -> Result<HomeTagTable, IngestError> {
    if records.is_empty() {
        return Ok(HomeTagTable {
            grid: Vec::new(),
            users: BTreeMap::new(),
        });
    }
    let anchor = records.iter().map(|r| r.week_start).min().unwrap();
    let last = records.iter().map(|r| r.week_start).max().unwrap();
    // Alignment to the 7-day grid anchored at the earliest week.
    for (i, r) in records.iter().enumerate() {
        let off = r.week_start.signed_duration_since(anchor).num_days();
        if off % 7 != 0 {
            return Err(IngestError::Schema {
                file: "hometags.csv",
                row: i as u64 + 2,
                column: "week_start",
                reason: format!(
                    "week_start {} not aligned to the 7-day grid anchored at {anchor}",
                    r.week_start
                ),
            });
        }
    }
    let weeks = (last.signed_duration_since(anchor).num_days() / 7 + 1) as usize;
    let grid: Vec<NaiveDate> = (0..weeks)
        .map(|i| anchor + chrono::Duration::days(7 * i as i64))
        .collect();

    // Group observations per user, sorted by week.
    let mut per_user: BTreeMap<&str, Vec<(usize, &Option<UnitId>)>> = BTreeMap::new();
    for r in records {
        let w = (r.week_start.signed_duration_since(anchor).num_days() / 7) as usize;
        per_user.entry(&r.user).or_default().push((w, &r.unit));
    }

    let mut users = BTreeMap::new();
    for (user, mut obs) in per_user {
        obs.sort_by_key(|(w, _)| *w);
        let first_present = obs.iter().find(|(_, u)| u.is_some());
        let Some(&(first_week, _)) = first_present else {
            // Never observed with a unit: all weeks remain absent.
            continue;
        };
        let mut units: Vec<UnitId> = Vec::with_capacity(weeks - first_week);
        let mut obs_iter = obs.iter().filter(|(w, _)| *w >= first_week).peekable();
        let mut current: Option<UnitId> = None;
        for week in first_week..weeks {
            while let Some(&&(w, unit)) = obs_iter.peek() {
                if w > week {
                    break;
                }
                if let Some(u) = unit {
                    current = Some(u.clone());
                }
                obs_iter.next();
            }
            units.push(current.clone().expect("first observed week has a unit"));
        }
        users.insert(user.to_string(), FilledUser { first_week, units });
    }

    Ok(HomeTagTable { grid, users })
}

/// Weekly move-out rates from a filled table. For week `w` and unit `u`:
/// movers are users homed in `u` at `w-1` and elsewhere at `w`; the
/// population denominator is the week-`w-1` resident count.
pub fn moveout_rates(table: &HomeTagTable) -> MoveoutRates {
    let weeks = table.grid.len();
    let mut units: BTreeSet<UnitId> = BTreeSet::new();
    for filled in table.users.values() {
        for u in &filled.units {
            units.insert(u.clone());
        }
    }
    let mut counts: BTreeMap<UnitId, Vec<Option<(u64, u64)>>> =
        units.into_iter().map(|u| (u, vec![None; weeks])).collect();
    if weeks <= 1 {
        return MoveoutRates { counts };
    }

    // movers[w][u], population[w][u] accumulated per transition week.
    let mut movers: HashMap<(usize, &UnitId), u64> = HashMap::new();
    let mut population: HashMap<(usize, &UnitId), u64> = HashMap::new();
    for filled in table.users.values() {
        for w in (filled.first_week + 1)..weeks {
            let prev = &filled.units[w - 1 - filled.first_week];
            let cur = &filled.units[w - filled.first_week];
            *population.entry((w, prev)).or_insert(0) += 1;
            if prev != cur {
                *movers.entry((w, prev)).or_insert(0) += 1;
            }
        }
    }
    for ((w, unit), pop) in population {
        if pop > 0 {
            let m = movers.get(&(w, unit)).copied().unwrap_or(0);
            counts.get_mut(unit).expect("unit indexed")[w] = Some((m, pop));
        }
    }
    MoveoutRates { counts }
}
