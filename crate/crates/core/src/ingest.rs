//! Tracker-style CSV ingestion: per-region dense daily histories of plan
//! levels and new cases.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::catalog::{Assignment, PlanCatalog, PlanId};

pub const SMOOTHING_WINDOW: usize = 7;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("malformed csv: {0}")]
    MalformedCsv(String),
    #[error("{plan} level {value} on {date} in {region} is outside 0..={max}")]
    LevelOutOfRange {
        region: String,
        date: NaiveDate,
        plan: PlanId,
        value: String,
        max: u8,
    },
}

impl From<csv::Error> for IngestError {
    fn from(e: csv::Error) -> Self {
        IngestError::MalformedCsv(e.to_string())
    }
}

/// Country plus optional sub-national region.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegionKey {
    pub country_name: String,
    pub region_name: Option<String>,
}

impl RegionKey {
    pub fn country(name: impl Into<String>) -> Self {
        RegionKey {
            country_name: name.into(),
            region_name: None,
        }
    }

    pub fn new(country: impl Into<String>, region: Option<String>) -> Self {
        let region = region.filter(|r| !r.trim().is_empty());
        RegionKey {
            country_name: country.into(),
            region_name: region,
        }
    }

    /// `Country` or `Country__Region`.
    pub fn canonical(&self) -> String {
        match &self.region_name {
            Some(r) => format!("{}__{}", self.country_name, r),
            None => self.country_name.clone(),
        }
    }

    pub fn region_or_empty(&self) -> &str {
        self.region_name.as_deref().unwrap_or("")
    }
}

impl fmt::Display for RegionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl FromStr for RegionKey {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.split_once("__") {
            Some((c, r)) => RegionKey::new(c, Some(r.to_string())),
            None => RegionKey::country(s),
        })
    }
}

impl Serialize for RegionKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.canonical())
    }
}

impl<'de> Deserialize<'de> for RegionKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().unwrap())
    }
}

/// Dense daily history of one region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionHistory {
    pub key: RegionKey,
    pub dates: Vec<NaiveDate>,
    pub ip_levels: Vec<Assignment>,
    pub new_cases_raw: Vec<f64>,
    pub new_cases_smoothed: Vec<f64>,
}

impl RegionHistory {
    /// Builds a history from contiguous daily data; the smoothed series is
    /// derived.
    pub fn from_daily(
        key: RegionKey,
        first_date: NaiveDate,
        ip_levels: Vec<Assignment>,
        new_cases_raw: Vec<f64>,
    ) -> Self {
        assert_eq!(ip_levels.len(), new_cases_raw.len());
        let dates = (0..new_cases_raw.len())
            .map(|i| first_date + Days::new(i as u64))
            .collect();
        let new_cases_smoothed = if new_cases_raw.is_empty() {
            Vec::new()
        } else {
            rolling_average(&new_cases_raw, SMOOTHING_WINDOW)
        };
        RegionHistory {
            key,
            dates,
            ip_levels,
            new_cases_raw,
            new_cases_smoothed,
        }
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.dates.first().copied()
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.dates.last().copied()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let first = self.first_date()?;
        let idx = usize::try_from((date - first).num_days()).ok()?;
        (idx < self.len()).then_some(idx)
    }

    /// The history restricted to days strictly before `date`.
    pub fn before(&self, date: NaiveDate) -> RegionHistory {
        let n = self.dates.iter().take_while(|d| **d < date).count();
        RegionHistory {
            key: self.key.clone(),
            dates: self.dates[..n].to_vec(),
            ip_levels: self.ip_levels[..n].to_vec(),
            new_cases_raw: self.new_cases_raw[..n].to_vec(),
            new_cases_smoothed: self.new_cases_smoothed[..n].to_vec(),
        }
    }

    /// Smoothed new cases on the last recorded day.
    pub fn last_smoothed(&self) -> Option<f64> {
        self.new_cases_smoothed.last().copied()
    }
}

/// Trailing mean over at most `window` elements ending at each index.
pub fn rolling_average(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window > 0, "window must be positive");
    let mut out = Vec::with_capacity(series.len());
    for t in 0..series.len() {
        let start = (t + 1).saturating_sub(window);
        let slice = &series[start..=t];
        out.push(slice.iter().sum::<f64>() / slice.len() as f64);
    }
    out
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    NaiveDate::parse_from_str(s, "%Y%m%d")
        .or_else(|_| NaiveDate::parse_from_str(s, "%Y-%m-%d"))
        .ok()
}

struct Row {
    date: NaiveDate,
    confirmed: Option<f64>,
    levels: Vec<Option<u8>>,
}

/// Parses a tracker CSV into one dense history per region.
///
/// Cumulative cases and plan levels are forward-filled (leading gaps become
/// zero), calendar gaps repeat the previous day, and daily new cases are the
/// clamped first difference of the cumulative series with the first day at
/// zero.
pub fn parse_history<R: Read>(
    input: R,
    catalog: &PlanCatalog,
) -> Result<BTreeMap<RegionKey, RegionHistory>, IngestError> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(input);
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize, IngestError> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| IngestError::MalformedCsv(format!("missing column `{name}`")))
    };
    let country_col = col("CountryName")?;
    let region_col = col("RegionName")?;
    let date_col = col("Date")?;
    let cases_col = col("ConfirmedCases")?;
    let plan_cols = catalog
        .plans()
        .iter()
        .map(|p| col(p.id.display_name()))
        .collect::<Result<Vec<_>, _>>()?;

    let mut grouped: BTreeMap<RegionKey, Vec<Row>> = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let key = RegionKey::new(field(country_col), Some(field(region_col).to_string()));
        let date = parse_date(field(date_col)).ok_or_else(|| {
            IngestError::MalformedCsv(format!(
                "row {}: unparseable date `{}`",
                line + 2,
                field(date_col)
            ))
        })?;
        let confirmed = parse_number(field(cases_col)).map_err(|v| {
            IngestError::MalformedCsv(format!("row {}: bad ConfirmedCases `{v}`", line + 2))
        })?;
        let mut levels = Vec::with_capacity(plan_cols.len());
        for (spec, &c) in catalog.plans().iter().zip(&plan_cols) {
            let raw = field(c);
            let out_of_range = || IngestError::LevelOutOfRange {
                region: key.canonical(),
                date,
                plan: spec.id,
                value: raw.to_string(),
                max: spec.max_level,
            };
            let level = match parse_number(raw) {
                Ok(None) => None,
                Ok(Some(v)) => {
                    if v < 0.0 || v.fract() != 0.0 || v > spec.max_level as f64 {
                        return Err(out_of_range());
                    }
                    Some(v as u8)
                }
                Err(_) => return Err(out_of_range()),
            };
            levels.push(level);
        }
        grouped.entry(key).or_default().push(Row {
            date,
            confirmed,
            levels,
        });
    }

    let mut out = BTreeMap::new();
    for (key, mut rows) in grouped {
        rows.sort_by_key(|r| r.date);
        if let Some(w) = rows.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(IngestError::MalformedCsv(format!(
                "duplicate date {} for {}",
                w[0].date, key
            )));
        }
        out.insert(key.clone(), densify(key, &rows, catalog));
    }
    Ok(out)
}

fn parse_number(s: &str) -> Result<Option<f64>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Some)
        .ok_or_else(|| s.to_string())
}

fn densify(key: RegionKey, rows: &[Row], catalog: &PlanCatalog) -> RegionHistory {
    let first = rows[0].date;
    let last = rows[rows.len() - 1].date;
    let span = (last - first).num_days() as usize + 1;

    let mut levels = vec![0u8; catalog.len()];
    let mut cumulative = 0.0_f64;
    let mut ip_levels = Vec::with_capacity(span);
    let mut cumulative_series = Vec::with_capacity(span);
    let mut next = rows.iter().peekable();
    for day in 0..span {
        let date = first + Days::new(day as u64);
        if let Some(row) = next.next_if(|r| r.date == date) {
            if let Some(c) = row.confirmed {
                cumulative = c;
            }
            for (slot, l) in levels.iter_mut().zip(&row.levels) {
                if let Some(l) = l {
                    *slot = *l;
                }
            }
        }
        ip_levels.push(Assignment::from_levels(catalog, &levels));
        cumulative_series.push(cumulative);
    }

    let mut new_cases_raw = Vec::with_capacity(span);
    new_cases_raw.push(0.0);
    for w in cumulative_series.windows(2) {
        new_cases_raw.push((w[1] - w[0]).max(0.0));
    }
    RegionHistory::from_daily(key, first, ip_levels, new_cases_raw)
}
