//! The prescription CSV exchanged with evaluators and external predictors:
//! `CountryName,RegionName,Date,<12 plan columns>,PrescriptionIndex`,
//! one row per region-day.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;

use crate::catalog::{Assignment, PlanCatalog};
use crate::ingest::{parse_date, RegionKey};

#[derive(Debug, thiserror::Error)]
pub enum PrescriptionCsvError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed prescription csv: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrescriptionRow {
    pub region: RegionKey,
    pub date: NaiveDate,
    pub assignment: Assignment,
    pub prescription_index: u32,
}

pub fn header(catalog: &PlanCatalog) -> Vec<String> {
    let mut h = vec!["CountryName".to_string(), "RegionName".into(), "Date".into()];
    h.extend(catalog.ids().map(|p| p.display_name().to_string()));
    h.push("PrescriptionIndex".into());
    h
}

pub fn write_rows<W: Write>(
    out: W,
    catalog: &PlanCatalog,
    rows: &[PrescriptionRow],
) -> Result<(), PrescriptionCsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(catalog))?;
    for r in rows {
        let mut rec = vec![
            r.region.country_name.clone(),
            r.region.region_or_empty().to_string(),
            r.date.format("%Y-%m-%d").to_string(),
        ];
        rec.extend(catalog.ids().map(|p| r.assignment.level(p).to_string()));
        rec.push(r.prescription_index.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows back; the level columns are taken as written, so callers
/// decide whether to validate them against a catalog.
pub fn read_rows<R: Read>(
    input: R,
    catalog: &PlanCatalog,
) -> Result<Vec<PrescriptionRow>, PrescriptionCsvError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PrescriptionCsvError::Malformed(format!("missing column `{name}`")))
    };
    let country = find("CountryName")?;
    let region = find("RegionName")?;
    let date = find("Date")?;
    let index = find("PrescriptionIndex")?;
    let plans = catalog
        .ids()
        .map(|p| find(p.display_name()).map(|c| (p, c)))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("").trim();
        let d = parse_date(get(date))
            .ok_or_else(|| PrescriptionCsvError::Malformed(format!("bad date `{}`", get(date))))?;
        let mut assignment = Assignment::new();
        for &(p, c) in &plans {
            let l = get(c)
                .parse::<f64>()
                .ok()
                .filter(|v| *v >= 0.0 && v.fract() == 0.0 && *v <= u8::MAX as f64)
                .ok_or_else(|| {
                    PrescriptionCsvError::Malformed(format!("bad level `{}` for {p}", get(c)))
                })?;
            assignment.set(p, l as u8);
        }
        let prescription_index = get(index).parse().map_err(|_| {
            PrescriptionCsvError::Malformed(format!("bad PrescriptionIndex `{}`", get(index)))
        })?;
        rows.push(PrescriptionRow {
            region: RegionKey::new(get(country), Some(get(region).to_string())),
            date: d,
            assignment,
            prescription_index,
        });
    }
    Ok(rows)
}

/// Groups rows by (region, prescription index), each sorted by date.
pub fn group_rows(
    rows: Vec<PrescriptionRow>,
) -> BTreeMap<(RegionKey, u32), Vec<(NaiveDate, Assignment)>> {
    let mut out: BTreeMap<_, Vec<_>> = BTreeMap::new();
    for r in rows {
        out.entry((r.region, r.prescription_index))
            .or_default()
            .push((r.date, r.assignment));
    }
    for v in out.values_mut() {
        v.sort_by_key(|(d, _)| *d);
    }
    out
}
