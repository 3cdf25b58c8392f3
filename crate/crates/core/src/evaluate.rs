//! Scoring prescriptions through the predictor, Pareto fronts and
//! aggregated report tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::catalog::{validate_assignment, Assignment, PlanCatalog};
use crate::costs::{stringency_of, CostKind, CostModel};
use crate::ingest::RegionHistory;
use crate::predictor::{PredictError, Predictor};
use crate::rollout::PrescriptionSchedule;

pub const REAL_IP_LABEL: &str = "real_ip_predicted_cases";
pub const WORLD_SCOPE: &str = "world";

#[derive(Debug, thiserror::Error)]
pub enum EvaluateError {
    #[error("schedule for {region} does not directly follow the history: {detail}")]
    ScheduleGap { region: String, detail: String },
    #[error("no real intervention data for {region} over {start}..+{days}d")]
    MissingRealIps {
        region: String,
        start: NaiveDate,
        days: usize,
    },
    #[error("invalid assignment on day {0}")]
    InvalidAssignment(usize),
    #[error("nothing to aggregate")]
    EmptyAggregate,
    #[error(transparent)]
    Predict(#[from] PredictError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionScope {
    Region,
    WorldAggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub model_label: String,
    pub region_scope: RegionScope,
    /// Canonical region key, or `world` for aggregates.
    pub region: String,
    pub cost_kind: CostKind,
    pub mean_daily_cases: f64,
    pub mean_stringency_normalized: f64,
    pub mean_stringency_raw: f64,
}

/// Mean predicted cases and mean stringency of `assignments`, which must
/// start on the day after the last day of `history`.
pub fn evaluate_assignments(
    model_label: &str,
    history: &RegionHistory,
    assignments: &[Assignment],
    predictor: &dyn Predictor,
    cost_model: &CostModel,
    catalog: &PlanCatalog,
) -> Result<EvaluationRow, EvaluateError> {
    if assignments.is_empty() {
        return Err(EvaluateError::ScheduleGap {
            region: history.key.canonical(),
            detail: "empty schedule".into(),
        });
    }
    let mut normalized = 0.0;
    let mut raw = 0.0;
    for (day, a) in assignments.iter().enumerate() {
        if !validate_assignment(catalog, a) {
            return Err(EvaluateError::InvalidAssignment(day));
        }
        normalized += stringency_of(cost_model, catalog, a).expect("validated");
        raw += cost_model.raw_stringency(a);
    }
    let cases = predictor.predict(history, assignments)?;
    let n = assignments.len() as f64;
    Ok(EvaluationRow {
        model_label: model_label.to_string(),
        region_scope: RegionScope::Region,
        region: history.key.canonical(),
        cost_kind: cost_model.kind,
        mean_daily_cases: cases.iter().sum::<f64>() / n,
        mean_stringency_normalized: normalized / n,
        mean_stringency_raw: raw / n,
    })
}

/// Scores a schedule. `history` may extend past the schedule start; only
/// the days before it are used, and they must end the day before.
pub fn evaluate_schedule(
    schedule: &PrescriptionSchedule,
    history: &RegionHistory,
    predictor: &dyn Predictor,
    cost_model: &CostModel,
    catalog: &PlanCatalog,
) -> Result<EvaluationRow, EvaluateError> {
    let gap = |detail: String| EvaluateError::ScheduleGap {
        region: history.key.canonical(),
        detail,
    };
    let seed = history.before(schedule.start_date);
    match seed.last_date() {
        Some(last) if last + Days::new(1) == schedule.start_date => {}
        Some(last) => return Err(gap(format!("history ends {last}, schedule starts {}", schedule.start_date))),
        None => return Err(gap("no history before the schedule".into())),
    }
    for (i, d) in schedule.days.iter().enumerate() {
        if d.date != schedule.start_date + Days::new(i as u64) {
            return Err(gap(format!("day {} is dated {}", i + 1, d.date)));
        }
    }
    evaluate_assignments(
        &schedule.model_label,
        &seed,
        &schedule.assignments(),
        predictor,
        cost_model,
        catalog,
    )
}

/// Historically enacted levels for `days` days from `start`.
pub fn real_ips_window(
    history: &RegionHistory,
    start: NaiveDate,
    days: usize,
) -> Result<Vec<Assignment>, EvaluateError> {
    let missing = || EvaluateError::MissingRealIps {
        region: history.key.canonical(),
        start,
        days,
    };
    if days == 0 {
        return Err(missing());
    }
    let first = history.index_of(start).ok_or_else(missing)?;
    let last = first + days;
    if last > history.len() {
        return Err(missing());
    }
    Ok(history.ip_levels[first..last].to_vec())
}

/// Scores the enacted plan levels through the same predictor.
pub fn evaluate_real_ips(
    history: &RegionHistory,
    real_future_ips: &[Assignment],
    predictor: &dyn Predictor,
    cost_model: &CostModel,
    catalog: &PlanCatalog,
) -> Result<EvaluationRow, EvaluateError> {
    if real_future_ips.is_empty() {
        return Err(EvaluateError::MissingRealIps {
            region: history.key.canonical(),
            start: history
                .last_date()
                .map(|d| d + Days::new(1))
                .unwrap_or(NaiveDate::MIN),
            days: 0,
        });
    }
    evaluate_assignments(REAL_IP_LABEL, history, real_future_ips, predictor, cost_model, catalog)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    pub rows: Vec<EvaluationRow>,
}

/// Whether `a` is no worse on both axes and better on one.
pub fn dominates(a: &EvaluationRow, b: &EvaluationRow) -> bool {
    a.mean_daily_cases <= b.mean_daily_cases
        && a.mean_stringency_normalized <= b.mean_stringency_normalized
        && (a.mean_daily_cases < b.mean_daily_cases
            || a.mean_stringency_normalized < b.mean_stringency_normalized)
}

/// Rows not strictly dominated in (cases, stringency), in input order.
pub fn pareto_front(rows: &[EvaluationRow]) -> ParetoFront {
    let mut sorted: Vec<usize> = (0..rows.len()).collect();
    sorted.sort_by(|&i, &j| {
        let (a, b) = (&rows[i], &rows[j]);
        a.mean_daily_cases
            .total_cmp(&b.mean_daily_cases)
            .then(a.mean_stringency_normalized.total_cmp(&b.mean_stringency_normalized))
    });
    // Sweep by cases; a row survives when its stringency beats every row
    // with strictly fewer cases, and is not beaten by an equal-cases row.
    let mut keep = vec![false; rows.len()];
    let mut best_prior = f64::INFINITY;
    let mut i = 0;
    while i < sorted.len() {
        let cases = rows[sorted[i]].mean_daily_cases;
        let mut j = i;
        while j < sorted.len() && rows[sorted[j]].mean_daily_cases == cases {
            j += 1;
        }
        let group_min = rows[sorted[i]].mean_stringency_normalized;
        for &k in &sorted[i..j] {
            let s = rows[k].mean_stringency_normalized;
            keep[k] = s == group_min && s < best_prior;
        }
        best_prior = best_prior.min(group_min);
        i = j;
    }
    ParetoFront {
        rows: rows
            .iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(r, _)| r.clone())
            .collect(),
    }
}

/// Equal-weight mean over regions of one model's per-region rows.
/// Rows are summed in region order so the result does not depend on the
/// order they are passed in.
pub fn world_aggregate(rows: &[EvaluationRow]) -> Result<EvaluationRow, EvaluateError> {
    let first = rows.first().ok_or(EvaluateError::EmptyAggregate)?;
    let mut sorted: Vec<&EvaluationRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.region.cmp(&b.region));
    let n = rows.len() as f64;
    let mean = |f: fn(&EvaluationRow) -> f64| sorted.iter().map(|r| f(r)).sum::<f64>() / n;
    Ok(EvaluationRow {
        model_label: first.model_label.clone(),
        region_scope: RegionScope::WorldAggregate,
        region: WORLD_SCOPE.to_string(),
        cost_kind: first.cost_kind,
        mean_daily_cases: mean(|r| r.mean_daily_cases),
        mean_stringency_normalized: mean(|r| r.mean_stringency_normalized),
        mean_stringency_raw: mean(|r| r.mean_stringency_raw),
    })
}

/// One report table: a scope (region or world) under one cost model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub scope: String,
    pub cost_kind: CostKind,
    pub rows: Vec<EvaluationRow>,
}

impl ReportTable {
    /// `model_label,cases,costs_normalized,costs_raw`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model_label,cases,costs_normalized,costs_raw\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{}",
                r.model_label, r.mean_daily_cases, r.mean_stringency_normalized, r.mean_stringency_raw
            )
            .unwrap();
        }
        out
    }
}

/// Side-by-side view of one scope across cost kinds, laid out like the
/// published tables: a `cases` and raw `costs` column per kind.
pub fn wide_table(tables: &[&ReportTable]) -> String {
    let mut out = String::from("model_label");
    for t in tables {
        write!(out, ",{k}_cases,{k}_costs", k = t.cost_kind).unwrap();
    }
    out.push('\n');
    let Some(first) = tables.first() else {
        return out;
    };
    let lookup: Vec<BTreeMap<&str, &EvaluationRow>> = tables
        .iter()
        .map(|t| t.rows.iter().map(|r| (r.model_label.as_str(), r)).collect())
        .collect();
    for r in &first.rows {
        out.push_str(&r.model_label);
        for m in &lookup {
            match m.get(r.model_label.as_str()) {
                Some(x) => write!(out, ",{},{}", x.mean_daily_cases, x.mean_stringency_raw).unwrap(),
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::default_catalog;
    use crate::costs::build_cost_model;
    use crate::heuristics::blind_greedy;
    use crate::ingest::RegionKey;
    use crate::predictor::{SurrogateParams, SurrogatePredictor};
    use crate::rollout::schedule_from_assignments;

    fn row(label: &str, cases: f64, s: f64) -> EvaluationRow {
        EvaluationRow {
            model_label: label.into(),
            region_scope: RegionScope::Region,
            region: "R".into(),
            cost_kind: CostKind::Fixed,
            mean_daily_cases: cases,
            mean_stringency_normalized: s,
            mean_stringency_raw: s,
        }
    }

    fn history(value: f64, days: usize) -> RegionHistory {
        let cat = default_catalog();
        RegionHistory::from_daily(
            RegionKey::country("Evalland"),
            NaiveDate::from_ymd_opt(2020, 12, 1).unwrap(),
            vec![Assignment::zeros(&cat); days],
            vec![value; days],
        )
    }

    fn start() -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 1, 12).unwrap()
    }

    #[test]
    fn flat_world_zero_schedule() {
        let cat = default_catalog();
        let cm = build_cost_model(CostKind::Fixed, &cat, None).unwrap();
        let pred = SurrogatePredictor::new(SurrogateParams::uniform(&cat, 1.0, 0.0), cat.clone()).unwrap();
        let h = history(100.0, 42);
        let s = schedule_from_assignments(&h, vec![Assignment::zeros(&cat); 28], start(), "zero", &cm, &cat, &pred)
            .unwrap();
        let r = evaluate_schedule(&s, &h, &pred, &cm, &cat).unwrap();
        assert_eq!(r.mean_daily_cases, 100.0);
        assert_eq!(r.mean_stringency_normalized, 0.0);
        assert_eq!(r.mean_stringency_raw, 0.0);
    }

    #[test]
    fn schedule_gap_detected() {
        let cat = default_catalog();
        let cm = build_cost_model(CostKind::Fixed, &cat, None).unwrap();
        let pred = SurrogatePredictor::with_defaults(cat.clone());
        let h = history(100.0, 42);
        let mut s =
            schedule_from_assignments(&h, vec![Assignment::zeros(&cat); 5], start(), "x", &cm, &cat, &pred).unwrap();
        let short = history(100.0, 20);
        assert!(matches!(
            evaluate_schedule(&s, &short, &pred, &cm, &cat),
            Err(EvaluateError::ScheduleGap { .. })
        ));
        s.days[3].date = s.days[3].date + Days::new(1);
        assert!(matches!(
            evaluate_schedule(&s, &h, &pred, &cm, &cat),
            Err(EvaluateError::ScheduleGap { .. })
        ));
    }

    #[test]
    fn greedy_extremes_under_default_surrogate() {
        let cat = default_catalog();
        let pred = SurrogatePredictor::with_defaults(cat.clone());
        let h = history(300.0, 41);
        for kind in CostKind::ALL {
            let cm = build_cost_model(kind, &cat, Some(5)).unwrap();
            let eval = |k| {
                let a = vec![blind_greedy(&cm, &cat, k); 28];
                evaluate_assignments("g", &h, &a, &pred, &cm, &cat).unwrap()
            };
            let (g0, g9) = (eval(0), eval(9));
            assert!(g9.mean_daily_cases < g0.mean_daily_cases);
            assert!(g9.mean_stringency_normalized > g0.mean_stringency_normalized);
        }
    }

    #[test]
    fn real_ips() {
        let cat = default_catalog();
        let cm = build_cost_model(CostKind::Realistic, &cat, None).unwrap();
        let pred = SurrogatePredictor::with_defaults(cat.clone());
        let mut full = history(50.0, 60);
        for (i, a) in full.ip_levels.iter_mut().enumerate() {
            a.set(crate::catalog::PlanId::C6, (i % 4) as u8);
        }
        let real = real_ips_window(&full, start(), 10).unwrap();
        let seed = full.before(start());
        let r = evaluate_real_ips(&seed, &real, &pred, &cm, &cat).unwrap();
        assert_eq!(r.model_label, REAL_IP_LABEL);
        let same = evaluate_assignments("opt", &seed, &real, &pred, &cm, &cat).unwrap();
        assert_eq!(same.mean_daily_cases, r.mean_daily_cases);
        assert_eq!(same.mean_stringency_raw, r.mean_stringency_raw);

        // Componentwise stricter real levels mean no more cases.
        let lax: Vec<Assignment> = real
            .iter()
            .map(|a| {
                let mut b = a.clone();
                b.set(crate::catalog::PlanId::C6, 0);
                b
            })
            .collect();
        let lax_row = evaluate_assignments("lax", &seed, &lax, &pred, &cm, &cat).unwrap();
        assert!(r.mean_daily_cases <= lax_row.mean_daily_cases);

        assert!(matches!(
            real_ips_window(&full, start() + Days::new(55), 28),
            Err(EvaluateError::MissingRealIps { .. })
        ));
        assert!(matches!(
            evaluate_real_ips(&seed, &[], &pred, &cm, &cat),
            Err(EvaluateError::MissingRealIps { .. })
        ));
    }

    #[test]
    fn pareto_examples() {
        let one = vec![row("a", 3.0, 1.0)];
        assert_eq!(pareto_front(&one).rows, one);
        let rows = vec![row("a", 10.0, 1.0), row("b", 5.0, 2.0), row("c", 12.0, 3.0)];
        let f = pareto_front(&rows);
        let labels: Vec<&str> = f.rows.iter().map(|r| r.model_label.as_str()).collect();
        assert_eq!(labels, ["a", "b"]);
        assert_eq!(pareto_front(&f.rows), f);
        let ties = vec![row("x", 1.0, 1.0), row("y", 1.0, 1.0), row("z", 1.0, 2.0)];
        let labels: Vec<String> = pareto_front(&ties).rows.into_iter().map(|r| r.model_label).collect();
        assert_eq!(labels, ["x", "y"]);
    }

    #[test]
    fn world_examples() {
        let mut a = row("m", 10.0, 1.0);
        a.region = "A".into();
        let mut b = row("m", 20.0, 3.0);
        b.region = "B".into();
        let w = world_aggregate(&[a.clone()]).unwrap();
        assert_eq!(w.mean_daily_cases, 10.0);
        assert_eq!(w.region_scope, RegionScope::WorldAggregate);
        let ab = world_aggregate(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(ab.mean_daily_cases, 15.0);
        assert_eq!(ab.mean_stringency_normalized, 2.0);
        assert_eq!(ab, world_aggregate(&[b, a]).unwrap());
        assert!(world_aggregate(&[]).is_err());
    }

    #[test]
    fn report_csv_layout() {
        let t = ReportTable {
            scope: "R".into(),
            cost_kind: CostKind::Fixed,
            rows: vec![row("opt_w_jan15_7", 1.5, 0.25)],
        };
        assert_eq!(t.to_csv(), "model_label,cases,costs_normalized,costs_raw\nopt_w_jan15_7,1.5,0.25,0.25\n");
        let wide = wide_table(&[&t, &ReportTable { cost_kind: CostKind::Realistic, ..t.clone() }]);
        assert_eq!(
            wide,
            "model_label,fixed_cases,fixed_costs,realistic_cases,realistic_costs\nopt_w_jan15_7,1.5,0.25,1.5,0.25\n"
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn front_matches_pairwise_oracle(
                pts in prop::collection::vec((0u8..12, 0u8..12), 1..40),
            ) {
                // Small integer grid so that ties are common.
                let rows: Vec<EvaluationRow> = pts.iter().enumerate()
                    .map(|(i, (c, s))| row(&i.to_string(), *c as f64, *s as f64))
                    .collect();
                let expected: Vec<EvaluationRow> = rows.iter()
                    .filter(|r| !rows.iter().any(|o| dominates(o, r)))
                    .cloned().collect();
                let front = pareto_front(&rows);
                prop_assert_eq!(&front.rows, &expected);
                prop_assert_eq!(pareto_front(&front.rows), front);
            }
        }
    }
}
