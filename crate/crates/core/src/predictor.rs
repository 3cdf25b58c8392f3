//! Case predictors.
//!
//! A [`Predictor`] maps a region's history plus a future per-day plan
//! schedule to predicted daily new cases. Implementations must only look at
//! the last [`LOOKBACK_DAYS`] of history, must be deterministic, and must be
//! monotone: raising any plan level on any future day never raises any
//! predicted value.
//!
//! [`SurrogatePredictor`] is a closed-form stand-in satisfying that
//! contract: each day's cases are the trailing 7-day mean (history and
//! earlier predictions alike) times a growth factor attenuated
//! multiplicatively by each active plan.

use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use std::process::Command;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{validate_assignment, Assignment, PlanCatalog, PlanId};
use crate::ingest::{parse_date, RegionHistory, SMOOTHING_WINDOW};
use crate::prescription_csv::{self, PrescriptionRow};

pub const LOOKBACK_DAYS: usize = 21;
pub const MAX_EFFECTIVENESS: f64 = 0.08;

#[derive(Debug, thiserror::Error)]
pub enum PredictError {
    #[error("history of {0} has no case data")]
    EmptyHistory(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid surrogate parameters: {0}")]
    InvalidParams(String),
    #[error("external predictor failed: {0}")]
    External(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorContract {
    pub lookback_days: usize,
    pub smoothing_window: usize,
}

impl Default for PredictorContract {
    fn default() -> Self {
        PredictorContract {
            lookback_days: LOOKBACK_DAYS,
            smoothing_window: SMOOTHING_WINDOW,
        }
    }
}

pub trait Predictor: Send + Sync {
    /// Predicted daily new cases for the days following the last day of
    /// `history`, one per entry of `schedule`.
    fn predict(
        &self,
        history: &RegionHistory,
        schedule: &[Assignment],
    ) -> Result<Vec<f64>, PredictError>;

    /// Stable identifier of the predictor and its parameters; used as a
    /// cache key for derived quantities.
    fn fingerprint(&self) -> String;
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict(&self, h: &RegionHistory, s: &[Assignment]) -> Result<Vec<f64>, PredictError> {
        (**self).predict(h, s)
    }

    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }
}

impl<P: Predictor + ?Sized> Predictor for std::sync::Arc<P> {
    fn predict(&self, h: &RegionHistory, s: &[Assignment]) -> Result<Vec<f64>, PredictError> {
        (**self).predict(h, s)
    }

    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateParams {
    pub base_growth: f64,
    pub effectiveness: BTreeMap<PlanId, f64>,
    pub floor_cases: f64,
}

impl SurrogateParams {
    /// Growth 1.03, effectiveness `0.005 * max_level` per plan, no floor.
    pub fn defaults(catalog: &PlanCatalog) -> Self {
        SurrogateParams {
            base_growth: 1.03,
            effectiveness: catalog
                .plans()
                .iter()
                .map(|p| (p.id, 0.005 * p.max_level as f64))
                .collect(),
            floor_cases: 0.0,
        }
    }

    pub fn uniform(catalog: &PlanCatalog, base_growth: f64, effectiveness: f64) -> Self {
        SurrogateParams {
            base_growth,
            effectiveness: catalog.ids().map(|p| (p, effectiveness)).collect(),
            floor_cases: 0.0,
        }
    }

    pub fn validate(&self, catalog: &PlanCatalog) -> Result<(), PredictError> {
        let bad = |m: String| Err(PredictError::InvalidParams(m));
        if !(self.base_growth.is_finite() && self.base_growth > 0.0) {
            return bad(format!("base_growth {} must be positive", self.base_growth));
        }
        if !(self.floor_cases.is_finite() && self.floor_cases >= 0.0) {
            return bad(format!("floor_cases {} must be non-negative", self.floor_cases));
        }
        for p in catalog.ids() {
            match self.effectiveness.get(&p) {
                None => return bad(format!("no effectiveness for {p}")),
                Some(e) if !(0.0..=MAX_EFFECTIVENESS).contains(e) => {
                    return bad(format!("effectiveness {e} for {p} outside [0, {MAX_EFFECTIVENESS}]"))
                }
                _ => {}
            }
        }
        let worst: f64 = self.base_growth
            * catalog
                .ids()
                .map(|p| 1.0 - self.effectiveness[&p])
                .product::<f64>();
        if worst <= 0.0 {
            return bad("fully attenuated growth must stay positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SurrogatePredictor {
    params: SurrogateParams,
    catalog: PlanCatalog,
    // (position in catalog, effectiveness / max_level)
    per_level: Vec<(crate::catalog::PlanId, f64)>,
}

impl SurrogatePredictor {
    pub fn new(params: SurrogateParams, catalog: PlanCatalog) -> Result<Self, PredictError> {
        params.validate(&catalog)?;
        let per_level = catalog
            .plans()
            .iter()
            .map(|p| {
                let slope = if p.max_level == 0 {
                    0.0
                } else {
                    params.effectiveness[&p.id] / p.max_level as f64
                };
                (p.id, slope)
            })
            .collect();
        Ok(SurrogatePredictor {
            params,
            catalog,
            per_level,
        })
    }

    pub fn with_defaults(catalog: PlanCatalog) -> Self {
        let params = SurrogateParams::defaults(&catalog);
        Self::new(params, catalog).expect("default surrogate parameters are valid")
    }

    pub fn params(&self) -> &SurrogateParams {
        &self.params
    }

    pub fn catalog(&self) -> &PlanCatalog {
        &self.catalog
    }

    /// Multiplicative growth factor applied to the smoothed cases on a day
    /// with the given plan levels.
    pub fn day_factor(&self, assignment: &Assignment) -> f64 {
        self.per_level
            .iter()
            .map(|&(p, slope)| 1.0 - slope * assignment.level(p) as f64)
            .fold(self.params.base_growth, |acc, f| acc * f)
    }
}

impl Predictor for SurrogatePredictor {
    fn predict(
        &self,
        history: &RegionHistory,
        schedule: &[Assignment],
    ) -> Result<Vec<f64>, PredictError> {
        if history.new_cases_raw.is_empty() {
            return Err(PredictError::EmptyHistory(history.key.canonical()));
        }
        if let Some((day, _)) = schedule
            .iter()
            .enumerate()
            .find(|(_, a)| !validate_assignment(&self.catalog, a))
        {
            return Err(PredictError::InvalidSchedule(format!(
                "day {} of the schedule is not a valid assignment",
                day + 1
            )));
        }

        let raw = &history.new_cases_raw;
        let mut window: VecDeque<f64> =
            raw[raw.len().saturating_sub(SMOOTHING_WINDOW)..].iter().copied().collect();
        let mut out = Vec::with_capacity(schedule.len());
        for assignment in schedule {
            let smoothed = window.iter().sum::<f64>() / window.len() as f64;
            let value = (smoothed * self.day_factor(assignment)).max(self.params.floor_cases);
            if window.len() == SMOOTHING_WINDOW {
                window.pop_front();
            }
            window.push_back(value);
            out.push(value);
        }
        Ok(out)
    }

    fn fingerprint(&self) -> String {
        let json = serde_json::to_string(&(&self.params, &self.catalog)).expect("serializable");
        let digest = Sha256::digest(json.as_bytes());
        let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        format!("surrogate-{hex}")
    }
}

/// One-shot prediction with the surrogate, checking the schedule length.
pub fn predict(
    history: &RegionHistory,
    schedule: &[Assignment],
    horizon_days: usize,
    params: &SurrogateParams,
    catalog: &PlanCatalog,
) -> Result<Vec<f64>, PredictError> {
    if schedule.len() != horizon_days {
        return Err(PredictError::InvalidSchedule(format!(
            "schedule covers {} days, horizon is {horizon_days}",
            schedule.len()
        )));
    }
    SurrogatePredictor::new(params.clone(), catalog.clone())?.predict(history, schedule)
}

/// Delegates prediction to an external program.
///
/// The program is invoked as `program [args..] <schedule.csv> <output.csv>`;
/// the schedule file is a prescription CSV for the days after the history,
/// and the program must write a CSV with `Date,PredictedDailyNewCases`.
#[derive(Debug, Clone)]
pub struct ExternalPredictor {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub catalog: PlanCatalog,
}

impl Predictor for ExternalPredictor {
    fn predict(
        &self,
        history: &RegionHistory,
        schedule: &[Assignment],
    ) -> Result<Vec<f64>, PredictError> {
        let last = history
            .last_date()
            .ok_or_else(|| PredictError::EmptyHistory(history.key.canonical()))?;
        let external = |e: &dyn std::fmt::Display| PredictError::External(e.to_string());

        let dir = tempfile::tempdir().map_err(|e| external(&e))?;
        let schedule_path = dir.path().join("schedule.csv");
        let output_path = dir.path().join("predictions.csv");
        let rows: Vec<PrescriptionRow> = schedule
            .iter()
            .enumerate()
            .map(|(i, a)| PrescriptionRow {
                region: history.key.clone(),
                date: last + Days::new(i as u64 + 1),
                assignment: a.clone(),
                prescription_index: 0,
            })
            .collect();
        let file = std::fs::File::create(&schedule_path).map_err(|e| external(&e))?;
        prescription_csv::write_rows(file, &self.catalog, &rows).map_err(|e| external(&e))?;

        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&schedule_path)
            .arg(&output_path)
            .status()
            .map_err(|e| external(&e))?;
        if !status.success() {
            return Err(PredictError::External(format!("{} exited with {status}", self.program.display())));
        }

        let mut reader = csv::Reader::from_path(&output_path).map_err(|e| external(&e))?;
        let mut by_date: BTreeMap<NaiveDate, f64> = BTreeMap::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| external(&e))?;
            let date = rec.get(0).and_then(parse_date);
            let value = rec.get(1).and_then(|v| v.trim().parse::<f64>().ok());
            match (date, value) {
                (Some(d), Some(v)) => {
                    by_date.insert(d, v);
                }
                _ => return Err(PredictError::External(format!("bad output row {:?}", rec))),
            }
        }
        rows.iter()
            .map(|r| {
                by_date
                    .get(&r.date)
                    .copied()
                    .ok_or_else(|| PredictError::External(format!("no prediction for {}", r.date)))
            })
            .collect()
    }

    fn fingerprint(&self) -> String {
        format!("external-{}-{}", self.program.display(), self.args.join(" "))
    }
}
