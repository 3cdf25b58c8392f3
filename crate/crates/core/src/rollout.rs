//! Day-by-day prescription over a horizon.
//!
//! Day one uses `alpha = beta`, the last observed smoothed new cases. Each
//! later day uses the predictor's output for the previous day under every
//! assignment prescribed so far. In consecutive mode the forcing state is
//! rebuilt each day from the trailing seven prescribed days.

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::catalog::{Assignment, PlanCatalog};
use crate::costs::{stringency_of, CostKind, CostModel};
use crate::impact::ImpactWeights;
use crate::ingest::{RegionHistory, RegionKey};
use crate::predictor::{PredictError, Predictor};
use crate::prescriber::{
    solve_exact, update_forcing, ForcingState, MinRuns, ObjectiveContext, PrescribeError,
};
use crate::prescription_csv::PrescriptionRow;

pub const DEFAULT_HORIZON_DAYS: usize = 28;

pub fn default_start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 1, 12).unwrap()
}

#[derive(Debug, thiserror::Error)]
pub enum RolloutError {
    #[error("{0} has zero current smoothed cases")]
    ZeroBeta(String),
    #[error("{0} has no history before the start date")]
    EmptyHistory(String),
    #[error("history of {region} ends on {last}, the day before {start} is required")]
    HistoryGap {
        region: String,
        last: NaiveDate,
        start: NaiveDate,
    },
    #[error(transparent)]
    Prescribe(#[from] PrescribeError),
    #[error(transparent)]
    Predict(#[from] PredictError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDay {
    pub date: NaiveDate,
    pub assignment: Assignment,
    pub alpha_used: f64,
    /// Normalized stringency of `assignment`.
    pub stringency: f64,
    pub predicted_new_cases: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrescriptionSchedule {
    pub region: RegionKey,
    pub start_date: NaiveDate,
    pub model_label: String,
    pub prescription_index: u32,
    pub cost_kind: CostKind,
    pub consecutive: bool,
    /// Current new cases at the start; constant across the schedule.
    pub beta: f64,
    /// Set when the region had no current cases and the schedule is the
    /// all-zero default rather than an optimization result.
    #[serde(default)]
    pub fallback: bool,
    pub days: Vec<ScheduleDay>,
}

impl PrescriptionSchedule {
    pub fn assignments(&self) -> Vec<Assignment> {
        self.days.iter().map(|d| d.assignment.clone()).collect()
    }

    pub fn to_rows(&self) -> Vec<PrescriptionRow> {
        self.days
            .iter()
            .map(|d| PrescriptionRow {
                region: self.region.clone(),
                date: d.date,
                assignment: d.assignment.clone(),
                prescription_index: self.prescription_index,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RolloutConfig {
    pub start_date: NaiveDate,
    pub horizon_days: usize,
    pub consecutive: bool,
    pub min_runs: MinRuns,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            start_date: default_start_date(),
            horizon_days: DEFAULT_HORIZON_DAYS,
            consecutive: false,
            min_runs: MinRuns::default(),
        }
    }
}

pub fn optimizer_label(weight_label: &str, consecutive: bool) -> String {
    if consecutive {
        format!("opt_consecutive_{weight_label}")
    } else {
        format!("opt_{weight_label}")
    }
}

/// History strictly before `start`, which must end on the day before it.
pub fn seed_history(history: &RegionHistory, start: NaiveDate) -> Result<RegionHistory, RolloutError> {
    let seed = history.before(start);
    match seed.last_date() {
        None => Err(RolloutError::EmptyHistory(history.key.canonical())),
        Some(last) if last + Days::new(1) != start => Err(RolloutError::HistoryGap {
            region: history.key.canonical(),
            last,
            start,
        }),
        Some(_) => Ok(seed),
    }
}

pub fn prescribe_region(
    history: &RegionHistory,
    weights: &ImpactWeights,
    cost_model: &CostModel,
    catalog: &PlanCatalog,
    predictor: &dyn Predictor,
    config: &RolloutConfig,
) -> Result<PrescriptionSchedule, RolloutError> {
    let seed = seed_history(history, config.start_date)?;
    let beta = seed.last_smoothed().unwrap_or(0.0);
    if !(beta > 0.0) {
        return Err(RolloutError::ZeroBeta(history.key.canonical()));
    }

    let mut assignments: Vec<Assignment> = Vec::with_capacity(config.horizon_days);
    let mut days = Vec::with_capacity(config.horizon_days);
    let mut alpha = beta;
    for t in 0..config.horizon_days {
        let ctx = ObjectiveContext {
            beta,
            alpha,
            weights,
            cost_model,
        };
        let forcing = if config.consecutive {
            update_forcing(&assignments, &config.min_runs, catalog)
        } else {
            ForcingState::none()
        };
        let solution = match solve_exact(&ctx, catalog, &forcing) {
            Err(PrescribeError::InfeasibleForcing { plan, level }) => {
                log::warn!(
                    "{}: dropping infeasible forcing {plan}={level} on day {}",
                    history.key,
                    t + 1
                );
                solve_exact(&ctx, catalog, &ForcingState::none())?
            }
            other => other?,
        };
        assignments.push(solution.assignment.clone());
        let predicted = predictor.predict(&seed, &assignments)?[t];
        days.push(ScheduleDay {
            date: config.start_date + Days::new(t as u64),
            assignment: solution.assignment,
            alpha_used: alpha,
            stringency: solution.stringency_term,
            predicted_new_cases: predicted,
        });
        alpha = predicted;
    }

    Ok(PrescriptionSchedule {
        region: history.key.clone(),
        start_date: config.start_date,
        model_label: optimizer_label(&weights.spec.label, config.consecutive),
        prescription_index: 0,
        cost_kind: cost_model.kind,
        consecutive: config.consecutive,
        beta,
        fallback: false,
        days,
    })
}

/// Scores a fixed sequence of assignments into a schedule; alpha follows the
/// same chain as an optimizer rollout.
pub fn schedule_from_assignments(
    history: &RegionHistory,
    assignments: Vec<Assignment>,
    start_date: NaiveDate,
    model_label: &str,
    cost_model: &CostModel,
    catalog: &PlanCatalog,
    predictor: &dyn Predictor,
) -> Result<PrescriptionSchedule, RolloutError> {
    let seed = seed_history(history, start_date)?;
    let beta = seed.last_smoothed().unwrap_or(0.0);
    let predicted = predictor.predict(&seed, &assignments)?;
    let mut alpha = beta;
    let mut days = Vec::with_capacity(assignments.len());
    for (t, (assignment, cases)) in assignments.into_iter().zip(predicted).enumerate() {
        let stringency = stringency_of(cost_model, catalog, &assignment)
            .map_err(|_| PrescribeError::InvalidAssignment)?;
        days.push(ScheduleDay {
            date: start_date + Days::new(t as u64),
            assignment,
            alpha_used: alpha,
            stringency,
            predicted_new_cases: cases,
        });
        alpha = cases;
    }
    Ok(PrescriptionSchedule {
        region: history.key.clone(),
        start_date,
        model_label: model_label.to_string(),
        prescription_index: 0,
        cost_kind: cost_model.kind,
        consecutive: false,
        beta,
        fallback: false,
        days,
    })
}

/// All-zero schedule used in place of an optimization when the region has
/// no current cases.
pub fn zero_fallback(
    history: &RegionHistory,
    start_date: NaiveDate,
    horizon_days: usize,
    variant: &ModelVariant,
    cost_model: &CostModel,
    catalog: &PlanCatalog,
    predictor: &dyn Predictor,
) -> Result<PrescriptionSchedule, RolloutError> {
    let mut s = schedule_from_assignments(
        history,
        vec![Assignment::zeros(catalog); horizon_days],
        start_date,
        &variant.label(),
        cost_model,
        catalog,
        predictor,
    )?;
    s.fallback = true;
    s.consecutive = variant.consecutive;
    Ok(s)
}

/// One optimizer configuration of the experiment grid.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ModelVariant {
    pub weight_label: String,
    pub consecutive: bool,
}

impl ModelVariant {
    pub fn label(&self) -> String {
        optimizer_label(&self.weight_label, self.consecutive)
    }
}

/// Every weight set without forcing, plus the listed sets with forcing.
pub fn variants(weight_labels: &[String], consecutive_labels: &[String]) -> Vec<ModelVariant> {
    let mut v: Vec<ModelVariant> = consecutive_labels
        .iter()
        .map(|l| ModelVariant {
            weight_label: l.clone(),
            consecutive: true,
        })
        .collect();
    v.extend(weight_labels.iter().map(|l| ModelVariant {
        weight_label: l.clone(),
        consecutive: false,
    }));
    v
}

#[derive(Debug, Default)]
pub struct BatchOutcome {
    pub schedules: Vec<PrescriptionSchedule>,
    /// (region, model label, cost kind, message) for every combination that
    /// produced no schedule or only the all-zero fallback.
    pub failures: Vec<(RegionKey, String, CostKind, String)>,
}

/// Runs every (region, cost model, variant) combination. Regions that fail
/// do not stop the batch. Output is ordered by region, then cost model in
/// the given order, then model label; prescription indices count up within
/// each (region, cost model).
#[allow(clippy::too_many_arguments)]
pub fn prescribe_all(
    histories: &BTreeMap<RegionKey, RegionHistory>,
    weights: &BTreeMap<(RegionKey, String), ImpactWeights>,
    cost_models: &[CostModel],
    variants: &[ModelVariant],
    catalog: &PlanCatalog,
    predictor: &dyn Predictor,
    start_date: NaiveDate,
    horizon_days: usize,
    min_runs: &MinRuns,
) -> BatchOutcome {
    let mut out = BatchOutcome::default();
    let mut ordered: Vec<&ModelVariant> = variants.iter().collect();
    ordered.sort_by_key(|v| v.label());
    for (key, history) in histories {
        for cm in cost_models {
            let mut index = 0u32;
            for variant in &ordered {
                let label = variant.label();
                let zero_beta = seed_history(history, start_date)
                    .ok()
                    .and_then(|s| s.last_smoothed())
                    .is_some_and(|b| !(b > 0.0));
                let result = if zero_beta {
                    Err(RolloutError::ZeroBeta(key.canonical()))
                } else if let Some(w) = weights.get(&(key.clone(), variant.weight_label.clone())) {
                    let config = RolloutConfig {
                        start_date,
                        horizon_days,
                        consecutive: variant.consecutive,
                        min_runs: min_runs.clone(),
                    };
                    prescribe_region(history, w, cm, catalog, predictor, &config)
                } else {
                    out.failures.push((key.clone(), label, cm.kind, "no impact weights".into()));
                    continue;
                };
                let schedule = match result {
                    Ok(s) => s,
                    Err(RolloutError::ZeroBeta(region)) => {
                        log::warn!("{region}: zero current cases, prescribing all-zero levels");
                        out.failures.push((
                            key.clone(),
                            label.clone(),
                            cm.kind,
                            "zero current cases; all-zero fallback".into(),
                        ));
                        let fallback = zero_fallback(
                            history,
                            start_date,
                            horizon_days,
                            variant,
                            cm,
                            catalog,
                            predictor,
                        );
                        match fallback {
                            Ok(s) => s,
                            Err(e) => {
                                out.failures.push((key.clone(), label, cm.kind, e.to_string()));
                                continue;
                            }
                        }
                    }
                    Err(e) => {
                        out.failures.push((key.clone(), label, cm.kind, e.to_string()));
                        continue;
                    }
                };
                out.schedules.push(PrescriptionSchedule {
                    prescription_index: index,
                    ..schedule
                });
                index += 1;
            }
        }
    }
    out
}
