//! JSON API handlers, independent of any HTTP framework. Every handler
//! returns a JSON value or an [`ApiError`] carrying an HTTP status.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::catalog::{Assignment, PlanCatalog, PlanId};
use crate::costs::{build_cost_model, stringency_of, CostKind, CostModel};
use crate::evaluate::{pareto_front, EvaluationRow, WORLD_SCOPE};
use crate::impact::{WeightCache, WeightSetSpec};
use crate::ingest::{parse_date, RegionHistory, RegionKey};
use crate::pipeline::{min_runs_before, run_experiment, ExperimentConfig, ExperimentResult};
use crate::predictor::Predictor;
use crate::rollout::{
    prescribe_region, seed_history, zero_fallback, ModelVariant, PrescriptionSchedule, RolloutConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<Value>,
}

impl ApiError {
    pub fn new(status: u16, error: impl Into<String>) -> Self {
        ApiError {
            status,
            error: error.into(),
            details: Vec::new(),
        }
    }

    pub fn bad_request(error: impl Into<String>) -> Self {
        Self::new(400, error)
    }

    pub fn not_found(error: impl Into<String>) -> Self {
        Self::new(404, error)
    }

    pub fn body(&self) -> Value {
        serde_json::to_value(self).expect("error serializes")
    }
}

pub type ApiResult = Result<Value, ApiError>;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct PrescribeRequest {
    pub region: String,
    pub weight_set: Option<String>,
    pub cost_model: Option<CostKind>,
    pub seed: Option<u64>,
    pub consecutive: bool,
    pub start_date: Option<NaiveDate>,
    pub horizon_days: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct SimulateRequest {
    pub region: String,
    pub cost_model: Option<CostKind>,
    pub seed: Option<u64>,
    /// Rows shaped like the prescription CSV; plan columns may use either
    /// the short code or the full column name.
    pub schedule: Vec<Map<String, Value>>,
}

pub struct ServiceState {
    catalog: PlanCatalog,
    histories: BTreeMap<RegionKey, RegionHistory>,
    predictor: Arc<dyn Predictor>,
    cache: WeightCache,
    config: ExperimentConfig,
    experiments: Mutex<BTreeMap<String, Arc<ExperimentResult>>>,
}

impl ServiceState {
    /// Min runs are derived once, from all regions, unless the config
    /// already carries them.
    pub fn new(
        catalog: PlanCatalog,
        histories: BTreeMap<RegionKey, RegionHistory>,
        predictor: Arc<dyn Predictor>,
        cache: WeightCache,
        mut config: ExperimentConfig,
    ) -> Self {
        if config.min_runs.is_none() {
            config.min_runs = Some(min_runs_before(&histories, &catalog, config.start_date));
        }
        ServiceState {
            catalog,
            histories,
            predictor,
            cache,
            config,
            experiments: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    fn history(&self, region: &str) -> Result<&RegionHistory, ApiError> {
        let key: RegionKey = region.parse().unwrap();
        self.histories
            .get(&key)
            .ok_or_else(|| ApiError::not_found(format!("unknown region `{region}`")))
    }

    fn cost_model(&self, kind: Option<CostKind>, seed: Option<u64>) -> Result<CostModel, ApiError> {
        let kind = kind.unwrap_or(CostKind::Realistic);
        let seed = (kind == CostKind::Random).then(|| seed.unwrap_or(self.config.cost_seed));
        build_cost_model(kind, &self.catalog, seed).map_err(|e| ApiError::bad_request(e.to_string()))
    }

    fn spec(&self, label: &str) -> Result<&WeightSetSpec, ApiError> {
        self.config
            .weight_specs
            .iter()
            .find(|s| s.label == label)
            .ok_or_else(|| ApiError::bad_request(format!("unknown weight set `{label}`")))
    }

    /// `GET /api/regions`
    pub fn regions(&self) -> ApiResult {
        let list: Vec<Value> = self
            .histories
            .values()
            .map(|h| {
                json!({
                    "region": h.key.canonical(),
                    "country_name": h.key.country_name,
                    "region_name": h.key.region_name,
                    "first_date": h.first_date(),
                    "last_date": h.last_date(),
                    "current_new_cases": h.last_smoothed(),
                })
            })
            .collect();
        Ok(json!({ "regions": list }))
    }

    /// `GET /api/weight-sets`
    pub fn weight_sets(&self) -> ApiResult {
        Ok(json!({ "weight_sets": self.config.weight_specs }))
    }

    /// `GET /api/cost-models`
    pub fn cost_models(&self, seed: Option<u64>) -> ApiResult {
        let models = CostKind::ALL
            .iter()
            .map(|&k| self.cost_model(Some(k), seed))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(json!({ "cost_models": models }))
    }

    /// `POST /api/prescribe`
    pub fn prescribe(&self, req: &PrescribeRequest) -> ApiResult {
        let history = self.history(&req.region)?;
        let label = req.weight_set.as_deref().unwrap_or("w_jan15_7");
        let spec = self.spec(label)?;
        let cm = self.cost_model(req.cost_model, req.seed)?;
        let config = RolloutConfig {
            start_date: req.start_date.unwrap_or(self.config.start_date),
            horizon_days: req.horizon_days.unwrap_or(self.config.horizon_days),
            consecutive: req.consecutive,
            min_runs: self.config.min_runs.clone().unwrap_or_default(),
        };
        if config.horizon_days == 0 {
            return Err(ApiError::bad_request("horizon_days must be positive"));
        }
        let seed = seed_history(history, config.start_date).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let schedule = if seed.last_smoothed().is_some_and(|b| b > 0.0) {
            let weights = self
                .cache
                .get_or_estimate(history, spec, &self.catalog, self.predictor.as_ref())
                .map_err(|e| ApiError::new(422, e.to_string()))?;
            prescribe_region(history, &weights, &cm, &self.catalog, self.predictor.as_ref(), &config)
                .map_err(|e| ApiError::new(422, e.to_string()))?
        } else {
            let variant = ModelVariant {
                weight_label: spec.label.clone(),
                consecutive: req.consecutive,
            };
            zero_fallback(
                history,
                config.start_date,
                config.horizon_days,
                &variant,
                &cm,
                &self.catalog,
                self.predictor.as_ref(),
            )
            .map_err(|e| ApiError::new(422, e.to_string()))?
        };
        Ok(self.schedule_json(&schedule, &cm))
    }

    fn schedule_json(&self, s: &PrescriptionSchedule, cm: &CostModel) -> Value {
        let rows: Vec<Value> = s.to_rows().iter().map(|r| row_json(&self.catalog, r)).collect();
        let days: Vec<Value> = s
            .days
            .iter()
            .map(|d| {
                json!({
                    "Date": d.date,
                    "alpha_used": d.alpha_used,
                    "stringency": d.stringency,
                    "stringency_raw": cm.raw_stringency(&d.assignment),
                    "PredictedDailyNewCases": d.predicted_new_cases,
                })
            })
            .collect();
        json!({
            "region": s.region,
            "model_label": s.model_label,
            "cost_model": s.cost_kind,
            "start_date": s.start_date,
            "beta": s.beta,
            "fallback": s.fallback,
            "schedule": rows,
            "days": days,
        })
    }

    /// `POST /api/simulate`
    pub fn simulate(&self, req: &SimulateRequest) -> ApiResult {
        let history = self.history(&req.region)?;
        let cm = self.cost_model(req.cost_model, req.seed)?;
        let (start, assignments) = parse_schedule(&self.catalog, &req.schedule)?;
        let seed = seed_history(history, start).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let cases = self
            .predictor
            .predict(&seed, &assignments)
            .map_err(|e| ApiError::new(422, e.to_string()))?;
        let n = assignments.len() as f64;
        let mut days = Vec::new();
        let (mut sum_cases, mut sum_s, mut sum_raw) = (0.0, 0.0, 0.0);
        for (i, (a, c)) in assignments.iter().zip(&cases).enumerate() {
            let s = stringency_of(&cm, &self.catalog, a).expect("validated");
            let raw = cm.raw_stringency(a);
            sum_cases += c;
            sum_s += s;
            sum_raw += raw;
            days.push(json!({
                "Date": start + Days::new(i as u64),
                "PredictedDailyNewCases": c,
                "stringency": s,
                "stringency_raw": raw,
            }));
        }
        Ok(json!({
            "region": history.key,
            "cost_model": cm.kind,
            "start_date": start,
            "days": days,
            "mean_daily_cases": sum_cases / n,
            "mean_stringency_normalized": sum_s / n,
            "mean_stringency_raw": sum_raw / n,
        }))
    }

    /// The full experiment for one region, or for every region when
    /// `region` is `world`. Results are cached.
    pub fn experiment(&self, region: &str) -> Result<Arc<ExperimentResult>, ApiError> {
        if let Some(r) = self.experiments.lock().unwrap().get(region) {
            return Ok(r.clone());
        }
        let histories: BTreeMap<RegionKey, RegionHistory> = if region == WORLD_SCOPE {
            self.histories.clone()
        } else {
            let h = self.history(region)?;
            [(h.key.clone(), h.clone())].into_iter().collect()
        };
        let result = run_experiment(&histories, &self.catalog, self.predictor.as_ref(), &self.cache, &self.config)
            .map_err(|e| ApiError::new(422, e.to_string()))?;
        let result = Arc::new(result);
        self.experiments
            .lock()
            .unwrap()
            .insert(region.to_string(), result.clone());
        Ok(result)
    }

    fn scope_rows(&self, region: &str) -> Result<(Arc<ExperimentResult>, String), ApiError> {
        let result = self.experiment(region)?;
        let scope = if region == WORLD_SCOPE {
            WORLD_SCOPE.to_string()
        } else {
            self.history(region)?.key.canonical()
        };
        Ok((result, scope))
    }

    /// `GET /api/evaluations/{region}`
    pub fn evaluations(&self, region: &str, kind: Option<CostKind>) -> ApiResult {
        let (result, scope) = self.scope_rows(region)?;
        let tables: Vec<&crate::evaluate::ReportTable> = result
            .tables
            .iter()
            .filter(|t| t.scope == scope && kind.is_none_or(|k| k == t.cost_kind))
            .collect();
        let failures: Vec<_> = result
            .failures
            .iter()
            .filter(|f| scope == WORLD_SCOPE || f.region == scope)
            .collect();
        Ok(json!({ "region": scope, "tables": tables, "failures": failures }))
    }

    /// `GET /api/pareto/{region}`
    pub fn pareto(&self, region: &str, kind: Option<CostKind>) -> ApiResult {
        let (result, scope) = self.scope_rows(region)?;
        let fronts: Vec<Value> = result
            .tables
            .iter()
            .filter(|t| t.scope == scope && kind.is_none_or(|k| k == t.cost_kind))
            .map(|t| {
                let front: Vec<EvaluationRow> = pareto_front(&t.rows).rows;
                json!({ "cost_model": t.cost_kind, "rows": front })
            })
            .collect();
        Ok(json!({ "region": scope, "fronts": fronts }))
    }
}

fn row_json(catalog: &PlanCatalog, r: &crate::prescription_csv::PrescriptionRow) -> Value {
    let mut m = Map::new();
    m.insert("CountryName".into(), json!(r.region.country_name));
    m.insert("RegionName".into(), json!(r.region.region_or_empty()));
    m.insert("Date".into(), json!(r.date));
    for p in catalog.ids() {
        m.insert(p.display_name().into(), json!(r.assignment.level(p)));
    }
    m.insert("PrescriptionIndex".into(), json!(r.prescription_index));
    Value::Object(m)
}

/// Parses schedule rows into consecutive daily assignments. Every problem
/// is reported, one detail per offending day and plan.
pub fn parse_schedule(
    catalog: &PlanCatalog,
    rows: &[Map<String, Value>],
) -> Result<(NaiveDate, Vec<Assignment>), ApiError> {
    if rows.is_empty() {
        return Err(ApiError::bad_request("schedule is empty"));
    }
    let mut details = Vec::new();
    let mut dates = Vec::new();
    let mut assignments = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let date = row.get("Date").and_then(Value::as_str).and_then(parse_date);
        if date.is_none() {
            details.push(json!({ "day": i, "field": "Date", "message": "missing or unparseable date" }));
        }
        dates.push(date);
        let mut levels: BTreeMap<PlanId, u8> = BTreeMap::new();
        for (k, v) in row {
            let Ok(plan) = k.parse::<PlanId>() else { continue };
            if !catalog.contains(plan) {
                continue;
            }
            let max = catalog.max_level(plan).unwrap_or(0);
            match v.as_u64() {
                Some(l) if l <= max as u64 => {
                    levels.insert(plan, l as u8);
                }
                _ => details.push(json!({
                    "day": i,
                    "plan": plan.code(),
                    "value": v,
                    "message": format!("level must be an integer in 0..={max}"),
                })),
            }
        }
        for p in catalog.ids() {
            if !levels.contains_key(&p) && !details.iter().any(|d| d["day"] == i && d["plan"] == p.code()) {
                details.push(json!({ "day": i, "plan": p.code(), "message": "missing level" }));
            }
        }
        assignments.push(levels.into_iter().collect::<Assignment>());
    }
    if let Some(Some(first)) = dates.first() {
        for (i, d) in dates.iter().enumerate() {
            if let Some(d) = d {
                if *d != *first + Days::new(i as u64) {
                    details.push(json!({ "day": i, "field": "Date", "message": "dates must be consecutive" }));
                }
            }
        }
    }
    if !details.is_empty() {
        return Err(ApiError {
            status: 400,
            error: "invalid schedule".into(),
            details,
        });
    }
    Ok((dates[0].unwrap(), assignments))
}
