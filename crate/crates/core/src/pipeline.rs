//! The full benchmarking experiment: optimizer variants, blind-greedy and
//! random baselines and real enacted levels, scored per region and
//! aggregated into report tables.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::catalog::{Assignment, PlanCatalog};
use crate::costs::{build_cost_model, CostError, CostKind, CostModel};
use crate::evaluate::{
    evaluate_real_ips, evaluate_schedule, real_ips_window, wide_table, world_aggregate, EvaluationRow,
    ReportTable, REAL_IP_LABEL, WORLD_SCOPE,
};
use crate::heuristics::{blind_greedy, greedy_label, random_label, random_prescription, GREEDY_VARIANTS, RANDOM_VARIANTS};
use crate::impact::{default_weight_specs, estimate_all, ImpactWeights, WeightCache, WeightSetSpec};
use crate::ingest::{RegionHistory, RegionKey};
use crate::predictor::Predictor;
use crate::prescriber::{derive_min_runs, MinRuns};
use crate::prescription_csv::{write_rows, PrescriptionCsvError};
use crate::rollout::{
    default_start_date, prescribe_all, schedule_from_assignments, seed_history, variants, ModelVariant,
    PrescriptionSchedule, DEFAULT_HORIZON_DAYS,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Csv(#[from] PrescriptionCsvError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("no regions to run")]
    NoRegions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub start_date: NaiveDate,
    pub horizon_days: usize,
    pub weight_specs: Vec<WeightSetSpec>,
    /// Weight-set labels that also get a consecutive-mode variant.
    pub consecutive_labels: Vec<String>,
    pub cost_kinds: Vec<CostKind>,
    /// Seed of the random cost model.
    pub cost_seed: u64,
    pub greedy_variants: u32,
    pub random_seeds: Vec<u64>,
    pub include_real_ips: bool,
    /// Derived from the histories before `start_date` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_runs: Option<MinRuns>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            start_date: default_start_date(),
            horizon_days: DEFAULT_HORIZON_DAYS,
            weight_specs: default_weight_specs(),
            consecutive_labels: vec!["w_jan15_7".into(), "w_jan15_1".into()],
            cost_kinds: CostKind::ALL.to_vec(),
            cost_seed: 0,
            greedy_variants: GREEDY_VARIANTS,
            random_seeds: (0..RANDOM_VARIANTS).collect(),
            include_real_ips: true,
            min_runs: None,
        }
    }
}

impl ExperimentConfig {
    pub fn model_variants(&self) -> Vec<ModelVariant> {
        let labels: Vec<String> = self.weight_specs.iter().map(|s| s.label.clone()).collect();
        variants(&labels, &self.consecutive_labels)
    }

    /// Report row order: optimizer variants, greedy, random, real levels.
    pub fn row_order(&self) -> Vec<String> {
        let mut order: Vec<String> = self.model_variants().iter().map(|v| v.label()).collect();
        order.extend((0..self.greedy_variants).map(greedy_label));
        order.extend(self.random_seeds.iter().map(|&s| random_label(s)));
        if self.include_real_ips {
            order.push(REAL_IP_LABEL.to_string());
        }
        order
    }

    pub fn cost_models(&self, catalog: &PlanCatalog) -> Result<Vec<CostModel>, CostError> {
        self.cost_kinds
            .iter()
            .map(|&k| build_cost_model(k, catalog, (k == CostKind::Random).then_some(self.cost_seed)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub region: String,
    pub model_label: String,
    pub cost_kind: Option<CostKind>,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub min_runs: MinRuns,
    pub cost_models: Vec<CostModel>,
    pub weights: Vec<ImpactWeights>,
    pub schedules: Vec<PrescriptionSchedule>,
    /// Per-region rows, in region, cost-model and report-row order.
    pub rows: Vec<EvaluationRow>,
    /// Per-region tables followed by one world table per cost model.
    pub tables: Vec<ReportTable>,
    pub failures: Vec<Failure>,
}

impl ExperimentResult {
    pub fn table(&self, scope: &str, kind: CostKind) -> Option<&ReportTable> {
        self.tables.iter().find(|t| t.scope == scope && t.cost_kind == kind)
    }

    pub fn scopes(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.tables {
            if !out.contains(&t.scope) {
                out.push(t.scope.clone());
            }
        }
        out
    }
}

/// Min runs from every history restricted to days before `start`.
pub fn min_runs_before(
    histories: &BTreeMap<RegionKey, RegionHistory>,
    catalog: &PlanCatalog,
    start: NaiveDate,
) -> MinRuns {
    let truncated: BTreeMap<RegionKey, RegionHistory> = histories
        .iter()
        .map(|(k, h)| (k.clone(), h.before(start)))
        .collect();
    derive_min_runs(&truncated, catalog)
}

pub fn run_experiment(
    histories: &BTreeMap<RegionKey, RegionHistory>,
    catalog: &PlanCatalog,
    predictor: &dyn Predictor,
    cache: &WeightCache,
    config: &ExperimentConfig,
) -> Result<ExperimentResult, PipelineError> {
    if histories.is_empty() {
        return Err(PipelineError::NoRegions);
    }
    let start = config.start_date;
    let horizon = config.horizon_days;
    let cost_models = config.cost_models(catalog)?;
    let min_runs = config
        .min_runs
        .clone()
        .unwrap_or_else(|| min_runs_before(histories, catalog, start));
    let mut failures = Vec::new();

    let mut weights = BTreeMap::new();
    for ((key, label), r) in estimate_all(histories, &config.weight_specs, catalog, predictor, cache) {
        match r {
            Ok(w) => {
                weights.insert((key, label), w);
            }
            Err(e) => failures.push(Failure {
                region: key.canonical(),
                model_label: label,
                cost_kind: None,
                message: e.to_string(),
            }),
        }
    }

    let batch = prescribe_all(
        histories,
        &weights,
        &cost_models,
        &config.model_variants(),
        catalog,
        predictor,
        start,
        horizon,
        &min_runs,
    );
    failures.extend(batch.failures.into_iter().map(|(k, label, kind, message)| Failure {
        region: k.canonical(),
        model_label: label,
        cost_kind: Some(kind),
        message,
    }));

    let order = config.row_order();
    let mut schedules: Vec<PrescriptionSchedule> = Vec::new();
    let mut rows = Vec::new();
    let mut tables = Vec::new();
    let mut optimizer = batch.schedules.into_iter().peekable();
    for (key, history) in histories {
        for cm in &cost_models {
            let mut group: Vec<PrescriptionSchedule> = Vec::new();
            while let Some(s) = optimizer.next_if(|s| &s.region == key && s.cost_kind == cm.kind) {
                group.push(s);
            }
            let mut fail = |label: &str, message: String| {
                failures.push(Failure {
                    region: key.canonical(),
                    model_label: label.to_string(),
                    cost_kind: Some(cm.kind),
                    message,
                })
            };
            let mut fixed: Vec<(String, Vec<Assignment>)> = (0..config.greedy_variants)
                .map(|k| (greedy_label(k), vec![blind_greedy(cm, catalog, k); horizon]))
                .collect();
            fixed.extend(
                config
                    .random_seeds
                    .iter()
                    .map(|&s| (random_label(s), random_prescription(catalog, s, key, start, horizon))),
            );
            let mut next_index = group.iter().map(|s| s.prescription_index + 1).max().unwrap_or(0);
            for (label, assignments) in fixed {
                match schedule_from_assignments(history, assignments, start, &label, cm, catalog, predictor) {
                    Ok(s) => {
                        group.push(PrescriptionSchedule {
                            prescription_index: next_index,
                            ..s
                        });
                        next_index += 1;
                    }
                    Err(e) => fail(&label, e.to_string()),
                }
            }

            let mut region_rows: BTreeMap<String, EvaluationRow> = BTreeMap::new();
            for s in &group {
                match evaluate_schedule(s, history, predictor, cm, catalog) {
                    Ok(r) => {
                        region_rows.insert(r.model_label.clone(), r);
                    }
                    Err(e) => fail(&s.model_label, e.to_string()),
                }
            }
            if config.include_real_ips {
                let real = seed_history(history, start)
                    .map_err(|e| e.to_string())
                    .and_then(|seed| {
                        let ips = real_ips_window(history, start, horizon).map_err(|e| e.to_string())?;
                        evaluate_real_ips(&seed, &ips, predictor, cm, catalog).map_err(|e| e.to_string())
                    });
                match real {
                    Ok(r) => {
                        region_rows.insert(r.model_label.clone(), r);
                    }
                    Err(e) => fail(REAL_IP_LABEL, e),
                }
            }
            let ordered: Vec<EvaluationRow> = order.iter().filter_map(|l| region_rows.remove(l)).collect();
            rows.extend(ordered.iter().cloned());
            tables.push(ReportTable {
                scope: key.canonical(),
                cost_kind: cm.kind,
                rows: ordered,
            });
            schedules.extend(group);
        }
    }

    for cm in &cost_models {
        let mut world = Vec::new();
        for label in &order {
            let per_region: Vec<EvaluationRow> = rows
                .iter()
                .filter(|r| r.cost_kind == cm.kind && &r.model_label == label)
                .cloned()
                .collect();
            if let Ok(r) = world_aggregate(&per_region) {
                world.push(r);
            }
        }
        tables.push(ReportTable {
            scope: WORLD_SCOPE.to_string(),
            cost_kind: cm.kind,
            rows: world,
        });
    }

    Ok(ExperimentResult {
        config: config.clone(),
        min_runs,
        cost_models,
        weights: weights.into_values().collect(),
        schedules,
        rows,
        tables,
        failures,
    })
}

fn file_stem(scope: &str) -> String {
    scope
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Writes prescriptions, report tables, min runs, cost models and failures
/// under `dir`. Returns the written paths in write order.
pub fn write_outputs(
    result: &ExperimentResult,
    catalog: &PlanCatalog,
    dir: &Path,
) -> Result<Vec<std::path::PathBuf>, PipelineError> {
    std::fs::create_dir_all(dir.join("reports"))?;
    std::fs::create_dir_all(dir.join("prescriptions"))?;
    let mut written = Vec::new();
    let mut put = |path: std::path::PathBuf, body: &[u8]| -> std::io::Result<()> {
        std::fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };

    for cm in &result.cost_models {
        let rows: Vec<_> = result
            .schedules
            .iter()
            .filter(|s| s.cost_kind == cm.kind)
            .flat_map(|s| s.to_rows())
            .collect();
        let mut buf = Vec::new();
        write_rows(&mut buf, catalog, &rows)?;
        put(dir.join("prescriptions").join(format!("{}.csv", cm.kind)), &buf)?;
        put(dir.join(format!("cost_model_{}.json", cm.kind)), cm.to_json().as_bytes())?;
    }
    for t in &result.tables {
        let name = format!("{}_{}.csv", file_stem(&t.scope), t.cost_kind);
        put(dir.join("reports").join(name), t.to_csv().as_bytes())?;
    }
    for scope in result.scopes() {
        let tables: Vec<&ReportTable> = result.tables.iter().filter(|t| t.scope == scope).collect();
        let name = format!("{}_wide.csv", file_stem(&scope));
        put(dir.join("reports").join(name), wide_table(&tables).as_bytes())?;
    }
    let min_runs = serde_json::to_string_pretty(&result.min_runs).expect("min runs serialize");
    put(dir.join("min_runs.json"), min_runs.as_bytes())?;
    let failures = serde_json::to_string_pretty(&result.failures).expect("failures serialize");
    put(dir.join("failures.json"), failures.as_bytes())?;
    Ok(written)
}
