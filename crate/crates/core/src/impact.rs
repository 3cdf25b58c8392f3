//! Per-region impact weights: the percentage change in predicted cases from
//! activating a single plan at a single level against a no-intervention
//! baseline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::catalog::{Assignment, PlanCatalog, PlanId};
use crate::ingest::{RegionHistory, RegionKey};
use crate::predictor::{PredictError, Predictor};

#[derive(Debug, thiserror::Error)]
pub enum ImpactError {
    #[error("history of {0} has no data before the weight-set start")]
    EmptyHistory(String),
    #[error("history of {region} ends on {last}, needs data through {needed}")]
    HistoryTooShort {
        region: String,
        last: NaiveDate,
        needed: NaiveDate,
    },
    #[error("level {level} of {plan} is not a positive admissible level")]
    LevelOutOfRange { plan: PlanId, level: u8 },
    #[error("baseline case total {0} is not positive")]
    ZeroBaseline(f64),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error("weight cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WeightSetSpec {
    pub start_date: NaiveDate,
    pub horizon_days: usize,
    pub label: String,
}

impl WeightSetSpec {
    /// Spec labelled like `w_jan15_7`.
    pub fn new(start_date: NaiveDate, horizon_days: usize) -> Self {
        const MONTHS: [&str; 12] = [
            "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
        ];
        let label = format!(
            "w_{}{}_{}",
            MONTHS[start_date.month0() as usize],
            start_date.day(),
            horizon_days
        );
        WeightSetSpec {
            start_date,
            horizon_days,
            label,
        }
    }
}

/// Six weight sets: 1- and 7-day horizons from Aug 2 2020, Jan 2 2021 and
/// Jan 15 2021.
pub fn default_weight_specs() -> Vec<WeightSetSpec> {
    let starts = [
        NaiveDate::from_ymd_opt(2020, 8, 2).unwrap(),
        NaiveDate::from_ymd_opt(2021, 1, 2).unwrap(),
        NaiveDate::from_ymd_opt(2021, 1, 15).unwrap(),
    ];
    starts
        .iter()
        .flat_map(|&d| [1, 7].into_iter().map(move |h| WeightSetSpec::new(d, h)))
        .collect()
}

/// Weight table: `c[plan][level]` in percent, `c[plan][0] == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactWeights {
    pub region: RegionKey,
    pub spec: WeightSetSpec,
    pub c: BTreeMap<PlanId, Vec<f64>>,
}

impl ImpactWeights {
    pub fn get(&self, plan: PlanId, level: u8) -> Option<f64> {
        self.c.get(&plan)?.get(level as usize).copied()
    }

    /// All-zero weights covering the catalog.
    pub fn zeros(region: RegionKey, spec: WeightSetSpec, catalog: &PlanCatalog) -> Self {
        ImpactWeights {
            region,
            spec,
            c: catalog
                .plans()
                .iter()
                .map(|p| (p.id, vec![0.0; p.level_count()]))
                .collect(),
        }
    }
}

/// `(E - B) / B * 100`.
pub fn impact_weight(baseline: f64, estimate: f64) -> Result<f64, ImpactError> {
    if !(baseline > 0.0) {
        return Err(ImpactError::ZeroBaseline(baseline));
    }
    Ok((estimate - baseline) / baseline * 100.0)
}

fn seed_history(history: &RegionHistory, spec: &WeightSetSpec) -> Result<RegionHistory, ImpactError> {
    let needed = spec.start_date - Days::new(1);
    match history.last_date() {
        None => return Err(ImpactError::EmptyHistory(history.key.canonical())),
        Some(last) if last < needed => {
            return Err(ImpactError::HistoryTooShort {
                region: history.key.canonical(),
                last,
                needed,
            })
        }
        _ => {}
    }
    let seed = history.before(spec.start_date);
    if seed.is_empty() {
        return Err(ImpactError::EmptyHistory(history.key.canonical()));
    }
    Ok(seed)
}

fn horizon_total(
    seed: &RegionHistory,
    assignment: Assignment,
    spec: &WeightSetSpec,
    predictor: &dyn Predictor,
) -> Result<f64, ImpactError> {
    let schedule = vec![assignment; spec.horizon_days];
    Ok(predictor.predict(seed, &schedule)?.iter().sum())
}

/// B: predicted cases summed over the horizon with every plan off.
pub fn baseline_cases(
    history: &RegionHistory,
    spec: &WeightSetSpec,
    catalog: &PlanCatalog,
    predictor: &dyn Predictor,
) -> Result<f64, ImpactError> {
    let seed = seed_history(history, spec)?;
    horizon_total(&seed, Assignment::zeros(catalog), spec, predictor)
}

/// E: predicted cases summed over the horizon with only `plan` active at
/// `level` on every day.
pub fn single_plan_cases(
    history: &RegionHistory,
    spec: &WeightSetSpec,
    catalog: &PlanCatalog,
    plan: PlanId,
    level: u8,
    predictor: &dyn Predictor,
) -> Result<f64, ImpactError> {
    if level == 0 || !catalog.admits(plan, level) {
        return Err(ImpactError::LevelOutOfRange { plan, level });
    }
    let seed = seed_history(history, spec)?;
    let mut a = Assignment::zeros(catalog);
    a.set(plan, level);
    horizon_total(&seed, a, spec, predictor)
}

pub fn estimate_weight_set(
    history: &RegionHistory,
    spec: &WeightSetSpec,
    catalog: &PlanCatalog,
    predictor: &dyn Predictor,
) -> Result<ImpactWeights, ImpactError> {
    let seed = seed_history(history, spec)?;
    let baseline = horizon_total(&seed, Assignment::zeros(catalog), spec, predictor)?;
    if !(baseline > 0.0) {
        return Err(ImpactError::ZeroBaseline(baseline));
    }
    let mut c = BTreeMap::new();
    for p in catalog.plans() {
        let mut row = vec![0.0];
        for level in 1..=p.max_level {
            let mut a = Assignment::zeros(catalog);
            a.set(p.id, level);
            let estimate = horizon_total(&seed, a, spec, predictor)?;
            row.push(impact_weight(baseline, estimate)?);
        }
        c.insert(p.id, row);
    }
    Ok(ImpactWeights {
        region: history.key.clone(),
        spec: spec.clone(),
        c,
    })
}

pub type WeightTable = BTreeMap<PlanId, Vec<f64>>;

/// Weight tables keyed by `region/label`, persisted as
/// `weights-<predictor fingerprint>.json` in a cache directory.
#[derive(Debug)]
pub struct WeightCache {
    path: Option<PathBuf>,
    entries: Mutex<BTreeMap<String, WeightTable>>,
}

pub fn cache_key(region: &RegionKey, label: &str) -> String {
    format!("{}/{}", region.canonical(), label)
}

impl WeightCache {
    pub fn in_memory() -> Self {
        WeightCache {
            path: None,
            entries: Mutex::new(BTreeMap::new()),
        }
    }

    /// Opens (or starts) the cache file for `fingerprint` under `dir`.
    pub fn open(dir: &Path, fingerprint: &str) -> Result<Self, ImpactError> {
        let safe: String = fingerprint
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .collect();
        Self::open_file(&dir.join(format!("weights-{safe}.json")))
    }

    /// Opens (or starts) a cache at an explicit file path.
    pub fn open_file(path: &Path) -> Result<Self, ImpactError> {
        let entries = if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| ImpactError::Cache(e.to_string()))?;
            serde_json::from_str(&text).map_err(|e| ImpactError::Cache(e.to_string()))?
        } else {
            BTreeMap::new()
        };
        Ok(WeightCache {
            path: Some(path.to_path_buf()),
            entries: Mutex::new(entries),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, region: &RegionKey, label: &str) -> Option<WeightTable> {
        self.entries.lock().unwrap().get(&cache_key(region, label)).cloned()
    }

    pub fn insert(&self, weights: &ImpactWeights) {
        self.entries
            .lock()
            .unwrap()
            .insert(cache_key(&weights.region, &weights.spec.label), weights.c.clone());
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&*self.entries.lock().unwrap()).expect("weights serialize")
    }

    /// Writes the cache atomically (temp file + rename). No-op in memory.
    pub fn save(&self) -> Result<(), ImpactError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let err = |e: &dyn std::fmt::Display| ImpactError::Cache(e.to_string());
        let dir = path.parent().unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir).map_err(|e| err(&e))?;
        // Hold the lock across the write so concurrent saves serialize.
        let entries = self.entries.lock().unwrap();
        let json = serde_json::to_string_pretty(&*entries).map_err(|e| err(&e))?;
        let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| err(&e))?;
        std::fs::write(tmp.path(), json).map_err(|e| err(&e))?;
        tmp.persist(path).map_err(|e| err(&e))?;
        Ok(())
    }

    /// Cached weights, or a fresh estimate that is then stored.
    pub fn get_or_estimate(
        &self,
        history: &RegionHistory,
        spec: &WeightSetSpec,
        catalog: &PlanCatalog,
        predictor: &dyn Predictor,
    ) -> Result<ImpactWeights, ImpactError> {
        if let Some(c) = self.get(&history.key, &spec.label) {
            return Ok(ImpactWeights {
                region: history.key.clone(),
                spec: spec.clone(),
                c,
            });
        }
        let w = estimate_weight_set(history, spec, catalog, predictor)?;
        self.insert(&w);
        Ok(w)
    }
}

/// Estimates every (region, spec) pair; failures are reported per pair.
pub fn estimate_all(
    histories: &BTreeMap<RegionKey, RegionHistory>,
    specs: &[WeightSetSpec],
    catalog: &PlanCatalog,
    predictor: &dyn Predictor,
    cache: &WeightCache,
) -> BTreeMap<(RegionKey, String), Result<ImpactWeights, ImpactError>> {
    let mut out = BTreeMap::new();
    for (key, history) in histories {
        for spec in specs {
            let r = cache.get_or_estimate(history, spec, catalog, predictor);
            out.insert((key.clone(), spec.label.clone()), r);
        }
    }
    out
}
