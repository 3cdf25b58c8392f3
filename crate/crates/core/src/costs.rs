//! Stringency cost models.
//!
//! Every model assigns a level-one cost to each plan. Level `l` of a plan
//! costs `l` times its level-one cost. Normalized bases sum to one across
//! plans, so any admissible assignment costs at most the largest level (4).
//! The raw, unnormalized costs are kept for reporting.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{validate_assignment, Assignment, PlanCatalog, PlanId};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CostError {
    #[error("random cost model requires a seed")]
    MissingSeed,
    #[error("assignment is not valid for the catalog")]
    InvalidAssignment,
    #[error("unknown cost model kind `{0}`")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    Fixed,
    Random,
    Realistic,
}

impl CostKind {
    pub const ALL: [CostKind; 3] = [CostKind::Fixed, CostKind::Random, CostKind::Realistic];

    pub fn as_str(self) -> &'static str {
        match self {
            CostKind::Fixed => "fixed",
            CostKind::Random => "random",
            CostKind::Realistic => "realistic",
        }
    }
}

impl fmt::Display for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CostKind {
    type Err = CostError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fixed" => Ok(CostKind::Fixed),
            "random" => Ok(CostKind::Random),
            "realistic" => Ok(CostKind::Realistic),
            other => Err(CostError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub kind: CostKind,
    pub seed: Option<u64>,
    /// Normalized level-one cost per plan.
    pub base: BTreeMap<PlanId, f64>,
    /// Level-one cost before normalization.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub raw: BTreeMap<PlanId, f64>,
}

/// Lower bound (exclusive) and upper bound (inclusive) of random raw costs.
pub const RANDOM_COST_RANGE: (f64, f64) = (0.5, 10.0);

pub fn build_cost_model(
    kind: CostKind,
    catalog: &PlanCatalog,
    seed: Option<u64>,
) -> Result<CostModel, CostError> {
    let raw: Vec<f64> = match kind {
        CostKind::Fixed => vec![1.0; catalog.len()],
        CostKind::Realistic => catalog
            .plans()
            .iter()
            .map(|p| p.realistic_base_cost as f64)
            .collect(),
        CostKind::Random => {
            let seed = seed.ok_or(CostError::MissingSeed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (lo, hi) = RANDOM_COST_RANGE;
            // 1 - u lies in (0, 1], mapping onto (lo, hi].
            (0..catalog.len())
                .map(|_| lo + (hi - lo) * (1.0 - rng.gen::<f64>()))
                .collect()
        }
    };
    let total: f64 = raw.iter().sum();
    let ids: Vec<PlanId> = catalog.ids().collect();
    Ok(CostModel {
        kind,
        seed: if kind == CostKind::Random { seed } else { None },
        base: ids.iter().copied().zip(raw.iter().map(|r| r / total)).collect(),
        raw: ids.into_iter().zip(raw).collect(),
    })
}

impl CostModel {
    /// Normalized cost of holding `plan` at `level`.
    pub fn level_cost(&self, plan: PlanId, level: u8) -> f64 {
        level as f64 * self.base.get(&plan).copied().unwrap_or(0.0)
    }

    pub fn raw_level_cost(&self, plan: PlanId, level: u8) -> f64 {
        let raw = self
            .raw
            .get(&plan)
            .or_else(|| self.base.get(&plan))
            .copied()
            .unwrap_or(0.0);
        level as f64 * raw
    }

    /// Raw stringency, without validation.
    pub fn raw_stringency(&self, assignment: &Assignment) -> f64 {
        assignment.iter().map(|(p, l)| self.raw_level_cost(p, l)).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cost model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Total normalized stringency of a valid assignment.
pub fn stringency_of(
    model: &CostModel,
    catalog: &PlanCatalog,
    assignment: &Assignment,
) -> Result<f64, CostError> {
    if !validate_assignment(catalog, assignment) {
        return Err(CostError::InvalidAssignment);
    }
    Ok(catalog
        .ids()
        .map(|p| model.level_cost(p, assignment.level(p)))
        .sum())
}
