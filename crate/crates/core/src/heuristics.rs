//! Baseline prescription generators: blind-greedy and uniform random.

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::catalog::{Assignment, PlanCatalog, PlanId};
use crate::costs::CostModel;
use crate::ingest::RegionKey;

pub const GREEDY_VARIANTS: u32 = 10;
pub const RANDOM_VARIANTS: u64 = 5;

/// All-zero to all-max, one unit increment per step.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyTrajectory {
    pub steps: Vec<Assignment>,
}

impl GreedyTrajectory {
    /// Number of increments from all-zero to all-max.
    pub fn increments(&self) -> usize {
        self.steps.len() - 1
    }
}

/// Repeatedly raises the cheapest plan that is still below its maximum by
/// one level. Ties go to the plan listed first in the catalog.
pub fn greedy_trajectory(cost_model: &CostModel, catalog: &PlanCatalog) -> GreedyTrajectory {
    let mut current = Assignment::zeros(catalog);
    let mut steps = vec![current.clone()];
    loop {
        let mut pick: Option<(PlanId, f64)> = None;
        for p in catalog.plans() {
            if current.level(p.id) >= p.max_level {
                continue;
            }
            let c = cost_model.level_cost(p.id, 1);
            if pick.is_none_or(|(_, best)| c < best) {
                pick = Some((p.id, c));
            }
        }
        let Some((plan, _)) = pick else { break };
        current.set(plan, current.level(plan) + 1);
        steps.push(current.clone());
    }
    GreedyTrajectory { steps }
}

/// Trajectory step used by greedy variant `k` of `count`:
/// `round((k + 1) * increments / count)`.
pub fn greedy_step(variant: u32, count: u32, increments: usize) -> usize {
    let num = 2 * (variant as usize + 1) * increments + count as usize;
    num / (2 * count as usize)
}

/// Constant-over-time assignment of blind-greedy variant `variant`.
pub fn blind_greedy(cost_model: &CostModel, catalog: &PlanCatalog, variant: u32) -> Assignment {
    assert!(variant < GREEDY_VARIANTS, "variant must be in 0..{GREEDY_VARIANTS}");
    let t = greedy_trajectory(cost_model, catalog);
    let step = greedy_step(variant, GREEDY_VARIANTS, t.increments());
    t.steps[step].clone()
}

pub fn greedy_label(variant: u32) -> String {
    format!("blind_greedy_{variant}")
}

pub fn random_label(seed: u64) -> String {
    format!("random_{seed}")
}

fn draw_rng(seed: u64, region: &RegionKey, date: NaiveDate, plan: PlanId) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(region.canonical().as_bytes());
    h.update([0]);
    h.update(date.format("%Y-%m-%d").to_string().as_bytes());
    h.update(plan.code().as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Uniform random level for `plan`, keyed by (seed, region, date, plan).
pub fn random_level(
    catalog: &PlanCatalog,
    seed: u64,
    region: &RegionKey,
    date: NaiveDate,
    plan: PlanId,
) -> u8 {
    let max = catalog.max_level(plan).unwrap_or(0);
    draw_rng(seed, region, date, plan).gen_range(0..=max)
}

/// One random assignment per day from `start_date`.
pub fn random_prescription(
    catalog: &PlanCatalog,
    seed: u64,
    region: &RegionKey,
    start_date: NaiveDate,
    horizon_days: usize,
) -> Vec<Assignment> {
    (0..horizon_days)
        .map(|d| {
            let date = start_date + Days::new(d as u64);
            catalog
                .ids()
                .map(|p| (p, random_level(catalog, seed, region, date, p)))
                .collect()
        })
        .collect()
}
