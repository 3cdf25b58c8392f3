//! The per-day, per-region integer program.
//!
//! Variables pick exactly one level per plan. The objective is total
//! normalized stringency plus the normalized case term
//! `(1/beta) * (alpha + sum_p C[p][l_p] / 100 * alpha)`, where the impact
//! weights `C` are in percent. Because both terms are sums of per-plan
//! contributions and the constraints only couple levels of the same plan,
//! the program is separable: the joint optimum is the per-plan argmin.
//! [`enumerate_oracle`] checks that claim by brute force.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{Assignment, PlanCatalog, PlanId};
use crate::costs::{stringency_of, CostModel};
use crate::impact::ImpactWeights;
use crate::ingest::{RegionHistory, RegionKey};

/// Upper bound on the ceiling applied to minimum run lengths.
pub const MAX_MIN_RUN: u32 = 7;
pub const DEFAULT_ORACLE_CAP: u64 = 10_000_000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PrescribeError {
    #[error("current new cases (beta = {0}) must be positive")]
    ZeroBeta(f64),
    #[error("forced level {level} of {plan} is not admissible")]
    InfeasibleForcing { plan: PlanId, level: u8 },
    #[error("no impact weight for {plan} at level {level}")]
    MissingWeight { plan: PlanId, level: u8 },
    #[error("joint space of {size} assignments exceeds the oracle cap {cap}")]
    SpaceTooLarge { size: u64, cap: u64 },
    #[error("assignment is not valid for the catalog")]
    InvalidAssignment,
}

/// Everything the objective needs for one (region, day).
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveContext<'a> {
    /// New cases at prescription start; constant over a rollout.
    pub beta: f64,
    /// Predicted new cases of the previous day.
    pub alpha: f64,
    pub weights: &'a ImpactWeights,
    pub cost_model: &'a CostModel,
}

impl ObjectiveContext<'_> {
    fn check_beta(&self) -> Result<(), PrescribeError> {
        if self.beta > 0.0 && self.beta.is_finite() {
            Ok(())
        } else {
            Err(PrescribeError::ZeroBeta(self.beta))
        }
    }

    fn weight(&self, plan: PlanId, level: u8) -> Result<f64, PrescribeError> {
        self.weights
            .get(plan, level)
            .ok_or(PrescribeError::MissingWeight { plan, level })
    }

    /// Objective contribution of holding `plan` at `level`, excluding the
    /// constant `alpha / beta`.
    pub fn plan_term(&self, plan: PlanId, level: u8) -> Result<f64, PrescribeError> {
        let c = self.weight(plan, level)?;
        Ok(self.cost_model.level_cost(plan, level) + self.alpha / self.beta * (c / 100.0))
    }
}

/// Plans held at a forced level, with the minimum run table they came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForcingState {
    /// At most one forced level per plan.
    pub forced: BTreeMap<PlanId, u8>,
    pub min_run: MinRuns,
}

impl ForcingState {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_forced(&self, plan: PlanId, level: u8) -> bool {
        self.forced.get(&plan) == Some(&level)
    }

    pub fn force(&mut self, plan: PlanId, level: u8) {
        self.forced.insert(plan, level);
    }
}

/// Minimum consecutive days per (plan, level). Missing entries mean 1.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MinRuns(BTreeMap<(PlanId, u8), u32>);

impl MinRuns {
    pub fn get(&self, plan: PlanId, level: u8) -> u32 {
        self.0.get(&(plan, level)).copied().unwrap_or(1)
    }

    /// Stores `days` clamped to `1..=7`.
    pub fn set(&mut self, plan: PlanId, level: u8, days: u32) {
        self.0.insert((plan, level), days.clamp(1, MAX_MIN_RUN));
    }

    pub fn uniform(catalog: &PlanCatalog, days: u32) -> Self {
        let mut m = MinRuns::default();
        for p in catalog.plans() {
            for l in p.levels() {
                m.set(p.id, l, days);
            }
        }
        m
    }

    pub fn iter(&self) -> impl Iterator<Item = ((PlanId, u8), u32)> + '_ {
        self.0.iter().map(|(k, v)| (*k, *v))
    }

    /// `{"C1": [d0, d1, ...], ...}` covering every catalog level.
    pub fn to_table(&self, catalog: &PlanCatalog) -> BTreeMap<String, Vec<u32>> {
        catalog
            .plans()
            .iter()
            .map(|p| (p.id.code().to_string(), p.levels().map(|l| self.get(p.id, l)).collect()))
            .collect()
    }

    pub fn from_table(table: &BTreeMap<String, Vec<u32>>) -> Result<Self, crate::catalog::UnknownPlan> {
        let mut m = MinRuns::default();
        for (code, row) in table {
            let plan: PlanId = code.parse()?;
            for (l, d) in row.iter().enumerate() {
                m.set(plan, l as u8, *d);
            }
        }
        Ok(m)
    }
}

impl Serialize for MinRuns {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut table: BTreeMap<String, BTreeMap<u8, u32>> = BTreeMap::new();
        for ((p, l), d) in self.iter() {
            table.entry(p.code().to_string()).or_default().insert(l, d);
        }
        table.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MinRuns {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let table = BTreeMap::<String, BTreeMap<u8, u32>>::deserialize(d)?;
        let mut m = MinRuns::default();
        for (code, row) in table {
            let plan: PlanId = code.parse().map_err(serde::de::Error::custom)?;
            for (l, days) in row {
                m.set(plan, l, days);
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub assignment: Assignment,
    pub objective_value: f64,
    pub stringency_term: f64,
    pub case_term: f64,
}

/// Normalized case term of an assignment.
pub fn case_objective(
    ctx: &ObjectiveContext<'_>,
    catalog: &PlanCatalog,
    assignment: &Assignment,
) -> Result<f64, PrescribeError> {
    ctx.check_beta()?;
    let mut impact = 0.0;
    for p in catalog.ids() {
        let level = assignment.get(p).ok_or(PrescribeError::InvalidAssignment)?;
        impact += ctx.weight(p, level)? / 100.0 * ctx.alpha;
    }
    Ok((ctx.alpha + impact) / ctx.beta)
}

fn check_forcing(catalog: &PlanCatalog, forcing: &ForcingState) -> Result<(), PrescribeError> {
    for (&plan, &level) in &forcing.forced {
        if !catalog.admits(plan, level) {
            return Err(PrescribeError::InfeasibleForcing { plan, level });
        }
    }
    Ok(())
}

fn score(
    ctx: &ObjectiveContext<'_>,
    catalog: &PlanCatalog,
    assignment: Assignment,
) -> Result<Solution, PrescribeError> {
    let stringency_term =
        stringency_of(ctx.cost_model, catalog, &assignment).map_err(|_| PrescribeError::InvalidAssignment)?;
    let case_term = case_objective(ctx, catalog, &assignment)?;
    Ok(Solution {
        assignment,
        objective_value: stringency_term + case_term,
        stringency_term,
        case_term,
    })
}

/// Exact minimizer by independent per-plan argmin; the lowest level wins
/// ties. Forced plans keep their forced level.
pub fn solve_exact(
    ctx: &ObjectiveContext<'_>,
    catalog: &PlanCatalog,
    forcing: &ForcingState,
) -> Result<Solution, PrescribeError> {
    ctx.check_beta()?;
    check_forcing(catalog, forcing)?;
    let mut assignment = Assignment::new();
    for p in catalog.plans() {
        let level = match forcing.forced.get(&p.id) {
            Some(&l) => l,
            None => {
                let mut best = (0u8, ctx.plan_term(p.id, 0)?);
                for l in 1..=p.max_level {
                    let t = ctx.plan_term(p.id, l)?;
                    if t < best.1 {
                        best = (l, t);
                    }
                }
                best.0
            }
        };
        assignment.set(p.id, level);
    }
    score(ctx, catalog, assignment)
}

/// Brute-force minimum over every admissible joint assignment respecting
/// the forcing, visited in lexicographic order of the level vector so the
/// first minimum found is the lexicographically smallest.
pub fn enumerate_oracle(
    ctx: &ObjectiveContext<'_>,
    catalog: &PlanCatalog,
    forcing: &ForcingState,
    cap: u64,
) -> Result<Solution, PrescribeError> {
    ctx.check_beta()?;
    check_forcing(catalog, forcing)?;

    let plans = catalog.plans();
    let mut lo = Vec::with_capacity(plans.len());
    let mut hi = Vec::with_capacity(plans.len());
    for p in plans {
        match forcing.forced.get(&p.id) {
            Some(&l) => {
                lo.push(l);
                hi.push(l);
            }
            None => {
                lo.push(0);
                hi.push(p.max_level);
            }
        }
    }
    let size: u64 = lo.iter().zip(&hi).map(|(a, b)| (b - a) as u64 + 1).product();
    if size > cap {
        return Err(PrescribeError::SpaceTooLarge { size, cap });
    }

    // Flat lookup tables indexed by [plan][level].
    let mut cost = Vec::with_capacity(plans.len());
    let mut impact = Vec::with_capacity(plans.len());
    for p in plans {
        let mut c_row = Vec::with_capacity(p.level_count());
        let mut i_row = Vec::with_capacity(p.level_count());
        for l in p.levels() {
            c_row.push(ctx.cost_model.level_cost(p.id, l));
            i_row.push(ctx.weight(p.id, l)? / 100.0);
        }
        cost.push(c_row);
        impact.push(i_row);
    }

    let n = plans.len();
    let mut levels = lo.clone();
    let mut best_value = f64::INFINITY;
    let mut best_levels = levels.clone();
    loop {
        let mut stringency = 0.0;
        let mut weight_sum = 0.0;
        for i in 0..n {
            let l = levels[i] as usize;
            stringency += cost[i][l];
            weight_sum += impact[i][l];
        }
        let value = stringency + (ctx.alpha + weight_sum * ctx.alpha) / ctx.beta;
        if value < best_value {
            best_value = value;
            best_levels.copy_from_slice(&levels);
        }

        // Odometer with the last plan varying fastest.
        let mut i = n;
        loop {
            if i == 0 {
                let assignment = Assignment::from_levels(catalog, &best_levels);
                return score(ctx, catalog, assignment);
            }
            i -= 1;
            if levels[i] < hi[i] {
                levels[i] += 1;
                break;
            }
            levels[i] = lo[i];
        }
    }
}

/// Forces the most recent (plan, level) of each plan while its trailing run
/// is shorter than its minimum run. Only the last seven assignments are
/// considered.
pub fn update_forcing(
    recent: &[Assignment],
    min_runs: &MinRuns,
    catalog: &PlanCatalog,
) -> ForcingState {
    let window = &recent[recent.len().saturating_sub(MAX_MIN_RUN as usize)..];
    let mut state = ForcingState {
        forced: BTreeMap::new(),
        min_run: min_runs.clone(),
    };
    let Some(last) = window.last() else {
        return state;
    };
    for p in catalog.ids() {
        let Some(level) = last.get(p) else { continue };
        let run = window
            .iter()
            .rev()
            .take_while(|a| a.get(p) == Some(level))
            .count() as u32;
        if run < min_runs.get(p, level) {
            state.force(p, level);
        }
    }
    state
}

/// Median length of maximal constant-level runs per (plan, level) across
/// all regions, clamped to `1..=7`. Unobserved pairs stay at 1.
pub fn derive_min_runs(
    histories: &BTreeMap<RegionKey, RegionHistory>,
    catalog: &PlanCatalog,
) -> MinRuns {
    let mut runs: BTreeMap<(PlanId, u8), Vec<u32>> = BTreeMap::new();
    for h in histories.values() {
        for p in catalog.ids() {
            let mut current: Option<(u8, u32)> = None;
            for a in &h.ip_levels {
                let l = a.level(p);
                current = match current {
                    Some((cl, n)) if cl == l => Some((cl, n + 1)),
                    Some((cl, n)) => {
                        runs.entry((p, cl)).or_default().push(n);
                        Some((l, 1))
                    }
                    None => Some((l, 1)),
                };
            }
            if let Some((cl, n)) = current {
                runs.entry((p, cl)).or_default().push(n);
            }
        }
    }
    let mut out = MinRuns::default();
    for p in catalog.plans() {
        for l in p.levels() {
            let days = match runs.get_mut(&(p.id, l)) {
                Some(v) if !v.is_empty() => {
                    v.sort_unstable();
                    v[(v.len() - 1) / 2]
                }
                _ => 1,
            };
            out.set(p.id, l, days);
        }
    }
    out
}
