//! The intervention plans, their admissible restriction levels and the
//! realistic level-one stringency costs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the twelve intervention-plan dimensions tracked by the dataset.
///
/// Variant order is the canonical plan order used everywhere (CSV columns,
/// tie-breaking, enumeration order).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PlanId {
    C1,
    C2,
    C3,
    C4,
    C5,
    C6,
    C7,
    C8,
    H1,
    H2,
    H3,
    H6,
}

impl PlanId {
    pub const ALL: [PlanId; 12] = [
        PlanId::C1,
        PlanId::C2,
        PlanId::C3,
        PlanId::C4,
        PlanId::C5,
        PlanId::C6,
        PlanId::C7,
        PlanId::C8,
        PlanId::H1,
        PlanId::H2,
        PlanId::H3,
        PlanId::H6,
    ];

    pub fn code(self) -> &'static str {
        match self {
            PlanId::C1 => "C1",
            PlanId::C2 => "C2",
            PlanId::C3 => "C3",
            PlanId::C4 => "C4",
            PlanId::C5 => "C5",
            PlanId::C6 => "C6",
            PlanId::C7 => "C7",
            PlanId::C8 => "C8",
            PlanId::H1 => "H1",
            PlanId::H2 => "H2",
            PlanId::H3 => "H3",
            PlanId::H6 => "H6",
        }
    }

    /// Column header used by the tracker CSV files.
    pub fn display_name(self) -> &'static str {
        match self {
            PlanId::C1 => "C1_School closing",
            PlanId::C2 => "C2_Workplace closing",
            PlanId::C3 => "C3_Cancel public events",
            PlanId::C4 => "C4_Restrictions on gatherings",
            PlanId::C5 => "C5_Close public transport",
            PlanId::C6 => "C6_Stay at home requirements",
            PlanId::C7 => "C7_Restrictions on internal movement",
            PlanId::C8 => "C8_International travel controls",
            PlanId::H1 => "H1_Public information campaigns",
            PlanId::H2 => "H2_Testing policy",
            PlanId::H3 => "H3_Contact tracing",
            PlanId::H6 => "H6_Facial Coverings",
        }
    }
}

impl fmt::Display for PlanId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown intervention plan `{0}`")]
pub struct UnknownPlan(pub String);

impl FromStr for PlanId {
    type Err = UnknownPlan;

    /// Accepts either the short code (`C1`) or the full column name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        PlanId::ALL
            .iter()
            .copied()
            .find(|p| p.code() == s || p.display_name() == s)
            .ok_or_else(|| UnknownPlan(s.to_string()))
    }
}

/// A plan together with its level set `0..=max_level` and realistic base cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSpec {
    pub id: PlanId,
    pub max_level: u8,
    /// Level-one cost on a 1..=10 scale.
    pub realistic_base_cost: u32,
}

impl PlanSpec {
    pub fn levels(&self) -> impl Iterator<Item = u8> {
        0..=self.max_level
    }

    pub fn level_count(&self) -> usize {
        self.max_level as usize + 1
    }

    pub fn admits(&self, level: u8) -> bool {
        level <= self.max_level
    }
}

/// One level per plan. Keyed by plan so that incomplete or foreign
/// assignments are representable and can be rejected by validation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment(BTreeMap<PlanId, u8>);

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    /// All plans of `catalog` at level zero.
    pub fn zeros(catalog: &PlanCatalog) -> Self {
        catalog.plans().iter().map(|p| (p.id, 0)).collect()
    }

    /// All plans of `catalog` at their maximum level.
    pub fn maxed(catalog: &PlanCatalog) -> Self {
        catalog.plans().iter().map(|p| (p.id, p.max_level)).collect()
    }

    /// Builds an assignment from levels listed in catalog plan order.
    pub fn from_levels(catalog: &PlanCatalog, levels: &[u8]) -> Self {
        catalog.plans().iter().map(|p| p.id).zip(levels.iter().copied()).collect()
    }

    /// Levels in catalog plan order; plans without an entry read as 0.
    pub fn levels(&self, catalog: &PlanCatalog) -> Vec<u8> {
        catalog.plans().iter().map(|p| self.level(p.id)).collect()
    }

    pub fn get(&self, plan: PlanId) -> Option<u8> {
        self.0.get(&plan).copied()
    }

    /// Level of `plan`, zero when absent.
    pub fn level(&self, plan: PlanId) -> u8 {
        self.get(plan).unwrap_or(0)
    }

    pub fn set(&mut self, plan: PlanId, level: u8) {
        self.0.insert(plan, level);
    }

    pub fn remove(&mut self, plan: PlanId) -> Option<u8> {
        self.0.remove(&plan)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PlanId, u8)> + '_ {
        self.0.iter().map(|(p, l)| (*p, *l))
    }

    /// True when every plan present in both is at least as strict in `self`.
    pub fn dominates(&self, other: &Assignment) -> bool {
        other.iter().all(|(p, l)| self.level(p) >= l)
    }
}

impl FromIterator<(PlanId, u8)> for Assignment {
    fn from_iter<I: IntoIterator<Item = (PlanId, u8)>>(iter: I) -> Self {
        Assignment(iter.into_iter().collect())
    }
}

/// Ordered, immutable set of plans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanCatalog {
    plans: Vec<PlanSpec>,
}

const TABLE: [(PlanId, u8, u32); 12] = [
    (PlanId::C1, 3, 9),
    (PlanId::C2, 3, 6),
    (PlanId::C3, 2, 2),
    (PlanId::C4, 4, 5),
    (PlanId::C5, 2, 8),
    (PlanId::C6, 3, 7),
    (PlanId::C7, 2, 7),
    (PlanId::C8, 4, 8),
    (PlanId::H1, 2, 2),
    (PlanId::H2, 3, 3),
    (PlanId::H3, 2, 7),
    (PlanId::H6, 4, 2),
];

/// The full twelve-plan catalog.
pub fn default_catalog() -> PlanCatalog {
    PlanCatalog {
        plans: TABLE
            .iter()
            .map(|&(id, max_level, realistic_base_cost)| PlanSpec {
                id,
                max_level,
                realistic_base_cost,
            })
            .collect(),
    }
}

/// True iff `assignment` has exactly one entry per catalog plan and every
/// level is admissible.
pub fn validate_assignment(catalog: &PlanCatalog, assignment: &Assignment) -> bool {
    assignment.len() == catalog.len()
        && catalog
            .plans()
            .iter()
            .all(|p| assignment.get(p.id).is_some_and(|l| p.admits(l)))
}

impl PlanCatalog {
    /// A catalog restricted to `ids`, kept in canonical plan order.
    /// Unknown or duplicate ids are ignored.
    pub fn subset(ids: &[PlanId]) -> Self {
        let full = default_catalog();
        PlanCatalog {
            plans: full.plans.into_iter().filter(|p| ids.contains(&p.id)).collect(),
        }
    }

    /// Arbitrary catalog, mostly useful for reduced test instances.
    /// Plans are sorted into canonical order and deduplicated by id.
    pub fn from_specs(mut plans: Vec<PlanSpec>) -> Self {
        plans.sort_by_key(|p| p.id);
        plans.dedup_by_key(|p| p.id);
        PlanCatalog { plans }
    }

    pub fn plans(&self) -> &[PlanSpec] {
        &self.plans
    }

    pub fn len(&self) -> usize {
        self.plans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = PlanId> + '_ {
        self.plans.iter().map(|p| p.id)
    }

    pub fn spec(&self, id: PlanId) -> Option<&PlanSpec> {
        self.plans.iter().find(|p| p.id == id)
    }

    pub fn position(&self, id: PlanId) -> Option<usize> {
        self.plans.iter().position(|p| p.id == id)
    }

    pub fn max_level(&self, id: PlanId) -> Option<u8> {
        self.spec(id).map(|p| p.max_level)
    }

    /// Number of joint assignments, i.e. the product of level-set sizes.
    pub fn joint_space_size(&self) -> u64 {
        self.plans.iter().map(|p| p.level_count() as u64).product()
    }

    pub fn total_max_level(&self) -> u32 {
        self.plans.iter().map(|p| p.max_level as u32).sum()
    }

    pub fn total_realistic_cost(&self) -> u32 {
        self.plans.iter().map(|p| p.realistic_base_cost).sum()
    }

    pub fn contains(&self, id: PlanId) -> bool {
        self.spec(id).is_some()
    }

    pub fn admits(&self, id: PlanId, level: u8) -> bool {
        self.spec(id).is_some_and(|p| p.admits(level))
    }
}
