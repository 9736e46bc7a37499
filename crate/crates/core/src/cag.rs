//! Static coalitional affinity games and exhaustive stability oracles.
//!
//! Agents are numbered `0..n_agents`. A coalition is a bitmask over those ids,
//! which caps games at 32 agents; the exhaustive routines impose tighter
//! limits ([`MAX_CORE_AGENTS`], [`MAX_PARTITION_AGENTS`]).
//!
//! Preference comparisons use exact floating-point equality. Sums are always
//! accumulated in ascending neighbour order so identical coalitions produce
//! bit-identical values.
//!
//! # Game file format
//!
//! Games are stored as TOML with three keys:
//!
//! ```toml
//! n_agents = 3
//! singleton_values = [0.0, 0.7, 0.0]
//! edges = [[0, 1, 2.0], [0, 2, 1.5]]
//! ```
//!
//! `edges` holds `[j, k, weight]` triples for the directed affinity `w(j, k)`.
//! `singleton_values[j]` is `b_j`, the value agent `j` assigns to being alone.
//! Floats are written in shortest round-trip form, so [`AffinityGame::to_toml`]
//! followed by [`AffinityGame::from_toml`] reproduces the game exactly.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest game accepted by the strict-core and inner-stability checks.
pub const MAX_CORE_AGENTS: usize = 12;
/// Largest game accepted by the partition enumeration.
pub const MAX_PARTITION_AGENTS: usize = 8;
/// Largest game representable with bitmask coalitions.
pub const MAX_AGENTS: usize = 32;

const CORE_CONDITION_TOL: f64 = 1e-9;

/// A non-empty set of agents, stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coalition(u32);

impl Coalition {
    pub fn from_mask(mask: u32) -> Result<Self> {
        if mask == 0 {
            return Err(Error::domain("coalition must be non-empty"));
        }
        Ok(Coalition(mask))
    }

    pub fn from_members(members: &[usize]) -> Result<Self> {
        let mut mask = 0u32;
        for &m in members {
            if m >= MAX_AGENTS {
                return Err(Error::domain(format!("agent id {m} exceeds bitmask width")));
            }
            mask |= 1 << m;
        }
        Coalition::from_mask(mask)
    }

    pub fn singleton(j: usize) -> Self {
        Coalition(1 << j)
    }

    /// The grand coalition over `n` agents.
    pub fn grand(n: usize) -> Self {
        debug_assert!((1..=MAX_AGENTS).contains(&n));
        Coalition(full_mask(n))
    }

    pub fn mask(self) -> u32 {
        self.0
    }

    pub fn contains(self, j: usize) -> bool {
        j < MAX_AGENTS && self.0 & (1 << j) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_singleton(self) -> bool {
        self.0.count_ones() == 1
    }

    pub fn members(self) -> impl Iterator<Item = usize> {
        let mask = self.0;
        (0..MAX_AGENTS).filter(move |&j| mask & (1 << j) != 0)
    }
}

impl fmt::Debug for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.members()).finish()
    }
}

fn full_mask(n: usize) -> u32 {
    if n >= 32 {
        u32::MAX
    } else {
        (1u32 << n) - 1
    }
}

/// A partition of the agent set into disjoint coalitions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoalitionStructure {
    parts: Vec<Coalition>,
    owner: Vec<usize>,
}

impl CoalitionStructure {
    pub fn new(n_agents: usize, parts: Vec<Coalition>) -> Result<Self> {
        if n_agents == 0 || n_agents > MAX_AGENTS {
            return Err(Error::domain(format!("n_agents must be in 1..={MAX_AGENTS}")));
        }
        let full = full_mask(n_agents);
        let mut seen = 0u32;
        let mut owner = vec![usize::MAX; n_agents];
        for (idx, part) in parts.iter().enumerate() {
            if part.0 & !full != 0 {
                return Err(Error::domain(format!("{part:?} names an unknown agent")));
            }
            if part.0 & seen != 0 {
                return Err(Error::domain("coalitions in a structure must be disjoint"));
            }
            seen |= part.0;
            for j in part.members() {
                owner[j] = idx;
            }
        }
        if seen != full {
            return Err(Error::domain("coalition structure does not cover every agent"));
        }
        Ok(CoalitionStructure { parts, owner })
    }

    pub fn grand(n_agents: usize) -> Result<Self> {
        Self::new(n_agents, vec![Coalition::grand(n_agents)])
    }

    pub fn singletons(n_agents: usize) -> Result<Self> {
        Self::new(n_agents, (0..n_agents).map(Coalition::singleton).collect())
    }

    /// Builds a structure from a restricted-growth string: `labels[j]` is the
    /// block index of agent `j`.
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        let blocks = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut masks = vec![0u32; blocks];
        for (j, &l) in labels.iter().enumerate() {
            masks[l] |= 1 << j;
        }
        let parts = masks
            .into_iter()
            .map(Coalition::from_mask)
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels.len(), parts)
    }

    pub fn parts(&self) -> &[Coalition] {
        &self.parts
    }

    pub fn n_agents(&self) -> usize {
        self.owner.len()
    }

    /// The coalition containing agent `j`.
    pub fn coalition_of(&self, j: usize) -> Coalition {
        self.parts[self.owner[j]]
    }
}

/// A coalitional affinity game with generalized (non-negative) singleton values.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityGame {
    n_agents: usize,
    weights: BTreeMap<(usize, usize), f64>,
    singleton_values: Vec<f64>,
    out: Vec<Vec<(usize, f64)>>,
}

impl AffinityGame {
    pub fn new(
        n_agents: usize,
        weights: BTreeMap<(usize, usize), f64>,
        singleton_values: Vec<f64>,
    ) -> Result<Self> {
        if n_agents == 0 || n_agents > MAX_AGENTS {
            return Err(Error::domain(format!("n_agents must be in 1..={MAX_AGENTS}")));
        }
        if singleton_values.len() != n_agents {
            return Err(Error::Shape {
                context: "singleton_values",
                expected: n_agents,
                got: singleton_values.len(),
            });
        }
        for (j, &b) in singleton_values.iter().enumerate() {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::domain(format!(
                    "singleton value of agent {j} must be finite and non-negative, got {b}"
                )));
            }
        }
        let mut out = vec![Vec::new(); n_agents];
        for (&(j, k), &w) in &weights {
            if j == k {
                return Err(Error::domain(format!("self-loop ({j},{k}) is not allowed")));
            }
            if j >= n_agents || k >= n_agents {
                return Err(Error::domain(format!("edge ({j},{k}) names an unknown agent")));
            }
            if !w.is_finite() {
                return Err(Error::domain(format!("weight of ({j},{k}) is not finite")));
            }
            out[j].push((k, w));
        }
        Ok(AffinityGame {
            n_agents,
            weights,
            singleton_values,
            out,
        })
    }

    /// Convenience constructor from `(j, k, w)` triples. Duplicate edges are rejected.
    pub fn from_edges(
        n_agents: usize,
        edges: &[(usize, usize, f64)],
        singleton_values: Vec<f64>,
    ) -> Result<Self> {
        let mut weights = BTreeMap::new();
        for &(j, k, w) in edges {
            if weights.insert((j, k), w).is_some() {
                return Err(Error::domain(format!("duplicate edge ({j},{k})")));
            }
        }
        Self::new(n_agents, weights, singleton_values)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn weights(&self) -> &BTreeMap<(usize, usize), f64> {
        &self.weights
    }

    pub fn weight(&self, j: usize, k: usize) -> Option<f64> {
        self.weights.get(&(j, k)).copied()
    }

    pub fn singleton_values(&self) -> &[f64] {
        &self.singleton_values
    }

    pub fn out_degree(&self, j: usize) -> usize {
        self.out[j].len()
    }

    /// `v_j(c)`: `b_j` for the singleton `{j}`, otherwise the sum of `w(j,k)`
    /// over out-edges landing in `c`.
    pub fn preference_value(&self, j: usize, c: Coalition) -> Result<f64> {
        if j >= self.n_agents || !c.contains(j) {
            return Err(Error::domain(format!("agent {j} is not a member of {c:?}")));
        }
        Ok(self.value_unchecked(j, c))
    }

    fn value_unchecked(&self, j: usize, c: Coalition) -> f64 {
        if c.is_singleton() {
            return self.singleton_values[j];
        }
        self.out[j]
            .iter()
            .filter(|(k, _)| c.contains(*k))
            .map(|(_, w)| w)
            .sum()
    }

    fn check_structure(&self, cs: &CoalitionStructure) -> Result<()> {
        if cs.n_agents() != self.n_agents {
            return Err(Error::domain(format!(
                "structure covers {} agents, game has {}",
                cs.n_agents(),
                self.n_agents
            )));
        }
        Ok(())
    }

    /// Every member of `c` weakly prefers `c` to its current coalition and at
    /// least one member strictly prefers it.
    pub fn is_weakly_blocking(&self, cs: &CoalitionStructure, c: Coalition) -> Result<bool> {
        self.check_structure(cs)?;
        if c.mask() & !full_mask(self.n_agents) != 0 {
            return Err(Error::domain(format!("{c:?} names an unknown agent")));
        }
        Ok(self.blocks(cs, c))
    }

    fn blocks(&self, cs: &CoalitionStructure, c: Coalition) -> bool {
        let mut strict = false;
        for j in c.members() {
            let current = cs.coalition_of(j);
            if current == c {
                continue;
            }
            let proposed = self.value_unchecked(j, c);
            let held = self.value_unchecked(j, current);
            if proposed < held {
                return false;
            }
            if proposed > held {
                strict = true;
            }
        }
        strict
    }

    fn core_bound(&self) -> Result<()> {
        if self.n_agents > MAX_CORE_AGENTS {
            return Err(Error::Capacity {
                what: "agents for coalition enumeration",
                got: self.n_agents,
                limit: MAX_CORE_AGENTS,
            });
        }
        Ok(())
    }

    /// No coalition of the whole agent set weakly blocks `cs`.
    pub fn is_strict_core_stable(&self, cs: &CoalitionStructure) -> Result<bool> {
        self.core_bound()?;
        self.check_structure(cs)?;
        Ok(self.first_blocking_coalition(cs).is_none())
    }

    /// The lowest-mask weakly blocking coalition, if any.
    pub fn first_blocking_coalition(&self, cs: &CoalitionStructure) -> Option<Coalition> {
        (1..=full_mask(self.n_agents))
            .map(Coalition)
            .find(|&c| self.blocks(cs, c))
    }

    /// No strict subset of any part of `cs` weakly blocks `cs`.
    pub fn is_inner_stable(&self, cs: &CoalitionStructure) -> Result<bool> {
        self.core_bound()?;
        self.check_structure(cs)?;
        for part in cs.parts() {
            let full = part.mask();
            // proper non-empty submasks
            let mut sub = (full - 1) & full;
            while sub != 0 {
                if self.blocks(cs, Coalition(sub)) {
                    return Ok(false);
                }
                sub = (sub - 1) & full;
            }
        }
        Ok(true)
    }

    /// Total preference value across agents under `cs`.
    pub fn social_welfare(&self, cs: &CoalitionStructure) -> f64 {
        (0..self.n_agents)
            .map(|j| self.value_unchecked(j, cs.coalition_of(j)))
            .sum()
    }

    /// Enumerates all partitions (restricted-growth strings in lexicographic
    /// order) and returns the first one attaining the maximum social welfare.
    pub fn max_social_welfare_partition(&self) -> Result<(CoalitionStructure, f64)> {
        if self.n_agents > MAX_PARTITION_AGENTS {
            return Err(Error::Capacity {
                what: "agents for partition enumeration",
                got: self.n_agents,
                limit: MAX_PARTITION_AGENTS,
            });
        }
        let mut best: Option<(CoalitionStructure, f64)> = None;
        for labels in RestrictedGrowth::new(self.n_agents) {
            let cs = CoalitionStructure::from_labels(&labels)?;
            let welfare = self.social_welfare(&cs);
            if best.as_ref().is_none_or(|(_, w)| welfare > *w) {
                best = Some((cs, welfare));
            }
        }
        Ok(best.expect("every game has at least one partition"))
    }

    /// Every edge has its reverse with an identical weight.
    pub fn is_symmetric(&self) -> bool {
        self.weights
            .iter()
            .all(|(&(j, k), &w)| self.weights.get(&(k, j)) == Some(&w))
    }

    /// Sufficient condition for the grand coalition to lie in the strict core:
    /// `w(j,k) >= z(j,k)` on every edge and `b_j = sum_k z(j,k)` for every agent.
    pub fn grand_coalition_core_condition(&self, z: &BTreeMap<(usize, usize), f64>) -> Result<bool> {
        if z.len() != self.weights.len() || z.keys().any(|e| !self.weights.contains_key(e)) {
            return Err(Error::domain("z must be keyed exactly on the edge set"));
        }
        let mut split = vec![0.0; self.n_agents];
        for (&(j, k), &zjk) in z {
            if self.weights[&(j, k)] < zjk {
                return Ok(false);
            }
            split[j] += zjk;
        }
        Ok(split
            .iter()
            .zip(&self.singleton_values)
            .all(|(s, b)| (s - b).abs() <= CORE_CONDITION_TOL))
    }

    /// Candidate `z` for [`grand_coalition_core_condition`](Self::grand_coalition_core_condition)
    /// that splits each `b_j` equally over `j`'s out-edges.
    pub fn equal_split_z(&self) -> BTreeMap<(usize, usize), f64> {
        self.weights
            .keys()
            .map(|&(j, k)| ((j, k), self.singleton_values[j] / self.out[j].len() as f64))
            .collect()
    }

    /// Shifts every agent's preference values down by its singleton value.
    pub fn translate_preferences(&self) -> TranslatedGame {
        let base = AffinityGame {
            singleton_values: vec![0.0; self.n_agents],
            ..self.clone()
        };
        TranslatedGame {
            base,
            offsets: self.singleton_values.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        let file = GameFile {
            n_agents: self.n_agents,
            singleton_values: self.singleton_values.clone(),
            edges: self.weights.iter().map(|(&(j, k), &w)| (j, k, w)).collect(),
        };
        toml::to_string(&file).expect("game file serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: GameFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_edges(file.n_agents, &file.edges, file.singleton_values)
    }
}

/// Shape of a random game whose weights lie on the lattice `0.25 * {lo..=hi}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeSpec {
    pub lo: i32,
    pub hi: i32,
    /// Singleton values are drawn from `0.25 * {0..=singleton_hi}`.
    pub singleton_hi: i32,
    /// Probability that an ordered pair (or an unordered one when symmetric) is an edge.
    pub edge_prob: f64,
    pub symmetric: bool,
}

impl LatticeSpec {
    pub fn generate(&self, n_agents: usize, rng: &mut impl Rng) -> Result<AffinityGame> {
        if self.lo > self.hi || self.singleton_hi < 0 || !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(Error::domain("lattice spec needs lo <= hi, singleton_hi >= 0 and edge_prob in [0,1]"));
        }
        let mut weights = BTreeMap::new();
        for j in 0..n_agents {
            for k in 0..n_agents {
                if j == k || (self.symmetric && k < j) || !rng.gen_bool(self.edge_prob) {
                    continue;
                }
                let w = 0.25 * rng.gen_range(self.lo..=self.hi) as f64;
                weights.insert((j, k), w);
                if self.symmetric {
                    weights.insert((k, j), w);
                }
            }
        }
        let singles = (0..n_agents)
            .map(|_| 0.25 * rng.gen_range(0..=self.singleton_hi) as f64)
            .collect();
        AffinityGame::new(n_agents, weights, singles)
    }
}

#[derive(Serialize, Deserialize)]
struct GameFile {
    n_agents: usize,
    singleton_values: Vec<f64>,
    edges: Vec<(usize, usize, f64)>,
}

/// A game whose preference values are `v_j(c) - b_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslatedGame {
    /// The original edges with all singleton values set to zero.
    pub base: AffinityGame,
    /// Per-agent translation `b_j`.
    pub offsets: Vec<f64>,
}

impl TranslatedGame {
    pub fn preference_value(&self, j: usize, c: Coalition) -> Result<f64> {
        let v = self.base.preference_value(j, c)?;
        if c.is_singleton() {
            Ok(0.0)
        } else {
            Ok(v - self.offsets[j])
        }
    }
}

/// Iterator over restricted-growth strings of length `n`, lexicographic order.
pub struct RestrictedGrowth {
    labels: Vec<usize>,
    maxes: Vec<usize>,
    done: bool,
}

impl RestrictedGrowth {
    pub fn new(n: usize) -> Self {
        RestrictedGrowth {
            labels: vec![0; n],
            maxes: vec![0; n],
            done: n == 0,
        }
    }
}

impl Iterator for RestrictedGrowth {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let current = self.labels.clone();
        // maxes[i] = max(labels[..i]) for i >= 1
        let n = self.labels.len();
        let mut i = n;
        loop {
            if i <= 1 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.labels[i] <= self.maxes[i] {
                self.labels[i] += 1;
                for t in i + 1..n {
                    self.labels[t] = 0;
                    self.maxes[t] = self.maxes[t - 1].max(self.labels[t - 1]);
                }
                break;
            }
        }
        Some(current)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn game(n: usize, edges: &[(usize, usize, f64)], b: &[f64]) -> AffinityGame {
        AffinityGame::from_edges(n, edges, b.to_vec()).unwrap()
    }

    fn c(members: &[usize]) -> Coalition {
        Coalition::from_members(members).unwrap()
    }

    #[test]
    fn singleton_value_is_b() {
        let g = game(3, &[(1, 2, 1.0)], &[0.0, 0.7, 0.0]);
        assert_eq!(g.preference_value(1, c(&[1])).unwrap(), 0.7);
    }

    #[test]
    fn no_out_edges_gives_zero() {
        let g = game(3, &[(1, 2, 1.0)], &[0.0, 0.7, 0.0]);
        assert_eq!(g.preference_value(0, c(&[0, 1, 2])).unwrap(), 0.0);
    }

    #[test]
    fn value_sums_edges_into_coalition() {
        // agents 1..3 of the example mapped onto ids 0..2
        let g = game(3, &[(0, 1, 2.0), (0, 2, 1.5)], &[0.0; 3]);
        let direct: f64 = [(0, 1, 2.0), (0, 2, 1.5)].iter().map(|e| e.2).sum();
        assert_eq!(g.preference_value(0, c(&[0, 1, 2])).unwrap(), direct);
        assert_eq!(direct, 3.5);
    }

    #[test]
    fn nonmember_is_domain_error() {
        let g = game(3, &[], &[0.0; 3]);
        assert!(matches!(g.preference_value(0, c(&[1, 2])), Err(Error::Domain(_))));
    }

    #[test]
    fn rejects_self_loops_and_negative_singletons() {
        assert!(AffinityGame::from_edges(2, &[(0, 0, 1.0)], vec![0.0; 2]).is_err());
        assert!(AffinityGame::from_edges(2, &[], vec![-0.1, 0.0]).is_err());
    }

    #[test]
    fn identical_coalition_never_blocks() {
        let g = game(3, &[(0, 1, 1.0), (1, 0, 1.0)], &[0.0; 3]);
        let cs = CoalitionStructure::new(3, vec![c(&[0, 1]), c(&[2])]).unwrap();
        assert!(!g.is_weakly_blocking(&cs, c(&[0, 1])).unwrap());
    }

    #[test]
    fn pair_blocks_singletons() {
        let g = game(2, &[(0, 1, 1.0), (1, 0, 1.0)], &[0.0; 2]);
        let cs = CoalitionStructure::singletons(2).unwrap();
        assert!(g.is_weakly_blocking(&cs, c(&[0, 1])).unwrap());
    }

    #[test]
    fn nonnegative_grand_coalition_unblocked() {
        let g = game(
            3,
            &[(0, 1, 1.0), (1, 0, 0.5), (1, 2, 2.0), (2, 0, 0.0)],
            &[0.0; 3],
        );
        let cs = CoalitionStructure::grand(3).unwrap();
        for mask in 1..8 {
            assert!(!g.is_weakly_blocking(&cs, Coalition(mask)).unwrap());
        }
        assert!(g.is_strict_core_stable(&cs).unwrap());
    }

    #[test]
    fn one_agent_is_core_stable() {
        let g = game(1, &[], &[0.4]);
        assert!(g.is_strict_core_stable(&CoalitionStructure::grand(1).unwrap()).unwrap());
    }

    #[test]
    fn negative_pair_is_not_core_stable() {
        let g = game(2, &[(0, 1, -1.0), (1, 0, -1.0)], &[0.0; 2]);
        let cs = CoalitionStructure::grand(2).unwrap();
        assert!(!g.is_strict_core_stable(&cs).unwrap());
        assert_eq!(g.first_blocking_coalition(&cs), Some(c(&[0])));
    }

    #[test]
    fn capacity_errors() {
        let g = game(13, &[], &[0.0; 13]);
        let cs = CoalitionStructure::grand(13).unwrap();
        assert!(matches!(g.is_strict_core_stable(&cs), Err(Error::Capacity { .. })));
        assert!(matches!(g.is_inner_stable(&cs), Err(Error::Capacity { .. })));
        let g9 = game(9, &[], &[0.0; 9]);
        assert!(matches!(g9.max_social_welfare_partition(), Err(Error::Capacity { .. })));
    }

    #[test]
    fn singletons_are_inner_stable() {
        let g = game(3, &[(0, 1, 5.0), (1, 0, 5.0)], &[0.0; 3]);
        assert!(g.is_inner_stable(&CoalitionStructure::singletons(3).unwrap()).unwrap());
    }

    #[test]
    fn welfare_partition_negative_weights() {
        let g = game(3, &[(0, 1, -1.0), (1, 0, -1.0), (1, 2, -0.5), (2, 1, -0.5)], &[0.0; 3]);
        let (cs, w) = g.max_social_welfare_partition().unwrap();
        assert_eq!(w, 0.0);
        // {0,2},{1} ties with all singletons and comes first in enumeration order
        assert_eq!(cs, CoalitionStructure::from_labels(&[0, 1, 0]).unwrap());
    }

    #[test]
    fn welfare_partition_positive_symmetric() {
        let edges = [(0, 1, 1.0), (1, 0, 1.0), (1, 2, 0.5), (2, 1, 0.5), (0, 2, 0.25), (2, 0, 0.25)];
        let g = game(3, &edges, &[0.0; 3]);
        let (cs, w) = g.max_social_welfare_partition().unwrap();
        assert_eq!(cs, CoalitionStructure::grand(3).unwrap());
        assert_eq!(w, edges.iter().map(|e| e.2).sum::<f64>());
    }

    #[test]
    fn welfare_partition_with_singleton_value_can_be_blocked() {
        // with b != 0 the welfare-maximizing partition need not be inner stable
        let g = game(2, &[(0, 1, 1.5), (1, 0, 1.5)], &[2.0, 0.0]);
        let (cs, w) = g.max_social_welfare_partition().unwrap();
        assert_eq!(cs, CoalitionStructure::grand(2).unwrap());
        assert_eq!(w, 3.0);
        assert!(!g.is_inner_stable(&cs).unwrap());
    }

    #[test]
    fn welfare_partition_single_agent() {
        let g = game(1, &[], &[0.3]);
        let (cs, w) = g.max_social_welfare_partition().unwrap();
        assert_eq!(cs, CoalitionStructure::grand(1).unwrap());
        assert_eq!(w, 0.3);
    }

    #[test]
    fn restricted_growth_counts_bell_numbers() {
        let bell = [1, 1, 2, 5, 15, 52, 203, 877, 4140];
        for (n, &b) in bell.iter().enumerate().skip(1) {
            assert_eq!(RestrictedGrowth::new(n).count(), b, "n = {n}");
        }
        let first: Vec<_> = RestrictedGrowth::new(3).collect();
        assert_eq!(
            first,
            vec![vec![0, 0, 0], vec![0, 0, 1], vec![0, 1, 0], vec![0, 1, 1], vec![0, 1, 2]]
        );
    }

    #[test]
    fn symmetry() {
        assert!(game(2, &[], &[0.0; 2]).is_symmetric());
        assert!(game(3, &[(1, 2, 2.0), (2, 1, 2.0)], &[0.0; 3]).is_symmetric());
        assert!(!game(3, &[(1, 2, 2.0)], &[0.0; 3]).is_symmetric());
    }

    #[test]
    fn core_condition_examples() {
        let g = game(3, &[(0, 1, 1.0), (1, 2, 0.0)], &[0.0; 3]);
        let zero: BTreeMap<_, _> = g.weights().keys().map(|&e| (e, 0.0)).collect();
        assert!(g.grand_coalition_core_condition(&zero).unwrap());

        let g = game(2, &[(0, 1, 3.0)], &[2.0, 0.0]);
        let z = BTreeMap::from([((0, 1), 2.0)]);
        assert!(g.grand_coalition_core_condition(&z).unwrap());
        assert!(g.is_strict_core_stable(&CoalitionStructure::grand(2).unwrap()).unwrap());

        let z = BTreeMap::from([((0, 1), 1.0)]);
        assert!(!g.grand_coalition_core_condition(&z).unwrap());

        let bad = BTreeMap::from([((1, 0), 1.0)]);
        assert!(matches!(g.grand_coalition_core_condition(&bad), Err(Error::Domain(_))));
    }

    #[test]
    fn translation() {
        let g = game(2, &[(0, 1, 1.0)], &[0.0, 0.0]);
        assert_eq!(g.translate_preferences().base, g);

        let g = game(2, &[(0, 1, 1.0)], &[0.5, 0.0]);
        let t = g.translate_preferences();
        assert_eq!(t.preference_value(0, c(&[0])).unwrap(), 0.0);
        assert_eq!(t.preference_value(0, c(&[0, 1])).unwrap(), 0.5);
    }

    #[test]
    fn toml_example_parses() {
        let text = "n_agents = 3\nsingleton_values = [0.0, 0.7, 0.0]\nedges = [[0, 1, 2.0], [0, 2, 1.5]]\n";
        let g = AffinityGame::from_toml(text).unwrap();
        assert_eq!(g.weight(0, 2), Some(1.5));
        assert_eq!(AffinityGame::from_toml(&g.to_toml()).unwrap(), g);
    }
}
