//! Exactly solvable open-team games.
//!
//! A [`TabularGame`] enumerates composite states (world state, active set,
//! teammate types) and stores factorized preference rewards: a pairwise table
//! `alpha[j,k](a_j, a_k)` per directed edge and an individual table
//! `R_j(a_j)` per active agent. Agent `j`'s preference reward for the team is
//! the sum of its outgoing pairwise terms plus `R_j(a_j)`; the learner's
//! reward is the sum of these over active agents. Membership only shrinks,
//! so a departed agent never contributes again.
//!
//! Joint actions are indexed in mixed radix over the active agents with the
//! learner as the most significant digit.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{AgentId, DynamicAffinityGraph, Topology};
use crate::world::LEARNER;

pub const MAX_STATES: usize = 64;
pub const MAX_JOINT_ACTIONS: usize = 27;
pub const MAX_ACTIONS: usize = 3;
pub const MAX_AGENTS: usize = 3;
/// Bound on the number of deterministic learner policies `dvsc_check` enumerates.
pub const MAX_POLICIES: usize = 729;

/// Allowed rounding in kernel and policy rows.
const ROW_TOL: f64 = 1e-12;
/// Relative stopping threshold for iterative evaluation.
const EVAL_TOL: f64 = 1e-13;
/// Tolerance of the factorization identity.
pub const FACTOR_TOL: f64 = 1e-8;
/// Tolerance of the dominance comparison in `dvsc_check`.
pub const DVSC_TOL: f64 = 1e-9;
/// Sweeps closer than this (relative to the table scale) are dominated by
/// rounding and are left out of the contraction record.
const RATIO_FLOOR: f64 = 1e-4;
const MAX_SWEEPS: usize = 200_000;

pub type QTable = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq)]
pub struct TabularState {
    pub world: usize,
    /// Learner first, then teammates in ascending id order.
    pub active: Vec<AgentId>,
    pub types: BTreeMap<AgentId, usize>,
    /// Directed edge to row-major `|A_j| x |A_k|` table.
    pub alpha: BTreeMap<(AgentId, AgentId), Vec<f64>>,
    pub indiv: BTreeMap<AgentId, Vec<f64>>,
    pub teammate_policy: BTreeMap<AgentId, Vec<f64>>,
    /// Next-state distribution per joint action.
    pub kernel: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularGame {
    pub gamma: f64,
    /// Action count per agent id; entry 0 is the learner.
    pub actions: Vec<usize>,
    pub states: Vec<TabularState>,
}

fn row_ok(row: &[f64]) -> bool {
    row.iter().all(|&p| p.is_finite() && p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= ROW_TOL
}

impl TabularGame {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn learner_actions(&self) -> usize {
        self.actions[LEARNER]
    }

    pub fn joint_len(&self, s: usize) -> usize {
        self.states[s].active.iter().map(|&j| self.actions[j]).product()
    }

    /// Number of teammate joint actions in state `s`.
    fn rest_len(&self, s: usize) -> usize {
        self.joint_len(s) / self.learner_actions()
    }

    /// Per-agent actions (aligned with `active`) of joint index `idx`.
    pub fn decode(&self, s: usize, mut idx: usize) -> Vec<usize> {
        let active = &self.states[s].active;
        let mut out = vec![0; active.len()];
        for (slot, &j) in active.iter().enumerate().rev() {
            out[slot] = idx % self.actions[j];
            idx /= self.actions[j];
        }
        out
    }

    pub fn encode(&self, s: usize, joint: &[usize]) -> usize {
        self.states[s]
            .active
            .iter()
            .zip(joint)
            .fold(0, |acc, (&j, &a)| acc * self.actions[j] + a)
    }

    fn action_of(&self, s: usize, joint: &[usize], agent: AgentId) -> usize {
        let slot = self.states[s].active.iter().position(|&j| j == agent).expect("active agent");
        joint[slot]
    }

    fn pair_term(&self, s: usize, joint: &[usize], (j, k): (AgentId, AgentId)) -> f64 {
        match self.states[s].alpha.get(&(j, k)) {
            Some(t) => t[self.action_of(s, joint, j) * self.actions[k] + self.action_of(s, joint, k)],
            None => 0.0,
        }
    }

    fn indiv_term(&self, s: usize, joint: &[usize], j: AgentId) -> f64 {
        match self.states[s].indiv.get(&j) {
            Some(t) => t[self.action_of(s, joint, j)],
            None => 0.0,
        }
    }

    /// Agent `j`'s preference reward `R_j(a|s)`; zero once `j` is inactive.
    pub fn preference(&self, s: usize, idx: usize, j: AgentId) -> f64 {
        if !self.states[s].active.contains(&j) {
            return 0.0;
        }
        let joint = self.decode(s, idx);
        let pairs: f64 = self.states[s]
            .alpha
            .keys()
            .filter(|e| e.0 == j)
            .map(|&e| self.pair_term(s, &joint, e))
            .sum();
        pairs + self.indiv_term(s, &joint, j)
    }

    /// Learner reward `R(s,a)`: the sum of preference rewards.
    pub fn reward(&self, s: usize, idx: usize) -> f64 {
        let joint = self.decode(s, idx);
        let st = &self.states[s];
        st.alpha.keys().map(|&e| self.pair_term(s, &joint, e)).sum::<f64>()
            + st.active.iter().map(|&j| self.indiv_term(s, &joint, j)).sum::<f64>()
    }

    /// Probability of each teammate joint action in state `s`.
    fn rest_probs(&self, s: usize) -> Vec<f64> {
        let st = &self.states[s];
        (0..self.rest_len(s))
            .map(|r| {
                let joint = self.decode(s, r);
                st.active[1..]
                    .iter()
                    .map(|j| st.teammate_policy[j][self.action_of(s, &joint, *j)])
                    .product()
            })
            .collect()
    }

    pub fn zeros(&self) -> QTable {
        (0..self.n_states()).map(|s| vec![0.0; self.joint_len(s)]).collect()
    }

    fn check_q(&self, q: &QTable) -> Result<()> {
        if q.len() != self.n_states() {
            return Err(Error::Shape { context: "Q states", expected: self.n_states(), got: q.len() });
        }
        for (s, row) in q.iter().enumerate() {
            if row.len() != self.joint_len(s) {
                return Err(Error::Shape { context: "Q joint actions", expected: self.joint_len(s), got: row.len() });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite Q value in state {s}")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::domain(format!("gamma must lie in [0,1), got {}", self.gamma)));
        }
        if self.actions.is_empty() || self.actions.len() > MAX_AGENTS {
            return Err(Error::Capacity { what: "agents", got: self.actions.len(), limit: MAX_AGENTS });
        }
        if let Some(&n) = self.actions.iter().find(|&&n| n == 0 || n > MAX_ACTIONS) {
            return Err(Error::domain(format!("action counts must lie in 1..={MAX_ACTIONS}, got {n}")));
        }
        let n = self.n_states();
        if n == 0 || n > MAX_STATES {
            return Err(Error::Capacity { what: "states", got: n, limit: MAX_STATES });
        }
        for (s, st) in self.states.iter().enumerate() {
            let bad = |m: String| Error::domain(format!("state {s}: {m}"));
            if st.active.first() != Some(&LEARNER)
                || st.active.windows(2).any(|w| w[0] >= w[1])
                || st.active.iter().any(|&j| j >= self.actions.len())
            {
                return Err(bad(format!("bad active list {:?}", st.active)));
            }
            let jl = self.joint_len(s);
            if jl > MAX_JOINT_ACTIONS {
                return Err(Error::Capacity { what: "joint actions", got: jl, limit: MAX_JOINT_ACTIONS });
            }
            let active: BTreeSet<AgentId> = st.active.iter().copied().collect();
            let mates: BTreeSet<AgentId> = st.active[1..].iter().copied().collect();
            if st.types.keys().copied().collect::<BTreeSet<_>>() != mates {
                return Err(bad("types must cover exactly the active teammates".into()));
            }
            if st.teammate_policy.keys().copied().collect::<BTreeSet<_>>() != mates {
                return Err(bad("policies must cover exactly the active teammates".into()));
            }
            for (j, p) in &st.teammate_policy {
                if p.len() != self.actions[*j] || !row_ok(p) {
                    return Err(bad(format!("policy of teammate {j} is not a distribution")));
                }
            }
            if st.indiv.keys().copied().collect::<BTreeSet<_>>() != active {
                return Err(bad("individual rewards must cover exactly the active agents".into()));
            }
            for (j, t) in &st.indiv {
                if t.len() != self.actions[*j] || t.iter().any(|v| !v.is_finite()) {
                    return Err(bad(format!("individual table of agent {j} malformed")));
                }
            }
            for (&(j, k), t) in &st.alpha {
                if j == k || !active.contains(&j) || !active.contains(&k) {
                    return Err(bad(format!("pair ({j},{k}) is not an edge between active agents")));
                }
                let (aj, ak) = (self.actions[j], self.actions[k]);
                if t.len() != aj * ak || t.iter().any(|v| !v.is_finite()) {
                    return Err(bad(format!("pair table ({j},{k}) malformed")));
                }
                let back = st
                    .alpha
                    .get(&(k, j))
                    .ok_or_else(|| bad(format!("pair ({j},{k}) has no reverse table")))?;
                for a in 0..aj {
                    for b in 0..ak {
                        if t[a * ak + b] != back[b * aj + a] {
                            return Err(bad(format!("pair ({j},{k}) is not symmetric at ({a},{b})")));
                        }
                    }
                }
            }
            if st.kernel.len() != jl {
                return Err(Error::Shape { context: "kernel rows", expected: jl, got: st.kernel.len() });
            }
            for (a, row) in st.kernel.iter().enumerate() {
                if row.len() != n || !row_ok(row) {
                    return Err(bad(format!("kernel row {a} is not a distribution")));
                }
                for (t, &p) in row.iter().enumerate() {
                    if p > 0.0 && self.states[t].active.iter().any(|j| !active.contains(j)) {
                        return Err(bad(format!("transition to state {t} grows the team")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Stationary learner policy: a distribution over learner actions per state.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnerPolicy {
    probs: Vec<Vec<f64>>,
}

impl LearnerPolicy {
    pub fn new(game: &TabularGame, probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.len() != game.n_states() {
            return Err(Error::Shape { context: "policy states", expected: game.n_states(), got: probs.len() });
        }
        if probs.iter().any(|p| p.len() != game.learner_actions() || !row_ok(p)) {
            return Err(Error::domain("learner policy rows must be distributions over learner actions"));
        }
        Ok(LearnerPolicy { probs })
    }

    pub fn deterministic(game: &TabularGame, choice: &[usize]) -> Result<Self> {
        let n = game.learner_actions();
        if let Some(&a) = choice.iter().find(|&&a| a >= n) {
            return Err(Error::domain(format!("learner action {a} out of range")));
        }
        let probs = choice
            .iter()
            .map(|&a| {
                let mut p = vec![0.0; n];
                p[a] = 1.0;
                p
            })
            .collect();
        Self::new(game, probs)
    }

    pub fn uniform(game: &TabularGame) -> Self {
        let n = game.learner_actions();
        LearnerPolicy { probs: vec![vec![1.0 / n as f64; n]; game.n_states()] }
    }

    /// Learner action maximizing the teammate-expected Q, lowest index on ties.
    pub fn greedy(game: &TabularGame, q: &QTable) -> Result<Self> {
        game.check_q(q)?;
        let choice: Vec<usize> = (0..game.n_states())
            .map(|s| {
                let e = learner_values(game, q, s);
                (0..e.len()).fold(0, |b, a| if e[a] > e[b] { a } else { b })
            })
            .collect();
        Self::deterministic(game, &choice)
    }

    pub fn probs(&self) -> &[Vec<f64>] {
        &self.probs
    }
}

/// `E_{a^{-i}}[Q(s, a^i, a^{-i})]` for each learner action.
fn learner_values(game: &TabularGame, q: &QTable, s: usize) -> Vec<f64> {
    let pr = game.rest_probs(s);
    let m = pr.len();
    (0..game.learner_actions())
        .map(|ai| pr.iter().enumerate().map(|(r, p)| p * q[s][ai * m + r]).sum())
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub enum Backup<'a> {
    /// Maximize over the learner's next action.
    Optimal,
    /// Average the learner's next action under a fixed policy.
    Evaluate(&'a LearnerPolicy),
}

/// State value of `q` under the backup's learner action choice.
fn continuation(game: &TabularGame, q: &QTable, backup: Backup<'_>) -> Vec<f64> {
    (0..game.n_states())
        .map(|s| {
            let e = learner_values(game, q, s);
            match backup {
                Backup::Optimal => e.into_iter().fold(f64::NEG_INFINITY, f64::max),
                Backup::Evaluate(pi) => pi.probs[s].iter().zip(&e).map(|(p, v)| p * v).sum(),
            }
        })
        .collect()
}

fn backup_with(
    game: &TabularGame,
    q: &QTable,
    backup: Backup<'_>,
    reward: &impl Fn(usize, usize) -> f64,
) -> QTable {
    let v = continuation(game, q, backup);
    game.states
        .iter()
        .enumerate()
        .map(|(s, st)| {
            st.kernel
                .iter()
                .enumerate()
                .map(|(a, row)| {
                    let next: f64 = row.iter().zip(&v).map(|(p, x)| p * x).sum();
                    reward(s, a) + game.gamma * next
                })
                .collect()
        })
        .collect()
}

fn check_policy(game: &TabularGame, backup: Backup<'_>) -> Result<()> {
    if let Backup::Evaluate(pi) = backup {
        if pi.probs.len() != game.n_states() || pi.probs.iter().any(|p| p.len() != game.learner_actions()) {
            return Err(Error::domain("learner policy does not match the game"));
        }
    }
    Ok(())
}

/// One application of the Bellman operator with reward `R(s,a)`.
pub fn bellman_backup(game: &TabularGame, q: &QTable, backup: Backup<'_>) -> Result<QTable> {
    game.check_q(q)?;
    check_policy(game, backup)?;
    Ok(backup_with(game, q, backup, &|s, a| game.reward(s, a)))
}

fn sup_diff(a: &QTable, b: &QTable) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

fn sup_norm(a: &QTable) -> f64 {
    a.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub q: QTable,
    pub sweeps: usize,
    /// `|Q_{k+1} - Q_k| / |Q_k - Q_{k-1}|` in sup norm for each sweep whose
    /// step is well above rounding.
    pub ratios: Vec<f64>,
}

fn iterate(
    game: &TabularGame,
    backup: Backup<'_>,
    reward: &impl Fn(usize, usize) -> f64,
) -> Result<Solution> {
    let mut q = game.zeros();
    let mut prev = f64::INFINITY;
    let mut ratios = Vec::new();
    for sweep in 1..=MAX_SWEEPS {
        let next = backup_with(game, &q, backup, reward);
        let d = sup_diff(&next, &q);
        let scale = 1.0 + sup_norm(&next);
        if prev.is_finite() && prev > RATIO_FLOOR * scale {
            ratios.push(d / prev);
        }
        q = next;
        if !d.is_finite() {
            return Err(Error::Numeric("value iteration diverged".into()));
        }
        if d <= EVAL_TOL * scale * (1.0 - game.gamma) {
            return Ok(Solution { q, sweeps: sweep, ratios });
        }
        prev = d;
    }
    Err(Error::Numeric(format!("value iteration did not settle in {MAX_SWEEPS} sweeps")))
}

/// Iterates [`bellman_backup`] from zero until successive tables agree to
/// rounding.
pub fn value_iteration(game: &TabularGame, backup: Backup<'_>) -> Result<Solution> {
    game.validate()?;
    check_policy(game, backup)?;
    iterate(game, backup, &|s, a| game.reward(s, a))
}

/// `Q^pi` for the reward `R(s,a)`.
pub fn evaluate_policy(game: &TabularGame, policy: &LearnerPolicy) -> Result<QTable> {
    Ok(value_iteration(game, Backup::Evaluate(policy))?.q)
}

/// Expected state value `V(s) = E_{a ~ pi, a^{-i}}[Q(s,a)]`.
pub fn state_values(game: &TabularGame, q: &QTable, policy: &LearnerPolicy) -> Result<Vec<f64>> {
    game.check_q(q)?;
    check_policy(game, Backup::Evaluate(policy))?;
    Ok(continuation(game, q, Backup::Evaluate(policy)))
}

#[derive(Clone, Debug)]
pub struct FactorizedQ {
    pub full: QTable,
    /// Discounted pairwise reward of each directed edge.
    pub pairs: BTreeMap<(AgentId, AgentId), QTable>,
    /// Discounted individual reward of each agent.
    pub individual: BTreeMap<AgentId, QTable>,
    /// Largest gap between `full` and the sum of the components.
    pub residual: f64,
}

/// Evaluates each reward component separately under `policy` and checks that
/// the components add up to the full `Q^pi`.
pub fn exact_factorized_q(game: &TabularGame, policy: &LearnerPolicy) -> Result<FactorizedQ> {
    game.validate()?;
    let backup = Backup::Evaluate(policy);
    check_policy(game, backup)?;
    let full = iterate(game, backup, &|s, a| game.reward(s, a))?.q;
    let edges: BTreeSet<(AgentId, AgentId)> =
        game.states.iter().flat_map(|st| st.alpha.keys().copied()).collect();
    let agents: BTreeSet<AgentId> = game.states.iter().flat_map(|st| st.active.iter().copied()).collect();
    let mut pairs = BTreeMap::new();
    for e in edges {
        let q = iterate(game, backup, &|s, a| game.pair_term(s, &game.decode(s, a), e))?.q;
        pairs.insert(e, q);
    }
    let mut individual = BTreeMap::new();
    for j in agents {
        let q = iterate(game, backup, &|s, a| {
            if game.states[s].active.contains(&j) {
                game.indiv_term(s, &game.decode(s, a), j)
            } else {
                0.0
            }
        })?
        .q;
        individual.insert(j, q);
    }
    let mut residual: f64 = 0.0;
    for (s, row) in full.iter().enumerate() {
        for (a, &v) in row.iter().enumerate() {
            let parts: f64 = pairs.values().map(|q| q[s][a]).sum::<f64>()
                + individual.values().map(|q| q[s][a]).sum::<f64>();
            residual = residual.max((v - parts).abs());
        }
    }
    if residual > FACTOR_TOL * (1.0 + sup_norm(&full)) {
        return Err(Error::State(format!("factorized components miss the joint Q by {residual:e}")));
    }
    Ok(FactorizedQ { full, pairs, individual, residual })
}

#[derive(Clone, Debug)]
pub struct DvscReport {
    pub policies: usize,
    /// Welfare-maximizing deterministic policy (uniform start distribution).
    pub best: Vec<usize>,
    /// Discounted welfare of `best` from each start state.
    pub best_values: Vec<f64>,
    /// (policy, start state) pairs where some policy beats `best`.
    pub dominance_failures: usize,
    /// States with no joint action that leaves every agent at least its
    /// singleton reward.
    pub precondition_failures: Vec<usize>,
    /// `max_s |V_best(s) - V*(s)|` against value iteration.
    pub optimality_gap: f64,
}

impl DvscReport {
    pub fn holds(&self) -> bool {
        self.dominance_failures == 0 && self.precondition_failures.is_empty()
    }
}

/// Enumerates every deterministic stationary learner policy, picks the one
/// with the largest discounted social welfare and checks that it dominates
/// every alternative from every start state.
pub fn dvsc_check(game: &TabularGame) -> Result<DvscReport> {
    game.validate()?;
    let n = game.n_states();
    let base = game.learner_actions();
    let count = u32::try_from(n)
        .ok()
        .and_then(|e| base.checked_pow(e))
        .filter(|&c| c <= MAX_POLICIES)
        .ok_or(Error::Capacity {
            what: "deterministic learner policies",
            got: base.saturating_pow(n.min(64) as u32),
            limit: MAX_POLICIES,
        })?;

    let mut values = Vec::with_capacity(count);
    let mut choices = Vec::with_capacity(count);
    for index in 0..count {
        let mut c = vec![0; n];
        let mut rest = index;
        for slot in c.iter_mut() {
            *slot = rest % base;
            rest /= base;
        }
        let pi = LearnerPolicy::deterministic(game, &c)?;
        let q = iterate(game, Backup::Evaluate(&pi), &|s, a| game.reward(s, a))?.q;
        values.push(continuation(game, &q, Backup::Evaluate(&pi)));
        choices.push(c);
    }
    let total = |v: &Vec<f64>| v.iter().sum::<f64>();
    let best = (0..count).fold(0, |b, p| if total(&values[p]) > total(&values[b]) { p } else { b });
    let best_values = values[best].clone();
    let dominance_failures = values
        .iter()
        .flat_map(|v| v.iter().zip(&best_values).filter(|(x, b)| **x > **b + DVSC_TOL * (1.0 + b.abs())))
        .count();

    let optimal = iterate(game, Backup::Optimal, &|s, a| game.reward(s, a))?.q;
    let v_star = continuation(game, &optimal, Backup::Optimal);
    let optimality_gap = v_star.iter().zip(&best_values).fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));

    let precondition_failures = (0..n)
        .filter(|&s| {
            let st = &game.states[s];
            !(0..game.joint_len(s)).any(|a| {
                let joint = game.decode(s, a);
                st.active
                    .iter()
                    .all(|&j| game.preference(s, a, j) >= game.indiv_term(s, &joint, j))
            })
        })
        .collect();

    Ok(DvscReport {
        policies: count,
        best: choices.swap_remove(best),
        best_values,
        dominance_failures,
        precondition_failures,
        optimality_gap,
    })
}

fn draw_dist(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Shape of a randomly generated game.
#[derive(Clone, Debug, PartialEq)]
pub struct GameSpec {
    pub teammates: usize,
    /// Action count of every agent.
    pub actions: usize,
    pub worlds: usize,
    pub types: usize,
    pub topology: Topology,
    pub gamma: f64,
    /// Range of the per-step probability that an active teammate stays.
    pub stay: (f64, f64),
}

impl GameSpec {
    pub fn new(teammates: usize, actions: usize, worlds: usize, types: usize, topology: Topology, gamma: f64) -> Self {
        GameSpec { teammates, actions, worlds, types, topology, gamma, stay: (0.5, 0.95) }
    }

    /// Builds a game whose affinity weights decompose as
    /// `w_jk(a_j,a_k) = alpha_jk(a_j,a_k) + beta_jk(a_j)` with symmetric
    /// `alpha >= 0` and `beta >= 0`; the stored individual reward is
    /// `R_j(a_j) = sum_k beta_jk(a_j)`.
    pub fn generate(&self, rng: &mut impl Rng) -> Result<TabularGame> {
        if self.worlds == 0 || self.types == 0 {
            return Err(Error::domain("need at least one world state and one type"));
        }
        if !(0.0..=1.0).contains(&self.stay.0) || !(self.stay.0..=1.0).contains(&self.stay.1) {
            return Err(Error::domain("stay range must satisfy 0 <= lo <= hi <= 1"));
        }
        let n_agents = self.teammates + 1;
        let actions = vec![self.actions; n_agents];

        // composite states: world x active teammate subset x their types
        let mut keys: Vec<(usize, Vec<AgentId>, Vec<usize>)> = Vec::new();
        for w in 0..self.worlds {
            for mask in 0u32..(1 << self.teammates) {
                let mates: Vec<AgentId> = (1..n_agents).filter(|j| mask & (1 << (j - 1)) != 0).collect();
                let combos = self.types.pow(mates.len() as u32);
                for mut c in 0..combos {
                    let mut ty = Vec::with_capacity(mates.len());
                    for _ in &mates {
                        ty.push(c % self.types);
                        c /= self.types;
                    }
                    keys.push((w, mates.clone(), ty));
                }
            }
        }
        if keys.len() > MAX_STATES {
            return Err(Error::Capacity { what: "states", got: keys.len(), limit: MAX_STATES });
        }
        let index: HashMap<(usize, Vec<AgentId>, Vec<usize>), usize> =
            keys.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();

        let by_type: Vec<Vec<Vec<f64>>> = (0..self.types)
            .map(|_| (0..self.worlds).map(|_| draw_dist(rng, self.actions)).collect())
            .collect();

        let mut states = Vec::with_capacity(keys.len());
        for (w, mates, ty) in &keys {
            let mut active = vec![LEARNER];
            active.extend(mates.iter().copied());
            let graph = DynamicAffinityGraph::build(self.topology, LEARNER, active.iter().copied())?;
            let types: BTreeMap<AgentId, usize> = mates.iter().copied().zip(ty.iter().copied()).collect();
            let teammate_policy = types.iter().map(|(&j, &t)| (j, by_type[t][*w].clone())).collect();

            let mut alpha = BTreeMap::new();
            let mut indiv: BTreeMap<AgentId, Vec<f64>> =
                active.iter().map(|&j| (j, vec![0.0; self.actions])).collect();
            for &(j, k) in graph.edges() {
                if j < k {
                    let t: Vec<f64> = (0..self.actions * self.actions).map(|_| rng.gen::<f64>()).collect();
                    let mut back = vec![0.0; t.len()];
                    for a in 0..self.actions {
                        for b in 0..self.actions {
                            back[b * self.actions + a] = t[a * self.actions + b];
                        }
                    }
                    alpha.insert((j, k), t);
                    alpha.insert((k, j), back);
                }
                for v in indiv.get_mut(&j).expect("active").iter_mut() {
                    *v += rng.gen::<f64>();
                }
            }

            let stay: Vec<f64> = mates.iter().map(|_| rng.gen_range(self.stay.0..=self.stay.1)).collect();
            let joint: usize = self.actions.pow(active.len() as u32);
            let mut kernel = Vec::with_capacity(joint);
            for _ in 0..joint {
                let pw = draw_dist(rng, self.worlds);
                let mut row = vec![0.0; keys.len()];
                for (w2, &p) in pw.iter().enumerate() {
                    for keep in 0u32..(1 << mates.len()) {
                        let mut p_keep = p;
                        let mut next_mates = Vec::new();
                        let mut next_types = Vec::new();
                        for (slot, &j) in mates.iter().enumerate() {
                            if keep & (1 << slot) != 0 {
                                p_keep *= stay[slot];
                                next_mates.push(j);
                                next_types.push(ty[slot]);
                            } else {
                                p_keep *= 1.0 - stay[slot];
                            }
                        }
                        row[index[&(w2, next_mates, next_types)]] += p_keep;
                    }
                }
                kernel.push(row);
            }
            states.push(TabularState {
                world: *w,
                active,
                types,
                alpha,
                indiv,
                teammate_policy,
                kernel,
            });
        }
        let game = TabularGame { gamma: self.gamma, actions, states };
        game.validate()?;
        Ok(game)
    }
}
