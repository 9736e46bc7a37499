//! Open-team gridworld simulator.
//!
//! One environment instance owns its random stream, the grid, and the
//! openness controller. Each [`OpenWorld::step`] runs, in order: scripted
//! teammate decisions on the current snapshot, world dynamics and reward,
//! then the openness tick (expire, queue, re-admit with a fresh type).
//!
//! Agent types are assigned once at admission and stay fixed while the agent
//! is active. Agent `0` is always the learner; teammates use ids
//! `1..=teammate_pool`.

mod grid;
mod openness;
pub mod teammates;
pub mod trajectory;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use grid::{GridState, Pos};
pub use openness::{AgentSlot, OpennessConfig, SlotStatus};
pub use teammates::teammate_policy;

use crate::error::{Error, Result};
use crate::graph::AgentId;

pub const LEARNER: AgentId = 0;

pub const STAY: usize = 0;
pub const NORTH: usize = 1;
pub const EAST: usize = 2;
pub const SOUTH: usize = 3;
pub const WEST: usize = 4;
/// Foraging only.
pub const LOAD: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Wolfpack,
    Lbf,
}

impl EnvKind {
    pub fn n_actions(self) -> usize {
        match self {
            EnvKind::Wolfpack => 5,
            EnvKind::Lbf => 6,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Wolfpack => "wolfpack",
            EnvKind::Lbf => "lbf",
        })
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wolfpack" => Ok(EnvKind::Wolfpack),
            "lbf" => Ok(EnvKind::Lbf),
            other => Err(Error::Parse(format!("unknown environment {other:?}"))),
        }
    }
}

/// Hidden agent type. The learner carries its own marker so that type maps
/// cover every active agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentType {
    Learner,
    Random,
    Greedy,
    GreedyProbabilistic,
    TeammateAware,
}

impl AgentType {
    pub const SCRIPTED: [AgentType; 4] = [
        AgentType::Random,
        AgentType::Greedy,
        AgentType::GreedyProbabilistic,
        AgentType::TeammateAware,
    ];
}

/// Environment parameters. Defaults follow the full-size environments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub grid_size: usize,
    pub openness: OpennessConfig,
    /// Number of teammates in the re-entry pool.
    pub teammate_pool: usize,
    pub eps_length: usize,
    pub teammate_types: Vec<AgentType>,
    /// Wolfpack: reward when the learner takes part in a capture.
    pub capture_reward: f64,
    /// Wolfpack: penalty when the learner is the only predator next to a prey.
    pub close_penalty: f64,
    pub n_prey: usize,
    /// Wolfpack: probability that a surviving prey takes its evasive step.
    pub prey_move_prob: f64,
    pub n_food: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::wolfpack(3)
    }
}

impl EnvConfig {
    pub fn wolfpack(max_agents: usize) -> Self {
        EnvConfig {
            kind: EnvKind::Wolfpack,
            grid_size: 10,
            openness: OpennessConfig::wolfpack(max_agents),
            teammate_pool: max_agents.saturating_sub(1),
            eps_length: 200,
            teammate_types: AgentType::SCRIPTED.to_vec(),
            capture_reward: 2.0,
            close_penalty: 0.5,
            n_prey: 1,
            prey_move_prob: 1.0,
            n_food: 0,
        }
    }

    pub fn lbf(max_agents: usize) -> Self {
        EnvConfig {
            kind: EnvKind::Lbf,
            grid_size: 8,
            openness: OpennessConfig::lbf(max_agents),
            teammate_pool: max_agents.saturating_sub(1),
            eps_length: 200,
            teammate_types: AgentType::SCRIPTED.to_vec(),
            capture_reward: 0.0,
            close_penalty: 0.0,
            n_prey: 0,
            prey_move_prob: 0.0,
            n_food: 3,
        }
    }

    pub fn for_kind(kind: EnvKind, max_agents: usize) -> Self {
        match kind {
            EnvKind::Wolfpack => Self::wolfpack(max_agents),
            EnvKind::Lbf => Self::lbf(max_agents),
        }
    }

    /// Same environment with a different team-size cap.
    pub fn with_max_agents(&self, max_agents: usize) -> Self {
        let mut c = self.clone();
        c.openness.max_agents = max_agents;
        c.teammate_pool = max_agents.saturating_sub(1);
        c
    }

    pub fn n_actions(&self) -> usize {
        self.kind.n_actions()
    }

    /// Smallest per-step learner reward the environment can emit.
    pub fn reward_lower_bound(&self) -> f64 {
        match self.kind {
            EnvKind::Wolfpack => -self.close_penalty,
            EnvKind::Lbf => 0.0,
        }
    }

    /// Width of the shared observation `u`.
    pub fn shared_obs_dim(&self) -> usize {
        2 * self.grid_size * self.grid_size
    }

    /// Width of a full per-agent record `u ++ x_j`.
    pub fn obs_dim(&self) -> usize {
        self.shared_obs_dim() + AGENT_FEATURES
    }

    pub fn validate(&self) -> Result<()> {
        self.openness.validate()?;
        if self.grid_size < 3 {
            return Err(Error::domain("grid_size must be at least 3"));
        }
        if self.teammate_types.is_empty() || self.teammate_types.contains(&AgentType::Learner) {
            return Err(Error::domain("teammate_types must list scripted types only"));
        }
        let cells = self.grid_size * self.grid_size;
        let objects = match self.kind {
            EnvKind::Wolfpack => self.n_prey,
            EnvKind::Lbf => self.n_food,
        };
        if objects == 0 {
            return Err(Error::domain("the environment needs at least one prey or food item"));
        }
        if self.teammate_pool + 1 + objects > cells {
            return Err(Error::domain("grid too small for agents and objects"));
        }
        if self.eps_length == 0 {
            return Err(Error::domain("eps_length must be positive"));
        }
        if !(0.0..=1.0).contains(&self.prey_move_prob) {
            return Err(Error::domain("prey_move_prob must lie in [0, 1]"));
        }
        if self.close_penalty < 0.0 || self.capture_reward < 0.0 {
            return Err(Error::domain("reward magnitudes must be non-negative"));
        }
        Ok(())
    }
}

/// Per-agent features: row, column, level, active flag.
pub const AGENT_FEATURES: usize = 4;

/// The batch `[<u, x_1>, ..., <u, x_n>]` with `u` shared by all records.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsBatch {
    pub shared: Vec<f64>,
    pub agents: Vec<(AgentId, [f64; AGENT_FEATURES])>,
}

impl ObsBatch {
    /// Full input vector `u ++ x_j` for an agent.
    pub fn input(&self, agent: AgentId) -> Option<Vec<f64>> {
        self.agents.iter().find(|(a, _)| *a == agent).map(|(_, x)| {
            let mut v = Vec::with_capacity(self.shared.len() + AGENT_FEATURES);
            v.extend_from_slice(&self.shared);
            v.extend_from_slice(x);
            v
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeamSnapshot {
    pub t: usize,
    pub world: GridState,
    pub active: BTreeSet<AgentId>,
    pub hidden_types: BTreeMap<AgentId, AgentType>,
    pub obs: ObsBatch,
}

impl TeamSnapshot {
    pub fn teammates(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.active.iter().copied().filter(|&a| a != LEARNER)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: TeamSnapshot,
    /// Learner's environment reward for this step.
    pub reward: f64,
    /// Reward summed over every agent (foraging shares, captures).
    pub team_reward: f64,
    pub done: bool,
    pub joined: BTreeSet<AgentId>,
    pub left: BTreeSet<AgentId>,
    pub teammate_actions: BTreeMap<AgentId, usize>,
}

/// A single environment instance.
#[derive(Clone, Debug)]
pub struct OpenWorld {
    config: EnvConfig,
    rng: ChaCha8Rng,
    policy_seed: u64,
    t: usize,
    grid: GridState,
    slots: Vec<AgentSlot>,
    /// Statistics for protocol checks.
    log: OpennessLog,
}

/// Completed active/dead intervals observed so far in the episode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OpennessLog {
    pub sampled_active: Vec<usize>,
    pub sampled_dead: Vec<usize>,
    pub completed_active: Vec<usize>,
    pub max_team_size: usize,
    /// Total normalized food value spawned (foraging).
    pub food_value_spawned: f64,
    pub team_reward_collected: f64,
}

impl OpenWorld {
    /// Starts an episode. Returns the environment and its initial snapshot.
    pub fn reset(config: EnvConfig, seed: u64) -> Result<(Self, TeamSnapshot)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy_seed = rng.gen();
        let mut grid = GridState::new(&config);
        let mut log = OpennessLog::default();
        grid.place_agent(LEARNER, &config, &mut rng);
        let mut slots = Vec::with_capacity(config.teammate_pool);
        for id in 1..=config.teammate_pool {
            let mut slot = AgentSlot::queued(id, 0);
            if 1 + slots.iter().filter(|s: &&AgentSlot| s.is_active()).count()
                < config.openness.max_agents
            {
                slot.admit(&config, &mut rng, &mut log);
                grid.place_agent(id, &config, &mut rng);
            }
            slots.push(slot);
        }
        grid.spawn_objects(&config, &mut rng, &mut log);
        let mut env = OpenWorld {
            config,
            rng,
            policy_seed,
            t: 0,
            grid,
            slots,
            log,
        };
        env.log.max_team_size = env.active().len();
        let snap = env.snapshot();
        Ok((env, snap))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn policy_seed(&self) -> u64 {
        self.policy_seed
    }

    pub fn log(&self) -> &OpennessLog {
        &self.log
    }

    pub fn slots(&self) -> &[AgentSlot] {
        &self.slots
    }

    pub fn active(&self) -> BTreeSet<AgentId> {
        std::iter::once(LEARNER)
            .chain(self.slots.iter().filter(|s| s.is_active()).map(|s| s.id))
            .collect()
    }

    pub fn snapshot(&self) -> TeamSnapshot {
        let active = self.active();
        let mut hidden_types = BTreeMap::new();
        hidden_types.insert(LEARNER, AgentType::Learner);
        for s in self.slots.iter().filter(|s| s.is_active()) {
            hidden_types.insert(s.id, s.agent_type);
        }
        TeamSnapshot {
            t: self.t,
            obs: self.grid.observe(&active, &self.config),
            world: self.grid.clone(),
            active,
            hidden_types,
        }
    }

    pub fn step(&mut self, learner_action: usize) -> Result<StepOutcome> {
        if learner_action >= self.config.n_actions() {
            return Err(Error::domain(format!(
                "action {learner_action} outside the {} available",
                self.config.n_actions()
            )));
        }
        if self.t >= self.config.eps_length {
            return Err(Error::State("episode already finished".into()));
        }
        let snap = self.snapshot();
        let mut teammate_actions = BTreeMap::new();
        for j in snap.teammates() {
            let ty = snap.hidden_types[&j];
            let a = teammate_policy(ty, &snap, j, self.policy_seed, &self.config)?;
            teammate_actions.insert(j, a);
        }
        let mut actions = teammate_actions.clone();
        actions.insert(LEARNER, learner_action);

        let rewards = self.grid.advance(&actions, &self.config, &mut self.rng, &mut self.log);
        self.log.team_reward_collected += rewards.team;

        let (joined, left) = self.tick_openness();
        self.t += 1;
        let next = self.snapshot();
        self.log.max_team_size = self.log.max_team_size.max(next.active.len());
        Ok(StepOutcome {
            done: self.t >= self.config.eps_length,
            next,
            reward: rewards.learner,
            team_reward: rewards.team,
            joined,
            left,
            teammate_actions,
        })
    }

    fn tick_openness(&mut self) -> (BTreeSet<AgentId>, BTreeSet<AgentId>) {
        let mut joined = BTreeSet::new();
        let mut left = BTreeSet::new();
        for slot in &mut self.slots {
            if slot.tick(&self.config, &mut self.rng, &mut self.log) {
                self.grid.remove_agent(slot.id);
                left.insert(slot.id);
            }
        }
        let mut n_active = 1 + self.slots.iter().filter(|s| s.is_active()).count();
        for slot in &mut self.slots {
            if n_active >= self.config.openness.max_agents {
                break;
            }
            if slot.ready() && !left.contains(&slot.id) {
                slot.admit(&self.config, &mut self.rng, &mut self.log);
                self.grid.place_agent(slot.id, &self.config, &mut self.rng);
                joined.insert(slot.id);
                n_active += 1;
            }
        }
        (joined, left)
    }
}
