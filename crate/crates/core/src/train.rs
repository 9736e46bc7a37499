//! Fitted Q-learning on the factorized joint value with symmetry regularizers.
//!
//! Per training episode: reset `num_envs` environments, roll them in
//! lockstep, and every `update_frequency` vector steps draw a minibatch from
//! this episode's transitions to take one value step on
//! `td + lambda * reg`, one agent-model step on the likelihood loss, and a
//! soft update of the target value parameters. The buffer is cleared when
//! the episode ends.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent_model::{
    agent_model_loss, embed_backward, embed_nodes, AgentModel, AgentModelConfig, ModelSample,
    TypeEmbeddingTable,
};
use crate::error::{Error, Result};
use crate::graph::{AgentId, DynamicAffinityGraph, Topology};
use crate::nn::{Activation, Checkpoint, Optimizer, OptimizerKind, ParameterStore};
use crate::value::{RangeConstraint, UtilityGrads, ValueConfig, ValueModel};
use crate::world::{EnvConfig, ObsBatch, OpenWorld, TeamSnapshot, LEARNER};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub topology: Topology,
    pub pair_range: RangeConstraint,
    pub indiv_range: RangeConstraint,
    /// Regularizer weight (`weight_regularizer`).
    pub lambda: f64,
    pub lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub update_frequency: usize,
    pub num_envs: usize,
    pub batch_size: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of `max_num_steps` over which epsilon decays linearly.
    pub eps_fraction: f64,
    /// Environment steps summed over all parallel environments.
    pub max_num_steps: usize,
    pub embed: usize,
    pub hidden: usize,
    pub rank: usize,
    pub activation: Activation,
    pub weight_predict: f64,
    pub optimizer: OptimizerKind,
    pub num_players_train: usize,
    pub num_players_test: Vec<usize>,
    pub eval_eps: usize,
    /// Evaluate every this many training episodes.
    pub saving_frequency: usize,
    pub seed: u64,
    pub eval_init_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvConfig::wolfpack(3),
            topology: Topology::Complete,
            pair_range: RangeConstraint::Pos,
            indiv_range: RangeConstraint::Pos,
            lambda: 0.5,
            lr: 0.00025,
            gamma: 0.99,
            tau: 0.001,
            update_frequency: 4,
            num_envs: 16,
            batch_size: 32,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_fraction: 0.3,
            max_num_steps: 60_000,
            embed: 64,
            hidden: 64,
            rank: 4,
            activation: Activation::ReLU,
            weight_predict: 1.0,
            optimizer: OptimizerKind::AdamLike,
            num_players_train: 3,
            num_players_test: vec![5, 9],
            eval_eps: 5,
            saving_frequency: 50,
            seed: 0,
            eval_init_seed: 2500,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train_env().validate()?;
        for &n in &self.num_players_test {
            self.env.with_max_agents(n).validate()?;
        }
        let checks: [(bool, &str); 10] = [
            (self.lambda >= 0.0, "lambda must be non-negative"),
            (self.gamma > 0.0 && self.gamma < 1.0, "gamma must lie in (0, 1)"),
            ((0.0..=1.0).contains(&self.tau), "tau must lie in [0, 1]"),
            (self.lr > 0.0 && self.lr.is_finite(), "lr must be positive"),
            (
                self.update_frequency > 0 && self.num_envs > 0 && self.batch_size > 0,
                "update_frequency, num_envs and batch_size must be positive",
            ),
            (
                (0.0..=1.0).contains(&self.eps_start) && (0.0..=1.0).contains(&self.eps_end),
                "epsilon bounds must lie in [0, 1]",
            ),
            (self.eps_fraction > 0.0 && self.eps_fraction <= 1.0, "eps_fraction must lie in (0, 1]"),
            (self.embed > 0 && self.hidden > 0, "network widths must be positive"),
            (self.saving_frequency > 0, "saving_frequency must be positive"),
            (self.weight_predict >= 0.0, "weight_predict must be non-negative"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::domain(msg));
            }
        }
        if self.rank == 0 || self.rank >= self.env.n_actions() {
            return Err(Error::domain(format!(
                "rank {} must satisfy 1 <= K < |A| = {}",
                self.rank,
                self.env.n_actions()
            )));
        }
        Ok(())
    }

    pub fn train_env(&self) -> EnvConfig {
        self.env.with_max_agents(self.num_players_train)
    }

    pub fn test_env(&self, max_agents: usize) -> EnvConfig {
        self.env.with_max_agents(max_agents)
    }

    pub fn num_episodes(&self) -> usize {
        let per = self.num_envs * self.env.eps_length;
        self.max_num_steps.div_ceil(per)
    }

    /// Linear decay over the first `eps_fraction` of the step budget.
    pub fn epsilon(&self, steps: usize) -> f64 {
        let horizon = self.eps_fraction * self.max_num_steps as f64;
        let frac = (steps as f64 / horizon).min(1.0);
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }

    pub fn value_config(&self) -> ValueConfig {
        ValueConfig {
            obs_dim: self.env.obs_dim(),
            n_actions: self.env.n_actions(),
            embed: self.embed,
            hidden: self.hidden,
            rank: self.rank,
            indiv_range: self.indiv_range,
            pair_range: self.pair_range,
            activation: self.activation,
        }
    }

    pub fn agent_model_config(&self) -> AgentModelConfig {
        AgentModelConfig {
            obs_dim: self.env.obs_dim(),
            n_actions: self.env.n_actions(),
            embed: self.embed,
            hidden: self.hidden,
            activation: self.activation,
            weight_predict: self.weight_predict,
        }
    }

    pub fn with_preset(mut self, preset: Preset) -> Self {
        let (topology, pair_range, indiv_range, lambda) = preset.settings();
        self.topology = topology;
        self.pair_range = pair_range;
        self.indiv_range = indiv_range;
        self.lambda = lambda;
        self
    }
}

/// Algorithm variants, each fully described by
/// `(topology, pair_range, indiv_range, lambda)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Preset {
    pub topology: Option<Topology>,
    pub variant: Variant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Base,
    NegativePair,
    FreeIndividual,
    ZeroIndividual,
    NegativeIndividual,
    NoRegularizer,
}

impl Preset {
    pub const GPL: Preset = Preset {
        topology: None,
        variant: Variant::Base,
    };

    pub fn ciao(topology: Topology, variant: Variant) -> Self {
        Preset {
            topology: Some(topology),
            variant,
        }
    }

    pub fn all() -> Vec<Preset> {
        let mut v = vec![Preset::GPL];
        for t in [Topology::Star, Topology::Complete] {
            for var in [
                Variant::Base,
                Variant::NegativePair,
                Variant::FreeIndividual,
                Variant::ZeroIndividual,
                Variant::NegativeIndividual,
                Variant::NoRegularizer,
            ] {
                v.push(Preset::ciao(t, var));
            }
        }
        v
    }

    pub fn settings(self) -> (Topology, RangeConstraint, RangeConstraint, f64) {
        use RangeConstraint::*;
        let Some(topology) = self.topology else {
            return (Topology::Complete, Free, Free, 0.0);
        };
        let (pair, indiv, lambda) = match self.variant {
            Variant::Base => (Pos, Pos, 0.5),
            Variant::NegativePair => (Neg, Pos, 0.5),
            Variant::FreeIndividual => (Pos, Free, 0.5),
            Variant::ZeroIndividual => (Pos, Zero, 0.5),
            Variant::NegativeIndividual => (Pos, Neg, 0.5),
            Variant::NoRegularizer => (Pos, Pos, 0.0),
        };
        (topology, pair, indiv, lambda)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let Some(t) = self.topology else {
            return f.write_str("gpl");
        };
        let base = match t {
            Topology::Star => "ciao-s",
            Topology::Complete => "ciao-c",
        };
        let suffix = match self.variant {
            Variant::Base => "",
            Variant::NegativePair => "-np",
            Variant::FreeIndividual => "-fi",
            Variant::ZeroIndividual => "-zi",
            Variant::NegativeIndividual => "-ni",
            Variant::NoRegularizer => "-nr",
        };
        write!(f, "{base}{suffix}")
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Preset::all()
            .into_iter()
            .find(|p| p.to_string() == lower)
            .ok_or_else(|| Error::Parse(format!("unknown preset {s:?}")))
    }
}

/// Maps a raw reward onto `[0, inf)` using the environment's lower bound.
pub fn shift_reward(raw: f64, lower_bound: f64) -> Result<f64> {
    if raw < lower_bound {
        return Err(Error::domain(format!(
            "reward {raw} is below the declared lower bound {lower_bound}"
        )));
    }
    Ok(raw - lower_bound)
}

/// Epsilon-greedy choice; ties go to the lowest index.
pub fn act(values: &[f64], eps: f64, rng: &mut impl Rng) -> usize {
    if rng.gen::<f64>() < eps {
        return rng.gen_range(0..values.len());
    }
    argmax(values)
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// One stored transition. Hidden states are those produced during the
/// rollout and enter the losses as constants.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRecord {
    pub obs: ObsBatch,
    pub active: BTreeSet<AgentId>,
    /// Joint action, learner included.
    pub actions: BTreeMap<AgentId, usize>,
    /// Shifted (non-negative) reward.
    pub reward: f64,
    pub next_obs: ObsBatch,
    pub next_active: BTreeSet<AgentId>,
    pub done: bool,
    pub joined: BTreeSet<AgentId>,
    pub left: BTreeSet<AgentId>,
    /// Value-cell hidden states entering step `t` and leaving it.
    pub value_prev: BTreeMap<AgentId, Vec<f64>>,
    pub value_cur: BTreeMap<AgentId, Vec<f64>>,
    /// Agent-model hidden states entering step `t` and leaving it.
    pub model_prev: BTreeMap<AgentId, Vec<f64>>,
    pub model_cur: BTreeMap<AgentId, Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ValueLosses {
    pub td: f64,
    pub reg: f64,
    pub total: f64,
}

/// Online and target value networks plus the agent model.
#[derive(Clone, Debug)]
pub struct Learner {
    pub topology: Topology,
    pub gamma: f64,
    pub value: ValueModel,
    pub agent: AgentModel,
    pub online: ParameterStore,
    pub target: ParameterStore,
    pub model_params: ParameterStore,
    value_opt: Optimizer,
    model_opt: Optimizer,
}

impl Learner {
    pub fn new(config: &ExperimentConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut online = ParameterStore::new();
        let value = ValueModel::new(&mut online, config.value_config(), rng)?;
        let mut model_params = ParameterStore::new();
        let agent = AgentModel::new(&mut model_params, config.agent_model_config(), rng)?;
        let target = online.clone();
        Ok(Learner {
            topology: config.topology,
            gamma: config.gamma,
            value,
            agent,
            online,
            target,
            model_params,
            value_opt: Optimizer::new(config.optimizer),
            model_opt: Optimizer::new(config.optimizer),
        })
    }

    pub fn graph(&self, active: &BTreeSet<AgentId>) -> Result<DynamicAffinityGraph> {
        DynamicAffinityGraph::build(self.topology, LEARNER, active.iter().copied())
    }

    /// Learner action values from the current embedding tables.
    pub fn action_values(
        &self,
        value_table: &TypeEmbeddingTable,
        model_table: &TypeEmbeddingTable,
        graph: &DynamicAffinityGraph,
    ) -> Result<Vec<f64>> {
        let emb = value_table.for_nodes(graph.nodes())?;
        let u = self.value.utilities(self.online.values(), &emb, graph)?;
        let pol = self
            .agent
            .policies(self.model_params.values(), &model_table.for_nodes(graph.nodes())?, graph)?;
        u.learner_action_values(&pol)
    }

    /// Bootstrap target `y` for one record under the target parameters.
    pub fn td_target(&self, rec: &TransitionRecord) -> Result<f64> {
        if rec.done {
            return Ok(rec.reward);
        }
        let graph = self.graph(&rec.next_active)?;
        let nodes = graph.nodes();
        let (emb, _) = embed_nodes(self.value.cell(), self.target.values(), &rec.next_obs, &rec.value_cur, nodes)?;
        let u = self.value.utilities(self.target.values(), &emb, &graph)?;
        let (memb, _) =
            embed_nodes(self.agent.cell(), self.model_params.values(), &rec.next_obs, &rec.model_cur, nodes)?;
        let pol = self.agent.policies(self.model_params.values(), &memb, &graph)?;
        let v = u.learner_action_values(&pol)?;
        let best = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(rec.reward + self.gamma * best)
    }

    /// Evaluates `td_weight * td + reg_weight * reg` over the batch at the
    /// given online parameters and accumulates its gradient when `grads` is
    /// supplied. The regularizer's reference operand is held constant.
    pub fn value_objective(
        &self,
        params: &[f64],
        batch: &[&TransitionRecord],
        targets: &[f64],
        td_weight: f64,
        reg_weight: f64,
        mut grads: Option<&mut [f64]>,
    ) -> Result<ValueLosses> {
        if batch.is_empty() || targets.len() != batch.len() {
            return Err(Error::domain("batch and targets must be non-empty and aligned"));
        }
        let b = batch.len() as f64;
        let mut td = 0.0;
        let mut reg = 0.0;
        for (rec, &y) in batch.iter().zip(targets) {
            let graph = self.graph(&rec.active)?;
            let nodes = graph.nodes();
            let actions: Vec<usize> = nodes
                .iter()
                .map(|id| {
                    rec.actions
                        .get(id)
                        .copied()
                        .ok_or_else(|| Error::domain(format!("no action recorded for agent {id}")))
                })
                .collect::<Result<_>>()?;
            let (emb, cell_traces) = embed_nodes(self.value.cell(), params, &rec.obs, &rec.value_prev, nodes)?;
            let (u, trace) = self.value.utilities_traced(params, &emb, &graph)?;
            let (q, _) = u.joint_q(&actions)?;
            td += 0.5 * (y - q) * (y - q);

            let own = u.individual[0][actions[0]];
            let others: Vec<f64> = (1..nodes.len()).map(|p| u.individual[p][actions[p]]).collect();
            let mut d = UtilityGrads::zeros_like(&u);
            match self.topology {
                Topology::Star => {
                    let reference: f64 = others.iter().sum();
                    reg += 0.5 * (reference - own) * (reference - own);
                    d.individual[0][actions[0]] += reg_weight * (own - reference) / b;
                }
                Topology::Complete => {
                    for (p, &other) in others.iter().enumerate() {
                        reg += 0.5 * (own - other) * (own - other);
                        d.individual[p + 1][actions[p + 1]] += reg_weight * (other - own) / b;
                    }
                }
            }
            if let Some(g) = grads.as_deref_mut() {
                u.joint_q_backward(&actions, td_weight * (q - y) / b, &mut d)?;
                let d_emb = self.value.backward(params, &trace, &d, g)?;
                embed_backward(self.value.cell(), params, &cell_traces, &d_emb, g)?;
            }
        }
        let td = td / b;
        let reg = reg / b;
        Ok(ValueLosses {
            td,
            reg,
            total: td_weight * td + reg_weight * reg,
        })
    }

    pub fn targets(&self, batch: &[&TransitionRecord]) -> Result<Vec<f64>> {
        batch.iter().map(|r| self.td_target(r)).collect()
    }

    pub fn td_loss(&self, batch: &[&TransitionRecord]) -> Result<f64> {
        let y = self.targets(batch)?;
        Ok(self.value_objective(self.online.values(), batch, &y, 1.0, 0.0, None)?.td)
    }

    pub fn regularizer(&self, batch: &[&TransitionRecord]) -> Result<f64> {
        let y = self.targets(batch)?;
        Ok(self.value_objective(self.online.values(), batch, &y, 0.0, 1.0, None)?.reg)
    }

    /// `td + lambda * reg` at the current online parameters.
    pub fn total_loss(&self, batch: &[&TransitionRecord], lambda: f64) -> Result<ValueLosses> {
        let y = self.targets(batch)?;
        let mut l = self.value_objective(self.online.values(), batch, &y, 1.0, lambda, None)?;
        l.total = l.td + lambda * l.reg;
        Ok(l)
    }

    fn model_samples<'a>(
        &self,
        batch: &[&'a TransitionRecord],
        graphs: &'a [DynamicAffinityGraph],
    ) -> Vec<ModelSample<'a>> {
        batch
            .iter()
            .zip(graphs)
            .map(|(r, g)| ModelSample {
                obs: &r.obs,
                prev: &r.model_prev,
                graph: g,
                teammate_actions: &r.actions,
            })
            .collect()
    }

    pub fn agent_loss(&self, batch: &[&TransitionRecord]) -> Result<crate::agent_model::NllReport> {
        let graphs: Vec<_> = batch.iter().map(|r| self.graph(&r.active)).collect::<Result<_>>()?;
        let samples = self.model_samples(batch, &graphs);
        agent_model_loss(&self.agent, self.model_params.values(), &samples, None)
    }

    /// One value step, one agent-model step and a target soft update.
    pub fn update(&mut self, batch: &[&TransitionRecord], lambda: f64, lr: f64, tau: f64) -> Result<UpdateStats> {
        let targets = self.targets(batch)?;
        let mut grads = vec![0.0; self.online.len()];
        let losses =
            self.value_objective(self.online.values(), batch, &targets, 1.0, lambda, Some(&mut grads))?;
        self.online.grads_mut().copy_from_slice(&grads);
        let losses = ValueLosses {
            total: losses.td + lambda * losses.reg,
            ..losses
        };
        if !losses.total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value loss (td {}, reg {}) on a batch of {}",
                losses.td,
                losses.reg,
                batch.len()
            )));
        }
        self.value_opt.step(&mut self.online, lr)?;

        let graphs: Vec<_> = batch.iter().map(|r| self.graph(&r.active)).collect::<Result<_>>()?;
        let samples = self.model_samples(batch, &graphs);
        let mut mgrads = vec![0.0; self.model_params.len()];
        let nll = agent_model_loss(&self.agent, self.model_params.values(), &samples, Some(&mut mgrads))?;
        self.model_params.grads_mut().copy_from_slice(&mgrads);
        if !nll.loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite agent-model loss {}", nll.loss)));
        }
        self.model_opt.step(&mut self.model_params, lr)?;
        self.target.soft_update(&self.online, tau)?;
        Ok(UpdateStats { losses, nll: nll.nll })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_store("value", &self.online);
        ck.push_store("target", &self.target);
        ck.push_store("model", &self.model_params);
        ck
    }

    pub fn from_checkpoint(config: &ExperimentConfig, ck: &Checkpoint) -> Result<Self> {
        let mut l = Learner::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        ck.load_store("value", &mut l.online)?;
        ck.load_store("target", &mut l.target)?;
        ck.load_store("model", &mut l.model_params)?;
        Ok(l)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub losses: ValueLosses,
    pub nll: f64,
}

/// A single environment together with the learner's embedding tables.
pub struct Episode {
    env: OpenWorld,
    snap: TeamSnapshot,
    value_table: TypeEmbeddingTable,
    model_table: TypeEmbeddingTable,
    joined: BTreeSet<AgentId>,
    left: BTreeSet<AgentId>,
    pub shifted_return: f64,
    pub raw_return: f64,
    pub done: bool,
}

impl Episode {
    pub fn start(config: EnvConfig, seed: u64, embed: usize) -> Result<Self> {
        let (env, snap) = OpenWorld::reset(config, seed)?;
        let joined = snap.active.clone();
        Ok(Episode {
            env,
            snap,
            value_table: TypeEmbeddingTable::new(embed),
            model_table: TypeEmbeddingTable::new(embed),
            joined,
            left: BTreeSet::new(),
            shifted_return: 0.0,
            raw_return: 0.0,
            done: false,
        })
    }

    pub fn snapshot(&self) -> &TeamSnapshot {
        &self.snap
    }

    /// Advances one step and returns the transition.
    pub fn step(&mut self, learner: &Learner, eps: f64, rng: &mut impl Rng) -> Result<TransitionRecord> {
        let value_prev = self.value_table.carried(&self.left);
        let model_prev = self.model_table.carried(&self.left);
        self.value_table = self.value_table.update(
            learner.value.cell(),
            learner.online.values(),
            &self.snap.obs,
            &self.joined,
            &self.left,
        )?;
        self.model_table = self.model_table.update(
            learner.agent.cell(),
            learner.model_params.values(),
            &self.snap.obs,
            &self.joined,
            &self.left,
        )?;
        let graph = learner.graph(&self.snap.active)?;
        let values = learner.action_values(&self.value_table, &self.model_table, &graph)?;
        let a = act(&values, eps, rng);
        let out = self.env.step(a)?;
        let reward = shift_reward(out.reward, self.env.config().reward_lower_bound())?;
        self.shifted_return += reward;
        self.raw_return += out.reward;
        let mut actions = out.teammate_actions.clone();
        actions.insert(LEARNER, a);
        let rec = TransitionRecord {
            obs: self.snap.obs.clone(),
            active: self.snap.active.clone(),
            actions,
            reward,
            next_obs: out.next.obs.clone(),
            next_active: out.next.active.clone(),
            done: out.done,
            joined: out.joined.clone(),
            left: out.left.clone(),
            value_prev,
            value_cur: self.value_table.entries().clone(),
            model_prev,
            model_cur: self.model_table.entries().clone(),
        };
        self.joined = out.joined;
        self.left = out.left;
        self.snap = out.next;
        self.done = out.done;
        Ok(rec)
    }
}

/// Per-episode training metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub steps: usize,
    pub mean_return: f64,
    pub td_loss: f64,
    pub reg_loss: f64,
    pub agent_nll: f64,
    pub epsilon: f64,
}

pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut x = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

const TRAIN_STREAM: u64 = 1;

pub struct TrainOutput {
    pub learner: Learner,
    pub metrics: Vec<EpisodeMetrics>,
}

/// Runs the full training loop. `on_episode` is called after every episode
/// with read-only access to the learner (for evaluation and checkpoints).
pub fn train(
    config: &ExperimentConfig,
    mut on_episode: impl FnMut(&Learner, &EpisodeMetrics) -> Result<()>,
) -> Result<TrainOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut learner = Learner::new(config, &mut rng)?;
    let env_config = config.train_env();
    let mut metrics = Vec::new();
    let mut steps = 0usize;
    let mut vector_steps = 0usize;
    for episode in 0..config.num_episodes() {
        let mut envs: Vec<Episode> = (0..config.num_envs)
            .map(|k| {
                let seed = derive_seed(config.seed, TRAIN_STREAM, (episode * config.num_envs + k) as u64);
                Episode::start(env_config.clone(), seed, config.embed)
            })
            .collect::<Result<_>>()?;
        let mut buffer: Vec<TransitionRecord> = Vec::with_capacity(config.num_envs * env_config.eps_length);
        let mut stats: Vec<UpdateStats> = Vec::new();
        let mut eps = config.epsilon(steps);
        while envs.iter().any(|e| !e.done) {
            eps = config.epsilon(steps);
            for env in envs.iter_mut().filter(|e| !e.done) {
                buffer.push(env.step(&learner, eps, &mut rng)?);
                steps += 1;
            }
            vector_steps += 1;
            if vector_steps % config.update_frequency == 0 {
                let batch: Vec<&TransitionRecord> = (0..config.batch_size)
                    .map(|_| &buffer[rng.gen_range(0..buffer.len())])
                    .collect();
                let s = learner.update(&batch, config.lambda, config.lr, config.tau).map_err(|e| match e {
                    Error::Numeric(msg) => Error::Numeric(format!(
                        "episode {episode}, step {steps}: {msg}; aborting training"
                    )),
                    other => other,
                })?;
                stats.push(s);
            }
        }
        let mean = |f: fn(&UpdateStats) -> f64| {
            if stats.is_empty() {
                f64::NAN
            } else {
                stats.iter().map(f).sum::<f64>() / stats.len() as f64
            }
        };
        let m = EpisodeMetrics {
            episode,
            steps,
            mean_return: envs.iter().map(|e| e.shifted_return).sum::<f64>() / envs.len() as f64,
            td_loss: mean(|s| s.losses.td),
            reg_loss: mean(|s| s.losses.reg),
            agent_nll: mean(|s| s.nll),
            epsilon: eps,
        };
        on_episode(&learner, &m)?;
        metrics.push(m);
    }
    Ok(TrainOutput { learner, metrics })
}

/// Mean shifted return of the greedy learner (or a uniform-random learner
/// when `learner` is `None`) over `episodes` episodes seeded from `seed`.
pub fn evaluate(
    learner: Option<&Learner>,
    env: &EnvConfig,
    episodes: usize,
    seed: u64,
    embed: usize,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for k in 0..episodes {
        let mut ep = Episode::start(env.clone(), seed.wrapping_add(k as u64), embed)?;
        while !ep.done {
            match learner {
                Some(l) => {
                    ep.step(l, 0.0, &mut rng)?;
                }
                None => ep.step_random(&mut rng)?,
            }
        }
        total += ep.shifted_return;
    }
    Ok(total / episodes.max(1) as f64)
}

impl Episode {
    /// Uniform-random learner step that needs no model.
    fn step_random(&mut self, rng: &mut impl Rng) -> Result<()> {
        let a = rng.gen_range(0..self.env.config().n_actions());
        let out = self.env.step(a)?;
        self.shifted_return += shift_reward(out.reward, self.env.config().reward_lower_bound())?;
        self.raw_return += out.reward;
        self.snap = out.next;
        self.done = out.done;
        Ok(())
    }
}
