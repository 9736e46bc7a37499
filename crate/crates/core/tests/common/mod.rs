#![allow(dead_code)]

use ciao_core::agent_model::embed_nodes;
use ciao_core::graph::Topology;
use ciao_core::nn::Activation;
use ciao_core::train::{ExperimentConfig, Episode, Learner, TransitionRecord};
use ciao_core::value::{RangeConstraint, Utilities};
use ciao_core::world::EnvConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Narrow tanh networks on a 4x4 Wolfpack so finite differences stay cheap.
pub fn small_config(topology: Topology, pair: RangeConstraint, indiv: RangeConstraint) -> ExperimentConfig {
    let mut env = EnvConfig::wolfpack(3);
    env.grid_size = 4;
    env.eps_length = 45;
    ExperimentConfig {
        env,
        topology,
        pair_range: pair,
        indiv_range: indiv,
        embed: 4,
        hidden: 5,
        rank: 2,
        activation: Activation::Tanh,
        ..ExperimentConfig::default()
    }
}

/// Records from full random-policy episodes, thinned to every `stride`-th.
pub fn rollout(learner: &Learner, config: &ExperimentConfig, seed: u64, stride: usize) -> Vec<TransitionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ep = Episode::start(config.train_env(), seed, config.embed).unwrap();
    let mut out = Vec::new();
    let mut t = 0;
    while !ep.done {
        let rec = ep.step(learner, 1.0, &mut rng).unwrap();
        if t % stride == 0 {
            out.push(rec);
        }
        t += 1;
    }
    out
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Norm-wise relative error of `analytic` against central differences of `f`.
pub fn fd_rel_error(params: &[f64], analytic: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut p = params.to_vec();
    let mut numeric = vec![0.0; p.len()];
    for i in 0..p.len() {
        let x = p[i];
        p[i] = x + h;
        let up = f(&p);
        p[i] = x - h;
        let down = f(&p);
        p[i] = x;
        numeric[i] = (up - down) / (2.0 * h);
    }
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&numeric).max(1e-8)
}

/// Utilities and node-ordered recorded actions at arbitrary value parameters.
pub fn utilities_at(l: &Learner, params: &[f64], rec: &TransitionRecord) -> (Utilities, Vec<usize>) {
    let graph = l.graph(&rec.active).unwrap();
    let (emb, _) = embed_nodes(l.value.cell(), params, &rec.obs, &rec.value_prev, graph.nodes()).unwrap();
    let u = l.value.utilities(params, &emb, &graph).unwrap();
    let actions = graph.nodes().iter().map(|id| rec.actions[id]).collect();
    (u, actions)
}

pub fn q_at(u: &Utilities, a: &[usize]) -> f64 {
    let na = u.n_actions;
    let indiv: f64 = (0..a.len()).map(|p| u.individual[p][a[p]]).sum();
    let pairs: f64 = u
        .pairs
        .iter()
        .map(|&(p, q)| {
            let s: f64 = (0..u.rank).map(|k| u.factors[p][k * na + a[p]] * u.factors[q][k * na + a[q]]).sum();
            u.sign * s
        })
        .sum();
    indiv + pairs
}

pub fn td_oracle(l: &Learner, params: &[f64], batch: &[&TransitionRecord], y: &[f64]) -> f64 {
    let total: f64 = batch
        .iter()
        .zip(y)
        .map(|(rec, &yi)| {
            let (u, a) = utilities_at(l, params, rec);
            0.5 * (yi - q_at(&u, &a)).powi(2)
        })
        .sum();
    total / batch.len() as f64
}

/// Regularizer with its reference operand evaluated at `frozen` and the
/// parameterized operand at `params`.
pub fn reg_oracle(l: &Learner, frozen: &[f64], params: &[f64], batch: &[&TransitionRecord]) -> f64 {
    let mut total = 0.0;
    for rec in batch {
        let (u0, a) = utilities_at(l, frozen, rec);
        let (u, _) = utilities_at(l, params, rec);
        match l.topology {
            Topology::Star => {
                let reference: f64 = (1..a.len()).map(|p| u0.individual[p][a[p]]).sum();
                total += 0.5 * (reference - u.individual[0][a[0]]).powi(2);
            }
            Topology::Complete => {
                let reference = u0.individual[0][a[0]];
                for p in 1..a.len() {
                    total += 0.5 * (reference - u.individual[p][a[p]]).powi(2);
                }
            }
        }
    }
    total / batch.len() as f64
}
