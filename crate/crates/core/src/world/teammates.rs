//! Scripted teammate policies.
//!
//! Each policy is a pure function of the snapshot, the agent id and a
//! per-episode seed: the random draw for agent `j` at step `t` comes from a
//! generator keyed on `(seed, t, j)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grid::Pos;
use super::{AgentType, EnvConfig, EnvKind, TeamSnapshot, EAST, LOAD, NORTH, SOUTH, STAY, WEST};
use crate::error::{Error, Result};
use crate::graph::AgentId;

const MOVES: [usize; 4] = [NORTH, EAST, SOUTH, WEST];

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn decision_rng(seed: u64, t: usize, agent: AgentId) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(t as u64) ^ splitmix(!(agent as u64))))
}

/// Index of the closest target, lowest index on ties.
fn nearest(from: Pos, targets: &[Pos]) -> Option<usize> {
    (0..targets.len()).min_by_key(|&i| (from.manhattan(targets[i]), i))
}

fn one_hot(n: usize, a: usize) -> Vec<f64> {
    let mut p = vec![0.0; n];
    p[a] = 1.0;
    p
}

/// Action at a target: wait next to prey, load next to food.
fn engage(kind: EnvKind) -> usize {
    match kind {
        EnvKind::Wolfpack => STAY,
        EnvKind::Lbf => LOAD,
    }
}

/// First move (north, east, south, west) that reduces the distance to the
/// target, or the engage action once adjacent.
fn toward(from: Pos, target: Pos, kind: EnvKind, size: usize) -> usize {
    let d = from.manhattan(target);
    if d <= 1 {
        return engage(kind);
    }
    MOVES
        .into_iter()
        .find(|&a| from.moved_clamped(a, size).manhattan(target) < d)
        .unwrap_or(STAY)
}

/// Action distribution of a scripted teammate.
pub fn action_distribution(
    ty: AgentType,
    snap: &TeamSnapshot,
    agent: AgentId,
    config: &EnvConfig,
) -> Result<Vec<f64>> {
    let n = config.n_actions();
    if !snap.active.contains(&agent) {
        return Err(Error::domain(format!("agent {agent} is not active")));
    }
    let world = &snap.world;
    let pos = world.agents[&agent];
    let targets = world.targets();
    let size = world.size;
    let dist = match ty {
        AgentType::Learner => {
            return Err(Error::domain("the learner has no scripted policy"));
        }
        AgentType::Random => vec![1.0 / n as f64; n],
        _ if targets.is_empty() => one_hot(n, STAY),
        AgentType::Greedy => {
            let t = targets[nearest(pos, &targets).expect("non-empty")];
            one_hot(n, toward(pos, t, config.kind, size))
        }
        AgentType::GreedyProbabilistic => {
            let closest = |p: Pos| targets.iter().map(|&t| p.manhattan(t)).min().expect("non-empty");
            if closest(pos) <= 1 {
                one_hot(n, engage(config.kind))
            } else {
                // softmax over -distance after each move, temperature 1
                let mut p = vec![0.0; n];
                let options = [STAY, NORTH, EAST, SOUTH, WEST];
                let scores: Vec<f64> = options
                    .iter()
                    .map(|&a| -(closest(pos.moved_clamped(a, size)) as f64))
                    .collect();
                let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = scores.iter().map(|s| (s - top).exp()).sum();
                for (&a, s) in options.iter().zip(&scores) {
                    p[a] = (s - top).exp() / total;
                }
                p
            }
        }
        AgentType::TeammateAware => {
            let members: Vec<Pos> = snap.active.iter().map(|id| world.agents[id]).collect();
            let m = members.len() as f64;
            let cr = members.iter().map(|p| p.row as f64).sum::<f64>() / m;
            let cc = members.iter().map(|p| p.col as f64).sum::<f64>() / m;
            let spread = |t: &Pos| (t.row as f64 - cr).abs() + (t.col as f64 - cc).abs();
            let mut best = 0;
            for i in 1..targets.len() {
                if spread(&targets[i]) < spread(&targets[best]) {
                    best = i;
                }
            }
            one_hot(n, toward(pos, targets[best], config.kind, size))
        }
    };
    Ok(dist)
}

/// Samples the teammate's action for this snapshot.
pub fn teammate_policy(
    ty: AgentType,
    snap: &TeamSnapshot,
    agent: AgentId,
    seed: u64,
    config: &EnvConfig,
) -> Result<usize> {
    let dist = action_distribution(ty, snap, agent, config)?;
    let u: f64 = decision_rng(seed, snap.t, agent).gen();
    let mut acc = 0.0;
    for (a, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(a);
        }
    }
    Ok(dist.iter().rposition(|&p| p > 0.0).unwrap_or(STAY))
}
