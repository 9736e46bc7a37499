//! JSON-lines trajectory dumps and bit-exact replay.
//!
//! The first line is a header holding the seed and environment config; each
//! following line is one [`TrajectoryRecord`].

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentType, EnvConfig, OpenWorld, StepOutcome, TeamSnapshot, LEARNER};
use crate::error::{Error, Result};
use crate::graph::AgentId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub seed: u64,
    pub config: EnvConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub active: Vec<AgentId>,
    pub types: BTreeMap<AgentId, AgentType>,
    /// Every active agent's action, learner included.
    pub actions: BTreeMap<AgentId, usize>,
    pub reward: f64,
    pub team_reward: f64,
    pub joined: Vec<AgentId>,
    pub left: Vec<AgentId>,
}

impl TrajectoryRecord {
    fn from_step(snap: &TeamSnapshot, learner_action: usize, out: &StepOutcome) -> Self {
        let mut actions = out.teammate_actions.clone();
        actions.insert(LEARNER, learner_action);
        TrajectoryRecord {
            t: snap.t,
            active: snap.active.iter().copied().collect(),
            types: snap.hidden_types.clone(),
            actions,
            reward: out.reward,
            team_reward: out.team_reward,
            joined: out.joined.iter().copied().collect(),
            left: out.left.iter().copied().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub header: TrajectoryHeader,
    pub records: Vec<TrajectoryRecord>,
}

impl Trajectory {
    /// Runs one full episode with the given learner policy.
    pub fn record(
        config: EnvConfig,
        seed: u64,
        mut learner: impl FnMut(&TeamSnapshot) -> usize,
    ) -> Result<Self> {
        let (mut env, mut snap) = OpenWorld::reset(config.clone(), seed)?;
        let mut records = Vec::with_capacity(config.eps_length);
        loop {
            let a = learner(&snap);
            let out = env.step(a)?;
            records.push(TrajectoryRecord::from_step(&snap, a, &out));
            snap = out.next;
            if out.done {
                break;
            }
        }
        Ok(Trajectory {
            header: TrajectoryHeader { seed, config },
            records,
        })
    }

    /// Re-simulates from the header, feeding the recorded learner actions,
    /// and fails at the first record that differs.
    pub fn replay(&self) -> Result<()> {
        let recorded = &self.records;
        let mut i = 0;
        let again = Trajectory::record(self.header.config.clone(), self.header.seed, |_| {
            let a = recorded.get(i).and_then(|r| r.actions.get(&LEARNER)).copied().unwrap_or(0);
            i += 1;
            a
        })?;
        if again.records.len() != recorded.len() {
            return Err(Error::State(format!(
                "replay produced {} steps, dump has {}",
                again.records.len(),
                recorded.len()
            )));
        }
        for (a, b) in again.records.iter().zip(recorded) {
            let same_bits = a.reward.to_bits() == b.reward.to_bits()
                && a.team_reward.to_bits() == b.team_reward.to_bits();
            if a != b || !same_bits {
                return Err(Error::State(format!("replay diverged at t={}", b.t)));
            }
        }
        Ok(())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{}", to_line(&self.header)?).map_err(|e| Error::io(path, e))?;
        for r in &self.records {
            writeln!(w, "{}", to_line(r)?).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let parse_err = |n: usize, e: serde_json::Error| Error::Parse(format!("line {n}: {e}"));
        let first = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trajectory file".into()))?
            .map_err(|e| Error::io(path, e))?;
        let header: TrajectoryHeader = serde_json::from_str(&first).map_err(|e| parse_err(1, e))?;
        let mut records = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| parse_err(n + 2, e))?);
        }
        Ok(Trajectory { header, records })
    }
}

fn to_line(v: &impl Serialize) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_matches_recording() {
        let mut config = EnvConfig::lbf(4);
        config.eps_length = 60;
        let traj = Trajectory::record(config, 11, |s| (s.t * 7) % 6).unwrap();
        assert_eq!(traj.records.len(), 60);
        traj.replay().unwrap();
    }

    #[test]
    fn tampered_dump_detected() {
        let mut config = EnvConfig::wolfpack(3);
        config.eps_length = 30;
        let mut traj = Trajectory::record(config, 5, |_| 1).unwrap();
        traj.records[10].reward += 1e-12;
        assert!(matches!(traj.replay(), Err(Error::State(_))));
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut config = EnvConfig::wolfpack(5);
        config.eps_length = 40;
        let traj = Trajectory::record(config, 3, |s| s.t % 5).unwrap();
        traj.write_jsonl(&path).unwrap();
        let back = Trajectory::read_jsonl(&path).unwrap();
        assert_eq!(back, traj);
        back.replay().unwrap();
    }
}
