use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AgentType, EnvConfig, OpennessLog};
use crate::error::{Error, Result};
use crate::graph::AgentId;

/// Team-size cap and the inclusive ranges from which active and dead
/// durations are drawn, in environment steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpennessConfig {
    pub max_agents: usize,
    pub active_duration: [usize; 2],
    pub dead_duration: [usize; 2],
}

impl OpennessConfig {
    pub fn wolfpack(max_agents: usize) -> Self {
        OpennessConfig {
            max_agents,
            active_duration: [25, 35],
            dead_duration: [15, 25],
        }
    }

    pub fn lbf(max_agents: usize) -> Self {
        OpennessConfig {
            max_agents,
            active_duration: [15, 25],
            dead_duration: [10, 20],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_agents < 2 {
            return Err(Error::domain("max_agents must leave room for the learner and a teammate"));
        }
        for (name, [lo, hi]) in [
            ("active_duration", self.active_duration),
            ("dead_duration", self.dead_duration),
        ] {
            if lo == 0 || lo > hi {
                return Err(Error::domain(format!("{name} range [{lo}, {hi}] is invalid")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotStatus {
    /// Steps left before the agent leaves.
    Active { remaining: usize },
    /// Steps left before the agent may re-enter.
    Queued { wait: usize },
}

/// One teammate in the re-entry pool.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentSlot {
    pub id: AgentId,
    pub agent_type: AgentType,
    pub status: SlotStatus,
    duration: usize,
}

impl AgentSlot {
    pub(super) fn queued(id: AgentId, wait: usize) -> Self {
        AgentSlot {
            id,
            agent_type: AgentType::Random,
            status: SlotStatus::Queued { wait },
            duration: 0,
        }
    }

    pub fn is_active(&self) -> bool {
        matches!(self.status, SlotStatus::Active { .. })
    }

    pub(super) fn ready(&self) -> bool {
        self.status == SlotStatus::Queued { wait: 0 }
    }

    /// Activates with a freshly drawn type and active duration.
    pub(super) fn admit(&mut self, config: &EnvConfig, rng: &mut impl Rng, log: &mut OpennessLog) {
        self.agent_type = *config
            .teammate_types
            .choose(rng)
            .expect("validated non-empty");
        let [lo, hi] = config.openness.active_duration;
        self.duration = rng.gen_range(lo..=hi);
        log.sampled_active.push(self.duration);
        self.status = SlotStatus::Active {
            remaining: self.duration,
        };
    }

    /// Advances one step. Returns true when the agent leaves.
    pub(super) fn tick(&mut self, config: &EnvConfig, rng: &mut impl Rng, log: &mut OpennessLog) -> bool {
        match self.status {
            SlotStatus::Active { remaining } if remaining <= 1 => {
                let [lo, hi] = config.openness.dead_duration;
                let wait = rng.gen_range(lo..=hi);
                log.sampled_dead.push(wait);
                log.completed_active.push(self.duration);
                self.status = SlotStatus::Queued { wait };
                true
            }
            SlotStatus::Active { remaining } => {
                self.status = SlotStatus::Active {
                    remaining: remaining - 1,
                };
                false
            }
            SlotStatus::Queued { wait } => {
                self.status = SlotStatus::Queued {
                    wait: wait.saturating_sub(1),
                };
                false
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_validated() {
        let mut c = OpennessConfig::wolfpack(3);
        assert!(c.validate().is_ok());
        c.dead_duration = [5, 4];
        assert!(c.validate().is_err());
        c.dead_duration = [0, 4];
        assert!(c.validate().is_err());
        assert!(OpennessConfig::lbf(1).validate().is_err());
        assert!(OpennessConfig::lbf(2).validate().is_ok());
    }
}
