use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use super::{
    EnvConfig, EnvKind, ObsBatch, OpennessLog, AGENT_FEATURES, EAST, LOAD, NORTH, SOUTH, WEST,
};
use crate::graph::AgentId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub fn new(row: usize, col: usize) -> Self {
        Pos { row, col }
    }

    pub fn manhattan(self, other: Pos) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    /// Cell reached by a movement action, or `None` when it leaves the grid.
    /// Non-movement actions stay in place.
    pub fn moved(self, action: usize, size: usize) -> Option<Pos> {
        let Pos { row, col } = self;
        match action {
            NORTH => row.checked_sub(1).map(|r| Pos::new(r, col)),
            SOUTH => (row + 1 < size).then(|| Pos::new(row + 1, col)),
            EAST => (col + 1 < size).then(|| Pos::new(row, col + 1)),
            WEST => col.checked_sub(1).map(|c| Pos::new(row, c)),
            _ => Some(self),
        }
    }

    /// Like [`Pos::moved`] but clamps at the border.
    pub fn moved_clamped(self, action: usize, size: usize) -> Pos {
        self.moved(action, size).unwrap_or(self)
    }

    pub fn is_adjacent(self, other: Pos) -> bool {
        self.manhattan(other) == 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Food {
    pub pos: Pos,
    pub level: u8,
}

/// Physical state of the grid. Inactive agents are not on the board.
#[derive(Clone, Debug, PartialEq)]
pub struct GridState {
    pub kind: EnvKind,
    pub size: usize,
    pub agents: BTreeMap<AgentId, Pos>,
    /// Foraging skill levels (all 1 in Wolfpack).
    pub levels: BTreeMap<AgentId, u8>,
    pub prey: Vec<Pos>,
    pub food: Vec<Food>,
    /// Sum of food levels in the current spawn round.
    round_total: f64,
}

pub(super) struct Rewards {
    pub learner: f64,
    pub team: f64,
}

impl GridState {
    pub(super) fn new(config: &EnvConfig) -> Self {
        GridState {
            kind: config.kind,
            size: config.grid_size,
            agents: BTreeMap::new(),
            levels: BTreeMap::new(),
            prey: Vec::new(),
            food: Vec::new(),
            round_total: 0.0,
        }
    }

    pub fn is_free(&self, p: Pos) -> bool {
        !self.agents.values().any(|&q| q == p)
            && !self.prey.contains(&p)
            && !self.food.iter().any(|f| f.pos == p)
    }

    /// Prey positions in Wolfpack, food positions in foraging.
    pub fn targets(&self) -> Vec<Pos> {
        match self.kind {
            EnvKind::Wolfpack => self.prey.clone(),
            EnvKind::Lbf => self.food.iter().map(|f| f.pos).collect(),
        }
    }

    fn random_free(&self, rng: &mut impl Rng) -> Pos {
        let free: Vec<Pos> = (0..self.size)
            .flat_map(|r| (0..self.size).map(move |c| Pos::new(r, c)))
            .filter(|&p| self.is_free(p))
            .collect();
        free[rng.gen_range(0..free.len())]
    }

    pub(super) fn place_agent(&mut self, id: AgentId, config: &EnvConfig, rng: &mut impl Rng) {
        let p = self.random_free(rng);
        self.agents.insert(id, p);
        let level = match config.kind {
            EnvKind::Wolfpack => 1,
            EnvKind::Lbf => rng.gen_range(1..=3),
        };
        self.levels.insert(id, level);
    }

    pub(super) fn remove_agent(&mut self, id: AgentId) {
        self.agents.remove(&id);
        self.levels.remove(&id);
    }

    pub(super) fn spawn_objects(&mut self, config: &EnvConfig, rng: &mut impl Rng, log: &mut OpennessLog) {
        match config.kind {
            EnvKind::Wolfpack => {
                for _ in 0..config.n_prey {
                    let p = self.random_free(rng);
                    self.prey.push(p);
                }
            }
            EnvKind::Lbf => {
                for _ in 0..config.n_food {
                    let pos = self.random_free(rng);
                    let level = rng.gen_range(2..=4);
                    self.food.push(Food { pos, level });
                }
                self.round_total = self.food.iter().map(|f| f.level as f64).sum();
                log.food_value_spawned += 1.0;
            }
        }
    }

    /// Moves agents in ascending id order; a move into a wall or an occupied
    /// cell leaves the agent in place.
    fn move_agents(&mut self, actions: &BTreeMap<AgentId, usize>) {
        let ids: Vec<AgentId> = self.agents.keys().copied().collect();
        for id in ids {
            let a = actions.get(&id).copied().unwrap_or(0);
            let from = self.agents[&id];
            if let Some(to) = from.moved(a, self.size) {
                if to != from && self.is_free(to) {
                    self.agents.insert(id, to);
                }
            }
        }
    }

    pub(super) fn advance(
        &mut self,
        actions: &BTreeMap<AgentId, usize>,
        config: &EnvConfig,
        rng: &mut impl Rng,
        log: &mut OpennessLog,
    ) -> Rewards {
        self.move_agents(actions);
        match config.kind {
            EnvKind::Wolfpack => self.advance_wolfpack(config, rng),
            EnvKind::Lbf => self.advance_lbf(actions, config, rng, log),
        }
    }

    fn adjacent_agents(&self, p: Pos) -> Vec<AgentId> {
        self.agents
            .iter()
            .filter(|(_, q)| q.is_adjacent(p))
            .map(|(&id, _)| id)
            .collect()
    }

    fn advance_wolfpack(&mut self, config: &EnvConfig, rng: &mut impl Rng) -> Rewards {
        let learner = super::LEARNER;
        let mut rewards = Rewards {
            learner: 0.0,
            team: 0.0,
        };
        let mut lone = false;
        let mut captured = Vec::new();
        for (i, &p) in self.prey.iter().enumerate() {
            let hunters = self.adjacent_agents(p);
            if hunters.len() >= 2 {
                captured.push(i);
                rewards.team += config.capture_reward * hunters.len() as f64;
                if hunters.contains(&learner) {
                    rewards.learner += config.capture_reward;
                }
            } else if hunters == [learner] {
                lone = true;
            }
        }
        if lone {
            rewards.learner -= config.close_penalty;
            rewards.team -= config.close_penalty;
        }
        let captured: BTreeSet<usize> = captured.into_iter().collect();
        for i in 0..self.prey.len() {
            let flee = rng.gen::<f64>() < config.prey_move_prob;
            if captured.contains(&i) {
                // the old cell is still occupied, so the prey really relocates
                self.prey[i] = self.random_free(rng);
            } else if flee {
                self.prey[i] = self.evasive_step(self.prey[i]);
            }
        }
        rewards
    }

    /// Neighbouring cell (or staying) that maximizes the distance to the
    /// closest predator; earlier actions win ties.
    fn evasive_step(&self, from: Pos) -> Pos {
        let clearance = |p: Pos| {
            self.agents
                .values()
                .map(|&q| q.manhattan(p))
                .min()
                .unwrap_or(usize::MAX)
        };
        let mut best = (clearance(from), from);
        for a in [NORTH, EAST, SOUTH, WEST] {
            if let Some(p) = from.moved(a, self.size) {
                if self.is_free(p) && clearance(p) > best.0 {
                    best = (clearance(p), p);
                }
            }
        }
        best.1
    }

    fn advance_lbf(
        &mut self,
        actions: &BTreeMap<AgentId, usize>,
        config: &EnvConfig,
        rng: &mut impl Rng,
        log: &mut OpennessLog,
    ) -> Rewards {
        let mut rewards = Rewards {
            learner: 0.0,
            team: 0.0,
        };
        let mut collected = Vec::new();
        for (i, f) in self.food.iter().enumerate() {
            let loaders: Vec<AgentId> = self
                .adjacent_agents(f.pos)
                .into_iter()
                .filter(|id| actions.get(id) == Some(&LOAD))
                .collect();
            let skill: u32 = loaders.iter().map(|id| self.levels[id] as u32).sum();
            if !loaders.is_empty() && skill >= f.level as u32 {
                let value = f.level as f64 / self.round_total;
                rewards.team += value;
                if loaders.contains(&super::LEARNER) {
                    rewards.learner += value / loaders.len() as f64;
                }
                collected.push(i);
            }
        }
        for &i in collected.iter().rev() {
            self.food.remove(i);
        }
        if self.food.is_empty() {
            self.spawn_objects(config, rng, log);
        }
        rewards
    }

    pub(super) fn observe(&self, active: &BTreeSet<AgentId>, config: &EnvConfig) -> ObsBatch {
        let cells = self.size * self.size;
        let mut shared = vec![0.0; 2 * cells];
        let idx = |p: Pos| p.row * self.size + p.col;
        for (id, &p) in &self.agents {
            shared[idx(p)] = match config.kind {
                EnvKind::Wolfpack => 1.0,
                EnvKind::Lbf => self.levels[id] as f64 / 3.0,
            };
        }
        for &p in &self.prey {
            shared[cells + idx(p)] = 1.0;
        }
        for f in &self.food {
            shared[cells + idx(f.pos)] = f.level as f64 / 4.0;
        }
        let scale = (self.size - 1) as f64;
        let agents = active
            .iter()
            .map(|id| {
                let p = self.agents[id];
                let level = match config.kind {
                    EnvKind::Wolfpack => 0.0,
                    EnvKind::Lbf => self.levels[id] as f64 / 3.0,
                };
                let x: [f64; AGENT_FEATURES] =
                    [p.row as f64 / scale, p.col as f64 / scale, level, 1.0];
                (*id, x)
            })
            .collect();
        ObsBatch { shared, agents }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::STAY;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn board(kind: EnvKind) -> (GridState, EnvConfig) {
        let config = match kind {
            EnvKind::Wolfpack => EnvConfig::wolfpack(3),
            EnvKind::Lbf => EnvConfig::lbf(3),
        };
        (GridState::new(&config), config)
    }

    fn acts(pairs: &[(AgentId, usize)]) -> BTreeMap<AgentId, usize> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn moves_blocked_by_walls_and_agents() {
        let (mut g, _) = board(EnvKind::Wolfpack);
        g.agents.insert(0, Pos::new(0, 0));
        g.agents.insert(1, Pos::new(0, 1));
        g.move_agents(&acts(&[(0, EAST), (1, NORTH)]));
        assert_eq!(g.agents[&0], Pos::new(0, 0));
        assert_eq!(g.agents[&1], Pos::new(0, 1));
        g.move_agents(&acts(&[(0, SOUTH), (1, WEST)]));
        // agent 0 moves first and frees the cell for agent 1
        assert_eq!(g.agents[&0], Pos::new(1, 0));
        assert_eq!(g.agents[&1], Pos::new(0, 0));
    }

    #[test]
    fn joint_capture_rewards_learner() {
        let (mut g, mut c) = board(EnvKind::Wolfpack);
        c.prey_move_prob = 0.0;
        g.prey.push(Pos::new(5, 5));
        g.agents.insert(0, Pos::new(4, 5));
        g.agents.insert(1, Pos::new(5, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = g.advance(&acts(&[(0, STAY), (1, STAY)]), &c, &mut rng, &mut OpennessLog::default());
        assert_eq!(r.learner, 2.0);
        assert_ne!(g.prey[0], Pos::new(5, 5));
    }

    #[test]
    fn lone_learner_is_penalized() {
        let (mut g, mut c) = board(EnvKind::Wolfpack);
        c.prey_move_prob = 0.0;
        g.prey.push(Pos::new(5, 5));
        g.agents.insert(0, Pos::new(4, 5));
        g.agents.insert(1, Pos::new(0, 0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = g.advance(&acts(&[(0, STAY), (1, STAY)]), &c, &mut rng, &mut OpennessLog::default());
        assert_eq!(r.learner, -0.5);
        assert_eq!(g.prey[0], Pos::new(5, 5));
    }

    #[test]
    fn teammate_capture_pays_learner_nothing() {
        let (mut g, mut c) = board(EnvKind::Wolfpack);
        c.prey_move_prob = 0.0;
        g.prey.push(Pos::new(5, 5));
        g.agents.insert(0, Pos::new(0, 0));
        g.agents.insert(1, Pos::new(4, 5));
        g.agents.insert(2, Pos::new(6, 5));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = g.advance(&acts(&[(0, STAY), (1, STAY), (2, STAY)]), &c, &mut rng, &mut OpennessLog::default());
        assert_eq!(r.learner, 0.0);
        assert_eq!(r.team, 4.0);
    }

    #[test]
    fn prey_flees() {
        let (mut g, _) = board(EnvKind::Wolfpack);
        g.agents.insert(0, Pos::new(3, 5));
        // east, south and west all reach distance 3; east is listed first
        assert_eq!(g.evasive_step(Pos::new(5, 5)), Pos::new(5, 6));
        g.agents.insert(0, Pos::new(9, 9));
        assert_eq!(g.evasive_step(Pos::new(5, 5)), Pos::new(4, 5));
    }

    #[test]
    fn foraging_needs_enough_skill() {
        let (mut g, c) = board(EnvKind::Lbf);
        let mut log = OpennessLog::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        g.food.push(Food { pos: Pos::new(3, 3), level: 3 });
        g.food.push(Food { pos: Pos::new(7, 7), level: 2 });
        g.round_total = 5.0;
        g.agents.insert(0, Pos::new(2, 3));
        g.levels.insert(0, 1);
        g.agents.insert(1, Pos::new(3, 2));
        g.levels.insert(1, 2);
        let r = g.advance(&acts(&[(0, LOAD), (1, STAY)]), &c, &mut rng, &mut log);
        assert_eq!(r.learner, 0.0);
        assert_eq!(g.food.len(), 2);
        let r = g.advance(&acts(&[(0, LOAD), (1, LOAD)]), &c, &mut rng, &mut log);
        assert!((r.team - 0.6).abs() < 1e-12);
        assert!((r.learner - 0.3).abs() < 1e-12);
        assert_eq!(g.food.len(), 1);
    }

    #[test]
    fn observation_layout() {
        let (mut g, c) = board(EnvKind::Lbf);
        g.agents.insert(0, Pos::new(7, 0));
        g.levels.insert(0, 3);
        g.food.push(Food { pos: Pos::new(0, 1), level: 2 });
        let obs = g.observe(&[0].into_iter().collect(), &c);
        assert_eq!(obs.shared.len(), c.shared_obs_dim());
        assert_eq!(obs.shared[56], 1.0);
        assert_eq!(obs.shared[64 + 1], 0.5);
        assert_eq!(obs.agents, vec![(0, [1.0, 0.0, 1.0, 1.0])]);
        assert_eq!(obs.input(0).unwrap().len(), c.obs_dim());
    }
}
