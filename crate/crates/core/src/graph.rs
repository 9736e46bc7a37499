//! Per-timestep affinity (coordination) graphs over the active agents.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type AgentId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// Learner is the only internal node; teammates are leaves.
    Star,
    /// Every ordered pair of distinct agents is an edge.
    Complete,
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::Star => "star",
            Topology::Complete => "complete",
        })
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "star" => Ok(Topology::Star),
            "complete" => Ok(Topology::Complete),
            other => Err(Error::Parse(format!("unknown topology {other:?}"))),
        }
    }
}

/// Directed edge set over the active agents. The learner is always node 0,
/// teammates follow in ascending id order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DynamicAffinityGraph {
    topology: Topology,
    nodes: Vec<AgentId>,
    edges: BTreeSet<(AgentId, AgentId)>,
}

impl DynamicAffinityGraph {
    pub fn build(
        topology: Topology,
        learner: AgentId,
        active: impl IntoIterator<Item = AgentId>,
    ) -> Result<Self> {
        let active: BTreeSet<AgentId> = active.into_iter().collect();
        if !active.contains(&learner) {
            return Err(Error::domain(format!("learner {learner} is not active")));
        }
        let mut nodes = vec![learner];
        nodes.extend(active.iter().copied().filter(|&a| a != learner));

        let mut edges = BTreeSet::new();
        match topology {
            Topology::Star => {
                for &j in &nodes[1..] {
                    edges.insert((learner, j));
                    edges.insert((j, learner));
                }
            }
            Topology::Complete => {
                for &j in &nodes {
                    for &k in &nodes {
                        if j != k {
                            edges.insert((j, k));
                        }
                    }
                }
            }
        }
        Ok(DynamicAffinityGraph {
            topology,
            nodes,
            edges,
        })
    }

    /// Rebuilds the graph after agents join and leave.
    pub fn on_membership_change(
        &self,
        joined: &BTreeSet<AgentId>,
        left: &BTreeSet<AgentId>,
    ) -> Result<Self> {
        let learner = self.learner();
        if left.contains(&learner) {
            return Err(Error::domain("the learner never leaves the environment"));
        }
        if let Some(a) = left.iter().find(|a| !self.nodes.contains(a)) {
            return Err(Error::domain(format!("agent {a} left but was not active")));
        }
        if let Some(a) = joined.iter().find(|a| self.nodes.contains(a)) {
            return Err(Error::domain(format!("agent {a} joined but was already active")));
        }
        let active = self
            .nodes
            .iter()
            .copied()
            .filter(|a| !left.contains(a))
            .chain(joined.iter().copied());
        Self::build(self.topology, learner, active)
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn learner(&self) -> AgentId {
        self.nodes[0]
    }

    pub fn nodes(&self) -> &[AgentId] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &BTreeSet<(AgentId, AgentId)> {
        &self.edges
    }

    pub fn has_edge(&self, j: AgentId, k: AgentId) -> bool {
        self.edges.contains(&(j, k))
    }

    /// Node position of an agent id.
    pub fn index_of(&self, agent: AgentId) -> Option<usize> {
        self.nodes.iter().position(|&a| a == agent)
    }

    /// Unordered pairs `(p, q)` of node positions with `p < q`, each once.
    pub fn node_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for p in 0..self.nodes.len() {
            for q in p + 1..self.nodes.len() {
                if self.has_edge(self.nodes[p], self.nodes[q]) {
                    pairs.push((p, q));
                }
            }
        }
        pairs
    }

    /// For each node position, the positions with an edge pointing into it.
    pub fn incoming(&self) -> Vec<Vec<usize>> {
        (0..self.nodes.len())
            .map(|q| {
                (0..self.nodes.len())
                    .filter(|&p| self.has_edge(self.nodes[p], self.nodes[q]))
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[usize]) -> BTreeSet<usize> {
        ids.iter().copied().collect()
    }

    #[test]
    fn star_alone() {
        let g = DynamicAffinityGraph::build(Topology::Star, 7, [7]).unwrap();
        assert_eq!(g.nodes(), &[7]);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn star_three() {
        let g = DynamicAffinityGraph::build(Topology::Star, 0, [2, 0, 1]).unwrap();
        assert_eq!(g.nodes(), &[0, 1, 2]);
        let expected: BTreeSet<_> = [(0, 1), (1, 0), (0, 2), (2, 0)].into_iter().collect();
        assert_eq!(g.edges(), &expected);
        assert_eq!(g.node_pairs(), vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn complete_three() {
        let g = DynamicAffinityGraph::build(Topology::Complete, 0, [0, 1, 2]).unwrap();
        assert_eq!(g.edges().len(), 6);
        assert_eq!(g.node_pairs().len(), 3);
    }

    #[test]
    fn learner_pinned_first() {
        let g = DynamicAffinityGraph::build(Topology::Complete, 5, [1, 5, 3]).unwrap();
        assert_eq!(g.nodes(), &[5, 1, 3]);
    }

    #[test]
    fn learner_must_be_active() {
        assert!(DynamicAffinityGraph::build(Topology::Star, 0, [1, 2]).is_err());
    }

    #[test]
    fn membership_changes() {
        let g = DynamicAffinityGraph::build(Topology::Star, 0, [0, 1, 2]).unwrap();
        assert_eq!(g.on_membership_change(&set(&[]), &set(&[])).unwrap(), g);
        let shrunk = g.on_membership_change(&set(&[]), &set(&[2])).unwrap();
        let expected: BTreeSet<_> = [(0, 1), (1, 0)].into_iter().collect();
        assert_eq!(shrunk.edges(), &expected);

        let c = DynamicAffinityGraph::build(Topology::Complete, 0, [0, 1]).unwrap();
        let grown = c.on_membership_change(&set(&[3]), &set(&[])).unwrap();
        assert_eq!(grown.nodes(), &[0, 1, 3]);
        assert_eq!(grown.edges().len(), 6);

        assert!(g.on_membership_change(&set(&[]), &set(&[0])).is_err());
        assert!(g.on_membership_change(&set(&[]), &set(&[9])).is_err());
        assert!(g.on_membership_change(&set(&[1]), &set(&[])).is_err());
    }
}
