//! Graph-factorized joint Q-values.
//!
//! Every active agent `j` gets an individual utility vector
//! `Q_j = MLP_beta(theta_j ++ theta_i)` and a low-rank factor matrix
//! `M_j = MLP_delta(theta_j ++ theta_i)` of shape `K x |A|`, where `i` is the
//! learner. The pairwise utility on an edge is `Q_jk(a, b) = s * sum_k
//! M_j[k, a] M_k[k, b]` with `s = -1` for negative pair ranges, so the two
//! orientations of a pair are transposes of one another by construction.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AgentId, DynamicAffinityGraph};
use crate::nn::{Activation, GruCell, Mlp, MlpTrace, NetSpec, OutputTransform, ParameterStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangeConstraint {
    Free,
    Pos,
    Neg,
    Zero,
}

impl fmt::Display for RangeConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RangeConstraint::Free => "free",
            RangeConstraint::Pos => "pos",
            RangeConstraint::Neg => "neg",
            RangeConstraint::Zero => "zero",
        })
    }
}

impl FromStr for RangeConstraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" => Ok(RangeConstraint::Free),
            "pos" => Ok(RangeConstraint::Pos),
            "neg" => Ok(RangeConstraint::Neg),
            "zero" => Ok(RangeConstraint::Zero),
            other => Err(Error::Parse(format!("unknown range constraint {other:?}"))),
        }
    }
}

impl RangeConstraint {
    fn individual_transform(self) -> OutputTransform {
        match self {
            RangeConstraint::Free => OutputTransform::None,
            RangeConstraint::Pos => OutputTransform::NonNegative,
            RangeConstraint::Neg => OutputTransform::NonPositive,
            RangeConstraint::Zero => OutputTransform::Zero,
        }
    }

    /// Transform on the factor entries plus the sign applied to their product.
    fn factor_transform(self) -> (OutputTransform, f64) {
        match self {
            RangeConstraint::Free => (OutputTransform::None, 1.0),
            RangeConstraint::Pos => (OutputTransform::NonNegative, 1.0),
            RangeConstraint::Neg => (OutputTransform::NonNegative, -1.0),
            RangeConstraint::Zero => (OutputTransform::Zero, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueConfig {
    pub obs_dim: usize,
    pub n_actions: usize,
    /// Type-embedding width.
    pub embed: usize,
    /// Hidden width of the utility heads.
    pub hidden: usize,
    /// Rank `K` of the pairwise factorization.
    pub rank: usize,
    pub indiv_range: RangeConstraint,
    pub pair_range: RangeConstraint,
    pub activation: Activation,
}

/// Embedding cell plus the two utility heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueModel {
    config: ValueConfig,
    cell: GruCell,
    indiv: Mlp,
    pair: Mlp,
    sign: f64,
}

impl ValueModel {
    pub fn new(store: &mut ParameterStore, config: ValueConfig, rng: &mut impl Rng) -> Result<Self> {
        let a = config.n_actions;
        if a < 2 {
            return Err(Error::domain("at least two actions are needed"));
        }
        if config.rank == 0 || config.rank >= a {
            return Err(Error::domain(format!(
                "rank K={} must satisfy 1 <= K < |A| = {a}",
                config.rank
            )));
        }
        let e = config.embed;
        let cell = GruCell::new(store, "value.cell", config.obs_dim, e, rng);
        let indiv = Mlp::new(
            store,
            "value.indiv",
            NetSpec::new(
                vec![2 * e, config.hidden, a],
                config.activation,
                config.indiv_range.individual_transform(),
            ),
            rng,
        )?;
        let (factor_out, sign) = config.pair_range.factor_transform();
        let pair = Mlp::new(
            store,
            "value.pair",
            NetSpec::new(vec![2 * e, config.hidden, config.rank * a], config.activation, factor_out),
            rng,
        )?;
        Ok(ValueModel {
            config,
            cell,
            indiv,
            pair,
            sign,
        })
    }

    pub fn config(&self) -> &ValueConfig {
        &self.config
    }

    pub fn cell(&self) -> &GruCell {
        &self.cell
    }

    pub fn utilities(
        &self,
        params: &[f64],
        embeddings: &[Vec<f64>],
        graph: &DynamicAffinityGraph,
    ) -> Result<Utilities> {
        Ok(self.utilities_traced(params, embeddings, graph)?.0)
    }

    /// Computes every node's individual utilities and factor matrix.
    /// `embeddings` follow the graph's node order (learner first).
    pub fn utilities_traced(
        &self,
        params: &[f64],
        embeddings: &[Vec<f64>],
        graph: &DynamicAffinityGraph,
    ) -> Result<(Utilities, UtilityTrace)> {
        if embeddings.len() != graph.len() {
            return Err(Error::Shape {
                context: "embeddings per graph node",
                expected: graph.len(),
                got: embeddings.len(),
            });
        }
        let learner = &embeddings[0];
        let mut individual = Vec::with_capacity(graph.len());
        let mut factors = Vec::with_capacity(graph.len());
        let mut indiv_traces = Vec::with_capacity(graph.len());
        let mut pair_traces = Vec::with_capacity(graph.len());
        for theta in embeddings {
            let input = crate::nn::message::concat(theta, learner);
            let (q, t) = self.indiv.forward_traced(params, &input)?;
            individual.push(q);
            indiv_traces.push(t);
            let (m, t) = self.pair.forward_traced(params, &input)?;
            factors.push(m);
            pair_traces.push(t);
        }
        Ok((
            Utilities {
                nodes: graph.nodes().to_vec(),
                pairs: graph.node_pairs(),
                individual,
                factors,
                n_actions: self.config.n_actions,
                rank: self.config.rank,
                sign: self.sign,
            },
            UtilityTrace {
                indiv: indiv_traces,
                pair: pair_traces,
            },
        ))
    }

    /// Back-propagates utility gradients to the heads and returns the
    /// gradient w.r.t. each node embedding.
    pub fn backward(
        &self,
        params: &[f64],
        trace: &UtilityTrace,
        d: &UtilityGrads,
        grads: &mut [f64],
    ) -> Result<Vec<Vec<f64>>> {
        let n = trace.indiv.len();
        if d.individual.len() != n || d.factors.len() != n {
            return Err(Error::State("utility gradient does not match the traced pass".into()));
        }
        let e = self.config.embed;
        let mut d_emb = vec![vec![0.0; e]; n];
        for p in 0..n {
            let dx = self.indiv.backward(params, &trace.indiv[p], &d.individual[p], grads)?;
            let dm = self.pair.backward(params, &trace.pair[p], &d.factors[p], grads)?;
            for k in 0..e {
                d_emb[p][k] += dx[k] + dm[k];
                d_emb[0][k] += dx[e + k] + dm[e + k];
            }
        }
        Ok(d_emb)
    }
}

pub struct UtilityTrace {
    indiv: Vec<MlpTrace>,
    pair: Vec<MlpTrace>,
}

/// Per-node individual utilities and pairwise factors for one state.
#[derive(Clone, Debug, PartialEq)]
pub struct Utilities {
    pub nodes: Vec<AgentId>,
    /// Unordered node-position pairs `(p, q)`, `p < q`, one per graph edge pair.
    pub pairs: Vec<(usize, usize)>,
    pub individual: Vec<Vec<f64>>,
    /// Row-major `K x |A|` factor matrix per node.
    pub factors: Vec<Vec<f64>>,
    pub n_actions: usize,
    pub rank: usize,
    pub sign: f64,
}

/// Gradient w.r.t. the fields of [`Utilities`].
#[derive(Clone, Debug, PartialEq)]
pub struct UtilityGrads {
    pub individual: Vec<Vec<f64>>,
    pub factors: Vec<Vec<f64>>,
}

impl UtilityGrads {
    pub fn zeros_like(u: &Utilities) -> Self {
        UtilityGrads {
            individual: u.individual.iter().map(|v| vec![0.0; v.len()]).collect(),
            factors: u.factors.iter().map(|v| vec![0.0; v.len()]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointQBreakdown {
    /// `Q_j(a^j)` per node.
    pub individual: Vec<f64>,
    /// `((j, k), Q_jk(a^j, a^k))` per unordered pair of agent ids.
    pub pairwise: Vec<((AgentId, AgentId), f64)>,
    pub total: f64,
}

impl Utilities {
    fn factor(&self, p: usize, kappa: usize, a: usize) -> f64 {
        self.factors[p][kappa * self.n_actions + a]
    }

    /// `Q_pq(a, b)` with `a` the action of node `p`.
    pub fn pair_value(&self, p: usize, a: usize, q: usize, b: usize) -> f64 {
        let mut s = 0.0;
        for kappa in 0..self.rank {
            s += self.factor(p, kappa, a) * self.factor(q, kappa, b);
        }
        self.sign * s
    }

    /// `|A| x |A|` matrix oriented with node `p` on the rows.
    pub fn pair_matrix(&self, p: usize, q: usize) -> Vec<Vec<f64>> {
        (0..self.n_actions)
            .map(|a| (0..self.n_actions).map(|b| self.pair_value(p, a, q, b)).collect())
            .collect()
    }

    fn check_actions(&self, actions: &[usize]) -> Result<()> {
        if actions.len() != self.nodes.len() {
            return Err(Error::domain(format!(
                "joint action covers {} agents, {} are active",
                actions.len(),
                self.nodes.len()
            )));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= self.n_actions) {
            return Err(Error::domain(format!("action {a} out of range")));
        }
        Ok(())
    }

    /// Joint Q-value at a joint action given in node order.
    pub fn joint_q(&self, actions: &[usize]) -> Result<(f64, JointQBreakdown)> {
        self.check_actions(actions)?;
        let individual: Vec<f64> = self
            .individual
            .iter()
            .zip(actions)
            .map(|(q, &a)| q[a])
            .collect();
        let pairwise: Vec<_> = self
            .pairs
            .iter()
            .map(|&(p, q)| {
                (
                    (self.nodes[p], self.nodes[q]),
                    self.pair_value(p, actions[p], q, actions[q]),
                )
            })
            .collect();
        let total = pairwise.iter().map(|x| x.1).sum::<f64>() + individual.iter().sum::<f64>();
        Ok((
            total,
            JointQBreakdown {
                individual,
                pairwise,
                total,
            },
        ))
    }

    /// Adds `scale * d joint_q / d utilities` at `actions` into `d`.
    pub fn joint_q_backward(&self, actions: &[usize], scale: f64, d: &mut UtilityGrads) -> Result<()> {
        self.check_actions(actions)?;
        for (p, &a) in actions.iter().enumerate() {
            d.individual[p][a] += scale;
        }
        let na = self.n_actions;
        for &(p, q) in &self.pairs {
            let (a, b) = (actions[p], actions[q]);
            for kappa in 0..self.rank {
                let fp = self.factor(p, kappa, a);
                let fq = self.factor(q, kappa, b);
                d.factors[p][kappa * na + a] += scale * self.sign * fq;
                d.factors[q][kappa * na + b] += scale * self.sign * fp;
            }
        }
        Ok(())
    }

    /// `M_p pi` for a distribution over node `p`'s actions.
    fn projected(&self, p: usize, pi: &[f64]) -> Vec<f64> {
        (0..self.rank)
            .map(|kappa| (0..self.n_actions).map(|a| self.factor(p, kappa, a) * pi[a]).sum())
            .collect()
    }

    /// Expected joint Q for each learner action when teammates (nodes
    /// `1..`) act independently according to `policies`.
    pub fn learner_action_values(&self, policies: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = self.nodes.len();
        if policies.len() + 1 != n {
            return Err(Error::domain(format!(
                "{} teammate policies for {} teammates",
                policies.len(),
                n - 1
            )));
        }
        if let Some(p) = policies.iter().find(|p| p.len() != self.n_actions) {
            return Err(Error::Shape {
                context: "teammate policy",
                expected: self.n_actions,
                got: p.len(),
            });
        }
        let pi = |p: usize| &policies[p - 1];
        let expect = |v: &[f64], p: usize| v.iter().zip(pi(p)).map(|(x, w)| x * w).sum::<f64>();
        let proj: Vec<Vec<f64>> = (1..n).map(|p| self.projected(p, pi(p))).collect();

        let mut constant = 0.0;
        for p in 1..n {
            constant += expect(&self.individual[p], p);
        }
        for &(p, q) in self.pairs.iter().filter(|&&(p, _)| p != 0) {
            let dot: f64 = proj[p - 1].iter().zip(&proj[q - 1]).map(|(x, y)| x * y).sum();
            constant += self.sign * dot;
        }
        let mut values: Vec<f64> = self.individual[0].iter().map(|q| q + constant).collect();
        for &(_, q) in self.pairs.iter().filter(|&&(p, _)| p == 0) {
            for (a, v) in values.iter_mut().enumerate() {
                let s: f64 = (0..self.rank)
                    .map(|kappa| self.factor(0, kappa, a) * proj[q - 1][kappa])
                    .sum();
                *v += self.sign * s;
            }
        }
        Ok(values)
    }

    pub fn min_individual(&self) -> f64 {
        self.individual.iter().flatten().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn min_pairwise(&self) -> f64 {
        let mut m = f64::INFINITY;
        for &(p, q) in &self.pairs {
            for row in self.pair_matrix(p, q) {
                m = row.into_iter().fold(m, f64::min);
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Topology;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(indiv: RangeConstraint, pair: RangeConstraint) -> (ParameterStore, ValueModel) {
        let mut store = ParameterStore::new();
        let cfg = ValueConfig {
            obs_dim: 3,
            n_actions: 4,
            embed: 5,
            hidden: 6,
            rank: 2,
            indiv_range: indiv,
            pair_range: pair,
            activation: Activation::Tanh,
        };
        let m = ValueModel::new(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        (store, m)
    }

    fn embeddings(n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        (0..n).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn rank_must_be_below_action_count() {
        let mut store = ParameterStore::new();
        let cfg = ValueConfig {
            obs_dim: 3,
            n_actions: 5,
            embed: 4,
            hidden: 4,
            rank: 5,
            indiv_range: RangeConstraint::Free,
            pair_range: RangeConstraint::Free,
            activation: Activation::ReLU,
        };
        let r = ValueModel::new(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn ranges_hold() {
        let g = DynamicAffinityGraph::build(Topology::Complete, 0, [0, 1, 2]).unwrap();
        let (s, m) = model(RangeConstraint::Pos, RangeConstraint::Pos);
        let u = m.utilities(s.values(), &embeddings(3), &g).unwrap();
        assert!(u.min_individual() > 0.0);
        assert!(u.min_pairwise() >= 0.0);
        let (s, m) = model(RangeConstraint::Zero, RangeConstraint::Neg);
        let u = m.utilities(s.values(), &embeddings(3), &g).unwrap();
        assert!(u.individual.iter().flatten().all(|&v| v == 0.0));
        assert!(u.pairs.iter().all(|&(p, q)| u.pair_matrix(p, q).iter().flatten().all(|&v| v <= 0.0)));
    }

    #[test]
    fn transpose_symmetry_is_bit_exact() {
        let g = DynamicAffinityGraph::build(Topology::Complete, 0, [0, 1, 2]).unwrap();
        let (s, m) = model(RangeConstraint::Free, RangeConstraint::Free);
        let u = m.utilities(s.values(), &embeddings(3), &g).unwrap();
        for &(p, q) in &u.pairs {
            let a = u.pair_matrix(p, q);
            let b = u.pair_matrix(q, p);
            for x in 0..4 {
                for y in 0..4 {
                    assert_eq!(a[x][y].to_bits(), b[y][x].to_bits());
                }
            }
        }
    }

    #[test]
    fn single_agent_joint_q_is_individual() {
        let g = DynamicAffinityGraph::build(Topology::Star, 0, [0]).unwrap();
        let (s, m) = model(RangeConstraint::Free, RangeConstraint::Free);
        let u = m.utilities(s.values(), &embeddings(1), &g).unwrap();
        let (total, _) = u.joint_q(&[2]).unwrap();
        assert_eq!(total, u.individual[0][2]);
        assert!(u.joint_q(&[2, 1]).is_err());
    }

    #[test]
    fn rank_one_outer_product() {
        let u = Utilities {
            nodes: vec![0, 1],
            pairs: vec![(0, 1)],
            individual: vec![vec![0.0; 3]; 2],
            factors: vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 4.0]],
            n_actions: 3,
            rank: 1,
            sign: 1.0,
        };
        let m = u.pair_matrix(0, 1);
        let expected = [[-1.0, 0.5, 4.0], [-2.0, 1.0, 8.0], [-3.0, 1.5, 12.0]];
        for a in 0..3 {
            assert_eq!(m[a], expected[a]);
        }
    }
}
