//! Type embeddings and the teammate policy model.
//!
//! Each active agent carries a recurrent hidden state (its type embedding)
//! that is advanced once per step on `u_t ++ x_{t,j}`. Joining agents start
//! from zero and departing agents are dropped. Teammate policies come from
//! one round of message passing over the affinity graph followed by a
//! softmax policy head.
//!
//! Losses treat the previous hidden state as a constant input, so gradients
//! are truncated after one recurrent step.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AgentId, DynamicAffinityGraph};
use crate::nn::{
    Activation, GruCell, GruTrace, MessagePassing, MessageTrace, Mlp, MlpTrace, NetSpec,
    OutputTransform, ParameterStore,
};
use crate::world::ObsBatch;

/// Smallest probability fed to the logarithm in the likelihood loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TypeEmbeddingTable {
    width: usize,
    entries: BTreeMap<AgentId, Vec<f64>>,
}

impl TypeEmbeddingTable {
    pub fn new(width: usize) -> Self {
        TypeEmbeddingTable {
            width,
            entries: BTreeMap::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, agent: AgentId) -> Option<&[f64]> {
        self.entries.get(&agent).map(Vec::as_slice)
    }

    pub fn ids(&self) -> BTreeSet<AgentId> {
        self.entries.keys().copied().collect()
    }

    pub fn entries(&self) -> &BTreeMap<AgentId, Vec<f64>> {
        &self.entries
    }

    /// Hidden states that carry over into the next step: current entries
    /// minus departed agents. Joining agents are absent and start at zero.
    pub fn carried(&self, left: &BTreeSet<AgentId>) -> BTreeMap<AgentId, Vec<f64>> {
        self.entries
            .iter()
            .filter(|(id, _)| !left.contains(id))
            .map(|(&id, h)| (id, h.clone()))
            .collect()
    }

    /// Embeddings in the given node order.
    pub fn for_nodes(&self, nodes: &[AgentId]) -> Result<Vec<Vec<f64>>> {
        nodes
            .iter()
            .map(|id| {
                self.entries
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::domain(format!("no embedding for agent {id}")))
            })
            .collect()
    }

    /// Drops `left`, zero-initializes `joined`, then advances every active
    /// entry one recurrent step on its observation record.
    pub fn update(
        &self,
        cell: &GruCell,
        params: &[f64],
        obs: &ObsBatch,
        joined: &BTreeSet<AgentId>,
        left: &BTreeSet<AgentId>,
    ) -> Result<Self> {
        if cell.hidden() != self.width {
            return Err(Error::Shape {
                context: "embedding width",
                expected: self.width,
                got: cell.hidden(),
            });
        }
        let mut active: BTreeSet<AgentId> =
            self.entries.keys().filter(|id| !left.contains(id)).copied().collect();
        active.extend(joined.iter().copied());
        let zero = vec![0.0; self.width];
        let mut entries = BTreeMap::new();
        for id in active {
            let input = obs
                .input(id)
                .ok_or_else(|| Error::domain(format!("no observation for active agent {id}")))?;
            let prev = if joined.contains(&id) {
                &zero
            } else {
                &self.entries[&id]
            };
            entries.insert(id, cell.forward(params, &input, prev)?);
        }
        Ok(TypeEmbeddingTable {
            width: self.width,
            entries,
        })
    }
}

/// Advances the listed nodes from `prev` (zero when absent) and keeps traces.
pub fn embed_nodes(
    cell: &GruCell,
    params: &[f64],
    obs: &ObsBatch,
    prev: &BTreeMap<AgentId, Vec<f64>>,
    nodes: &[AgentId],
) -> Result<(Vec<Vec<f64>>, Vec<GruTrace>)> {
    let zero = vec![0.0; cell.hidden()];
    let mut out = Vec::with_capacity(nodes.len());
    let mut traces = Vec::with_capacity(nodes.len());
    for id in nodes {
        let input = obs
            .input(*id)
            .ok_or_else(|| Error::domain(format!("no observation for active agent {id}")))?;
        let (h, t) = cell.forward_traced(params, &input, prev.get(id).unwrap_or(&zero))?;
        out.push(h);
        traces.push(t);
    }
    Ok((out, traces))
}

/// Accumulates parameter gradients of [`embed_nodes`]; the previous hidden
/// state is treated as a constant.
pub fn embed_backward(
    cell: &GruCell,
    params: &[f64],
    traces: &[GruTrace],
    d_emb: &[Vec<f64>],
    grads: &mut [f64],
) -> Result<()> {
    if traces.len() != d_emb.len() {
        return Err(Error::State("embedding gradient does not match traced nodes".into()));
    }
    for (t, d) in traces.iter().zip(d_emb) {
        cell.backward(params, t, d, grads)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentModelConfig {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub embed: usize,
    pub hidden: usize,
    pub activation: Activation,
    /// Scale of the likelihood loss.
    pub weight_predict: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentModel {
    config: AgentModelConfig,
    cell: GruCell,
    relational: MessagePassing,
    head: Mlp,
}

pub struct PolicyTrace {
    relational: MessageTrace,
    heads: Vec<MlpTrace>,
}

/// Edges of `graph` as node positions.
pub fn node_edges(graph: &DynamicAffinityGraph) -> Vec<(usize, usize)> {
    graph
        .edges()
        .iter()
        .map(|&(j, k)| (graph.index_of(j).expect("edge node"), graph.index_of(k).expect("edge node")))
        .collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - top).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl AgentModel {
    pub fn new(store: &mut ParameterStore, config: AgentModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let cell = GruCell::new(store, "model.cell", config.obs_dim, config.embed, rng);
        let relational = MessagePassing::new(
            store,
            "model.relational",
            config.embed,
            config.hidden,
            config.hidden,
            config.hidden,
            config.activation,
            rng,
        )?;
        let head = Mlp::new(
            store,
            "model.head",
            NetSpec::new(
                vec![config.hidden, config.hidden, config.n_actions],
                config.activation,
                OutputTransform::None,
            ),
            rng,
        )?;
        Ok(AgentModel {
            config,
            cell,
            relational,
            head,
        })
    }

    pub fn config(&self) -> &AgentModelConfig {
        &self.config
    }

    pub fn cell(&self) -> &GruCell {
        &self.cell
    }

    pub fn relational(&self) -> &MessagePassing {
        &self.relational
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    /// Policy-head logits for each teammate (graph nodes `1..`).
    pub fn logits_traced(
        &self,
        params: &[f64],
        embeddings: &[Vec<f64>],
        graph: &DynamicAffinityGraph,
    ) -> Result<(Vec<Vec<f64>>, PolicyTrace)> {
        if embeddings.len() != graph.len() {
            return Err(Error::Shape {
                context: "embeddings per graph node",
                expected: graph.len(),
                got: embeddings.len(),
            });
        }
        let (nbar, relational) =
            self.relational.forward_traced(params, embeddings, &node_edges(graph))?;
        let mut logits = Vec::with_capacity(nbar.len().saturating_sub(1));
        let mut heads = Vec::with_capacity(logits.capacity());
        for n in &nbar[1..] {
            let (z, t) = self.head.forward_traced(params, n)?;
            logits.push(z);
            heads.push(t);
        }
        Ok((logits, PolicyTrace { relational, heads }))
    }

    /// Teammate action distributions in graph node order (learner excluded).
    pub fn policies(
        &self,
        params: &[f64],
        embeddings: &[Vec<f64>],
        graph: &DynamicAffinityGraph,
    ) -> Result<Vec<Vec<f64>>> {
        let (logits, _) = self.logits_traced(params, embeddings, graph)?;
        Ok(logits.iter().map(|z| softmax(z)).collect())
    }

    /// Returns the gradient w.r.t. each node embedding.
    pub fn backward(
        &self,
        params: &[f64],
        trace: &PolicyTrace,
        d_logits: &[Vec<f64>],
        grads: &mut [f64],
    ) -> Result<Vec<Vec<f64>>> {
        if d_logits.len() != trace.heads.len() {
            return Err(Error::State("logit gradient does not match traced teammates".into()));
        }
        let mut d_nbar = vec![vec![0.0; self.config.hidden]];
        for (t, d) in trace.heads.iter().zip(d_logits) {
            d_nbar.push(self.head.backward(params, t, d, grads)?);
        }
        self.relational.backward(params, &trace.relational, &d_nbar, grads)
    }

    pub fn infer_teammate_policies(
        &self,
        params: &[f64],
        table: &TypeEmbeddingTable,
        graph: &DynamicAffinityGraph,
    ) -> Result<BTreeMap<AgentId, Vec<f64>>> {
        let keys = table.ids();
        if keys.len() != graph.len() || graph.nodes().iter().any(|id| !keys.contains(id)) {
            return Err(Error::domain("graph nodes and embedding table disagree"));
        }
        let emb = table.for_nodes(graph.nodes())?;
        let pols = self.policies(params, &emb, graph)?;
        Ok(graph.nodes()[1..].iter().copied().zip(pols).collect())
    }
}

/// One step of observed teammate behaviour.
#[derive(Clone, Copy, Debug)]
pub struct ModelSample<'a> {
    pub obs: &'a ObsBatch,
    /// Hidden states entering this step; missing agents start at zero.
    pub prev: &'a BTreeMap<AgentId, Vec<f64>>,
    pub graph: &'a DynamicAffinityGraph,
    pub teammate_actions: &'a BTreeMap<AgentId, usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NllReport {
    /// `weight_predict * nll`.
    pub loss: f64,
    /// Mean negative log-likelihood per teammate-step.
    pub nll: f64,
    pub terms: usize,
    /// Terms whose probability fell below [`PROB_FLOOR`].
    pub clamped: usize,
}

/// Weighted mean negative log-likelihood of the recorded teammate actions.
/// Gradients are accumulated into `grads` when given.
pub fn agent_model_loss(
    model: &AgentModel,
    params: &[f64],
    samples: &[ModelSample<'_>],
    mut grads: Option<&mut [f64]>,
) -> Result<NllReport> {
    let terms: usize = samples.iter().map(|s| s.graph.len() - 1).sum();
    if terms == 0 {
        return Ok(NllReport::default());
    }
    let scale = model.config.weight_predict / terms as f64;
    let mut total = 0.0;
    let mut clamped = 0;
    for s in samples {
        let nodes = s.graph.nodes();
        let (emb, cell_traces) = embed_nodes(&model.cell, params, s.obs, s.prev, nodes)?;
        let (logits, trace) = model.logits_traced(params, &emb, s.graph)?;
        let mut d_logits = Vec::with_capacity(logits.len());
        for (id, z) in nodes[1..].iter().zip(&logits) {
            let a = *s
                .teammate_actions
                .get(id)
                .ok_or_else(|| Error::domain(format!("no recorded action for teammate {id}")))?;
            if a >= z.len() {
                return Err(Error::domain(format!("recorded action {a} out of range")));
            }
            let p = softmax(z);
            let mut d = p.clone();
            if p[a] < PROB_FLOOR {
                clamped += 1;
                total -= PROB_FLOOR.ln();
                d.iter_mut().for_each(|v| *v = 0.0);
            } else {
                total -= p[a].ln();
                d[a] -= 1.0;
                d.iter_mut().for_each(|v| *v *= scale);
            }
            d_logits.push(d);
        }
        if let Some(g) = grads.as_deref_mut() {
            let d_emb = model.backward(params, &trace, &d_logits, g)?;
            embed_backward(&model.cell, params, &cell_traces, &d_emb, g)?;
        }
    }
    let nll = total / terms as f64;
    Ok(NllReport {
        loss: model.config.weight_predict * nll,
        nll,
        terms,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Topology;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParameterStore, AgentModel) {
        let mut store = ParameterStore::new();
        let cfg = AgentModelConfig {
            obs_dim: 6,
            n_actions: 5,
            embed: 4,
            hidden: 5,
            activation: Activation::Tanh,
            weight_predict: 1.0,
        };
        let m = AgentModel::new(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        (store, m)
    }

    fn batch(ids: &[AgentId]) -> ObsBatch {
        ObsBatch {
            shared: vec![0.5, -0.25],
            agents: ids.iter().map(|&i| (i, [i as f64 * 0.1, 0.3, 0.0, 1.0])).collect(),
        }
    }

    fn set(ids: &[usize]) -> BTreeSet<usize> {
        ids.iter().copied().collect()
    }

    #[test]
    fn table_tracks_membership() {
        let (store, m) = setup();
        let t0 = TypeEmbeddingTable::new(4);
        let t1 = t0.update(m.cell(), store.values(), &batch(&[0, 1, 2]), &set(&[0, 1, 2]), &set(&[])).unwrap();
        assert_eq!(t1.ids(), set(&[0, 1, 2]));
        let t2 = t1.update(m.cell(), store.values(), &batch(&[0, 1, 3]), &set(&[3]), &set(&[2])).unwrap();
        assert_eq!(t2.ids(), set(&[0, 1, 3]));
        let fresh = m.cell().forward(store.values(), &batch(&[3]).input(3).unwrap(), &[0.0; 4]).unwrap();
        assert_eq!(t2.get(3).unwrap(), fresh.as_slice());
        assert!(t1.update(m.cell(), store.values(), &batch(&[0, 1]), &set(&[]), &set(&[])).is_err());
    }

    #[test]
    fn policies_are_distributions() {
        let (store, m) = setup();
        let g = DynamicAffinityGraph::build(Topology::Complete, 0, [0, 1, 2]).unwrap();
        let t = TypeEmbeddingTable::new(4)
            .update(m.cell(), store.values(), &batch(&[0, 1, 2]), &set(&[0, 1, 2]), &set(&[]))
            .unwrap();
        let pols = m.infer_teammate_policies(store.values(), &t, &g).unwrap();
        assert_eq!(pols.keys().copied().collect::<Vec<_>>(), vec![1, 2]);
        for p in pols.values() {
            assert!(p.iter().all(|&v| v >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_head_gives_uniform() {
        let (mut store, m) = setup();
        for seg in store.segments().to_vec() {
            if seg.name.starts_with("model.head.1") {
                seg.span.of_mut(store.values_mut()).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let g = DynamicAffinityGraph::build(Topology::Star, 0, [0, 1]).unwrap();
        let emb = vec![vec![0.3; 4], vec![-0.2; 4]];
        let p = m.policies(store.values(), &emb, &g).unwrap();
        assert!(p[0].iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let acts: BTreeMap<_, _> = [(1, 3)].into_iter().collect();
        let prev = BTreeMap::new();
        let obs = batch(&[0, 1]);
        let sample = ModelSample { obs: &obs, prev: &prev, graph: &g, teammate_actions: &acts };
        let r = agent_model_loss(&m, store.values(), &[sample], None).unwrap();
        assert!((r.nll - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn missing_teammate_action_is_error() {
        let (store, m) = setup();
        let g = DynamicAffinityGraph::build(Topology::Star, 0, [0, 1]).unwrap();
        let acts = BTreeMap::new();
        let prev = BTreeMap::new();
        let obs = batch(&[0, 1]);
        let sample = ModelSample { obs: &obs, prev: &prev, graph: &g, teammate_actions: &acts };
        assert!(agent_model_loss(&m, store.values(), &[sample], None).is_err());
    }
}
