use rand::Rng;

use super::mlp::{Activation, Mlp, MlpTrace, NetSpec, OutputTransform};
use super::store::ParameterStore;
use crate::error::{Error, Result};

/// One round of edge-to-node message passing:
/// `out_j = g(x_j ++ sum_{(k,j) in E} f(x_k ++ x_j))`.
#[derive(Clone, Debug, PartialEq)]
pub struct MessagePassing {
    edge_net: Mlp,
    node_net: Mlp,
    feature_dim: usize,
    message_dim: usize,
}

pub struct MessageTrace {
    edges: Vec<(usize, usize)>,
    edge_traces: Vec<MlpTrace>,
    node_traces: Vec<MlpTrace>,
}

impl MessagePassing {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        feature_dim: usize,
        message_dim: usize,
        out_dim: usize,
        hidden: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let edge_net = Mlp::new(
            store,
            &format!("{name}.edge"),
            NetSpec::new(
                vec![2 * feature_dim, hidden, message_dim],
                activation,
                OutputTransform::None,
            ),
            rng,
        )?;
        let node_net = Mlp::new(
            store,
            &format!("{name}.node"),
            NetSpec::new(
                vec![feature_dim + message_dim, hidden, out_dim],
                activation,
                OutputTransform::None,
            ),
            rng,
        )?;
        Ok(MessagePassing {
            edge_net,
            node_net,
            feature_dim,
            message_dim,
        })
    }

    /// Builds from caller-supplied edge and node networks (used by tests that
    /// need smooth activations).
    pub fn from_nets(edge_net: Mlp, node_net: Mlp) -> Result<Self> {
        let feature_dim = edge_net.input_dim() / 2;
        let message_dim = edge_net.output_dim();
        if edge_net.input_dim() != 2 * feature_dim
            || node_net.input_dim() != feature_dim + message_dim
        {
            return Err(Error::domain("edge/node network widths are inconsistent"));
        }
        Ok(MessagePassing {
            edge_net,
            node_net,
            feature_dim,
            message_dim,
        })
    }

    pub fn edge_net(&self) -> &Mlp {
        &self.edge_net
    }

    pub fn node_net(&self) -> &Mlp {
        &self.node_net
    }

    pub fn output_dim(&self) -> usize {
        self.node_net.output_dim()
    }

    fn check(&self, nodes: &[Vec<f64>], edges: &[(usize, usize)]) -> Result<()> {
        if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| a >= nodes.len() || b >= nodes.len()) {
            return Err(Error::domain(format!("edge ({a},{b}) references a missing node")));
        }
        if let Some(x) = nodes.iter().find(|x| x.len() != self.feature_dim) {
            return Err(Error::Shape {
                context: "message passing node feature",
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(
        &self,
        params: &[f64],
        nodes: &[Vec<f64>],
        edges: &[(usize, usize)],
    ) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward_traced(params, nodes, edges)?.0)
    }

    pub fn forward_traced(
        &self,
        params: &[f64],
        nodes: &[Vec<f64>],
        edges: &[(usize, usize)],
    ) -> Result<(Vec<Vec<f64>>, MessageTrace)> {
        self.check(nodes, edges)?;
        let mut inbox = vec![vec![0.0; self.message_dim]; nodes.len()];
        let mut edge_traces = Vec::with_capacity(edges.len());
        for &(src, dst) in edges {
            let input = concat(&nodes[src], &nodes[dst]);
            let (m, t) = self.edge_net.forward_traced(params, &input)?;
            for (acc, v) in inbox[dst].iter_mut().zip(&m) {
                *acc += v;
            }
            edge_traces.push(t);
        }
        let mut outs = Vec::with_capacity(nodes.len());
        let mut node_traces = Vec::with_capacity(nodes.len());
        for (x, m) in nodes.iter().zip(&inbox) {
            let (o, t) = self.node_net.forward_traced(params, &concat(x, m))?;
            outs.push(o);
            node_traces.push(t);
        }
        Ok((
            outs,
            MessageTrace {
                edges: edges.to_vec(),
                edge_traces,
                node_traces,
            },
        ))
    }

    /// Gradient w.r.t. each node feature vector.
    pub fn backward(
        &self,
        params: &[f64],
        trace: &MessageTrace,
        d_out: &[Vec<f64>],
        grads: &mut [f64],
    ) -> Result<Vec<Vec<f64>>> {
        if d_out.len() != trace.node_traces.len() {
            return Err(Error::State("gradient count does not match traced nodes".into()));
        }
        let f = self.feature_dim;
        let mut d_nodes = vec![vec![0.0; f]; d_out.len()];
        let mut d_inbox = vec![vec![0.0; self.message_dim]; d_out.len()];
        for (j, (t, d)) in trace.node_traces.iter().zip(d_out).enumerate() {
            let dx = self.node_net.backward(params, t, d, grads)?;
            add(&mut d_nodes[j], &dx[..f]);
            d_inbox[j].copy_from_slice(&dx[f..]);
        }
        for (&(src, dst), t) in trace.edges.iter().zip(&trace.edge_traces) {
            let dx = self.edge_net.backward(params, t, &d_inbox[dst], grads)?;
            add(&mut d_nodes[src], &dx[..f]);
            add(&mut d_nodes[dst], &dx[f..]);
        }
        Ok(d_nodes)
    }
}

pub(crate) fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

pub(crate) fn add(acc: &mut [f64], x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParameterStore, MessagePassing) {
        let mut store = ParameterStore::new();
        let mp =
            MessagePassing::new(
                &mut store,
                "mp",
                3,
                4,
                2,
                5,
                Activation::ReLU,
                &mut ChaCha8Rng::seed_from_u64(3),
            )
                .unwrap();
        (store, mp)
    }

    fn nodes() -> Vec<Vec<f64>> {
        vec![vec![0.1, -0.2, 0.3], vec![0.5, 0.4, -0.1], vec![-0.3, 0.2, 0.9]]
    }

    #[test]
    fn no_edges_uses_zero_message() {
        let (store, mp) = setup();
        let out = mp.forward(store.values(), &nodes(), &[]).unwrap();
        for (x, o) in nodes().iter().zip(&out) {
            let direct = mp.node_net.forward(store.values(), &concat(x, &[0.0; 4])).unwrap();
            assert_eq!(o, &direct);
        }
    }

    #[test]
    fn permutation_equivariant() {
        let (store, mp) = setup();
        let edges = [(0, 1), (1, 0), (0, 2), (2, 0), (1, 2)];
        let out = mp.forward(store.values(), &nodes(), &edges).unwrap();
        // relabel nodes by perm: new index p holds old node perm[p]
        let perm = [2, 0, 1];
        let inv = [1, 2, 0];
        let pnodes: Vec<_> = perm.iter().map(|&o| nodes()[o].clone()).collect();
        let pedges: Vec<_> = edges.iter().map(|&(a, b)| (inv[a], inv[b])).collect();
        let pout = mp.forward(store.values(), &pnodes, &pedges).unwrap();
        for (p, &o) in perm.iter().enumerate() {
            for (a, b) in pout[p].iter().zip(&out[o]) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn edge_order_invariant() {
        let (store, mp) = setup();
        let edges = [(0, 1), (2, 1), (1, 0)];
        let rev: Vec<_> = edges.iter().rev().copied().collect();
        let a = mp.forward(store.values(), &nodes(), &edges).unwrap();
        let b = mp.forward(store.values(), &nodes(), &rev).unwrap();
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn bad_edge_is_error() {
        let (store, mp) = setup();
        assert!(mp.forward(store.values(), &nodes(), &[(0, 5)]).is_err());
    }
}
