//! Self-attention graph construction: region embeddings become nodes with
//! 24-dim features and a row-stochastic attention adjacency.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{MimError, Result};
use crate::layers::{Builder, WeightInit};
use crate::params::{Bound, ParamId, ParamStore};

/// Node features, weighted directed adjacency and the original region index
/// of each node.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSample {
    pub node_features: Tensor,
    pub adjacency: Tensor,
    pub node_ids: Vec<usize>,
}

impl GraphSample {
    pub fn new(node_features: Tensor, adjacency: Tensor, node_ids: Vec<usize>) -> Result<Self> {
        let n = node_ids.len();
        if node_features.rank() != 2 || node_features.rows() != n || adjacency.shape() != [n, n] {
            return Err(MimError::Shape {
                shape: adjacency.shape().to_vec(),
                reason: format!("graph with {n} node ids needs [n, d] features and [n, n] adjacency"),
            });
        }
        Ok(Self {
            node_features,
            adjacency,
            node_ids,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }
}

/// A graph whose tensors live on a tape.
#[derive(Clone, Debug)]
pub struct GraphVars {
    pub x: Var,
    pub adj: Var,
    pub node_ids: Vec<usize>,
}

impl GraphVars {
    pub fn from_sample<'a>(tape: &mut Tape<'a>, g: &'a GraphSample) -> Self {
        Self {
            x: tape.borrowed(&g.node_features, false),
            adj: tape.borrowed(&g.adjacency, false),
            node_ids: g.node_ids.clone(),
        }
    }

    pub fn to_sample(&self, tape: &Tape<'_>) -> GraphSample {
        GraphSample {
            node_features: tape.tensor(self.x),
            adjacency: tape.tensor(self.adj),
            node_ids: self.node_ids.clone(),
        }
    }
}

/// Single-head scaled dot-product attention with `W_q, W_k, W_v : in × out`.
#[derive(Clone, Debug)]
pub struct AttentionGraph {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    in_dim: usize,
    out_dim: usize,
}

impl AttentionGraph {
    pub fn new(b: &mut Builder<'_>, in_dim: usize, out_dim: usize) -> Self {
        Self {
            wq: b.weight("attention.wq", &[in_dim, out_dim], WeightInit::Xavier),
            wk: b.weight("attention.wk", &[in_dim, out_dim], WeightInit::Xavier),
            wv: b.weight("attention.wv", &[in_dim, out_dim], WeightInit::Xavier),
            in_dim,
            out_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// `A = softmax_rows(Q·Kᵀ / √d)`, node features `A·V`.
    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, h: Var) -> Result<GraphVars> {
        let r = match tape.shape(h) {
            [r, d] if *d == self.in_dim => *r,
            s => {
                return Err(MimError::Dimension {
                    op: "build_graph",
                    lhs: s.to_vec(),
                    rhs: vec![self.in_dim, self.out_dim],
                })
            }
        };
        if r < 2 {
            return Err(MimError::Contract("graph construction needs at least 2 regions".into()));
        }
        let q = tape.matmul(h, p.var(self.wq))?;
        let k = tape.matmul(h, p.var(self.wk))?;
        let v = tape.matmul(h, p.var(self.wv))?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (self.out_dim as f64).sqrt());
        let adj = tape.softmax_rows(scores)?;
        let x = tape.matmul(adj, v)?;
        Ok(GraphVars {
            x,
            adj,
            node_ids: (0..r).collect(),
        })
    }

    /// Builds the graph for an `R × in_dim` embedding matrix.
    pub fn build_graph(&self, params: &ParamStore, h: &Tensor) -> Result<GraphSample> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let hv = tape.borrowed(h, false);
        let g = self.forward(&mut tape, &p, hv)?;
        Ok(g.to_sample(&tape))
    }
}
