//! Gated graph network: GRU-updated message passing, top-k pooling after the
//! first layers, and a mean/max/attention readout into the graph embedding `c`.

use serde::{Deserialize, Serialize};

use crate::attention::{GraphSample, GraphVars};
use crate::autodiff::{Tape, Var};
use crate::error::{MimError, Result};
use crate::layers::{Builder, Linear, WeightInit};
use crate::params::{Bound, ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnnConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    /// Keep ratios for the pools following layers `1..=topk_ratios.len()`.
    pub topk_ratios: Vec<f64>,
    pub attention_pool_dim: usize,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            hidden_dim: 24,
            topk_ratios: vec![0.8, 0.8, 0.3],
            attention_pool_dim: 48,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden_dim == 0 || self.attention_pool_dim == 0 {
            return Err(MimError::Config("gnn sizes must be positive".into()));
        }
        if self.topk_ratios.len() > self.layers {
            return Err(MimError::Config("more top-k pools than graph layers".into()));
        }
        if let Some(r) = self.topk_ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(MimError::Config(format!("top-k ratio {r} outside (0, 1]")));
        }
        Ok(())
    }

    /// Width of `c`: mean (hidden) + max (hidden) + attention pool.
    pub fn embedding_dim(&self) -> usize {
        2 * self.hidden_dim + self.attention_pool_dim
    }

    /// Node counts after each pool, starting from `n` nodes.
    pub fn pooled_counts(&self, mut n: usize) -> Vec<usize> {
        self.topk_ratios
            .iter()
            .map(|&r| {
                n = top_k_count(n, r);
                n
            })
            .collect()
    }
}

/// `ceil(ratio · n)` clamped to `1..=n`.
///
/// A tiny slack keeps products like `0.3 · 10` (which is `3.0000000000000004`
/// in binary) from rounding up an extra node.
pub fn top_k_count(n: usize, ratio: f64) -> usize {
    let k = (ratio * n as f64 - 1e-9).ceil() as usize;
    k.clamp(1, n.max(1))
}

/// Outcome of one top-k selection.
#[derive(Clone, Debug, PartialEq)]
pub struct TopkSelection {
    pub scores: Vec<f64>,
    /// Positions (rows) of the kept nodes in the input graph, in node-id order.
    pub kept_positions: Vec<usize>,
    /// Original node ids of the kept nodes, ascending.
    pub kept_indices: Vec<usize>,
    pub k: usize,
}

/// Keeps the `ceil(ratio·n)` highest scores; ties go to the lower node id.
pub fn select_top_k(scores: &[f64], node_ids: &[usize], ratio: f64) -> Result<TopkSelection> {
    let n = scores.len();
    if n == 0 {
        return Err(MimError::Contract("top-k pooling of an empty graph".into()));
    }
    if node_ids.len() != n {
        return Err(MimError::Contract("scores and node ids differ in length".into()));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(MimError::Config(format!("top-k ratio {ratio} outside (0, 1]")));
    }
    let k = top_k_count(n, ratio);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(node_ids[a].cmp(&node_ids[b]))
    });
    let mut kept: Vec<usize> = order[..k].to_vec();
    kept.sort_by_key(|&p| node_ids[p]);
    Ok(TopkSelection {
        scores: scores.to_vec(),
        kept_indices: kept.iter().map(|&p| node_ids[p]).collect(),
        kept_positions: kept,
        k,
    })
}

/// One gated layer: `m_v = Σ_u A[u,v]·(W h_u) + b`, then a GRU cell.
#[derive(Clone, Debug)]
pub struct GgnnLayer {
    pub message: Linear,
    pub message_bias: ParamId,
    w_r: Linear,
    u_r: Linear,
    w_z: Linear,
    u_z: Linear,
    w_h: Linear,
    u_h: Linear,
}

impl GgnnLayer {
    fn new(b: &mut Builder<'_>, name: &str, d: usize) -> Self {
        let x = WeightInit::Xavier;
        Self {
            message: Linear::new(b, &format!("{name}.message"), d, d, false, x),
            message_bias: b.bias(&format!("{name}.message.bias"), d),
            w_r: Linear::new(b, &format!("{name}.w_r"), d, d, true, x),
            u_r: Linear::new(b, &format!("{name}.u_r"), d, d, false, x),
            w_z: Linear::new(b, &format!("{name}.w_z"), d, d, true, x),
            u_z: Linear::new(b, &format!("{name}.u_z"), d, d, false, x),
            w_h: Linear::new(b, &format!("{name}.w_h"), d, d, true, x),
            u_h: Linear::new(b, &format!("{name}.u_h"), d, d, false, x),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, g: &GraphVars) -> Result<GraphVars> {
        let h = g.x;
        let wh = self.message.forward(tape, p, h)?;
        let at = tape.transpose(g.adj)?;
        let m = tape.matmul(at, wh)?;
        let m = tape.add_row(m, p.var(self.message_bias))?;

        let r_m = self.w_r.forward(tape, p, m)?;
        let r_h = self.u_r.forward(tape, p, h)?;
        let r = tape.add(r_m, r_h)?;
        let r = tape.sigmoid(r);

        let z_m = self.w_z.forward(tape, p, m)?;
        let z_h = self.u_z.forward(tape, p, h)?;
        let z = tape.add(z_m, z_h)?;
        let z = tape.sigmoid(z);

        let c_m = self.w_h.forward(tape, p, m)?;
        let rh = tape.mul(r, h)?;
        let c_h = self.u_h.forward(tape, p, rh)?;
        let cand = tape.add(c_m, c_h)?;
        let cand = tape.tanh(cand);

        // h' = (1 - z) ⊙ h + z ⊙ h̃
        let delta = tape.sub(cand, h)?;
        let step = tape.mul(z, delta)?;
        let x = tape.add(h, step)?;
        Ok(GraphVars {
            x,
            adj: g.adj,
            node_ids: g.node_ids.clone(),
        })
    }
}

/// Learnable projection scoring for top-k pooling.
#[derive(Clone, Debug)]
pub struct TopkPool {
    pub projection: ParamId,
    pub ratio: f64,
}

impl TopkPool {
    /// Scores `h_v·p/‖p‖`, keeps the top nodes, gates them by `tanh(score)`
    /// and restricts the adjacency to the kept nodes (no renormalization).
    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, g: &GraphVars) -> Result<(GraphVars, TopkSelection)> {
        let d = tape.shape(g.x)[1];
        let unit = tape.normalize(p.var(self.projection))?;
        let unit = tape.reshape(unit, vec![d, 1])?;
        let scores = tape.matmul(g.x, unit)?;
        let sel = select_top_k(tape.value(scores), &g.node_ids, self.ratio)?;
        let kept_x = tape.gather_rows(g.x, &sel.kept_positions)?;
        let kept_s = tape.gather_rows(scores, &sel.kept_positions)?;
        let gate = tape.tanh(kept_s);
        let x = tape.mul_col(kept_x, gate)?;
        let adj = tape.submatrix(g.adj, &sel.kept_positions)?;
        Ok((
            GraphVars {
                x,
                adj,
                node_ids: sel.kept_indices.clone(),
            },
            sel,
        ))
    }
}

/// Mean, max and gated-attention readout.
#[derive(Clone, Debug)]
pub struct GlobalPool {
    pub gate: Linear,
    pub projection: Linear,
}

impl GlobalPool {
    /// `concat(mean_v h_v, max_v h_v, Σ_v σ(h_v·w_g + b_g)·(h_v·W_p))`.
    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, g: &GraphVars) -> Result<Var> {
        let mean = tape.mean_axis(g.x, 0)?;
        let max = tape.max_axis(g.x, 0)?;
        let gate = self.gate.forward(tape, p, g.x)?;
        let gate = tape.sigmoid(gate);
        let proj = self.projection.forward(tape, p, g.x)?;
        let gt = tape.transpose(gate)?;
        let att = tape.matmul(gt, proj)?;
        let att = tape.reshape(att, vec![self.projection.fan_out])?;
        tape.concat(&[mean, max, att], 0)
    }
}

/// Full graph pathway.
#[derive(Clone, Debug)]
pub struct GatedGnn {
    cfg: GnnConfig,
    pub layers: Vec<GgnnLayer>,
    pub pools: Vec<TopkPool>,
    pub readout: GlobalPool,
}

/// Tape-level result of [`GatedGnn::forward`].
#[derive(Clone, Debug)]
pub struct GnnOutput {
    pub c: Var,
    pub selections: Vec<TopkSelection>,
}

impl GatedGnn {
    pub fn new(b: &mut Builder<'_>, cfg: &GnnConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.hidden_dim;
        let layers = (0..cfg.layers)
            .map(|i| GgnnLayer::new(b, &format!("gnn.layer{i}"), d))
            .collect();
        let pools = cfg
            .topk_ratios
            .iter()
            .enumerate()
            .map(|(i, &ratio)| TopkPool {
                projection: b.weight(&format!("gnn.pool{i}.projection"), &[d], WeightInit::Xavier),
                ratio,
            })
            .collect();
        let readout = GlobalPool {
            gate: Linear::new(b, "gnn.readout.gate", d, 1, true, WeightInit::Xavier),
            projection: Linear::new(b, "gnn.readout.projection", d, cfg.attention_pool_dim, false, WeightInit::Xavier),
        };
        Ok(Self {
            cfg: cfg.clone(),
            layers,
            pools,
            readout,
        })
    }

    pub fn config(&self) -> &GnnConfig {
        &self.cfg
    }

    /// layer → pool for the first `pools.len()` layers, remaining layers, readout.
    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, g: GraphVars) -> Result<GnnOutput> {
        let d = self.cfg.hidden_dim;
        if tape.shape(g.x).get(1) != Some(&d) {
            return Err(MimError::Dimension {
                op: "gnn_forward",
                lhs: tape.shape(g.x).to_vec(),
                rhs: vec![g.node_ids.len(), d],
            });
        }
        let mut g = g;
        let mut selections = Vec::with_capacity(self.pools.len());
        for (i, layer) in self.layers.iter().enumerate() {
            g = layer.forward(tape, p, &g)?;
            if let Some(pool) = self.pools.get(i) {
                let (pooled, sel) = pool.forward(tape, p, &g)?;
                g = pooled;
                selections.push(sel);
            }
        }
        let c = self.readout.forward(tape, p, &g)?;
        Ok(GnnOutput { c, selections })
    }

    /// Applies layer `i` to a value-level graph.
    pub fn apply_layer(&self, params: &ParamStore, i: usize, g: &GraphSample) -> Result<GraphSample> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let gv = GraphVars::from_sample(&mut tape, g);
        Ok(self.layers[i].forward(&mut tape, &p, &gv)?.to_sample(&tape))
    }

    /// Applies pool `i` to a value-level graph.
    pub fn apply_pool(&self, params: &ParamStore, i: usize, g: &GraphSample) -> Result<(GraphSample, TopkSelection)> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let gv = GraphVars::from_sample(&mut tape, g);
        let (out, sel) = self.pools[i].forward(&mut tape, &p, &gv)?;
        Ok((out.to_sample(&tape), sel))
    }

    pub fn global_pool(&self, params: &ParamStore, g: &GraphSample) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let gv = GraphVars::from_sample(&mut tape, g);
        let c = self.readout.forward(&mut tape, &p, &gv)?;
        Ok(tape.value(c).to_vec())
    }

    /// Graph embedding `c` of a value-level graph.
    pub fn embed(&self, params: &ParamStore, g: &GraphSample) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let gv = GraphVars::from_sample(&mut tape, g);
        let out = self.forward(&mut tape, &p, gv)?;
        Ok(tape.value(out.c).to_vec())
    }
}
