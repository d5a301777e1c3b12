//! Full MIM model: encoder → attention graph → gated GNN, plus the
//! pre-training head `y` and the two summed classification heads.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionGraph;
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::SubjectSeries;
use crate::encoder::{EncoderConfig, TemporalEncoder};
use crate::error::{MimError, Result};
use crate::gnn::{GatedGnn, GnnConfig, TopkSelection};
use crate::layers::{Builder, Mlp, WeightInit};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::stream;

/// Xavier gain of the reference architecture. At this gain the graph
/// embedding starts near 1e-20 and its gradients fall below Adam's epsilon,
/// so pre-training never leaves its initial loss.
pub const REFERENCE_XAVIER_GAIN: f64 = 0.25;

/// Default Xavier gain: the smallest power of two at which pre-training
/// leaves its initial loss on the default synthetic data.
pub const DEFAULT_XAVIER_GAIN: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_regions: usize,
    pub encoder: EncoderConfig,
    pub gnn: GnnConfig,
    /// Hidden widths of the `h_f → y` head; the output width is the width of `c`.
    pub y_head_hidden: Vec<usize>,
    /// Hidden widths of the `h_f → logits` head.
    pub encoder_head_hidden: Vec<usize>,
    /// Hidden widths of the `c → logits` head.
    pub graph_head_hidden: Vec<usize>,
    pub n_classes: usize,
    pub xavier_gain: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_regions: 116,
            encoder: EncoderConfig::default(),
            gnn: GnnConfig::default(),
            y_head_hidden: vec![1024, 128],
            encoder_head_hidden: vec![1024, 128],
            graph_head_hidden: vec![32],
            n_classes: 2,
            xavier_gain: DEFAULT_XAVIER_GAIN,
        }
    }
}

impl ModelConfig {
    pub fn with_regions(n_regions: usize) -> Self {
        Self {
            n_regions,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_regions < 2 {
            return Err(MimError::Config("model needs at least 2 regions".into()));
        }
        if self.n_classes < 2 {
            return Err(MimError::Config("classification needs at least 2 classes".into()));
        }
        self.encoder.validate()?;
        self.gnn.validate()
    }

    pub fn embedding_dim(&self) -> usize {
        self.gnn.embedding_dim()
    }

    /// Length of `h_f`.
    pub fn full_embedding_dim(&self) -> usize {
        self.n_regions * self.encoder.region_embed_dim
    }
}

/// Tape nodes for one subject's pass through the model.
#[derive(Clone, Debug)]
pub struct SubjectTrace {
    pub h: Var,
    pub h_f: Var,
    pub conv_outputs: Vec<Var>,
    pub node_features: Var,
    pub adjacency: Var,
    pub c: Var,
    pub selections: Vec<TopkSelection>,
    pub y: Option<Var>,
    pub logits: Option<Var>,
}

/// Which heads [`MimModel::trace`] evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Heads {
    Pretrain,
    Classify,
    Both,
}

#[derive(Clone, Debug)]
pub struct MimModel {
    cfg: ModelConfig,
    pub params: ParamStore,
    pub encoder: TemporalEncoder,
    pub attention: AttentionGraph,
    pub gnn: GatedGnn,
    pub y_head: Mlp,
    pub encoder_head: Mlp,
    pub graph_head: Mlp,
}

impl MimModel {
    fn build(cfg: &ModelConfig, seed: Option<u64>) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut b = Builder::new(&mut params, seed.map(|s| stream(s, "init")), cfg.xavier_gain);
        let encoder = TemporalEncoder::new(&mut b, &cfg.encoder)?;
        let attention = AttentionGraph::new(&mut b, cfg.encoder.region_embed_dim, cfg.gnn.hidden_dim);
        let gnn = GatedGnn::new(&mut b, &cfg.gnn)?;
        let hf = cfg.full_embedding_dim();
        let c = cfg.embedding_dim();
        let widths = |input: usize, hidden: &[usize], out: usize| {
            let mut w = vec![input];
            w.extend_from_slice(hidden);
            w.push(out);
            w
        };
        let x = WeightInit::Xavier;
        let y_head = Mlp::new(&mut b, "y_head", &widths(hf, &cfg.y_head_hidden, c), x);
        let encoder_head = Mlp::new(&mut b, "encoder_head", &widths(hf, &cfg.encoder_head_hidden, cfg.n_classes), x);
        let graph_head = Mlp::new(&mut b, "graph_head", &widths(c, &cfg.graph_head_hidden, cfg.n_classes), x);
        Ok(Self {
            cfg: cfg.clone(),
            params,
            encoder,
            attention,
            gnn,
            y_head,
            encoder_head,
            graph_head,
        })
    }

    /// Orthogonal encoder weights, Xavier-normal everywhere else, zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        Self::build(cfg, Some(seed))
    }

    /// Same parameter layout as [`MimModel::init`] with every value zero.
    pub fn layout(cfg: &ModelConfig) -> Result<Self> {
        Self::build(cfg, None)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Parameters that belong only to the pre-training pathway.
    pub fn pretrain_only_params(&self) -> Vec<ParamId> {
        self.y_head.param_ids()
    }

    /// `true` for every parameter updated during fine-tuning.
    pub fn finetune_mask(&self) -> Vec<bool> {
        let frozen = self.pretrain_only_params();
        self.params.ids().map(|id| !frozen.contains(&id)).collect()
    }

    fn check_subject(&self, s: &SubjectSeries) -> Result<()> {
        let (r, t) = (s.regions(), s.timepoints());
        if r != self.cfg.n_regions || t != self.cfg.encoder.input_length {
            return Err(MimError::Batch(format!(
                "subject {:?} is {r}×{t}, model expects {}×{}",
                s.subject_id, self.cfg.n_regions, self.cfg.encoder.input_length
            )));
        }
        s.check_finite()
    }

    /// Records one subject's forward pass.
    pub fn trace<'a>(&'a self, tape: &mut Tape<'a>, p: &Bound, subject: &'a SubjectSeries, heads: Heads) -> Result<SubjectTrace> {
        self.check_subject(subject)?;
        let x = tape.borrowed(&subject.series, false);
        let enc = self.encoder.forward(tape, p, x)?;
        let graph = self.attention.forward(tape, p, enc.h)?;
        let (node_features, adjacency) = (graph.x, graph.adj);
        let out = self.gnn.forward(tape, p, graph)?;
        let y = match heads {
            Heads::Pretrain | Heads::Both => Some(self.y_head.forward(tape, p, enc.h_f)?),
            Heads::Classify => None,
        };
        let logits = match heads {
            Heads::Classify | Heads::Both => {
                let from_graph = self.graph_head.forward(tape, p, out.c)?;
                let from_encoder = self.encoder_head.forward(tape, p, enc.h_f)?;
                Some(tape.add(from_graph, from_encoder)?)
            }
            Heads::Pretrain => None,
        };
        Ok(SubjectTrace {
            h: enc.h,
            h_f: enc.h_f,
            conv_outputs: enc.conv_outputs,
            node_features,
            adjacency,
            c: out.c,
            selections: out.selections,
            y,
            logits,
        })
    }

    /// Stacked `(C, Y)`, each `N × 96`, for a batch sharing one shape.
    pub fn forward_pretrain(&self, batch: &[SubjectSeries]) -> Result<(Tensor, Tensor)> {
        if batch.is_empty() {
            return Err(MimError::Batch("empty batch".into()));
        }
        let d = self.cfg.embedding_dim();
        let mut c = Vec::with_capacity(batch.len() * d);
        let mut y = Vec::with_capacity(batch.len() * d);
        for s in batch {
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape);
            let tr = self.trace(&mut tape, &p, s, Heads::Pretrain)?;
            c.extend_from_slice(tape.value(tr.c));
            y.extend_from_slice(tape.value(tr.y.expect("pretrain head requested")));
        }
        Ok((
            Tensor::new(vec![batch.len(), d], c)?,
            Tensor::new(vec![batch.len(), d], y)?,
        ))
    }

    /// Unnormalized class logits: graph head on `c` plus encoder head on `h_f`.
    pub fn forward_classify(&self, subject: &SubjectSeries) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let tr = self.trace(&mut tape, &p, subject, Heads::Classify)?;
        Ok(tape.value(tr.logits.expect("classify heads requested")).to_vec())
    }

    /// Score used for ranking metrics: `logit₁ − logit₀`.
    pub fn positive_score(&self, subject: &SubjectSeries) -> Result<f64> {
        let l = self.forward_classify(subject)?;
        Ok(l[1] - l[0])
    }
}
