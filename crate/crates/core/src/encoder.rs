//! 1-D convolutional encoder mapping each region's time series to a
//! 64-dimensional embedding `h_i`, plus the flattened subject embedding `h_f`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{conv_output_len, Tape, Tensor, Var};
use crate::data::SubjectSeries;
use crate::error::{MimError, Result};
use crate::layers::{Builder, Linear, WeightInit};
use crate::params::{Bound, ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub input_length: usize,
    pub kernel_sizes: Vec<usize>,
    pub strides: Vec<usize>,
    pub channels: Vec<usize>,
    pub region_embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_length: 160,
            kernel_sizes: vec![4, 4, 3, 1],
            strides: vec![2, 1, 2, 1],
            channels: vec![32, 64, 64, 10],
            region_embed_dim: 64,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.kernel_sizes.len();
        if n == 0 || self.strides.len() != n || self.channels.len() != n {
            return Err(MimError::Config(
                "encoder kernel_sizes, strides and channels must have equal, non-zero length".into(),
            ));
        }
        if self.region_embed_dim == 0 || self.channels.contains(&0) || self.strides.contains(&0) {
            return Err(MimError::Config("encoder sizes must be positive".into()));
        }
        self.layer_lengths().map(|_| ())
    }

    /// Output length after each convolution, e.g. `[79, 76, 37, 37]` for the defaults.
    pub fn layer_lengths(&self) -> Result<Vec<usize>> {
        let mut len = self.input_length;
        let mut out = Vec::with_capacity(self.kernel_sizes.len());
        for (&k, &s) in self.kernel_sizes.iter().zip(&self.strides) {
            len = conv_output_len(len, k, s).ok_or(MimError::InputTooShort { len, kernel: k })?;
            out.push(len);
        }
        Ok(out)
    }

    /// Width of the flattened conv output fed to the final FC layer (370 by default).
    pub fn flatten_size(&self) -> Result<usize> {
        let lens = self.layer_lengths()?;
        Ok(self.channels.last().copied().unwrap_or(0) * lens.last().copied().unwrap_or(0))
    }
}

/// Per-subject encoder output.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionEmbeddings {
    /// `R × 64`; row `i` is `h_i`.
    pub h: Tensor,
    /// Row-major flattening of `h`.
    pub h_f: Vec<f64>,
}

/// Tape nodes produced by [`TemporalEncoder::forward`].
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `[R, 64]`, rows are `h_i`.
    pub h: Var,
    /// `[R·64]`.
    pub h_f: Var,
    /// Output of every convolution, `[R, channels, length]`.
    pub conv_outputs: Vec<Var>,
}

#[derive(Clone, Debug)]
struct ConvLayer {
    kernel: ParamId,
    bias: ParamId,
    stride: usize,
}

/// Shared-weight encoder applied to every region independently.
#[derive(Clone, Debug)]
pub struct TemporalEncoder {
    cfg: EncoderConfig,
    convs: Vec<ConvLayer>,
    fc: Linear,
    flatten: usize,
}

impl TemporalEncoder {
    pub fn new(b: &mut Builder<'_>, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut c_in = 1;
        let mut convs = Vec::new();
        for (i, ((&k, &s), &c)) in cfg
            .kernel_sizes
            .iter()
            .zip(&cfg.strides)
            .zip(&cfg.channels)
            .enumerate()
        {
            convs.push(ConvLayer {
                kernel: b.weight(&format!("encoder.conv{i}.weight"), &[c, c_in, k], WeightInit::Orthogonal),
                bias: b.bias(&format!("encoder.conv{i}.bias"), c),
                stride: s,
            });
            c_in = c;
        }
        let flatten = cfg.flatten_size()?;
        let fc = Linear::new(b, "encoder.fc", flatten, cfg.region_embed_dim, true, WeightInit::Orthogonal);
        Ok(Self {
            cfg: cfg.clone(),
            convs,
            fc,
            flatten,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn fc(&self) -> &Linear {
        &self.fc
    }

    pub fn conv_kernels(&self) -> Vec<ParamId> {
        self.convs.iter().map(|c| c.kernel).collect()
    }

    /// `series` is `[R, T]`.
    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, series: Var) -> Result<EncoderOutput> {
        let (r, t) = match tape.shape(series) {
            [r, t] => (*r, *t),
            s => {
                return Err(MimError::Shape {
                    shape: s.to_vec(),
                    reason: "encoder expects [regions, timepoints]".into(),
                })
            }
        };
        if t != self.cfg.input_length {
            return Err(MimError::Shape {
                shape: vec![r, t],
                reason: format!("expected {} timepoints", self.cfg.input_length),
            });
        }
        let mut x = tape.reshape(series, vec![r, 1, t])?;
        let last = self.convs.len() - 1;
        let mut conv_outputs = Vec::with_capacity(self.convs.len());
        for (i, c) in self.convs.iter().enumerate() {
            x = tape.conv1d(x, p.var(c.kernel), Some(p.var(c.bias)), c.stride)?;
            conv_outputs.push(x);
            if i < last {
                x = tape.relu(x);
            }
        }
        let flat = tape.reshape(x, vec![r, self.flatten])?;
        let h = self.fc.forward(tape, p, flat)?;
        let h_f = tape.reshape(h, vec![r * self.cfg.region_embed_dim])?;
        Ok(EncoderOutput { h, h_f, conv_outputs })
    }

    /// Embeds a single region series of length `input_length`.
    pub fn encode_region(&self, params: &ParamStore, series: &[f64]) -> Result<Vec<f64>> {
        if series.len() != self.cfg.input_length {
            return Err(MimError::Shape {
                shape: vec![series.len()],
                reason: format!("expected {} timepoints", self.cfg.input_length),
            });
        }
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let x = tape.input(Tensor::new(vec![1, series.len()], series.to_vec())?);
        let out = self.forward(&mut tape, &p, x)?;
        Ok(tape.value(out.h).to_vec())
    }

    pub fn encode_subject(&self, params: &ParamStore, subject: &SubjectSeries) -> Result<RegionEmbeddings> {
        subject.check_finite()?;
        if subject.regions() < 2 {
            return Err(MimError::Contract("a subject needs at least 2 regions".into()));
        }
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let x = tape.input(subject.series.clone());
        let out = self.forward(&mut tape, &p, x)?;
        Ok(RegionEmbeddings {
            h: tape.tensor(out.h),
            h_f: tape.value(out.h_f).to_vec(),
        })
    }
}
