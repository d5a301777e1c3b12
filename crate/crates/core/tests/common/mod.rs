#![allow(dead_code)]

use mim::data::{generate_synthetic, zscore_all, SubjectSeries, SynthConfig};
use mim::encoder::EncoderConfig;
use mim::gnn::GnnConfig;
use mim::ModelConfig;

/// Small model with every component of the full one, for fast tests.
pub fn tiny_config(regions: usize, timepoints: usize) -> ModelConfig {
    ModelConfig {
        n_regions: regions,
        encoder: EncoderConfig {
            input_length: timepoints,
            kernel_sizes: vec![4, 3, 1],
            strides: vec![2, 1, 1],
            channels: vec![4, 6, 3],
            region_embed_dim: 8,
        },
        gnn: GnnConfig {
            layers: 3,
            hidden_dim: 6,
            topk_ratios: vec![0.8, 0.5],
            attention_pool_dim: 5,
        },
        y_head_hidden: vec![10],
        encoder_head_hidden: vec![9],
        graph_head_hidden: vec![7],
        n_classes: 2,
        xavier_gain: 2.0,
    }
}

pub fn synthetic(regions: usize, timepoints: usize, subjects: usize, labeled: bool, seed: u64) -> Vec<SubjectSeries> {
    let cfg = SynthConfig {
        regions,
        timepoints,
        subjects,
        labeled,
        block_size: regions / 4,
        seed,
        ..SynthConfig::default()
    };
    zscore_all(&generate_synthetic(&cfg).unwrap()).unwrap()
}
