//! One subject through the encoder, the attention graph and the gated GNN,
//! printing every intermediate shape and the top-k selections.

use mim::data::{generate_synthetic, zscore_all, SynthConfig};
use mim::model::Heads;
use mim::{MimModel, ModelConfig, Tape};

fn main() -> mim::Result<()> {
    let data = zscore_all(&generate_synthetic(&SynthConfig {
        subjects: 1,
        ..SynthConfig::default()
    })?)?;
    let subject = &data[0];
    let model = MimModel::init(&ModelConfig::with_regions(subject.regions()), 0)?;
    println!("{} parameters", model.params.total_numel());

    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape);
    let tr = model.trace(&mut tape, &p, subject, Heads::Both)?;
    for (i, v) in tr.conv_outputs.iter().enumerate() {
        println!("conv{i}: {:?}", tape.shape(*v));
    }
    println!("h: {:?}  h_f: {:?}", tape.shape(tr.h), tape.shape(tr.h_f));
    println!("nodes: {:?}  adjacency: {:?}", tape.shape(tr.node_features), tape.shape(tr.adjacency));
    let adj = tape.tensor(tr.adjacency);
    println!("adjacency row 0 sums to {:.12}", adj.row(0).iter().sum::<f64>());
    for (i, sel) in tr.selections.iter().enumerate() {
        println!("pool{i}: kept {} nodes {:?}", sel.k, sel.kept_indices);
    }
    println!("c: {:?}  y: {:?}  logits: {:?}", tape.shape(tr.c), tape.shape(tr.y.unwrap()), tape.value(tr.logits.unwrap()));
    Ok(())
}
