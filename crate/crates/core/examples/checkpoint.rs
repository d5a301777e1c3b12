//! Saves a model, reloads it and checks the round trip bit for bit, then
//! shows that a corrupted payload is rejected.

use mim::checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes};
use mim::data::{generate_synthetic, zscore_all, SynthConfig};
use mim::{MimModel, ModelConfig};

fn main() -> mim::Result<()> {
    let model = MimModel::init(&ModelConfig::with_regions(16), 11)?;
    let path = std::env::temp_dir().join("mim-example.mim");
    save_checkpoint(&model, &path)?;
    let back = load_checkpoint(&path)?;

    let subject = &zscore_all(&generate_synthetic(&SynthConfig {
        subjects: 1,
        ..SynthConfig::default()
    })?)?[0];
    let (a, b) = (model.forward_classify(subject)?, back.forward_classify(subject)?);
    let identical = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    println!("{} bytes, {} tensors, logits identical after reload: {identical}", std::fs::metadata(&path)?.len(), back.params.len());

    let mut bytes = to_bytes(&model)?;
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    match from_bytes(&bytes) {
        Ok(_) => println!("corruption went unnoticed"),
        Err(e) => println!("flipped one payload bit: {e}"),
    }
    std::fs::remove_file(&path)?;
    Ok(())
}
