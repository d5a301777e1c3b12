//! Draws a labeled cohort and an unlabeled pre-training pool, writes both to
//! disk in the CSV + manifest layout and reads one back.
//!
//! cargo run --release --example gen_data -- /tmp/mim-data

use std::path::PathBuf;

use mim::data::{fnc_features, generate_synthetic, load_dataset, save_dataset, SynthConfig};

fn main() -> mim::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "mim-data".into()));

    let labeled = generate_synthetic(&SynthConfig {
        subjects: 40,
        ..SynthConfig::default()
    })?;
    let unlabeled = generate_synthetic(&SynthConfig {
        subjects: 40,
        labeled: false,
        seed: 1,
        ..SynthConfig::default()
    })?;

    let manifest = save_dataset(&labeled, &root.join("labeled"))?;
    save_dataset(&unlabeled, &root.join("unlabeled"))?;
    let back = load_dataset(&manifest)?;
    assert_eq!(back, labeled);

    let first = &back[0];
    println!(
        "{} subjects of {} regions x {} timepoints under {}",
        back.len(),
        first.regions(),
        first.timepoints(),
        root.display()
    );
    for s in back.iter().take(4) {
        let f = fnc_features(s)?;
        let block = f[..3].iter().map(|v| format!("{v:+.2}")).collect::<Vec<_>>().join(" ");
        println!("{} label {:?}: first FNC entries {block}", s.subject_id, s.label);
    }
    Ok(())
}
