//! The InfoNCE objective on hand-made embeddings: aligned pairs give a low
//! loss and a high mutual-information estimate, shuffled pairs do not.

use mim::objective::{critic_scores, infonce_loss, infonce_with_grads, mi_lower_bound};
use mim::Tensor;

fn main() -> mim::Result<()> {
    let n = 8;
    let c = Tensor::new(vec![n, 4], (0..n * 4).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect())?;
    let noisy: Vec<f64> = c.data().iter().enumerate().map(|(i, v)| v + 0.1 * (i as f64).sin()).collect();
    let y = Tensor::new(vec![n, 4], noisy)?;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| y.row((i + 3) % n).to_vec()).collect();
    let shuffled = Tensor::from_rows(&rows)?;

    println!("uniform bound: N log N = {:.4}", n as f64 * (n as f64).ln());
    for (name, other) in [("aligned", &y), ("shuffled", &shuffled)] {
        let l = infonce_loss(&critic_scores(&c, other)?)?;
        println!("{name:>8}: loss {l:.4}  mi estimate {:.4} nats", mi_lower_bound(l, n));
    }

    let (_, dc, _) = infonce_with_grads(&c, &y)?;
    let norm = dc.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("|dL/dC| on the aligned batch: {norm:.4}");
    println!("S = [[1,0],[0,1]]: loss {:.6}", infonce_loss(&Tensor::eye(2))?);
    Ok(())
}
