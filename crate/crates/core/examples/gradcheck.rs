//! Reverse-mode gradients of a small attention block against central
//! differences.

use mim::autodiff::gradcheck::{central_difference, relative_error};
use mim::{Tape, Tensor};

fn loss(x: &Tensor, wq: &Tensor, wk: &Tensor) -> mim::Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let q_w = tape.variable(wq.clone());
    let k_w = tape.variable(wk.clone());
    let q = tape.matmul(xv, q_w)?;
    let k = tape.matmul(xv, k_w)?;
    let kt = tape.transpose(k)?;
    let s = tape.matmul(q, kt)?;
    let a = tape.softmax_rows(s)?;
    let h = tape.matmul(a, xv)?;
    let h = tape.tanh(h);
    let l = tape.sum(h);
    let g = tape.backward(l)?;
    Ok((tape.value(l)[0], g.get_or_zeros(q_w, wq.numel())))
}

fn main() -> mim::Result<()> {
    let x = Tensor::new(vec![4, 3], (0..12).map(|i| (i as f64 * 0.7).sin()).collect())?;
    let wq = Tensor::new(vec![3, 2], (0..6).map(|i| (i as f64 * 1.3).cos()).collect())?;
    let wk = Tensor::new(vec![3, 2], (0..6).map(|i| (i as f64 * 0.4).sin()).collect())?;

    let (value, analytic) = loss(&x, &wq, &wk)?;
    println!("loss {value:.6}");
    let mut flat = wq.data().to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..flat.len() {
        let numeric = central_difference(
            |w| loss(&x, &Tensor::new(vec![3, 2], w.to_vec()).unwrap(), &wk).unwrap().0,
            &mut flat,
            i,
            1e-6,
        );
        let e = relative_error(analytic[i], numeric);
        worst = worst.max(e);
        println!("dL/dWq[{i}]  analytic {:+.8}  numeric {numeric:+.8}  rel err {e:.1e}", analytic[i]);
    }
    println!("worst relative error {worst:.1e}");
    Ok(())
}
