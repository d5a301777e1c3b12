//! InfoNCE objective between graph embeddings `C` and encoder embeddings `Y`.
//!
//! Row `i` of both matrices belongs to subject `i`. The critic is the dot
//! product `f(c, y) = c·yᵀ`, so `S = C·Yᵀ`, and each row of `S` is a softmax
//! classification problem whose correct answer is the diagonal entry. Other
//! subjects in the batch act as negatives. The loss is summed over rows, not
//! averaged, and carries no temperature.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{MimError, Result};

/// `S[i][j] = c_i · y_j`.
pub fn critic_scores(c: &Tensor, y: &Tensor) -> Result<Tensor> {
    if c.rank() != 2 || y.rank() != 2 || c.cols() != y.cols() {
        return Err(MimError::Dimension {
            op: "critic_scores",
            lhs: c.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    let mut tape = Tape::new();
    let cv = tape.borrowed(c, false);
    let yv = tape.borrowed(y, false);
    let yt = tape.transpose(yv)?;
    let s = tape.matmul(cv, yt)?;
    Ok(tape.tensor(s))
}

/// `L = −Σ_i log(exp S_ii / Σ_j exp S_ij)` for a square score matrix.
pub fn infonce_loss(s: &Tensor) -> Result<f64> {
    if s.rank() != 2 || s.rows() != s.cols() {
        return Err(MimError::Shape {
            shape: s.shape().to_vec(),
            reason: "InfoNCE needs a square score matrix".into(),
        });
    }
    if !s.is_finite() {
        return Err(MimError::NonFinite("critic scores".into()));
    }
    let n = s.rows();
    let mut loss = 0.0;
    for i in 0..n {
        let row = s.row(i);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
        loss -= row[i] - lse;
    }
    Ok(loss)
}

/// Per-sample InfoNCE mutual-information estimate `log N − L/N`.
pub fn mi_lower_bound(loss: f64, n: usize) -> f64 {
    let n = n.max(1) as f64;
    n.ln() - loss / n
}

/// Records the InfoNCE loss of `(C, Y)` on a tape and returns the scalar node.
pub fn infonce_on_tape(tape: &mut Tape<'_>, c: Var, y: Var) -> Result<Var> {
    if tape.shape(c) != tape.shape(y) || tape.shape(c).len() != 2 {
        return Err(MimError::Dimension {
            op: "infonce",
            lhs: tape.shape(c).to_vec(),
            rhs: tape.shape(y).to_vec(),
        });
    }
    let n = tape.shape(c)[0];
    let yt = tape.transpose(y)?;
    let s = tape.matmul(c, yt)?;
    let ls = tape.log_softmax_rows(s)?;
    let eye = tape.input(Tensor::eye(n));
    let diag = tape.mul(ls, eye)?;
    let total = tape.sum(diag);
    Ok(tape.scale(total, -1.0))
}

/// Loss and its gradients with respect to `C` and `Y`.
pub fn infonce_with_grads(c: &Tensor, y: &Tensor) -> Result<(f64, Tensor, Tensor)> {
    let mut tape = Tape::new();
    let cv = tape.borrowed(c, true);
    let yv = tape.borrowed(y, true);
    let loss = infonce_on_tape(&mut tape, cv, yv)?;
    let value = tape.value(loss)[0];
    if !value.is_finite() {
        return Err(MimError::NonFinite("InfoNCE loss".into()));
    }
    let g = tape.backward(loss)?;
    let dc = Tensor::new(c.shape().to_vec(), g.get_or_zeros(cv, c.numel()))?;
    let dy = Tensor::new(y.shape().to_vec(), g.get_or_zeros(yv, y.numel()))?;
    Ok((value, dc, dy))
}
