use crate::error::{MimError, Result};
use crate::params::ParamStore;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Parameters whose `mask` entry is `false` are left untouched
    /// and keep their moment estimates frozen.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], mask: Option<&[bool]>) -> Result<()> {
        if grads.len() != params.len() {
            return Err(MimError::Contract(format!(
                "adam: {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for ((name, t), g) in params.iter().zip(grads) {
            if g.len() != t.numel() {
                return Err(MimError::Dimension {
                    op: "adam",
                    lhs: t.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(MimError::Divergence(format!("non-finite gradient for {name}")));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, t) in params.tensors_mut().iter_mut().enumerate() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for (j, w) in t.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![1.0, -2.0, 0.5]));
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = store();
        let before = p.clone();
        let mut opt = Adam::new(&p, 1e-3);
        opt.step(&mut p, &[vec![0.0; 3]], None).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = store();
        let mut opt = Adam::new(&p, 1e-4);
        opt.step(&mut p, &[vec![3.0, -0.2, 50.0]], None).unwrap();
        let moved: Vec<f64> = p.iter().next().unwrap().1.data().to_vec();
        let want = [1.0 - 1e-4, -2.0 + 1e-4, 0.5 - 1e-4];
        for (a, b) in moved.iter().zip(want) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn nan_gradient_is_divergence() {
        let mut p = store();
        let mut opt = Adam::new(&p, 1e-3);
        let err = opt.step(&mut p, &[vec![0.0, f64::NAN, 0.0]], None).unwrap_err();
        assert!(matches!(err, MimError::Divergence(_)));
    }

    #[test]
    fn masked_params_are_frozen() {
        let mut p = store();
        let before = p.clone();
        let mut opt = Adam::new(&p, 1e-3);
        opt.step(&mut p, &[vec![1.0; 3]], Some(&[false])).unwrap();
        assert_eq!(p, before);
    }
}
