//! Reverse-mode gradients of every primitive against central differences.

use mim::autodiff::gradcheck::{central_difference, relative_error};
use mim::{Result, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Reduces the op output to a scalar with fixed random weights so every
/// output element contributes a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape<'_>, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(out).to_vec();
    let w = tape.input(random(&shape, &mut rng));
    let p = tape.mul(out, w).unwrap();
    tape.sum(p)
}

fn eval<F>(op: &F, inputs: &[Tensor]) -> f64
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = op(&mut tape, &vars).unwrap();
    let loss = weighted_sum(&mut tape, out, 99);
    tape.value(loss)[0]
}

/// Worst relative error over every input coordinate.
fn check<F>(name: &str, op: F, inputs: Vec<Tensor>) -> f64
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = op(&mut tape, &vars).unwrap();
    let loss = weighted_sum(&mut tape, out, 99);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, inputs[k].numel());
        for i in 0..inputs[k].numel() {
            let mut flat = inputs[k].data().to_vec();
            let numeric = central_difference(
                |x| {
                    let mut ins = inputs.clone();
                    ins[k] = Tensor::new(inputs[k].shape().to_vec(), x.to_vec()).unwrap();
                    eval(&op, &ins)
                },
                &mut flat,
                i,
                STEP,
            );
            let e = relative_error(analytic[i], numeric);
            assert!(
                e < TOL,
                "{name}: input {k} coord {i}: analytic {} numeric {numeric} (rel err {e:.2e})",
                analytic[i]
            );
            worst = worst.max(e);
        }
    }
    worst
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

#[test]
fn matmul_and_linear() {
    let mut r = rng();
    check("matmul", |t, v| t.matmul(v[0], v[1]), vec![random(&[3, 4], &mut r), random(&[4, 2], &mut r)]);
    check(
        "linear",
        |t, v| t.linear(v[0], v[1], Some(v[2])),
        vec![random(&[3, 4], &mut r), random(&[5, 4], &mut r), random(&[5], &mut r)],
    );
    check("linear vector", |t, v| t.linear(v[0], v[1], None), vec![random(&[4], &mut r), random(&[2, 4], &mut r)]);
}

#[test]
fn conv1d_single_and_batched() {
    let mut r = rng();
    check(
        "conv1d",
        |t, v| t.conv1d(v[0], v[1], Some(v[2]), 2),
        vec![random(&[2, 9], &mut r), random(&[3, 2, 3], &mut r), random(&[3], &mut r)],
    );
    check(
        "conv1d batched",
        |t, v| t.conv1d(v[0], v[1], Some(v[2]), 1),
        vec![random(&[2, 1, 7], &mut r), random(&[2, 1, 4], &mut r), random(&[2], &mut r)],
    );
}

#[test]
fn elementwise() {
    let mut r = rng();
    let a = random(&[3, 4], &mut r);
    let b = random(&[3, 4], &mut r);
    check("relu", |t, v| Ok(t.relu(v[0])), vec![a.clone()]);
    check("tanh", |t, v| Ok(t.tanh(v[0])), vec![a.clone()]);
    check("sigmoid", |t, v| Ok(t.sigmoid(v[0])), vec![a.clone()]);
    check("scale", |t, v| Ok(t.scale(v[0], -0.7)), vec![a.clone()]);
    check("add", |t, v| t.add(v[0], v[1]), vec![a.clone(), b.clone()]);
    check("sub", |t, v| t.sub(v[0], v[1]), vec![a.clone(), b.clone()]);
    check("mul", |t, v| t.mul(v[0], v[1]), vec![a.clone(), b]);
    check("add_row", |t, v| t.add_row(v[0], v[1]), vec![a.clone(), random(&[4], &mut r)]);
    check("mul_col", |t, v| t.mul_col(v[0], v[1]), vec![a, random(&[3], &mut r)]);
}

#[test]
fn structural() {
    let mut r = rng();
    let a = random(&[4, 3], &mut r);
    check("transpose", |t, v| t.transpose(v[0]), vec![a.clone()]);
    check("reshape", |t, v| t.reshape(v[0], vec![2, 6]), vec![a.clone()]);
    check("concat rows", |t, v| t.concat(&[v[0], v[1]], 0), vec![a.clone(), random(&[2, 3], &mut r)]);
    check("concat cols", |t, v| t.concat(&[v[0], v[1]], 1), vec![a.clone(), random(&[4, 2], &mut r)]);
    check("slice", |t, v| t.slice(v[0], 1, 1, 2), vec![a.clone()]);
    check("gather_rows", |t, v| t.gather_rows(v[0], &[3, 0, 3]), vec![a]);
    check("submatrix", |t, v| t.submatrix(v[0], &[4, 1, 2]), vec![random(&[5, 5], &mut r)]);
}

#[test]
fn reductions() {
    let mut r = rng();
    let a = random(&[4, 3], &mut r);
    check("sum", |t, v| Ok(t.sum(v[0])), vec![a.clone()]);
    check("mean", |t, v| Ok(t.mean(v[0])), vec![a.clone()]);
    check("mean_axis 0", |t, v| t.mean_axis(v[0], 0), vec![a.clone()]);
    check("mean_axis 1", |t, v| t.mean_axis(v[0], 1), vec![a.clone()]);
    check("max_axis 0", |t, v| t.max_axis(v[0], 0), vec![a.clone()]);
    check("max_axis 1", |t, v| t.max_axis(v[0], 1), vec![a]);
}

#[test]
fn softmax_family() {
    let mut r = rng();
    let a = random(&[3, 5], &mut r);
    check("softmax_rows", |t, v| t.softmax_rows(v[0]), vec![a.clone()]);
    check("log_softmax_rows", |t, v| t.log_softmax_rows(v[0]), vec![a]);
    check("normalize", |t, v| t.normalize(v[0]), vec![random(&[6], &mut r)]);
}

#[test]
fn composite_attention_block() {
    let mut r = rng();
    check(
        "attention",
        |t, v| {
            let q = t.matmul(v[0], v[1])?;
            let k = t.matmul(v[0], v[2])?;
            let kt = t.transpose(k)?;
            let s = t.matmul(q, kt)?;
            let a = t.softmax_rows(s)?;
            let x = t.matmul(a, v[0])?;
            Ok(t.tanh(x))
        },
        vec![random(&[4, 3], &mut r), random(&[3, 2], &mut r), random(&[3, 2], &mut r)],
    );
}

#[test]
fn backward_requires_scalar() {
    let mut t = Tape::new();
    let a = t.variable(Tensor::zeros(&[2, 2]));
    assert!(t.backward(a).is_err());
}

#[test]
fn constants_receive_no_gradient() {
    let mut t = Tape::new();
    let a = t.input(Tensor::filled(&[2], 3.0));
    let b = t.variable(Tensor::filled(&[2], 2.0));
    let p = t.mul(a, b).unwrap();
    let s = t.sum(p);
    let g = t.backward(s).unwrap();
    assert!(g.get(a).is_none());
    assert_eq!(g.get(b).unwrap(), &[3.0, 3.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_gradients_for_random_shapes(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let e = check("matmul", |t, v| t.matmul(v[0], v[1]), vec![random(&[m, k], &mut r), random(&[k, n], &mut r)]);
        prop_assert!(e < TOL);
    }

    #[test]
    fn conv_gradients_for_random_geometry(
        c_in in 1usize..3, c_out in 1usize..3, k in 1usize..4, stride in 1usize..3, extra in 0usize..6, seed in any::<u64>()
    ) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let len = k + extra;
        let e = check(
            "conv1d",
            |t, v| t.conv1d(v[0], v[1], Some(v[2]), stride),
            vec![random(&[c_in, len], &mut r), random(&[c_out, c_in, k], &mut r), random(&[c_out], &mut r)],
        );
        prop_assert!(e < TOL);
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..6, seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tape::new();
        let a = t.input(random(&[rows, cols], &mut r));
        let s = t.softmax_rows(a).unwrap();
        for row in t.value(s).chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_output_length_matches_formula(len in 1usize..200, k in 1usize..8, s in 1usize..4) {
        let got = mim::autodiff::conv_output_len(len, k, s);
        if len < k { prop_assert!(got.is_none()); } else { prop_assert_eq!(got, Some((len - k) / s + 1)); }
    }
}
