//! Dense kernels shared by the forward and backward passes.

/// `c = op(a) · op(b) + beta · c` where `op(a)` is `m × k` and `op(b)` is `k × n`.
///
/// `a` is stored `m × k` (or `k × m` when `ta`), `b` is stored `k × n`
/// (or `n × k` when `tb`), `c` is `m × n`, all row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the three slices were length-checked against the stated
    // dimensions and strides above; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds one `c_in × len` signal into a `(c_in·k) × l_out` column matrix.
pub(crate) fn im2col(
    input: &[f64],
    c_in: usize,
    len: usize,
    k: usize,
    stride: usize,
    l_out: usize,
    cols: &mut [f64],
) {
    for ci in 0..c_in {
        let src = &input[ci * len..(ci + 1) * len];
        for kk in 0..k {
            let dst = &mut cols[(ci * k + kk) * l_out..(ci * k + kk + 1) * l_out];
            for (t, d) in dst.iter_mut().enumerate() {
                *d = src[t * stride + kk];
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the signal.
pub(crate) fn col2im_add(
    cols: &[f64],
    c_in: usize,
    len: usize,
    k: usize,
    stride: usize,
    l_out: usize,
    grad_input: &mut [f64],
) {
    for ci in 0..c_in {
        let dst = &mut grad_input[ci * len..(ci + 1) * len];
        for kk in 0..k {
            let src = &cols[(ci * k + kk) * l_out..(ci * k + kk + 1) * l_out];
            for (t, s) in src.iter().enumerate() {
                dst[t * stride + kk] += s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(r: usize, c: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        out
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        let want = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let aa = if ta { &at } else { &a };
            let bb = if tb { &bt } else { &b };
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, aa, ta, bb, tb, &mut c, 0.0);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let (c_in, len, k, stride) = (2, 11, 3, 2);
        let l_out = (len - k) / stride + 1;
        let x: Vec<f64> = (0..c_in * len).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..c_in * k * l_out).map(|i| (i as f64).cos()).collect();
        let mut cols = vec![0.0; c_in * k * l_out];
        im2col(&x, c_in, len, k, stride, l_out, &mut cols);
        let mut back = vec![0.0; c_in * len];
        col2im_add(&y, c_in, len, k, stride, l_out, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
