/// `c = a·b + beta·c` where `a` is `m×k` and `b` is `k×n` after the
/// optional transposes; all buffers are row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // row-major buffers whose lengths are checked in debug builds.
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

/// Unfolds `x` (`c × l`) into a `(c·k) × lout` matrix of strided windows,
/// reading zeros outside `[0, l)`.
pub(crate) fn im2col(x: &[f64], c: usize, l: usize, k: usize, stride: usize, pad: usize, lout: usize) -> Vec<f64> {
    let mut cols = vec![0.0; c * k * lout];
    for ch in 0..c {
        let row = &x[ch * l..(ch + 1) * l];
        for kk in 0..k {
            let dst = &mut cols[(ch * k + kk) * lout..(ch * k + kk + 1) * lout];
            for (t, v) in dst.iter_mut().enumerate() {
                let pos = (t * stride + kk) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < l {
                    *v = row[pos as usize];
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds the windows back into a `c × l`
/// buffer.
pub(crate) fn col2im(cols: &[f64], c: usize, l: usize, k: usize, stride: usize, pad: usize, lout: usize) -> Vec<f64> {
    let mut x = vec![0.0; c * l];
    for ch in 0..c {
        for kk in 0..k {
            let src = &cols[(ch * k + kk) * lout..(ch * k + kk + 1) * lout];
            for (t, v) in src.iter().enumerate() {
                let pos = (t * stride + kk) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < l {
                    x[ch * l + pos as usize] += v;
                }
            }
        }
    }
    x
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

    fn transpose(r: usize, c: usize, a: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = a[i * c + j];
            }
        }
        out
    }

    #[test]
    fn gemm_matches_naive_for_all_transposes() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        let want = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, if ta { &at } else { &a }, ta, if tb { &bt } else { &b }, tb, 0.0, &mut c);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (c, l, k, s, p) = (2, 7, 3, 2, 1);
        let lout = (l + 2 * p - k) / s + 1;
        let x: Vec<f64> = (0..c * l).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..c * k * lout).map(|i| (i as f64 * 1.3).cos()).collect();
        let lhs: f64 = im2col(&x, c, l, k, s, p, lout).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = col2im(&y, c, l, k, s, p, lout).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
