//! Plain loops behind the differentiable ops. Row-major, no aliasing.

use crate::real::Real;

/// `out[m×n] = a[m×k] · b[k×n]`
pub fn matmul<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[m×n] = a[m×k] · b[n×k]ᵀ`
pub fn matmul_nt<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = F::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// `out[k×n] = a[m×k]ᵀ · b[m×n]`
pub fn matmul_tn<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); k * n];
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

pub fn transpose<F: Real>(a: &[F], rows: usize, cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Numerically stable row softmax.
pub fn softmax_rows<F: Real>(x: &[F], rows: usize, cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let o = &mut out[r * cols..(r + 1) * cols];
        let mut sum = F::zero();
        for (o, &v) in o.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in o.iter_mut() {
            *o /= sum;
        }
    }
    out
}

pub fn log_softmax_rows<F: Real>(x: &[F], rows: usize, cols: usize) -> Vec<F> {
    let mut out = vec![F::zero(); rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
        for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            *o = v - lse;
        }
    }
    out
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Gathers the `k`-tap windows of a padded sequence into rows
/// (`[t_out × k·cin]`).
pub fn im2col<F: Real>(
    x: &[F],
    t: usize,
    cin: usize,
    k: usize,
    stride: usize,
    pad_left: usize,
    t_out: usize,
) -> Vec<F> {
    let mut cols = vec![F::zero(); t_out * k * cin];
    for o in 0..t_out {
        for j in 0..k {
            let src = (o * stride + j) as isize - pad_left as isize;
            if src < 0 || src as usize >= t {
                continue;
            }
            let src = src as usize;
            let dst = o * k * cin + j * cin;
            cols[dst..dst + cin].copy_from_slice(&x[src * cin..(src + 1) * cin]);
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub fn col2im<F: Real>(
    cols: &[F],
    t: usize,
    cin: usize,
    k: usize,
    stride: usize,
    pad_left: usize,
    t_out: usize,
) -> Vec<F> {
    let mut x = vec![F::zero(); t * cin];
    for o in 0..t_out {
        for j in 0..k {
            let src = (o * stride + j) as isize - pad_left as isize;
            if src < 0 || src as usize >= t {
                continue;
            }
            let src = src as usize;
            let from = o * k * cin + j * cin;
            for c in 0..cin {
                x[src * cin + c] += cols[from + c];
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a: Vec<f64> = (0..6).map(|x| x as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|x| (x as f64) * 0.5).collect(); // 3x4
        let ab = matmul(&a, &b, 2, 3, 4);
        let bt = transpose(&b, 3, 4);
        assert_eq!(ab, matmul_nt(&a, &bt, 2, 3, 4));
        let at = transpose(&a, 2, 3);
        assert_eq!(ab, matmul_tn(&at, &b, 3, 2, 4));
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0f32, 0.0]), 0);
    }
}
