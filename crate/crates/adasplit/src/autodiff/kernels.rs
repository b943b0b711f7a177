//! Raw slice-level math shared by the tape ops and the tape-free
//! inference path used at evaluation time.

/// `a[m,k] @ b[k,n]`, or `a[m,k] @ b[n,k]^T` when `trans_b` is set.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, trans_b: bool) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            if trans_b {
                for p in 0..k {
                    s += a[i * k + p] * b[j * k + p];
                }
            } else {
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// `a[m,k]^T @ b[m,n]` -> `[k,n]`.
pub fn matmul_at(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for p in 0..m {
        for i in 0..k {
            let av = a[p * k + i];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}

/// In-place stable softmax over one row.
pub fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// In-place layer normalization of one row, unit gain and zero bias.
pub fn layer_norm_row(row: &mut [f64], eps: f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    for v in row.iter_mut() {
        *v = (*v - mean) * inv;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_against_hand_case() {
        // [1 2; 3 4] @ [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let c = matmul(&a, &b, 2, 2, 2, false);
        assert_eq!(c, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_transposed_rhs() {
        // a @ b^T with b stored row-major [n,k]
        let a = [1.0, 2.0];
        let b = [3.0, 4.0, 5.0, 6.0]; // rows (3,4) and (5,6)
        let c = matmul(&a, &b, 1, 2, 2, true);
        assert_eq!(c, vec![11.0, 17.0]);
    }

    #[test]
    fn matmul_at_matches_explicit_transpose() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 3x2
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        // a^T @ b : 2x2
        let c = matmul_at(&a, &b, 3, 2, 2);
        // explicit: a^T = [1 3 5; 2 4 6]
        assert_eq!(c, vec![89.0, 98.0, 116.0, 128.0]);
    }

    #[test]
    fn softmax_row_is_shift_invariant() {
        let mut a = [1.0, 2.0, 3.0];
        let mut b = [1001.0, 1002.0, 1003.0];
        softmax_row(&mut a);
        softmax_row(&mut b);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
