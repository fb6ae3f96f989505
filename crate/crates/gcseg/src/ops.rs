//! Standalone numeric kernels shared by the forward and backward paths.

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Epsilon added to the variance inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Temperature softmax: `softmax(u / tau)`, stabilized by max subtraction.
///
/// The output is strictly positive and sums to 1 (within 1e-12 in f64).
pub fn softmax_temp<T: Real>(u: &[T], tau: T) -> Result<Vec<T>> {
    if tau <= T::zero() || !tau.is_finite() {
        return Err(Error::Domain(format!(
            "softmax temperature must be positive and finite, got {tau}"
        )));
    }
    if u.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("softmax input must be finite".into()));
    }
    let scaled: Vec<T> = u.iter().map(|&v| v / tau).collect();
    let m = scaled.iter().cloned().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = scaled.iter().map(|&v| (v - m).exp()).collect();
    let sum: T = exps.iter().cloned().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Layer normalization with affine parameters:
/// `gamma * (x - mean) / sqrt(var + eps) + beta`, population variance.
pub fn layer_norm<T: Real>(x: &[T], gamma: &[T], beta: &[T]) -> Result<Vec<T>> {
    if x.is_empty() {
        return Err(Error::Shape("layer_norm of an empty vector".into()));
    }
    if gamma.len() != x.len() || beta.len() != x.len() {
        return Err(Error::Shape(format!(
            "layer_norm length mismatch: x={}, gamma={}, beta={}",
            x.len(),
            gamma.len(),
            beta.len()
        )));
    }
    let n = T::from_f64(x.len() as f64);
    let mean = x.iter().cloned().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let inv = (var + T::from_f64(LAYER_NORM_EPS)).sqrt().recip();
    Ok(x.iter()
        .zip(gamma.iter().zip(beta.iter()))
        .map(|(&v, (&g, &b))| g * (v - mean) * inv + b)
        .collect())
}

/// `out[i*n + j] = sum_p a[i*k + p] * b[p*n + j]`.
pub(crate) fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose<T: Real>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_symmetry() {
        let p = softmax_temp(&[0.0f64, 0.0], 1.0).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_hand_evaluated_ratio() {
        // exp(0) : exp(ln 3) = 1 : 3
        let p = softmax_temp(&[0.0f64, 3.0f64.ln()], 1.0).unwrap();
        assert_abs_diff_eq!(p[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn softmax_temperature_rescales_logits() {
        // [2, 0] at tau=2 equals softmax([1, 0]) = e/(e+1).
        let p = softmax_temp(&[2.0f64, 0.0], 2.0).unwrap();
        let e = 1.0f64.exp();
        assert_abs_diff_eq!(p[0], e / (e + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p[0], 0.7311, epsilon = 1e-4);
        assert_abs_diff_eq!(p[1], 0.2689, epsilon = 1e-4);
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        assert!(softmax_temp(&[0.0f64], 0.0).is_err());
        assert!(softmax_temp(&[0.0f64], -1.0).is_err());
    }

    #[test]
    fn softmax_sums_to_one_and_shift_invariant() {
        let mut state = 0x2545F4914F6CDD1Du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 20.0 - 10.0
        };
        for _ in 0..200 {
            let u: Vec<f64> = (0..7).map(|_| next()).collect();
            let tau = next().abs() + 0.1;
            let p = softmax_temp(&u, tau).unwrap();
            assert!(p.iter().all(|&v| v > 0.0));
            assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            let c = next();
            let shifted: Vec<f64> = u.iter().map(|&v| v + c).collect();
            let q = softmax_temp(&shifted, tau).unwrap();
            for (a, b) in p.iter().zip(q.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_hand_evaluated() {
        // mean 2, population var 1.
        let y = layer_norm(&[1.0f64, 3.0], &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(y[0], -1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(y[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn layer_norm_constant_input_returns_beta() {
        let y = layer_norm(&[5.0f64, 5.0, 5.0], &[1.0, 1.0, 1.0], &[2.0, -1.0, 0.5]).unwrap();
        assert_abs_diff_eq!(y[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(y[1], -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(y[2], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn layer_norm_zero_gamma_returns_beta_exactly() {
        let y = layer_norm(&[1.0f64, 7.0], &[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert_eq!(y, vec![3.0, 4.0]);
    }

    #[test]
    fn layer_norm_rejects_length_mismatch() {
        assert!(layer_norm(&[1.0f64, 2.0], &[1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn layer_norm_standardizes() {
        let x = [0.3f64, -1.2, 4.5, 2.2, 0.0];
        let ones = [1.0f64; 5];
        let zeros = [0.0f64; 5];
        let y = layer_norm(&x, &ones, &zeros).unwrap();
        let mean = y.iter().sum::<f64>() / 5.0;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 5.0;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn matmul_small_identity() {
        let a = vec![1.0f64, 2.0, 3.0, 4.0];
        let id = vec![1.0f64, 0.0, 0.0, 1.0];
        assert_eq!(matmul(&a, &id, 2, 2, 2), a);
        let b = vec![5.0f64, 6.0, 7.0, 8.0];
        // [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]]
        assert_eq!(matmul(&a, &b, 2, 2, 2), vec![19.0, 22.0, 43.0, 50.0]);
    }
}
