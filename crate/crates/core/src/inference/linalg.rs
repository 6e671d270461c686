//! Dense symmetric positive definite solves for the handful of columns a
//! trial model has.

use crate::num::Real;

/// Lower Cholesky factor of a row-major `n x n` matrix, or `None` when the
/// matrix is not numerically positive definite.
pub(crate) fn cholesky<F: Real>(a: &[F], n: usize) -> Option<Vec<F>> {
    let mut l = vec![F::zero(); n * n];
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(F::zero(), F::max);
    let floor = scale * F::epsilon() * F::of_usize(4 * n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum = sum - l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > floor) {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves `L L' x = b`.
pub(crate) fn solve<F: Real>(l: &[F], n: usize, b: &[F]) -> Vec<F> {
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] = y[i] - l[i * n + k] * y[k];
        }
        y[i] = y[i] / l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] = y[i] - l[k * n + i] * y[k];
        }
        y[i] = y[i] / l[i * n + i];
    }
    y
}

pub(crate) fn inverse<F: Real>(l: &[F], n: usize) -> Vec<F> {
    let mut inv = vec![F::zero(); n * n];
    let mut e = vec![F::zero(); n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = F::zero());
        e[j] = F::one();
        let col = solve(l, n, &e);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    inv
}

pub(crate) fn log_det<F: Real>(l: &[F], n: usize) -> F {
    let two = F::one() + F::one();
    (0..n).fold(F::zero(), |acc, i| acc + two * l[i * n + i].ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_and_inverts() {
        let a = [4.0, 2.0, 0.6, 2.0, 2.0, 0.5, 0.6, 0.5, 3.0];
        let l = cholesky(&a, 3).unwrap();
        let x = solve(&l, 3, &[1.0, 2.0, 3.0]);
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert!((ax - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
        let inv = inverse(&l, 3);
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| a[i * 3 + k] * inv[k * 3 + j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        let det = 4.0 * (2.0 * 3.0 - 0.25) - 2.0 * (6.0 - 0.3) + 0.6 * (1.0 - 1.2);
        assert!((log_det(&l, 3) - f64::ln(det)).abs() < 1e-12);
        assert!(cholesky(&[1.0, 1.0, 1.0, 1.0], 2).is_none());
    }
}
