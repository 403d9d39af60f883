//! Linear Kalman filter on fixed-size arrays.
//!
//! Dimensions are const generics so the planar constant-velocity tracker and
//! scalar hand-checks go through the same predict/update code.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type Mat<T, const R: usize, const C: usize> = [[T; C]; R];

pub fn zeros<T: Scalar, const R: usize, const C: usize>() -> Mat<T, R, C> {
    [[T::zero(); C]; R]
}

pub fn identity<T: Scalar, const N: usize>() -> Mat<T, N, N> {
    let mut m = zeros();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = T::one();
    }
    m
}

pub fn diag<T: Scalar, const N: usize>(d: [T; N]) -> Mat<T, N, N> {
    let mut m = zeros();
    for i in 0..N {
        m[i][i] = d[i];
    }
    m
}

pub fn matmul<T: Scalar, const R: usize, const K: usize, const C: usize>(
    a: &Mat<T, R, K>,
    b: &Mat<T, K, C>,
) -> Mat<T, R, C> {
    let mut out = zeros();
    for i in 0..R {
        for j in 0..C {
            let mut s = T::zero();
            for k in 0..K {
                s = s + a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn transpose<T: Scalar, const R: usize, const C: usize>(a: &Mat<T, R, C>) -> Mat<T, C, R> {
    let mut out = zeros();
    for i in 0..R {
        for j in 0..C {
            out[j][i] = a[i][j];
        }
    }
    out
}

pub fn trace<T: Scalar, const N: usize>(a: &Mat<T, N, N>) -> T {
    (0..N).fold(T::zero(), |s, i| s + a[i][i])
}

/// Lower Cholesky factor, or `None` if the matrix is not positive-definite.
pub fn cholesky<T: Scalar, const N: usize>(a: &Mat<T, N, N>) -> Option<Mat<T, N, N>> {
    let mut l: Mat<T, N, N> = zeros();
    for i in 0..N {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s = s - l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > T::zero()) || !s.is_finite() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Solves `L y = b` for lower-triangular `L`.
fn forward_sub<T: Scalar, const N: usize>(l: &Mat<T, N, N>, b: &[T; N]) -> [T; N] {
    let mut y = [T::zero(); N];
    for i in 0..N {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    y
}

/// Solves `L^T x = y` for lower-triangular `L`.
fn backward_sub<T: Scalar, const N: usize>(l: &Mat<T, N, N>, y: &[T; N]) -> [T; N] {
    let mut x = [T::zero(); N];
    for i in (0..N).rev() {
        let mut s = y[i];
        for k in i + 1..N {
            s = s - l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

/// Mean and covariance of a Gaussian state estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian<T, const N: usize> {
    pub mean: [T; N],
    pub cov: Mat<T, N, N>,
}

/// Time update: `x' = F x`, `P' = F P F^T + Q` (symmetrized).
pub fn predict<T: Scalar, const N: usize>(
    g: &Gaussian<T, N>,
    f: &Mat<T, N, N>,
    q: &Mat<T, N, N>,
) -> Gaussian<T, N> {
    let mut mean = [T::zero(); N];
    for (i, m) in mean.iter_mut().enumerate() {
        *m = (0..N).fold(T::zero(), |s, k| s + f[i][k] * g.mean[k]);
    }
    let fp = matmul(f, &g.cov);
    let fpf = matmul(&fp, &transpose(f));
    let half = T::of(0.5);
    let mut cov = zeros();
    for i in 0..N {
        for j in 0..N {
            cov[i][j] = (fpf[i][j] + fpf[j][i]) * half + q[i][j];
        }
    }
    Gaussian { mean, cov }
}

/// Innovation `z - H x` and its covariance factor `chol(H P H^T + R)`.
pub struct Innovation<T, const M: usize> {
    pub residual: [T; M],
    pub chol: Mat<T, M, M>,
}

impl<T: Scalar, const M: usize> Innovation<T, M> {
    pub fn new<const N: usize>(
        g: &Gaussian<T, N>,
        z: &[T; M],
        h: &Mat<T, M, N>,
        r: &Mat<T, M, M>,
    ) -> Result<Self> {
        let mut residual = *z;
        for (i, res) in residual.iter_mut().enumerate() {
            *res = *res - (0..N).fold(T::zero(), |s, k| s + h[i][k] * g.mean[k]);
        }
        let hp = matmul(h, &g.cov);
        let mut s = matmul(&hp, &transpose(h));
        for i in 0..M {
            for j in 0..M {
                s[i][j] = s[i][j] + r[i][j];
            }
        }
        let chol = cholesky(&s).ok_or_else(|| {
            Error::NumericalFailure("innovation covariance is not positive-definite".into())
        })?;
        Ok(Self { residual, chol })
    }

    /// Squared Mahalanobis distance of the residual.
    pub fn mahalanobis_sq(&self) -> T {
        forward_sub(&self.chol, &self.residual)
            .iter()
            .fold(T::zero(), |s, &v| s + v * v)
    }
}

/// Measurement update with gain `K = P H^T S^-1`.
///
/// The covariance is formed as `P - G G^T` with `G = K L` and `S = L L^T`, so
/// it stays exactly symmetric and no diagonal entry can grow.
pub fn update<T: Scalar, const N: usize, const M: usize>(
    g: &Gaussian<T, N>,
    z: &[T; M],
    h: &Mat<T, M, N>,
    r: &Mat<T, M, M>,
) -> Result<Gaussian<T, N>> {
    let innov = Innovation::new(g, z, h, r)?;
    let hp = matmul(h, &g.cov);
    // K^T = S^-1 (H P), column by column of H P
    let mut kt: Mat<T, M, N> = zeros();
    for col in 0..N {
        let b: [T; M] = std::array::from_fn(|i| hp[i][col]);
        let x = backward_sub(&innov.chol, &forward_sub(&innov.chol, &b));
        for i in 0..M {
            kt[i][col] = x[i];
        }
    }
    let k = transpose(&kt);
    let gmat = matmul(&k, &innov.chol);

    let mut mean = g.mean;
    for (i, m) in mean.iter_mut().enumerate() {
        *m = *m + (0..M).fold(T::zero(), |s, j| s + k[i][j] * innov.residual[j]);
    }
    let mut cov = g.cov;
    for i in 0..N {
        for j in 0..N {
            let ggt = (0..M).fold(T::zero(), |s, c| s + gmat[i][c] * gmat[j][c]);
            cov[i][j] = g.cov[i][j] - ggt;
        }
    }
    // enforce exact symmetry when the prior carried rounding asymmetry
    for i in 0..N {
        for j in 0..i {
            cov[j][i] = cov[i][j];
        }
    }
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure(
            "non-finite state after update".into(),
        ));
    }
    Ok(Gaussian { mean, cov })
}

/// Transition and process noise of a planar constant-velocity model with
/// white-noise acceleration of spectral density `q`. State is `(x, y, vx, vy)`.
pub fn constant_velocity<T: Scalar>(dt: T, q: T) -> (Mat<T, 4, 4>, Mat<T, 4, 4>) {
    let mut f = identity();
    f[0][2] = dt;
    f[1][3] = dt;
    let dt2 = dt * dt;
    let q11 = q * dt2 * dt / T::of(3.0);
    let q12 = q * dt2 / T::of(2.0);
    let q22 = q * dt;
    let mut qm = zeros();
    qm[0][0] = q11;
    qm[1][1] = q11;
    qm[0][2] = q12;
    qm[2][0] = q12;
    qm[1][3] = q12;
    qm[3][1] = q12;
    qm[2][2] = q22;
    qm[3][3] = q22;
    (f, qm)
}

/// Position-only measurement matrix for the constant-velocity state.
pub fn position_measurement<T: Scalar>() -> Mat<T, 2, 4> {
    let mut h = zeros();
    h[0][0] = T::one();
    h[1][1] = T::one();
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_update_hand_case() {
        let g = Gaussian {
            mean: [0.0f64],
            cov: [[1.0]],
        };
        let post = update(&g, &[1.0], &[[1.0]], &[[1.0]]).unwrap();
        assert!((post.mean[0] - 0.5).abs() < 1e-12);
        assert!((post.cov[0][0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scalar_predict_static_model() {
        let g = Gaussian {
            mean: [3.0f64],
            cov: [[1.0]],
        };
        let next = predict(&g, &[[1.0]], &[[0.1]]);
        assert_eq!(next.mean[0], 3.0);
        assert!((next.cov[0][0] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn uninformative_measurement_leaves_state() {
        let g = Gaussian {
            mean: [2.0f64, -1.0],
            cov: diag([1.0, 2.0]),
        };
        let r = diag([1e12, 1e12]);
        let post = update(&g, &[50.0, 50.0], &identity(), &r).unwrap();
        assert!((post.mean[0] - 2.0).abs() < 1e-6);
        assert!((post.mean[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn singular_innovation_is_reported() {
        let g = Gaussian {
            mean: [0.0f64],
            cov: [[0.0]],
        };
        assert!(matches!(
            update(&g, &[1.0], &[[1.0]], &[[0.0]]),
            Err(Error::NumericalFailure(_))
        ));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(cholesky(&[[1.0f64, 2.0], [2.0, 1.0]]).is_none());
        let l = cholesky(&[[4.0f64, 2.0], [2.0, 3.0]]).unwrap();
        let back = matmul(&l, &transpose(&l));
        assert!((back[1][1] - 3.0).abs() < 1e-12 && (back[0][1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_of_unit_covariance_is_euclidean() {
        let g = Gaussian {
            mean: [0.0f64, 0.0],
            cov: zeros(),
        };
        let innov = Innovation::new(&g, &[3.0, 4.0], &identity(), &identity()).unwrap();
        assert!((innov.mahalanobis_sq() - 25.0).abs() < 1e-12);
    }

    #[test]
    fn cv_model_advances_position() {
        let (f, q) = constant_velocity(1.0f64, 0.0);
        let g = Gaussian {
            mean: [0.0, 0.0, 1.0, 0.0],
            cov: diag([1.0, 1.0, 0.0, 0.0]),
        };
        let next = predict(&g, &f, &q);
        assert_eq!(&next.mean[..2], &[1.0, 0.0]);
        // no velocity uncertainty and no process noise: covariance unchanged
        assert_eq!(next.cov, g.cov);
    }
}
