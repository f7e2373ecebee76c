//! Frechet distance between Gaussian fits via symmetric eigendecomposition.

use crate::error::{Error, Result};

/// Eigenvalues below this are treated as zero when taking matrix roots.
const EIG_CLAMP: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major d x d covariance, symmetric.
    pub cov: Vec<f64>,
    pub count: usize,
}

impl GaussianStats {
    /// Fit with the unbiased covariance estimator.
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        if features.len() < 2 {
            return Err(Error::Invalid(format!(
                "need at least 2 samples for Gaussian stats, got {}",
                features.len()
            )));
        }
        let d = features[0].len();
        let n = features.len();
        let mut mean = vec![0.0f64; d];
        for f in features {
            for (m, &v) in mean.iter_mut().zip(f) {
                *m += v / n as f64;
            }
        }
        let mut cov = vec![0.0f64; d * d];
        for f in features {
            for i in 0..d {
                let di = f[i] - mean[i];
                for j in 0..d {
                    cov[i * d + j] += di * (f[j] - mean[j]) / (n - 1) as f64;
                }
            }
        }
        Ok(GaussianStats { mean, cov, count: n })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, row-major eigenvector matrix V with rows as vectors? no:
/// V[i*d+j] is component i of eigenvector j, i.e. columns are vectors).
pub fn jacobi_eigen(matrix: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0f64; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..d {
            for j in i + 1..d {
                off += a[i * d + j] * a[i * d + j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..d {
                    let aip = a[i * d + p];
                    let aiq = a[i * d + q];
                    a[i * d + p] = c * aip - s * aiq;
                    a[i * d + q] = s * aip + c * aiq;
                }
                for j in 0..d {
                    let apj = a[p * d + j];
                    let aqj = a[q * d + j];
                    a[p * d + j] = c * apj - s * aqj;
                    a[q * d + j] = s * apj + c * aqj;
                }
                for i in 0..d {
                    let vip = v[i * d + p];
                    let viq = v[i * d + q];
                    v[i * d + p] = c * vip - s * viq;
                    v[i * d + q] = s * vip + c * viq;
                }
            }
        }
    }
    let eig: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    (eig, v)
}

/// `V f(L) V^T` for a symmetric matrix given its eigendecomposition.
fn eigen_apply(eig: &[f64], v: &[f64], d: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let fe: Vec<f64> = eig.iter().map(|&l| f(l)).collect();
    let mut out = vec![0.0f64; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += v[i * d + k] * fe[k] * v[j * d + k];
            }
            out[i * d + j] = acc;
        }
    }
    out
}

fn matmul_sq(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

/// `||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})`, computed through
/// `Tr((S_a^{1/2} S_b S_a^{1/2})^{1/2})` so every root is of a symmetric
/// matrix. Eigenvalues are clamped at zero before the roots.
pub fn fid(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let d = a.dim();
    if b.dim() != d {
        return Err(Error::Invalid(format!(
            "FID dimension mismatch: {} vs {}",
            d,
            b.dim()
        )));
    }
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    let (eig_a, v_a) = jacobi_eigen(&a.cov, d);
    let sqrt_a = eigen_apply(&eig_a, &v_a, d, |l| if l < EIG_CLAMP { 0.0 } else { l.sqrt() });
    let inner = matmul_sq(&matmul_sq(&sqrt_a, &b.cov, d), &sqrt_a, d);
    // symmetrize against accumulated rounding before the second eigen pass
    let mut sym = inner.clone();
    for i in 0..d {
        for j in 0..d {
            sym[i * d + j] = 0.5 * (inner[i * d + j] + inner[j * d + i]);
        }
    }
    let (eig_s, _) = jacobi_eigen(&sym, d);
    let tr_sqrt: f64 = eig_s
        .iter()
        .map(|&l| if l < EIG_CLAMP { 0.0 } else { l.sqrt() })
        .sum();
    let tr_a: f64 = (0..d).map(|i| a.cov[i * d + i]).sum();
    let tr_b: f64 = (0..d).map(|i| b.cov[i * d + i]).sum();
    Ok(mean_term + tr_a + tr_b - 2.0 * tr_sqrt)
}
