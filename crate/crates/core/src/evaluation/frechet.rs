//! Gaussian fits of feature sets and the Fréchet distance between them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal jitter added to both covariances when either has a negative
/// eigenvalue.
pub const JITTER: f64 = 1e-6;
const SYMMETRY_TOL: f64 = 1e-9;

/// Mean and unbiased covariance of a feature set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FeatureStats {
    pub mu: Vec<f64>,
    /// Row-major `d × d`.
    pub sigma: Vec<f64>,
    pub n: usize,
    pub extractor_id: String,
}

impl FeatureStats {
    /// Fits `rows` (`n × d`, n ≥ 2).
    pub fn from_features(rows: &[Vec<f64>], extractor_id: &str) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::Input(format!("need at least 2 feature rows, got {n}")));
        }
        let d = rows[0].len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::Input("feature rows must share a positive dimension".into()));
        }
        let mut mu = vec![0.0; d];
        for r in rows {
            for (m, v) in mu.iter_mut().zip(r) {
                *m += v;
            }
        }
        mu.iter_mut().for_each(|m| *m /= n as f64);
        let mut sigma = vec![0.0; d * d];
        for r in rows {
            for i in 0..d {
                let di = r[i] - mu[i];
                for j in i..d {
                    sigma[i * d + j] += di * (r[j] - mu[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = sigma[i * d + j] / (n - 1) as f64;
                sigma[i * d + j] = v;
                sigma[j * d + i] = v;
            }
        }
        Ok(Self {
            mu,
            sigma,
            n,
            extractor_id: extractor_id.to_string(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn check(&self) -> Result<DMatrix<f64>> {
        let d = self.dim();
        if self.sigma.len() != d * d {
            return Err(Error::Input(format!(
                "covariance has {} entries, expected {d}x{d}",
                self.sigma.len()
            )));
        }
        let m = DMatrix::from_row_slice(d, d, &self.sigma);
        let scale = m.amax().max(1.0);
        if (&m - m.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(Error::Input("covariance is not symmetric".into()));
        }
        Ok((&m + m.transpose()) * 0.5)
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Principal square root of a symmetric positive semidefinite matrix;
/// eigenvalues within rounding of zero are clamped.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let top = eig.eigenvalues.amax().max(1.0);
    let mut roots = DVector::zeros(eig.eigenvalues.len());
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l < -1e-8 * top {
            return Err(Error::Numeric(format!(
                "matrix square root failed: eigenvalue {l:e} is negative beyond tolerance"
            )));
        }
        roots[k] = l.max(0.0).sqrt();
    }
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// `‖μp − μq‖² + tr Σp + tr Σq − 2 tr (Σp^½ Σq Σp^½)^½`, clamped at 0.
pub fn frechet_distance(p: &FeatureStats, q: &FeatureStats) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Input(format!(
            "feature dimensions differ: {} vs {}",
            p.dim(),
            q.dim()
        )));
    }
    let mut s1 = p.check()?;
    let mut s2 = q.check()?;
    if min_eigenvalue(&s1) < 0.0 || min_eigenvalue(&s2) < 0.0 {
        let d = p.dim();
        s1 += DMatrix::identity(d, d) * JITTER;
        s2 += DMatrix::identity(d, d) * JITTER;
    }
    let root1 = psd_sqrt(&s1)?;
    let inner = &root1 * &s2 * &root1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = psd_sqrt(&inner)?.trace();

    let mean_term: f64 = p
        .mu
        .iter()
        .zip(&q.mu)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let value = mean_term + s1.trace() + s2.trace() - 2.0 * cross;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("Fréchet distance is {value}")));
    }
    if value < 0.0 {
        log::warn!("Fréchet distance {value:e} is negative from rounding; clamping to 0");
        return Ok(0.0);
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(mu: Vec<f64>, diag: f64) -> FeatureStats {
        let d = mu.len();
        let mut sigma = vec![0.0; d * d];
        for i in 0..d {
            sigma[i * d + i] = diag;
        }
        FeatureStats {
            mu,
            sigma,
            n: 10,
            extractor_id: "test".into(),
        }
    }

    #[test]
    fn unbiased_covariance_of_two_points() {
        // points (0,0) and (2,4): mean (1,2), deviations ±(1,2), /(n-1)=1
        let s = FeatureStats::from_features(&[vec![0.0, 0.0], vec![2.0, 4.0]], "t").unwrap();
        assert_eq!(s.mu, vec![1.0, 2.0]);
        assert_eq!(s.sigma, vec![2.0, 4.0, 4.0, 8.0]);
    }

    #[test]
    fn too_few_rows() {
        assert!(FeatureStats::from_features(&[vec![1.0]], "t").is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let err = frechet_distance(&gaussian(vec![0.0; 2], 1.0), &gaussian(vec![0.0; 3], 1.0));
        assert!(matches!(err, Err(Error::Input(_))));
    }

    #[test]
    fn asymmetric_sigma_is_rejected() {
        let mut p = gaussian(vec![0.0; 2], 1.0);
        p.sigma[1] = 0.5;
        assert!(frechet_distance(&p, &p).is_err());
    }

    #[test]
    fn rank_deficient_covariance_is_handled() {
        // 3 samples in 8 dims: rank 2 covariance
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|k| (0..8).map(|j| ((k * 8 + j) as f64 * 0.37).sin()).collect())
            .collect();
        let s = FeatureStats::from_features(&rows, "t").unwrap();
        let d = frechet_distance(&s, &s).unwrap();
        assert!(d.abs() < 1e-6, "{d}");
    }

    #[test]
    fn commuting_covariances_match_scalar_formula() {
        // diagonal Σp = diag(a), Σq = diag(b): Σ_i (√a_i − √b_i)²
        let mut p = gaussian(vec![0.0; 3], 0.0);
        let mut q = gaussian(vec![0.0; 3], 0.0);
        let (a, b) = ([1.0, 4.0, 9.0], [4.0, 1.0, 0.25]);
        for i in 0..3 {
            p.sigma[i * 3 + i] = a[i];
            q.sigma[i * 3 + i] = b[i];
        }
        let expected: f64 = (0..3).map(|i| (a[i] as f64).sqrt() - (b[i] as f64).sqrt()).map(|x| x * x).sum();
        let got = frechet_distance(&p, &q).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }
}
