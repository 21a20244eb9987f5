use nalgebra::{DMatrix, DVector};

use super::EvalError;

pub const COVARIANCE_EPS: f64 = 1e-6;
const PSD_TOLERANCE: f64 = 1e-8;

/// Multivariate normal fitted to embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl GaussianModel {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self, EvalError> {
        let d = mu.len();
        if sigma.shape() != (d, d) {
            return Err(EvalError::ShapeMismatch(format!("mean of length {d}, covariance {:?}", sigma.shape())));
        }
        Ok(Self { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Sample mean and unbiased sample covariance plus `ε·I`.
pub fn fit_gaussian(samples: &[Vec<f64>]) -> Result<GaussianModel, EvalError> {
    if samples.len() < 2 {
        return Err(EvalError::TooFewSamples { needed: 2, got: samples.len() });
    }
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(EvalError::ShapeMismatch("embeddings differ in length".into()));
    }
    let n = samples.len();
    let data = DMatrix::from_fn(n, d, |i, j| samples[i][j]);
    let mu = DVector::from_fn(d, |j, _| data.column(j).sum() / n as f64);
    let mut centered = data;
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mu[j]);
    }
    let mut sigma = centered.transpose() * &centered / (n as f64 - 1.0);
    for i in 0..d {
        sigma[(i, i)] += COVARIANCE_EPS;
    }
    Ok(GaussianModel { mu, sigma: symmetrize(sigma) })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Square root of a symmetric PSD matrix through its eigendecomposition.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, EvalError> {
    let eig = symmetrize(m.clone()).symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -PSD_TOLERANCE * scale {
            return Err(EvalError::NotPsd(*v));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Fréchet distance `‖μ_r − μ_g‖² + Tr Σ_r + Tr Σ_g − 2·Tr (Σ_r^½ Σ_g Σ_r^½)^½`, clamped at 0.
pub fn fid(r: &GaussianModel, g: &GaussianModel) -> Result<f64, EvalError> {
    if r.dim() != g.dim() {
        return Err(EvalError::ShapeMismatch(format!("dimensions {} and {}", r.dim(), g.dim())));
    }
    let root_r = psd_sqrt(&r.sigma)?;
    let inner = symmetrize(&root_r * &g.sigma * &root_r);
    let eig = inner.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
    let mut cross = 0.0;
    for &v in eig.eigenvalues.iter() {
        if v < -PSD_TOLERANCE * scale {
            return Err(EvalError::NotPsd(v));
        }
        cross += v.max(0.0).sqrt();
    }
    let dmu = (&r.mu - &g.mu).norm_squared();
    Ok((dmu + r.sigma.trace() + g.sigma.trace() - 2.0 * cross).max(0.0))
}

/// Log-density of `x` under `m`, via a Cholesky solve.
pub fn gaussian_log_density(x: &[f64], m: &GaussianModel) -> Result<f64, EvalError> {
    let d = m.dim();
    if x.len() != d {
        return Err(EvalError::ShapeMismatch(format!("point of length {} for dimension {d}", x.len())));
    }
    let chol = m.sigma.clone().cholesky().ok_or(EvalError::Singular)?;
    let l = chol.l();
    let diff = DVector::from_column_slice(x) - &m.mu;
    let z = l.solve_lower_triangular(&diff).ok_or(EvalError::Singular)?;
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + z.norm_squared()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn two_samples_mean() {
        let g = fit_gaussian(&[vec![1.0, 2.0], vec![3.0, 6.0]]).unwrap();
        assert_eq!(g.mu.as_slice(), &[2.0, 4.0]);
        assert!(fit_gaussian(&[vec![1.0]]).is_err());
    }

    #[test]
    fn identical_samples_give_eps_identity() {
        let g = fit_gaussian(&vec![vec![0.5, -1.0, 2.0]; 5]).unwrap();
        assert_eq!(g.sigma, DMatrix::identity(3, 3) * COVARIANCE_EPS);
    }

    #[test]
    fn monte_carlo_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = Normal::new(0.0, 1.0).unwrap();
        // x = A z + b with A lower triangular
        let a = [[2.0, 0.0], [0.6, 0.8]];
        let b = [1.0, -3.0];
        let samples: Vec<Vec<f64>> = (0..10_000)
            .map(|_| {
                let z = [n.sample(&mut rng), n.sample(&mut rng)];
                vec![a[0][0] * z[0] + b[0], a[1][0] * z[0] + a[1][1] * z[1] + b[1]]
            })
            .collect();
        let g = fit_gaussian(&samples).unwrap();
        let want_sigma = [[4.0, 1.2], [1.2, 1.0]];
        for i in 0..2 {
            assert!((g.mu[i] - b[i]).abs() < 0.05 * b[i].abs());
            for j in 0..2 {
                assert!((g.sigma[(i, j)] - want_sigma[i][j]).abs() < 0.05 * want_sigma[i][j]);
            }
        }
    }

    #[test]
    fn fid_identity_and_self() {
        let r = GaussianModel::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::identity(2, 2)).unwrap();
        let g = GaussianModel::new(DVector::from_vec(vec![4.0, -2.0]), DMatrix::identity(2, 2)).unwrap();
        assert!((fid(&r, &g).unwrap() - 25.0).abs() < 1e-12);
        assert!(fid(&r, &r).unwrap() <= 1e-12);
    }

    #[test]
    fn log_density_scalar_and_peak() {
        let m = GaussianModel::new(DVector::from_vec(vec![0.0]), DMatrix::identity(1, 1)).unwrap();
        assert!((gaussian_log_density(&[1.0], &m).unwrap() + 1.418_938_533_204_672_7).abs() < 1e-12);
        let m3 = GaussianModel::new(DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
        let peak = -1.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((gaussian_log_density(&[0.0; 3], &m3).unwrap() - peak).abs() < 1e-12);
    }

    #[test]
    fn density_decreases_along_rays() {
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let m = GaussianModel::new(DVector::from_vec(vec![1.0, 1.0]), sigma).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let t = k as f64 * 0.3;
            let v = gaussian_log_density(&[1.0 + 0.6 * t, 1.0 - 0.8 * t], &m).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn singular_covariance_is_reported() {
        let m = GaussianModel::new(DVector::zeros(2), DMatrix::zeros(2, 2)).unwrap();
        assert!(matches!(gaussian_log_density(&[0.0, 0.0], &m), Err(EvalError::Singular)));
    }
}
