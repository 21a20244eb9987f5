use nalgebra::{DMatrix, DVector};

use super::grades::GradeBucket;
use super::EvalError;

pub const GRADIENT_TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 10_000;

/// Per-column z-score parameters. Constant columns keep unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self, EvalError> {
        let p = feature_width(rows)?;
        let n = rows.len() as f64;
        let mut mean = vec![0.0; p];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut scale = vec![0.0; p];
        for r in rows {
            for ((s, v), m) in scale.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut scale {
            *s = (*s / n).sqrt();
            if *s == 0.0 || !s.is_finite() {
                *s = 1.0;
            }
        }
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

fn feature_width(rows: &[Vec<f64>]) -> Result<usize, EvalError> {
    let p = rows.first().map(Vec::len).ok_or(EvalError::TooFewSamples { needed: 1, got: 0 })?;
    if rows.iter().any(|r| r.len() != p) {
        return Err(EvalError::ShapeMismatch("feature rows differ in length".into()));
    }
    Ok(p)
}

/// Multinomial logistic regression over the four grade buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    /// `n_classes × n_features`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub standardizer: Standardizer,
    pub l2: f64,
    pub iterations: usize,
    pub loss_history: Vec<f64>,
    pub fitted: bool,
}

/// Fits softmax regression on z-scored features by full-batch gradient descent.
///
/// The step is `1/L` with `L` the Böhning curvature bound
/// `½·λ_max(X̃ᵀX̃)/n + l2` (X̃ includes the bias column), which makes the loss
/// nonincreasing. Stops when the gradient norm drops below [`GRADIENT_TOLERANCE`]
/// or after [`MAX_ITERATIONS`].
pub fn fit_logistic(features: &[Vec<f64>], labels: &[GradeBucket], l2: f64) -> Result<LogisticModel, EvalError> {
    let k = GradeBucket::ALL.len();
    let p = feature_width(features)?;
    let n = features.len();
    if labels.len() != n {
        return Err(EvalError::ShapeMismatch(format!("{n} rows, {} labels", labels.len())));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(EvalError::DegenerateLabels);
    }
    if !(l2 >= 0.0) {
        return Err(EvalError::OutOfRange(l2));
    }
    let standardizer = Standardizer::fit(features)?;
    // design matrix with a trailing bias column
    let x = DMatrix::from_fn(n, p + 1, |i, j| {
        if j == p {
            1.0
        } else {
            (features[i][j] - standardizer.mean[j]) / standardizer.scale[j]
        }
    });
    let xt = x.transpose();
    let gram = &xt * &x / n as f64;
    let lambda_max = gram.symmetric_eigen().eigenvalues.max();
    let step = 1.0 / (0.5 * lambda_max + l2);
    let mut y = DMatrix::zeros(n, k);
    for (i, l) in labels.iter().enumerate() {
        y[(i, l.index())] = 1.0;
    }

    // theta is (p+1) × k; the last row holds the biases
    let mut theta = DMatrix::<f64>::zeros(p + 1, k);
    let mut loss_history = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        let logits = &x * &theta;
        let (probs, loss) = softmax_loss(&logits, &y);
        let reg = 0.5 * l2 * theta.rows(0, p).norm_squared();
        loss_history.push(loss + reg);
        let mut grad = &xt * (probs - &y) / n as f64;
        let mut w_grad = grad.rows_mut(0, p);
        w_grad += theta.rows(0, p) * l2;
        if grad.norm() < GRADIENT_TOLERANCE {
            break;
        }
        theta -= grad * step;
        iterations += 1;
    }
    Ok(LogisticModel {
        weights: theta.rows(0, p).transpose(),
        bias: theta.row(p).transpose(),
        standardizer,
        l2,
        iterations,
        loss_history,
        fitted: true,
    })
}

/// Row-wise softmax of `logits` and the mean cross-entropy against one-hot `y`.
fn softmax_loss(logits: &DMatrix<f64>, y: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let mut probs = logits.clone();
    let mut loss = 0.0;
    for (mut row, target) in probs.row_iter_mut().zip(y.row_iter()) {
        let max = row.max();
        let label_logit: f64 = row.iter().zip(target.iter()).map(|(v, t)| v * t).sum();
        row.iter_mut().for_each(|v| *v = (*v - max).exp());
        let z = row.sum();
        loss += z.ln() + max - label_logit;
        row /= z;
    }
    (probs, loss / logits.nrows() as f64)
}

impl LogisticModel {
    pub fn scores(&self, row: &[f64]) -> Result<DVector<f64>, EvalError> {
        if !self.fitted {
            return Err(EvalError::Unfitted);
        }
        if row.len() != self.weights.ncols() {
            return Err(EvalError::ShapeMismatch(format!(
                "{} features for a model of {}",
                row.len(),
                self.weights.ncols()
            )));
        }
        let z = DVector::from_vec(self.standardizer.apply(row));
        Ok(&self.weights * z + &self.bias)
    }

    pub fn predict_one(&self, row: &[f64]) -> Result<GradeBucket, EvalError> {
        let s = self.scores(row)?;
        Ok(GradeBucket::from_index(s.argmax().0).expect("four classes"))
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<GradeBucket>, EvalError> {
        rows.iter().map(|r| self.predict_one(r)).collect()
    }
}

/// Linear score `Σ a_i·f_i + b` fitted by least squares on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScore {
    pub coefficients: DVector<f64>,
    pub intercept: f64,
    pub standardizer: Standardizer,
}

pub fn fit_linear_score(features: &[Vec<f64>], targets: &[f64]) -> Result<LinearScore, EvalError> {
    let p = feature_width(features)?;
    let n = features.len();
    if targets.len() != n {
        return Err(EvalError::ShapeMismatch(format!("{n} rows, {} targets", targets.len())));
    }
    let standardizer = Standardizer::fit(features)?;
    let x = DMatrix::from_fn(n, p + 1, |i, j| {
        if j == p {
            1.0
        } else {
            (features[i][j] - standardizer.mean[j]) / standardizer.scale[j]
        }
    });
    let y = DVector::from_column_slice(targets);
    let solution = x.svd(true, true).solve(&y, 1e-12).map_err(|_| EvalError::Singular)?;
    Ok(LinearScore {
        coefficients: solution.rows(0, p).into_owned(),
        intercept: solution[p],
        standardizer,
    })
}

impl LinearScore {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let z = DVector::from_vec(self.standardizer.apply(row));
        self.coefficients.dot(&z) + self.intercept
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn separable(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<GradeBucket>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let hi = i % 2 == 0;
            let shift = if hi { 2.0 } else { -2.0 };
            rows.push(vec![shift + rng.gen_range(-1.0..1.0), rng.gen_range(-3.0..3.0)]);
            labels.push(if hi { GradeBucket::B8_9 } else { GradeBucket::B0_3 });
        }
        (rows, labels)
    }

    #[test]
    fn separable_data_is_fit_exactly() {
        let (x, y) = separable(60, 1);
        let m = fit_logistic(&x, &y, 0.0).unwrap();
        assert_eq!(m.predict(&x).unwrap(), y);
        for w in m.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn row_order_does_not_matter() {
        let (x, y) = separable(40, 2);
        let a = fit_logistic(&x, &y, 1e-3).unwrap();
        let mut idx: Vec<usize> = (0..40).collect();
        idx.reverse();
        idx.swap(3, 17);
        let xp: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
        let yp: Vec<GradeBucket> = idx.iter().map(|&i| y[i]).collect();
        let b = fit_logistic(&xp, &yp, 1e-3).unwrap();
        assert!((a.weights.clone() - b.weights.clone()).amax() < 1e-8);
        assert!((a.bias.clone() - b.bias.clone()).amax() < 1e-8);
    }

    #[test]
    fn prediction_invariant_to_weight_shift() {
        let (x, y) = separable(40, 3);
        let m = fit_logistic(&x, &y, 0.0).unwrap();
        let mut shifted = m.clone();
        for mut row in shifted.weights.row_iter_mut() {
            row[0] += 5.0;
            row[1] -= 2.0;
        }
        assert_eq!(m.predict(&x).unwrap(), shifted.predict(&x).unwrap());
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            fit_logistic(&x, &[GradeBucket::B4_5; 2], 0.0),
            Err(EvalError::DegenerateLabels)
        ));
    }

    #[test]
    fn linear_score_recovers_affine_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.gen_range(0.0..5.0), rng.gen_range(-1.0..1.0)]).collect();
        let t: Vec<f64> = x.iter().map(|r| 1.5 * r[0] - 2.0 * r[1] + 0.5).collect();
        let s = fit_linear_score(&x, &t).unwrap();
        for (r, v) in x.iter().zip(&t) {
            assert!((s.predict(r) - v).abs() < 1e-9);
        }
    }
}
