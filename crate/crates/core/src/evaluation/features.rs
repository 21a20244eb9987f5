use super::EvalError;
use crate::matrix::Matrix;

/// Per-row correlation-like scores between an original and a generated mel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StoiFeatures {
    pub values: Vec<f64>,
}

/// Element `i` is `Σ_t (x_i(t) − x̄(t))·(y_i(t) − ȳ(t))`, where `x̄(t)` and
/// `ȳ(t)` are the means of column `t` over all rows.
pub fn stoi_features(x: &Matrix, y: &Matrix) -> Result<StoiFeatures, EvalError> {
    if x.shape() != y.shape() {
        return Err(EvalError::ShapeMismatch(format!("{:?} vs {:?}", x.shape(), y.shape())));
    }
    let (rows, cols) = x.shape();
    if rows == 0 || cols == 0 {
        return Err(EvalError::ShapeMismatch("empty matrices".into()));
    }
    let mut x_mean = vec![0.0; cols];
    let mut y_mean = vec![0.0; cols];
    for r in 0..rows {
        for (t, (mx, my)) in x_mean.iter_mut().zip(y_mean.iter_mut()).enumerate() {
            *mx += x.get(r, t);
            *my += y.get(r, t);
        }
    }
    for m in x_mean.iter_mut().chain(y_mean.iter_mut()) {
        *m /= rows as f64;
    }
    let values = (0..rows)
        .map(|r| {
            x.row(r)
                .iter()
                .zip(y.row(r))
                .zip(x_mean.iter().zip(&y_mean))
                .map(|((&a, &b), (&ma, &mb))| (a - ma) * (b - mb))
                .sum()
        })
        .collect();
    Ok(StoiFeatures { values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_comparison_is_nonnegative() {
        let x = Matrix::from_fn(5, 7, |r, c| ((r * 7 + c) as f64 * 0.37).sin());
        let f = stoi_features(&x, &x).unwrap();
        assert!(f.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn constant_target_gives_zeros() {
        let x = Matrix::from_fn(4, 4, |r, c| (r + 2 * c) as f64);
        let y = Matrix::from_fn(4, 4, |_, _| 3.0);
        assert!(stoi_features(&x, &y).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn small_hand_case() {
        // columns [1,3] and [2,2]: centered x = [-1,1] and [0,0]; y = x
        let x = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 2.0]);
        assert_eq!(stoi_features(&x, &x).unwrap().values, vec![1.0, 1.0]);
        assert!(stoi_features(&x, &Matrix::zeros(3, 2)).is_err());
    }
}
