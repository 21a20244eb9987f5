use std::fmt;
use std::str::FromStr;

use super::EvalError;

/// Quality buckets over rounded mean grades on the 0-9 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GradeBucket {
    B0_3,
    B4_5,
    B6_7,
    B8_9,
}

impl GradeBucket {
    pub const ALL: [GradeBucket; 4] = [GradeBucket::B0_3, GradeBucket::B4_5, GradeBucket::B6_7, GradeBucket::B8_9];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GradeBucket::B0_3 => "0-3",
            GradeBucket::B4_5 => "4-5",
            GradeBucket::B6_7 => "6-7",
            GradeBucket::B8_9 => "8-9",
        }
    }
}

impl fmt::Display for GradeBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GradeBucket {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, EvalError> {
        Self::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| EvalError::Parse { line: 0, reason: format!("unknown bucket `{s}`") })
    }
}

/// Rounds to the nearest integer (halves away from zero), then buckets.
pub fn grade_bucket(mean_grade: f64) -> Result<GradeBucket, EvalError> {
    let g = mean_grade.round();
    if !(0.0..=9.0).contains(&g) {
        return Err(EvalError::OutOfRange(mean_grade));
    }
    Ok(match g as u8 {
        0..=3 => GradeBucket::B0_3,
        4 | 5 => GradeBucket::B4_5,
        6 | 7 => GradeBucket::B6_7,
        _ => GradeBucket::B8_9,
    })
}

/// Sample Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(EvalError::ShapeMismatch(format!("lengths {} and {}", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bucket_boundaries() {
        assert_eq!(grade_bucket(3.4).unwrap(), GradeBucket::B0_3);
        assert_eq!(grade_bucket(3.6).unwrap(), GradeBucket::B4_5);
        assert_eq!(grade_bucket(9.0).unwrap(), GradeBucket::B8_9);
        assert_eq!(grade_bucket(5.5).unwrap(), GradeBucket::B6_7);
        assert!(grade_bucket(9.6).is_err());
        assert!(grade_bucket(-0.6).is_err());
        assert!(grade_bucket(f64::NAN).is_err());
    }

    #[test]
    fn bucket_is_monotone() {
        let mut prev = GradeBucket::B0_3;
        for k in 0..=90 {
            let b = grade_bucket(k as f64 / 10.0).unwrap();
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn pearson_identities() {
        let a = [1.0, 4.0, 2.0, 8.0, 5.0];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let affine: Vec<f64> = a.iter().map(|v| -3.0 * v + 7.0).collect();
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!((pearson(&a, &affine).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson(&a, &[2.0; 5]), Err(EvalError::ZeroVariance)));
    }
}
