use super::scalar::Scalar;
use super::tensor::Tensor;
use super::AutogradError;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-(sample, channel) normalization over the spatial axes, followed by an
/// optional per-channel affine map `gamma · x̂ + beta`.
pub fn instance_norm<T: Scalar>(
    input: &Tensor<T>,
    gamma: Option<&Tensor<T>>,
    beta: Option<&Tensor<T>>,
    eps: f64,
) -> Result<Tensor<T>, AutogradError> {
    let s = input.shape();
    if s.len() != 4 {
        return Err(AutogradError::ShapeMismatch(format!(
            "instance_norm expects N×C×H×W, got {s:?}"
        )));
    }
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    if hw < 2 {
        return Err(AutogradError::Geometry(format!(
            "instance_norm needs at least 2 spatial positions, got {hw}"
        )));
    }
    for (name, p) in [("gamma", gamma), ("beta", beta)] {
        if let Some(p) = p {
            if p.numel() != c {
                return Err(AutogradError::ShapeMismatch(format!(
                    "{name} has {} entries for {c} channels",
                    p.numel()
                )));
            }
        }
    }
    let eps = T::of(eps);
    let inv_hw = T::one() / T::from_usize(hw).unwrap();
    let x = input.data();
    let mut normalized = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); n * c];
    for plane in 0..n * c {
        let src = &x[plane * hw..(plane + 1) * hw];
        let mean = src.iter().copied().sum::<T>() * inv_hw;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_hw;
        let is = T::one() / (var + eps).sqrt();
        inv_std[plane] = is;
        for (d, &v) in normalized[plane * hw..(plane + 1) * hw].iter_mut().zip(src) {
            *d = (v - mean) * is;
        }
    }
    drop(x);

    let g = gamma.map(|t| t.to_vec());
    let b = beta.map(|t| t.to_vec());
    let mut out = normalized.clone();
    if g.is_some() || b.is_some() {
        for plane in 0..n * c {
            let ch = plane % c;
            let scale = g.as_ref().map_or(T::one(), |g| g[ch]);
            let shift = b.as_ref().map_or(T::zero(), |b| b[ch]);
            for v in &mut out[plane * hw..(plane + 1) * hw] {
                *v = *v * scale + shift;
            }
        }
    }

    let mut parents = vec![input.clone()];
    parents.extend(gamma.cloned());
    parents.extend(beta.cloned());
    let has_gamma = gamma.is_some();
    let has_beta = beta.is_some();
    let need_input = input.requires_grad();
    Ok(Tensor::from_op(s.to_vec(), out, parents, move |grad| {
        let mut grads = Vec::with_capacity(3);
        grads.push(need_input.then(|| {
            let mut gx = vec![T::zero(); grad.len()];
            for plane in 0..n * c {
                let ch = plane % c;
                let scale = g.as_ref().map_or(T::one(), |g| g[ch]);
                let range = plane * hw..(plane + 1) * hw;
                let xh = &normalized[range.clone()];
                let gy = &grad[range.clone()];
                let mut mean_g = T::zero();
                let mut mean_gx = T::zero();
                for (&gv, &xv) in gy.iter().zip(xh) {
                    mean_g = mean_g + gv * scale;
                    mean_gx = mean_gx + gv * scale * xv;
                }
                mean_g = mean_g * inv_hw;
                mean_gx = mean_gx * inv_hw;
                let is = inv_std[plane];
                for ((d, &gv), &xv) in gx[range].iter_mut().zip(gy).zip(xh) {
                    *d = is * (gv * scale - mean_g - xv * mean_gx);
                }
            }
            gx
        }));
        if has_gamma {
            let mut gg = vec![T::zero(); c];
            for plane in 0..n * c {
                let range = plane * hw..(plane + 1) * hw;
                gg[plane % c] = gg[plane % c]
                    + grad[range.clone()]
                        .iter()
                        .zip(&normalized[range])
                        .map(|(&a, &b)| a * b)
                        .sum::<T>();
            }
            grads.push(Some(gg));
        }
        if has_beta {
            let mut gb = vec![T::zero(); c];
            for plane in 0..n * c {
                gb[plane % c] = gb[plane % c]
                    + grad[plane * hw..(plane + 1) * hw].iter().copied().sum::<T>();
            }
            grads.push(Some(gb));
        }
        grads
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let x = Tensor::<f64>::full(&[1, 2, 3, 3], 4.0);
        let y = instance_norm(&x, None, None, INSTANCE_NORM_EPS).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_input_has_zero_mean_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::randn(&[2, 3, 8, 8], 2.0, 3.0, &mut rng);
        let y = instance_norm(&x, None, None, INSTANCE_NORM_EPS).unwrap().to_vec();
        for plane in y.chunks(64) {
            let mean = plane.iter().sum::<f64>() / 64.0;
            let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn single_position_is_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 1, 1, 1]);
        assert!(instance_norm(&x, None, None, 1e-5).is_err());
    }
}
