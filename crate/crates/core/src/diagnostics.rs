//! Finite-difference gradient checks for every differentiable op and the
//! desk-scale networks, in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::gradcheck::{check_gradients, GradCheckReport};
use crate::autograd::{
    bce_with_logits_to_const, conv2d, conv_transpose2d, instance_norm, l1_loss, mse_loss, mse_to_const, AutogradError,
    PadMode, Tensor, INSTANCE_NORM_EPS,
};
use crate::models::{
    Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ModelError, Network, UNet, UNetConfig,
};

pub const GRADCHECK_STEP: f64 = 1e-4;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Whole networks contain thousands of relu kinks; a step of 1e-4 on a stem
/// weight moves enough pre-activations across one to bias the difference.
pub const NETWORK_STEP: f64 = 1e-6;

/// Entries perturbed per parameter tensor in the whole-network checks.
const NETWORK_ENTRIES: usize = 8;

fn leaf(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 0.0, 1.0, rng)
}

/// Like [`leaf`] but bounded away from 0, where relu/abs have kinks.
fn off_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let t = leaf(shape, rng);
    t.data_mut().iter_mut().for_each(|v| *v = v.signum() * (v.abs() + 0.1));
    t
}

/// `Σ out ⊙ w` for a fixed random `w`, so every output entry contributes a distinct weight.
fn probe(out: &Tensor<f64>, weights: &Tensor<f64>) -> Result<Tensor<f64>, AutogradError> {
    Ok(out.mul(weights)?.sum())
}

type Check = Box<dyn Fn(&mut ChaCha8Rng) -> Result<GradCheckReport, ModelError>>;

fn unary(name: &'static str, f: fn(&Tensor<f64>) -> Tensor<f64>, kinked: bool) -> (&'static str, Check) {
    (
        name,
        Box::new(move |rng| {
            let x = if kinked { off_kink(&[3, 4], rng) } else { leaf(&[3, 4], rng) };
            let w = leaf(&[3, 4], rng);
            Ok(check_gradients(name, &[x.clone()], || probe(&f(&x), &w), GRADCHECK_STEP, None, rng)?)
        }),
    )
}

fn binary(
    name: &'static str,
    f: fn(&Tensor<f64>, &Tensor<f64>) -> Result<Tensor<f64>, AutogradError>,
    b_shape: &'static [usize],
) -> (&'static str, Check) {
    (
        name,
        Box::new(move |rng| {
            let a = leaf(&[2, 5], rng);
            let b = off_kink(b_shape, rng);
            let w = leaf(&[2, 5], rng);
            let inputs = [a.clone(), b.clone()];
            Ok(check_gradients(name, &inputs, || probe(&f(&a, &b)?, &w), GRADCHECK_STEP, None, rng)?)
        }),
    )
}

fn network(name: &'static str, net: impl Network<f64> + 'static, in_shape: [usize; 4]) -> (&'static str, Check) {
    (
        name,
        Box::new(move |rng| {
            let x = leaf(&in_shape, rng);
            let probe_shape = net.forward(&x)?.shape().to_vec();
            let w = leaf(&probe_shape, rng);
            let mut inputs = vec![x.clone()];
            inputs.extend(net.parameters());
            Ok(check_gradients(
                name,
                &inputs,
                || probe(&net.forward(&x)?, &w),
                NETWORK_STEP,
                Some(NETWORK_ENTRIES),
                rng,
            )?)
        }),
    )
}

fn all_checks(seed: u64) -> Result<Vec<(&'static str, Check)>, ModelError> {
    let mut checks: Vec<(&'static str, Check)> = vec![
        binary("add", |a, b| a.add(b), &[2, 5]),
        binary("sub", |a, b| a.sub(b), &[2, 5]),
        binary("mul", |a, b| a.mul(b), &[2, 5]),
        binary("mul_broadcast", |a, b| a.mul(b), &[1]),
        binary("concat_channels", |a, b| {
            let a4 = a.reshape(&[1, 2, 5, 1])?;
            let b4 = b.reshape(&[1, 2, 5, 1])?;
            a4.concat_channels(&b4)?.reshape(&[2, 10])?.mul(&a4.concat_channels(&b4)?.reshape(&[2, 10])?)?.sum().add(&a.sum())
        }, &[2, 5]),
        binary("l1_loss", |a, b| Ok(l1_loss(a, b)?.mul_scalar(3.0).add(&a.sum())?), &[2, 5]),
        binary("mse_loss", |a, b| Ok(mse_loss(a, b)?.add(&a.sum())?), &[2, 5]),
        unary("add_scalar", |x| x.add_scalar(0.7), false),
        unary("mul_scalar", |x| x.mul_scalar(-1.3), false),
        unary("neg", |x| x.neg(), false),
        unary("tanh", |x| x.tanh(), false),
        unary("relu", |x| x.relu(), true),
        unary("leaky_relu", |x| x.leaky_relu(0.2), true),
        unary("abs", |x| x.abs(), true),
        unary("square", |x| x.square(), false),
        unary("exp", |x| x.exp(), false),
        unary("softplus", |x| x.softplus(), false),
        unary("sum", |x| x.square().sum(), false),
        unary("mean", |x| x.square().mean(), false),
        unary("mse_to_const", |x| mse_to_const(x, 0.5), false),
        unary("bce_with_logits", |x| bce_with_logits_to_const(x, 1.0).add(&bce_with_logits_to_const(x, 0.0)).unwrap(), false),
        unary("composite", |x| {
            let y = x.tanh().mul(&x.square()).unwrap().add(&x.exp().mul_scalar(0.1)).unwrap();
            y.leaky_relu(0.2).sub(&x.softplus()).unwrap()
        }, true),
    ];
    for (name, mode, stride, k, pad) in [
        ("conv2d_zero", PadMode::Zero, 1usize, 3usize, 1usize),
        ("conv2d_reflect", PadMode::Reflect, 1, 3, 1),
        ("conv2d_stride2", PadMode::Zero, 2, 4, 1),
        ("conv2d_reflect7", PadMode::Reflect, 1, 7, 3),
    ] {
        checks.push((
            name,
            Box::new(move |rng| {
                let x = leaf(&[2, 2, 8, 8], rng);
                let wt = leaf(&[3, 2, k, k], rng);
                let b = leaf(&[3], rng);
                let out_shape = conv2d(&x, &wt, Some(&b), stride, pad, mode)?.shape().to_vec();
                let w = leaf(&out_shape, rng);
                let inputs = [x.clone(), wt.clone(), b.clone()];
                Ok(check_gradients(
                    name,
                    &inputs,
                    || probe(&conv2d(&x, &wt, Some(&b), stride, pad, mode)?, &w),
                    GRADCHECK_STEP,
                    None,
                    rng,
                )?)
            }),
        ));
    }
    for (name, stride, k, pad) in [("conv_transpose2d", 2usize, 4usize, 1usize), ("conv_transpose2d_s1", 1, 3, 1)] {
        checks.push((
            name,
            Box::new(move |rng| {
                let x = leaf(&[2, 3, 4, 4], rng);
                let wt = leaf(&[3, 2, k, k], rng);
                let b = leaf(&[2], rng);
                let out_shape = conv_transpose2d(&x, &wt, Some(&b), stride, pad)?.shape().to_vec();
                let w = leaf(&out_shape, rng);
                let inputs = [x.clone(), wt.clone(), b.clone()];
                Ok(check_gradients(
                    name,
                    &inputs,
                    || probe(&conv_transpose2d(&x, &wt, Some(&b), stride, pad)?, &w),
                    GRADCHECK_STEP,
                    None,
                    rng,
                )?)
            }),
        ));
    }
    for (name, affine) in [("instance_norm", false), ("instance_norm_affine", true)] {
        checks.push((
            name,
            Box::new(move |rng| {
                let x = leaf(&[2, 3, 4, 5], rng);
                let gamma = leaf(&[3], rng);
                let beta = leaf(&[3], rng);
                let w = leaf(&[2, 3, 4, 5], rng);
                let (g, b) = if affine { (Some(&gamma), Some(&beta)) } else { (None, None) };
                let mut inputs = vec![x.clone()];
                if affine {
                    inputs.extend([gamma.clone(), beta.clone()]);
                }
                Ok(check_gradients(
                    name,
                    &inputs,
                    || probe(&instance_norm(&x, g, b, INSTANCE_NORM_EPS)?, &w),
                    GRADCHECK_STEP,
                    None,
                    rng,
                )?)
            }),
        ));
    }

    let mut init = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let gcfg = GeneratorConfig::desk();
    let dcfg = DiscriminatorConfig::desk();
    let ucfg = UNetConfig::desk();
    let size = gcfg.image_size;
    // scale initial weights up so the check is not dominated by near-zero activations
    let widen = |p: Vec<Tensor<f64>>| {
        for t in p {
            t.data_mut().iter_mut().for_each(|v| *v *= 10.0);
        }
    };
    let g = Generator::<f64>::new(gcfg, &mut init)?;
    widen(g.parameters());
    let d = Discriminator::<f64>::new(dcfg, &mut init)?;
    widen(d.parameters());
    let u = UNet::<f64>::new(ucfg, &mut init)?;
    widen(u.parameters());
    checks.push(network("desk_generator", g, [1, 1, size, size]));
    checks.push(network("desk_discriminator", d, [1, 1, size, size]));
    checks.push(network("desk_unet", u, [1, 1, size, size]));
    Ok(checks)
}

/// Names of all checks, in execution order.
pub fn gradient_check_names() -> Vec<&'static str> {
    all_checks(0).map(|c| c.into_iter().map(|(n, _)| n).collect()).unwrap_or_default()
}

/// Runs the checks whose names contain `filter` (all when `None`).
pub fn gradient_suite(seed: u64, filter: Option<&str>) -> Result<Vec<GradCheckReport>, ModelError> {
    gradient_suite_where(seed, |name| filter.map_or(true, |f| name.contains(f)))
}

pub fn gradient_suite_where(seed: u64, include: impl Fn(&str) -> bool) -> Result<Vec<GradCheckReport>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    for (name, check) in all_checks(seed)? {
        let mut local = ChaCha8Rng::seed_from_u64(rng.gen());
        if include(name) {
            reports.push(check(&mut local)?);
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementwise_and_layer_ops_pass() {
        let reports = gradient_suite_where(1, |n| !n.starts_with("desk_")).unwrap();
        assert!(reports.len() >= 30);
        for r in reports.iter().filter(|r| !r.name.starts_with("desk_")) {
            assert!(r.passed(GRADCHECK_TOLERANCE), "{}: {}", r.name, r.max_rel_error);
        }
    }
}
