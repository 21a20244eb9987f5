use rand::Rng;

use super::config::{DiscriminatorConfig, GeneratorConfig, UNetConfig};
use super::layers::{lrelu, norm, Conv, ParamSet};
use super::ModelError;
use crate::autograd::{AutogradError, PadMode, Scalar, Tensor};

/// Image-to-image or image-to-logits map with named parameters.
pub trait Network<T: Scalar> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, AutogradError>;
    fn params(&self) -> ParamSet<T>;

    fn parameters(&self) -> Vec<Tensor<T>> {
        self.params().tensors
    }
}

/// ResNet generator: reflect-padded 7×7 stem, strided downsampling, residual
/// blocks, transposed-conv upsampling and a tanh head.
#[derive(Debug, Clone)]
pub struct Generator<T: Scalar> {
    pub config: GeneratorConfig,
    stem: Conv<T>,
    down: Vec<Conv<T>>,
    blocks: Vec<(Conv<T>, Conv<T>)>,
    up: Vec<Conv<T>>,
    head: Conv<T>,
}

impl<T: Scalar> Generator<T> {
    pub fn new(config: GeneratorConfig, rng: &mut impl Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let c = config.base_channels;
        let stem = Conv::new(config.in_channels, c, 7, 1, 3, PadMode::Reflect, rng);
        let mut ch = c;
        let mut down = Vec::new();
        for _ in 0..config.n_down_up {
            down.push(Conv::new(ch, ch * 2, 4, 2, 1, PadMode::Zero, rng));
            ch *= 2;
        }
        let blocks = (0..config.n_res_blocks)
            .map(|_| {
                (
                    Conv::new(ch, ch, 3, 1, 1, PadMode::Reflect, rng),
                    Conv::new(ch, ch, 3, 1, 1, PadMode::Reflect, rng),
                )
            })
            .collect();
        let mut up = Vec::new();
        for _ in 0..config.n_down_up {
            up.push(Conv::transposed(ch, ch / 2, 4, 2, 1, rng));
            ch /= 2;
        }
        let head = Conv::new(ch, config.out_channels, 7, 1, 3, PadMode::Reflect, rng);
        Ok(Self { config, stem, down, blocks, up, head })
    }

    pub fn head(&self) -> &Conv<T> {
        &self.head
    }
}

impl<T: Scalar> Network<T> for Generator<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, AutogradError> {
        let mut h = norm(&self.stem.forward(x)?)?.relu();
        for conv in &self.down {
            h = norm(&conv.forward(&h)?)?.relu();
        }
        for (a, b) in &self.blocks {
            let r = norm(&a.forward(&h)?)?.relu();
            let r = norm(&b.forward(&r)?)?;
            h = h.add(&r)?;
        }
        for conv in &self.up {
            h = norm(&conv.forward(&h)?)?.relu();
        }
        Ok(self.head.forward(&h)?.tanh())
    }

    fn params(&self) -> ParamSet<T> {
        let mut p = ParamSet::default();
        p.extend("stem.", self.stem.params());
        for (i, c) in self.down.iter().enumerate() {
            p.extend(&format!("down{i}."), c.params());
        }
        for (i, (a, b)) in self.blocks.iter().enumerate() {
            p.extend(&format!("res{i}.a."), a.params());
            p.extend(&format!("res{i}.b."), b.params());
        }
        for (i, c) in self.up.iter().enumerate() {
            p.extend(&format!("up{i}."), c.params());
        }
        p.extend("head.", self.head.params());
        p
    }
}

/// PatchGAN discriminator producing a map of per-patch logits.
#[derive(Debug, Clone)]
pub struct Discriminator<T: Scalar> {
    pub config: DiscriminatorConfig,
    layers: Vec<Conv<T>>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, rng: &mut impl Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let width = |i: usize| config.base_channels * (1 << i.min(3));
        let mut layers = vec![Conv::new(config.in_channels, width(0), 4, 2, 1, PadMode::Zero, rng)];
        for i in 1..config.n_layers {
            layers.push(Conv::new(width(i - 1), width(i), 4, 2, 1, PadMode::Zero, rng));
        }
        let last = config.n_layers;
        layers.push(Conv::new(width(last - 1), width(last), 4, 1, 1, PadMode::Zero, rng));
        layers.push(Conv::new(width(last), 1, 4, 1, 1, PadMode::Zero, rng));
        Ok(Self { config, layers })
    }

    /// All hidden activations (after nonlinearity) followed by the logit map.
    pub fn features(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>, AutogradError> {
        let n = self.layers.len();
        let mut out = Vec::with_capacity(n);
        let mut h = x.clone();
        for (i, conv) in self.layers.iter().enumerate() {
            h = conv.forward(&h)?;
            if i + 1 < n {
                if i > 0 {
                    h = norm(&h)?;
                }
                h = lrelu(&h);
            }
            out.push(h.clone());
        }
        Ok(out)
    }
}

impl<T: Scalar> Network<T> for Discriminator<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, AutogradError> {
        Ok(self.features(x)?.pop().expect("at least two layers"))
    }

    fn params(&self) -> ParamSet<T> {
        let mut p = ParamSet::default();
        for (i, c) in self.layers.iter().enumerate() {
            p.extend(&format!("layer{i}."), c.params());
        }
        p
    }
}

/// U-Net generator: strided encoder, transposed-conv decoder, skip
/// connections concatenated on channels at every level.
#[derive(Debug, Clone)]
pub struct UNet<T: Scalar> {
    pub config: UNetConfig,
    down: Vec<Conv<T>>,
    up: Vec<Conv<T>>,
}

impl<T: Scalar> UNet<T> {
    pub fn new(config: UNetConfig, rng: &mut impl Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.depth;
        let ch = |i| config.level_channels(i);
        let mut down = vec![Conv::new(config.in_channels, ch(0), 4, 2, 1, PadMode::Zero, rng)];
        for i in 1..d {
            down.push(Conv::new(ch(i - 1), ch(i), 4, 2, 1, PadMode::Zero, rng));
        }
        // up[j] maps level d-1-j back to level d-2-j; the innermost has no skip input
        let mut up = Vec::with_capacity(d);
        for j in 0..d {
            let level = d - 1 - j;
            let c_in = if j == 0 { ch(level) } else { 2 * ch(level) };
            let c_out = if level == 0 { config.out_channels } else { ch(level - 1) };
            up.push(Conv::transposed(c_in, c_out, 4, 2, 1, rng));
        }
        Ok(Self { config, down, up })
    }
}

impl<T: Scalar> Network<T> for UNet<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, AutogradError> {
        let d = self.config.depth;
        let mut skips = Vec::with_capacity(d);
        let mut h = self.down[0].forward(x)?;
        skips.push(h.clone());
        for i in 1..d {
            h = self.down[i].forward(&lrelu(&h))?;
            if i + 1 < d {
                h = norm(&h)?;
            }
            skips.push(h.clone());
        }
        for (j, conv) in self.up.iter().enumerate() {
            let level = d - 1 - j;
            let input = if j == 0 { h.clone() } else { h.concat_channels(&skips[level])? };
            h = conv.forward(&input.relu())?;
            if level > 0 {
                h = norm(&h)?;
            }
        }
        Ok(h.tanh())
    }

    fn params(&self) -> ParamSet<T> {
        let mut p = ParamSet::default();
        for (i, c) in self.down.iter().enumerate() {
            p.extend(&format!("down{i}."), c.params());
        }
        for (i, c) in self.up.iter().enumerate() {
            p.extend(&format!("up{i}."), c.params());
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn desk_generator_preserves_shape_and_range() {
        let g = Generator::<f32>::new(GeneratorConfig::desk(), &mut rng()).unwrap();
        let x = Tensor::randn(&[1, 1, 64, 64], 0.0, 0.5, &mut rng());
        let y = g.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 64, 64]);
        assert!(y.to_vec().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn desk_generator_parameter_count() {
        let g = Generator::<f32>::new(GeneratorConfig::desk(), &mut rng()).unwrap();
        // stem 800, down 8224 + 32832, 3 blocks × 73856, up 32800 + 8208, head 785
        assert_eq!(g.params().count(), 305_217);
        assert_eq!(GeneratorConfig::desk().parameter_count(), 305_217);
    }

    #[test]
    fn zero_head_gives_constant_tanh_bias() {
        let g = Generator::<f64>::new(GeneratorConfig::desk(), &mut rng()).unwrap();
        g.head().weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
        g.head().bias.data_mut()[0] = 0.3;
        let x = Tensor::randn(&[1, 1, 64, 64], 0.0, 1.0, &mut rng());
        let y = g.forward(&x).unwrap().to_vec();
        assert!(y.iter().all(|&v| (v - 0.3f64.tanh()).abs() < 1e-15));
    }

    #[test]
    fn discriminator_patch_maps() {
        let d = Discriminator::<f32>::new(DiscriminatorConfig::desk(), &mut rng()).unwrap();
        let x = Tensor::zeros(&[2, 1, 64, 64]);
        assert_eq!(d.forward(&x).unwrap().shape(), &[2, 1, 6, 6]);
    }

    #[test]
    fn unet_shape_and_conditional_discriminator_channels() {
        let u = UNet::<f32>::new(UNetConfig::desk(), &mut rng()).unwrap();
        let x = Tensor::randn(&[1, 1, 64, 64], 0.0, 0.5, &mut rng());
        let y = u.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 64, 64]);
        let cfg = DiscriminatorConfig { in_channels: 2, ..DiscriminatorConfig::desk() };
        let d = Discriminator::<f32>::new(cfg, &mut rng()).unwrap();
        assert_eq!(d.params().get("layer0.weight").unwrap().shape()[1], 2);
        assert_eq!(d.forward(&x.concat_channels(&y).unwrap()).unwrap().shape(), &[1, 1, 6, 6]);
    }

    #[test]
    fn forward_is_deterministic() {
        let g = Generator::<f32>::new(GeneratorConfig::desk(), &mut rng()).unwrap();
        let x = Tensor::randn(&[1, 1, 64, 64], 0.0, 0.5, &mut rng());
        assert_eq!(g.forward(&x).unwrap().to_vec(), g.forward(&x).unwrap().to_vec());
    }
}
