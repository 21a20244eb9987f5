use std::io::Write;
use std::path::Path;

use super::config::{DiscriminatorConfig, GanMode, KeyValues, UNetConfig};
use super::networks::{Discriminator, Network, UNet};
use super::{
    gan_loss, io_err, load_moments, load_params, push_moments, push_params, read_checkpoint, seeded, LossRecord,
    ModelError, RunOutput, DIAGNOSTIC_CHECKPOINT, FINAL_CHECKPOINT,
};
use crate::autograd::checkpoint::Checkpoint;
use crate::autograd::{l1_loss, set_trainable, zero_grads, AdamConfig, AdamState, Scalar, Tensor};
use crate::dataset::{BatchLoader, Pairing};

const KIND: &str = "pix2pix";

/// Settings of the paired baseline: U-Net generator and a conditional
/// PatchGAN critic that sees the input and output concatenated on channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pix2PixConfig {
    pub generator: UNetConfig,
    pub discriminator: DiscriminatorConfig,
    pub lambda_l1: f64,
    pub gan_mode: GanMode,
    pub adam: AdamConfig,
    pub batch_size: usize,
}

impl Pix2PixConfig {
    pub fn desk() -> Self {
        Self {
            generator: UNetConfig::desk(),
            discriminator: DiscriminatorConfig {
                in_channels: 2,
                ..DiscriminatorConfig::desk()
            },
            ..Self::full()
        }
    }

    pub fn full() -> Self {
        Self {
            generator: UNetConfig::full(),
            discriminator: DiscriminatorConfig {
                in_channels: 2,
                ..DiscriminatorConfig::full()
            },
            lambda_l1: 100.0,
            gan_mode: GanMode::LeastSquares,
            adam: AdamConfig::default(),
            batch_size: 1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        let g = &self.generator;
        if self.discriminator.in_channels != g.in_channels + g.out_channels {
            return Err(ModelError::Config(format!(
                "conditional critic needs {} input channels",
                g.in_channels + g.out_channels
            )));
        }
        if self.discriminator.image_size != g.image_size {
            return Err(ModelError::Config("generator and discriminator image sizes differ".into()));
        }
        if self.batch_size == 0 || !(self.lambda_l1 >= 0.0) {
            return Err(ModelError::Config("invalid batch size or L1 weight".into()));
        }
        Ok(())
    }

    fn write(&self, kv: &mut KeyValues) {
        kv.put_unet("generator", &self.generator);
        kv.put_discriminator("discriminator", &self.discriminator);
        kv.set("lambda_l1", self.lambda_l1);
        kv.set("gan_mode", self.gan_mode.as_str());
        kv.set("adam.lr", self.adam.lr);
        kv.set("adam.beta1", self.adam.beta1);
        kv.set("adam.beta2", self.adam.beta2);
        kv.set("adam.eps", self.adam.eps);
        kv.set("batch_size", self.batch_size);
    }

    fn read(kv: &KeyValues) -> Result<Self, ModelError> {
        Ok(Self {
            generator: kv.take_unet("generator")?,
            discriminator: kv.take_discriminator("discriminator")?,
            lambda_l1: kv.num("lambda_l1")?,
            gan_mode: GanMode::parse(kv.get("gan_mode")?)?,
            adam: AdamConfig {
                lr: kv.num("adam.lr")?,
                beta1: kv.num("adam.beta1")?,
                beta2: kv.num("adam.beta2")?,
                eps: kv.num("adam.eps")?,
            },
            batch_size: kv.num("batch_size")?,
        })
    }
}

/// Generator objective for one batch.
#[derive(Debug, Clone)]
pub struct Pix2PixLosses<T: Scalar> {
    pub total_g: Tensor<T>,
    pub adversarial: f64,
    pub l1: f64,
    pub fake: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Pix2PixState<T: Scalar> {
    pub config: Pix2PixConfig,
    pub g: UNet<T>,
    pub d: Discriminator<T>,
    pub adam_g: AdamState<T>,
    pub adam_d: AdamState<T>,
    pub step: u64,
    pub epoch: u64,
    pub seed: u64,
}

impl<T: Scalar> Pix2PixState<T> {
    pub fn new(config: Pix2PixConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = seeded(seed, 0);
        let g = UNet::new(config.generator, &mut rng)?;
        let d = Discriminator::new(config.discriminator, &mut rng)?;
        let adam_g = AdamState::new(&g.parameters(), config.adam);
        let adam_d = AdamState::new(&d.parameters(), config.adam);
        Ok(Self { config, g, d, adam_g, adam_d, step: 0, epoch: 0, seed })
    }

    /// `adv(D(x ⊕ G(x)), 1) + λ_L1·‖G(x) − y‖₁`.
    pub fn generator_losses(&self, x: &Tensor<T>, y: &Tensor<T>) -> Result<Pix2PixLosses<T>, ModelError> {
        let fake = self.g.forward(x)?;
        let adv = gan_loss(self.config.gan_mode, &self.d.forward(&x.concat_channels(&fake)?)?, 1.0);
        let l1 = l1_loss(&fake, y)?;
        let total = adv.add(&l1.mul_scalar(T::of(self.config.lambda_l1)))?;
        Ok(Pix2PixLosses {
            adversarial: adv.item().as_f64(),
            l1: l1.item().as_f64(),
            total_g: total,
            fake,
        })
    }

    pub fn train_step(&mut self, x: &Tensor<T>, y: &Tensor<T>) -> Result<LossRecord, ModelError> {
        let mode = self.config.gan_mode;
        let gen = self.g.parameters();
        let disc = self.d.parameters();
        zero_grads(&gen);
        zero_grads(&disc);

        set_trainable(&disc, false);
        let losses = self.generator_losses(x, y)?;
        let loss_g = losses.total_g.item().as_f64();
        if loss_g.is_finite() {
            losses.total_g.backward()?;
            self.adam_g.step(&gen);
        }
        set_trainable(&disc, true);

        let fake = losses.fake.detach();
        let loss_d = gan_loss(mode, &self.d.forward(&x.concat_channels(y)?)?, 1.0)
            .add(&gan_loss(mode, &self.d.forward(&x.concat_channels(&fake)?)?, 0.0))?
            .mul_scalar(T::of(0.5));
        let record = LossRecord {
            step: self.step + 1,
            values: vec![
                ("loss_G", loss_g),
                ("loss_D", loss_d.item().as_f64()),
                ("l1", losses.l1),
            ],
        };
        if !record.is_finite() {
            return Err(ModelError::NonFinite {
                step: record.step,
                detail: record.to_json(),
            });
        }
        loss_d.backward()?;
        self.adam_d.step(&disc);
        self.step += 1;
        Ok(record)
    }

    /// Runs `steps` updates over aligned image pairs in `[-1, 1]`.
    pub fn train(
        &mut self,
        x_images: &[Vec<T>],
        y_images: &[Vec<T>],
        steps: usize,
        out: &RunOutput,
    ) -> Result<Vec<LossRecord>, ModelError> {
        let size = self.config.generator.image_size;
        let mut loader = BatchLoader::new(
            x_images,
            y_images,
            size,
            size,
            self.config.batch_size,
            Pairing::Paired,
            self.seed.wrapping_add(self.step),
        )?;
        let mut log = out.prepare()?;
        let mut records = Vec::with_capacity(steps);
        for _ in 0..steps {
            let (x, y) = loader.next().expect("loader is endless");
            let record = match self.train_step(&x, &y) {
                Err(e @ ModelError::NonFinite { .. }) => {
                    log::error!("{e}; writing diagnostic checkpoint");
                    out.write_checkpoint(DIAGNOSTIC_CHECKPOINT, &self.to_checkpoint())?;
                    return Err(e);
                }
                other => other?,
            };
            if let (Some(file), Some(dir)) = (log.as_mut(), &out.dir) {
                writeln!(file, "{}", record.to_json()).map_err(io_err(dir))?;
            }
            if record.step % 100 == 0 {
                log::info!("{}", record.to_json());
            }
            records.push(record);
            let epoch = self.step / loader.epoch_len().div_ceil(self.config.batch_size) as u64;
            if epoch > self.epoch {
                self.epoch = epoch;
                if out.keep_epoch_checkpoints {
                    out.write_checkpoint(&format!("epoch_{epoch}.ckpt"), &self.to_checkpoint())?;
                }
            }
        }
        out.write_checkpoint(FINAL_CHECKPOINT, &self.to_checkpoint())?;
        Ok(records)
    }

    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut kv = KeyValues::default();
        kv.set("kind", KIND);
        self.config.write(&mut kv);
        kv.set("seed", self.seed);
        kv.set("step", self.step);
        kv.set("epoch", self.epoch);
        kv.set("adam_G.step", self.adam_g.step);
        kv.set("adam_D.step", self.adam_d.step);
        let gen = self.g.params();
        let disc = self.d.params();
        let mut records = Vec::new();
        push_params(&mut records, "G.", &gen);
        push_params(&mut records, "D.", &disc);
        push_moments(&mut records, "adam_G.", &gen, &self.adam_g.first_moment, &self.adam_g.second_moment);
        push_moments(&mut records, "adam_D.", &disc, &self.adam_d.first_moment, &self.adam_d.second_moment);
        Checkpoint {
            config: kv.render(),
            records,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint<T>, expected: Option<&Pix2PixConfig>) -> Result<Self, ModelError> {
        let kv = KeyValues::parse(&ckpt.config)?;
        let kind = kv.get("kind")?;
        if kind != KIND {
            return Err(ModelError::ConfigMismatch(format!("checkpoint holds a `{kind}` model")));
        }
        let config = Pix2PixConfig::read(&kv)?;
        if let Some(want) = expected {
            if *want != config {
                return Err(ModelError::ConfigMismatch(format!(
                    "stored {config:?}, requested {want:?}"
                )));
            }
        }
        let mut state = Self::new(config, kv.num("seed")?)?;
        state.step = kv.num("step")?;
        state.epoch = kv.num("epoch")?;
        let gen = state.g.params();
        let disc = state.d.params();
        load_params(ckpt, "G.", &gen)?;
        load_params(ckpt, "D.", &disc)?;
        let (m, v) = load_moments(ckpt, "adam_G.", &gen)?;
        state.adam_g.first_moment = m;
        state.adam_g.second_moment = v;
        state.adam_g.step = kv.num("adam_G.step")?;
        let (m, v) = load_moments(ckpt, "adam_D.", &disc)?;
        state.adam_d.first_moment = m;
        state.adam_d.second_moment = v;
        state.adam_d.step = kv.num("adam_D.step")?;
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_checkpoint().to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path, expected: Option<&Pix2PixConfig>) -> Result<Self, ModelError> {
        Self::from_checkpoint(&read_checkpoint(path)?, expected)
    }
}

pub fn train_pix2pix<T: Scalar>(
    x_images: &[Vec<T>],
    y_images: &[Vec<T>],
    config: Pix2PixConfig,
    steps: usize,
    seed: u64,
    out: &RunOutput,
) -> Result<(Pix2PixState<T>, Vec<LossRecord>), ModelError> {
    let mut state = Pix2PixState::new(config, seed)?;
    let log = state.train(x_images, y_images, steps, out)?;
    Ok((state, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> Pix2PixConfig {
        let mut c = Pix2PixConfig::desk();
        c.generator = UNetConfig { depth: 2, base_channels: 4, image_size: 16, ..c.generator };
        c.discriminator = DiscriminatorConfig { n_layers: 2, base_channels: 4, image_size: 16, ..c.discriminator };
        c
    }

    #[test]
    fn critic_sees_two_channels() {
        let s = Pix2PixState::<f32>::new(Pix2PixConfig::desk(), 0).unwrap();
        assert_eq!(s.d.params().get("layer0.weight").unwrap().shape()[1], 2);
        let mut bad = Pix2PixConfig::desk();
        bad.discriminator.in_channels = 1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn deterministic_and_round_trips() {
        let mut rng = seeded(1, 1);
        let xs: Vec<Vec<f32>> = (0..4).map(|_| (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let run = || train_pix2pix(&xs, &xs, tiny(), 3, 8, &RunOutput::default()).unwrap();
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(la, lb);
        let bytes = a.to_checkpoint().to_bytes();
        assert_eq!(bytes, b.to_checkpoint().to_bytes());
        let back = Pix2PixState::<f32>::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap(), None).unwrap();
        assert_eq!(back.to_checkpoint().to_bytes(), bytes);
    }
}
