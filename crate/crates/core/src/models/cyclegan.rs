use std::io::Write;
use std::path::Path;

use super::config::{DiscriminatorConfig, GanMode, GeneratorConfig, KeyValues};
use super::layers::ParamSet;
use super::networks::{Discriminator, Generator, Network};
use super::pool::ImagePool;
use super::{
    gan_loss, io_err, load_moments, load_params, push_moments, push_params, read_checkpoint, seeded, LossRecord,
    ModelError, RunOutput, DIAGNOSTIC_CHECKPOINT, FINAL_CHECKPOINT,
};
use crate::autograd::checkpoint::Checkpoint;
use crate::autograd::{l1_loss, set_trainable, zero_grads, AdamConfig, AdamState, AutogradError, Scalar, Tensor};
use crate::dataset::{BatchLoader, Pairing};

const KIND: &str = "cyclegan";

/// Architecture and optimization settings of a CycleGAN run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub lambda_cycle: f64,
    pub lambda_identity: f64,
    pub pool_size: usize,
    pub gan_mode: GanMode,
    pub adam: AdamConfig,
    pub batch_size: usize,
}

impl CycleConfig {
    pub fn desk() -> Self {
        Self {
            generator: GeneratorConfig::desk(),
            discriminator: DiscriminatorConfig::desk(),
            ..Self::full()
        }
    }

    pub fn full() -> Self {
        Self {
            generator: GeneratorConfig::full(),
            discriminator: DiscriminatorConfig::full(),
            lambda_cycle: 10.0,
            lambda_identity: 0.0,
            pool_size: 50,
            gan_mode: GanMode::LeastSquares,
            adam: AdamConfig::default(),
            batch_size: 1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.generator.image_size != self.discriminator.image_size {
            return Err(ModelError::Config("generator and discriminator image sizes differ".into()));
        }
        if self.generator.in_channels != self.generator.out_channels
            || self.discriminator.in_channels != self.generator.out_channels
        {
            return Err(ModelError::Config("both domains must share a channel count".into()));
        }
        if !(self.lambda_cycle >= 0.0 && self.lambda_identity >= 0.0) {
            return Err(ModelError::Config("loss weights must be nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch size must be positive".into()));
        }
        Ok(())
    }

    fn write(&self, kv: &mut KeyValues) {
        kv.put_generator("generator", &self.generator);
        kv.put_discriminator("discriminator", &self.discriminator);
        kv.set("lambda_cycle", self.lambda_cycle);
        kv.set("lambda_identity", self.lambda_identity);
        kv.set("pool_size", self.pool_size);
        kv.set("gan_mode", self.gan_mode.as_str());
        kv.set("adam.lr", self.adam.lr);
        kv.set("adam.beta1", self.adam.beta1);
        kv.set("adam.beta2", self.adam.beta2);
        kv.set("adam.eps", self.adam.eps);
        kv.set("batch_size", self.batch_size);
    }

    fn read(kv: &KeyValues) -> Result<Self, ModelError> {
        Ok(Self {
            generator: kv.take_generator("generator")?,
            discriminator: kv.take_discriminator("discriminator")?,
            lambda_cycle: kv.num("lambda_cycle")?,
            lambda_identity: kv.num("lambda_identity")?,
            pool_size: kv.num("pool_size")?,
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

/// The four networks. `g` maps X (bass) to Y (drums), `f` maps back.
#[derive(Debug, Clone)]
pub struct CycleGan<T: Scalar> {
    pub config: CycleConfig,
    pub g: Generator<T>,
    pub f: Generator<T>,
    pub d_x: Discriminator<T>,
    pub d_y: Discriminator<T>,
}

impl<T: Scalar> CycleGan<T> {
    pub fn new(config: CycleConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = seeded(seed, 0);
        Ok(Self {
            config,
            g: Generator::new(config.generator, &mut rng)?,
            f: Generator::new(config.generator, &mut rng)?,
            d_x: Discriminator::new(config.discriminator, &mut rng)?,
            d_y: Discriminator::new(config.discriminator, &mut rng)?,
        })
    }

    pub fn generator_params(&self) -> ParamSet<T> {
        let mut p = ParamSet::default();
        p.extend("G.", self.g.params());
        p.extend("F.", self.f.params());
        p
    }

    pub fn discriminator_params(&self) -> ParamSet<T> {
        let mut p = ParamSet::default();
        p.extend("D_X.", self.d_x.params());
        p.extend("D_Y.", self.d_y.params());
        p
    }
}

/// Generator objective and its parts for one batch.
#[derive(Debug, Clone)]
pub struct CycleLosses<T: Scalar> {
    pub total_g: Tensor<T>,
    pub adversarial: f64,
    pub cycle_x: f64,
    pub cycle_y: f64,
    pub identity: f64,
    pub fake_x: Tensor<T>,
    pub fake_y: Tensor<T>,
}

/// `adv(D_Y(G(x))) + adv(D_X(F(y))) + λ·(‖F(G(x)) − x‖₁ + ‖G(F(y)) − y‖₁)`
/// plus the optional identity term `λ_id·(‖G(y) − y‖₁ + ‖F(x) − x‖₁)`.
pub fn cyclegan_losses<T: Scalar>(
    model: &CycleGan<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
) -> Result<CycleLosses<T>, ModelError> {
    if x.shape() != y.shape() {
        return Err(AutogradError::ShapeMismatch(format!(
            "domain batches differ: {:?} vs {:?}",
            x.shape(),
            y.shape()
        ))
        .into());
    }
    let cfg = &model.config;
    let fake_y = model.g.forward(x)?;
    let rec_x = model.f.forward(&fake_y)?;
    let fake_x = model.f.forward(y)?;
    let rec_y = model.g.forward(&fake_x)?;

    let adv = gan_loss(cfg.gan_mode, &model.d_y.forward(&fake_y)?, 1.0)
        .add(&gan_loss(cfg.gan_mode, &model.d_x.forward(&fake_x)?, 1.0))?;
    let cycle_x = l1_loss(&rec_x, x)?;
    let cycle_y = l1_loss(&rec_y, y)?;
    let lambda = T::of(cfg.lambda_cycle);
    let mut total = adv
        .add(&cycle_x.mul_scalar(lambda))?
        .add(&cycle_y.mul_scalar(lambda))?;
    let mut identity = 0.0;
    if cfg.lambda_identity > 0.0 {
        let id = l1_loss(&model.g.forward(y)?, y)?.add(&l1_loss(&model.f.forward(x)?, x)?)?;
        identity = id.item().as_f64();
        total = total.add(&id.mul_scalar(T::of(cfg.lambda_identity)))?;
    }
    Ok(CycleLosses {
        adversarial: adv.item().as_f64(),
        cycle_x: cycle_x.item().as_f64(),
        cycle_y: cycle_y.item().as_f64(),
        identity,
        total_g: total,
        fake_x,
        fake_y,
    })
}

/// `½·[adv(D(real), 1) + adv(D(fake), 0)]`.
pub fn discriminator_loss<T: Scalar>(
    mode: GanMode,
    d: &Discriminator<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
) -> Result<Tensor<T>, ModelError> {
    let l = gan_loss(mode, &d.forward(real)?, 1.0).add(&gan_loss(mode, &d.forward(fake)?, 0.0))?;
    Ok(l.mul_scalar(T::of(0.5)))
}

/// Networks, optimizer moments, history pools and counters of a CycleGAN run.
#[derive(Debug, Clone)]
pub struct CycleTrainState<T: Scalar> {
    pub model: CycleGan<T>,
    pub adam_g: AdamState<T>,
    pub adam_d: AdamState<T>,
    pub pool_x: ImagePool<T>,
    pub pool_y: ImagePool<T>,
    pub step: u64,
    pub epoch: u64,
    pub seed: u64,
}

impl<T: Scalar> CycleTrainState<T> {
    pub fn new(config: CycleConfig, seed: u64) -> Result<Self, ModelError> {
        let model = CycleGan::new(config, seed)?;
        let adam_g = AdamState::new(&model.generator_params().tensors, config.adam);
        let adam_d = AdamState::new(&model.discriminator_params().tensors, config.adam);
        Ok(Self {
            model,
            adam_g,
            adam_d,
            pool_x: ImagePool::new(config.pool_size, seeded(seed, 2)),
            pool_y: ImagePool::new(config.pool_size, seeded(seed, 3)),
            step: 0,
            epoch: 0,
            seed,
        })
    }

    pub fn config(&self) -> &CycleConfig {
        &self.model.config
    }

    /// One generator update (critics frozen) followed by one critic update on pooled fakes.
    pub fn train_step(&mut self, x: &Tensor<T>, y: &Tensor<T>) -> Result<LossRecord, ModelError> {
        let mode = self.model.config.gan_mode;
        let gen = self.model.generator_params().tensors;
        let disc = self.model.discriminator_params().tensors;
        zero_grads(&gen);
        zero_grads(&disc);

        set_trainable(&disc, false);
        let losses = cyclegan_losses(&self.model, x, y)?;
        let loss_g = losses.total_g.item().as_f64();
        if loss_g.is_finite() {
            losses.total_g.backward()?;
            self.adam_g.step(&gen);
        }
        set_trainable(&disc, true);

        let fake_x = self.pool_x.query(&losses.fake_x);
        let fake_y = self.pool_y.query(&losses.fake_y);
        let loss_dx = discriminator_loss(mode, &self.model.d_x, x, &fake_x)?;
        let loss_dy = discriminator_loss(mode, &self.model.d_y, y, &fake_y)?;
        let d_total = loss_dx.add(&loss_dy)?;
        let record = LossRecord {
            step: self.step + 1,
            values: vec![
                ("loss_G", loss_g),
                ("loss_D_X", loss_dx.item().as_f64()),
                ("loss_D_Y", loss_dy.item().as_f64()),
                ("cycle_X", losses.cycle_x),
                ("cycle_Y", losses.cycle_y),
            ],
        };
        if !record.is_finite() {
            return Err(ModelError::NonFinite {
                step: record.step,
                detail: record.to_json(),
            });
        }
        d_total.backward()?;
        self.adam_d.step(&disc);
        self.step += 1;
        Ok(record)
    }

    /// Runs `steps` updates over unpaired image sets in `[-1, 1]`.
    pub fn train(
        &mut self,
        x_images: &[Vec<T>],
        y_images: &[Vec<T>],
        steps: usize,
        out: &RunOutput,
    ) -> Result<Vec<LossRecord>, ModelError> {
        let size = self.model.config.generator.image_size;
        let mut loader = BatchLoader::new(
            x_images,
            y_images,
            size,
            size,
            self.model.config.batch_size,
            Pairing::Unpaired,
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
            let epoch = self.step / loader.epoch_len().div_ceil(self.model.config.batch_size) as u64;
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
        self.model.config.write(&mut kv);
        kv.set("seed", self.seed);
        kv.set("step", self.step);
        kv.set("epoch", self.epoch);
        kv.set("adam_G.step", self.adam_g.step);
        kv.set("adam_D.step", self.adam_d.step);
        let gen = self.model.generator_params();
        let disc = self.model.discriminator_params();
        let mut records = Vec::new();
        push_params(&mut records, "", &gen);
        push_params(&mut records, "", &disc);
        push_moments(&mut records, "adam_G.", &gen, &self.adam_g.first_moment, &self.adam_g.second_moment);
        push_moments(&mut records, "adam_D.", &disc, &self.adam_d.first_moment, &self.adam_d.second_moment);
        Checkpoint {
            config: kv.render(),
            records,
        }
    }

    /// Rebuilds a state from a checkpoint; with `expected`, the stored
    /// configuration must match it exactly. History pools start empty.
    pub fn from_checkpoint(ckpt: &Checkpoint<T>, expected: Option<&CycleConfig>) -> Result<Self, ModelError> {
        let kv = KeyValues::parse(&ckpt.config)?;
        let kind = kv.get("kind")?;
        if kind != KIND {
            return Err(ModelError::ConfigMismatch(format!("checkpoint holds a `{kind}` model")));
        }
        let config = CycleConfig::read(&kv)?;
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
        let gen = state.model.generator_params();
        let disc = state.model.discriminator_params();
        load_params(ckpt, "", &gen)?;
        load_params(ckpt, "", &disc)?;
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

    pub fn load(path: &Path, expected: Option<&CycleConfig>) -> Result<Self, ModelError> {
        Self::from_checkpoint(&read_checkpoint(path)?, expected)
    }
}

/// Fresh state trained for `steps` updates.
pub fn train_cyclegan<T: Scalar>(
    x_images: &[Vec<T>],
    y_images: &[Vec<T>],
    config: CycleConfig,
    steps: usize,
    seed: u64,
    out: &RunOutput,
) -> Result<(CycleTrainState<T>, Vec<LossRecord>), ModelError> {
    let mut state = CycleTrainState::new(config, seed)?;
    let log = state.train(x_images, y_images, steps, out)?;
    Ok((state, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::stack_images;

    fn stack_pair<T: Scalar>(x: &[f32], y: &[f32], size: usize) -> (Tensor<T>, Tensor<T>) {
        let cast = |v: &[f32]| v.iter().map(|&a| T::of(a as f64)).collect::<Vec<T>>();
        let (x, y) = (cast(x), cast(y));
        (stack_images(&[&x], 1, size, size), stack_images(&[&y], 1, size, size))
    }

    fn tiny() -> CycleConfig {
        let mut c = CycleConfig::desk();
        c.generator = GeneratorConfig {
            n_res_blocks: 1,
            base_channels: 4,
            image_size: 16,
            ..c.generator
        };
        c.discriminator = DiscriminatorConfig {
            n_layers: 2,
            base_channels: 4,
            image_size: 16,
            ..c.discriminator
        };
        c.pool_size = 4;
        c
    }

    fn images(n: usize, seed: u64) -> Vec<Vec<f32>> {
        use rand::Rng;
        let mut rng = seeded(seed, 9);
        (0..n).map(|_| (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    fn snapshot(p: &ParamSet<f32>) -> Vec<Vec<f32>> {
        p.tensors.iter().map(Tensor::to_vec).collect()
    }

    #[test]
    fn total_recomposes_from_parts() {
        let model = CycleGan::<f64>::new(tiny(), 1).unwrap();
        let (x, y) = stack_pair::<f64>(&images(1, 1)[0], &images(1, 2)[0], 16);
        let l = cyclegan_losses(&model, &x, &y).unwrap();
        let expected = l.adversarial + 10.0 * (l.cycle_x + l.cycle_y);
        assert!((l.total_g.item() - expected).abs() < 1e-12);
        assert!(l.adversarial >= 0.0 && l.cycle_x >= 0.0 && l.cycle_y >= 0.0);
    }

    #[test]
    fn constant_half_critic_gives_quarter() {
        let model = CycleGan::<f64>::new(tiny(), 1).unwrap();
        for p in model.discriminator_params().tensors {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let last = model.d_y.params().tensors.last().unwrap().clone();
        last.data_mut()[0] = 0.5;
        let (x, _) = stack_pair::<f64>(&images(1, 1)[0], &images(1, 2)[0], 16);
        let fake = model.g.forward(&x).unwrap();
        let adv = gan_loss(GanMode::LeastSquares, &model.d_y.forward(&fake).unwrap(), 1.0);
        assert!((adv.item() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_cycle_weight_leaves_pure_adversarial_gradient() {
        let mut cfg = tiny();
        cfg.lambda_cycle = 0.0;
        let model = CycleGan::<f64>::new(cfg, 4).unwrap();
        let (x, y) = stack_pair::<f64>(&images(1, 3)[0], &images(1, 4)[0], 16);
        let l = cyclegan_losses(&model, &x, &y).unwrap();
        l.total_g.backward().unwrap();
        let full: Vec<Vec<f64>> = model.generator_params().tensors.iter().map(|t| t.grad().unwrap()).collect();
        for t in model.generator_params().tensors {
            t.zero_grad();
        }
        let adv = gan_loss(GanMode::LeastSquares, &model.d_y.forward(&model.g.forward(&x).unwrap()).unwrap(), 1.0)
            .add(&gan_loss(GanMode::LeastSquares, &model.d_x.forward(&model.f.forward(&y).unwrap()).unwrap(), 1.0))
            .unwrap();
        adv.backward().unwrap();
        for (a, t) in full.iter().zip(model.generator_params().tensors) {
            assert_eq!(a, &t.grad().unwrap());
        }
    }

    #[test]
    fn updates_touch_only_their_own_networks() {
        let mut state = CycleTrainState::<f32>::new(tiny(), 7).unwrap();
        let (x, y) = stack_pair::<f32>(&images(1, 5)[0], &images(1, 6)[0], 16);
        let disc_before = snapshot(&state.model.discriminator_params());
        let gen = state.model.generator_params().tensors;
        let disc = state.model.discriminator_params().tensors;
        set_trainable(&disc, false);
        let l = cyclegan_losses(&state.model, &x, &y).unwrap();
        l.total_g.backward().unwrap();
        state.adam_g.step(&gen);
        set_trainable(&disc, true);
        assert_eq!(disc_before, snapshot(&state.model.discriminator_params()));

        let gen_before = snapshot(&state.model.generator_params());
        let fake = state.pool_y.query(&l.fake_y);
        discriminator_loss(GanMode::LeastSquares, &state.model.d_y, &y, &fake)
            .unwrap()
            .backward()
            .unwrap();
        state.adam_d.step(&disc);
        assert_eq!(gen_before, snapshot(&state.model.generator_params()));
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut cfg = tiny();
        cfg.adam.lr = 0.0;
        let mut state = CycleTrainState::<f32>::new(cfg, 3).unwrap();
        let before = (snapshot(&state.model.generator_params()), snapshot(&state.model.discriminator_params()));
        let (x, y) = stack_pair::<f32>(&images(1, 5)[0], &images(1, 6)[0], 16);
        state.train_step(&x, &y).unwrap();
        let after = (snapshot(&state.model.generator_params()), snapshot(&state.model.discriminator_params()));
        assert_eq!(before, after);
    }

    #[test]
    fn training_is_reproducible_and_round_trips() {
        let xs = images(6, 10);
        let ys = images(6, 11);
        let run = || train_cyclegan(&xs, &ys, tiny(), 4, 21, &RunOutput::default()).unwrap();
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(la, lb);
        let bytes = a.to_checkpoint().to_bytes();
        assert_eq!(bytes, b.to_checkpoint().to_bytes());
        let back = CycleTrainState::<f32>::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap(), Some(&tiny())).unwrap();
        assert_eq!(back.to_checkpoint().to_bytes(), bytes);
        let mut other = tiny();
        other.lambda_cycle = 5.0;
        assert!(matches!(
            CycleTrainState::<f32>::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap(), Some(&other)),
            Err(ModelError::ConfigMismatch(_))
        ));
    }
}
