//! Translation networks and their training loops: the unpaired CycleGAN
//! (generators G: bass→drums, F: drums→bass, two PatchGAN critics) and the
//! paired Pix2Pix baseline.

mod config;
mod cyclegan;
mod layers;
mod networks;
mod pix2pix;
mod pool;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autograd::checkpoint::{Checkpoint, Record};
use crate::autograd::{bce_with_logits_to_const, mse_to_const, AutogradError, Scalar, Tensor};
use crate::dataset::{Chunk, DatasetError, Domain, LevelImage};

pub use config::{DiscriminatorConfig, GanMode, GeneratorConfig, KeyValues, UNetConfig};
pub use cyclegan::{cyclegan_losses, discriminator_loss, train_cyclegan, CycleConfig, CycleGan, CycleLosses, CycleTrainState};
pub use layers::{Conv, ParamSet, INIT_STD};
pub use networks::{Discriminator, Generator, Network, UNet};
pub use pix2pix::{train_pix2pix, Pix2PixConfig, Pix2PixLosses, Pix2PixState};
pub use pool::ImagePool;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint does not match the requested configuration: {0}")]
    ConfigMismatch(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error("chunk geometry {rows}×{cols} does not match model image size {size}")]
    Geometry { rows: usize, cols: usize, size: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.to_owned(),
        source,
    }
}

pub(crate) fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Adversarial criterion against a constant real/fake label.
pub fn gan_loss<T: Scalar>(mode: GanMode, logits: &Tensor<T>, target: f64) -> Tensor<T> {
    match mode {
        GanMode::LeastSquares => mse_to_const(logits, T::of(target)),
        GanMode::CrossEntropy => bce_with_logits_to_const(logits, T::of(target)),
    }
}

/// One line of a training loss log.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub values: Vec<(&'static str, f64)>,
}

impl LossRecord {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    pub fn to_json(&self) -> String {
        let mut s = format!("{{\"step\":{}", self.step);
        for (k, v) in &self.values {
            s.push_str(&format!(",\"{k}\":{v}"));
        }
        s.push('}');
        s
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|(_, v)| v.is_finite())
    }
}

/// Where a training run writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub dir: Option<PathBuf>,
    /// Keep a checkpoint at the end of every epoch, not only the final one.
    pub keep_epoch_checkpoints: bool,
}

impl RunOutput {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            keep_epoch_checkpoints: false,
        }
    }

    pub(crate) fn prepare(&self) -> Result<Option<fs::File>, ModelError> {
        let Some(dir) = &self.dir else { return Ok(None) };
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let log = dir.join(LOSS_LOG);
        fs::File::create(&log).map(Some).map_err(io_err(&log))
    }

    pub(crate) fn write_checkpoint<T: Scalar>(&self, name: &str, ckpt: &Checkpoint<T>) -> Result<(), ModelError> {
        if let Some(dir) = &self.dir {
            let path = dir.join(name);
            fs::write(&path, ckpt.to_bytes()).map_err(io_err(&path))?;
        }
        Ok(())
    }
}

pub const LOSS_LOG: &str = "losses.ndjson";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const DIAGNOSTIC_CHECKPOINT: &str = "diagnostic.ckpt";

pub(crate) fn push_params<T: Scalar>(records: &mut Vec<Record<T>>, prefix: &str, params: &ParamSet<T>) {
    for (name, t) in params.names.iter().zip(&params.tensors) {
        records.push(Record {
            name: format!("{prefix}{name}"),
            shape: t.shape().to_vec(),
            values: t.to_vec(),
        });
    }
}

pub(crate) fn push_moments<T: Scalar>(
    records: &mut Vec<Record<T>>,
    prefix: &str,
    params: &ParamSet<T>,
    first: &[Vec<T>],
    second: &[Vec<T>],
) {
    for ((name, t), (m, v)) in params.names.iter().zip(&params.tensors).zip(first.iter().zip(second)) {
        for (tag, values) in [("m", m), ("v", v)] {
            records.push(Record {
                name: format!("{prefix}{tag}.{name}"),
                shape: t.shape().to_vec(),
                values: values.clone(),
            });
        }
    }
}

fn find_record<'a, T: Scalar>(
    ckpt: &'a Checkpoint<T>,
    name: &str,
    shape: &[usize],
) -> Result<&'a Record<T>, ModelError> {
    let r = ckpt
        .record(name)
        .ok_or_else(|| ModelError::ConfigMismatch(format!("record `{name}` missing")))?;
    if r.shape != shape {
        return Err(ModelError::ConfigMismatch(format!(
            "record `{name}` has shape {:?}, expected {shape:?}",
            r.shape
        )));
    }
    Ok(r)
}

pub(crate) fn load_params<T: Scalar>(ckpt: &Checkpoint<T>, prefix: &str, params: &ParamSet<T>) -> Result<(), ModelError> {
    for (name, t) in params.names.iter().zip(&params.tensors) {
        let r = find_record(ckpt, &format!("{prefix}{name}"), t.shape())?;
        t.data_mut().copy_from_slice(&r.values);
    }
    Ok(())
}

pub(crate) fn load_moments<T: Scalar>(
    ckpt: &Checkpoint<T>,
    prefix: &str,
    params: &ParamSet<T>,
) -> Result<(Vec<Vec<T>>, Vec<Vec<T>>), ModelError> {
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (name, t) in params.names.iter().zip(&params.tensors) {
        first.push(find_record(ckpt, &format!("{prefix}m.{name}"), t.shape())?.values.clone());
        second.push(find_record(ckpt, &format!("{prefix}v.{name}"), t.shape())?.values.clone());
    }
    Ok((first, second))
}

pub(crate) fn read_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, ModelError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

/// Runs `net` on every chunk and maps the output back to 8-bit levels.
///
/// Offsets and song ids are preserved, so the result can be reassembled.
pub fn translate<T: Scalar>(
    net: &impl Network<T>,
    image_size: usize,
    chunks: &[Chunk],
    output_domain: Domain,
) -> Result<Vec<Chunk>, ModelError> {
    chunks
        .iter()
        .map(|c| {
            let (rows, cols) = (c.image.rows(), c.image.cols());
            if rows != image_size || cols != image_size {
                return Err(ModelError::Geometry { rows, cols, size: image_size });
            }
            let x = Tensor::from_vec(&[1, 1, rows, cols], c.image.to_unit_range::<T>())?;
            let y = net.forward(&x)?.to_vec();
            Ok(Chunk {
                image: LevelImage::from_unit_range(rows, cols, &y),
                song_id: c.song_id.clone(),
                offset: c.offset,
                domain: output_domain,
            })
        })
        .collect()
}

/// Kind tag stored in a checkpoint header.
pub fn checkpoint_kind(path: &Path) -> Result<String, ModelError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let ckpt = Checkpoint::<f32>::from_bytes(&bytes)?;
    Ok(KeyValues::parse(&ckpt.config)?.get("kind")?.to_owned())
}
