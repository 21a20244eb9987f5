//! End-to-end steps shared by the command-line tool and the determinism tests:
//! run configuration, spectrogram export, dataset construction, training,
//! translation, inversion and evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audio_io::{self, AudioError};
use crate::autograd::AdamConfig;
use crate::dataset::{
    self, Chunk, ChunkStore, DatasetError, DatasetManifest, Domain, FeatureConfig, LevelImage, Split, SplitRule,
};
use crate::evaluation::{
    self, fid, fit_gaussian, fit_logistic, grade_bucket, mean_grades, parse_annotations, Criterion, Embed,
    Embedder, EvalError, ExternalEmbeddings, GradeBucket, ScoreTable,
};
use crate::inversion::{self, InversionConfig, InversionError};
use crate::models::{
    self, CycleConfig, CycleTrainState, DiscriminatorConfig, GanMode, GeneratorConfig, ModelError, Pix2PixConfig,
    Pix2PixState, RunOutput, UNetConfig,
};
use crate::spectral::{self, SpectralError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Inversion(#[from] InversionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl PipelineError {
    /// 2 for configuration problems, 1 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_owned(),
        source,
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 256×256 images, 9 residual blocks, 64 base channels.
    Paper,
    /// 64×64 images, 3 residual blocks, 16 base channels.
    Desk,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(format!("unknown preset `{other}` (expected paper or desk)")),
        }
    }
}

/// Every tunable of a run, stored as a flat `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub floor_db: f64,
    pub chunk_width: usize,
    pub overlap: usize,
    /// Songs assigned to the training split in ingestion order; 0 puts every song in it.
    pub train_songs: usize,
    pub res_blocks: usize,
    pub base_channels: usize,
    pub disc_layers: usize,
    pub unet_depth: usize,
    pub lambda_cycle: f64,
    pub lambda_identity: f64,
    pub lambda_l1: f64,
    pub gan_mode: GanMode,
    pub pool_size: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    /// Overrides `epochs` when nonzero.
    pub steps: usize,
    pub seed: u64,
    pub mel_iters: usize,
    pub gl_iters: usize,
    pub l2: f64,
}

const KEYS: &[&str] = &[
    "preset",
    "sample_rate",
    "window_len",
    "hop",
    "n_mels",
    "floor_db",
    "chunk_width",
    "overlap",
    "train_songs",
    "res_blocks",
    "base_channels",
    "disc_layers",
    "unet_depth",
    "lambda_cycle",
    "lambda_identity",
    "lambda_l1",
    "gan_mode",
    "pool_size",
    "batch_size",
    "lr",
    "beta1",
    "beta2",
    "epochs",
    "steps",
    "seed",
    "mel_iters",
    "gl_iters",
    "l2",
];

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let full = Self {
            preset: Preset::Paper,
            sample_rate: audio_io::TARGET_SAMPLE_RATE,
            window_len: spectral::DEFAULT_WINDOW_LEN,
            hop: spectral::DEFAULT_HOP,
            n_mels: spectral::DEFAULT_N_MELS,
            floor_db: spectral::DEFAULT_FLOOR_DB,
            chunk_width: dataset::DEFAULT_CHUNK_WIDTH,
            overlap: dataset::DEFAULT_OVERLAP,
            train_songs: 0,
            res_blocks: 9,
            base_channels: 64,
            disc_layers: 3,
            unet_depth: 8,
            lambda_cycle: 10.0,
            lambda_identity: 0.0,
            lambda_l1: 100.0,
            gan_mode: GanMode::LeastSquares,
            pool_size: 50,
            batch_size: 1,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epochs: 12,
            steps: 0,
            seed: 0,
            mel_iters: InversionConfig::default().max_iters,
            gl_iters: InversionConfig::default().gl_iters,
            l2: 1e-3,
        };
        match preset {
            Preset::Paper => full,
            Preset::Desk => Self {
                preset: Preset::Desk,
                n_mels: 64,
                chunk_width: 64,
                overlap: 12,
                res_blocks: 3,
                base_channels: 16,
                unet_depth: 4,
                epochs: 1,
                ..full
            },
        }
    }

    /// Parses `key = value` lines; `#` starts a comment. A `preset` line
    /// selects the defaults, then the remaining keys override them.
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut pairs = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(PipelineError::Config(format!("line {}: unknown key `{k}`", i + 1)));
            }
            if pairs.insert(k.to_owned(), v.to_owned()).is_some() {
                return Err(PipelineError::Config(format!("line {}: duplicate key `{k}`", i + 1)));
            }
        }
        let preset = match pairs.remove("preset") {
            Some(p) => p.parse().map_err(PipelineError::Config)?,
            None => Preset::Desk,
        };
        let mut cfg = Self::preset(preset);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides one key, as from a command-line flag.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, PipelineError>
        where
            T::Err: fmt::Display,
        {
            v.parse()
                .map_err(|e| PipelineError::Config(format!("`{key}`: cannot parse `{v}`: {e}")))
        }
        match key {
            "preset" => self.preset = value.parse().map_err(PipelineError::Config)?,
            "sample_rate" => self.sample_rate = num(key, value)?,
            "window_len" => self.window_len = num(key, value)?,
            "hop" => self.hop = num(key, value)?,
            "n_mels" => self.n_mels = num(key, value)?,
            "floor_db" => self.floor_db = num(key, value)?,
            "chunk_width" => self.chunk_width = num(key, value)?,
            "overlap" => self.overlap = num(key, value)?,
            "train_songs" => self.train_songs = num(key, value)?,
            "res_blocks" => self.res_blocks = num(key, value)?,
            "base_channels" => self.base_channels = num(key, value)?,
            "disc_layers" => self.disc_layers = num(key, value)?,
            "unet_depth" => self.unet_depth = num(key, value)?,
            "lambda_cycle" => self.lambda_cycle = num(key, value)?,
            "lambda_identity" => self.lambda_identity = num(key, value)?,
            "lambda_l1" => self.lambda_l1 = num(key, value)?,
            "gan_mode" => self.gan_mode = GanMode::parse(value).map_err(|e| PipelineError::Config(e.to_string()))?,
            "pool_size" => self.pool_size = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "mel_iters" => self.mel_iters = num(key, value)?,
            "gl_iters" => self.gl_iters = num(key, value)?,
            "l2" => self.l2 = num(key, value)?,
            other => return Err(PipelineError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Canonical text form; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let values = [
            self.preset.to_string(),
            self.sample_rate.to_string(),
            self.window_len.to_string(),
            self.hop.to_string(),
            self.n_mels.to_string(),
            self.floor_db.to_string(),
            self.chunk_width.to_string(),
            self.overlap.to_string(),
            self.train_songs.to_string(),
            self.res_blocks.to_string(),
            self.base_channels.to_string(),
            self.disc_layers.to_string(),
            self.unet_depth.to_string(),
            self.lambda_cycle.to_string(),
            self.lambda_identity.to_string(),
            self.lambda_l1.to_string(),
            self.gan_mode.as_str().to_string(),
            self.pool_size.to_string(),
            self.batch_size.to_string(),
            self.lr.to_string(),
            self.beta1.to_string(),
            self.beta2.to_string(),
            self.epochs.to_string(),
            self.steps.to_string(),
            self.seed.to_string(),
            self.mel_iters.to_string(),
            self.gl_iters.to_string(),
            self.l2.to_string(),
        ];
        KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`serialize`](Self::serialize).
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.serialize().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.sample_rate == 0 || self.window_len < 2 || self.hop == 0 || self.hop > self.window_len {
            return bad(format!(
                "need sample_rate > 0 and 0 < hop ≤ window_len (got {}, {}, {})",
                self.sample_rate, self.hop, self.window_len
            ));
        }
        if self.n_mels == 0 || self.n_mels > self.window_len / 2 + 1 {
            return bad(format!("n_mels must be in 1..={}", self.window_len / 2 + 1));
        }
        if !(self.floor_db < 0.0) {
            return bad(format!("floor_db must be negative, got {}", self.floor_db));
        }
        if self.overlap >= self.chunk_width {
            return bad(format!("overlap {} must be below chunk_width {}", self.overlap, self.chunk_width));
        }
        if self.n_mels != self.chunk_width {
            return bad(format!(
                "networks take square chunks: n_mels ({}) must equal chunk_width ({})",
                self.n_mels, self.chunk_width
            ));
        }
        if self.batch_size == 0 || (self.epochs == 0 && self.steps == 0) {
            return bad("batch_size and one of epochs/steps must be positive".into());
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("need lr > 0 and betas in [0, 1)".into());
        }
        if self.lambda_cycle < 0.0 || self.lambda_identity < 0.0 || self.lambda_l1 < 0.0 || self.l2 < 0.0 {
            return bad("loss weights and l2 must be nonnegative".into());
        }
        if self.gl_iters == 0 || self.mel_iters == 0 {
            return bad("mel_iters and gl_iters must be positive".into());
        }
        let as_config = |e: ModelError| PipelineError::Config(e.to_string());
        self.cycle_config().validate().map_err(as_config)?;
        self.pix2pix_config().validate().map_err(as_config)?;
        Ok(())
    }

    pub fn features(&self) -> FeatureConfig {
        FeatureConfig {
            sample_rate: self.sample_rate,
            window_len: self.window_len,
            hop: self.hop,
            n_mels: self.n_mels,
            floor_db: self.floor_db,
            chunk_width: self.chunk_width,
            overlap: self.overlap,
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    fn discriminator(&self, in_channels: usize) -> DiscriminatorConfig {
        DiscriminatorConfig {
            n_layers: self.disc_layers,
            base_channels: self.base_channels,
            in_channels,
            image_size: self.chunk_width,
        }
    }

    pub fn cycle_config(&self) -> CycleConfig {
        CycleConfig {
            generator: GeneratorConfig {
                n_res_blocks: self.res_blocks,
                base_channels: self.base_channels,
                image_size: self.chunk_width,
                ..GeneratorConfig::desk()
            },
            discriminator: self.discriminator(1),
            lambda_cycle: self.lambda_cycle,
            lambda_identity: self.lambda_identity,
            pool_size: self.pool_size,
            gan_mode: self.gan_mode,
            adam: self.adam(),
            batch_size: self.batch_size,
        }
    }

    pub fn pix2pix_config(&self) -> Pix2PixConfig {
        Pix2PixConfig {
            generator: UNetConfig {
                depth: self.unet_depth,
                base_channels: self.base_channels,
                image_size: self.chunk_width,
                ..UNetConfig::desk()
            },
            discriminator: self.discriminator(2),
            lambda_l1: self.lambda_l1,
            gan_mode: self.gan_mode,
            adam: self.adam(),
            batch_size: self.batch_size,
        }
    }

    pub fn inversion(&self) -> InversionConfig {
        InversionConfig {
            max_iters: self.mel_iters,
            gl_iters: self.gl_iters,
            ..InversionConfig::default()
        }
    }

    /// Update count for a training set of `n` examples.
    pub fn training_steps(&self, n: usize) -> usize {
        if self.steps > 0 {
            self.steps
        } else {
            self.epochs * n.div_ceil(self.batch_size)
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

/// WAV file → quantized mel image written as PGM.
pub fn spectrogram(cfg: &RunConfig, wav: &Path, out: &Path) -> Result<LevelImage, PipelineError> {
    let image = dataset::stem_to_levels(wav, &cfg.features())?;
    write(out, image.to_pgm())?;
    Ok(image)
}

/// Scans `<root>/<song>/{bass,drums}.wav` and writes the manifest.
pub fn ingest(cfg: &RunConfig, root: &Path, out: &Path) -> Result<DatasetManifest, PipelineError> {
    let rule = match cfg.train_songs {
        0 => SplitRule::AllTrain,
        n => SplitRule::FirstTrain(n),
    };
    let manifest = dataset::ingest_stems(root, rule)?;
    for (song, reason) in &manifest.skipped {
        log::warn!("skipped `{song}`: {reason}");
    }
    write(out, manifest.to_tsv())?;
    Ok(manifest)
}

pub fn build_chunks(cfg: &RunConfig, manifest: &Path, out_dir: &Path) -> Result<ChunkStore, PipelineError> {
    let text = fs::read_to_string(manifest).map_err(io_err(manifest))?;
    let manifest = DatasetManifest::from_tsv(&text)?;
    let (store, report) = dataset::build_chunks(&manifest, &cfg.features(), out_dir)?;
    log::info!(
        "{} chunks written; {} songs failed; {} stems too short",
        report.chunks_written,
        report.failures.len(),
        report.empty.len()
    );
    if report.chunks_written == 0 {
        return Err(PipelineError::Input(format!("no chunks produced in {}", out_dir.display())));
    }
    Ok(store)
}

fn check_store(cfg: &RunConfig, store: &ChunkStore) -> Result<(), PipelineError> {
    let want = cfg.features().fingerprint();
    match store.fingerprint() {
        Some(have) if have != want => Err(PipelineError::Config(format!(
            "chunk store was built with `{have}`, configuration asks for `{want}`"
        ))),
        _ => Ok(()),
    }
}

/// Trains G: bass→drums and F: drums→bass on the training split.
pub fn train_cyclegan(
    cfg: &RunConfig,
    store_dir: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<CycleTrainState<f32>, PipelineError> {
    let store = ChunkStore::open(store_dir)?;
    check_store(cfg, &store)?;
    let x = dataset::load_images::<f32>(&store, Domain::Bass, Some(Split::Train))?;
    let y = dataset::load_images::<f32>(&store, Domain::Drums, Some(Split::Train))?;
    let mut state = match resume {
        Some(path) => CycleTrainState::load(path, Some(&cfg.cycle_config()))?,
        None => CycleTrainState::new(cfg.cycle_config(), cfg.seed)?,
    };
    let steps = cfg.training_steps(x.len().max(y.len()));
    log::info!("cyclegan: {} bass / {} drum chunks, {steps} steps", x.len(), y.len());
    let out = RunOutput {
        dir: Some(out_dir.to_owned()),
        keep_epoch_checkpoints: true,
    };
    state.train(&x, &y, steps, &out)?;
    Ok(state)
}

/// Trains the paired U-Net baseline on aligned bass/drum chunks.
pub fn train_pix2pix(
    cfg: &RunConfig,
    store_dir: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<Pix2PixState<f32>, PipelineError> {
    let store = ChunkStore::open(store_dir)?;
    check_store(cfg, &store)?;
    let pairs = store.load_pairs(Some(Split::Train))?;
    if pairs.is_empty() {
        return Err(PipelineError::Input("no aligned bass/drum training pairs".into()));
    }
    let x: Vec<Vec<f32>> = pairs.iter().map(|(b, _)| b.image.to_unit_range()).collect();
    let y: Vec<Vec<f32>> = pairs.iter().map(|(_, d)| d.image.to_unit_range()).collect();
    let mut state = match resume {
        Some(path) => Pix2PixState::load(path, Some(&cfg.pix2pix_config()))?,
        None => Pix2PixState::new(cfg.pix2pix_config(), cfg.seed)?,
    };
    let steps = cfg.training_steps(x.len());
    log::info!("pix2pix: {} pairs, {steps} steps", x.len());
    let out = RunOutput {
        dir: Some(out_dir.to_owned()),
        keep_epoch_checkpoints: true,
    };
    state.train(&x, &y, steps, &out)?;
    Ok(state)
}

/// Bass chunks → drum chunks with whichever generator the checkpoint holds.
pub fn translate_chunks(cfg: &RunConfig, checkpoint: &Path, chunks: &[Chunk]) -> Result<Vec<Chunk>, PipelineError> {
    let size = cfg.chunk_width;
    let out = match models::checkpoint_kind(checkpoint)?.as_str() {
        "pix2pix" => {
            let state = Pix2PixState::<f32>::load(checkpoint, Some(&cfg.pix2pix_config()))?;
            models::translate(&state.g, size, chunks, Domain::Drums)?
        }
        _ => {
            let state = CycleTrainState::<f32>::load(checkpoint, Some(&cfg.cycle_config()))?;
            models::translate(&state.model.g, size, chunks, Domain::Drums)?
        }
    };
    Ok(out)
}

/// Output file next to `input`: `song.wav` → `song.drums.wav`.
pub fn adjacent_output(input: &Path) -> PathBuf {
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    input.with_file_name(format!("{stem}.drums.wav"))
}

/// Bass WAV → drum WAV. With `intermediates`, the input and output mel
/// images and every translated chunk are kept there as PGM files.
pub fn translate_wav(
    cfg: &RunConfig,
    checkpoint: &Path,
    wav: &Path,
    out: &Path,
    intermediates: Option<&Path>,
) -> Result<audio_io::Waveform, PipelineError> {
    let feats = cfg.features();
    let image = dataset::stem_to_levels(wav, &feats)?;
    let song = wav.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "song".into());
    let chunks = dataset::chunk(&image, cfg.chunk_width, cfg.overlap, &song, Domain::Bass)?;
    let generated = translate_chunks(cfg, checkpoint, &chunks)?;
    let assembled = dataset::assemble(&generated, cfg.overlap)?;
    if let Some(dir) = intermediates {
        write(&dir.join(format!("{song}_bass.pgm")), image.to_pgm())?;
        write(&dir.join(format!("{song}_drums.pgm")), assembled.to_pgm())?;
        for c in &generated {
            write(&dir.join(c.file_name()), c.image.to_pgm())?;
        }
    }
    let wave = levels_to_waveform(cfg, &assembled)?;
    audio_io::write_wav(out, &wave)?;
    Ok(wave)
}

/// Translates every bass chunk of `split` into a new chunk store of drum chunks.
pub fn translate_store(
    cfg: &RunConfig,
    checkpoint: &Path,
    store_dir: &Path,
    split: Split,
    out_dir: &Path,
) -> Result<ChunkStore, PipelineError> {
    let store = ChunkStore::open(store_dir)?;
    check_store(cfg, &store)?;
    let bass = store.load_all(Domain::Bass, Some(split))?;
    if bass.is_empty() {
        return Err(PipelineError::Input(format!("no {split:?} bass chunks in {}", store_dir.display())));
    }
    let generated = translate_chunks(cfg, checkpoint, &bass)?;
    let mut out = ChunkStore::create(out_dir)?;
    write(&out_dir.join(dataset::STORE_FINGERPRINT), format!("{}\n", cfg.features().fingerprint()))?;
    out.append(&generated, split)?;
    Ok(out)
}

fn levels_to_waveform(cfg: &RunConfig, image: &LevelImage) -> Result<audio_io::Waveform, PipelineError> {
    let feats = cfg.features();
    let db = spectral::dequantize(image.levels(), image.rows(), image.cols(), cfg.floor_db);
    Ok(inversion::mel_db_to_waveform(
        &db,
        &feats.filterbank()?,
        feats.stft_params(),
        &cfg.inversion(),
    )?)
}

/// PGM mel image → WAV.
pub fn invert(cfg: &RunConfig, pgm: &Path, out: &Path) -> Result<audio_io::Waveform, PipelineError> {
    let bytes = fs::read(pgm).map_err(io_err(pgm))?;
    let image = LevelImage::from_pgm(&bytes).map_err(|reason| DatasetError::Pgm {
        path: pgm.to_owned(),
        reason,
    })?;
    if image.rows() != cfg.n_mels {
        return Err(PipelineError::Input(format!(
            "{} has {} mel rows, configuration has {}",
            pgm.display(),
            image.rows(),
            cfg.n_mels
        )));
    }
    let wave = levels_to_waveform(cfg, &image)?;
    audio_io::write_wav(out, &wave)?;
    Ok(wave)
}

/// Inputs of [`evaluate`].
#[derive(Debug, Clone)]
pub struct EvaluateInputs<'a> {
    /// Store holding the real drum chunks.
    pub store: &'a Path,
    /// Store of generated drum chunks (from [`translate_store`]).
    pub generated: &'a Path,
    /// Trained CycleGAN whose drum critic provides embeddings.
    pub checkpoint: Option<&'a Path>,
    /// Precomputed embeddings keyed by chunk file name, used instead of the critic.
    pub embeddings: Option<&'a Path>,
    /// Human grades keyed by generated chunk file name.
    pub annotations: Option<&'a Path>,
    pub split: Split,
    pub threads: usize,
}

/// What [`evaluate`] writes besides the score table.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationSummary {
    pub table: ScoreTable,
    pub fid: f64,
    pub training_pairs: usize,
    pub calibrated: bool,
}

pub const SCORES_FILE: &str = "scores.ndjson";
pub const HISTOGRAM_FILE: &str = "histogram.tsv";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Scores generated drum chunks against the real ones they should match.
///
/// The grade classifier is fit on annotated samples when annotations are
/// given. Without them it is calibrated on real chunks: each chunk paired
/// with itself is labelled 8-9 and paired with a different chunk 0-3.
pub fn evaluate(cfg: &RunConfig, inputs: &EvaluateInputs<'_>, out_dir: &Path) -> Result<EvaluationSummary, PipelineError> {
    let real_store = ChunkStore::open(inputs.store)?;
    check_store(cfg, &real_store)?;
    let gen_store = ChunkStore::open(inputs.generated).map_err(|e| match e {
        DatasetError::Io { .. } => PipelineError::Input(format!(
            "no generated chunk store in {}",
            inputs.generated.display()
        )),
        other => other.into(),
    })?;
    let generated = gen_store.load_all(Domain::Drums, None)?;
    if generated.is_empty() {
        return Err(PipelineError::Input(format!(
            "generated directory {} holds no drum chunks",
            inputs.generated.display()
        )));
    }
    let real: BTreeMap<(String, usize), Chunk> = real_store
        .load_all(Domain::Drums, Some(inputs.split))?
        .into_iter()
        .map(|c| ((c.song_id.clone(), c.offset), c))
        .collect();
    let pairs: Vec<(Chunk, Chunk)> = generated
        .into_iter()
        .filter_map(|g| real.get(&(g.song_id.clone(), g.offset)).map(|r| (r.clone(), g)))
        .collect();
    if pairs.is_empty() {
        return Err(PipelineError::Input(
            "no generated chunk matches a real drum chunk by song and offset".into(),
        ));
    }
    let real_chunks: Vec<Chunk> = real.into_values().collect();

    let embedder: Box<dyn Embed> = match (inputs.embeddings, inputs.checkpoint) {
        (Some(path), _) => Box::new(ExternalEmbeddings::read(path)?),
        (None, Some(ckpt)) => {
            let state = CycleTrainState::<f32>::load(ckpt, Some(&cfg.cycle_config()))?;
            Box::new(Embedder::from_cyclegan(&state)?)
        }
        (None, None) => {
            return Err(PipelineError::Config(
                "evaluation needs a CycleGAN checkpoint or an embeddings file".into(),
            ))
        }
    };
    let reference = evaluation::fit_reference(embedder.as_ref(), &real_chunks)?;
    let gen_embeddings: Vec<Vec<f64>> = pairs
        .iter()
        .map(|(_, g)| embedder.embed(g))
        .collect::<Result<_, _>>()?;
    let fid_value = if gen_embeddings.len() >= 2 {
        fid(&reference, &fit_gaussian(&gen_embeddings)?)?
    } else {
        f64::NAN
    };

    let (train_pairs, labels, calibrated) = match inputs.annotations {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            let grades = mean_grades(&parse_annotations(&text)?, Criterion::Quality);
            let mut train = Vec::new();
            let mut labels = Vec::new();
            for (r, g) in &pairs {
                if let Some(&m) = grades.get(&g.file_name()) {
                    train.push((r.clone(), g.clone()));
                    labels.push(grade_bucket(m)?);
                }
            }
            (train, labels, false)
        }
        None => {
            let n = real_chunks.len();
            if n < 2 {
                return Err(PipelineError::Input("calibration needs at least two real drum chunks".into()));
            }
            let mut train = Vec::new();
            let mut labels = Vec::new();
            for (i, c) in real_chunks.iter().enumerate() {
                train.push((c.clone(), c.clone()));
                labels.push(GradeBucket::B8_9);
                train.push((c.clone(), real_chunks[(i + n / 2) % n].clone()));
                labels.push(GradeBucket::B0_3);
            }
            (train, labels, true)
        }
    };
    let train_features = evaluation::pair_features_threaded(&train_pairs, embedder.as_ref(), &reference, inputs.threads)?;
    let model = fit_logistic(&train_features, &labels, cfg.l2)?;
    let table = evaluation::score_samples_threaded(&pairs, embedder.as_ref(), &reference, &model, inputs.threads)?;

    write(&out_dir.join(SCORES_FILE), table.to_ndjson())?;
    write(&out_dir.join(HISTOGRAM_FILE), table.histogram_text())?;
    write(
        &out_dir.join(SUMMARY_FILE),
        format!(
            "pairs\t{}\nfid\t{fid_value}\nclassifier\t{}\ntraining_pairs\t{}\n",
            pairs.len(),
            if calibrated { "calibrated" } else { "annotated" },
            train_pairs.len()
        ),
    )?;
    Ok(EvaluationSummary {
        table,
        fid: fid_value,
        training_pairs: train_pairs.len(),
        calibrated,
    })
}
