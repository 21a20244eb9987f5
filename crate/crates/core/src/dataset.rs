//! Paired bass/drums chunk datasets: ingest stems, cut quantized mel images
//! into overlapping windows, persist them as PGM files, and stream batches.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio_io::{self, AudioError};
use crate::autograd::{stack_images, Scalar, Tensor};
use crate::spectral::{self, SpectralError, StftParams, WindowKind};

pub const DEFAULT_CHUNK_WIDTH: usize = 256;
pub const DEFAULT_OVERLAP: usize = 50;
pub const STORE_MANIFEST: &str = "chunks.tsv";
pub const STORE_FINGERPRINT: &str = "features.txt";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("matrix has {frames} frames, fewer than one chunk of {width}")]
    TooShort { frames: usize, width: usize },
    #[error("overlap {overlap} must be smaller than chunk width {width}")]
    InvalidOverlap { overlap: usize, width: usize },
    #[error("chunks are not contiguous: {0}")]
    NotContiguous(String),
    #[error("cannot read directory {path}: {source}")]
    UnreadableDirectory {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad PGM file {path}: {reason}")]
    Pgm { path: PathBuf, reason: String },
    #[error("bad manifest record at line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("no chunks available for {0}")]
    Empty(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Bass,
    Drums,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Bass => "bass",
            Domain::Drums => "drums",
        }
    }

    pub fn stem_file(self) -> &'static str {
        match self {
            Domain::Bass => "bass.wav",
            Domain::Drums => "drums.wav",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bass" => Ok(Domain::Bass),
            "drums" => Ok(Domain::Drums),
            other => Err(format!("unknown domain `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Row-major 8-bit image: rows are mel bins, columns are frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelImage {
    rows: usize,
    cols: usize,
    levels: Vec<u8>,
}

impl LevelImage {
    pub fn new(rows: usize, cols: usize, levels: Vec<u8>) -> Self {
        assert_eq!(levels.len(), rows * cols, "image data length mismatch");
        Self { rows, cols, levels }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.levels[r * self.cols + c]
    }

    pub fn column_window(&self, start: usize, width: usize) -> LevelImage {
        let mut levels = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            levels.extend_from_slice(&self.levels[r * self.cols + start..r * self.cols + start + width]);
        }
        LevelImage::new(self.rows, width, levels)
    }

    /// Binary PGM (`P5`, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        out.extend_from_slice(&self.levels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self, String> {
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated header".into());
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|e| e.to_string())?);
        }
        if fields[0] != "P5" {
            return Err(format!("expected P5 magic, got {}", fields[0]));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| format!("bad header field `{s}`: {e}"));
        let (cols, rows, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval != 255 {
            return Err(format!("maxval {maxval} unsupported"));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let raster = bytes.get(pos..).unwrap_or_default();
        if raster.len() != rows * cols {
            return Err(format!("raster has {} bytes, expected {}", raster.len(), rows * cols));
        }
        Ok(LevelImage::new(rows, cols, raster.to_vec()))
    }

    /// Maps levels to `[-1, 1]` via `v / 127.5 − 1`.
    pub fn to_unit_range<T: Scalar>(&self) -> Vec<T> {
        self.levels.iter().map(|&v| level_to_unit(v)).collect()
    }

    pub fn from_unit_range<T: Scalar>(rows: usize, cols: usize, values: &[T]) -> Self {
        LevelImage::new(rows, cols, values.iter().map(|&v| unit_to_level(v)).collect())
    }
}

#[inline]
pub fn level_to_unit<T: Scalar>(v: u8) -> T {
    T::of(v as f64 / 127.5 - 1.0)
}

/// Inverse of [`level_to_unit`], clamped to `0..=255`.
#[inline]
pub fn unit_to_level<T: Scalar>(v: T) -> u8 {
    let x = (v.as_f64() + 1.0) * 127.5;
    if x.is_nan() {
        return 0;
    }
    x.round().clamp(0.0, 255.0) as u8
}

/// A fixed-size window of a quantized mel-spectrogram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub image: LevelImage,
    pub song_id: String,
    pub offset: usize,
    pub domain: Domain,
}

impl Chunk {
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}.pgm", self.song_id, self.domain, self.offset)
    }
}

/// Window start frames: `0, s, 2s, …` with stride `s = width − overlap`;
/// trailing frames that do not fill a window are dropped.
pub fn chunk_offsets(frames: usize, width: usize, overlap: usize) -> Result<Vec<usize>, DatasetError> {
    if overlap >= width {
        return Err(DatasetError::InvalidOverlap { overlap, width });
    }
    if frames < width {
        return Err(DatasetError::TooShort { frames, width });
    }
    let stride = width - overlap;
    let count = (frames - width) / stride + 1;
    Ok((0..count).map(|i| i * stride).collect())
}

/// Cuts a quantized mel image into overlapping `rows × width` chunks.
pub fn chunk(
    image: &LevelImage,
    width: usize,
    overlap: usize,
    song_id: &str,
    domain: Domain,
) -> Result<Vec<Chunk>, DatasetError> {
    Ok(chunk_offsets(image.cols(), width, overlap)?
        .into_iter()
        .map(|offset| Chunk {
            image: image.column_window(offset, width),
            song_id: song_id.to_owned(),
            offset,
            domain,
        })
        .collect())
}

/// Reassembles contiguous chunks of one song.
///
/// Inside each `overlap`-frame region the two chunks are crossfaded linearly
/// (in level units, which are affine in dB); elsewhere columns are copied.
pub fn assemble(chunks: &[Chunk], overlap: usize) -> Result<LevelImage, DatasetError> {
    let first = chunks
        .first()
        .ok_or_else(|| DatasetError::Empty("assembly".into()))?;
    let (rows, width) = (first.image.rows(), first.image.cols());
    if overlap >= width {
        return Err(DatasetError::InvalidOverlap { overlap, width });
    }
    let stride = width - overlap;
    let mut ordered: Vec<&Chunk> = chunks.iter().collect();
    ordered.sort_by_key(|c| c.offset);
    for pair in ordered.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.song_id != b.song_id {
            return Err(DatasetError::NotContiguous(format!(
                "songs `{}` and `{}` mixed",
                a.song_id, b.song_id
            )));
        }
        if b.offset == a.offset {
            return Err(DatasetError::NotContiguous(format!("duplicate offset {}", a.offset)));
        }
        if b.offset != a.offset + stride {
            return Err(DatasetError::NotContiguous(format!(
                "gap between offsets {} and {} (stride {stride})",
                a.offset, b.offset
            )));
        }
    }
    for c in &ordered {
        if c.image.rows() != rows || c.image.cols() != width {
            return Err(DatasetError::NotContiguous("chunk geometry differs".into()));
        }
    }
    let base = ordered[0].offset;
    let cols = (ordered.len() - 1) * stride + width;
    let mut levels = vec![0u8; rows * cols];
    for (i, c) in ordered.iter().enumerate() {
        let start = c.offset - base;
        for col in 0..width {
            let dst_col = start + col;
            let in_overlap = i > 0 && col < overlap;
            for r in 0..rows {
                let v = c.image.get(r, col);
                let slot = &mut levels[r * cols + dst_col];
                *slot = if in_overlap {
                    let alpha = (col + 1) as f64 / (overlap + 1) as f64;
                    ((1.0 - alpha) * *slot as f64 + alpha * v as f64).round() as u8
                } else {
                    v
                };
            }
        }
    }
    Ok(LevelImage::new(rows, cols, levels))
}

/// Spectral and chunking parameters that determine a chunk store.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub floor_db: f64,
    pub chunk_width: usize,
    pub overlap: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: audio_io::TARGET_SAMPLE_RATE,
            window_len: spectral::DEFAULT_WINDOW_LEN,
            hop: spectral::DEFAULT_HOP,
            n_mels: spectral::DEFAULT_N_MELS,
            floor_db: spectral::DEFAULT_FLOOR_DB,
            chunk_width: DEFAULT_CHUNK_WIDTH,
            overlap: DEFAULT_OVERLAP,
        }
    }
}

impl FeatureConfig {
    pub fn stft_params(&self) -> StftParams {
        StftParams {
            window_len: self.window_len,
            hop: self.hop,
            window: WindowKind::Hann,
        }
    }

    pub fn filterbank(&self) -> Result<spectral::FilterBank, SpectralError> {
        spectral::mel_filterbank(
            self.n_mels,
            self.window_len,
            self.sample_rate,
            0.0,
            self.sample_rate as f64 / 2.0,
        )
    }

    pub fn fingerprint(&self) -> String {
        format!(
            "sr={} n_fft={} hop={} n_mels={} floor_db={} chunk={} overlap={}",
            self.sample_rate, self.window_len, self.hop, self.n_mels, self.floor_db, self.chunk_width, self.overlap
        )
    }
}

/// Audio stem → quantized mel image at the configured rate.
pub fn stem_to_levels(path: &Path, cfg: &FeatureConfig) -> Result<LevelImage, DatasetError> {
    let wave = audio_io::to_mono(&audio_io::read_wav(path)?)?;
    let wave = audio_io::resample(&wave, cfg.sample_rate)?;
    let fb = cfg.filterbank()?;
    let (levels, frames) = spectral::waveform_to_levels(&wave, cfg.stft_params(), &fb, cfg.floor_db)?;
    Ok(LevelImage::new(cfg.n_mels, frames, levels))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub song_id: String,
    pub bass: PathBuf,
    pub drums: PathBuf,
    pub split: Split,
}

impl ManifestEntry {
    pub fn stem(&self, domain: Domain) -> &Path {
        match domain {
            Domain::Bass => &self.bass,
            Domain::Drums => &self.drums,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Song directories skipped during ingestion, with the reason.
    pub skipped: Vec<(String, String)>,
}

impl DatasetManifest {
    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    /// One `song_id<TAB>bass<TAB>drums<TAB>split` line per entry.
    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                format!(
                    "{}\t{}\t{}\t{}\n",
                    e.song_id,
                    e.bass.display(),
                    e.drums.display(),
                    e.split.as_str()
                )
            })
            .collect()
    }

    pub fn from_tsv(text: &str) -> Result<Self, DatasetError> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parts: Vec<&str> = line.split('\t').collect();
            let bad = |reason: String| DatasetError::Manifest { line: i + 1, reason };
            if parts.len() != 4 {
                return Err(bad(format!("expected 4 fields, got {}", parts.len())));
            }
            if !seen.insert(parts[0].to_owned()) {
                return Err(bad(format!("duplicate song id `{}`", parts[0])));
            }
            entries.push(ManifestEntry {
                song_id: parts[0].to_owned(),
                bass: parts[1].into(),
                drums: parts[2].into(),
                split: parts[3].parse().map_err(bad)?,
            });
        }
        Ok(Self {
            entries,
            skipped: Vec::new(),
        })
    }
}

/// How ingested songs (in sorted order) are assigned to splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRule {
    /// The first `n` songs train, the rest test.
    FirstTrain(usize),
    AllTrain,
    AllTest,
}

/// Scans `root/<song>/{bass,drums}.wav`. Songs missing a stem are skipped and reported.
pub fn ingest_stems(root: &Path, rule: SplitRule) -> Result<DatasetManifest, DatasetError> {
    let unreadable = |source| DatasetError::UnreadableDirectory {
        path: root.to_owned(),
        source,
    };
    let mut songs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(unreadable)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    songs.sort();
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for dir in songs {
        let song_id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let bass = dir.join(Domain::Bass.stem_file());
        let drums = dir.join(Domain::Drums.stem_file());
        let missing: Vec<&str> = [(&bass, "bass.wav"), (&drums, "drums.wav")]
            .iter()
            .filter(|(p, _)| !p.is_file())
            .map(|(_, n)| *n)
            .collect();
        if !missing.is_empty() {
            let reason = format!("missing {}", missing.join(", "));
            log::warn!("skipping song `{song_id}`: {reason}");
            skipped.push((song_id, reason));
            continue;
        }
        let split = match rule {
            SplitRule::FirstTrain(n) if entries.len() < n => Split::Train,
            SplitRule::FirstTrain(_) => Split::Test,
            SplitRule::AllTrain => Split::Train,
            SplitRule::AllTest => Split::Test,
        };
        entries.push(ManifestEntry {
            song_id,
            bass,
            drums,
            split,
        });
    }
    if entries.is_empty() {
        log::warn!("no complete songs found under {}", root.display());
    }
    Ok(DatasetManifest { entries, skipped })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkRecord {
    pub song_id: String,
    pub domain: Domain,
    pub offset: usize,
    pub path: PathBuf,
    pub split: Split,
}

/// Directory of PGM chunk files indexed by a tab-separated manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkStore {
    pub root: PathBuf,
    pub records: Vec<ChunkRecord>,
}

/// Per-song outcome of [`build_chunks`].
#[derive(Debug, Clone, PartialEq)]
pub struct BuildReport {
    pub chunks_written: usize,
    pub failures: Vec<(String, String)>,
    pub empty: Vec<(String, Domain)>,
}

impl ChunkStore {
    pub fn open(root: &Path) -> Result<Self, DatasetError> {
        let manifest = root.join(STORE_MANIFEST);
        let text = fs::read_to_string(&manifest).map_err(io_err(&manifest))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |reason: String| DatasetError::Manifest { line: i + 1, reason };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(bad(format!("expected 5 fields, got {}", f.len())));
            }
            records.push(ChunkRecord {
                song_id: f[0].to_owned(),
                domain: f[1].parse().map_err(bad)?,
                offset: f[2].parse().map_err(|e| bad(format!("offset: {e}")))?,
                path: root.join(f[3]),
                split: f[4].parse().map_err(bad)?,
            });
        }
        Ok(Self {
            root: root.to_owned(),
            records,
        })
    }

    /// Feature configuration the store was built with, if recorded.
    pub fn fingerprint(&self) -> Option<String> {
        fs::read_to_string(self.root.join(STORE_FINGERPRINT))
            .ok()
            .map(|s| s.trim_end().to_owned())
    }

    pub fn load(&self, record: &ChunkRecord) -> Result<Chunk, DatasetError> {
        let bytes = fs::read(&record.path).map_err(io_err(&record.path))?;
        let image = LevelImage::from_pgm(&bytes).map_err(|reason| DatasetError::Pgm {
            path: record.path.clone(),
            reason,
        })?;
        Ok(Chunk {
            image,
            song_id: record.song_id.clone(),
            offset: record.offset,
            domain: record.domain,
        })
    }

    pub fn select(&self, domain: Domain, split: Option<Split>) -> Vec<&ChunkRecord> {
        self.records
            .iter()
            .filter(|r| r.domain == domain && split.map_or(true, |s| r.split == s))
            .collect()
    }

    pub fn load_all(&self, domain: Domain, split: Option<Split>) -> Result<Vec<Chunk>, DatasetError> {
        self.select(domain, split).into_iter().map(|r| self.load(r)).collect()
    }

    /// Bass/drums chunk pairs sharing song and offset.
    pub fn load_pairs(&self, split: Option<Split>) -> Result<Vec<(Chunk, Chunk)>, DatasetError> {
        let drums: BTreeMap<(&str, usize), &ChunkRecord> = self
            .select(Domain::Drums, split)
            .into_iter()
            .map(|r| ((r.song_id.as_str(), r.offset), r))
            .collect();
        self.select(Domain::Bass, split)
            .into_iter()
            .filter_map(|b| drums.get(&(b.song_id.as_str(), b.offset)).map(|d| (b, *d)))
            .map(|(b, d)| Ok((self.load(b)?, self.load(d)?)))
            .collect()
    }

    /// Writes chunks and appends their records to the manifest file.
    pub fn append(&mut self, chunks: &[Chunk], split: Split) -> Result<(), DatasetError> {
        let manifest = self.root.join(STORE_MANIFEST);
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&manifest)
            .map_err(io_err(&manifest))?;
        for c in chunks {
            let name = c.file_name();
            let path = self.root.join(&name);
            fs::write(&path, c.image.to_pgm()).map_err(io_err(&path))?;
            writeln!(file, "{}\t{}\t{}\t{}\t{}", c.song_id, c.domain, c.offset, name, split.as_str())
                .map_err(io_err(&manifest))?;
            self.records.push(ChunkRecord {
                song_id: c.song_id.clone(),
                domain: c.domain,
                offset: c.offset,
                path,
                split,
            });
        }
        Ok(())
    }

    /// Creates an empty store, replacing any existing manifest.
    pub fn create(root: &Path) -> Result<Self, DatasetError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        let manifest = root.join(STORE_MANIFEST);
        fs::write(&manifest, "").map_err(io_err(&manifest))?;
        Ok(Self {
            root: root.to_owned(),
            records: Vec::new(),
        })
    }
}

/// Runs audio → mel → dB → quantize → chunk for every song and domain and
/// persists the chunks. Failing songs are logged and skipped.
pub fn build_chunks(
    manifest: &DatasetManifest,
    cfg: &FeatureConfig,
    out_dir: &Path,
) -> Result<(ChunkStore, BuildReport), DatasetError> {
    let mut store = ChunkStore::create(out_dir)?;
    let fp = out_dir.join(STORE_FINGERPRINT);
    fs::write(&fp, format!("{}\n", cfg.fingerprint())).map_err(io_err(&fp))?;
    let mut report = BuildReport {
        chunks_written: 0,
        failures: Vec::new(),
        empty: Vec::new(),
    };
    for entry in &manifest.entries {
        let mut song_chunks = Vec::new();
        let mut failed = None;
        for domain in [Domain::Bass, Domain::Drums] {
            match stem_to_levels(entry.stem(domain), cfg) {
                Ok(image) if image.cols() < cfg.chunk_width => {
                    log::info!(
                        "song `{}` {domain}: {} frames is shorter than one chunk",
                        entry.song_id,
                        image.cols()
                    );
                    report.empty.push((entry.song_id.clone(), domain));
                }
                Ok(image) => song_chunks.extend(chunk(
                    &image,
                    cfg.chunk_width,
                    cfg.overlap,
                    &entry.song_id,
                    domain,
                )?),
                Err(e) => {
                    failed = Some(e.to_string());
                    break;
                }
            }
        }
        if let Some(reason) = failed {
            log::warn!("song `{}` failed: {reason}", entry.song_id);
            report.failures.push((entry.song_id.clone(), reason));
            continue;
        }
        report.chunks_written += song_chunks.len();
        store.append(&song_chunks, entry.split)?;
    }
    Ok((store, report))
}

/// How [`BatchLoader`] draws examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// X and Y shuffled independently.
    Unpaired,
    /// X[i] and Y[i] always travel together.
    Paired,
}

/// Seeded, epoch-shuffled batches from two image sets in `[-1, 1]`.
///
/// Each item is `(x_batch, y_batch)` with shape `B×1×H×W`. An epoch has
/// `max(|X|, |Y|)` examples in unpaired mode (the shorter set wraps around).
pub struct BatchLoader<'a, T: Scalar> {
    x: &'a [Vec<T>],
    y: &'a [Vec<T>],
    height: usize,
    width: usize,
    batch_size: usize,
    pairing: Pairing,
    rng: ChaCha8Rng,
    order_x: Vec<usize>,
    order_y: Vec<usize>,
    cursor: usize,
    epoch: usize,
}

impl<'a, T: Scalar> BatchLoader<'a, T> {
    pub fn new(
        x: &'a [Vec<T>],
        y: &'a [Vec<T>],
        height: usize,
        width: usize,
        batch_size: usize,
        pairing: Pairing,
        seed: u64,
    ) -> Result<Self, DatasetError> {
        if x.is_empty() || y.is_empty() {
            return Err(DatasetError::Empty("batch loader".into()));
        }
        if pairing == Pairing::Paired && x.len() != y.len() {
            return Err(DatasetError::Empty(format!(
                "paired sets differ in length ({} vs {})",
                x.len(),
                y.len()
            )));
        }
        let mut loader = Self {
            x,
            y,
            height,
            width,
            batch_size: batch_size.max(1),
            pairing,
            rng: ChaCha8Rng::seed_from_u64(seed),
            order_x: Vec::new(),
            order_y: Vec::new(),
            cursor: 0,
            epoch: 0,
        };
        loader.reshuffle();
        Ok(loader)
    }

    fn reshuffle(&mut self) {
        self.order_x = (0..self.x.len()).collect();
        self.order_x.shuffle(&mut self.rng);
        match self.pairing {
            Pairing::Paired => self.order_y = self.order_x.clone(),
            Pairing::Unpaired => {
                self.order_y = (0..self.y.len()).collect();
                self.order_y.shuffle(&mut self.rng);
            }
        }
        self.cursor = 0;
    }

    pub fn epoch_len(&self) -> usize {
        self.x.len().max(self.y.len())
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Next `(x indices, y indices)` without materializing tensors.
    pub fn next_indices(&mut self) -> (Vec<usize>, Vec<usize>) {
        let mut xi = Vec::with_capacity(self.batch_size);
        let mut yi = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            if self.cursor >= self.epoch_len() {
                self.epoch += 1;
                self.reshuffle();
            }
            xi.push(self.order_x[self.cursor % self.order_x.len()]);
            yi.push(self.order_y[self.cursor % self.order_y.len()]);
            self.cursor += 1;
        }
        (xi, yi)
    }
}

impl<T: Scalar> Iterator for BatchLoader<'_, T> {
    type Item = (Tensor<T>, Tensor<T>);

    fn next(&mut self) -> Option<Self::Item> {
        let (xi, yi) = self.next_indices();
        let xs: Vec<&[T]> = xi.iter().map(|&i| self.x[i].as_slice()).collect();
        let ys: Vec<&[T]> = yi.iter().map(|&i| self.y[i].as_slice()).collect();
        Some((
            stack_images(&xs, 1, self.height, self.width),
            stack_images(&ys, 1, self.height, self.width),
        ))
    }
}

/// Chunk images of a store in `[-1, 1]`, in store order.
pub fn load_images<T: Scalar>(
    store: &ChunkStore,
    domain: Domain,
    split: Option<Split>,
) -> Result<Vec<Vec<T>>, DatasetError> {
    let chunks = store.load_all(domain, split)?;
    if chunks.is_empty() {
        return Err(DatasetError::Empty(format!("{domain} chunks")));
    }
    Ok(chunks.iter().map(|c| c.image.to_unit_range()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(rows: usize, cols: usize) -> LevelImage {
        LevelImage::new(rows, cols, (0..rows * cols).map(|i| (i * 7 % 256) as u8).collect())
    }

    #[test]
    fn chunk_counts() {
        for (t, n) in [(256, 1), (461, 1), (462, 2), (2557, 12)] {
            assert_eq!(chunk_offsets(t, 256, 50).unwrap().len(), n, "T = {t}");
        }
        assert_eq!(chunk_offsets(462, 256, 50).unwrap(), vec![0, 206]);
        assert!(matches!(chunk_offsets(255, 256, 50), Err(DatasetError::TooShort { .. })));
    }

    #[test]
    fn assemble_single_chunk_is_identity() {
        let img = ramp(4, 10);
        let chunks = chunk(&img, 10, 3, "s", Domain::Bass).unwrap();
        assert_eq!(assemble(&chunks, 3).unwrap(), img);
    }

    #[test]
    fn assemble_inverts_chunking_on_covered_frames() {
        let img = ramp(5, 40);
        let chunks = chunk(&img, 12, 4, "s", Domain::Drums).unwrap();
        let back = assemble(&chunks, 4).unwrap();
        let covered = back.cols();
        assert_eq!(back, img.column_window(0, covered));
    }

    #[test]
    fn assemble_rejects_gaps_and_duplicates() {
        let img = ramp(2, 40);
        let mut chunks = chunk(&img, 12, 4, "s", Domain::Bass).unwrap();
        let dup = vec![chunks[0].clone(), chunks[0].clone()];
        assert!(matches!(assemble(&dup, 4), Err(DatasetError::NotContiguous(_))));
        chunks.remove(1);
        assert!(matches!(assemble(&chunks, 4), Err(DatasetError::NotContiguous(_))));
    }

    #[test]
    fn crossfade_blends_differing_overlaps() {
        let a = LevelImage::new(1, 4, vec![0, 0, 0, 0]);
        let b = LevelImage::new(1, 4, vec![200, 200, 200, 200]);
        let chunks = vec![
            Chunk { image: a, song_id: "s".into(), offset: 0, domain: Domain::Drums },
            Chunk { image: b, song_id: "s".into(), offset: 2, domain: Domain::Drums },
        ];
        let out = assemble(&chunks, 2).unwrap();
        // overlap columns 2, 3 get weights 1/3, 2/3 of the second chunk
        assert_eq!(out.levels(), &[0, 0, 67, 133, 200, 200]);
    }

    #[test]
    fn pgm_round_trip() {
        let img = ramp(3, 5);
        let bytes = img.to_pgm();
        assert!(bytes.starts_with(b"P5\n5 3\n255\n"));
        assert_eq!(LevelImage::from_pgm(&bytes).unwrap(), img);
        assert!(LevelImage::from_pgm(b"P2\n1 1\n255\n\x00").is_err());
    }

    #[test]
    fn unit_scaling_endpoints_and_bijection() {
        assert_eq!(level_to_unit::<f64>(0), -1.0);
        assert_eq!(level_to_unit::<f64>(255), 1.0);
        for v in 0..=255u8 {
            assert_eq!(unit_to_level(level_to_unit::<f32>(v)), v);
        }
        assert_eq!(unit_to_level(3.0f32), 255);
        assert_eq!(unit_to_level(-3.0f32), 0);
    }

    #[test]
    fn paired_loader_keeps_pairs_and_is_seeded() {
        let x: Vec<Vec<f32>> = (0..5).map(|i| vec![i as f32; 4]).collect();
        let y: Vec<Vec<f32>> = (0..5).map(|i| vec![10.0 + i as f32; 4]).collect();
        let mut a = BatchLoader::new(&x, &y, 2, 2, 1, Pairing::Paired, 9).unwrap();
        let mut b = BatchLoader::new(&x, &y, 2, 2, 1, Pairing::Paired, 9).unwrap();
        for _ in 0..12 {
            let (xa, ya) = a.next().unwrap();
            let (xb, yb) = b.next().unwrap();
            assert_eq!(xa.to_vec(), xb.to_vec());
            assert_eq!(ya.to_vec()[0], xa.to_vec()[0] + 10.0);
            assert_eq!(ya.to_vec(), yb.to_vec());
        }
        assert!(BatchLoader::<f32>::new(&[], &y, 2, 2, 1, Pairing::Unpaired, 0).is_err());
    }

    #[test]
    fn manifest_tsv_round_trip() {
        let m = DatasetManifest {
            entries: vec![ManifestEntry {
                song_id: "a".into(),
                bass: "a/bass.wav".into(),
                drums: "a/drums.wav".into(),
                split: Split::Test,
            }],
            skipped: vec![],
        };
        assert_eq!(DatasetManifest::from_tsv(&m.to_tsv()).unwrap(), m);
        assert!(DatasetManifest::from_tsv("a\tb\tc\ttrain\na\tb\tc\ttest\n").is_err());
    }
}
