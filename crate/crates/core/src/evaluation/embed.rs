use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::EvalError;
use crate::autograd::Tensor;
use crate::dataset::Chunk;
use crate::models::{CycleTrainState, Discriminator};

/// Maps a chunk to a fixed-length embedding vector.
pub trait Embed {
    fn dim(&self) -> usize;
    fn embed(&self, chunk: &Chunk) -> Result<Vec<f64>, EvalError>;
}

/// Spatially mean-pooled hidden activations of a trained critic.
#[derive(Debug, Clone)]
pub struct Embedder {
    critic: Discriminator<f32>,
    layers: Vec<usize>,
    dim: usize,
}

impl Embedder {
    /// `layers` index the critic's hidden activations; their pooled channels are concatenated.
    pub fn new(critic: Discriminator<f32>, layers: Vec<usize>, steps_trained: u64) -> Result<Self, EvalError> {
        if steps_trained == 0 {
            return Err(EvalError::Untrained);
        }
        let cfg = critic.config;
        let hidden = cfg.n_layers + 1;
        let width = |i: usize| cfg.base_channels * (1 << i.min(3));
        if layers.is_empty() || layers.iter().any(|&l| l >= hidden) {
            return Err(EvalError::ShapeMismatch(format!(
                "embedding layers {layers:?} outside 0..{hidden}"
            )));
        }
        let dim = layers.iter().map(|&l| width(l)).sum();
        Ok(Self { critic, layers, dim })
    }

    /// Default embedder: the drum-domain critic at its last strided block.
    pub fn from_cyclegan(state: &CycleTrainState<f32>) -> Result<Self, EvalError> {
        let critic = state.model.d_y.clone();
        let layer = critic.config.n_layers - 1;
        Self::new(critic, vec![layer], state.step)
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }
}

impl Embed for Embedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, chunk: &Chunk) -> Result<Vec<f64>, EvalError> {
        let size = self.critic.config.image_size;
        let (rows, cols) = (chunk.image.rows(), chunk.image.cols());
        if rows != size || cols != size {
            return Err(EvalError::ShapeMismatch(format!("chunk {rows}×{cols}, embedder expects {size}×{size}")));
        }
        let x = Tensor::from_vec(&[1, 1, rows, cols], chunk.image.to_unit_range::<f32>())
            .map_err(|e| EvalError::ShapeMismatch(e.to_string()))?;
        let acts = self.critic.features(&x).map_err(|e| EvalError::ShapeMismatch(e.to_string()))?;
        let mut out = Vec::with_capacity(self.dim);
        for &l in &self.layers {
            let a = &acts[l];
            let s = a.shape();
            let hw = s[2] * s[3];
            let data = a.data();
            for c in 0..s[1] {
                let sum: f64 = data[c * hw..(c + 1) * hw].iter().map(|&v| v as f64).sum();
                out.push(sum / hw as f64);
            }
        }
        Ok(out)
    }
}

/// Precomputed embeddings keyed by chunk file name.
///
/// File format: one line per chunk, `<file name><TAB><space-separated values>`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalEmbeddings {
    table: HashMap<String, Vec<f64>>,
    dim: usize,
}

impl ExternalEmbeddings {
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut table = HashMap::new();
        let mut dim = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |reason: String| EvalError::Parse { line: i + 1, reason };
            let (key, values) = line.split_once('\t').ok_or_else(|| bad("missing tab".into()))?;
            let v: Vec<f64> = values
                .split_whitespace()
                .map(|t| t.parse().map_err(|e| bad(format!("`{t}`: {e}"))))
                .collect::<Result<_, _>>()?;
            if *dim.get_or_insert(v.len()) != v.len() || v.is_empty() {
                return Err(bad("inconsistent embedding length".into()));
            }
            table.insert(key.to_owned(), v);
        }
        Ok(Self { table, dim: dim.unwrap_or(0) })
    }

    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_owned(), source })?;
        Self::parse(&text)
    }
}

impl Embed for ExternalEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, chunk: &Chunk) -> Result<Vec<f64>, EvalError> {
        let key = chunk.file_name();
        self.table
            .get(&key)
            .cloned()
            .ok_or(EvalError::MissingEmbedding(key))
    }
}
