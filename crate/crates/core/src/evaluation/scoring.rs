use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;

use super::embed::Embed;
use super::features::stoi_features;
use super::gaussian::{fit_gaussian, gaussian_log_density, GaussianModel};
use super::grades::{pearson, GradeBucket};
use super::logistic::LogisticModel;
use super::EvalError;
use crate::dataset::Chunk;
use crate::matrix::Matrix;

/// Chunk levels as a matrix in `[-1, 1]`.
pub fn chunk_matrix(chunk: &Chunk) -> Matrix {
    Matrix::from_vec(chunk.image.rows(), chunk.image.cols(), chunk.image.to_unit_range())
}

/// Gaussian over the embeddings of real chunks.
pub fn fit_reference(embedder: &dyn Embed, chunks: &[Chunk]) -> Result<GaussianModel, EvalError> {
    let e: Vec<Vec<f64>> = chunks.iter().map(|c| embedder.embed(c)).collect::<Result<_, _>>()?;
    fit_gaussian(&e)
}

/// STOI-like row scores followed by the log-density of the generated chunk's embedding.
pub fn pair_features(
    original: &Chunk,
    generated: &Chunk,
    embedder: &dyn Embed,
    reference: &GaussianModel,
) -> Result<Vec<f64>, EvalError> {
    let mut f = stoi_features(&chunk_matrix(original), &chunk_matrix(generated))?.values;
    f.push(gaussian_log_density(&embedder.embed(generated)?, reference)?);
    Ok(f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleScore {
    pub song_id: String,
    pub offset: usize,
    pub stoi: Vec<f64>,
    pub density: f64,
    pub bucket: GradeBucket,
}

impl SampleScore {
    pub fn to_json(&self) -> String {
        let stoi: Vec<String> = self.stoi.iter().map(|v| v.to_string()).collect();
        format!(
            "{{\"song_id\":\"{}\",\"offset\":{},\"stoi\":[{}],\"density\":{},\"bucket\":\"{}\"}}",
            self.song_id.replace('\\', "\\\\").replace('"', "\\\""),
            self.offset,
            stoi.join(","),
            self.density,
            self.bucket
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub rows: Vec<SampleScore>,
    /// Counts per bucket, in [`GradeBucket::ALL`] order.
    pub histogram: [usize; 4],
}

impl ScoreTable {
    pub fn to_ndjson(&self) -> String {
        self.rows.iter().map(|r| r.to_json() + "\n").collect()
    }

    pub fn histogram_text(&self) -> String {
        GradeBucket::ALL
            .iter()
            .zip(self.histogram)
            .map(|(b, n)| format!("{b}\t{n}\n"))
            .collect()
    }
}

/// Features and predicted bucket for every aligned (original, generated) pair.
pub fn score_samples(
    pairs: &[(Chunk, Chunk)],
    embedder: &dyn Embed,
    reference: &GaussianModel,
    model: &LogisticModel,
) -> Result<ScoreTable, EvalError> {
    score_samples_threaded(pairs, embedder, reference, model, 1)
}

/// [`score_samples`] with the STOI-like features spread over `threads` workers.
/// The result does not depend on the thread count.
pub fn score_samples_threaded(
    pairs: &[(Chunk, Chunk)],
    embedder: &dyn Embed,
    reference: &GaussianModel,
    model: &LogisticModel,
    threads: usize,
) -> Result<ScoreTable, EvalError> {
    if !model.fitted {
        return Err(EvalError::Unfitted);
    }
    let features = pair_features_threaded(pairs, embedder, reference, threads)?;
    let mut table = ScoreTable::default();
    for ((_, gen), mut f) in pairs.iter().zip(features) {
        let bucket = model.predict_one(&f)?;
        let density = f.pop().expect("density feature present");
        table.histogram[bucket.index()] += 1;
        table.rows.push(SampleScore {
            song_id: gen.song_id.clone(),
            offset: gen.offset,
            stoi: f,
            density,
            bucket,
        });
    }
    Ok(table)
}

/// [`pair_features`] for many pairs; embeddings stay on the calling thread.
pub fn pair_features_threaded(
    pairs: &[(Chunk, Chunk)],
    embedder: &dyn Embed,
    reference: &GaussianModel,
    threads: usize,
) -> Result<Vec<Vec<f64>>, EvalError> {
    let stoi = |batch: &[(Chunk, Chunk)]| -> Result<Vec<Vec<f64>>, EvalError> {
        batch
            .iter()
            .map(|(o, g)| Ok(stoi_features(&chunk_matrix(o), &chunk_matrix(g))?.values))
            .collect()
    };
    let per = pairs.len().div_ceil(threads.max(1)).max(1);
    let rows: Vec<Vec<f64>> = if threads <= 1 || pairs.len() <= 1 {
        stoi(pairs)?
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = pairs.chunks(per).map(|b| scope.spawn(move || stoi(b))).collect();
            let mut all = Vec::with_capacity(pairs.len());
            for h in handles {
                all.extend(h.join().expect("feature worker panicked")?);
            }
            Ok::<_, EvalError>(all)
        })?
    };
    rows.into_iter()
        .zip(pairs)
        .map(|(mut f, (_, g))| {
            f.push(gaussian_log_density(&embedder.embed(g)?, reference)?);
            Ok(f)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Quality,
    Contamination,
    Credibility,
    Time,
}

/// One rater's grades for one sample, each on the 0-9 scale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub sample_id: String,
    pub rater_id: String,
    pub quality: u8,
    pub contamination: u8,
    pub credibility: u8,
    pub time: u8,
}

impl Annotation {
    pub fn grade(&self, c: Criterion) -> u8 {
        match c {
            Criterion::Quality => self.quality,
            Criterion::Contamination => self.contamination,
            Criterion::Credibility => self.credibility,
            Criterion::Time => self.time,
        }
    }
}

/// Whitespace-separated `sample rater quality contamination credibility time` lines.
pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| EvalError::Parse { line: i + 1, reason };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, got {}", f.len())));
        }
        let grade = |s: &str| -> Result<u8, EvalError> {
            match s.parse::<u8>() {
                Ok(g) if g <= 9 => Ok(g),
                _ => Err(bad(format!("grade `{s}` not an integer in 0..=9"))),
            }
        };
        out.push(Annotation {
            sample_id: f[0].to_owned(),
            rater_id: f[1].to_owned(),
            quality: grade(f[2])?,
            contamination: grade(f[3])?,
            credibility: grade(f[4])?,
            time: grade(f[5])?,
        });
    }
    Ok(out)
}

/// Mean grade per sample over raters.
pub fn mean_grades(annotations: &[Annotation], c: Criterion) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for a in annotations {
        let e = acc.entry(a.sample_id.clone()).or_default();
        e.0 += a.grade(c) as f64;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Pairwise Pearson correlations between raters over the samples both graded.
pub fn rater_correlations(
    annotations: &[Annotation],
    c: Criterion,
) -> Result<(Vec<String>, DMatrix<f64>), EvalError> {
    let mut by_rater: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for a in annotations {
        by_rater
            .entry(&a.rater_id)
            .or_default()
            .insert(&a.sample_id, a.grade(c) as f64);
    }
    let raters: Vec<&str> = by_rater.keys().copied().collect();
    let k = raters.len();
    let mut m = DMatrix::identity(k, k);
    for i in 0..k {
        for j in i + 1..k {
            let (a, b) = (&by_rater[raters[i]], &by_rater[raters[j]]);
            let shared: BTreeSet<&str> = a.keys().filter(|s| b.contains_key(*s)).copied().collect();
            let va: Vec<f64> = shared.iter().map(|s| a[s]).collect();
            let vb: Vec<f64> = shared.iter().map(|s| b[s]).collect();
            let r = pearson(&va, &vb)?;
            m[(i, j)] = r;
            m[(j, i)] = r;
        }
    }
    Ok((raters.into_iter().map(str::to_owned).collect(), m))
}
