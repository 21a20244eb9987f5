//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test -p arranger-core --test acceptance -- 4 5`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use arranger_core::audio_io::Waveform;
use arranger_core::autograd::Tensor;
use arranger_core::dataset::{assemble, chunk, chunk_offsets, Chunk, Domain, FeatureConfig, LevelImage, Split};
use arranger_core::diagnostics::{gradient_suite, GRADCHECK_TOLERANCE};
use arranger_core::evaluation::{
    chunk_matrix, fid, fit_gaussian, fit_logistic, pair_features, stoi_features, Embed, EvalError, GaussianModel,
    GradeBucket,
};
use arranger_core::inversion::{griffin_lim, istft, mel_to_linear, spectral_convergence, InversionConfig};
use arranger_core::models::{train_cyclegan, train_pix2pix, CycleConfig, LossRecord, Network, Pix2PixConfig, RunOutput};
use arranger_core::pipeline::{self, EvaluateInputs, RunConfig};
use arranger_core::spectral::{mel_project, power, stft, stft_samples, StftParams};
use arranger_core::synth;
use arranger_core::Matrix;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let reports = match gradient_suite(0, None) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("suite error: {e}")),
    };
    let elapsed = start.elapsed();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failing: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed(GRADCHECK_TOLERANCE))
        .map(|r| r.name.as_str())
        .collect();
    let has_nets = ["desk_generator", "desk_discriminator"]
        .iter()
        .all(|n| reports.iter().any(|r| r.name == *n));
    Outcome::new(
        failing.is_empty() && has_nets && elapsed < Duration::from_secs(120),
        format!(
            "{} checks, worst relative error {worst:.2e}, failing {failing:?}, {}",
            reports.len(),
            secs(elapsed)
        ),
    )
}

fn spectral_round_trip() -> Outcome {
    let params = StftParams::default();
    let (n, h) = (params.window_len, params.hop);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let x: Vec<f64> = (0..2 * 22050).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = stft_samples(&x, 22050, params).unwrap();
        let y = istft(&spec).unwrap().samples;
        let interior = n - h..spec.n_frames * h;
        let num: f64 = interior.clone().map(|i| (x[i] - y[i]).powi(2)).sum::<f64>().sqrt();
        let den: f64 = interior.map(|i| x[i] * x[i]).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    let mut frame_mismatch = 0;
    for _ in 0..100 {
        let len = rng.gen_range(n..n + 40 * h);
        let spec = stft_samples(&vec![0.0; len], 22050, params).unwrap();
        let m = (len - n) / h;
        if spec.n_frames != m + 1 || params.frame_count(len) != Some(m + 1) {
            frame_mismatch += 1;
        }
    }
    Outcome::new(
        worst < 1e-6 && frame_mismatch == 0,
        format!("worst relative error {worst:.2e}; frame-count mismatches {frame_mismatch}/100"),
    )
}

fn inversion_fidelity() -> Outcome {
    let cfg = FeatureConfig::default();
    let fb = cfg.filterbank().unwrap();
    let sr = cfg.sample_rate as f64;
    let start = Instant::now();
    let x: Vec<f64> = (0..2 * 22050)
        .map(|i| {
            let t = i as f64 / sr;
            [(220.0, 0.3), (347.0, 0.2), (513.0, 0.1)]
                .iter()
                .map(|(f, a)| a * (std::f64::consts::TAU * f * t).sin())
                .sum()
        })
        .collect();
    let wave = Waveform::mono(x, cfg.sample_rate);
    let spec = stft(&wave, cfg.stft_params()).unwrap();
    let mel = mel_project(&power(&spec), &fb).unwrap();
    let inv = InversionConfig::default();
    let estimate = mel_to_linear(&mel.values, &fb, &inv).unwrap();
    let residual = estimate.residual();
    let amplitude = arranger_core::spectral::MagnitudeSpectrogram {
        values: estimate.power.map(f64::sqrt),
        params: cfg.stft_params(),
        sample_rate: cfg.sample_rate,
    };
    let gl = griffin_lim(&amplitude, &inv).unwrap();
    let rebuilt = stft(&gl.waveform, cfg.stft_params()).unwrap();
    let sc = spectral_convergence(&rebuilt, &amplitude.values);
    let sc_true = spectral_convergence(&rebuilt, &spec.magnitude().values);
    let elapsed = start.elapsed();
    Outcome::new(
        sc < 0.1 && residual < 1e-3 && elapsed < Duration::from_secs(60),
        format!(
            "spectral convergence {sc:.4} (vs true magnitude {sc_true:.4}), mel residual {residual:.2e}, {}",
            secs(elapsed)
        ),
    )
}

fn fid_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut worst_self = 0.0f64;
    for _ in 0..50 {
        let d = rng.gen_range(2..=16);
        let mu_r = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
        let mu_g = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
        let dmu = (&mu_r - &mu_g).norm_squared();

        let eye = GaussianModel::new(mu_r.clone(), DMatrix::identity(d, d)).unwrap();
        let eye_g = GaussianModel::new(mu_g.clone(), DMatrix::identity(d, d)).unwrap();
        worst = worst.max((fid(&eye, &eye_g).unwrap() - dmu).abs());

        let a: Vec<f64> = (0..d).map(|_| rng.gen_range(0.1..4.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.gen_range(0.1..4.0)).collect();
        let diag_r = GaussianModel::new(mu_r.clone(), DMatrix::from_diagonal(&DVector::from_vec(a.clone()))).unwrap();
        let diag_g = GaussianModel::new(mu_g, DMatrix::from_diagonal(&DVector::from_vec(b.clone()))).unwrap();
        let closed = dmu + a.iter().zip(&b).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum::<f64>();
        worst = worst.max((fid(&diag_r, &diag_g).unwrap() - closed).abs());

        let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let spd = &m * m.transpose() + DMatrix::identity(d, d) * 0.1;
        let full = GaussianModel::new(mu_r, spd).unwrap();
        worst_self = worst_self.max(fid(&full, &full).unwrap());
    }
    Outcome::new(
        worst < 1e-8 && worst_self <= 1e-8,
        format!("worst closed-form gap {worst:.2e}; worst fid(r, r) {worst_self:.2e}"),
    )
}

fn naive_stoi(x: &Matrix, y: &Matrix) -> Vec<f64> {
    let (rows, cols) = x.shape();
    let mut out = vec![0.0; rows];
    for (i, o) in out.iter_mut().enumerate() {
        for t in 0..cols {
            let mut xm = 0.0;
            let mut ym = 0.0;
            for r in 0..rows {
                xm += x.get(r, t);
                ym += y.get(r, t);
            }
            xm /= rows as f64;
            ym /= rows as f64;
            *o += (x.get(i, t) - xm) * (y.get(i, t) - ym);
        }
    }
    out
}

fn stoi_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut negative_self = 0;
    for k in 0..100 {
        let (r, c) = (rng.gen_range(1..=12), rng.gen_range(1..=12));
        let x = Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
        let y = if k % 4 == 0 {
            x.clone()
        } else {
            Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
        };
        let fast = stoi_features(&x, &y).unwrap().values;
        for (a, b) in fast.iter().zip(naive_stoi(&x, &y)) {
            worst = worst.max((a - b).abs());
        }
        if k % 4 == 0 && fast.iter().any(|&v| v < 0.0) {
            negative_self += 1;
        }
    }
    Outcome::new(
        worst <= 1e-10 && negative_self == 0,
        format!("worst gap {worst:.2e}; negative X=Y cases {negative_self}"),
    )
}

fn cycle_sum(r: &LossRecord) -> f64 {
    r.get("cycle_X").unwrap() + r.get("cycle_Y").unwrap()
}

fn cyclegan_stripes() -> Outcome {
    let config = CycleConfig::desk();
    let size = config.generator.image_size;
    let x = synth::stripes(200, size, true, 61);
    let y = synth::stripes(200, size, false, 62);
    let start = Instant::now();
    let (_, log) = match train_cyclegan(&x, &y, config, 2000, 6, &RunOutput::default()) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("training error: {e}")),
    };
    let elapsed = start.elapsed();
    let at_10 = cycle_sum(&log[9]);
    let tail = &log[log.len() - 100..];
    let end = tail.iter().map(cycle_sum).sum::<f64>() / tail.len() as f64;
    let ratio = end / at_10;
    Outcome::new(
        ratio < 0.2 && elapsed < Duration::from_secs(1800),
        format!(
            "cycle loss {at_10:.4} at step 10, {end:.4} mean over steps 1901-2000 ({:.1}%), {}",
            100.0 * ratio,
            secs(elapsed)
        ),
    )
}

fn pix2pix_identity() -> Outcome {
    let config = Pix2PixConfig::desk();
    let size = config.generator.image_size;
    let mut x = synth::stripes(100, size, true, 71);
    x.extend(synth::stripes(100, size, false, 72));
    let start = Instant::now();
    let (state, _) = match train_pix2pix(&x, &x, config, 2000, 7, &RunOutput::default()) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("training error: {e}")),
    };
    let mut held = synth::stripes(25, size, true, 73);
    held.extend(synth::stripes(25, size, false, 74));
    let mut total = 0.0;
    for img in &held {
        let t = Tensor::from_vec(&[1, 1, size, size], img.clone()).unwrap();
        let out = state.g.forward(&t).unwrap().to_vec();
        total += out.iter().zip(img).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / img.len() as f64;
    }
    let l1 = total / held.len() as f64;
    Outcome::new(
        l1 < 0.05,
        format!("held-out l1(G(x), x) = {l1:.4} after 2000 steps, {}", secs(start.elapsed())),
    )
}

/// Mean levels over an 8×8 grid of blocks.
struct BlockMeans;

impl Embed for BlockMeans {
    fn dim(&self) -> usize {
        64
    }

    fn embed(&self, chunk: &Chunk) -> Result<Vec<f64>, EvalError> {
        let m = chunk_matrix(chunk);
        let (rows, cols) = m.shape();
        let (bh, bw) = (rows / 8, cols / 8);
        let mut out = vec![0.0; 64];
        for r in 0..bh * 8 {
            for c in 0..bw * 8 {
                out[(r / bh) * 8 + c / bw] += m.get(r, c) / (bh * bw) as f64;
            }
        }
        Ok(out)
    }
}

/// Spectrogram-like 256×256 chunk: row gains times column envelopes plus noise.
fn synthetic_chunk(rng: &mut ChaCha8Rng, i: usize) -> Chunk {
    let n = 256;
    let rows: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let cols: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let levels = (0..n * n)
        .map(|k| {
            let v = 200.0 * rows[k / n] * cols[k % n] + rng.gen_range(0.0..40.0);
            v.clamp(0.0, 255.0) as u8
        })
        .collect();
    Chunk {
        image: LevelImage::new(n, n, levels),
        song_id: format!("s{i}"),
        offset: 0,
        domain: Domain::Drums,
    }
}

fn labelled_pairs(rng: &mut ChaCha8Rng, n: usize, base: usize) -> (Vec<(Chunk, Chunk)>, Vec<GradeBucket>) {
    let chunks: Vec<Chunk> = (0..n).map(|i| synthetic_chunk(rng, base + i)).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    while perm.iter().enumerate().any(|(i, &p)| i == p) {
        perm.shuffle(rng);
    }
    let mut pairs = Vec::new();
    let mut labels = Vec::new();
    for (i, c) in chunks.iter().enumerate() {
        pairs.push((c.clone(), c.clone()));
        labels.push(GradeBucket::B8_9);
        pairs.push((c.clone(), chunks[perm[i]].clone()));
        labels.push(GradeBucket::B0_3);
    }
    (pairs, labels)
}

fn classifier_self_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (train, train_labels) = labelled_pairs(&mut rng, 200, 0);
    let (test, test_labels) = labelled_pairs(&mut rng, 100, 1000);
    let reference_chunks: Vec<Chunk> = train.iter().step_by(2).map(|(c, _)| c.clone()).collect();
    let embeddings: Vec<Vec<f64>> = reference_chunks.iter().map(|c| BlockMeans.embed(c).unwrap()).collect();
    let reference = fit_gaussian(&embeddings).unwrap();
    let features = |pairs: &[(Chunk, Chunk)]| -> Vec<Vec<f64>> {
        pairs
            .iter()
            .map(|(o, g)| pair_features(o, g, &BlockMeans, &reference).unwrap())
            .collect()
    };
    let model = match fit_logistic(&features(&train), &train_labels, 1e-3) {
        Ok(m) => m,
        Err(e) => return Outcome::new(false, format!("fit error: {e}")),
    };
    let predicted = model.predict(&features(&test)).unwrap();
    let correct = predicted.iter().zip(&test_labels).filter(|(p, t)| p == t).count();
    let acc = correct as f64 / test_labels.len() as f64;
    Outcome::new(
        acc >= 0.9,
        format!(
            "held-out accuracy {:.1}% ({correct}/{}), {} iterations",
            100.0 * acc,
            test_labels.len(),
            model.iterations
        ),
    )
}

fn chunking_arithmetic() -> Outcome {
    let counts: Vec<usize> = [256, 461, 462, 2557]
        .iter()
        .map(|&t| chunk_offsets(t, 256, 50).unwrap().len())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mismatches = 0;
    for _ in 0..20 {
        let cols = rng.gen_range(256..1500);
        let rows = rng.gen_range(1..20);
        let img = LevelImage::new(rows, cols, (0..rows * cols).map(|_| rng.gen()).collect());
        let chunks = chunk(&img, 256, 50, "song", Domain::Bass).unwrap();
        let back = assemble(&chunks, 50).unwrap();
        let covered = back.cols();
        let seams: Vec<std::ops::Range<usize>> = chunks[1..].iter().map(|c| c.offset..c.offset + 50).collect();
        for r in 0..rows {
            for c in (0..covered).filter(|c| !seams.iter().any(|s| s.contains(c))) {
                if back.get(r, c) != img.get(r, c) {
                    mismatches += 1;
                }
            }
        }
    }
    Outcome::new(
        counts == [1, 1, 2, 12] && mismatches == 0,
        format!("chunk counts {counts:?}; {mismatches} mismatched levels outside crossfades"),
    )
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_owned()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_owned(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn desk_pipeline(dir: &Path) -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::default();
    cfg.train_songs = 3;
    cfg.seed = 10;
    cfg.gl_iters = 10;
    cfg.mel_iters = 50;
    synth::write_song_dataset(&dir.join("songs"), 4, 4.0, 10)?;
    pipeline::ingest(&cfg, &dir.join("songs"), &dir.join("manifest.tsv"))?;
    pipeline::build_chunks(&cfg, &dir.join("manifest.tsv"), &dir.join("out/store"))?;
    pipeline::train_cyclegan(&cfg, &dir.join("out/store"), &dir.join("out/cyclegan"), None)?;
    let ckpt = dir.join("out/cyclegan/final.ckpt");
    pipeline::translate_store(&cfg, &ckpt, &dir.join("out/store"), Split::Test, &dir.join("out/generated"))?;
    pipeline::translate_wav(
        &cfg,
        &ckpt,
        &dir.join("songs/song_03/bass.wav"),
        &dir.join("out/song_03.drums.wav"),
        Some(&dir.join("out/intermediates")),
    )?;
    let inputs = EvaluateInputs {
        store: &dir.join("out/store"),
        generated: &dir.join("out/generated"),
        checkpoint: Some(&ckpt),
        embeddings: None,
        annotations: None,
        split: Split::Test,
        threads: 1,
    };
    pipeline::evaluate(&cfg, &inputs, &dir.join("out/eval"))?;
    Ok(())
}

fn end_to_end_determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let start = Instant::now();
    for d in [a.path(), b.path()] {
        if let Err(e) = desk_pipeline(d) {
            return Outcome::new(false, format!("pipeline error: {e}"));
        }
    }
    let (ta, tb) = (tree(&a.path().join("out")), tree(&b.path().join("out")));
    let differing: Vec<String> = ta
        .iter()
        .zip(&tb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    let has = |name: &str| ta.iter().any(|(p, _)| p.ends_with(name));
    let complete = has("final.ckpt") && has("chunks.tsv") && has("scores.ndjson");
    Outcome::new(
        ta.len() == tb.len() && differing.is_empty() && complete,
        format!(
            "{} artifacts per run (checkpoints, chunk stores, score tables, audio); differing {differing:?}; {}",
            ta.len(),
            secs(start.elapsed())
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", gradient_correctness),
        ("spectral round trip", spectral_round_trip),
        ("inversion fidelity", inversion_fidelity),
        ("FID oracle equivalence", fid_oracles),
        ("STOI-like feature oracle", stoi_oracle),
        ("desk CycleGAN on stripes", cyclegan_stripes),
        ("desk Pix2Pix identity", pix2pix_identity),
        ("classifier self-consistency", classifier_self_consistency),
        ("chunking arithmetic", chunking_arithmetic),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let outcome = run();
        failed += usize::from(!outcome.pass);
        println!(
            "{} criterion {n:>2} {name}: {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
