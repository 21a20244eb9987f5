//! Mel-spectrogram to waveform: projected-gradient mel→linear inversion,
//! overlap-add ISTFT and Griffin-Lim phase reconstruction.

use realfft::num_complex::Complex64;
use realfft::RealFftPlanner;
use thiserror::Error;

use crate::audio_io::Waveform;
use crate::dataset::{self, Chunk, DatasetError};
use crate::matrix::Matrix;
use crate::spectral::{
    self, ComplexSpectrogram, FilterBank, MagnitudeSpectrogram, MelSpectrogram, SpectralError,
    StftParams,
};

#[derive(Debug, Error)]
pub enum InversionError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mel inversion diverged at iteration {iteration} (step size {step_size})")]
    NonFinite { iteration: usize, step_size: f64 },
    #[error("overlap-add normalization vanishes inside the signal: window/hop pair is not COLA")]
    ColaViolated,
    #[error("no chunks to invert")]
    NoChunks,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionConfig {
    pub max_iters: usize,
    /// First trial step of the mel inversion; the fixed step when line search is off.
    pub step_size: f64,
    /// Stop once the relative residual improves by less than this fraction.
    pub tol: f64,
    pub gl_iters: usize,
    pub line_search: bool,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            step_size: 1.0,
            tol: 1e-5,
            gl_iters: 60,
            line_search: true,
        }
    }
}

/// Result of [`mel_to_linear`].
#[derive(Debug, Clone)]
pub struct LinearEstimate {
    /// Estimated power spectrogram, `(K + 1) x frames`, elementwise nonnegative.
    pub power: Matrix,
    /// `‖Mel − fb·Ŷ‖_F / ‖Mel‖_F` after each iterate, starting with the initial guess.
    pub residual_history: Vec<f64>,
    pub iterations: usize,
}

impl LinearEstimate {
    pub fn residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&0.0)
    }
}

/// Row supports of a filterbank, so products touch only nonzero weights.
struct SparseRows {
    rows: Vec<(usize, Vec<f64>)>,
    n_bins: usize,
}

impl SparseRows {
    fn new(fb: &FilterBank) -> Self {
        let rows = (0..fb.n_mels())
            .map(|i| {
                let row = fb.weights.row(i);
                let first = row.iter().position(|&w| w != 0.0).unwrap_or(0);
                let last = row.iter().rposition(|&w| w != 0.0).map_or(0, |p| p + 1);
                (first, row[first..last.max(first)].to_vec())
            })
            .collect();
        Self {
            rows,
            n_bins: fb.n_bins(),
        }
    }

    /// `fb · y` for `y` with `n_bins` rows.
    fn apply(&self, y: &Matrix) -> Matrix {
        let cols = y.cols();
        let mut out = Matrix::zeros(self.rows.len(), cols);
        let ys = y.as_slice();
        let os = out.as_mut_slice();
        for (i, (start, weights)) in self.rows.iter().enumerate() {
            let dst = &mut os[i * cols..(i + 1) * cols];
            for (j, &w) in weights.iter().enumerate() {
                let src = &ys[(start + j) * cols..(start + j + 1) * cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        out
    }

    /// `fbᵀ · r` for `r` with `n_mels` rows.
    fn apply_transpose(&self, r: &Matrix) -> Matrix {
        let cols = r.cols();
        let mut out = Matrix::zeros(self.n_bins, cols);
        let rs = r.as_slice();
        let os = out.as_mut_slice();
        for (i, (start, weights)) in self.rows.iter().enumerate() {
            let src = &rs[i * cols..(i + 1) * cols];
            for (j, &w) in weights.iter().enumerate() {
                let dst = &mut os[(start + j) * cols..(start + j + 1) * cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        out
    }
}

fn dot(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

fn sub(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_vec(
        a.rows(),
        a.cols(),
        a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x - y).collect(),
    )
}

/// Recovers a nonnegative linear power spectrogram `Ŷ` minimizing `‖Mel − fb·Ŷ‖²_F`.
///
/// Projected gradient descent from `Ŷ₀ = fbᵀ·Mel`. With line search enabled the
/// trial step is a Barzilai-Borwein estimate, halved until the Armijo condition
/// holds, so the objective never increases.
pub fn mel_to_linear(
    mel: &Matrix,
    fb: &FilterBank,
    cfg: &InversionConfig,
) -> Result<LinearEstimate, InversionError> {
    if fb.n_mels() != mel.rows() {
        return Err(InversionError::ShapeMismatch(format!(
            "filterbank has {} mel bands, spectrogram has {}",
            fb.n_mels(),
            mel.rows()
        )));
    }
    let sparse = SparseRows::new(fb);
    let mel_norm = mel.frobenius_norm();
    let rel = |residual: &Matrix| {
        if mel_norm > 0.0 {
            residual.frobenius_norm() / mel_norm
        } else {
            residual.frobenius_norm()
        }
    };

    let mut y = sparse.apply_transpose(mel).map(|v| v.max(0.0));
    let mut residual = sub(&sparse.apply(&y), mel);
    let mut objective = dot(&residual, &residual);
    let mut grad = sparse.apply_transpose(&residual).map(|v| 2.0 * v);
    let mut history = vec![rel(&residual)];
    let mut step = cfg.step_size;
    let mut iterations = 0;

    for it in 0..cfg.max_iters.max(1) {
        if objective == 0.0 {
            break;
        }
        iterations = it + 1;
        let (next_y, next_residual, next_objective) = loop {
            let candidate = Matrix::from_vec(
                y.rows(),
                y.cols(),
                y.as_slice()
                    .iter()
                    .zip(grad.as_slice())
                    .map(|(v, g)| (v - step * g).max(0.0))
                    .collect(),
            );
            let r = sub(&sparse.apply(&candidate), mel);
            let obj = dot(&r, &r);
            if !obj.is_finite() {
                if cfg.line_search && step > 1e-300 {
                    step *= 0.5;
                    continue;
                }
                return Err(InversionError::NonFinite {
                    iteration: iterations,
                    step_size: step,
                });
            }
            if !cfg.line_search {
                break (candidate, r, obj);
            }
            let decrease = dot(&grad, &sub(&candidate, &y));
            if obj <= objective + 1e-4 * decrease || step < 1e-300 {
                break (candidate, r, obj);
            }
            step *= 0.5;
        };
        if next_objective > objective && cfg.line_search {
            // Step underflowed without progress: at a stationary point.
            break;
        }
        let next_grad = sparse.apply_transpose(&next_residual).map(|v| 2.0 * v);
        let s = sub(&next_y, &y);
        let g_diff = sub(&next_grad, &grad);
        let prev_rel = *history.last().unwrap();
        y = next_y;
        residual = next_residual;
        objective = next_objective;
        grad = next_grad;
        let current_rel = rel(&residual);
        history.push(current_rel);

        if cfg.line_search {
            let sy = dot(&s, &g_diff);
            step = if sy > 0.0 {
                (dot(&s, &s) / sy).clamp(1e-12, 1e12)
            } else {
                cfg.step_size
            };
        }
        if prev_rel > 0.0 && (prev_rel - current_rel) / prev_rel < cfg.tol {
            break;
        }
    }

    Ok(LinearEstimate {
        power: y,
        residual_history: history,
        iterations,
    })
}

/// Weighted overlap-add inverse STFT with the analysis window as synthesis window,
/// normalized by `Σ_m w²(n − mH)`.
///
/// Output length is `(frames − 1)·H + N`. Samples with no window support at the
/// signal edges are zero; a vanishing normalizer inside the fully overlapped
/// interior means the window/hop pair is not COLA and is reported as an error.
pub fn istft(spec: &ComplexSpectrogram) -> Result<Waveform, InversionError> {
    let params = spec.params;
    let n = params.window_len;
    let hop = params.hop;
    if spec.n_bins != n / 2 + 1 {
        return Err(InversionError::ShapeMismatch(format!(
            "{} bins for window length {n}",
            spec.n_bins
        )));
    }
    if spec.n_frames == 0 {
        return Ok(Waveform::mono(Vec::new(), spec.sample_rate));
    }
    let window = params.window.samples(n);
    let out_len = (spec.n_frames - 1) * hop + n;
    let mut out = vec![0.0; out_len];
    let mut norm = vec![0.0; out_len];

    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(n);
    let mut bins = ifft.make_input_vec();
    let mut frame = ifft.make_output_vec();
    let mut scratch = ifft.make_scratch_vec();
    let scale = 1.0 / n as f64;

    for m in 0..spec.n_frames {
        for (k, b) in bins.iter_mut().enumerate() {
            *b = spec.get(k, m);
        }
        // A real frame has purely real DC and Nyquist coefficients.
        bins[0].im = 0.0;
        bins[n / 2].im = 0.0;
        ifft.process_with_scratch(&mut bins, &mut frame, &mut scratch)
            .expect("buffer sizes come from the planner");
        let start = m * hop;
        for i in 0..n {
            out[start + i] += window[i] * frame[i] * scale;
            norm[start + i] += window[i] * window[i];
        }
    }

    let peak = norm.iter().copied().fold(0.0, f64::max);
    let threshold = peak * 1e-10;
    let interior = n.saturating_sub(hop)..spec.n_frames * hop;
    for i in interior {
        if i < out_len && norm[i] <= threshold {
            return Err(InversionError::ColaViolated);
        }
    }
    for (o, d) in out.iter_mut().zip(&norm) {
        *o = if *d > threshold { *o / d } else { 0.0 };
    }
    Ok(Waveform::mono(out, spec.sample_rate))
}

/// `‖ |X| − target ‖_F / ‖target‖_F`.
pub fn spectral_convergence(spec: &ComplexSpectrogram, target: &Matrix) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (c, t) in spec.values.iter().zip(target.as_slice()) {
        let d = c.norm() - t;
        num += d * d;
        den += t * t;
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Griffin-Lim trace: reconstructed signal plus spectral convergence before each iteration.
#[derive(Debug, Clone)]
pub struct GriffinLimResult {
    pub waveform: Waveform,
    pub convergence: Vec<f64>,
}

/// Griffin-Lim phase reconstruction from an amplitude spectrogram, zero initial phase.
pub fn griffin_lim(
    mag: &MagnitudeSpectrogram,
    cfg: &InversionConfig,
) -> Result<GriffinLimResult, InversionError> {
    let params = mag.params;
    let (n_bins, n_frames) = mag.values.shape();
    if n_bins != params.n_bins() {
        return Err(InversionError::ShapeMismatch(format!(
            "{n_bins} bins for window length {}",
            params.window_len
        )));
    }
    let target = &mag.values;
    let mut spec = ComplexSpectrogram::zeros(n_frames, params, mag.sample_rate);
    for (c, &a) in spec.values.iter_mut().zip(target.as_slice()) {
        *c = Complex64::new(a, 0.0);
    }
    let mut convergence = Vec::with_capacity(cfg.gl_iters);
    for _ in 0..cfg.gl_iters {
        let wave = istft(&spec)?;
        let rebuilt = spectral::stft_samples(&wave.samples, wave.sample_rate, params)?;
        convergence.push(spectral_convergence(&rebuilt, target));
        for ((c, r), &a) in spec.values.iter_mut().zip(&rebuilt.values).zip(target.as_slice()) {
            let norm = r.norm();
            *c = if norm > 0.0 {
                r * (a / norm)
            } else {
                Complex64::new(a, 0.0)
            };
        }
    }
    Ok(GriffinLimResult {
        waveform: istft(&spec)?,
        convergence,
    })
}

/// dB-scaled mel matrix → waveform: `db_to_power → mel_to_linear → sqrt → griffin_lim`.
pub fn mel_db_to_waveform(
    mel_db: &Matrix,
    fb: &FilterBank,
    params: StftParams,
    cfg: &InversionConfig,
) -> Result<Waveform, InversionError> {
    let mel_power = spectral::db_to_power(mel_db);
    let estimate = mel_to_linear(&mel_power, fb, cfg)?;
    log::debug!(
        "mel inversion: {} iterations, relative residual {:.3e}",
        estimate.iterations,
        estimate.residual()
    );
    let amplitude = MagnitudeSpectrogram {
        values: estimate.power.map(f64::sqrt),
        params,
        sample_rate: fb.sample_rate,
    };
    Ok(griffin_lim(&amplitude, cfg)?.waveform)
}

/// Inverts a mel spectrogram in power units.
pub fn mel_to_waveform(
    mel: &MelSpectrogram,
    fb: &FilterBank,
    params: StftParams,
    cfg: &InversionConfig,
) -> Result<Waveform, InversionError> {
    let estimate = mel_to_linear(&mel.values, fb, cfg)?;
    let amplitude = MagnitudeSpectrogram {
        values: estimate.power.map(f64::sqrt),
        params,
        sample_rate: mel.sample_rate,
    };
    Ok(griffin_lim(&amplitude, cfg)?.waveform)
}

/// Dequantizes and assembles chunks of one song, then inverts to audio.
pub fn mel_chunks_to_waveform(
    chunks: &[Chunk],
    fb: &FilterBank,
    params: StftParams,
    floor_db: f64,
    overlap: usize,
    cfg: &InversionConfig,
) -> Result<Waveform, InversionError> {
    if chunks.is_empty() {
        return Err(InversionError::NoChunks);
    }
    let assembled = dataset::assemble(chunks, overlap)?;
    let db = spectral::dequantize(assembled.levels(), assembled.rows(), assembled.cols(), floor_db);
    mel_db_to_waveform(&db, fb, params, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{stft_samples, WindowKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn small_params() -> StftParams {
        StftParams {
            window_len: 64,
            hop: 16,
            window: WindowKind::Hann,
        }
    }

    #[test]
    fn identity_filterbank_inverts_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mel = Matrix::from_fn(9, 5, |_, _| rng.gen_range(0.0..2.0));
        let fb = FilterBank::identity(9, 16);
        let est = mel_to_linear(&mel, &fb, &InversionConfig::default()).unwrap();
        assert_eq!(est.power, mel);
        assert_eq!(est.residual(), 0.0);
    }

    #[test]
    fn consistent_instance_converges_monotonically() {
        let fb = spectral::mel_filterbank(32, 256, 8000, 0.0, 4000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = Matrix::from_fn(129, 20, |_, _| rng.gen_range(0.0..1.0));
        let mel = fb.weights.matmul(&y);
        let est = mel_to_linear(&mel, &fb, &InversionConfig::default()).unwrap();
        assert!(est.residual() < 1e-3, "residual {}", est.residual());
        assert!(est.iterations <= 500);
        assert!(est.power.as_slice().iter().all(|&v| v >= 0.0));
        for w in est.residual_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn mismatched_filterbank_rejected() {
        let fb = FilterBank::identity(9, 16);
        assert!(matches!(
            mel_to_linear(&Matrix::zeros(4, 2), &fb, &InversionConfig::default()),
            Err(InversionError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn huge_fixed_step_reports_divergence() {
        let fb = spectral::mel_filterbank(16, 64, 8000, 0.0, 4000.0).unwrap();
        let mel = Matrix::from_fn(16, 3, |r, c| (r + c) as f64 + 1.0);
        let cfg = InversionConfig {
            step_size: 1e200,
            line_search: false,
            max_iters: 50,
            ..Default::default()
        };
        assert!(matches!(
            mel_to_linear(&mel, &fb, &cfg),
            Err(InversionError::NonFinite { .. })
        ));
    }

    #[test]
    fn istft_inverts_stft_in_interior() {
        let p = small_params();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = stft_samples(&x, 8000, p).unwrap();
        let y = istft(&spec).unwrap();
        for i in p.window_len - p.hop..spec.n_frames * p.hop {
            assert!((y.samples[i] - x[i]).abs() < 1e-9 * x[i].abs().max(1.0));
        }
    }

    #[test]
    fn zero_spectrogram_gives_silence() {
        let p = small_params();
        let spec = ComplexSpectrogram::zeros(5, p, 8000);
        let y = istft(&spec).unwrap();
        assert_eq!(y.samples.len(), 4 * 16 + 64);
        assert!(y.samples.iter().all(|&v| v == 0.0));
        let mag = MagnitudeSpectrogram {
            values: Matrix::zeros(33, 5),
            params: p,
            sample_rate: 8000,
        };
        let gl = griffin_lim(&mag, &InversionConfig::default()).unwrap();
        assert!(gl.waveform.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_recovers_sine_where_window_nonzero() {
        let p = small_params();
        let x: Vec<f64> = (0..64).map(|i| (2.0 * PI * 5.0 * i as f64 / 64.0).sin()).collect();
        let spec = stft_samples(&x, 8000, p).unwrap();
        assert_eq!(spec.n_frames, 1);
        let y = istft(&spec).unwrap();
        let w = WindowKind::Hann.samples(64);
        for i in 0..64 {
            // (w · w · x) / w² = x wherever w > 0
            let expected = if w[i] * w[i] > 1e-10 { x[i] } else { 0.0 };
            assert!((y.samples[i] - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn non_cola_hop_is_rejected() {
        let p = StftParams {
            window_len: 16,
            hop: 16,
            window: WindowKind::Hann,
        };
        // With hop = N the periodic Hann window is zero at every frame start.
        let spec = ComplexSpectrogram::zeros(4, p, 8000);
        assert!(matches!(istft(&spec), Err(InversionError::ColaViolated)));
    }

    #[test]
    fn griffin_lim_matches_reference_on_sine() {
        let p = StftParams::default();
        let sr = 22050;
        let x: Vec<f64> = (0..sr as usize)
            .map(|i| 0.3 * (2.0 * PI * 440.0 * i as f64 / sr as f64).sin())
            .collect();
        let mag = stft_samples(&x, sr, p).unwrap().magnitude();
        let gl = griffin_lim(&mag, &InversionConfig::default()).unwrap();
        let final_sc = spectral_convergence(
            &stft_samples(&gl.waveform.samples, sr, p).unwrap(),
            &mag.values,
        );
        // independent float64 implementation of the same iteration
        assert!((final_sc - 0.172_981_146).abs() < 1e-6, "spectral convergence {final_sc}");
        assert_eq!(gl.convergence.len(), 60);
        assert!(gl.convergence[59] < 0.5 * gl.convergence[0]);
        for w in gl.convergence.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", w);
        }
    }

    #[test]
    fn empty_chunk_list_is_an_error() {
        let fb = spectral::default_filterbank();
        assert!(matches!(
            mel_chunks_to_waveform(&[], &fb, StftParams::default(), -80.0, 50, &InversionConfig::default()),
            Err(InversionError::NoChunks)
        ));
    }
}
