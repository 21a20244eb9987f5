//! Forward time-frequency transforms: STFT, power spectrogram, mel
//! filterbank projection, dB compression and 8-bit quantization.

use std::f64::consts::PI;

use realfft::num_complex::Complex64;
use realfft::RealFftPlanner;
use thiserror::Error;

use crate::audio_io::{AudioError, Waveform};
use crate::matrix::Matrix;

pub const DEFAULT_WINDOW_LEN: usize = 2048;
pub const DEFAULT_HOP: usize = 512;
pub const DEFAULT_N_MELS: usize = 256;
pub const DEFAULT_FLOOR_DB: f64 = -80.0;
pub const DB_EPSILON: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("signal of {len} samples is shorter than one window ({window_len})")]
    SignalTooShort { len: usize, window_len: usize },
    #[error("invalid STFT geometry: {0}")]
    InvalidGeometry(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("frequency must be nonnegative, got {0}")]
    NegativeFrequency(f64),
    #[error("fmax {fmax} Hz exceeds the Nyquist frequency {nyquist} Hz")]
    AboveNyquist { fmax: f64, nyquist: f64 },
    #[error(transparent)]
    Audio(#[from] AudioError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    /// Periodic Hann window.
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn samples(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
            WindowKind::Rectangular => vec![1.0; len],
        }
    }
}

/// STFT analysis parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftParams {
    pub window_len: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            window_len: DEFAULT_WINDOW_LEN,
            hop: DEFAULT_HOP,
            window: WindowKind::Hann,
        }
    }
}

impl StftParams {
    pub fn n_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    /// `floor((len - N) / H) + 1` full frames, or `None` when the signal is shorter than a window.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        (len >= self.window_len).then(|| (len - self.window_len) / self.hop + 1)
    }

    fn validate(&self) -> Result<(), SpectralError> {
        if self.window_len < 2 || self.window_len % 2 != 0 {
            return Err(SpectralError::InvalidGeometry(format!(
                "window length must be even and >= 2, got {}",
                self.window_len
            )));
        }
        if self.hop == 0 {
            return Err(SpectralError::InvalidGeometry("hop must be >= 1".into()));
        }
        Ok(())
    }
}

/// One-sided complex STFT, stored bin-major: `values[k * n_frames + m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub values: Vec<Complex64>,
    pub n_bins: usize,
    pub n_frames: usize,
    pub params: StftParams,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn zeros(n_frames: usize, params: StftParams, sample_rate: u32) -> Self {
        let n_bins = params.n_bins();
        Self {
            values: vec![Complex64::new(0.0, 0.0); n_bins * n_frames],
            n_bins,
            n_frames,
            params,
            sample_rate,
        }
    }

    #[inline]
    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        self.values[bin * self.n_frames + frame]
    }

    #[inline]
    pub fn set(&mut self, bin: usize, frame: usize, v: Complex64) {
        self.values[bin * self.n_frames + frame] = v;
    }

    /// Entrywise amplitude `|X|`.
    pub fn magnitude(&self) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram {
            values: Matrix::from_vec(
                self.n_bins,
                self.n_frames,
                self.values.iter().map(|c| c.norm()).collect(),
            ),
            params: self.params,
            sample_rate: self.sample_rate,
        }
    }
}

/// Nonnegative real spectrogram, `(K + 1) x (M + 1)`. Holds either power or
/// amplitude depending on the producing stage.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    pub values: Matrix,
    pub params: StftParams,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub weights: Matrix,
    pub fmin: f64,
    pub fmax: f64,
    pub window_len: usize,
    pub sample_rate: u32,
}

impl FilterBank {
    pub fn n_mels(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.cols()
    }

    /// Identity "filterbank" for `n_bins` linear bins (testing and degenerate setups).
    pub fn identity(n_bins: usize, sample_rate: u32) -> Self {
        Self {
            weights: Matrix::identity(n_bins),
            fmin: 0.0,
            fmax: sample_rate as f64 / 2.0,
            window_len: 2 * (n_bins - 1),
            sample_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Matrix,
    pub hop: usize,
    pub sample_rate: u32,
}

impl MelSpectrogram {
    pub fn n_mels(&self) -> usize {
        self.values.rows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.cols()
    }
}

pub fn stft(
    wave: &Waveform,
    params: StftParams,
) -> Result<ComplexSpectrogram, SpectralError> {
    wave.ensure_mono()?;
    stft_samples(&wave.samples, wave.sample_rate, params)
}

/// STFT of a raw mono sample slice. Frames start at sample 0; no padding.
pub fn stft_samples(
    x: &[f64],
    sample_rate: u32,
    params: StftParams,
) -> Result<ComplexSpectrogram, SpectralError> {
    params.validate()?;
    let n_frames = params.frame_count(x.len()).ok_or(SpectralError::SignalTooShort {
        len: x.len(),
        window_len: params.window_len,
    })?;
    let n = params.window_len;
    let window = params.window.samples(n);
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut frame = fft.make_input_vec();
    let mut bins = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();

    let mut spec = ComplexSpectrogram::zeros(n_frames, params, sample_rate);
    for m in 0..n_frames {
        let start = m * params.hop;
        for (i, slot) in frame.iter_mut().enumerate() {
            *slot = x[start + i] * window[i];
        }
        fft.process_with_scratch(&mut frame, &mut bins, &mut scratch)
            .expect("buffer sizes come from the planner");
        for (k, v) in bins.iter().enumerate() {
            spec.set(k, m, *v);
        }
    }
    Ok(spec)
}

/// Power spectrogram `|X|^2`.
pub fn power(spec: &ComplexSpectrogram) -> MagnitudeSpectrogram {
    MagnitudeSpectrogram {
        values: Matrix::from_vec(
            spec.n_bins,
            spec.n_frames,
            spec.values.iter().map(|c| c.re * c.re + c.im * c.im).collect(),
        ),
        params: spec.params,
        sample_rate: spec.sample_rate,
    }
}

pub fn hz_to_mel(f: f64) -> Result<f64, SpectralError> {
    if f < 0.0 || f.is_nan() {
        return Err(SpectralError::NegativeFrequency(f));
    }
    Ok(2595.0 * (1.0 + f / 700.0).log10())
}

pub fn mel_to_hz(m: f64) -> Result<f64, SpectralError> {
    if m < 0.0 || m.is_nan() {
        return Err(SpectralError::NegativeFrequency(m));
    }
    Ok(700.0 * (10f64.powf(m / 2595.0) - 1.0))
}

/// Triangular mel filterbank with peak amplitude 1.
///
/// `n_mels + 2` edge points are spaced evenly on the mel axis between
/// `fmin` and `fmax`; filter `i` rises from edge `i` to edge `i + 1` and
/// falls back to zero at edge `i + 2`.
pub fn mel_filterbank(
    n_mels: usize,
    window_len: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
) -> Result<FilterBank, SpectralError> {
    if n_mels == 0 {
        return Err(SpectralError::InvalidGeometry("n_mels must be >= 1".into()));
    }
    if window_len < 2 || window_len % 2 != 0 {
        return Err(SpectralError::InvalidGeometry(format!(
            "window length must be even, got {window_len}"
        )));
    }
    let nyquist = sample_rate as f64 / 2.0;
    if fmax > nyquist {
        return Err(SpectralError::AboveNyquist { fmax, nyquist });
    }
    if fmin >= fmax {
        return Err(SpectralError::InvalidGeometry(format!(
            "fmin {fmin} must be below fmax {fmax}"
        )));
    }
    let mel_lo = hz_to_mel(fmin)?;
    let mel_hi = hz_to_mel(fmax)?;
    let step = (mel_hi - mel_lo) / (n_mels + 1) as f64;
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + step * i as f64))
        .collect::<Result<_, _>>()?;

    let n_bins = window_len / 2 + 1;
    let bin_hz = sample_rate as f64 / window_len as f64;
    let weights = Matrix::from_fn(n_mels, n_bins, |i, k| {
        let f = k as f64 * bin_hz;
        let (lo, center, hi) = (edges[i], edges[i + 1], edges[i + 2]);
        let rising = (f - lo) / (center - lo);
        let falling = (hi - f) / (hi - center);
        rising.min(falling).max(0.0)
    });
    Ok(FilterBank {
        weights,
        fmin,
        fmax,
        window_len,
        sample_rate,
    })
}

/// Default filterbank: 256 mels, N = 2048, full band at 22050 Hz.
pub fn default_filterbank() -> FilterBank {
    mel_filterbank(
        DEFAULT_N_MELS,
        DEFAULT_WINDOW_LEN,
        crate::audio_io::TARGET_SAMPLE_RATE,
        0.0,
        crate::audio_io::TARGET_SAMPLE_RATE as f64 / 2.0,
    )
    .expect("default filterbank parameters are valid")
}

/// Projects a power spectrogram onto the mel axis: `fb · Y`.
pub fn mel_project(
    spec: &MagnitudeSpectrogram,
    fb: &FilterBank,
) -> Result<MelSpectrogram, SpectralError> {
    if fb.n_bins() != spec.values.rows() {
        return Err(SpectralError::ShapeMismatch {
            expected: format!("{} frequency bins", fb.n_bins()),
            actual: format!("{} frequency bins", spec.values.rows()),
        });
    }
    Ok(MelSpectrogram {
        values: fb.weights.matmul(&spec.values),
        hop: spec.params.hop,
        sample_rate: spec.sample_rate,
    })
}

/// `10 log10(max(v, eps) / max)`, clipped to `[floor_db, 0]`.
///
/// An all-(near-)zero input maps to `floor_db` everywhere.
pub fn power_to_db(values: &Matrix, floor_db: f64) -> Matrix {
    let reference = values.max();
    if !(reference > DB_EPSILON) {
        return values.map(|_| floor_db);
    }
    values.map(|v| {
        (10.0 * (v.max(DB_EPSILON) / reference).log10()).clamp(floor_db, 0.0)
    })
}

/// Inverse of [`power_to_db`] relative to a unit reference power.
pub fn db_to_power(db: &Matrix) -> Matrix {
    db.map(|d| 10f64.powf(d / 10.0))
}

/// Maps `[floor_db, 0]` affinely onto `0..=255`, rounding half to even.
pub fn quantize(db: &Matrix, floor_db: f64) -> Vec<u8> {
    db.as_slice()
        .iter()
        .map(|&d| quantize_level(d, floor_db))
        .collect()
}

#[inline]
pub fn quantize_level(d: f64, floor_db: f64) -> u8 {
    let t = ((d - floor_db) / -floor_db).clamp(0.0, 1.0);
    (t * 255.0).round_ties_even() as u8
}

#[inline]
pub fn dequantize_level(level: u8, floor_db: f64) -> f64 {
    floor_db * (1.0 - level as f64 / 255.0)
}

pub fn dequantize(levels: &[u8], rows: usize, cols: usize, floor_db: f64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        levels.iter().map(|&l| dequantize_level(l, floor_db)).collect(),
    )
}

/// Full forward pipeline: waveform → quantized mel image (`n_mels` rows × frames).
pub fn waveform_to_levels(
    wave: &Waveform,
    params: StftParams,
    fb: &FilterBank,
    floor_db: f64,
) -> Result<(Vec<u8>, usize), SpectralError> {
    let mel = mel_spectrogram(wave, params, fb)?;
    let frames = mel.n_frames();
    Ok((quantize(&power_to_db(&mel.values, floor_db), floor_db), frames))
}

pub fn mel_spectrogram(
    wave: &Waveform,
    params: StftParams,
    fb: &FilterBank,
) -> Result<MelSpectrogram, SpectralError> {
    let spec = stft(wave, params)?;
    mel_project(&power(&spec), fb)
}
