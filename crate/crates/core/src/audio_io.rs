//! PCM audio input/output, down-mixing and band-limited resampling.
//!
//! Everything downstream of this module works on mono audio at
//! [`TARGET_SAMPLE_RATE`]. Input files may be 16-bit PCM or 32-bit float,
//! mono or stereo; output is always 16-bit PCM mono.

use std::f64::consts::PI;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Sample rate used by every spectral stage of the pipeline.
pub const TARGET_SAMPLE_RATE: u32 = 22_050;

/// Number of taps of the windowed-sinc interpolation kernel.
pub const RESAMPLER_TAPS: usize = 64;
const KAISER_BETA: f64 = 8.6;
const RESAMPLER_ROLLOFF: f64 = 0.95;

const I16_SCALE: f64 = 32_768.0;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("audio file not found: {0}")]
    Missing(PathBuf),
    #[error("malformed WAV header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("unsupported WAV encoding in {path}: {reason}")]
    UnsupportedEncoding { path: PathBuf, reason: String },
    #[error("expected 1 or 2 channels, got {0}")]
    TooManyChannels(u16),
    #[error("sample rate must be positive")]
    InvalidSampleRate,
    #[error("expected mono audio, got {0} channels")]
    NotMono(u16),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Interleaved PCM samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub channels: u16,
}

impl Waveform {
    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
            channels: 1,
        }
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self::mono(vec![0.0; len], sample_rate)
    }

    /// Number of frames (samples per channel).
    pub fn len(&self) -> usize {
        self.samples.len() / self.channels.max(1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn ensure_mono(&self) -> Result<(), AudioError> {
        if self.channels == 1 {
            Ok(())
        } else {
            Err(AudioError::NotMono(self.channels))
        }
    }
}

/// Reads a RIFF/WAVE file. Stereo files are returned interleaved; see [`to_mono`].
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, AudioError> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| classify_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(AudioError::MalformedHeader {
            path: path.to_owned(),
            reason: "zero channels".into(),
        });
    }
    if spec.channels > 2 {
        return Err(AudioError::TooManyChannels(spec.channels));
    }
    if spec.sample_rate == 0 {
        return Err(AudioError::InvalidSampleRate);
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / I16_SCALE))
            .collect::<Result<_, _>>()
            .map_err(|e| classify_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| (v as f64).clamp(-1.0, 1.0)))
            .collect::<Result<_, _>>()
            .map_err(|e| classify_hound(path, e))?,
        (format, bits) => {
            return Err(AudioError::UnsupportedEncoding {
                path: path.to_owned(),
                reason: format!("{format:?} with {bits} bits per sample"),
            })
        }
    };
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(AudioError::MalformedHeader {
            path: path.to_owned(),
            reason: "non-finite sample data".into(),
        });
    }
    Ok(Waveform {
        samples,
        sample_rate: spec.sample_rate,
        channels: spec.channels,
    })
}

fn classify_hound(path: &Path, err: hound::Error) -> AudioError {
    match err {
        hound::Error::IoError(e) if e.kind() == io::ErrorKind::NotFound => {
            AudioError::Missing(path.to_owned())
        }
        hound::Error::IoError(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
            AudioError::MalformedHeader {
                path: path.to_owned(),
                reason: "truncated file".into(),
            }
        }
        hound::Error::IoError(source) => AudioError::Io {
            path: path.to_owned(),
            source,
        },
        hound::Error::FormatError(reason) => AudioError::MalformedHeader {
            path: path.to_owned(),
            reason: reason.into(),
        },
        hound::Error::Unsupported => AudioError::UnsupportedEncoding {
            path: path.to_owned(),
            reason: "format not supported".into(),
        },
        other => AudioError::MalformedHeader {
            path: path.to_owned(),
            reason: other.to_string(),
        },
    }
}

/// Quantizes one sample to 16-bit PCM, saturating outside `[-1, 1]`.
pub fn encode_i16(sample: f64) -> i16 {
    let clipped = if sample.is_nan() { 0.0 } else { sample.clamp(-1.0, 1.0) };
    (clipped * I16_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Writes a 16-bit PCM mono file.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<(), AudioError> {
    let path = path.as_ref();
    wave.ensure_mono()?;
    if wave.sample_rate == 0 {
        return Err(AudioError::InvalidSampleRate);
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io_err = |e: hound::Error| match e {
        hound::Error::IoError(source) => AudioError::Io {
            path: path.to_owned(),
            source,
        },
        other => AudioError::Io {
            path: path.to_owned(),
            source: io::Error::new(io::ErrorKind::Other, other.to_string()),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(io_err)?;
    for &s in &wave.samples {
        writer.write_sample(encode_i16(s)).map_err(io_err)?;
    }
    writer.finalize().map_err(io_err)
}

/// Averages the two channels of a stereo waveform. Mono input is returned unchanged.
pub fn to_mono(wave: &Waveform) -> Result<Waveform, AudioError> {
    match wave.channels {
        1 => Ok(wave.clone()),
        2 => Ok(Waveform::mono(
            wave.samples
                .chunks_exact(2)
                .map(|lr| 0.5 * (lr[0] + lr[1]))
                .collect(),
            wave.sample_rate,
        )),
        n => Err(AudioError::TooManyChannels(n)),
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser(u: f64, half_width: f64) -> f64 {
    let r = u / half_width;
    if r.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / bessel_i0(KAISER_BETA)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Windowed-sinc resampling of a mono waveform.
///
/// The output has `round(len * target / source)` samples. When downsampling the
/// kernel cutoff follows the new Nyquist frequency.
pub fn resample(wave: &Waveform, target_rate: u32) -> Result<Waveform, AudioError> {
    if target_rate == 0 || wave.sample_rate == 0 {
        return Err(AudioError::InvalidSampleRate);
    }
    wave.ensure_mono()?;
    if target_rate == wave.sample_rate {
        return Ok(wave.clone());
    }
    let ratio = target_rate as f64 / wave.sample_rate as f64;
    let out_len = (wave.samples.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0) * RESAMPLER_ROLLOFF;
    let half = (RESAMPLER_TAPS / 2) as f64;
    let x = &wave.samples;
    let n_in = x.len() as isize;

    let out = (0..out_len)
        .map(|j| {
            let t = j as f64 / ratio;
            let base = t.floor() as isize;
            let lo = base - RESAMPLER_TAPS as isize / 2 + 1;
            let hi = base + RESAMPLER_TAPS as isize / 2;
            let mut acc = 0.0;
            for n in lo.max(0)..=hi.min(n_in - 1) {
                let u = t - n as f64;
                acc += x[n as usize] * cutoff * sinc(cutoff * u) * kaiser(u, half);
            }
            acc
        })
        .collect();
    Ok(Waveform::mono(out, target_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mono_mix_is_channel_mean() {
        let stereo = Waveform {
            samples: vec![0.5, -0.5, 0.2, 0.4],
            sample_rate: 8000,
            channels: 2,
        };
        let mono = to_mono(&stereo).unwrap();
        assert_eq!(mono.channels, 1);
        assert!((mono.samples[0] - 0.0).abs() < 1e-15);
        assert!((mono.samples[1] - 0.3).abs() < 1e-15);
        let m = Waveform::mono(vec![0.1, 0.2], 8000);
        assert_eq!(to_mono(&m).unwrap(), m);
        let bad = Waveform {
            samples: vec![0.0; 6],
            sample_rate: 8000,
            channels: 3,
        };
        assert!(matches!(to_mono(&bad), Err(AudioError::TooManyChannels(3))));
    }

    #[test]
    fn max_scale_sample_decodes_below_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("max.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 22050,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(32767i16).unwrap();
        w.finalize().unwrap();
        let wave = read_wav(&path).unwrap();
        assert_eq!(wave.samples.len(), 1);
        assert!((wave.samples[0] - 32767.0 / 32768.0).abs() < 1e-12);
    }

    #[test]
    fn zeros_round_trip_and_rate_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.wav");
        write_wav(&path, &Waveform::zeros(100, 16000)).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16000);
        assert_eq!(back.samples, vec![0.0; 100]);
    }

    #[test]
    fn out_of_range_samples_saturate() {
        assert_eq!(encode_i16(3.0), i16::MAX);
        assert_eq!(encode_i16(-3.0), i16::MIN);
        assert_eq!(encode_i16(1.0), i16::MAX);
    }

    #[test]
    fn random_round_trip_within_one_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<f64> = (0..4096).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let wave = Waveform::mono(samples, 22050);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.wav");
        write_wav(&path, &wave).unwrap();
        let back = read_wav(&path).unwrap();
        let max_err = wave
            .samples
            .iter()
            .zip(&back.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 1.0 / 32768.0, "max_err = {max_err}");
    }

    #[test]
    fn read_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_wav(dir.path().join("nope.wav")),
            Err(AudioError::Missing(_))
        ));
        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"RIFX not a wave file at all....").unwrap();
        assert!(matches!(
            read_wav(&junk),
            Err(AudioError::MalformedHeader { .. })
        ));
        let pcm24 = dir.path().join("p24.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&pcm24, spec).unwrap();
        w.write_sample(0i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(
            read_wav(&pcm24),
            Err(AudioError::UnsupportedEncoding { .. })
        ));
    }

    #[test]
    fn float_input_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 44100,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for v in [0.25f32, -0.25, 0.5, 0.0] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let wave = read_wav(&path).unwrap();
        assert_eq!(wave.channels, 2);
        assert_eq!(wave.len(), 2);
        let mono = to_mono(&wave).unwrap();
        assert_eq!(mono.samples, vec![0.0, 0.25]);
    }

    #[test]
    fn resample_lengths() {
        let w = Waveform::zeros(1000, 44100);
        assert_eq!(resample(&w, 22050).unwrap().samples.len(), 500);
        let same = Waveform::mono(vec![0.1, 0.3, -0.2], 22050);
        assert_eq!(resample(&same, 22050).unwrap(), same);
        assert!(resample(&same, 0).is_err());
    }

    #[test]
    fn resample_preserves_duration() {
        for (len, from, to) in [(12345, 44100, 22050), (777, 16000, 22050), (5000, 48000, 22050)] {
            let w = Waveform::zeros(len, from);
            let r = resample(&w, to).unwrap();
            assert!((r.duration_secs() - w.duration_secs()).abs() <= 1.0 / to as f64);
        }
    }
}
