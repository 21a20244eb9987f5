//! Synthetic inputs for smoke tests, benchmarks and toy training tasks.

use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio_io::{self, AudioError, Waveform};

/// `n` binary stripe images `size×size` in `{-1, 1}`, with random period
/// 4..=16 pixels and random phase. Vertical stripes vary along columns.
pub fn stripes(n: usize, size: usize, vertical: bool, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let period = rng.gen_range(4..=16) as f64;
            let phase = rng.gen_range(0.0..period);
            let mut img = vec![0.0f32; size * size];
            for r in 0..size {
                for c in 0..size {
                    let t = if vertical { c } else { r } as f64;
                    let s = (std::f64::consts::TAU * (t + phase) / period).sin();
                    img[r * size + c] = if s >= 0.0 { 1.0 } else { -1.0 };
                }
            }
            img
        })
        .collect()
}

/// A bass line: a few low partials whose fundamental changes every half second.
pub fn bass_line(secs: f64, sample_rate: u32, rng: &mut impl Rng) -> Waveform {
    let n = (secs * sample_rate as f64) as usize;
    let note_len = sample_rate as usize / 2;
    let mut out = vec![0.0; n];
    let mut f0 = 55.0;
    for (i, v) in out.iter_mut().enumerate() {
        if i % note_len == 0 {
            f0 = 41.0 * 2f64.powf(rng.gen_range(0..12) as f64 / 12.0);
        }
        let t = i as f64 / sample_rate as f64;
        let env = 1.0 - (i % note_len) as f64 / note_len as f64 * 0.6;
        *v = 0.3 * env * ((1..=3).map(|h| (std::f64::consts::TAU * f0 * h as f64 * t).sin() / h as f64).sum::<f64>());
    }
    Waveform::mono(out, sample_rate)
}

/// A drum track: exponentially decaying noise bursts on a quarter-second grid.
pub fn drum_track(secs: f64, sample_rate: u32, rng: &mut impl Rng) -> Waveform {
    let n = (secs * sample_rate as f64) as usize;
    let beat = sample_rate as usize / 4;
    let mut out = vec![0.0; n];
    let mut gain = 0.0;
    for (i, v) in out.iter_mut().enumerate() {
        if i % beat == 0 {
            gain = if rng.gen_bool(0.7) { rng.gen_range(0.2..0.6) } else { 0.0 };
        }
        let decay = (-((i % beat) as f64) / (0.03 * sample_rate as f64)).exp();
        *v = gain * decay * rng.gen_range(-1.0..1.0);
    }
    Waveform::mono(out, sample_rate)
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// Writes `<root>/song_<i>/{bass,drums}.wav` for `n_songs` songs of `secs` seconds.
pub fn write_song_dataset(root: &Path, n_songs: usize, secs: f64, seed: u64) -> Result<(), SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = audio_io::TARGET_SAMPLE_RATE;
    for i in 0..n_songs {
        let dir = root.join(format!("song_{i:02}"));
        fs::create_dir_all(&dir)?;
        audio_io::write_wav(dir.join("bass.wav"), &bass_line(secs, sr, &mut rng))?;
        audio_io::write_wav(dir.join("drums.wav"), &drum_track(secs, sr, &mut rng))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stripes_are_binary_and_oriented() {
        for img in stripes(5, 16, true, 3) {
            assert!(img.iter().all(|&v| v == 1.0 || v == -1.0));
            for r in 1..16 {
                assert_eq!(img[r * 16..r * 16 + 16], img[..16]);
            }
        }
        for img in stripes(5, 16, false, 4) {
            for r in 0..16 {
                assert!(img[r * 16..r * 16 + 16].iter().all(|&v| v == img[r * 16]));
            }
        }
    }

    #[test]
    fn signals_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for w in [bass_line(1.0, 22050, &mut rng), drum_track(1.0, 22050, &mut rng)] {
            assert_eq!(w.len(), 22050);
            assert!(w.samples.iter().all(|v| v.abs() < 1.0));
        }
    }
}
