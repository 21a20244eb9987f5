//! The `arranger` command: one subcommand per pipeline stage, all driven by
//! a flat `key = value` configuration file.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use arranger_core::dataset::Split;
use arranger_core::diagnostics::{self, GRADCHECK_TOLERANCE};
use arranger_core::pipeline::{self, EvaluateInputs, PipelineError, RunConfig};
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "arranger", version, about = "Bass-to-drums arrangement by spectrogram translation")]
pub struct Cli {
    /// Configuration file (`key = value` lines); defaults to the desk preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set steps=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel feature extraction.
    #[arg(long, default_value_t = 1, global = true)]
    pub threads: usize,
    /// Keep PGM images of intermediate spectrograms.
    #[arg(long, global = true)]
    pub keep_intermediates: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the quantized mel spectrogram of a WAV file as a PGM image.
    Spectrogram {
        wav: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Scan `<root>/<song>/{bass,drums}.wav` and write a dataset manifest.
    Ingest {
        root: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Turn every manifest entry into overlapping mel chunks.
    BuildChunks {
        manifest: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train the unpaired bass↔drums CycleGAN.
    TrainCyclegan {
        #[arg(long)]
        store: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the paired Pix2Pix baseline.
    TrainPix2pix {
        #[arg(long)]
        store: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Translate a bass WAV (or every bass chunk of a chunk store) into drums.
    Translate {
        /// A `.wav` file or a chunk store directory.
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output WAV (default: `<input>.drums.wav`) or output store directory.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Split to translate when the input is a chunk store.
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Invert a PGM mel image to audio.
    Invert {
        pgm: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Score generated drum chunks against the real ones.
    Evaluate {
        /// Chunk store with the real drum chunks.
        #[arg(long)]
        store: PathBuf,
        /// Chunk store of generated drum chunks.
        #[arg(long)]
        generated: PathBuf,
        /// CycleGAN checkpoint whose drum critic embeds chunks.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Precomputed embeddings (`<chunk file>\t<values>` lines) instead of the critic.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Human grades: `sample_id rater quality contamination credibility time` lines.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable op and the desk networks.
    Gradecheck {
        /// Only run checks whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| PipelineError::Config(format!("`--set {kv}`: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.threads == 0 {
        return Err(PipelineError::Config("--threads must be at least 1".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn intermediates_dir(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.intermediates"))
}

fn execute(cli: &Cli, cfg: &RunConfig) -> Result<(), PipelineError> {
    match &cli.command {
        Command::Spectrogram { wav, out } => {
            let img = pipeline::spectrogram(cfg, wav, out)?;
            println!("{}: {} mels × {} frames", out.display(), img.rows(), img.cols());
        }
        Command::Ingest { root, out } => {
            let m = pipeline::ingest(cfg, root, out)?;
            println!("{} songs ({} skipped) → {}", m.entries.len(), m.skipped.len(), out.display());
        }
        Command::BuildChunks { manifest, out } => {
            let store = pipeline::build_chunks(cfg, manifest, out)?;
            println!("{} chunks → {}", store.records.len(), out.display());
        }
        Command::TrainCyclegan { store, out, resume } => {
            let state = pipeline::train_cyclegan(cfg, store, out, resume.as_deref())?;
            println!("trained {} steps → {}", state.step, out.display());
        }
        Command::TrainPix2pix { store, out, resume } => {
            let state = pipeline::train_pix2pix(cfg, store, out, resume.as_deref())?;
            println!("trained {} steps → {}", state.step, out.display());
        }
        Command::Translate {
            input,
            checkpoint,
            out,
            split,
        } => {
            if input.is_dir() {
                let out = out.as_ref().ok_or_else(|| {
                    PipelineError::Config("translating a chunk store needs --out <directory>".into())
                })?;
                let store = pipeline::translate_store(cfg, checkpoint, input, *split, out)?;
                println!("{} chunks → {}", store.records.len(), out.display());
            } else {
                let out = out.clone().unwrap_or_else(|| pipeline::adjacent_output(input));
                let keep = cli.keep_intermediates.then(|| intermediates_dir(&out));
                let wave = pipeline::translate_wav(cfg, checkpoint, input, &out, keep.as_deref())?;
                println!("{:.2} s → {}", wave.duration_secs(), out.display());
            }
        }
        Command::Invert { pgm, out } => {
            let wave = pipeline::invert(cfg, pgm, out)?;
            println!("{:.2} s → {}", wave.duration_secs(), out.display());
        }
        Command::Evaluate {
            store,
            generated,
            checkpoint,
            embeddings,
            annotations,
            split,
            out,
        } => {
            let inputs = EvaluateInputs {
                store,
                generated,
                checkpoint: checkpoint.as_deref(),
                embeddings: embeddings.as_deref(),
                annotations: annotations.as_deref(),
                split: *split,
                threads: cli.threads,
            };
            let summary = pipeline::evaluate(cfg, &inputs, out)?;
            print!("{}", summary.table.histogram_text());
            println!("fid\t{}", summary.fid);
        }
        Command::Gradecheck { filter } => {
            let reports = diagnostics::gradient_suite(cfg.seed, filter.as_deref())?;
            if reports.is_empty() {
                return Err(PipelineError::Input("no gradient check matches the filter".into()));
            }
            let mut failed = 0;
            for r in &reports {
                let ok = r.passed(GRADCHECK_TOLERANCE);
                failed += usize::from(!ok);
                println!(
                    "{:<24} {:.3e}  {}",
                    r.name,
                    r.max_rel_error,
                    if ok { "ok" } else { "FAIL" }
                );
            }
            if failed > 0 {
                return Err(PipelineError::Input(format!(
                    "{failed} of {} checks exceed {GRADCHECK_TOLERANCE:e}",
                    reports.len()
                )));
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the subcommand; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    log::info!("config {} seed {}", cfg.fingerprint(), cfg.seed);
    match execute(&cli, &cfg) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
