//! The `sgvad` command-line interface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::classifier::{self, ClassifierConfig};
use crate::dsp::dump::{write_matrix, FEATURE_MAGIC, GATE_MAGIC};
use crate::dsp::{load_wav, normalize_features, MfccConfig, MfccExtractor, SAMPLE_RATE};
use crate::eval::{evaluate, load_label_map, make_toy_corpus, ToyCorpusSpec};
use crate::gates::{GateModelConfig, GateNet};
use crate::infer::{read_scored_csv, read_segments_csv, write_scored_csv, Scorer};
use crate::train::{parse_config, train_run, TrainConfig, TrainMode};

#[derive(Parser)]
#[command(
    name = "sgvad",
    version,
    about = "Segment-level voice activity detection with stochastic gates",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute MFCC features for a WAV file and write a binary dump.
    Features {
        /// Input WAV file (16 kHz, mono, PCM16).
        wav: PathBuf,
        /// Output feature dump (magic SGF1).
        #[arg(long)]
        out: PathBuf,
        /// Apply per-channel normalization before dumping.
        #[arg(long, default_value_t = false)]
        normalize: bool,
        /// Optional checkpoint; with --gates, also dump hard gates.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Output gate dump (magic SGZ1); requires --model.
        #[arg(long)]
        gates: Option<PathBuf>,
    },
    /// Generate the synthetic toy corpus with manifests and configs.
    Toygen {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Corpus seed; fixed seed gives a byte-identical corpus.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Clips generated per class.
        #[arg(long, default_value_t = 200)]
        clips_per_class: usize,
        /// Number of speech classes (the background class is added).
        #[arg(long, default_value_t = 5)]
        speech_classes: usize,
    },
    /// Train the gate network (and classifier) on a manifest.
    Train {
        /// Training config file (`key = value`); defaults apply if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training mode: full | regression | no_lsg | unconditional_lsg.
        #[arg(long)]
        mode: Option<String>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Training manifest (audio<TAB>label<TAB>duration lines).
        #[arg(long)]
        train: PathBuf,
        /// Validation manifest.
        #[arg(long)]
        val: PathBuf,
        /// Output checkpoint path; also writes `<out>.infer` and
        /// `<out>.metrics.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score labeled segments with a trained model.
    Infer {
        /// Checkpoint (training checkpoint or inference export).
        #[arg(long)]
        model: PathBuf,
        /// Input CSV: audio_path,start_s,end_s,label.
        #[arg(long)]
        segments: PathBuf,
        /// Output CSV with a score column appended.
        #[arg(long)]
        out: PathBuf,
        /// Optional decision threshold in [0, 32]; adds a decision column.
        #[arg(long)]
        threshold: Option<f64>,
        /// Concurrent scoring jobs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate scored segments against a label mapping (AUC-ROC).
    Eval {
        /// Scored CSV written by `infer`.
        #[arg(long)]
        scored: PathBuf,
        /// Label mapping file: `label<TAB>pos|neg` lines.
        #[arg(long)]
        map: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Make the final `auc=` line the duration-weighted AUC.
        #[arg(long, default_value_t = false)]
        weighted_auc: bool,
    },
    /// Print exact parameter counts for the model pair.
    Params {
        /// `default` or a training config file (for n_classes).
        #[arg(long, default_value = "default")]
        config: String,
    },
}

/// Parses and dispatches; returns the process exit code (0 success,
/// 1 runtime error, 2 usage error).
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Box<dyn std::error::Error>> {
    match cmd {
        Command::Features {
            wav,
            out,
            normalize,
            model,
            gates,
        } => {
            let clip = load_wav(&wav)?;
            let extractor = MfccExtractor::new(MfccConfig::default(), SAMPLE_RATE)?;
            let features = extractor.compute(&clip)?;
            let dumped = if normalize {
                normalize_features(&features)
            } else {
                features.clone()
            };
            write_matrix(&out, FEATURE_MAGIC, &dumped)?;
            println!(
                "features: {} channels x {} frames -> {}",
                dumped.channels(),
                dumped.frames(),
                out.display()
            );
            if let Some(gates_out) = gates {
                let model = model.ok_or("--gates requires --model")?;
                let scorer = Scorer::from_checkpoint(&model)?;
                let output = scorer
                    .gate_net()
                    .gate_output(&normalize_features(&features))?;
                write_matrix(&gates_out, GATE_MAGIC, &output.gates)?;
                println!(
                    "gates: open rate {:.4} -> {}",
                    output.gates.data().iter().map(|&v| f64::from(v)).sum::<f64>()
                        / output.gates.data().len() as f64,
                    gates_out.display()
                );
            } else if model.is_some() {
                return Err("--model without --gates does nothing; pass --gates PATH".into());
            }
            Ok(())
        }
        Command::Toygen {
            out,
            seed,
            clips_per_class,
            speech_classes,
        } => {
            let corpus = make_toy_corpus(
                &out,
                &ToyCorpusSpec {
                    seed,
                    n_per_class: clips_per_class,
                    n_speech_classes: speech_classes,
                },
            )?;
            println!(
                "toy corpus: {} classes x {} clips -> {}",
                corpus.n_classes,
                clips_per_class,
                corpus.root.display()
            );
            println!("train manifest: {}", corpus.train_manifest.display());
            println!("val manifest:   {}", corpus.val_manifest.display());
            println!("test manifest:  {}", corpus.test_manifest.display());
            println!("test segments:  {}", corpus.test_segments.display());
            println!("label map:      {}", corpus.label_map.display());
            println!("train config:   {}", corpus.train_config.display());
            Ok(())
        }
        Command::Train {
            config,
            mode,
            seed,
            train,
            val,
            out,
        } => {
            let mut cfg = match config {
                Some(path) => parse_config(&std::fs::read_to_string(&path)?)?,
                None => TrainConfig::default(),
            };
            if let Some(mode) = mode {
                cfg.mode = TrainMode::parse(&mode)?;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let metrics = sibling(&out, "metrics.csv");
            let summary = train_run(cfg, &train, &val, &out, &metrics)?;
            println!(
                "trained {} steps; best epoch {} (val accuracy {:.4})",
                summary.steps_run, summary.best_epoch, summary.best_val_accuracy
            );
            println!(
                "final val: acc {:.4}, gate open rate bg {:.4} / speech {:.4}",
                summary.final_val.accuracy,
                summary.final_val.bg_gate_rate,
                summary.final_val.speech_gate_rate
            );
            println!("checkpoint: {}", summary.checkpoint.display());
            println!("inference export: {}", summary.export.display());
            println!("metrics log: {}", summary.metrics.display());
            Ok(())
        }
        Command::Infer {
            model,
            segments,
            out,
            threshold,
            jobs,
        } => {
            if let Some(th) = threshold {
                if !(0.0..=32.0).contains(&th) {
                    return Err("threshold must be in [0, 32]".into());
                }
            }
            let records = read_segments_csv(&segments)?;
            let scorer = Scorer::from_checkpoint(&model)?;
            let scored = scorer.score_all(&records, jobs.max(1))?;
            write_scored_csv(&out, &scored, threshold)?;
            println!("scored {} segments -> {}", scored.len(), out.display());
            Ok(())
        }
        Command::Eval {
            scored,
            map,
            out,
            weighted_auc,
        } => {
            let scored = read_scored_csv(&scored)?;
            let mapping = load_label_map(&map)?;
            let report = evaluate(&scored, &mapping)?;
            let mut text = format!("{report}");
            if weighted_auc {
                text.push_str(&format!("\nauc={:.6}", report.weighted_auc));
            }
            println!("{text}");
            if let Some(out) = out {
                std::fs::write(&out, text + "\n")?;
            }
            Ok(())
        }
        Command::Params { config } => {
            let cfg = if config == "default" {
                TrainConfig::default()
            } else {
                parse_config(&std::fs::read_to_string(Path::new(&config))?)?
            };
            let gate = GateNet::<f32>::seeded(GateModelConfig::default(), 0).count_params();
            let cls = classifier::count_params(&ClassifierConfig::with_classes(cfg.n_classes));
            println!("gate_params={gate}");
            println!("classifier_params={cls}");
            println!("total_params={}", gate + cls);
            Ok(())
        }
    }
}

/// `model.ckpt` -> `model.ckpt.metrics.csv` (appends, never replaces an
/// existing extension).
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}.{suffix}", path.display()))
}
