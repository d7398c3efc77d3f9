use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pose_cvae_cli::commands::{
    cmd_bench, cmd_evaluate, cmd_generate, cmd_sample, cmd_train, Query, SampleRequest, Workspace,
    CHECKPOINT_FILE, SCENE_FILE, TEST_FILE, TRAIN_FILE,
};
use pose_cvae_cli::{CliError, CliResult, RunConfig};

/// Multimodal camera-pose posteriors with a conditional VAE.
#[derive(Parser)]
#[command(name = "pose-cvae", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set iterations=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (falls back to the config's `out_dir`, then `out`).
    #[arg(long, env = "POSE_CVAE_OUT", global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the synthetic scene and write train/test datasets.
    Generate,
    /// Train a model on a dataset file.
    Train {
        /// Defaults to the generated training split.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a checkpoint with the recall protocol.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to the generated test split.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Scene manifest for mode coverage; defaults to the generated one
        /// when present.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Draw posterior samples for one query.
    Sample {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Record index in `--data` to use as the query.
        #[arg(long, conflicts_with = "features")]
        index: Option<usize>,
        /// Dataset holding the query; defaults to the generated test split.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Explicit comma-separated observation features.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        features: Option<Vec<f64>>,
        /// Number of samples; defaults to the config's `samples`.
        #[arg(short, long)]
        m: Option<usize>,
        /// Defaults to the config's `eval_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write a KDE of this translation axis (x, y or z).
        #[arg(long, value_parser = ["x", "y", "z"])]
        plot: Option<String>,
    },
    /// Time posterior sampling.
    Bench {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(short, long, default_value_t = 1000)]
        m: usize,
        #[arg(long, default_value_t = 100)]
        repetitions: usize,
    },
}

fn workspace(common: &Common) -> CliResult<Workspace> {
    let base = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let config = base.with_overrides(&common.overrides)?;
    let out = common
        .out
        .clone()
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Workspace::new(config, out)
}

fn run(cli: Cli) -> CliResult<()> {
    let ws = workspace(&cli.common)?;
    let or_out = |p: Option<PathBuf>, name: &str| p.unwrap_or_else(|| ws.path(name));
    match cli.command {
        Command::Generate => {
            let out = cmd_generate(&ws)?;
            println!("wrote {}", out.train.display());
            println!("wrote {}", out.test.display());
            println!("wrote {}", out.manifest.display());
        }
        Command::Train { data } => {
            let total = ws.config.iterations;
            let out = cmd_train(&ws, &or_out(data, TRAIN_FILE), |r| {
                if (r.iteration + 1) % 1000 == 0 || r.iteration + 1 == total {
                    eprintln!(
                        "iteration {}/{total}: total {:.5} kl {:.5} recon {:.5} beta {:.3}",
                        r.iteration + 1,
                        r.total,
                        r.kl,
                        r.reconstruction,
                        r.beta
                    );
                }
            })?;
            println!("wrote {}", out.checkpoint.display());
            println!("wrote {}", out.loss_log.display());
        }
        Command::Evaluate {
            checkpoint,
            data,
            scene,
        } => {
            let default_scene = ws.path(SCENE_FILE);
            let scene = scene.or_else(|| default_scene.exists().then_some(default_scene));
            let s = cmd_evaluate(
                &ws,
                &or_out(checkpoint, CHECKPOINT_FILE),
                &or_out(data, TEST_FILE),
                scene.as_deref(),
            )?;
            for (t, r) in s.thresholds.iter().zip(&s.recall) {
                println!("recall @ {}/{}° (gamma {}): {r:.2}", t[0], t[1], s.gamma);
            }
            if let (Some(t), Some(r)) = (s.median_translation, s.median_rotation_deg) {
                println!("median error: {t:.4} / {r:.2}°");
            }
            if let Some(c) = &s.coverage {
                println!(
                    "ambiguous queries with all modes covered: {}/{}",
                    c.ambiguous_all_covered, c.ambiguous_queries
                );
                println!(
                    "unambiguous queries concentrated on their mode: {}/{}",
                    c.unambiguous_concentrated, c.unambiguous_queries
                );
            }
            println!("wrote {}", ws.out.display());
        }
        Command::Sample {
            checkpoint,
            index,
            data,
            features,
            m,
            seed,
            plot,
        } => {
            let query = match (index, features) {
                (_, Some(f)) => Query::Features(f),
                (Some(index), None) => Query::Index {
                    data: or_out(data, TEST_FILE),
                    index,
                },
                (None, None) => {
                    return Err(CliError::Usage("give --index or --features".into()));
                }
            };
            let req = SampleRequest {
                query,
                m: m.unwrap_or(ws.config.samples),
                seed: seed.unwrap_or(ws.config.eval_seed),
                plot_axis: plot.map(|a| match a.as_str() {
                    "x" => 0,
                    "y" => 1,
                    _ => 2,
                }),
            };
            let out = cmd_sample(&ws, &or_out(checkpoint, CHECKPOINT_FILE), &req)?;
            println!("wrote {}", out.samples.display());
            if let Some(p) = out.kde_plot {
                println!("wrote {}", p.display());
                println!("density maxima at {:?}", out.density_maxima);
            }
        }
        Command::Bench {
            checkpoint,
            m,
            repetitions,
        } => {
            let s = cmd_bench(&ws, &or_out(checkpoint, CHECKPOINT_FILE), m, repetitions)?;
            println!(
                "{} samples: {:.3} ± {:.3} ms over {} repetitions",
                s.samples, s.mean_ms, s.std_ms, s.repetitions
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
