//! The `fingerdiff` command line.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{directory_digest, generate_synthetic_dataset, load_manifest, VideoRecord};
use crate::error::{Error, Result};
use crate::evaluation::{
    condition_bars_svg, cross_generator_matrix, embed_video, emit_report, evaluate, heatmap_svg, load_report,
    run_ablation, AblationAxis, ReportArtifacts,
};
use crate::model::Embedding;
use crate::training::{load_checkpoint, train};

#[derive(Debug, Parser)]
#[command(name = "fingerdiff", version, about = "Driver verification for synthetic talking-head video")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set model.clip_length=32`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Sets both `train.seed` and `synth.motion_seed` (before `--set`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root; defaults to $FINGERDIFF_OUT, then `[paths] out_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset and its manifest.
    SynthData,
    /// Train a model on the configured manifest.
    Train,
    /// Evaluate a checkpoint and write the report and figures.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train one model per generator and evaluate on all of them.
    CrossGen,
    /// Train and evaluate every setting along one axis.
    Ablate {
        #[arg(long)]
        axis: AblationAxis,
    },
    /// Embed one video (a directory of frames).
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        video: PathBuf,
        /// Output file; printed to stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare a video against an enrolled embedding.
    Verify {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        video: PathBuf,
        /// Embedding file written by `embed`.
        #[arg(long)]
        enrolled: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Re-render figures from a saved report.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

impl Command {
    fn dir_name(&self) -> &'static str {
        match self {
            Command::SynthData => "data",
            Command::Train => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::CrossGen => "cross_gen",
            Command::Ablate { .. } => "ablate",
            Command::Embed { .. } => "embed",
            Command::Verify { .. } => "verify",
            Command::Report { .. } => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingFile {
    pub video_path: PathBuf,
    pub checkpoint: PathBuf,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub score: f64,
    pub threshold: f64,
    pub decision: String,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let category = e.category();
            eprintln!("error[{}]: {e}", category.as_str());
            category.exit_code()
        }
    }
}

/// Resolves configuration from the CLI flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut overrides = Vec::new();
    if let Some(seed) = cli.seed {
        overrides.push(format!("train.seed={seed}"));
        overrides.push(format!("synth.motion_seed={seed}"));
    }
    overrides.extend(cli.overrides.iter().cloned());
    RunConfig::resolve(cli.config.as_deref(), &overrides)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn embed_one(checkpoint: &Path, video: &Path) -> Result<Embedding> {
    let (mut model, _) = load_checkpoint(checkpoint, None)?;
    embed_video(&VideoRecord::from_frame_dir(video)?, &mut model)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    log::info!("resolved config:\n{}", cfg.to_toml());
    let root = cfg.out_root(cli.out.as_deref());
    let out = match &cli.command {
        Command::SynthData => cfg.data_dir(&root),
        other => root.join(other.dir_name()),
    };
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    if !matches!(cli.command, Command::SynthData) {
        let path = out.join("resolved_config.toml");
        fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(&path, e))?;
    }

    match &cli.command {
        Command::SynthData => {
            let manifest = generate_synthetic_dataset(&cfg.synth, &out)?;
            println!("wrote {} videos to {}", manifest.len(), out.display());
            println!("dataset sha256 {}", directory_digest(&out)?);
        }
        Command::Train => {
            let manifest = load_manifest(&cfg.manifest_path(&root))?;
            let outcome = train(&manifest, &cfg.model, &cfg.train, &cfg.objective, &out)?;
            println!("final checkpoint {}", outcome.final_checkpoint.display());
            if let Some(best) = &outcome.best_checkpoint {
                println!("best checkpoint {}", best.display());
            }
            println!("metrics {}", outcome.metrics_path.display());
        }
        Command::Evaluate { checkpoint } => {
            let manifest = load_manifest(&cfg.manifest_path(&root))?;
            let (mut model, _) = load_checkpoint(checkpoint, None)?;
            let report = evaluate(&manifest, &mut model, &cfg.eval)?;
            emit_report(&report, &ReportArtifacts::default(), &out)?;
            println!("mean AUC {:.4} over {} targets", report.mean_auc, report.per_target_auc.len());
            println!("report {}", out.join(crate::evaluation::REPORT_FILE).display());
        }
        Command::CrossGen => {
            let manifest = load_manifest(&cfg.manifest_path(&root))?;
            let matrix = cross_generator_matrix(&manifest, &cfg.recipe(), &out)?;
            write_json(&out.join("cross_gen.json"), &matrix)?;
            let svg = heatmap_svg(&matrix.train_generators, &matrix.test_generators, &matrix.auc, "Cross-generator AUC (rows: train)");
            let path = out.join("crossgen_heatmap.svg");
            fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
            for (g, row) in matrix.train_generators.iter().zip(&matrix.auc) {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
                println!("{g}\t{}", cells.join("\t"));
            }
        }
        Command::Ablate { axis } => {
            let manifest = load_manifest(&cfg.manifest_path(&root))?;
            let table = run_ablation(&manifest, &cfg.recipe(), *axis, &out)?;
            let tsv = out.join(format!("ablation_{axis}.tsv"));
            fs::write(&tsv, table.to_tsv()).map_err(|e| Error::io(&tsv, e))?;
            write_json(&out.join(format!("ablation_{axis}.json")), &table)?;
            let labels: Vec<String> = table.rows.iter().map(|r| r.setting.clone()).collect();
            let values: Vec<f64> = table.rows.iter().map(|r| r.mean_auc).collect();
            let path = out.join("condition_bars.svg");
            fs::write(&path, condition_bars_svg(&labels, &values, &format!("Mean AUC by {axis}")))
                .map_err(|e| Error::io(&path, e))?;
            print!("{}", table.to_tsv());
        }
        Command::Embed { checkpoint, video, output } => {
            let file = EmbeddingFile {
                video_path: video.clone(),
                checkpoint: checkpoint.clone(),
                embedding: embed_one(checkpoint, video)?,
            };
            match output {
                Some(path) => write_json(path, &file)?,
                None => println!("{}", serde_json::to_string(&file).map_err(|e| Error::Serde(e.to_string()))?),
            }
        }
        Command::Verify { checkpoint, video, enrolled, threshold } => {
            let text = fs::read_to_string(enrolled).map_err(|e| Error::io(enrolled, e))?;
            let enrolled: EmbeddingFile =
                serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", enrolled.display())))?;
            let probe = embed_one(checkpoint, video)?;
            if probe.dim() != enrolled.embedding.dim() {
                return Err(Error::Shape(format!(
                    "enrolled embedding has {} dimensions, model produces {}",
                    enrolled.embedding.dim(),
                    probe.dim()
                )));
            }
            let score = probe.cosine(&enrolled.embedding);
            let result = Verification {
                score,
                threshold: *threshold,
                decision: if score >= *threshold { "accept" } else { "reject" }.to_string(),
            };
            println!("{}", serde_json::to_string(&result).map_err(|e| Error::Serde(e.to_string()))?);
        }
        Command::Report { input } => {
            let file = load_report(input)?;
            let written = emit_report(&file.report, &file.artifacts, &out)?;
            for p in written {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}
