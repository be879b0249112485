//! Argument parsing and subcommand execution.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use oneshot_motion::analysis::{default_probe_seeds, stage_similarity_matrix, DEFAULT_PROBE_COUNT};
use oneshot_motion::apps::{self, MaskSpec, DEFAULT_COMPOSE_LEVEL};
use oneshot_motion::evaluation::{evaluate, MetricsConfig};
use oneshot_motion::network::{derive_seed, load_checkpoint_file, save_checkpoint_file, Noise, PyramidModel};
use oneshot_motion::training::{train_all_with_progress, TrainConfig};
use serde_json::json;

use crate::io::{self, load_motion, write_motion, TrainingLock};
use crate::service::{self, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "oneshot", version, about = "Train, sample and compose motion from a single clip")]
pub struct Cli {
    /// Print a machine-readable JSON result on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on one clip.
    Train(TrainArgs),
    /// Sample a motion from a trained model.
    Generate(GenerateArgs),
    /// Keep the masked joints of a reference and generate the rest.
    Compose(ComposeArgs),
    /// Regenerate selected frames of a reference.
    Inpaint(InpaintArgs),
    /// Give a content clip the fine detail of a style model.
    Restyle(RestyleArgs),
    /// Sample many independent motions.
    Crowd(CrowdArgs),
    /// Extend a reference clip in time.
    Expand(ExpandArgs),
    /// Compute quality and diversity metrics of model samples.
    Evaluate(EvaluateArgs),
    /// Stage-by-stage linear CKA similarity of a model.
    #[command(name = "analyze-cka")]
    AnalyzeCka(CkaArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training clip (.bvh or MotionJSON .json).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "abl9")]
    pub preset: String,
    /// TOML or JSON training config; replaces the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Trace CSV path; defaults to the checkpoint path with `.trace.csv`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Samples for a metrics report after training.
    #[arg(long, default_value_t = 0)]
    pub eval_samples: usize,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Output motion (.bvh or .json).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// Mask JSON with `kept_joints` or a `preset` of "lower" or "upper".
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, default_value_t = DEFAULT_COMPOSE_LEVEL)]
    pub level: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InpaintArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// Mask JSON whose `frames` intervals are regenerated.
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RestyleArgs {
    #[arg(long)]
    pub style_model: PathBuf,
    #[arg(long)]
    pub content: PathBuf,
    /// Noise seed; without it the upper stages run noise-free.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrowdArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "bvh", value_parser = ["bvh", "json"])]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub extra: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON metrics config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write the report as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CkaArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PROBE_COUNT)]
    pub probes: usize,
    /// Directory for cka.csv, cka_offset.csv, cka.json and cka.svg.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Stage gap of the offset view.
    #[arg(long, default_value_t = 2)]
    pub gap: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Checkpoint directory; falls back to $ONESHOT_MODEL_DIR.
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// TOML file with `model_dir`, `port` and `latency_budget_ms`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
}

/// Parse `argv` and run it; returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn load_model(path: &Path) -> Result<PyramidModel> {
    load_checkpoint_file(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn report(json_mode: bool, value: serde_json::Value, human: String) {
    if json_mode {
        println!("{value}");
    } else {
        println!("{human}");
    }
}

fn wrote(json_mode: bool, out: &Path, t: &oneshot_motion::motion::MotionTensor) -> Result<()> {
    write_motion(t, out)?;
    let id = io::motion_id(&io::motion_json(t)?);
    report(
        json_mode,
        json!({"out": out, "frames": t.frames(), "motion_id": id}),
        format!("wrote {} ({} frames)", out.display(), t.frames()),
    );
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let j = cli.json;
    match cli.command {
        Command::Train(a) => train(j, a),
        Command::Generate(a) => {
            let model = load_model(&a.model)?;
            let out = model.generate_full(&Noise::Seed(a.seed), a.frames)?;
            wrote(j, &a.out, &out)
        }
        Command::Compose(a) => {
            let model = load_model(&a.model)?;
            let reference = load_motion(&a.reference)?;
            let spec = MaskSpec::from_json(&fs::read_to_string(&a.mask)?)?;
            let mask = spec.joint_mask(&reference.topology)?;
            let out = apps::body_part_compose(&model, &reference, &mask, a.level, a.seed)?;
            wrote(j, &a.out, &out)
        }
        Command::Inpaint(a) => {
            let model = load_model(&a.model)?;
            let reference = load_motion(&a.reference)?;
            let spec = MaskSpec::from_json(&fs::read_to_string(&a.mask)?)?;
            let out = apps::inpaint(&model, &reference, &spec.frame_mask(reference.frames())?, a.seed)?;
            wrote(j, &a.out, &out)
        }
        Command::Restyle(a) => {
            let model = load_model(&a.style_model)?;
            let content = load_motion(&a.content)?;
            let noise = a.seed.map(Noise::Seed).unwrap_or(Noise::Zero);
            let out = apps::restyle(&model, &content, &noise)?;
            wrote(j, &a.out, &out)
        }
        Command::Crowd(a) => {
            let model = load_model(&a.model)?;
            let members = apps::crowd(&model, a.n, a.seed, a.frames)?;
            fs::create_dir_all(&a.out_dir)?;
            let mut files = Vec::new();
            for (i, m) in members.iter().enumerate() {
                let path = a.out_dir.join(format!("crowd_{i:03}.{}", a.format));
                write_motion(m, &path)?;
                files.push(path);
            }
            report(j, json!({"files": files}), format!("wrote {} motions to {}", files.len(), a.out_dir.display()));
            Ok(())
        }
        Command::Expand(a) => {
            let model = load_model(&a.model)?;
            let reference = load_motion(&a.reference)?;
            let out = apps::expand(&model, &reference, a.extra, a.seed)?;
            wrote(j, &a.out, &out)
        }
        Command::Evaluate(a) => {
            let model = load_model(&a.model)?;
            let input = load_motion(&a.input)?;
            let cfg: MetricsConfig = match &a.config {
                Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
                None => MetricsConfig::default(),
            };
            let samples = (0..a.samples as u64)
                .map(|i| model.generate_full(&Noise::Seed(derive_seed(a.seed, i)), None))
                .collect::<Result<Vec<_>, _>>()?;
            let r = evaluate(&input, &samples, &cfg)?;
            if let Some(p) = &a.csv {
                fs::write(p, r.to_csv())?;
            }
            if j {
                println!("{}", serde_json::to_string(&r)?);
            } else {
                print!("{}", r.to_csv());
            }
            Ok(())
        }
        Command::AnalyzeCka(a) => {
            let model = load_model(&a.model)?;
            let r = stage_similarity_matrix(&model, &default_probe_seeds(a.probes))?;
            fs::create_dir_all(&a.out_dir)?;
            fs::write(a.out_dir.join("cka.csv"), r.to_csv())?;
            fs::write(a.out_dir.join("cka_offset.csv"), r.offset_view_csv(a.gap))?;
            fs::write(a.out_dir.join("cka.json"), r.to_json()?)?;
            fs::write(a.out_dir.join("cka.svg"), r.to_svg())?;
            let mean = r.mean_offset_score(a.gap, 1..=r.layers);
            report(
                j,
                json!({"out_dir": a.out_dir, "pairs": r.pairs.len(), "gap": a.gap, "mean_offset_score": mean}),
                format!("{} similarity pairs; mean score at gap {}: {mean:.3}", r.pairs.len(), a.gap),
            );
            Ok(())
        }
        Command::Serve(a) => {
            let mut cfg = match &a.config {
                Some(p) => ServiceConfig::from_toml(&fs::read_to_string(p)?)?,
                None => ServiceConfig::default(),
            };
            if let Some(dir) = a.models {
                cfg.model_dir = dir;
            }
            if let Some(p) = a.port {
                cfg.port = p;
            }
            tokio::runtime::Runtime::new()?.block_on(service::serve(cfg))
        }
    }
}

fn train(j: bool, a: TrainArgs) -> Result<()> {
    let input = load_motion(&a.input)?;
    let mut cfg = match &a.config {
        Some(p) => io::load_train_config(p)?,
        None => TrainConfig::preset(&a.preset)?,
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.evaluation_samples = a.eval_samples;
    let dir = match a.out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    let _lock = TrainingLock::acquire(&dir)?;
    let (model, rep) = train_all_with_progress(&input, &cfg, |done, total| {
        if !j {
            eprintln!("trained {done}/{total} iterations");
        }
    })?;
    save_checkpoint_file(&model, &a.out)?;
    let trace = a.trace.unwrap_or_else(|| a.out.with_extension("trace.csv"));
    rep.write_trace_csv(io::create(&trace)?)?;
    report(
        j,
        json!({
            "checkpoint": a.out,
            "trace": trace,
            "final_rec": rep.final_rec,
            "total_iterations": rep.total_iterations,
            "wall_ms": rep.total_wall_ms,
            "metrics": rep.metrics,
        }),
        format!(
            "wrote {} after {} iterations (final reconstruction {:.4})",
            a.out.display(),
            rep.total_iterations,
            rep.final_rec
        ),
    );
    Ok(())
}
