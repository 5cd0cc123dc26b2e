use std::path::PathBuf;
use std::process::ExitCode;

use choreo_cli::anim::{export_anim, import_anim, AnimFormat};
use choreo_cli::config::{PipelineConfig, Profile};
use choreo_cli::error::{CliError, Result, EXIT_OK};
use choreo_cli::pipeline::{self, RunOptions, StartCodes};
use clap::{Args, Parser, Subcommand};
use log::info;

#[derive(Parser)]
#[command(name = "choreo", version, about = "Music-conditioned dance generation from pose codebooks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML); overrides --profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    profile: Profile,
    /// Seed applied to every seeded stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Stop after this many steps (epochs for finetune-ac) counted from zero.
    #[arg(long)]
    steps: Option<u64>,
    /// Continue from the stage's checkpoint.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    checkpoints: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus with known beat grids.
    GenSynth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        sequences: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Train the upper and lower pose VQ-VAEs
    TrainVqvae(TrainArgs),
    /// Train the code predictor on the coded corpus
    TrainGpt(TrainArgs),
    /// Finetune the predictor with actor-critic rewards
    FinetuneAc(TrainArgs),
    /// Generate a dance for one music feature file.
    Generate {
        #[arg(long)]
        music: PathBuf,
        /// Code steps to generate.
        #[arg(long)]
        length: usize,
        #[arg(long)]
        out: PathBuf,
        /// Starting upper-body code; random from --seed when omitted.
        #[arg(long, requires = "start_lower")]
        start_upper: Option<usize>,
        #[arg(long, requires = "start_upper")]
        start_lower: Option<usize>,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Score a directory of generated motions against a reference directory.
    Evaluate {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode single codes of one VQ-VAE checkpoint.
    InspectCodebook {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Decode only this code.
        #[arg(long)]
        code: Option<usize>,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(long, default_value_t = 60.0)]
        fps: f32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a `.motn` file to CSV or JSON.
    ExportAnim {
        input: PathBuf,
        output: PathBuf,
        /// Defaults to the output extension.
        #[arg(long, value_enum)]
        format: Option<AnimFormat>,
    },
    /// Convert CSV or JSON back to `.motn`.
    ImportAnim {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, value_enum)]
        format: Option<AnimFormat>,
    },
}

fn resolve_config(c: &Common) -> Result<PipelineConfig> {
    let cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::profile(c.profile),
    };
    let cfg = match c.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn format_for(path: &std::path::Path, explicit: Option<AnimFormat>) -> Result<AnimFormat> {
    explicit
        .or_else(|| AnimFormat::from_path(path))
        .ok_or_else(|| CliError::Config(format!("cannot infer format of {}; pass --format", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    info!("config hash {}", cfg.hash());
    log::debug!("resolved config:\n{}", cfg.to_toml());
    let train = |a: &TrainArgs| {
        (
            a.corpus.clone().unwrap_or_else(|| cfg.paths.corpus.clone()),
            a.checkpoints.clone().unwrap_or_else(|| cfg.paths.checkpoints.clone()),
            RunOptions {
                stop_at: a.steps,
                resume: a.resume,
            },
        )
    };
    match cli.command {
        Command::GenSynth { out, sequences, frames } => {
            let mut spec = cfg.corpus.clone();
            if let Some(n) = sequences {
                spec.num_sequences = n;
            }
            if let Some(f) = frames {
                spec.frames = f;
            }
            let out = out.unwrap_or_else(|| cfg.paths.corpus.clone());
            pipeline::gen_synth(&spec, cfg.feature_dim, &out)?;
        }
        Command::TrainVqvae(a) => {
            let (corpus, ckpt, opts) = train(&a);
            pipeline::train_vqvae(&cfg, &corpus, &ckpt, opts)?;
        }
        Command::TrainGpt(a) => {
            let (corpus, ckpt, opts) = train(&a);
            pipeline::train_gpt(&cfg, &corpus, &ckpt, opts)?;
        }
        Command::FinetuneAc(a) => {
            let (corpus, ckpt, opts) = train(&a);
            pipeline::finetune(&cfg, &corpus, &ckpt, opts)?;
        }
        Command::Generate {
            music,
            length,
            out,
            start_upper,
            start_lower,
            checkpoints,
        } => {
            let start = match (start_upper, start_lower) {
                (Some(u), Some(l)) => StartCodes::Codes(u, l),
                _ => StartCodes::Seed(cli.common.seed.unwrap_or(0)),
            };
            let ckpt = checkpoints.unwrap_or_else(|| cfg.paths.checkpoints.clone());
            pipeline::generate(&ckpt, &music, start, length, &out)?;
        }
        Command::Evaluate { generated, reference, out } => {
            let out = out.unwrap_or_else(|| cfg.paths.output.clone());
            let r = pipeline::evaluate(&cfg, &generated, &reference, &out)?;
            println!(
                "FID_k {:.4}  FID_g {:.4}  Div_k {:.4}  Div_g {:.4}  BAS {:.4}",
                r.fid_k, r.fid_g, r.div_k, r.div_g, r.bas
            );
        }
        Command::InspectCodebook {
            checkpoint,
            code,
            steps,
            fps,
            out,
        } => {
            for r in pipeline::inspect_codebook(&checkpoint, code, steps, fps, &out)? {
                println!("code {:4}  usage {:8}  interior displacement {:.3e}", r.code, r.usage, r.interior_displacement);
            }
        }
        Command::ExportAnim { input, output, format } => {
            let f = format_for(&output, format)?;
            export_anim(&input, &output, f)?;
        }
        Command::ImportAnim { input, output, format } => {
            let f = format_for(&input, format)?;
            import_anim(&input, &output, f)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
