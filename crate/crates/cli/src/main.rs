use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ircal_core::dataset::{load_image, load_manifest, save_png, write_synthetic_dataset, BitDepth, Split, SynthOptions};
use ircal_core::evaluation::{evaluate_pairs, evaluation_pairs, qualitative_grid, LoadedCheckpoint, Translator};
use ircal_core::training::checkpoint::write_self_test;
use ircal_core::training::{parse_resolution, train, TrainConfig, Trainer};
use ircal_core::Error;

/// Rows in the qualitative grid written by `eval`.
const GRID_ROWS: usize = 8;

#[derive(Parser)]
#[command(name = "ircal", version, about = "Thermal image calibration with cycle-consistent translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic paired dataset and its manifest.
    Synth(SynthArgs),
    /// Train both translators on a manifest.
    Train(TrainArgs),
    /// Score a checkpoint on the test split and render a comparison grid.
    Eval(EvalArgs),
    /// Translate one domain-A image to domain B.
    Translate(TranslateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Number of A/B pairs.
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Domain-B resolution as HxW; domain A is half of it.
    #[arg(long, default_value = "64x64")]
    res: String,
    /// Heat blobs per image.
    #[arg(long, default_value_t = 3)]
    blobs: usize,
    #[arg(long, default_value_t = 0.05)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    test_fraction: f64,
    /// Also write a resize-of-reference checkpoint to this directory.
    #[arg(long)]
    self_test_checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// key=value config file. Optional with --resume.
    #[arg(long, required_unless_present = "resume")]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Continue the run in --out from its latest checkpoint.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint, checkpoints/ or run directory.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// RGB condition at the input's size. Omitted means all zeros.
    #[arg(long)]
    rgb: Option<PathBuf>,
    /// Output PNG (16-bit RGB).
    #[arg(long)]
    out: PathBuf,
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } | Error::Decode { .. } => 1,
            Error::NonFinite { .. } => 3,
            Error::Checkpoint(_) => 4,
            _ => 2,
        };
        Failure { code, err: e.into() }
    }
}

fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint, Failure> {
    LoadedCheckpoint::load(path).map_err(|e| Failure {
        code: 4,
        err: anyhow::Error::new(e).context(format!("cannot load checkpoint {}", path.display())),
    })
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let resolution = parse_resolution(&args.res)?;
    let opts = SynthOptions {
        n_pairs: args.n,
        seed: args.seed,
        resolution,
        n_blobs: args.blobs,
        val_fraction: args.val_fraction,
        test_fraction: args.test_fraction,
    };
    let manifest = write_synthetic_dataset(&args.out, &opts)?;
    if let Some(dir) = &args.self_test_checkpoint {
        let (h, w) = resolution;
        write_self_test(dir, (h / 2, w / 2), resolution)?;
    }
    println!("{}", manifest.display());
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<(), Failure> {
    let manifest = load_manifest(&args.manifest)?;
    let summary = if args.resume {
        Trainer::resume(&args.out)?.run(&manifest, None)?
    } else {
        let path = args.config.as_deref().expect("clap enforces --config");
        let cfg = TrainConfig::from_file(path)?;
        train(&manifest, &cfg, &args.out)?
    };
    log::info!(
        "finished {} steps ({} per epoch) in {}",
        summary.steps,
        summary.steps_per_epoch,
        summary.run_dir.display()
    );
    if let Some(ck) = &summary.last_checkpoint {
        println!("{}", ck.display());
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let fe = ckpt.eval_extractor().map_err(|e| Failure {
        code: 4,
        err: e.into(),
    })?;
    let manifest = load_manifest(&args.manifest)?;
    let (pairs, skipped) = evaluation_pairs(&manifest, args.split, ckpt.meta.res_a, ckpt.meta.res_b)?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset(format!("all {skipped} {} samples lack a domain-B reference", args.split)).into());
    }
    let report = evaluate_pairs(&ckpt.translator, &fe, &pairs, skipped)?;
    report.write(&args.out, args.split)?;
    let rows = pairs.len().min(GRID_ROWS);
    qualitative_grid(&ckpt.translator, &pairs[..rows], &args.out.join("grid.png"))?;
    println!("{}", report.summary_line());
    Ok(())
}

fn translate(args: TranslateArgs) -> Result<(), Failure> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let Translator::Network(g) = &ckpt.translator else {
        return Err(Failure {
            code: 4,
            err: anyhow::anyhow!("checkpoint {} has no A->B generator", ckpt.dir.display()),
        });
    };
    let ir = load_image(&args.input)?;
    let rgb = args.rgb.as_deref().map(load_image).transpose()?;
    if let Some(rgb) = &rgb {
        if rgb.dims() != ir.dims() {
            return Err(Error::Shape(format!(
                "--rgb is {}x{} but --input is {}x{}",
                rgb.width(),
                rgb.height(),
                ir.width(),
                ir.height()
            ))
            .into());
        }
    }
    let out = g.translate(&ir, rgb.as_ref())?;
    save_png(&out, &args.out, BitDepth::Sixteen)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => eval(a),
        Command::Translate(a) => translate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, err }) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}

