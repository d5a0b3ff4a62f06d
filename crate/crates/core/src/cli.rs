//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::attribution::{Explainer, Method};
use crate::error::{Error, Result};
use crate::harness::{
    label_count, load_json_dir, load_ntu_dir, load_or_train, render_summary, run_experiment,
    sample_seeds, split_holdout, synthetic_dataset, ExperimentConfig,
};
use crate::metrics::Classifier;
use crate::model::{load_checkpoint, TrainHyperparams};
use crate::skeleton::synth::{class_count, DEFAULT_FRAMES, DEFAULT_NOISE_SIGMA};
use crate::skeleton::{build_ntu_graph, parse_ntu_file, SkeletonSequence};

#[derive(Debug, Parser)]
#[command(name = "skelxai", version, about = "CAM / Grad-CAM faithfulness and stability on skeleton action recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic samples as JSON files.
    GenData(GenDataArgs),
    /// Train the classifier and write a checkpoint.
    Train(TrainArgs),
    /// Write the attribution of one sample as JSON.
    Explain(ExplainArgs),
    /// Run a metric sweep described by a config file.
    Evaluate(EvaluateArgs),
    /// Print the summary table and plot series of a finished evaluation.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = class_count())]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = DEFAULT_FRAMES)]
    frames: usize,
    #[arg(long, default_value_t = DEFAULT_NOISE_SIGMA)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Directory of sample JSON or NTU .skeleton files; synthetic data is
    /// generated when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long, default_value_t = 0.2)]
    holdout: f64,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long, default_value = "model.json")]
    checkpoint: PathBuf,
    /// Sample file (.json or .skeleton), or a sample id looked up in --data-dir.
    #[arg(long)]
    sample: String,
    #[arg(long, default_value = ".")]
    data_dir: PathBuf,
    #[arg(long, default_value = "cam")]
    method: Method,
    /// Apply ReLU to the Grad-CAM map.
    #[arg(long)]
    rectify: bool,
    /// Master seed; only the random baseline uses it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "explanations")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Output directory of a previous `evaluate` run.
    #[arg(long, default_value = "results")]
    dir: PathBuf,
}

fn load_dir(dir: &Path) -> Result<Vec<SkeletonSequence>> {
    let ntu = load_ntu_dir(dir)?;
    let data = if ntu.is_empty() { load_json_dir(dir)? } else { ntu };
    if data.is_empty() {
        return Err(Error::Data(format!("no .json or .skeleton samples in {}", dir.display())));
    }
    Ok(data)
}

fn read_sample(path: &Path) -> Result<SkeletonSequence> {
    if path.extension().is_some_and(|e| e == "skeleton") {
        parse_ntu_file(path)
    } else {
        SkeletonSequence::read_json(path)
    }
}

fn gen_data(args: &GenDataArgs) -> Result<()> {
    let s = &args.synth;
    let data = synthetic_dataset(s.classes, s.per_class, s.frames, s.noise, s.seed)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for seq in &data {
        seq.write_json(&args.out.join(format!("{}.json", seq.sample_id)))?;
    }
    println!("wrote {} samples to {}", data.len(), args.out.display());
    Ok(())
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let s = &args.synth;
    let (data, classes) = match &args.data {
        Some(dir) => {
            let data = load_dir(dir)?;
            let c = label_count(&data).max(2);
            (data, c)
        }
        None => (synthetic_dataset(s.classes, s.per_class, s.frames, s.noise, s.seed)?, s.classes),
    };
    if !(0.0..1.0).contains(&args.holdout) {
        return Err(Error::Config(format!("holdout must be in [0, 1), got {}", args.holdout)));
    }
    let (train_set, held) = split_holdout(data, args.holdout);
    let defaults = TrainHyperparams::default();
    let hp = TrainHyperparams {
        epochs: args.epochs.unwrap_or(defaults.epochs),
        lr: args.lr.unwrap_or(defaults.lr),
        batch: args.batch.unwrap_or(defaults.batch),
        ..defaults
    };
    if args.out.exists() {
        std::fs::remove_file(&args.out).map_err(|e| Error::io(&args.out, e))?;
    }
    let graph = build_ntu_graph();
    let model = load_or_train(&args.out, true, &hp, &train_set, &held, classes, &graph, s.seed)?;
    for e in &model.history {
        match e.validation_accuracy {
            Some(v) => println!(
                "epoch {:>3}  loss {:.5}  train acc {:.4}  held-out acc {:.4}",
                e.epoch + 1,
                e.loss,
                e.train_accuracy,
                v
            ),
            None => println!("epoch {:>3}  loss {:.5}  train acc {:.4}", e.epoch + 1, e.loss, e.train_accuracy),
        }
    }
    println!("checkpoint written to {}", args.out.display());
    Ok(())
}

fn explain(args: &ExplainArgs) -> Result<()> {
    let direct = PathBuf::from(&args.sample);
    let path = if direct.is_file() {
        direct
    } else {
        let p = args.data_dir.join(format!("{}.json", args.sample));
        if !p.is_file() {
            return Err(Error::Data(format!(
                "sample {} not found (tried {} and {})",
                args.sample,
                direct.display(),
                p.display()
            )));
        }
        p
    };
    let seq = read_sample(&path)?;
    let params = load_checkpoint(&args.checkpoint)?.to_params()?;
    let graph = build_ntu_graph();
    let (_, trace) = Classifier::new(&params, &graph).run(&seq)?;
    let explainer = Explainer {
        method: args.method,
        rectify: args.rectify,
        random_seed: sample_seeds(args.seed, &seq.sample_id).random,
    };
    let class_id = trace.predicted_class;
    let attr = explainer.explain(&params, &trace, class_id, None)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let out = args.out.join(format!("{}.{}.json", seq.sample_id, args.method));
    attr.export(&seq.sample_id, class_id).write_json(&out)?;
    println!("{}", out.display());
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let outcome = run_experiment(&cfg)?;
    print!("{}", render_summary(&outcome.output_dir)?);
    println!("\nresults written to {}", outcome.output_dir.display());
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let text = render_summary(&args.dir)?;
    let path = args.dir.join("summary.txt");
    std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    print!("{text}");
    Ok(())
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns the process exit code; errors are printed as one line on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Explain(a) => explain(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}
