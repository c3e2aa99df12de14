use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use somni_core::synth::{assemble_dataset, write_dataset};
use somni_core::{PrecisionGuard, SOmninet};
use somni_harness::experiments::{run_sa_order_ablation, run_twoquestion_experiment, ExperimentReport, RunResult};
use somni_harness::export::{export_attention, load_for_export};
use somni_harness::{build_model, load_corpus, run_eval, run_train, HarnessError, Result, RunConfig, TaskMetrics};

#[derive(Parser)]
#[command(name = "somni", about = "Train, evaluate and probe multimodal cross-cache attention models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed (the data seed for `generate`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Checkpoint directory written by `train`.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured toy datasets.
    Generate,
    /// Train a model and write checkpoints and metrics.
    Train,
    /// Evaluate a checkpoint on the test split.
    Eval,
    /// Export the cross-cache attention maps of one test sample.
    AttnExport {
        /// Index of the test sample.
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
    /// Run a multi-seed comparison.
    Experiment {
        #[arg(value_enum)]
        which: Experiment,
    },
    /// Print parameter counts of the configured model.
    Params,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    TwoQuestion,
    SaOrder,
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| HarnessError::Run(format!("--{flag} is required")))
}

fn print_metrics(split: &str, metrics: &[TaskMetrics]) {
    for m in metrics {
        println!("{split} {}: {} {:.4} (loss {:.4}, {} samples)", m.task, m.kind.name(), m.value, m.loss, m.samples);
    }
}

fn generate(cli: &Cli) -> Result<()> {
    let cfg = config(cli)?;
    let out = required(&cli.out, "out")?;
    for (k, &task) in cfg.tasks.iter().enumerate() {
        let mut d = cfg.data.clone();
        d.task = task;
        d.seed = cli.seed.unwrap_or(cfg.data.seed).wrapping_add(k as u64);
        let ds = assemble_dataset(&d)?;
        let dir = if cfg.tasks.len() == 1 { out.to_path_buf() } else { out.join(task.name()) };
        write_dataset(&ds, &dir)?;
        for w in &ds.warnings {
            eprintln!("warning: {w}");
        }
        let sizes: Vec<String> = ds.splits.iter().map(|s| format!("{} {}", s.name, s.samples.len())).collect();
        println!("wrote {} to {} ({})", task.name(), dir.display(), sizes.join(", "));
    }
    Ok(())
}

fn train(cli: &Cli) -> Result<()> {
    let cfg = config(cli)?;
    let out = required(&cli.out, "out")?;
    let corpus = load_corpus(&cfg)?;
    for w in &corpus.warnings {
        eprintln!("warning: {w}");
    }
    let outcome = run_train(&cfg, &corpus, Some(out))?;
    let last = outcome.log.last_epoch().unwrap_or(0);
    for r in outcome.log.rows().iter().filter(|r| r.epoch == last) {
        println!("epoch {last} {} {}: loss {:.4}, {} {:.4}", r.split, r.task, r.loss, r.kind.name(), r.value);
    }
    println!("final training loss {:.6}; best validation epoch {}; checkpoints in {}", outcome.final_loss, outcome.best_epoch, out.display());
    Ok(())
}

fn eval(cli: &Cli) -> Result<()> {
    let checkpoint = required(&cli.checkpoint, "checkpoint")?;
    let cfg = match &cli.config {
        Some(_) => config(cli)?,
        None => RunConfig::load(&checkpoint.join("run.txt"))?,
    };
    let _guard = PrecisionGuard::new(cfg.train.precision);
    let model = SOmninet::load(checkpoint)?;
    let corpus = load_corpus(&cfg)?;
    if model.cfg.tasks != corpus.tasks {
        return Err(HarnessError::Run("the checkpoint's task heads do not match the configured data".into()));
    }
    let metrics = run_eval(&model, &corpus.test)?;
    print_metrics("test", &metrics);
    if let Some(out) = &cli.out {
        std::fs::create_dir_all(out)?;
        let mut csv = String::from("task,metric,samples,loss,value\n");
        for m in &metrics {
            csv.push_str(&format!("{},{},{},{},{}\n", m.task, m.kind.name(), m.samples, m.loss, m.value));
        }
        std::fs::write(out.join("eval.csv"), csv)?;
    }
    Ok(())
}

fn attn_export(cli: &Cli, sample: usize) -> Result<()> {
    let checkpoint = required(&cli.checkpoint, "checkpoint")?;
    let out = required(&cli.out, "out")?;
    let (model, mut cfg) = load_for_export(checkpoint)?;
    if cli.config.is_some() {
        cfg = config(cli)?;
    }
    let _guard = PrecisionGuard::new(cfg.train.precision);
    let corpus = load_corpus(&cfg)?;
    let s = corpus.test.get(sample).ok_or_else(|| HarnessError::Run(format!("test split has {} samples; no sample {sample}", corpus.test.len())))?;
    let maps = export_attention(&model, s, out)?;
    println!("exported {} attention maps to {}", maps.len(), out.display());
    Ok(())
}

fn experiment(cli: &Cli, which: Experiment) -> Result<()> {
    let cfg = config(cli)?;
    let corpus = load_corpus(&cfg)?;
    let mut progress = |r: &RunResult| {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        eprintln!("{} seed {}: accuracy {:.4}, mass {}, row std {}", r.variant, r.seed, r.accuracy, opt(r.relevant_mass), opt(r.row_std));
    };
    let report: ExperimentReport = match which {
        Experiment::TwoQuestion => run_twoquestion_experiment(&cfg, &corpus, &mut progress)?,
        Experiment::SaOrder => run_sa_order_ablation(&cfg, &corpus, &mut progress)?,
    };
    print!("{}", report.summary());
    if let Some(out) = &cli.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join(format!("{}.csv", report.name)), report.to_csv())?;
    }
    Ok(())
}

fn params(cli: &Cli) -> Result<()> {
    let cfg = config(cli)?;
    let corpus = load_corpus(&cfg)?;
    let model = build_model(&cfg, &corpus)?;
    println!("trainable parameters: {}", model.count_params(false));
    println!("excluding task heads: {}", model.count_params(true));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate => generate(&cli),
        Command::Train => train(&cli),
        Command::Eval => eval(&cli),
        Command::AttnExport { sample } => attn_export(&cli, *sample),
        Command::Experiment { which } => experiment(&cli, *which),
        Command::Params => params(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
