//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::config;
use crate::data::{self, generate_corpus, load_split, CorpusSpec, TaskKind};
use crate::error::{Error, Result};
use crate::eval::{evaluate, heatmap};
use crate::trainer::{check_combined_gradient, load_checkpoint, train_to_disk, TrainConfig, Trainer};

#[derive(Parser, Debug)]
#[command(name = "mlalign", version, about = "Multi-level video-language alignment training")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus (train and test splits).
    GenData {
        /// Corpus spec as key=value lines.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Write packed binary features with a manifest.
        #[arg(long)]
        binary: bool,
    },
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split and write a key=value report.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Export the language-frame similarity grid of one QA sample as CSV.
    Heatmap {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        sample: String,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Finite-difference check of the full training objective.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint instead of initializing.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Any other config key, as KEY=VALUE.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn read_pairs(path: Option<&Path>) -> Result<Vec<(String, String)>> {
    match path {
        Some(p) => Ok(config::parse_kv(&std::fs::read_to_string(p)?)?.into_iter().map(|(_, k, v)| (k, v)).collect()),
        None => Ok(Vec::new()),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn gen_data(spec: Option<&Path>, out: &Path, binary: bool) -> Result<()> {
    let spec: CorpusSpec = config::apply(&CorpusSpec::default(), &read_pairs(spec)?)?;
    let corpus = generate_corpus(&spec)?;
    std::fs::create_dir_all(out)?;
    for (name, ds) in [("train", &corpus.train), ("test", &corpus.test)] {
        let (text, manifest, features) = data::split_paths(out, name);
        if binary {
            data::write_binary_dataset(&manifest, &features, ds)?;
        } else {
            data::write_dataset(&text, ds)?;
        }
    }
    std::fs::write(out.join("spec.conf"), config::to_kv(&spec))?;
    println!("wrote {} train / {} test {} samples to {}", spec.n_train, spec.n_test, spec.task, out.display());
    Ok(())
}

fn resolve_train_config(args: &TrainArgs, task: TaskKind) -> Result<TrainConfig> {
    let mut pairs = read_pairs(args.config.as_deref())?;
    let flags = [
        ("lambda1", args.lambda1.map(|v| v.to_string())),
        ("lambda2", args.lambda2.map(|v| v.to_string())),
        ("alpha", args.alpha.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("lr", args.lr.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
    ];
    pairs.extend(flags.into_iter().filter_map(|(k, v)| Some((k.to_string(), v?))));
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    config::apply(&TrainConfig::for_task(task), &pairs)
}

fn train(args: &TrainArgs) -> Result<()> {
    let data = load_split(&args.data, "train")?;
    let mut cfg = resolve_train_config(args, data.task)?;
    cfg.dims.vocab_size = data.vocab_size();
    cfg.dims.static_dim = data.static_dim;
    cfg.dims.motion_dim = data.motion_dim;
    cfg.validate()?;
    let mut trainer = match &args.resume {
        Some(path) => {
            let mut t = load_checkpoint(path)?;
            t.config.epochs = cfg.epochs;
            if t.config != cfg {
                warn!("resuming: settings stored in {} take precedence over the given ones", path.display());
            }
            info!("resuming at epoch {} of {}", t.epoch, cfg.epochs);
            cfg = t.config.clone();
            t
        }
        None => Trainer::new(cfg.clone())?,
    };
    std::fs::write(sibling(&args.out, ".conf"), config::to_kv(&cfg))?;
    let log = train_to_disk(&mut trainer, &data, &args.out, &sibling(&args.out, ".log.jsonl"))?;
    if let Some(last) = log.last() {
        println!(
            "epoch {}: task {:.4} glob {:.4} seg {:.4} train {:.4}",
            last.epoch, last.l_task, last.l_glob, last.l_seg, last.l_train
        );
    }
    println!("checkpoint written to {}", args.out.display());
    Ok(())
}

fn eval(data: &Path, ckpt: &Path, report: &Path, split: &str) -> Result<()> {
    let ds = load_split(data, split)?;
    let t = load_checkpoint(ckpt)?;
    t.config.check_data(&ds)?;
    let r = evaluate(&t.params, &ds)?;
    r.write(report)?;
    print!("{}", r.to_kv());
    Ok(())
}

fn export_heatmap(data: &Path, sample: &str, ckpt: &Path, out: &Path, split: &str) -> Result<()> {
    let ds = load_split(data, split)?;
    let t = load_checkpoint(ckpt)?;
    t.config.check_data(&ds)?;
    let s = ds.find(sample).ok_or_else(|| Error::Data(format!("no sample `{sample}` in the {split} split")))?;
    heatmap(&t.params, s, &ds.vocab)?.write_csv(out)?;
    println!("heatmap written to {}", out.display());
    Ok(())
}

fn gradcheck(config_path: Option<&Path>, seed: u64) -> Result<()> {
    let base = TrainConfig {
        alignment: crate::alignment::AlignmentConfig { lambda1: 1.0, lambda2: 1.0, ..Default::default() },
        ..Default::default()
    };
    let cfg: TrainConfig = config::apply(&base, &read_pairs(config_path)?)?;
    let check = check_combined_gradient(&cfg.alignment, seed)?;
    println!(
        "max_rel_error={:e} coordinates={} worst_param={} worst_index={}",
        check.max_rel_error,
        check.coordinates,
        crate::model::PARAM_NAMES[check.worst_param],
        check.worst_index
    );
    if check.max_rel_error >= 1e-4 {
        return Err(Error::Numerical(format!("gradient check failed: max relative error {:e}", check.max_rel_error)));
    }
    Ok(())
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 on usage errors, 2 on data or configuration errors, 3 on numerical
/// errors.
pub fn run<I, A>(argv: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let result = match &cli.command {
        Command::GenData { spec, out, binary } => gen_data(spec.as_deref(), out, *binary),
        Command::Train(args) => train(args),
        Command::Eval { data, ckpt, report, split } => eval(data, ckpt, report, split),
        Command::Heatmap { data, sample, ckpt, out, split } => export_heatmap(data, sample, ckpt, out, split),
        Command::Gradcheck { config, seed } => gradcheck(config.as_deref(), *seed),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
