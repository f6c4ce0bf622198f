//! `ggad` command line: synth, split, train, eval, gradcheck.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::data::{build_split, load_dataset, save_dataset, synth_generate, Split, SynthParams};
use crate::error::Result;
use crate::gradcheck::{self, MAX_REL_ERROR};
use crate::linalg::Rng;
use crate::metrics::{evaluate, score_nodes};
use crate::outliers::OutlierStrategy;
use crate::trainer::{embed, train, SavedModel, TrainConfig, DEFAULT_MINIBATCH_THRESHOLD};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub const MODEL_FILE: &str = "model.json";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";

#[derive(Debug, Parser)]
#[command(name = "ggad", version, about = "Semi-supervised graph anomaly detection with generated outlier nodes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic anomaly benchmark dataset directory
    Synth(SynthArgs),
    /// Sample labeled normals (and optional contamination) from a dataset
    Split(SplitArgs),
    /// Train a model and write model.json + loss_log.csv
    Train(TrainArgs),
    /// Score the test nodes of a split and report AUROC / AUPRC
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    nodes: usize,
    #[arg(long, default_value_t = 4)]
    blocks: usize,
    #[arg(long, default_value_t = 0.02)]
    p_in: f64,
    #[arg(long, default_value_t = 0.002)]
    p_out: f64,
    #[arg(long, default_value_t = 0.05)]
    anomaly_rate: f64,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset name written to meta.json
    #[arg(long, default_value = "synthetic")]
    name: String,
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SplitArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Percent of normal nodes given as labeled normals
    #[arg(long, default_value_t = 15.0)]
    train_rate: f64,
    /// Fraction of the labeled set replaced by anomalies
    #[arg(long, default_value_t = 0.0)]
    contamination: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output split file (JSON)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// Affinity margin
    #[arg(long, default_value_t = 0.7)]
    alpha: f64,
    /// Weight of the affinity-margin loss
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Weight of the egocentric-closeness loss
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Outliers as a fraction of the labeled normals
    #[arg(long, default_value_t = 0.05)]
    s_ratio: f64,
    #[arg(long, default_value_t = 0.01)]
    eps_mean: f64,
    #[arg(long, default_value_t = 0.005)]
    eps_std: f64,
    /// Perturbation std of the gaussianp strategy
    #[arg(long, default_value_t = 0.1)]
    perturb_std: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, value_enum, default_value_t = OutlierStrategy::Ggad)]
    outlier_strategy: OutlierStrategy,
    /// Drop the affinity-margin loss
    #[arg(long)]
    no_ala: bool,
    /// Drop the egocentric-closeness loss
    #[arg(long)]
    no_ec: bool,
    /// Train on 2-hop-closed mini-batches of this many training nodes
    #[arg(long)]
    batch_size: Option<usize>,
    /// Node count above which mini-batching is used automatically
    #[arg(long, default_value_t = DEFAULT_MINIBATCH_THRESHOLD)]
    minibatch_threshold: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            alpha: self.alpha,
            beta: self.beta,
            lambda: self.lambda,
            s_ratio: self.s_ratio,
            eps_mean: self.eps_mean,
            eps_std: self.eps_std,
            perturb_std: self.perturb_std,
            hidden: self.hidden,
            dim: self.dim,
            batch_size: self.batch_size,
            minibatch_threshold: self.minibatch_threshold,
            seed: self.seed,
            outlier_strategy: self.outlier_strategy,
            disable_ala: self.no_ala,
            disable_ec: self.no_ec,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Score CSV output
    #[arg(long)]
    scores_out: Option<PathBuf>,
    /// Also write the metrics as JSON here
    #[arg(long)]
    metrics_json: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn echo_config<T: Serialize>(out: &mut dyn Write, command: &str, config: &T) -> Result<()> {
    writeln!(out, "{command} config: {}", serde_json::to_string(config)?)?;
    Ok(())
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Synth(a) => {
            echo_config(out, "synth", &a)?;
            let params = SynthParams {
                nodes: a.nodes,
                blocks: a.blocks,
                p_in: a.p_in,
                p_out: a.p_out,
                anomaly_rate: a.anomaly_rate,
                feature_dim: a.feature_dim,
            };
            let g = synth_generate(&params, &mut Rng::new(a.seed))?;
            save_dataset(&g, &a.name, &a.out)?;
            let anomalies = g.labels().map_or(0, |l| l.iter().filter(|&&x| x == 1).count());
            writeln!(
                out,
                "wrote {}: nodes={} edges={} anomalies={anomalies}",
                a.out.display(),
                g.num_nodes(),
                g.num_edges()
            )?;
        }
        Command::Split(a) => {
            echo_config(out, "split", &a)?;
            let (_, g) = load_dataset(&a.data)?;
            let split = build_split(&g, a.train_rate, a.contamination, a.seed)?;
            split.save(&a.out)?;
            writeln!(
                out,
                "wrote {}: labeled={} test={} contaminated={}",
                a.out.display(),
                split.labeled_normals.len(),
                split.test_nodes.len(),
                split.contaminated.len()
            )?;
        }
        Command::Train(a) => {
            let config = a.config();
            echo_config(out, "train", &config)?;
            config.validate()?;
            let (_, g) = load_dataset(&a.data)?;
            let split = Split::load(&a.split)?;
            split.validate(&g)?;
            let outcome = train(&g, &split, &config)?;
            fs::create_dir_all(&a.out)?;
            fs::write(a.out.join(LOSS_LOG_FILE), outcome.log_csv())?;
            SavedModel::new(&config, outcome.params.clone()).save(&a.out.join(MODEL_FILE))?;
            if let (Some(first), Some(last)) = (outcome.log.first(), outcome.log.last()) {
                writeln!(
                    out,
                    "epochs={} l_total {:.6} -> {:.6} (bce {:.6} ala {:.6} ec {:.6}) tau_normal={:.4} tau_outlier={:.4}",
                    outcome.log.len(),
                    first.l_total,
                    last.l_total,
                    last.l_bce,
                    last.l_ala,
                    last.l_ec,
                    last.tau_normal,
                    last.tau_outlier
                )?;
            }
            writeln!(out, "wrote {}", a.out.display())?;
        }
        Command::Eval(a) => {
            echo_config(out, "eval", &a)?;
            let (_, g) = load_dataset(&a.data)?;
            let split = Split::load(&a.split)?;
            split.validate(&g)?;
            let model = SavedModel::load(&a.model)?;
            let h = embed(&model.params, &g)?;
            let table = score_nodes(&model.params, &h, &split.test_nodes, g.labels())?;
            if let Some(path) = &a.scores_out {
                fs::write(path, table.to_csv())?;
            }
            let report = evaluate(&table)?;
            writeln!(out, "{}", report.report())?;
            if let Some(path) = &a.metrics_json {
                fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
            }
        }
        Command::Gradcheck(a) => {
            echo_config(out, "gradcheck", &a)?;
            let report = gradcheck::run(a.seed)?;
            for (name, e) in &report.per_tensor {
                writeln!(out, "{name:>6}: rel_error={e:.3e}")?;
            }
            let max = report.max_rel_error();
            writeln!(out, "max_rel_error={max:.3e}")?;
            if !(max < MAX_REL_ERROR) {
                writeln!(out, "gradient check FAILED (threshold {MAX_REL_ERROR:e})")?;
                return Ok(EXIT_RUNTIME);
            }
        }
    }
    Ok(EXIT_OK)
}
