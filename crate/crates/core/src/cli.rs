//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for runtime or data errors, 2 for usage
//! errors (including flag values that fail validation).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::data::{
    load_embeddings, load_embeddings_unscored, prompt_disjoint_split, save_embeddings,
    synthetic_dataset, Dataset,
};
use crate::model_io::{Model, ModelMetadata};
use crate::training::{evaluate, predict, train, EpochRecord, TrainConfig};
use crate::{Error, Result};

pub const HISTORY_HEADER: &str = "epoch,lr,loss_total,loss_reg,loss_entail,val_srcc,val_plcc";
pub const REPORT_HEADER: &str =
    "group_id,score,predicted,distance,exterior_angle,aperture,image_space_norm,text_space_norm";
pub const SCORE_HEADER: &str = "group_id,s_hat";
pub const EVAL_HEADER: &str = "index,score,predicted";

#[derive(Debug, Parser)]
#[command(
    name = "lorentz-align",
    version,
    about = "Hyperbolic entailment geometry for text-to-image alignment scoring"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on prompt-disjoint splits and write model, history and manifest.
    Train(TrainArgs),
    /// Print SRCC and PLCC of a model on a scored dataset.
    Eval(EvalArgs),
    /// Write per-sample predictions; scores in the data file are optional.
    Score(ScoreArgs),
    /// Export per-sample geometry for external plotting.
    Report(ReportArgs),
    /// Generate a synthetic embedding file with a planted alignment rule.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub curvature: f64,
    #[arg(long, default_value_t = 0.1)]
    pub k: f64,
    #[arg(long, default_value_t = 0.8)]
    pub contraction: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 4e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.005)]
    pub wd: f64,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 6)]
    pub patience: usize,
    #[arg(long, default_value_t = 10)]
    pub lr_step: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr_gamma: f64,
    #[arg(long, default_value_t = 0, conflicts_with = "seeds")]
    pub seed: u64,
    /// Seed list such as `1..10` (inclusive) or `1,4,7`.
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<SeedList>,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Share of the whole dataset held out from training for early stopping.
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    /// Run the per-sample work on one thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Optional CSV of (index, score, predicted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(10..))]
    pub n: u64,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(4..))]
    pub dim: u64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

fn parse_seeds(s: &str) -> std::result::Result<SeedList, String> {
    let seeds = if let Some((a, b)) = s.split_once("..") {
        let lo: u64 = a
            .trim()
            .parse()
            .map_err(|e| format!("bad seed range start: {e}"))?;
        let hi: u64 = b
            .trim()
            .parse()
            .map_err(|e| format!("bad seed range end: {e}"))?;
        if hi < lo {
            return Err(format!("empty seed range {s}"));
        }
        (lo..=hi).collect()
    } else {
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse::<u64>()
                    .map_err(|e| format!("bad seed {p:?}: {e}"))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?
    };
    if seeds.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(SeedList(seeds))
}

/// Usage problems detected after parsing.
struct UsageError(String);

enum Failure {
    Usage(UsageError),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

/// Parse `args` (including the program name) and run the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a).map_err(Failure::from),
        Command::Score(a) => cmd_score(&a).map_err(Failure::from),
        Command::Report(a) => cmd_report(&a).map_err(Failure::from),
        Command::Synth(a) => cmd_synth(&a),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(UsageError(msg))) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

impl TrainArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            lr: self.lr,
            weight_decay: self.wd,
            batch_size: self.batch,
            max_epochs: self.epochs,
            lr_step: self.lr_step,
            lr_gamma: self.lr_gamma,
            patience: self.patience,
            seed,
            curvature: self.curvature,
            k: self.k,
            contraction: self.contraction,
            exec: if self.sequential {
                crate::exec::Exec::Sequential
            } else {
                crate::exec::Exec::default()
            },
            ..TrainConfig::default()
        }
    }

    fn seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.0.clone(),
            None => vec![self.seed],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub test_srcc: f64,
    pub test_plcc: f64,
    pub best_val_srcc: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    pub model: PathBuf,
    pub history: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub data: PathBuf,
    pub seeds: Vec<u64>,
    pub runs: Vec<SeedResult>,
    pub srcc: Aggregate,
    pub plcc: Aggregate,
}

pub fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Aggregate { mean, std }
}

/// Train / validation / test partition for one seed. All three parts are
/// prompt-disjoint.
pub fn three_way_split(
    ds: &Dataset,
    train_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (pool, test) = prompt_disjoint_split(ds, train_fraction, seed)?;
    let keep = 1.0 - val_fraction / train_fraction;
    let (train_part, val) =
        prompt_disjoint_split(&pool, keep, seed.wrapping_add(0x9E37_79B9_7F4A_7C15))?;
    Ok((train_part, val, test))
}

fn cmd_train(a: &TrainArgs) -> std::result::Result<(), Failure> {
    let usage = |m: String| Failure::Usage(UsageError(m));
    if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
        return Err(usage(format!(
            "--train-fraction must lie in (0, 1), got {}",
            a.train_fraction
        )));
    }
    if !(a.val_fraction > 0.0 && a.val_fraction < a.train_fraction) {
        return Err(usage(format!(
            "--val-fraction must lie in (0, train fraction), got {}",
            a.val_fraction
        )));
    }
    let seeds = a.seeds();
    a.config(seeds[0])
        .validate()
        .map_err(|e| usage(e.to_string()))?;

    let ds = load_embeddings(&a.data)?;
    fs::create_dir_all(&a.out).map_err(Error::from)?;
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let cfg = a.config(seed);
        let dir = if seeds.len() == 1 {
            a.out.clone()
        } else {
            a.out.join(format!("seed-{seed}"))
        };
        fs::create_dir_all(&dir).map_err(Error::from)?;
        let (tr, va, te) = three_way_split(&ds, a.train_fraction, a.val_fraction, seed)?;
        let (params, history) = train(&tr, &va, &cfg)?;
        let model = Model::new(
            params,
            &cfg,
            ModelMetadata {
                seed,
                epochs_run: history.epochs_run(),
                best_val_srcc: Some(history.best_val_srcc).filter(|v| v.is_finite()),
            },
        );
        let model_path = dir.join("model.json");
        let history_path = dir.join("history.csv");
        model.save(&model_path)?;
        write_file(&history_path, &history_csv(&history.records))?;
        let ev = evaluate(&te, &model.params, &cfg)?;
        println!(
            "seed {seed}: SRCC: {:.4} PLCC: {:.4} (epochs {}, best epoch {})",
            ev.report.srcc,
            ev.report.plcc,
            history.epochs_run(),
            history
                .best_epoch
                .map_or("none".to_string(), |e| e.to_string())
        );
        runs.push(SeedResult {
            seed,
            test_srcc: ev.report.srcc,
            test_plcc: ev.report.plcc,
            best_val_srcc: model.metadata.best_val_srcc,
            best_epoch: history.best_epoch,
            epochs_run: history.epochs_run(),
            train_samples: tr.len(),
            val_samples: va.len(),
            test_samples: te.len(),
            model: model_path,
            history: history_path,
        });
    }
    let srcc: Vec<f64> = runs.iter().map(|r| r.test_srcc).collect();
    let plcc: Vec<f64> = runs.iter().map(|r| r.test_plcc).collect();
    let manifest = RunManifest {
        config: a.config(seeds[0]),
        train_fraction: a.train_fraction,
        val_fraction: a.val_fraction,
        data: a.data.clone(),
        seeds: seeds.clone(),
        runs,
        srcc: aggregate(&srcc),
        plcc: aggregate(&plcc),
    };
    if seeds.len() > 1 {
        println!(
            "mean SRCC: {:.4} ± {:.4}  mean PLCC: {:.4} ± {:.4}",
            manifest.srcc.mean, manifest.srcc.std, manifest.plcc.mean, manifest.plcc.std
        );
    }
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Model(e.to_string()))?;
    write_file(&a.out.join("manifest.json"), &(json + "\n"))?;
    Ok(())
}

pub fn history_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.epoch, r.lr, r.loss_total, r.loss_reg, r.loss_entail, r.val_srcc, r.val_plcc
        );
    }
    s
}

fn load_model_for(model: &Path, ds: &Dataset) -> Result<Model> {
    let m = Model::load(model)?;
    if m.dim() != ds.dim {
        return Err(Error::invalid(format!(
            "model dimension {} does not match data dimension {}",
            m.dim(),
            ds.dim
        )));
    }
    Ok(m)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ds = load_embeddings(&a.data)?;
    let model = load_model_for(&a.model, &ds)?;
    let ev = evaluate(&ds, &model.params, &model.inference_config())?;
    println!("SRCC: {:.4}", ev.report.srcc);
    println!("PLCC: {:.4}", ev.report.plcc);
    if let Some(out) = &a.out {
        let mut s = String::from(EVAL_HEADER);
        s.push('\n');
        for (i, (sample, p)) in ds.samples.iter().zip(&ev.predictions).enumerate() {
            let _ = writeln!(s, "{i},{},{p}", sample.score);
        }
        write_file(out, &s)?;
    }
    Ok(())
}

fn cmd_score(a: &ScoreArgs) -> Result<()> {
    let ds = load_embeddings_unscored(&a.data)?;
    let model = load_model_for(&a.model, &ds)?;
    let geo = predict(&ds, &model.params, &model.inference_config())?;
    let mut s = String::from(SCORE_HEADER);
    s.push('\n');
    for (sample, g) in ds.samples.iter().zip(&geo) {
        let _ = writeln!(s, "{},{}", sample.group_id, g.s_hat);
    }
    write_file(&a.out, &s)
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let ds = load_embeddings(&a.data)?;
    let model = load_model_for(&a.model, &ds)?;
    let geo = predict(&ds, &model.params, &model.inference_config())?;
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for (sample, g) in ds.samples.iter().zip(&geo) {
        let z = &g.primitives;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            sample.group_id,
            sample.score,
            g.s_hat,
            z.distance,
            z.exterior_angle,
            z.aperture,
            g.image_space_norm,
            g.text_space_norm
        );
    }
    write_file(&a.out, &s)
}

fn cmd_synth(a: &SynthArgs) -> std::result::Result<(), Failure> {
    if !(a.noise.is_finite() && a.noise >= 0.0) {
        return Err(Failure::Usage(UsageError(format!(
            "--noise must be non-negative, got {}",
            a.noise
        ))));
    }
    let ds = synthetic_dataset(a.n as usize, a.dim as usize, a.seed, a.noise)?;
    save_embeddings(&ds, &a.out)?;
    Ok(())
}
