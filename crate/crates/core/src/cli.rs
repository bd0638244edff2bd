//! Command-line interface: argument definitions and the command drivers.
//!
//! Every command writes a `manifest.json` (or `<file>.manifest.json` for
//! single-file outputs) recording the command, the effective configuration,
//! inputs, outputs and timings. Timestamps appear only in manifests, so all
//! other artifacts are byte-identical across repeated runs.
//!
//! Exit codes: 0 success, 1 gradient check failed, 2 configuration or
//! compatibility error, 3 numeric failure (degenerate data, non-finite
//! values), 4 I/O error.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{exit, Error, Result};
use crate::eval::{default_theta_grid, evaluate, DEFAULT_BINS};
use crate::experiment::{run_experiment, ExperimentConfig, Variant};
use crate::gradcheck::{grad_check, random_problem};
use crate::lstm::{Checkpoint, LstmDims};
use crate::objectives::TermWeights;
use crate::synth::{generate, split_subject_independent, Dataset, GenConfig};
use crate::trainer::{TrainConfig, TrainState, Trainer};

#[derive(Debug, Parser)]
#[command(
    name = "onfly",
    version,
    about = "Train and evaluate LSTM classifiers that predict from partial sequences"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Compare analytic gradients with finite differences on random nets.
    Gradcheck(GradcheckArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train the E1, E1+E2 and E1+E2+E3 variants over several seeds and compare them.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Generator config (JSON, every field required). Defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Output dataset file (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

/// Training hyperparameters shared by `train` and `experiment`. Flags
/// override values from `--config`, which in turn override the preset.
#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    /// Training config (JSON); missing fields take the preset's values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base settings: `desk` (synthetic-scale learning rate) or `reference` (lr 1e-4, H = 32, batch 8).
    #[arg(long, default_value = "desk")]
    pub preset: Preset,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Base learning rate.
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Sharpness of the smoothed hinge in E3.
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub e3_weight: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub momentum: Option<f64>,
    /// Disable the E3 phase (E1+E2 training).
    #[arg(long)]
    pub no_e3: bool,
    /// Disable the intensity term E2.
    #[arg(long)]
    pub no_e2: bool,
    /// Train E2 with the g'-scaled gradient instead of the true derivative.
    #[arg(long)]
    pub literal_eq5: bool,
    /// Add even-frame and odd-frame copies of every training sequence.
    #[arg(long)]
    pub augment: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    Desk,
    Reference,
}

impl TrainFlags {
    pub fn resolve(&self, seed: Option<u64>) -> Result<TrainConfig> {
        let base = match self.preset {
            Preset::Desk => TrainConfig::desk_scale(),
            Preset::Reference => TrainConfig::default(),
        };
        let mut cfg = match &self.config {
            Some(path) => merge_json(&base, path)?,
            None => base,
        };
        macro_rules! set {
            ($field:ident, $flag:expr) => {
                if let Some(v) = $flag {
                    cfg.$field = v;
                }
            };
        }
        set!(epochs, self.epochs);
        set!(base_lr, self.lr);
        set!(batch_size, self.batch_size);
        set!(hidden_dim, self.hidden_dim);
        set!(beta, self.beta);
        set!(e3_weight, self.e3_weight);
        set!(momentum, self.momentum);
        set!(seed, seed);
        if self.no_e3 {
            cfg.use_e3 = false;
        }
        if self.no_e2 {
            cfg.use_e2 = false;
        }
        if self.literal_eq5 {
            cfg.literal_eq5 = true;
        }
        if self.augment {
            cfg.temporal_augment = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Fields present in the file replace those of `base`.
fn merge_json(base: &TrainConfig, path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut value = serde_json::to_value(base).map_err(|e| Error::json(path, e))?;
    let patch: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let serde_json::Value::Object(patch) = patch else {
        return Err(Error::config(
            "config",
            "training config must be a JSON object",
        ));
    };
    let obj = value
        .as_object_mut()
        .expect("config serializes to an object");
    for (k, v) in patch {
        obj.insert(k, v);
    }
    serde_json::from_value(value).map_err(|e| Error::json(path, e))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset file (JSON).
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hold out this fold of a subject-independent split and report accuracy on it.
    #[arg(long)]
    pub holdout_fold: Option<usize>,
    /// Number of folds for `--holdout-fold`; defaults to one per subject.
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Continue from a checkpoint written by an earlier run with the same settings.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also write `checkpoint_epoch<k>.json` every this many epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// First seed; seeds `seed..seed + seeds` are checked.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(long, default_value_t = 3)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 3)]
    pub num_classes: usize,
    #[arg(long, default_value_t = 5)]
    pub frames: usize,
    /// Sequences per problem (class ids cycle through all classes).
    #[arg(long, default_value_t = 3)]
    pub sequences: usize,
    #[arg(long, default_value_t = 10.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Also check the g'-scaled E2 gradient and report its deviation.
    #[arg(long)]
    pub literal_eq5: bool,
    /// Write the report as JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Test dataset (JSON). All of its sequences are evaluated.
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluate only this fold of a subject-independent split of `--data`.
    #[arg(long)]
    pub holdout_fold: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Number of normalized-time bins for the similarity curves.
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Number of seeds; seeds `seed..seed + seeds` are run.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_seconds: u64,
    pub wall_seconds: f64,
}

struct ManifestBuilder {
    command: &'static str,
    started: SystemTime,
    clock: Instant,
}

impl ManifestBuilder {
    fn start(command: &'static str) -> Self {
        Self {
            command,
            started: SystemTime::now(),
            clock: Instant::now(),
        }
    }

    fn finish(
        self,
        config: impl Serialize,
        seed: Option<u64>,
        inputs: Vec<PathBuf>,
        outputs: Vec<PathBuf>,
        path: &Path,
    ) -> Result<RunManifest> {
        let m = RunManifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config).map_err(|e| Error::json(path, e))?,
            seed,
            inputs,
            outputs,
            started_unix_seconds: self
                .started
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_seconds: self.clock.elapsed().as_secs_f64(),
        };
        write_json(path, &m)?;
        Ok(m)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn cmd_gen(args: &GenArgs) -> Result<RunManifest> {
    let m = ManifestBuilder::start("gen");
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::json(p, e))?
        }
        None => GenConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(v) = args.num_classes {
        cfg.num_classes = v;
    }
    if let Some(v) = args.feature_dim {
        cfg.feature_dim = v;
    }
    if let Some(v) = args.subjects {
        cfg.subjects = v;
    }
    let ds = generate(&cfg)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    ds.save(&args.out)?;
    log::info!(
        "wrote {} sequences to {}",
        ds.sequences.len(),
        args.out.display()
    );
    m.finish(
        &cfg,
        Some(cfg.seed),
        args.config.iter().cloned().collect(),
        vec![args.out.clone()],
        &sibling(&args.out, ".manifest.json"),
    )
}

/// Train and test sets for a command: the whole dataset, or one fold of a
/// subject-independent split.
fn select_fold(
    ds: &Dataset,
    fold: Option<usize>,
    folds: Option<usize>,
    split_seed: u64,
) -> Result<(Dataset, Option<Dataset>)> {
    let Some(k) = fold else {
        return Ok((ds.clone(), None));
    };
    let folds = folds.unwrap_or_else(|| ds.subjects().len());
    if k >= folds {
        return Err(Error::config(
            "holdout_fold",
            format!("must be below the fold count {folds}"),
        ));
    }
    let (train, test) = split_subject_independent(ds, folds, split_seed)?.swap_remove(k);
    Ok((train, Some(test)))
}

#[derive(Debug, Serialize)]
struct TrainManifestConfig<'a> {
    train: &'a TrainConfig,
    dims: LstmDims,
    holdout_fold: Option<usize>,
    folds: Option<usize>,
    split_seed: u64,
    resumed_from: Option<&'a Path>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunManifest> {
    let m = ManifestBuilder::start("train");
    let cfg = args.flags.resolve(args.seed)?;
    let ds = Dataset::load(&args.data)?;
    let (train, test) = select_fold(&ds, args.holdout_fold, args.folds, args.split_seed)?;
    let mut trainer = Trainer::new(&train, cfg.clone())?;
    if let Some(test) = &test {
        trainer = trainer.with_heldout(test);
    }
    let mut state = match &args.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.dims != trainer.dims() {
                return Err(Error::config(
                    "resume",
                    format!(
                        "checkpoint dims {:?} do not match {:?}",
                        ck.dims,
                        trainer.dims()
                    ),
                ));
            }
            TrainState {
                params: ck.params()?,
                velocity: ck.velocity()?,
                epochs_completed: ck.epochs_completed,
                init_seed: ck.init_seed,
            }
        }
        None => trainer.initial_state()?,
    };
    create_dir(&args.out)?;
    let mut outputs = Vec::new();
    let every = args.checkpoint_every.filter(|&k| k > 0);
    let log = trainer.run(&mut state, |s, entries| {
        for e in entries {
            log::info!(
                "epoch {} {}: total {:.6} (e1 {:.6} e2 {:.6} e3 {:.6}) lr {:e}{}",
                e.epoch,
                e.phase.as_str(),
                e.losses.total,
                e.losses.e1,
                e.losses.e2,
                e.losses.e3,
                e.lr,
                e.heldout_accuracy
                    .map(|a| format!(" heldout {a:.4}"))
                    .unwrap_or_default()
            );
        }
        if let Some(k) = every {
            if s.epochs_completed % k == 0 {
                let p = args
                    .out
                    .join(format!("checkpoint_epoch{}.json", s.epochs_completed));
                Checkpoint::new(
                    &s.params,
                    s.init_seed,
                    s.epochs_completed,
                    s.velocity.as_ref(),
                )
                .save(&p)?;
                outputs.push(p);
            }
        }
        Ok(())
    })?;

    let ckpt = args.out.join("checkpoint.json");
    Checkpoint::new(
        &state.params,
        state.init_seed,
        state.epochs_completed,
        state.velocity.as_ref(),
    )
    .save(&ckpt)?;
    outputs.push(ckpt);
    let log_path = args.out.join("train_log.csv");
    log.write_csv(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?)?;
    outputs.push(log_path);
    let cfg_path = args.out.join("train_config.json");
    write_json(&cfg_path, &cfg)?;
    outputs.push(cfg_path);

    let mut inputs = vec![args.data.clone()];
    inputs.extend(args.flags.config.iter().cloned());
    inputs.extend(args.resume.iter().cloned());
    m.finish(
        TrainManifestConfig {
            train: &cfg,
            dims: trainer.dims(),
            holdout_fold: args.holdout_fold,
            folds: args.folds,
            split_seed: args.split_seed,
            resumed_from: args.resume.as_deref(),
        },
        Some(cfg.seed),
        inputs,
        outputs,
        &args.out.join("manifest.json"),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermReport {
    pub term: String,
    pub max_relative_error: f64,
    pub worst_seed: u64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckSummary {
    pub dims: LstmDims,
    pub frames: usize,
    pub sequences: usize,
    pub seeds: Vec<u64>,
    pub beta: f64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub terms: Vec<TermReport>,
    /// Deviation of the g'-scaled E2 gradient, when requested.
    pub literal_e2: Option<TermReport>,
}

impl GradcheckSummary {
    pub fn passed(&self) -> bool {
        self.terms.iter().all(|t| t.passed)
    }
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<GradcheckSummary> {
    if args.seeds == 0 {
        return Err(Error::config("seeds", "must be positive"));
    }
    if args.frames < 2 || args.sequences == 0 {
        return Err(Error::config(
            "frames",
            "need at least 2 frames and 1 sequence",
        ));
    }
    let dims = LstmDims {
        input_dim: args.input_dim,
        hidden_dim: args.hidden_dim,
        num_classes: args.num_classes,
    };
    let seeds: Vec<u64> = (args.seed..args.seed + args.seeds).collect();
    let terms = [
        ("E1", TermWeights::E1, false),
        ("E2", TermWeights::E2, false),
        ("E3", TermWeights::E3, false),
        ("E1+E2", TermWeights::E1_E2, false),
        ("E2 literal", TermWeights::E2, true),
    ];
    let mut reports: Vec<TermReport> = terms
        .iter()
        .filter(|t| !t.2 || args.literal_eq5)
        .map(|&(name, _, _)| TermReport {
            term: name.to_string(),
            max_relative_error: 0.0,
            worst_seed: seeds[0],
            passed: true,
        })
        .collect();
    for &seed in &seeds {
        let (params, spec) = random_problem(dims, args.frames, args.sequences, args.beta, seed)?;
        for (rep, &(_, w, literal)) in reports.iter_mut().zip(&terms) {
            let spec = spec.with_weights(w).with_literal_eq5(literal);
            let r = grad_check(&spec, &params, args.epsilon, seed)?;
            if r.max_relative_error > rep.max_relative_error {
                rep.max_relative_error = r.max_relative_error;
                rep.worst_seed = seed;
            }
        }
    }
    for r in &mut reports {
        r.passed = r.max_relative_error < args.tolerance;
    }
    let literal_e2 = args.literal_eq5.then(|| reports.pop()).flatten();
    Ok(GradcheckSummary {
        dims,
        frames: args.frames,
        sequences: args.sequences,
        seeds,
        beta: args.beta,
        epsilon: args.epsilon,
        tolerance: args.tolerance,
        terms: reports,
        literal_e2,
    })
}

/// Prints the report and returns the exit code: 1 when a term fails. The
/// literal E2 gradient is expected to fail and does not affect the code.
pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<i32> {
    let m = ManifestBuilder::start("gradcheck");
    let summary = gradcheck(args)?;
    for t in &summary.terms {
        println!(
            "{:<6} max relative error {:.3e} (seed {}) {}",
            t.term,
            t.max_relative_error,
            t.worst_seed,
            if t.passed { "ok" } else { "FAIL" }
        );
    }
    if let Some(t) = &summary.literal_e2 {
        println!(
            "E2 with g'-scaled gradient: max relative error {:.3e} (seed {}) against finite differences of E2",
            t.max_relative_error, t.worst_seed
        );
    }
    if let Some(out) = &args.out {
        write_json(out, &summary)?;
        m.finish(
            &summary,
            Some(args.seed),
            Vec::new(),
            vec![out.clone()],
            &sibling(out, ".manifest.json"),
        )?;
    }
    Ok(if summary.passed() {
        exit::SUCCESS
    } else {
        exit::CHECK_FAILED
    })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<RunManifest> {
    let m = ManifestBuilder::start("eval");
    let ck = Checkpoint::load(&args.checkpoint)?;
    let params = ck.params()?;
    let ds = Dataset::load(&args.data)?;
    if ds.feature_dim() != ck.dims.input_dim {
        return Err(Error::DimensionMismatch {
            context: "dataset feature dim vs checkpoint input dim",
            expected: ck.dims.input_dim,
            actual: ds.feature_dim(),
        });
    }
    if ds.num_classes() != ck.dims.num_classes {
        return Err(Error::DimensionMismatch {
            context: "dataset classes vs checkpoint classes",
            expected: ck.dims.num_classes,
            actual: ds.num_classes(),
        });
    }
    let test = match select_fold(&ds, args.holdout_fold, args.folds, args.split_seed)? {
        (_, Some(test)) => test,
        (all, None) => all,
    };
    let report = evaluate(&params, &test.sequences, &default_theta_grid(), args.bins)?;
    report.write_dir(&args.out)?;
    println!(
        "sequence accuracy {:.4} ({}/{}), mid-band rate {}, mid-band similarity {}",
        report.sequence_accuracy.rate,
        report.sequence_accuracy.correct,
        report.sequence_accuracy.total,
        fmt_opt(report.mid_band_rate),
        fmt_opt(report.mid_band_similarity),
    );
    m.finish(
        serde_json::json!({
            "holdout_fold": args.holdout_fold,
            "folds": args.folds,
            "split_seed": args.split_seed,
            "bins": args.bins,
        }),
        None,
        vec![args.checkpoint.clone(), args.data.clone()],
        [
            "threshold_curve.csv",
            "similarity_curve.csv",
            "summary.json",
        ]
        .iter()
        .map(|f| args.out.join(f))
        .collect(),
        &args.out.join("manifest.json"),
    )
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<RunManifest> {
    let m = ManifestBuilder::start("experiment");
    let train = args.flags.resolve(None)?;
    let ds = Dataset::load(&args.data)?;
    let cfg = ExperimentConfig {
        folds: args.folds,
        split_seed: args.split_seed,
        bins: args.bins,
        ..ExperimentConfig::new((args.seed..args.seed + args.seeds).collect(), train)
    };
    let report = run_experiment(&ds, &cfg)?;
    create_dir(&args.out)?;
    let outputs = report.write_dir(&args.out)?;
    println!(
        "{:<8} {:>10} {:>10} {:>10}",
        "variant", "accuracy", "mid-rate", "mid-sim"
    );
    for s in report.summaries() {
        println!(
            "{:<8} {:>10.4} {:>10.4} {:>10.4}",
            s.variant.name(),
            s.mean_sequence_accuracy,
            s.mean_mid_band_rate,
            s.mean_mid_band_similarity
        );
    }
    let variants: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
    let mut inputs = vec![args.data.clone()];
    inputs.extend(args.flags.config.iter().cloned());
    m.finish(
        serde_json::json!({ "experiment": cfg, "variants": variants }),
        Some(args.seed),
        inputs,
        outputs,
        &args.out.join("manifest.json"),
    )
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a).map(|_| exit::SUCCESS),
        Command::Train(a) => cmd_train(a).map(|_| exit::SUCCESS),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Eval(a) => cmd_eval(a).map(|_| exit::SUCCESS),
        Command::Experiment(a) => cmd_experiment(a).map(|_| exit::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
