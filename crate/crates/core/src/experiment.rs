//! Ablation runs: E1-only, E1+E2 and E1+E2+E3 trained on the same folds and
//! compared on threshold and similarity curves.
//!
//! Seed `s` trains with `TrainConfig::seed = s` and holds out fold
//! `s % folds` of a subject-independent split, so different seeds also see
//! different test subjects.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{default_theta_grid, evaluate, EvalReport, DEFAULT_BINS};
use crate::lstm::{Checkpoint, LstmParameters};
use crate::synth::{split_subject_independent, Dataset, NEUTRAL};
use crate::trainer::{TrainConfig, TrainLog, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    E1,
    E1e2,
    E1e2e3,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::E1, Variant::E1e2, Variant::E1e2e3];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::E1 => "e1",
            Variant::E1e2 => "e1e2",
            Variant::E1e2e3 => "e1e2e3",
        }
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let (use_e2, use_e3) = match self {
            Variant::E1 => (false, false),
            Variant::E1e2 => (true, false),
            Variant::E1e2e3 => (true, true),
        };
        TrainConfig {
            use_e2,
            use_e3,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    /// Number of subject-independent folds; `None` means one per subject.
    pub folds: Option<usize>,
    pub split_seed: u64,
    pub train: TrainConfig,
    pub theta_grid: Vec<f64>,
    pub bins: usize,
}

impl ExperimentConfig {
    pub fn new(seeds: Vec<u64>, train: TrainConfig) -> Self {
        Self {
            seeds,
            folds: None,
            split_seed: 0,
            train,
            theta_grid: default_theta_grid(),
            bins: DEFAULT_BINS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub fold: usize,
    pub params: LstmParameters,
    pub init_seed: u64,
    pub log: TrainLog,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub mean_sequence_accuracy: f64,
    pub mean_mid_band_rate: f64,
    pub mean_mid_band_similarity: f64,
    pub per_seed_sequence_accuracy: Vec<f64>,
    pub per_seed_mid_band_rate: Vec<f64>,
    pub per_seed_mid_band_similarity: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// Seed-major, then [`Variant::ALL`] order.
    pub runs: Vec<RunResult>,
}

pub fn run_experiment(ds: &Dataset, config: &ExperimentConfig) -> Result<ExperimentReport> {
    if config.seeds.len() < 2 {
        return Err(Error::config(
            "seeds",
            "an experiment needs at least 2 seeds",
        ));
    }
    config.train.validate()?;
    let folds = config.folds.unwrap_or_else(|| ds.subjects().len());
    let splits = split_subject_independent(ds, folds, config.split_seed)?;
    let jobs: Vec<(u64, Variant)> = config
        .seeds
        .iter()
        .flat_map(|&s| Variant::ALL.into_iter().map(move |v| (s, v)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(seed, variant)| {
            let fold = (seed % folds as u64) as usize;
            let (train, test) = &splits[fold];
            let cfg = TrainConfig {
                seed,
                ..variant.apply(&config.train)
            };
            let trainer = Trainer::new(train, cfg)?;
            let (state, log) = trainer.train()?;
            let report = evaluate(
                &state.params,
                &test.sequences,
                &config.theta_grid,
                config.bins,
            )?;
            Ok(RunResult {
                variant,
                seed,
                fold,
                params: state.params,
                init_seed: state.init_seed,
                log,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        config: config.clone(),
        runs,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl ExperimentReport {
    pub fn runs_of(&self, variant: Variant) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(move |r| r.variant == variant)
    }

    pub fn summary(&self, variant: Variant) -> VariantSummary {
        let acc: Vec<f64> = self
            .runs_of(variant)
            .map(|r| r.report.sequence_accuracy.rate)
            .collect();
        let rate: Vec<f64> = self
            .runs_of(variant)
            .map(|r| r.report.mid_band_rate.unwrap_or(f64::NAN))
            .collect();
        let sim: Vec<f64> = self
            .runs_of(variant)
            .map(|r| r.report.mid_band_similarity.unwrap_or(f64::NAN))
            .collect();
        VariantSummary {
            variant,
            mean_sequence_accuracy: mean(&acc),
            mean_mid_band_rate: mean(&rate),
            mean_mid_band_similarity: mean(&sim),
            per_seed_sequence_accuracy: acc,
            per_seed_mid_band_rate: rate,
            per_seed_mid_band_similarity: sim,
        }
    }

    pub fn summaries(&self) -> Vec<VariantSummary> {
        Variant::ALL.iter().map(|&v| self.summary(v)).collect()
    }

    fn header(&self, lead: &[&str]) -> Vec<String> {
        let mut h: Vec<String> = lead.iter().map(|s| s.to_string()).collect();
        for v in Variant::ALL {
            h.push(format!("{}_mean", v.name()));
        }
        for v in Variant::ALL {
            for s in &self.config.seeds {
                h.push(format!("{}_seed{s}", v.name()));
            }
        }
        h
    }

    fn write_rows<W: Write>(
        &self,
        out: W,
        lead: &[&str],
        rows: usize,
        lead_values: impl Fn(usize) -> Vec<String>,
        value: impl Fn(&RunResult, usize) -> Option<f64>,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header(lead))?;
        for i in 0..rows {
            let mut rec = lead_values(i);
            let per_variant: Vec<Vec<Option<f64>>> = Variant::ALL
                .iter()
                .map(|&v| self.runs_of(v).map(|r| value(r, i)).collect())
                .collect();
            for vals in &per_variant {
                let present: Vec<f64> = vals.iter().flatten().copied().collect();
                rec.push(if present.is_empty() {
                    String::new()
                } else {
                    mean(&present).to_string()
                });
            }
            for vals in &per_variant {
                rec.extend(
                    vals.iter()
                        .map(|x| x.map(|x| x.to_string()).unwrap_or_default()),
                );
            }
            w.write_record(rec)?;
        }
        w.flush().map_err(|e| Error::io("comparison csv", e))?;
        Ok(())
    }

    /// Columns `theta`, one mean column per variant, then one column per
    /// variant and seed.
    pub fn write_threshold_csv<W: Write>(&self, out: W) -> Result<()> {
        let grid = &self.config.theta_grid;
        self.write_rows(
            out,
            &["theta"],
            grid.len(),
            |i| vec![grid[i].to_string()],
            |r, i| Some(r.report.threshold_curve[i].rate.rate),
        )
    }

    /// Columns `bin,time`, then means and per-seed values as in the threshold
    /// table. A run's value in a bin is its mean over expressive classes.
    pub fn write_similarity_csv<W: Write>(&self, out: W) -> Result<()> {
        let bins = self.config.bins;
        self.write_rows(
            out,
            &["bin", "time"],
            bins,
            |b| vec![b.to_string(), (b as f64 / (bins - 1) as f64).to_string()],
            |r, b| {
                let vals: Vec<f64> = r
                    .report
                    .similarity_curves
                    .iter()
                    .filter(|c| c.class_id != NEUTRAL)
                    .filter_map(|c| c.bins[b].mean)
                    .collect();
                (!vals.is_empty()).then(|| mean(&vals))
            },
        )
    }

    /// Writes both comparison tables, `summary.json`, and one checkpoint per
    /// run under `checkpoints/`. Returns the paths written.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let ckpt_dir = dir.join("checkpoints");
        std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
        let mut written = Vec::new();
        let create = |p: &Path| std::fs::File::create(p).map_err(|e| Error::io(p, e));

        let p = dir.join("threshold_comparison.csv");
        self.write_threshold_csv(create(&p)?)?;
        written.push(p);
        let p = dir.join("similarity_comparison.csv");
        self.write_similarity_csv(create(&p)?)?;
        written.push(p);

        let p = dir.join("summary.json");
        let summary = serde_json::json!({
            "seeds": self.config.seeds,
            "variants": self.summaries(),
            "runs": self.runs.iter().map(|r| serde_json::json!({
                "variant": r.variant,
                "seed": r.seed,
                "fold": r.fold,
                "report": r.report,
            })).collect::<Vec<_>>(),
        });
        let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::json(&p, e))?;
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        written.push(p);

        for r in &self.runs {
            let p = ckpt_dir.join(format!("{}_seed{}.json", r.variant.name(), r.seed));
            Checkpoint::new(&r.params, r.init_seed, r.log_epochs(), None).save(&p)?;
            written.push(p);
        }
        Ok(written)
    }
}

impl RunResult {
    fn log_epochs(&self) -> usize {
        self.log.entries.last().map_or(0, |e| e.epoch + 1)
    }
}
