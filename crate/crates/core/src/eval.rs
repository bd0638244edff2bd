//! Evaluation protocols: sequence accuracy, frame-level recognition rate as
//! a function of the intensity threshold, and prefix/last-frame feature
//! similarity over normalized time.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::{cosine_similarity, estimate_trace, IntensityTrace};
use crate::lstm::{forward, LstmParameters};
use crate::synth::{FeatureSequence, NEUTRAL};

pub const DEFAULT_BINS: usize = 20;
/// Thresholds averaged for the mid-band recognition rate.
pub const MID_BAND_THETAS: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];
/// Inclusive bin range (of [`DEFAULT_BINS`]) averaged for mid-sequence similarity.
pub const MID_BAND_BINS: (usize, usize) = (8, 14);

/// What the evaluation needs from a model: the class predicted after every
/// prefix of a sequence and, for similarity curves, the per-frame features.
pub trait PrefixClassifier: Sync {
    fn run(&self, frames: &[Vec<f64>]) -> Result<PrefixOutput>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrefixOutput {
    /// `predictions[t]` is the class predicted from frames `0..=t`.
    pub predictions: Vec<usize>,
    /// Per-frame features; may be empty for models that have none.
    pub features: Vec<Vec<f64>>,
}

impl PrefixClassifier for LstmParameters {
    fn run(&self, frames: &[Vec<f64>]) -> Result<PrefixOutput> {
        let tr = forward(self, frames)?;
        Ok(PrefixOutput {
            predictions: tr.prefix_predictions(),
            features: tr.steps.into_iter().map(|s| s.h).collect(),
        })
    }
}

/// A rate together with its numerator and denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub rate: f64,
    pub correct: usize,
    pub total: usize,
}

impl Rate {
    fn new(correct: usize, total: usize) -> Self {
        Self {
            rate: if total == 0 {
                0.0
            } else {
                correct as f64 / total as f64
            },
            correct,
            total,
        }
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::config(
            "theta",
            format!("must lie in [0, 1], got {theta}"),
        ));
    }
    Ok(())
}

/// Frame `t` gets `class_id` when `trace[t] > theta`, otherwise neutral.
pub fn frame_labels(trace: &IntensityTrace, class_id: usize, theta: f64) -> Vec<usize> {
    trace
        .values
        .iter()
        .map(|&v| {
            if class_id != NEUTRAL && v > theta {
                class_id
            } else {
                NEUTRAL
            }
        })
        .collect()
}

struct Scored {
    class_id: usize,
    trace: IntensityTrace,
    out: PrefixOutput,
}

fn score_all<M: PrefixClassifier>(model: &M, test: &[FeatureSequence]) -> Result<Vec<Scored>> {
    if test.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    test.par_iter()
        .map(|s| {
            let out = model.run(&s.frames)?;
            crate::error::check_dim("prefix predictions", s.len(), out.predictions.len())?;
            Ok(Scored {
                class_id: s.class_id,
                trace: estimate_trace(s)?,
                out,
            })
        })
        .collect()
}

fn rate_from_scored(scored: &[Scored], theta: f64) -> Rate {
    let mut correct = 0;
    let mut total = 0;
    for s in scored {
        let labels = frame_labels(&s.trace, s.class_id, theta);
        correct += labels
            .iter()
            .zip(&s.out.predictions)
            .filter(|(a, b)| a == b)
            .count();
        total += labels.len();
    }
    Rate::new(correct, total)
}

/// Fraction of frames whose prefix prediction matches the threshold label.
pub fn recognition_rate_at<M: PrefixClassifier>(
    theta: f64,
    model: &M,
    test: &[FeatureSequence],
) -> Result<Rate> {
    check_theta(theta)?;
    Ok(rate_from_scored(&score_all(model, test)?, theta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub theta: f64,
    #[serde(flatten)]
    pub rate: Rate,
}

/// `0.0, 0.1, ..., 1.0`.
pub fn default_theta_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

pub fn threshold_curve<M: PrefixClassifier>(
    model: &M,
    test: &[FeatureSequence],
    grid: &[f64],
) -> Result<Vec<ThresholdPoint>> {
    for &t in grid {
        check_theta(t)?;
    }
    let scored = score_all(model, test)?;
    Ok(curve_from_scored(&scored, grid))
}

fn curve_from_scored(scored: &[Scored], grid: &[f64]) -> Vec<ThresholdPoint> {
    grid.iter()
        .map(|&theta| ThresholdPoint {
            theta,
            rate: rate_from_scored(scored, theta),
        })
        .collect()
}

/// Mean rate over the curve points whose threshold lies in `[0.3, 0.7]`.
pub fn mid_band_rate(curve: &[ThresholdPoint]) -> Option<f64> {
    let lo = MID_BAND_THETAS[0] - 1e-9;
    let hi = MID_BAND_THETAS[MID_BAND_THETAS.len() - 1] + 1e-9;
    let rates: Vec<f64> = curve
        .iter()
        .filter(|p| p.theta >= lo && p.theta <= hi)
        .map(|p| p.rate.rate)
        .collect();
    (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityBin {
    /// Bin centre on the normalized time axis.
    pub time: f64,
    /// `None` when no frame fell into the bin.
    pub mean: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSimilarity {
    pub class_id: usize,
    pub sequences: usize,
    pub bins: Vec<SimilarityBin>,
}

/// Bin of frame `t` in a sequence of `n` frames: `round(t / (n - 1) * (bins - 1))`.
pub fn time_bin(t: usize, n: usize, bins: usize) -> usize {
    if n <= 1 {
        return bins - 1;
    }
    let tau = t as f64 / (n - 1) as f64;
    ((tau * (bins - 1) as f64).round() as usize).min(bins - 1)
}

/// Per class, the mean of `cos(f_t, f_last)` in each normalized-time bin.
/// Only classes present in `test` are reported, in ascending order.
pub fn similarity_curve<M: PrefixClassifier>(
    model: &M,
    test: &[FeatureSequence],
    bins: usize,
) -> Result<Vec<ClassSimilarity>> {
    if bins < 2 {
        return Err(Error::config("bins", "need at least 2 bins"));
    }
    similarity_from_scored(&score_all(model, test)?, bins)
}

fn similarity_from_scored(scored: &[Scored], bins: usize) -> Result<Vec<ClassSimilarity>> {
    let max_class = scored.iter().map(|s| s.class_id).max().unwrap_or(0);
    let mut sums = vec![vec![(0.0f64, 0usize); bins]; max_class + 1];
    let mut counts = vec![0usize; max_class + 1];
    for s in scored {
        let feats = &s.out.features;
        crate::error::check_dim("prefix features", s.out.predictions.len(), feats.len())?;
        let n = feats.len();
        let last = &feats[n - 1];
        counts[s.class_id] += 1;
        for (t, f) in feats.iter().enumerate() {
            let sim = cosine_similarity(f, last)?;
            let cell = &mut sums[s.class_id][time_bin(t, n, bins)];
            cell.0 += sim;
            cell.1 += 1;
        }
    }
    Ok((0..=max_class)
        .filter(|&c| counts[c] > 0)
        .map(|c| ClassSimilarity {
            class_id: c,
            sequences: counts[c],
            bins: sums[c]
                .iter()
                .enumerate()
                .map(|(b, &(sum, n))| SimilarityBin {
                    time: b as f64 / (bins - 1) as f64,
                    mean: (n > 0).then(|| sum / n as f64),
                    count: n,
                })
                .collect(),
        })
        .collect())
}

/// Mean over expressive classes and the bins `lo..=hi` of the per-class bin
/// means. Empty bins are skipped.
pub fn mid_band_similarity(curves: &[ClassSimilarity], lo: usize, hi: usize) -> Option<f64> {
    let vals: Vec<f64> = curves
        .iter()
        .filter(|c| c.class_id != NEUTRAL)
        .flat_map(|c| {
            c.bins
                .iter()
                .skip(lo)
                .take(hi + 1 - lo)
                .filter_map(|b| b.mean)
        })
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Full-sequence prediction against the sequence label.
pub fn sequence_accuracy<M: PrefixClassifier>(model: &M, test: &[FeatureSequence]) -> Result<Rate> {
    let scored = score_all(model, test)?;
    Ok(accuracy_from_scored(&scored))
}

fn accuracy_from_scored(scored: &[Scored]) -> Rate {
    let correct = scored
        .iter()
        .filter(|s| s.out.predictions.last() == Some(&s.class_id))
        .count();
    Rate::new(correct, scored.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sequence_accuracy: Rate,
    pub threshold_curve: Vec<ThresholdPoint>,
    pub similarity_curves: Vec<ClassSimilarity>,
    pub mid_band_rate: Option<f64>,
    pub mid_band_similarity: Option<f64>,
    pub test_sequences: usize,
    pub test_frames: usize,
}

/// All three protocols from a single forward pass per sequence.
pub fn evaluate<M: PrefixClassifier>(
    model: &M,
    test: &[FeatureSequence],
    grid: &[f64],
    bins: usize,
) -> Result<EvalReport> {
    for &t in grid {
        check_theta(t)?;
    }
    if bins < 2 {
        return Err(Error::config("bins", "need at least 2 bins"));
    }
    let scored = score_all(model, test)?;
    let curve = curve_from_scored(&scored, grid);
    let sims = similarity_from_scored(&scored, bins)?;
    let (lo, hi) = scaled_mid_bins(bins);
    Ok(EvalReport {
        sequence_accuracy: accuracy_from_scored(&scored),
        mid_band_rate: mid_band_rate(&curve),
        mid_band_similarity: mid_band_similarity(&sims, lo, hi),
        threshold_curve: curve,
        similarity_curves: sims,
        test_sequences: scored.len(),
        test_frames: scored.iter().map(|s| s.trace.len()).sum(),
    })
}

/// [`MID_BAND_BINS`] rescaled to a different bin count.
fn scaled_mid_bins(bins: usize) -> (usize, usize) {
    if bins == DEFAULT_BINS {
        return MID_BAND_BINS;
    }
    let s = bins as f64 / DEFAULT_BINS as f64;
    let lo = (MID_BAND_BINS.0 as f64 * s).round() as usize;
    let hi = ((MID_BAND_BINS.1 as f64 * s).round() as usize).clamp(lo, bins - 1);
    (lo, hi)
}

impl EvalReport {
    /// Columns `theta,rate,correct,total`.
    pub fn write_threshold_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["theta", "rate", "correct", "total"])?;
        for p in &self.threshold_curve {
            w.write_record([
                p.theta.to_string(),
                p.rate.rate.to_string(),
                p.rate.correct.to_string(),
                p.rate.total.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("threshold csv", e))?;
        Ok(())
    }

    /// Columns `class_id,bin,time,mean_similarity,count`; empty bins leave
    /// `mean_similarity` blank.
    pub fn write_similarity_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class_id", "bin", "time", "mean_similarity", "count"])?;
        for c in &self.similarity_curves {
            for (b, bin) in c.bins.iter().enumerate() {
                w.write_record([
                    c.class_id.to_string(),
                    b.to_string(),
                    bin.time.to_string(),
                    bin.mean.map(|m| m.to_string()).unwrap_or_default(),
                    bin.count.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("similarity csv", e))?;
        Ok(())
    }

    /// Writes `threshold_curve.csv`, `similarity_curve.csv` and `summary.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| {
            let p = dir.join(name);
            std::fs::File::create(&p).map_err(|e| Error::io(&p, e))
        };
        self.write_threshold_csv(create("threshold_curve.csv")?)?;
        self.write_similarity_csv(create("similarity_curve.csv")?)?;
        let p = dir.join("summary.json");
        let f = create("summary.json")?;
        serde_json::to_writer_pretty(f, self).map_err(|e| Error::json(&p, e))?;
        Ok(())
    }
}
