//! The three training objectives and their upstream gradients.
//!
//! * E1: cross-entropy of the last-frame class probabilities.
//! * E2: half squared error between predicted and estimated per-frame intensity.
//! * E3: `0.5 * sum g(|f - m|^2 - d^2)` over per-frame hidden features, with
//!   `g` the smoothed hinge and `(m, d)` taken from the perceived-cluster model.
//!
//! Gradients here stop at the network outputs (logits, intensity, hidden
//! state); [`crate::lstm::backward`] carries them to the parameters.

use serde::{Deserialize, Serialize};

use crate::clustering::{Perceived, PerceivedClusterModel};
use crate::error::{check_dim, Error, Result};
use crate::intensity::IntensityTrace;
use crate::lstm::{ForwardTrace, LstmDims, Upstream};
use crate::math::{softplus_g_prime, softplus_unchecked, squared_distance};

/// Lower bound applied to probabilities inside the cross-entropy log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn add(&mut self, other: &LossBreakdown) {
        self.e1 += other.e1;
        self.e2 += other.e2;
        self.e3 += other.e3;
        self.total += other.total;
    }

    pub fn scaled(&self, k: f64) -> LossBreakdown {
        LossBreakdown {
            e1: self.e1 * k,
            e2: self.e2 * k,
            e3: self.e3 * k,
            total: self.total * k,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.e1.is_finite() && self.e2.is_finite() && self.e3.is_finite() && self.total.is_finite()
    }
}

pub fn one_hot(class_id: usize, num_classes: usize) -> Vec<f64> {
    let mut y = vec![0.0; num_classes];
    y[class_id] = 1.0;
    y
}

pub fn loss_e1(yhat: &[f64], y: &[f64]) -> Result<f64> {
    check_dim("loss_e1", yhat.len(), y.len())?;
    Ok(-yhat
        .iter()
        .zip(y)
        .map(|(p, t)| {
            if *t == 0.0 {
                0.0
            } else {
                t * p.max(PROB_FLOOR).ln()
            }
        })
        .sum::<f64>())
}

/// Gradient of E1 with respect to the pre-softmax logits: `yhat - y`.
pub fn grad_e1_logits(yhat: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_dim("grad_e1_logits", yhat.len(), y.len())?;
    Ok(yhat.iter().zip(y).map(|(p, t)| p - t).collect())
}

pub fn loss_e2(pred: &[f64], label: &IntensityTrace) -> Result<f64> {
    check_dim("loss_e2", label.len(), pred.len())?;
    Ok(0.5
        * pred
            .iter()
            .zip(&label.values)
            .map(|(p, l)| (p - l) * (p - l))
            .sum::<f64>())
}

/// Exact derivative of E2 with respect to each predicted intensity.
pub fn grad_e2_intensity(pred: &[f64], label: &IntensityTrace) -> Result<Vec<f64>> {
    check_dim("grad_e2_intensity", label.len(), pred.len())?;
    Ok(pred.iter().zip(&label.values).map(|(p, l)| p - l).collect())
}

/// The E2 gradient with an extra `g'(e)` factor per frame, where
/// `e = (L_t - Lhat_t)^2`. This is not the derivative of E2; it is kept to
/// measure how far that variant departs from the true gradient.
pub fn grad_e2_literal(pred: &[f64], label: &IntensityTrace, beta: f64) -> Result<Vec<f64>> {
    check_dim("grad_e2_literal", label.len(), pred.len())?;
    Ok(pred
        .iter()
        .zip(&label.values)
        .map(|(p, l)| {
            let e = (l - p) * (l - p);
            softplus_g_prime(e, beta) * (p - l)
        })
        .collect())
}

/// One hidden feature entering E3, labelled by its sequence class and the
/// cluster it was perceived as.
#[derive(Debug, Clone, Copy)]
pub struct ClusterFeature<'a> {
    pub source_class: usize,
    pub perceived: Perceived,
    pub feature: &'a [f64],
}

fn check_beta(beta: f64) -> Result<()> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::config(
            "beta",
            format!("must be a positive finite number, got {beta}"),
        ));
    }
    Ok(())
}

pub fn loss_e3(
    features: &[ClusterFeature<'_>],
    model: &PerceivedClusterModel,
    beta: f64,
) -> Result<f64> {
    check_beta(beta)?;
    let mut acc = 0.0;
    for f in features {
        let (center, radius) = model.target(f.source_class, f.perceived)?;
        check_dim("loss_e3 feature", center.len(), f.feature.len())?;
        let e3 = squared_distance(f.feature, center) - radius * radius;
        acc += softplus_unchecked(e3, beta);
    }
    Ok(0.5 * acc)
}

/// Per-feature gradient `g'(e3) (f - m)`; cluster statistics are constants.
pub fn grad_e3_features(
    features: &[ClusterFeature<'_>],
    model: &PerceivedClusterModel,
    beta: f64,
) -> Result<Vec<Vec<f64>>> {
    check_beta(beta)?;
    features
        .iter()
        .map(|f| {
            let (center, radius) = model.target(f.source_class, f.perceived)?;
            check_dim("grad_e3 feature", center.len(), f.feature.len())?;
            let e3 = squared_distance(f.feature, center) - radius * radius;
            let k = softplus_g_prime(e3, beta);
            Ok(f.feature
                .iter()
                .zip(center)
                .map(|(x, m)| k * (x - m))
                .collect())
        })
        .collect()
}

/// Relative weight of each objective term. A zero weight disables the term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermWeights {
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
}

impl TermWeights {
    pub const E1: TermWeights = TermWeights {
        e1: 1.0,
        e2: 0.0,
        e3: 0.0,
    };
    pub const E2: TermWeights = TermWeights {
        e1: 0.0,
        e2: 1.0,
        e3: 0.0,
    };
    pub const E3: TermWeights = TermWeights {
        e1: 0.0,
        e2: 0.0,
        e3: 1.0,
    };
    pub const E1_E2: TermWeights = TermWeights {
        e1: 1.0,
        e2: 1.0,
        e3: 0.0,
    };
}

/// Supervision attached to one training sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTargets {
    pub class_id: usize,
    pub intensity: IntensityTrace,
}

/// Settings shared by all sequences of one loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossContext<'a> {
    pub weights: TermWeights,
    pub beta: f64,
    pub literal_eq5: bool,
    /// Required when `weights.e3 != 0`.
    pub clusters: Option<&'a PerceivedClusterModel>,
}

/// Weighted loss of one sequence and the matching upstream gradients.
/// `perceived` gives the cluster assignment of each frame and is only read
/// when E3 is active.
pub fn sequence_objective(
    dims: LstmDims,
    trace: &ForwardTrace,
    targets: &SequenceTargets,
    perceived: Option<&[Perceived]>,
    ctx: &LossContext<'_>,
) -> Result<(LossBreakdown, Upstream)> {
    let n = trace.len();
    let mut up = Upstream::zeros(n, dims);
    let mut out = LossBreakdown::default();
    let w = ctx.weights;

    if w.e1 != 0.0 {
        let y = one_hot(targets.class_id, dims.num_classes);
        out.e1 = loss_e1(&trace.probs, &y)?;
        let g = grad_e1_logits(&trace.probs, &y)?;
        up.logits[n - 1] = g.into_iter().map(|v| w.e1 * v).collect();
    }
    if w.e2 != 0.0 {
        let pred = trace.intensities();
        out.e2 = loss_e2(&pred, &targets.intensity)?;
        let g = if ctx.literal_eq5 {
            grad_e2_literal(&pred, &targets.intensity, ctx.beta)?
        } else {
            grad_e2_intensity(&pred, &targets.intensity)?
        };
        up.intensity = g.into_iter().map(|v| w.e2 * v).collect();
    }
    if w.e3 != 0.0 {
        let model = ctx.clusters.ok_or_else(|| {
            Error::config("clusters", "E3 is active but no cluster model was given")
        })?;
        let perceived = perceived
            .ok_or_else(|| Error::config("perceived", "E3 needs per-frame assignments"))?;
        check_dim("perceived assignments", n, perceived.len())?;
        let features: Vec<ClusterFeature<'_>> = trace
            .steps
            .iter()
            .zip(perceived)
            .map(|(s, &p)| ClusterFeature {
                source_class: targets.class_id,
                perceived: p,
                feature: &s.h,
            })
            .collect();
        out.e3 = loss_e3(&features, model, ctx.beta)?;
        let g = grad_e3_features(&features, model, ctx.beta)?;
        up.hidden = g
            .into_iter()
            .map(|v| v.into_iter().map(|x| w.e3 * x).collect())
            .collect();
    }
    out.total = w.e1 * out.e1 + w.e2 * out.e2 + w.e3 * out.e3;
    if !out.is_finite() {
        return Err(Error::NonFinite(format!("loss {out:?}")));
    }
    Ok((out, up))
}
