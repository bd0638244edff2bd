//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use crate::clustering::{build_model, Perceived, PerceivedClusterModel, SequenceFeatures};
use crate::dd::DD;
use crate::error::{Error, Result};
use crate::intensity::estimate_trace;
use crate::lstm::{backward_into, forward, Layout, LstmDims, LstmParameters, ParamGrads};
use crate::objectives::{
    sequence_objective, LossContext, SequenceTargets, TermWeights, PROB_FLOOR,
};
use crate::rng::Rng;
use crate::synth::FeatureSequence;

/// Networks larger than this are checked on a random subsample.
pub const FULL_CHECK_LIMIT: usize = 500;
pub const SUBSAMPLE: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Coordinates to probe: all of them for small problems, otherwise a seeded
/// sample of [`SUBSAMPLE`] distinct indices.
pub fn probe_indices(len: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    if len > FULL_CHECK_LIMIT {
        Rng::derive(seed, &[0x6772_6164]).shuffle(&mut idx);
        idx.truncate(SUBSAMPLE);
        idx.sort_unstable();
    }
    idx
}

/// Scalar type a loss can be evaluated in for finite differences.
pub trait FdScalar: Copy {
    /// `x + eps`, exact where the type allows it.
    fn perturbed(x: f64, eps: f64) -> Self;
    /// `(plus - minus) / (2 eps)` rounded to `f64`.
    fn central(plus: Self, minus: Self, eps: f64) -> f64;
    fn finite(self) -> bool;
}

impl FdScalar for f64 {
    fn perturbed(x: f64, eps: f64) -> f64 {
        x + eps
    }
    fn central(plus: f64, minus: f64, eps: f64) -> f64 {
        (plus - minus) / (2.0 * eps)
    }
    fn finite(self) -> bool {
        self.is_finite()
    }
}

impl FdScalar for DD {
    fn perturbed(x: f64, eps: f64) -> DD {
        DD::new(x) + DD::new(eps)
    }
    fn central(plus: DD, minus: DD, eps: f64) -> f64 {
        ((plus - minus) / DD::new(2.0 * eps)).to_f64()
    }
    fn finite(self) -> bool {
        self.is_finite()
    }
}

/// Compare `grad` against central differences of `loss` around `x`.
pub fn check_gradient<T: FdScalar>(
    mut loss: impl FnMut(&[T]) -> Result<T>,
    x: &[f64],
    grad: &[f64],
    epsilon: f64,
    indices: &[usize],
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::config(
            "epsilon",
            format!("must lie in [1e-7, 1e-3], got {epsilon}"),
        ));
    }
    crate::error::check_dim("gradient length", x.len(), grad.len())?;
    let mut probe: Vec<T> = x.iter().map(|&v| T::perturbed(v, 0.0)).collect();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for &k in indices {
        let orig = probe[k];
        probe[k] = T::perturbed(x[k], epsilon);
        let plus = loss(&probe)?;
        probe[k] = T::perturbed(x[k], -epsilon);
        let minus = loss(&probe)?;
        probe[k] = orig;
        if !plus.finite() || !minus.finite() {
            return Err(Error::NonFinite(format!("loss at parameter {k}")));
        }
        let numeric = T::central(plus, minus, epsilon);
        let rel = relative_error(grad[k], numeric);
        if rel > report.max_relative_error || report.checked == 0 {
            report.max_relative_error = rel;
            report.worst_index = k;
            report.analytic = grad[k];
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}

/// A loss over a fixed set of sequences, expressed through the network.
#[derive(Debug, Clone)]
pub struct LossSpec {
    pub sequences: Vec<FeatureSequence>,
    pub targets: Vec<SequenceTargets>,
    /// Per-sequence frame assignments, needed when E3 is active.
    pub perceived: Option<Vec<Vec<Perceived>>>,
    pub clusters: Option<PerceivedClusterModel>,
    pub weights: TermWeights,
    pub beta: f64,
    pub literal_eq5: bool,
}

impl LossSpec {
    fn context(&self) -> LossContext<'_> {
        LossContext {
            weights: self.weights,
            beta: self.beta,
            literal_eq5: self.literal_eq5,
            clusters: self.clusters.as_ref(),
        }
    }

    fn perceived(&self, i: usize) -> Option<&[Perceived]> {
        self.perceived.as_ref().map(|p| p[i].as_slice())
    }

    pub fn loss(&self, params: &LstmParameters) -> Result<f64> {
        let ctx = self.context();
        let mut total = 0.0;
        for (i, (seq, tg)) in self.sequences.iter().zip(&self.targets).enumerate() {
            let tr = forward(params, &seq.frames)?;
            let (l, _) = sequence_objective(params.dims(), &tr, tg, self.perceived(i), &ctx)?;
            total += l.total;
        }
        Ok(total)
    }

    pub fn gradient(&self, params: &LstmParameters) -> Result<ParamGrads> {
        let ctx = self.context();
        let mut grads = ParamGrads::zeros(params.dims());
        for (i, (seq, tg)) in self.sequences.iter().zip(&self.targets).enumerate() {
            let tr = forward(params, &seq.frames)?;
            let (_, up) = sequence_objective(params.dims(), &tr, tg, self.perceived(i), &ctx)?;
            backward_into(params, &seq.frames, &tr, &up, &mut grads)?;
        }
        Ok(grads)
    }

    /// The same loss evaluated in double-double arithmetic, so that finite
    /// differences of it are not swamped by rounding.
    pub fn loss_precise(&self, dims: LstmDims, x: &[DD]) -> Result<DD> {
        crate::error::check_dim("parameter vector", Layout::new(dims).len(), x.len())?;
        let w = self.weights;
        let mut total = DD::ZERO;
        for (i, (seq, tg)) in self.sequences.iter().zip(&self.targets).enumerate() {
            let (hidden, intensity, logits) = forward_precise(dims, x, &seq.frames)?;
            if w.e1 != 0.0 {
                total = total + DD::new(w.e1) * e1_precise(&logits, tg.class_id);
            }
            if w.e2 != 0.0 {
                crate::error::check_dim("intensity targets", intensity.len(), tg.intensity.len())?;
                let mut acc = DD::ZERO;
                for (p, &l) in intensity.iter().zip(&tg.intensity.values) {
                    acc = acc + (*p - DD::new(l)).square();
                }
                total = total + DD::new(0.5 * w.e2) * acc;
            }
            if w.e3 != 0.0 {
                let model = self.clusters.as_ref().ok_or_else(|| {
                    Error::config("clusters", "E3 is active but no cluster model was given")
                })?;
                let perceived = self
                    .perceived(i)
                    .ok_or_else(|| Error::config("perceived", "E3 needs per-frame assignments"))?;
                let mut acc = DD::ZERO;
                for (h, &p) in hidden.iter().zip(perceived) {
                    let (center, radius) = model.target(tg.class_id, p)?;
                    let mut dist = DD::ZERO;
                    for (hj, &mj) in h.iter().zip(center) {
                        dist = dist + (*hj - DD::new(mj)).square();
                    }
                    acc = acc + (dist - DD::new(radius).square()).softplus(self.beta);
                }
                total = total + DD::new(0.5 * w.e3) * acc;
            }
        }
        Ok(total)
    }

    /// Same sequences and targets, different term weights.
    pub fn with_weights(&self, weights: TermWeights) -> LossSpec {
        LossSpec {
            weights,
            ..self.clone()
        }
    }

    pub fn with_literal_eq5(&self, literal: bool) -> LossSpec {
        LossSpec {
            literal_eq5: literal,
            ..self.clone()
        }
    }
}

fn matvec_dd(w: &[DD], rows: usize, cols: usize, v: &[DD]) -> Vec<DD> {
    (0..rows)
        .map(|r| {
            w[r * cols..(r + 1) * cols]
                .iter()
                .zip(v)
                .fold(DD::ZERO, |acc, (a, b)| acc + *a * *b)
        })
        .collect()
}

/// Hidden states, intensities and last-frame logits.
#[allow(clippy::type_complexity)]
fn forward_precise(
    dims: LstmDims,
    x: &[DD],
    frames: &[Vec<f64>],
) -> Result<(Vec<Vec<DD>>, Vec<DD>, Vec<DD>)> {
    let LstmDims {
        input_dim: d,
        hidden_dim: h,
        num_classes: n,
    } = dims;
    let [r_wx, r_wh, r_b, r_wint, r_bint, r_wcls, r_bcls] = Layout::new(dims).ranges();
    let (w_x, w_h, b) = (&x[r_wx], &x[r_wh], &x[r_b]);
    let (w_int, b_int) = (&x[r_wint], x[r_bint.start]);
    let (w_cls, b_cls) = (&x[r_wcls], &x[r_bcls]);
    let mut hs = vec![DD::ZERO; h];
    let mut cs = vec![DD::ZERO; h];
    let mut hidden = Vec::with_capacity(frames.len());
    let mut intensity = Vec::with_capacity(frames.len());
    for frame in frames {
        crate::error::check_dim("input frame", d, frame.len())?;
        let xin: Vec<DD> = frame.iter().map(|&v| DD::new(v)).collect();
        let zx = matvec_dd(w_x, 4 * h, d, &xin);
        let zh = matvec_dd(w_h, 4 * h, h, &hs);
        let gates: Vec<DD> = (0..4 * h)
            .map(|k| {
                let z = zx[k] + zh[k] + b[k];
                if (2 * h..3 * h).contains(&k) {
                    z.tanh()
                } else {
                    z.sigmoid()
                }
            })
            .collect();
        for j in 0..h {
            cs[j] = gates[h + j] * cs[j] + gates[j] * gates[2 * h + j];
            hs[j] = gates[3 * h + j] * cs[j].tanh();
        }
        let s = w_int
            .iter()
            .zip(&hs)
            .fold(b_int, |acc, (a, v)| acc + *a * *v);
        intensity.push(s.sigmoid());
        hidden.push(hs.clone());
    }
    let mut logits = matvec_dd(w_cls, n, h, &hs);
    for (l, bc) in logits.iter_mut().zip(b_cls) {
        *l = *l + *bc;
    }
    Ok((hidden, intensity, logits))
}

/// `-ln max(p_y, floor)` with `p` the softmax of `logits`.
fn e1_precise(logits: &[DD], class_id: usize) -> DD {
    let max = logits
        .iter()
        .copied()
        .fold(logits[0], |a, b| if b > a { b } else { a });
    let sum = logits
        .iter()
        .fold(DD::ZERO, |acc, l| acc + (*l - max).exp());
    let p = (logits[class_id] - max).exp() / sum;
    let floor = DD::new(PROB_FLOOR);
    -(if p > floor { p } else { floor }).ln()
}

pub fn grad_check(
    spec: &LossSpec,
    params: &LstmParameters,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let grads = spec.gradient(params)?;
    let dims = params.dims();
    let indices = probe_indices(params.len(), seed);
    check_gradient(
        |x: &[DD]| spec.loss_precise(dims, x),
        params.as_slice(),
        grads.as_slice(),
        epsilon,
        &indices,
    )
}

/// Random sequences, intensity targets and a cluster model built from the
/// network's own features: the setting used by the `gradcheck` command.
pub fn random_problem(
    dims: LstmDims,
    frames: usize,
    sequences: usize,
    beta: f64,
    seed: u64,
) -> Result<(LstmParameters, LossSpec)> {
    let params = LstmParameters::init(dims, Rng::derive(seed, &[1]).next_u64())?;
    let mut rng = Rng::derive(seed, &[2]);
    let seqs: Vec<FeatureSequence> = (0..sequences)
        .map(|i| FeatureSequence {
            class_id: i % dims.num_classes,
            subject_id: 0,
            apex_index: frames - 1,
            frames: (0..frames)
                .map(|_| (0..dims.input_dim).map(|_| rng.uniform()).collect())
                .collect(),
        })
        .collect();
    let targets = seqs
        .iter()
        .map(|s| {
            Ok(SequenceTargets {
                class_id: s.class_id,
                intensity: estimate_trace(s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let features = seqs
        .iter()
        .zip(&targets)
        .map(|(s, t)| {
            let tr = forward(&params, &s.frames)?;
            Ok(SequenceFeatures {
                class_id: s.class_id,
                hidden: tr.steps.iter().map(|st| st.h.clone()).collect(),
                intensity: t.intensity.values.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let clusters = build_model(
        &features,
        dims.num_classes,
        Rng::derive(seed, &[3]).next_u64(),
    )?;
    let spec = LossSpec {
        sequences: seqs,
        targets,
        perceived: Some(clusters.assignments.clone()),
        clusters: Some(clusters),
        weights: TermWeights::E1_E2,
        beta,
        literal_eq5: false,
    };
    Ok((params, spec))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_toy_loss() {
        // f(x) = sum a_k x_k^2 + b_k x_k, gradient 2 a_k x_k + b_k
        let a = [1.0, -2.0, 0.5, 3.0];
        let b = [0.1, 0.0, -1.0, 2.0];
        let x = [0.3, -1.2, 2.0, 0.01];
        let grad: Vec<f64> = (0..4).map(|k| 2.0 * a[k] * x[k] + b[k]).collect();
        let rep = check_gradient(
            |y: &[f64]| Ok((0..4).map(|k| a[k] * y[k] * y[k] + b[k] * y[k]).sum()),
            &x,
            &grad,
            1e-5,
            &[0, 1, 2, 3],
        )
        .unwrap();
        assert!(rep.max_relative_error < 1e-10, "{rep:?}");
        assert_eq!(rep.checked, 4);
    }

    #[test]
    fn epsilon_range_and_non_finite() {
        let r = check_gradient(|_: &[f64]| Ok(0.0), &[0.0], &[0.0], 1e-2, &[0]);
        assert!(r.is_err());
        let r = check_gradient(|_: &[f64]| Ok(f64::NAN), &[0.0], &[0.0], 1e-5, &[0]);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn subsample_for_large_nets() {
        assert_eq!(probe_indices(148, 1).len(), 148);
        let big = probe_indices(5000, 1);
        assert_eq!(big.len(), SUBSAMPLE);
        assert_eq!(big, probe_indices(5000, 1));
        assert!(big.windows(2).all(|w| w[0] < w[1]));
    }

    fn small_dims() -> LstmDims {
        LstmDims {
            input_dim: 3,
            hidden_dim: 4,
            num_classes: 3,
        }
    }

    #[test]
    fn each_term_passes() {
        let (params, spec) = random_problem(small_dims(), 5, 3, 10.0, 17).unwrap();
        for w in [
            TermWeights::E1,
            TermWeights::E2,
            TermWeights::E3,
            TermWeights::E1_E2,
        ] {
            let rep = grad_check(&spec.with_weights(w), &params, 1e-5, 0).unwrap();
            assert!(rep.max_relative_error < 1e-4, "{w:?}: {rep:?}");
        }
    }

    #[test]
    fn precise_loss_matches_f64_loss() {
        let (params, spec) = random_problem(small_dims(), 6, 4, 10.0, 3).unwrap();
        let x: Vec<DD> = params.as_slice().iter().map(|&v| DD::new(v)).collect();
        for w in [
            TermWeights::E1,
            TermWeights::E2,
            TermWeights::E3,
            TermWeights::E1_E2,
        ] {
            let s = spec.with_weights(w);
            let want = s.loss(&params).unwrap();
            let got = s.loss_precise(params.dims(), &x).unwrap().to_f64();
            assert!(
                (got - want).abs() <= 1e-13 * want.abs().max(1e-3),
                "{w:?}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn combined_gradient_is_sum_of_parts() {
        let (params, spec) = random_problem(small_dims(), 5, 3, 10.0, 5).unwrap();
        let g1 = spec
            .with_weights(TermWeights::E1)
            .gradient(&params)
            .unwrap();
        let g2 = spec
            .with_weights(TermWeights::E2)
            .gradient(&params)
            .unwrap();
        let g12 = spec
            .with_weights(TermWeights::E1_E2)
            .gradient(&params)
            .unwrap();
        for k in 0..params.len() {
            let s = g1.as_slice()[k] + g2.as_slice()[k];
            assert!((s - g12.as_slice()[k]).abs() <= 1e-12 * s.abs().max(1e-3));
        }
    }

    #[test]
    fn literal_e2_gradient_disagrees() {
        let (params, spec) = random_problem(small_dims(), 5, 3, 10.0, 9).unwrap();
        let literal = spec.with_weights(TermWeights::E2).with_literal_eq5(true);
        let rep = grad_check(&literal, &params, 1e-5, 0).unwrap();
        assert!(rep.max_relative_error > 1e-2, "{rep:?}");
    }
}
