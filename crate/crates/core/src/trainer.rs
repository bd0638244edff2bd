//! Two-phase training loop.
//!
//! Every epoch runs:
//! 1. minibatch gradient descent on `E1 + E2` (equal weights),
//! 2. a forward pass over the training set to rebuild the perceived-cluster
//!    model from the current hidden features,
//! 3. minibatch gradient descent on `e3_weight * E3` with that model frozen.
//!
//! Steps 2 and 3 are skipped when `use_e3` is off. All randomness is derived
//! from `(seed, epoch, phase)`, so a run resumed from a checkpoint continues
//! exactly like an uninterrupted one.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{build_model, PerceivedClusterModel, SequenceFeatures};
use crate::error::{Error, Result};
use crate::eval::sequence_accuracy;
use crate::intensity::estimate_trace;
use crate::lstm::{backward, forward, LstmDims, LstmParameters, ParamBuffer};
use crate::objectives::{
    sequence_objective, LossBreakdown, LossContext, SequenceTargets, TermWeights,
};
use crate::rng::Rng;
use crate::synth::{temporal_augment, Dataset, FeatureSequence};

const TAG_INIT: u64 = 11;
const TAG_SHUFFLE: u64 = 12;
const TAG_CLUSTER: u64 = 13;
const PHASE_E1E2: u64 = 1;
const PHASE_E3: u64 = 3;

/// Fields missing from a JSON config take their [`Default`] values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub hidden_dim: usize,
    /// Sharpness of the smoothed hinge in E3.
    pub beta: f64,
    pub e3_weight: f64,
    /// Passes over the training set in the E3 phase of each epoch.
    pub e3_passes: usize,
    pub seed: u64,
    pub use_e2: bool,
    pub use_e3: bool,
    /// Train E2 with the `g'(e)`-scaled gradient instead of its true derivative.
    pub literal_eq5: bool,
    pub momentum: f64,
    pub clip_norm: f64,
    /// Add the even-frame and odd-frame subsequences of every training sequence.
    pub temporal_augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            base_lr: 1e-4,
            lr_decay_factor: 10.0,
            lr_decay_every: 10,
            batch_size: 8,
            hidden_dim: 32,
            beta: 10.0,
            e3_weight: 1.0,
            e3_passes: 1,
            seed: 0,
            use_e2: true,
            use_e3: true,
            literal_eq5: false,
            momentum: 0.0,
            clip_norm: 5.0,
            temporal_augment: false,
        }
    }
}

impl TrainConfig {
    /// Settings used for the synthetic experiments: H = 16, a learning rate
    /// large enough for plain gradient descent to converge within the decay
    /// schedule, and a lighter E3 weight.
    pub fn desk_scale() -> Self {
        Self {
            base_lr: 0.5,
            hidden_dim: 16,
            batch_size: 4,
            e3_weight: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if !self.base_lr.is_finite() || self.base_lr <= 0.0 {
            return Err(Error::config("base_lr", "must be a positive finite number"));
        }
        if !self.lr_decay_factor.is_finite() || self.lr_decay_factor <= 0.0 {
            return Err(Error::config(
                "lr_decay_factor",
                "must be a positive finite number",
            ));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::config("lr_decay_every", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.hidden_dim == 0 {
            return Err(Error::config("hidden_dim", "must be positive"));
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(Error::config("beta", "must be a positive finite number"));
        }
        if !self.e3_weight.is_finite() || self.e3_weight <= 0.0 {
            return Err(Error::config(
                "e3_weight",
                "must be a positive finite number",
            ));
        }
        if self.e3_passes == 0 {
            return Err(Error::config("e3_passes", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::config("clip_norm", "must be positive"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_schedule(
            epoch,
            self.base_lr,
            self.lr_decay_factor,
            self.lr_decay_every,
        )
    }
}

/// `base_lr * factor^(-floor(epoch / every))`.
pub fn lr_schedule(epoch: usize, base_lr: f64, factor: f64, every: usize) -> f64 {
    base_lr / factor.powi((epoch / every) as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    E1e2,
    E3,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::E1e2 => "e1e2",
            Phase::E3 => "e3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: Phase,
    /// Mean per-sequence losses over the phase, measured before each update.
    pub losses: LossBreakdown,
    pub lr: f64,
    pub heldout_accuracy: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub entries: Vec<EpochLog>,
}

impl TrainLog {
    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &EpochLog> {
        self.entries.iter().filter(move |e| e.phase == phase)
    }

    /// CSV with columns `epoch,phase,e1,e2,e3,total,lr,heldout_accuracy`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "epoch",
            "phase",
            "e1",
            "e2",
            "e3",
            "total",
            "lr",
            "heldout_accuracy",
        ])?;
        for e in &self.entries {
            w.write_record([
                e.epoch.to_string(),
                e.phase.as_str().to_string(),
                e.losses.e1.to_string(),
                e.losses.e2.to_string(),
                e.losses.e3.to_string(),
                e.losses.total.to_string(),
                e.lr.to_string(),
                e.heldout_accuracy
                    .map(|a| a.to_string())
                    .unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("training log", e))?;
        Ok(())
    }
}

/// Mutable training state; what a checkpoint must hold to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: LstmParameters,
    pub velocity: Option<ParamBuffer>,
    pub epochs_completed: usize,
    pub init_seed: u64,
}

/// A training sequence with its cached intensity labels.
#[derive(Debug, Clone)]
struct Example {
    seq: FeatureSequence,
    targets: SequenceTargets,
}

pub struct Trainer {
    config: TrainConfig,
    dims: LstmDims,
    examples: Vec<Example>,
    heldout: Vec<FeatureSequence>,
}

impl Trainer {
    pub fn new(train: &Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        train.validate()?;
        let num_classes = train.num_classes();
        for c in 0..num_classes {
            if !train.sequences.iter().any(|s| s.class_id == c) {
                return Err(Error::Degenerate(format!(
                    "training set has no sequence of class {c}"
                )));
            }
        }
        let mut sequences = Vec::new();
        for s in &train.sequences {
            sequences.push(s.clone());
            if config.temporal_augment {
                let (even, odd) = temporal_augment(s)?;
                sequences.push(even);
                sequences.push(odd);
            }
        }
        let examples = sequences
            .into_iter()
            .map(|seq| {
                let intensity = estimate_trace(&seq)?;
                Ok(Example {
                    targets: SequenceTargets {
                        class_id: seq.class_id,
                        intensity,
                    },
                    seq,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dims: LstmDims {
                input_dim: train.feature_dim(),
                hidden_dim: config.hidden_dim,
                num_classes,
            },
            config,
            examples,
            heldout: Vec::new(),
        })
    }

    /// Sequences scored after every epoch for the `heldout_accuracy` column.
    pub fn with_heldout(mut self, heldout: &Dataset) -> Self {
        self.heldout = heldout.sequences.clone();
        self
    }

    pub fn dims(&self) -> LstmDims {
        self.dims
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn training_sequences(&self) -> usize {
        self.examples.len()
    }

    pub fn initial_state(&self) -> Result<TrainState> {
        let init_seed = Rng::derive(self.config.seed, &[TAG_INIT]).next_u64();
        Ok(TrainState {
            params: LstmParameters::init(self.dims, init_seed)?,
            velocity: None,
            epochs_completed: 0,
            init_seed,
        })
    }

    pub fn train(&self) -> Result<(TrainState, TrainLog)> {
        let mut state = self.initial_state()?;
        let log = self.run(&mut state, |_, _| Ok(()))?;
        Ok((state, log))
    }

    /// Runs the remaining epochs of `state`. `on_epoch` is called after each
    /// completed epoch with the updated state and that epoch's log entries.
    pub fn run(
        &self,
        state: &mut TrainState,
        mut on_epoch: impl FnMut(&TrainState, &[EpochLog]) -> Result<()>,
    ) -> Result<TrainLog> {
        if state.params.dims() != self.dims {
            return Err(Error::DimensionMismatch {
                context: "resumed parameters",
                expected: self.dims.hidden_dim,
                actual: state.params.dims().hidden_dim,
            });
        }
        let mut log = TrainLog::default();
        for epoch in state.epochs_completed..self.config.epochs {
            let start = log.entries.len();
            let lr = self.config.lr_at(epoch);

            let t0 = Instant::now();
            let e1e2 = TermWeights {
                e1: 1.0,
                e2: if self.config.use_e2 { 1.0 } else { 0.0 },
                e3: 0.0,
            };
            let losses = self.phase(state, epoch, PHASE_E1E2, 1, e1e2, None, lr)?;
            log.entries.push(EpochLog {
                epoch,
                phase: Phase::E1e2,
                losses,
                lr,
                heldout_accuracy: None,
                wall_seconds: t0.elapsed().as_secs_f64(),
            });

            if self.config.use_e3 {
                let t0 = Instant::now();
                let clusters = self.cluster_model(&state.params, epoch)?;
                let w = TermWeights {
                    e1: 0.0,
                    e2: 0.0,
                    e3: self.config.e3_weight,
                };
                let losses = self.phase(
                    state,
                    epoch,
                    PHASE_E3,
                    self.config.e3_passes,
                    w,
                    Some(&clusters),
                    lr,
                )?;
                log.entries.push(EpochLog {
                    epoch,
                    phase: Phase::E3,
                    losses,
                    lr,
                    heldout_accuracy: None,
                    wall_seconds: t0.elapsed().as_secs_f64(),
                });
            }

            if !self.heldout.is_empty() {
                let acc = sequence_accuracy(&state.params, &self.heldout)?;
                for e in &mut log.entries[start..] {
                    e.heldout_accuracy = Some(acc.rate);
                }
            }
            state.epochs_completed = epoch + 1;
            on_epoch(state, &log.entries[start..])?;
        }
        Ok(log)
    }

    /// Per-frame hidden features of every training sequence under `params`.
    pub fn features(&self, params: &LstmParameters) -> Result<Vec<SequenceFeatures>> {
        self.examples
            .par_iter()
            .map(|ex| {
                let tr = forward(params, &ex.seq.frames)?;
                Ok(SequenceFeatures {
                    class_id: ex.seq.class_id,
                    hidden: tr.steps.into_iter().map(|s| s.h).collect(),
                    intensity: ex.targets.intensity.values.clone(),
                })
            })
            .collect()
    }

    pub fn cluster_model(
        &self,
        params: &LstmParameters,
        epoch: usize,
    ) -> Result<PerceivedClusterModel> {
        let feats = self.features(params)?;
        let seed = Rng::derive(self.config.seed, &[TAG_CLUSTER, epoch as u64]).next_u64();
        build_model(&feats, self.dims.num_classes, seed)
    }

    #[allow(clippy::too_many_arguments)]
    fn phase(
        &self,
        state: &mut TrainState,
        epoch: usize,
        phase_tag: u64,
        passes: usize,
        weights: TermWeights,
        clusters: Option<&PerceivedClusterModel>,
        lr: f64,
    ) -> Result<LossBreakdown> {
        let ctx = LossContext {
            weights,
            beta: self.config.beta,
            literal_eq5: self.config.literal_eq5,
            clusters,
        };
        let phase_name = if phase_tag == PHASE_E3 { "e3" } else { "e1e2" };
        let mut total = LossBreakdown::default();
        let mut seen = 0usize;
        for pass in 0..passes {
            let mut order: Vec<usize> = (0..self.examples.len()).collect();
            Rng::derive(
                self.config.seed,
                &[TAG_SHUFFLE, epoch as u64, phase_tag, pass as u64],
            )
            .shuffle(&mut order);
            for batch in order.chunks(self.config.batch_size) {
                let per_seq: Vec<(LossBreakdown, ParamBuffer)> = batch
                    .par_iter()
                    .map(|&i| {
                        let ex = &self.examples[i];
                        let tr = forward(&state.params, &ex.seq.frames)?;
                        let perceived = clusters.map(|m| m.assignments[i].as_slice());
                        let (loss, up) =
                            sequence_objective(self.dims, &tr, &ex.targets, perceived, &ctx)?;
                        let g = backward(&state.params, &ex.seq.frames, &tr, &up)?;
                        Ok((loss, g))
                    })
                    .collect::<Result<_>>()
                    .map_err(|e| match e {
                        Error::NonFinite(msg) => {
                            Error::NonFinite(format!("epoch {epoch}, phase {phase_name}: {msg}"))
                        }
                        other => other,
                    })?;
                let mut grad = ParamBuffer::zeros(self.dims);
                for (loss, g) in &per_seq {
                    total.add(loss);
                    grad.add_scaled(g, 1.0);
                }
                seen += per_seq.len();
                grad.scale(1.0 / per_seq.len() as f64);
                grad.clip_norm(self.config.clip_norm);
                self.apply_update(state, &grad, lr);
                if !state.params.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "parameters after an update in epoch {epoch}, phase {phase_name}"
                    )));
                }
            }
        }
        Ok(total.scaled(1.0 / seen.max(1) as f64))
    }

    fn apply_update(&self, state: &mut TrainState, grad: &ParamBuffer, lr: f64) {
        if self.config.momentum == 0.0 {
            state.params.add_scaled(grad, -lr);
            return;
        }
        let v = state
            .velocity
            .get_or_insert_with(|| ParamBuffer::zeros(self.dims));
        v.scale(self.config.momentum);
        v.add_scaled(grad, -lr);
        state.params.add_scaled(v, 1.0);
    }
}

/// Train on `train` from scratch.
pub fn train(train: &Dataset, config: &TrainConfig) -> Result<(LstmParameters, TrainLog)> {
    let trainer = Trainer::new(train, config.clone())?;
    let (state, log) = trainer.train()?;
    Ok((state.params, log))
}
