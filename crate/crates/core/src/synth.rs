//! Synthetic per-frame feature sequences.
//!
//! Every run draws one neutral prototype `p0` and one prototype `p_c` per
//! expressive class. An expressive sequence moves from `p0` to `p_c` along a
//! monotone ramp that starts after a random onset delay; neutral sequences
//! stay at `p0`. Each subject adds a fixed Gaussian offset and every frame
//! gets independent Gaussian noise, and the result is clamped to `[0, 1]`.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Class id reserved for the neutral expression.
pub const NEUTRAL: usize = 0;

const TAG_PROTOTYPES: u64 = 1;
const TAG_SUBJECT: u64 = 2;
const TAG_SEQUENCE: u64 = 3;
const TAG_SPLIT: u64 = 4;

const PROTOTYPE_LO: f64 = 0.2;
const PROTOTYPE_HI: f64 = 0.8;
const PROTOTYPE_RETRIES: usize = 100;
const MAX_ONSET_FRACTION: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub class_id: usize,
    pub subject_id: usize,
    pub apex_index: usize,
    pub frames: Vec<Vec<f64>>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn is_neutral(&self) -> bool {
        self.class_id == NEUTRAL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Number of classes including neutral (class 0).
    pub num_classes: usize,
    pub feature_dim: usize,
    pub subjects: usize,
    pub sequences_per_subject_per_class: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub noise_stddev: f64,
    pub subject_offset_stddev: f64,
    /// Minimum Euclidean distance between any two prototypes.
    pub min_prototype_distance: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            feature_dim: 8,
            subjects: 12,
            sequences_per_subject_per_class: 3,
            min_len: 10,
            max_len: 20,
            noise_stddev: 0.03,
            subject_offset_stddev: 0.05,
            min_prototype_distance: 0.4,
            seed: 2018,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config(
                "num_classes",
                "must be at least 2 (neutral plus one expression)",
            ));
        }
        if self.feature_dim < 2 {
            return Err(Error::config("feature_dim", "must be at least 2"));
        }
        if self.subjects == 0 {
            return Err(Error::config("subjects", "must be positive"));
        }
        if self.sequences_per_subject_per_class == 0 {
            return Err(Error::config(
                "sequences_per_subject_per_class",
                "must be positive",
            ));
        }
        if self.min_len < 4 {
            return Err(Error::config("min_len", "must be at least 4"));
        }
        if self.max_len < self.min_len {
            return Err(Error::config("max_len", "must be >= min_len"));
        }
        if !self.noise_stddev.is_finite() || self.noise_stddev < 0.0 {
            return Err(Error::config("noise_stddev", "must be finite and >= 0"));
        }
        if !self.subject_offset_stddev.is_finite() || self.subject_offset_stddev < 0.0 {
            return Err(Error::config(
                "subject_offset_stddev",
                "must be finite and >= 0",
            ));
        }
        if !self.min_prototype_distance.is_finite() || self.min_prototype_distance < 0.0 {
            return Err(Error::config(
                "min_prototype_distance",
                "must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub config: GenConfig,
    pub sequences: Vec<FeatureSequence>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn subjects(&self) -> BTreeSet<usize> {
        self.sequences.iter().map(|s| s.subject_id).collect()
    }

    /// Same config, different sequences.
    pub fn with_sequences(&self, sequences: Vec<FeatureSequence>) -> Dataset {
        Dataset {
            config: self.config.clone(),
            sequences,
        }
    }

    /// Structural checks used after loading from disk.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        for (i, s) in self.sequences.iter().enumerate() {
            if s.frames.is_empty() {
                return Err(Error::Degenerate(format!("sequence {i} has no frames")));
            }
            if s.class_id >= self.config.num_classes {
                return Err(Error::Degenerate(format!(
                    "sequence {i} has class_id {} but num_classes is {}",
                    s.class_id, self.config.num_classes
                )));
            }
            if s.apex_index >= s.frames.len() {
                return Err(Error::Degenerate(format!(
                    "sequence {i} has apex_index {} beyond its {} frames",
                    s.apex_index,
                    s.frames.len()
                )));
            }
            for f in &s.frames {
                crate::error::check_dim("dataset frame", self.config.feature_dim, f.len())?;
                if !crate::math::all_finite(f) {
                    return Err(Error::NonFinite(format!(
                        "sequence {i} contains a non-finite feature"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ds: Dataset = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Prototype vectors; index 0 is the neutral prototype.
pub fn prototypes(config: &GenConfig) -> Result<Vec<Vec<f64>>> {
    let mut rng = Rng::derive(config.seed, &[TAG_PROTOTYPES]);
    let min_d2 = config.min_prototype_distance * config.min_prototype_distance;
    for _ in 0..PROTOTYPE_RETRIES {
        let protos: Vec<Vec<f64>> = (0..config.num_classes)
            .map(|_| {
                (0..config.feature_dim)
                    .map(|_| rng.uniform_in(PROTOTYPE_LO, PROTOTYPE_HI))
                    .collect()
            })
            .collect();
        let separated = (0..protos.len()).all(|a| {
            (a + 1..protos.len())
                .all(|b| crate::math::squared_distance(&protos[a], &protos[b]) >= min_d2)
        });
        if separated {
            return Ok(protos);
        }
    }
    Err(Error::config(
        "min_prototype_distance",
        format!(
            "no prototype set with pairwise distance >= {} found in {PROTOTYPE_RETRIES} attempts",
            config.min_prototype_distance
        ),
    ))
}

/// Per-frame ramp values: zero through the onset frame `onset`, then
/// `((t - onset) / (n - 1 - onset))^curvature` up to exactly 1 at the last frame.
pub fn ramp(n: usize, onset: usize, curvature: f64) -> Vec<f64> {
    debug_assert!(onset < n.saturating_sub(1));
    let span = (n - 1 - onset) as f64;
    (0..n)
        .map(|t| {
            if t <= onset {
                0.0
            } else if t == n - 1 {
                1.0
            } else {
                ((t - onset) as f64 / span).powf(curvature)
            }
        })
        .collect()
}

pub fn generate(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    let protos = prototypes(config)?;
    let d = config.feature_dim;
    let mut sequences = Vec::with_capacity(
        config.subjects * config.num_classes * config.sequences_per_subject_per_class,
    );
    for subject in 0..config.subjects {
        let mut srng = Rng::derive(config.seed, &[TAG_SUBJECT, subject as u64]);
        let offset: Vec<f64> = (0..d)
            .map(|_| config.subject_offset_stddev * srng.normal())
            .collect();
        for class_id in 0..config.num_classes {
            for k in 0..config.sequences_per_subject_per_class {
                let mut rng = Rng::derive(
                    config.seed,
                    &[TAG_SEQUENCE, subject as u64, class_id as u64, k as u64],
                );
                let n = config.min_len + rng.below(config.max_len - config.min_len + 1);
                let s = if class_id == NEUTRAL {
                    vec![0.0; n]
                } else {
                    let max_onset = (MAX_ONSET_FRACTION * n as f64).floor() as usize;
                    let onset = rng.below(max_onset + 1);
                    let curvature = rng.uniform_in(0.7, 1.5);
                    ramp(n, onset, curvature)
                };
                let p0 = &protos[NEUTRAL];
                let pc = &protos[class_id];
                let frames = s
                    .iter()
                    .map(|&st| {
                        (0..d)
                            .map(|j| {
                                let base = (1.0 - st) * p0[j] + st * pc[j];
                                let v = base + offset[j] + config.noise_stddev * rng.normal();
                                v.clamp(0.0, 1.0)
                            })
                            .collect()
                    })
                    .collect();
                sequences.push(FeatureSequence {
                    class_id,
                    subject_id: subject,
                    apex_index: n - 1,
                    frames,
                });
            }
        }
    }
    Ok(Dataset {
        config: config.clone(),
        sequences,
    })
}

/// Even-index and odd-index subsequences.
pub fn temporal_augment(seq: &FeatureSequence) -> Result<(FeatureSequence, FeatureSequence)> {
    if seq.frames.len() < 4 {
        return Err(Error::Degenerate(format!(
            "temporal augmentation needs at least 4 frames, got {}",
            seq.frames.len()
        )));
    }
    let pick = |parity: usize| {
        let frames: Vec<Vec<f64>> = seq.frames.iter().skip(parity).step_by(2).cloned().collect();
        FeatureSequence {
            class_id: seq.class_id,
            subject_id: seq.subject_id,
            apex_index: frames.len() - 1,
            frames,
        }
    };
    Ok((pick(0), pick(1)))
}

/// Subject-independent folds: subjects are shuffled with `seed` and dealt
/// round-robin, so fold sizes differ by at most one subject. Returns
/// `(train, test)` per fold with the original sequence order preserved.
pub fn split_subject_independent(
    ds: &Dataset,
    folds: usize,
    seed: u64,
) -> Result<Vec<(Dataset, Dataset)>> {
    let mut subjects: Vec<usize> = ds.subjects().into_iter().collect();
    if folds < 2 {
        return Err(Error::config("folds", "must be at least 2"));
    }
    if folds > subjects.len() {
        return Err(Error::config(
            "folds",
            format!(
                "{folds} folds requested but only {} subjects",
                subjects.len()
            ),
        ));
    }
    Rng::derive(seed, &[TAG_SPLIT]).shuffle(&mut subjects);
    let mut out = Vec::with_capacity(folds);
    for f in 0..folds {
        let held: BTreeSet<usize> = subjects
            .iter()
            .enumerate()
            .filter(|(i, _)| i % folds == f)
            .map(|(_, &s)| s)
            .collect();
        let (test, train): (Vec<_>, Vec<_>) = ds
            .sequences
            .iter()
            .cloned()
            .partition(|s| held.contains(&s.subject_id));
        out.push((ds.with_sequences(train), ds.with_sequences(test)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::estimate_trace;
    use proptest::prelude::*;

    fn small_config() -> GenConfig {
        GenConfig {
            subjects: 4,
            sequences_per_subject_per_class: 2,
            ..GenConfig::default()
        }
    }

    #[test]
    fn noise_free_endpoints_match_prototypes() {
        let cfg = GenConfig {
            noise_stddev: 0.0,
            subject_offset_stddev: 0.0,
            ..small_config()
        };
        let ds = generate(&cfg).unwrap();
        let protos = prototypes(&cfg).unwrap();
        for s in ds.sequences.iter().filter(|s| !s.is_neutral()) {
            assert_eq!(s.frames[0], protos[NEUTRAL]);
            assert_eq!(s.frames[s.len() - 1], protos[s.class_id]);
            assert_eq!(s.apex_index, s.len() - 1);
        }
    }

    #[test]
    fn noise_free_intensity_is_monotone() {
        let cfg = GenConfig {
            noise_stddev: 0.0,
            subject_offset_stddev: 0.0,
            ..small_config()
        };
        let ds = generate(&cfg).unwrap();
        for s in ds.sequences.iter().filter(|s| !s.is_neutral()) {
            let tr = estimate_trace(s).unwrap();
            assert!(
                tr.values.windows(2).all(|w| w[0] <= w[1]),
                "{:?}",
                tr.values
            );
            assert_eq!(tr.values[0], 0.0);
            assert_eq!(tr.values[s.apex_index], 1.0);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_config()).unwrap();
        let b = generate(&small_config()).unwrap();
        assert_eq!(a, b);
        let c = generate(&GenConfig {
            seed: 99,
            ..small_config()
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn every_subject_has_every_class() {
        let cfg = small_config();
        let ds = generate(&cfg).unwrap();
        for subject in 0..cfg.subjects {
            for class_id in 0..cfg.num_classes {
                let n = ds
                    .sequences
                    .iter()
                    .filter(|s| s.subject_id == subject && s.class_id == class_id)
                    .count();
                assert_eq!(n, cfg.sequences_per_subject_per_class);
            }
        }
        for s in &ds.sequences {
            assert!((cfg.min_len..=cfg.max_len).contains(&s.len()));
            assert!(s.frames.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn config_validation_names_field() {
        let bad = GenConfig {
            min_len: 3,
            ..GenConfig::default()
        };
        let err = generate(&bad).unwrap_err().to_string();
        assert!(err.contains("min_len"), "{err}");
        let bad = GenConfig {
            num_classes: 1,
            ..GenConfig::default()
        };
        assert!(generate(&bad)
            .unwrap_err()
            .to_string()
            .contains("num_classes"));
        let impossible = GenConfig {
            min_prototype_distance: 10.0,
            ..GenConfig::default()
        };
        assert!(generate(&impossible).is_err());
    }

    fn seq_of(n: usize) -> FeatureSequence {
        FeatureSequence {
            class_id: 2,
            subject_id: 5,
            apex_index: n - 1,
            frames: (0..n).map(|i| vec![i as f64, 0.0]).collect(),
        }
    }

    #[test]
    fn temporal_augment_parity() {
        let (e, o) = temporal_augment(&seq_of(10)).unwrap();
        assert_eq!((e.len(), o.len()), (5, 5));
        let (e, o) = temporal_augment(&seq_of(9)).unwrap();
        assert_eq!((e.len(), o.len()), (5, 4));
        assert_eq!(e.apex_index, 4);
        assert_eq!(o.apex_index, 3);
        let (e, o) = temporal_augment(&seq_of(4)).unwrap();
        assert_eq!(e.frames, vec![vec![0.0, 0.0], vec![2.0, 0.0]]);
        assert_eq!(o.frames, vec![vec![1.0, 0.0], vec![3.0, 0.0]]);
        assert_eq!((e.class_id, e.subject_id), (2, 5));
        assert!(temporal_augment(&seq_of(3)).is_err());
    }

    #[test]
    fn split_arithmetic() {
        let ds = generate(&GenConfig {
            subjects: 10,
            sequences_per_subject_per_class: 1,
            ..GenConfig::default()
        })
        .unwrap();
        for (folds, per_fold) in [(10, 1), (5, 2)] {
            let splits = split_subject_independent(&ds, folds, 1).unwrap();
            assert_eq!(splits.len(), folds);
            let mut seen = Vec::new();
            for (train, test) in &splits {
                assert_eq!(test.subjects().len(), per_fold);
                assert!(train.subjects().is_disjoint(&test.subjects()));
                assert_eq!(
                    train.sequences.len() + test.sequences.len(),
                    ds.sequences.len()
                );
                seen.extend(test.sequences.iter().cloned());
            }
            assert_eq!(seen.len(), ds.sequences.len());
            for s in &ds.sequences {
                assert_eq!(seen.iter().filter(|x| *x == s).count(), 1);
            }
        }
        assert!(split_subject_independent(&ds, 11, 1).is_err());
        assert!(split_subject_independent(&ds, 1, 1).is_err());
    }

    #[test]
    fn json_round_trip() {
        let ds = generate(&small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.json");
        ds.save(&path).unwrap();
        assert_eq!(Dataset::load(&path).unwrap(), ds);
    }

    proptest! {
        #[test]
        fn augment_outputs_are_subsequences(n in 4usize..40) {
            let s = seq_of(n);
            let (e, o) = temporal_augment(&s).unwrap();
            prop_assert_eq!(e.len() + o.len(), n);
            for (i, f) in e.frames.iter().enumerate() {
                prop_assert_eq!(f, &s.frames[2 * i]);
            }
            for (i, f) in o.frames.iter().enumerate() {
                prop_assert_eq!(f, &s.frames[2 * i + 1]);
            }
        }

        #[test]
        fn ramp_is_monotone(n in 4usize..60, onset_frac in 0.0f64..0.3, curv in 0.5f64..2.0) {
            let onset = (onset_frac * n as f64) as usize;
            let r = ramp(n, onset, curv);
            prop_assert_eq!(r[0], 0.0);
            prop_assert_eq!(r[n - 1], 1.0);
            prop_assert!(r.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
