//! Perceived-expression clusters over per-frame recurrent features.
//!
//! The frames of each expressive class are split by 2-means into a
//! perceived-neutral and a perceived-expression cluster. The cluster whose
//! members have the lower mean estimated intensity is the neutral one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{mean_of, norm2, squared_distance};
use crate::rng::Rng;
use crate::synth::NEUTRAL;

const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans2 {
    /// Cluster index (0 or 1) per point.
    pub labels: Vec<usize>,
    pub centroids: [Vec<f64>; 2],
    pub iterations: usize,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub wcss_history: Vec<f64>,
}

impl KMeans2 {
    pub fn wcss(&self) -> f64 {
        *self.wcss_history.last().expect("at least one iteration")
    }
}

pub fn wcss(points: &[&[f64]], labels: &[usize], centroids: &[Vec<f64>; 2]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| squared_distance(p, &centroids[l]))
        .sum()
}

fn assign(points: &[&[f64]], centroids: &[Vec<f64>; 2], labels: &mut [usize]) {
    for (p, l) in points.iter().zip(labels.iter_mut()) {
        let d0 = squared_distance(p, &centroids[0]);
        let d1 = squared_distance(p, &centroids[1]);
        *l = usize::from(d1 < d0);
    }
}

fn centroids_of(points: &[&[f64]], labels: &[usize]) -> Result<[Vec<f64>; 2]> {
    let dim = points[0].len();
    let mut out: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (k, slot) in out.iter_mut().enumerate() {
        let members = points
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == k)
            .map(|(p, _)| *p);
        // Lloyd's update with two clusters started from distinct points never
        // empties a cluster; treat it as an internal failure if it happens.
        *slot = mean_of(members, dim)
            .ok_or_else(|| Error::Degenerate(format!("k-means cluster {k} became empty")))?;
    }
    Ok(out)
}

/// 2-means with k-means++ seeding, iterated until the assignment is stable
/// or 100 iterations have run.
pub fn kmeans2(points: &[&[f64]], seed: u64) -> Result<KMeans2> {
    if points.len() < 2 {
        return Err(Error::Degenerate("k-means needs at least 2 points".into()));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            context: "kmeans2 point",
            expected: dim,
            actual: p.len(),
        });
    }
    let mut rng = Rng::new(seed);
    let first = rng.below(points.len());
    let weights: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, points[first]))
        .collect();
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Err(Error::Degenerate("k-means over identical points".into()));
    }
    let r = rng.uniform() * total;
    let mut acc = 0.0;
    let mut second = None;
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        acc += w;
        second = Some(i);
        if acc > r {
            break;
        }
    }
    let second = second.expect("total weight is positive");

    let mut centroids = [points[first].to_vec(), points[second].to_vec()];
    let mut labels = vec![0usize; points.len()];
    assign(points, &centroids, &mut labels);
    let mut wcss_history = Vec::new();
    let mut iterations = 0;
    loop {
        centroids = centroids_of(points, &labels)?;
        iterations += 1;
        wcss_history.push(wcss(points, &labels, &centroids));
        if iterations >= MAX_ITERATIONS {
            break;
        }
        let previous = labels.clone();
        assign(points, &centroids, &mut labels);
        if labels == previous {
            break;
        }
    }
    Ok(KMeans2 {
        labels,
        centroids,
        iterations,
        wcss_history,
    })
}

/// Which cluster a frame was perceived as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Perceived {
    Neutral,
    Expressive(usize),
}

/// Per-frame recurrent features of one sequence together with its label and
/// estimated intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFeatures {
    pub class_id: usize,
    pub hidden: Vec<Vec<f64>>,
    pub intensity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCluster {
    pub class_id: usize,
    pub mean: Vec<f64>,
    pub radius: f64,
    pub neutral_count: usize,
    pub expressive_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceivedClusterModel {
    pub num_classes: usize,
    pub neutral_mean: Vec<f64>,
    /// One entry per expressive class that had training frames, by class id.
    pub classes: Vec<ClassCluster>,
    /// Perceived label of every frame, indexed like the input sequences.
    pub assignments: Vec<Vec<Perceived>>,
}

impl PerceivedClusterModel {
    pub fn class(&self, class_id: usize) -> Option<&ClassCluster> {
        self.classes.iter().find(|c| c.class_id == class_id)
    }

    /// Center and radius that a frame from a `source_class` sequence is pulled
    /// toward. Perceived-neutral frames use the neutral mean with the radius
    /// of their source class; frames of neutral sequences use the smallest
    /// radius among the expressive classes.
    pub fn target(&self, source_class: usize, perceived: Perceived) -> Result<(&[f64], f64)> {
        match perceived {
            Perceived::Expressive(c) => {
                let cl = self.class(c).ok_or_else(|| missing(c))?;
                Ok((&cl.mean, cl.radius))
            }
            Perceived::Neutral if source_class == NEUTRAL => {
                let radius = self
                    .classes
                    .iter()
                    .map(|c| c.radius)
                    .fold(None, |acc: Option<f64>, r| {
                        Some(acc.map_or(r, |a| a.min(r)))
                    })
                    .ok_or_else(|| {
                        Error::Degenerate("cluster model has no expressive classes".into())
                    })?;
                Ok((&self.neutral_mean, radius))
            }
            Perceived::Neutral => {
                let cl = self
                    .class(source_class)
                    .ok_or_else(|| missing(source_class))?;
                Ok((&self.neutral_mean, cl.radius))
            }
        }
    }
}

fn missing(c: usize) -> Error {
    Error::Degenerate(format!("cluster model has no entry for class {c}"))
}

pub fn build_model(
    sequences: &[SequenceFeatures],
    num_classes: usize,
    seed: u64,
) -> Result<PerceivedClusterModel> {
    let dim = sequences
        .iter()
        .flat_map(|s| s.hidden.first())
        .map(|h| h.len())
        .next()
        .ok_or(Error::EmptyInput("no frames to cluster"))?;
    for s in sequences {
        crate::error::check_dim("intensity per frame", s.hidden.len(), s.intensity.len())?;
        if s.class_id >= num_classes {
            return Err(Error::Degenerate(format!(
                "class id {} out of range",
                s.class_id
            )));
        }
    }
    let mut assignments: Vec<Vec<Perceived>> = sequences
        .iter()
        .map(|s| vec![Perceived::Neutral; s.hidden.len()])
        .collect();
    let mut clusters = Vec::new();

    for class_id in 1..num_classes {
        let mut points: Vec<&[f64]> = Vec::new();
        let mut intensities = Vec::new();
        let mut index = Vec::new();
        for (si, s) in sequences
            .iter()
            .enumerate()
            .filter(|(_, s)| s.class_id == class_id)
        {
            for (t, h) in s.hidden.iter().enumerate() {
                points.push(h);
                intensities.push(s.intensity[t]);
                index.push((si, t));
            }
        }
        if points.is_empty() {
            continue;
        }
        let km = kmeans2(&points, Rng::derive(seed, &[class_id as u64]).next_u64())
            .map_err(|e| Error::Degenerate(format!("class {class_id}: {e}")))?;
        let mut sum = [0.0; 2];
        let mut count = [0usize; 2];
        for (&l, &v) in km.labels.iter().zip(&intensities) {
            sum[l] += v;
            count[l] += 1;
        }
        let mean_intensity = [sum[0] / count[0] as f64, sum[1] / count[1] as f64];
        if mean_intensity[0] == mean_intensity[1] {
            log::warn!("class {class_id}: both clusters have equal mean intensity, cluster 0 taken as neutral");
        }
        let expressive = usize::from(mean_intensity[1] > mean_intensity[0]);
        for (&l, &(si, t)) in km.labels.iter().zip(&index) {
            if l == expressive {
                assignments[si][t] = Perceived::Expressive(class_id);
            }
        }
        clusters.push(ClassCluster {
            class_id,
            mean: km.centroids[expressive].clone(),
            radius: 0.0,
            neutral_count: count[1 - expressive],
            expressive_count: count[expressive],
        });
    }

    let neutral_frames = sequences.iter().zip(&assignments).flat_map(|(s, a)| {
        s.hidden
            .iter()
            .zip(a)
            .filter(|(_, p)| **p == Perceived::Neutral)
            .map(|(h, _)| h.as_slice())
    });
    let neutral_mean = mean_of(neutral_frames, dim)
        .ok_or_else(|| Error::Degenerate("no perceived-neutral frames".into()))?;
    for c in &mut clusters {
        let diff: Vec<f64> = c
            .mean
            .iter()
            .zip(&neutral_mean)
            .map(|(a, b)| a - b)
            .collect();
        c.radius = norm2(&diff) / 2.0;
        if c.radius == 0.0 {
            log::warn!(
                "class {}: expressive mean coincides with the neutral mean",
                c.class_id
            );
        }
    }
    Ok(PerceivedClusterModel {
        num_classes,
        neutral_mean,
        classes: clusters,
        assignments,
    })
}
