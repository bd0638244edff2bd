//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero if any of them fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use onfly::cli::{gradcheck, GradcheckArgs};
use onfly::clustering::kmeans2;
use onfly::eval::sequence_accuracy;
use onfly::experiment::{run_experiment, ExperimentConfig, Variant};
use onfly::intensity::estimate_trace;
use onfly::lstm::{forward, LstmDims, LstmParameters, StreamingPredictor};
use onfly::rng::Rng;
use onfly::synth::{generate, split_subject_independent, Dataset, GenConfig};
use onfly::trainer::{TrainConfig, Trainer};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn gradcheck_args() -> GradcheckArgs {
    GradcheckArgs {
        seed: 0,
        seeds: 10,
        input_dim: 3,
        hidden_dim: 4,
        num_classes: 3,
        frames: 5,
        sequences: 3,
        beta: 10.0,
        epsilon: 1e-5,
        tolerance: 1e-4,
        literal_eq5: false,
        out: None,
    }
}

fn gradient_fidelity() -> Outcome {
    let summary = gradcheck(&gradcheck_args()).expect("gradcheck runs");
    let detail = summary
        .terms
        .iter()
        .map(|t| format!("{} {:.2e}", t.term, t.max_relative_error))
        .collect::<Vec<_>>()
        .join(", ");
    let names: Vec<&str> = summary.terms.iter().map(|t| t.term.as_str()).collect();
    let complete = names == ["E1", "E2", "E3", "E1+E2"];
    outcome(
        complete && summary.terms.iter().all(|t| t.max_relative_error < 1e-4),
        format!("max relative error over 10 seeds: {detail}"),
    )
}

fn intensity_noise_free() -> Outcome {
    let cfg = GenConfig {
        noise_stddev: 0.0,
        subject_offset_stddev: 0.0,
        ..GenConfig::default()
    };
    let ds = generate(&cfg).expect("generate");
    let mut bad = Vec::new();
    let (mut expressive, mut neutral) = (0, 0);
    for (i, s) in ds.sequences.iter().enumerate() {
        let tr = estimate_trace(s).expect("trace").values;
        let ok = if s.is_neutral() {
            neutral += 1;
            tr.iter().all(|&v| v == 0.0)
        } else {
            expressive += 1;
            let min = tr.iter().copied().fold(f64::INFINITY, f64::min);
            tr.windows(2).all(|w| w[0] <= w[1]) && tr[s.apex_index] == 1.0 && min == 0.0
        };
        if !ok {
            bad.push(i);
        }
    }
    outcome(
        bad.is_empty(),
        format!("{expressive} expressive and {neutral} neutral sequences, violations at {bad:?}"),
    )
}

fn causality() -> Outcome {
    let dims = LstmDims {
        input_dim: 8,
        hidden_dim: 16,
        num_classes: 4,
    };
    let mut mismatches = 0;
    let mut frames_checked = 0;
    for i in 0..100u64 {
        let params = LstmParameters::init(dims, Rng::derive(7, &[i, 0]).next_u64()).expect("init");
        let mut rng = Rng::derive(7, &[i, 1]);
        let n = 1 + (rng.next_u64() % 30) as usize;
        let frames: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..dims.input_dim)
                    .map(|_| 4.0 * rng.uniform() - 2.0)
                    .collect()
            })
            .collect();
        let full = forward(&params, &frames).expect("forward");
        let mut stream = StreamingPredictor::new(&params);
        for t in 0..n {
            let pushed = stream.push(&frames[t]).expect("push");
            let prefix = forward(&params, &frames[..=t]).expect("prefix forward");
            let same_h = |h: &[f64]| {
                h.iter()
                    .zip(full.hidden(t))
                    .all(|(a, b)| a.to_bits() == b.to_bits())
            };
            let ok = same_h(&stream.state().h)
                && same_h(prefix.hidden(t))
                && pushed.intensity.to_bits() == full.steps[t].intensity.to_bits();
            if !ok {
                mismatches += 1;
            }
            frames_checked += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{frames_checked} frames over 100 sequences, {mismatches} bitwise mismatches"),
    )
}

fn optimal_bipartition(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let dim = points[0].len();
    let mut best = f64::INFINITY;
    // point 0 stays on side 0, so each bipartition is visited once
    let side_of = |mask: u32, k: usize| if k == 0 { 0 } else { (mask >> (k - 1)) & 1 };
    for mask in 1u32..(1 << (n - 1)) {
        let mut total = 0.0;
        for side in [0u32, 1] {
            let members: Vec<&Vec<f64>> = (0..n)
                .filter(|&k| side_of(mask, k) == side)
                .map(|k| &points[k])
                .collect();
            let mut mean = vec![0.0; dim];
            for p in &members {
                for (m, v) in mean.iter_mut().zip(p.iter()) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= members.len() as f64;
            }
            total += members
                .iter()
                .map(|p| {
                    p.iter()
                        .zip(&mean)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .sum::<f64>();
        }
        best = best.min(total);
    }
    best
}

fn kmeans_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut failures = 0;
    for i in 0..50u64 {
        let mut rng = Rng::derive(11, &[i]);
        let n = 2 + (rng.next_u64() % 11) as usize;
        let dim = 1 + (rng.next_u64() % 4) as usize;
        let split = 1 + (rng.next_u64() as usize % (n - 1));
        let points: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let center = if k < split { -5.0 } else { 5.0 };
                (0..dim).map(|_| center + rng.uniform() - 0.5).collect()
            })
            .collect();
        let refs: Vec<&[f64]> = points.iter().map(|p| p.as_slice()).collect();
        let got = kmeans2(&refs, i).expect("kmeans2").wcss();
        let want = optimal_bipartition(&points);
        let diff = (got - want).abs();
        worst = worst.max(diff);
        if diff > 1e-9 {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("50 instances, worst |WCSS - optimum| = {worst:.2e}"),
    )
}

fn default_data() -> Dataset {
    generate(&GenConfig::default()).expect("generate")
}

fn learnability(ds: &Dataset) -> Outcome {
    let folds = ds.subjects().len();
    let (train, test) = split_subject_independent(ds, folds, 0)
        .expect("split")
        .swap_remove(0);
    let cfg = TrainConfig {
        epochs: 50,
        ..Variant::E1e2.apply(&TrainConfig::desk_scale())
    };
    let hidden_dim = cfg.hidden_dim;
    let (state, log) = Trainer::new(&train, cfg)
        .expect("trainer")
        .with_heldout(&test)
        .train()
        .expect("train");
    let acc = sequence_accuracy(&state.params, &test.sequences).expect("accuracy");
    let first = log
        .entries
        .iter()
        .find(|e| e.heldout_accuracy.is_some_and(|a| a >= 0.90))
        .map(|e| e.epoch + 1);
    outcome(
        acc.rate >= 0.90,
        format!(
            "H={hidden_dim}, {} train / {} held-out sequences, accuracy after 50 epochs {:.4} ({}/{}), first reached 0.90 at epoch {}",
            train.sequences.len(),
            test.sequences.len(),
            acc.rate,
            acc.correct,
            acc.total,
            first.map_or("never".to_string(), |e| e.to_string()),
        ),
    )
}

fn trends(ds: &Dataset) -> (Outcome, Outcome) {
    let cfg = ExperimentConfig::new((0..5).collect(), TrainConfig::desk_scale());
    let report = run_experiment(ds, &cfg).expect("experiment");
    let [e1, e12, e123] = Variant::ALL.map(|v| report.summary(v));
    let fig4 = outcome(
        e123.mean_mid_band_rate > e1.mean_mid_band_rate
            && e12.mean_mid_band_rate >= e1.mean_mid_band_rate,
        format!(
            "mean rate over theta 0.3..0.7, 5 seeds: E1 {:.4}, E1+E2 {:.4}, E1+E2+E3 {:.4}",
            e1.mean_mid_band_rate, e12.mean_mid_band_rate, e123.mean_mid_band_rate
        ),
    );
    let fig5 = outcome(
        e123.mean_mid_band_similarity > e1.mean_mid_band_similarity,
        format!(
            "mean similarity in bins 8-14 of 20: E1 {:.4}, E1+E2 {:.4}, E1+E2+E3 {:.4}",
            e1.mean_mid_band_similarity,
            e12.mean_mid_band_similarity,
            e123.mean_mid_band_similarity
        ),
    );
    (fig4, fig5)
}

fn onfly(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_onfly"))
        .args(args)
        .output()
        .expect("run onfly binary")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = dir.path().join("data.json");
    let gen = onfly(&["gen", "--out", path_str(&data)]);
    if !gen.status.success() {
        return outcome(
            false,
            format!("gen failed: {}", String::from_utf8_lossy(&gen.stderr)),
        );
    }
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let r = onfly(&[
            "train",
            "--data",
            path_str(&data),
            "--epochs",
            "4",
            "--seed",
            "3",
            "--out",
            path_str(&out),
        ]);
        if !r.status.success() {
            return outcome(
                false,
                format!("train failed: {}", String::from_utf8_lossy(&r.stderr)),
            );
        }
        let read = |f: &str| std::fs::read(out.join(f)).expect("read output");
        files.push((read("checkpoint.json"), read("train_log.csv")));
    }
    let same_ckpt = files[0].0 == files[1].0;
    let same_log = files[0].1 == files[1].1;
    outcome(
        same_ckpt && same_log,
        format!(
            "two 4-epoch E1+E2+E3 runs: checkpoints identical {same_ckpt} ({} bytes), logs identical {same_log}",
            files[0].0.len()
        ),
    )
}

fn erratum_probe() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let report = dir.path().join("gradcheck.json");
    let r = onfly(&["gradcheck", "--literal-eq5", "--out", path_str(&report)]);
    let text = std::fs::read_to_string(&report).unwrap_or_default();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap_or_default();
    let literal = json["literal_e2"]["max_relative_error"]
        .as_f64()
        .unwrap_or(0.0);
    let corrected = json["terms"]
        .as_array()
        .and_then(|ts| ts.iter().find(|t| t["term"] == "E2"))
        .and_then(|t| t["max_relative_error"].as_f64())
        .unwrap_or(f64::INFINITY);
    outcome(
        r.status.code() == Some(0) && literal > 1e-2 && corrected < 1e-4,
        format!(
            "exit code {:?}, g'-scaled E2 deviation {literal:.3e}, exact E2 {corrected:.2e}",
            r.status.code()
        ),
    )
}

fn main() {
    let mut failed = Vec::new();
    let mut report = |name: &str, budget: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let elapsed = start.elapsed();
        let in_time = budget.is_none_or(|b| elapsed < b);
        let passed = o.passed && in_time;
        let budget_note = budget.map_or(String::new(), |b| {
            format!(" / budget {:.0} s", b.as_secs_f64())
        });
        println!(
            "[{}] {name}: {} ({:.2} s{budget_note})",
            if passed { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64()
        );
        if !passed {
            failed.push(name.to_string());
        }
        elapsed
    };
    let secs = Duration::from_secs;

    report("gradient fidelity", Some(secs(10)), &mut gradient_fidelity);
    report(
        "intensity on noise-free data",
        Some(secs(1)),
        &mut intensity_noise_free,
    );
    report("causality / streaming", Some(secs(5)), &mut causality);
    report(
        "k-means oracle equivalence",
        Some(secs(10)),
        &mut kmeans_oracle,
    );
    let ds = default_data();
    report(
        "learnability (E1+E2, LOSO fold 0)",
        Some(secs(120)),
        &mut || learnability(&ds),
    );
    let mut fig5 = None;
    let elapsed = report("threshold-curve trend", Some(secs(900)), &mut || {
        let (a, b) = trends(&ds);
        fig5 = Some(b);
        a
    });
    let fig5 = fig5.expect("trend runs produce both outcomes");
    let detail = format!(
        "{} (same runs as above, {:.2} s)",
        fig5.detail,
        elapsed.as_secs_f64()
    );
    report("similarity-curve trend", None, &mut || {
        outcome(fig5.passed, detail.clone())
    });
    report("determinism of train", None, &mut determinism);
    report("literal E2 gradient probe", None, &mut erratum_probe);

    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: {} failed: {}", failed.len(), failed.join(", "));
        std::process::exit(1);
    }
}
