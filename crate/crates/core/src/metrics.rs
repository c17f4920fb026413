//! Per-epoch diagnostics: per-class accuracy, feature norms on the balanced
//! test split, classifier weight norms, and summaries derived from them.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{FblError, Result};
use crate::model::{forward, Model};
use crate::trainer::RunResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub alpha: f64,
    pub mean_loss: f64,
    pub overall_acc: f64,
    pub per_class_acc: Vec<f64>,
    /// Mean `‖f‖` over each class's test samples.
    pub per_class_feat_norm_mean: Vec<f64>,
    pub per_class_feat_norm_min: Vec<f64>,
    pub per_class_feat_norm_max: Vec<f64>,
    /// `‖w_j‖` of each classifier column.
    pub per_class_weight_norm: Vec<f64>,
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Per-class accuracy and overall (sample-mean) accuracy of argmax predictions.
pub fn accuracy_from_logits(logits: ArrayView2<'_, f64>, labels: &[usize], num_classes: usize) -> (Vec<f64>, f64) {
    let mut hit = vec![0usize; num_classes];
    let mut seen = vec![0usize; num_classes];
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        seen[y] += 1;
        if argmax(row.iter().copied()) == y {
            hit[y] += 1;
        }
    }
    let per_class = hit
        .iter()
        .zip(&seen)
        .map(|(&h, &n)| if n == 0 { 0.0 } else { h as f64 / n as f64 })
        .collect();
    let overall = if labels.is_empty() { 0.0 } else { hit.iter().sum::<usize>() as f64 / labels.len() as f64 };
    (per_class, overall)
}

struct NormStats {
    mean: Vec<f64>,
    min: Vec<f64>,
    max: Vec<f64>,
}

fn norm_stats(norms: &[f64], labels: &[usize], num_classes: usize) -> NormStats {
    let mut sum = vec![0.0; num_classes];
    let mut n = vec![0usize; num_classes];
    let mut min = vec![f64::INFINITY; num_classes];
    let mut max = vec![0.0f64; num_classes];
    for (&v, &y) in norms.iter().zip(labels) {
        sum[y] += v;
        n[y] += 1;
        min[y] = min[y].min(v);
        max[y] = max[y].max(v);
    }
    for j in 0..num_classes {
        if n[j] == 0 {
            min[j] = 0.0;
        }
    }
    let mean = sum.iter().zip(&n).map(|(&s, &k)| if k == 0 { 0.0 } else { s / k as f64 }).collect();
    NormStats { mean, min, max }
}

/// Snapshot of `model` on the test split of `dataset`.
pub fn collect(model: &Model, dataset: &Dataset, epoch: usize, alpha: f64, mean_loss: f64) -> Result<EpochMetrics> {
    let c = dataset.num_classes();
    let trace = forward(model, dataset.test_x.view())?;
    let (per_class_acc, overall_acc) = accuracy_from_logits(trace.logits.view(), &dataset.test_y, c);
    let stats = norm_stats(&trace.feature_norms, &dataset.test_y, c);
    Ok(EpochMetrics {
        epoch,
        alpha,
        mean_loss,
        overall_acc,
        per_class_acc,
        per_class_feat_norm_mean: stats.mean,
        per_class_feat_norm_min: stats.min,
        per_class_feat_norm_max: stats.max,
        per_class_weight_norm: model.classifier_norms(),
    })
}

/// Trapezoidal area between the per-epoch mean feature norms of class `class`
/// in `run_a` and `run_b` (unit spacing). Positive when `run_a` grew larger norms.
pub fn norm_gap_area(run_a: &RunResult, run_b: &RunResult, class: usize) -> Result<f64> {
    let (a, b) = (&run_a.metrics, &run_b.metrics);
    if a.len() != b.len() {
        return Err(FblError::RunLengthMismatch(a.len(), b.len()));
    }
    let gap = a
        .iter()
        .zip(b)
        .map(|(ma, mb)| {
            let fa = ma.per_class_feat_norm_mean.get(class);
            let fb = mb.per_class_feat_norm_mean.get(class);
            match (fa, fb) {
                (Some(x), Some(y)) => Ok(x - y),
                _ => Err(FblError::InvalidConfig(format!("class {class} out of range"))),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(gap.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // Average rank for ties, 1-based.
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman inputs differ in length");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// `epoch,alpha,loss,overall_acc,acc_c*,fnorm_c*,wnorm_c*,fnorm_min_c*,fnorm_max_c*`.
pub fn csv_header(num_classes: usize) -> String {
    let mut h = String::from("epoch,alpha,loss,overall_acc");
    for prefix in ["acc_c", "fnorm_c", "wnorm_c", "fnorm_min_c", "fnorm_max_c"] {
        for j in 0..num_classes {
            write!(h, ",{prefix}{j}").unwrap();
        }
    }
    h
}

pub fn csv_row(m: &EpochMetrics) -> String {
    let mut r = format!("{},{},{},{}", m.epoch, m.alpha, m.mean_loss, m.overall_acc);
    for v in [
        &m.per_class_acc,
        &m.per_class_feat_norm_mean,
        &m.per_class_weight_norm,
        &m.per_class_feat_norm_min,
        &m.per_class_feat_norm_max,
    ] {
        for x in v {
            write!(r, ",{x}").unwrap();
        }
    }
    r
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let c = metrics.first().map_or(0, |m| m.per_class_acc.len());
    let mut out = csv_header(c);
    out.push('\n');
    for m in metrics {
        out.push_str(&csv_row(m));
        out.push('\n');
    }
    out
}

/// Final-epoch figures written next to the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub epochs: usize,
    pub final_loss: f64,
    pub overall_acc: f64,
    pub per_class_acc: Vec<f64>,
    /// Mean accuracy of the last `min(3, C)` classes.
    pub tail_acc: f64,
    pub per_class_feat_norm_mean: Vec<f64>,
    pub per_class_weight_norm: Vec<f64>,
    /// Spearman rank correlation between class size and `‖w_j‖`.
    pub count_weight_norm_spearman: f64,
}

pub fn tail_mean(v: &[f64], k: usize) -> f64 {
    let k = k.min(v.len()).max(1);
    v[v.len() - k..].iter().sum::<f64>() / k as f64
}

pub fn summarize(run: &RunResult, counts: &[usize], config_hash: &str) -> RunSummary {
    let last = run.metrics.last().expect("a run has at least one epoch");
    let sizes: Vec<f64> = counts.iter().map(|&n| n as f64).collect();
    RunSummary {
        config_hash: config_hash.to_string(),
        epochs: run.metrics.len(),
        final_loss: last.mean_loss,
        overall_acc: last.overall_acc,
        per_class_acc: last.per_class_acc.clone(),
        tail_acc: tail_mean(&last.per_class_acc, 3),
        per_class_feat_norm_mean: last.per_class_feat_norm_mean.clone(),
        per_class_weight_norm: last.per_class_weight_norm.clone(),
        count_weight_norm_spearman: spearman(&sizes, &last.per_class_weight_norm),
    }
}

/// Per-class accuracy table: one row per run label.
pub fn per_class_table(rows: &[(&str, &[f64])]) -> String {
    let c = rows.first().map_or(0, |r| r.1.len());
    let mut out = String::from("run");
    for j in 0..c {
        write!(out, ",acc_c{j}").unwrap();
    }
    out.push('\n');
    for (label, accs) in rows {
        out.push_str(label);
        for a in accs.iter() {
            write!(out, ",{a}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Logits adjusted to the feature-balanced form for test-time evaluation.
pub(crate) fn adjusted_logits(
    model: &Model,
    x: ArrayView2<'_, f64>,
    lambdas: &[f64],
    alpha: f64,
    norm_eps: f64,
) -> Result<Array2<f64>> {
    let trace = forward(model, x)?;
    crate::loss::fbl_logits(trace.logits.view(), &trace.feature_norms, lambdas, alpha, norm_eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthSpec};
    use ndarray::array;

    fn fake_run(norms: &[[f64; 2]]) -> RunResult {
        let metrics = norms
            .iter()
            .enumerate()
            .map(|(e, n)| EpochMetrics {
                epoch: e + 1,
                alpha: 0.0,
                mean_loss: 0.0,
                overall_acc: 0.0,
                per_class_acc: vec![0.0; 2],
                per_class_feat_norm_mean: n.to_vec(),
                per_class_feat_norm_min: n.to_vec(),
                per_class_feat_norm_max: n.to_vec(),
                per_class_weight_norm: vec![0.0; 2],
            })
            .collect();
        RunResult { model: Model::zeros(1, 1, 1, 2), metrics, lambdas: vec![0.0; 2], wall_time_secs: 0.0 }
    }

    #[test]
    fn gap_area_cases() {
        let a = fake_run(&[[1.0, 2.0], [2.0, 3.0], [4.0, 1.0], [3.0, 3.0]]);
        assert_eq!(norm_gap_area(&a, &a, 1).unwrap(), 0.0);
        let b = fake_run(&[[1.5, 2.0], [2.5, 3.0], [4.5, 1.0], [3.5, 3.0]]);
        assert!((norm_gap_area(&b, &a, 0).unwrap() - 0.5 * 3.0).abs() < 1e-12);
        let short = fake_run(&[[1.0, 1.0]]);
        assert!(matches!(norm_gap_area(&a, &short, 0), Err(FblError::RunLengthMismatch(4, 1))));
        assert!(norm_gap_area(&a, &b, 5).is_err());
    }

    #[test]
    fn zero_model_has_zero_norms() {
        let ds = synth_dataset(&SynthSpec { n_max: 30, imbalance_factor: 3.0, num_classes: 3, feature_dim: 4, test_per_class: 5, ..Default::default() }).unwrap();
        let m = Model::zeros(4, 5, 3, 3);
        let em = collect(&m, &ds, 1, 0.0, 0.0).unwrap();
        assert!(em.per_class_feat_norm_mean.iter().all(|&v| v == 0.0));
        assert!(em.per_class_weight_norm.iter().all(|&v| v == 0.0));
        // Ties break to class 0 so only class 0 is right.
        assert_eq!(em.per_class_acc, vec![1.0, 0.0, 0.0]);
        assert!((em.overall_acc - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn accuracy_from_hand_logits() {
        let z = array![[2.0, 1.0], [0.0, 3.0], [5.0, 1.0], [1.0, 1.0]];
        let (pc, all) = accuracy_from_logits(z.view(), &[0, 1, 1, 1], 2);
        assert_eq!(pc, vec![1.0, 1.0 / 3.0]);
        assert_eq!(all, 0.5);
    }

    #[test]
    fn spearman_known_values() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        // Σd² = 4, so 1 − 6·4/(5·24) = 0.8.
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 3.0, 2.0, 5.0, 4.0]) - 0.8).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ranks(&[5.0, 1.0, 5.0, 3.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn csv_layout() {
        let run = fake_run(&[[1.0, 2.0]]);
        let csv = metrics_csv(&run.metrics);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,alpha,loss,overall_acc,acc_c0,acc_c1,fnorm_c0,fnorm_c1,wnorm_c0,wnorm_c1,fnorm_min_c0,fnorm_min_c1,fnorm_max_c0,fnorm_max_c1"
        );
        assert_eq!(lines.next().unwrap(), "1,0,0,0,0,0,1,2,0,0,1,2,1,2");
    }
}
