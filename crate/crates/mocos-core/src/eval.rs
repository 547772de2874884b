//! Closed-set re-identification metrics: distance matrices, the cumulative
//! matching characteristics curve, and mean average precision.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Tensor64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Cosine,
    Euclidean,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(Error::Config(format!(
                "metric must be cosine or euclidean, got {other:?}"
            ))),
        }
    }
}

/// Evaluation summary: `rank_accuracy[r]` is the fraction of probes whose
/// first correct gallery match lands within the top `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rank_accuracy: BTreeMap<usize, f64>,
    pub mean_ap: f64,
    pub average_precisions: Vec<f64>,
    pub metric: Metric,
}

fn check_labels(
    distances: &Tensor64,
    probe_labels: &[usize],
    gallery_labels: &[usize],
) -> Result<()> {
    if distances.rows() != probe_labels.len() || distances.cols() != gallery_labels.len() {
        return Err(Error::Eval(format!(
            "distance matrix {:?} does not match {} probe and {} gallery labels",
            distances.shape(),
            probe_labels.len(),
            gallery_labels.len()
        )));
    }
    for (i, y) in probe_labels.iter().enumerate() {
        if !gallery_labels.contains(y) {
            return Err(Error::Eval(format!(
                "probe {i} label {y} absent from the gallery"
            )));
        }
    }
    Ok(())
}

/// Pairwise probe-to-gallery distances. Cosine distance is
/// 1 − (a·b)/(‖a‖‖b‖) and rejects zero-norm rows; euclidean is ‖a−b‖₂.
pub fn match_distances(
    probe_reps: &Tensor64,
    gallery_reps: &Tensor64,
    metric: Metric,
) -> Result<Tensor64> {
    let (p, d) = (probe_reps.rows(), probe_reps.cols());
    let (g, gd) = (gallery_reps.rows(), gallery_reps.cols());
    if d != gd {
        return Err(Error::Eval(format!(
            "probe dimension {d} does not match gallery dimension {gd}"
        )));
    }
    if g == 0 || p == 0 {
        return Err(Error::Eval("need at least one probe and one gallery row".into()));
    }
    let norm = |row: &[f64]| row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if metric == Metric::Cosine {
        for (i, side, rows) in [(p, "probe", probe_reps), (g, "gallery", gallery_reps)]
            .into_iter()
            .flat_map(|(n, side, t)| (0..n).map(move |i| (i, side, t)))
        {
            if norm(rows.row(i)) == 0.0 {
                return Err(Error::Eval(format!(
                    "{side} row {i} has zero norm under the cosine metric"
                )));
            }
        }
    }
    let mut out = Tensor::zeros(&[p, g]);
    for i in 0..p {
        let a = probe_reps.row(i);
        for j in 0..g {
            let b = gallery_reps.row(j);
            *out.at_mut(i, j) = match metric {
                Metric::Cosine => {
                    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    1.0 - dot / (norm(a) * norm(b))
                }
                Metric::Euclidean => a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt(),
            };
        }
    }
    Ok(out)
}

/// Gallery indices sorted ascending by distance, ties broken by index.
fn ranked_gallery(distances: &Tensor64, probe: usize) -> Vec<usize> {
    let row = distances.row(probe);
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    order
}

/// Rank-r accuracy for r in 1..=r_max: the fraction of probes whose first
/// gallery entry with the probe's label sits at sorted position ≤ r.
pub fn cmc(
    distances: &Tensor64,
    probe_labels: &[usize],
    gallery_labels: &[usize],
    r_max: usize,
) -> Result<Vec<f64>> {
    check_labels(distances, probe_labels, gallery_labels)?;
    if r_max == 0 {
        return Err(Error::Eval("r_max must be at least 1".into()));
    }
    let p = probe_labels.len();
    let mut hits_by_rank = vec![0usize; r_max];
    for (i, &y) in probe_labels.iter().enumerate() {
        let order = ranked_gallery(distances, i);
        let first = order
            .iter()
            .position(|&j| gallery_labels[j] == y)
            .expect("label presence checked") + 1;
        if first <= r_max {
            hits_by_rank[first - 1] += 1;
        }
    }
    let mut acc = Vec::with_capacity(r_max);
    let mut cum = 0usize;
    for hits in hits_by_rank {
        cum += hits;
        acc.push(cum as f64 / p as f64);
    }
    Ok(acc)
}

/// Average precision per probe and their mean. The k-th relevant item at
/// sorted position pos contributes k/pos; AP averages over all relevant
/// items of that probe.
pub fn mean_average_precision(
    distances: &Tensor64,
    probe_labels: &[usize],
    gallery_labels: &[usize],
) -> Result<(f64, Vec<f64>)> {
    check_labels(distances, probe_labels, gallery_labels)?;
    let mut aps = Vec::with_capacity(probe_labels.len());
    for (i, &y) in probe_labels.iter().enumerate() {
        let order = ranked_gallery(distances, i);
        let mut relevant_seen = 0usize;
        let mut ap = 0.0;
        for (pos, &j) in order.iter().enumerate() {
            if gallery_labels[j] == y {
                relevant_seen += 1;
                ap += relevant_seen as f64 / (pos + 1) as f64;
            }
        }
        aps.push(ap / relevant_seen as f64);
    }
    let mean = aps.iter().sum::<f64>() / aps.len() as f64;
    Ok((mean, aps))
}

/// Full evaluation: distances, CMC up to `r_max`, and mAP in one report.
pub fn evaluate(
    probe_reps: &Tensor64,
    gallery_reps: &Tensor64,
    probe_labels: &[usize],
    gallery_labels: &[usize],
    metric: Metric,
    r_max: usize,
) -> Result<EvalReport> {
    let distances = match_distances(probe_reps, gallery_reps, metric)?;
    let curve = cmc(&distances, probe_labels, gallery_labels, r_max)?;
    let (mean_ap, average_precisions) =
        mean_average_precision(&distances, probe_labels, gallery_labels)?;
    Ok(EvalReport {
        rank_accuracy: curve.into_iter().enumerate().map(|(r, a)| (r + 1, a)).collect(),
        mean_ap,
        average_precisions,
        metric,
    })
}
