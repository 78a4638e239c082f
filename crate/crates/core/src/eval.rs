//! Metrics, score histograms and the tree-construction benchmark.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::generate::generate_er_graph;
use crate::losses::ScoreReport;
use crate::tree::build_coding_tree;

fn class_counts(scores: &[f64], is_ood: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != is_ood.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            is_ood.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let pos = is_ood.iter().filter(|&&b| b).count();
    let neg = is_ood.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both OOD and ID samples".into()));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve as the Mann-Whitney statistic, ties counted
/// as one half.
pub fn auc(scores: &[f64], is_ood: &[bool]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, is_ood)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of mid-ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| is_ood[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// ROC curve points `(false positive rate, true positive rate)` from the
/// strictest threshold down, tied scores stepping together.
pub fn roc_curve(scores: &[f64], is_ood: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = class_counts(scores, is_ood)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (idx, &k) in order.iter().enumerate() {
        if is_ood[k] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = idx + 1 == order.len() || scores[order[idx + 1]] != scores[k];
        if last_of_tie {
            points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        }
    }
    Ok(points)
}

pub fn auc_trapezoid(scores: &[f64], is_ood: &[bool]) -> Result<f64> {
    let points = roc_curve(scores, is_ood)?;
    Ok(points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityBin {
    pub bin_left: f64,
    pub id_density: f64,
    pub ood_density: f64,
}

/// Normalized ID and OOD score histograms over a shared range.
pub fn score_density(report: &ScoreReport, bins: usize) -> Result<Vec<DensityBin>> {
    if bins < 2 {
        return Err(Error::Parameter(format!("need at least 2 bins, got {bins}")));
    }
    let labels = report
        .labels
        .as_ref()
        .ok_or_else(|| Error::Parameter("density export needs labelled scores".into()))?;
    class_counts(&report.scores, labels)?;
    let lo = report.scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = report.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![[0usize; 2]; bins];
    for (&s, &ood) in report.scores.iter().zip(labels) {
        let b = (((s - lo) / width) as usize).min(bins - 1);
        counts[b][ood as usize] += 1;
    }
    let totals = [
        labels.iter().filter(|&&b| !b).count() as f64,
        labels.iter().filter(|&&b| b).count() as f64,
    ];
    Ok(counts
        .iter()
        .enumerate()
        .map(|(b, c)| DensityBin {
            bin_left: lo + b as f64 * width,
            id_density: c[0] as f64 / (totals[0] * width),
            ood_density: c[1] as f64 / (totals[1] * width),
        })
        .collect())
}

/// Shared probability mass of the two histograms, in [0, 1].
pub fn overlap_mass(bins: &[DensityBin]) -> f64 {
    let width = match bins {
        [a, b, ..] => b.bin_left - a.bin_left,
        _ => return 0.0,
    };
    bins.iter().map(|b| b.id_density.min(b.ood_density) * width).sum()
}

fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_error)?;
    for row in rows {
        writer.serialize(row).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Format(format!("{other:?}")),
    }
}

pub fn export_density(report: &ScoreReport, bins: usize, path: impl AsRef<Path>) -> Result<Vec<DensityBin>> {
    let rows = score_density(report, bins)?;
    write_csv(&rows, path.as_ref())?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub node_count: usize,
    pub edge_count: usize,
    pub wall_time_seconds: f64,
    pub peak_bytes: Option<u64>,
}

pub const BENCH_REPEATS: usize = 3;

/// Resident-set high-water mark of this process, where the OS reports it.
pub fn peak_resident_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Times height-2 tree construction on random graphs with twice as many
/// edges as nodes, taking the median of [`BENCH_REPEATS`] runs per size.
pub fn bench_tree_construction(sizes: &[usize], seed: u64) -> Result<Vec<BenchRecord>> {
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Parameter("benchmark sizes must be ascending".into()));
    }
    let mut records = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let graph = generate_er_graph(n, seed)?;
        let mut times = Vec::with_capacity(BENCH_REPEATS);
        for _ in 0..BENCH_REPEATS {
            let start = Instant::now();
            let tree = build_coding_tree(&graph, 2)?;
            times.push(start.elapsed().as_secs_f64());
            drop(tree);
        }
        times.sort_by(f64::total_cmp);
        log::info!("n={n}: median {:.4}s", times[BENCH_REPEATS / 2]);
        records.push(BenchRecord {
            node_count: n,
            edge_count: graph.edge_count(),
            wall_time_seconds: times[BENCH_REPEATS / 2],
            peak_bytes: peak_resident_bytes(),
        });
    }
    Ok(records)
}

pub fn write_bench_csv(records: &[BenchRecord], path: impl AsRef<Path>) -> Result<()> {
    write_csv(records, path.as_ref())
}

/// Human-readable summary line per record, for terminals.
pub fn format_bench(records: &[BenchRecord], out: &mut impl Write) -> Result<()> {
    writeln!(
        out,
        "{:>8} {:>8} {:>12} {:>14}",
        "nodes", "edges", "seconds", "peak_bytes"
    )?;
    for r in records {
        let peak = r.peak_bytes.map_or_else(|| "-".to_string(), |b| b.to_string());
        writeln!(
            out,
            "{:>8} {:>8} {:>12.6} {:>14}",
            r.node_count, r.edge_count, r.wall_time_seconds, peak
        )?;
    }
    Ok(())
}
