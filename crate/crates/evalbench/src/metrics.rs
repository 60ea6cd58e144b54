use rand::Rng;
use trec_core::seed;

use crate::EvalError;

/// Position of `label` when classes are sorted by descending logit; equal
/// logits are ordered by class index, lower first.
pub fn rank_of(logits: &[f32], label: usize) -> usize {
    let target = logits[label];
    logits.iter().enumerate().filter(|&(j, &v)| v > target || (v == target && j < label)).count()
}

/// Fraction of rows whose label is among the `k` highest logits.
pub fn topk_accuracy(logits: &[Vec<f32>], labels: &[usize], k: usize) -> Result<f64, EvalError> {
    if logits.len() != labels.len() {
        return Err(EvalError::Shape(format!("{} logit rows for {} labels", logits.len(), labels.len())));
    }
    let Some(width) = logits.first().map(Vec::len) else {
        return Err(EvalError::Shape("empty batch".into()));
    };
    if k == 0 || k > width {
        return Err(EvalError::Shape(format!("k = {k} with {width} classes")));
    }
    let mut hits = 0usize;
    for (i, (row, &label)) in logits.iter().zip(labels).enumerate() {
        if row.len() != width {
            return Err(EvalError::Shape(format!("row {i} has {} logits, expected {width}", row.len())));
        }
        if label >= width {
            return Err(EvalError::Shape(format!("row {i} has label {label} beyond {width} classes")));
        }
        if rank_of(row, label) < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Percentile bootstrap interval (2.5%, 97.5%) of the mean of `values`,
/// resampling with replacement `resamples` times.
pub fn bootstrap_interval(values: &[f64], resamples: usize, seed: u64) -> [f64; 2] {
    if values.is_empty() || resamples == 0 {
        return [0.0, 0.0];
    }
    let mut rng = seed::rng(seed, &[]);
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * resamples as f64).floor() as usize).min(resamples - 1)];
    [at(0.025), at(0.975)]
}

/// Population standard deviation of per-class mean correctness over the
/// classes that occur in `labels`.
pub fn class_spread(correct: &[bool], labels: &[usize]) -> f64 {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut hits = vec![0usize; classes];
    let mut counts = vec![0usize; classes];
    for (&c, &l) in correct.iter().zip(labels) {
        counts[l] += 1;
        hits[l] += usize::from(c);
    }
    let acc: Vec<f64> = counts.iter().zip(&hits).filter(|(&n, _)| n > 0).map(|(&n, &h)| h as f64 / n as f64).collect();
    if acc.is_empty() {
        return 0.0;
    }
    let mean = acc.iter().sum::<f64>() / acc.len() as f64;
    (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / acc.len() as f64).sqrt()
}
