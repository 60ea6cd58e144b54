use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use trec_train::Prediction;

use crate::metrics::{bootstrap_interval, class_spread, rank_of};
use crate::EvalError;

pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const BOOTSTRAP_SEED: u64 = 0xb007;

/// Outcome for one clip under one variant and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub variant: String,
    pub seed: u64,
    pub index: usize,
    pub id: String,
    pub label: usize,
    /// 0 when the true class has the highest logit.
    pub rank: usize,
}

impl SampleRecord {
    pub fn from_predictions(variant: &str, seed: u64, predictions: &[Prediction]) -> Vec<Self> {
        predictions
            .iter()
            .map(|p| SampleRecord {
                variant: variant.to_string(),
                seed,
                index: p.index,
                id: p.id.clone(),
                label: p.label,
                rank: rank_of(&p.logits, p.label),
            })
            .collect()
    }
}

/// Mean accuracy in percent together with two spreads: a bootstrap 95%
/// interval over samples and the standard deviation across classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub mean: f64,
    pub ci95: [f64; 2],
    pub class_std: f64,
}

impl Accuracy {
    fn of(correct: &[bool], labels: &[usize], seed: u64) -> Self {
        let v: Vec<f64> = correct.iter().map(|&c| if c { 100.0 } else { 0.0 }).collect();
        let mean = if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        Self { mean, ci95: bootstrap_interval(&v, BOOTSTRAP_RESAMPLES, seed), class_std: 100.0 * class_spread(correct, labels) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: String,
    pub top1: Accuracy,
    pub top5: Accuracy,
    /// Classes counted by the second metric; fewer than five on small label sets.
    pub top5_k: usize,
    pub samples: usize,
    pub seeds: Vec<u64>,
}

impl VariantRow {
    /// Aggregates the records of one variant pooled over seeds.
    pub fn from_records(variant: &str, records: &[SampleRecord], num_classes: usize) -> Self {
        let mine: Vec<&SampleRecord> = records.iter().filter(|r| r.variant == variant).collect();
        let labels: Vec<usize> = mine.iter().map(|r| r.label).collect();
        let k = 5.min(num_classes);
        let c1: Vec<bool> = mine.iter().map(|r| r.rank < 1).collect();
        let c5: Vec<bool> = mine.iter().map(|r| r.rank < k).collect();
        let mut seeds: Vec<u64> = mine.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        Self {
            variant: variant.to_string(),
            top1: Accuracy::of(&c1, &labels, BOOTSTRAP_SEED),
            top5: Accuracy::of(&c5, &labels, BOOTSTRAP_SEED),
            top5_k: k,
            samples: mine.len(),
            seeds,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment: String,
    pub rows: Vec<VariantRow>,
    /// Resolved configuration of the run.
    pub config: serde_json::Value,
    #[serde(skip)]
    pub records: Vec<SampleRecord>,
}

impl EvalReport {
    /// Builds one row per variant, in the order given.
    pub fn new(experiment: &str, variants: &[String], records: Vec<SampleRecord>, num_classes: usize, config: serde_json::Value) -> Self {
        let rows = variants.iter().map(|v| VariantRow::from_records(v, &records, num_classes)).collect();
        Self { experiment: experiment.to_string(), rows, config, records }
    }

    pub fn row(&self, variant: &str) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Top-1 accuracy in percent of `variant`.
    pub fn top1(&self, variant: &str) -> Option<f64> {
        self.row(variant).map(|r| r.top1.mean)
    }

    pub fn table(&self) -> String {
        let width = self.rows.iter().map(|r| r.variant.len()).max().unwrap_or(0).max(7);
        let mut s = format!("{}\n", self.experiment);
        let _ = writeln!(
            s,
            "{:width$}  {:>7} {:>15} {:>9}  {:>7} {:>15} {:>9}  {:>7}",
            "variant", "top-1", "95% CI", "class sd", "top-k", "95% CI", "class sd", "samples"
        );
        for r in &self.rows {
            let ci = |a: &Accuracy| format!("[{:.2}, {:.2}]", a.ci95[0], a.ci95[1]);
            let _ = writeln!(
                s,
                "{:width$}  {:>7.2} {:>15} {:>9.2}  {:>7.2} {:>15} {:>9.2}  {:>7}",
                r.variant,
                r.top1.mean,
                ci(&r.top1),
                r.top1.class_std,
                r.top5.mean,
                ci(&r.top5),
                r.top5.class_std,
                r.samples
            );
        }
        if let Some(r) = self.rows.first() {
            let _ = writeln!(s, "top-k uses k = {}; CI is a {}-resample bootstrap over samples", r.top5_k, BOOTSTRAP_RESAMPLES);
        }
        s
    }

    /// Writes `report.json`, `report.txt` and `records.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| EvalError::io(&json, e))?;
        let txt = dir.join("report.txt");
        std::fs::write(&txt, self.table()).map_err(|e| EvalError::io(&txt, e))?;
        let path = dir.join("records.jsonl");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| EvalError::io(&path, e))?);
        for r in &self.records {
            writeln!(f, "{}", serde_json::to_string(r)?).map_err(|e| EvalError::io(&path, e))?;
        }
        f.flush().map_err(|e| EvalError::io(&path, e))
    }
}
