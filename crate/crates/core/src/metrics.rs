//! Rank AUC and thresholded confusion metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores strictly above this count as a positive prediction.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub fp: u64,
}

impl Confusion {
    pub fn from_scores(scores: &[f64], labels: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&s, &y) in scores.iter().zip(labels) {
            match (s > DECISION_THRESHOLD, y) {
                (true, true) => c.tp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.tn + self.fp
    }

    /// `tp / (tp + fn)`, or 0 with no positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `tn / (tn + fp)`, or 0 with no negatives.
    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Mann-Whitney AUC from average ranks; tied scores count one half.
pub fn rank_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    let p = labels.iter().filter(|&&y| y).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::AucUndefined(format!("{p} positives and {n} negatives")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                pos_rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let u = pos_rank_sum - (p * (p + 1)) as f64 / 2.0;
    Ok(u / (p as f64 * n as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub order_shuffled: bool,
    pub seed: u64,
    pub auc: f64,
    pub recall: f64,
    pub specificity: f64,
    pub accuracy: f64,
    /// Counts; means over passes when the report averages several.
    pub tp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub tn: f64,
    pub fp: f64,
}

impl MetricsReport {
    pub fn with_run(mut self, model: &str, order_shuffled: bool, seed: u64) -> Self {
        self.model = model.to_string();
        self.order_shuffled = order_shuffled;
        self.seed = seed;
        self
    }

    /// Field-wise mean; metadata taken from the first report.
    pub fn mean(reports: &[MetricsReport]) -> Result<MetricsReport> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Config("no reports to average".into()))?;
        let k = reports.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        Ok(MetricsReport {
            model: first.model.clone(),
            order_shuffled: first.order_shuffled,
            seed: first.seed,
            auc: avg(|r| r.auc),
            recall: avg(|r| r.recall),
            specificity: avg(|r| r.specificity),
            accuracy: avg(|r| r.accuracy),
            tp: avg(|r| r.tp),
            fn_: avg(|r| r.fn_),
            tn: avg(|r| r.tn),
            fp: avg(|r| r.fp),
        })
    }
}

/// All four metrics for positive-class scores. Fails when either class is
/// absent; use [`Confusion`] directly for the thresholded metrics alone.
pub fn compute_metrics(scores: &[f64], labels: &[bool]) -> Result<MetricsReport> {
    if scores.is_empty() {
        return Err(Error::Config("no scores to evaluate".into()));
    }
    let auc = rank_auc(scores, labels)?;
    let c = Confusion::from_scores(scores, labels);
    Ok(MetricsReport {
        model: String::new(),
        order_shuffled: false,
        seed: 0,
        auc,
        recall: c.recall(),
        specificity: c.specificity(),
        accuracy: c.accuracy(),
        tp: c.tp as f64,
        fn_: c.fn_ as f64,
        tn: c.tn as f64,
        fp: c.fp as f64,
    })
}
