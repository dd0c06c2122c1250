//! Training loop, evaluation passes and the model-by-order benchmark grid.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{matched_hidden, RnnParams, SingleLstmParams};
use crate::data::{
    apply_normalizer, fit_normalizer, shuffle_order_augment, split_75_25, Dataset, NormStats,
    NormalizedRecord, NUM_BIOMARKERS,
};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::model::{Classifier, LossWeights};
use crate::optim::{Optimizer, OptimizerConfig, RAdamConfig};
use crate::params::ParamSet;
use crate::rng::RngStream;
use crate::trilstm::{TriLstmDims, TriLstmParams};

/// Records per gradient-accumulation chunk. Chunks are summed in index
/// order, so results do not depend on the number of worker threads.
const GRAD_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Rnn,
    Lstm,
    TriLstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Rnn, ModelKind::Lstm, ModelKind::TriLstm];

    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Rnn => "rnn",
            ModelKind::Lstm => "lstm",
            ModelKind::TriLstm => "tri-lstm",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Rnn => "RNN",
            ModelKind::Lstm => "LSTM",
            ModelKind::TriLstm => "TRI-LSTM",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rnn" => Ok(ModelKind::Rnn),
            "lstm" => Ok(ModelKind::Lstm),
            "tri-lstm" | "trilstm" | "tri" => Ok(ModelKind::TriLstm),
            _ => Err(Error::Config(format!("unknown model kind `{s}`"))),
        }
    }
}

/// Architecture sizes. Baseline hidden widths default to the value that
/// brings their parameter count closest to the TRI-LSTM's.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub tri: TriLstmDims,
    pub baseline_embed: usize,
    pub lstm_hidden: Option<usize>,
    pub rnn_hidden: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            tri: TriLstmDims::default(),
            baseline_embed: 8,
            lstm_hidden: None,
            rnn_hidden: None,
        }
    }
}

impl ModelConfig {
    pub fn tri_param_count(&self) -> usize {
        TriLstmParams::zeros(self.tri).param_count()
    }

    pub fn lstm_hidden(&self) -> usize {
        let (e, m) = (self.baseline_embed, self.tri.head_hidden);
        self.lstm_hidden.unwrap_or_else(|| {
            matched_hidden(self.tri_param_count(), |h| SingleLstmParams::zeros(e, h, m).param_count())
        })
    }

    pub fn rnn_hidden(&self) -> usize {
        let m = self.tri.head_hidden;
        self.rnn_hidden.unwrap_or_else(|| {
            matched_hidden(self.tri_param_count(), |h| RnnParams::zeros(h, m).param_count())
        })
    }

    pub fn init(&self, kind: ModelKind, seed: u64) -> AnyModel {
        let mut rng = RngStream::new(seed).derive("init").derive(kind.tag());
        let m = self.tri.head_hidden;
        match kind {
            ModelKind::TriLstm => AnyModel::TriLstm(TriLstmParams::init(self.tri, &mut rng)),
            ModelKind::Lstm => AnyModel::Lstm(SingleLstmParams::init(
                self.baseline_embed,
                self.lstm_hidden(),
                m,
                &mut rng,
            )),
            ModelKind::Rnn => AnyModel::Rnn(RnnParams::init(self.rnn_hidden(), m, &mut rng)),
        }
    }
}

/// A trained or initialized model of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_type", content = "params", rename_all = "kebab-case")]
pub enum AnyModel {
    Rnn(RnnParams),
    Lstm(SingleLstmParams),
    TriLstm(TriLstmParams),
}

macro_rules! dispatch {
    ($self:expr, $p:ident => $body:expr) => {
        match $self {
            AnyModel::Rnn($p) => $body,
            AnyModel::Lstm($p) => $body,
            AnyModel::TriLstm($p) => $body,
        }
    };
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Rnn(_) => ModelKind::Rnn,
            AnyModel::Lstm(_) => ModelKind::Lstm,
            AnyModel::TriLstm(_) => ModelKind::TriLstm,
        }
    }

    pub fn param_count(&self) -> usize {
        dispatch!(self, p => p.param_count())
    }

    pub fn validate(&self) -> Result<()> {
        dispatch!(self, p => p.validate())
    }

    pub fn positive_prob(&self, record: &NormalizedRecord, order: &[usize]) -> Result<f64> {
        dispatch!(self, p => p.positive_prob(record, order))
    }

    pub fn train(self, data: &[NormalizedRecord], cfg: &TrainConfig) -> Result<(AnyModel, Vec<EpochStats>)> {
        Ok(match self {
            AnyModel::Rnn(p) => {
                let (p, t) = train(p, data, cfg)?;
                (AnyModel::Rnn(p), t)
            }
            AnyModel::Lstm(p) => {
                let (p, t) = train(p, data, cfg)?;
                (AnyModel::Lstm(p), t)
            }
            AnyModel::TriLstm(p) => {
                let (p, t) = train(p, data, cfg)?;
                (AnyModel::TriLstm(p), t)
            }
        })
    }

    pub fn evaluate(&self, test: &[NormalizedRecord], cfg: &EvalConfig) -> Result<MetricsReport> {
        dispatch!(self, p => evaluate(p, test, cfg))
    }
}

/// Biomarker presentation order at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalOrder {
    /// A fresh random order per record and pass.
    Shuffled,
    /// Schema order in every pass.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub dropout: f64,
    pub lambda: f64,
    pub alpha: f64,
    /// Drops the final-classifier term from the objective, leaving only
    /// `lambda * loss1 + alpha * loss2`.
    pub skip_final_loss: bool,
    pub shuffle_order: bool,
    pub shuffle_copies: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub clip_norm: Option<f64>,
    pub eval_repeats: usize,
    pub eval_order: EvalOrder,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            minibatch: 512,
            dropout: 0.1,
            lambda: 0.5,
            alpha: 5.0,
            skip_final_loss: false,
            shuffle_order: true,
            shuffle_copies: 4,
            seed: 1,
            optimizer: OptimizerConfig::Radam(RAdamConfig {
                lr: 3e-2,
                ..RAdamConfig::default()
            }),
            clip_norm: None,
            eval_repeats: 10,
            eval_order: EvalOrder::Shuffled,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.minibatch < 1 {
            return Err(Error::Config("minibatch must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Config("lambda must lie in (0, 1]".into()));
        }
        if !(1.0..10.0).contains(&self.alpha) {
            return Err(Error::Config("alpha must lie in [1, 10)".into()));
        }
        if self.shuffle_copies < 1 {
            return Err(Error::Config("shuffle_copies must be at least 1".into()));
        }
        if self.eval_repeats < 1 {
            return Err(Error::Config("eval_repeats must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        self.optimizer.validate()
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            alpha: self.alpha,
            final_weight: if self.skip_final_loss { 0.0 } else { 1.0 },
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            repeats: self.eval_repeats,
            order: self.eval_order,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean combined loss over the epoch's training views.
    pub loss: f64,
    pub loss1: f64,
    pub loss2: f64,
    pub loss_final: f64,
}

/// Mini-batch training with a seeded per-epoch view shuffle.
pub fn train<C: Classifier>(mut params: C, data: &[NormalizedRecord], cfg: &TrainConfig) -> Result<(C, Vec<EpochStats>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let weights = cfg.loss_weights();
    let mut opt = Optimizer::new(&params, cfg.optimizer, cfg.clip_norm)?;
    let root = RngStream::new(cfg.seed).derive("train");
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let erng = root.derive_indexed("epoch", epoch as u64);
        let mut views = shuffle_order_augment(
            data.len(),
            cfg.shuffle_copies,
            cfg.shuffle_order,
            &mut erng.derive("views"),
        )?;
        erng.derive("batches").shuffle(&mut views);
        let batch = cfg.minibatch.min(views.len());
        let mut sums = [0.0; 4];

        for (b, chunk) in views.chunks(batch).enumerate() {
            let scale = 1.0 / chunk.len() as f64;
            let partials: Vec<Result<(C, [f64; 4])>> = chunk
                .par_chunks(GRAD_CHUNK)
                .enumerate()
                .map(|(ci, sub)| {
                    let mut g = params.zeros_like();
                    let mut s = [0.0; 4];
                    for (k, view) in sub.iter().enumerate() {
                        let pos = (b * batch + ci * GRAD_CHUNK + k) as u64;
                        let mut drng = erng.derive_indexed("dropout", pos);
                        let dropout = (cfg.dropout > 0.0).then_some((cfg.dropout, &mut drng));
                        let l = params.accumulate_gradient(&data[view.record], &view.order, &weights, dropout, scale, &mut g)?;
                        s[0] += l.total;
                        s[1] += l.loss1;
                        s[2] += l.loss2;
                        s[3] += l.loss_final;
                    }
                    Ok((g, s))
                })
                .collect();
            let mut grads: Option<C> = None;
            let mut batch_loss = 0.0;
            for part in partials {
                let (g, s) = part?;
                batch_loss += s[0];
                for (acc, v) in sums.iter_mut().zip(s) {
                    *acc += v;
                }
                match grads.as_mut() {
                    Some(acc) => acc.accumulate(&g),
                    None => grads = Some(g),
                }
            }
            let grads = grads.expect("non-empty batch");
            if !batch_loss.is_finite() || !grads.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: batch_loss * scale,
                });
            }
            opt.step(&mut params, &grads)?;
        }
        let n = views.len() as f64;
        trace.push(EpochStats {
            epoch,
            loss: sums[0] / n,
            loss1: sums[1] / n,
            loss2: sums[2] / n,
            loss_final: sums[3] / n,
        });
    }
    Ok((params, trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub repeats: usize,
    pub order: EvalOrder,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            repeats: 10,
            order: EvalOrder::Shuffled,
            seed: 1,
        }
    }
}

/// Presentation orders for one evaluation pass.
pub fn eval_orders(n_records: usize, pass: usize, cfg: &EvalConfig) -> Vec<Vec<usize>> {
    let identity: Vec<usize> = (0..NUM_BIOMARKERS).collect();
    match cfg.order {
        EvalOrder::Identity => vec![identity; n_records],
        EvalOrder::Shuffled => {
            let mut rng = RngStream::new(cfg.seed).derive_indexed("eval-pass", pass as u64);
            (0..n_records).map(|_| rng.permutation(NUM_BIOMARKERS)).collect()
        }
    }
}

/// Mean of the per-pass metrics over `cfg.repeats` passes; dropout is off.
pub fn evaluate<C: Classifier>(params: &C, test: &[NormalizedRecord], cfg: &EvalConfig) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    if cfg.repeats == 0 {
        return Err(Error::Config("at least one evaluation pass is required".into()));
    }
    let labels: Vec<bool> = test.iter().map(|r| r.label.is_positive()).collect();
    let mut passes = Vec::with_capacity(cfg.repeats);
    for pass in 0..cfg.repeats {
        let orders = eval_orders(test.len(), pass, cfg);
        let scores = test
            .par_iter()
            .zip(orders.par_iter())
            .map(|(r, o)| params.positive_prob(r, o))
            .collect::<Result<Vec<f64>>>()?;
        passes.push(compute_metrics(&scores, &labels)?);
    }
    MetricsReport::mean(&passes)
}

/// Train/test partition of a dataset, normalized with training statistics.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub stats: NormStats,
    pub train: Vec<NormalizedRecord>,
    pub test: Vec<NormalizedRecord>,
}

pub fn prepare_split(d: &Dataset, seed: u64) -> Result<PreparedSplit> {
    let (train, test) = split_75_25(d, seed)?;
    let stats = fit_normalizer(&train)?;
    Ok(PreparedSplit {
        train: apply_normalizer(&train, &stats)?,
        test: apply_normalizer(&test, &stats)?,
        stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub seeds: Vec<u64>,
    pub kinds: Vec<ModelKind>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            seeds: (1..=5).collect(),
            kinds: ModelKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: ModelKind,
    pub order_shuffled: bool,
    pub auc: f64,
    pub recall: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub runs: Vec<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn row(&self, model: ModelKind, order_shuffled: bool) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.order_shuffled == order_shuffled)
    }

    /// Fixed-width text with columns Model, Order, AUC, Recall,
    /// Specificity, Accuracy.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<10} {:<6} {:>6} {:>7} {:>12} {:>9}\n",
            "Model", "Order", "AUC", "Recall", "Specificity", "Accuracy"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<10} {:<6} {:>6.2} {:>7.2} {:>12.2} {:>9.2}\n",
                r.model.display_name(),
                if r.order_shuffled { "yes" } else { "no" },
                r.auc,
                r.recall,
                r.specificity,
                r.accuracy
            ));
        }
        s
    }
}

/// One training + evaluation run of the grid.
pub fn run_cell(
    prepared: &PreparedSplit,
    kind: ModelKind,
    shuffle_order: bool,
    seed: u64,
    cfg: &BenchConfig,
) -> Result<MetricsReport> {
    let train_cfg = TrainConfig {
        shuffle_order,
        seed,
        ..cfg.train
    };
    let model = cfg.model.init(kind, seed);
    let (model, _) = model.train(&prepared.train, &train_cfg)?;
    let report = model.evaluate(&prepared.test, &train_cfg.eval_config())?;
    Ok(report.with_run(kind.display_name(), shuffle_order, seed))
}

/// Models x {unshuffled, shuffled} presentation order, each cell averaged
/// over the configured seeds. A seed fixes the split, initialization,
/// training and evaluation streams, and is shared by every model.
pub fn benchmark_grid(d: &Dataset, cfg: &BenchConfig) -> Result<BenchTable> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("benchmark needs at least one seed".into()));
    }
    let splits = cfg
        .seeds
        .iter()
        .map(|&s| prepare_split(d, s))
        .collect::<Result<Vec<_>>>()?;
    let mut jobs = Vec::new();
    for &kind in &cfg.kinds {
        for shuffle in [false, true] {
            for si in 0..cfg.seeds.len() {
                jobs.push((kind, shuffle, si));
            }
        }
    }
    let results = jobs
        .par_iter()
        .map(|&(kind, shuffle, si)| run_cell(&splits[si], kind, shuffle, cfg.seeds[si], cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (cell, runs) in jobs.chunks(cfg.seeds.len()).zip(results.chunks(cfg.seeds.len())) {
        let (kind, shuffle, _) = cell[0];
        let mean = MetricsReport::mean(runs)?;
        rows.push(BenchRow {
            model: kind,
            order_shuffled: shuffle,
            auc: mean.auc,
            recall: mean.recall,
            specificity: mean.specificity,
            accuracy: mean.accuracy,
            runs: runs.to_vec(),
        });
    }
    Ok(BenchTable { rows })
}
