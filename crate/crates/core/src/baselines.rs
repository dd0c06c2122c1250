//! Single-stream comparison models over the full 17-token sequence.

use serde::{Deserialize, Serialize};

use crate::data::{full_sequence, NormalizedRecord, TOKEN_DIM};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{label_target, Classifier, LossBreakdown, LossWeights};
use crate::nn::{LstmParams, LstmStepCache, MlpParams};
use crate::optim::cross_entropy;
use crate::params::{prefixed, ParamSet};
use crate::rng::RngStream;
use crate::trilstm::head_forward;

/// Elman RNN: `h_t = tanh(W_xh x_t + W_hh h_{t-1} + b_h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    pub w_xh: Matrix,
    pub w_hh: Matrix,
    pub b_h: Matrix,
    pub final_head: MlpParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleLstmParams {
    pub w_e: Matrix,
    pub cell: LstmParams,
    pub final_head: MlpParams,
}

impl ParamSet for RnnParams {
    fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v = vec![
            ("w_xh".to_string(), &self.w_xh),
            ("w_hh".to_string(), &self.w_hh),
            ("b_h".to_string(), &self.b_h),
        ];
        v.extend(prefixed("final_head", self.final_head.named_tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.w_xh, &mut self.w_hh, &mut self.b_h];
        v.extend(self.final_head.tensors_mut());
        v
    }
}

impl ParamSet for SingleLstmParams {
    fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v = vec![("w_e".to_string(), &self.w_e)];
        v.extend(prefixed("cell", self.cell.named_tensors()));
        v.extend(prefixed("final_head", self.final_head.named_tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.w_e];
        v.extend(self.cell.tensors_mut());
        v.extend(self.final_head.tensors_mut());
        v
    }
}

fn uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut RngStream) -> Matrix {
    let s = 1.0 / (fan_in as f64).sqrt();
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform(-s, s)).collect()).expect("sized")
}

fn encode_all(record: &NormalizedRecord, order: &[usize]) -> Result<Vec<Vec<f64>>> {
    Ok(full_sequence(record, order)?.iter().map(|t| t.encode()).collect())
}

impl RnnParams {
    pub fn init(hidden: usize, head_hidden: usize, rng: &mut RngStream) -> Self {
        Self {
            w_xh: uniform(hidden, TOKEN_DIM, TOKEN_DIM + hidden, rng),
            w_hh: uniform(hidden, hidden, TOKEN_DIM + hidden, rng),
            b_h: Matrix::zeros(hidden, 1),
            final_head: MlpParams::init(hidden, head_hidden, 2, rng),
        }
    }

    pub fn zeros(hidden: usize, head_hidden: usize) -> Self {
        Self {
            w_xh: Matrix::zeros(hidden, TOKEN_DIM),
            w_hh: Matrix::zeros(hidden, hidden),
            b_h: Matrix::zeros(hidden, 1),
            final_head: MlpParams::zeros(hidden, head_hidden, 2),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hh.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden_dim();
        if self.w_xh.shape() != (h, TOKEN_DIM)
            || self.w_hh.shape() != (h, h)
            || self.b_h.shape() != (h, 1)
            || self.final_head.input_dim() != h
            || self.final_head.output_dim() != 2
        {
            return Err(Error::Shape("RNN parameter shapes do not chain".into()));
        }
        self.final_head.validate()
    }

    /// Hidden states per step.
    fn run(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let h = self.hidden_dim();
        let mut states: Vec<Vec<f64>> = Vec::with_capacity(xs.len());
        let mut tmp = vec![0.0; h];
        for x in xs {
            let mut a = vec![0.0; h];
            self.w_xh.matvec_into(x, &mut a);
            if let Some(prev) = states.last() {
                self.w_hh.matvec_into(prev, &mut tmp);
                for (ai, ti) in a.iter_mut().zip(&tmp) {
                    *ai += ti;
                }
            }
            for (ai, b) in a.iter_mut().zip(self.b_h.as_slice()) {
                *ai = (*ai + b).tanh();
            }
            states.push(a);
        }
        states
    }
}

impl Classifier for RnnParams {
    fn accumulate_gradient(
        &self,
        record: &NormalizedRecord,
        order: &[usize],
        weights: &LossWeights,
        mut dropout: Option<(f64, &mut RngStream)>,
        scale: f64,
        g: &mut Self,
    ) -> Result<LossBreakdown> {
        let xs = encode_all(record, order)?;
        let hs = self.run(&xs);
        let last = hs.last().ok_or_else(|| Error::Protocol("empty sequence".into()))?;
        let head = head_forward(&self.final_head, last, &mut dropout);
        let (loss, mut dlog) = cross_entropy(&head.probs, label_target(record))?;
        dlog.iter_mut().for_each(|v| *v *= weights.final_weight * scale);
        let hd = self.hidden_dim();
        let mut dh = vec![0.0; hd];
        self.final_head.backward(&head, &dlog, &mut g.final_head, &mut dh);
        for t in (0..hs.len()).rev() {
            let da: Vec<f64> = dh.iter().zip(&hs[t]).map(|(d, h)| d * (1.0 - h * h)).collect();
            g.w_xh.outer_acc(&da, &xs[t]);
            for (b, d) in g.b_h.as_mut_slice().iter_mut().zip(&da) {
                *b += d;
            }
            dh.fill(0.0);
            if t > 0 {
                g.w_hh.outer_acc(&da, &hs[t - 1]);
                self.w_hh.matvec_t_acc(&da, &mut dh);
            }
        }
        Ok(LossBreakdown::compose(0.0, 0.0, loss, *weights))
    }

    fn final_dist(&self, record: &NormalizedRecord, order: &[usize]) -> Result<[f64; 2]> {
        let hs = self.run(&encode_all(record, order)?);
        let last = hs.last().ok_or_else(|| Error::Protocol("empty sequence".into()))?;
        let p = head_forward(&self.final_head, last, &mut None).probs;
        Ok([p[0], p[1]])
    }

    fn loss(&self, record: &NormalizedRecord, order: &[usize], weights: &LossWeights) -> Result<LossBreakdown> {
        let d = self.final_dist(record, order)?;
        let (l, _) = cross_entropy(&d, label_target(record))?;
        Ok(LossBreakdown::compose(0.0, 0.0, l, *weights))
    }
}

impl SingleLstmParams {
    pub fn init(embed: usize, hidden: usize, head_hidden: usize, rng: &mut RngStream) -> Self {
        Self {
            w_e: uniform(embed, TOKEN_DIM, TOKEN_DIM, rng),
            cell: LstmParams::init(embed, hidden, rng),
            final_head: MlpParams::init(hidden, head_hidden, 2, rng),
        }
    }

    pub fn zeros(embed: usize, hidden: usize, head_hidden: usize) -> Self {
        Self {
            w_e: Matrix::zeros(embed, TOKEN_DIM),
            cell: LstmParams::zeros(embed, hidden),
            final_head: MlpParams::zeros(hidden, head_hidden, 2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cell.validate()?;
        self.final_head.validate()?;
        if self.w_e.shape() != (self.cell.input_dim, TOKEN_DIM)
            || self.final_head.input_dim() != self.cell.hidden_dim
            || self.final_head.output_dim() != 2
        {
            return Err(Error::Shape("LSTM baseline shapes do not chain".into()));
        }
        Ok(())
    }

    fn run(&self, xs: &[Vec<f64>]) -> Vec<LstmStepCache> {
        let h = self.cell.hidden_dim;
        let zeros = vec![0.0; h];
        let mut u = vec![0.0; self.cell.input_dim];
        let mut steps: Vec<LstmStepCache> = Vec::with_capacity(xs.len());
        for x in xs {
            self.w_e.matvec_into(x, &mut u);
            let (hp, cp) = steps.last().map_or((&zeros, &zeros), |s| (&s.h, &s.c));
            let s = self.cell.step_raw(&u, hp, cp);
            steps.push(s);
        }
        steps
    }
}

impl Classifier for SingleLstmParams {
    fn accumulate_gradient(
        &self,
        record: &NormalizedRecord,
        order: &[usize],
        weights: &LossWeights,
        mut dropout: Option<(f64, &mut RngStream)>,
        scale: f64,
        g: &mut Self,
    ) -> Result<LossBreakdown> {
        let xs = encode_all(record, order)?;
        let steps = self.run(&xs);
        let last = steps.last().ok_or_else(|| Error::Protocol("empty sequence".into()))?;
        let head = head_forward(&self.final_head, &last.h, &mut dropout);
        let (loss, mut dlog) = cross_entropy(&head.probs, label_target(record))?;
        dlog.iter_mut().for_each(|v| *v *= weights.final_weight * scale);
        let h = self.cell.hidden_dim;
        let mut dh = vec![0.0; h];
        self.final_head.backward(&head, &dlog, &mut g.final_head, &mut dh);
        let mut dc = vec![0.0; h];
        let mut du = vec![0.0; self.cell.input_dim];
        let mut dh_prev = vec![0.0; h];
        let mut dc_prev = vec![0.0; h];
        for t in (0..steps.len()).rev() {
            self.cell
                .step_backward(&steps[t], &dh, &dc, &mut g.cell, &mut du, &mut dh_prev, &mut dc_prev);
            g.w_e.outer_acc(&du, &xs[t]);
            std::mem::swap(&mut dh, &mut dh_prev);
            std::mem::swap(&mut dc, &mut dc_prev);
        }
        Ok(LossBreakdown::compose(0.0, 0.0, loss, *weights))
    }

    fn final_dist(&self, record: &NormalizedRecord, order: &[usize]) -> Result<[f64; 2]> {
        let steps = self.run(&encode_all(record, order)?);
        let last = steps.last().ok_or_else(|| Error::Protocol("empty sequence".into()))?;
        let p = head_forward(&self.final_head, &last.h, &mut None).probs;
        Ok([p[0], p[1]])
    }

    fn loss(&self, record: &NormalizedRecord, order: &[usize], weights: &LossWeights) -> Result<LossBreakdown> {
        let d = self.final_dist(record, order)?;
        let (l, _) = cross_entropy(&d, label_target(record))?;
        Ok(LossBreakdown::compose(0.0, 0.0, l, *weights))
    }
}

/// Smallest-error hidden width so that `count(hidden)` lands nearest to
/// `target`.
pub fn matched_hidden(target: usize, count: impl Fn(usize) -> usize) -> usize {
    (1..=256)
        .min_by_key(|&h| count(h).abs_diff(target))
        .expect("non-empty range")
}
