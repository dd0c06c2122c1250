//! Two cross-fed encoder LSTMs, per-step parent-class heads, and a fusion
//! LSTM feeding the final Yes/No head.
//!
//! Per step `t` the encoders run in a staggered order so the cross-feed has
//! no cycle:
//!
//! ```text
//! u1_t = [We1 x1_t ; h2_{t-1}]        (h1_t, c1_t) = enc1(u1_t, h1_{t-1}, c1_{t-1})
//! u2_t = [We2 x2_t ; h1_t]            (h2_t, c2_t) = enc2(u2_t, h2_{t-1}, c2_{t-1})
//! p1_t = head1(h1_t)                  p2_t = head2(h2_t)
//! u3_t = [We3 [x1_t; x2_t] ; h1_t ; h2_t]
//! (h3_t, c3_t) = fusion(u3_t, h3_{t-1}, c3_{t-1})
//! final = final_head(h3_T)
//! ```

use serde::{Deserialize, Serialize};

use crate::data::{
    partition_halves, BiomarkerSchema, NormalizedRecord, Token, TokenStreams, NUM_BIOMARKERS,
    NUM_PARENT_CLASSES, TOKEN_DIM,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{check_parent_target, label_target, Classifier, Decision, LossBreakdown, LossWeights};
use crate::nn::{LstmParams, LstmStepCache, MlpCache, MlpParams, Mode};
use crate::optim::cross_entropy;
use crate::params::{prefixed, ParamSet};
use crate::rng::RngStream;

/// Steps per stream: the larger half of the 17 biomarkers.
pub const STREAM_STEPS: usize = NUM_BIOMARKERS.div_ceil(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriLstmDims {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub head_hidden: usize,
}

impl Default for TriLstmDims {
    fn default() -> Self {
        Self {
            embed_dim: 8,
            hidden_dim: 16,
            head_hidden: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriLstmParams {
    pub w_e1: Matrix,
    pub w_e2: Matrix,
    pub w_e3: Matrix,
    pub enc1: LstmParams,
    pub enc2: LstmParams,
    pub fusion: LstmParams,
    pub head1: MlpParams,
    pub head2: MlpParams,
    pub final_head: MlpParams,
}

impl ParamSet for TriLstmParams {
    fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut v = vec![
            ("w_e1".to_string(), &self.w_e1),
            ("w_e2".to_string(), &self.w_e2),
            ("w_e3".to_string(), &self.w_e3),
        ];
        v.extend(prefixed("enc1", self.enc1.named_tensors()));
        v.extend(prefixed("enc2", self.enc2.named_tensors()));
        v.extend(prefixed("fusion", self.fusion.named_tensors()));
        v.extend(prefixed("head1", self.head1.named_tensors()));
        v.extend(prefixed("head2", self.head2.named_tensors()));
        v.extend(prefixed("final_head", self.final_head.named_tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.w_e1, &mut self.w_e2, &mut self.w_e3];
        v.extend(self.enc1.tensors_mut());
        v.extend(self.enc2.tensors_mut());
        v.extend(self.fusion.tensors_mut());
        v.extend(self.head1.tensors_mut());
        v.extend(self.head2.tensors_mut());
        v.extend(self.final_head.tensors_mut());
        v
    }
}

/// Per-step trajectories and distributions of one forward pass.
#[derive(Debug, Clone)]
pub struct TriLstmOutput {
    pub h1_traj: Vec<Vec<f64>>,
    pub h2_traj: Vec<Vec<f64>>,
    pub h3_traj: Vec<Vec<f64>>,
    pub head1_dists: Vec<Vec<f64>>,
    pub head2_dists: Vec<Vec<f64>>,
    /// `[yes, no]`
    pub final_dist: Vec<f64>,
}

struct StepTape {
    x1: Vec<f64>,
    x2: Vec<f64>,
    enc1: LstmStepCache,
    enc2: LstmStepCache,
    fusion: LstmStepCache,
    head1: MlpCache,
    head2: MlpCache,
}

/// Everything the backward pass needs from a forward pass.
pub struct TriLstmTape {
    steps: Vec<StepTape>,
    final_head: MlpCache,
    fingerprint: u64,
}

/// Parent-class targets per step; `None` on padded steps.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTargets {
    pub first: Vec<Option<usize>>,
    pub second: Vec<Option<usize>>,
}

impl HeadTargets {
    /// Ground-truth subordination for each biomarker token.
    pub fn from_streams(streams: &TokenStreams, schema: &BiomarkerSchema) -> Self {
        let f = |s: &[Token]| {
            s.iter()
                .map(|t| t.biomarker().map(|i| schema.ground_truth_parent(i).index()))
                .collect()
        };
        Self {
            first: f(&streams.first),
            second: f(&streams.second),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub decision: Decision,
    pub prob_yes: f64,
    /// Parent-class distribution for each schema biomarker, from the head of
    /// whichever encoder read it.
    pub parent_dists: Vec<Vec<f64>>,
}

fn fingerprint(p: &TriLstmParams) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for t in p.tensors() {
        for v in t.as_slice() {
            h = (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

pub(crate) fn head_forward(p: &MlpParams, x: &[f64], dropout: &mut Option<(f64, &mut RngStream)>) -> MlpCache {
    match dropout {
        Some((rate, rng)) => p.forward_raw(x, &mut Mode::Train { dropout: *rate, rng }),
        None => p.forward_raw(x, &mut Mode::Eval),
    }
}

fn mean_ce(dists: &[Vec<f64>], targets: &[Option<usize>]) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut n = 0;
    for (d, t) in dists.iter().zip(targets) {
        if let Some(t) = *t {
            sum += cross_entropy(d, check_parent_target(t)?)?.0;
            n += 1;
        }
    }
    Ok((if n > 0 { sum / n as f64 } else { 0.0 }, n))
}

/// Combined objective for a forward output.
pub fn compute_loss(
    out: &TriLstmOutput,
    targets: &HeadTargets,
    label_index: usize,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    let (loss1, _) = mean_ce(&out.head1_dists, &targets.first)?;
    let (loss2, _) = mean_ce(&out.head2_dists, &targets.second)?;
    let (loss_final, _) = cross_entropy(&out.final_dist, label_index)?;
    Ok(LossBreakdown::compose(loss1, loss2, loss_final, weights))
}

impl TriLstmParams {
    pub fn init(dims: TriLstmDims, rng: &mut RngStream) -> Self {
        let TriLstmDims {
            embed_dim: e,
            hidden_dim: h,
            head_hidden: m,
        } = dims;
        let mut emb = |rows, cols| {
            let s = 1.0 / (cols as f64).sqrt();
            Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform(-s, s)).collect())
                .expect("sized")
        };
        let w_e1 = emb(e, TOKEN_DIM);
        let w_e2 = emb(e, TOKEN_DIM);
        let w_e3 = emb(e, 2 * TOKEN_DIM);
        Self {
            w_e1,
            w_e2,
            w_e3,
            enc1: LstmParams::init(e + h, h, rng),
            enc2: LstmParams::init(e + h, h, rng),
            fusion: LstmParams::init(e + 2 * h, h, rng),
            head1: MlpParams::init(h, m, NUM_PARENT_CLASSES, rng),
            head2: MlpParams::init(h, m, NUM_PARENT_CLASSES, rng),
            final_head: MlpParams::init(h, m, 2, rng),
        }
    }

    pub fn zeros(dims: TriLstmDims) -> Self {
        let TriLstmDims {
            embed_dim: e,
            hidden_dim: h,
            head_hidden: m,
        } = dims;
        Self {
            w_e1: Matrix::zeros(e, TOKEN_DIM),
            w_e2: Matrix::zeros(e, TOKEN_DIM),
            w_e3: Matrix::zeros(e, 2 * TOKEN_DIM),
            enc1: LstmParams::zeros(e + h, h),
            enc2: LstmParams::zeros(e + h, h),
            fusion: LstmParams::zeros(e + 2 * h, h),
            head1: MlpParams::zeros(h, m, NUM_PARENT_CLASSES),
            head2: MlpParams::zeros(h, m, NUM_PARENT_CLASSES),
            final_head: MlpParams::zeros(h, m, 2),
        }
    }

    pub fn dims(&self) -> TriLstmDims {
        TriLstmDims {
            embed_dim: self.w_e1.rows(),
            hidden_dim: self.enc1.hidden_dim,
            head_hidden: self.head1.w_hidden.rows(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let TriLstmDims {
            embed_dim: e,
            hidden_dim: h,
            ..
        } = self.dims();
        let shape_ok = self.w_e1.shape() == (e, TOKEN_DIM)
            && self.w_e2.shape() == (e, TOKEN_DIM)
            && self.w_e3.shape() == (e, 2 * TOKEN_DIM)
            && (self.enc1.input_dim, self.enc1.hidden_dim) == (e + h, h)
            && (self.enc2.input_dim, self.enc2.hidden_dim) == (e + h, h)
            && (self.fusion.input_dim, self.fusion.hidden_dim) == (e + 2 * h, h)
            && self.head1.input_dim() == h
            && self.head2.input_dim() == h
            && self.final_head.input_dim() == h
            && self.head1.output_dim() == NUM_PARENT_CLASSES
            && self.head2.output_dim() == NUM_PARENT_CLASSES
            && self.final_head.output_dim() == 2;
        if !shape_ok {
            return Err(Error::Shape("TRI-LSTM parameter shapes are inconsistent".into()));
        }
        for l in [&self.enc1, &self.enc2, &self.fusion] {
            l.validate()?;
        }
        for m in [&self.head1, &self.head2, &self.final_head] {
            m.validate()?;
        }
        Ok(())
    }

    fn run(&self, streams: &TokenStreams, mut dropout: Option<(f64, &mut RngStream)>) -> Result<TriLstmTape> {
        if streams.first.len() != streams.second.len() {
            return Err(Error::Protocol(format!(
                "stream lengths {} and {} differ after padding",
                streams.first.len(),
                streams.second.len()
            )));
        }
        let TriLstmDims {
            embed_dim: e,
            hidden_dim: h,
            ..
        } = self.dims();
        let zeros = vec![0.0; h];
        let mut steps: Vec<StepTape> = Vec::with_capacity(streams.first.len());
        let mut xbar = vec![0.0; 2 * TOKEN_DIM];
        let mut u1 = vec![0.0; e + h];
        let mut u2 = vec![0.0; e + h];
        let mut u3 = vec![0.0; e + 2 * h];

        for (t1, t2) in streams.first.iter().zip(&streams.second) {
            let x1 = t1.encode();
            let x2 = t2.encode();
            let prev = steps.last();
            let (h1_prev, c1_prev) = prev.map_or((&zeros, &zeros), |s| (&s.enc1.h, &s.enc1.c));
            let (h2_prev, c2_prev) = prev.map_or((&zeros, &zeros), |s| (&s.enc2.h, &s.enc2.c));
            let (h3_prev, c3_prev) = prev.map_or((&zeros, &zeros), |s| (&s.fusion.h, &s.fusion.c));

            self.w_e1.matvec_into(&x1, &mut u1[..e]);
            u1[e..].copy_from_slice(h2_prev);
            let enc1 = self.enc1.step_raw(&u1, h1_prev, c1_prev);

            self.w_e2.matvec_into(&x2, &mut u2[..e]);
            u2[e..].copy_from_slice(&enc1.h);
            let enc2 = self.enc2.step_raw(&u2, h2_prev, c2_prev);

            let head1 = head_forward(&self.head1, &enc1.h, &mut dropout);
            let head2 = head_forward(&self.head2, &enc2.h, &mut dropout);

            xbar[..TOKEN_DIM].copy_from_slice(&x1);
            xbar[TOKEN_DIM..].copy_from_slice(&x2);
            self.w_e3.matvec_into(&xbar, &mut u3[..e]);
            u3[e..e + h].copy_from_slice(&enc1.h);
            u3[e + h..].copy_from_slice(&enc2.h);
            let fusion = self.fusion.step_raw(&u3, h3_prev, c3_prev);

            steps.push(StepTape {
                x1,
                x2,
                enc1,
                enc2,
                fusion,
                head1,
                head2,
            });
        }
        let last = steps
            .last()
            .ok_or_else(|| Error::Protocol("empty token streams".into()))?;
        let final_head = head_forward(&self.final_head, &last.fusion.h, &mut dropout);
        Ok(TriLstmTape {
            steps,
            final_head,
            fingerprint: 0,
        })
    }

    fn output(tape: &TriLstmTape) -> TriLstmOutput {
        TriLstmOutput {
            h1_traj: tape.steps.iter().map(|s| s.enc1.h.clone()).collect(),
            h2_traj: tape.steps.iter().map(|s| s.enc2.h.clone()).collect(),
            h3_traj: tape.steps.iter().map(|s| s.fusion.h.clone()).collect(),
            head1_dists: tape.steps.iter().map(|s| s.head1.probs.clone()).collect(),
            head2_dists: tape.steps.iter().map(|s| s.head2.probs.clone()).collect(),
            final_dist: tape.final_head.probs.clone(),
        }
    }

    /// Forward pass over equal-length (padded) streams.
    pub fn forward(
        &self,
        streams: &TokenStreams,
        dropout: Option<(f64, &mut RngStream)>,
    ) -> Result<(TriLstmOutput, TriLstmTape)> {
        let mut tape = self.run(streams, dropout)?;
        tape.fingerprint = fingerprint(self);
        Ok((Self::output(&tape), tape))
    }

    /// Exact gradients of the combined objective for a tape produced by
    /// [`forward`](Self::forward) on these same parameters.
    pub fn backward(
        &self,
        tape: &TriLstmTape,
        targets: &HeadTargets,
        label_index: usize,
        weights: LossWeights,
    ) -> Result<TriLstmParams> {
        if tape.fingerprint != fingerprint(self) {
            return Err(Error::Protocol("tape was recorded with different parameters".into()));
        }
        let mut grads = self.zeros_like();
        self.backward_into(tape, targets, label_index, weights, 1.0, &mut grads)?;
        Ok(grads)
    }

    fn backward_into(
        &self,
        tape: &TriLstmTape,
        targets: &HeadTargets,
        label_index: usize,
        w: LossWeights,
        scale: f64,
        g: &mut TriLstmParams,
    ) -> Result<LossBreakdown> {
        let steps = tape.steps.len();
        if targets.first.len() != steps || targets.second.len() != steps {
            return Err(Error::Protocol("head targets do not match the tape length".into()));
        }
        let TriLstmDims {
            embed_dim: e,
            hidden_dim: h,
            ..
        } = self.dims();

        let n1 = targets.first.iter().flatten().count().max(1) as f64;
        let n2 = targets.second.iter().flatten().count().max(1) as f64;
        let (mut loss1, mut loss2) = (0.0, 0.0);

        let (loss_final, mut dlog) = cross_entropy(&tape.final_head.probs, label_index)?;
        dlog.iter_mut().for_each(|v| *v *= w.final_weight * scale);
        let mut dh3 = vec![0.0; h];
        self.final_head
            .backward(&tape.final_head, &dlog, &mut g.final_head, &mut dh3);

        let mut dc3 = vec![0.0; h];
        let mut dh1_carry = vec![0.0; h];
        let mut dc1 = vec![0.0; h];
        let mut dh2_carry = vec![0.0; h];
        let mut dc2 = vec![0.0; h];
        let mut du3 = vec![0.0; e + 2 * h];
        let mut du2 = vec![0.0; e + h];
        let mut du1 = vec![0.0; e + h];
        let mut dh_prev = vec![0.0; h];
        let mut dc_prev = vec![0.0; h];
        let mut xbar = vec![0.0; 2 * TOKEN_DIM];

        for t in (0..steps).rev() {
            let s = &tape.steps[t];

            self.fusion
                .step_backward(&s.fusion, &dh3, &dc3, &mut g.fusion, &mut du3, &mut dh_prev, &mut dc_prev);
            std::mem::swap(&mut dh3, &mut dh_prev);
            std::mem::swap(&mut dc3, &mut dc_prev);
            xbar[..TOKEN_DIM].copy_from_slice(&s.x1);
            xbar[TOKEN_DIM..].copy_from_slice(&s.x2);
            g.w_e3.outer_acc(&du3[..e], &xbar);

            let mut dh1: Vec<f64> = dh1_carry.iter().zip(&du3[e..e + h]).map(|(a, b)| a + b).collect();
            let mut dh2: Vec<f64> = dh2_carry.iter().zip(&du3[e + h..]).map(|(a, b)| a + b).collect();

            if let Some(target) = targets.second[t] {
                let (l, mut d) = cross_entropy(&s.head2.probs, check_parent_target(target)?)?;
                loss2 += l / n2;
                d.iter_mut().for_each(|v| *v *= w.alpha * scale / n2);
                self.head2.backward(&s.head2, &d, &mut g.head2, &mut dh2);
            }
            self.enc2
                .step_backward(&s.enc2, &dh2, &dc2, &mut g.enc2, &mut du2, &mut dh_prev, &mut dc_prev);
            std::mem::swap(&mut dh2_carry, &mut dh_prev);
            std::mem::swap(&mut dc2, &mut dc_prev);
            g.w_e2.outer_acc(&du2[..e], &s.x2);
            for (a, b) in dh1.iter_mut().zip(&du2[e..]) {
                *a += b;
            }

            if let Some(target) = targets.first[t] {
                let (l, mut d) = cross_entropy(&s.head1.probs, check_parent_target(target)?)?;
                loss1 += l / n1;
                d.iter_mut().for_each(|v| *v *= w.lambda * scale / n1);
                self.head1.backward(&s.head1, &d, &mut g.head1, &mut dh1);
            }
            self.enc1
                .step_backward(&s.enc1, &dh1, &dc1, &mut g.enc1, &mut du1, &mut dh_prev, &mut dc_prev);
            std::mem::swap(&mut dh1_carry, &mut dh_prev);
            std::mem::swap(&mut dc1, &mut dc_prev);
            g.w_e1.outer_acc(&du1[..e], &s.x1);
            // u1_t carried h2_{t-1}
            for (a, b) in dh2_carry.iter_mut().zip(&du1[e..]) {
                *a += b;
            }
        }
        Ok(LossBreakdown::compose(loss1, loss2, loss_final, w))
    }

    /// Padded streams and their ground-truth head targets.
    pub fn prepare(record: &NormalizedRecord, order: &[usize], schema: &BiomarkerSchema) -> Result<(TokenStreams, HeadTargets)> {
        let streams = partition_halves(record, order)?.padded(STREAM_STEPS)?;
        let targets = HeadTargets::from_streams(&streams, schema);
        Ok((streams, targets))
    }

    pub fn predict(&self, record: &NormalizedRecord, order: &[usize]) -> Result<Prediction> {
        let (streams, _) = Self::prepare(record, order, BiomarkerSchema::shared())?;
        let tape = self.run(&streams, None)?;
        let mut parent_dists = vec![Vec::new(); record.features.len()];
        for (t, s) in tape.steps.iter().enumerate() {
            if let Some(i) = streams.first[t].biomarker() {
                parent_dists[i] = s.head1.probs.clone();
            }
            if let Some(i) = streams.second[t].biomarker() {
                parent_dists[i] = s.head2.probs.clone();
            }
        }
        let probs = &tape.final_head.probs;
        Ok(Prediction {
            decision: Decision::from_dist(probs),
            prob_yes: probs[crate::model::YES],
            parent_dists,
        })
    }
}

impl Classifier for TriLstmParams {
    fn accumulate_gradient(
        &self,
        record: &NormalizedRecord,
        order: &[usize],
        weights: &LossWeights,
        dropout: Option<(f64, &mut RngStream)>,
        scale: f64,
        grads: &mut Self,
    ) -> Result<LossBreakdown> {
        let (streams, targets) = Self::prepare(record, order, BiomarkerSchema::shared())?;
        let tape = self.run(&streams, dropout)?;
        self.backward_into(&tape, &targets, label_target(record), *weights, scale, grads)
    }

    fn final_dist(&self, record: &NormalizedRecord, order: &[usize]) -> Result<[f64; 2]> {
        let streams = partition_halves(record, order)?.padded(STREAM_STEPS)?;
        let p = &self.run(&streams, None)?.final_head.probs;
        Ok([p[0], p[1]])
    }

    fn loss(&self, record: &NormalizedRecord, order: &[usize], weights: &LossWeights) -> Result<LossBreakdown> {
        let (streams, targets) = Self::prepare(record, order, BiomarkerSchema::shared())?;
        let out = Self::output(&self.run(&streams, None)?);
        compute_loss(&out, &targets, label_target(record), *weights)
    }
}
