//! LSTM cell and softmax MLP head with hand-written backward passes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{elu, elu_grad, sigmoid, softmax_in_place, Matrix};
use crate::params::ParamSet;
use crate::rng::RngStream;

fn init_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut RngStream) -> Matrix {
    let s = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform(-s, s)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// Standard four-gate LSTM. Every gate reads the concatenation `[u; h_prev]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_f: Matrix,
    pub w_i: Matrix,
    pub w_g: Matrix,
    pub w_o: Matrix,
    pub b_f: Matrix,
    pub b_i: Matrix,
    pub b_g: Matrix,
    pub b_o: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Matrix,
    pub c: Matrix,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: Matrix::zeros(hidden_dim, 1),
            c: Matrix::zeros(hidden_dim, 1),
        }
    }
}

/// Values recorded by one forward step for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    /// `[u; h_prev]`
    pub z: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmStepCache {
    pub fn state(&self) -> LstmState {
        LstmState {
            h: Matrix::column(&self.h),
            c: Matrix::column(&self.c),
        }
    }
}

/// One entry per executed forward step.
#[derive(Debug, Clone, Default)]
pub struct TapeCache {
    pub steps: Vec<LstmStepCache>,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = Matrix::zeros(hidden_dim, input_dim + hidden_dim);
        let b = Matrix::zeros(hidden_dim, 1);
        Self {
            input_dim,
            hidden_dim,
            w_f: w.clone(),
            w_i: w.clone(),
            w_g: w.clone(),
            w_o: w,
            b_f: b.clone(),
            b_i: b.clone(),
            b_g: b.clone(),
            b_o: b,
        }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases except
    /// the forget gate at +1.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut RngStream) -> Self {
        let fan_in = input_dim + hidden_dim;
        let mut p = Self::zeros(input_dim, hidden_dim);
        p.w_f = init_uniform(hidden_dim, fan_in, fan_in, rng);
        p.w_i = init_uniform(hidden_dim, fan_in, fan_in, rng);
        p.w_g = init_uniform(hidden_dim, fan_in, fan_in, rng);
        p.w_o = init_uniform(hidden_dim, fan_in, fan_in, rng);
        p.b_f.fill(1.0);
        p
    }

    pub fn validate(&self) -> Result<()> {
        let want = (self.hidden_dim, self.input_dim + self.hidden_dim);
        for w in [&self.w_f, &self.w_i, &self.w_g, &self.w_o] {
            if w.shape() != want {
                return Err(Error::Shape(format!(
                    "LSTM gate weight {:?}, expected {want:?}",
                    w.shape()
                )));
            }
        }
        for b in [&self.b_f, &self.b_i, &self.b_g, &self.b_o] {
            if b.shape() != (self.hidden_dim, 1) {
                return Err(Error::Shape(format!("LSTM bias {:?}", b.shape())));
            }
        }
        Ok(())
    }

    /// Forward step on raw slices; `u` has `input_dim` entries.
    pub fn step_raw(&self, u: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStepCache {
        let hd = self.hidden_dim;
        debug_assert_eq!(u.len(), self.input_dim);
        let mut z = Vec::with_capacity(self.input_dim + hd);
        z.extend_from_slice(u);
        z.extend_from_slice(h_prev);

        let mut f = vec![0.0; hd];
        let mut i = vec![0.0; hd];
        let mut g = vec![0.0; hd];
        let mut o = vec![0.0; hd];
        self.w_f.matvec_into(&z, &mut f);
        self.w_i.matvec_into(&z, &mut i);
        self.w_g.matvec_into(&z, &mut g);
        self.w_o.matvec_into(&z, &mut o);

        let mut c = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        for k in 0..hd {
            f[k] = sigmoid(f[k] + self.b_f.as_slice()[k]);
            i[k] = sigmoid(i[k] + self.b_i.as_slice()[k]);
            g[k] = (g[k] + self.b_g.as_slice()[k]).tanh();
            o[k] = sigmoid(o[k] + self.b_o.as_slice()[k]);
            c[k] = f[k] * c_prev[k] + i[k] * g[k];
            tanh_c[k] = c[k].tanh();
            h[k] = o[k] * tanh_c[k];
        }
        LstmStepCache {
            z,
            c_prev: c_prev.to_vec(),
            f,
            i,
            g,
            o,
            c,
            tanh_c,
            h,
        }
    }

    /// Backward through one step. `dh` and `dc` are the total gradients
    /// reaching `h_t` and `c_t`; parameter gradients are accumulated into
    /// `grads`, and the gradients w.r.t. the step input and previous state are
    /// written (not accumulated) into `du`, `dh_prev`, `dc_prev`.
    #[allow(clippy::too_many_arguments)]
    pub fn step_backward(
        &self,
        cache: &LstmStepCache,
        dh: &[f64],
        dc: &[f64],
        grads: &mut LstmParams,
        du: &mut [f64],
        dh_prev: &mut [f64],
        dc_prev: &mut [f64],
    ) {
        let hd = self.hidden_dim;
        let mut da_f = vec![0.0; hd];
        let mut da_i = vec![0.0; hd];
        let mut da_g = vec![0.0; hd];
        let mut da_o = vec![0.0; hd];
        for k in 0..hd {
            let (f, i, g, o, tc) = (cache.f[k], cache.i[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
            let d_o = dh[k] * tc;
            let d_c = dc[k] + dh[k] * o * (1.0 - tc * tc);
            da_f[k] = d_c * cache.c_prev[k] * f * (1.0 - f);
            da_i[k] = d_c * g * i * (1.0 - i);
            da_g[k] = d_c * i * (1.0 - g * g);
            da_o[k] = d_o * o * (1.0 - o);
            dc_prev[k] = d_c * f;
        }

        grads.w_f.outer_acc(&da_f, &cache.z);
        grads.w_i.outer_acc(&da_i, &cache.z);
        grads.w_g.outer_acc(&da_g, &cache.z);
        grads.w_o.outer_acc(&da_o, &cache.z);
        for (b, d) in [
            (&mut grads.b_f, &da_f),
            (&mut grads.b_i, &da_i),
            (&mut grads.b_g, &da_g),
            (&mut grads.b_o, &da_o),
        ] {
            for (bv, dv) in b.as_mut_slice().iter_mut().zip(d.iter()) {
                *bv += dv;
            }
        }

        let mut dz = vec![0.0; self.input_dim + hd];
        self.w_f.matvec_t_acc(&da_f, &mut dz);
        self.w_i.matvec_t_acc(&da_i, &mut dz);
        self.w_g.matvec_t_acc(&da_g, &mut dz);
        self.w_o.matvec_t_acc(&da_o, &mut dz);
        du.copy_from_slice(&dz[..self.input_dim]);
        dh_prev.copy_from_slice(&dz[self.input_dim..]);
    }
}

impl ParamSet for LstmParams {
    fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        vec![
            ("w_f".into(), &self.w_f),
            ("w_i".into(), &self.w_i),
            ("w_g".into(), &self.w_g),
            ("w_o".into(), &self.w_o),
            ("b_f".into(), &self.b_f),
            ("b_i".into(), &self.b_i),
            ("b_g".into(), &self.b_g),
            ("b_o".into(), &self.b_o),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.w_f,
            &mut self.w_i,
            &mut self.w_g,
            &mut self.w_o,
            &mut self.b_f,
            &mut self.b_i,
            &mut self.b_g,
            &mut self.b_o,
        ]
    }
}

/// One LSTM step on column-vector inputs.
pub fn lstm_step(p: &LstmParams, u: &Matrix, prev: &LstmState) -> Result<(LstmState, LstmStepCache)> {
    if u.shape() != (p.input_dim, 1) {
        return Err(Error::Shape(format!(
            "LSTM input {:?}, expected ({}, 1)",
            u.shape(),
            p.input_dim
        )));
    }
    if prev.h.shape() != (p.hidden_dim, 1) || prev.c.shape() != (p.hidden_dim, 1) {
        return Err(Error::Shape("LSTM state does not match hidden_dim".into()));
    }
    let cache = p.step_raw(u.as_slice(), prev.h.as_slice(), prev.c.as_slice());
    Ok((cache.state(), cache))
}

/// Runs a whole sequence from the zero state, returning the tape.
pub fn lstm_forward(p: &LstmParams, inputs: &[Matrix]) -> Result<TapeCache> {
    let mut state = LstmState::zeros(p.hidden_dim);
    let mut tape = TapeCache::default();
    for u in inputs {
        let (next, cache) = lstm_step(p, u, &state)?;
        tape.steps.push(cache);
        state = next;
    }
    Ok(tape)
}

/// Backpropagation through time over a tape.
///
/// `upstream[t]` is the loss gradient arriving at `h_t` from outside the
/// recurrence. Returns parameter gradients and the gradient w.r.t. each
/// step's input.
pub fn lstm_backward(
    p: &LstmParams,
    tape: &TapeCache,
    upstream: &[Matrix],
) -> Result<(LstmParams, Vec<Matrix>)> {
    if tape.steps.len() != upstream.len() {
        return Err(Error::Protocol(format!(
            "tape has {} steps but {} upstream gradients were given",
            tape.steps.len(),
            upstream.len()
        )));
    }
    let hd = p.hidden_dim;
    let mut grads = p.zeros_like();
    let mut input_grads = vec![Matrix::zeros(p.input_dim, 1); tape.steps.len()];
    let mut dh_carry = vec![0.0; hd];
    let mut dc_carry = vec![0.0; hd];
    let mut dh_prev = vec![0.0; hd];
    let mut dc_prev = vec![0.0; hd];
    for t in (0..tape.steps.len()).rev() {
        if upstream[t].len() != hd {
            return Err(Error::Shape(format!("upstream gradient at step {t}")));
        }
        let dh: Vec<f64> = dh_carry
            .iter()
            .zip(upstream[t].as_slice())
            .map(|(a, b)| a + b)
            .collect();
        p.step_backward(
            &tape.steps[t],
            &dh,
            &dc_carry,
            &mut grads,
            input_grads[t].as_mut_slice(),
            &mut dh_prev,
            &mut dc_prev,
        );
        std::mem::swap(&mut dh_carry, &mut dh_prev);
        std::mem::swap(&mut dc_carry, &mut dc_prev);
    }
    Ok((grads, input_grads))
}

/// Single-hidden-layer head: `softmax(W_out * dropout(elu(W_hidden x + b_hidden)) + b_out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub w_hidden: Matrix,
    pub b_hidden: Matrix,
    pub w_out: Matrix,
    pub b_out: Matrix,
}

impl ParamSet for MlpParams {
    fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        vec![
            ("w_hidden".into(), &self.w_hidden),
            ("b_hidden".into(), &self.b_hidden),
            ("w_out".into(), &self.w_out),
            ("b_out".into(), &self.b_out),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.w_hidden,
            &mut self.b_hidden,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }
}

/// Whether dropout is active for a forward pass.
pub enum Mode<'a> {
    Eval,
    Train { dropout: f64, rng: &'a mut RngStream },
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    pub x: Vec<f64>,
    pub pre: Vec<f64>,
    /// Scaled keep-mask (`0` or `1/(1-rate)`), present only in training mode.
    pub mask: Option<Vec<f64>>,
    pub hidden: Vec<f64>,
    pub probs: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            w_hidden: Matrix::zeros(hidden_dim, input_dim),
            b_hidden: Matrix::zeros(hidden_dim, 1),
            w_out: Matrix::zeros(output_dim, hidden_dim),
            b_out: Matrix::zeros(output_dim, 1),
        }
    }

    pub fn init(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut RngStream) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim, output_dim);
        p.w_hidden = init_uniform(hidden_dim, input_dim, input_dim, rng);
        p.w_out = init_uniform(output_dim, hidden_dim, hidden_dim, rng);
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_hidden.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w_out.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (m, _) = self.w_hidden.shape();
        let (k, m2) = self.w_out.shape();
        if m != m2 || self.b_hidden.shape() != (m, 1) || self.b_out.shape() != (k, 1) {
            return Err(Error::Shape("MLP layer shapes do not chain".into()));
        }
        Ok(())
    }

    pub fn forward_raw(&self, x: &[f64], mode: &mut Mode<'_>) -> MlpCache {
        let m = self.w_hidden.rows();
        let mut pre = vec![0.0; m];
        self.w_hidden.matvec_into(x, &mut pre);
        for (p, b) in pre.iter_mut().zip(self.b_hidden.as_slice()) {
            *p += b;
        }
        let mut hidden: Vec<f64> = pre.iter().map(|&v| elu(v)).collect();
        let mask = match mode {
            Mode::Train { dropout, rng } if *dropout > 0.0 => {
                let keep = 1.0 / (1.0 - *dropout);
                let mask: Vec<f64> = (0..m)
                    .map(|_| if rng.bernoulli(*dropout) { 0.0 } else { keep })
                    .collect();
                for (h, k) in hidden.iter_mut().zip(&mask) {
                    *h *= k;
                }
                Some(mask)
            }
            _ => None,
        };
        let mut probs = vec![0.0; self.w_out.rows()];
        self.w_out.matvec_into(&hidden, &mut probs);
        for (p, b) in probs.iter_mut().zip(self.b_out.as_slice()) {
            *p += b;
        }
        softmax_in_place(&mut probs);
        MlpCache {
            x: x.to_vec(),
            pre,
            mask,
            hidden,
            probs,
        }
    }

    /// Accumulates parameter gradients given the gradient w.r.t. the output
    /// logits and adds the input gradient into `dx`.
    pub fn backward(&self, cache: &MlpCache, dlogits: &[f64], grads: &mut MlpParams, dx: &mut [f64]) {
        grads.w_out.outer_acc(dlogits, &cache.hidden);
        for (b, d) in grads.b_out.as_mut_slice().iter_mut().zip(dlogits) {
            *b += d;
        }
        let mut dpre = vec![0.0; cache.pre.len()];
        self.w_out.matvec_t_acc(dlogits, &mut dpre);
        for (k, d) in dpre.iter_mut().enumerate() {
            if let Some(mask) = &cache.mask {
                *d *= mask[k];
            }
            *d *= elu_grad(cache.pre[k]);
        }
        grads.w_hidden.outer_acc(&dpre, &cache.x);
        for (b, d) in grads.b_hidden.as_mut_slice().iter_mut().zip(&dpre) {
            *b += d;
        }
        self.w_hidden.matvec_t_acc(&dpre, dx);
    }
}

/// Column-vector front end to [`MlpParams::forward_raw`]; returns the
/// probability row and the cache.
pub fn mlp_forward(p: &MlpParams, x: &Matrix, mode: &mut Mode<'_>) -> Result<(Matrix, MlpCache)> {
    p.validate()?;
    if x.len() != p.input_dim() {
        return Err(Error::Shape(format!(
            "MLP input has {} entries, expected {}",
            x.len(),
            p.input_dim()
        )));
    }
    let cache = p.forward_raw(x.as_slice(), mode);
    Ok((Matrix::row(&cache.probs), cache))
}

/// Inverted dropout. Returns the scaled output and the 0/1 keep mask.
pub fn apply_dropout(x: &Matrix, rate: f64, rng: &mut RngStream) -> Result<(Matrix, Matrix)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    let keep = 1.0 / (1.0 - rate);
    let mut mask = Matrix::zeros(x.rows(), x.cols());
    let mut out = x.clone();
    for (m, o) in mask.as_mut_slice().iter_mut().zip(out.as_mut_slice()) {
        if rate > 0.0 && rng.bernoulli(rate) {
            *o = 0.0;
        } else {
            *m = 1.0;
            *o *= keep;
        }
    }
    Ok((out, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use crate::optim::cross_entropy;

    fn random_lstm(input: usize, hidden: usize, seed: u64) -> LstmParams {
        let mut rng = RngStream::new(seed);
        let mut p = LstmParams::init(input, hidden, &mut rng);
        for t in p.tensors_mut() {
            for v in t.as_mut_slice() {
                *v = rng.uniform(-0.8, 0.8);
            }
        }
        p
    }

    fn random_inputs(n: usize, dim: usize, seed: u64) -> Vec<Matrix> {
        let mut rng = RngStream::new(seed);
        (0..n)
            .map(|_| Matrix::column(&(0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect::<Vec<_>>()))
            .collect()
    }

    /// Loss = sum_t <w_t, h_t> for fixed random projections w_t.
    fn projected_loss(p: &LstmParams, inputs: &[Matrix], proj: &[Matrix]) -> f64 {
        let tape = lstm_forward(p, inputs).unwrap();
        tape.steps
            .iter()
            .zip(proj)
            .map(|(s, w)| crate::linalg::dot(&s.h, w.as_slice()))
            .sum()
    }

    #[test]
    fn zero_params_zero_state() {
        let p = LstmParams::zeros(3, 4);
        let u = Matrix::column(&[0.3, -2.0, 5.0]);
        let (s, _) = lstm_step(&p, &u, &LstmState::zeros(4)).unwrap();
        assert!(s.h.as_slice().iter().all(|&v| v == 0.0));
        assert!(s.c.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_gates_hand_evaluation() {
        let mut p = LstmParams::zeros(2, 1);
        p.b_f.fill(50.0);
        p.b_i.fill(50.0);
        p.b_o.fill(50.0);
        let prev = LstmState {
            h: Matrix::zeros(1, 1),
            c: Matrix::column(&[0.8]),
        };
        let (s, _) = lstm_step(&p, &Matrix::column(&[1.0, -1.0]), &prev).unwrap();
        assert!((s.c.as_slice()[0] - 0.8).abs() < 1e-12);
        assert!((s.h.as_slice()[0] - 0.8f64.tanh()).abs() < 1e-12);
        assert!((s.h.as_slice()[0] - 0.664).abs() < 1e-3);
    }

    #[test]
    fn step_rejects_bad_shapes() {
        let p = LstmParams::zeros(3, 2);
        let r = lstm_step(&p, &Matrix::column(&[1.0, 2.0]), &LstmState::zeros(2));
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let p = random_lstm(3, 4, 1);
        let inputs = random_inputs(5, 3, 2);
        let tape = lstm_forward(&p, &inputs).unwrap();
        let up = vec![Matrix::zeros(4, 1); 5];
        let (g, dx) = lstm_backward(&p, &tape, &up).unwrap();
        assert!(g.tensors().iter().all(|t| t.as_slice().iter().all(|&v| v == 0.0)));
        assert!(dx.iter().all(|t| t.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_rejects_length_mismatch() {
        let p = random_lstm(3, 4, 1);
        let tape = lstm_forward(&p, &random_inputs(3, 3, 2)).unwrap();
        let r = lstm_backward(&p, &tape, &[Matrix::zeros(4, 1)]);
        assert!(matches!(r, Err(Error::Protocol(_))));
    }

    fn lstm_fd_check(steps: usize, input: usize, hidden: usize, seed: u64) {
        let p = random_lstm(input, hidden, seed);
        let inputs = random_inputs(steps, input, seed + 1);
        let proj = random_inputs(steps, hidden, seed + 2);
        let tape = lstm_forward(&p, &inputs).unwrap();
        let (grads, dx) = lstm_backward(&p, &tape, &proj).unwrap();
        let report = check_gradients(&p, &grads, 1e-5, |q| projected_loss(q, &inputs, &proj));
        assert!(report.passed(1e-4), "{report}");

        // input gradients, same oracle
        for t in 0..steps {
            for k in 0..input {
                let mut plus = inputs.clone();
                let mut minus = inputs.clone();
                plus[t].as_mut_slice()[k] += 1e-5;
                minus[t].as_mut_slice()[k] -= 1e-5;
                let fd = (projected_loss(&p, &plus, &proj) - projected_loss(&p, &minus, &proj)) / 2e-5;
                let a = dx[t].as_slice()[k];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-4, "input grad t={t} k={k}: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn lstm_gradients_single_step() {
        lstm_fd_check(1, 5, 3, 21);
    }

    #[test]
    fn lstm_gradients_four_steps() {
        lstm_fd_check(4, 6, 8, 31);
    }

    #[test]
    fn lstm_gradients_six_steps_wide_input() {
        lstm_fd_check(6, 24, 5, 41);
    }

    #[test]
    fn hidden_state_strictly_bounded() {
        let mut p = random_lstm(3, 4, 3);
        p.scale_all(40.0);
        let inputs = random_inputs(10, 3, 4);
        let tape = lstm_forward(&p, &inputs).unwrap();
        for s in &tape.steps {
            assert!(s.h.iter().all(|v| v.abs() < 1.0));
        }
    }

    fn random_mlp(seed: u64) -> MlpParams {
        let mut rng = RngStream::new(seed);
        let mut p = MlpParams::init(5, 6, 4, &mut rng);
        for v in p.b_hidden.as_mut_slice() {
            *v = rng.uniform(-0.5, 0.5);
        }
        p
    }

    #[test]
    fn no_op_dropout_matches_eval() {
        let p = random_mlp(3);
        let x = Matrix::column(&[0.1, -0.4, 2.0, 0.0, 1.0]);
        let mut rng = RngStream::new(1);
        let (a, _) = mlp_forward(&p, &x, &mut Mode::Train { dropout: 0.0, rng: &mut rng }).unwrap();
        let (b, _) = mlp_forward(&p, &x, &mut Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_output_layer_is_uniform() {
        let mut p = random_mlp(3);
        p.w_out.fill(0.0);
        let (probs, _) = mlp_forward(&p, &Matrix::column(&[3.0, 1.0, -1.0, 0.5, 9.0]), &mut Mode::Eval).unwrap();
        for v in probs.as_slice() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn mlp_cross_entropy_gradients() {
        let p = random_mlp(8);
        let x = [0.3, -1.2, 0.8, 0.05, -0.6];
        let target = 2;
        let loss = |q: &MlpParams| {
            let c = q.forward_raw(&x, &mut Mode::Eval);
            cross_entropy(&c.probs, target).unwrap().0
        };
        let cache = p.forward_raw(&x, &mut Mode::Eval);
        let (_, dlogits) = cross_entropy(&cache.probs, target).unwrap();
        let mut grads = p.zeros_like();
        let mut dx = vec![0.0; 5];
        p.backward(&cache, &dlogits, &mut grads, &mut dx);
        let report = check_gradients(&p, &grads, 1e-5, loss);
        assert!(report.passed(1e-4), "{report}");
    }

    #[test]
    fn mlp_rejects_bad_input() {
        let p = random_mlp(1);
        assert!(matches!(
            mlp_forward(&p, &Matrix::column(&[1.0]), &mut Mode::Eval),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn dropout_identity_at_zero_rate() {
        let x = Matrix::column(&[1.0, 2.0, 3.0]);
        let (y, mask) = apply_dropout(&x, 0.0, &mut RngStream::new(1)).unwrap();
        assert_eq!(y, x);
        assert!(mask.as_slice().iter().all(|&m| m == 1.0));
        assert!(apply_dropout(&x, 1.0, &mut RngStream::new(1)).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let x = Matrix::from_vec(1000, 1000, vec![1.0; 1_000_000]).unwrap();
        let (y, _) = apply_dropout(&x, 0.1, &mut RngStream::new(77)).unwrap();
        let mean = y.as_slice().iter().sum::<f64>() / 1e6;
        assert!((0.99..=1.01).contains(&mean), "{mean}");
    }

    #[test]
    fn dropout_mask_deterministic() {
        let x = Matrix::column(&[1.0; 64]);
        let (_, a) = apply_dropout(&x, 0.1, &mut RngStream::new(5)).unwrap();
        let (_, b) = apply_dropout(&x, 0.1, &mut RngStream::new(5)).unwrap();
        assert_eq!(a, b);
    }
}
