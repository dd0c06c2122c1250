//! Module invariants as property checks, shared by the `invariants` and
//! `acceptance` test targets.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use trilstm::baselines::SingleLstmParams;
use trilstm::data::{
    apply_normalizer, fit_normalizer, generate_synthetic, split_75_25, BiomarkerSchema, Dataset, GeneratorConfig, Label,
    NormalizedRecord, ParentClass, TokenStreams, NUM_BIOMARKERS, NUM_PARENT_CLASSES,
};
use trilstm::gradcheck::check_gradients;
use trilstm::graph::{graph_from_distributions, EdgeKind, Node};
use trilstm::harness::{evaluate, EvalConfig};
use trilstm::linalg::{matmul, softmax_rows};
use trilstm::metrics::{compute_metrics, rank_auc};
use trilstm::nn::{lstm_backward, lstm_forward, mlp_forward, LstmParams, MlpParams, Mode};
use trilstm::optim::{cross_entropy, radam_step, RAdamConfig, RAdamState};
use trilstm::trilstm::{compute_loss, HeadTargets, STREAM_STEPS};
use trilstm::{Classifier, Decision, LossBreakdown, LossWeights, Matrix, ParamSet, RngStream, TriLstmDims, TriLstmParams};

pub type Check = (&'static str, fn() -> Result<(), String>);

pub const CHECKS: &[Check] = &[
    ("softmax rows normalized", softmax_normalized),
    ("matmul associative", matmul_associative),
    ("rng streams reproducible", rng_reproducible),
    ("lstm and mlp gradients", nn_gradients),
    ("lstm hidden bounded", lstm_bounded),
    ("forward deterministic without dropout", forward_deterministic),
    ("first rectified step", first_rectified),
    ("cross entropy nonnegative", cross_entropy_nonnegative),
    ("radam step deterministic", radam_deterministic),
    ("IE = OD - OS", ie_identity),
    ("generator pure", generator_pure),
    ("split partitions", split_partitions),
    ("normalizer uses training statistics", normalizer_train_only),
    ("argmax invariance", argmax_invariance),
    ("cross-feed causality", cross_feed_causality),
    ("loss composition", loss_composition),
    ("padding neutrality", padding_neutrality),
    ("baseline determinism", baseline_determinism),
    ("metric identities", metric_identities),
    ("evaluate is pure", evaluate_pure),
    ("graph structure", graph_structure),
];

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg.into()))
    }
}

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut RngStream) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| scale * rng.standard_normal()).collect()).unwrap()
}

fn random_record(rng: &mut RngStream) -> NormalizedRecord {
    NormalizedRecord {
        patient_id: "P00000".into(),
        label: if rng.bernoulli(0.5) { Label::Glaucoma } else { Label::Normal },
        features: (0..NUM_BIOMARKERS)
            .map(|_| [rng.standard_normal(), rng.standard_normal(), rng.standard_normal()])
            .collect(),
    }
}

fn small_dataset(seed: u64) -> Dataset {
    generate_synthetic(&GeneratorConfig {
        n_patients: 60,
        seed,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

pub fn softmax_normalized() -> Result<(), String> {
    let s = (1usize..6, 1usize..9, -300.0f64..300.0, any::<u64>());
    run(256, s, |(r, c, scale, seed)| {
        let m = random_matrix(r, c, scale, &mut RngStream::new(seed));
        let p = softmax_rows(&m);
        for i in 0..r {
            let row = p.row_slice(i);
            ensure((row.iter().sum::<f64>() - 1.0).abs() < 1e-9, "row sum")?;
            ensure(row.iter().all(|v| (0.0..=1.0).contains(v)), "range")?;
        }
        Ok(())
    })
}

pub fn matmul_associative() -> Result<(), String> {
    run(256, (1usize..6, 1usize..6, 1usize..6, 1usize..6, any::<u64>()), |(a, b, c, d, seed)| {
        let mut rng = RngStream::new(seed);
        let (x, y, z) = (
            random_matrix(a, b, 1.0, &mut rng),
            random_matrix(b, c, 1.0, &mut rng),
            random_matrix(c, d, 1.0, &mut rng),
        );
        let l = matmul(&matmul(&x, &y).unwrap(), &z).unwrap();
        let r = matmul(&x, &matmul(&y, &z).unwrap()).unwrap();
        let norm = l.frobenius_sq().sqrt().max(1e-12);
        let mut diff = l.clone();
        diff.add_scaled(&r, -1.0).unwrap();
        ensure(diff.frobenius_sq().sqrt() / norm < 1e-9, "associativity")
    })
}

pub fn rng_reproducible() -> Result<(), String> {
    run(16, any::<u64>(), |seed| {
        let (mut a, mut b) = (RngStream::new(seed), RngStream::new(seed));
        for _ in 0..10_000 {
            ensure(a.next_f64().to_bits() == b.next_f64().to_bits(), "draws differ")?;
        }
        Ok(())
    })
}

fn projected(p: &LstmParams, xs: &[Matrix], proj: &[Matrix]) -> f64 {
    let tape = lstm_forward(p, xs).unwrap();
    tape.steps
        .iter()
        .zip(proj)
        .map(|(s, w)| s.h.iter().zip(w.as_slice()).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

pub fn nn_gradients() -> Result<(), String> {
    run(24, (1usize..=24, 1usize..=8, 1usize..=6, any::<u64>()), |(input, hidden, steps, seed)| {
        let mut rng = RngStream::new(seed);
        let p = LstmParams::init(input, hidden, &mut rng);
        let xs: Vec<Matrix> = (0..steps).map(|_| random_matrix(input, 1, 1.0, &mut rng)).collect();
        let proj: Vec<Matrix> = (0..steps).map(|_| random_matrix(hidden, 1, 1.0, &mut rng)).collect();
        let tape = lstm_forward(&p, &xs).unwrap();
        let (g, _) = lstm_backward(&p, &tape, &proj).unwrap();
        let report = check_gradients(&p, &g, 1e-5, |q| projected(q, &xs, &proj));
        ensure(report.passed(1e-4), format!("lstm:\n{report}"))?;

        let m = MlpParams::init(hidden, 5, 3, &mut rng);
        let x: Vec<f64> = (0..hidden).map(|_| rng.standard_normal()).collect();
        let target = (seed % 3) as usize;
        let cache = m.forward_raw(&x, &mut Mode::Eval);
        let (_, dlog) = cross_entropy(&cache.probs, target).unwrap();
        let mut mg = m.zeros_like();
        let mut dx = vec![0.0; hidden];
        m.backward(&cache, &dlog, &mut mg, &mut dx);
        let report = check_gradients(&m, &mg, 1e-5, |q| {
            cross_entropy(&q.forward_raw(&x, &mut Mode::Eval).probs, target).unwrap().0
        });
        ensure(report.passed(1e-4), format!("mlp:\n{report}"))
    })
}

pub fn lstm_bounded() -> Result<(), String> {
    run(128, (1usize..10, 1usize..9, 0.1f64..8.0, any::<u64>()), |(input, hidden, scale, seed)| {
        let mut rng = RngStream::new(seed);
        let mut p = LstmParams::init(input, hidden, &mut rng);
        p.scale_all(scale);
        let xs: Vec<Matrix> = (0..12).map(|_| random_matrix(input, 1, 3.0, &mut rng)).collect();
        let tape = lstm_forward(&p, &xs).unwrap();
        ensure(tape.steps.iter().all(|s| s.h.iter().all(|v| v.abs() < 1.0)), "|h| >= 1")
    })
}

pub fn forward_deterministic() -> Result<(), String> {
    run(32, any::<u64>(), |seed| {
        let mut rng = RngStream::new(seed);
        let m = MlpParams::init(6, 5, 4, &mut rng);
        let x = random_matrix(6, 1, 1.0, &mut rng);
        let (a, _) = mlp_forward(&m, &x, &mut Mode::Eval).unwrap();
        let (b, _) = mlp_forward(&m, &x, &mut Mode::Eval).unwrap();
        ensure(a == b, "mlp")?;
        let p = TriLstmParams::init(TriLstmDims::default(), &mut rng);
        let r = random_record(&mut rng);
        let order = rng.permutation(NUM_BIOMARKERS);
        ensure(p.final_dist(&r, &order).unwrap() == p.final_dist(&r, &order).unwrap(), "tri-lstm")
    })
}

pub fn first_rectified() -> Result<(), String> {
    let cfg = RAdamConfig::default();
    let by_rho = (1..1000).find(|&t| cfg.rho(t) > 4.0);
    let by_rule = (1..1000).find(|&t| cfg.rectification(t).is_some());
    if by_rho == by_rule && by_rule == Some(5) {
        Ok(())
    } else {
        Err(format!("rho rule {by_rho:?}, update rule {by_rule:?}"))
    }
}

pub fn cross_entropy_nonnegative() -> Result<(), String> {
    run(256, (prop::collection::vec(0.0f64..1.0, 2..8), any::<prop::sample::Index>()), |(raw, idx)| {
        let s: f64 = raw.iter().sum::<f64>() + 1e-9;
        let pred: Vec<f64> = raw.iter().map(|v| (v + 1e-9 / raw.len() as f64) / s).collect();
        let t = idx.index(pred.len());
        let (l, _) = cross_entropy(&pred, t).unwrap();
        ensure(l >= 0.0, "negative loss")?;
        let mut one = vec![0.0; pred.len()];
        one[t] = 1.0;
        ensure(cross_entropy(&one, t).unwrap().0 == 0.0, "exact target must cost 0")?;
        ensure(pred[t] == 1.0 || l > 0.0, "positive loss off target")
    })
}

pub fn radam_deterministic() -> Result<(), String> {
    run(64, (any::<u64>(), 1usize..20), |(seed, steps)| {
        let mut rng = RngStream::new(seed);
        let p0 = random_matrix(3, 2, 1.0, &mut rng);
        let grads: Vec<Matrix> = (0..steps).map(|_| random_matrix(3, 2, 1.0, &mut rng)).collect();
        let go = || {
            let mut p = p0.clone();
            let mut st = RAdamState::new(3, 2, RAdamConfig::default());
            for g in &grads {
                radam_step(&mut st, &mut p, g).unwrap();
            }
            p
        };
        ensure(go() == go(), "radam differs")
    })
}

pub fn ie_identity() -> Result<(), String> {
    run(12, any::<u64>(), |seed| {
        let d = small_dataset(seed);
        for r in &d.records {
            for (def, v) in d.schema.biomarkers().iter().zip(&r.values) {
                match v.ie {
                    Some(ie) => ensure((ie - (v.od - v.os)).abs() < 1e-6, format!("{} IE", def.code))?,
                    None => ensure(!def.has_ie, format!("{} lost its IE", def.code))?,
                }
            }
        }
        Ok(())
    })
}

pub fn generator_pure() -> Result<(), String> {
    run(8, any::<u64>(), |seed| ensure(small_dataset(seed) == small_dataset(seed), "generator"))
}

pub fn split_partitions() -> Result<(), String> {
    run(16, (any::<u64>(), any::<u64>()), |(seed, split)| {
        let d = small_dataset(seed);
        let (a, b) = split_75_25(&d, split).unwrap();
        let mut ids: Vec<&str> = a.records.iter().chain(&b.records).map(|r| r.patient_id.as_str()).collect();
        ensure(ids.len() == d.len(), "sizes")?;
        ids.sort_unstable();
        ids.dedup();
        ensure(ids.len() == d.len(), "overlap")
    })
}

pub fn normalizer_train_only() -> Result<(), String> {
    run(8, any::<u64>(), |seed| {
        let d = small_dataset(seed);
        let (train, test) = split_75_25(&d, seed).unwrap();
        let stats = fit_normalizer(&train).unwrap();
        ensure(stats != fit_normalizer(&test).unwrap(), "test statistics coincide")?;
        let normed = apply_normalizer(&train, &stats).unwrap();
        let mean: f64 = normed.iter().map(|r| r.features[0][0]).sum::<f64>() / normed.len() as f64;
        ensure(mean.abs() < 1e-9, "training column not centred")
    })
}

pub fn argmax_invariance() -> Result<(), String> {
    run(48, (any::<u64>(), 1e-3f64..1e3), |(seed, k)| {
        let mut rng = RngStream::new(seed);
        let p = TriLstmParams::init(TriLstmDims::default(), &mut rng);
        let r = random_record(&mut rng);
        let order = rng.permutation(NUM_BIOMARKERS);
        let mut q = p.clone();
        q.final_head.w_out.scale(k);
        q.final_head.b_out.scale(k);
        ensure(
            p.predict(&r, &order).unwrap().decision == q.predict(&r, &order).unwrap().decision,
            "decision changed",
        )
    })
}

fn streams(rng: &mut RngStream) -> (TokenStreams, HeadTargets) {
    let r = random_record(rng);
    let order = rng.permutation(NUM_BIOMARKERS);
    TriLstmParams::prepare(&r, &order, BiomarkerSchema::shared()).unwrap()
}

pub fn cross_feed_causality() -> Result<(), String> {
    run(32, (any::<u64>(), 0usize..8, -3.0f64..3.0), |(seed, j, delta)| {
        let mut rng = RngStream::new(seed);
        let p = TriLstmParams::init(TriLstmDims::default(), &mut rng);
        let (s, _) = streams(&mut rng);
        let (base, _) = p.forward(&s, None).unwrap();
        let bump = |tok: &mut trilstm::data::Token| {
            if let trilstm::data::Token::Biomarker { values, .. } = tok {
                values[0] += delta;
            }
        };
        let mut s2 = s.clone();
        bump(&mut s2.second[j]);
        let (o2, _) = p.forward(&s2, None).unwrap();
        for t in 0..=j {
            ensure(o2.h1_traj[t] == base.h1_traj[t], format!("h1[{t}] saw stream-2 token {j}"))?;
        }
        let mut s1 = s.clone();
        bump(&mut s1.first[j]);
        let (o1, _) = p.forward(&s1, None).unwrap();
        for t in 0..j {
            ensure(o1.h2_traj[t] == base.h2_traj[t], format!("h2[{t}] saw stream-1 token {j}"))?;
        }
        Ok(())
    })
}

pub fn loss_composition() -> Result<(), String> {
    let s = (0.0f64..30.0, 0.0f64..30.0, 0.0f64..30.0, 1e-6f64..=1.0, 1.0f64..10.0);
    run(512, s, |(l1, l2, lf, lambda, alpha)| {
        let w = LossWeights {
            lambda,
            alpha,
            final_weight: 1.0,
        };
        let b = LossBreakdown::compose(l1, l2, lf, w);
        ensure((b.total - (lambda * l1 + alpha * l2 + lf)).abs() <= 1e-12 * b.total.max(1.0), "composition")
    })
}

pub fn padding_neutrality() -> Result<(), String> {
    run(32, (any::<u64>(), 1usize..6), |(seed, extra)| {
        let mut rng = RngStream::new(seed);
        let p = TriLstmParams::init(TriLstmDims::default(), &mut rng);
        let (s, t) = streams(&mut rng);
        let (out, _) = p.forward(&s, None).unwrap();
        let a = compute_loss(&out, &t, 0, LossWeights::default()).unwrap();
        let longer = s.padded(STREAM_STEPS + extra).unwrap();
        let mut t2 = t.clone();
        t2.first.resize(STREAM_STEPS + extra, None);
        t2.second.resize(STREAM_STEPS + extra, None);
        let (out2, _) = p.forward(&longer, None).unwrap();
        let b = compute_loss(&out2, &t2, 0, LossWeights::default()).unwrap();
        ensure((a.loss1 - b.loss1).abs() < 1e-12 && (a.loss2 - b.loss2).abs() < 1e-12, "head losses moved")
    })
}

pub fn baseline_determinism() -> Result<(), String> {
    run(16, any::<u64>(), |seed| {
        let a = SingleLstmParams::init(4, 6, 5, &mut RngStream::new(seed));
        let b = SingleLstmParams::init(4, 6, 5, &mut RngStream::new(seed));
        ensure(a == b, "init")?;
        let r = random_record(&mut RngStream::new(seed ^ 1));
        let order: Vec<usize> = (0..NUM_BIOMARKERS).collect();
        let (mut ga, mut gb) = (a.zeros_like(), b.zeros_like());
        let w = LossWeights::default();
        let mut d1 = RngStream::new(3);
        let mut d2 = RngStream::new(3);
        a.accumulate_gradient(&r, &order, &w, Some((0.1, &mut d1)), 1.0, &mut ga).unwrap();
        b.accumulate_gradient(&r, &order, &w, Some((0.1, &mut d2)), 1.0, &mut gb).unwrap();
        ensure(ga == gb, "gradients")
    })
}

pub fn metric_identities() -> Result<(), String> {
    let s = (prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..200), 0.1f64..5.0);
    run(256, s, |(mut pairs, k)| {
        pairs[0].1 = true;
        pairs[1].1 = false;
        let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        let r = compute_metrics(&scores, &labels).unwrap();
        let total = scores.len() as f64;
        ensure(((r.accuracy * total) - (r.tp + r.tn)).abs() < 1e-9, "accuracy identity")?;
        if r.tp + r.fn_ > 0.0 {
            ensure(r.recall == r.tp / (r.tp + r.fn_), "recall")?;
        }
        if r.tn + r.fp > 0.0 {
            ensure(r.specificity == r.tn / (r.tn + r.fp), "specificity")?;
        }
        let t: Vec<f64> = scores.iter().map(|v| (k * v).exp() - 7.0).collect();
        ensure((rank_auc(&t, &labels).unwrap() - r.auc).abs() < 1e-12, "auc monotone")
    })
}

pub fn evaluate_pure() -> Result<(), String> {
    run(4, any::<u64>(), |seed| {
        let mut rng = RngStream::new(seed);
        let p = TriLstmParams::init(
            TriLstmDims {
                embed_dim: 4,
                hidden_dim: 5,
                head_hidden: 5,
            },
            &mut rng,
        );
        let mut test: Vec<NormalizedRecord> = (0..20).map(|_| random_record(&mut rng)).collect();
        test[0].label = Label::Glaucoma;
        test[1].label = Label::Normal;
        let before = p.clone();
        let a = evaluate(&p, &test, &EvalConfig::default()).unwrap();
        ensure(p == before, "params mutated")?;
        ensure(a == evaluate(&p, &test, &EvalConfig::default()).unwrap(), "evaluate not repeatable")
    })
}

pub fn graph_structure() -> Result<(), String> {
    let schema = BiomarkerSchema::glaucoma();
    let dist = prop::collection::vec(prop::collection::vec(0.0f64..1.0, NUM_PARENT_CLASSES), NUM_BIOMARKERS);
    let sens = prop::collection::vec(-1.0f64..1.0, NUM_BIOMARKERS);
    run(256, (dist, sens, 1e-6f64..1e6), |(d, s, k)| {
        let g = graph_from_distributions(&schema, &d, &s, Decision::Yes).unwrap();
        ensure(g == graph_from_distributions(&schema, &d, &s, Decision::Yes).unwrap(), "not pure")?;
        ensure(g.edges.len() == NUM_BIOMARKERS, "edge count")?;
        for (i, e) in g.edges.iter().enumerate() {
            ensure(e.child == schema.code(i), "child order")?;
            ensure(
                (e.kind == EdgeKind::Misassigned) == (e.parent != schema.ground_truth_parent(i)),
                "kind rule",
            )?;
            if let ParentClass::Biomarker(j) = e.parent {
                ensure(j != i, "self loop")?;
                ensure(!g.edges[j].parent.is_biomarker(), "chain deeper than one biomarker")?;
            }
        }
        ensure(g.nodes.iter().filter(|n| matches!(n, Node::Decision(_))).count() == 1, "decision node")?;
        let scaled: Vec<f64> = s.iter().map(|v| v * k).collect();
        let g2 = graph_from_distributions(&schema, &d, &scaled, Decision::Yes).unwrap();
        ensure(
            g.edges.iter().zip(&g2.edges).all(|(a, b)| a.sign == b.sign && a.kind == b.kind),
            "sign depends on magnitude",
        )
    })
}
