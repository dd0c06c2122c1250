use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use trilstm::data::{Label, NormalizedRecord, NUM_BIOMARKERS};
use trilstm::metrics::rank_auc;
use trilstm::nn::{lstm_backward, lstm_forward, LstmParams};
use trilstm::{AnyModel, Classifier, LossWeights, Matrix, ModelConfig, ModelKind, RngStream};

fn record(rng: &mut RngStream) -> NormalizedRecord {
    NormalizedRecord {
        patient_id: "P00001".into(),
        label: Label::Glaucoma,
        features: (0..NUM_BIOMARKERS)
            .map(|_| [rng.standard_normal(), rng.standard_normal(), rng.standard_normal()])
            .collect(),
    }
}

fn lstm(c: &mut Criterion) {
    let mut rng = RngStream::new(1);
    let p = LstmParams::init(8, 46, &mut rng);
    let inputs: Vec<Matrix> = (0..NUM_BIOMARKERS)
        .map(|_| Matrix::from_vec(8, 1, (0..8).map(|_| rng.standard_normal()).collect()).unwrap())
        .collect();
    let upstream = vec![Matrix::zeros(46, 1); NUM_BIOMARKERS];
    c.bench_function("lstm forward 17 steps", |b| {
        b.iter(|| lstm_forward(black_box(&p), black_box(&inputs)).unwrap())
    });
    let tape = lstm_forward(&p, &inputs).unwrap();
    c.bench_function("lstm backward 17 steps", |b| {
        b.iter(|| lstm_backward(black_box(&p), black_box(&tape), black_box(&upstream)).unwrap())
    });
}

fn bench_model<C: Classifier>(c: &mut Criterion, name: &str, m: &C) {
    let mut rng = RngStream::new(2);
    let r = record(&mut rng);
    let order = rng.permutation(NUM_BIOMARKERS);
    let w = LossWeights::default();
    c.bench_function(&format!("{name} forward"), |b| {
        b.iter(|| m.positive_prob(black_box(&r), black_box(&order)).unwrap())
    });
    let mut g = m.zeros_like();
    c.bench_function(&format!("{name} gradient"), |b| {
        b.iter(|| m.accumulate_gradient(black_box(&r), &order, &w, None, 1.0, &mut g).unwrap())
    });
}

fn models(c: &mut Criterion) {
    for kind in ModelKind::ALL {
        match ModelConfig::default().init(kind, 3) {
            AnyModel::Rnn(m) => bench_model(c, kind.tag(), &m),
            AnyModel::Lstm(m) => bench_model(c, kind.tag(), &m),
            AnyModel::TriLstm(m) => bench_model(c, kind.tag(), &m),
        }
    }
}

fn auc(c: &mut Criterion) {
    let mut rng = RngStream::new(4);
    let scores: Vec<f64> = (0..500).map(|_| rng.next_f64()).collect();
    let labels: Vec<bool> = (0..500).map(|i| i % 2 == 0).collect();
    c.bench_function("rank auc 500", |b| b.iter(|| rank_auc(black_box(&scores), black_box(&labels)).unwrap()));
}

criterion_group!(benches, lstm, models, auc);
criterion_main!(benches);
