//! Frozen reference values and brute-force checks shared by test targets.
#![allow(dead_code, clippy::excessive_precision)]

use trilstm::RngStream;

/// RAdam on `f(w) = w^2` from `w = 1` with default hyperparameters, frozen
/// from `radam_trajectory.py` (50-digit arithmetic).
pub const RADAM_TRAJECTORY: [f64; 10] = [
    0.998,
    0.99600210526315789474,
    0.99400638415226257526,
    0.99201290449021598923,
    0.99199560026530177258,
    0.99196979254517301323,
    0.99193707284650622392,
    0.99189835893958142017,
    0.99185428325783482921,
    0.99180531883952573224,
];

pub const FIRST_RECTIFIED: u64 = 5;

pub fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if si > sj {
                    num += 1.0;
                } else if si == sj {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

pub fn random_set(rng: &mut RngStream, n: usize, levels: Option<u32>) -> (Vec<f64>, Vec<bool>) {
    let mut labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = (0..n)
        .map(|_| match levels {
            Some(k) => (rng.next_f64() * k as f64).floor() / k as f64,
            None => rng.next_f64(),
        })
        .collect();
    (scores, labels)
}

/// 1000 score sets of random size; a third draw from a handful of levels to
/// force ties. Returns the worst absolute deviation from the pairwise count.
pub fn auc_sweep(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed);
    let mut worst: f64 = 0.0;
    for set in 0..1000 {
        let n = 2 + (rng.next_f64() * 120.0) as usize;
        let levels = (set % 3 == 0).then_some(1 + (rng.next_f64() * 6.0) as u32);
        let (s, l) = random_set(&mut rng, n, levels);
        let a = trilstm::metrics::rank_auc(&s, &l).unwrap();
        worst = worst.max((a - brute_force_auc(&s, &l)).abs());
    }
    worst
}

/// Replays the quadratic and returns the worst deviation from the frozen trajectory.
pub fn radam_deviation() -> f64 {
    use trilstm::optim::{radam_step, RAdamConfig, RAdamState};
    use trilstm::Matrix;
    let mut w = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
    let mut state = RAdamState::new(1, 1, RAdamConfig::default());
    let mut worst: f64 = 0.0;
    for &want in &RADAM_TRAJECTORY {
        let g = Matrix::from_vec(1, 1, vec![2.0 * w.get(0, 0)]).unwrap();
        radam_step(&mut state, &mut w, &g).unwrap();
        worst = worst.max((w.get(0, 0) - want).abs());
    }
    worst
}

pub fn first_rectified() -> u64 {
    let cfg = trilstm::optim::RAdamConfig::default();
    (1..100).find(|&t| cfg.rectification(t).is_some()).unwrap()
}
