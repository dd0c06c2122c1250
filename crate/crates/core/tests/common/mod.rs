#![allow(dead_code)]

use trilstm::data::{Label, NormalizedRecord, NUM_BIOMARKERS};
use trilstm::RngStream;

pub fn random_record(rng: &mut RngStream, label: Label) -> NormalizedRecord {
    NormalizedRecord {
        patient_id: "P00000".into(),
        label,
        features: (0..NUM_BIOMARKERS)
            .map(|_| [rng.standard_normal(), rng.standard_normal(), rng.standard_normal()])
            .collect(),
    }
}

pub fn identity() -> Vec<usize> {
    (0..NUM_BIOMARKERS).collect()
}
