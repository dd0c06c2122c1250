//! Class-conditional Gaussian generator for synthetic biomarker records.
//!
//! Normal-class means follow the right-eye column of a published sample
//! patient. Glaucoma shifts thin the RNFL and GCC, enlarge cup/disc ratios,
//! cup volume and loss volumes, shrink the rim, and raise IOP
//! (15 mmHg normal vs 24 mmHg glaucoma, sd 3). Disc area is not shifted.
//! The two superior-minus-inferior measures are derived per eye, not drawn.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::schema::{BiomarkerSchema, Dataset, EyeValues, Label, PatientRecord};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub glaucoma_fraction: f64,
    pub noise_scale: f64,
    pub seed: u64,
    pub separability: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_patients: 2000,
            glaucoma_fraction: 0.5,
            noise_scale: 1.0,
            seed: 7,
            separability: 1.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients < 4 {
            return Err(Error::Config("n_patients must be at least 4".into()));
        }
        if !(self.glaucoma_fraction > 0.0 && self.glaucoma_fraction < 1.0) {
            return Err(Error::Config("glaucoma_fraction must lie in (0, 1)".into()));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::Config("noise_scale must be finite and >= 0".into()));
        }
        if !(self.separability >= 0.0) || !self.separability.is_finite() {
            return Err(Error::Config("separability must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Spec {
    Drawn {
        normal_mean: f64,
        sd: f64,
        glaucoma_shift: f64,
        floor: f64,
        ceil: f64,
        decimals: i32,
    },
    /// `values[sup] - values[inf]` for the same eye.
    Difference { sup: usize, inf: usize },
}

const fn drawn(normal_mean: f64, sd: f64, glaucoma_shift: f64, floor: f64, ceil: f64, decimals: i32) -> Spec {
    Spec::Drawn {
        normal_mean,
        sd,
        glaucoma_shift,
        floor,
        ceil,
        decimals,
    }
}

/// Indexed like [`BiomarkerSchema::glaucoma`].
const SPECS: [Spec; 17] = [
    drawn(97.0, 10.0, -9.0, 1.0, f64::INFINITY, 0),  // A-R
    drawn(94.0, 12.0, -10.0, 1.0, f64::INFINITY, 0),  // S-R
    drawn(99.0, 12.0, -11.0, 1.0, f64::INFINITY, 0),  // I-R
    Spec::Difference { sup: 1, inf: 2 },              // I-ER
    drawn(0.28, 0.12, 0.11, 0.01, 0.99, 2),           // A-O
    drawn(0.46, 0.12, 0.11, 0.01, 0.99, 2),           // V-O
    drawn(0.62, 0.12, 0.09, 0.01, 0.99, 2),           // H-O
    drawn(1.44, 0.25, -0.2, 0.05, f64::INFINITY, 2), // RA
    drawn(2.01, 0.35, 0.0, 0.5, f64::INFINITY, 2),    // DA
    drawn(0.043, 0.08, 0.09, 0.001, f64::INFINITY, 3), // CVO
    drawn(85.0, 8.0, -6.0, 1.0, f64::INFINITY, 0),   // A-G
    drawn(81.0, 9.0, -6.5, 1.0, f64::INFINITY, 0),   // S-G
    drawn(88.0, 9.0, -7.0, 1.0, f64::INFINITY, 0),   // I-F
    Spec::Difference { sup: 11, inf: 12 },            // I-EG
    drawn(0.87, 0.8, 1.1, 0.0, f64::INFINITY, 2),     // FLV
    drawn(10.76, 3.0, 3.6, 0.0, f64::INFINITY, 2),    // GLV
    drawn(15.0, 3.0, 9.0, 5.0, f64::INFINITY, 0),     // IOP
];

fn round_to(x: f64, decimals: i32) -> f64 {
    let k = 10f64.powi(decimals);
    (x * k).round() / k
}

fn generate_record(schema: &BiomarkerSchema, cfg: &GeneratorConfig, index: usize, root: &RngStream) -> PatientRecord {
    let mut rng = root.derive_indexed("record", index as u64);
    let label = if rng.bernoulli(cfg.glaucoma_fraction) {
        Label::Glaucoma
    } else {
        Label::Normal
    };
    let y = if label.is_positive() { 1.0 } else { 0.0 };

    // Shared patient-level deviation plus independent per-eye noise,
    // weighted so each eye keeps marginal sd.
    let mut od = [0.0; 17];
    let mut os = [0.0; 17];
    for (k, spec) in SPECS.iter().enumerate() {
        if let Spec::Drawn {
            normal_mean,
            sd,
            glaucoma_shift,
            floor,
            ceil,
            decimals,
        } = *spec
        {
            let mean = normal_mean + glaucoma_shift * cfg.separability * y;
            let patient = rng.standard_normal();
            for eye in [&mut od, &mut os] {
                let z = 0.8 * patient + 0.6 * rng.standard_normal();
                let v = (mean + cfg.noise_scale * sd * z).clamp(floor, ceil);
                eye[k] = round_to(v, decimals);
            }
        }
    }
    for (k, spec) in SPECS.iter().enumerate() {
        if let Spec::Difference { sup, inf } = *spec {
            od[k] = od[sup] - od[inf];
            os[k] = os[sup] - os[inf];
        }
    }
    let values = schema
        .biomarkers()
        .iter()
        .enumerate()
        .map(|(k, def)| EyeValues::new(od[k], os[k], def.has_ie))
        .collect();
    PatientRecord {
        patient_id: format!("P{:05}", index + 1),
        label,
        values,
    }
}

/// Pure function of `cfg`; records are generated from per-record substreams.
pub fn generate_synthetic(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let schema = BiomarkerSchema::glaucoma();
    let root = RngStream::new(cfg.seed).derive("generator");
    let records = (0..cfg.n_patients)
        .into_par_iter()
        .map(|i| generate_record(&schema, cfg, i, &root))
        .collect();
    Ok(Dataset { schema, records })
}
