//! Shared classifier interface, loss bookkeeping and decision labels.

use serde::{Deserialize, Serialize};

use crate::data::{NormalizedRecord, NUM_PARENT_CLASSES};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::rng::RngStream;

/// Index of "Yes" (glaucoma) in every final distribution; "No" is 1.
pub const YES: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Yes,
    No,
}

impl Decision {
    /// Argmax over `[yes, no]`; an exact tie goes to `No`.
    pub fn from_dist(dist: &[f64]) -> Self {
        if dist[YES] > dist[1 - YES] {
            Decision::Yes
        } else {
            Decision::No
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Yes => "yes",
            Decision::No => "no",
        }
    }
}

/// Final-head class index for a record label.
pub fn label_target(record: &NormalizedRecord) -> usize {
    if record.label.is_positive() {
        YES
    } else {
        1 - YES
    }
}

/// Coefficients of the combined objective
/// `lambda * loss1 + alpha * loss2 + final_weight * loss_final`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub alpha: f64,
    pub final_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            alpha: 5.0,
            final_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss1: f64,
    pub loss2: f64,
    pub loss_final: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub final_weight: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(loss1: f64, loss2: f64, loss_final: f64, w: LossWeights) -> Self {
        Self {
            loss1,
            loss2,
            loss_final,
            lambda: w.lambda,
            alpha: w.alpha,
            final_weight: w.final_weight,
            total: w.lambda * loss1 + w.alpha * loss2 + w.final_weight * loss_final,
        }
    }
}

/// Gradient-trained binary classifier over a biomarker presentation order.
pub trait Classifier: ParamSet + Send + Sync {
    /// Forward and backward for one record; gradients of the loss (scaled by
    /// `scale`) are added into `grads`.
    fn accumulate_gradient(
        &self,
        record: &NormalizedRecord,
        order: &[usize],
        weights: &LossWeights,
        dropout: Option<(f64, &mut RngStream)>,
        scale: f64,
        grads: &mut Self,
    ) -> Result<LossBreakdown>;

    /// Final distribution `[yes, no]` with dropout disabled.
    fn final_dist(&self, record: &NormalizedRecord, order: &[usize]) -> Result<[f64; 2]>;

    fn positive_prob(&self, record: &NormalizedRecord, order: &[usize]) -> Result<f64> {
        Ok(self.final_dist(record, order)?[YES])
    }

    /// Loss with dropout disabled.
    fn loss(&self, record: &NormalizedRecord, order: &[usize], weights: &LossWeights) -> Result<LossBreakdown>;
}

pub(crate) fn check_parent_target(t: usize) -> Result<usize> {
    if t >= NUM_PARENT_CLASSES {
        return Err(Error::Bounds {
            index: t,
            dim: NUM_PARENT_CLASSES,
        });
    }
    Ok(t)
}
