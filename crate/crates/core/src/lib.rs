//! Cross-fed triple-LSTM miner for latent relationships among glaucoma
//! biomarkers.
//!
//! Two encoder LSTMs read disjoint halves of a patient's biomarkers while
//! exchanging hidden states, per-step MLP heads predict each biomarker's
//! parent in the clinical taxonomy, and a fusion LSTM produces the Yes/No
//! decision. The crate also carries the single-stream RNN/LSTM baselines,
//! RAdam training, the evaluation metrics, and extraction of the
//! subordination graph from a trained model.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod trilstm;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use harness::{AnyModel, EvalConfig, EvalOrder, ModelConfig, ModelKind, TrainConfig};
pub use linalg::Matrix;
pub use metrics::MetricsReport;
pub use model::{Classifier, Decision, LossBreakdown, LossWeights};
pub use params::ParamSet;
pub use rng::RngStream;
pub use trilstm::{TriLstmDims, TriLstmParams};
