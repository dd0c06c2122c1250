use serde::{Deserialize, Serialize};

use super::schema::{Dataset, Label, NUM_BIOMARKERS};
use crate::error::{Error, Result};
use crate::rng::RngStream;

const STD_FLOOR: f64 = 1e-8;

/// Width of an encoded token: biomarker one-hot (plus a null slot) followed
/// by normalized OD, OS and IE.
pub const TOKEN_DIM: usize = NUM_BIOMARKERS + 1 + 3;

/// Per-biomarker z-score statistics for the `[od, os, ie]` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<[f64; 3]>,
    pub std: Vec<[f64; 3]>,
    /// Columns whose standard deviation was floored.
    pub floored: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedRecord {
    pub patient_id: String,
    pub label: Label,
    /// `[od, os, ie]` per biomarker; N/A IE is 0.
    pub features: Vec<[f64; 3]>,
}

fn column(v: &super::schema::EyeValues, c: usize) -> Option<f64> {
    match c {
        0 => Some(v.od),
        1 => Some(v.os),
        _ => v.ie,
    }
}

/// Population mean/std per column, from the training partition only.
pub fn fit_normalizer(train: &Dataset) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::Config("cannot fit a normalizer on an empty dataset".into()));
    }
    let nb = train.schema.len();
    let mut mean = vec![[0.0; 3]; nb];
    let mut std = vec![[1.0; 3]; nb];
    let mut floored = Vec::new();
    for k in 0..nb {
        for c in 0..3 {
            let xs: Vec<f64> = train
                .records
                .iter()
                .filter_map(|r| column(&r.values[k], c))
                .collect();
            if xs.is_empty() {
                continue;
            }
            let n = xs.len() as f64;
            let m = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            let mut s = var.sqrt();
            if s < STD_FLOOR {
                s = STD_FLOOR;
                floored.push(format!("{}_{}", train.schema.code(k), ["od", "os", "ie"][c]));
            }
            mean[k][c] = m;
            std[k][c] = s;
        }
    }
    Ok(NormStats { mean, std, floored })
}

pub fn apply_normalizer(d: &Dataset, stats: &NormStats) -> Result<Vec<NormalizedRecord>> {
    if stats.mean.len() != d.schema.len() {
        return Err(Error::Shape("normalizer does not match the schema".into()));
    }
    Ok(d.records
        .iter()
        .map(|r| NormalizedRecord {
            patient_id: r.patient_id.clone(),
            label: r.label,
            features: r
                .values
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    let mut f = [0.0; 3];
                    for (c, slot) in f.iter_mut().enumerate() {
                        if let Some(x) = column(v, c) {
                            *slot = (x - stats.mean[k][c]) / stats.std[k][c];
                        }
                    }
                    f
                })
                .collect(),
        })
        .collect())
}

/// Seeded 75:25 split; the training part has `floor(0.75 n)` records. Both
/// partitions keep the input's record order.
pub fn split_75_25(d: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = d.len();
    if n < 4 {
        return Err(Error::Config(format!("need at least 4 records to split, got {n}")));
    }
    let n_train = n * 3 / 4;
    let perm = RngStream::new(seed).derive("split").permutation(n);
    let mut in_train = vec![false; n];
    for &i in &perm[..n_train] {
        in_train[i] = true;
    }
    let pick = |want: bool| Dataset {
        schema: d.schema.clone(),
        records: d
            .records
            .iter()
            .zip(&in_train)
            .filter(|(_, &t)| t == want)
            .map(|(r, _)| r.clone())
            .collect(),
    };
    Ok((pick(true), pick(false)))
}

/// A training record presented in a particular biomarker order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderedView {
    pub record: usize,
    pub order: Vec<usize>,
}

/// `copies` views per record. With `shuffle` off there is a single
/// schema-order view per record regardless of `copies`.
pub fn shuffle_order_augment(
    n_records: usize,
    copies: usize,
    shuffle: bool,
    rng: &mut RngStream,
) -> Result<Vec<OrderedView>> {
    if copies == 0 {
        return Err(Error::Config("shuffle copies must be at least 1".into()));
    }
    let identity: Vec<usize> = (0..NUM_BIOMARKERS).collect();
    if !shuffle {
        return Ok((0..n_records)
            .map(|record| OrderedView {
                record,
                order: identity.clone(),
            })
            .collect());
    }
    let mut views = Vec::with_capacity(n_records * copies);
    for _ in 0..copies {
        for record in 0..n_records {
            views.push(OrderedView {
                record,
                order: rng.permutation(NUM_BIOMARKERS),
            });
        }
    }
    Ok(views)
}

/// One step of an encoder stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Token {
    Biomarker { index: usize, values: [f64; 3] },
    Null,
}

impl Token {
    pub fn biomarker(&self) -> Option<usize> {
        match self {
            Token::Biomarker { index, .. } => Some(*index),
            Token::Null => None,
        }
    }

    pub fn encode_into(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), TOKEN_DIM);
        out.fill(0.0);
        match self {
            Token::Biomarker { index, values } => {
                out[*index] = 1.0;
                out[NUM_BIOMARKERS + 1..].copy_from_slice(values);
            }
            Token::Null => out[NUM_BIOMARKERS] = 1.0,
        }
    }

    pub fn encode(&self) -> Vec<f64> {
        let mut v = vec![0.0; TOKEN_DIM];
        self.encode_into(&mut v);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenStreams {
    pub first: Vec<Token>,
    pub second: Vec<Token>,
}

impl TokenStreams {
    pub fn steps(&self) -> usize {
        self.first.len().max(self.second.len())
    }

    /// Pads both streams with [`Token::Null`] to `len` steps.
    pub fn padded(&self, len: usize) -> Result<TokenStreams> {
        if self.first.len() > len || self.second.len() > len {
            return Err(Error::Protocol(format!(
                "streams of {} and {} steps cannot be padded to {len}",
                self.first.len(),
                self.second.len()
            )));
        }
        let pad = |s: &[Token]| {
            let mut v = s.to_vec();
            v.resize(len, Token::Null);
            v
        };
        Ok(TokenStreams {
            first: pad(&self.first),
            second: pad(&self.second),
        })
    }
}

pub fn validate_permutation(permutation: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if permutation.len() != n {
        return Err(Error::Config(format!(
            "permutation has {} entries, expected {n}",
            permutation.len()
        )));
    }
    for &p in permutation {
        if p >= n || seen[p] {
            return Err(Error::Config(format!("invalid permutation entry {p}")));
        }
        seen[p] = true;
    }
    Ok(())
}

/// The first `ceil(n/2)` biomarkers in presentation order go to the first
/// encoder, the rest to the second. Streams are not padded.
pub fn partition_halves(record: &NormalizedRecord, permutation: &[usize]) -> Result<TokenStreams> {
    let n = record.features.len();
    validate_permutation(permutation, n)?;
    let cut = n.div_ceil(2);
    let tok = |&index: &usize| Token::Biomarker {
        index,
        values: record.features[index],
    };
    Ok(TokenStreams {
        first: permutation[..cut].iter().map(tok).collect(),
        second: permutation[cut..].iter().map(tok).collect(),
    })
}

/// Full-length sequence for the single-stream baselines.
pub fn full_sequence(record: &NormalizedRecord, permutation: &[usize]) -> Result<Vec<Token>> {
    validate_permutation(permutation, record.features.len())?;
    Ok(permutation
        .iter()
        .map(|&index| Token::Biomarker {
            index,
            values: record.features[index],
        })
        .collect())
}
