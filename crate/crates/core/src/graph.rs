//! Decision graphs read off the relationship heads of a trained TRI-LSTM.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BiomarkerSchema, Category, NormalizedRecord, ParentClass, NUM_BIOMARKERS, NUM_PARENT_CLASSES};
use crate::error::{Error, Result};
use crate::model::{Classifier, Decision};
use crate::rng::RngStream;
use crate::trilstm::TriLstmParams;

/// Step on the normalized OD value for the sensitivity estimate.
pub const SENSITIVITY_STEP: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "id")]
pub enum Node {
    Decision(Decision),
    Category(Category),
    Root,
    Biomarker(String),
}

impl Node {
    pub fn id(&self) -> String {
        match self {
            Node::Decision(Decision::Yes) => "Yes".into(),
            Node::Decision(Decision::No) => "No".into(),
            Node::Category(c) => c.as_str().into(),
            Node::Root => "ROOT".into(),
            Node::Biomarker(code) => code.clone(),
        }
    }

    fn from_parent(p: ParentClass, schema: &BiomarkerSchema) -> Self {
        match p {
            ParentClass::Biomarker(i) => Node::Biomarker(schema.code(i).to_string()),
            ParentClass::Category(Category::Iop) | ParentClass::Root => Node::Root,
            ParentClass::Category(c) => Node::Category(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeKind {
    CorrectPositive,
    CorrectNegative,
    Misassigned,
}

impl EdgeKind {
    pub fn color(self) -> &'static str {
        match self {
            EdgeKind::CorrectPositive => "black",
            EdgeKind::CorrectNegative => "red",
            EdgeKind::Misassigned => "blue",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

impl Sign {
    /// Only the sign bit is read; zero counts as positive.
    pub fn of(x: f64) -> Self {
        if x < 0.0 {
            Sign::Negative
        } else {
            Sign::Positive
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub child: String,
    pub parent: ParentClass,
    pub kind: EdgeKind,
    pub strength: f64,
    pub sign: Sign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceEstimate {
    pub code: String,
    /// Mean derivative of the positive-class probability with respect to
    /// the normalized OD value.
    pub sensitivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionGraph {
    pub condition: Decision,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

/// Fraction of `parents` equal to the schema's ground truth.
pub fn subordination_accuracy(parents: &[ParentClass], schema: &BiomarkerSchema) -> f64 {
    if parents.is_empty() {
        return 0.0;
    }
    let hits = parents
        .iter()
        .enumerate()
        .filter(|&(i, &p)| p == schema.ground_truth_parent(i))
        .count();
    hits as f64 / parents.len() as f64
}

/// Subordination accuracy over the graph's biomarker edges.
pub fn score_graph(g: &DecisionGraph, schema: &BiomarkerSchema) -> f64 {
    if g.edges.is_empty() {
        return 0.0;
    }
    let hits = g
        .edges
        .iter()
        .filter(|e| schema.index_of(&e.child).is_some_and(|i| schema.ground_truth_parent(i) == e.parent))
        .count();
    hits as f64 / g.edges.len() as f64
}

fn argmax_excluding(dist: &[f64], skip: impl Fn(usize) -> bool) -> usize {
    let mut best = usize::MAX;
    for (k, &p) in dist.iter().enumerate() {
        if !skip(k) && (best == usize::MAX || p > dist[best]) {
            best = k;
        }
    }
    best
}

/// Parent per biomarker from mean head distributions. Ties go to the
/// lowest class index and a biomarker never parents itself. A biomarker
/// may only hang off another biomarker that itself attaches to a category
/// or the root; otherwise it falls back to its best non-biomarker class.
pub fn assign_parents(dists: &[Vec<f64>]) -> Result<Vec<(ParentClass, f64)>> {
    for d in dists {
        if d.len() != NUM_PARENT_CLASSES {
            return Err(Error::Shape(format!(
                "parent distribution has {} entries, expected {NUM_PARENT_CLASSES}",
                d.len()
            )));
        }
    }
    let own: Vec<usize> = dists
        .iter()
        .enumerate()
        .map(|(i, d)| argmax_excluding(d, |k| k == i))
        .collect();
    let anchored = |j: usize| j < dists.len() && own[j] >= NUM_BIOMARKERS;
    own.iter()
        .enumerate()
        .map(|(i, &k)| {
            let k = if k < NUM_BIOMARKERS && !anchored(k) {
                argmax_excluding(&dists[i], |c| c < NUM_BIOMARKERS)
            } else {
                k
            };
            Ok((ParentClass::from_index(k)?, dists[i][k]))
        })
        .collect()
}

/// Builds a graph from per-biomarker mean parent distributions and
/// sensitivities, both indexed like the schema.
pub fn graph_from_distributions(
    schema: &BiomarkerSchema,
    dists: &[Vec<f64>],
    sensitivities: &[f64],
    condition: Decision,
) -> Result<DecisionGraph> {
    if dists.len() != sensitivities.len() || dists.len() > schema.len() {
        return Err(Error::Shape("distributions and sensitivities must align with the schema".into()));
    }
    let parents = assign_parents(dists)?;
    let edges = parents
        .iter()
        .zip(sensitivities)
        .enumerate()
        .map(|(i, (&(parent, strength), &s))| {
            let sign = Sign::of(s);
            let kind = if parent != schema.ground_truth_parent(i) {
                EdgeKind::Misassigned
            } else if sign == Sign::Positive {
                EdgeKind::CorrectPositive
            } else {
                EdgeKind::CorrectNegative
            };
            Edge {
                child: schema.code(i).to_string(),
                parent,
                kind,
                strength,
                sign,
            }
        })
        .collect::<Vec<_>>();
    let mut nodes = vec![Node::Decision(condition)];
    for e in &edges {
        nodes.push(Node::Biomarker(e.child.clone()));
        nodes.push(Node::from_parent(e.parent, schema));
    }
    nodes.sort_by_key(Node::id);
    nodes.dedup();
    Ok(DecisionGraph {
        condition,
        nodes,
        edges,
    })
}

/// Mean finite-difference sensitivity of the positive-class probability
/// to each biomarker's normalized OD value.
pub fn influence_estimates<C: Classifier>(
    model: &C,
    records: &[NormalizedRecord],
    orders: &[Vec<usize>],
    schema: &BiomarkerSchema,
) -> Result<Vec<InfluenceEstimate>> {
    if records.is_empty() || records.len() != orders.len() {
        return Err(Error::Config("influence needs a nonempty record set with one order each".into()));
    }
    (0..schema.len())
        .map(|b| {
            let total = records
                .par_iter()
                .zip(orders.par_iter())
                .map(|(r, o)| {
                    let mut r = r.clone();
                    let base = r.features[b][0];
                    r.features[b][0] = base + SENSITIVITY_STEP;
                    let up = model.positive_prob(&r, o)?;
                    r.features[b][0] = base - SENSITIVITY_STEP;
                    let down = model.positive_prob(&r, o)?;
                    Ok((up - down) / (2.0 * SENSITIVITY_STEP))
                })
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .sum::<f64>();
            Ok(InfluenceEstimate {
                code: schema.code(b).to_string(),
                sensitivity: total / records.len() as f64,
            })
        })
        .collect()
}

/// Graphs extracted from a trained model, one per predicted class.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub graphs: Vec<DecisionGraph>,
    pub influences: Vec<(Decision, Vec<InfluenceEstimate>)>,
    /// Conditions with no predicted records, for which no graph exists.
    pub omitted: Vec<Decision>,
}

impl Extraction {
    pub fn graph(&self, condition: Decision) -> Option<&DecisionGraph> {
        self.graphs.iter().find(|g| g.condition == condition)
    }
}

/// Splits `test` by predicted class and builds one graph per class from the
/// mean head distributions and OD sensitivities of that subset. Every
/// record is read in a seeded random presentation order.
pub fn extract_graph(
    params: &TriLstmParams,
    test: &[NormalizedRecord],
    schema: &BiomarkerSchema,
    seed: u64,
) -> Result<Extraction> {
    if test.is_empty() {
        return Err(Error::Config("graph extraction needs test records".into()));
    }
    let mut rng = RngStream::new(seed).derive("graph-orders");
    let orders: Vec<Vec<usize>> = test.iter().map(|_| rng.permutation(schema.len())).collect();
    let preds = test
        .par_iter()
        .zip(orders.par_iter())
        .map(|(r, o)| params.predict(r, o))
        .collect::<Result<Vec<_>>>()?;

    let mut out = Extraction {
        graphs: Vec::new(),
        influences: Vec::new(),
        omitted: Vec::new(),
    };
    for condition in [Decision::Yes, Decision::No] {
        let idx: Vec<usize> = (0..test.len()).filter(|&i| preds[i].decision == condition).collect();
        if idx.is_empty() {
            out.omitted.push(condition);
            continue;
        }
        let mut mean = vec![vec![0.0; NUM_PARENT_CLASSES]; schema.len()];
        for &i in &idx {
            for (acc, d) in mean.iter_mut().zip(&preds[i].parent_dists) {
                for (a, p) in acc.iter_mut().zip(d) {
                    *a += p;
                }
            }
        }
        let k = idx.len() as f64;
        mean.iter_mut().flatten().for_each(|v| *v /= k);
        let records: Vec<NormalizedRecord> = idx.iter().map(|&i| test[i].clone()).collect();
        let subset_orders: Vec<Vec<usize>> = idx.iter().map(|&i| orders[i].clone()).collect();
        let infl = influence_estimates(params, &records, &subset_orders, schema)?;
        let sens: Vec<f64> = infl.iter().map(|e| e.sensitivity).collect();
        out.graphs.push(graph_from_distributions(schema, &mean, &sens, condition)?);
        out.influences.push((condition, infl));
    }
    Ok(out)
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Graphviz text. Subordination edges are colored by kind and labelled with
/// their strength; dashed gray edges tie categories and the root to the
/// decision node.
pub fn export_dot(g: &DecisionGraph, schema: &BiomarkerSchema) -> String {
    let decision = Node::Decision(g.condition).id();
    let mut s = String::new();
    let _ = writeln!(s, "digraph decision_{} {{", g.condition.as_str());
    s.push_str("  rankdir=BT;\n");
    for n in &g.nodes {
        let shape = match n {
            Node::Decision(_) => "doublecircle",
            Node::Category(_) | Node::Root => "box",
            Node::Biomarker(_) => "ellipse",
        };
        let _ = writeln!(s, "  {} [shape={shape}];", quote(&n.id()));
    }
    let mut edges: Vec<&Edge> = g.edges.iter().collect();
    edges.sort_by(|a, b| a.child.cmp(&b.child));
    for e in edges {
        let parent = Node::from_parent(e.parent, schema).id();
        let _ = writeln!(
            s,
            "  {} -> {} [color={}, label=\"{:.2}\"];",
            quote(&e.child),
            quote(&parent),
            e.kind.color(),
            e.strength
        );
    }
    for n in &g.nodes {
        if matches!(n, Node::Category(_) | Node::Root) {
            let _ = writeln!(s, "  {} -> {} [style=dashed, color=gray];", quote(&n.id()), quote(&decision));
        }
    }
    s.push_str("}\n");
    s
}

pub fn export_json(g: &DecisionGraph) -> Result<String> {
    Ok(serde_json::to_string_pretty(g)?)
}

pub fn graph_from_json(text: &str) -> Result<DecisionGraph> {
    Ok(serde_json::from_str(text)?)
}
