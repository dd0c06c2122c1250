use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use trilstm::baselines::{RnnParams, SingleLstmParams};
use trilstm::data::{
    apply_normalizer, generate_synthetic, load_csv, save_csv, split_75_25, BiomarkerSchema, Dataset, Label,
    NormalizedRecord, NUM_BIOMARKERS,
};
use trilstm::gradcheck::{check_gradients, GradCheckReport};
use trilstm::graph::{export_dot, export_json, extract_graph, score_graph, InfluenceEstimate};
use trilstm::harness::{benchmark_grid, prepare_split, AnyModel, BenchConfig};
use trilstm::{Checkpoint, Classifier, Decision, Error, LossWeights, ModelKind, RngStream, TriLstmParams};

use crate::config::{write_file, RunConfig};

fn with_pool<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> anyhow::Result<T> + Send) -> anyhow::Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cfg.jobs {
        builder = builder.num_threads(j);
    }
    builder.build().context("starting worker pool")?.install(f)
}

fn prepare_out(cfg: &RunConfig) -> anyhow::Result<&Path> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    cfg.write_resolved(&cfg.out)?;
    Ok(&cfg.out)
}

fn dataset(cfg: &RunConfig) -> anyhow::Result<Dataset> {
    Ok(match &cfg.data {
        Some(path) => load_csv(path)?,
        None => generate_synthetic(&cfg.generator)?,
    })
}

fn json<T: Serialize + ?Sized>(v: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

pub fn gen_data(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let d = with_pool(cfg, || Ok(generate_synthetic(&cfg.generator)?))?;
    let path = out.join("dataset.csv");
    save_csv(&d, &path)?;
    println!("wrote {} patients ({} glaucoma) to {}", d.len(), d.positives(), path.display());
    Ok(())
}

pub fn train(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let d = dataset(cfg)?;
    let (model, trace, stats) = with_pool(cfg, || {
        let split = prepare_split(&d, cfg.train.seed)?;
        let model = cfg.model.init(cfg.model_kind, cfg.train.seed);
        let (model, trace) = model.train(&split.train, &cfg.train)?;
        Ok((model, trace, split.stats))
    })?;
    let ckpt = Checkpoint::new(model, stats, serde_json::to_value(cfg)?, &BiomarkerSchema::glaucoma());
    ckpt.save(&out.join("checkpoint.json"))?;
    write_file(&out.join("loss_trace.json"), &json(&trace)?)?;
    if let Some(last) = trace.last() {
        println!(
            "{} trained {} epochs, final loss {:.6}; checkpoint in {}",
            cfg.model_kind,
            trace.len(),
            last.loss,
            out.display()
        );
    }
    Ok(())
}

struct Loaded {
    ckpt: Checkpoint,
    stored: RunConfig,
    test: Vec<NormalizedRecord>,
}

fn load_checkpoint(cfg: &RunConfig) -> anyhow::Result<Loaded> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("--checkpoint is required".into()))?;
    let schema = BiomarkerSchema::glaucoma();
    let ckpt = Checkpoint::load(path, &schema)?;
    let stored: RunConfig = serde_json::from_value(ckpt.config.clone())
        .map_err(|e| Error::Checkpoint(format!("stored config: {e}")))?;
    let mut source = stored.clone();
    if cfg.data.is_some() {
        source.data = cfg.data.clone();
    }
    let d = dataset(&source)?;
    let (_, test) = split_75_25(&d, stored.train.seed)?;
    let test = apply_normalizer(&test, &ckpt.normalizer)?;
    Ok(Loaded { ckpt, stored, test })
}

pub fn eval(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let l = load_checkpoint(cfg)?;
    let report = with_pool(cfg, || Ok(l.ckpt.model.evaluate(&l.test, &cfg.train.eval_config())?))?.with_run(
        l.ckpt.model_kind.display_name(),
        l.stored.train.shuffle_order,
        l.stored.train.seed,
    );
    write_file(&out.join("metrics.json"), &json(&report)?)?;
    println!(
        "AUC {:.4}  recall {:.4}  specificity {:.4}  accuracy {:.4}",
        report.auc, report.recall, report.specificity, report.accuracy
    );
    Ok(())
}

pub fn bench(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let d = dataset(cfg)?;
    let bench = BenchConfig {
        train: cfg.train,
        model: cfg.model,
        seeds: cfg.seeds(),
        kinds: ModelKind::ALL.to_vec(),
    };
    let table = with_pool(cfg, || Ok(benchmark_grid(&d, &bench)?))?;
    let text = table.to_text();
    write_file(&out.join("bench.txt"), &text)?;
    write_file(&out.join("bench.json"), &json(&table)?)?;
    print!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct GraphSummary<'a> {
    condition: Decision,
    subordination_accuracy: f64,
    influences: &'a [InfluenceEstimate],
}

pub fn graph(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let l = load_checkpoint(cfg)?;
    let AnyModel::TriLstm(params) = &l.ckpt.model else {
        return Err(Error::Config(format!(
            "graph extraction needs a tri-lstm checkpoint, got {}",
            l.ckpt.model_kind.tag()
        ))
        .into());
    };
    let schema = BiomarkerSchema::glaucoma();
    let ex = with_pool(cfg, || Ok(extract_graph(params, &l.test, &schema, cfg.train.seed)?))?;
    let mut summary = Vec::new();
    for (g, (_, infl)) in ex.graphs.iter().zip(&ex.influences) {
        let stem = format!(
            "graph_{}_seed{}_{}",
            l.ckpt.model_kind.tag(),
            l.stored.train.seed,
            g.condition.as_str()
        );
        write_file(&out.join(format!("{stem}.dot")), &export_dot(g, &schema))?;
        write_file(&out.join(format!("{stem}.json")), &(export_json(g)? + "\n"))?;
        let score = score_graph(g, &schema);
        println!("{stem}: subordination accuracy {score:.3}");
        summary.push(GraphSummary {
            condition: g.condition,
            subordination_accuracy: score,
            influences: infl,
        });
    }
    for c in &ex.omitted {
        eprintln!("notice: no test records predicted {}, graph omitted", c.as_str());
    }
    write_file(&out.join("graph_summary.json"), &json(&summary)?)?;
    Ok(())
}

fn check_model<C: Classifier>(p: &C, record: &NormalizedRecord, order: &[usize], eps: f64) -> GradCheckReport {
    let w = LossWeights::default();
    let mut g = p.zeros_like();
    p.accumulate_gradient(record, order, &w, None, 1.0, &mut g)
        .expect("valid record");
    check_gradients(p, &g, eps, |q| q.loss(record, order, &w).expect("valid record").total)
}

pub fn gradcheck(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = prepare_out(cfg)?;
    let gc = cfg.gradcheck;
    let mut rng = RngStream::new(gc.seed).derive("gradcheck");
    let record = NormalizedRecord {
        patient_id: "P00000".into(),
        label: Label::Glaucoma,
        features: (0..NUM_BIOMARKERS)
            .map(|_| [rng.standard_normal(), rng.standard_normal(), rng.standard_normal()])
            .collect(),
    };
    let order = rng.permutation(NUM_BIOMARKERS);
    let (e, h, m) = (gc.dims.embed_dim, gc.baseline_hidden, gc.dims.head_hidden);
    let reports = [
        (ModelKind::TriLstm, check_model(&TriLstmParams::init(gc.dims, &mut rng), &record, &order, gc.eps)),
        (ModelKind::Lstm, check_model(&SingleLstmParams::init(e, h, m, &mut rng), &record, &order, gc.eps)),
        (ModelKind::Rnn, check_model(&RnnParams::init(h, m, &mut rng), &record, &order, gc.eps)),
    ];
    let mut text = String::new();
    let mut worst: f64 = 0.0;
    for (kind, r) in &reports {
        let verdict = if r.passed(gc.tolerance) { "PASS" } else { "FAIL" };
        text.push_str(&format!("{kind}: {verdict}\n{r}\n"));
        worst = worst.max(r.max_rel_err());
    }
    let passed = worst <= gc.tolerance;
    let verdict = if passed {
        format!("PASS, max rel err {worst:.3e} <= {:e}", gc.tolerance)
    } else {
        format!("FAIL, max rel err {worst:.3e} > {:e}", gc.tolerance)
    };
    text.push_str(&verdict);
    text.push('\n');
    write_file(&out.join("gradcheck.txt"), &text)?;
    print!("{text}");
    if passed {
        Ok(())
    } else {
        Err(Error::Numeric(verdict).into())
    }
}
