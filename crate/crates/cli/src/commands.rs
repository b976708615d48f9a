use std::fs;
use std::path::{Path, PathBuf};

use protofeedback::data::{generate_dataset, load_scenes, scenes_to_string, Scene, WordVectors};
use protofeedback::eval::{
    confusion_resolution, evaluate, frequent_confusions, predict, ConfusionPair, Heatmap, KMetrics,
};
use protofeedback::gradsuite::{run_suite, SuiteConfig};
use protofeedback::model::{forward_image, Model, ModelConfig, UpdaterKind};
use protofeedback::train::{Checkpoint, Trainer};
use protofeedback::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;
use crate::ConfigArgs;

/// Writes through a sibling temporary file so readers never see a partial file.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable");
    s.push('\n');
    s
}

pub fn gen_data(args: &ConfigArgs) -> Result<u8> {
    let cfg = RunConfig::load(&args.config, &args.overrides)?;
    let mut scenes = generate_dataset(&cfg.generator, cfg.data.train_scenes + cfg.data.test_scenes)?;
    let test = scenes.split_off(cfg.data.train_scenes);
    write_atomic(&cfg.data.train, &scenes_to_string(&scenes))?;
    write_atomic(&cfg.data.test, &scenes_to_string(&test))?;
    println!(
        "wrote {} training scenes to {} and {} test scenes to {}",
        scenes.len(),
        cfg.data.train.display(),
        test.len(),
        cfg.data.test.display()
    );
    Ok(0)
}

/// Fresh model for `config`, with word vectors from the configured file
/// when there is one.
fn initial_model(cfg: &RunConfig, config: ModelConfig) -> Result<Model> {
    let mut model = Model::init(config, cfg.train.seed)?;
    if let Some(path) = &cfg.data.word_vectors {
        let wv = WordVectors::load(path, cfg.model.d_word)?;
        model.predicate_words = wv.matrix_for(&model.config.predicate_names, cfg.train.seed);
        model.category_words = wv.matrix_for(&model.config.category_names, cfg.train.seed);
    }
    Ok(model)
}

fn run_training(cfg: &RunConfig, config: ModelConfig, scenes: &[Scene], out: &Path) -> Result<Checkpoint> {
    let model = initial_model(cfg, config)?;
    let mut trainer = Trainer::new(model, scenes, cfg.train.clone())?;
    trainer.run(|ck| {
        log::info!("checkpoint at iteration {}", ck.iteration);
        write_atomic(out, &ck.to_json())
    })?;
    let ck = trainer.checkpoint();
    write_atomic(out, &ck.to_json())?;
    Ok(ck)
}

pub fn train(args: &ConfigArgs, out: &Path) -> Result<u8> {
    let cfg = RunConfig::load(&args.config, &args.overrides)?;
    let config = cfg.model_config();
    let scenes = load_scenes(&cfg.data.train, config.num_predicates())?;
    let ck = run_training(&cfg, config, &scenes, out)?;
    if let Some(last) = ck.loss_trace.last() {
        println!(
            "trained {} iterations; final loss {:.6} (cls {:.6}, sim {:.6}, div {:.6}, align {:.6})",
            ck.iteration, last.total, last.cls, last.reg_sim, last.reg_div, last.align
        );
    }
    println!("checkpoint written to {}", out.display());
    Ok(0)
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub compare: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn eval(args: EvalArgs) -> Result<u8> {
    let cfg = match &args.config {
        Some(path) => Some(RunConfig::load(path, &args.overrides)?),
        None if !args.overrides.is_empty() => {
            return Err(Error::Config("--set needs --config".into()));
        }
        None => None,
    };
    let data = args
        .data
        .clone()
        .or_else(|| cfg.as_ref().map(|c| c.data.test.clone()))
        .ok_or_else(|| Error::Config("no scene file: pass --data or --config".into()))?;
    let eval_cfg = cfg.as_ref().map(|c| c.eval.clone()).unwrap_or_default();
    let model = Checkpoint::load(&args.checkpoint)?.model()?;
    let reference = match &args.compare {
        Some(path) => Some(Checkpoint::load(path)?.model()?),
        None => None,
    };
    let r = model.config.num_predicates();
    let scenes = load_scenes(&data, r)?;
    let (mut report, preds) = evaluate(&model, &scenes, &eval_cfg.ks)?;
    if let Some(reference) = reference {
        if reference.config.predicate_names != model.config.predicate_names {
            return Err(Error::Incompatible(
                "compared checkpoints use different predicates".into(),
            ));
        }
        let (ref_preds, _) = predict(&reference, &scenes)?;
        let pairs: Vec<ConfusionPair> = match &eval_cfg.confusion_pairs {
            Some(p) => p.iter().map(|&[gt, confused]| ConfusionPair { gt, confused }).collect(),
            None => frequent_confusions(&ref_preds, eval_cfg.confusion_limit),
        };
        report.confusion = confusion_resolution(&ref_preds, &preds, &pairs)?;
    }
    print!("{}", report.table());
    if let Some(out) = &args.out {
        write_atomic(out, &report.to_json()?)?;
    }
    Ok(0)
}

#[derive(Debug, Serialize)]
struct AblationRow {
    variant: String,
    updater: UpdaterKind,
    edge_enabled: bool,
    metrics: Vec<KMetrics>,
    ambiguous_accuracy: Option<f64>,
    drift: f64,
}

fn default_variants() -> Vec<(UpdaterKind, bool)> {
    let mut v: Vec<(UpdaterKind, bool)> = UpdaterKind::ALL.iter().map(|&u| (u, true)).collect();
    v.push((UpdaterKind::Gru, false));
    v.push((UpdaterKind::Identity, false));
    v
}

fn parse_variant(item: &str) -> Result<(UpdaterKind, bool)> {
    match item.trim().split_once(':') {
        None => Ok((item.trim().parse()?, true)),
        Some((u, "edge")) => Ok((u.parse()?, true)),
        Some((u, "no-edge")) => Ok((u.parse()?, false)),
        Some(_) => Err(Error::Config(format!(
            "variant {item:?} must be updater[:edge|:no-edge]"
        ))),
    }
}

fn variant_name(u: UpdaterKind, edge: bool) -> String {
    if edge {
        format!("{u}")
    } else {
        format!("{u}-no-edge")
    }
}

pub fn ablate(args: &ConfigArgs, out_dir: &Path, variants: Option<&[String]>) -> Result<u8> {
    let cfg = RunConfig::load(&args.config, &args.overrides)?;
    let variants = match variants {
        Some(v) => v.iter().map(|s| parse_variant(s)).collect::<Result<Vec<_>>>()?,
        None => default_variants(),
    };
    let r = cfg.model_config().num_predicates();
    let train_set = load_scenes(&cfg.data.train, r)?;
    let test_set = load_scenes(&cfg.data.test, r)?;
    let mut rows = Vec::new();
    for (u, edge) in variants {
        let name = variant_name(u, edge);
        let dir = out_dir.join(&name);
        let ck = run_training(
            &cfg,
            cfg.model_config_for(u, edge),
            &train_set,
            &dir.join("checkpoint.json"),
        )?;
        let (report, _) = evaluate(&ck.model()?, &test_set, &cfg.eval.ks)?;
        write_atomic(&dir.join("report.json"), &report.to_json()?)?;
        rows.push(AblationRow {
            variant: name,
            updater: u,
            edge_enabled: edge,
            metrics: report.metrics,
            ambiguous_accuracy: report.ambiguous_accuracy,
            drift: report.drift,
        });
    }
    write_atomic(&out_dir.join("ablation.json"), &to_json(&rows))?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"));
    println!(
        "{:<20} {:>6} {:>9} {:>9} {:>9} {:>10} {:>9}",
        "variant", "K", "R@K", "mR@K", "F@K", "ambiguous", "drift"
    );
    for row in &rows {
        for m in &row.metrics {
            println!(
                "{:<20} {:>6} {:>9} {:>9} {:>9} {:>10} {:>9.4}",
                row.variant,
                m.k,
                fmt(m.recall),
                fmt(m.mean_recall),
                fmt(m.f),
                fmt(row.ambiguous_accuracy),
                row.drift
            );
        }
    }
    Ok(0)
}

pub fn gradcheck(seed: u64, points: usize, fault: Option<String>, out: Option<&Path>) -> Result<u8> {
    let cfg = SuiteConfig {
        seed,
        points,
        fault,
        ..SuiteConfig::default()
    };
    let report = run_suite(&cfg)?;
    println!("{:<32} {:>10} {:>8} {:>6}", "check", "max rel", "entries", "pass");
    for r in &report.reports {
        println!(
            "{:<32} {:>10.3e} {:>8} {:>6}",
            r.op_name,
            r.max_relative_error,
            r.element_count,
            if r.pass { "ok" } else { "FAIL" }
        );
    }
    if let Some(out) = out {
        write_atomic(out, &to_json(&report))?;
    }
    Ok(if report.all_pass { 0 } else { 3 })
}

pub fn heatmap(checkpoint: &Path, data: &Path, scene_id: Option<&str>, out_dir: &Path) -> Result<u8> {
    let model = Checkpoint::load(checkpoint)?.model()?;
    let scenes = load_scenes(data, model.config.num_predicates())?;
    let scene = match scene_id {
        Some(id) => scenes
            .iter()
            .find(|s| s.scene_id == id)
            .ok_or_else(|| Error::Data(format!("no scene {id:?} in {}", data.display())))?,
        None => scenes
            .iter()
            .find(|s| !s.is_empty())
            .ok_or_else(|| Error::Data(format!("{} has no scene with candidates", data.display())))?,
    };
    let out = forward_image(&model, scene)?;
    let map = Heatmap::new(model.config.predicate_names.clone(), &out.static_protos, &out.adapted)?;
    let (delta, similarity) = map.write(out_dir)?;
    println!(
        "scene {}: wrote {} and {}",
        scene.scene_id,
        delta.display(),
        similarity.display()
    );
    Ok(0)
}
