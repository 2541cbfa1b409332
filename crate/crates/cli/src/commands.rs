use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context as _, Result};
use log::info;
use serde::Serialize;
use serde_json::{json, Map, Value};

use cvm_core::hsi_io::{
    load_checkpoint, read_cube, read_labels, render_map, save_checkpoint, write_cube, write_labels, Checkpoint,
    HsiCube, LabelMap, Palette,
};
use cvm_core::metrics::{ablation_suite, classify, confusion, predict_scene, EvalReport, SceneMode};
use cvm_core::model::{count_flops, count_params, gradcheck_model, layout, ModelConfig, ModelParams};
use cvm_core::preprocess::{
    extract_patches, pca_apply, pca_fit as fit_components, split, Partition, PatchSet, PcaModel, SplitAssignment,
};
use cvm_core::synthetic::make_synthetic as generate_scene;
use cvm_core::training::{run_pool, summarize, train as train_model, RunResult, TrainSchedule};
use cvm_core::Error;

use crate::config::{config_err, PipelineConfig};
use crate::output::{write_bytes, write_json};

const GRADCHECK_TOLERANCE: f64 = 1e-3;

/// Resolved configuration plus bookkeeping for the meta file.
pub struct Context {
    pub cfg: PipelineConfig,
    command: &'static str,
    out: PathBuf,
    started: SystemTime,
    clock: Instant,
    meta: Map<String, Value>,
}

impl Context {
    /// Creates the output directory and echoes the resolved configuration.
    pub fn start(cfg: PipelineConfig, command: &'static str) -> Result<Self> {
        let out = cfg.run.output_dir.clone();
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        write_json(&out.join("config.json"), &cfg)?;
        Ok(Context {
            cfg,
            command,
            out,
            started: SystemTime::now(),
            clock: Instant::now(),
            meta: Map::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn note(&mut self, key: &str, value: impl Serialize) {
        self.meta
            .insert(key.into(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    /// Writes `<command>.meta.json`, the only file holding wall-clock data.
    pub fn finish(mut self, success: bool) -> Result<()> {
        let unix = |t: SystemTime| t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let mut meta = Map::new();
        meta.insert("command".into(), json!(self.command));
        meta.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        meta.insert("success".into(), json!(success));
        meta.insert("started_unix_s".into(), json!(unix(self.started)));
        meta.insert("finished_unix_s".into(), json!(unix(SystemTime::now())));
        meta.insert("elapsed_s".into(), json!(self.clock.elapsed().as_secs_f64()));
        meta.append(&mut self.meta);
        write_json(&self.path(&format!("{}.meta.json", self.command)), &meta)
    }
}

fn print(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

// ---------------------------------------------------------------------------
// data loading

struct Scene {
    cube: HsiCube,
    labels: Option<LabelMap>,
    train_mask: Option<LabelMap>,
}

fn load_scene(cfg: &PipelineConfig) -> Result<Scene> {
    let Some(cube_path) = &cfg.data.cube else {
        info!(
            "data.cube unset; generating the synthetic scene (seed {})",
            cfg.synthetic.seed
        );
        let scene = generate_scene(&cfg.synthetic)?;
        return Ok(Scene {
            cube: scene.cube,
            labels: Some(scene.labels),
            train_mask: None,
        });
    };
    let read = |p: &Path, what: &str| read_labels(p).with_context(|| format!("reading {what} {}", p.display()));
    Ok(Scene {
        cube: read_cube(cube_path).with_context(|| format!("reading cube {}", cube_path.display()))?,
        labels: cfg.data.labels.as_deref().map(|p| read(p, "labels")).transpose()?,
        train_mask: cfg
            .data
            .train_mask
            .as_deref()
            .map(|p| read(p, "training mask"))
            .transpose()?,
    })
}

fn require_labels(scene: &Scene) -> Result<&LabelMap> {
    scene
        .labels
        .as_ref()
        .ok_or_else(|| config_err("data.labels is required for this command"))
}

/// Class count from the config, cross-checked against the labels when both
/// are known.
fn num_classes(cfg: &PipelineConfig, labels: Option<&LabelMap>) -> Result<usize> {
    let from_labels = labels.map(|l| l.num_classes() as usize);
    match (cfg.data.num_classes, from_labels) {
        (Some(k), Some(l)) if k != l => Err(config_err(format!(
            "data.num_classes is {k} but the label file declares {l} classes"
        ))),
        (Some(k), _) | (None, Some(k)) => Ok(k),
        (None, None) if cfg.data.cube.is_none() => Ok(cfg.synthetic.classes as usize),
        (None, None) => Err(config_err("data.num_classes is required when no label file is given")),
    }
}

/// Class count without reading the cube.
fn declared_classes(cfg: &PipelineConfig) -> Result<usize> {
    match (&cfg.data.labels, cfg.data.num_classes) {
        (Some(path), None) => {
            let labels = read_labels(path).with_context(|| format!("reading labels {}", path.display()))?;
            num_classes(cfg, Some(&labels))
        }
        _ => num_classes(cfg, None),
    }
}

struct Prepared {
    model: ModelConfig,
    set: PatchSet,
    split: SplitAssignment,
}

fn prepare(cfg: &PipelineConfig, scene: &Scene, pca: &PcaModel) -> Result<Prepared> {
    let labels = require_labels(scene)?;
    let k = num_classes(cfg, Some(labels))?;
    if pca.retained() != cfg.data.pca_bands {
        return Err(config_err(format!(
            "PCA keeps {} bands but data.pca_bands is {}",
            pca.retained(),
            cfg.data.pca_bands
        )));
    }
    let reduced = pca_apply(&scene.cube, pca)?;
    let set = extract_patches(&reduced, labels, cfg.data.patch_size)?;
    let split = split(&set, &cfg.split, scene.train_mask.as_ref())?;
    info!(
        "{} patches: {} train, {} val, {} test",
        set.len(),
        split.count(Partition::Train),
        split.count(Partition::Val),
        split.count(Partition::Test)
    );
    Ok(Prepared {
        model: cfg.model_for(k),
        set,
        split,
    })
}

fn fit_pca(cfg: &PipelineConfig, cube: &HsiCube) -> Result<PcaModel> {
    Ok(fit_components(cube, cfg.data.pca_bands, cfg.data.pca_stride)?)
}

#[derive(Serialize)]
struct SplitFile<'a> {
    spec: &'a cvm_core::preprocess::SplitSpec,
    counts: BTreeMap<&'static str, usize>,
    /// `[row, col, label, partition]` per sample in scan order.
    samples: Vec<(usize, usize, u16, Partition)>,
}

fn write_split(path: &Path, cfg: &PipelineConfig, p: &Prepared) -> Result<()> {
    let counts = [
        ("train", Partition::Train),
        ("val", Partition::Val),
        ("test", Partition::Test),
    ]
    .into_iter()
    .map(|(n, part)| (n, p.split.count(part)))
    .collect();
    let samples = (0..p.set.len())
        .map(|i| (p.set.coords[i].0, p.set.coords[i].1, p.set.labels[i], p.split.tags[i]))
        .collect();
    write_json(
        path,
        &SplitFile {
            spec: &cfg.split,
            counts,
            samples,
        },
    )
}

fn pca_checkpoint(pca: &PcaModel) -> Result<Checkpoint> {
    let mut ck = Checkpoint::default();
    pca.write_to(&mut ck)?;
    Ok(ck)
}

/// Report on the selected samples, or `None` for an empty partition.
fn score(params: &ModelParams, p: &Prepared, idx: &[usize], batch: usize) -> Result<Option<EvalReport>> {
    if idx.is_empty() {
        return Ok(None);
    }
    let preds = classify(params, &p.model, &p.set, idx, batch)?;
    let cm = confusion(&preds, &p.set.labels_of(idx), p.model.num_classes)?;
    Ok(Some(EvalReport::from_confusion(&cm)?))
}

fn checkpoint_path(cfg: &PipelineConfig, given: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = given {
        return Ok(p.to_path_buf());
    }
    let seed = cfg.run.seeds.first().ok_or_else(|| config_err("run.seeds is empty"))?;
    Ok(cfg.run.output_dir.join(format!("seed-{seed}")).join("best.ckp"))
}

fn load_trained(cfg: &PipelineConfig, given: Option<&Path>) -> Result<(PathBuf, Checkpoint, PcaModel)> {
    let path = checkpoint_path(cfg, given)?;
    let ckpt = load_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let pca = PcaModel::read_from(&ckpt)?;
    Ok((path, ckpt, pca))
}

// ---------------------------------------------------------------------------
// subcommands

pub fn make_synthetic(ctx: &mut Context) -> Result<()> {
    let scene = generate_scene(&ctx.cfg.synthetic)?;
    write_cube(&scene.cube, ctx.path("cube.hsi"))?;
    write_labels(&scene.labels, ctx.path("labels.lbl"))?;
    write_labels(&scene.train_mask, ctx.path("train_mask.lbl"))?;
    write_labels(&scene.ground_truth, ctx.path("ground_truth.lbl"))?;
    print(&json!({
        "height": scene.cube.height(),
        "width": scene.cube.width(),
        "bands": scene.cube.bands(),
        "classes": scene.labels.num_classes(),
        "labeled": scene.labels.labeled_count(),
        "training_mask": scene.train_mask.labeled_count(),
    }))
}

pub fn pca_fit(ctx: &mut Context) -> Result<()> {
    let scene = load_scene(&ctx.cfg)?;
    let pca = fit_pca(&ctx.cfg, &scene.cube)?;
    save_checkpoint(&pca_checkpoint(&pca)?, ctx.path("pca.ckp"))?;
    let total = total_variance(&scene.cube, ctx.cfg.data.pca_stride);
    let summary = json!({
        "input_bands": pca.input_bands(),
        "retained": pca.retained(),
        "eigenvalues": pca.eigenvalues,
        "explained_variance_ratio": pca.eigenvalues.iter().map(|e| e / total).collect::<Vec<_>>(),
    });
    write_json(&ctx.path("pca.json"), &summary)?;
    print(&summary)
}

/// Sum of per-band sample variances over every `stride`-th pixel.
fn total_variance(cube: &HsiCube, stride: usize) -> f64 {
    let c = cube.bands();
    let pixels: Vec<&[f32]> = cube.data().chunks_exact(c).step_by(stride.max(1)).collect();
    let n = pixels.len() as f64;
    (0..c)
        .map(|b| {
            let mean = pixels.iter().map(|p| p[b] as f64).sum::<f64>() / n;
            pixels.iter().map(|p| (p[b] as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)
        })
        .sum()
}

pub fn preprocess(ctx: &mut Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let scene = load_scene(cfg)?;
    let pca = fit_pca(cfg, &scene.cube)?;
    let reduced = pca_apply(&scene.cube, &pca)?;
    let prepared = prepare(cfg, &scene, &pca)?;
    write_cube(&reduced, ctx.path("reduced.hsi"))?;
    save_checkpoint(&pca_checkpoint(&pca)?, ctx.path("pca.ckp"))?;
    write_split(&ctx.path("split.json"), cfg, &prepared)?;
    let summary = json!({
        "height": reduced.height(),
        "width": reduced.width(),
        "input_bands": scene.cube.bands(),
        "pca_bands": reduced.bands(),
        "patch_size": cfg.data.patch_size,
        "samples": prepared.set.len(),
        "train": prepared.split.count(Partition::Train),
        "val": prepared.split.count(Partition::Val),
        "test": prepared.split.count(Partition::Test),
    });
    write_json(&ctx.path("preprocess.json"), &summary)?;
    print(&summary)
}

pub fn train(ctx: &mut Context) -> Result<()> {
    let cfg = ctx.cfg.clone();
    let scene = load_scene(&cfg)?;
    let pca = fit_pca(&cfg, &scene.cube)?;
    let p = prepare(&cfg, &scene, &pca)?;
    write_split(&ctx.path("split.json"), &cfg, &p)?;
    let (tr, va, te) = (
        p.split.indices(Partition::Train),
        p.split.indices(Partition::Val),
        p.split.indices(Partition::Test),
    );
    let seeds = cfg.run.seeds.clone();
    if seeds.is_empty() {
        return Err(config_err("run.seeds is empty"));
    }
    let root = ctx.out.clone();
    let runs = run_pool(seeds.len(), cfg.run.workers, |i| {
        let seed = seeds[i];
        let dir = root.join(format!("seed-{seed}"));
        let run = || -> Result<RunResult> {
            fs::create_dir_all(&dir)?;
            let seed_cfg = PipelineConfig {
                run: crate::config::RunSection {
                    seeds: vec![seed],
                    ..cfg.run.clone()
                },
                ..cfg.clone()
            };
            write_json(&dir.join("config.json"), &seed_cfg)?;
            let schedule = TrainSchedule {
                seed,
                ..cfg.train.clone()
            };
            let out = train_model(&p.model, &p.set, &tr, &va, &schedule)?;
            let mut ckpt = out.checkpoint.clone();
            pca.write_to(&mut ckpt)?;
            save_checkpoint(&ckpt, dir.join("best.ckp"))?;
            let mut log = String::new();
            for record in &out.log {
                log.push_str(&serde_json::to_string(record)?);
                log.push('\n');
            }
            write_bytes(&dir.join("train_log.jsonl"), log.as_bytes())?;
            let mut test = score(&out.params, &p, &te, cfg.eval.batch_size)?
                .ok_or_else(|| Error::Contract("the test partition is empty".into()))?;
            test.config = serde_json::to_value(&seed_cfg)?;
            write_json(&dir.join("eval_report.json"), &test)?;
            info!(
                "seed {seed}: best epoch {} val OA {:.4} test OA {:.4}",
                out.best_epoch, out.best_val_oa, test.oa
            );
            test.config = Value::Null;
            Ok(RunResult {
                seed,
                best_epoch: out.best_epoch,
                best_val_oa: out.best_val_oa,
                test,
            })
        };
        run().map_err(|e| match e.downcast::<Error>() {
            Ok(core) => core,
            Err(other) => Error::Contract(format!("seed {seed}: {other:#}")),
        })
    })?;
    let stats = summarize(runs)?;
    write_json(&ctx.path("run_stats.json"), &stats)?;
    print(&json!({
        "seeds": seeds,
        "mean": stats.mean,
        "std": if stats.std_defined { json!(stats.std) } else { Value::Null },
        "runs": stats.runs.iter().map(|r| json!({
            "seed": r.seed, "best_epoch": r.best_epoch, "best_val_oa": r.best_val_oa, "test_oa": r.test.oa,
        })).collect::<Vec<_>>(),
    }))
}

pub fn evaluate(ctx: &mut Context, checkpoint: Option<&Path>) -> Result<()> {
    let cfg = &ctx.cfg;
    let (path, ckpt, pca) = load_trained(cfg, checkpoint)?;
    let scene = load_scene(cfg)?;
    let p = prepare(cfg, &scene, &pca)?;
    let params = ModelParams::from_checkpoint(&p.model, &ckpt)?;
    let batch = cfg.eval.batch_size;
    let report = json!({
        "checkpoint": path,
        "epoch": ckpt.meta.epoch,
        "val_accuracy": ckpt.meta.val_accuracy,
        "train": score(&params, &p, &p.split.indices(Partition::Train), batch)?,
        "val": score(&params, &p, &p.split.indices(Partition::Val), batch)?,
        "test": score(&params, &p, &p.split.indices(Partition::Test), batch)?,
    });
    write_json(&ctx.path("eval.json"), &report)?;
    let oa = |part: &str| report[part].get("oa").cloned().unwrap_or(Value::Null);
    print(&json!({ "train_oa": oa("train"), "val_oa": oa("val"), "test_oa": oa("test") }))
}

pub fn predict_map(ctx: &mut Context, checkpoint: Option<&Path>) -> Result<()> {
    let cfg = ctx.cfg.clone();
    let (path, ckpt, pca) = load_trained(&cfg, checkpoint)?;
    let scene = load_scene(&cfg)?;
    let k = num_classes(&cfg, scene.labels.as_ref())?;
    let model = cfg.model_for(k);
    let reduced = pca_apply(&scene.cube, &pca)?;
    let mode = if cfg.eval.full_scene {
        SceneMode::Full
    } else {
        SceneMode::Labeled
    };
    let pred = predict_scene(
        &reduced,
        scene.labels.as_ref(),
        &model,
        &ckpt,
        cfg.eval.batch_size,
        mode,
    )?;
    write_labels(&pred.predictions, ctx.path("prediction.lbl"))?;
    let palette = match &cfg.eval.palette {
        Some(p) => {
            Palette::from_json(&fs::read_to_string(p).with_context(|| format!("reading palette {}", p.display()))?)?
        }
        None => Palette::generated(k as u16),
    };
    write_bytes(&ctx.path("map.ppm"), &render_map(&pred.predictions, &palette)?)?;
    let report = json!({
        "checkpoint": path,
        "mode": mode,
        "pixels": pred.pixels,
        "report": pred.report,
    });
    write_json(&ctx.path("predict_report.json"), &report)?;
    ctx.note("timing", pred.timing);
    print(&json!({
        "pixels": pred.pixels,
        "oa": pred.report.as_ref().map(|r| r.oa),
        "extraction_s": pred.timing.extraction_s,
        "forward_s": pred.timing.forward_s,
    }))
}

pub fn gradcheck(ctx: &mut Context, samples: usize) -> Result<()> {
    let cfg = &ctx.cfg;
    let model = cfg.model_for(declared_classes(cfg)?);
    let seed = cfg.run.seeds.first().copied().unwrap_or(0);
    let r = gradcheck_model(&model, seed, samples)?;
    let report = json!({
        "patch_size": model.patch_size,
        "input_bands": model.input_bands,
        "num_classes": model.num_classes,
        "samples": r.checked,
        "max_rel_error": r.max_rel_error,
        "worst": { "input": r.worst.0, "element": r.worst.1, "analytic": r.analytic, "numeric": r.numeric },
        "tolerance": GRADCHECK_TOLERANCE,
        "pass": r.max_rel_error < GRADCHECK_TOLERANCE,
    });
    write_json(&ctx.path("gradcheck.json"), &report)?;
    print(&report)?;
    if r.max_rel_error >= GRADCHECK_TOLERANCE {
        return Err(Error::Numeric(format!(
            "max relative gradient error {:.3e} is not below {GRADCHECK_TOLERANCE}",
            r.max_rel_error
        ))
        .into());
    }
    Ok(())
}

pub fn params(ctx: &mut Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let model = cfg.model_for(declared_classes(cfg)?);
    model.validate()?;
    let mut breakdown: BTreeMap<String, usize> = BTreeMap::new();
    for (name, shape, _) in layout(&model) {
        let group = name.split('.').next().unwrap_or(&name).to_string();
        *breakdown.entry(group).or_default() += shape.iter().product::<usize>();
    }
    let cost = count_flops(&model);
    let report = json!({
        "patch_size": model.patch_size,
        "input_bands": model.input_bands,
        "num_classes": model.num_classes,
        "params": count_params(&model),
        "flops": cost.flops,
        "macs": cost.macs,
        "breakdown": breakdown,
    });
    write_json(&ctx.path("params.json"), &report)?;
    print(&report)
}

pub fn ablate(ctx: &mut Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let scene = load_scene(cfg)?;
    let pca = fit_pca(cfg, &scene.cube)?;
    let p = prepare(cfg, &scene, &pca)?;
    let rows = ablation_suite(&p.model, &p.set, &p.split, &cfg.train, &cfg.run.seeds, cfg.run.workers)?;
    write_json(&ctx.path("ablation.json"), &rows)?;
    print(
        &rows
            .iter()
            .map(|r| json!({ "variant": r.variant, "params": r.params, "test_oa_mean": r.stats.mean.oa }))
            .collect::<Vec<_>>(),
    )
}
