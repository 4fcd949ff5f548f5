//! Config-driven experiment runner behind the `anyway` command line.
//!
//! Every command writes into a run directory: `manifest.json` (config echo,
//! seed, wall time), plus CSV reports and checkpoints. Reports and
//! checkpoints depend only on the config; timings live in the manifest.

pub mod config;
pub mod gradcheck;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use crate::assignment::EnsembleMethod;
use crate::checkpoint::{Checkpoint, Model, ProtoModel};
use crate::episodes::MotherDataset;
use crate::error::{Error, Result};
use crate::maml::{evaluate, train, InnerConfig, MetaModel, OuterConfig, TrainMode, TrainSettings};
use crate::metrics::{mean_std, pooled_std, CurvePoint};
use crate::nn::MlpEncoder;
use crate::proto::{evaluate_proto, train_proto, PrototypeMemory, ProtoSettings};
use crate::rng::{domain, mix, stream};
use crate::semantic::SemanticConfig;
use crate::synth::{load_features, make_gaussian_mother, make_shifted, save_features, SynthSpec};

pub use config::{Backend, DataSource, ExperimentConfig, TestDomain};
pub use gradcheck::{run_gradcheck, GradcheckOptions, GradcheckReport, GradcheckRow, GRADCHECK_TOLERANCE};

/// Environment variable naming the default parent directory for run outputs.
pub const OUT_DIR_ENV: &str = "ANYWAY_OUT_DIR";

pub const SWEEP_REPEATS: [usize; 6] = [1, 2, 3, 6, 12, 18];

/// Train, validation and test pools of semantic classes.
#[derive(Clone, Debug)]
pub struct Splits {
    pub name: String,
    pub train: MotherDataset,
    pub val: MotherDataset,
    pub test: MotherDataset,
}

fn split_three(cfg: &ExperimentConfig, ds: &MotherDataset) -> Result<(MotherDataset, MotherDataset, MotherDataset)> {
    if cfg.train_classes + cfg.val_classes >= ds.class_count() {
        return Err(Error::Config(format!(
            "dataset has {} classes; train_classes + val_classes must leave test classes",
            ds.class_count()
        )));
    }
    let (train, rest) = ds.split(cfg.train_classes)?;
    let (val, test) = rest.split(cfg.val_classes)?;
    Ok((train, val, test))
}

pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let (name, ds, spec) = match &cfg.dataset {
        DataSource::Synth => {
            let spec = cfg.synth_spec();
            ("synth".to_string(), make_gaussian_mother(&spec)?, Some(spec))
        }
        DataSource::File(path) => {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().replace([',', ' '], "_"))
                .unwrap_or_else(|| "features".into());
            (stem, load_features(path)?, None)
        }
    };
    cfg.check_split_sizes(ds.class_count())?;
    let (train, val, mut test) = split_three(cfg, &ds)?;
    let mut name = name;
    if cfg.test_domain == TestDomain::Shifted {
        let spec = match spec {
            Some(s) => SynthSpec {
                classes: test.class_count(),
                ..s
            },
            None => return Err(Error::Config("key `test_domain`: shifted test data needs dataset = synth".into())),
        };
        test = make_shifted(&spec, cfg.shift_seed, cfg.shift_sigma)?;
        name.push_str("-shifted");
    }
    Ok(Splits { name, train, val, test })
}

fn encoder_dims(cfg: &ExperimentConfig, input: usize) -> Vec<usize> {
    std::iter::once(input).chain(cfg.hidden.iter().copied()).collect()
}

/// Freshly initialized model for `cfg`, drawn from the run's init stream.
pub fn init_model(cfg: &ExperimentConfig, splits: &Splits) -> Result<Model> {
    let mut rng = stream(cfg.seed, domain::INIT, 0);
    let dims = encoder_dims(cfg, splits.train.feature_dim());
    Ok(match cfg.backend {
        Backend::Maml => Model::Maml(MetaModel::init(
            &dims,
            cfg.final_activation,
            cfg.head_width(),
            cfg.semantic.then(|| splits.train.class_count()),
            &mut rng,
        )?),
        Backend::Protonet => Model::Proto(ProtoModel {
            encoder: MlpEncoder::new(&dims, cfg.final_activation, &mut rng)?,
            memory: None,
        }),
    })
}

fn inner_config(cfg: &ExperimentConfig) -> InnerConfig {
    InnerConfig {
        steps: cfg.inner_steps,
        lr: cfg.inner_lr,
        task_loss: true,
    }
}

fn semantic_config(cfg: &ExperimentConfig, classes: usize) -> Option<SemanticConfig> {
    cfg.semantic.then(|| SemanticConfig {
        mixup: cfg.mixup,
        beta_alpha: cfg.beta_alpha,
        mix_labels: cfg.mix_labels,
        encoder_gradient: cfg.semantic_encoder_gradient,
        ..SemanticConfig::new(classes, cfg.lambda_value())
    })
}

fn val_seed(cfg: &ExperimentConfig) -> u64 {
    mix(cfg.seed ^ mix(domain::VALIDATION))
}

/// Seed of the evaluation episode streams; shared by every model evaluated under the same run seed.
pub fn eval_seed(cfg: &ExperimentConfig) -> u64 {
    mix(cfg.seed ^ mix(domain::TASKS))
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub curve: Vec<CurvePoint>,
    pub best_val_sum: f64,
    pub stall_step: Option<usize>,
    pub seconds: f64,
}

/// Trains the model described by `cfg` without touching the filesystem.
pub fn train_model(cfg: &ExperimentConfig, splits: &Splits) -> Result<TrainRun> {
    cfg.validate()?;
    let start = Instant::now();
    let spec = cfg.episode_spec();
    let mut rng = stream(cfg.seed, domain::TRAIN, 0);
    let outer = OuterConfig {
        lr: cfg.outer_lr,
        episodes: cfg.episodes,
        meta_batch: cfg.meta_batch,
    };
    let run = match init_model(cfg, splits)? {
        Model::Maml(model) => {
            let settings = TrainSettings {
                mode: cfg.mode,
                inner: inner_config(cfg),
                outer,
                semantic: semantic_config(cfg, splits.train.class_count()),
                eval_interval: cfg.eval_interval,
                val_episodes: cfg.val_episodes,
                val_ns: Vec::new(),
                val_seed: val_seed(cfg),
                stall_window: cfg.stall_window,
                stall_eps: cfg.stall_eps,
            };
            let out = train(&splits.train, &splits.val, &spec, model, &settings, &mut rng)?;
            TrainRun {
                best: Checkpoint {
                    model: Model::Maml(out.best),
                    mode: cfg.mode,
                    step: out.best_step,
                },
                last: Checkpoint {
                    model: Model::Maml(out.last),
                    mode: cfg.mode,
                    step: cfg.episodes,
                },
                curve: out.curve,
                best_val_sum: out.best_val_sum,
                stall_step: out.stall_step,
                seconds: 0.0,
            }
        }
        Model::Proto(p) => {
            let settings = ProtoSettings {
                outer,
                lambda: if cfg.semantic { cfg.lambda_value() } else { 0.0 },
                ema_rate: cfg.ema_rate_value(),
                semantic_classes: cfg.semantic.then(|| splits.train.class_count()),
                eval_interval: cfg.eval_interval,
                val_episodes: cfg.val_episodes,
                val_ns: Vec::new(),
                val_seed: val_seed(cfg),
                stall_window: cfg.stall_window,
                stall_eps: cfg.stall_eps,
            };
            let out = train_proto(&splits.train, &splits.val, &spec, p.encoder, &settings, &mut rng)?;
            TrainRun {
                best: Checkpoint {
                    model: Model::Proto(ProtoModel {
                        encoder: out.best,
                        memory: out.best_memory,
                    }),
                    mode: cfg.mode,
                    step: out.best_step,
                },
                last: Checkpoint {
                    model: Model::Proto(ProtoModel {
                        encoder: out.last,
                        memory: out.memory,
                    }),
                    mode: cfg.mode,
                    step: cfg.episodes,
                },
                curve: out.curve,
                best_val_sum: out.best_val_sum,
                stall_step: out.stall_step,
                seconds: 0.0,
            }
        }
    };
    Ok(TrainRun {
        seconds: start.elapsed().as_secs_f64(),
        ..run
    })
}

/// One line of an evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub dataset: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub method: String,
    #[serde(rename = "J_repeats")]
    pub j_repeats: usize,
    pub episodes: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
    /// Half-width of the 95% interval on `acc_mean`; reported in the manifest.
    #[serde(skip)]
    pub ci95: f64,
}

/// Evaluates `model` on the test split for every `(N, method, repeats)` cell.
///
/// All cells share one episode stream, so they form paired comparisons.
pub fn evaluate_model(
    cfg: &ExperimentConfig,
    model: &Model,
    splits: &Splits,
    ns: &[usize],
    repeats: &[usize],
    methods: &[EnsembleMethod],
) -> Result<Vec<ReportRow>> {
    let seed = eval_seed(cfg);
    let inner = inner_config(cfg);
    let mut rows = Vec::new();
    for &n in ns {
        if n > splits.test.class_count() {
            return Err(Error::Config(format!(
                "key `eval_ns`: N = {n} exceeds the {} test classes",
                splits.test.class_count()
            )));
        }
        match model {
            Model::Maml(m) => {
                if n > m.width() {
                    return Err(Error::Config(format!(
                        "key `eval_ns`: N = {n} exceeds the checkpoint head width {}",
                        m.width()
                    )));
                }
                for &j in repeats {
                    for &method in methods {
                        let s = evaluate(m, &splits.test, n, cfg.shots, cfg.queries, cfg.eval_episodes, j, method, &inner, seed)?;
                        rows.push(ReportRow {
                            dataset: splits.name.clone(),
                            n,
                            k: cfg.shots,
                            method: method.to_string(),
                            j_repeats: j,
                            episodes: s.episodes,
                            acc_mean: s.mean,
                            acc_std: s.std,
                            ci95: s.ci95,
                        });
                    }
                }
            }
            Model::Proto(p) => {
                let s = evaluate_proto(&p.encoder, &splits.test, n, cfg.shots, cfg.queries, cfg.eval_episodes, seed)?;
                rows.push(ReportRow {
                    dataset: splits.name.clone(),
                    n,
                    k: cfg.shots,
                    method: "prototype".into(),
                    j_repeats: 1,
                    episodes: s.episodes,
                    acc_mean: s.mean,
                    acc_std: s.std,
                    ci95: s.ci95,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Curve CSV: `step,train_loss,val_acc_N...,val_acc_sum`.
pub fn write_curve(path: &Path, curve: &[CurvePoint], ns: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["step".to_string(), "train_loss".to_string()];
    header.extend(ns.iter().map(|n| format!("val_acc_{n}")));
    header.push("val_acc_sum".into());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for p in curve {
        let mut rec = vec![p.step.to_string(), p.train_loss.to_string()];
        rec.extend(p.val_acc.iter().map(|(_, a)| a.to_string()));
        rec.push(p.val_acc_sum.to_string());
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn intervals(rows: &[ReportRow]) -> serde_json::Value {
    json!(rows
        .iter()
        .map(|r| json!({"N": r.n, "method": r.method, "J_repeats": r.j_repeats, "ci95": r.ci95}))
        .collect::<Vec<_>>())
}

fn write_manifest(dir: &Path, value: serde_json::Value) -> Result<()> {
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&value).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Output directory: explicit path, else `$ANYWAY_OUT_DIR/<command>`, else `runs/<command>`.
pub fn resolve_out_dir(explicit: Option<PathBuf>, command: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(command)
    })
}

fn base_manifest(command: &str, cfg: &ExperimentConfig, seconds: f64) -> serde_json::Value {
    json!({
        "command": command,
        "crate_version": env!("CARGO_PKG_VERSION"),
        "config": cfg.to_text(),
        "seed": cfg.seed,
        "eval_episodes": cfg.eval_episodes,
        "wall_seconds": seconds,
    })
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub run: TrainRun,
    pub validation_ns: Vec<usize>,
}

/// `train`: writes `best.ckpt`, `final.ckpt`, `curve.csv` and `manifest.json`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    let run = train_model(cfg, &splits)?;
    ensure_dir(out)?;
    run.best.save(&out.join("best.ckpt"))?;
    run.last.save(&out.join("final.ckpt"))?;
    let ns = cfg.episode_spec().cardinalities();
    write_curve(&out.join("curve.csv"), &run.curve, &ns)?;

    let best_point = run.curve.iter().find(|p| p.step == run.best.step);
    let validation = best_point
        .map(|p| p.val_acc.iter().map(|&(n, a)| json!({"N": n, "acc": a})).collect::<Vec<_>>())
        .unwrap_or_default();
    let mut manifest = base_manifest("train", cfg, run.seconds);
    manifest["backend"] = json!(cfg.backend.to_string());
    manifest["best_step"] = json!(run.best.step);
    manifest["validation"] = json!(validation);
    manifest["validation_sum"] = json!(best_point.map(|p| p.val_acc_sum));
    manifest["stall_warning"] = match run.stall_step {
        Some(step) => json!(format!("validation accuracy sat at chance through step {step}")),
        None => serde_json::Value::Null,
    };
    manifest["outputs"] = json!(["best.ckpt", "final.ckpt", "curve.csv"]);
    write_manifest(out, manifest)?;
    if let Some(step) = run.stall_step {
        log::warn!("training stalled at chance through step {step}");
    }
    Ok(TrainSummary { run, validation_ns: ns })
}

fn load_checkpoint_for(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Checkpoint> {
    let ck = Checkpoint::load(checkpoint)?;
    let expected = match cfg.backend {
        Backend::Maml => "maml",
        Backend::Protonet => "protonet",
    };
    if ck.model.backend() != expected {
        return Err(Error::Config(format!(
            "checkpoint holds a {} model but backend = {expected}",
            ck.model.backend()
        )));
    }
    Ok(ck)
}

/// `eval`: one report row per `(N, method, J_repeats)`.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<Vec<ReportRow>> {
    let start = Instant::now();
    let ck = load_checkpoint_for(cfg, checkpoint)?;
    let splits = load_splits(cfg)?;
    let rows = evaluate_model(cfg, &ck.model, &splits, &cfg.eval_ns, &cfg.j_repeats, &cfg.ensemble)?;
    ensure_dir(out)?;
    write_csv(&out.join("report.csv"), &rows)?;
    let mut manifest = base_manifest("eval", cfg, start.elapsed().as_secs_f64());
    manifest["checkpoint"] = json!(checkpoint.display().to_string());
    manifest["model"] = checkpoint_summary(&ck);
    manifest["intervals"] = intervals(&rows);
    manifest["outputs"] = json!(["report.csv"]);
    write_manifest(out, manifest)?;
    Ok(rows)
}

/// `sweep-ensemble`: the full repeats × methods table at every eval `N`.
pub fn cmd_sweep_ensemble(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    repeats: &[usize],
    methods: &[EnsembleMethod],
    out: &Path,
) -> Result<Vec<ReportRow>> {
    let start = Instant::now();
    let ck = load_checkpoint_for(cfg, checkpoint)?;
    if !matches!(ck.model, Model::Maml(_)) {
        return Err(Error::Config("ensemble sweeps need a maml checkpoint".into()));
    }
    if repeats.is_empty() || repeats.contains(&0) || methods.is_empty() {
        return Err(Error::Config("sweep needs positive repeat counts and at least one method".into()));
    }
    let splits = load_splits(cfg)?;
    let rows = evaluate_model(cfg, &ck.model, &splits, &cfg.eval_ns, repeats, methods)?;
    ensure_dir(out)?;
    write_csv(&out.join("report.csv"), &rows)?;
    let mut manifest = base_manifest("sweep-ensemble", cfg, start.elapsed().as_secs_f64());
    manifest["checkpoint"] = json!(checkpoint.display().to_string());
    manifest["model"] = checkpoint_summary(&ck);
    manifest["intervals"] = intervals(&rows);
    manifest["outputs"] = json!(["report.csv"]);
    write_manifest(out, manifest)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub width: usize,
    pub seed: u64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub episodes: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
}

/// `ablate-o`: one model per head width and seed, evaluated at every eval `N`.
///
/// Runs for different widths share the run seed, so they see the same
/// initialization stream, task sequence and evaluation episodes.
pub fn cmd_ablate_o(cfg: &ExperimentConfig, widths: &[usize], seeds: usize, out: &Path) -> Result<Vec<AblationRow>> {
    if cfg.mode != TrainMode::AnyWay || cfg.backend != Backend::Maml {
        return Err(Error::Config("output-width ablation needs backend = maml and mode = anyway".into()));
    }
    if widths.is_empty() || seeds == 0 {
        return Err(Error::Config("ablation needs at least one width and one seed".into()));
    }
    let start = Instant::now();
    let splits = load_splits(cfg)?;
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for &width in widths {
        for s in 0..seeds as u64 {
            let run_cfg = ExperimentConfig {
                width,
                seed: cfg.seed + s,
                ..cfg.clone()
            };
            run_cfg.validate()?;
            let run = train_model(&run_cfg, &splits)?;
            timings.push(json!({"width": width, "seed": run_cfg.seed, "train_seconds": run.seconds}));
            let report = evaluate_model(&run_cfg, &run.best.model, &splits, &cfg.eval_ns, &[1], &[EnsembleMethod::Original])?;
            rows.extend(report.into_iter().map(|r| AblationRow {
                width,
                seed: run_cfg.seed,
                n: r.n,
                k: r.k,
                episodes: r.episodes,
                acc_mean: r.acc_mean,
                acc_std: r.acc_std,
            }));
        }
    }
    ensure_dir(out)?;
    write_csv(&out.join("report.csv"), &rows)?;
    let mut manifest = base_manifest("ablate-o", cfg, start.elapsed().as_secs_f64());
    manifest["widths"] = json!(widths);
    manifest["seeds"] = json!(seeds);
    manifest["training"] = json!(timings);
    manifest["outputs"] = json!(["report.csv"]);
    write_manifest(out, manifest)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub seeds: usize,
    pub acc_a_mean: f64,
    pub acc_a_std: f64,
    pub acc_b_mean: f64,
    pub acc_b_std: f64,
    pub delta_mean: f64,
    pub delta_std: f64,
    pub pooled_std: f64,
}

const SHARED_KEYS: [&str; 14] = [
    "dataset",
    "data_classes",
    "train_classes",
    "val_classes",
    "dim",
    "per_class",
    "mean_scale",
    "noise_sigma",
    "signal_dims",
    "nuisance_sigma",
    "data_seed",
    "test_domain",
    "seed",
    "eval_episodes",
];

/// `compare`: trains both configs over `seeds` consecutive seeds and reports
/// per-`N` paired accuracy differences `b − a` on identical episode streams.
pub fn cmd_compare(a: &ExperimentConfig, b: &ExperimentConfig, seeds: usize, out: &Path) -> Result<Vec<CompareRow>> {
    a.validate()?;
    b.validate()?;
    if seeds == 0 {
        return Err(Error::Config("compare needs at least one seed".into()));
    }
    let (ea, eb) = (a.entries(), b.entries());
    for key in SHARED_KEYS {
        let va = ea.iter().find(|(k, _)| *k == key).map(|(_, v)| v);
        let vb = eb.iter().find(|(k, _)| *k == key).map(|(_, v)| v);
        if va != vb {
            return Err(Error::Config(format!(
                "key `{key}` differs between the compared configs ({} vs {})",
                va.map_or("", |s| s.as_str()),
                vb.map_or("", |s| s.as_str())
            )));
        }
    }
    let start = Instant::now();
    let splits = load_splits(a)?;
    let ns = a.eval_ns.clone();
    let mut acc_a = vec![Vec::new(); ns.len()];
    let mut acc_b = vec![Vec::new(); ns.len()];
    let mut timings = Vec::new();
    for s in 0..seeds as u64 {
        for (cfg, acc, label) in [(a, &mut acc_a, "a"), (b, &mut acc_b, "b")] {
            let run_cfg = ExperimentConfig {
                seed: cfg.seed + s,
                ..cfg.clone()
            };
            let run = train_model(&run_cfg, &splits)?;
            timings.push(json!({"config": label, "seed": run_cfg.seed, "train_seconds": run.seconds}));
            let report = evaluate_model(&run_cfg, &run.best.model, &splits, &ns, &[1], &[EnsembleMethod::Original])?;
            for (slot, r) in acc.iter_mut().zip(report) {
                slot.push(r.acc_mean);
            }
        }
    }
    let rows: Vec<CompareRow> = ns
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let (ma, sa) = mean_std(&acc_a[i]);
            let (mb, sb) = mean_std(&acc_b[i]);
            let deltas: Vec<f64> = acc_a[i].iter().zip(&acc_b[i]).map(|(x, y)| y - x).collect();
            let (md, sd) = mean_std(&deltas);
            CompareRow {
                n,
                seeds,
                acc_a_mean: ma,
                acc_a_std: sa,
                acc_b_mean: mb,
                acc_b_std: sb,
                delta_mean: md,
                delta_std: sd,
                pooled_std: pooled_std(&acc_a[i], &acc_b[i]),
            }
        })
        .collect();
    ensure_dir(out)?;
    write_csv(&out.join("report.csv"), &rows)?;
    let mut manifest = base_manifest("compare", a, start.elapsed().as_secs_f64());
    manifest["config_b"] = json!(b.to_text());
    manifest["seeds"] = json!(seeds);
    manifest["training"] = json!(timings);
    manifest["outputs"] = json!(["report.csv"]);
    write_manifest(out, manifest)?;
    Ok(rows)
}

/// `gradcheck`: writes `report.csv` with the worst relative error per parameter block.
pub fn cmd_gradcheck(opts: &GradcheckOptions, out: &Path) -> Result<GradcheckReport> {
    let start = Instant::now();
    let report = run_gradcheck(opts)?;
    ensure_dir(out)?;
    write_csv(&out.join("report.csv"), &report.rows)?;
    write_manifest(
        out,
        json!({
            "command": "gradcheck",
            "crate_version": env!("CARGO_PKG_VERSION"),
            "seed": opts.seed,
            "dims": opts.dims,
            "nets": opts.nets,
            "tolerance": GRADCHECK_TOLERANCE,
            "passed": report.passed(),
            "wall_seconds": start.elapsed().as_secs_f64(),
            "outputs": ["report.csv"],
        }),
    )?;
    Ok(report)
}

/// `gen-data`: writes the configured synthetic mother dataset as a feature file.
pub fn cmd_gen_data(cfg: &ExperimentConfig, path: &Path) -> Result<MotherDataset> {
    let spec = cfg.synth_spec();
    let ds = make_gaussian_mother(&spec)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    save_features(&ds, path)?;
    Ok(ds)
}

/// Architecture summary of a checkpoint.
pub fn checkpoint_summary(ck: &Checkpoint) -> serde_json::Value {
    let enc = ck.model.encoder();
    let mut v = json!({
        "backend": ck.model.backend(),
        "mode": ck.mode.to_string(),
        "step": ck.step,
        "layer_dims": enc.layer_dims(),
    });
    match &ck.model {
        Model::Maml(m) => {
            v["width"] = json!(m.width());
            v["semantic_classes"] = json!(m.semantic_classes());
        }
        Model::Proto(p) => {
            v["memory_classes"] = json!(p.memory.as_ref().map(PrototypeMemory::classes));
        }
    }
    v
}
