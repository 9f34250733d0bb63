use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use coughscreen::dataset::{load_inputs, load_manifest, load_patch_cache, FoldAssignment, Gender, PatchCacheWriter, RecordingInput, SampleRecord};
use coughscreen::harness::{predict_recording, run_training, split_metrics, write_predictions, HarnessError, PatchIndex, RecordingPrediction, RecordingScore, RunConfig, SplitMetrics};
use coughscreen::models::{CoughCnn, GenderMode, ModelError, ModelSet};
use coughscreen::preprocess::preprocess_file;
use coughscreen::sad::SadMethod;
use coughscreen::spectro::{Colormap, FreqScale, Patch};
use coughscreen::synth::generate_corpus;
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{AppConfig, EFFECTIVE_CONFIG};
use crate::{CliError, CmapFlag, Common, EvaluateArgs, GenderFlag, PredictArgs, PreprocessArgs, SadFlag, ScaleFlag, SexFlag, SynthArgs, TrainArgs};

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn harness_err(e: HarnessError) -> CliError {
    match e {
        HarnessError::Dataset(_)
        | HarnessError::Config(_)
        | HarnessError::EmptySplit(_)
        | HarnessError::NoPatches(_)
        | HarnessError::Model(ModelError::MissingGender | ModelError::MissingModel(_) | ModelError::ImageSize { .. }) => CliError::Validation(e.to_string()),
        other => runtime(other),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

/// Config file and `--set` layers over `base`, then the shared flags.
fn load_config(common: &Common, base: &[&Path]) -> Result<AppConfig, CliError> {
    let mut cfg = AppConfig::load_layered(base, common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.seed = Some(seed);
    }
    if let Some(workers) = common.workers {
        cfg.workers = workers;
    }
    Ok(cfg)
}

fn finalize(cfg: &mut AppConfig) -> Result<(), CliError> {
    cfg.resolve_seed();
    cfg.validate()
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(runtime)
}

struct Failure {
    id: String,
    path: PathBuf,
    reason: String,
}

fn write_failures(path: &Path, failures: &[Failure]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(runtime)?;
    w.write_record(["id", "path", "error"]).map_err(runtime)?;
    for f in failures {
        w.write_record([f.id.as_str(), &f.path.display().to_string(), f.reason.as_str()]).map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}

/// Turns a batch outcome into an exit status.
fn batch_status(what: &str, ok: usize, failures: &[Failure], report: &Path) -> Result<(), CliError> {
    if failures.is_empty() {
        return Ok(());
    }
    for f in failures {
        warn!("{}: {}", f.id, f.reason);
    }
    let msg = format!("{} of {} recordings failed during {what}; see {}", failures.len(), ok + failures.len(), report.display());
    if ok == 0 {
        Err(CliError::Runtime(msg))
    } else {
        Err(CliError::Partial(msg))
    }
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.common, &[])?;
    if let Some(n) = args.n_per_class {
        cfg.synth.n_per_class = n;
    }
    finalize(&mut cfg)?;
    create_dir(&args.out)?;
    let records = generate_corpus(&args.out, &cfg.synth).map_err(runtime)?;
    cfg.write(&args.out)?;
    println!("wrote {} recordings; manifest at {}", records.len(), args.out.join("manifest.csv").display());
    Ok(())
}

#[derive(Default)]
struct ClassCount {
    recordings: usize,
    patches: usize,
}

pub fn preprocess(args: &PreprocessArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.common, &[])?;
    let pre = &mut cfg.preprocess;
    match args.sad {
        Some(SadFlag::Off) => pre.sad_enabled = false,
        Some(SadFlag::Rms) => {
            pre.sad_enabled = true;
            pre.sad.method = SadMethod::Rms;
        }
        Some(SadFlag::Flux) => {
            pre.sad_enabled = true;
            pre.sad.method = SadMethod::SpectralFlux;
        }
        None => {}
    }
    if let Some(scale) = args.scale {
        pre.spectro.freq_scale = match scale {
            ScaleFlag::Log => FreqScale::Log,
            ScaleFlag::Linear => FreqScale::Linear,
        };
    }
    if let Some(cmap) = args.cmap {
        pre.spectro.colormap = match cmap {
            CmapFlag::Magma => Colormap::Magma,
            CmapFlag::Viridis => Colormap::Viridis,
        };
    }
    if let Some(px) = args.image_px {
        pre.spectro.image_px = px;
    }
    finalize(&mut cfg)?;

    let (inputs, _) = load_inputs(&args.manifest).map_err(|e| CliError::Validation(e.to_string()))?;
    create_dir(&args.out)?;
    let writer = Mutex::new(PatchCacheWriter::new(&args.out).map_err(runtime)?);
    let outcomes: Vec<Result<(usize, bool), String>> = thread_pool(cfg.workers)?.install(|| {
        inputs
            .par_iter()
            .map(|rec| {
                let out = preprocess_file(&rec.path, &rec.id, &cfg.preprocess).map_err(|e| e.to_string())?;
                writer.lock().expect("cache writer").add(&out.patches).map_err(|e| e.to_string())?;
                Ok((out.patches.len(), out.sad_degenerate))
            })
            .collect()
    });
    let written = writer.into_inner().expect("cache writer").finish().map_err(runtime)?;

    let mut counts: BTreeMap<String, ClassCount> = BTreeMap::new();
    let mut failures = Vec::new();
    for (rec, outcome) in inputs.iter().zip(outcomes) {
        match outcome {
            Ok((n, degenerate)) => {
                if degenerate {
                    warn!("{}: no activity detected, kept the whole recording", rec.id);
                }
                let class = rec.label.map_or_else(|| "unlabelled".to_string(), |l| l.to_string());
                let c = counts.entry(class).or_default();
                c.recordings += 1;
                c.patches += n;
            }
            Err(reason) => failures.push(Failure {
                id: rec.id.clone(),
                path: rec.path.clone(),
                reason,
            }),
        }
    }
    let report = args.out.join("failures.csv");
    write_failures(&report, &failures)?;
    cfg.write(&args.out)?;
    for (class, c) in &counts {
        println!("{class}: {} patches from {} recordings", c.patches, c.recordings);
    }
    println!("{written} patches cached in {}", args.out.display());
    batch_status("preprocessing", inputs.len() - failures.len(), &failures, &report)
}

/// Ids of `records` that have no cached patches.
fn missing_ids<'a>(records: impl IntoIterator<Item = &'a SampleRecord>, patches: &PatchIndex) -> Vec<&'a str> {
    records.into_iter().filter(|r| patches.get(&r.id).is_none_or(|p| p.is_empty())).map(|r| r.id.as_str()).collect()
}

fn require_cached<'a>(records: impl IntoIterator<Item = &'a SampleRecord>, patches: &PatchIndex) -> Result<(), CliError> {
    let missing = missing_ids(records, patches);
    if missing.is_empty() {
        return Ok(());
    }
    let shown: Vec<&str> = missing.iter().take(5).copied().collect();
    Err(CliError::Validation(format!(
        "{} manifest recordings are missing from the patch cache (e.g. {})",
        missing.len(),
        shown.join(", ")
    )))
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.common, &[])?;
    match AppConfig::read_effective(&args.cache)? {
        Some(cache_cfg) => cfg.preprocess = cache_cfg.preprocess,
        None => warn!("{} has no {EFFECTIVE_CONFIG}; assuming the current preprocessing settings", args.cache.display()),
    }
    cfg.model.image_px = cfg.preprocess.spectro.image_px;
    if args.attention {
        cfg.model.attention = true;
    }
    if let Some(g) = args.gender {
        cfg.model.gender_mode = match g {
            GenderFlag::Baseline => GenderMode::Baseline,
            GenderFlag::Based => GenderMode::GenderBased,
            GenderFlag::Specific => GenderMode::GenderSpecific,
        };
    }
    let t = &mut cfg.train;
    t.k_folds = args.folds.unwrap_or(t.k_folds);
    t.max_epochs = args.max_epochs.unwrap_or(t.max_epochs);
    t.patience = args.patience.unwrap_or(t.patience);
    t.batch_size = args.batch_size.unwrap_or(t.batch_size);
    t.lr = args.lr.unwrap_or(t.lr);
    finalize(&mut cfg)?;

    let records = load_manifest(&args.manifest).map_err(|e| CliError::Validation(e.to_string()))?;
    let patches = load_patch_cache(&args.cache).map_err(runtime)?;
    require_cached(records.iter().filter(|r| r.fold != FoldAssignment::Test), &patches)?;
    create_dir(&args.out)?;
    cfg.write(&args.out)?;
    let run = RunConfig {
        model: cfg.model.clone(),
        train: cfg.train.clone(),
    };
    let summary = run_training(&args.out, &records, &patches, &run).map_err(harness_err)?;
    for f in &summary.metrics.folds {
        println!(
            "fold {}: auc {} sensitivity {} specificity {} epochs {}",
            f.fold,
            fmt_metric(f.metrics.auc),
            fmt_metric(f.metrics.sensitivity),
            fmt_metric(f.metrics.specificity),
            f.models.iter().map(|m| m.epochs_trained.to_string()).collect::<Vec<_>>().join("/")
        );
    }
    let m = &summary.metrics.mean;
    println!("mean: auc {} sensitivity {} specificity {}", fmt_metric(m.auc), fmt_metric(m.sensitivity), fmt_metric(m.specificity));
    println!("run written to {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct Evaluation<'a> {
    split: &'a str,
    recordings: usize,
    metrics: SplitMetrics,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let run_cfg = args.run.join(EFFECTIVE_CONFIG);
    let base: Vec<&Path> = if run_cfg.exists() { vec![run_cfg.as_path()] } else { Vec::new() };
    let mut cfg = load_config(&args.common, &base)?;
    finalize(&mut cfg)?;
    let models = ModelSet::load(&args.run.join("final"), "checkpoint").map_err(runtime)?;

    let records = load_manifest(&args.manifest).map_err(|e| CliError::Validation(e.to_string()))?;
    let (split, chosen): (&str, Vec<&SampleRecord>) = if args.all {
        ("all", records.iter().collect())
    } else {
        ("test", records.iter().filter(|r| r.fold == FoldAssignment::Test).collect())
    };
    if chosen.is_empty() {
        return Err(CliError::Validation(format!("the manifest has no {split} recordings; pass --all to score every record")));
    }
    let patches = load_patch_cache(&args.cache).map_err(runtime)?;
    require_cached(chosen.iter().copied(), &patches)?;
    let chunk = cfg.train.eval_batch;
    let scores: Vec<Result<RecordingScore, HarnessError>> = thread_pool(cfg.workers)?.install(|| {
        chosen
            .par_iter()
            .map(|r| {
                let p = predict_recording(&models, &patches[&r.id], Some(r.gender), chunk)?;
                Ok(RecordingScore {
                    id: r.id.clone(),
                    score: p.score,
                    label: Some(r.label),
                })
            })
            .collect()
    });
    let scores: Vec<RecordingScore> = scores.into_iter().collect::<Result<_, _>>().map_err(harness_err)?;
    let metrics = split_metrics(&scores, cfg.train.target_sensitivity).map_err(harness_err)?;

    let out = args.out.clone().unwrap_or_else(|| args.run.join("evaluation"));
    create_dir(&out)?;
    write_predictions(&out.join("predictions.csv"), &scores).map_err(runtime)?;
    let report = Evaluation {
        split,
        recordings: scores.len(),
        metrics,
    };
    let path = out.join("evaluation.json");
    fs::write(&path, serde_json::to_string_pretty(&report).expect("serializable") + "\n").map_err(runtime)?;
    cfg.write(&out)?;
    let m = &report.metrics;
    println!(
        "{split} ({} recordings): auc {} sensitivity {} specificity {}",
        report.recordings,
        fmt_metric(m.auc),
        fmt_metric(m.sensitivity),
        fmt_metric(m.specificity)
    );
    Ok(())
}

/// Loads a checkpoint file, a directory of checkpoints or a run directory.
/// Also returns the directory whose echoed config applies, if any.
fn load_models(path: &Path) -> Result<(ModelSet, Option<PathBuf>), CliError> {
    if path.is_file() {
        return Ok((ModelSet::Single(CoughCnn::load(path).map_err(runtime)?), None));
    }
    if !path.is_dir() {
        return Err(CliError::Validation(format!("model {} does not exist", path.display())));
    }
    let final_dir = path.join("final");
    let dir = if final_dir.is_dir() { final_dir } else { path.to_path_buf() };
    let models = ModelSet::load(&dir, "checkpoint").map_err(runtime)?;
    let echoed = path.join(EFFECTIVE_CONFIG);
    Ok((models, echoed.exists().then(|| path.to_path_buf())))
}

fn is_wav(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

type Scored = (Vec<Arc<Patch>>, RecordingPrediction);

pub fn predict(args: &PredictArgs) -> Result<(), CliError> {
    let (models, run_dir) = load_models(&args.model)?;
    let echoed = run_dir.map(|d| d.join(EFFECTIVE_CONFIG));
    let base: Vec<&Path> = echoed.iter().map(PathBuf::as_path).collect();
    let mut cfg = load_config(&args.common, &base)?;
    let model_px = models.route(Some(Gender::Female)).map_err(runtime)?.config().image_px;
    if cfg.preprocess.spectro.image_px != model_px {
        info!("rendering {model_px} px patches to match the model");
        cfg.preprocess.spectro.image_px = model_px;
    }
    cfg.model = models.route(Some(Gender::Female)).map_err(runtime)?.config().clone();
    finalize(&mut cfg)?;

    let flag_gender = args.gender.map(|g| match g {
        SexFlag::Female => Gender::Female,
        SexFlag::Male => Gender::Male,
    });
    let inputs: Vec<RecordingInput> = if is_wav(&args.input) {
        let id = args.input.file_stem().map_or_else(|| "recording".to_string(), |s| s.to_string_lossy().into_owned());
        vec![RecordingInput {
            id,
            path: args.input.clone(),
            label: None,
            gender: flag_gender,
        }]
    } else {
        let (mut inputs, has_gender) = load_inputs(&args.input).map_err(|e| CliError::Validation(e.to_string()))?;
        if !has_gender {
            for r in &mut inputs {
                r.gender = r.gender.or(flag_gender);
            }
        }
        inputs
    };
    if models.needs_gender() {
        if let Some(r) = inputs.iter().find(|r| r.gender.is_none()) {
            return Err(CliError::Validation(format!(
                "the model is gender-aware but recording {:?} has no gender; add a gender column or pass --gender",
                r.id
            )));
        }
    }

    let chunk = cfg.train.eval_batch;
    let outcomes: Vec<Result<Scored, String>> = thread_pool(cfg.workers)?.install(|| {
        inputs
            .par_iter()
            .map(|r| {
                let pre = preprocess_file(&r.path, &r.id, &cfg.preprocess).map_err(|e| e.to_string())?;
                let patches: Vec<Arc<Patch>> = pre.patches.into_iter().map(Arc::new).collect();
                let pred = predict_recording(&models, &patches, r.gender, chunk).map_err(|e| e.to_string())?;
                Ok((patches, pred))
            })
            .collect()
    });

    create_dir(&args.out)?;
    let mut rows = csv::Writer::from_path(args.out.join("predictions.csv")).map_err(runtime)?;
    rows.write_record(["id", "score", "patches"]).map_err(runtime)?;
    let mut detail = if args.verbose {
        let mut w = csv::Writer::from_path(args.out.join("patches.csv")).map_err(runtime)?;
        w.write_record(["id", "patch", "start_s", "probability", "alpha_0", "alpha_1", "alpha_2", "alpha_3"]).map_err(runtime)?;
        Some(w)
    } else {
        None
    };
    let mut failures = Vec::new();
    for (rec, outcome) in inputs.iter().zip(outcomes) {
        let (patches, pred) = match outcome {
            Ok(v) => v,
            Err(reason) => {
                failures.push(Failure {
                    id: rec.id.clone(),
                    path: rec.path.clone(),
                    reason,
                });
                continue;
            }
        };
        rows.write_record([rec.id.clone(), pred.score.to_string(), patches.len().to_string()]).map_err(runtime)?;
        if let Some(w) = detail.as_mut() {
            for (i, (patch, prob)) in patches.iter().zip(&pred.patch_probs).enumerate() {
                let alpha: Vec<String> = match &pred.alpha {
                    Some(a) => a[i].iter().map(|v| v.to_string()).collect(),
                    None => vec![String::new(); 4],
                };
                let mut record = vec![rec.id.clone(), i.to_string(), patch.start_s.to_string(), prob.to_string()];
                record.extend(alpha);
                w.write_record(&record).map_err(runtime)?;
            }
        }
    }
    rows.flush().map_err(runtime)?;
    if let Some(mut w) = detail {
        w.flush().map_err(runtime)?;
    }
    let report = args.out.join("failures.csv");
    if !failures.is_empty() {
        write_failures(&report, &failures)?;
    }
    cfg.write(&args.out)?;
    println!("scored {} recordings; predictions in {}", inputs.len() - failures.len(), args.out.join("predictions.csv").display());
    batch_status("prediction", inputs.len() - failures.len(), &failures, &report)
}
