//! Training with early stopping, k-fold cross-validation, refitting on all
//! training material, and recording-level scoring.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{balance_by_replication, split_folds, DatasetError, FoldAssignment, Gender, Label, PatchDataset, SampleRecord};
use crate::metrics::{auc, sens_spec_at, MetricsError};
use crate::models::{images_to_tensor, require_both_genders, CoughCnn, GenderMode, ModelConfig, ModelError, ModelSet};
use crate::nn::{Adam, AdamConfig};
use crate::spectro::{Patch, RgbImage};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0} split is empty")]
    EmptySplit(String),
    #[error("recording {0:?} has no patches")]
    NoPatches(String),
    #[error("cannot write {path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub k_folds: usize,
    pub seed: u64,
    /// Sensitivity at which the operating point is reported.
    pub target_sensitivity: f64,
    /// Images per forward pass during evaluation.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            k_folds: 5,
            seed: 0,
            target_sensitivity: 0.8,
            eval_batch: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2 (batch normalization)");
        }
        if self.max_epochs == 0 || self.patience == 0 || self.eval_batch == 0 {
            return fail("max_epochs, patience and eval_batch must be positive");
        }
        if self.patience > self.max_epochs {
            return fail("patience must not exceed max_epochs");
        }
        if self.k_folds < 2 {
            return fail("k_folds must be at least 2");
        }
        if !(self.target_sensitivity > 0.0 && self.target_sensitivity <= 1.0) {
            return fail("target_sensitivity must be in (0, 1]");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, ..Default::default() }
    }
}

/// Stops after `patience` consecutive epochs without a strict decrease of
/// the validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    epoch: usize,
    best_loss: f64,
    best_epoch: usize,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            epoch: 0,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Feeds the validation loss of the next epoch (epochs count from 1).
    pub fn observe(&mut self, val_loss: f64) -> StopDecision {
        self.epoch += 1;
        let improved = val_loss < self.best_loss;
        if improved {
            self.best_loss = val_loss;
            self.best_epoch = self.epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    pub fn epochs_seen(&self) -> usize {
        self.epoch
    }
}

/// Median; an even count gives the mean of the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { (v[mid - 1] + v[mid]) / 2.0 })
}

/// Order statistic at index `floor((k-1)/2)`, so even counts take the lower middle.
pub fn lower_median(values: &[usize]) -> Option<usize> {
    let mut v = values.to_vec();
    v.sort_unstable();
    v.get(v.len().checked_sub(1)? / 2).copied()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Result of training one model.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: CoughCnn,
    pub log: Vec<EpochLog>,
    /// Epoch of the kept snapshot (the last epoch when there is no validation set).
    pub epochs_trained: usize,
    pub best_val_loss: Option<f64>,
}

/// RNG for one training run. `slot` 0 is the final refit, `k + 1` fold `k`;
/// `model` separates the per-gender models of a slot.
pub fn run_rng(seed: u64, slot: usize, model: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((slot * 3 + model) as u64);
    rng
}

type Batch = (crate::nn::Tensor<f32>, Vec<Label>, Vec<Gender>);

fn batch_tensors(items: &[&crate::dataset::PatchItem], px: usize) -> Result<Batch, HarnessError> {
    let images: Vec<&RgbImage> = items.iter().map(|i| i.patch.image.as_ref()).collect();
    let tensor = images_to_tensor(&images, px)?;
    Ok((tensor, items.iter().map(|i| i.label).collect(), items.iter().map(|i| i.gender).collect()))
}

/// Mean patch-level cross-entropy in evaluation mode.
pub fn validation_loss(model: &CoughCnn, data: &PatchDataset, chunk: usize) -> Result<f64, HarnessError> {
    if data.is_empty() {
        return Err(HarnessError::EmptySplit("validation".into()));
    }
    let mut total = 0.0;
    for part in data.items.chunks(chunk) {
        let refs: Vec<_> = part.iter().collect();
        let (x, labels, genders) = batch_tensors(&refs, model.config().image_px)?;
        let (_, loss) = model.eval_batch(x, Some(&labels), Some(&genders))?;
        total += loss.expect("labels supplied") * part.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Trains a fresh model on `train` (balanced here). With `val`, stops early
/// and returns the best-epoch snapshot; without, runs exactly `epochs`.
pub fn train_model(
    train: &PatchDataset,
    val: Option<&PatchDataset>,
    model_config: &ModelConfig,
    config: &TrainConfig,
    epochs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrainedModel, HarnessError> {
    if train.is_empty() {
        return Err(HarnessError::EmptySplit("training".into()));
    }
    if let Some(v) = val {
        if v.is_empty() {
            return Err(HarnessError::EmptySplit("validation".into()));
        }
    }
    let balanced = balance_by_replication(train)?;
    if balanced.len() < 2 {
        return Err(HarnessError::EmptySplit("training (fewer than 2 patches)".into()));
    }
    let mut model = CoughCnn::new(model_config.clone(), rng)?;
    let mut adam = Adam::new(config.adam(), model.params());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..balanced.len()).collect();

    for epoch in 1..=epochs {
        order.shuffle(rng);
        let mut batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        if batches.last().is_some_and(|b| b.len() == 1) {
            batches.pop();
        }
        let mut loss_sum = 0.0;
        let mut seen = 0;
        for batch in batches {
            let items: Vec<_> = batch.iter().map(|&i| &balanced.items[i]).collect();
            let (x, labels, genders) = batch_tensors(&items, model_config.image_px)?;
            loss_sum += model.train_step(&mut adam, x, &labels, &genders)? * batch.len() as f64;
            seen += batch.len();
        }
        let train_loss = loss_sum / seen as f64;
        let val_loss = val.map(|v| validation_loss(&model, v, config.eval_batch)).transpose()?;
        log.push(EpochLog { epoch, train_loss, val_loss });
        match val_loss {
            Some(vl) => {
                let decision = stopper.observe(vl);
                info!("epoch {epoch}: train loss {train_loss:.4}, validation loss {vl:.4}");
                if decision.improved {
                    best = model.clone();
                }
                if decision.stop {
                    info!("early stop after epoch {epoch}, best epoch {}", stopper.best_epoch());
                    break;
                }
            }
            None => info!("epoch {epoch}: train loss {train_loss:.4}"),
        }
    }
    Ok(match val {
        Some(_) => TrainedModel {
            model: best,
            log,
            epochs_trained: stopper.best_epoch(),
            best_val_loss: Some(stopper.best_loss()),
        },
        None => TrainedModel {
            model,
            epochs_trained: log.len(),
            log,
            best_val_loss: None,
        },
    })
}

/// Score of one recording plus the per-patch details behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordingPrediction {
    pub score: f64,
    pub patch_probs: Vec<f32>,
    pub alpha: Option<Vec<[f32; 4]>>,
}

/// Median of the patch probabilities of one recording.
pub fn predict_recording(models: &ModelSet, patches: &[Arc<Patch>], gender: Option<Gender>, chunk: usize) -> Result<RecordingPrediction, HarnessError> {
    let Some(first) = patches.first() else {
        return Err(HarnessError::NoPatches(String::new()));
    };
    let model = models.route(gender)?;
    let images: Vec<&RgbImage> = patches.iter().map(|p| p.image.as_ref()).collect();
    let genders = gender.map(|g| vec![g; images.len()]);
    let inf = model.predict(&images, genders.as_deref(), chunk)?;
    let probs: Vec<f64> = inf.probs.iter().map(|&p| p as f64).collect();
    let score = median(&probs).ok_or_else(|| HarnessError::NoPatches(first.source_id.clone()))?;
    Ok(RecordingPrediction {
        score,
        patch_probs: inf.probs,
        alpha: inf.alpha,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingScore {
    pub id: String,
    pub score: f64,
    pub label: Option<Label>,
}

/// Recording-level metrics; absent values are undefined for the split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub auc: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub threshold: Option<f64>,
}

pub fn split_metrics(scores: &[RecordingScore], target_sensitivity: f64) -> Result<SplitMetrics, HarnessError> {
    let labelled: Vec<(f64, bool)> = scores.iter().filter_map(|s| s.label.map(|l| (s.score, l.is_positive()))).collect();
    let (s, l): (Vec<f64>, Vec<bool>) = labelled.into_iter().unzip();
    let area = auc(&s, &l)?;
    let op = if l.iter().any(|&x| x) { Some(sens_spec_at(&s, &l, target_sensitivity)?) } else { None };
    Ok(SplitMetrics {
        auc: area,
        sensitivity: op.map(|o| o.sensitivity),
        specificity: op.and_then(|o| o.specificity),
        threshold: op.map(|o| o.threshold),
    })
}

/// One trained model inside a fold (two for gender-specific runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRun {
    pub gender: Option<Gender>,
    pub epochs_trained: usize,
    pub epochs_run: usize,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub models: Vec<ModelRun>,
    pub metrics: SplitMetrics,
}

impl FoldResult {
    /// Epochs of the kept snapshot; the first model's for gender-specific folds.
    pub fn epochs_trained(&self) -> usize {
        self.models[0].epochs_trained
    }
}

/// Fold averages; folds with an undefined value are left out of that mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub auc: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub folds_without_auc: usize,
}

pub fn mean_metrics(folds: &[FoldResult]) -> MeanMetrics {
    let mean = |f: fn(&SplitMetrics) -> Option<f64>| {
        let vals: Vec<f64> = folds.iter().filter_map(|r| f(&r.metrics)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let missing = folds.iter().filter(|f| f.metrics.auc.is_none()).count();
    if missing > 0 {
        warn!("{missing} fold(s) have an undefined AUC (single-class validation split) and are excluded from the mean");
    }
    MeanMetrics {
        auc: mean(|m| m.auc),
        sensitivity: mean(|m| m.sensitivity),
        specificity: mean(|m| m.specificity),
        folds_without_auc: missing,
    }
}

/// Patches of every recording, keyed by recording id.
pub type PatchIndex = HashMap<String, Vec<Arc<Patch>>>;

/// Output of the cross-validation stage.
#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub folds: Vec<FoldResult>,
    pub mean: MeanMetrics,
    /// Out-of-fold validation scores, in record order.
    pub predictions: Vec<RecordingScore>,
    /// Best snapshots per fold, with the per-model training logs.
    pub models: Vec<(ModelSet, Vec<Vec<EpochLog>>)>,
}

/// Model slots of a run: one unnamed model, or one per gender.
fn model_slots(mode: GenderMode) -> Vec<Option<Gender>> {
    if mode == GenderMode::GenderSpecific {
        Gender::ALL.iter().map(|&g| Some(g)).collect()
    } else {
        vec![None]
    }
}

fn slot_index(gender: Option<Gender>) -> usize {
    gender.map_or(0, |g| g as usize + 1)
}

fn select<'a>(records: &[&'a SampleRecord], gender: Option<Gender>) -> Vec<&'a SampleRecord> {
    records.iter().copied().filter(|r| gender.is_none_or(|g| r.gender == g)).collect()
}

fn assemble(mut trained: Vec<(Option<Gender>, CoughCnn)>) -> ModelSet {
    if trained.len() == 1 {
        return ModelSet::Single(trained.pop().expect("one model").1);
    }
    let mut female = None;
    let mut male = None;
    for (g, m) in trained {
        match g {
            Some(Gender::Female) => female = Some(m),
            Some(Gender::Male) => male = Some(m),
            None => unreachable!("unnamed model in a per-gender run"),
        }
    }
    ModelSet::PerGender {
        female: female.expect("female model trained"),
        male: male.expect("male model trained"),
    }
}

fn check_inputs(records: &[SampleRecord], patches: &PatchIndex, model_config: &ModelConfig, config: &TrainConfig) -> Result<(), HarnessError> {
    config.validate()?;
    model_config.validate()?;
    for r in records.iter().filter(|r| r.fold != FoldAssignment::Test) {
        if patches.get(&r.id).is_none_or(|p| p.is_empty()) {
            return Err(HarnessError::NoPatches(r.id.clone()));
        }
    }
    if model_config.gender_mode == GenderMode::GenderSpecific {
        require_both_genders(records.iter().map(|r| &r.gender))?;
    }
    Ok(())
}

/// Trains one model (or one per gender) per fold, each validated on its
/// held-out fold, and scores the held-out recordings.
pub fn cross_validate(records: &[SampleRecord], patches: &PatchIndex, model_config: &ModelConfig, config: &TrainConfig) -> Result<CrossValidation, HarnessError> {
    check_inputs(records, patches, model_config, config)?;
    let mut folds = Vec::new();
    let mut predictions: Vec<(usize, RecordingScore)> = Vec::new();
    let mut models = Vec::new();
    let position: HashMap<&str, usize> = records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();

    for k in 0..config.k_folds {
        let (train, val) = split_folds(records, config.k_folds, k)?;
        if val.is_empty() || train.is_empty() {
            return Err(HarnessError::EmptySplit(format!("fold {k}")));
        }
        info!("fold {k}: {} training and {} validation recordings", train.len(), val.len());
        let mut runs = Vec::new();
        let mut trained = Vec::new();
        let mut logs = Vec::new();
        for gender in model_slots(model_config.gender_mode) {
            let train_ds = PatchDataset::build(&select(&train, gender), patches)?;
            let val_ds = PatchDataset::build(&select(&val, gender), patches)?;
            let mut rng = run_rng(config.seed, k + 1, slot_index(gender));
            let t = train_model(&train_ds, Some(&val_ds), model_config, config, config.max_epochs, &mut rng)?;
            runs.push(ModelRun {
                gender,
                epochs_trained: t.epochs_trained,
                epochs_run: t.log.len(),
                best_val_loss: t.best_val_loss.expect("validated run"),
            });
            logs.push(t.log);
            trained.push((gender, t.model));
        }
        let set = assemble(trained);
        let mut scores = Vec::new();
        for r in &val {
            let pred = predict_recording(&set, &patches[&r.id], Some(r.gender), config.eval_batch)?;
            scores.push(RecordingScore {
                id: r.id.clone(),
                score: pred.score,
                label: Some(r.label),
            });
        }
        let metrics = split_metrics(&scores, config.target_sensitivity)?;
        info!("fold {k}: AUC {:?}", metrics.auc);
        predictions.extend(scores.into_iter().map(|s| (position[s.id.as_str()], s)));
        folds.push(FoldResult { fold: k, models: runs, metrics });
        models.push((set, logs));
    }
    predictions.sort_by_key(|(i, _)| *i);
    Ok(CrossValidation {
        mean: mean_metrics(&folds),
        folds,
        predictions: predictions.into_iter().map(|(_, s)| s).collect(),
        models,
    })
}

/// Epoch budget of the refit for each model slot: lower median over folds.
pub fn refit_epochs(folds: &[FoldResult]) -> Vec<usize> {
    let slots = folds.first().map_or(0, |f| f.models.len());
    (0..slots)
        .map(|s| {
            let epochs: Vec<usize> = folds.iter().map(|f| f.models[s].epochs_trained).collect();
            lower_median(&epochs).expect("at least one fold")
        })
        .collect()
}

/// Trains on every non-test record, without validation, for the given
/// epoch counts (one per model slot).
pub fn refit_full(records: &[SampleRecord], patches: &PatchIndex, model_config: &ModelConfig, config: &TrainConfig, epochs: &[usize]) -> Result<ModelSet, HarnessError> {
    check_inputs(records, patches, model_config, config)?;
    let all: Vec<&SampleRecord> = records.iter().filter(|r| r.fold != FoldAssignment::Test).collect();
    let mut trained = Vec::new();
    for (gender, &n) in model_slots(model_config.gender_mode).into_iter().zip(epochs) {
        let ds = PatchDataset::build(&select(&all, gender), patches)?;
        let mut rng = run_rng(config.seed, 0, slot_index(gender));
        info!("refit on {} patches for {n} epochs", ds.len());
        trained.push((gender, train_model(&ds, None, model_config, config, n, &mut rng)?.model));
    }
    Ok(assemble(trained))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub folds: Vec<FoldResult>,
    pub mean: MeanMetrics,
    pub refit_epochs: Vec<usize>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn write_log(path: &Path, log: &[EpochLog]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let csv_err = |e: csv::Error| HarnessError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    w.write_record(["epoch", "train_loss", "val_loss"]).map_err(csv_err)?;
    for e in log {
        let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([e.epoch.to_string(), e.train_loss.to_string(), val]).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes `id,score,label` rows.
pub fn write_predictions(path: &Path, scores: &[RecordingScore]) -> Result<(), HarnessError> {
    let csv_err = |e: csv::Error| HarnessError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["id", "score", "label"]).map_err(csv_err)?;
    for s in scores {
        let label = s.label.map(|l| l.class_index().to_string()).unwrap_or_default();
        w.write_record([s.id.clone(), s.score.to_string(), label]).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Summary of a complete training run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub metrics: RunMetrics,
    pub final_models: ModelSet,
    pub predictions: Vec<RecordingScore>,
}

/// Cross-validates, refits and writes the run directory:
/// `config.json`, `fold<k>/checkpoint.bin`, `fold<k>/log.csv`,
/// `final/checkpoint.bin`, `metrics.json` and `predictions.csv`.
/// Gender-specific runs write `checkpoint_female.bin` / `checkpoint_male.bin`
/// and `log_female.csv` / `log_male.csv` instead.
pub fn run_training(dir: &Path, records: &[SampleRecord], patches: &PatchIndex, run: &RunConfig) -> Result<RunSummary, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(&dir.join("config.json"), run)?;
    let cv = cross_validate(records, patches, &run.model, &run.train)?;
    for (k, (set, logs)) in cv.models.iter().enumerate() {
        let fold_dir = dir.join(format!("fold{k}"));
        fs::create_dir_all(&fold_dir).map_err(io_err(&fold_dir))?;
        set.save(&fold_dir, "checkpoint")?;
        for (gender, log) in model_slots(run.model.gender_mode).into_iter().zip(logs) {
            let name = gender.map_or("log.csv".to_string(), |g| format!("log_{g}.csv"));
            write_log(&fold_dir.join(name), log)?;
        }
    }
    let epochs = refit_epochs(&cv.folds);
    let final_models = refit_full(records, patches, &run.model, &run.train, &epochs)?;
    let final_dir = dir.join("final");
    fs::create_dir_all(&final_dir).map_err(io_err(&final_dir))?;
    final_models.save(&final_dir, "checkpoint")?;
    let metrics = RunMetrics {
        folds: cv.folds,
        mean: cv.mean,
        refit_epochs: epochs,
    };
    write_json(&dir.join("metrics.json"), &metrics)?;
    write_predictions(&dir.join("predictions.csv"), &cv.predictions)?;
    Ok(RunSummary {
        metrics,
        final_models,
        predictions: cv.predictions,
    })
}
