//! The cough CNN, its configuration and the gender-aware variants.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{contextual_attention, AttentionMode, AttentionVars};
use crate::dataset::{Gender, Label};
use crate::nn::{kaiming_uniform, Adam, BatchStats, BnMode, Checkpoint, CheckpointError, Graph, NnError, ParamSet, Tensor, Var};
use crate::spectro::RgbImage;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("this model needs the subject's gender")]
    MissingGender,
    #[error("no {0} model available")]
    MissingModel(Gender),
    #[error("input image is {got}x{got_h}, model expects {want}x{want}")]
    ImageSize { got: usize, got_h: usize, want: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint does not match the model: {0}")]
    Incompatible(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    #[default]
    CoughCnn,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenderMode {
    /// Gender is ignored.
    #[default]
    Baseline,
    /// One model; a gender one-hot is appended to the flattened features.
    #[serde(alias = "based")]
    GenderBased,
    /// One model per gender, selected by the subject's gender.
    #[serde(alias = "specific")]
    GenderSpecific,
}

impl GenderMode {
    /// Whether predicting needs the subject's gender.
    pub fn needs_gender(self) -> bool {
        self != GenderMode::Baseline
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub attention: bool,
    pub attention_mode: AttentionMode,
    pub gender_mode: GenderMode,
    /// Side of the square RGB input.
    pub image_px: usize,
    pub conv_channels: [usize; 2],
    pub fc_hidden: usize,
    pub classes: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::CoughCnn,
            attention: false,
            attention_mode: AttentionMode::Scale,
            gender_mode: GenderMode::Baseline,
            image_px: 256,
            conv_channels: [32, 64],
            fc_hidden: 128,
            classes: 2,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

/// Side of the pooled feature grid.
const GRID: usize = 2;

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.image_px < 2 * GRID {
            return fail("image_px must be at least 4");
        }
        if self.conv_channels.contains(&0) || self.fc_hidden == 0 {
            return fail("layer widths must be positive");
        }
        if self.classes != 2 {
            return fail("the classifier is binary (classes = 2)");
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return fail("bn_momentum must be in [0, 1] and bn_eps positive");
        }
        Ok(())
    }

    /// Width of the first fully connected layer's input.
    pub fn fc_input_dim(&self) -> usize {
        let c = self.conv_channels[1];
        let features = if self.attention && self.attention_mode == AttentionMode::WeightedSum { c } else { c * GRID * GRID };
        features + if self.gender_mode == GenderMode::GenderBased { 2 } else { 0 }
    }
}

/// Converts RGB images into a `[N,3,H,W]` tensor scaled to [0,1].
pub fn images_to_tensor(images: &[&RgbImage], px: usize) -> Result<Tensor<f32>, ModelError> {
    let plane = px * px;
    let mut data = vec![0f32; images.len() * 3 * plane];
    for (n, img) in images.iter().enumerate() {
        if img.width() != px || img.height() != px {
            return Err(ModelError::ImageSize {
                got: img.width(),
                got_h: img.height(),
                want: px,
            });
        }
        let base = n * 3 * plane;
        for (i, rgb) in img.as_raw().chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[base + c * plane + i] = rgb[c] as f32 / 255.0;
            }
        }
    }
    Ok(Tensor::new(&[images.len(), 3, px, px], data))
}

fn gender_tensor(genders: &[Gender]) -> Tensor<f32> {
    Tensor::new(&[genders.len(), 2], genders.iter().flat_map(|g| g.one_hot()).collect())
}

/// Output of one forward pass.
pub struct ForwardPass {
    pub logits: Var,
    /// Attention weights `[N, 4]` when attention is enabled.
    pub alpha: Option<Var>,
    /// Per-BN-layer batch statistics (training mode only).
    pub bn_stats: Vec<BatchStats>,
}

/// Positive-class probabilities and, with attention, the position weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub probs: Vec<f32>,
    pub alpha: Option<Vec<[f32; 4]>>,
}

const BN_LAYERS: [&str; 2] = ["bn1", "bn2"];

#[derive(Debug, Clone, PartialEq)]
pub struct CoughCnn {
    config: ModelConfig,
    params: ParamSet<f32>,
    /// Batch-norm running statistics, not trained by gradient.
    buffers: ParamSet<f32>,
}

impl CoughCnn {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let [c1, c2] = config.conv_channels;
        let mut params = ParamSet::new();
        params.add("conv1.weight", kaiming_uniform(&[c1, 3, 3, 3], 27, rng));
        params.add("conv1.bias", Tensor::zeros(&[c1]));
        params.add("bn1.weight", Tensor::full(&[c1], 1.0));
        params.add("bn1.bias", Tensor::zeros(&[c1]));
        params.add("conv2.weight", kaiming_uniform(&[c2, c1, 3, 3], c1 * 9, rng));
        params.add("conv2.bias", Tensor::zeros(&[c2]));
        params.add("bn2.weight", Tensor::full(&[c2], 1.0));
        params.add("bn2.bias", Tensor::zeros(&[c2]));
        if config.attention {
            let att = crate::attention::AttentionParams::<f32>::init(c2, rng);
            params.add("attention.w", att.w);
            params.add("attention.b", att.b);
            params.add("attention.u_c", att.u_c);
        }
        let d = config.fc_input_dim();
        params.add("fc1.weight", kaiming_uniform(&[d, config.fc_hidden], d, rng));
        params.add("fc1.bias", Tensor::zeros(&[config.fc_hidden]));
        params.add("fc2.weight", kaiming_uniform(&[config.fc_hidden, config.classes], config.fc_hidden, rng));
        params.add("fc2.bias", Tensor::zeros(&[config.classes]));

        let mut buffers = ParamSet::new();
        for (name, c) in BN_LAYERS.iter().zip([c1, c2]) {
            buffers.add(format!("{name}.running_mean"), Tensor::zeros(&[c]));
            buffers.add(format!("{name}.running_var"), Tensor::full(&[c], 1.0));
        }
        Ok(Self { config, params, buffers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamSet<f32> {
        &self.buffers
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    fn p(&self, vars: &[Var], name: &str) -> Var {
        vars[self.params.index_of(name).expect("parameter registered at build")]
    }

    fn running(&self, layer: &str) -> (Vec<f64>, Vec<f64>) {
        let get = |suffix: &str| {
            let i = self.buffers.index_of(&format!("{layer}.{suffix}")).expect("buffer registered at build");
            self.buffers.get(i).to_f64_vec()
        };
        (get("running_mean"), get("running_var"))
    }

    /// Records the forward pass on `g`. `vars` are the bound parameters.
    /// `genders` is required in gender-based mode and ignored otherwise.
    pub fn forward(&self, g: &mut Graph<f32>, vars: &[Var], images: Tensor<f32>, genders: Option<&[Gender]>, train: bool) -> Result<ForwardPass, ModelError> {
        let n = images.shape()[0];
        let gender_input = match self.config.gender_mode {
            GenderMode::GenderBased => {
                let gs = genders.ok_or(ModelError::MissingGender)?;
                if gs.len() != n {
                    return Err(ModelError::Config(format!("{} genders for {n} images", gs.len())));
                }
                Some(gender_tensor(gs))
            }
            _ => None,
        };
        let eps = self.config.bn_eps;
        let mut bn_stats = Vec::new();
        let mut block = |g: &mut Graph<f32>, x: Var, layer: usize| -> Result<Var, ModelError> {
            let conv = format!("conv{}", layer + 1);
            let bn = BN_LAYERS[layer];
            let y = g.conv2d(x, self.p(vars, &format!("{conv}.weight")), self.p(vars, &format!("{conv}.bias")), 1, 1)?;
            let (gamma, beta) = (self.p(vars, &format!("{bn}.weight")), self.p(vars, &format!("{bn}.bias")));
            let (y, stats) = if train {
                g.batch_norm(y, gamma, beta, BnMode::Train, eps)?
            } else {
                let (mean, var) = self.running(bn);
                g.batch_norm(y, gamma, beta, BnMode::Eval { mean: &mean, var: &var }, eps)?
            };
            bn_stats.extend(stats);
            Ok(g.relu(y)?)
        };

        let x = g.constant(images);
        let h = block(g, x, 0)?;
        let h = g.max_pool2(h)?;
        let h = block(g, h, 1)?;
        let h = g.adaptive_avg_pool(h, GRID, GRID)?;

        let (features, alpha) = if self.config.attention {
            let positions = g.to_positions(h)?;
            let att = AttentionVars {
                w: self.p(vars, "attention.w"),
                b: self.p(vars, "attention.b"),
                u_c: self.p(vars, "attention.u_c"),
            };
            let (out, alpha) = contextual_attention(g, positions, att, self.config.attention_mode)?;
            (out, Some(alpha))
        } else {
            (h, None)
        };
        let width = g.value(features).numel() / n;
        let mut flat = g.reshape(features, &[n, width])?;
        if let Some(code) = gender_input {
            let code = g.constant(code);
            flat = g.concat_cols(flat, code)?;
        }
        let hidden = g.linear(flat, self.p(vars, "fc1.weight"), Some(self.p(vars, "fc1.bias")))?;
        let hidden = g.relu(hidden)?;
        let logits = g.linear(hidden, self.p(vars, "fc2.weight"), Some(self.p(vars, "fc2.bias")))?;
        Ok(ForwardPass { logits, alpha, bn_stats })
    }

    /// One optimizer step on a batch; returns the mean cross-entropy.
    pub fn train_step(&mut self, adam: &mut Adam, images: Tensor<f32>, labels: &[Label], genders: &[Gender]) -> Result<f64, ModelError> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, true);
        let pass = self.forward(&mut g, &vars, images, Some(genders), true)?;
        let targets: Vec<usize> = labels.iter().map(|l| l.class_index()).collect();
        let loss = g.softmax_cross_entropy(pass.logits, &targets)?;
        let loss_value = g.value(loss).data()[0] as f64;
        g.backward(loss)?;
        let grads: Vec<_> = vars.iter().map(|&v| g.grad(v)).collect();
        adam.step(&mut self.params, &grads);
        self.update_running_stats(&pass.bn_stats);
        Ok(loss_value)
    }

    fn update_running_stats(&mut self, stats: &[BatchStats]) {
        let m = self.config.bn_momentum;
        for (layer, s) in BN_LAYERS.iter().zip(stats) {
            let unbias = s.count as f64 / (s.count as f64 - 1.0).max(1.0);
            for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                let i = self.buffers.index_of(&format!("{layer}.{suffix}")).expect("buffer registered at build");
                let scale = if suffix == "running_var" { unbias } else { 1.0 };
                for (r, &b) in self.buffers.get_mut(i).data_mut().iter_mut().zip(batch.iter()) {
                    *r = ((1.0 - m) * *r as f64 + m * b * scale) as f32;
                }
            }
        }
    }

    /// Evaluation-mode softmax outputs and mean cross-entropy against `labels`.
    pub fn eval_batch(&self, images: Tensor<f32>, labels: Option<&[Label]>, genders: Option<&[Gender]>) -> Result<(Inference, Option<f64>), ModelError> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g, false);
        let pass = self.forward(&mut g, &vars, images, genders, false)?;
        let probs_var = g.softmax(pass.logits)?;
        let probs = g.value(probs_var).data().chunks(2).map(|row| row[1]).collect();
        let alpha = pass
            .alpha
            .map(|a| g.value(a).data().chunks(4).map(|row| [row[0], row[1], row[2], row[3]]).collect());
        let loss = match labels {
            Some(ls) => {
                let targets: Vec<usize> = ls.iter().map(|l| l.class_index()).collect();
                let loss = g.softmax_cross_entropy(pass.logits, &targets)?;
                Some(g.value(loss).data()[0] as f64)
            }
            None => None,
        };
        Ok((Inference { probs, alpha }, loss))
    }

    /// Positive-class probability of each image, evaluated in chunks.
    pub fn predict(&self, images: &[&RgbImage], genders: Option<&[Gender]>, chunk: usize) -> Result<Inference, ModelError> {
        let mut probs = Vec::with_capacity(images.len());
        let mut alpha: Option<Vec<[f32; 4]>> = self.config.attention.then(Vec::new);
        for (i, part) in images.chunks(chunk.max(1)).enumerate() {
            let gs = genders.map(|g| &g[i * chunk.max(1)..i * chunk.max(1) + part.len()]);
            let (inf, _) = self.eval_batch(images_to_tensor(part, self.config.image_px)?, None, gs)?;
            probs.extend(inf.probs);
            if let (Some(all), Some(a)) = (alpha.as_mut(), inf.alpha) {
                all.extend(a);
            }
        }
        Ok(Inference { probs, alpha })
    }

    /// Probability of the positive class for one patch image.
    pub fn predict_patch(&self, image: &RgbImage, gender: Option<Gender>) -> Result<f32, ModelError> {
        if self.config.gender_mode == GenderMode::GenderBased && gender.is_none() {
            return Err(ModelError::MissingGender);
        }
        let genders: Vec<Gender> = gender.into_iter().collect();
        let inf = self.predict(&[image], gender.map(|_| genders.as_slice()), 1)?;
        Ok(inf.probs[0])
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let config_json = serde_json::to_string(&self.config).expect("config serializes");
        let tensors = self
            .params
            .iter()
            .chain(self.buffers.iter())
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        Checkpoint { config_json, tensors }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let config: ModelConfig = serde_json::from_str(&ck.config_json).map_err(|e| ModelError::Incompatible(format!("config: {e}")))?;
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut model = Self::new(config, &mut rng)?;
        let expected = model.params.len() + model.buffers.len();
        if ck.tensors.len() != expected {
            return Err(ModelError::Incompatible(format!("{} tensors, expected {expected}", ck.tensors.len())));
        }
        for (name, t) in &ck.tensors {
            let slot = match (model.params.index_of(name), model.buffers.index_of(name)) {
                (Some(i), _) => model.params.get_mut(i),
                (None, Some(i)) => model.buffers.get_mut(i),
                (None, None) => return Err(ModelError::Incompatible(format!("unknown tensor {name}"))),
            };
            if slot.shape() != t.shape() {
                return Err(ModelError::Incompatible(format!("{name}: shape {:?}, expected {:?}", t.shape(), slot.shape())));
            }
            *slot = t.clone();
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// A trained predictor: one model, or one per gender.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSet {
    Single(CoughCnn),
    PerGender { female: CoughCnn, male: CoughCnn },
}

impl ModelSet {
    pub fn gender_mode(&self) -> GenderMode {
        match self {
            ModelSet::Single(m) => m.config.gender_mode,
            ModelSet::PerGender { .. } => GenderMode::GenderSpecific,
        }
    }

    pub fn needs_gender(&self) -> bool {
        self.gender_mode().needs_gender()
    }

    /// The model that scores a subject of the given gender.
    pub fn route(&self, gender: Option<Gender>) -> Result<&CoughCnn, ModelError> {
        match self {
            ModelSet::Single(m) => Ok(m),
            ModelSet::PerGender { female, male } => match gender.ok_or(ModelError::MissingGender)? {
                Gender::Female => Ok(female),
                Gender::Male => Ok(male),
            },
        }
    }

    /// Checkpoint paths: `<stem>.bin` or `<stem>_female.bin` and `<stem>_male.bin`.
    pub fn checkpoint_paths(dir: &Path, stem: &str, mode: GenderMode) -> Vec<(Option<Gender>, std::path::PathBuf)> {
        if mode == GenderMode::GenderSpecific {
            Gender::ALL.iter().map(|&g| (Some(g), dir.join(format!("{stem}_{g}.bin")))).collect()
        } else {
            vec![(None, dir.join(format!("{stem}.bin")))]
        }
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), ModelError> {
        match self {
            ModelSet::Single(m) => m.save(&dir.join(format!("{stem}.bin"))),
            ModelSet::PerGender { female, male } => {
                female.save(&dir.join(format!("{stem}_female.bin")))?;
                male.save(&dir.join(format!("{stem}_male.bin")))
            }
        }
    }

    /// Loads `<stem>.bin`, or the `_female`/`_male` pair when present.
    pub fn load(dir: &Path, stem: &str) -> Result<Self, ModelError> {
        let single = dir.join(format!("{stem}.bin"));
        if single.exists() {
            return Ok(ModelSet::Single(CoughCnn::load(&single)?));
        }
        let female = CoughCnn::load(&dir.join(format!("{stem}_female.bin")))?;
        let male = CoughCnn::load(&dir.join(format!("{stem}_male.bin")))?;
        Ok(ModelSet::PerGender { female, male })
    }
}

/// Fails unless every gender has at least one record, as gender-specific
/// training needs a model for each.
pub fn require_both_genders<'a>(genders: impl IntoIterator<Item = &'a Gender>) -> Result<(), ModelError> {
    let mut seen = [false; 2];
    for g in genders {
        seen[*g as usize] = true;
    }
    match seen {
        [false, _] => Err(ModelError::MissingModel(Gender::Female)),
        [_, false] => Err(ModelError::MissingModel(Gender::Male)),
        _ => Ok(()),
    }
}
