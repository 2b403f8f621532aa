//! Training loops for the classifier heads and the U-Net.

mod augment;
mod loss;
mod sampler;

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{resample_mask, CategoricalLabel, CtSlice, ModelInput, PreprocessConfig};
use crate::nn::{to_f64_vec, ParamStore};
use crate::swin::{inputs_to_tensor, positive_probability, HeadKind, SwinClassifier, SwinConfig};
use crate::unet::{dice_ce_loss_from_logits, UNet, UNetConfig};

pub use augment::{augment, augment_with_rng, flip_horizontal, rotate_bilinear, rotate_nearest, AugmentParams};
pub use loss::{focal_logistic_loss, focal_softmax_loss, focal_term, PROB_FLOOR};
pub use sampler::InverseFrequencySampler;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    BinaryOneLogit,
    BinaryTwoLogit,
    MultiLabel,
    Unet,
}

impl TrainMode {
    pub fn head_kind(self) -> Option<HeadKind> {
        match self {
            TrainMode::BinaryOneLogit => Some(HeadKind::BinaryOneLogit),
            TrainMode::BinaryTwoLogit => Some(HeadKind::BinaryTwoLogit),
            TrainMode::MultiLabel => Some(HeadKind::MultiLabel),
            TrainMode::Unet => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImbalanceStrategy {
    FocalLoss,
    InverseFrequencySampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub focal_gamma: f64,
    pub seed: u64,
    pub augment: AugmentParams,
    pub imbalance: ImbalanceStrategy,
}

impl TrainConfig {
    /// Settings of the full-scale recipe for `mode`.
    pub fn for_mode(mode: TrainMode) -> Self {
        let (learning_rate, imbalance) = match mode {
            TrainMode::BinaryOneLogit | TrainMode::MultiLabel => (1e-5, ImbalanceStrategy::FocalLoss),
            TrainMode::BinaryTwoLogit => (1e-6, ImbalanceStrategy::InverseFrequencySampling),
            TrainMode::Unet => (1e-3, ImbalanceStrategy::InverseFrequencySampling),
        };
        Self {
            mode,
            learning_rate,
            weight_decay: 0.01,
            batch_size: 16,
            max_epochs: 50,
            patience: 3,
            focal_gamma: 2.0,
            seed: 0,
            augment: AugmentParams::default(),
            imbalance,
        }
    }

    /// Faster settings for small synthetic datasets.
    pub fn desk(mode: TrainMode) -> Self {
        let base = Self::for_mode(mode);
        let (learning_rate, max_epochs) = match mode {
            TrainMode::BinaryOneLogit | TrainMode::MultiLabel => (1e-4, 20),
            TrainMode::BinaryTwoLogit => (1e-4, 5),
            TrainMode::Unet => (3e-3, 12),
        };
        Self {
            learning_rate,
            max_epochs,
            batch_size: 8,
            patience: 5,
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.focal_gamma < 0.0 {
            return Err(Error::Config("focal gamma must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.augment.flip_prob) || self.augment.noise_sigma < 0.0 || self.augment.rotation_deg < 0.0 {
            return Err(Error::Config("augmentation parameters out of range".into()));
        }
        Ok(())
    }

    fn effective_gamma(&self) -> f64 {
        match self.imbalance {
            ImbalanceStrategy::FocalLoss => self.focal_gamma,
            ImbalanceStrategy::InverseFrequencySampling => 0.0,
        }
    }
}

/// A preprocessed slice with its labels and, when available, a pixel mask at model resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: ModelInput,
    pub label: CategoricalLabel,
    pub gt_mask: Option<Array2<u8>>,
}

impl Sample {
    pub fn from_slice(slice: &CtSlice, config: &PreprocessConfig) -> Result<Self> {
        let input = ModelInput::from_slice(slice, config)?;
        let gt_mask = slice.gt_mask.as_ref().map(|m| resample_mask(m, config.side));
        Ok(Self {
            input,
            label: slice.labels,
            gt_mask,
        })
    }

    pub fn is_positive(&self) -> bool {
        self.label.any_ich
    }

    /// The pixel mask, or an empty one for negatives without a mask.
    pub fn mask_or_empty(&self) -> Result<Array2<u8>> {
        match &self.gt_mask {
            Some(mask) => Ok(mask.clone()),
            None if !self.is_positive() => Ok(Array2::zeros((self.input.side(), self.input.side()))),
            None => Err(Error::Data(format!(
                "positive slice {} has no pixel mask",
                self.input.source.id()
            ))),
        }
    }
}

pub fn prepare_samples(slices: &[CtSlice], config: &PreprocessConfig) -> Result<Vec<Sample>> {
    slices.iter().map(|s| Sample::from_slice(s, config)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    NoImprovement,
    Stop,
}

/// Stops after `patience` consecutive epochs without a lower validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience: patience.max(1),
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if val_loss >= best => {
                self.bad_epochs += 1;
                if self.bad_epochs >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::NoImprovement
                }
            }
            _ => {
                self.best = Some((epoch, val_loss));
                self.bad_epochs = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.map(|(_, l)| l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Pooled validation Dice, U-Net only.
    pub val_dice: Option<f64>,
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["epoch", "train_loss", "val_loss", "val_accuracy", "val_dice"])?;
    for r in history {
        writer.write_record([
            r.epoch.to_string(),
            format!("{:.9}", r.train_loss),
            format!("{:.9}", r.val_loss),
            format!("{:.6}", r.val_accuracy),
            r.val_dice.map(|d| format!("{d:.6}")).unwrap_or_default(),
        ])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| -> Result<f64> {
            record.get(i).unwrap_or("").parse::<f64>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: line + 2,
                message: e.to_string(),
            })
        };
        out.push(EpochRecord {
            epoch: field(0)? as usize,
            train_loss: field(1)?,
            val_loss: field(2)?,
            val_accuracy: field(3)?,
            val_dice: match record.get(4) {
                Some(s) if !s.is_empty() => Some(field(4)?),
                _ => None,
            },
        });
    }
    Ok(out)
}

/// A trained model with its per-epoch history; parameters are those of the best epoch.
pub struct TrainOutcome<M> {
    pub model: M,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
}

/// Per-epoch order of training examples: a shuffle, or class-balanced draws.
struct EpochPlanner {
    sampler: Option<InverseFrequencySampler>,
    rng: ChaCha8Rng,
    len: usize,
}

impl EpochPlanner {
    fn new(config: &TrainConfig, samples: &[Sample]) -> Result<Self> {
        let sampler = match config.imbalance {
            ImbalanceStrategy::InverseFrequencySampling => {
                let labels: Vec<usize> = samples.iter().map(|s| usize::from(s.is_positive())).collect();
                Some(InverseFrequencySampler::new(&labels, config.seed ^ 0x5a3b_1e)?)
            }
            ImbalanceStrategy::FocalLoss => None,
        };
        Ok(Self {
            sampler,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            len: samples.len(),
        })
    }

    fn next_epoch(&mut self) -> Vec<usize> {
        match self.sampler.as_mut() {
            Some(sampler) => sampler.draws(self.len),
            None => {
                let mut order: Vec<usize> = (0..self.len).collect();
                order.shuffle(&mut self.rng);
                order
            }
        }
    }
}

fn check_splits(train: &[Sample], val: &[Sample]) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Usage(format!(
            "training needs non-empty train and validation sets (got {} and {})",
            train.len(),
            val.len()
        )));
    }
    Ok(())
}

fn finite(value: f64, epoch: usize, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Diverged {
            epoch,
            message: format!("{what} became {value}"),
        })
    }
}

fn optimizer(store: &ParamStore, config: &TrainConfig) -> Result<AdamW> {
    let vars: Vec<Var> = store.all_vars();
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr: config.learning_rate,
            weight_decay: config.weight_decay,
            ..Default::default()
        },
    )?)
}

fn classifier_loss(logits: &Tensor, labels: &[&CategoricalLabel], head: HeadKind, gamma: f64) -> Result<Tensor> {
    match head {
        HeadKind::BinaryTwoLogit => {
            let targets: Vec<u32> = labels.iter().map(|l| u32::from(l.any_ich)).collect();
            focal_softmax_loss(logits, &targets, gamma)
        }
        HeadKind::BinaryOneLogit => {
            let targets: Vec<f32> = labels.iter().map(|l| f32::from(u8::from(l.any_ich))).collect();
            let t = Tensor::from_vec(targets, (labels.len(), 1), logits.device())?;
            focal_logistic_loss(logits, &t, gamma)
        }
        HeadKind::MultiLabel => {
            let targets: Vec<f32> = labels.iter().flat_map(|l| l.multi_label_target()).collect();
            let t = Tensor::from_vec(targets, (labels.len(), 6), logits.device())?;
            focal_logistic_loss(logits, &t, gamma)
        }
    }
}

/// Mean validation loss and detection accuracy of a classifier.
pub fn evaluate_classifier(model: &SwinClassifier, samples: &[Sample], gamma: f64, batch: usize) -> Result<(f64, f64)> {
    let head = model.config().head;
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for chunk in samples.chunks(batch.max(1)) {
        let inputs: Vec<&ModelInput> = chunk.iter().map(|s| &s.input).collect();
        let logits = model.forward_batch(&model.input_tensor(&inputs)?)?;
        let labels: Vec<&CategoricalLabel> = chunk.iter().map(|s| &s.label).collect();
        loss_sum += loss::scalar(&classifier_loss(&logits, &labels, head, gamma)?)? * chunk.len() as f64;
        let flat = to_f64_vec(&logits)?;
        for (row, sample) in flat.chunks(head.num_classes()).zip(chunk) {
            let predicted = positive_probability(head, row) >= 0.5;
            correct += usize::from(predicted == sample.is_positive());
        }
    }
    Ok((loss_sum / samples.len() as f64, correct as f64 / samples.len() as f64))
}

/// Trains `model` in place, restoring the parameters of the best validation epoch.
pub fn fit_classifier(
    model: SwinClassifier,
    config: &TrainConfig,
    train: &[Sample],
    val: &[Sample],
) -> Result<TrainOutcome<SwinClassifier>> {
    config.validate()?;
    check_splits(train, val)?;
    let head = model.config().head;
    if config.mode.head_kind() != Some(head) {
        return Err(Error::Config(format!(
            "training mode {:?} does not match a {:?} head",
            config.mode, head
        )));
    }
    let gamma = config.effective_gamma();
    let mut planner = EpochPlanner::new(config, train)?;
    let mut aug_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0xa09e17));
    let mut opt = optimizer(model.params(), config)?;
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = None;
    let mut history = Vec::new();
    for epoch in 1..=config.max_epochs {
        let order = planner.next_epoch();
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let augmented: Vec<Sample> = batch
                .iter()
                .map(|&i| augment_with_rng(&train[i], &config.augment, &mut aug_rng))
                .collect();
            let inputs: Vec<&ModelInput> = augmented.iter().map(|s| &s.input).collect();
            let labels: Vec<&CategoricalLabel> = augmented.iter().map(|s| &s.label).collect();
            let logits = model.forward_batch(&inputs_to_tensor(&inputs, model.dtype(), model.device())?)?;
            let loss = classifier_loss(&logits, &labels, head, gamma)?;
            let value = finite(loss::scalar(&loss)?, epoch, "training loss")?;
            loss_sum += value * batch.len() as f64;
            opt.backward_step(&loss)?;
        }
        let train_loss = loss_sum / order.len() as f64;
        let (val_loss, val_accuracy) = evaluate_classifier(&model, val, gamma, config.batch_size * 2)?;
        finite(val_loss, epoch, "validation loss")?;
        log::info!("epoch {epoch}: train {train_loss:.4} val {val_loss:.4} acc {val_accuracy:.3}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
            val_dice: None,
        });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = Some(model.params().snapshot()?),
            StopDecision::NoImprovement => {}
            StopDecision::Stop => break,
        }
    }
    if let Some(snapshot) = best {
        model.params().restore(&snapshot)?;
    }
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best_loss(),
    })
}

/// Builds a classifier for `config.mode` from `swin` and trains it.
pub fn train_classifier(
    config: &TrainConfig,
    swin: &SwinConfig,
    train: &[Sample],
    val: &[Sample],
) -> Result<TrainOutcome<SwinClassifier>> {
    let head = config
        .mode
        .head_kind()
        .ok_or_else(|| Error::Config("train_classifier needs a classifier mode".into()))?;
    let mut swin = swin.clone();
    swin.head = head;
    let model = SwinClassifier::new(swin, config.seed)?;
    fit_classifier(model, config, train, val)
}

/// Copies the backbone of `base`, attaches a fresh two-output head and trains it.
pub fn finetune_two_logit(
    base: &SwinClassifier,
    config: &TrainConfig,
    train: &[Sample],
    val: &[Sample],
) -> Result<TrainOutcome<SwinClassifier>> {
    if config.mode != TrainMode::BinaryTwoLogit {
        return Err(Error::Config(format!(
            "fine-tuning trains a two-logit head, not {:?}",
            config.mode
        )));
    }
    let model = base.with_head(HeadKind::BinaryTwoLogit, config.seed)?;
    fit_classifier(model, config, train, val)
}

fn mask_tensor(samples: &[&Sample], model: &UNet) -> Result<Tensor> {
    let side = model.config().input_side;
    let mut data = Vec::with_capacity(samples.len() * side * side);
    for s in samples {
        data.extend(s.mask_or_empty()?.iter().map(|&v| f32::from(v)));
    }
    Ok(Tensor::from_vec(data, (samples.len(), 1, side, side), model.device())?.to_dtype(model.dtype())?)
}

/// Validation loss, detection accuracy and pooled Dice of a U-Net.
pub fn evaluate_unet(model: &UNet, samples: &[Sample], batch: usize, min_pixels: usize) -> Result<(f64, f64, f64)> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let (mut inter, mut total) = (0usize, 0usize);
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let inputs: Vec<&ModelInput> = chunk.iter().map(|s| &s.input).collect();
        let logits = model.forward_logits(&inputs_to_tensor(&inputs, model.dtype(), model.device())?)?;
        let gt = mask_tensor(&refs, model)?;
        loss_sum += loss::scalar(&dice_ce_loss_from_logits(&logits, &gt)?)? * chunk.len() as f64;
        let scores = to_f64_vec(&logits)?;
        let side = model.config().input_side;
        for (grid, sample) in scores.chunks(side * side).zip(chunk) {
            let mask = sample.mask_or_empty()?;
            let predicted = grid.iter().filter(|&&z| z >= 0.0).count();
            correct += usize::from((predicted >= min_pixels) == sample.is_positive());
            for (&z, &m) in grid.iter().zip(mask.iter()) {
                let p = usize::from(z >= 0.0);
                inter += p * usize::from(m);
                total += p + usize::from(m);
            }
        }
    }
    let n = samples.len() as f64;
    let dice = if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 };
    Ok((loss_sum / n, correct as f64 / n, dice))
}

/// Trains a U-Net with Dice + cross-entropy, class-balanced slice sampling and early stopping.
pub fn train_unet(
    unet: &UNetConfig,
    config: &TrainConfig,
    train: &[Sample],
    val: &[Sample],
) -> Result<TrainOutcome<UNet>> {
    config.validate()?;
    check_splits(train, val)?;
    if config.mode != TrainMode::Unet {
        return Err(Error::Config(format!("train_unet needs unet mode, got {:?}", config.mode)));
    }
    for s in train.iter().chain(val) {
        s.mask_or_empty()?;
    }
    let model = UNet::new(unet.clone(), config.seed)?;
    let mut planner = EpochPlanner::new(config, train)?;
    let mut aug_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0xa09e17));
    let mut opt = optimizer(model.params(), config)?;
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = None;
    let mut history = Vec::new();
    for epoch in 1..=config.max_epochs {
        let order = planner.next_epoch();
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let augmented: Vec<Sample> = batch
                .iter()
                .map(|&i| augment_with_rng(&train[i], &config.augment, &mut aug_rng))
                .collect();
            let refs: Vec<&Sample> = augmented.iter().collect();
            let inputs: Vec<&ModelInput> = augmented.iter().map(|s| &s.input).collect();
            let logits = model.forward_logits(&inputs_to_tensor(&inputs, model.dtype(), model.device())?)?;
            let loss = dice_ce_loss_from_logits(&logits, &mask_tensor(&refs, &model)?)?;
            let value = finite(loss::scalar(&loss)?, epoch, "training loss")?;
            loss_sum += value * batch.len() as f64;
            opt.backward_step(&loss)?;
        }
        let train_loss = loss_sum / order.len() as f64;
        let (val_loss, val_accuracy, val_dice) =
            evaluate_unet(&model, val, config.batch_size * 2, crate::segment::DEFAULT_MIN_PIXELS)?;
        finite(val_loss, epoch, "validation loss")?;
        log::info!("epoch {epoch}: train {train_loss:.4} val {val_loss:.4} dice {val_dice:.3}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
            val_dice: Some(val_dice),
        });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = Some(model.params().snapshot()?),
            StopDecision::NoImprovement => {}
            StopDecision::Stop => break,
        }
    }
    if let Some(snapshot) = best {
        model.params().restore(&snapshot)?;
    }
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best_loss(),
    })
}

/// Checkpoint metadata describing a training run.
pub fn outcome_metadata<M>(outcome: &TrainOutcome<M>, config: &TrainConfig) -> Result<BTreeMap<String, String>> {
    let mut extra = BTreeMap::new();
    extra.insert("train_config".into(), serde_json::to_string(config)?);
    extra.insert("epochs_run".into(), outcome.history.len().to_string());
    if let Some(epoch) = outcome.best_epoch {
        extra.insert("best_epoch".into(), epoch.to_string());
    }
    Ok(extra)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_one_stops_after_first_worse_epoch() {
        let mut stopper = EarlyStopping::new(1);
        assert_eq!(stopper.observe(1, 1.0), StopDecision::Improved);
        assert_eq!(stopper.observe(2, 1.5), StopDecision::Stop);
        assert_eq!(stopper.best_epoch(), Some(1));
    }

    #[test]
    fn equal_loss_is_not_improvement() {
        let mut stopper = EarlyStopping::new(3);
        stopper.observe(1, 1.0);
        assert_eq!(stopper.observe(2, 1.0), StopDecision::NoImprovement);
        assert_eq!(stopper.observe(3, 0.5), StopDecision::Improved);
        assert_eq!(stopper.observe(4, 0.6), StopDecision::NoImprovement);
        assert_eq!(stopper.observe(5, 0.7), StopDecision::NoImprovement);
        assert_eq!(stopper.observe(6, 0.7), StopDecision::Stop);
        assert_eq!(stopper.best_loss(), Some(0.5));
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::for_mode(TrainMode::BinaryOneLogit);
        assert!(c.validate().is_ok());
        c.learning_rate = 0.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = TrainConfig::for_mode(TrainMode::Unet);
        c.patience = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn recipe_learning_rates() {
        assert_eq!(TrainConfig::for_mode(TrainMode::BinaryOneLogit).learning_rate, 1e-5);
        assert_eq!(TrainConfig::for_mode(TrainMode::BinaryTwoLogit).learning_rate, 1e-6);
        assert_eq!(TrainConfig::for_mode(TrainMode::Unet).learning_rate, 1e-3);
    }

    #[test]
    fn history_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let rows = vec![
            EpochRecord { epoch: 1, train_loss: 0.5, val_loss: 0.25, val_accuracy: 0.75, val_dice: None },
            EpochRecord { epoch: 2, train_loss: 0.125, val_loss: 0.5, val_accuracy: 1.0, val_dice: Some(0.5) },
        ];
        write_history_csv(&path, &rows).unwrap();
        assert_eq!(read_history_csv(&path).unwrap(), rows);
    }
}
