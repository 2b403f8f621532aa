//! The full experiment on a labelled dataset: split by study, train every
//! model, extract and gate saliency maps, tune thresholds on validation
//! slices and score the held-out fold.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_method, make_folds, FoldReport, FoldSplit, SliceOutcome};
use crate::imaging::{CtSlice, PreprocessConfig, SourceRef};
use crate::maps::{extract_maps, FusedMap, MapConfig};
use crate::method::Method;
use crate::segment::{
    binarize, detect_from_mask, gate_by_brain, grid_search_threshold, ThresholdChoice, ThresholdGrid,
    DEFAULT_MIN_PIXELS, UNET_THRESHOLD,
};
use crate::swin::{HeadKind, SwinClassifier, SwinConfig};
use crate::trainer::{
    finetune_two_logit, prepare_samples, train_classifier, train_unet, Sample, TrainConfig, TrainMode,
};
use crate::unet::{UNet, UNetConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preprocess: PreprocessConfig,
    pub swin: SwinConfig,
    pub unet: UNetConfig,
    /// One-logit classifier, the backbone every attention method starts from.
    pub classifier: TrainConfig,
    /// Two-logit fine-tuning used by HGI-SAM and Grad-CAM.
    pub finetune: TrainConfig,
    /// Multi-label classifier; skipped when absent.
    pub multilabel: Option<TrainConfig>,
    /// U-Net baseline; skipped when absent.
    pub unet_train: Option<TrainConfig>,
    pub maps: MapConfig,
    pub grid: ThresholdGrid,
    pub folds: usize,
    pub min_pixels: usize,
    pub inference_batch: usize,
}

impl ExperimentConfig {
    /// Small models and short schedules for 96-pixel synthetic slices.
    pub fn desk() -> Self {
        let preprocess = PreprocessConfig {
            side: 96,
            ..PreprocessConfig::default()
        };
        Self {
            preprocess,
            swin: SwinConfig::desk(HeadKind::BinaryOneLogit),
            unet: UNetConfig::desk(),
            classifier: TrainConfig::desk(TrainMode::BinaryOneLogit),
            finetune: TrainConfig::desk(TrainMode::BinaryTwoLogit),
            multilabel: None,
            unet_train: Some(TrainConfig::desk(TrainMode::Unet)),
            maps: MapConfig::default(),
            grid: ThresholdGrid::default(),
            folds: 5,
            min_pixels: DEFAULT_MIN_PIXELS,
            inference_batch: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.swin.input_side != self.preprocess.side || self.unet.input_side != self.preprocess.side {
            return Err(Error::Config(format!(
                "model sides (swin {}, unet {}) must equal the preprocessing side {}",
                self.swin.input_side, self.unet.input_side, self.preprocess.side
            )));
        }
        if self.folds < 3 {
            return Err(Error::Config("the experiment needs at least 3 folds".into()));
        }
        self.swin.validate()?;
        self.unet.validate()?;
        self.grid.validate()
    }

    /// Sets every training seed from one experiment seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.classifier.seed = seed;
        self.finetune.seed = seed.wrapping_add(1);
        if let Some(c) = self.multilabel.as_mut() {
            c.seed = seed.wrapping_add(2);
        }
        if let Some(c) = self.unet_train.as_mut() {
            c.seed = seed.wrapping_add(3);
        }
        self
    }
}

/// The fold used for validation when `test` is held out.
pub fn validation_fold(test: usize, k: usize) -> usize {
    (test + k - 1) % k
}

/// Train, validation and test samples for one held-out fold.
#[derive(Debug, Clone)]
pub struct FoldSamples {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn split_samples(samples: &[Sample], split: &FoldSplit, test_fold: usize) -> Result<FoldSamples> {
    if test_fold >= split.k {
        return Err(Error::Usage(format!("test fold {test_fold} outside 0..{}", split.k)));
    }
    let val_fold = validation_fold(test_fold, split.k);
    let assignment = split.assignment();
    let mut out = FoldSamples {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for s in samples {
        let study = s.input.source.study_id.as_str();
        let fold = *assignment
            .get(study)
            .ok_or_else(|| Error::Consistency { ids: vec![study.to_string()] })?;
        let target = if fold == test_fold {
            &mut out.test
        } else if fold == val_fold {
            &mut out.val
        } else {
            &mut out.train
        };
        target.push(s.clone());
    }
    Ok(out)
}

/// Every model trained for one held-out fold.
pub struct TrainedModels {
    pub one_logit: SwinClassifier,
    pub two_logit: SwinClassifier,
    pub multilabel: Option<SwinClassifier>,
    pub unet: Option<UNet>,
}

impl TrainedModels {
    /// The classifier whose attention a method reads.
    pub fn classifier_for(&self, method: Method) -> Option<&SwinClassifier> {
        match method {
            Method::SamBinary => Some(&self.one_logit),
            Method::HgiSam | Method::GradCam => Some(&self.two_logit),
            Method::SamMultiLabel => self.multilabel.as_ref(),
            Method::UNet => None,
        }
    }
}

pub fn train_models(config: &ExperimentConfig, data: &FoldSamples) -> Result<TrainedModels> {
    log::info!("training one-logit classifier on {} slices", data.train.len());
    let one_logit = train_classifier(&config.classifier, &config.swin, &data.train, &data.val)?.model;
    log::info!("fine-tuning two-logit head");
    let two_logit = finetune_two_logit(&one_logit, &config.finetune, &data.train, &data.val)?.model;
    let multilabel = match &config.multilabel {
        Some(c) => Some(train_classifier(c, &config.swin, &data.train, &data.val)?.model),
        None => None,
    };
    let unet = match &config.unet_train {
        Some(c) => {
            log::info!("training U-Net");
            Some(train_unet(&config.unet, c, &data.train, &data.val)?.model)
        }
        None => None,
    };
    Ok(TrainedModels {
        one_logit,
        two_logit,
        multilabel,
        unet,
    })
}

/// Saliency maps of `method`, zeroed outside each slice's brain mask.
pub fn gated_maps(model: &SwinClassifier, method: Method, samples: &[&Sample], config: &MapConfig) -> Result<Vec<FusedMap>> {
    let map_method = method
        .map_method()
        .ok_or_else(|| Error::Usage(format!("{method} does not produce saliency maps")))?;
    samples
        .iter()
        .map(|s| {
            let map = extract_maps(model, &s.input, &[map_method], config)?.remove(0);
            gate_by_brain(&map, &s.input.brain_mask)
        })
        .collect()
}

/// Best grid threshold over the positive slices of `samples`.
pub fn tune_threshold(
    model: &SwinClassifier,
    method: Method,
    samples: &[Sample],
    config: &ExperimentConfig,
) -> Result<ThresholdChoice> {
    let positives: Vec<&Sample> = samples.iter().filter(|s| s.is_positive()).collect();
    let maps = gated_maps(model, method, &positives, &config.maps)?;
    let masks = positives.iter().map(|s| s.mask_or_empty()).collect::<Result<Vec<_>>>()?;
    let pairs: Vec<_> = maps.iter().map(|m| &m.values).zip(masks.iter()).collect();
    grid_search_threshold(&pairs, &config.grid)
}

/// Detection from the classifier and segmentation from thresholded maps.
pub fn attention_outcomes(
    model: &SwinClassifier,
    method: Method,
    threshold: f64,
    samples: &[Sample],
    config: &ExperimentConfig,
) -> Result<Vec<SliceOutcome>> {
    let refs: Vec<&Sample> = samples.iter().collect();
    let maps = gated_maps(model, method, &refs, &config.maps)?;
    let inputs: Vec<_> = samples.iter().map(|s| &s.input).collect();
    let logits = model.predict_logits(&inputs, config.inference_batch)?;
    samples
        .iter()
        .zip(maps)
        .zip(logits)
        .map(|((s, map), logit)| {
            let score = model.positive_probability(&logit);
            let mask = binarize(&map, threshold, method);
            SliceOutcome::new(
                s.input.source.clone(),
                s.is_positive(),
                score,
                score >= 0.5,
                &mask.mask,
                s.gt_mask.as_ref(),
            )
        })
        .collect()
}

/// U-Net masks at a fixed 0.5 cut; detection by minimum foreground, AUC from the peak probability.
pub fn unet_outcomes(model: &UNet, samples: &[Sample], config: &ExperimentConfig) -> Result<Vec<SliceOutcome>> {
    let inputs: Vec<_> = samples.iter().map(|s| &s.input).collect();
    let probs = model.predict_batch(&inputs, config.inference_batch)?;
    samples
        .iter()
        .zip(probs)
        .map(|(s, p)| {
            let mask = crate::segment::binarize_values(&p, UNET_THRESHOLD, Method::UNet);
            let score = p.iter().copied().fold(0.0, f64::max);
            SliceOutcome::new(
                s.input.source.clone(),
                s.is_positive(),
                score,
                detect_from_mask(&mask, config.min_pixels),
                &mask.mask,
                s.gt_mask.as_ref(),
            )
        })
        .collect()
}

/// Outcomes of every available method on one held-out fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRun {
    pub test_fold: usize,
    pub thresholds: BTreeMap<Method, ThresholdChoice>,
    pub outcomes: BTreeMap<Method, Vec<SliceOutcome>>,
}

pub fn run_fold(config: &ExperimentConfig, samples: &[Sample], split: &FoldSplit, test_fold: usize) -> Result<FoldRun> {
    let data = split_samples(samples, split, test_fold)?;
    let models = train_models(config, &data)?;
    score_fold(config, &models, &data, test_fold)
}

/// Tunes thresholds on validation slices and scores the test slices.
pub fn score_fold(config: &ExperimentConfig, models: &TrainedModels, data: &FoldSamples, test_fold: usize) -> Result<FoldRun> {
    let mut run = FoldRun {
        test_fold,
        thresholds: BTreeMap::new(),
        outcomes: BTreeMap::new(),
    };
    for method in Method::ALL {
        if method == Method::UNet {
            if let Some(unet) = &models.unet {
                run.outcomes.insert(method, unet_outcomes(unet, &data.test, config)?);
            }
            continue;
        }
        let Some(model) = models.classifier_for(method) else {
            continue;
        };
        let choice = tune_threshold(model, method, &data.val, config)?;
        log::info!("{method}: threshold {:.2} (validation Dice {:.3})", choice.threshold, choice.mean_dice);
        run.outcomes
            .insert(method, attention_outcomes(model, method, choice.threshold, &data.test, config)?);
        run.thresholds.insert(method, choice);
    }
    Ok(run)
}

/// Reports, split and per-fold details of a finished experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub split: FoldSplit,
    pub runs: Vec<FoldRun>,
    pub reports: Vec<FoldReport>,
}

impl ExperimentResult {
    pub fn report(&self, method: Method) -> Option<&FoldReport> {
        self.reports.iter().find(|r| r.method == method)
    }
}

/// Runs the experiment on `slices`, holding out each fold in `test_folds` in turn.
pub fn run_experiment(
    config: &ExperimentConfig,
    slices: &[CtSlice],
    split_seed: u64,
    test_folds: &[usize],
) -> Result<ExperimentResult> {
    config.validate()?;
    let samples = prepare_samples(slices, &config.preprocess)?;
    let studies: Vec<&str> = slices.iter().map(|s| s.source.study_id.as_str()).collect();
    let split = make_folds(&studies, config.folds, split_seed)?;
    let runs = test_folds
        .iter()
        .map(|&fold| run_fold(config, &samples, &split, fold))
        .collect::<Result<Vec<_>>>()?;
    let reports = assemble_reports(&split, &runs, slices)?;
    Ok(ExperimentResult { split, runs, reports })
}

/// One report per method, expecting every slice of the held-out folds.
pub fn assemble_reports(split: &FoldSplit, runs: &[FoldRun], slices: &[CtSlice]) -> Result<Vec<FoldReport>> {
    let assignment = split.assignment();
    let tested: Vec<usize> = runs.iter().map(|r| r.test_fold).collect();
    let expected: Vec<SourceRef> = slices
        .iter()
        .filter(|s| assignment.get(s.source.study_id.as_str()).is_some_and(|f| tested.contains(f)))
        .map(|s| s.source.clone())
        .collect();
    let mut reports = Vec::new();
    for method in Method::ALL {
        let outcomes: Vec<SliceOutcome> = runs
            .iter()
            .filter_map(|r| r.outcomes.get(&method))
            .flatten()
            .cloned()
            .collect();
        if outcomes.is_empty() {
            continue;
        }
        reports.push(evaluate_method(method, &outcomes, split, &expected)?);
    }
    Ok(reports)
}
