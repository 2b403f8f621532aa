use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use attnseg::arrays::{read_map_f32, write_array};
use attnseg::checkpoint::{load_swin, load_unet, save_swin, save_unet};
use attnseg::eval::{evaluate_method, make_folds, render_summary, write_overlay, write_reports, FoldSplit, SliceOutcome};
use attnseg::imaging::{load_catalog, synth_generate, write_dataset, Catalog};
use attnseg::maps::FusedMap;
use attnseg::pipeline::{gated_maps, split_samples, FoldSamples};
use attnseg::segment::{
    binarize, binarize_values, detect_from_mask, grid_search_threshold, mean_dice_at, SegMask, ThresholdChoice,
    UNET_THRESHOLD,
};
use attnseg::swin::HeadKind;
use attnseg::trainer::{
    finetune_two_logit, outcome_metadata, prepare_samples, train_classifier, train_unet, write_history_csv, Sample,
    TrainConfig, TrainOutcome,
};
use attnseg::{Error, Method, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::manifest::{file_hash, files_hash, Manifest};
use crate::TrainTarget;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Dependency { path: path.to_path_buf() })
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    require(path)?;
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn head_name(head: HeadKind) -> &'static str {
    match head {
        HeadKind::BinaryOneLogit => "one-logit",
        HeadKind::BinaryTwoLogit => "two-logit",
        HeadKind::MultiLabel => "multi-label",
    }
}

fn model_path(out: &Path, name: &str) -> PathBuf {
    out.join("models").join(format!("{name}.safetensors"))
}

/// Checkpoint a method reads by default.
fn default_checkpoint(out: &Path, method: Method) -> PathBuf {
    let name = match method {
        Method::HgiSam | Method::GradCam => "two-logit",
        Method::SamBinary => "one-logit",
        Method::SamMultiLabel => "multilabel",
        Method::UNet => "unet",
    };
    model_path(out, name)
}

fn maps_dir(out: &Path, method: Method) -> PathBuf {
    out.join("maps").join(method.tag())
}

fn masks_dir(out: &Path, method: Method) -> PathBuf {
    out.join("masks").join(method.tag())
}

/// The labelled dataset and the fold split of a run directory.
struct Prepared {
    catalog: Catalog,
    data_digest: String,
    split: FoldSplit,
    folds_digest: String,
    samples: FoldSamples,
}

fn open_catalog(config: &RunConfig) -> Result<(Catalog, String)> {
    let labels = config.labels()?;
    require(&labels)?;
    let catalog = load_catalog(config.data_root()?, &labels)?;
    let mut files = vec![labels];
    for entry in &catalog.entries {
        files.push(entry.slice_path.clone());
        files.extend(entry.mask_path.clone());
    }
    Ok((catalog, files_hash(&files)?))
}

fn prepare(config: &RunConfig, folds_file: Option<&Path>) -> Result<Prepared> {
    let out = config.out()?;
    let folds_path = folds_file.map(Path::to_path_buf).unwrap_or_else(|| out.join("folds.json"));
    require(&folds_path)?;
    let split = FoldSplit::load(&folds_path)?;
    let (catalog, data_digest) = open_catalog(config)?;
    let slices = catalog.load_all()?;
    let samples = prepare_samples(&slices, &config.experiment.preprocess)?;
    let samples = split_samples(&samples, &split, config.test_fold())?;
    Ok(Prepared {
        catalog,
        data_digest,
        split,
        folds_digest: file_hash(&folds_path)?,
        samples,
    })
}

impl Prepared {
    fn manifest(&self, command: &str, config: &RunConfig) -> Result<Manifest> {
        let mut m = Manifest::new(command, config)?;
        m.input("dataset", self.data_digest.clone());
        m.input("folds", self.folds_digest.clone());
        Ok(m)
    }

    fn val_and_test(&self) -> Vec<&Sample> {
        self.samples.val.iter().chain(&self.samples.test).collect()
    }
}

pub fn synth(config: &RunConfig) -> Result<()> {
    let root = config.data_root()?;
    let slices = synth_generate(&config.synth, config.seed)?;
    let catalog = write_dataset(root, &slices)?;
    let mut manifest = Manifest::new("synth", config)?;
    manifest.output(root, &root.join("labels.csv"));
    for entry in &catalog.entries {
        manifest.output(root, &entry.slice_path);
        if let Some(mask) = &entry.mask_path {
            manifest.output(root, mask);
        }
    }
    manifest.write(root, "synth")?;
    println!(
        "wrote {} slices ({} positive) to {}",
        catalog.len(),
        catalog.positive_count(),
        root.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct DatasetSummary<'a> {
    root: &'a Path,
    slices: usize,
    positives: usize,
    studies: usize,
    missing: &'a [String],
}

pub fn ingest(config: &RunConfig) -> Result<()> {
    let out = config.out()?;
    let (catalog, digest) = open_catalog(config)?;
    let studies = catalog.study_ids();
    let split = make_folds(&studies, config.experiment.folds, config.split_seed())?;
    let folds_path = out.join("folds.json");
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    split.save(&folds_path)?;
    let summary_path = out.join("dataset.json");
    write_json(
        &summary_path,
        &DatasetSummary {
            root: &catalog.root,
            slices: catalog.len(),
            positives: catalog.positive_count(),
            studies: studies.len(),
            missing: &catalog.missing,
        },
    )?;
    let mut manifest = Manifest::new("ingest", config)?;
    manifest.input("dataset", digest);
    manifest.output(out, &folds_path);
    manifest.output(out, &summary_path);
    manifest.write(out, "ingest")?;
    println!(
        "indexed {} slices from {} studies into {} folds",
        catalog.len(),
        studies.len(),
        split.k
    );
    Ok(())
}

fn save_history<M>(out: &Path, name: &str, outcome: &TrainOutcome<M>, manifest: &mut Manifest) -> Result<()> {
    let path = out.join("models").join(format!("{name}-history.csv"));
    write_history_csv(&path, &outcome.history)?;
    manifest.output(out, &path);
    Ok(())
}

fn section<'a>(section: &'a Option<TrainConfig>, name: &str) -> Result<&'a TrainConfig> {
    section
        .as_ref()
        .ok_or_else(|| Error::Config(format!("the experiment.{name} section is required for this model")))
}

pub fn train(config: &RunConfig, target: TrainTarget) -> Result<()> {
    let out = config.out()?;
    let exp = config.experiment();
    let data = prepare(config, None)?;
    let (train, val) = (&data.samples.train, &data.samples.val);
    let (name, path) = match target {
        TrainTarget::OneLogit => ("one-logit", model_path(out, "one-logit")),
        TrainTarget::Multilabel => ("multilabel", model_path(out, "multilabel")),
        TrainTarget::Unet => ("unet", model_path(out, "unet")),
    };
    let mut manifest = data.manifest(&format!("train {name}"), config)?;
    match target {
        TrainTarget::OneLogit | TrainTarget::Multilabel => {
            let tc = if target == TrainTarget::OneLogit {
                &exp.classifier
            } else {
                section(&exp.multilabel, "multilabel")?
            };
            let outcome = train_classifier(tc, &exp.swin, train, val)?;
            save_swin(&path, &outcome.model, &outcome_metadata(&outcome, tc)?)?;
            save_history(out, name, &outcome, &mut manifest)?;
        }
        TrainTarget::Unet => {
            let tc = section(&exp.unet_train, "unet_train")?;
            let outcome = train_unet(&exp.unet, tc, train, val)?;
            save_unet(&path, &outcome.model, &outcome_metadata(&outcome, tc)?)?;
            save_history(out, name, &outcome, &mut manifest)?;
        }
    }
    manifest.output(out, &path);
    manifest.write(out, &format!("train-{name}"))?;
    println!("saved {}", path.display());
    Ok(())
}

pub fn finetune(config: &RunConfig) -> Result<()> {
    let out = config.out()?;
    let exp = config.experiment();
    let base_path = model_path(out, "one-logit");
    let (base, _) = load_swin(&base_path)?;
    let data = prepare(config, None)?;
    let outcome = finetune_two_logit(&base, &exp.finetune, &data.samples.train, &data.samples.val)?;
    let path = model_path(out, "two-logit");
    save_swin(&path, &outcome.model, &outcome_metadata(&outcome, &exp.finetune)?)?;
    let mut manifest = data.manifest("finetune", config)?;
    manifest.input("one-logit", file_hash(&base_path)?);
    save_history(out, "two-logit", &outcome, &mut manifest)?;
    manifest.output(out, &path);
    manifest.write(out, "finetune")?;
    println!("saved {}", path.display());
    Ok(())
}

fn scores_path(out: &Path, method: Method) -> PathBuf {
    maps_dir(out, method).join("scores.json")
}

pub fn extract(config: &RunConfig, method: Method, checkpoint: Option<PathBuf>) -> Result<()> {
    let out = config.out()?;
    let exp = config.experiment();
    let path = checkpoint.unwrap_or_else(|| default_checkpoint(out, method));
    require(&path)?;
    let data = prepare(config, None)?;
    let samples = data.val_and_test();
    let dir = maps_dir(out, method);
    let mut manifest = data.manifest(&format!("extract {method}"), config)?;
    manifest.input("checkpoint", file_hash(&path)?);
    let mut scores = BTreeMap::new();
    if method == Method::UNet {
        let (model, _) = load_unet(&path)?;
        let inputs: Vec<_> = samples.iter().map(|s| &s.input).collect();
        for (s, p) in samples.iter().zip(model.predict_batch(&inputs, exp.inference_batch)?) {
            let id = s.input.source.id();
            let file = dir.join(format!("{id}.arr"));
            write_array(&file, &p.mapv(|v| v as f32))?;
            manifest.output(out, &file);
            scores.insert(id, p.iter().copied().fold(0.0, f64::max));
        }
    } else {
        let (model, _) = load_swin(&path)?;
        let required = method.head_kind().expect("attention methods read a classifier");
        let actual = model.config().head;
        if actual != required {
            return Err(Error::Usage(format!(
                "{method} needs a {} model, but {} holds a {} model",
                head_name(required),
                path.display(),
                head_name(actual)
            )));
        }
        let maps = gated_maps(&model, method, &samples, &exp.maps)?;
        let inputs: Vec<_> = samples.iter().map(|s| &s.input).collect();
        let logits = model.predict_logits(&inputs, exp.inference_batch)?;
        for ((s, map), logit) in samples.iter().zip(maps).zip(logits) {
            let id = s.input.source.id();
            map.export(&dir, &id)?;
            manifest.output(out, &dir.join(format!("{id}.arr")));
            scores.insert(id, model.positive_probability(&logit));
        }
    }
    let scores_file = scores_path(out, method);
    write_json(&scores_file, &scores)?;
    manifest.output(out, &scores_file);
    manifest.write(out, &format!("extract-{}", method.tag()))?;
    println!("wrote {} {method} maps to {}", samples.len(), dir.display());
    Ok(())
}

fn load_values(out: &Path, method: Method, id: &str) -> Result<ndarray::Array2<f64>> {
    let dir = maps_dir(out, method);
    let file = dir.join(format!("{id}.arr"));
    require(&file)?;
    if method == Method::UNet {
        Ok(read_map_f32(&file)?.mapv(f64::from))
    } else {
        Ok(FusedMap::import(&dir, id)?.values)
    }
}

pub fn segment(config: &RunConfig, method: Method) -> Result<()> {
    let out = config.out()?;
    let exp = config.experiment();
    let scores_file = scores_path(out, method);
    require(&scores_file)?;
    let data = prepare(config, None)?;
    let positives: Vec<&Sample> = data.samples.val.iter().filter(|s| s.is_positive()).collect();
    let maps = positives
        .iter()
        .map(|s| load_values(out, method, &s.input.source.id()))
        .collect::<Result<Vec<_>>>()?;
    let truths = positives.iter().map(|s| s.mask_or_empty()).collect::<Result<Vec<_>>>()?;
    let pairs: Vec<_> = maps.iter().zip(truths.iter()).collect();
    let choice = if method == Method::UNet {
        let mean_dice = if pairs.is_empty() { 0.0 } else { mean_dice_at(&pairs, UNET_THRESHOLD)? };
        ThresholdChoice {
            threshold: UNET_THRESHOLD,
            mean_dice,
        }
    } else {
        grid_search_threshold(&pairs, &exp.grid)?
    };
    let dir = masks_dir(out, method);
    let mut manifest = data.manifest(&format!("segment {method}"), config)?;
    manifest.input("scores", file_hash(&scores_file)?);
    for s in &data.samples.test {
        let id = s.input.source.id();
        let values = load_values(out, method, &id)?;
        let mask = if method == Method::UNet {
            binarize_values(&values, choice.threshold, method)
        } else {
            binarize(
                &FusedMap::import(&maps_dir(out, method), &id)?,
                choice.threshold,
                method,
            )
        };
        mask.export(&dir, &id, exp.min_pixels)?;
        manifest.output(out, &dir.join(format!("{id}.arr")));
    }
    let threshold_file = dir.join("threshold.json");
    write_json(&threshold_file, &choice)?;
    manifest.output(out, &threshold_file);
    manifest.write(out, &format!("segment-{}", method.tag()))?;
    println!(
        "{method}: threshold {:.2} (validation Dice {:.3}), {} test masks",
        choice.threshold,
        choice.mean_dice,
        data.samples.test.len()
    );
    Ok(())
}

fn outcomes(config: &RunConfig, data: &Prepared, method: Method) -> Result<Vec<SliceOutcome>> {
    let out = config.out()?;
    let scores: BTreeMap<String, f64> = read_json(&scores_path(out, method))?;
    let dir = masks_dir(out, method);
    data.samples
        .test
        .iter()
        .map(|s| {
            let id = s.input.source.id();
            require(&dir.join(format!("{id}.json")))?;
            let (mask, meta) = SegMask::import(&dir, &id)?;
            let score = *scores
                .get(&id)
                .ok_or_else(|| Error::Coverage { ids: vec![id.clone()] })?;
            let predicted = if method == Method::UNet {
                detect_from_mask(&mask, meta.min_pixels)
            } else {
                score >= 0.5
            };
            SliceOutcome::new(s.input.source.clone(), s.is_positive(), score, predicted, &mask.mask, s.gt_mask.as_ref())
        })
        .collect()
}

pub fn evaluate(config: &RunConfig, methods: &[Method], folds_file: Option<PathBuf>) -> Result<()> {
    let out = config.out()?;
    let data = prepare(config, folds_file.as_deref())?;
    let methods: Vec<Method> = if methods.is_empty() {
        Method::ALL
            .into_iter()
            .filter(|&m| masks_dir(out, m).join("threshold.json").is_file())
            .collect()
    } else {
        methods.to_vec()
    };
    if methods.is_empty() {
        return Err(Error::Dependency { path: out.join("masks") });
    }
    let expected: Vec<_> = data.samples.test.iter().map(|s| s.input.source.clone()).collect();
    let mut manifest = data.manifest("evaluate", config)?;
    let mut reports = Vec::new();
    for method in methods {
        let threshold_file = masks_dir(out, method).join("threshold.json");
        require(&threshold_file)?;
        manifest.input(format!("{method} threshold"), file_hash(&threshold_file)?);
        let outcomes = outcomes(config, &data, method)?;
        reports.push(evaluate_method(method, &outcomes, &data.split, &expected)?);
    }
    let dir = out.join("reports");
    write_reports(&dir, &reports)?;
    for name in ["segmentation.csv", "detection.csv", "summary.txt", "reports.json"] {
        manifest.output(out, &dir.join(name));
    }
    manifest.write(out, "evaluate")?;
    print!("{}", render_summary(&reports));
    Ok(())
}

pub fn overlay(config: &RunConfig, method: Method, id: Option<&str>) -> Result<()> {
    let out = config.out()?;
    let dir = masks_dir(out, method);
    require(&dir.join("threshold.json"))?;
    let data = prepare(config, None)?;
    let chosen: Vec<&Sample> = match id {
        Some(id) => {
            if data.catalog.get(id).is_none() {
                return Err(Error::Usage(format!("unknown slice id '{id}'")));
            }
            let found: Vec<&Sample> = data.samples.test.iter().filter(|s| s.input.source.id() == id).collect();
            if found.is_empty() {
                return Err(Error::Usage(format!("slice '{id}' is not in the held-out fold")));
            }
            found
        }
        None => data.samples.test.iter().collect(),
    };
    let mut manifest = data.manifest(&format!("overlay {method}"), config)?;
    let target = out.join("overlays").join(method.tag());
    for s in chosen {
        let id = s.input.source.id();
        require(&dir.join(format!("{id}.json")))?;
        let (mask, _) = SegMask::import(&dir, &id)?;
        let base = s.input.pixels.index_axis(ndarray::Axis(0), 0).to_owned();
        let path = target.join(format!("{id}.png"));
        write_overlay(&path, &base, &mask.mask, s.gt_mask.as_ref())?;
        manifest.output(out, &path);
    }
    manifest.write(out, &format!("overlay-{}", method.tag()))?;
    println!("wrote overlays to {}", target.display());
    Ok(())
}
