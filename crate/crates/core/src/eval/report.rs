use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::folds::FoldSplit;
use super::metrics::{auc_roc, overlap, Confusion, DetectionMetrics};
use super::stats::MeanStd;
use crate::error::{Error, Result};
use crate::imaging::SourceRef;
use crate::method::Method;

/// One method's result on one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceOutcome {
    pub source: SourceRef,
    pub gt_positive: bool,
    /// Detection score used for the AUC.
    pub score: f64,
    pub predicted_positive: bool,
    /// Segmentation scores, only for slices with a positive label.
    pub dice: Option<f64>,
    pub iou: Option<f64>,
}

impl SliceOutcome {
    pub fn new(
        source: SourceRef,
        gt_positive: bool,
        score: f64,
        predicted_positive: bool,
        predicted_mask: &Array2<u8>,
        gt_mask: Option<&Array2<u8>>,
    ) -> Result<Self> {
        let (dice, iou) = if gt_positive {
            let gt = gt_mask.ok_or_else(|| {
                Error::Data(format!("positive slice {} has no ground-truth mask", source.id()))
            })?;
            let o = overlap(predicted_mask, gt)?;
            (Some(o.dice()), Some(o.iou()))
        } else {
            (None, None)
        };
        Ok(Self {
            source,
            gt_positive,
            score,
            predicted_positive,
            dice,
            iou,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub slices: usize,
    pub positives: usize,
    pub dice: Option<MeanStd>,
    pub iou: Option<MeanStd>,
    pub detection: DetectionMetrics,
    pub auc: Option<f64>,
}

/// Mean ± std over folds of each detection metric, using the folds where it is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub accuracy: Option<MeanStd>,
    pub auc: Option<MeanStd>,
    pub precision: Option<MeanStd>,
    pub f1: Option<MeanStd>,
    pub recall: Option<MeanStd>,
    pub specificity: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub method: Method,
    pub folds: Vec<FoldMetrics>,
    /// Subject-wise Dice over every positive slice of every fold.
    pub dice: Option<MeanStd>,
    pub iou: Option<MeanStd>,
    pub detection: DetectionSummary,
}

fn summarize(values: impl Iterator<Item = Option<f64>>) -> Option<MeanStd> {
    let v: Vec<f64> = values.flatten().collect();
    MeanStd::of(&v)
}

/// Per-fold and pooled metrics of one method. Every slice in `expected` whose
/// study belongs to the split must have an outcome.
pub fn evaluate_method(
    method: Method,
    outcomes: &[SliceOutcome],
    split: &FoldSplit,
    expected: &[SourceRef],
) -> Result<FoldReport> {
    let assignment = split.assignment();
    let by_id: BTreeMap<String, &SliceOutcome> = outcomes.iter().map(|o| (o.source.id(), o)).collect();
    let missing: Vec<String> = expected
        .iter()
        .filter(|s| assignment.contains_key(s.study_id.as_str()))
        .map(SourceRef::id)
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Coverage { ids: missing });
    }
    let expected_ids: BTreeSet<String> = expected.iter().map(SourceRef::id).collect();
    let mut per_fold: Vec<Vec<&SliceOutcome>> = vec![Vec::new(); split.k];
    for (id, outcome) in &by_id {
        if !expected_ids.contains(id) {
            continue;
        }
        if let Some(&fold) = assignment.get(outcome.source.study_id.as_str()) {
            per_fold[fold].push(outcome);
        }
    }
    let mut folds = Vec::new();
    for (fold, members) in per_fold.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let preds: Vec<bool> = members.iter().map(|o| o.predicted_positive).collect();
        let gts: Vec<bool> = members.iter().map(|o| o.gt_positive).collect();
        let scores: Vec<f64> = members.iter().map(|o| o.score).collect();
        folds.push(FoldMetrics {
            fold,
            slices: members.len(),
            positives: gts.iter().filter(|&&g| g).count(),
            dice: summarize(members.iter().map(|o| o.dice)),
            iou: summarize(members.iter().map(|o| o.iou)),
            detection: DetectionMetrics::from_confusion(&Confusion::from_pairs(&preds, &gts)?)?,
            auc: auc_roc(&scores, &gts)?,
        });
    }
    let pooled = per_fold.iter().flatten();
    let dice = summarize(pooled.clone().map(|o| o.dice));
    let iou = summarize(pooled.map(|o| o.iou));
    let detection = DetectionSummary {
        accuracy: summarize(folds.iter().map(|f| Some(f.detection.accuracy))),
        auc: summarize(folds.iter().map(|f| f.auc)),
        precision: summarize(folds.iter().map(|f| f.detection.precision)),
        f1: summarize(folds.iter().map(|f| f.detection.f1)),
        recall: summarize(folds.iter().map(|f| f.detection.recall)),
        specificity: summarize(folds.iter().map(|f| f.detection.specificity)),
    };
    Ok(FoldReport {
        method,
        folds,
        dice,
        iou,
        detection,
    })
}

fn cell(v: Option<MeanStd>) -> String {
    v.map(|m| m.display(3)).unwrap_or_else(|| "n/a".into())
}

fn scalar(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into())
}

fn fold_indices(reports: &[&FoldReport]) -> Vec<usize> {
    let set: BTreeSet<usize> = reports.iter().flat_map(|r| r.folds.iter().map(|f| f.fold)).collect();
    set.into_iter().collect()
}

fn ordered<'a>(reports: &'a [FoldReport], order: &[Method]) -> Vec<&'a FoldReport> {
    order
        .iter()
        .filter_map(|m| reports.iter().find(|r| r.method == *m))
        .collect()
}

/// Rows of a fold-by-method table: `(metric, fold label, cells)`.
type Rows = Vec<(String, String, Vec<String>)>;

fn segmentation_rows(reports: &[&FoldReport]) -> Rows {
    let mut rows = Vec::new();
    for (metric, pick) in [
        ("Dice", (|f: &FoldMetrics| f.dice) as fn(&FoldMetrics) -> Option<MeanStd>),
        ("IoU", |f: &FoldMetrics| f.iou),
    ] {
        for fold in fold_indices(reports) {
            let cells = reports
                .iter()
                .map(|r| cell(r.folds.iter().find(|f| f.fold == fold).and_then(pick)))
                .collect();
            rows.push((metric.to_string(), (fold + 1).to_string(), cells));
        }
        let totals = reports
            .iter()
            .map(|r| cell(if metric == "Dice" { r.dice } else { r.iou }))
            .collect();
        rows.push((metric.to_string(), "mean ± std".into(), totals));
    }
    rows
}

fn detection_rows(reports: &[&FoldReport]) -> Rows {
    type Pick = fn(&FoldMetrics) -> Option<f64>;
    type Total = fn(&DetectionSummary) -> Option<MeanStd>;
    let metrics: [(&str, Pick, Total); 6] = [
        ("Accuracy", |f| Some(f.detection.accuracy), |d| d.accuracy),
        ("AUC", |f| f.auc, |d| d.auc),
        ("Precision", |f| f.detection.precision, |d| d.precision),
        ("F1-score", |f| f.detection.f1, |d| d.f1),
        ("Recall", |f| f.detection.recall, |d| d.recall),
        ("Specificity", |f| f.detection.specificity, |d| d.specificity),
    ];
    let mut rows = Vec::new();
    for (metric, pick, total) in metrics {
        for fold in fold_indices(reports) {
            let cells = reports
                .iter()
                .map(|r| scalar(r.folds.iter().find(|f| f.fold == fold).and_then(pick)))
                .collect();
            rows.push((metric.to_string(), (fold + 1).to_string(), cells));
        }
        let totals = reports.iter().map(|r| cell(total(&r.detection))).collect();
        rows.push((metric.to_string(), "mean ± std".into(), totals));
    }
    rows
}

fn rows_to_csv(reports: &[&FoldReport], rows: &Rows) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["metric".to_string(), "fold".to_string()];
    header.extend(reports.iter().map(|r| r.method.display_name().to_string()));
    writer.write_record(&header)?;
    for (metric, fold, cells) in rows {
        let mut record = vec![metric.clone(), fold.clone()];
        record.extend(cells.iter().cloned());
        writer.write_record(&record)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn rows_to_text(title: &str, reports: &[&FoldReport], rows: &Rows) -> String {
    let mut headers = vec!["Metric".to_string(), "Fold".to_string()];
    headers.extend(reports.iter().map(|r| r.method.display_name().to_string()));
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for (metric, fold, cells) in rows {
        for (i, text) in [metric, fold].into_iter().chain(cells).enumerate() {
            widths[i] = widths[i].max(text.chars().count());
        }
    }
    let line = |fields: Vec<&String>| -> String {
        fields
            .iter()
            .zip(&widths)
            .map(|(f, w)| format!("{f:<w$}", w = *w))
            .collect::<Vec<_>>()
            .join(" | ")
    };
    let mut out = String::new();
    writeln!(out, "{title}").unwrap();
    let head = line(headers.iter().collect());
    writeln!(out, "{head}").unwrap();
    writeln!(out, "{}", "-".repeat(head.chars().count())).unwrap();
    for (metric, fold, cells) in rows {
        let mut fields = vec![metric, fold];
        fields.extend(cells);
        writeln!(out, "{}", line(fields)).unwrap();
    }
    out
}

/// Dice and IoU per fold (mean ± std over slices) with subject-wise totals, one column per method.
pub fn segmentation_table_csv(reports: &[FoldReport]) -> Result<String> {
    let r = ordered(reports, &Method::ALL);
    rows_to_csv(&r, &segmentation_rows(&r))
}

/// Detection metrics per fold with mean ± std over folds, one column per method.
pub fn detection_table_csv(reports: &[FoldReport]) -> Result<String> {
    let r = ordered(reports, &Method::DETECTION);
    rows_to_csv(&r, &detection_rows(&r))
}

/// Both tables as aligned text.
pub fn render_summary(reports: &[FoldReport]) -> String {
    let seg = ordered(reports, &Method::ALL);
    let det = ordered(reports, &Method::DETECTION);
    let mut out = rows_to_text("Segmentation", &seg, &segmentation_rows(&seg));
    out.push('\n');
    out.push_str(&rows_to_text("Detection", &det, &detection_rows(&det)));
    out
}

/// Writes `segmentation.csv`, `detection.csv`, `summary.txt` and `reports.json`.
pub fn write_reports(dir: &Path, reports: &[FoldReport]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        ("segmentation.csv", segmentation_table_csv(reports)?),
        ("detection.csv", detection_table_csv(reports)?),
        ("summary.txt", render_summary(reports)),
        ("reports.json", serde_json::to_string_pretty(reports)?),
    ];
    for (name, content) in files {
        let path = dir.join(name);
        std::fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::make_folds;

    fn source(study: &str, i: i64) -> SourceRef {
        SourceRef { study_id: study.into(), slice_index: i }
    }

    fn perfect(study: &str, i: i64, positive: bool) -> SliceOutcome {
        let mask = if positive { Array2::ones((2, 2)) } else { Array2::zeros((2, 2)) };
        SliceOutcome::new(source(study, i), positive, f64::from(u8::from(positive)), positive, &mask, Some(&mask)).unwrap()
    }

    fn outcomes() -> (Vec<SliceOutcome>, Vec<SourceRef>) {
        let mut out = Vec::new();
        for s in 0..5 {
            for i in 0..2 {
                out.push(perfect(&format!("st{s}"), i, i == 0));
            }
        }
        let expected = out.iter().map(|o| o.source.clone()).collect();
        (out, expected)
    }

    #[test]
    fn perfect_outputs_score_one() {
        let (out, expected) = outcomes();
        let split = make_folds(&["st0", "st1", "st2", "st3", "st4"], 5, 0).unwrap();
        let r = evaluate_method(Method::HgiSam, &out, &split, &expected).unwrap();
        assert_eq!(r.folds.len(), 5);
        assert_eq!(r.dice.unwrap().mean, 1.0);
        assert_eq!(r.iou.unwrap().mean, 1.0);
        assert_eq!(r.detection.accuracy.unwrap().mean, 1.0);
        assert_eq!(r.detection.auc.unwrap().mean, 1.0);
        assert_eq!(r.detection.f1.unwrap().mean, 1.0);
    }

    #[test]
    fn missing_outcome_is_coverage_error() {
        let (mut out, expected) = outcomes();
        out.remove(3);
        let split = make_folds(&["st0", "st1", "st2", "st3", "st4"], 5, 0).unwrap();
        match evaluate_method(Method::UNet, &out, &split, &expected) {
            Err(Error::Coverage { ids }) => assert_eq!(ids, vec!["st1_1".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tables_follow_method_order() {
        let (out, expected) = outcomes();
        let split = make_folds(&["st0", "st1", "st2", "st3", "st4"], 5, 0).unwrap();
        let reports: Vec<FoldReport> = [Method::UNet, Method::GradCam, Method::HgiSam]
            .into_iter()
            .map(|m| evaluate_method(m, &out, &split, &expected).unwrap())
            .collect();
        let seg = segmentation_table_csv(&reports).unwrap();
        let header = seg.lines().next().unwrap();
        assert_eq!(header, "metric,fold,Swin-Grad-CAM,Swin-HGI-SAM,UNet");
        assert_eq!(seg.lines().count(), 1 + 2 * 6);
        assert!(seg.lines().nth(6).unwrap().starts_with("Dice,mean ± std,"));
        let det = detection_table_csv(&reports).unwrap();
        assert_eq!(det.lines().next().unwrap(), "metric,fold,Swin-HGI-SAM,UNet");
        assert!(render_summary(&reports).contains("Specificity"));
    }
}
