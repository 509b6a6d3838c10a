//! Metrics and report artifacts: per-class top-1, the GZSL harmonic mean,
//! confusion matrices, one-vs-rest ROC curves and a PCA embedding export.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json::{fmt_f64, Sig17};
use crate::pipeline::{GzslPredictions, Predictions};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct PerClassAccuracy {
    pub per_class: BTreeMap<usize, f64>,
    /// Unweighted mean over classes.
    pub mean: f64,
}

fn check_lengths(op: &'static str, pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Shape {
            op,
            left: (pred.len(), 1),
            right: (truth.len(), 1),
        });
    }
    Ok(())
}

/// Correct/total for every class in `classes`, averaged without weighting
/// by class size. Every class needs at least one test sample.
pub fn per_class_top1(pred: &[usize], truth: &[usize], classes: &[usize]) -> Result<PerClassAccuracy> {
    check_lengths("per_class_top1", pred, truth)?;
    let mut counts: BTreeMap<usize, (usize, usize)> = classes.iter().map(|&c| (c, (0, 0))).collect();
    for (&p, &t) in pred.iter().zip(truth) {
        let entry = counts.get_mut(&t).ok_or_else(|| Error::Eval {
            class: t,
            reason: "truth label outside the evaluated class set".into(),
        })?;
        entry.1 += 1;
        if p == t {
            entry.0 += 1;
        }
    }
    let mut per_class = BTreeMap::new();
    for (&c, &(correct, total)) in &counts {
        if total == 0 {
            return Err(Error::Eval {
                class: c,
                reason: "class has no test samples".into(),
            });
        }
        per_class.insert(c, correct as f64 / total as f64);
    }
    let mean = per_class.values().sum::<f64>() / per_class.len().max(1) as f64;
    Ok(PerClassAccuracy { per_class, mean })
}

/// `2·s·u/(s+u)`, evaluated as `s·(2u/(s+u))` so that `H(a, a) == a` holds
/// exactly; zero when both accuracies are zero.
pub fn harmonic_mean(acc_seen: f64, acc_unseen: f64) -> f64 {
    let sum = acc_seen + acc_unseen;
    if sum == 0.0 {
        return 0.0;
    }
    acc_seen * (2.0 * acc_unseen / sum)
}

/// `counts[i][j]` = samples of `classes[i]` predicted as `classes[j]`.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], classes: &[usize]) -> Result<Vec<Vec<u64>>> {
    check_lengths("confusion_matrix", pred, truth)?;
    let index: BTreeMap<usize, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let lookup = |label: usize| {
        index.get(&label).copied().ok_or_else(|| Error::Eval {
            class: label,
            reason: "label outside the class set".into(),
        })
    };
    let mut counts = vec![vec![0u64; classes.len()]; classes.len()];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[lookup(t)?][lookup(p)?] += 1;
    }
    Ok(counts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub class: usize,
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, by descending threshold.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocSkip {
    pub class: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RocResult {
    pub curves: Vec<RocCurve>,
    pub skipped: Vec<RocSkip>,
}

/// One-vs-rest ROC per score column. Tied scores move the curve in a single
/// diagonal step, so the trapezoid area credits ties with one half. Classes
/// without positives or without negatives in `truth` are skipped.
pub fn roc_auc(scores: &Matrix, truth: &[usize], classes: &[usize]) -> Result<RocResult> {
    if scores.rows() != truth.len() || scores.cols() != classes.len() {
        return Err(Error::Shape {
            op: "roc_auc",
            left: scores.shape(),
            right: (truth.len(), classes.len()),
        });
    }
    let mut result = RocResult::default();
    for (j, &class) in classes.iter().enumerate() {
        let positives = truth.iter().filter(|&&t| t == class).count();
        let negatives = truth.len() - positives;
        if positives == 0 || negatives == 0 {
            let side = if positives == 0 { "positive" } else { "negative" };
            result.skipped.push(RocSkip {
                class,
                reason: format!("no {side} samples in the evaluated pool"),
            });
            continue;
        }
        let mut order: Vec<usize> = (0..truth.len()).collect();
        order.sort_by(|&a, &b| scores.get(b, j).total_cmp(&scores.get(a, j)));
        let (p, n) = (positives as f64, negatives as f64);
        let mut points = vec![(0.0, 0.0)];
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut auc = 0.0;
        let mut i = 0;
        while i < order.len() {
            let threshold = scores.get(order[i], j);
            while i < order.len() && scores.get(order[i], j) == threshold {
                if truth[order[i]] == class {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            let (x0, y0) = *points.last().expect("non-empty");
            let (x1, y1) = (fp as f64 / n, tp as f64 / p);
            auc += (x1 - x0) * (y0 + y1) / 2.0;
            points.push((x1, y1));
        }
        result.curves.push(RocCurve { class, points, auc });
    }
    Ok(result)
}

/// First two principal components of the rows of `embeds`. Each component's
/// sign is fixed so its largest-magnitude loading is positive.
pub fn pca_2d(embeds: &Matrix) -> Result<Matrix> {
    let (n, d) = embeds.shape();
    if n == 0 || d < 2 {
        return Err(Error::config(
            "embeddings",
            "PCA export needs rows and at least two columns",
        ));
    }
    let means: Vec<f64> = embeds.col_sums().iter().map(|s| s / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| embeds.get(i, j) - means[j]);
    let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = DMatrix::zeros(d, 2);
    for (k, &col) in order.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(col).clone_owned();
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            v = -v;
        }
        basis.set_column(k, &v);
    }
    let projected = centered * basis;
    Matrix::from_vec(
        n,
        2,
        (0..n).flat_map(|i| [projected[(i, 0)], projected[(i, 1)]]).collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Zsl,
    Gzsl,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GzslMetrics {
    pub acc_seen: Sig17,
    pub acc_unseen: Sig17,
    #[serde(rename = "H")]
    pub h: Sig17,
}

impl GzslMetrics {
    pub fn new(acc_seen: f64, acc_unseen: f64) -> Self {
        GzslMetrics {
            acc_seen: Sig17(acc_seen),
            acc_unseen: Sig17(acc_unseen),
            h: Sig17(harmonic_mean(acc_seen, acc_unseen)),
        }
    }
}

/// 2-D projection of test embeddings, one row per labelled sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding2d {
    pub labels: Vec<usize>,
    pub coords: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub classes: Vec<usize>,
    pub per_class: PerClassAccuracy,
    pub confusion: Vec<Vec<u64>>,
    pub gzsl: Option<GzslMetrics>,
    pub roc: RocResult,
    pub embeddings: Option<Embedding2d>,
}

/// The `report.json` document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub mode: EvalMode,
    pub top1: Sig17,
    pub per_class: BTreeMap<usize, Sig17>,
    pub gzsl: Option<GzslMetrics>,
    pub classes: Vec<usize>,
    pub auc: BTreeMap<usize, Sig17>,
    pub roc_skipped: Vec<RocSkipJson>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RocSkipJson {
    pub class: usize,
    pub reason: String,
}

impl EvalReport {
    /// Report over the unseen label space.
    pub fn zsl(pred: &Predictions) -> Result<Self> {
        let classes = pred.classes.clone();
        Ok(EvalReport {
            mode: EvalMode::Zsl,
            per_class: per_class_top1(&pred.predicted, &pred.truth, &classes)?,
            confusion: confusion_matrix(&pred.predicted, &pred.truth, &classes)?,
            gzsl: None,
            roc: roc_auc(&pred.scores, &pred.truth, &classes)?,
            classes,
            embeddings: None,
        })
    }

    /// Report over seen ∪ unseen. `acc_seen` averages over the seen classes
    /// on the seen test pool, `acc_unseen` over the unseen classes on the
    /// unseen pool; both pools are predicted over the union label space.
    pub fn gzsl(pred: &GzslPredictions, seen: &[usize], unseen: &[usize]) -> Result<Self> {
        let acc_seen = per_class_top1(&pred.seen.predicted, &pred.seen.truth, seen)?.mean;
        let acc_unseen = per_class_top1(&pred.unseen.predicted, &pred.unseen.truth, unseen)?.mean;
        let classes = pred.seen.classes.clone();
        let predicted: Vec<usize> = pred
            .seen
            .predicted
            .iter()
            .chain(&pred.unseen.predicted)
            .copied()
            .collect();
        let truth: Vec<usize> = pred.seen.truth.iter().chain(&pred.unseen.truth).copied().collect();
        let scores = Matrix::vcat(&[&pred.seen.scores, &pred.unseen.scores])?;
        Ok(EvalReport {
            mode: EvalMode::Gzsl,
            per_class: per_class_top1(&predicted, &truth, &classes)?,
            confusion: confusion_matrix(&predicted, &truth, &classes)?,
            gzsl: Some(GzslMetrics::new(acc_seen, acc_unseen)),
            roc: roc_auc(&scores, &truth, &classes)?,
            classes,
            embeddings: None,
        })
    }

    pub fn to_json(&self) -> ReportJson {
        ReportJson {
            mode: self.mode,
            top1: Sig17(self.per_class.mean),
            per_class: self.per_class.per_class.iter().map(|(&c, &a)| (c, Sig17(a))).collect(),
            gzsl: self.gzsl,
            classes: self.classes.clone(),
            auc: self.roc.curves.iter().map(|r| (r.class, Sig17(r.auc))).collect(),
            roc_skipped: self
                .roc
                .skipped
                .iter()
                .map(|s| RocSkipJson {
                    class: s.class,
                    reason: s.reason.clone(),
                })
                .collect(),
        }
    }
}

fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Load {
        file: path.to_path_buf(),
        row: None,
        reason: e.to_string(),
    };
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| csv_err(e.into_error().into()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, `confusion.csv`, one `roc_<class>.csv` per scored
/// class and, when present, `embeddings.csv`.
pub fn emit_report(report: &EvalReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let json_path = dir.join("report.json");
    let mut text = serde_json::to_string_pretty(&report.to_json())?;
    text.push('\n');
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;

    let mut header = vec!["truth".to_string()];
    header.extend(report.classes.iter().map(|c| c.to_string()));
    let rows = report.classes.iter().zip(&report.confusion).map(|(c, counts)| {
        let mut row = vec![c.to_string()];
        row.extend(counts.iter().map(|n| n.to_string()));
        row
    });
    write_csv(&dir.join("confusion.csv"), &header, rows)?;

    for curve in &report.roc.curves {
        let header = ["fpr".to_string(), "tpr".to_string()];
        let rows = curve.points.iter().map(|&(x, y)| vec![fmt_f64(x), fmt_f64(y)]);
        write_csv(&dir.join(format!("roc_{}.csv", curve.class)), &header, rows)?;
    }

    if let Some(emb) = &report.embeddings {
        let header = ["label", "pc1", "pc2"].map(String::from);
        let rows = emb.labels.iter().enumerate().map(|(i, l)| {
            vec![
                l.to_string(),
                fmt_f64(emb.coords.get(i, 0)),
                fmt_f64(emb.coords.get(i, 1)),
            ]
        });
        write_csv(&dir.join("embeddings.csv"), &header, rows)?;
    }
    Ok(())
}
