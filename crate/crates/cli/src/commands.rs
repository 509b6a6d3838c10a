use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use zsl_core::dataset::{npy, synth_generate, ZslDataset};
use zsl_core::eval::{emit_report, harmonic_mean, pca_2d, Embedding2d, EvalMode, EvalReport, ReportJson};
use zsl_core::gradcheck::{run_gradchecks, GradCheckOptions, GradCheckRow};
use zsl_core::model::ZslModel;
use zsl_core::pipeline::{gzsl_predict, train, zsl_predict};

use crate::config::RunConfig;

pub const MODEL_FILE: &str = "model.zslf";
pub const TRAINLOG_FILE: &str = "trainlog.json";
pub const REPORT_FILE: &str = "report.json";
pub const GENERATED_FEATURES: &str = "generated_features.npy";
pub const GENERATED_LABELS: &str = "generated_labels.txt";

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_dataset(cfg: &RunConfig) -> Result<ZslDataset> {
    ZslDataset::load(&cfg.data).with_context(|| format!("loading dataset from {}", cfg.data.display()))
}

fn load_model(cfg: &RunConfig) -> Result<ZslModel> {
    let path = cfg.run_dir().join(MODEL_FILE);
    if !path.exists() {
        bail!("no trained model at {} (run `zsl train` first)", path.display());
    }
    Ok(ZslModel::load(&path)?)
}

/// Writes the synthetic benchmark to the dataset directory.
pub fn synth(cfg: &RunConfig) -> Result<String> {
    let ds = synth_generate(&cfg.synth_config())?;
    ds.save(&cfg.data)?;
    cfg.persist(&cfg.data)?;
    Ok(format!(
        "wrote {} samples ({} seen / {} unseen classes, d_x={}, D={}) to {}",
        ds.features.rows(),
        ds.split.seen_classes.len(),
        ds.split.unseen_classes.len(),
        ds.feature_dim(),
        ds.attr_dim(),
        cfg.data.display()
    ))
}

pub fn train_cmd(cfg: &RunConfig) -> Result<String> {
    let ds = load_dataset(cfg)?;
    let shape = cfg.model_shape(ds.feature_dim(), ds.attr_dim());
    let init = ZslModel::init(&shape, cfg.model_seed())?;
    let (model, log) = train(&init, &ds, &cfg.train_config())?;
    let dir = cfg.run_dir();
    cfg.persist(&dir)?;
    model.save(dir.join(MODEL_FILE))?;
    write(&dir.join(TRAINLOG_FILE), serde_json::to_string_pretty(&log)? + "\n")?;
    let last = log.epochs.last().expect("at least one epoch");
    Ok(format!(
        "trained {} epochs: L_encoder {:.4} L_reconstr {:.4} L_reg {:.4} total {:.4} -> {}",
        log.epochs.len(),
        last.terms.encoder.0,
        last.terms.reconstr.0,
        last.terms.reg.0,
        last.terms.total.0,
        dir.display()
    ))
}

pub fn generate(cfg: &RunConfig) -> Result<String> {
    let ds = load_dataset(cfg)?;
    let model = load_model(cfg)?;
    let unseen = &ds.split.unseen_classes;
    if unseen.is_empty() {
        bail!("dataset has no unseen classes to generate");
    }
    let generated = model.generate_unseen(
        &ds.attributes.select_rows(unseen),
        unseen,
        &cfg.classifier_config().generation,
    )?;
    let dir = cfg.run_dir();
    cfg.persist(&dir)?;
    npy::write_matrix(dir.join(GENERATED_FEATURES), &generated.features, npy::DType::F64)?;
    let labels: String = generated.labels.iter().map(|l| format!("{l}\n")).collect();
    write(&dir.join(GENERATED_LABELS), labels)?;
    Ok(format!(
        "generated {} features for {} unseen classes -> {}",
        generated.features.rows(),
        unseen.len(),
        dir.display()
    ))
}

pub fn eval(cfg: &RunConfig, mode: EvalMode) -> Result<String> {
    let ds = load_dataset(cfg)?;
    let model = load_model(cfg)?;
    let ccfg = cfg.classifier_config();
    let (mut report, test_idx) = match mode {
        EvalMode::Zsl => {
            let pred = zsl_predict(&model, &ds, &ccfg)?;
            (EvalReport::zsl(&pred)?, ds.split.test_unseen_idx.clone())
        }
        EvalMode::Gzsl => {
            let pred = gzsl_predict(&model, &ds, &ccfg)?;
            let report = EvalReport::gzsl(&pred, &ds.split.seen_classes, &ds.split.unseen_classes)?;
            let idx = ds
                .split
                .test_seen_idx
                .iter()
                .chain(&ds.split.test_unseen_idx)
                .copied()
                .collect();
            (report, idx)
        }
    };
    if cfg.classifier.embeddings {
        let embeds = model.encode(&ds.features.select_rows(&test_idx))?;
        report.embeddings = Some(Embedding2d {
            labels: ds.labels_at(&test_idx),
            coords: pca_2d(&embeds)?,
        });
    }
    let dir = cfg.run_dir();
    cfg.persist(&dir)?;
    remove_stale_roc(&dir)?;
    emit_report(&report, &dir)?;
    Ok(summarize(&report.to_json()))
}

fn remove_stale_roc(dir: &Path) -> Result<()> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Ok(());
    };
    for entry in entries {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with("roc_") && name.ends_with(".csv") {
            fs::remove_file(&path).with_context(|| format!("removing {}", path.display()))?;
        }
    }
    Ok(())
}

fn summarize(r: &ReportJson) -> String {
    let mut out = format!(
        "mode {:?}: per-class top-1 {:.4} over {} classes\n",
        r.mode,
        r.top1.0,
        r.classes.len()
    );
    for (class, acc) in &r.per_class {
        out.push_str(&format!("  class {class:>4}  {:.4}\n", acc.0));
    }
    if let Some(g) = &r.gzsl {
        out.push_str(&format!(
            "acc_seen {:.4}  acc_unseen {:.4}  H {:.4}\n",
            g.acc_seen.0, g.acc_unseen.0, g.h.0
        ));
    }
    for skip in &r.roc_skipped {
        out.push_str(&format!(
            "warning: ROC skipped for class {}: {}\n",
            skip.class, skip.reason
        ));
    }
    out
}

/// Re-reads `report.json`, checks that H matches the emitted accuracies and
/// prints a summary.
pub fn report(cfg: &RunConfig) -> Result<String> {
    let path = cfg.run_dir().join(REPORT_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let parsed: ReportJson = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(g) = &parsed.gzsl {
        let h = harmonic_mean(g.acc_seen.0, g.acc_unseen.0);
        if h != g.h.0 {
            bail!(
                "{}: H {} disagrees with the harmonic mean {} of the emitted accuracies",
                path.display(),
                g.h.0,
                h
            );
        }
    }
    Ok(summarize(&parsed))
}

pub struct GradCheckOutcome {
    pub rows: Vec<GradCheckRow>,
    pub table: String,
}

impl GradCheckOutcome {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }
}

pub fn gradcheck(corrupt: bool) -> Result<GradCheckOutcome> {
    let opts = GradCheckOptions {
        corrupt,
        ..GradCheckOptions::default()
    };
    let rows = run_gradchecks(&opts)?;
    let mut table = format!("{:<34} {:>7} {:>12}  result\n", "component", "params", "max rel err");
    for r in &rows {
        table.push_str(&format!(
            "{:<34} {:>7} {:>12.3e}  {}\n",
            r.name,
            r.params,
            r.max_rel_error.0,
            if r.passed { "PASS" } else { "FAIL" }
        ));
    }
    table.push_str(&format!("tolerance {:.0e}, eps {:.0e}\n", opts.tolerance, opts.eps));
    Ok(GradCheckOutcome { rows, table })
}
