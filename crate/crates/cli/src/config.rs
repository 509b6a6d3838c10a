//! Run configuration: a TOML file, `--set section.key=value` overrides, then
//! dedicated flags, in that order of precedence.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use zsl_core::dataset::SynthConfig;
use zsl_core::losses::{ObjectiveWeights, TripletConfig};
use zsl_core::model::{FeedbackConfig, GenerationConfig, ModelShape};
use zsl_core::net::AdamConfig;
use zsl_core::pipeline::{ClassifierConfig, ClassifierKind, ObjectiveConfig, SvmConfig, TrainConfig};

pub const EFFECTIVE_CONFIG: &str = "effective-config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run_name: String,
    /// Root of the run directories.
    pub out: PathBuf,
    /// Dataset directory.
    pub data: PathBuf,
    /// Master seed; every stochastic stage derives its own seed from it.
    pub seed: u64,
    pub synth: SynthSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub classifier: ClassifierSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub attr_dim: usize,
    pub feature_dim: usize,
    pub seen_classes: usize,
    pub unseen_classes: usize,
    pub samples_per_class: usize,
    pub noise: f64,
    pub test_seen_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub regressor_hidden: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub classes_per_batch: usize,
    pub samples_per_class: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub triplet_weight: f64,
    pub margin: f64,
    pub feedback_iters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    pub kind: ClassifierKind,
    pub knn_k: usize,
    pub svm_reg: f64,
    pub svm_epochs: usize,
    pub gen_samples: usize,
    pub gen_noise: f64,
    pub gen_feedback_iters: usize,
    /// Write a PCA projection of the test embeddings next to the report.
    pub embeddings: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_name: "run".into(),
            out: "out".into(),
            data: "data".into(),
            seed: 7,
            synth: SynthSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            classifier: ClassifierSection::default(),
        }
    }
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        SynthSection {
            attr_dim: s.attr_dim,
            feature_dim: s.feature_dim,
            seen_classes: s.seen_classes,
            unseen_classes: s.unseen_classes,
            samples_per_class: s.samples_per_class,
            noise: s.noise,
            test_seen_fraction: s.test_seen_fraction,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            encoder_hidden: vec![128],
            decoder_hidden: vec![128],
            regressor_hidden: vec![128],
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainSection {
            epochs: 50,
            classes_per_batch: 8,
            samples_per_class: 4,
            lr: 3e-3,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            alpha: 100.0,
            beta: 10.0,
            lambda: 1.0,
            triplet_weight: 1.0,
            margin: 0.3,
            feedback_iters: 1,
        }
    }
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let svm = SvmConfig::default();
        ClassifierSection {
            kind: ClassifierKind::Svm,
            knn_k: 5,
            svm_reg: svm.reg,
            svm_epochs: svm.epochs,
            gen_samples: 200,
            gen_noise: 2.0,
            gen_feedback_iters: 1,
            embeddings: true,
        }
    }
}

/// Flag-level overrides; `None` keeps the file value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub run_name: Option<String>,
    pub margin: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub feedback_iters: Option<usize>,
    pub gen_samples: Option<usize>,
    pub gen_noise: Option<f64>,
    /// `section.key=value` assignments applied before the named flags.
    pub set: Vec<String>,
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies `--set` assignments
    /// and named flags, and validates the result.
    pub fn resolve(path: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str::<toml::Table>(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for assignment in &ov.set {
            apply_assignment(&mut table, assignment)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table).try_into().context("invalid configuration")?;
        cfg.apply(ov);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, ov: &Overrides) {
        if let Some(v) = ov.seed {
            self.seed = v;
        }
        if let Some(v) = &ov.out {
            self.out = v.clone();
        }
        if let Some(v) = &ov.data {
            self.data = v.clone();
        }
        if let Some(v) = &ov.run_name {
            self.run_name = v.clone();
        }
        let t = &mut self.train;
        for (dst, src) in [
            (&mut t.margin, ov.margin),
            (&mut t.alpha, ov.alpha),
            (&mut t.beta, ov.beta),
            (&mut t.lambda, ov.lambda),
        ] {
            if let Some(v) = src {
                *dst = v;
            }
        }
        if let Some(v) = ov.feedback_iters {
            t.feedback_iters = v;
            self.classifier.gen_feedback_iters = v;
        }
        if let Some(v) = ov.gen_samples {
            self.classifier.gen_samples = v;
        }
        if let Some(v) = ov.gen_noise {
            self.classifier.gen_noise = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_name.is_empty() || self.run_name.contains(['/', '\\']) {
            bail!("run_name: must be a non-empty single path component");
        }
        self.synth_config().validate()?;
        self.train_config().validate()?;
        self.model_shape(1, 1).validate()?;
        let c = &self.classifier;
        if c.gen_samples == 0 {
            bail!("gen_samples: must be >= 1");
        }
        if !(c.gen_noise >= 0.0 && c.gen_noise.is_finite()) {
            bail!("gen_noise: must be finite and >= 0, got {}", c.gen_noise);
        }
        self.classifier_config().generation.feedback.validate()?;
        if c.knn_k == 0 {
            bail!("knn_k: must be >= 1");
        }
        if !(c.svm_reg > 0.0 && c.svm_reg.is_finite()) {
            bail!("svm_reg: must be finite and > 0, got {}", c.svm_reg);
        }
        if c.svm_epochs == 0 {
            bail!("svm_epochs: must be >= 1");
        }
        Ok(())
    }

    fn derived_seed(&self, stage: u64) -> u64 {
        self.seed.wrapping_add(stage.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(&self.run_name)
    }

    pub fn synth_config(&self) -> SynthConfig {
        let s = &self.synth;
        SynthConfig {
            attr_dim: s.attr_dim,
            feature_dim: s.feature_dim,
            seen_classes: s.seen_classes,
            unseen_classes: s.unseen_classes,
            samples_per_class: s.samples_per_class,
            noise: s.noise,
            test_seen_fraction: s.test_seen_fraction,
            seed: self.seed,
        }
    }

    pub fn model_shape(&self, feature_dim: usize, attr_dim: usize) -> ModelShape {
        ModelShape {
            feature_dim,
            attr_dim,
            encoder_hidden: self.model.encoder_hidden.clone(),
            decoder_hidden: self.model.decoder_hidden.clone(),
            regressor_hidden: self.model.regressor_hidden.clone(),
        }
    }

    pub fn model_seed(&self) -> u64 {
        self.derived_seed(1)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            classes_per_batch: t.classes_per_batch,
            samples_per_class: t.samples_per_class,
            optimizer: AdamConfig {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
            objective: ObjectiveConfig {
                weights: ObjectiveWeights {
                    alpha: t.alpha,
                    beta: t.beta,
                    lambda: t.lambda,
                    triplet_weight: t.triplet_weight,
                },
                triplet: TripletConfig { margin: t.margin },
                feedback: FeedbackConfig {
                    iterations: t.feedback_iters,
                },
            },
            seed: self.derived_seed(2),
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        let c = &self.classifier;
        ClassifierConfig {
            kind: c.kind,
            svm: SvmConfig {
                reg: c.svm_reg,
                epochs: c.svm_epochs,
                seed: self.derived_seed(4),
            },
            knn_k: c.knn_k,
            generation: GenerationConfig {
                samples_per_class: c.gen_samples,
                noise: c.gen_noise,
                seed: self.derived_seed(3),
                feedback: FeedbackConfig {
                    iterations: c.gen_feedback_iters,
                },
            },
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn persist(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(EFFECTIVE_CONFIG);
        fs::write(&path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))
    }
}

/// Applies `a.b.c=value`; the value is parsed as a TOML literal and falls
/// back to a plain string.
fn apply_assignment(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!("--set expects key=value, got {assignment:?}");
    };
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cursor = table;
    for part in parents {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("--set {key}: {part} is not a section"),
        };
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "[train]\nepochz = 3\n").unwrap();
        let err = RunConfig::resolve(Some(&path), &Overrides::default()).unwrap_err();
        assert!(format!("{err:#}").contains("epochz"), "{err:#}");
    }

    #[test]
    fn precedence_file_then_set_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "seed = 3\n[train]\nalpha = 2.0\nepochs = 9\n").unwrap();
        let ov = Overrides {
            alpha: Some(5.0),
            set: vec![
                "train.alpha=4.0".into(),
                "train.epochs=11".into(),
                "classifier.kind=knn".into(),
            ],
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(Some(&path), &ov).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.train.alpha, 5.0);
        assert_eq!(cfg.train.epochs, 11);
        assert_eq!(cfg.classifier.kind, ClassifierKind::Knn);
    }

    #[test]
    fn validation_names_the_field() {
        let ov = Overrides {
            set: vec!["synth.seen_classes=0".into()],
            ..Overrides::default()
        };
        let err = RunConfig::resolve(None, &ov).unwrap_err();
        assert!(format!("{err:#}").contains("seen_classes"), "{err:#}");
        let ov = Overrides {
            gen_noise: Some(-1.0),
            ..Overrides::default()
        };
        assert!(format!("{:#}", RunConfig::resolve(None, &ov).unwrap_err()).contains("gen_noise"));
    }
}
