//! Training loop, unseen-feature synthesis and the downstream classifiers.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{pk_batches, ZslDataset};
use crate::error::{Error, Result};
use crate::json::Sig17;
use crate::losses::{
    full_objective, reconstruction_loss, regressor_loss, triplet_batch_hard, ObjectiveWeights, RegressorLoss,
    TripletConfig,
};
use crate::model::{FeedbackConfig, GenerationConfig, ModelGrads, ZslModel};
use crate::net::{AdamConfig, AdamState, ForwardCache, MlpGrads};
use crate::tensor::Matrix;

/// Everything that shapes the scalar training objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    #[serde(default)]
    pub weights: ObjectiveWeights,
    #[serde(default)]
    pub triplet: TripletConfig,
    #[serde(default)]
    pub feedback: FeedbackConfig,
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.triplet.validate()?;
        self.feedback.validate()
    }
}

/// Unweighted loss terms of one batch. With feedback iterations `T > 1` the
/// reconstruction and regressor terms are averaged over the iterations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub encoder: Sig17,
    pub reconstr: Sig17,
    pub reg: Sig17,
    pub reg_semantic: Sig17,
    pub reg_discriminative: Sig17,
    pub total: Sig17,
}

#[derive(Clone, Debug)]
pub struct ObjectiveEval {
    pub terms: ObjectiveTerms,
    pub grads: ModelGrads,
}

struct Pass {
    dec: ForwardCache,
    reg: ForwardCache,
    rec_grad: Matrix,
    loss: RegressorLoss,
}

/// Forward and backward pass of the full objective on one batch. `attrs`
/// holds the class attribute of every row of `x`.
pub fn objective(
    model: &ZslModel,
    x: &Matrix,
    labels: &[usize],
    attrs: &Matrix,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveEval> {
    cfg.validate()?;
    let w = cfg.weights;
    let d = model.attr_dim();
    let t_count = cfg.feedback.iterations;
    let inv_t = 1.0 / t_count as f64;

    let (embed, enc_cache) = model.encoder.forward(x)?;
    let trip = triplet_batch_hard(&embed, labels, &cfg.triplet)?;

    let mut passes = Vec::with_capacity(t_count);
    let (mut rec_sum, mut reg_sum, mut sem_sum, mut dis_sum) = (0.0, 0.0, 0.0, 0.0);
    let mut slot_e = embed.clone();
    let mut slot_a = attrs.clone();
    for _ in 0..t_count {
        let (x_hat, dec) = model.decoder.forward(&Matrix::hcat(&slot_e, &slot_a)?)?;
        let (rec, rec_grad) = reconstruction_loss(x, &x_hat)?;
        let (out, reg) = model.regressor.forward(&x_hat)?;
        let (sem, dis) = out.split_cols(d)?;
        let loss = regressor_loss(&sem, &dis, attrs, &embed, w.lambda)?;
        rec_sum += rec;
        reg_sum += loss.total;
        sem_sum += loss.semantic;
        dis_sum += loss.discriminative;
        passes.push(Pass {
            dec,
            reg,
            rec_grad,
            loss,
        });
        slot_e = dis;
        slot_a = sem;
    }
    let (l_rec, l_reg) = (rec_sum * inv_t, reg_sum * inv_t);
    let total = full_objective(trip.loss, l_rec, l_reg, &w)?;

    let mut g_embed = trip.grad.scale(w.triplet_weight);
    let mut dec_grads = MlpGrads::zeros_like(&model.decoder);
    let mut reg_grads = MlpGrads::zeros_like(&model.regressor);
    let mut upstream: Option<Matrix> = None;
    let (a_scale, b_scale) = (w.alpha * inv_t, w.beta * inv_t);
    for (t, pass) in passes.iter().enumerate().rev() {
        let mut g_out = Matrix::hcat(&pass.loss.grad_sem.scale(b_scale), &pass.loss.grad_dis.scale(b_scale))?;
        if let Some(up) = upstream.take() {
            g_out = g_out.add(&up)?;
        }
        let (rg, g_xhat_reg) = model.regressor.backward(&pass.reg, &g_out)?;
        reg_grads.add_assign(&rg);
        let g_xhat = pass.rec_grad.scale(a_scale).add(&g_xhat_reg)?;
        let (dg, g_in) = model.decoder.backward(&pass.dec, &g_xhat)?;
        dec_grads.add_assign(&dg);
        let (g_slot_e, g_slot_a) = g_in.split_cols(d)?;
        g_embed = g_embed.add(&pass.loss.grad_embed.scale(b_scale))?;
        if t == 0 {
            g_embed = g_embed.add(&g_slot_e)?;
        } else {
            // The previous regressor output fed [dis, sem] into the slots.
            upstream = Some(Matrix::hcat(&g_slot_a, &g_slot_e)?);
        }
    }
    let (enc_grads, _) = model.encoder.backward(&enc_cache, &g_embed)?;

    Ok(ObjectiveEval {
        terms: ObjectiveTerms {
            encoder: Sig17(trip.loss),
            reconstr: Sig17(l_rec),
            reg: Sig17(l_reg),
            reg_semantic: Sig17(sem_sum * inv_t),
            reg_discriminative: Sig17(dis_sum * inv_t),
            total: Sig17(total),
        },
        grads: ModelGrads {
            encoder: enc_grads,
            decoder: dec_grads,
            regressor: reg_grads,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Classes per batch (P).
    pub classes_per_batch: usize,
    /// Samples per class per batch (K).
    pub samples_per_class: usize,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            classes_per_batch: 8,
            samples_per_class: 4,
            optimizer: AdamConfig::default(),
            objective: ObjectiveConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.optimizer;
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::config("lr", format!("must be finite and >= 0, got {lr}")));
        }
        if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2)) {
            return Err(Error::config("beta1", "Adam betas must lie in [0, 1)"));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::config("eps", "must be finite and > 0"));
        }
        self.objective.validate()
    }

    fn epoch_seed(&self, epoch: usize) -> u64 {
        self.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

/// Batch-mean loss terms over one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub batches: usize,
    #[serde(flatten)]
    pub terms: ObjectiveTerms,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Terms of the untrained model over the first epoch's batches.
    pub initial: EpochRecord,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Default)]
struct TermSums {
    sums: [f64; 6],
    count: usize,
}

impl TermSums {
    fn add(&mut self, t: &ObjectiveTerms) {
        let vals = [
            t.encoder,
            t.reconstr,
            t.reg,
            t.reg_semantic,
            t.reg_discriminative,
            t.total,
        ];
        for (s, v) in self.sums.iter_mut().zip(vals) {
            *s += v.0;
        }
        self.count += 1;
    }

    fn record(&self, epoch: usize) -> EpochRecord {
        let n = self.count.max(1) as f64;
        let m = |i: usize| Sig17(self.sums[i] / n);
        EpochRecord {
            epoch,
            batches: self.count,
            terms: ObjectiveTerms {
                encoder: m(0),
                reconstr: m(1),
                reg: m(2),
                reg_semantic: m(3),
                reg_discriminative: m(4),
                total: m(5),
            },
        }
    }
}

fn batch_inputs(ds: &ZslDataset, batch: &[usize]) -> (Matrix, Vec<usize>, Matrix) {
    let x = ds.features.select_rows(batch);
    let labels = ds.labels_at(batch);
    let attrs = ds.attributes_for(&labels);
    (x, labels, attrs)
}

/// Trains a copy of `init` on the seen training split with PK batches and
/// Adam. Any non-finite loss or gradient aborts with the epoch and batch.
pub fn train(init: &ZslModel, ds: &ZslDataset, cfg: &TrainConfig) -> Result<(ZslModel, TrainLog)> {
    cfg.validate()?;
    ds.validate()?;
    if ds.feature_dim() != init.feature_dim() || ds.attr_dim() != init.attr_dim() {
        return Err(Error::Shape {
            op: "train",
            left: (init.feature_dim(), init.attr_dim()),
            right: (ds.feature_dim(), ds.attr_dim()),
        });
    }
    let (p, k) = (cfg.classes_per_batch, cfg.samples_per_class);
    let mut model = init.clone();
    let mut adam = AdamState::new(model.param_count(), cfg.optimizer);

    let mut initial = TermSums::default();
    for (b, batch) in pk_batches(ds, p, k, cfg.epoch_seed(1))?.enumerate() {
        let (x, labels, attrs) = batch_inputs(ds, &batch);
        let eval = objective(&model, &x, &labels, &attrs, &cfg.objective).map_err(|e| at(0, b, e))?;
        initial.add(&eval.terms);
    }

    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut sums = TermSums::default();
        for (b, batch) in pk_batches(ds, p, k, cfg.epoch_seed(epoch))?.enumerate() {
            let (x, labels, attrs) = batch_inputs(ds, &batch);
            let eval = objective(&model, &x, &labels, &attrs, &cfg.objective).map_err(|e| at(epoch, b, e))?;
            adam.step_slices(model.param_slices_mut(), eval.grads.slices())
                .map_err(|e| at(epoch, b, e))?;
            sums.add(&eval.terms);
        }
        epochs.push(sums.record(epoch));
    }
    Ok((
        model,
        TrainLog {
            initial: initial.record(0),
            epochs,
        },
    ))
}

fn at(epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::NonFiniteTerm { .. } | Error::NonFiniteGradient { .. } | Error::NonFinite { .. } => Error::Training {
            epoch,
            batch,
            reason: e.to_string(),
        },
        other => other,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmConfig {
    /// Pegasos regularization strength.
    pub reg: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            reg: 1e-4,
            epochs: 50,
            seed: 0,
        }
    }
}

/// One-vs-rest linear SVM. Row `i` of `weights` scores `classes[i]`; the
/// bias is the weight on an implicit constant-one feature.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSvm {
    pub classes: Vec<usize>,
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

fn class_groups(y: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in y.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    groups
}

/// Pegasos stochastic sub-gradient training with class-balanced sampling:
/// each step draws a class uniformly, then one of its samples, and updates
/// every one-vs-rest classifier on it.
pub fn fit_svm(x: &Matrix, y: &[usize], cfg: &SvmConfig) -> Result<LinearSvm> {
    if x.rows() != y.len() {
        return Err(Error::Shape {
            op: "fit_svm",
            left: x.shape(),
            right: (y.len(), 1),
        });
    }
    if !(cfg.reg > 0.0 && cfg.reg.is_finite()) {
        return Err(Error::config(
            "svm.reg",
            format!("must be finite and > 0, got {}", cfg.reg),
        ));
    }
    if cfg.epochs == 0 {
        return Err(Error::config("svm.epochs", "must be >= 1"));
    }
    let groups = class_groups(y);
    if groups.len() < 2 {
        return Err(Error::config("classes", "a classifier needs at least two classes"));
    }
    let classes: Vec<usize> = groups.keys().copied().collect();
    let members: Vec<&Vec<usize>> = groups.values().collect();
    let (c_count, dim) = (classes.len(), x.cols());
    let mut w = Matrix::zeros(c_count, dim);
    let mut b = vec![0.0; c_count];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps = cfg.epochs * x.rows();
    for t in 1..=steps {
        let ci = rng.gen_range(0..c_count);
        let pool = members[ci];
        let row = x.row(pool[rng.gen_range(0..pool.len())]);
        let eta = 1.0 / (cfg.reg * t as f64);
        let shrink = 1.0 - eta * cfg.reg;
        for (j, bj) in b.iter_mut().enumerate() {
            let target = if j == ci { 1.0 } else { -1.0 };
            let wj = w.row_mut(j);
            let score = crate::tensor::dot(wj, row) + *bj;
            for v in wj.iter_mut() {
                *v *= shrink;
            }
            *bj *= shrink;
            if target * score < 1.0 {
                for (v, &xv) in wj.iter_mut().zip(row) {
                    *v += eta * target * xv;
                }
                *bj += eta * target;
            }
        }
    }
    Ok(LinearSvm {
        classes,
        weights: w,
        bias: b,
    })
}

impl LinearSvm {
    /// Decision values, one column per entry of `classes`.
    pub fn scores(&self, x: &Matrix) -> Result<Matrix> {
        x.matmul_t(&self.weights)?.add_row_vector(&self.bias)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.scores(x)?, &self.classes))
    }
}

/// Highest-scoring class per row; ties go to the earliest column, which is
/// the lowest class id for sorted `classes`.
fn argmax_rows(scores: &Matrix, classes: &[usize]) -> Vec<usize> {
    (0..scores.rows())
        .map(|i| {
            let row = scores.row(i);
            let mut best = 0;
            for (j, &s) in row.iter().enumerate() {
                if s > row[best] {
                    best = j;
                }
            }
            classes[best]
        })
        .collect()
}

/// Vote fractions of the `k` nearest training rows (squared Euclidean,
/// distance ties broken by the lower label), one column per sorted class.
pub fn knn_scores(train_x: &Matrix, train_y: &[usize], x: &Matrix, k: usize) -> Result<(Vec<usize>, Matrix)> {
    if train_x.rows() != train_y.len() || train_x.cols() != x.cols() {
        return Err(Error::Shape {
            op: "knn",
            left: train_x.shape(),
            right: x.shape(),
        });
    }
    if k == 0 || k > train_x.rows() {
        return Err(Error::config(
            "knn_k",
            format!("must be in 1..={}, got {k}", train_x.rows()),
        ));
    }
    let classes: Vec<usize> = class_groups(train_y).into_keys().collect();
    let column: BTreeMap<usize, usize> = classes.iter().enumerate().map(|(j, &c)| (c, j)).collect();
    let mut scores = Matrix::zeros(x.rows(), classes.len());
    let mut neighbours: Vec<(f64, usize)> = Vec::with_capacity(train_x.rows());
    for i in 0..x.rows() {
        let q = x.row(i);
        neighbours.clear();
        for (r, &label) in train_y.iter().enumerate() {
            let dist: f64 = train_x.row(r).iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            neighbours.push((dist, label));
        }
        neighbours.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let row = scores.row_mut(i);
        for &(_, label) in &neighbours[..k] {
            row[column[&label]] += 1.0 / k as f64;
        }
    }
    Ok((classes, scores))
}

/// Majority vote of the `k` nearest neighbours, ties to the lowest class id.
pub fn knn_predict(train_x: &Matrix, train_y: &[usize], x: &Matrix, k: usize) -> Result<Vec<usize>> {
    let (classes, scores) = knn_scores(train_x, train_y, x, k)?;
    Ok(argmax_rows(&scores, &classes))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Svm,
    Knn,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    #[serde(default)]
    pub svm: SvmConfig,
    pub knn_k: usize,
    #[serde(default)]
    pub generation: GenerationConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            kind: ClassifierKind::Svm,
            svm: SvmConfig::default(),
            knn_k: 5,
            generation: GenerationConfig::default(),
        }
    }
}

/// Predictions over one test split. `scores` has one column per entry of
/// `classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub classes: Vec<usize>,
    pub truth: Vec<usize>,
    pub predicted: Vec<usize>,
    pub scores: Matrix,
}

fn classify(
    train_x: &Matrix,
    train_y: &[usize],
    test_x: &Matrix,
    cfg: &ClassifierConfig,
) -> Result<(Vec<usize>, Matrix)> {
    match cfg.kind {
        ClassifierKind::Svm => {
            let svm = fit_svm(train_x, train_y, &cfg.svm)?;
            Ok((svm.classes.clone(), svm.scores(test_x)?))
        }
        ClassifierKind::Knn => knn_scores(train_x, train_y, test_x, cfg.knn_k),
    }
}

fn predictions(classes: Vec<usize>, scores: Matrix, truth: Vec<usize>) -> Predictions {
    Predictions {
        predicted: argmax_rows(&scores, &classes),
        classes,
        truth,
        scores,
    }
}

fn generate_for(model: &ZslModel, ds: &ZslDataset, cfg: &ClassifierConfig) -> Result<(Matrix, Vec<usize>)> {
    let unseen = &ds.split.unseen_classes;
    if unseen.is_empty() {
        return Err(Error::config("unseen_classes", "split has no unseen classes"));
    }
    let attrs = ds.attributes.select_rows(unseen);
    let generated = model.generate_unseen(&attrs, unseen, &cfg.generation)?;
    Ok((generated.features, generated.labels))
}

/// Conventional ZSL: a classifier over the unseen classes only, trained on
/// synthesized features and scored on the real unseen test samples.
pub fn zsl_predict(model: &ZslModel, ds: &ZslDataset, cfg: &ClassifierConfig) -> Result<Predictions> {
    ds.validate()?;
    let (gx, gy) = generate_for(model, ds, cfg)?;
    let idx = &ds.split.test_unseen_idx;
    let (classes, scores) = classify(&gx, &gy, &ds.features.select_rows(idx), cfg)?;
    Ok(predictions(classes, scores, ds.labels_at(idx)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GzslPredictions {
    pub seen: Predictions,
    pub unseen: Predictions,
}

/// Generalized ZSL: one classifier over seen ∪ unseen classes, trained on the
/// real seen training features plus synthesized unseen features.
pub fn gzsl_predict(model: &ZslModel, ds: &ZslDataset, cfg: &ClassifierConfig) -> Result<GzslPredictions> {
    ds.validate()?;
    let (gx, gy) = generate_for(model, ds, cfg)?;
    let train = &ds.split.train_idx;
    let train_x = Matrix::vcat(&[&ds.features.select_rows(train), &gx])?;
    let mut train_y = ds.labels_at(train);
    train_y.extend(gy);

    let (seen_idx, unseen_idx) = (&ds.split.test_seen_idx, &ds.split.test_unseen_idx);
    let test_x = Matrix::vcat(&[&ds.features.select_rows(seen_idx), &ds.features.select_rows(unseen_idx)])?;
    let (classes, scores) = classify(&train_x, &train_y, &test_x, cfg)?;
    let split = seen_idx.len();
    let all: Vec<usize> = (0..scores.rows()).collect();
    let (seen_rows, unseen_rows) = all.split_at(split);
    Ok(GzslPredictions {
        seen: predictions(classes.clone(), scores.select_rows(seen_rows), ds.labels_at(seen_idx)),
        unseen: predictions(classes, scores.select_rows(unseen_rows), ds.labels_at(unseen_idx)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthConfig};
    use crate::model::ModelShape;
    use crate::tensor::grad_check;

    fn tiny_model(seed: u64) -> ZslModel {
        let shape = ModelShape {
            feature_dim: 10,
            attr_dim: 3,
            encoder_hidden: vec![7],
            decoder_hidden: vec![6],
            regressor_hidden: vec![5],
        };
        ZslModel::init(&shape, seed).unwrap()
    }

    fn tiny_batch() -> (Matrix, Vec<usize>, Matrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let labels = vec![0, 0, 1, 1, 2, 2, 0, 1];
        let x = Matrix::from_fn(8, 10, |_, _| rng.gen_range(-1.0..1.0));
        let class_attrs = Matrix::from_fn(3, 3, |_, _| rng.gen_range(0.0..1.0));
        let attrs = class_attrs.select_rows(&labels);
        (x, labels, attrs)
    }

    fn check_objective_gradient(cfg: &ObjectiveConfig) -> f64 {
        let model = tiny_model(3);
        let (x, labels, attrs) = tiny_batch();
        let eval = objective(&model, &x, &labels, &attrs, cfg).unwrap();
        let theta = model.params_flat();
        let mut probe = model.clone();
        grad_check(
            |t| {
                probe.set_params_flat(t).unwrap();
                objective(&probe, &x, &labels, &attrs, cfg).unwrap().terms.total.0
            },
            &theta,
            &eval.grads.flat(),
            1e-6,
        )
        .unwrap()
    }

    #[test]
    fn composed_gradient_matches_finite_differences() {
        let cfg = ObjectiveConfig {
            weights: ObjectiveWeights {
                alpha: 0.7,
                beta: 0.6,
                lambda: 0.8,
                triplet_weight: 1.0,
            },
            ..ObjectiveConfig::default()
        };
        let err = check_objective_gradient(&cfg);
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn unrolled_feedback_gradient_matches_finite_differences() {
        let cfg = ObjectiveConfig {
            weights: ObjectiveWeights {
                alpha: 1.3,
                beta: 0.9,
                lambda: 0.5,
                triplet_weight: 0.4,
            },
            feedback: FeedbackConfig { iterations: 3 },
            ..ObjectiveConfig::default()
        };
        let err = check_objective_gradient(&cfg);
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn zero_alpha_beta_touches_encoder_only() {
        let model = tiny_model(1);
        let (x, labels, attrs) = tiny_batch();
        let cfg = ObjectiveConfig {
            weights: ObjectiveWeights {
                alpha: 0.0,
                beta: 0.0,
                ..ObjectiveWeights::default()
            },
            ..ObjectiveConfig::default()
        };
        let eval = objective(&model, &x, &labels, &attrs, &cfg).unwrap();
        assert!(eval.grads.decoder.is_zero());
        assert!(eval.grads.regressor.is_zero());
        assert!(!eval.grads.encoder.is_zero());
        assert_eq!(eval.terms.total.0, eval.terms.encoder.0);
    }

    #[test]
    fn objective_is_weighted_sum_of_terms() {
        let model = tiny_model(2);
        let (x, labels, attrs) = tiny_batch();
        let w = ObjectiveWeights {
            alpha: 0.3,
            beta: 2.0,
            lambda: 0.25,
            triplet_weight: 1.0,
        };
        let cfg = ObjectiveConfig {
            weights: w,
            ..ObjectiveConfig::default()
        };
        let t = objective(&model, &x, &labels, &attrs, &cfg).unwrap().terms;
        let reg = t.reg_semantic.0 + 0.25 * t.reg_discriminative.0;
        assert!((t.reg.0 - reg).abs() <= 1e-12 * reg.abs().max(1.0));
        let total = t.encoder.0 + 0.3 * t.reconstr.0 + 2.0 * t.reg.0;
        assert!((t.total.0 - total).abs() <= 1e-12 * total.abs().max(1.0));
    }

    fn small_synth() -> ZslDataset {
        synth_generate(&SynthConfig {
            seen_classes: 6,
            unseen_classes: 3,
            samples_per_class: 20,
            feature_dim: 12,
            attr_dim: 4,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn small_model() -> ZslModel {
        let shape = ModelShape {
            feature_dim: 12,
            attr_dim: 4,
            encoder_hidden: vec![16],
            decoder_hidden: vec![16],
            regressor_hidden: vec![16],
        };
        ZslModel::init(&shape, 5).unwrap()
    }

    fn small_train_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 4,
            classes_per_batch: 3,
            samples_per_class: 4,
            optimizer: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_logs_every_epoch_and_is_deterministic() {
        let ds = small_synth();
        let cfg = small_train_cfg();
        let (m1, log1) = train(&small_model(), &ds, &cfg).unwrap();
        let (m2, log2) = train(&small_model(), &ds, &cfg).unwrap();
        assert_eq!(log1.epochs.len(), 4);
        assert!(log1
            .epochs
            .iter()
            .enumerate()
            .all(|(i, r)| r.epoch == i + 1 && r.batches > 0));
        assert_eq!(m1.to_bytes(), m2.to_bytes());
        assert_eq!(log1, log2);
        assert_ne!(m1.to_bytes(), small_model().to_bytes());
    }

    #[test]
    fn zero_beta_leaves_regressor_untouched() {
        let ds = small_synth();
        let mut cfg = small_train_cfg();
        cfg.objective.weights.beta = 0.0;
        let init = small_model();
        let (trained, _) = train(&init, &ds, &cfg).unwrap();
        assert_eq!(trained.regressor, init.regressor);
        assert_ne!(trained.decoder, init.decoder);
    }

    #[test]
    fn non_finite_features_abort_with_location() {
        let mut ds = small_synth();
        let mut big = ds.features.clone().into_vec();
        for v in big.iter_mut() {
            *v *= 1e200;
        }
        ds.features = Matrix::from_vec(ds.features.rows(), ds.features.cols(), big).unwrap();
        let err = train(&small_model(), &ds, &small_train_cfg()).unwrap_err();
        assert!(matches!(err, Error::Training { epoch: 0, batch: 0, .. }), "{err}");
    }

    #[test]
    fn svm_separates_separable_clusters() {
        let x = Matrix::from_rows(&[
            vec![2.0, 0.0],
            vec![2.2, 0.1],
            vec![-2.0, 0.0],
            vec![-2.1, -0.2],
            vec![0.0, 2.0],
            vec![0.1, 2.3],
        ])
        .unwrap();
        let y = vec![3, 3, 7, 7, 9, 9];
        let svm = fit_svm(
            &x,
            &y,
            &SvmConfig {
                reg: 1e-2,
                ..SvmConfig::default()
            },
        )
        .unwrap();
        assert_eq!(svm.classes, vec![3, 7, 9]);
        assert_eq!(svm.predict(&x).unwrap(), y);
    }

    #[test]
    fn svm_weights_vanish_under_heavy_regularization() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let svm = fit_svm(
            &x,
            &[0, 1, 2],
            &SvmConfig {
                reg: 1e9,
                ..SvmConfig::default()
            },
        )
        .unwrap();
        assert!(svm.weights.sum_sq().sqrt() < 1e-6);
        assert!(fit_svm(&x, &[0, 0, 0], &SvmConfig::default()).is_err());
    }

    #[test]
    fn knn_majority_and_tie_breaks() {
        let train_x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![-1.0], vec![5.0]]).unwrap();
        let train_y = vec![4, 2, 4, 2];
        let q = Matrix::from_rows(&[vec![0.1], vec![4.0], vec![0.5]]).unwrap();
        assert_eq!(knn_predict(&train_x, &train_y, &q, 3).unwrap(), vec![4, 2, 4]);
        // Equidistant neighbours with distinct labels: the lower label wins.
        assert_eq!(
            knn_predict(&train_x, &train_y, &q.select_rows(&[2]), 2).unwrap(),
            vec![2]
        );
        let (classes, scores) = knn_scores(&train_x, &train_y, &q, 3).unwrap();
        assert_eq!(classes, vec![2, 4]);
        assert_eq!(scores.row(1), &[2.0 / 3.0, 1.0 / 3.0]);
        assert!(knn_predict(&train_x, &train_y, &q, 5).is_err());
    }

    #[test]
    fn zsl_and_gzsl_predictions_cover_their_splits() {
        let ds = small_synth();
        let (model, _) = train(&small_model(), &ds, &small_train_cfg()).unwrap();
        let cfg = ClassifierConfig {
            generation: GenerationConfig {
                samples_per_class: 20,
                ..GenerationConfig::default()
            },
            svm: SvmConfig {
                epochs: 5,
                ..SvmConfig::default()
            },
            ..ClassifierConfig::default()
        };
        let zsl = zsl_predict(&model, &ds, &cfg).unwrap();
        assert_eq!(zsl.classes, ds.split.unseen_classes);
        assert_eq!(zsl.predicted.len(), ds.split.test_unseen_idx.len());
        assert!(zsl.predicted.iter().all(|c| ds.split.unseen_classes.contains(c)));

        let g = gzsl_predict(&model, &ds, &cfg).unwrap();
        assert_eq!(g.seen.classes.len(), 9);
        assert_eq!(g.seen.predicted.len(), ds.split.test_seen_idx.len());
        assert_eq!(g.unseen.truth, ds.labels_at(&ds.split.test_unseen_idx));

        let knn = ClassifierConfig {
            kind: ClassifierKind::Knn,
            ..cfg
        };
        assert_eq!(
            zsl_predict(&model, &ds, &knn).unwrap().predicted.len(),
            zsl.predicted.len()
        );
    }
}
