//! Training objectives and their analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{pairwise_sq_dists, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletConfig {
    pub margin: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig { margin: 1.0 }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::config(
                "margin",
                format!("must be finite and > 0, got {}", self.margin),
            ));
        }
        Ok(())
    }
}

/// Weights of the combined objective
/// `triplet_weight·L_encoder + α·L_reconstr + β·L_reg`, with
/// `L_reg = L_sem + λ·L_dis`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    /// Coefficient on the triplet term. 1 in the standard objective; 0
    /// trains a plain conditional autoencoder (ablation).
    #[serde(default = "one")]
    pub triplet_weight: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights {
            alpha: 1.0,
            beta: 1.0,
            lambda: 1.0,
            triplet_weight: 1.0,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda", self.lambda),
            ("triplet_weight", self.triplet_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Hardest positive and negative chosen for one anchor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HardestPair {
    pub positive: usize,
    pub negative: usize,
    pub d_pos: f64,
    pub d_neg: f64,
}

#[derive(Clone, Debug)]
pub struct TripletLoss {
    pub loss: f64,
    pub grad: Matrix,
    pub hardest: Vec<HardestPair>,
}

fn check_mining_precondition(labels: &[usize]) -> Result<()> {
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    if counts.len() < 2 {
        let class = labels.first().copied().unwrap_or(0);
        return Err(Error::Mining {
            class,
            reason: "batch holds a single class, no negatives available".into(),
        });
    }
    if let Some((&class, _)) = counts.iter().find(|(_, &c)| c < 2) {
        return Err(Error::Mining {
            class,
            reason: "class has a single sample in the batch, no positive available".into(),
        });
    }
    Ok(())
}

/// Batch-hard triplet loss: every row is an anchor paired with its
/// farthest same-class row and nearest other-class row. Ties resolve to the
/// lowest row index; anchors exactly on the hinge contribute no gradient.
pub fn triplet_batch_hard(embeds: &Matrix, labels: &[usize], cfg: &TripletConfig) -> Result<TripletLoss> {
    cfg.validate()?;
    let n = embeds.rows();
    if labels.len() != n {
        return Err(Error::Shape {
            op: "triplet_batch_hard",
            left: embeds.shape(),
            right: (labels.len(), 1),
        });
    }
    check_mining_precondition(labels)?;
    let dist = pairwise_sq_dists(embeds)?;
    let d = embeds.cols();
    let scale = 2.0 / n as f64;
    let mut grad = Matrix::zeros(n, d);
    let mut hardest = Vec::with_capacity(n);
    let mut loss = 0.0;
    for i in 0..n {
        let mut pos: Option<(usize, f64)> = None;
        let mut neg: Option<(usize, f64)> = None;
        for j in 0..n {
            let dij = dist.get(i, j);
            if labels[j] == labels[i] {
                if j != i && pos.is_none_or(|(_, best)| dij > best) {
                    pos = Some((j, dij));
                }
            } else if neg.is_none_or(|(_, best)| dij < best) {
                neg = Some((j, dij));
            }
        }
        let (p, d_pos) = pos.expect("precondition guarantees a positive");
        let (q, d_neg) = neg.expect("precondition guarantees a negative");
        hardest.push(HardestPair {
            positive: p,
            negative: q,
            d_pos,
            d_neg,
        });
        let term = cfg.margin + d_pos - d_neg;
        if term > 0.0 {
            loss += term;
            for k in 0..d {
                let (ei, ep, eq) = (embeds.get(i, k), embeds.get(p, k), embeds.get(q, k));
                grad.row_mut(i)[k] += scale * (eq - ep);
                grad.row_mut(p)[k] += scale * (ep - ei);
                grad.row_mut(q)[k] += scale * (ei - eq);
            }
        }
    }
    Ok(TripletLoss {
        loss: loss / n as f64,
        grad,
        hardest,
    })
}

/// Mean squared row distance `(1/n)·Σ‖xᵢ − x̂ᵢ‖²` and its gradient with
/// respect to `x_hat`.
pub fn reconstruction_loss(x: &Matrix, x_hat: &Matrix) -> Result<(f64, Matrix)> {
    let diff = x_hat.sub(x)?;
    let n = x.rows().max(1) as f64;
    Ok((diff.sum_sq() / n, diff.scale(2.0 / n)))
}

#[derive(Clone, Debug)]
pub struct RegressorLoss {
    /// `L_sem + λ·L_dis`.
    pub total: f64,
    pub semantic: f64,
    pub discriminative: f64,
    pub grad_sem: Matrix,
    pub grad_dis: Matrix,
    /// Gradient through the discriminative target (the encoder output).
    pub grad_embed: Matrix,
}

pub fn regressor_loss(sem: &Matrix, dis: &Matrix, attr: &Matrix, embed: &Matrix, lambda: f64) -> Result<RegressorLoss> {
    let (semantic, grad_sem) = reconstruction_loss(attr, sem)?;
    let (discriminative, grad_dis) = reconstruction_loss(embed, dis)?;
    let grad_dis = grad_dis.scale(lambda);
    let grad_embed = grad_dis.scale(-1.0);
    Ok(RegressorLoss {
        total: semantic + lambda * discriminative,
        semantic,
        discriminative,
        grad_sem,
        grad_dis,
        grad_embed,
    })
}

pub fn full_objective(l_enc: f64, l_rec: f64, l_reg: f64, w: &ObjectiveWeights) -> Result<f64> {
    for (term, v) in [("L_encoder", l_enc), ("L_reconstr", l_rec), ("L_reg", l_reg)] {
        if !v.is_finite() {
            return Err(Error::NonFiniteTerm { term });
        }
    }
    Ok(w.triplet_weight * l_enc + w.alpha * l_rec + w.beta * l_reg)
}
