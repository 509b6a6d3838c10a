//! Finite-difference audit of every analytic gradient in the crate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::json::Sig17;
use crate::losses::{reconstruction_loss, regressor_loss, triplet_batch_hard, ObjectiveWeights, TripletConfig};
use crate::model::{FeedbackConfig, ModelShape, ZslModel};
use crate::net::{Activation, Mlp};
use crate::pipeline::{objective, ObjectiveConfig};
use crate::tensor::{grad_check, Matrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tolerance: f64,
    /// Perturbs every analytic gradient before comparison, to prove the
    /// harness can fail.
    pub corrupt: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            tolerance: 1e-4,
            corrupt: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckRow {
    pub name: &'static str,
    pub params: usize,
    pub max_rel_error: Sig17,
    pub passed: bool,
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn unpack(t: &[f64], shapes: &[(usize, usize)]) -> Vec<Matrix> {
    let mut at = 0;
    shapes
        .iter()
        .map(|&(r, c)| {
            let m = Matrix::from_vec(r, c, t[at..at + r * c].to_vec()).expect("sized slice");
            at += r * c;
            m
        })
        .collect()
}

fn pack(parts: &[&Matrix]) -> Vec<f64> {
    parts.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
}

struct Runner {
    opts: GradCheckOptions,
    rows: Vec<GradCheckRow>,
}

impl Runner {
    fn check<F: FnMut(&[f64]) -> f64>(
        &mut self,
        name: &'static str,
        f: F,
        theta: &[f64],
        analytic: Vec<f64>,
    ) -> Result<()> {
        let mut analytic = analytic;
        if self.opts.corrupt {
            for g in analytic.iter_mut() {
                *g = *g * 1.5 + 0.1;
            }
        }
        let err = grad_check(f, theta, &analytic, self.opts.eps)?;
        self.rows.push(GradCheckRow {
            name,
            params: theta.len(),
            max_rel_error: Sig17(err),
            passed: err <= self.opts.tolerance,
        });
        Ok(())
    }

    fn layer(&mut self, name: &'static str, activation: Activation, rng: &mut ChaCha8Rng) -> Result<()> {
        let net = Mlp::init_with_rng(5, &[(4, activation)], rng)?;
        let x = random(rng, 6, 5);
        let probe = random(rng, 6, 4);
        let (_, cache) = net.forward(&x)?;
        let (grads, grad_x) = net.backward(&cache, &probe)?;
        let mut theta = net.params_flat();
        let split = theta.len();
        theta.extend_from_slice(x.as_slice());
        let mut analytic = grads.flat();
        analytic.extend_from_slice(grad_x.as_slice());
        let mut work = net.clone();
        let f = |t: &[f64]| {
            work.set_params_flat(&t[..split]).expect("sized");
            let x = Matrix::from_vec(6, 5, t[split..].to_vec()).expect("sized");
            let y = work.predict(&x).expect("shapes");
            y.as_slice().iter().zip(probe.as_slice()).map(|(a, b)| a * b).sum()
        };
        self.check(name, f, &theta, analytic)
    }
}

/// Runs every check on fixed random instances.
pub fn run_gradchecks(opts: &GradCheckOptions) -> Result<Vec<GradCheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut r = Runner {
        opts: *opts,
        rows: Vec::new(),
    };

    r.layer("dense_linear", Activation::Linear, &mut rng)?;
    r.layer("dense_leaky_relu", Activation::LeakyRelu, &mut rng)?;

    let (n, d) = (12, 4);
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let embed = random(&mut rng, n, d);
    let triplet = TripletConfig { margin: 1.0 };
    let out = triplet_batch_hard(&embed, &labels, &triplet)?;
    r.check(
        "loss_triplet_batch_hard",
        |t| {
            let e = Matrix::from_vec(n, d, t.to_vec()).expect("sized");
            triplet_batch_hard(&e, &labels, &triplet).expect("valid batch").loss
        },
        embed.as_slice(),
        out.grad.as_slice().to_vec(),
    )?;

    let x = random(&mut rng, n, 7);
    let x_hat = random(&mut rng, n, 7);
    let (_, g) = reconstruction_loss(&x, &x_hat)?;
    r.check(
        "loss_reconstruction",
        |t| {
            let xh = Matrix::from_vec(n, 7, t.to_vec()).expect("sized");
            reconstruction_loss(&x, &xh).expect("shapes").0
        },
        x_hat.as_slice(),
        g.as_slice().to_vec(),
    )?;

    let attrs = random(&mut rng, n, d);
    let sem = random(&mut rng, n, d);
    let dis = random(&mut rng, n, d);
    let lambda = 0.7;
    let shapes = [(n, d), (n, d), (n, d)];
    let reg = regressor_loss(&sem, &dis, &attrs, &embed, lambda)?;
    r.check(
        "loss_semantic",
        |t| {
            regressor_loss(
                &Matrix::from_vec(n, d, t.to_vec()).expect("sized"),
                &dis,
                &attrs,
                &embed,
                lambda,
            )
            .expect("shapes")
            .semantic
        },
        sem.as_slice(),
        reg.grad_sem.as_slice().to_vec(),
    )?;
    let dis_loss = |t: &[f64]| {
        let p = unpack(t, &shapes[..2]);
        regressor_loss(&sem, &p[0], &attrs, &p[1], lambda)
            .expect("shapes")
            .discriminative
    };
    let dis_grads = pack(&[&reg.grad_dis.scale(1.0 / lambda), &reg.grad_embed.scale(1.0 / lambda)]);
    r.check("loss_discriminative", dis_loss, &pack(&[&dis, &embed]), dis_grads)?;
    r.check(
        "loss_regressor",
        |t| {
            let p = unpack(t, &shapes);
            regressor_loss(&p[0], &p[1], &attrs, &p[2], lambda)
                .expect("shapes")
                .total
        },
        &pack(&[&sem, &dis, &embed]),
        pack(&[&reg.grad_sem, &reg.grad_dis, &reg.grad_embed]),
    )?;

    let shape = ModelShape {
        feature_dim: 12,
        attr_dim: 4,
        encoder_hidden: vec![8],
        decoder_hidden: vec![6],
        regressor_hidden: vec![8],
    };
    let model = ZslModel::init(&shape, 99)?;
    let xb = random(&mut rng, n, 12);
    let class_attrs = Matrix::from_fn(3, 4, |_, _| rng.gen_range(0.0..1.0));
    let ab = class_attrs.select_rows(&labels);
    let weights = ObjectiveWeights {
        alpha: 0.8,
        beta: 0.6,
        lambda: 0.9,
        triplet_weight: 1.0,
    };
    for (name, iterations) in [("objective_composed", 1), ("objective_composed_feedback_t3", 3)] {
        let cfg = ObjectiveConfig {
            weights,
            triplet,
            feedback: FeedbackConfig { iterations },
        };
        let eval = objective(&model, &xb, &labels, &ab, &cfg)?;
        let mut work = model.clone();
        r.check(
            name,
            |t| {
                work.set_params_flat(t).expect("sized");
                objective(&work, &xb, &labels, &ab, &cfg)
                    .expect("valid batch")
                    .terms
                    .total
                    .0
            },
            &model.params_flat(),
            eval.grads.flat(),
        )?;
    }
    Ok(r.rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_components_pass() {
        let rows = run_gradchecks(&GradCheckOptions::default()).unwrap();
        assert_eq!(rows.len(), 9);
        for row in &rows {
            assert!(row.passed, "{} {:?}", row.name, row.max_rel_error);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let rows = run_gradchecks(&GradCheckOptions {
            corrupt: true,
            ..GradCheckOptions::default()
        })
        .unwrap();
        assert!(rows.iter().all(|r| !r.passed));
    }
}
