use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{SplitSpec, ZslDataset};
use crate::error::{Error, Result};
use crate::net::LEAKY_SLOPE;
use crate::tensor::Matrix;

/// Desk-scale benchmark: class attributes are pushed through a fixed random
/// two-layer map to obtain class-mean features, and samples scatter around
/// the means with isotropic Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub attr_dim: usize,
    pub feature_dim: usize,
    pub seen_classes: usize,
    pub unseen_classes: usize,
    pub samples_per_class: usize,
    /// Per-coordinate standard deviation around the class mean.
    pub noise: f64,
    /// Fraction of each seen class held out as `test_seen`.
    pub test_seen_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            attr_dim: 16,
            feature_dim: 64,
            seen_classes: 20,
            unseen_classes: 5,
            samples_per_class: 100,
            noise: 0.15,
            test_seen_fraction: 0.2,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("attr_dim", self.attr_dim),
            ("feature_dim", self.feature_dim),
            ("seen_classes", self.seen_classes),
            ("unseen_classes", self.unseen_classes),
            ("samples_per_class", self.samples_per_class),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(Error::config(field, "must be >= 1"));
            }
        }
        if self.feature_dim < self.attr_dim {
            return Err(Error::config("feature_dim", "must be >= attr_dim"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("noise", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.test_seen_fraction) {
            return Err(Error::config("test_seen_fraction", "must be in [0, 1)"));
        }
        Ok(())
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<ZslDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let classes = cfg.seen_classes + cfg.unseen_classes;
    let (d, dx) = (cfg.attr_dim, cfg.feature_dim);
    let hidden = dx;

    let attributes = Matrix::from_fn(classes, d, |_, _| rng.gen::<f64>());

    let w1_dist = Normal::new(0.0, (1.0 / d as f64).sqrt()).expect("valid std");
    let w2_dist = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).expect("valid std");
    let b1_dist = Normal::new(0.0, 0.5).expect("valid std");
    let w1 = Matrix::from_fn(d, hidden, |_, _| w1_dist.sample(&mut rng));
    let b1: Vec<f64> = (0..hidden).map(|_| b1_dist.sample(&mut rng)).collect();
    let w2 = Matrix::from_fn(hidden, dx, |_, _| w2_dist.sample(&mut rng));

    let centered = attributes.map(|a| a - 0.5);
    let h = centered
        .matmul(&w1)?
        .add_row_vector(&b1)?
        .map(|z| if z > 0.0 { z } else { LEAKY_SLOPE * z });
    let means = h.matmul(&w2)?;

    let noise = Normal::new(0.0, cfg.noise).expect("validated");
    let k = cfg.samples_per_class;
    let n = classes * k;
    let mut features = Matrix::zeros(n, dx);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        for s in 0..k {
            let row = features.row_mut(c * k + s);
            for (x, &mu) in row.iter_mut().zip(means.row(c)) {
                *x = mu + noise.sample(&mut rng);
            }
            labels.push(c);
        }
    }

    let held_out = ((k as f64) * cfg.test_seen_fraction).round() as usize;
    let held_out = held_out.min(k.saturating_sub(2));
    let mut split = SplitSpec {
        seen_classes: (0..cfg.seen_classes).collect(),
        unseen_classes: (cfg.seen_classes..classes).collect(),
        ..SplitSpec::default()
    };
    for c in 0..cfg.seen_classes {
        let base = c * k;
        split.train_idx.extend(base..base + k - held_out);
        split.test_seen_idx.extend(base + k - held_out..base + k);
    }
    split.test_unseen_idx = (cfg.seen_classes * k..n).collect();

    let ds = ZslDataset {
        features,
        labels,
        attributes,
        split,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_under_seed() {
        let cfg = SynthConfig {
            samples_per_class: 10,
            ..SynthConfig::default()
        };
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
        let other = SynthConfig {
            seed: cfg.seed + 1,
            ..cfg.clone()
        };
        assert_ne!(
            synth_generate(&cfg).unwrap().features,
            synth_generate(&other).unwrap().features
        );
    }

    #[test]
    fn zero_noise_gives_identical_class_samples() {
        let cfg = SynthConfig {
            noise: 0.0,
            samples_per_class: 5,
            ..SynthConfig::default()
        };
        let ds = synth_generate(&cfg).unwrap();
        for c in 0..25 {
            for s in 1..5 {
                assert_eq!(ds.features.row(c * 5), ds.features.row(c * 5 + s));
            }
        }
    }

    #[test]
    fn counts_follow_config() {
        let ds = synth_generate(&SynthConfig::default()).unwrap();
        assert_eq!(ds.features.shape(), (2500, 64));
        assert_eq!(ds.attributes.shape(), (25, 16));
        assert_eq!(ds.split.train_idx.len(), 20 * 80);
        assert_eq!(ds.split.test_seen_idx.len(), 20 * 20);
        assert_eq!(ds.split.test_unseen_idx.len(), 500);
    }

    #[test]
    fn invalid_counts_name_the_field() {
        let cfg = SynthConfig {
            unseen_classes: 0,
            ..SynthConfig::default()
        };
        assert!(synth_generate(&cfg).unwrap_err().to_string().contains("unseen_classes"));
        let cfg = SynthConfig {
            feature_dim: 8,
            ..SynthConfig::default()
        };
        assert!(synth_generate(&cfg).is_err());
    }
}
