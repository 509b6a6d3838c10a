//! Encoder, decoder (generator) and regressor feedback networks.
//!
//! Dimension contract for features of width `d_x` and attributes of width
//! `D`:
//!
//! * encoder: `d_x → … → D`
//! * decoder: `[embedding ⊕ attribute] = 2D → … → d_x`
//! * regressor: `d_x → … → 2D`, split as `[semantic | discriminative]`

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{standard_spec, ByteReader, Mlp, MlpGrads};
use crate::tensor::Matrix;

pub const MODEL_MAGIC: &[u8; 4] = b"ZSLM";
pub const MODEL_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub feature_dim: usize,
    pub attr_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub regressor_hidden: Vec<usize>,
}

impl ModelShape {
    /// Layer widths 2048-style: encoder 1024/512, decoder 1024, regressor 1024.
    pub fn full(feature_dim: usize, attr_dim: usize) -> Self {
        ModelShape {
            feature_dim,
            attr_dim,
            encoder_hidden: vec![1024, 512],
            decoder_hidden: vec![1024],
            regressor_hidden: vec![1024],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.attr_dim == 0 {
            return Err(Error::config("model", "feature and attribute dims must be >= 1"));
        }
        for (field, widths) in [
            ("encoder_hidden", &self.encoder_hidden),
            ("decoder_hidden", &self.decoder_hidden),
            ("regressor_hidden", &self.regressor_hidden),
        ] {
            if widths.contains(&0) {
                return Err(Error::config(field, "hidden widths must be >= 1"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackConfig {
    /// Number of decoder passes; 1 uses the regressor only as a training
    /// regularizer, larger values feed its output back into the decoder.
    pub iterations: usize,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig { iterations: 1 }
    }
}

impl FeedbackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("feedback_iters", "must be >= 1"));
        }
        Ok(())
    }

    pub fn is_refine(&self) -> bool {
        self.iterations > 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZslModel {
    feature_dim: usize,
    attr_dim: usize,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub regressor: Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
    pub regressor: MlpGrads,
}

impl ModelGrads {
    pub fn flat(&self) -> Vec<f64> {
        [self.encoder.flat(), self.decoder.flat(), self.regressor.flat()].concat()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = self.encoder.slices();
        out.extend(self.decoder.slices());
        out.extend(self.regressor.slices());
        out
    }
}

/// Generated features with one label per row, grouped by class.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub samples_per_class: usize,
    /// Standard deviation of the Gaussian jitter on the embedding slot.
    pub noise: f64,
    pub seed: u64,
    #[serde(default)]
    pub feedback: FeedbackConfig,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            samples_per_class: 200,
            noise: 0.05,
            seed: 0,
            feedback: FeedbackConfig::default(),
        }
    }
}

impl ZslModel {
    pub fn init(shape: &ModelShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let (dx, d) = (shape.feature_dim, shape.attr_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Mlp::init_with_rng(dx, &standard_spec(&shape.encoder_hidden, d), &mut rng)?;
        let decoder = Mlp::init_with_rng(2 * d, &standard_spec(&shape.decoder_hidden, dx), &mut rng)?;
        let regressor = Mlp::init_with_rng(dx, &standard_spec(&shape.regressor_hidden, 2 * d), &mut rng)?;
        ZslModel::from_parts(encoder, decoder, regressor)
    }

    /// Assembles a model, checking the dimension contract between the
    /// three networks.
    pub fn from_parts(encoder: Mlp, decoder: Mlp, regressor: Mlp) -> Result<Self> {
        let dx = encoder.input_dim();
        let d = encoder.output_dim();
        let contract = [
            ("decoder input", decoder.input_dim(), 2 * d),
            ("decoder output", decoder.output_dim(), dx),
            ("regressor input", regressor.input_dim(), dx),
            ("regressor output", regressor.output_dim(), 2 * d),
        ];
        for (what, got, want) in contract {
            if got != want {
                return Err(Error::Shape {
                    op: what,
                    left: (got, 0),
                    right: (want, 0),
                });
            }
        }
        Ok(ZslModel {
            feature_dim: dx,
            attr_dim: d,
            encoder,
            decoder,
            regressor,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn attr_dim(&self) -> usize {
        self.attr_dim
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count() + self.regressor.param_count()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        [
            self.encoder.params_flat(),
            self.decoder.params_flat(),
            self.regressor.params_flat(),
        ]
        .concat()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape {
                op: "set_params_flat",
                left: (self.param_count(), 1),
                right: (flat.len(), 1),
            });
        }
        let a = self.encoder.param_count();
        let b = a + self.decoder.param_count();
        self.encoder.set_params_flat(&flat[..a])?;
        self.decoder.set_params_flat(&flat[a..b])?;
        self.regressor.set_params_flat(&flat[b..])
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.encoder.param_slices_mut();
        out.extend(self.decoder.param_slices_mut());
        out.extend(self.regressor.param_slices_mut());
        out
    }

    fn check_cols(&self, op: &'static str, m: &Matrix, want: usize) -> Result<()> {
        if m.cols() != want {
            return Err(Error::Shape {
                op,
                left: m.shape(),
                right: (m.rows(), want),
            });
        }
        Ok(())
    }

    /// Discriminative embeddings, one row per sample.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        self.check_cols("encode", x, self.feature_dim)?;
        self.encoder.predict(x)
    }

    /// Reconstructs features from `[embed, attr]`.
    pub fn decode(&self, embed: &Matrix, attr: &Matrix) -> Result<Matrix> {
        self.check_cols("decode", embed, self.attr_dim)?;
        self.check_cols("decode", attr, self.attr_dim)?;
        self.decoder.predict(&Matrix::hcat(embed, attr)?)
    }

    /// Maps features back to `(semantic, discriminative)` halves.
    pub fn regress(&self, x_hat: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_cols("regress", x_hat, self.feature_dim)?;
        self.regressor.predict(x_hat)?.split_cols(self.attr_dim)
    }

    /// Reconstructions `x̂⁽¹⁾ … x̂⁽ᵀ⁾`: the first decodes `[encode(x), attr]`,
    /// each later one decodes the regressor halves of its predecessor with the
    /// discriminative half in the embedding slot.
    pub fn feedback_refine(&self, x: &Matrix, attr: &Matrix, cfg: &FeedbackConfig) -> Result<Vec<Matrix>> {
        let embed = self.encode(x)?;
        self.refine_from(&embed, attr, cfg)
    }

    fn refine_from(&self, embed: &Matrix, attr: &Matrix, cfg: &FeedbackConfig) -> Result<Vec<Matrix>> {
        cfg.validate()?;
        let mut out = Vec::with_capacity(cfg.iterations);
        out.push(self.decode(embed, attr)?);
        for _ in 1..cfg.iterations {
            let (sem, dis) = self.regress(out.last().expect("non-empty"))?;
            out.push(self.decode(&dis, &sem)?);
        }
        Ok(out)
    }

    /// Synthesizes `samples_per_class` features per attribute row by decoding
    /// `[a + η, a]` with `η ~ N(0, noise²)`. Rows are grouped by class in the
    /// order of `classes`. With feedback iterations > 1 the last refinement
    /// is returned.
    pub fn generate_unseen(&self, attrs: &Matrix, classes: &[usize], cfg: &GenerationConfig) -> Result<Generated> {
        self.check_cols("generate_unseen", attrs, self.attr_dim)?;
        if classes.len() != attrs.rows() {
            return Err(Error::Shape {
                op: "generate_unseen",
                left: attrs.shape(),
                right: (classes.len(), 1),
            });
        }
        if cfg.samples_per_class == 0 {
            return Err(Error::config("gen_samples", "must be >= 1"));
        }
        let normal = Normal::new(0.0, cfg.noise)
            .map_err(|_| Error::config("gen_noise", format!("must be finite and >= 0, got {}", cfg.noise)))?;
        let k = cfg.samples_per_class;
        let d = self.attr_dim;
        let total = attrs.rows() * k;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut slot = Matrix::zeros(total, d);
        let mut attr_rows = Matrix::zeros(total, d);
        let mut labels = Vec::with_capacity(total);
        for (c, &class) in classes.iter().enumerate() {
            let a = attrs.row(c);
            for s in 0..k {
                let r = c * k + s;
                attr_rows.row_mut(r).copy_from_slice(a);
                for (dst, &av) in slot.row_mut(r).iter_mut().zip(a) {
                    *dst = av + normal.sample(&mut rng);
                }
                labels.push(class);
            }
        }
        let mut passes = self.refine_from(&slot, &attr_rows, &cfg.feedback)?;
        Ok(Generated {
            features: passes.pop().expect("non-empty"),
            labels,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.feature_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.attr_dim as u32).to_le_bytes());
        self.encoder.write_block(&mut out);
        self.decoder.write_block(&mut out);
        self.regressor.write_block(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != MODEL_MAGIC {
            return Err(r.error_at(0, "bad magic, expected ZSLM"));
        }
        let version = r.u16()?;
        if version != MODEL_VERSION {
            return Err(r.error_at(4, format!("unsupported version {version}")));
        }
        let dx = r.u32()? as usize;
        let d = r.u32()? as usize;
        let encoder = Mlp::read_block(&mut r)?;
        let decoder = Mlp::read_block(&mut r)?;
        let regressor = Mlp::read_block(&mut r)?;
        r.expect_end()?;
        let model = ZslModel::from_parts(encoder, decoder, regressor).map_err(|e| r.error_at(6, e.to_string()))?;
        if model.feature_dim != dx || model.attr_dim != d {
            return Err(r.error_at(6, format!("header dims ({dx}, {d}) disagree with networks")));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        ZslModel::from_bytes(&bytes)
    }
}
