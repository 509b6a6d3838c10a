//! Dense networks with analytic backpropagation, Adam, and the `ZSLF`
//! weight file format.
//!
//! Weight file layout (all integers little-endian):
//!
//! ```text
//! "ZSLF" | version: u16 | layer_count: u32
//! layer_count × (fan_in: u32 | fan_out: u32 | activation: u8)
//! layer_count × (weights: fan_in·fan_out × f32 row-major | bias: fan_out × f32)
//! crc32: u32 over every preceding byte of the block
//! ```

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const LEAKY_SLOPE: f64 = 0.2;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"ZSLF";
pub const WEIGHTS_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu if z <= 0.0 => LEAKY_SLOPE * z,
            _ => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu if z <= 0.0 => LEAKY_SLOPE,
            _ => 1.0,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::LeakyRelu => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Linear),
            1 => Some(Activation::LeakyRelu),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `fan_in × fan_out`; the layer computes `x·W + b`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::Shape {
                op: "DenseLayer::new",
                left: weights.shape(),
                right: (1, bias.len()),
            });
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub input: Matrix,
    pub pre: Vec<Matrix>,
    pub post: Vec<Matrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Matrix::zeros(l.fan_in(), l.fan_out()),
                    bias: vec![0.0; l.fan_out()],
                })
                .collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.as_mut_slice().iter_mut().zip(b.weights.as_slice()) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&g| g == 0.0))
    }
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("layers", "network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Shape {
                    op: "Mlp::new",
                    left: pair[0].weights.shape(),
                    right: pair[1].weights.shape(),
                });
            }
        }
        Ok(Mlp { layers })
    }

    /// Uniform `±√(6/fan_in)` weights and zero biases, drawn from `rng`.
    pub fn init_with_rng<R: Rng>(input: usize, spec: &[(usize, Activation)], rng: &mut R) -> Result<Self> {
        if input == 0 {
            return Err(Error::config("layers", "zero-width input"));
        }
        let mut layers = Vec::with_capacity(spec.len());
        let mut fan_in = input;
        for &(fan_out, activation) in spec {
            if fan_out == 0 {
                return Err(Error::config("layers", "zero-width layer"));
            }
            let bound = (6.0 / fan_in as f64).sqrt();
            let weights = Matrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-bound..bound));
            layers.push(DenseLayer::new(weights, vec![0.0; fan_out], activation)?);
            fan_in = fan_out;
        }
        Mlp::new(layers)
    }

    pub fn init(input: usize, spec: &[(usize, Activation)], seed: u64) -> Result<Self> {
        Mlp::init_with_rng(input, spec, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Hidden layers use LeakyReLU, the output layer is linear.
    pub fn init_standard(input: usize, hidden: &[usize], output: usize, seed: u64) -> Result<Self> {
        let spec = standard_spec(hidden, output);
        Mlp::init(input, &spec, seed)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| (l.fan_in() + 1) * l.fan_out()).sum()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape {
                op: "set_params_flat",
                left: (self.param_count(), 1),
                right: (flat.len(), 1),
            });
        }
        let mut offset = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "forward",
                left: batch.shape(),
                right: self.layers[0].weights.shape(),
            });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = post.last().unwrap_or(batch);
            let z = x.matmul(&layer.weights)?.add_row_vector(&layer.bias)?;
            let a = z.map(|v| layer.activation.apply(v));
            pre.push(z);
            post.push(a);
        }
        let output = post.last().cloned().expect("non-empty network");
        Ok((
            output,
            ForwardCache {
                input: batch.clone(),
                pre,
                post,
            },
        ))
    }

    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        self.forward(batch).map(|(out, _)| out)
    }

    /// Gradients of a scalar loss with respect to every parameter and the
    /// input batch, given `∂loss/∂output`.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Matrix) -> Result<(MlpGrads, Matrix)> {
        if cache.pre.len() != self.layers.len() || cache.post.len() != self.layers.len() {
            return Err(Error::Shape {
                op: "backward",
                left: (cache.pre.len(), 0),
                right: (self.layers.len(), 0),
            });
        }
        let out_shape = cache.post[cache.post.len() - 1].shape();
        if grad_output.shape() != out_shape {
            return Err(Error::Shape {
                op: "backward",
                left: grad_output.shape(),
                right: out_shape,
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = grad_output.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre[i];
            let mut dz = upstream;
            for (g, &zv) in dz.as_mut_slice().iter_mut().zip(z.as_slice()) {
                *g *= layer.activation.derivative(zv);
            }
            let x = if i == 0 { &cache.input } else { &cache.post[i - 1] };
            let dw = x.t_matmul(&dz)?;
            let db = dz.col_sums();
            upstream = dz.matmul_t(&layer.weights)?;
            grads.push(LayerGrads { weights: dw, bias: db });
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, upstream))
    }

    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load_weights(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut reader = ByteReader::new(&bytes);
        let mlp = Mlp::read_block(&mut reader)?;
        reader.expect_end()?;
        Ok(mlp)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_block(&mut out);
        out
    }

    pub(crate) fn write_block(&self, out: &mut Vec<u8>) {
        let start = out.len();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.fan_in() as u32).to_le_bytes());
            out.extend_from_slice(&(l.fan_out() as u32).to_le_bytes());
            out.push(l.activation.tag());
        }
        for l in &self.layers {
            for &w in l.weights.as_slice().iter().chain(&l.bias) {
                out.extend_from_slice(&(w as f32).to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }

    pub(crate) fn read_block(reader: &mut ByteReader<'_>) -> Result<Self> {
        let start = reader.pos;
        let magic = reader.take(4)?;
        if magic != WEIGHTS_MAGIC {
            return Err(reader.error_at(start, "bad magic, expected ZSLF"));
        }
        let version = reader.u16()?;
        if version != WEIGHTS_VERSION {
            return Err(reader.error_at(start + 4, format!("unsupported version {version}")));
        }
        let count = reader.u32()? as usize;
        if count == 0 {
            return Err(reader.error_at(start + 6, "layer count is zero"));
        }
        let mut table = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let at = reader.pos;
            let fan_in = reader.u32()? as usize;
            let fan_out = reader.u32()? as usize;
            let tag = reader.u8()?;
            let activation = Activation::from_tag(tag)
                .ok_or_else(|| reader.error_at(at + 8, format!("unknown activation tag {tag}")))?;
            if fan_in == 0 || fan_out == 0 {
                return Err(reader.error_at(at, "zero-width layer"));
            }
            table.push((fan_in, fan_out, activation));
        }
        let mut layers = Vec::with_capacity(count);
        for (fan_in, fan_out, activation) in table {
            let weights = reader.f32_vec(fan_in * fan_out)?;
            let bias = reader.f32_vec(fan_out)?;
            let weights = Matrix::from_vec(fan_in, fan_out, weights).expect("length checked by reader");
            layers.push(DenseLayer::new(weights, bias, activation)?);
        }
        let crc_at = reader.pos;
        let expected = crc32fast::hash(&reader.bytes[start..crc_at]);
        let stored = reader.u32()?;
        if stored != expected {
            return Err(reader.error_at(
                crc_at,
                format!("checksum mismatch: stored {stored:08x}, computed {expected:08x}"),
            ));
        }
        Mlp::new(layers).map_err(|e| reader.error_at(start, e.to_string()))
    }
}

pub(crate) fn standard_spec(hidden: &[usize], output: usize) -> Vec<(usize, Activation)> {
    hidden
        .iter()
        .map(|&w| (w, Activation::LeakyRelu))
        .chain(std::iter::once((output, Activation::Linear)))
        .collect()
}

/// Bounds-checked little-endian reader that reports absolute byte offsets.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn error_at(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Format {
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error_at(
                self.pos,
                format!("truncated: needed {n} bytes, {} remain", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let at = self.pos;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.error_at(at, "size overflow"))?)?;
        let mut out = Vec::with_capacity(n);
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(self.error_at(at + 4 * i, "non-finite parameter"));
            }
            out.push(v as f64);
        }
        Ok(out)
    }

    pub(crate) fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.error_at(self.pos, "trailing bytes after weight block"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(param_count: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            first: vec![0.0; param_count],
            second: vec![0.0; param_count],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update over parameter segments laid out in
    /// the same order as the state's accumulators. Nothing is modified when
    /// any gradient is non-finite.
    pub fn step_slices(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        let total: usize = params.iter().map(|p| p.len()).sum();
        let grad_total: usize = grads.iter().map(|g| g.len()).sum();
        if total != self.first.len() || grad_total != total || params.len() != grads.len() {
            return Err(Error::Shape {
                op: "adam_step",
                left: (self.first.len(), 1),
                right: (grad_total, 1),
            });
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteGradient { step: self.step + 1 });
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let mut k = 0;
        for (p, g) in params.into_iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: (p.len(), 1),
                    right: (g.len(), 1),
                });
            }
            for (w, &gv) in p.iter_mut().zip(g) {
                let m = beta1 * self.first[k] + (1.0 - beta1) * gv;
                let v = beta2 * self.second[k] + (1.0 - beta2) * gv * gv;
                self.first[k] = m;
                self.second[k] = v;
                if lr != 0.0 {
                    *w -= lr * (m / c1) / ((v / c2).sqrt() + eps);
                }
                k += 1;
            }
        }
        Ok(())
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    state.step_slices(vec![params], vec![grads])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn tiny(seed: u64) -> Mlp {
        Mlp::init(
            5,
            &[
                (7, Activation::LeakyRelu),
                (4, Activation::LeakyRelu),
                (3, Activation::Linear),
            ],
            seed,
        )
        .unwrap()
    }

    fn batch(seed: u64, rows: usize, cols: usize) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.5..1.5))
    }

    fn single(weights: Vec<f64>, n: usize, act: Activation) -> Mlp {
        let w = Matrix::from_vec(n, n, weights).unwrap();
        Mlp::new(vec![DenseLayer::new(w, vec![0.0; n], act).unwrap()]).unwrap()
    }

    #[test]
    fn identity_network_passes_input_and_gradient() {
        let mlp = Mlp::new(vec![DenseLayer::new(
            Matrix::identity(3),
            vec![0.0; 3],
            Activation::Linear,
        )
        .unwrap()])
        .unwrap();
        let x = batch(1, 4, 3);
        let (y, cache) = mlp.forward(&x).unwrap();
        assert_eq!(y, x);
        let g = batch(2, 4, 3);
        let (_, gx) = mlp.backward(&cache, &g).unwrap();
        assert_eq!(gx, g);
    }

    #[test]
    fn leaky_relu_negative_input() {
        let mlp = single(vec![1.0], 1, Activation::LeakyRelu);
        let x = Matrix::from_rows(&[[-1.0]]).unwrap();
        assert_eq!(mlp.predict(&x).unwrap().as_slice(), &[-0.2]);
    }

    #[test]
    fn leaky_relu_backward_slope() {
        let mlp = single(vec![1.0], 1, Activation::LeakyRelu);
        let x = Matrix::from_rows(&[[-2.0]]).unwrap();
        let (_, cache) = mlp.forward(&x).unwrap();
        let (grads, gx) = mlp.backward(&cache, &Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        assert_eq!(gx.as_slice(), &[0.2]);
        assert_eq!(grads.layers[0].weights.as_slice(), &[-0.4]);
        assert_eq!(grads.layers[0].bias, vec![0.2]);
    }

    #[test]
    fn encoder_shaped_network() {
        let mlp = Mlp::init_standard(2048, &[1024, 512], 85, 0).unwrap();
        let x = batch(0, 4, 2048);
        assert_eq!(mlp.predict(&x).unwrap().shape(), (4, 85));
    }

    #[test]
    fn forward_rejects_wrong_width() {
        assert!(tiny(0).forward(&Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn backward_rejects_mismatched_gradient() {
        let mlp = tiny(0);
        let (_, cache) = mlp.forward(&batch(1, 3, 5)).unwrap();
        assert!(mlp.backward(&cache, &Matrix::zeros(3, 4)).is_err());
    }

    #[test]
    fn chain_mismatch_rejected() {
        let a = DenseLayer::new(Matrix::zeros(2, 3), vec![0.0; 3], Activation::Linear).unwrap();
        let b = DenseLayer::new(Matrix::zeros(4, 1), vec![0.0; 1], Activation::Linear).unwrap();
        assert!(Mlp::new(vec![a, b]).is_err());
    }

    fn sq_norm_loss(mlp: &Mlp, x: &Matrix) -> f64 {
        mlp.predict(x).unwrap().sum_sq()
    }

    fn check_network(mlp: &Mlp, x: &Matrix) -> (f64, f64) {
        let (y, cache) = mlp.forward(x).unwrap();
        let (grads, gx) = mlp.backward(&cache, &y.scale(2.0)).unwrap();
        let theta = mlp.params_flat();
        let mut probe = mlp.clone();
        let param_err = grad_check(
            |t| {
                probe.set_params_flat(t).unwrap();
                sq_norm_loss(&probe, x)
            },
            &theta,
            &grads.flat(),
            1e-5,
        )
        .unwrap();
        let input_err = grad_check(
            |t| sq_norm_loss(mlp, &Matrix::from_vec(x.rows(), x.cols(), t.to_vec()).unwrap()),
            x.as_slice(),
            gx.as_slice(),
            1e-5,
        )
        .unwrap();
        (param_err, input_err)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for act in [Activation::Linear, Activation::LeakyRelu] {
            let mlp = Mlp::init(6, &[(5, act)], 9).unwrap();
            let (p, i) = check_network(&mlp, &batch(4, 3, 6));
            assert!(p <= 1e-4 && i <= 1e-4, "{act:?}: {p} {i}");
        }
        let (p, i) = check_network(&tiny(5), &batch(6, 8, 5));
        assert!(p <= 1e-4 && i <= 1e-4, "{p} {i}");
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        assert_eq!(tiny(42), tiny(42));
        assert_ne!(tiny(42), tiny(43));
        let mlp = Mlp::init(24, &[(1000, Activation::Linear)], 1).unwrap();
        let bound = (6.0f64 / 24.0).sqrt();
        assert!(mlp.layers()[0].weights.as_slice().iter().all(|w| w.abs() <= bound));
        assert!(mlp.layers()[0].bias.iter().all(|&b| b == 0.0));
        assert!(Mlp::init(3, &[(0, Activation::Linear)], 1).is_err());
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let mlp = tiny(3);
        let x = batch(7, 10, 5);
        assert_eq!(mlp.predict(&x).unwrap(), mlp.predict(&x).unwrap());
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut params = vec![0.5, -1.0, 3.0];
        let mut state = AdamState::new(3, AdamConfig::default());
        adam_step(&mut params, &[0.0; 3], &mut state).unwrap();
        assert_eq!(params, vec![0.5, -1.0, 3.0]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr_times_sign() {
        let lr = 1e-3;
        let mut params = vec![1.0, 1.0, 1.0];
        let grads = [0.5, -3.0, 1e-2];
        let mut state = AdamState::new(
            3,
            AdamConfig {
                lr,
                ..AdamConfig::default()
            },
        );
        adam_step(&mut params, &grads, &mut state).unwrap();
        for (p, g) in params.iter().zip(grads) {
            // m̂ = g and v̂ = g² after bias correction, so the update is lr·g/(|g| + ε).
            let expected = 1.0 - lr * g / (g.abs() + 1e-8);
            assert!((p - expected).abs() < 1e-15);
            assert!((p - (1.0 - lr * g.signum())).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_descends_quadratic() {
        let f = |p: &[f64]| (p[0] - 3.0).powi(2) + 2.0 * (p[1] + 1.0).powi(2);
        let mut p = vec![0.0, 0.0];
        let mut state = AdamState::new(
            2,
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
        );
        let start = f(&p);
        for _ in 0..2 {
            let g = [2.0 * (p[0] - 3.0), 4.0 * (p[1] + 1.0)];
            adam_step(&mut p, &g, &mut state).unwrap();
        }
        assert!(f(&p) < start);
    }

    #[test]
    fn adam_zero_lr_is_identity() {
        let mut p = vec![0.0, -0.0, 1.25, -7.5];
        let before = p.clone();
        let mut state = AdamState::new(
            4,
            AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
        );
        for _ in 0..3 {
            adam_step(&mut p, &[1.0, -2.0, 0.3, 9.0], &mut state).unwrap();
        }
        assert_eq!(
            p.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            before.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn adam_rejects_non_finite_without_mutation() {
        let mut p = vec![1.0, 2.0];
        let mut state = AdamState::new(2, AdamConfig::default());
        let err = adam_step(&mut p, &[1.0, f64::NAN], &mut state).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { step: 1 }));
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn weights_round_trip_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.zslf");
        let mlp = tiny(8);
        mlp.save_weights(&path).unwrap();
        let back = Mlp::load_weights(&path).unwrap();
        for (a, b) in mlp.params_flat().iter().zip(back.params_flat()) {
            assert!((a - b).abs() <= 1.2e-7 * a.abs());
            assert_eq!(b, *a as f32 as f64);
        }
        // Saving the reloaded model reproduces the file exactly.
        assert_eq!(back.to_bytes(), std::fs::read(&path).unwrap());
    }

    #[test]
    fn truncated_and_corrupted_files_rejected() {
        let bytes = tiny(8).to_bytes();
        for cut in [0, 3, 5, 12, bytes.len() / 2, bytes.len() - 1] {
            let mut r = ByteReader::new(&bytes[..cut]);
            match Mlp::read_block(&mut r) {
                Err(Error::Format { offset, .. }) => assert!(offset <= cut as u64),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Mlp::read_block(&mut ByteReader::new(&bad)),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut flipped = bytes.clone();
        let mid = bytes.len() - 10;
        flipped[mid] ^= 0x40;
        assert!(Mlp::read_block(&mut ByteReader::new(&flipped)).is_err());
    }
}
