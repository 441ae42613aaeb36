//! Time-conditioned MLP encoder with explicit forward caches and hand-written
//! backward passes.
//!
//! Architecture: a trunk of SiLU layers whose first pre-activation also
//! receives a learned linear map of a sinusoidal time embedding, followed by
//! a projection head of SiLU layers with a linear final layer. `encode`
//! returns both the trunk output h (used for similarity guidance) and the
//! head output z (used by the contrastive objective), plus the cache needed
//! to run the backward passes.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha12Rng;

use crate::checkpoint::{Checkpoint, Tensor};
use crate::error::{CheckpointError, Error, Result};
use crate::rng::uniform;

/// Sinusoidal embedding with interleaved (sin, cos) pairs:
/// entry 2i   = sin(t * 1000 / 10000^(2i/dim)),
/// entry 2i+1 = cos(t * 1000 / 10000^(2i/dim)).
pub fn time_embed(t: f64, dim: usize) -> Result<Array1<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "time embedding dimension must be a positive even number, got {dim}"
        )));
    }
    let mut out = Array1::zeros(dim);
    for i in 0..dim / 2 {
        let freq = 10000f64.powf(-(2.0 * i as f64) / dim as f64);
        let angle = t * 1000.0 * freq;
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    Ok(out)
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Widths and embedding size for [`EncoderParams`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub proj_widths: Vec<usize>,
    pub time_embed_dim: usize,
}

impl EncoderConfig {
    /// Default widths: trunk 128-128, head 64-32, 32-dim time embedding.
    pub fn for_dim(input_dim: usize) -> Self {
        EncoderConfig {
            input_dim,
            hidden_widths: vec![128, 128],
            proj_widths: vec![64, 32],
            time_embed_dim: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("encoder input_dim must be positive".into()));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::InvalidArgument(
                "encoder hidden widths must be non-empty and positive".into(),
            ));
        }
        if self.proj_widths.is_empty() || self.proj_widths.contains(&0) {
            return Err(Error::InvalidArgument(
                "encoder projection widths must be non-empty and positive".into(),
            ));
        }
        if self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(
                "encoder time embedding dimension must be a positive even number".into(),
            ));
        }
        Ok(())
    }

    /// Embedding width h lives in.
    pub fn embed_dim(&self) -> usize {
        *self.hidden_widths.last().unwrap()
    }

    /// Projection width z lives in.
    pub fn proj_dim(&self) -> usize {
        *self.proj_widths.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LinearLayer {
    w: Array2<f64>,
    b: Array1<f64>,
}

impl LinearLayer {
    fn xavier(out_dim: usize, in_dim: usize, rng: &mut ChaCha12Rng) -> Self {
        LinearLayer {
            w: xavier_matrix(out_dim, in_dim, rng),
            b: Array1::zeros(out_dim),
        }
    }
}

fn xavier_matrix(out_dim: usize, in_dim: usize, rng: &mut ChaCha12Rng) -> Array2<f64> {
    let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
    let mut w = Array2::zeros((out_dim, in_dim));
    for r in 0..out_dim {
        for c in 0..in_dim {
            w[[r, c]] = uniform(rng, -bound, bound);
        }
    }
    w
}

/// All learned tensors of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    trunk: Vec<LinearLayer>,
    time_proj: Array2<f64>,
    head: Vec<LinearLayer>,
}

/// Intermediate values from one `encode` call, consumed by the backward
/// passes. Tied to the parameter shapes it was produced with.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    config: EncoderConfig,
    input: Array1<f64>,
    temb: Array1<f64>,
    trunk_pre: Vec<Array1<f64>>,
    trunk_act: Vec<Array1<f64>>,
    head_pre: Vec<Array1<f64>>,
    head_act: Vec<Array1<f64>>,
}

impl ForwardCache {
    /// Trunk output h (the embedding similarity guidance compares).
    pub fn h(&self) -> &Array1<f64> {
        self.trunk_act.last().unwrap()
    }

    /// Head output z (the vector the contrastive objective normalizes).
    pub fn z(&self) -> &Array1<f64> {
        self.head_act.last().unwrap()
    }
}

/// Parameter gradients, mirroring [`EncoderParams`] tensor for tensor.
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    trunk_w: Vec<Array2<f64>>,
    trunk_b: Vec<Array1<f64>>,
    time_proj: Array2<f64>,
    head_w: Vec<Array2<f64>>,
    head_b: Vec<Array1<f64>>,
}

impl EncoderGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        EncoderGrads {
            trunk_w: params.trunk.iter().map(|l| Array2::zeros(l.w.dim())).collect(),
            trunk_b: params.trunk.iter().map(|l| Array1::zeros(l.b.len())).collect(),
            time_proj: Array2::zeros(params.time_proj.dim()),
            head_w: params.head.iter().map(|l| Array2::zeros(l.w.dim())).collect(),
            head_b: params.head.iter().map(|l| Array1::zeros(l.b.len())).collect(),
        }
    }

    pub fn add(&mut self, other: &EncoderGrads) {
        for (a, b) in self.trunk_w.iter_mut().zip(&other.trunk_w) {
            *a += b;
        }
        for (a, b) in self.trunk_b.iter_mut().zip(&other.trunk_b) {
            *a += b;
        }
        self.time_proj += &other.time_proj;
        for (a, b) in self.head_w.iter_mut().zip(&other.head_w) {
            *a += b;
        }
        for (a, b) in self.head_b.iter_mut().zip(&other.head_b) {
            *a += b;
        }
    }

    /// Flattened in the same order as [`EncoderParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.trunk_w.iter().zip(&self.trunk_b) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out.extend(self.time_proj.iter());
        for (w, b) in self.head_w.iter().zip(&self.head_b) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl EncoderParams {
    /// Xavier-uniform weights and zero biases, drawn in a fixed order so the
    /// same seed always produces the same tensors.
    pub fn init(config: EncoderConfig, rng: &mut ChaCha12Rng) -> Result<Self> {
        config.validate()?;
        let mut trunk = Vec::new();
        let mut in_dim = config.input_dim;
        for &width in &config.hidden_widths {
            trunk.push(LinearLayer::xavier(width, in_dim, rng));
            in_dim = width;
        }
        let time_proj = xavier_matrix(config.hidden_widths[0], config.time_embed_dim, rng);
        let mut head = Vec::new();
        let mut in_dim = config.embed_dim();
        for &width in &config.proj_widths {
            head.push(LinearLayer::xavier(width, in_dim, rng));
            in_dim = width;
        }
        Ok(EncoderParams {
            config,
            trunk,
            time_proj,
            head,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Forward pass; returns the cache holding h, z, and every intermediate
    /// needed by the backward passes.
    pub fn encode(&self, x: &Array1<f64>, t: f64) -> Result<ForwardCache> {
        if x.len() != self.config.input_dim {
            return Err(Error::InvalidArgument(format!(
                "encoder input has {} coordinates, expected {}",
                x.len(),
                self.config.input_dim
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite encoder input".into()));
        }
        Error::check_range("t", t, 0.0, crate::sde::HORIZON)?;
        let temb = time_embed(t, self.config.time_embed_dim)?;

        let mut trunk_pre = Vec::with_capacity(self.trunk.len());
        let mut trunk_act = Vec::with_capacity(self.trunk.len());
        let mut a = x.clone();
        for (i, layer) in self.trunk.iter().enumerate() {
            let mut pre = layer.w.dot(&a) + &layer.b;
            if i == 0 {
                pre += &self.time_proj.dot(&temb);
            }
            let act = pre.mapv(silu);
            trunk_pre.push(pre);
            trunk_act.push(act.clone());
            a = act;
        }

        let mut head_pre = Vec::with_capacity(self.head.len());
        let mut head_act = Vec::with_capacity(self.head.len());
        let last = self.head.len() - 1;
        for (j, layer) in self.head.iter().enumerate() {
            let pre = layer.w.dot(&a) + &layer.b;
            let act = if j < last { pre.mapv(silu) } else { pre.clone() };
            head_pre.push(pre);
            head_act.push(act.clone());
            a = act;
        }

        Ok(ForwardCache {
            config: self.config.clone(),
            input: x.clone(),
            temb,
            trunk_pre,
            trunk_act,
            head_pre,
            head_act,
        })
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.config != self.config {
            return Err(Error::InvalidArgument(
                "forward cache was produced under a different encoder configuration".into(),
            ));
        }
        Ok(())
    }

    /// Gradients of a scalar loss with respect to every parameter, given the
    /// loss gradients with respect to h and/or z.
    pub fn backward_params(
        &self,
        cache: &ForwardCache,
        grad_h: Option<&Array1<f64>>,
        grad_z: Option<&Array1<f64>>,
    ) -> Result<EncoderGrads> {
        let (grads, _) = self.backprop(cache, grad_h, grad_z, true, false)?;
        Ok(grads.unwrap())
    }

    /// Gradient of a scalar loss with respect to the input x, given the loss
    /// gradient with respect to h. This is the path similarity guidance
    /// differentiates through.
    pub fn backward_input(&self, cache: &ForwardCache, grad_h: &Array1<f64>) -> Result<Array1<f64>> {
        let (_, gx) = self.backprop(cache, Some(grad_h), None, false, true)?;
        Ok(gx.unwrap())
    }

    fn backprop(
        &self,
        cache: &ForwardCache,
        grad_h: Option<&Array1<f64>>,
        grad_z: Option<&Array1<f64>>,
        want_params: bool,
        want_input: bool,
    ) -> Result<(Option<EncoderGrads>, Option<Array1<f64>>)> {
        self.check_cache(cache)?;
        if grad_h.is_none() && grad_z.is_none() {
            return Err(Error::InvalidArgument(
                "backward pass needs a gradient with respect to h, z, or both".into(),
            ));
        }
        if let Some(g) = grad_h {
            if g.len() != self.config.embed_dim() {
                return Err(Error::InvalidArgument(format!(
                    "grad_h has {} coordinates, expected {}",
                    g.len(),
                    self.config.embed_dim()
                )));
            }
        }
        if let Some(g) = grad_z {
            if g.len() != self.config.proj_dim() {
                return Err(Error::InvalidArgument(format!(
                    "grad_z has {} coordinates, expected {}",
                    g.len(),
                    self.config.proj_dim()
                )));
            }
        }

        let mut grads = want_params.then(|| EncoderGrads::zeros_like(self));

        // Head: walk from z back to h. `delta` holds the gradient with
        // respect to the current layer's pre-activation; the final layer is
        // linear so it starts as grad_z itself.
        let mut grad_h_total = match grad_h {
            Some(g) => g.clone(),
            None => Array1::zeros(self.config.embed_dim()),
        };
        if let Some(gz) = grad_z {
            let mut delta = gz.clone();
            for j in (0..self.head.len()).rev() {
                if let Some(g) = grads.as_mut() {
                    let input = if j == 0 {
                        cache.h()
                    } else {
                        &cache.head_act[j - 1]
                    };
                    accumulate_outer(&mut g.head_w[j], &delta, input);
                    g.head_b[j] += &delta;
                }
                let grad_input = self.head[j].w.t().dot(&delta);
                if j > 0 {
                    delta = &grad_input * &cache.head_pre[j - 1].mapv(silu_prime);
                } else {
                    grad_h_total += &grad_input;
                }
            }
        }

        // Trunk: h = silu(pre_last), so convert to pre-activation space first.
        let mut delta = &grad_h_total * &cache.trunk_pre[self.trunk.len() - 1].mapv(silu_prime);
        let mut grad_x = None;
        for i in (0..self.trunk.len()).rev() {
            if let Some(g) = grads.as_mut() {
                let input = if i == 0 {
                    &cache.input
                } else {
                    &cache.trunk_act[i - 1]
                };
                accumulate_outer(&mut g.trunk_w[i], &delta, input);
                g.trunk_b[i] += &delta;
                if i == 0 {
                    accumulate_outer(&mut g.time_proj, &delta, &cache.temb);
                }
            }
            if i > 0 {
                let grad_input = self.trunk[i].w.t().dot(&delta);
                delta = &grad_input * &cache.trunk_pre[i - 1].mapv(silu_prime);
            } else if want_input {
                grad_x = Some(self.trunk[0].w.t().dot(&delta));
            }
        }

        Ok((grads, grad_x))
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for l in &self.trunk {
            n += l.w.len() + l.b.len();
        }
        n += self.time_proj.len();
        for l in &self.head {
            n += l.w.len() + l.b.len();
        }
        n
    }

    /// Flattened parameters: trunk layer weights then biases in order, the
    /// time projection, then head layers; matrices row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.trunk {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out.extend(self.time_proj.iter());
        for l in &self.head {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat).
    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::InvalidArgument(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut pos = 0;
        let mut fill = |iter: &mut dyn Iterator<Item = &mut f64>| {
            for v in iter {
                *v = flat[pos];
                pos += 1;
            }
        };
        for l in &mut self.trunk {
            fill(&mut l.w.iter_mut());
            fill(&mut l.b.iter_mut());
        }
        fill(&mut self.time_proj.iter_mut());
        for l in &mut self.head {
            fill(&mut l.w.iter_mut());
            fill(&mut l.b.iter_mut());
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut cp = Checkpoint::new();
        for (i, l) in self.trunk.iter().enumerate() {
            let (r, c) = l.w.dim();
            cp.insert(
                &format!("trunk.{i}.w"),
                Tensor::matrix(r, c, l.w.iter().cloned().collect()),
            );
            cp.insert(&format!("trunk.{i}.b"), Tensor::vector(l.b.to_vec()));
        }
        let (r, c) = self.time_proj.dim();
        cp.insert(
            "time_proj",
            Tensor::matrix(r, c, self.time_proj.iter().cloned().collect()),
        );
        for (j, l) in self.head.iter().enumerate() {
            let (r, c) = l.w.dim();
            cp.insert(
                &format!("head.{j}.w"),
                Tensor::matrix(r, c, l.w.iter().cloned().collect()),
            );
            cp.insert(&format!("head.{j}.b"), Tensor::vector(l.b.to_vec()));
        }
        cp
    }

    /// Rebuild parameters from a checkpoint, inferring the configuration
    /// from the stored tensor shapes and validating layer chaining.
    pub fn from_checkpoint(cp: &Checkpoint) -> Result<Self> {
        let layer = |prefix: &str, i: usize| -> std::result::Result<LinearLayer, CheckpointError> {
            let wt = cp.get(&format!("{prefix}.{i}.w"))?;
            if wt.dims.len() != 2 {
                return Err(CheckpointError::Corrupt(format!(
                    "{prefix}.{i}.w is not a matrix"
                )));
            }
            let (rows, cols) = (wt.dims[0], wt.dims[1]);
            let bt = cp.get_shaped(&format!("{prefix}.{i}.b"), &[rows])?;
            Ok(LinearLayer {
                w: Array2::from_shape_vec((rows, cols), wt.values.clone())
                    .map_err(|e| CheckpointError::Corrupt(e.to_string()))?,
                b: Array1::from_vec(bt.values.clone()),
            })
        };

        let count = |prefix: &str| {
            let mut n = 0;
            while cp.get(&format!("{prefix}.{n}.w")).is_ok() {
                n += 1;
            }
            n
        };

        let trunk_len = count("trunk");
        let head_len = count("head");
        if trunk_len == 0 || head_len == 0 {
            return Err(CheckpointError::MissingTensor("trunk.0.w".into()).into());
        }
        let trunk: Vec<LinearLayer> = (0..trunk_len)
            .map(|i| layer("trunk", i))
            .collect::<std::result::Result<_, _>>()?;
        let head: Vec<LinearLayer> = (0..head_len)
            .map(|j| layer("head", j))
            .collect::<std::result::Result<_, _>>()?;

        let tp = cp.get("time_proj")?;
        if tp.dims.len() != 2 {
            return Err(CheckpointError::Corrupt("time_proj is not a matrix".into()).into());
        }
        let time_proj = Array2::from_shape_vec((tp.dims[0], tp.dims[1]), tp.values.clone())
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;

        let config = EncoderConfig {
            input_dim: trunk[0].w.dim().1,
            hidden_widths: trunk.iter().map(|l| l.w.dim().0).collect(),
            proj_widths: head.iter().map(|l| l.w.dim().0).collect(),
            time_embed_dim: time_proj.dim().1,
        };
        config.validate()?;

        let params = EncoderParams {
            config,
            trunk,
            time_proj,
            head,
        };
        params.validate_chaining()?;
        Ok(params)
    }

    fn validate_chaining(&self) -> Result<()> {
        let mut in_dim = self.config.input_dim;
        for (i, l) in self.trunk.iter().enumerate() {
            if l.w.dim().1 != in_dim {
                return Err(CheckpointError::TensorShape {
                    name: format!("trunk.{i}.w"),
                    expected: vec![l.w.dim().0, in_dim],
                    found: vec![l.w.dim().0, l.w.dim().1],
                }
                .into());
            }
            in_dim = l.w.dim().0;
        }
        if self.time_proj.dim().0 != self.config.hidden_widths[0] {
            return Err(CheckpointError::TensorShape {
                name: "time_proj".into(),
                expected: vec![self.config.hidden_widths[0], self.config.time_embed_dim],
                found: vec![self.time_proj.dim().0, self.time_proj.dim().1],
            }
            .into());
        }
        let mut in_dim = self.config.embed_dim();
        for (j, l) in self.head.iter().enumerate() {
            if l.w.dim().1 != in_dim {
                return Err(CheckpointError::TensorShape {
                    name: format!("head.{j}.w"),
                    expected: vec![l.w.dim().0, in_dim],
                    found: vec![l.w.dim().0, l.w.dim().1],
                }
                .into());
            }
            in_dim = l.w.dim().0;
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

fn accumulate_outer(target: &mut Array2<f64>, delta: &Array1<f64>, input: &Array1<f64>) {
    for r in 0..delta.len() {
        let d = delta[r];
        if d == 0.0 {
            continue;
        }
        for c in 0..input.len() {
            target[[r, c]] += d * input[c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{child_rng, master_rng, standard_normal_vec};
    use approx::assert_relative_eq;
    use ndarray::array;

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            input_dim: 5,
            hidden_widths: vec![16, 12],
            proj_widths: vec![8, 6],
            time_embed_dim: 8,
        }
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
        num / den
    }

    #[test]
    fn time_embed_at_zero_is_sin_cos_pairs() {
        let e = time_embed(0.0, 6).unwrap();
        assert_eq!(e.to_vec(), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn time_embed_known_angles() {
        // dim 4: frequencies 1 and 10^-2, so angles are 1000t and 10t.
        let t = 0.001;
        let e = time_embed(t, 4).unwrap();
        assert_relative_eq!(e[0], 1f64.sin());
        assert_relative_eq!(e[1], 1f64.cos());
        assert_relative_eq!(e[2], 0.01f64.sin());
        assert_relative_eq!(e[3], 0.01f64.cos());
    }

    #[test]
    fn time_embed_is_bounded_and_rejects_odd_dims() {
        for i in 0..=100 {
            let e = time_embed(i as f64 / 100.0, 32).unwrap();
            assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        assert!(time_embed(0.5, 7).is_err());
        assert!(time_embed(0.5, 0).is_err());
    }

    #[test]
    fn silu_known_values() {
        assert_eq!(silu(0.0), 0.0);
        assert_relative_eq!(silu(1.0), 0.7310585786300049, max_relative = 1e-15);
        assert_relative_eq!(silu_prime(0.0), 0.5);
        // FD check of the derivative.
        let h = 1e-6;
        for &x in &[-3.0, -0.7, 0.3, 2.5] {
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert_relative_eq!(silu_prime(x), fd, max_relative = 1e-8);
        }
    }

    #[test]
    fn init_is_seeded_and_biases_are_zero() {
        let a = EncoderParams::init(small_config(), &mut child_rng(3, 0)).unwrap();
        let b = EncoderParams::init(small_config(), &mut child_rng(3, 0)).unwrap();
        let c = EncoderParams::init(small_config(), &mut child_rng(4, 0)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for l in &a.trunk {
            assert!(l.b.iter().all(|v| *v == 0.0));
        }
        // Xavier bound for the first trunk layer: sqrt(6/(5+16)).
        let bound = (6.0f64 / 21.0).sqrt();
        assert!(a.trunk[0].w.iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn encode_shapes_match_config() {
        let p = EncoderParams::init(small_config(), &mut master_rng(1)).unwrap();
        let x = standard_normal_vec(&mut master_rng(2), 5);
        let cache = p.encode(&x, 0.3).unwrap();
        assert_eq!(cache.h().len(), 12);
        assert_eq!(cache.z().len(), 6);
    }

    #[test]
    fn encode_depends_on_time() {
        let p = EncoderParams::init(small_config(), &mut master_rng(1)).unwrap();
        let x = standard_normal_vec(&mut master_rng(2), 5);
        let a = p.encode(&x, 0.1).unwrap();
        let b = p.encode(&x, 0.9).unwrap();
        assert_ne!(a.h(), b.h());
    }

    #[test]
    fn encode_rejects_bad_input() {
        let p = EncoderParams::init(small_config(), &mut master_rng(1)).unwrap();
        assert!(p.encode(&array![1.0, 2.0], 0.5).is_err());
        let x = standard_normal_vec(&mut master_rng(2), 5);
        assert!(p.encode(&x, -0.1).is_err());
        assert!(p.encode(&x, 1.5).is_err());
        let mut bad = x.clone();
        bad[0] = f64::NAN;
        assert!(p.encode(&bad, 0.5).is_err());
    }

    #[test]
    fn head_final_layer_is_linear() {
        // With all head biases shifted, a linear final layer shifts z by
        // exactly the bias delta; a SiLU final layer would not.
        let p = EncoderParams::init(small_config(), &mut master_rng(7)).unwrap();
        let x = standard_normal_vec(&mut master_rng(8), 5);
        let z0 = p.encode(&x, 0.2).unwrap().z().clone();
        let mut shifted = p.clone();
        let last = shifted.head.len() - 1;
        shifted.head[last].b += 10.0;
        let z1 = shifted.encode(&x, 0.2).unwrap().z().clone();
        for i in 0..z0.len() {
            assert_relative_eq!(z1[i] - z0[i], 10.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn param_gradients_match_finite_differences() {
        let mut rng = master_rng(11);
        for trial in 0..4 {
            let p = EncoderParams::init(small_config(), &mut rng).unwrap();
            let x = standard_normal_vec(&mut rng, 5);
            let t = 0.1 + 0.2 * trial as f64;
            let ch = standard_normal_vec(&mut rng, 12);
            let cz = standard_normal_vec(&mut rng, 6);

            let cache = p.encode(&x, t).unwrap();
            let analytic = p
                .backward_params(&cache, Some(&ch), Some(&cz))
                .unwrap()
                .to_flat();

            // Loss = ch . h + cz . z, differentiated by central differences
            // over every parameter.
            let flat = p.to_flat();
            let mut probe = p.clone();
            let h = 1e-6;
            let mut fd = vec![0.0; flat.len()];
            for k in 0..flat.len() {
                let mut fp = flat.clone();
                fp[k] += h;
                probe.set_from_flat(&fp).unwrap();
                let cp = probe.encode(&x, t).unwrap();
                let lp = ch.dot(cp.h()) + cz.dot(cp.z());
                fp[k] -= 2.0 * h;
                probe.set_from_flat(&fp).unwrap();
                let cm = probe.encode(&x, t).unwrap();
                let lm = ch.dot(cm.h()) + cz.dot(cm.z());
                fd[k] = (lp - lm) / (2.0 * h);
            }
            let err = rel_err(&analytic, &fd);
            assert!(err < 1e-6, "trial {trial}: rel err {err}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = master_rng(13);
        for trial in 0..6 {
            let p = EncoderParams::init(small_config(), &mut rng).unwrap();
            let x = standard_normal_vec(&mut rng, 5);
            let t = 0.15 * (trial + 1) as f64;
            let ch = standard_normal_vec(&mut rng, 12);

            let cache = p.encode(&x, t).unwrap();
            let analytic = p.backward_input(&cache, &ch).unwrap();

            let h = 1e-6;
            let mut fd = Array1::zeros(5);
            for k in 0..5 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let lp = ch.dot(p.encode(&xp, t).unwrap().h());
                let lm = ch.dot(p.encode(&xm, t).unwrap().h());
                fd[k] = (lp - lm) / (2.0 * h);
            }
            let err = rel_err(analytic.as_slice().unwrap(), fd.as_slice().unwrap());
            assert!(err < 1e-6, "trial {trial}: rel err {err}");
        }
    }

    #[test]
    fn backward_with_only_one_branch_matches_combined() {
        let p = EncoderParams::init(small_config(), &mut master_rng(17)).unwrap();
        let x = standard_normal_vec(&mut master_rng(18), 5);
        let cache = p.encode(&x, 0.4).unwrap();
        let ch = standard_normal_vec(&mut master_rng(19), 12);
        let cz = standard_normal_vec(&mut master_rng(20), 6);
        let both = p.backward_params(&cache, Some(&ch), Some(&cz)).unwrap().to_flat();
        let mut h_only = p.backward_params(&cache, Some(&ch), None).unwrap();
        let z_only = p.backward_params(&cache, None, Some(&cz)).unwrap();
        h_only.add(&z_only);
        let sum = h_only.to_flat();
        for (a, b) in both.iter().zip(&sum) {
            assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    #[test]
    fn backward_rejects_mismatched_cache_and_missing_grads() {
        let p = EncoderParams::init(small_config(), &mut master_rng(21)).unwrap();
        let other_cfg = EncoderConfig {
            hidden_widths: vec![16, 10],
            ..small_config()
        };
        let q = EncoderParams::init(other_cfg, &mut master_rng(21)).unwrap();
        let x = standard_normal_vec(&mut master_rng(22), 5);
        let cache_q = q.encode(&x, 0.5).unwrap();
        let g = Array1::zeros(12);
        assert!(p.backward_params(&cache_q, Some(&g), None).is_err());
        let cache_p = p.encode(&x, 0.5).unwrap();
        assert!(p.backward_params(&cache_p, None, None).is_err());
        assert!(p.backward_input(&cache_p, &Array1::zeros(7)).is_err());
    }

    #[test]
    fn flat_round_trip_preserves_params() {
        let p = EncoderParams::init(small_config(), &mut master_rng(23)).unwrap();
        let flat = p.to_flat();
        assert_eq!(flat.len(), p.param_count());
        let mut q = EncoderParams::init(small_config(), &mut master_rng(99)).unwrap();
        q.set_from_flat(&flat).unwrap();
        assert_eq!(p, q);
        assert!(q.set_from_flat(&flat[1..]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_preserves_params_and_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        let p = EncoderParams::init(small_config(), &mut master_rng(29)).unwrap();
        p.save(&path).unwrap();
        let q = EncoderParams::load(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.config(), &small_config());
    }

    #[test]
    fn checkpoint_with_inconsistent_shapes_is_rejected() {
        let p = EncoderParams::init(small_config(), &mut master_rng(31)).unwrap();
        let mut cp = p.to_checkpoint();
        // Replace the second trunk matrix with one whose input side no longer
        // chains onto the first layer's output.
        cp.insert("trunk.1.w", Tensor::matrix(12, 9, vec![0.0; 108]));
        assert!(EncoderParams::from_checkpoint(&cp).is_err());
    }
}
