//! Normalized temperature-scaled cross-entropy (NT-Xent) objective and the
//! contrastive training loop.
//!
//! A batch holds K positive pairs as 2K projection vectors ordered
//! (z_1, zbar_1, z_2, zbar_2, ...). Writing u_i for the unit-normalized
//! vectors and s_ij = u_i . u_j, the loss is
//!
//!   L = (1/2K) sum_i [ logsumexp_{k != i}(s_ik / tau) - s_{i,p(i)} / tau ]
//!
//! with p(i) the pair partner of i. Every anchor sees all 2K - 1 other
//! vectors in its denominator; only the partner counts as positive.

use ndarray::Array1;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::encoder::{EncoderGrads, EncoderParams};
use crate::error::{Error, Result};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::uniform;
use crate::sde::{NoiseSchedule, HORIZON};
use crate::tasks::InvariantView;

/// Smallest timestep drawn during training; keeps the perturbation kernel
/// away from its degenerate t = 0 limit.
pub const MIN_TRAIN_TIME: f64 = 1e-3;

fn normalize_batch(z: &[Array1<f64>], temperature: f64) -> Result<Vec<Array1<f64>>> {
    if z.len() < 2 || !z.len().is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "NT-Xent needs an even batch of at least 2 vectors, got {}",
            z.len()
        )));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    let dim = z[0].len();
    let mut units = Vec::with_capacity(z.len());
    for (i, zi) in z.iter().enumerate() {
        if zi.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "projection {i} has {} coordinates, expected {dim}",
                zi.len()
            )));
        }
        if !zi.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite projection at index {i}")));
        }
        let norm = zi.mapv(|v| v * v).sum().sqrt();
        if norm == 0.0 {
            return Err(Error::Numerical(format!(
                "zero-norm projection at index {i} cannot be normalized"
            )));
        }
        units.push(zi.mapv(|v| v / norm));
    }
    Ok(units)
}

fn similarity_matrix(units: &[Array1<f64>]) -> Vec<Vec<f64>> {
    let n = units.len();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = units[i].dot(&units[j]);
            s[i][j] = v;
            s[j][i] = v;
        }
    }
    s
}

/// Pair partner under the interleaved ordering.
fn partner(i: usize) -> usize {
    i ^ 1
}

/// NT-Xent loss over an interleaved pair batch.
pub fn nt_xent_loss(z: &[Array1<f64>], temperature: f64) -> Result<f64> {
    let units = normalize_batch(z, temperature)?;
    let s = similarity_matrix(&units);
    let n = units.len();
    let mut total = 0.0;
    for i in 0..n {
        // Stabilized logsumexp over k != i.
        let mut max = f64::NEG_INFINITY;
        for k in 0..n {
            if k != i {
                max = max.max(s[i][k] / temperature);
            }
        }
        let mut denom = 0.0;
        for k in 0..n {
            if k != i {
                denom += (s[i][k] / temperature - max).exp();
            }
        }
        let lse = max + denom.ln();
        total += lse - s[i][partner(i)] / temperature;
    }
    Ok(total / n as f64)
}

/// Loss together with its gradient with respect to every raw (unnormalized)
/// projection vector.
pub fn nt_xent_with_grad(
    z: &[Array1<f64>],
    temperature: f64,
) -> Result<(f64, Vec<Array1<f64>>)> {
    let units = normalize_batch(z, temperature)?;
    let s = similarity_matrix(&units);
    let n = units.len();
    let dim = units[0].len();

    // Softmax weights q[i][j] over k != i, plus the loss itself.
    let mut q = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for i in 0..n {
        let mut max = f64::NEG_INFINITY;
        for k in 0..n {
            if k != i {
                max = max.max(s[i][k] / temperature);
            }
        }
        let mut denom = 0.0;
        for k in 0..n {
            if k != i {
                denom += (s[i][k] / temperature - max).exp();
            }
        }
        for j in 0..n {
            if j != i {
                q[i][j] = (s[i][j] / temperature - max).exp() / denom;
            }
        }
        total += max + denom.ln() - s[i][partner(i)] / temperature;
    }
    let loss = total / n as f64;

    // dL/ds_ij = (q[i][j] - [j = p(i)]) / (n tau) for j != i; each unordered
    // similarity appears in both anchors' terms, so the gradient on u_i sums
    // the row and column contributions.
    let scale = 1.0 / (n as f64 * temperature);
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        let mut du = Array1::<f64>::zeros(dim);
        for j in 0..n {
            if j == i {
                continue;
            }
            let mut coeff = q[i][j] + q[j][i];
            if j == partner(i) {
                coeff -= 2.0;
            }
            du.scaled_add(scale * coeff, &units[j]);
        }
        // Back through the normalization: dL/dz = (du - (u . du) u) / |z|.
        let norm = z[i].mapv(|v| v * v).sum().sqrt();
        let radial = units[i].dot(&du);
        let gz = du
            .iter()
            .zip(units[i].iter())
            .map(|(d, u)| (d - radial * u) / norm)
            .collect::<Array1<f64>>();
        grads.push(gz);
    }
    Ok((loss, grads))
}

/// One contrastive batch: 2K perturbed views interleaved
/// (x~_1, xbar~_1, x~_2, xbar~_2, ...), the per-pair timesteps, and the
/// source indices the pairs were built from.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub inputs: Vec<Array1<f64>>,
    pub times: Vec<f64>,
    pub source_indices: Vec<usize>,
}

/// Build K positive pairs: pick K data items, form each item's invariant
/// view, draw one timestep t_k per pair uniformly on
/// [MIN_TRAIN_TIME, HORIZON], and perturb both views with independent noise
/// at that shared t_k.
///
/// Draw order per batch is fixed: indices first, then for each pair its
/// timestep, the view-a noise, and the view-b noise.
pub fn make_pair_batch(
    data: &[Array1<f64>],
    view: &InvariantView,
    schedule: &NoiseSchedule,
    pairs: usize,
    rng: &mut ChaCha12Rng,
) -> Result<PairBatch> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("pair batch needs a non-empty dataset".into()));
    }
    if pairs == 0 {
        return Err(Error::InvalidArgument("pair batch needs at least one pair".into()));
    }
    let source_indices: Vec<usize> = if pairs <= data.len() {
        sample_indices(rng, data.len(), pairs).into_iter().collect()
    } else {
        (0..pairs).map(|_| rng.random_range(0..data.len())).collect()
    };
    let mut inputs = Vec::with_capacity(2 * pairs);
    let mut times = Vec::with_capacity(pairs);
    for &idx in &source_indices {
        let x = &data[idx];
        let xbar = view.apply(x)?;
        let t = uniform(rng, MIN_TRAIN_TIME, HORIZON);
        inputs.push(schedule.perturb(x, t, rng)?);
        inputs.push(schedule.perturb(&xbar, t, rng)?);
        times.push(t);
    }
    Ok(PairBatch {
        inputs,
        times,
        source_indices,
    })
}

/// Hyperparameters of the contrastive training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub pairs_per_batch: usize,
    pub temperature: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            pairs_per_batch: 32,
            temperature: 0.1,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairs_per_batch == 0 {
            return Err(Error::InvalidArgument("pairs_per_batch must be positive".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        self.adam.validate()
    }
}

/// Train the encoder with NT-Xent on (sample, invariant view) pairs.
/// Returns the trained parameters and the per-iteration loss curve.
///
/// The loop is sequential and consumes `rng` in a fixed order (one batch per
/// iteration), so a given seed reproduces the run exactly.
pub fn train_encoder(
    mut params: EncoderParams,
    data: &[Array1<f64>],
    view: &InvariantView,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    rng: &mut ChaCha12Rng,
) -> Result<(EncoderParams, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training needs a non-empty dataset".into()));
    }
    let mut flat = params.to_flat();
    let mut state = AdamState::new(flat.len());
    let mut curve = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let batch = make_pair_batch(data, view, schedule, cfg.pairs_per_batch, rng)?;
        let mut caches = Vec::with_capacity(batch.inputs.len());
        let mut zs = Vec::with_capacity(batch.inputs.len());
        for (i, x) in batch.inputs.iter().enumerate() {
            let cache = params.encode(x, batch.times[i / 2])?;
            zs.push(cache.z().clone());
            caches.push(cache);
        }
        let (loss, grad_z) = nt_xent_with_grad(&zs, cfg.temperature)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                iteration,
                message: format!("loss became {loss}"),
            });
        }
        let mut grads = EncoderGrads::zeros_like(&params);
        for (cache, gz) in caches.iter().zip(&grad_z) {
            grads.add(&params.backward_params(cache, None, Some(gz))?);
        }
        adam_step(&mut flat, &grads.to_flat(), &mut state, &cfg.adam).map_err(|e| match e {
            Error::Numerical(msg) => Error::TrainingDiverged {
                iteration,
                message: msg,
            },
            other => other,
        })?;
        params.set_from_flat(&flat)?;
        curve.push(loss);
    }
    Ok((params, curve))
}
