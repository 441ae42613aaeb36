//! Learned score function trained with denoising score matching.
//!
//! The net reuses the time-conditioned MLP architecture with a projection
//! head as wide as the input; its output is read as a noise prediction
//! eps-hat(x_t, t), giving the score s(x, t) = -eps-hat / sigma(t). Training
//! minimizes the mean squared residual against the actual noise used to
//! perturb each sample, which is the standard noise-prediction form of the
//! denoising objective.

use ndarray::Array1;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::contrastive::MIN_TRAIN_TIME;
use crate::encoder::{EncoderConfig, EncoderGrads, EncoderParams};
use crate::error::{Error, Result};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::{standard_normal_vec, uniform};
use crate::score::ScoreFunction;
use crate::sde::{NoiseSchedule, HORIZON};

/// Score function backed by a trained noise-prediction net.
#[derive(Debug, Clone)]
pub struct NetScore {
    params: EncoderParams,
    schedule: NoiseSchedule,
}

impl NetScore {
    /// The net's projection head must be as wide as its input.
    pub fn new(params: EncoderParams, schedule: NoiseSchedule) -> Result<Self> {
        let cfg = params.config();
        if cfg.proj_dim() != cfg.input_dim {
            return Err(Error::InvalidArgument(format!(
                "noise-prediction net must map {} inputs to {} outputs, head produces {}",
                cfg.input_dim,
                cfg.input_dim,
                cfg.proj_dim()
            )));
        }
        Ok(NetScore { params, schedule })
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    /// Default architecture for a noise-prediction net on `input_dim`
    /// coordinates.
    pub fn default_config(input_dim: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim,
            hidden_widths: vec![128, 128],
            proj_widths: vec![128, input_dim],
            time_embed_dim: 32,
        }
    }
}

impl ScoreFunction for NetScore {
    fn dim(&self) -> usize {
        self.params.config().input_dim
    }

    /// s(y, t) = -eps-hat(y, t) / sigma(t). Times below the training floor
    /// are clamped to it, keeping sigma away from zero.
    fn score(&self, y: &Array1<f64>, t: f64) -> Result<Array1<f64>> {
        let t_eff = t.clamp(MIN_TRAIN_TIME, HORIZON);
        let sd = self.schedule.marginal_std(t_eff)?;
        let eps_hat = self.params.encode(y, t_eff)?.z().clone();
        Ok(eps_hat.mapv(|v| -v / sd))
    }
}

/// Hyperparameters of the denoising training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for ScoreTrainConfig {
    fn default() -> Self {
        ScoreTrainConfig {
            iterations: 3000,
            batch_size: 64,
            adam: AdamConfig {
                learning_rate: 1e-3,
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
        }
    }
}

impl ScoreTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        self.adam.validate()
    }
}

/// Train a noise-prediction net on `data` draws from the modeled
/// distribution. Returns the score function and the per-iteration loss
/// curve; zero iterations return the initialized net unchanged.
///
/// Per iteration the loop draws batch indices, then per item one timestep
/// t ~ U(MIN_TRAIN_TIME, HORIZON) and one noise vector, in that order.
pub fn train_score(
    params: EncoderParams,
    data: &[Array1<f64>],
    schedule: &NoiseSchedule,
    cfg: &ScoreTrainConfig,
    rng: &mut ChaCha12Rng,
) -> Result<(NetScore, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training needs a non-empty dataset".into()));
    }
    let dim = data[0].len();
    if data.iter().any(|x| x.len() != dim) {
        return Err(Error::InvalidArgument("training data has mixed dimensions".into()));
    }
    let mut net = NetScore::new(params, schedule.clone())?;
    if net.dim() != dim {
        return Err(Error::InvalidArgument(format!(
            "net expects {} coordinates, data has {dim}",
            net.dim()
        )));
    }

    let mut flat = net.params.to_flat();
    let mut state = AdamState::new(flat.len());
    let mut curve = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let indices: Vec<usize> = if cfg.batch_size <= data.len() {
            sample_indices(rng, data.len(), cfg.batch_size)
                .into_iter()
                .collect()
        } else {
            (0..cfg.batch_size).map(|_| rng.random_range(0..data.len())).collect()
        };
        let inv_b = 1.0 / cfg.batch_size as f64;
        let mut loss = 0.0;
        let mut grads = EncoderGrads::zeros_like(&net.params);
        for &idx in &indices {
            let x0 = &data[idx];
            let t = uniform(rng, MIN_TRAIN_TIME, HORIZON);
            let m = schedule.mean_coeff(t)?;
            let sd = schedule.marginal_std(t)?;
            let eps = standard_normal_vec(rng, dim);
            let mut xt = Array1::zeros(dim);
            for c in 0..dim {
                xt[c] = m * x0[c] + sd * eps[c];
            }
            let cache = net.params.encode(&xt, t)?;
            let residual = cache.z() - &eps;
            loss += residual.mapv(|v| v * v).sum() * inv_b;
            let grad_z = residual.mapv(|v| 2.0 * v * inv_b);
            grads.add(&net.params.backward_params(&cache, None, Some(&grad_z))?);
        }
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                iteration,
                message: format!("denoising loss became {loss}"),
            });
        }
        adam_step(&mut flat, &grads.to_flat(), &mut state, &cfg.adam).map_err(|e| match e {
            Error::Numerical(msg) => Error::TrainingDiverged {
                iteration,
                message: msg,
            },
            other => other,
        })?;
        net.params.set_from_flat(&flat)?;
        curve.push(loss);
    }
    Ok((net, curve))
}
