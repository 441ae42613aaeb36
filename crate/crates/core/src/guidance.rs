//! Similarity guidance for the reverse sampler.
//!
//! At each reverse step the current state y_t and a freshly perturbed source
//! x~_t are embedded with the time-conditioned encoder; a similarity S
//! between the two trunk embeddings defines the energy Q = -lambda S. The
//! sampler follows the effective score s_theta - grad_y Q, which ascends S,
//! and only the h_t = F(y_t, t) branch is differentiated: the source
//! embedding h_0 is a constant for the gradient.

use ndarray::Array1;

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};

/// Embedding similarity steering the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Similarity {
    Cosine,
    /// Negative squared Euclidean distance.
    NegL2,
}

impl Similarity {
    pub fn name(&self) -> &'static str {
        match self {
            Similarity::Cosine => "cosine",
            Similarity::NegL2 => "neg_l2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Similarity::Cosine),
            "neg_l2" => Ok(Similarity::NegL2),
            other => Err(Error::InvalidArgument(format!(
                "unknown similarity '{other}' (expected cosine or neg_l2)"
            ))),
        }
    }
}

fn check_dims(a: &Array1<f64>, b: &Array1<f64>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "similarity inputs have {} and {} coordinates",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Cosine similarity. Errors if either vector has zero norm.
pub fn sim_cosine(h0: &Array1<f64>, ht: &Array1<f64>) -> Result<f64> {
    check_dims(h0, ht)?;
    let n0 = h0.mapv(|v| v * v).sum().sqrt();
    let nt = ht.mapv(|v| v * v).sum().sqrt();
    if n0 == 0.0 || nt == 0.0 {
        return Err(Error::Numerical(
            "cosine similarity: an embedding has zero norm".into(),
        ));
    }
    Ok(h0.dot(ht) / (n0 * nt))
}

/// Negative squared Euclidean distance.
pub fn sim_neg_l2(h0: &Array1<f64>, ht: &Array1<f64>) -> Result<f64> {
    check_dims(h0, ht)?;
    Ok(-(h0 - ht).mapv(|v| v * v).sum())
}

/// Similarity value plus its gradient with respect to h_t (h_0 held fixed).
fn sim_value_and_grad_ht(
    sim: Similarity,
    h0: &Array1<f64>,
    ht: &Array1<f64>,
) -> Result<(f64, Array1<f64>)> {
    match sim {
        Similarity::Cosine => {
            let value = sim_cosine(h0, ht)?;
            let n0 = h0.mapv(|v| v * v).sum().sqrt();
            let nt = ht.mapv(|v| v * v).sum().sqrt();
            // d/dh_t [h0.ht / (|h0||ht|)] = h0/(|h0||ht|) - cos * ht/|ht|^2
            let grad = h0.mapv(|v| v / (n0 * nt)) - ht.mapv(|v| value * v / (nt * nt));
            Ok((value, grad))
        }
        Similarity::NegL2 => {
            let value = sim_neg_l2(h0, ht)?;
            let grad = (h0 - ht).mapv(|v| 2.0 * v);
            Ok((value, grad))
        }
    }
}

/// Guidance settings for one translation run.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceConfig {
    /// Strength lambda >= 0; zero disables guidance entirely.
    pub lambda: f64,
    pub similarity: Similarity,
    /// Initial diffusion time P in (0, HORIZON].
    pub initial_time: f64,
    /// Number of reverse Euler steps R >= 1.
    pub steps: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            lambda: 500.0,
            similarity: Similarity::Cosine,
            initial_time: 0.5,
            steps: 200,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        Error::check_range(
            "initial_time",
            self.initial_time,
            f64::MIN_POSITIVE,
            crate::sde::HORIZON,
        )?;
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        Ok(())
    }

    /// Step size l = P / R.
    pub fn step_size(&self) -> f64 {
        self.initial_time / self.steps as f64
    }
}

/// Report from one guidance evaluation: the similarity S between the two
/// embeddings and the gradient of Q = -lambda S with respect to y.
#[derive(Debug, Clone)]
pub struct GuidanceReport {
    pub similarity: f64,
    pub grad: Array1<f64>,
}

/// Energy Q(y, t) = -lambda S(F(x~_t, t), F(y, t)). Zero when lambda is zero
/// without touching the encoder.
pub fn guidance_energy(
    encoder: &EncoderParams,
    y: &Array1<f64>,
    x_perturbed: &Array1<f64>,
    t: f64,
    lambda: f64,
    sim: Similarity,
) -> Result<f64> {
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let h0 = encoder.encode(x_perturbed, t)?.h().clone();
    let ht = encoder.encode(y, t)?.h().clone();
    let value = match sim {
        Similarity::Cosine => sim_cosine(&h0, &ht)?,
        Similarity::NegL2 => sim_neg_l2(&h0, &ht)?,
    };
    Ok(-lambda * value)
}

/// Similarity S and gradient of Q with respect to y, differentiating only
/// through the h_t = F(y, t) branch. Unguided runs never call this; lambda
/// must be strictly positive.
pub fn guidance_report(
    encoder: &EncoderParams,
    y: &Array1<f64>,
    x_perturbed: &Array1<f64>,
    t: f64,
    lambda: f64,
    sim: Similarity,
) -> Result<GuidanceReport> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "guidance_report needs lambda > 0, got {lambda}"
        )));
    }
    let h0 = encoder.encode(x_perturbed, t)?.h().clone();
    let cache_y = encoder.encode(y, t)?;
    let (value, grad_ht) = sim_value_and_grad_ht(sim, &h0, cache_y.h())?;
    let grad_y_sim = encoder.backward_input(&cache_y, &grad_ht)?;
    Ok(GuidanceReport {
        similarity: value,
        grad: grad_y_sim.mapv(|v| -lambda * v),
    })
}
