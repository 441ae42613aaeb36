//! Guided reverse sampler for unpaired translation.
//!
//! One translation run:
//!
//! 1. draw y from the perturbation kernel at the initial time P,
//! 2. for i = R down to 1, at t = i l with l = P / R:
//!    draw x~ from the kernel at t (guided runs only), evaluate the guidance
//!    gradient and the score, take one Euler-Maruyama step, adding noise
//!    g(t) sqrt(l) z on every step but the last,
//! 3. return y at time 0 with the per-step trace.
//!
//! With lambda = 0 no perturbed source is drawn and the encoder is never
//! touched, so the generator consumes exactly the same draws as a plain
//! unguided sampler; the two are bit-identical under a shared stream.

use ndarray::Array1;
use rayon::prelude::*;

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::guidance::{guidance_report, GuidanceConfig};
use crate::rng::{child_rng, standard_normal_vec};
use crate::score::ScoreFunction;
use crate::sde::{euler_step, NoiseSchedule, HORIZON};

/// Per-step trace entry. Similarity and gradient norm are absent on unguided
/// runs.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub similarity: Option<f64>,
    pub guidance_grad_norm: Option<f64>,
}

/// Output of one translation run.
#[derive(Debug, Clone)]
pub struct TranslationResult {
    /// Final state at time 0.
    pub output: Array1<f64>,
    /// State right after the initial perturbation at time P.
    pub initial_state: Array1<f64>,
    /// Exactly one record per reverse step, in execution order (t = P down
    /// to t = l).
    pub steps: Vec<StepRecord>,
    /// Master seed of the run this item belongs to.
    pub seed: u64,
    /// Item index within its batch; also the rng stream the item consumed.
    pub item: usize,
    pub config: GuidanceConfig,
}

/// Translate one source sample using rng stream `child(seed, 0)`; identical
/// to the first element of a batch of one.
pub fn translate(
    x0: &Array1<f64>,
    score: &dyn ScoreFunction,
    encoder: Option<&EncoderParams>,
    cfg: &GuidanceConfig,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<TranslationResult> {
    translate_nth(x0, score, encoder, cfg, schedule, seed, 0)
}

/// Translate one sample as item `item` of a batch under `seed`.
pub fn translate_nth(
    x0: &Array1<f64>,
    score: &dyn ScoreFunction,
    encoder: Option<&EncoderParams>,
    cfg: &GuidanceConfig,
    schedule: &NoiseSchedule,
    seed: u64,
    item: usize,
) -> Result<TranslationResult> {
    cfg.validate()?;
    if x0.len() != score.dim() {
        return Err(Error::InvalidArgument(format!(
            "source has {} coordinates, score function expects {}",
            x0.len(),
            score.dim()
        )));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite source sample".into()));
    }
    let guided = cfg.lambda > 0.0;
    let enc = if guided {
        let enc = encoder.ok_or_else(|| {
            Error::InvalidArgument("guided translation (lambda > 0) needs an encoder".into())
        })?;
        if enc.config().input_dim != x0.len() {
            return Err(Error::InvalidArgument(format!(
                "encoder expects {} coordinates, source has {}",
                enc.config().input_dim,
                x0.len()
            )));
        }
        Some(enc)
    } else {
        None
    };

    let mut rng = child_rng(seed, item as u64);
    let d = x0.len();
    let l = cfg.step_size();
    let mut y = schedule.perturb(x0, cfg.initial_time, &mut rng)?;
    let initial_state = y.clone();
    let mut steps = Vec::with_capacity(cfg.steps);

    for i in (1..=cfg.steps).rev() {
        let t = (i as f64 * l).min(HORIZON);
        let (guidance_grad, similarity, grad_norm) = match enc {
            Some(enc) => {
                let x_pert = schedule.perturb(x0, t, &mut rng)?;
                let report = guidance_report(enc, &y, &x_pert, t, cfg.lambda, cfg.similarity)
                    .map_err(|e| step_error(e, i, t))?;
                let norm = report.grad.mapv(|v| v * v).sum().sqrt();
                (report.grad, Some(report.similarity), Some(norm))
            }
            None => (Array1::zeros(d), None, None),
        };
        let s = score.score(&y, t).map_err(|e| step_error(e, i, t))?;
        let z = if i > 1 {
            standard_normal_vec(&mut rng, d)
        } else {
            Array1::zeros(d)
        };
        y = euler_step(schedule, &y, t, l, &s, &guidance_grad, &z)
            .map_err(|e| step_error(e, i, t))?;
        if let Some(bad) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "state became non-finite at step {i} (t = {t:.6}), coordinate {bad}; \
                 |score| = {:.3e}, |guidance| = {:.3e}",
                s.mapv(|v| v * v).sum().sqrt(),
                grad_norm.unwrap_or(0.0),
            )));
        }
        steps.push(StepRecord {
            t,
            similarity,
            guidance_grad_norm: grad_norm,
        });
    }

    Ok(TranslationResult {
        output: y,
        initial_state,
        steps,
        seed,
        item,
        config: cfg.clone(),
    })
}

fn step_error(e: Error, step: usize, t: f64) -> Error {
    match e {
        Error::Numerical(msg) => {
            Error::Numerical(format!("step {step} (t = {t:.6}): {msg}"))
        }
        other => other,
    }
}

/// Translate a batch. Item k consumes rng stream `child(seed, k)`, so the
/// result is independent of scheduling; items run in parallel and are
/// returned in input order.
pub fn translate_batch(
    sources: &[Array1<f64>],
    score: &dyn ScoreFunction,
    encoder: Option<&EncoderParams>,
    cfg: &GuidanceConfig,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<TranslationResult>> {
    sources
        .par_iter()
        .enumerate()
        .map(|(k, x0)| translate_nth(x0, score, encoder, cfg, schedule, seed, k))
        .collect()
}
