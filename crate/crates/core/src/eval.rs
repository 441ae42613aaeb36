//! Metrics and the ablation sweep.
//!
//! Faithfulness metrics compare a translated output to its source (L2,
//! PSNR, SSIM, invariant-view L2); realism metrics compare the output
//! population to the target domain (mean negative log density under the
//! target mixture, kernel MMD against a held-out target sample).

use ndarray::Array1;

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::guidance::{GuidanceConfig, Similarity};
use crate::sampler::{translate_batch, TranslationResult};
use crate::score::{GaussianMixture, ScoreFunction};
use crate::sde::NoiseSchedule;
use crate::tasks::{image_side, InvariantView};

/// Euclidean distance.
pub fn l2(a: &Array1<f64>, b: &Array1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "l2 inputs have {} and {} coordinates",
            a.len(),
            b.len()
        )));
    }
    Ok((a - b).mapv(|v| v * v).sum().sqrt())
}

/// Peak signal-to-noise ratio, 10 log10(peak^2 / MSE); infinite when the
/// inputs are identical.
pub fn psnr(a: &Array1<f64>, b: &Array1<f64>, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("psnr peak must be positive, got {peak}")));
    }
    let d = l2(a, b)?;
    let mse = d * d / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

const SSIM_WINDOW: usize = 7;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean SSIM over all valid 7x7 uniform windows of two flattened square
/// images, with a unit dynamic range (C1 = 0.01^2, C2 = 0.03^2).
pub fn ssim(a: &Array1<f64>, b: &Array1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "ssim inputs have {} and {} coordinates",
            a.len(),
            b.len()
        )));
    }
    let side = image_side(a.len())?;
    if side < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images at least {SSIM_WINDOW} pixels on a side, got {side}"
        )));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let valid = side - SSIM_WINDOW + 1;
    let mut total = 0.0;
    for wy in 0..valid {
        for wx in 0..valid {
            let mut sum_a = 0.0;
            let mut sum_b = 0.0;
            let mut sum_aa = 0.0;
            let mut sum_bb = 0.0;
            let mut sum_ab = 0.0;
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let va = a[(wy + dy) * side + wx + dx];
                    let vb = b[(wy + dy) * side + wx + dx];
                    sum_a += va;
                    sum_b += vb;
                    sum_aa += va * va;
                    sum_bb += vb * vb;
                    sum_ab += va * vb;
                }
            }
            let mu_a = sum_a / n;
            let mu_b = sum_b / n;
            let var_a = sum_aa / n - mu_a * mu_a;
            let var_b = sum_bb / n - mu_b * mu_b;
            let cov = sum_ab / n - mu_a * mu_b;
            total += ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
        }
    }
    Ok(total / (valid * valid) as f64)
}

/// L2 between the invariant views of two vectors.
pub fn invariant_l2(a: &Array1<f64>, b: &Array1<f64>, view: &InvariantView) -> Result<f64> {
    l2(&view.apply(a)?, &view.apply(b)?)
}

/// Mean negative log density of samples under a mixture's data distribution.
pub fn target_nll(samples: &[Array1<f64>], target: &GaussianMixture) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("target_nll needs at least one sample".into()));
    }
    // The base density is schedule-independent; any valid schedule works.
    let schedule = NoiseSchedule::new(0.1, 20.0)?;
    let mut total = 0.0;
    for s in samples {
        total -= target.log_density_at(&schedule, s, 0.0)?;
    }
    Ok(total / samples.len() as f64)
}

fn sq_dist(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    (a - b).mapv(|v| v * v).sum()
}

/// Median pairwise distance over the pooled sample; 1.0 when degenerate.
fn median_bandwidth(xs: &[Array1<f64>], ys: &[Array1<f64>]) -> f64 {
    let pooled: Vec<&Array1<f64>> = xs.iter().chain(ys.iter()).collect();
    let mut dists = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if dists.len() % 2 == 1 {
        dists[dists.len() / 2]
    } else {
        0.5 * (dists[dists.len() / 2 - 1] + dists[dists.len() / 2])
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

fn mmd_terms(xs: &[Array1<f64>], ys: &[Array1<f64>]) -> Result<(f64, f64, f64)> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "mmd needs at least 2 samples per side, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let dim = xs[0].len();
    if xs.iter().chain(ys.iter()).any(|v| v.len() != dim) {
        return Err(Error::InvalidArgument("mmd samples have mixed dimensions".into()));
    }
    let bw = median_bandwidth(xs, ys);
    let denom = 2.0 * bw * bw;
    let k = |a: &Array1<f64>, b: &Array1<f64>| (-sq_dist(a, b) / denom).exp();

    let mut kxx_off = 0.0;
    for i in 0..xs.len() {
        for j in (i + 1)..xs.len() {
            kxx_off += k(&xs[i], &xs[j]);
        }
    }
    let mut kyy_off = 0.0;
    for i in 0..ys.len() {
        for j in (i + 1)..ys.len() {
            kyy_off += k(&ys[i], &ys[j]);
        }
    }
    let mut kxy = 0.0;
    for x in xs {
        for y in ys {
            kxy += k(x, y);
        }
    }
    Ok((2.0 * kxx_off, 2.0 * kyy_off, kxy))
}

/// Unbiased squared MMD with an RBF kernel (may be slightly negative).
pub fn mmd_unbiased(xs: &[Array1<f64>], ys: &[Array1<f64>]) -> Result<f64> {
    let (kxx2, kyy2, kxy) = mmd_terms(xs, ys)?;
    let m = xs.len() as f64;
    let n = ys.len() as f64;
    Ok(kxx2 / (m * (m - 1.0)) + kyy2 / (n * (n - 1.0)) - 2.0 * kxy / (m * n))
}

/// Biased squared MMD (diagonal terms included); exactly zero on identical
/// sample sets.
pub fn mmd_biased(xs: &[Array1<f64>], ys: &[Array1<f64>]) -> Result<f64> {
    let (kxx2, kyy2, kxy) = mmd_terms(xs, ys)?;
    let m = xs.len() as f64;
    let n = ys.len() as f64;
    // Diagonal kernel values are exactly 1.
    let kxx = kxx2 + m;
    let kyy = kyy2 + n;
    Ok(kxx / (m * m) + kyy / (n * n) - 2.0 * kxy / (m * n))
}

/// Sample mean and its standard error.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One aggregated evaluation cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub task: String,
    pub lambda: f64,
    pub initial_time: f64,
    pub similarity: String,
    pub seed: u64,
    pub n: usize,
    pub l2: f64,
    /// Image tasks only.
    pub psnr: Option<f64>,
    /// Image tasks only.
    pub ssim: Option<f64>,
    pub invariant_l2: f64,
    /// Mixture tasks only (needs an analytic target density).
    pub target_nll: Option<f64>,
    /// Unbiased estimate clamped at zero for reporting.
    pub mmd: f64,
}

/// Everything an evaluation cell needs besides its (lambda, P, similarity)
/// coordinates.
pub struct SweepContext<'a> {
    pub task: &'a str,
    pub sources: &'a [Array1<f64>],
    pub score: &'a dyn ScoreFunction,
    pub encoder: Option<&'a EncoderParams>,
    pub schedule: &'a NoiseSchedule,
    pub view: &'a InvariantView,
    /// Analytic target density for NLL (mixture tasks).
    pub target: Option<&'a GaussianMixture>,
    /// Held-out target draws for MMD.
    pub target_samples: &'a [Array1<f64>],
    /// Dynamic range peak; enables PSNR/SSIM (image tasks).
    pub image_peak: Option<f64>,
    pub steps: usize,
    pub seed: u64,
}

/// Per-item metric values backing one [`MetricsRow`].
#[derive(Debug, Clone)]
pub struct CellEvaluation {
    pub row: MetricsRow,
    pub results: Vec<TranslationResult>,
    pub per_item_l2: Vec<f64>,
    pub per_item_invariant_l2: Vec<f64>,
    pub per_item_nll: Option<Vec<f64>>,
}

/// Translate every source under one (lambda, P, similarity) cell and compute
/// the aggregated metrics. All cells under the same context share the same
/// seed, so comparisons across cells are paired.
pub fn evaluate_cell(
    ctx: &SweepContext,
    lambda: f64,
    initial_time: f64,
    similarity: Similarity,
) -> Result<CellEvaluation> {
    if ctx.sources.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs at least one source".into()));
    }
    let cfg = GuidanceConfig {
        lambda,
        similarity,
        initial_time,
        steps: ctx.steps,
    };
    let results = translate_batch(
        ctx.sources,
        ctx.score,
        ctx.encoder,
        &cfg,
        ctx.schedule,
        ctx.seed,
    )?;
    let outputs: Vec<&Array1<f64>> = results.iter().map(|r| &r.output).collect();

    let mut per_item_l2 = Vec::with_capacity(results.len());
    let mut per_item_inv = Vec::with_capacity(results.len());
    for (x0, y) in ctx.sources.iter().zip(&outputs) {
        per_item_l2.push(l2(x0, y)?);
        per_item_inv.push(invariant_l2(x0, y, ctx.view)?);
    }

    let (psnr_mean, ssim_mean) = match ctx.image_peak {
        Some(peak) => {
            let mut ps = Vec::with_capacity(results.len());
            let mut ss = Vec::with_capacity(results.len());
            for (x0, y) in ctx.sources.iter().zip(&outputs) {
                ps.push(psnr(x0, y, peak)?);
                ss.push(ssim(x0, y)?);
            }
            (Some(mean_se(&ps).0), Some(mean_se(&ss).0))
        }
        None => (None, None),
    };

    let per_item_nll = match ctx.target {
        Some(target) => {
            let mut nll = Vec::with_capacity(results.len());
            for y in &outputs {
                nll.push(target_nll(std::slice::from_ref(*y), target)?);
            }
            Some(nll)
        }
        None => None,
    };

    let owned_outputs: Vec<Array1<f64>> = outputs.iter().map(|y| (*y).clone()).collect();
    let mmd_raw = mmd_unbiased(&owned_outputs, ctx.target_samples)?;

    let row = MetricsRow {
        task: ctx.task.to_string(),
        lambda,
        initial_time,
        similarity: similarity.name().to_string(),
        seed: ctx.seed,
        n: results.len(),
        l2: mean_se(&per_item_l2).0,
        psnr: psnr_mean,
        ssim: ssim_mean,
        invariant_l2: mean_se(&per_item_inv).0,
        target_nll: per_item_nll.as_ref().map(|v| mean_se(v).0),
        mmd: mmd_raw.max(0.0),
    };
    Ok(CellEvaluation {
        row,
        results,
        per_item_l2,
        per_item_invariant_l2: per_item_inv,
        per_item_nll,
    })
}

/// Full cross product of the grids, one row per cell, in
/// lambda-major / initial-time / similarity order. Every cell reuses the
/// same sources and seed, so the initial perturbation draws of item k agree
/// across cells that share an initial time.
pub fn ablation_sweep(
    ctx: &SweepContext,
    lambdas: &[f64],
    initial_times: &[f64],
    similarities: &[Similarity],
) -> Result<Vec<MetricsRow>> {
    if lambdas.is_empty() || initial_times.is_empty() || similarities.is_empty() {
        return Err(Error::InvalidArgument("ablation grids must be non-empty".into()));
    }
    let mut rows = Vec::with_capacity(lambdas.len() * initial_times.len() * similarities.len());
    for &lambda in lambdas {
        for &p in initial_times {
            for &sim in similarities {
                rows.push(evaluate_cell(ctx, lambda, p, sim)?.row);
            }
        }
    }
    Ok(rows)
}
