//! Score functions for the reverse SDE.
//!
//! For a Gaussian mixture data distribution the perturbed marginal at
//! diffusion time t stays a mixture in closed form: component k becomes
//! N(m(t) mu_k, m(t)^2 var_k + sigma(t)^2), coordinatewise. That gives an
//! exact log density and score at every t, used both as the sampler's score
//! for mixture tasks and as the oracle the learned score net is checked
//! against.

use ndarray::Array1;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::rng::standard_normal_vec;
use crate::sde::NoiseSchedule;

const LN_2PI: f64 = 1.8378770664093453;

/// Score of the time-t marginal: both implementors (analytic mixture, learned
/// net) are interchangeable inside the sampler.
pub trait ScoreFunction: Sync {
    fn dim(&self) -> usize;
    fn score(&self, y: &Array1<f64>, t: f64) -> Result<Array1<f64>>;
}

/// Mixture of diagonal-covariance Gaussians.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Array1<f64>>,
    variances: Vec<Array1<f64>>,
}

impl GaussianMixture {
    /// Weights must be positive and sum to 1 (tolerance 1e-9, then
    /// renormalized exactly); all components share the dimension and have
    /// strictly positive variances.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Array1<f64>>,
        variances: Vec<Array1<f64>>,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != variances.len() {
            return Err(Error::InvalidArgument(format!(
                "mixture needs matching component counts, got {} weights, {} means, {} variances",
                weights.len(),
                means.len(),
                variances.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::InvalidArgument(
                "mixture weights must be positive and finite".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "mixture weights must sum to 1, got {total}"
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidArgument("mixture dimension must be positive".into()));
        }
        for (k, (mu, var)) in means.iter().zip(&variances).enumerate() {
            if mu.len() != dim || var.len() != dim {
                return Err(Error::InvalidArgument(format!(
                    "mixture component {k} has inconsistent dimension"
                )));
            }
            if var.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "mixture component {k} has a non-positive variance"
                )));
            }
            if mu.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "mixture component {k} has a non-finite mean"
                )));
            }
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(GaussianMixture {
            weights,
            means,
            variances,
        })
    }

    /// Equal-weight mixture with shared isotropic variance.
    pub fn isotropic(means: Vec<Array1<f64>>, variance: f64) -> Result<Self> {
        let k = means.len();
        let weights = vec![1.0 / k as f64; k];
        let dim = means.first().map(|m| m.len()).unwrap_or(0);
        let variances = vec![Array1::from_elem(dim, variance); k];
        Self::new(weights, means, variances)
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Array1<f64>] {
        &self.means
    }

    fn check_point(&self, y: &Array1<f64>) -> Result<()> {
        if y.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "point has {} coordinates, mixture has {}",
                y.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Per-component log joint terms log w_k + log N(y; m mu_k, m^2 var_k + s^2).
    fn component_log_terms(
        &self,
        schedule: &NoiseSchedule,
        y: &Array1<f64>,
        t: f64,
    ) -> Result<Vec<f64>> {
        self.check_point(y)?;
        let m = schedule.mean_coeff(t)?;
        let s2 = {
            let s = schedule.marginal_std(t)?;
            s * s
        };
        let mut terms = Vec::with_capacity(self.weights.len());
        for k in 0..self.weights.len() {
            let mut log_pdf = self.weights[k].ln();
            for i in 0..self.dim() {
                let v = m * m * self.variances[k][i] + s2;
                let diff = y[i] - m * self.means[k][i];
                log_pdf += -0.5 * (LN_2PI + v.ln()) - diff * diff / (2.0 * v);
            }
            terms.push(log_pdf);
        }
        Ok(terms)
    }

    /// Log density of the time-t perturbed marginal. t = 0 gives the data
    /// distribution itself.
    pub fn log_density_at(&self, schedule: &NoiseSchedule, y: &Array1<f64>, t: f64) -> Result<f64> {
        let terms = self.component_log_terms(schedule, y, t)?;
        Ok(log_sum_exp(&terms))
    }

    /// Score of the time-t perturbed marginal:
    /// sum_k gamma_k(y) * -(y - m mu_k) / (m^2 var_k + sigma^2)
    /// with gamma the posterior component responsibilities.
    pub fn score_at(
        &self,
        schedule: &NoiseSchedule,
        y: &Array1<f64>,
        t: f64,
    ) -> Result<Array1<f64>> {
        let terms = self.component_log_terms(schedule, y, t)?;
        let lse = log_sum_exp(&terms);
        let m = schedule.mean_coeff(t)?;
        let s2 = {
            let s = schedule.marginal_std(t)?;
            s * s
        };
        let mut out = Array1::zeros(self.dim());
        for k in 0..self.weights.len() {
            let gamma = (terms[k] - lse).exp();
            for i in 0..self.dim() {
                let v = m * m * self.variances[k][i] + s2;
                out[i] -= gamma * (y[i] - m * self.means[k][i]) / v;
            }
        }
        Ok(out)
    }

    /// Draw n samples; one categorical draw plus dim normal draws per sample.
    pub fn sample(&self, n: usize, rng: &mut ChaCha12Rng) -> Vec<Array1<f64>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    pub fn sample_one(&self, rng: &mut ChaCha12Rng) -> Array1<f64> {
        let u = crate::rng::uniform(rng, 0.0, 1.0);
        let mut acc = 0.0;
        let mut comp = self.weights.len() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = k;
                break;
            }
        }
        let eps = standard_normal_vec(rng, self.dim());
        let mut out = Array1::zeros(self.dim());
        for i in 0..self.dim() {
            out[i] = self.means[comp][i] + self.variances[comp][i].sqrt() * eps[i];
        }
        out
    }
}

/// Analytic score of a mixture's perturbed marginals under a fixed schedule.
#[derive(Debug, Clone)]
pub struct AnalyticMixtureScore {
    pub mixture: GaussianMixture,
    pub schedule: NoiseSchedule,
}

impl ScoreFunction for AnalyticMixtureScore {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn score(&self, y: &Array1<f64>, t: f64) -> Result<Array1<f64>> {
        self.mixture.score_at(&self.schedule, y, t)
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    max + sum.ln()
}
