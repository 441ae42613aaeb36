//! Python bindings for the contrastive-guided SDE translation library.
//!
//! The module mirrors the Rust surface with plain lists instead of ndarray:
//! `Schedule` (the forward noising process), `Mixture` (analytic targets with
//! exact scores), `Encoder` (the time-conditioned contrastive embedder), the
//! `nt_xent_loss` and `guidance_grad` primitives, and `translate`, which runs
//! the full guided reverse process over a batch of sources.

use ndarray::Array1;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use csde::encoder::{EncoderConfig, EncoderParams};
use csde::error::Error;
use csde::guidance::{guidance_report, GuidanceConfig, Similarity};
use csde::rng::master_rng;
use csde::sampler::translate_batch;
use csde::score::{AnalyticMixtureScore, GaussianMixture};
use csde::sde::NoiseSchedule;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Checkpoint(_) => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) | Error::TrainingDiverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_arrays(rows: Vec<Vec<f64>>) -> Vec<Array1<f64>> {
    rows.into_iter().map(Array1::from).collect()
}

/// Linear-beta variance-preserving noise schedule on t in [0, 1].
#[pyclass(frozen)]
struct Schedule {
    inner: NoiseSchedule,
}

#[pymethods]
impl Schedule {
    #[new]
    #[pyo3(signature = (beta_min=0.1, beta_max=20.0))]
    fn new(beta_min: f64, beta_max: f64) -> PyResult<Self> {
        Ok(Self {
            inner: NoiseSchedule::new(beta_min, beta_max).map_err(to_py)?,
        })
    }

    fn beta(&self, t: f64) -> PyResult<f64> {
        self.inner.beta(t).map_err(to_py)
    }

    fn mean_coeff(&self, t: f64) -> PyResult<f64> {
        self.inner.mean_coeff(t).map_err(to_py)
    }

    fn marginal_std(&self, t: f64) -> PyResult<f64> {
        self.inner.marginal_std(t).map_err(to_py)
    }

    /// Draw from the forward kernel at time t, seeded deterministically.
    fn perturb(&self, x: Vec<f64>, t: f64, seed: u64) -> PyResult<Vec<f64>> {
        let x = Array1::from(x);
        let mut rng = master_rng(seed);
        Ok(self.inner.perturb(&x, t, &mut rng).map_err(to_py)?.to_vec())
    }
}

/// Isotropic-per-coordinate Gaussian mixture with exact perturbed scores.
#[pyclass(frozen)]
struct Mixture {
    inner: GaussianMixture,
}

#[pymethods]
impl Mixture {
    #[new]
    fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: GaussianMixture::new(weights, to_arrays(means), to_arrays(variances))
                .map_err(to_py)?,
        })
    }

    fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = master_rng(seed);
        self.inner.sample(n, &mut rng).into_iter().map(|v| v.to_vec()).collect()
    }

    /// Log density of the mixture diffused to time t.
    fn log_density(&self, schedule: &Schedule, y: Vec<f64>, t: f64) -> PyResult<f64> {
        self.inner
            .log_density_at(&schedule.inner, &Array1::from(y), t)
            .map_err(to_py)
    }

    /// Gradient of that log density with respect to y.
    fn score(&self, schedule: &Schedule, y: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .score_at(&schedule.inner, &Array1::from(y), t)
            .map_err(to_py)?
            .to_vec())
    }
}

/// Time-conditioned encoder with a trunk representation and a projection
/// head, as trained by the `csde train-encoder` command.
#[pyclass]
struct Encoder {
    inner: EncoderParams,
}

#[pymethods]
impl Encoder {
    /// Freshly initialized encoder; useful for experimenting without a
    /// trained checkpoint.
    #[new]
    #[pyo3(signature = (input_dim, hidden_widths, proj_widths, time_embed_dim=32, seed=0))]
    fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        proj_widths: Vec<usize>,
        time_embed_dim: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = EncoderConfig {
            input_dim,
            hidden_widths,
            proj_widths,
            time_embed_dim,
        };
        Ok(Self {
            inner: EncoderParams::init(cfg, &mut master_rng(seed)).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: EncoderParams::load(std::path::Path::new(path)).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(std::path::Path::new(path)).map_err(to_py)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.config().input_dim
    }

    /// Trunk representation and projected embedding at time t.
    fn encode(&self, x: Vec<f64>, t: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let cache = self.inner.encode(&Array1::from(x), t).map_err(to_py)?;
        Ok((cache.h().to_vec(), cache.z().to_vec()))
    }
}

/// Normalized-temperature cross-entropy over interleaved pairs
/// (vector 2i pairs with vector 2i+1).
#[pyfunction]
fn nt_xent_loss(embeddings: Vec<Vec<f64>>, temperature: f64) -> PyResult<f64> {
    csde::contrastive::nt_xent_loss(&to_arrays(embeddings), temperature).map_err(to_py)
}

/// Similarity S between the trunk embeddings of y and x_pert at time t,
/// plus the gradient with respect to y of the energy Q = -lambda * S that
/// the sampler subtracts from the score (descending Q ascends S).
#[pyfunction]
fn guidance_grad(
    encoder: &Encoder,
    y: Vec<f64>,
    x_pert: Vec<f64>,
    t: f64,
    lambda: f64,
    similarity: &str,
) -> PyResult<(f64, Vec<f64>)> {
    let sim = Similarity::parse(similarity).map_err(to_py)?;
    let report = guidance_report(
        &encoder.inner,
        &Array1::from(y),
        &Array1::from(x_pert),
        t,
        lambda,
        sim,
    )
    .map_err(to_py)?;
    Ok((report.similarity, report.grad.to_vec()))
}

/// Translate a batch of source points into the mixture domain by noising to
/// initial_time and running the guided reverse process. Deterministic in
/// (seed, item index); pass encoder=None or lambda=0 for unguided sampling.
#[pyfunction]
#[pyo3(signature = (sources, mixture, schedule, seed, lambda=0.0, similarity="cosine", initial_time=0.5, steps=200, encoder=None))]
#[allow(clippy::too_many_arguments)]
fn translate(
    sources: Vec<Vec<f64>>,
    mixture: &Mixture,
    schedule: &Schedule,
    seed: u64,
    lambda: f64,
    similarity: &str,
    initial_time: f64,
    steps: usize,
    encoder: Option<&Encoder>,
) -> PyResult<Vec<Vec<f64>>> {
    let cfg = GuidanceConfig {
        lambda,
        similarity: Similarity::parse(similarity).map_err(to_py)?,
        initial_time,
        steps,
    };
    cfg.validate().map_err(to_py)?;
    let score = AnalyticMixtureScore {
        mixture: mixture.inner.clone(),
        schedule: schedule.inner.clone(),
    };
    let results = translate_batch(
        &to_arrays(sources),
        &score,
        encoder.map(|e| &e.inner),
        &cfg,
        &schedule.inner,
        seed,
    )
    .map_err(to_py)?;
    Ok(results.into_iter().map(|r| r.output.to_vec()).collect())
}

#[pymodule]
fn csde_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Schedule>()?;
    m.add_class::<Mixture>()?;
    m.add_class::<Encoder>()?;
    m.add_function(wrap_pyfunction!(nt_xent_loss, m)?)?;
    m.add_function(wrap_pyfunction!(guidance_grad, m)?)?;
    m.add_function(wrap_pyfunction!(translate, m)?)?;
    Ok(())
}
