//! Synthetic translation tasks and their domain-invariant views.
//!
//! Two desk-scale task families exercise the full pipeline:
//!
//! * mixture task: 8-dimensional Gaussian mixtures where the first half of
//!   the coordinates carry domain-invariant content and the second half
//!   marks the domain (source centered at -2, target at +2);
//! * shape task: 16x16 images of filled circles (source) and filled squares
//!   (target) whose position and intensity are the invariant content, with a
//!   block-averaging low-pass as the invariant view.

use ndarray::Array1;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::rng::uniform;
use crate::score::GaussianMixture;

/// Domain-invariant view x -> xbar used to build positive pairs and to score
/// how much invariant content a translation preserved.
#[derive(Debug, Clone, PartialEq)]
pub enum InvariantView {
    /// Keep the flagged coordinates, zero the rest.
    CoordinateMask { keep: Vec<bool> },
    /// Interpret the vector as a square image, average over factor x factor
    /// blocks, and replicate each block mean back to full resolution.
    LowPass { factor: usize },
}

impl InvariantView {
    pub fn apply(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        match self {
            InvariantView::CoordinateMask { keep } => {
                if keep.len() != x.len() {
                    return Err(Error::InvalidArgument(format!(
                        "coordinate mask has {} entries, input has {}",
                        keep.len(),
                        x.len()
                    )));
                }
                let mut out = x.clone();
                for (v, &k) in out.iter_mut().zip(keep) {
                    if !k {
                        *v = 0.0;
                    }
                }
                Ok(out)
            }
            InvariantView::LowPass { factor } => low_pass(x, *factor),
        }
    }
}

/// Block-average a flattened side x side image over factor x factor tiles and
/// replicate each mean back to full resolution. Idempotent by construction.
pub fn low_pass(x: &Array1<f64>, factor: usize) -> Result<Array1<f64>> {
    let side = image_side(x.len())?;
    if factor == 0 || side % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "low-pass factor {factor} does not divide image side {side}"
        )));
    }
    let mut out = Array1::zeros(x.len());
    let blocks = side / factor;
    let norm = (factor * factor) as f64;
    for by in 0..blocks {
        for bx in 0..blocks {
            let mut acc = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    acc += x[(by * factor + dy) * side + bx * factor + dx];
                }
            }
            let mean = acc / norm;
            for dy in 0..factor {
                for dx in 0..factor {
                    out[(by * factor + dy) * side + bx * factor + dx] = mean;
                }
            }
        }
    }
    Ok(out)
}

/// Side length of a flattened square image.
pub fn image_side(len: usize) -> Result<usize> {
    let side = (len as f64).sqrt().round() as usize;
    if side * side != len {
        return Err(Error::InvalidArgument(format!(
            "vector of length {len} is not a flattened square image"
        )));
    }
    Ok(side)
}

/// Mixture-to-mixture translation task.
#[derive(Debug, Clone)]
pub struct MixtureTask {
    pub source: GaussianMixture,
    pub target: GaussianMixture,
    pub view: InvariantView,
}

/// Parameters of the default mixture task.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureTaskConfig {
    /// Total dimension; the first half is invariant, the second half marks
    /// the domain. Must be even and at least 4.
    pub dim: usize,
    pub source_center: f64,
    pub target_center: f64,
    /// Magnitude of the invariant block pattern.
    pub component_spread: f64,
    /// Shared isotropic component variance.
    pub noise_var: f64,
}

impl Default for MixtureTaskConfig {
    fn default() -> Self {
        MixtureTaskConfig {
            dim: 8,
            source_center: -2.0,
            target_center: 2.0,
            component_spread: 1.0,
            noise_var: 0.25,
        }
    }
}

impl MixtureTask {
    /// Two equal-weight components per domain. The invariant block of
    /// component A is (+s ... -s ...) over the first dim/2 coordinates,
    /// component B is its negation; the remaining coordinates all sit at the
    /// domain center. With defaults the source means are
    /// (1, 1, -1, -1, -2, -2, -2, -2) and (-1, -1, 1, 1, -2, -2, -2, -2).
    pub fn new(cfg: &MixtureTaskConfig) -> Result<Self> {
        if cfg.dim < 4 || !cfg.dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "mixture task dimension must be even and at least 4, got {}",
                cfg.dim
            )));
        }
        if !(cfg.noise_var > 0.0) {
            return Err(Error::InvalidArgument(
                "mixture task noise variance must be positive".into(),
            ));
        }
        let half = cfg.dim / 2;
        let pattern = |sign: f64| {
            Array1::from_iter((0..half).map(|i| {
                if i < half / 2 {
                    sign * cfg.component_spread
                } else {
                    -sign * cfg.component_spread
                }
            }))
        };
        let mean = |sign: f64, center: f64| {
            let mut m = Array1::zeros(cfg.dim);
            let inv = pattern(sign);
            for i in 0..half {
                m[i] = inv[i];
            }
            for i in half..cfg.dim {
                m[i] = center;
            }
            m
        };
        let source = GaussianMixture::isotropic(
            vec![mean(1.0, cfg.source_center), mean(-1.0, cfg.source_center)],
            cfg.noise_var,
        )?;
        let target = GaussianMixture::isotropic(
            vec![mean(1.0, cfg.target_center), mean(-1.0, cfg.target_center)],
            cfg.noise_var,
        )?;
        let keep: Vec<bool> = (0..cfg.dim).map(|i| i < half).collect();
        Ok(MixtureTask {
            source,
            target,
            view: InvariantView::CoordinateMask { keep },
        })
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    pub fn sample_source(&self, n: usize, rng: &mut ChaCha12Rng) -> Vec<Array1<f64>> {
        self.source.sample(n, rng)
    }

    pub fn sample_target(&self, n: usize, rng: &mut ChaCha12Rng) -> Vec<Array1<f64>> {
        self.target.sample(n, rng)
    }
}

/// Circle-to-square image translation task.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTask {
    pub side: usize,
    /// Circle radius; the square uses the same half-extent.
    pub radius: f64,
    pub lowpass_factor: usize,
}

impl Default for ImageTask {
    fn default() -> Self {
        ImageTask {
            side: 16,
            radius: 3.0,
            lowpass_factor: 4,
        }
    }
}

impl ImageTask {
    pub fn validate(&self) -> Result<()> {
        if self.side < 4 {
            return Err(Error::InvalidArgument("image side must be at least 4".into()));
        }
        if self.lowpass_factor == 0 || !self.side.is_multiple_of(self.lowpass_factor) {
            return Err(Error::InvalidArgument(format!(
                "low-pass factor {} does not divide image side {}",
                self.lowpass_factor, self.side
            )));
        }
        if !(self.radius > 0.0) || self.radius + 1.0 > self.side as f64 / 2.0 {
            return Err(Error::InvalidArgument(format!(
                "shape radius {} does not fit a {}-pixel image",
                self.radius, self.side
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.side * self.side
    }

    pub fn view(&self) -> InvariantView {
        InvariantView::LowPass {
            factor: self.lowpass_factor,
        }
    }

    /// Shared latent of one item: continuous shape center and fill intensity.
    /// Centers keep the full shape at least one pixel inside the border.
    fn draw_latent(&self, rng: &mut ChaCha12Rng) -> (f64, f64, f64) {
        let lo = self.radius + 1.0;
        let hi = self.side as f64 - 1.0 - self.radius;
        let cx = uniform(rng, lo, hi);
        let cy = uniform(rng, lo, hi);
        let intensity = uniform(rng, 0.5, 1.0);
        (cx, cy, intensity)
    }

    fn render(&self, cx: f64, cy: f64, intensity: f64, square: bool) -> Array1<f64> {
        let mut img = Array1::zeros(self.dim());
        for py in 0..self.side {
            for px in 0..self.side {
                let dx = px as f64 - cx;
                let dy = py as f64 - cy;
                let inside = if square {
                    dx.abs() <= self.radius && dy.abs() <= self.radius
                } else {
                    dx * dx + dy * dy <= self.radius * self.radius
                };
                if inside {
                    img[py * self.side + px] = intensity;
                }
            }
        }
        img
    }

    /// Filled circles at random positions and intensities.
    pub fn sample_source(&self, n: usize, rng: &mut ChaCha12Rng) -> Vec<Array1<f64>> {
        (0..n)
            .map(|_| {
                let (cx, cy, i) = self.draw_latent(rng);
                self.render(cx, cy, i, false)
            })
            .collect()
    }

    /// Filled squares from the same latent distribution.
    pub fn sample_target(&self, n: usize, rng: &mut ChaCha12Rng) -> Vec<Array1<f64>> {
        (0..n)
            .map(|_| {
                let (cx, cy, i) = self.draw_latent(rng);
                self.render(cx, cy, i, true)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{child_rng, master_rng};
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn coordinate_mask_zeroes_unkept_coordinates_and_is_idempotent() {
        let view = InvariantView::CoordinateMask {
            keep: vec![true, false, true, false],
        };
        let x = array![1.0, 2.0, 3.0, 4.0];
        let v = view.apply(&x).unwrap();
        assert_eq!(v, array![1.0, 0.0, 3.0, 0.0]);
        assert_eq!(view.apply(&v).unwrap(), v);
        assert!(view.apply(&array![1.0, 2.0]).is_err());
    }

    #[test]
    fn low_pass_averages_blocks() {
        // 4x4 image, factor 2: top-left block holds 1,2,5,6 -> mean 3.5.
        let x = Array1::from_iter((1..=16).map(|v| v as f64));
        let v = low_pass(&x, 2).unwrap();
        assert_eq!(v[0], 3.5);
        assert_eq!(v[1], 3.5);
        assert_eq!(v[4], 3.5);
        assert_eq!(v[5], 3.5);
        // Bottom-right block: 11,12,15,16 -> 13.5.
        assert_eq!(v[15], 13.5);
    }

    #[test]
    fn low_pass_is_idempotent_and_mean_preserving() {
        let mut rng = master_rng(5);
        let x = crate::rng::standard_normal_vec(&mut rng, 64);
        let v = low_pass(&x, 4).unwrap();
        let vv = low_pass(&v, 4).unwrap();
        for i in 0..64 {
            assert_relative_eq!(vv[i], v[i], max_relative = 1e-12, epsilon = 1e-12);
        }
        assert_relative_eq!(v.sum(), x.sum(), max_relative = 1e-12);
    }

    #[test]
    fn low_pass_rejects_bad_shapes() {
        assert!(low_pass(&Array1::zeros(10), 2).is_err());
        assert!(low_pass(&Array1::zeros(16), 3).is_err());
        assert!(low_pass(&Array1::zeros(16), 0).is_err());
    }

    #[test]
    fn default_mixture_task_matches_documented_means() {
        let task = MixtureTask::new(&MixtureTaskConfig::default()).unwrap();
        let src = task.source.means();
        assert_eq!(
            src[0],
            array![1.0, 1.0, -1.0, -1.0, -2.0, -2.0, -2.0, -2.0]
        );
        assert_eq!(
            src[1],
            array![-1.0, -1.0, 1.0, 1.0, -2.0, -2.0, -2.0, -2.0]
        );
        let tgt = task.target.means();
        assert_eq!(tgt[0], array![1.0, 1.0, -1.0, -1.0, 2.0, 2.0, 2.0, 2.0]);
        // Invariant blocks agree across domains component by component.
        let view = &task.view;
        for k in 0..2 {
            assert_eq!(view.apply(&src[k]).unwrap(), view.apply(&tgt[k]).unwrap());
        }
    }

    #[test]
    fn mixture_task_rejects_odd_or_tiny_dims() {
        let mut cfg = MixtureTaskConfig::default();
        cfg.dim = 7;
        assert!(MixtureTask::new(&cfg).is_err());
        cfg.dim = 2;
        assert!(MixtureTask::new(&cfg).is_err());
    }

    #[test]
    fn image_samples_stay_in_unit_range_with_correct_dims() {
        let task = ImageTask::default();
        task.validate().unwrap();
        let imgs = task.sample_source(10, &mut master_rng(3));
        for img in &imgs {
            assert_eq!(img.len(), 256);
            assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
            // A filled circle of radius 3 covers a recognizable area.
            let lit = img.iter().filter(|v| **v > 0.0).count();
            assert!((20..=40).contains(&lit), "lit pixel count {lit}");
        }
    }

    #[test]
    fn squares_are_axis_aligned_blocks() {
        let task = ImageTask::default();
        let imgs = task.sample_target(10, &mut master_rng(4));
        for img in &imgs {
            let lit = img.iter().filter(|v| **v > 0.0).count();
            // 7x7 block, give or take the fractional center.
            assert!((36..=64).contains(&lit), "lit pixel count {lit}");
        }
    }

    #[test]
    fn image_sampling_is_reproducible() {
        let task = ImageTask::default();
        let a = task.sample_source(4, &mut child_rng(9, 1));
        let b = task.sample_source(4, &mut child_rng(9, 1));
        assert_eq!(a, b);
    }

    #[test]
    fn shapes_share_latents_under_identical_streams() {
        // Same rng stream => same centers and intensities, so the low-pass
        // views of circle and square are close even though the pixels differ.
        let task = ImageTask::default();
        let circles = task.sample_source(6, &mut child_rng(11, 0));
        let squares = task.sample_target(6, &mut child_rng(11, 0));
        let view = task.view();
        for (c, s) in circles.iter().zip(&squares) {
            assert_ne!(c, s);
            let vc = view.apply(c).unwrap();
            let vs = view.apply(s).unwrap();
            let diff = (&vc - &vs).mapv(|v| v * v).sum().sqrt();
            let scale = vc.mapv(|v: f64| v * v).sum().sqrt();
            assert!(diff < scale, "low-pass views too far apart: {diff} vs {scale}");
        }
    }

    #[test]
    fn image_task_validation_rejects_bad_geometry() {
        let mut task = ImageTask::default();
        task.lowpass_factor = 5;
        assert!(task.validate().is_err());
        task = ImageTask::default();
        task.radius = 8.0;
        assert!(task.validate().is_err());
    }
}
