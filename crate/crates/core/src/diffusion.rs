//! Variance-preserving diffusion: linear beta schedule, closed-form
//! perturbation kernel, the conditioning-subset sampler and its loss
//! re-weighting, plus an analytic Gaussian score oracle used by tests.

use crate::error::{Error, Result};
use crate::latent::{ModalityLayout, SubsetPartition};
use rand::Rng;

/// Schedule and training-randomization parameters of the diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionConfig {
    pub beta_min: f64,
    pub beta_max: f64,
    /// Diffusion horizon T.
    pub horizon: f64,
    /// Default number of integration steps.
    pub n_steps: usize,
    /// Probability that a training step diffuses every modality jointly.
    pub d: f64,
    /// Smallest diffusion time sampled during training; keeps sigma(t) > 0
    /// and leaves exactly 0 to mean "frozen".
    pub t_eps: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            beta_min: 0.1,
            beta_max: 20.0,
            horizon: 1.0,
            n_steps: 250,
            d: 0.5,
            t_eps: 1e-5,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_min > 0.0 && self.beta_min < self.beta_max) {
            return Err(Error::Config(format!(
                "need 0 < beta_min < beta_max, got ({}, {})",
                self.beta_min, self.beta_max
            )));
        }
        if self.horizon <= 0.0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.d) {
            return Err(Error::Config(format!("d must be in [0,1], got {}", self.d)));
        }
        if !(self.t_eps > 0.0 && self.t_eps < self.horizon / 10.0) {
            return Err(Error::Config(format!(
                "t_eps must satisfy 0 < t_eps << horizon, got {}",
                self.t_eps
            )));
        }
        Ok(())
    }

    /// Linear noise scale: beta_min at t=0 up to beta_max at t=horizon.
    pub fn beta(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Config(format!(
                "beta: t={t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(self.beta_min + (t / self.horizon) * (self.beta_max - self.beta_min))
    }

    /// Closed-form marginal of the forward process at time `t`.
    pub fn kernel(&self, t: f64) -> KernelParams {
        debug_assert!((0.0..=self.horizon).contains(&t), "kernel t out of range");
        // mean coefficient a(t) = exp(-1/2 * integral of beta), with the
        // linear schedule integrating to t^2 (bmax-bmin)/(2T) + t bmin.
        let exponent = -0.25 * t * t * (self.beta_max - self.beta_min) / self.horizon
            - 0.5 * t * self.beta_min;
        let mean_coeff = exponent.exp();
        KernelParams {
            mean_coeff,
            variance: 1.0 - mean_coeff * mean_coeff,
        }
    }

    /// Conditional kernel from time `s` to a later time `u`:
    /// `R_u | R_s ~ N(a_su R_s, var_su I)`.
    pub fn kernel_between(&self, s: f64, u: f64) -> Result<KernelParams> {
        if !(0.0 <= s && s <= u && u <= self.horizon) {
            return Err(Error::Config(format!(
                "kernel_between needs 0 <= s <= u <= T, got ({s}, {u})"
            )));
        }
        let ks = self.kernel(s);
        let ku = self.kernel(u);
        let ratio = ku.mean_coeff / ks.mean_coeff;
        Ok(KernelParams {
            mean_coeff: ratio,
            variance: (ku.variance - ratio * ratio * ks.variance).max(0.0),
        })
    }
}

/// Mean coefficient and variance of the Gaussian perturbation kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub mean_coeff: f64,
    pub variance: f64,
}

impl KernelParams {
    pub fn sigma(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Push `z` through the forward kernel at time `t` with the given standard
/// normal draw: `a(t) z + sigma(t) noise`.
pub fn diffuse(config: &DiffusionConfig, z: &[f64], t: f64, noise: &[f64]) -> Result<Vec<f64>> {
    if z.len() != noise.len() {
        return Err(Error::shape("diffuse", z.len(), noise.len()));
    }
    let k = config.kernel(t);
    let s = k.sigma();
    Ok(z.iter()
        .zip(noise)
        .map(|(zv, nv)| k.mean_coeff * zv + s * nv)
        .collect())
}

/// Draw the conditioning subset from nu: the empty set with probability `d`,
/// otherwise uniform over the nonempty proper subsets. The generated set is
/// never empty (the loss weight divides by its size), so the full set is
/// excluded from the conditioning support. With a single modality the only
/// valid outcome is unconditional.
pub fn sample_partition<R: Rng>(
    config: &DiffusionConfig,
    n_modalities: usize,
    rng: &mut R,
) -> Result<SubsetPartition> {
    if n_modalities == 0 {
        return Err(Error::Config("need at least one modality".into()));
    }
    if config.d >= 1.0 {
        return Ok(SubsetPartition::unconditional(n_modalities));
    }
    let u: f64 = rng.random();
    if u < config.d || n_modalities == 1 {
        return Ok(SubsetPartition::unconditional(n_modalities));
    }
    // Bit patterns 1 ..= 2^M - 2 enumerate the nonempty proper subsets.
    let count = (1usize << n_modalities) - 2;
    let pattern = 1 + rng.random_range(0..count);
    let conditioning: Vec<usize> = (0..n_modalities)
        .filter(|i| pattern >> i & 1 == 1)
        .collect();
    SubsetPartition::from_conditioning(n_modalities, &conditioning)
}

/// Loss re-weighting: 1 + dim(conditioning) / dim(generated), in summed
/// latent dimensions; dim of the empty set is 0.
pub fn omega(layout: &ModalityLayout, partition: &SubsetPartition) -> f64 {
    let gen_dim = layout.subset_dim(partition.generated()) as f64;
    let cond_dim = layout.subset_dim(partition.conditioning()) as f64;
    1.0 + cond_dim / gen_dim
}

/// Exact score of the forward marginal when the initial data is Gaussian
/// with the given mean and diagonal covariance: the marginal at `t` is
/// `N(a(t) mean0, a(t)^2 cov0 + sigma^2(t) I)` and the score is
/// `-(r - a mean0) / (a^2 cov0 + sigma^2)` elementwise.
pub fn gaussian_score_oracle(
    mean0: &[f64],
    diag_cov0: &[f64],
    config: &DiffusionConfig,
    r: &[f64],
    t: f64,
) -> Vec<f64> {
    assert_eq!(mean0.len(), diag_cov0.len());
    assert_eq!(mean0.len(), r.len());
    let k = config.kernel(t);
    let a = k.mean_coeff;
    r.iter()
        .zip(mean0.iter().zip(diag_cov0))
        .map(|(rv, (m, c))| -(rv - a * m) / (a * a * c + k.variance))
        .collect()
}
