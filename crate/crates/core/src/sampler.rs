//! Reverse-time generation: Euler-Maruyama integration of the reverse SDE,
//! joint and conditional sampling with the multi-time network, the
//! in-painting baseline that reuses an unconditional score, and the resample
//! schedule that replays step windows for better conditional consistency.

use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::latent::{
    build_mask, build_multitime, ModalityLayout, MultiTimeVector, SubsetPartition,
};
use crate::score::ScoreNetwork;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Resampling parameters: replay each window of `jump` steps `resample_times`
/// times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepaintConfig {
    pub resample_times: usize,
    pub jump: usize,
}

/// Sampler parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub repaint: Option<RepaintConfig>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_steps: 250,
            repaint: None,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::Config("sampler needs n_steps >= 1".into()));
        }
        if let Some(rp) = self.repaint {
            if rp.resample_times == 0 {
                return Err(Error::Config("repaint resample_times must be >= 1".into()));
            }
            if rp.jump == 0 || rp.jump > self.n_steps {
                return Err(Error::Config(format!(
                    "repaint jump must be in [1, n_steps], got {}",
                    rp.jump
                )));
            }
        }
        Ok(())
    }
}

/// Score evaluated by the integrator: either a trained network or an
/// analytic oracle.
pub trait ScoreFn {
    fn eval(&self, state: &Tensor, times: &MultiTimeVector, t_prime: f64) -> Result<Tensor>;
}

/// Score of a trained multi-time network.
pub struct NetworkScore<'a> {
    pub net: &'a ScoreNetwork,
    pub config: &'a DiffusionConfig,
    pub layout: &'a ModalityLayout,
}

impl ScoreFn for NetworkScore<'_> {
    fn eval(&self, state: &Tensor, times: &MultiTimeVector, _t_prime: f64) -> Result<Tensor> {
        self.net.score(self.config, self.layout, state, times)
    }
}

/// Exact score for Gaussian initial data with diagonal covariance.
pub struct GaussianOracleScore<'a> {
    pub mean0: Vec<f64>,
    pub diag_cov0: Vec<f64>,
    pub config: &'a DiffusionConfig,
}

impl ScoreFn for GaussianOracleScore<'_> {
    fn eval(&self, state: &Tensor, _times: &MultiTimeVector, t_prime: f64) -> Result<Tensor> {
        let mut out = Tensor::zeros(vec![state.batch_rows(), state.row_dim()]);
        for i in 0..state.batch_rows() {
            let s = crate::diffusion::gaussian_score_oracle(
                &self.mean0,
                &self.diag_cov0,
                self.config,
                state.row(i),
                t_prime,
            );
            out.row_mut(i).copy_from_slice(&s);
        }
        Ok(out)
    }
}

/// Recorded integration path: `(diffusion time, full batch state)` after each
/// executed step, plus the initial state at the horizon.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<(f64, Tensor)>,
}

impl Trajectory {
    pub fn final_state(&self) -> &Tensor {
        &self.steps.last().unwrap().1
    }
}

/// One Euler-Maruyama update of the reverse SDE, in place:
/// `state += dt [ 1/2 beta(t') state + beta(t') score ] + sqrt(beta(t') dt) noise`.
pub fn em_reverse_step(
    config: &DiffusionConfig,
    state: &mut Tensor,
    score: &Tensor,
    t_prime: f64,
    dt: f64,
    noise: &Tensor,
) -> Result<()> {
    if dt <= 0.0 {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let beta = config.beta(t_prime)?;
    if state.len() != score.len() || state.len() != noise.len() {
        return Err(Error::shape(
            "em_reverse_step",
            state.len(),
            score.len().min(noise.len()),
        ));
    }
    let diff = (beta * dt).sqrt();
    for ((s, sc), nz) in state
        .data_mut()
        .iter_mut()
        .zip(score.data())
        .zip(noise.data())
    {
        *s += dt * (0.5 * beta * *s + beta * sc) + diff * nz;
    }
    crate::tensor::ensure_finite(state.data(), "em_reverse_step state")
}

/// Step-index sequence: plain `0..n` without resampling, otherwise every
/// window of `jump` consecutive indices is replayed `resample_times` times
/// (the last window is truncated when `jump` does not divide `n`).
pub fn repaint_schedule(n: usize, resample_times: usize, jump: usize) -> Result<Vec<usize>> {
    if n == 0 || resample_times == 0 || jump == 0 || jump > n {
        return Err(Error::Config(format!(
            "bad repaint schedule parameters (n={n}, r={resample_times}, j={jump})"
        )));
    }
    let mut schedule = Vec::with_capacity(n * resample_times);
    let mut start = 0;
    while start < n {
        let end = (start + jump).min(n);
        for _ in 0..resample_times {
            schedule.extend(start..end);
        }
        start = end;
    }
    Ok(schedule)
}

/// Conditioning latents for one modality: a single block broadcast to every
/// sample (rank-1) or one block per sample (`[count, block_dim]`).
pub type CondBlocks<'a> = &'a [(usize, &'a Tensor)];

enum Conditioning<'a> {
    /// Joint generation: everything diffused.
    None,
    /// Multi-time conditional: frozen blocks re-imposed after every update.
    Frozen(&'a SubsetPartition, CondBlocks<'a>),
    /// In-painting: conditioning blocks re-diffused from clean latents and
    /// overwritten before every update; the score is queried with a single
    /// shared time.
    Inpaint(&'a SubsetPartition, CondBlocks<'a>),
}

fn cond_row(block: &Tensor, i: usize) -> &[f64] {
    if block.batch_rows() == 1 {
        block.row(0)
    } else {
        block.row(i)
    }
}

/// Sample `count` joint latents by integrating the reverse SDE from the
/// stationary Gaussian; the multi-time vector carries the shared time.
pub fn joint_generate(
    config: &DiffusionConfig,
    sampler: &SamplerConfig,
    score: &dyn ScoreFn,
    layout: &ModalityLayout,
    count: usize,
) -> Result<Tensor> {
    let (samples, _) = run_reverse(
        config,
        sampler,
        score,
        layout,
        Conditioning::None,
        count,
        false,
    )?;
    Ok(samples)
}

/// Conditional generation with the multi-time score: conditioning blocks stay
/// bit-exactly frozen through every step; returns the generated blocks as a
/// `[count, dim(generated)]` tensor in ascending modality order.
pub fn conditional_generate(
    config: &DiffusionConfig,
    sampler: &SamplerConfig,
    score: &dyn ScoreFn,
    layout: &ModalityLayout,
    partition: &SubsetPartition,
    conditioning: CondBlocks<'_>,
    count: usize,
) -> Result<Tensor> {
    let (joint, _) = run_reverse(
        config,
        sampler,
        score,
        layout,
        Conditioning::Frozen(partition, conditioning),
        count,
        false,
    )?;
    extract_generated(layout, partition, &joint)
}

/// [`conditional_generate`] that also records the full trajectory.
pub fn conditional_generate_traced(
    config: &DiffusionConfig,
    sampler: &SamplerConfig,
    score: &dyn ScoreFn,
    layout: &ModalityLayout,
    partition: &SubsetPartition,
    conditioning: CondBlocks<'_>,
    count: usize,
) -> Result<(Tensor, Trajectory)> {
    let (joint, traj) = run_reverse(
        config,
        sampler,
        score,
        layout,
        Conditioning::Frozen(partition, conditioning),
        count,
        true,
    )?;
    Ok((extract_generated(layout, partition, &joint)?, traj.unwrap()))
}

/// Conditional generation with an unconditional score: each step re-diffuses
/// the conditioning blocks to the current noise level via the kernel and
/// overwrites them in the state before the update.
pub fn inpaint_conditional_generate(
    config: &DiffusionConfig,
    sampler: &SamplerConfig,
    score: &dyn ScoreFn,
    layout: &ModalityLayout,
    partition: &SubsetPartition,
    conditioning: CondBlocks<'_>,
    count: usize,
) -> Result<Tensor> {
    let (joint, _) = run_reverse(
        config,
        sampler,
        score,
        layout,
        Conditioning::Inpaint(partition, conditioning),
        count,
        false,
    )?;
    extract_generated(layout, partition, &joint)
}

/// Full joint state after in-painting, for callers that want the overwritten
/// conditioning blocks too.
pub fn inpaint_generate_joint(
    config: &DiffusionConfig,
    sampler: &SamplerConfig,
    score: &dyn ScoreFn,
    layout: &ModalityLayout,
    partition: &SubsetPartition,
    conditioning: CondBlocks<'_>,
    count: usize,
) -> Result<Tensor> {
    let (joint, _) = run_reverse(
        config,
        sampler,
        score,
        layout,
        Conditioning::Inpaint(partition, conditioning),
        count,
        false,
    )?;
    Ok(joint)
}

fn extract_generated(
    layout: &ModalityLayout,
    partition: &SubsetPartition,
    joint: &Tensor,
) -> Result<Tensor> {
    let n = joint.batch_rows();
    let gen_dim = layout.subset_dim(partition.generated());
    let mut out = Tensor::zeros(vec![n, gen_dim]);
    for i in 0..n {
        let mut at = 0;
        for &m in partition.generated() {
            let block = &joint.row(i)[layout.block_range(m)];
            out.row_mut(i)[at..at + block.len()].copy_from_slice(block);
            at += block.len();
        }
    }
    Ok(out)
}

fn run_reverse(
    config: &DiffusionConfig,
    sampler: &SamplerConfig,
    score: &dyn ScoreFn,
    layout: &ModalityLayout,
    mode: Conditioning<'_>,
    count: usize,
    capture: bool,
) -> Result<(Tensor, Option<Trajectory>)> {
    config.validate()?;
    sampler.validate()?;
    if count == 0 {
        return Err(Error::Config("count must be >= 1".into()));
    }
    let dim = layout.total_dim();
    let horizon = config.horizon;
    let n_steps = sampler.n_steps;
    let dt = horizon / n_steps as f64;
    let mut rng = ChaCha12Rng::seed_from_u64(sampler.seed);

    let (partition, cond_blocks, inpaint): (SubsetPartition, CondBlocks<'_>, bool) = match &mode {
        Conditioning::None => (
            SubsetPartition::unconditional(layout.n_modalities()),
            &[][..],
            false,
        ),
        Conditioning::Frozen(p, c) => ((*p).clone(), *c, false),
        Conditioning::Inpaint(p, c) => ((*p).clone(), *c, true),
    };
    check_conditioning(layout, &partition, cond_blocks, count)?;
    let mask = build_mask(layout, &partition)?;

    // Initial state: stationary Gaussian on generated coordinates, the given
    // clean latents on conditioning coordinates.
    let mut state = Tensor::zeros(vec![count, dim]);
    for v in state.data_mut() {
        *v = rng.sample(StandardNormal);
    }
    impose_conditioning(layout, cond_blocks, &mut state);

    let schedule = match sampler.repaint {
        None => (0..n_steps).collect::<Vec<_>>(),
        Some(rp) => repaint_schedule(n_steps, rp.resample_times, rp.jump)?,
    };

    let mut traj = capture.then(|| Trajectory {
        steps: vec![(horizon, state.clone())],
    });

    let mut noise = Tensor::zeros(vec![count, dim]);
    let mut prev_index: Option<usize> = None;
    for (pos, &idx) in schedule.iter().enumerate() {
        // Jumping back in the schedule moves the state to an earlier
        // diffusion time; re-apply forward noise through the one-step kernel
        // between the two levels.
        if let Some(p) = prev_index {
            if idx != p + 1 {
                // rounding can push the deepest time a few ulps below zero
                let from = (horizon - (p + 1) as f64 * dt).max(0.0);
                let to = horizon - idx as f64 * dt;
                let kb = config.kernel_between(from, to)?;
                let s = kb.variance.sqrt();
                for v in noise.data_mut() {
                    *v = rng.sample(StandardNormal);
                }
                for i in 0..count {
                    let nz = noise.row(i);
                    let row = state.row_mut(i);
                    for j in 0..dim {
                        if mask.values()[j] == 1.0 || inpaint {
                            row[j] = kb.mean_coeff * row[j] + s * nz[j];
                        }
                    }
                }
                if !inpaint {
                    impose_conditioning(layout, cond_blocks, &mut state);
                }
            }
        }

        let t_prime = horizon - idx as f64 * dt;
        if inpaint && !partition.is_unconditional() {
            rediffuse_conditioning(config, layout, cond_blocks, t_prime, &mut state, &mut rng)?;
        }
        let times = if inpaint {
            build_multitime(
                &SubsetPartition::unconditional(layout.n_modalities()),
                t_prime,
            )?
        } else {
            build_multitime(&partition, t_prime)?
        };
        let score_val = score.eval(&state, &times, t_prime)?;

        let last = pos == schedule.len() - 1;
        if last {
            for v in noise.data_mut() {
                *v = 0.0;
            }
        } else {
            for v in noise.data_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
        em_reverse_step(config, &mut state, &score_val, t_prime, dt, &noise)?;
        if !inpaint {
            impose_conditioning(layout, cond_blocks, &mut state);
        }
        if let Some(t) = traj.as_mut() {
            t.steps.push((t_prime - dt, state.clone()));
        }
        prev_index = Some(idx);
    }
    Ok((state, traj))
}

fn check_conditioning(
    layout: &ModalityLayout,
    partition: &SubsetPartition,
    cond_blocks: CondBlocks<'_>,
    count: usize,
) -> Result<()> {
    if partition.n_modalities() != layout.n_modalities() {
        return Err(Error::shape(
            "sampler partition",
            layout.n_modalities(),
            partition.n_modalities(),
        ));
    }
    let mut seen: Vec<usize> = cond_blocks.iter().map(|&(m, _)| m).collect();
    seen.sort_unstable();
    if seen != partition.conditioning() {
        return Err(Error::Config(format!(
            "conditioning blocks {seen:?} do not match partition {:?}",
            partition.conditioning()
        )));
    }
    for &(m, block) in cond_blocks {
        let want = layout.block_range(m).len();
        if block.row_dim() != want {
            return Err(Error::shape("conditioning block", want, block.row_dim()));
        }
        let rows = block.batch_rows();
        if rows != 1 && rows != count {
            return Err(Error::shape("conditioning block rows", count, rows));
        }
    }
    Ok(())
}

fn impose_conditioning(layout: &ModalityLayout, cond: CondBlocks<'_>, state: &mut Tensor) {
    for i in 0..state.batch_rows() {
        for &(m, block) in cond {
            state.row_mut(i)[layout.block_range(m)].copy_from_slice(cond_row(block, i));
        }
    }
}

fn rediffuse_conditioning<R: Rng>(
    config: &DiffusionConfig,
    layout: &ModalityLayout,
    cond: CondBlocks<'_>,
    t_prime: f64,
    state: &mut Tensor,
    rng: &mut R,
) -> Result<()> {
    let k = config.kernel(t_prime);
    let s = k.sigma();
    for i in 0..state.batch_rows() {
        for &(m, block) in cond {
            let range = layout.block_range(m);
            for (slot, z) in state.row_mut(i)[range].iter_mut().zip(cond_row(block, i)) {
                let g: f64 = rng.sample(StandardNormal);
                *slot = k.mean_coeff * z + s * g;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::ModalitySpec;

    fn layout(dims: &[usize]) -> ModalityLayout {
        ModalityLayout::new(
            dims.iter()
                .enumerate()
                .map(|(i, &d)| ModalitySpec::new(format!("m{i}"), 2, d).unwrap())
                .collect(),
        )
        .unwrap()
    }

    struct ZeroScore;
    impl ScoreFn for ZeroScore {
        fn eval(&self, state: &Tensor, _: &MultiTimeVector, _: f64) -> Result<Tensor> {
            Ok(Tensor::zeros(state.shape().to_vec()))
        }
    }

    #[test]
    fn em_step_pure_drift() {
        let cfg = DiffusionConfig::default();
        let mut state = Tensor::from_vec(vec![2.0, -1.0]);
        let score = Tensor::zeros(vec![2]);
        let noise = Tensor::zeros(vec![2]);
        let t = 0.5;
        let dt = 0.01;
        em_reverse_step(&cfg, &mut state, &score, t, dt, &noise).unwrap();
        let b = cfg.beta(t).unwrap();
        let factor = 1.0 + 0.5 * b * dt;
        assert!((state.data()[0] - 2.0 * factor).abs() < 1e-14);
        assert!((state.data()[1] + 1.0 * factor).abs() < 1e-14);
    }

    #[test]
    fn em_step_with_oracle_score_reverses_drift() {
        // score = -state turns the drift into -1/2 beta state.
        let cfg = DiffusionConfig::default();
        let mut state = Tensor::from_vec(vec![3.0]);
        let score = Tensor::from_vec(vec![-3.0]);
        let noise = Tensor::zeros(vec![1]);
        let t = 0.25;
        let dt = 0.004;
        em_reverse_step(&cfg, &mut state, &score, t, dt, &noise).unwrap();
        let b = cfg.beta(t).unwrap();
        assert!((state.data()[0] - 3.0 * (1.0 - 0.5 * b * dt)).abs() < 1e-14);
    }

    #[test]
    fn em_step_noise_variance() {
        let cfg = DiffusionConfig::default();
        let t = 0.5;
        let dt = 0.01;
        let b = cfg.beta(t).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let mut state = Tensor::from_vec(vec![0.0]);
            let noise = Tensor::from_vec(vec![rng.sample(StandardNormal)]);
            em_reverse_step(&cfg, &mut state, &Tensor::zeros(vec![1]), t, dt, &noise).unwrap();
            acc += state.data()[0] * state.data()[0];
        }
        let var = acc / n as f64;
        assert!(
            (var - b * dt).abs() / (b * dt) < 0.02,
            "var {var} vs {}",
            b * dt
        );
    }

    #[test]
    fn repaint_schedule_cases() {
        assert_eq!(repaint_schedule(4, 1, 2).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(
            repaint_schedule(4, 2, 2).unwrap(),
            vec![0, 1, 0, 1, 2, 3, 2, 3]
        );
        // truncated last window
        assert_eq!(
            repaint_schedule(5, 2, 2).unwrap(),
            vec![0, 1, 0, 1, 2, 3, 2, 3, 4, 4]
        );
        assert!(repaint_schedule(4, 0, 2).is_err());
        assert!(repaint_schedule(4, 2, 5).is_err());
    }

    #[test]
    fn repaint_schedule_covers_all_indices_and_ends_last() {
        for (n, r, j) in [(250, 10, 10), (16, 3, 4), (7, 2, 3)] {
            let s = repaint_schedule(n, r, j).unwrap();
            for i in 0..n {
                assert!(s.contains(&i), "missing index {i} for ({n},{r},{j})");
            }
            assert_eq!(*s.last().unwrap(), n - 1);
        }
    }

    #[test]
    fn single_step_run_is_finite() {
        let lay = layout(&[2, 2]);
        let cfg = DiffusionConfig::default();
        let sc = SamplerConfig {
            n_steps: 1,
            repaint: None,
            seed: 3,
        };
        let out = joint_generate(&cfg, &sc, &ZeroScore, &lay, 5).unwrap();
        out.ensure_finite("single step").unwrap();
        assert_eq!(out.shape(), &[5, 4]);
    }

    #[test]
    fn pinned_seed_reproduces_samples() {
        let lay = layout(&[2, 1]);
        let cfg = DiffusionConfig::default();
        let sc = SamplerConfig {
            n_steps: 20,
            repaint: None,
            seed: 11,
        };
        let oracle = GaussianOracleScore {
            mean0: vec![0.0; 3],
            diag_cov0: vec![1.0; 3],
            config: &cfg,
        };
        let a = joint_generate(&cfg, &sc, &oracle, &lay, 7).unwrap();
        let b = joint_generate(&cfg, &sc, &oracle, &lay, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn conditional_with_empty_conditioning_equals_joint() {
        let lay = layout(&[2, 1]);
        let cfg = DiffusionConfig::default();
        let sc = SamplerConfig {
            n_steps: 15,
            repaint: None,
            seed: 5,
        };
        let oracle = GaussianOracleScore {
            mean0: vec![0.0; 3],
            diag_cov0: vec![1.0; 3],
            config: &cfg,
        };
        let joint = joint_generate(&cfg, &sc, &oracle, &lay, 4).unwrap();
        let p = SubsetPartition::unconditional(2);
        let cond = conditional_generate(&cfg, &sc, &oracle, &lay, &p, &[], 4).unwrap();
        assert_eq!(joint, cond);
        let inp = inpaint_generate_joint(&cfg, &sc, &oracle, &lay, &p, &[], 4).unwrap();
        assert_eq!(joint, inp);
    }

    #[test]
    fn conditioning_blocks_frozen_through_every_step() {
        let lay = layout(&[2, 3]);
        let cfg = DiffusionConfig::default();
        let sc = SamplerConfig {
            n_steps: 12,
            repaint: Some(RepaintConfig {
                resample_times: 2,
                jump: 4,
            }),
            seed: 9,
        };
        let oracle = GaussianOracleScore {
            mean0: vec![0.0; 5],
            diag_cov0: vec![1.0; 5],
            config: &cfg,
        };
        let p = SubsetPartition::from_conditioning(2, &[1]).unwrap();
        let z2 = Tensor::from_vec(vec![0.25, -1.5, 3.5]);
        let (_, traj) =
            conditional_generate_traced(&cfg, &sc, &oracle, &lay, &p, &[(1, &z2)], 3).unwrap();
        for (_, state) in &traj.steps {
            for i in 0..3 {
                assert_eq!(&state.row(i)[2..5], z2.data(), "frozen block drifted");
            }
        }
    }

    #[test]
    fn single_row_rank2_conditioning_broadcasts() {
        let lay = layout(&[2, 3]);
        let cfg = DiffusionConfig::default();
        let sc = SamplerConfig {
            n_steps: 5,
            repaint: None,
            seed: 2,
        };
        let oracle = GaussianOracleScore {
            mean0: vec![0.0; 5],
            diag_cov0: vec![1.0; 5],
            config: &cfg,
        };
        let p = SubsetPartition::from_conditioning(2, &[1]).unwrap();
        let one_row = Tensor::new(vec![1, 3], vec![0.5, -0.5, 1.5]).unwrap();
        let out = conditional_generate(&cfg, &sc, &oracle, &lay, &p, &[(1, &one_row)], 4).unwrap();
        assert_eq!(out.shape(), &[4, 2]);
        let per_row = Tensor::new(vec![4, 3], (0..12).map(|v| v as f64).collect()).unwrap();
        let out = conditional_generate(&cfg, &sc, &oracle, &lay, &p, &[(1, &per_row)], 4).unwrap();
        assert_eq!(out.shape(), &[4, 2]);
    }

    #[test]
    fn conditioning_mismatch_rejected() {
        let lay = layout(&[2, 3]);
        let cfg = DiffusionConfig::default();
        let sc = SamplerConfig::default();
        let p = SubsetPartition::from_conditioning(2, &[1]).unwrap();
        let z_bad = Tensor::from_vec(vec![1.0, 2.0]);
        let err = conditional_generate(&cfg, &sc, &ZeroScore, &lay, &p, &[(1, &z_bad)], 2);
        assert!(err.is_err());
        let err = conditional_generate(&cfg, &sc, &ZeroScore, &lay, &p, &[], 2);
        assert!(err.is_err());
    }

    #[test]
    fn inpaint_rediffused_block_has_kernel_moments() {
        // Conditioning block at the first step should be distributed as
        // N(a(T) z, sigma^2(T) I) across samples.
        let lay = layout(&[1, 1]);
        let cfg = DiffusionConfig::default();
        let t = 0.64;
        let z = 1.7;
        let k = cfg.kernel(t);
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let n = 100_000;
        let mut state = Tensor::zeros(vec![n, 2]);
        let zt = Tensor::from_vec(vec![z]);
        rediffuse_conditioning(&cfg, &lay, &[(1, &zt)], t, &mut state, &mut rng).unwrap();
        let vals: Vec<f64> = (0..n).map(|i| state.row(i)[1]).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        assert!((mean - k.mean_coeff * z).abs() < 0.01);
        assert!((var - k.variance).abs() / k.variance < 0.02);
    }
}
