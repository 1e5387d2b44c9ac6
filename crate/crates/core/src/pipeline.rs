//! End-to-end orchestration shared by the CLI and the acceptance suite:
//! stage one trains the per-modality autoencoders and freezes normalizers,
//! stage two trains the score network on the concatenated normalized latents.

use crate::autoencoder::{
    fit_normalizer, train_autoencoder, AeTrainOptions, AutoencoderPair, LatentNormalizer,
};
use crate::data::MultiModalDataset;
use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::latent::{ModalityLayout, ModalitySpec, SubsetPartition};
use crate::model_io::AutoencoderBundle;
use crate::score::{
    encode_joint, training_step_latents, unidiffuser_training_step, ScoreNetConfig, ScoreTrainer,
    TrainingBatchOutcome,
};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Stage-two training scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Masked multi-time training with conditioning-subset randomization.
    Multitime,
    /// Every modality diffused at its own independent time.
    Unidiffuser,
    /// Plain joint denoising (randomization probability pinned to 1).
    Unconditional,
}

/// Everything stage one produces.
#[derive(Debug, Clone)]
pub struct StageOne {
    pub layout: ModalityLayout,
    pub bundles: Vec<AutoencoderBundle>,
    /// Per-modality, per-epoch reconstruction MSE.
    pub loss_curves: Vec<Vec<f64>>,
}

impl StageOne {
    pub fn encoders(&self) -> Vec<(AutoencoderPair, LatentNormalizer)> {
        self.bundles
            .iter()
            .map(|b| (b.pair.clone(), b.normalizer.clone()))
            .collect()
    }
}

/// Train one autoencoder per modality (independently) and fit each
/// normalizer on the first `norm_batch` rows of the dataset.
pub fn run_stage_one(
    dataset: &MultiModalDataset,
    latent_dims: &[usize],
    ae_opts: &AeTrainOptions,
    norm_batch: usize,
) -> Result<StageOne> {
    dataset.validate()?;
    if latent_dims.len() != dataset.n_modalities() {
        return Err(Error::shape(
            "run_stage_one latent dims",
            dataset.n_modalities(),
            latent_dims.len(),
        ));
    }
    let norm_batch = norm_batch.max(2).min(dataset.len());
    let mut specs = Vec::with_capacity(dataset.n_modalities());
    let mut bundles = Vec::with_capacity(dataset.n_modalities());
    let mut loss_curves = Vec::with_capacity(dataset.n_modalities());
    for (m, data) in dataset.modalities.iter().enumerate() {
        let spec = ModalitySpec::new(
            dataset.modality_names[m].clone(),
            data.row_dim(),
            latent_dims[m],
        )?;
        let mut opts = ae_opts.clone();
        // stream per-modality seeds so modalities train on distinct noise
        opts.seed = ae_opts.seed.wrapping_add(m as u64);
        let report = train_autoencoder(&spec, data, &opts)?;
        let first_rows: Vec<Vec<f64>> = (0..norm_batch).map(|i| data.row(i).to_vec()).collect();
        let normalizer = fit_normalizer(&report.pair, &Tensor::from_rows(&first_rows)?)?;
        bundles.push(AutoencoderBundle {
            spec: spec.clone(),
            pair: report.pair,
            normalizer,
        });
        loss_curves.push(report.epoch_mse);
        specs.push(spec);
    }
    Ok(StageOne {
        layout: ModalityLayout::new(specs)?,
        bundles,
        loss_curves,
    })
}

/// Stage-two hyper-parameters.
#[derive(Debug, Clone)]
pub struct ScoreTrainOptions {
    pub net: ScoreNetConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub ema_momentum: f64,
    pub seed: u64,
    pub mode: TrainMode,
}

impl Default for ScoreTrainOptions {
    fn default() -> Self {
        ScoreTrainOptions {
            net: ScoreNetConfig::default(),
            steps: 4000,
            batch_size: 128,
            lr: 1e-3,
            ema_momentum: 0.999,
            seed: 0,
            mode: TrainMode::Multitime,
        }
    }
}

/// Train the score network on the dataset's encoded latents.
pub fn run_stage_two(
    config: &DiffusionConfig,
    layout: &ModalityLayout,
    encoders: &[(AutoencoderPair, LatentNormalizer)],
    dataset: &MultiModalDataset,
    opts: &ScoreTrainOptions,
) -> Result<(ScoreTrainer, Vec<TrainingBatchOutcome>)> {
    config.validate()?;
    let latents = encode_joint(layout, encoders, &dataset.modalities)?;
    run_stage_two_latents(config, layout, &latents, opts)
}

/// Stage two on pre-encoded latents (`[n, total_dim]`).
pub fn run_stage_two_latents(
    config: &DiffusionConfig,
    layout: &ModalityLayout,
    latents: &Tensor,
    opts: &ScoreTrainOptions,
) -> Result<(ScoreTrainer, Vec<TrainingBatchOutcome>)> {
    let n = latents.batch_rows();
    if n == 0 {
        return Err(Error::Config("no latents to train on".into()));
    }
    let mut effective = config.clone();
    if opts.mode == TrainMode::Unconditional {
        effective.d = 1.0;
    }
    let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
    let mut trainer = ScoreTrainer::new(layout, &opts.net, opts.lr, opts.ema_momentum, &mut rng)?;
    let mut log = Vec::with_capacity(opts.steps);
    let batch = opts.batch_size.max(1).min(n);
    for _ in 0..opts.steps {
        let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..n)).collect();
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| latents.row(i).to_vec()).collect();
        let z = Tensor::from_rows(&rows)?;
        let outcome = match opts.mode {
            TrainMode::Multitime | TrainMode::Unconditional => {
                training_step_latents(&effective, layout, &mut trainer, &z, &mut rng)?
            }
            TrainMode::Unidiffuser => {
                unidiffuser_training_step(&effective, layout, &mut trainer, &z, &mut rng)?
            }
        };
        log.push(outcome);
    }
    Ok((trainer, log))
}

/// Decode generated latent blocks back to data space, one tensor per
/// generated modality (ascending modality order, matching
/// `conditional_generate`'s output layout).
pub fn decode_generated(
    layout: &ModalityLayout,
    partition: &SubsetPartition,
    encoders: &[(AutoencoderPair, LatentNormalizer)],
    generated: &Tensor,
) -> Result<Vec<(usize, Tensor)>> {
    let n = generated.batch_rows();
    let mut out = Vec::with_capacity(partition.generated().len());
    let mut at = 0;
    for &m in partition.generated() {
        let w = layout.block_range(m).len();
        let mut block = Tensor::zeros(vec![n, w]);
        for i in 0..n {
            block
                .row_mut(i)
                .copy_from_slice(&generated.row(i)[at..at + w]);
        }
        at += w;
        let (pair, norm) = &encoders[m];
        out.push((m, crate::autoencoder::decode(pair, norm, &block)?));
    }
    if at != generated.row_dim() {
        return Err(Error::shape("decode_generated", at, generated.row_dim()));
    }
    Ok(out)
}

/// Decode a full joint latent batch into per-modality data tensors.
pub fn decode_joint(
    layout: &ModalityLayout,
    encoders: &[(AutoencoderPair, LatentNormalizer)],
    latents: &Tensor,
) -> Result<Vec<Tensor>> {
    let n = latents.batch_rows();
    let mut out = Vec::with_capacity(layout.n_modalities());
    for (m, (pair, norm)) in encoders.iter().enumerate() {
        let range = layout.block_range(m);
        let mut block = Tensor::zeros(vec![n, range.len()]);
        for i in 0..n {
            block
                .row_mut(i)
                .copy_from_slice(&latents.row(i)[range.clone()]);
        }
        out.push(crate::autoencoder::decode(pair, norm, &block)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};

    fn tiny_dataset() -> MultiModalDataset {
        generate_synthetic(&SyntheticConfig {
            n_classes: 2,
            data_dims: vec![2, 3],
            noise_scale: 0.05,
            samples_per_class: 20,
            seed: 11,
            hard_modality: None,
        })
        .unwrap()
    }

    #[test]
    fn stage_one_trains_all_modalities() {
        let ds = tiny_dataset();
        let opts = AeTrainOptions {
            hidden: vec![16],
            epochs: 60,
            lr: 5e-3,
            batch_size: 20,
            seed: 0,
            ..Default::default()
        };
        let s1 = run_stage_one(&ds, &[2, 2], &opts, 16).unwrap();
        assert_eq!(s1.bundles.len(), 2);
        assert_eq!(s1.layout.total_dim(), 4);
        for curve in &s1.loss_curves {
            assert!(
                curve.last().unwrap() < &0.05,
                "curve end {:?}",
                curve.last()
            );
            assert!(
                curve.last().unwrap() < &curve[0],
                "training should reduce reconstruction error"
            );
        }
    }

    #[test]
    fn stage_two_loss_trends_down() {
        let ds = tiny_dataset();
        let ae = AeTrainOptions {
            hidden: vec![16],
            epochs: 60,
            lr: 5e-3,
            batch_size: 20,
            seed: 0,
            ..Default::default()
        };
        let s1 = run_stage_one(&ds, &[2, 2], &ae, 16).unwrap();
        let cfg = DiffusionConfig::default();
        let opts = ScoreTrainOptions {
            net: ScoreNetConfig {
                blocks: 1,
                width: 32,
                time_embed: 16,
            },
            steps: 300,
            batch_size: 32,
            lr: 1e-3,
            ema_momentum: 0.99,
            seed: 1,
            mode: TrainMode::Multitime,
        };
        let (_, log) = run_stage_two(&cfg, &s1.layout, &s1.encoders(), &ds, &opts).unwrap();
        let head: f64 = log[..50].iter().map(|o| o.loss / o.omega).sum::<f64>() / 50.0;
        let tail: f64 = log[log.len() - 50..]
            .iter()
            .map(|o| o.loss / o.omega)
            .sum::<f64>()
            / 50.0;
        assert!(tail < head, "loss should fall: head {head} tail {tail}");
    }

    #[test]
    fn unconditional_mode_never_conditions() {
        let ds = tiny_dataset();
        let ae = AeTrainOptions {
            hidden: vec![8],
            epochs: 20,
            lr: 5e-3,
            batch_size: 20,
            seed: 0,
            ..Default::default()
        };
        let s1 = run_stage_one(&ds, &[2, 2], &ae, 16).unwrap();
        // d here is overridden by the mode
        let cfg = DiffusionConfig {
            d: 0.2,
            ..Default::default()
        };
        let opts = ScoreTrainOptions {
            net: ScoreNetConfig {
                blocks: 1,
                width: 16,
                time_embed: 8,
            },
            steps: 50,
            batch_size: 16,
            mode: TrainMode::Unconditional,
            ..Default::default()
        };
        let (_, log) = run_stage_two(&cfg, &s1.layout, &s1.encoders(), &ds, &opts).unwrap();
        assert!(log.iter().all(|o| o.partition.is_unconditional()));
        assert!(log.iter().all(|o| o.omega == 1.0));
    }
}
