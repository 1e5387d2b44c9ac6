//! Deterministic per-modality autoencoders plus latent normalization.
//!
//! Each modality gets its own encoder/decoder MLP pair trained independently
//! by minimizing mean squared reconstruction error; nothing is shared across
//! modalities, so training one modality cannot touch another's parameters.
//! Latents are harmonized for the diffusion stage by an element-wise
//! normalizer whose statistics come from the first training batch and are
//! then frozen.

use crate::error::{Error, Result};
use crate::latent::ModalitySpec;
use crate::mlp::{Activation, MlpParams};
use crate::optim::{adam_step, AdamState};
use crate::tensor::{column_mean, column_std, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Minimum per-dimension standard deviation kept by the normalizer.
pub const STD_FLOOR: f64 = 1e-6;

/// Encoder (data -> latent) and decoder (latent -> data) for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderPair {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
}

impl AutoencoderPair {
    pub fn new(spec: &ModalitySpec, encoder: MlpParams, decoder: MlpParams) -> Result<Self> {
        if encoder.in_dim() != spec.data_dim || encoder.out_dim() != spec.latent_dim {
            return Err(Error::shape(
                "AutoencoderPair encoder",
                format!("{} -> {}", spec.data_dim, spec.latent_dim),
                format!("{} -> {}", encoder.in_dim(), encoder.out_dim()),
            ));
        }
        if decoder.in_dim() != spec.latent_dim || decoder.out_dim() != spec.data_dim {
            return Err(Error::shape(
                "AutoencoderPair decoder",
                format!("{} -> {}", spec.latent_dim, spec.data_dim),
                format!("{} -> {}", decoder.in_dim(), decoder.out_dim()),
            ));
        }
        Ok(AutoencoderPair { encoder, decoder })
    }
}

/// Element-wise latent normalizer; statistics frozen after fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentNormalizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl LatentNormalizer {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::shape("LatentNormalizer", mean.len(), std.len()));
        }
        if std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config("normalizer std must be positive".into()));
        }
        Ok(LatentNormalizer { mean, std })
    }

    /// Identity normalizer (mean 0, std 1).
    pub fn identity(dim: usize) -> Self {
        LatentNormalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize_in_place(&self, z: &mut [f64]) {
        for (v, (m, s)) in z.iter_mut().zip(self.mean.iter().zip(&self.std)) {
            *v = (*v - m) / s;
        }
    }

    pub fn denormalize_in_place(&self, z: &mut [f64]) {
        for (v, (m, s)) in z.iter_mut().zip(self.mean.iter().zip(&self.std)) {
            *v = *v * s + m;
        }
    }
}

/// Hyper-parameters for [`train_autoencoder`].
#[derive(Debug, Clone)]
pub struct AeTrainOptions {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AeTrainOptions {
    fn default() -> Self {
        AeTrainOptions {
            hidden: vec![64],
            activation: Activation::SiLU,
            epochs: 100,
            lr: 1e-3,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Result of training one modality's autoencoder.
#[derive(Debug, Clone)]
pub struct AeTrainReport {
    pub pair: AutoencoderPair,
    /// Per-epoch mean squared error per element.
    pub epoch_mse: Vec<f64>,
}

/// Train an encoder/decoder pair on `data` (`[n, data_dim]`) by minimizing
/// reconstruction MSE with Adam. Touches nothing outside the returned pair.
pub fn train_autoencoder(
    spec: &ModalitySpec,
    data: &Tensor,
    opts: &AeTrainOptions,
) -> Result<AeTrainReport> {
    if data.row_dim() != spec.data_dim {
        return Err(Error::shape(
            "train_autoencoder",
            spec.data_dim,
            data.row_dim(),
        ));
    }
    let n = data.batch_rows();
    if n == 0 {
        return Err(Error::Config("empty training set".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
    let mut enc_dims = vec![spec.data_dim];
    enc_dims.extend(&opts.hidden);
    enc_dims.push(spec.latent_dim);
    let mut dec_dims = vec![spec.latent_dim];
    dec_dims.extend(opts.hidden.iter().rev());
    dec_dims.push(spec.data_dim);
    let mut encoder = MlpParams::xavier(&enc_dims, opts.activation, vec![], &mut rng)?;
    let mut decoder = MlpParams::xavier(&dec_dims, opts.activation, vec![], &mut rng)?;
    let mut adam_enc = AdamState::new(&encoder, opts.lr);
    let mut adam_dec = AdamState::new(&decoder, opts.lr);

    let batch = opts.batch_size.max(1).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_mse = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut sq_err_sum = 0.0;
        for chunk in order.chunks(batch) {
            let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| data.row(i).to_vec()).collect();
            let x = Tensor::from_rows(&rows)?;
            let b = chunk.len() as f64;

            let z = encoder.forward(&x)?;
            let xh = decoder.forward(&z)?;
            let mut upstream = Tensor::zeros(vec![chunk.len(), spec.data_dim]);
            let mut batch_sq = 0.0;
            for i in 0..xh.len() {
                let r = xh.data()[i] - x.data()[i];
                batch_sq += r * r;
                upstream.data_mut()[i] = 2.0 * r / b;
            }
            sq_err_sum += batch_sq;
            let loss = batch_sq / b;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "autoencoder {:?} loss non-finite at epoch {epoch}",
                    spec.name
                )));
            }
            let (dec_grads, dz) = decoder.backward(&z, &upstream)?;
            let (enc_grads, _) = encoder.backward(&x, &dz)?;
            adam_step(&mut adam_dec, &mut decoder, &dec_grads)?;
            adam_step(&mut adam_enc, &mut encoder, &enc_grads)?;
        }
        epoch_mse.push(sq_err_sum / (n * spec.data_dim) as f64);
    }
    Ok(AeTrainReport {
        pair: AutoencoderPair::new(spec, encoder, decoder)?,
        epoch_mse,
    })
}

/// Per-dimension mean/std of the encoded first batch; std floored at
/// [`STD_FLOOR`] so a constant batch cannot divide by zero.
pub fn fit_normalizer(pair: &AutoencoderPair, first_batch: &Tensor) -> Result<LatentNormalizer> {
    if first_batch.batch_rows() < 2 {
        return Err(Error::Config(format!(
            "normalizer needs a batch of >= 2 samples, got {}",
            first_batch.batch_rows()
        )));
    }
    let z = pair.encoder.forward(first_batch)?;
    let mean = column_mean(&z);
    let std: Vec<f64> = column_std(&z, &mean)
        .into_iter()
        .map(|s| s.max(STD_FLOOR))
        .collect();
    LatentNormalizer::new(mean, std)
}

/// Encode one sample or a batch into normalized latent space.
pub fn encode(pair: &AutoencoderPair, norm: &LatentNormalizer, x: &Tensor) -> Result<Tensor> {
    let mut z = pair.encoder.forward(x)?;
    for i in 0..z.batch_rows() {
        norm.normalize_in_place(z.row_mut(i));
    }
    Ok(z)
}

/// De-normalize then decode back to data space.
pub fn decode(pair: &AutoencoderPair, norm: &LatentNormalizer, z_norm: &Tensor) -> Result<Tensor> {
    let mut z = z_norm.clone();
    for i in 0..z.batch_rows() {
        norm.denormalize_in_place(z.row_mut(i));
    }
    pair.decoder.forward(&z)
}

/// Mean squared error per element between two equally shaped tensors.
pub fn mse(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.len(), b.len(), "mse operands must match");
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    s / a.len() as f64
}
