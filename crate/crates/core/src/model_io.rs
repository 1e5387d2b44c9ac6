//! Checkpoint (de)serialization of model bundles on top of the shared
//! tensor container.
//!
//! Naming scheme inside a container:
//! - MLPs: `{prefix}.layer{k}.w`, `{prefix}.layer{k}.b`, plus
//!   `{prefix}.meta` = `[activation, n_layers, skip pairs...]`.
//! - Autoencoder checkpoints: `enc.*`, `dec.*`, `norm.mean`, `norm.std`,
//!   `spec.dims`.
//! - Score checkpoints: `score.*`, `score.ema.*`, `layout.dims`,
//!   `score.shape` = `[n_modalities, total_dim, time_embed]`.

use crate::autoencoder::{AutoencoderPair, LatentNormalizer};
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::latent::{ModalityLayout, ModalitySpec};
use crate::mlp::{Activation, Layer, MlpParams};
use crate::pipeline::TrainMode;
use crate::score::ScoreNetwork;
use crate::tensor::Tensor;

fn activation_code(a: Activation) -> f64 {
    match a {
        Activation::SiLU => 0.0,
        Activation::Identity => 1.0,
        Activation::Square => 2.0,
    }
}

fn activation_from_code(c: i64) -> Result<Activation> {
    match c {
        0 => Ok(Activation::SiLU),
        1 => Ok(Activation::Identity),
        2 => Ok(Activation::Square),
        _ => Err(Error::Format(format!("unknown activation code {c}"))),
    }
}

/// Write an MLP under `prefix` into a container.
pub fn save_mlp(c: &mut Container, prefix: &str, params: &MlpParams) -> Result<()> {
    let mut meta = vec![
        activation_code(params.activation()),
        params.layers().len() as f64,
    ];
    for &(s, e) in params.skips() {
        meta.push(s as f64);
        meta.push(e as f64);
    }
    c.insert(format!("{prefix}.meta"), Tensor::from_vec(meta))?;
    for (k, layer) in params.layers().iter().enumerate() {
        c.insert(format!("{prefix}.layer{k}.w"), layer.weight.clone())?;
        c.insert(format!("{prefix}.layer{k}.b"), layer.bias.clone())?;
    }
    Ok(())
}

/// Read an MLP stored under `prefix`.
pub fn load_mlp(c: &Container, prefix: &str) -> Result<MlpParams> {
    let meta = c.require_ints(&format!("{prefix}.meta"))?;
    if meta.len() < 2 || (meta.len() - 2) % 2 != 0 {
        return Err(Error::Format(format!("bad MLP meta under {prefix:?}")));
    }
    let activation = activation_from_code(meta[0])?;
    let n_layers = meta[1] as usize;
    let skips: Vec<(usize, usize)> = meta[2..]
        .chunks(2)
        .map(|p| (p[0] as usize, p[1] as usize))
        .collect();
    let mut layers = Vec::with_capacity(n_layers);
    for k in 0..n_layers {
        let w = c.require(&format!("{prefix}.layer{k}.w"))?.clone();
        let b = c.require(&format!("{prefix}.layer{k}.b"))?.clone();
        layers.push(Layer::new(w, b)?);
    }
    MlpParams::new(layers, activation, skips)
}

/// One modality's stage-one artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderBundle {
    pub spec: ModalitySpec,
    pub pair: AutoencoderPair,
    pub normalizer: LatentNormalizer,
}

/// Encode a string as a tensor of byte values, so names survive the
/// f64-only container.
fn string_tensor(s: &str) -> Tensor {
    Tensor::from_vec(s.bytes().map(|b| b as f64).collect())
}

fn tensor_string(t: &Tensor) -> Result<String> {
    let bytes: Vec<u8> = t
        .data()
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && (0.0..256.0).contains(&v) {
                Ok(v as u8)
            } else {
                Err(Error::Format(format!(
                    "invalid byte value {v} in name tensor"
                )))
            }
        })
        .collect::<Result<_>>()?;
    String::from_utf8(bytes).map_err(|e| Error::Format(format!("name not UTF-8: {e}")))
}

/// Serialize a modality's autoencoder checkpoint.
pub fn autoencoder_to_container(bundle: &AutoencoderBundle) -> Result<Container> {
    let mut c = Container::new();
    c.insert("meta.name", string_tensor(&bundle.spec.name))?;
    c.insert(
        "spec.dims",
        Tensor::from_vec(vec![
            bundle.spec.data_dim as f64,
            bundle.spec.latent_dim as f64,
        ]),
    )?;
    save_mlp(&mut c, "enc", &bundle.pair.encoder)?;
    save_mlp(&mut c, "dec", &bundle.pair.decoder)?;
    c.insert(
        "norm.mean",
        Tensor::from_vec(bundle.normalizer.mean().to_vec()),
    )?;
    c.insert(
        "norm.std",
        Tensor::from_vec(bundle.normalizer.std().to_vec()),
    )?;
    Ok(c)
}

/// Load a modality's autoencoder checkpoint.
pub fn autoencoder_from_container(c: &Container) -> Result<AutoencoderBundle> {
    let name = tensor_string(c.require("meta.name")?)?;
    let dims = c.require_ints("spec.dims")?;
    if dims.len() != 2 {
        return Err(Error::Format(
            "spec.dims must hold [data_dim, latent_dim]".into(),
        ));
    }
    let spec = ModalitySpec::new(name, dims[0] as usize, dims[1] as usize)?;
    let encoder = load_mlp(c, "enc")?;
    let decoder = load_mlp(c, "dec")?;
    let pair = AutoencoderPair::new(&spec, encoder, decoder)?;
    let normalizer = LatentNormalizer::new(
        c.require("norm.mean")?.data().to_vec(),
        c.require("norm.std")?.data().to_vec(),
    )?;
    Ok(AutoencoderBundle {
        spec,
        pair,
        normalizer,
    })
}

/// The score network with its EMA shadow, the layout it was trained on, and
/// the training scheme it was produced by.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBundle {
    pub net: ScoreNetwork,
    pub ema_params: MlpParams,
    pub latent_dims: Vec<usize>,
    pub train_mode: TrainMode,
}

impl ScoreBundle {
    /// Network view over the EMA parameters (what samplers should use).
    pub fn ema_network(&self) -> Result<ScoreNetwork> {
        ScoreNetwork::from_params(
            self.ema_params.clone(),
            self.net.n_modalities(),
            self.net.total_dim(),
            self.net.time_embed(),
        )
    }

    /// Rebuild the layout (with the given modality names) the net was
    /// trained for.
    pub fn layout(&self, names: &[String], data_dims: &[usize]) -> Result<ModalityLayout> {
        if names.len() != self.latent_dims.len() || data_dims.len() != self.latent_dims.len() {
            return Err(Error::shape(
                "ScoreBundle::layout",
                self.latent_dims.len(),
                names.len(),
            ));
        }
        ModalityLayout::new(
            names
                .iter()
                .zip(data_dims.iter().zip(&self.latent_dims))
                .map(|(n, (&dd, &ld))| ModalitySpec::new(n.clone(), dd, ld))
                .collect::<Result<Vec<_>>>()?,
        )
    }
}

pub fn score_to_container(bundle: &ScoreBundle) -> Result<Container> {
    let mut c = Container::new();
    c.insert(
        "layout.dims",
        Tensor::from_vec(bundle.latent_dims.iter().map(|&d| d as f64).collect()),
    )?;
    c.insert(
        "score.shape",
        Tensor::from_vec(vec![
            bundle.net.n_modalities() as f64,
            bundle.net.total_dim() as f64,
            bundle.net.time_embed() as f64,
        ]),
    )?;
    let mode = match bundle.train_mode {
        TrainMode::Multitime => 0.0,
        TrainMode::Unidiffuser => 1.0,
        TrainMode::Unconditional => 2.0,
    };
    c.insert("score.mode", Tensor::from_vec(vec![mode]))?;
    save_mlp(&mut c, "score", &bundle.net.params)?;
    save_mlp(&mut c, "score.ema", &bundle.ema_params)?;
    Ok(c)
}

pub fn score_from_container(c: &Container) -> Result<ScoreBundle> {
    let latent_dims: Vec<usize> = c
        .require_ints("layout.dims")?
        .into_iter()
        .map(|d| d as usize)
        .collect();
    let shape = c.require_ints("score.shape")?;
    if shape.len() != 3 {
        return Err(Error::Format("score.shape must hold 3 entries".into()));
    }
    let train_mode = match c.require_ints("score.mode")?[0] {
        0 => TrainMode::Multitime,
        1 => TrainMode::Unidiffuser,
        2 => TrainMode::Unconditional,
        other => return Err(Error::Format(format!("unknown train mode {other}"))),
    };
    let params = load_mlp(c, "score")?;
    let ema_params = load_mlp(c, "score.ema")?;
    let net = ScoreNetwork::from_params(
        params,
        shape[0] as usize,
        shape[1] as usize,
        shape[2] as usize,
    )?;
    Ok(ScoreBundle {
        net,
        ema_params,
        latent_dims,
        train_mode,
    })
}
