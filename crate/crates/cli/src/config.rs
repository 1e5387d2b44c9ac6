//! Run configuration: a TOML file holding every hyper-parameter of the
//! pipeline. Invariants of the nested numeric configs are re-validated on
//! load and violations name the offending key.

use mmld::data::SyntheticConfig;
use mmld::diffusion::DiffusionConfig;
use mmld::error::{Error, Result};
use mmld::sampler::{RepaintConfig, SamplerConfig};
use mmld::score::ScoreNetConfig;
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub data: DataSection,
    pub autoencoder: AeSection,
    #[serde(default)]
    pub diffusion: DiffusionSection,
    pub score: ScoreSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub n_classes: usize,
    pub data_dims: Vec<usize>,
    pub noise_scale: f64,
    pub samples_per_class: usize,
    #[serde(default)]
    pub hard_modality: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeSection {
    pub latent_dims: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}

fn default_batch() -> usize {
    64
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSection {
    pub beta_min: f64,
    pub beta_max: f64,
    pub horizon: f64,
    pub d: f64,
    pub t_eps: f64,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        let d = DiffusionConfig::default();
        DiffusionSection {
            beta_min: d.beta_min,
            beta_max: d.beta_max,
            horizon: d.horizon,
            d: d.d,
            t_eps: d.t_eps,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSection {
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    pub width: usize,
    pub time_embed: usize,
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "default_ema")]
    pub ema_momentum: f64,
}

fn default_blocks() -> usize {
    2
}

fn default_ema() -> f64 {
    0.999
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub n_steps: usize,
    pub repaint_resample_times: usize,
    pub repaint_jump: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            n_steps: 250,
            repaint_resample_times: 10,
            repaint_jump: 10,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub classifier_hidden: Vec<usize>,
    pub classifier_epochs: usize,
    pub classifier_lr: f64,
    pub n_generate: usize,
    pub robustness_grid: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            classifier_hidden: vec![32],
            classifier_epochs: 80,
            classifier_lr: 1e-2,
            n_generate: 400,
            robustness_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

impl RunConfig {
    /// Parse and validate; `MMLD_SEED` overrides the seed.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Ok(seed) = std::env::var("MMLD_SEED") {
            cfg.seed = seed.parse().map_err(|_| {
                Error::Config(format!("MMLD_SEED must be an integer, got {seed:?}"))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic_config().validate().map_err(prefix("data"))?;
        if self.autoencoder.latent_dims.len() != self.data.data_dims.len() {
            return Err(Error::Config(format!(
                "autoencoder.latent_dims: expected {} entries to match data.data_dims, got {}",
                self.data.data_dims.len(),
                self.autoencoder.latent_dims.len()
            )));
        }
        if self.autoencoder.latent_dims.contains(&0) {
            return Err(Error::Config(
                "autoencoder.latent_dims: entries must be >= 1".into(),
            ));
        }
        if self.autoencoder.epochs == 0 || self.autoencoder.lr <= 0.0 {
            return Err(Error::Config(
                "autoencoder.epochs/lr: need epochs >= 1 and lr > 0".into(),
            ));
        }
        self.diffusion_config(None)
            .validate()
            .map_err(prefix("diffusion"))?;
        self.score_net_config()
            .validate()
            .map_err(prefix("score"))?;
        if self.score.steps == 0 || self.score.lr <= 0.0 {
            return Err(Error::Config(
                "score.steps/lr: need steps >= 1 and lr > 0".into(),
            ));
        }
        if !(0.0 < self.score.ema_momentum && self.score.ema_momentum < 1.0) {
            return Err(Error::Config("score.ema_momentum: must be in (0,1)".into()));
        }
        self.sampler_config(false, 0)
            .validate()
            .map_err(prefix("sampler"))?;
        self.sampler_config(true, 0)
            .validate()
            .map_err(prefix("sampler"))?;
        if self.eval.n_generate == 0 {
            return Err(Error::Config("eval.n_generate: must be >= 1".into()));
        }
        if self
            .eval
            .robustness_grid
            .iter()
            .any(|&t| !(0.0..=self.diffusion.horizon).contains(&t))
        {
            return Err(Error::Config(
                "eval.robustness_grid: entries must lie in [0, diffusion.horizon]".into(),
            ));
        }
        Ok(())
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_classes: self.data.n_classes,
            data_dims: self.data.data_dims.clone(),
            noise_scale: self.data.noise_scale,
            samples_per_class: self.data.samples_per_class,
            seed: self.seed,
            hard_modality: self.data.hard_modality,
        }
    }

    /// Diffusion config; `d_override` pins the randomization probability
    /// (ablations and the unconditional training mode).
    pub fn diffusion_config(&self, d_override: Option<f64>) -> DiffusionConfig {
        DiffusionConfig {
            beta_min: self.diffusion.beta_min,
            beta_max: self.diffusion.beta_max,
            horizon: self.diffusion.horizon,
            n_steps: self.sampler.n_steps,
            d: d_override.unwrap_or(self.diffusion.d),
            t_eps: self.diffusion.t_eps,
        }
    }

    pub fn score_net_config(&self) -> ScoreNetConfig {
        ScoreNetConfig {
            blocks: self.score.blocks,
            width: self.score.width,
            time_embed: self.score.time_embed,
        }
    }

    pub fn sampler_config(&self, repaint: bool, seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_steps: self.sampler.n_steps,
            repaint: repaint.then_some(RepaintConfig {
                resample_times: self.sampler.repaint_resample_times,
                jump: self.sampler.repaint_jump,
            }),
            seed,
        }
    }
}

fn prefix(section: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Config(msg) => Error::Config(format!("{section}: {msg}")),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3

[data]
n_classes = 2
data_dims = [2, 3]
noise_scale = 0.1
samples_per_class = 10

[autoencoder]
latent_dims = [2, 2]
epochs = 5
lr = 0.001

[score]
width = 16
time_embed = 8
steps = 10
lr = 0.001
"#;

    #[test]
    fn minimal_config_parses() {
        let cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.diffusion.beta_max, 20.0);
        assert_eq!(cfg.sampler.n_steps, 250);
    }

    #[test]
    fn unknown_key_is_rejected_with_its_name() {
        let bad = format!("{MINIMAL}\n[score2]\nx = 1\n");
        let err = toml::from_str::<RunConfig>(&bad).unwrap_err();
        assert!(err.to_string().contains("score2"), "{err}");
    }

    #[test]
    fn invalid_value_names_key_path() {
        let mut cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.autoencoder.latent_dims = vec![2];
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("latent_dims"), "{err}");
        let mut cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.diffusion.d = 1.5;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("diffusion"), "{err}");
    }
}
