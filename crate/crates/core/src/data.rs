//! Synthetic multi-modal datasets with a shared class semantic, class-based
//! cross-modality pairing, and container persistence.
//!
//! Each class gets a template point on a circle of fixed radius, rotated
//! differently per modality and embedded into that modality's data
//! dimension; samples are templates plus Gaussian noise, so classes are
//! separable by construction whenever the noise is small against the
//! inter-template gap. An optional "hard" modality carries larger class
//! noise plus label-independent nuisance dimensions, giving the in-painting
//! vs multi-time comparison an asymmetric target.

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use std::path::Path;

/// Radius of the class-template circle.
const TEMPLATE_RADIUS: f64 = 2.0;
/// Per-modality rotation offset (radians) so modalities are heterogeneous.
const MODALITY_ROTATION: f64 = 0.7;
/// Class-noise multiplier of the hard modality.
const HARD_NOISE_MULT: f64 = 3.0;
/// Standard deviation of the hard modality's label-independent dimensions.
const NUISANCE_STD: f64 = 1.0;

/// Generation parameters for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    /// Data dimension per modality; the first two dims carry the class
    /// signal, the rest are near-zero (or nuisance for the hard modality).
    pub data_dims: Vec<usize>,
    pub noise_scale: f64,
    pub samples_per_class: usize,
    pub seed: u64,
    /// Index of a modality with degraded class signal, if any.
    pub hard_modality: Option<usize>,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.samples_per_class == 0 || self.data_dims.is_empty() {
            return Err(Error::Config(
                "synthetic data needs classes, samples and at least one modality".into(),
            ));
        }
        if self.data_dims.iter().any(|&d| d < 2) {
            return Err(Error::Config("each modality needs data_dim >= 2".into()));
        }
        if self.noise_scale < 0.0 {
            return Err(Error::Config("noise_scale must be >= 0".into()));
        }
        if let Some(h) = self.hard_modality {
            if h >= self.data_dims.len() {
                return Err(Error::Config(format!("hard modality {h} out of range")));
            }
        }
        Ok(())
    }

    pub fn n_modalities(&self) -> usize {
        self.data_dims.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_classes * self.samples_per_class
    }
}

/// Aligned multi-modal samples with one shared label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiModalDataset {
    pub modality_names: Vec<String>,
    /// One `[n, data_dim]` tensor per modality, rows aligned across
    /// modalities.
    pub modalities: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    /// Source-row pairs when the set was built by pairing two datasets.
    pub pairing: Option<Vec<(usize, usize)>>,
}

impl MultiModalDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.modality_names.len() != self.modalities.len() {
            return Err(Error::shape(
                "dataset names",
                self.modalities.len(),
                self.modality_names.len(),
            ));
        }
        for m in &self.modalities {
            if m.batch_rows() != self.labels.len() {
                return Err(Error::shape(
                    "dataset rows",
                    self.labels.len(),
                    m.batch_rows(),
                ));
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(Error::Config(format!(
                "label {bad} out of range (K={})",
                self.n_classes
            )));
        }
        Ok(())
    }

    /// Rows whose index is in `idx`, as per-modality tensors.
    pub fn gather(&self, idx: &[usize]) -> Result<Vec<Tensor>> {
        self.modalities
            .iter()
            .map(|m| {
                let rows: Vec<Vec<f64>> = idx.iter().map(|&i| m.row(i).to_vec()).collect();
                Tensor::from_rows(&rows)
            })
            .collect()
    }
}

/// Class template of one modality: a point on the circle, embedded in the
/// first two data dimensions.
pub fn class_template(
    modality: usize,
    class: usize,
    n_classes: usize,
    data_dim: usize,
) -> Vec<f64> {
    let angle = 2.0 * std::f64::consts::PI * class as f64 / n_classes as f64
        + modality as f64 * MODALITY_ROTATION;
    let mut v = vec![0.0; data_dim];
    v[0] = TEMPLATE_RADIUS * angle.cos();
    v[1] = TEMPLATE_RADIUS * angle.sin();
    v
}

/// Generate an aligned dataset: all modalities of row `i` share `labels[i]`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<MultiModalDataset> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let n = config.n_samples();
    let k = config.n_classes;

    let mut labels: Vec<usize> = (0..n).map(|i| i / config.samples_per_class).collect();
    labels.shuffle(&mut rng);

    let mut modalities = Vec::with_capacity(config.n_modalities());
    for (m, &dim) in config.data_dims.iter().enumerate() {
        let hard = config.hard_modality == Some(m);
        let class_noise = if hard {
            config.noise_scale * HARD_NOISE_MULT
        } else {
            config.noise_scale
        };
        let mut t = Tensor::zeros(vec![n, dim]);
        for (i, &label) in labels.iter().enumerate() {
            let template = class_template(m, label, k, dim);
            let row = t.row_mut(i);
            for j in 0..dim {
                let g: f64 = rng.sample(StandardNormal);
                row[j] = if hard && j >= 2 {
                    NUISANCE_STD * g
                } else {
                    template[j] + class_noise * g
                };
            }
        }
        modalities.push(t);
    }
    Ok(MultiModalDataset {
        modality_names: (0..config.n_modalities())
            .map(|m| format!("mod{m}"))
            .collect(),
        modalities,
        labels,
        n_classes: k,
        pairing: None,
    })
}

/// Pair every row of `a` with `k_pairs` same-class rows of `b`; within each
/// class, `b`'s rows are shuffled once and assigned cyclically, so `k_pairs=1`
/// over two copies of one dataset yields a same-class permutation. The output
/// holds `a`'s modalities followed by `b`'s and has `a.len() * k_pairs` rows.
pub fn pair_by_label<R: Rng>(
    a: &MultiModalDataset,
    b: &MultiModalDataset,
    k_pairs: usize,
    rng: &mut R,
) -> Result<MultiModalDataset> {
    a.validate()?;
    b.validate()?;
    if a.n_classes != b.n_classes {
        return Err(Error::Config(format!(
            "class counts differ: {} vs {}",
            a.n_classes, b.n_classes
        )));
    }
    if k_pairs == 0 {
        return Err(Error::Config("k_pairs must be >= 1".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); b.n_classes];
    for (i, &l) in b.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for c in &mut by_class {
        c.shuffle(rng);
    }
    let mut cursor = vec![0usize; b.n_classes];
    let mut pairs = Vec::with_capacity(a.len() * k_pairs);
    for (i, &l) in a.labels.iter().enumerate() {
        let pool = &by_class[l];
        if pool.is_empty() {
            return Err(Error::Config(format!(
                "class {l} present in first dataset but absent in second"
            )));
        }
        for _ in 0..k_pairs {
            let j = pool[cursor[l] % pool.len()];
            cursor[l] += 1;
            pairs.push((i, j));
        }
    }

    let mut modalities = Vec::with_capacity(a.n_modalities() + b.n_modalities());
    for m in &a.modalities {
        let rows: Vec<Vec<f64>> = pairs.iter().map(|&(i, _)| m.row(i).to_vec()).collect();
        modalities.push(Tensor::from_rows(&rows)?);
    }
    for m in &b.modalities {
        let rows: Vec<Vec<f64>> = pairs.iter().map(|&(_, j)| m.row(j).to_vec()).collect();
        modalities.push(Tensor::from_rows(&rows)?);
    }
    let mut names: Vec<String> = a.modality_names.iter().map(|n| format!("a.{n}")).collect();
    names.extend(b.modality_names.iter().map(|n| format!("b.{n}")));
    let labels = pairs.iter().map(|&(i, _)| a.labels[i]).collect();
    Ok(MultiModalDataset {
        modality_names: names,
        modalities,
        labels,
        n_classes: a.n_classes,
        pairing: Some(pairs),
    })
}

/// Serialize into the shared tensor container.
pub fn save_dataset(dataset: &MultiModalDataset, path: impl AsRef<Path>) -> Result<()> {
    dataset.validate()?;
    let mut c = Container::new();
    c.insert(
        "meta.n_classes",
        Tensor::from_vec(vec![dataset.n_classes as f64]),
    )?;
    c.insert(
        "labels",
        Tensor::from_vec(dataset.labels.iter().map(|&l| l as f64).collect()),
    )?;
    for (name, m) in dataset.modality_names.iter().zip(&dataset.modalities) {
        c.insert(format!("data.{name}"), m.clone())?;
    }
    if let Some(pairs) = &dataset.pairing {
        let mut flat = Vec::with_capacity(pairs.len() * 2);
        for &(i, j) in pairs {
            flat.push(i as f64);
            flat.push(j as f64);
        }
        c.insert("pairing", Tensor::new(vec![pairs.len(), 2], flat)?)?;
    }
    c.save(path)
}

/// Load a dataset previously written by [`save_dataset`].
pub fn load_dataset(path: impl AsRef<Path>) -> Result<MultiModalDataset> {
    let c = Container::load(path)?;
    let n_classes = c.require_ints("meta.n_classes")?[0] as usize;
    let labels: Vec<usize> = c
        .require_ints("labels")?
        .into_iter()
        .map(|l| l as usize)
        .collect();
    let mut modality_names = Vec::new();
    let mut modalities = Vec::new();
    for (name, t) in c.iter() {
        if let Some(stem) = name.strip_prefix("data.") {
            if t.rank() != 2 {
                return Err(Error::Format(format!(
                    "modality tensor {name:?} must be rank 2"
                )));
            }
            modality_names.push(stem.to_string());
            modalities.push(t.clone());
        }
    }
    if modalities.is_empty() {
        return Err(Error::Format("dataset container has no modalities".into()));
    }
    let pairing = match c.get("pairing") {
        Some(_) => {
            let flat = c.require_ints("pairing")?;
            Some(
                flat.chunks(2)
                    .map(|p| (p[0] as usize, p[1] as usize))
                    .collect(),
            )
        }
        None => None,
    };
    let ds = MultiModalDataset {
        modality_names,
        modalities,
        labels,
        n_classes,
        pairing,
    };
    ds.validate()?;
    Ok(ds)
}
