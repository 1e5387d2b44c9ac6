//! Joint latent space plumbing: concatenation layout, modality subsets,
//! freeze masks and multi-time vectors.
//!
//! The joint latent is the concatenation of per-modality latent blocks. A
//! partition splits modalities into a generated set and a conditioning set;
//! the mask freezes the conditioning blocks during diffusion, and the
//! multi-time vector carries a per-modality diffusion time where time 0 is
//! reserved to mean "frozen conditioning block".

use crate::error::{Error, Result};

/// Name plus data/latent dimensions of one modality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalitySpec {
    pub name: String,
    pub data_dim: usize,
    pub latent_dim: usize,
}

impl ModalitySpec {
    pub fn new(name: impl Into<String>, data_dim: usize, latent_dim: usize) -> Result<Self> {
        let name = name.into();
        if data_dim == 0 || latent_dim == 0 {
            return Err(Error::Config(format!(
                "modality {name:?}: dims must be >= 1 (data_dim={data_dim}, latent_dim={latent_dim})"
            )));
        }
        Ok(ModalitySpec {
            name,
            data_dim,
            latent_dim,
        })
    }
}

/// Offsets of each modality's block inside the concatenated latent vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalityLayout {
    specs: Vec<ModalitySpec>,
    offsets: Vec<usize>,
    total_dim: usize,
}

impl ModalityLayout {
    pub fn new(specs: Vec<ModalitySpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("layout needs at least one modality".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &specs {
            if !seen.insert(s.name.clone()) {
                return Err(Error::Config(format!(
                    "duplicate modality name {:?}",
                    s.name
                )));
            }
        }
        let mut offsets = Vec::with_capacity(specs.len());
        let mut total = 0;
        for s in &specs {
            offsets.push(total);
            total += s.latent_dim;
        }
        Ok(ModalityLayout {
            specs,
            offsets,
            total_dim: total,
        })
    }

    pub fn n_modalities(&self) -> usize {
        self.specs.len()
    }

    pub fn specs(&self) -> &[ModalitySpec] {
        &self.specs
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    /// Flat index range of modality `i`'s block.
    pub fn block_range(&self, i: usize) -> std::ops::Range<usize> {
        let start = self.offsets[i];
        start..start + self.specs[i].latent_dim
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    /// Sum of latent dims over the given modality indices.
    pub fn subset_dim(&self, indices: &[usize]) -> usize {
        indices.iter().map(|&i| self.specs[i].latent_dim).sum()
    }
}

/// Disjoint split of modality indices into a generated set and its
/// conditioning complement. The generated set is always nonempty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetPartition {
    generated: Vec<usize>,
    conditioning: Vec<usize>,
    n_modalities: usize,
}

impl SubsetPartition {
    /// Build from the conditioning set; the generated set is the complement.
    pub fn from_conditioning(n_modalities: usize, conditioning: &[usize]) -> Result<Self> {
        let mut cond: Vec<usize> = conditioning.to_vec();
        cond.sort_unstable();
        cond.dedup();
        if cond.len() != conditioning.len() {
            return Err(Error::Config("duplicate modality index in subset".into()));
        }
        if let Some(&bad) = cond.iter().find(|&&i| i >= n_modalities) {
            return Err(Error::Config(format!(
                "modality index {bad} out of range (M={n_modalities})"
            )));
        }
        let generated: Vec<usize> = (0..n_modalities).filter(|i| !cond.contains(i)).collect();
        if generated.is_empty() {
            return Err(Error::Config(
                "generated set may not be empty: conditioning on every modality leaves nothing to diffuse"
                    .into(),
            ));
        }
        Ok(SubsetPartition {
            generated,
            conditioning: cond,
            n_modalities,
        })
    }

    /// Everything generated, nothing conditioned (joint generation).
    pub fn unconditional(n_modalities: usize) -> Self {
        SubsetPartition::from_conditioning(n_modalities, &[]).unwrap()
    }

    /// Sorted indices of the generated (diffused) modalities.
    pub fn generated(&self) -> &[usize] {
        &self.generated
    }

    /// Sorted indices of the conditioning (frozen) modalities.
    pub fn conditioning(&self) -> &[usize] {
        &self.conditioning
    }

    pub fn n_modalities(&self) -> usize {
        self.n_modalities
    }

    pub fn is_unconditional(&self) -> bool {
        self.conditioning.is_empty()
    }

    pub fn is_generated(&self, i: usize) -> bool {
        self.generated.binary_search(&i).is_ok()
    }
}

/// Dense 0/1 vector over the joint latent, 1 on generated blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityMask {
    values: Vec<f64>,
}

impl ModalityMask {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_generated_coord(&self, i: usize) -> bool {
        self.values[i] == 1.0
    }

    /// out[i] = diffused[i] where mask is 1, frozen[i] where mask is 0.
    /// Coordinate-wise select, so frozen entries are copied bit-exactly.
    pub fn select(&self, diffused: &[f64], frozen: &[f64], out: &mut [f64]) {
        for i in 0..self.values.len() {
            out[i] = if self.values[i] == 1.0 {
                diffused[i]
            } else {
                frozen[i]
            };
        }
    }
}

/// Per-modality diffusion times; 0 marks a frozen conditioning modality.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTimeVector {
    times: Vec<f64>,
}

impl MultiTimeVector {
    pub fn new(times: Vec<f64>) -> Self {
        MultiTimeVector { times }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Block-constant 0/1 mask: 1 exactly on the generated blocks.
pub fn build_mask(layout: &ModalityLayout, partition: &SubsetPartition) -> Result<ModalityMask> {
    check_partition(layout, partition)?;
    let mut values = vec![0.0; layout.total_dim()];
    for &i in partition.generated() {
        for v in &mut values[layout.block_range(i)] {
            *v = 1.0;
        }
    }
    Ok(ModalityMask { values })
}

/// Multi-time vector: `t` on generated entries, 0 on conditioning entries.
pub fn build_multitime(partition: &SubsetPartition, t: f64) -> Result<MultiTimeVector> {
    if t <= 0.0 {
        return Err(Error::Config(format!(
            "diffusion time must be positive (0 is reserved for conditioning), got {t}"
        )));
    }
    let times = (0..partition.n_modalities())
        .map(|i| if partition.is_generated(i) { t } else { 0.0 })
        .collect();
    Ok(MultiTimeVector { times })
}

/// Concatenate generated and conditioning blocks into a joint vector; every
/// modality must appear exactly once across the two lists.
pub fn compose(
    layout: &ModalityLayout,
    generated: &[(usize, &[f64])],
    conditioning: &[(usize, &[f64])],
) -> Result<Vec<f64>> {
    let mut joint = vec![0.0; layout.total_dim()];
    let mut filled = vec![false; layout.n_modalities()];
    for &(i, block) in generated.iter().chain(conditioning) {
        if i >= layout.n_modalities() {
            return Err(Error::Config(format!("modality index {i} out of range")));
        }
        if filled[i] {
            return Err(Error::Config(format!("duplicate block for modality {i}")));
        }
        let range = layout.block_range(i);
        if block.len() != range.len() {
            return Err(Error::shape("compose", range.len(), block.len()));
        }
        joint[range].copy_from_slice(block);
        filled[i] = true;
    }
    if let Some(missing) = filled.iter().position(|f| !f) {
        return Err(Error::Config(format!(
            "missing block for modality {missing}"
        )));
    }
    Ok(joint)
}

/// Slice a joint vector back into per-modality blocks.
pub fn split(layout: &ModalityLayout, joint: &[f64]) -> Result<Vec<Vec<f64>>> {
    if joint.len() != layout.total_dim() {
        return Err(Error::shape("split", layout.total_dim(), joint.len()));
    }
    Ok((0..layout.n_modalities())
        .map(|i| joint[layout.block_range(i)].to_vec())
        .collect())
}

fn check_partition(layout: &ModalityLayout, partition: &SubsetPartition) -> Result<()> {
    if partition.n_modalities() != layout.n_modalities() {
        return Err(Error::shape(
            "partition/layout",
            layout.n_modalities(),
            partition.n_modalities(),
        ));
    }
    Ok(())
}
