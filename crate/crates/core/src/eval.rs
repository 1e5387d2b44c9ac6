//! Evaluation: per-modality classifiers, generation coherence, the Fréchet
//! distance between embedding statistics, and the latent-robustness scan
//! that measures how fast each modality's class signal dies under forward
//! diffusion.

use crate::autoencoder::{decode, encode, AutoencoderPair, LatentNormalizer};
use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::linalg::{eigvals_of_sandwich, SymMatrix};
use crate::mlp::{Activation, MlpParams};
use crate::optim::{adam_step, AdamState};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Small MLP classifier for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyClassifier {
    pub params: MlpParams,
    pub n_classes: usize,
}

impl TinyClassifier {
    pub fn new(params: MlpParams, n_classes: usize) -> Result<Self> {
        if params.out_dim() != n_classes {
            return Err(Error::shape("TinyClassifier", n_classes, params.out_dim()));
        }
        Ok(TinyClassifier { params, n_classes })
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.params.forward(x)
    }

    /// Predicted class per row.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok((0..logits.batch_rows())
            .map(|i| argmax(logits.row(i)))
            .collect())
    }

    /// Penultimate-layer activations, used as embeddings for the Fréchet
    /// statistics.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let (_, pen) = self.params.forward_with_penultimate(x)?;
        Ok(pen)
    }

    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let preds = self.predict(x)?;
        if preds.len() != labels.len() {
            return Err(Error::shape("accuracy", labels.len(), preds.len()));
        }
        let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Classifier training hyper-parameters.
#[derive(Debug, Clone)]
pub struct ClassifierTrainOptions {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierTrainOptions {
    fn default() -> Self {
        ClassifierTrainOptions {
            hidden: vec![32],
            epochs: 60,
            lr: 1e-2,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Trained classifier plus how well it fits its own training data.
#[derive(Debug, Clone)]
pub struct ClassifierTrainReport {
    pub classifier: TinyClassifier,
    pub train_accuracy: f64,
    pub epoch_loss: Vec<f64>,
}

/// Train a softmax classifier with Adam; convergence is reported, not
/// enforced, so chance-level accuracy on unlearnable labels is a valid
/// outcome.
pub fn train_classifier(
    data: &Tensor,
    labels: &[usize],
    n_classes: usize,
    opts: &ClassifierTrainOptions,
) -> Result<ClassifierTrainReport> {
    let n = data.batch_rows();
    if n == 0 || labels.len() != n {
        return Err(Error::shape("train_classifier", n, labels.len()));
    }
    if n_classes == 0 {
        return Err(Error::Config("need at least one class".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Config(format!(
            "label {bad} out of range (K={n_classes})"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
    let mut dims = vec![data.row_dim()];
    dims.extend(&opts.hidden);
    dims.push(n_classes);
    let mut params = MlpParams::xavier(&dims, Activation::SiLU, vec![], &mut rng)?;
    let mut adam = AdamState::new(&params, opts.lr);
    let batch = opts.batch_size.max(1).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_loss = Vec::with_capacity(opts.epochs);
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| data.row(i).to_vec()).collect();
            let x = Tensor::from_rows(&rows)?;
            let logits = params.forward(&x)?;
            let b = chunk.len() as f64;
            let mut upstream = Tensor::zeros(vec![chunk.len(), n_classes]);
            for (r, &i) in chunk.iter().enumerate() {
                let row = logits.row(r);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                loss_sum += z.ln() + max - row[labels[i]];
                for (k, e) in exps.iter().enumerate() {
                    let p = e / z;
                    upstream.row_mut(r)[k] = (p - if k == labels[i] { 1.0 } else { 0.0 }) / b;
                }
            }
            if !loss_sum.is_finite() {
                return Err(Error::Numeric("classifier loss non-finite".into()));
            }
            let (grads, _) = params.backward(&x, &upstream)?;
            adam_step(&mut adam, &mut params, &grads)?;
        }
        epoch_loss.push(loss_sum / n as f64);
    }
    let classifier = TinyClassifier::new(params, n_classes)?;
    let train_accuracy = classifier.accuracy(data, labels)?;
    Ok(ClassifierTrainReport {
        classifier,
        train_accuracy,
        epoch_loss,
    })
}

/// Percentage of generated samples whose predicted class matches the
/// conditioning label.
pub fn conditional_coherence(
    classifier: &TinyClassifier,
    generated: &Tensor,
    conditioning_labels: &[usize],
) -> Result<f64> {
    if generated.batch_rows() == 0 {
        return Err(Error::Config("coherence of an empty set".into()));
    }
    if generated.batch_rows() != conditioning_labels.len() {
        return Err(Error::shape(
            "conditional_coherence",
            conditioning_labels.len(),
            generated.batch_rows(),
        ));
    }
    Ok(100.0 * classifier.accuracy(generated, conditioning_labels)?)
}

/// Percentage of generations on which every modality's classifier outputs
/// one and the same label.
pub fn joint_coherence(classifiers: &[TinyClassifier], generated: &[Tensor]) -> Result<f64> {
    if classifiers.is_empty() || classifiers.len() != generated.len() {
        return Err(Error::shape(
            "joint_coherence",
            classifiers.len(),
            generated.len(),
        ));
    }
    let n = generated[0].batch_rows();
    if n == 0 {
        return Err(Error::Config("coherence of an empty set".into()));
    }
    let mut preds = Vec::with_capacity(classifiers.len());
    for (c, g) in classifiers.iter().zip(generated) {
        if g.batch_rows() != n {
            return Err(Error::shape("joint_coherence rows", n, g.batch_rows()));
        }
        preds.push(c.predict(g)?);
    }
    let mut agree = 0usize;
    for i in 0..n {
        let first = preds[0][i];
        if preds.iter().all(|p| p[i] == first) {
            agree += 1;
        }
    }
    Ok(100.0 * agree as f64 / n as f64)
}

/// Mean and covariance of an embedding set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
}

impl GaussianStats {
    /// Sample statistics (covariance normalized by n-1).
    pub fn from_samples(embeddings: &Tensor) -> Result<Self> {
        let n = embeddings.batch_rows();
        let d = embeddings.row_dim();
        if n < 2 {
            return Err(Error::Config(format!(
                "need >= 2 samples for covariance, got {n}"
            )));
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(embeddings.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = SymMatrix::zeros(d);
        for r in 0..n {
            let row = embeddings.row(r);
            for i in 0..d {
                let ci = row[i] - mean[i];
                for j in i..d {
                    let v = cov.at(i, j) + ci * (row[j] - mean[j]);
                    cov.set(i, j, v);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov.at(i, j) / (n - 1) as f64;
                cov.set(i, j, v);
                cov.set(j, i, v);
            }
        }
        Ok(GaussianStats { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Fréchet distance between two Gaussians:
/// `|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2})`, with the matrix square
/// root taken through a symmetric eigendecomposition and negative
/// eigenvalues clamped at zero.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape("frechet_distance", a.dim(), b.dim()));
    }
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let cross: f64 = eigvals_of_sandwich(&a.cov, &b.cov)?
        .into_iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    Ok(mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross)
}

/// Coherence of each modality after pushing its latents through the forward
/// kernel at each grid time: encode, diffuse, decode, classify.
pub struct RobustnessScan {
    pub t_grid: Vec<f64>,
    /// `per_modality[m][k]` = coherence (%) of modality `m` at `t_grid[k]`.
    pub per_modality: Vec<Vec<f64>>,
}

pub fn robustness_scan<R: Rng>(
    config: &DiffusionConfig,
    encoders: &[(AutoencoderPair, LatentNormalizer)],
    classifiers: &[TinyClassifier],
    data: &[Tensor],
    labels: &[usize],
    t_grid: &[f64],
    rng: &mut R,
) -> Result<RobustnessScan> {
    if encoders.len() != classifiers.len() || encoders.len() != data.len() {
        return Err(Error::shape("robustness_scan", encoders.len(), data.len()));
    }
    let mut per_modality = Vec::with_capacity(encoders.len());
    for ((pair, norm), (clf, x)) in encoders.iter().zip(classifiers.iter().zip(data)) {
        let z = encode(pair, norm, x)?;
        let mut curve = Vec::with_capacity(t_grid.len());
        for &t in t_grid {
            let k = config.kernel(t);
            let sigma = k.sigma();
            let mut zt = z.clone();
            for v in zt.data_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *v = k.mean_coeff * *v + sigma * g;
            }
            let xh = decode(pair, norm, &zt)?;
            curve.push(conditional_coherence(clf, &xh, labels)?);
        }
        per_modality.push(curve);
    }
    Ok(RobustnessScan {
        t_grid: t_grid.to_vec(),
        per_modality,
    })
}
