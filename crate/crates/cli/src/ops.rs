//! Command implementations shared by the binary and its integration tests.

use crate::config::RunConfig;
use mmld::autoencoder::AeTrainOptions;
use mmld::autoencoder::{AutoencoderPair, LatentNormalizer};
use mmld::checkpoint::Container;
use mmld::data::{generate_synthetic, load_dataset, save_dataset, MultiModalDataset};
use mmld::error::{Error, Result};
use mmld::eval::{
    conditional_coherence, frechet_distance, joint_coherence, robustness_scan, train_classifier,
    ClassifierTrainOptions, GaussianStats, TinyClassifier,
};
use mmld::latent::{ModalityLayout, SubsetPartition};
use mmld::model_io::{
    autoencoder_from_container, autoencoder_to_container, score_from_container, score_to_container,
    AutoencoderBundle, ScoreBundle,
};
use mmld::pipeline::{
    decode_generated, decode_joint, run_stage_one, run_stage_two, ScoreTrainOptions, TrainMode,
};
use mmld::sampler::{
    conditional_generate, inpaint_conditional_generate, joint_generate, NetworkScore,
};
use mmld::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

// Per-command seed streams derived from the master seed.
const SEED_TRAIN_AE: u64 = 100;
const SEED_TRAIN_SCORE: u64 = 200;
const SEED_SAMPLE: u64 = 300;
const SEED_EVAL: u64 = 400;

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = generate_synthetic(&cfg.synthetic_config())?;
    save_dataset(&ds, out)?;
    println!(
        "wrote {} samples x {} modalities to {}",
        ds.len(),
        ds.n_modalities(),
        out.display()
    );
    Ok(())
}

fn ae_opts(cfg: &RunConfig) -> AeTrainOptions {
    AeTrainOptions {
        hidden: cfg.autoencoder.hidden.clone(),
        activation: mmld::mlp::Activation::SiLU,
        epochs: cfg.autoencoder.epochs,
        lr: cfg.autoencoder.lr,
        batch_size: cfg.autoencoder.batch_size,
        seed: cfg.seed.wrapping_add(SEED_TRAIN_AE),
    }
}

pub fn cmd_train_ae(cfg: &RunConfig, data: &Path, out_dir: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    std::fs::create_dir_all(out_dir)?;
    let s1 = run_stage_one(
        &ds,
        &cfg.autoencoder.latent_dims,
        &ae_opts(cfg),
        cfg.autoencoder.batch_size,
    )?;
    for (i, bundle) in s1.bundles.iter().enumerate() {
        autoencoder_to_container(bundle)?.save(out_dir.join(format!("ae_{i}.bin")))?;
    }
    let mut csv = String::from("epoch,modality,mse\n");
    for (m, curve) in s1.loss_curves.iter().enumerate() {
        for (e, v) in curve.iter().enumerate() {
            writeln!(csv, "{e},{},{v}", ds.modality_names[m]).unwrap();
        }
    }
    std::fs::write(out_dir.join("ae_loss.csv"), csv)?;
    for (m, curve) in s1.loss_curves.iter().enumerate() {
        println!(
            "modality {}: final reconstruction mse {:.3e}",
            ds.modality_names[m],
            curve.last().unwrap()
        );
    }
    Ok(())
}

/// Load every `ae_{i}.bin` under the directory, in index order.
pub fn load_autoencoders(dir: &Path) -> Result<Vec<AutoencoderBundle>> {
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(idx) = name
            .strip_prefix("ae_")
            .and_then(|s| s.strip_suffix(".bin"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            found.push((idx, path));
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::Config(format!(
            "no ae_*.bin checkpoints under {}",
            dir.display()
        )));
    }
    found
        .into_iter()
        .map(|(_, p)| autoencoder_from_container(&Container::load(p)?))
        .collect()
}

pub fn layout_of(bundles: &[AutoencoderBundle]) -> Result<ModalityLayout> {
    ModalityLayout::new(bundles.iter().map(|b| b.spec.clone()).collect())
}

pub fn encoders_of(bundles: &[AutoencoderBundle]) -> Vec<(AutoencoderPair, LatentNormalizer)> {
    bundles
        .iter()
        .map(|b| (b.pair.clone(), b.normalizer.clone()))
        .collect()
}

pub fn cmd_train_score(
    cfg: &RunConfig,
    data: &Path,
    ae_dir: &Path,
    out_dir: &Path,
    mode: TrainMode,
) -> Result<()> {
    let ds = load_dataset(data)?;
    let bundles = load_autoencoders(ae_dir)?;
    let layout = layout_of(&bundles)?;
    let encoders = encoders_of(&bundles);
    std::fs::create_dir_all(out_dir)?;
    let diffusion = cfg.diffusion_config(None);
    let opts = ScoreTrainOptions {
        net: cfg.score_net_config(),
        steps: cfg.score.steps,
        batch_size: cfg.score.batch_size,
        lr: cfg.score.lr,
        ema_momentum: cfg.score.ema_momentum,
        seed: cfg.seed.wrapping_add(SEED_TRAIN_SCORE),
        mode,
    };
    let (trainer, log) = run_stage_two(&diffusion, &layout, &encoders, &ds, &opts)?;
    let bundle = ScoreBundle {
        net: trainer.net.clone(),
        ema_params: trainer.ema.shadow.clone(),
        latent_dims: layout.specs().iter().map(|s| s.latent_dim).collect(),
        train_mode: mode,
    };
    score_to_container(&bundle)?.save(out_dir.join("score.bin"))?;
    let mut csv = String::from("step,loss,omega,cond_size,t,grad_norm\n");
    for (i, o) in log.iter().enumerate() {
        let t = o
            .shared_t
            .unwrap_or_else(|| o.times.times().iter().sum::<f64>() / o.times.len() as f64);
        writeln!(
            csv,
            "{i},{},{},{},{t},{}",
            o.loss,
            o.omega,
            o.partition.conditioning().len(),
            o.grad_norm
        )
        .unwrap();
    }
    std::fs::write(out_dir.join("score_loss.csv"), csv)?;
    let tail: f64 =
        log.iter().rev().take(100).map(|o| o.loss).sum::<f64>() / log.len().min(100) as f64;
    println!("trained {} steps, tail loss {tail:.4}", log.len());
    Ok(())
}

/// Sampling method for conditional generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMethod {
    Multitime,
    Inpaint,
}

pub struct SampleArgs {
    pub count: usize,
    pub method: SampleMethod,
    pub repaint: bool,
    /// `(modality name, container path)` pairs with data to condition on.
    pub conditions: Vec<(String, PathBuf)>,
    pub pgm: bool,
    /// Also dump latents and decoded modalities as CSV.
    pub csv: bool,
    pub seed_override: Option<u64>,
}

pub fn cmd_sample(
    cfg: &RunConfig,
    ae_dir: &Path,
    score_path: &Path,
    out_dir: &Path,
    args: &SampleArgs,
) -> Result<()> {
    let bundles = load_autoencoders(ae_dir)?;
    let layout = layout_of(&bundles)?;
    let encoders = encoders_of(&bundles);
    let score_bundle = score_from_container(&Container::load(score_path)?)?;
    let stored_dims: Vec<usize> = layout.specs().iter().map(|s| s.latent_dim).collect();
    if score_bundle.latent_dims != stored_dims {
        return Err(Error::Config(format!(
            "score checkpoint latent dims {:?} do not match autoencoders {:?}",
            score_bundle.latent_dims, stored_dims
        )));
    }
    if !args.conditions.is_empty()
        && args.method == SampleMethod::Multitime
        && score_bundle.train_mode == TrainMode::Unconditional
    {
        return Err(Error::Config(
            "this score network was trained unconditionally; conditional sampling needs \
             --method inpaint (or a multitime/unidiffuser checkpoint)"
                .into(),
        ));
    }
    let net = score_bundle.ema_network()?;
    let diffusion = cfg.diffusion_config(None);
    let seed = args
        .seed_override
        .unwrap_or(cfg.seed.wrapping_add(SEED_SAMPLE));
    let sampler = {
        let mut s = cfg.sampler_config(args.repaint, seed);
        s.seed = seed;
        s
    };
    let score = NetworkScore {
        net: &net,
        config: &diffusion,
        layout: &layout,
    };
    std::fs::create_dir_all(out_dir)?;

    // Encode conditioning data files into per-modality latent blocks.
    let mut cond_latents: Vec<(usize, Tensor)> = Vec::new();
    for (name, path) in &args.conditions {
        let m = layout
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("unknown modality {name:?}")))?;
        let c = Container::load(path)?;
        let raw = c.require("data")?;
        let rows = raw.batch_rows();
        if rows != 1 && rows != args.count {
            return Err(Error::Config(format!(
                "conditioning file {} has {rows} rows; need 1 or count={}",
                path.display(),
                args.count
            )));
        }
        let (pair, norm) = &encoders[m];
        let z = mmld::autoencoder::encode(pair, norm, raw)?;
        cond_latents.push((m, z));
    }
    cond_latents.sort_by_key(|&(m, _)| m);

    let joint = if cond_latents.is_empty() {
        joint_generate(&diffusion, &sampler, &score, &layout, args.count)?
    } else {
        let cond_idx: Vec<usize> = cond_latents.iter().map(|&(m, _)| m).collect();
        let partition = SubsetPartition::from_conditioning(layout.n_modalities(), &cond_idx)?;
        let blocks: Vec<(usize, &Tensor)> = cond_latents.iter().map(|(m, t)| (*m, t)).collect();
        let generated = match args.method {
            SampleMethod::Multitime => conditional_generate(
                &diffusion, &sampler, &score, &layout, &partition, &blocks, args.count,
            )?,
            SampleMethod::Inpaint => inpaint_conditional_generate(
                &diffusion, &sampler, &score, &layout, &partition, &blocks, args.count,
            )?,
        };
        // Compose generated blocks and the clean conditioning latents into a
        // full joint latent per sample.
        let mut joint = Tensor::zeros(vec![args.count, layout.total_dim()]);
        for i in 0..args.count {
            let mut at = 0;
            for &m in partition.generated() {
                let r = layout.block_range(m);
                joint.row_mut(i)[r.clone()].copy_from_slice(&generated.row(i)[at..at + r.len()]);
                at += r.len();
            }
            for (m, z) in &cond_latents {
                let r = layout.block_range(*m);
                let src = if z.batch_rows() == 1 {
                    z.row(0)
                } else {
                    z.row(i)
                };
                joint.row_mut(i)[r].copy_from_slice(src);
            }
        }
        joint
    };

    let mut out = Container::new();
    out.insert("latents", joint.clone())?;
    let decoded = decode_joint(&layout, &encoders, &joint)?;
    for (spec, d) in layout.specs().iter().zip(&decoded) {
        out.insert(format!("decoded.{}", spec.name), d.clone())?;
    }
    out.save(out_dir.join("samples.bin"))?;
    if args.csv {
        let mut csv = String::new();
        csv.push_str("sample");
        for spec in layout.specs() {
            for k in 0..spec.latent_dim {
                write!(csv, ",z.{}.{k}", spec.name).unwrap();
            }
        }
        for spec in layout.specs() {
            for k in 0..spec.data_dim {
                write!(csv, ",x.{}.{k}", spec.name).unwrap();
            }
        }
        csv.push('\n');
        for i in 0..args.count {
            write!(csv, "{i}").unwrap();
            for v in joint.row(i) {
                write!(csv, ",{v}").unwrap();
            }
            for d in &decoded {
                for v in d.row(i) {
                    write!(csv, ",{v}").unwrap();
                }
            }
            csv.push('\n');
        }
        std::fs::write(out_dir.join("samples.csv"), csv)?;
    }
    if args.pgm {
        for (spec, d) in layout.specs().iter().zip(&decoded) {
            if spec.data_dim == 2 {
                let pgm = crate::pgm::scatter_pgm(d, 128, 4.0);
                std::fs::write(out_dir.join(format!("scatter_{}.pgm", spec.name)), pgm)?;
            }
        }
    }
    println!(
        "wrote {} samples ({} method{}) to {}",
        args.count,
        match args.method {
            SampleMethod::Multitime => "multitime",
            SampleMethod::Inpaint => "inpaint",
        },
        if args.repaint {
            ", repaint schedule"
        } else {
            ""
        },
        out_dir.join("samples.bin").display()
    );
    Ok(())
}

pub struct MetricRow {
    pub metric: String,
    pub modality: String,
    pub condition_set: String,
    pub value: f64,
    pub n_samples: usize,
    pub seed: u64,
}

pub fn write_metric_csv(path: &Path, rows: &[MetricRow], d_column: Option<f64>) -> Result<()> {
    let mut csv = String::new();
    if d_column.is_some() {
        csv.push_str("d,");
    }
    csv.push_str("metric,modality,condition_set,value,n_samples,seed\n");
    for r in rows {
        if let Some(d) = d_column {
            write!(csv, "{d},").unwrap();
        }
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.metric, r.modality, r.condition_set, r.value, r.n_samples, r.seed
        )
        .unwrap();
    }
    std::fs::write(path, csv)?;
    Ok(())
}

fn append_metric_csv(path: &Path, rows: &[MetricRow], d: f64) -> Result<()> {
    let mut csv = if path.exists() {
        std::fs::read_to_string(path)?
    } else {
        String::from("d,metric,modality,condition_set,value,n_samples,seed\n")
    };
    for r in rows {
        writeln!(
            csv,
            "{d},{},{},{},{},{},{}",
            r.metric, r.modality, r.condition_set, r.value, r.n_samples, r.seed
        )
        .unwrap();
    }
    std::fs::write(path, csv)?;
    Ok(())
}

/// Train per-modality classifiers on the raw dataset.
pub fn train_eval_classifiers(
    cfg: &RunConfig,
    ds: &MultiModalDataset,
) -> Result<Vec<TinyClassifier>> {
    let opts = ClassifierTrainOptions {
        hidden: cfg.eval.classifier_hidden.clone(),
        epochs: cfg.eval.classifier_epochs,
        lr: cfg.eval.classifier_lr,
        batch_size: 64,
        seed: cfg.seed.wrapping_add(SEED_EVAL),
    };
    ds.modalities
        .iter()
        .map(|m| Ok(train_classifier(m, &ds.labels, ds.n_classes, &opts)?.classifier))
        .collect()
}

/// Joint + conditional coherence and joint Fréchet rows for one trained
/// score bundle.
pub fn coherence_and_quality_rows(
    cfg: &RunConfig,
    ds: &MultiModalDataset,
    layout: &ModalityLayout,
    encoders: &[(AutoencoderPair, LatentNormalizer)],
    classifiers: &[TinyClassifier],
    net: &mmld::score::ScoreNetwork,
    seed: u64,
) -> Result<Vec<MetricRow>> {
    let diffusion = cfg.diffusion_config(None);
    let n_gen = cfg.eval.n_generate.min(ds.len());
    let score = NetworkScore {
        net,
        config: &diffusion,
        layout,
    };
    let mut rows = Vec::new();

    // joint generation: coherence across all modalities + FMD per modality
    let sampler = cfg.sampler_config(false, seed);
    let joint = joint_generate(&diffusion, &sampler, &score, layout, n_gen)?;
    let decoded = decode_joint(layout, encoders, &joint)?;
    rows.push(MetricRow {
        metric: "joint_coherence".into(),
        modality: "all".into(),
        condition_set: "none".into(),
        value: joint_coherence(classifiers, &decoded)?,
        n_samples: n_gen,
        seed,
    });
    for (m, spec) in layout.specs().iter().enumerate() {
        let real = classifiers[m].embed(&ds.modalities[m])?;
        let fake = classifiers[m].embed(&decoded[m])?;
        let fmd = frechet_distance(
            &GaussianStats::from_samples(&real)?,
            &GaussianStats::from_samples(&fake)?,
        )?;
        rows.push(MetricRow {
            metric: "frechet".into(),
            modality: spec.name.clone(),
            condition_set: "none".into(),
            value: fmd,
            n_samples: n_gen,
            seed,
        });
    }

    // conditional coherence for every nonempty proper conditioning subset
    let m_count = layout.n_modalities();
    let eval_rows: Vec<usize> = (0..n_gen).collect();
    let labels: Vec<usize> = eval_rows.iter().map(|&i| ds.labels[i]).collect();
    for pattern in 1..(1usize << m_count) - 1 {
        let cond_idx: Vec<usize> = (0..m_count).filter(|i| pattern >> i & 1 == 1).collect();
        let partition = SubsetPartition::from_conditioning(m_count, &cond_idx)?;
        let mut blocks = Vec::new();
        for &m in &cond_idx {
            let data = ds.gather(&eval_rows)?.swap_remove(m);
            let (pair, norm) = &encoders[m];
            blocks.push((m, mmld::autoencoder::encode(pair, norm, &data)?));
        }
        let block_refs: Vec<(usize, &Tensor)> = blocks.iter().map(|(m, t)| (*m, t)).collect();
        let cond_name = cond_idx
            .iter()
            .map(|&m| layout.specs()[m].name.clone())
            .collect::<Vec<_>>()
            .join("+");
        let sampler = cfg.sampler_config(false, seed.wrapping_add(pattern as u64));
        let generated = conditional_generate(
            &diffusion,
            &sampler,
            &score,
            layout,
            &partition,
            &block_refs,
            n_gen,
        )?;
        for (m, dec) in decode_generated(layout, &partition, encoders, &generated)? {
            rows.push(MetricRow {
                metric: "conditional_coherence".into(),
                modality: layout.specs()[m].name.clone(),
                condition_set: cond_name.clone(),
                value: conditional_coherence(&classifiers[m], &dec, &labels)?,
                n_samples: n_gen,
                seed,
            });
        }
    }
    Ok(rows)
}

pub fn cmd_eval(
    cfg: &RunConfig,
    ae_dir: &Path,
    score_path: &Path,
    data: &Path,
    out_dir: &Path,
) -> Result<()> {
    let ds = load_dataset(data)?;
    let bundles = load_autoencoders(ae_dir)?;
    let layout = layout_of(&bundles)?;
    let encoders = encoders_of(&bundles);
    let score_bundle = score_from_container(&Container::load(score_path)?)?;
    let net = score_bundle.ema_network()?;
    std::fs::create_dir_all(out_dir)?;
    let seed = cfg.seed.wrapping_add(SEED_EVAL);
    let classifiers = train_eval_classifiers(cfg, &ds)?;
    let mut rows =
        coherence_and_quality_rows(cfg, &ds, &layout, &encoders, &classifiers, &net, seed)?;

    // robustness of each modality's latent to forward diffusion
    let diffusion = cfg.diffusion_config(None);
    let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(1));
    let scan = robustness_scan(
        &diffusion,
        &encoders,
        &classifiers,
        &ds.modalities,
        &ds.labels,
        &cfg.eval.robustness_grid,
        &mut rng,
    )?;
    for (m, curve) in scan.per_modality.iter().enumerate() {
        for (t, v) in scan.t_grid.iter().zip(curve) {
            rows.push(MetricRow {
                metric: "robustness".into(),
                modality: layout.specs()[m].name.clone(),
                condition_set: format!("t={t}"),
                value: *v,
                n_samples: ds.len(),
                seed,
            });
        }
    }
    write_metric_csv(&out_dir.join("metrics.csv"), &rows, None)?;
    for r in &rows {
        if r.metric != "robustness" {
            println!(
                "{} {} | {} = {:.2}",
                r.metric, r.modality, r.condition_set, r.value
            );
        }
    }
    println!("wrote {}", out_dir.join("metrics.csv").display());
    Ok(())
}

pub fn cmd_ablate_d(
    cfg: &RunConfig,
    data: &Path,
    ae_dir: &Path,
    d_list: &[f64],
    out_dir: &Path,
) -> Result<()> {
    if d_list.is_empty() {
        return Err(Error::Config("d-list must not be empty".into()));
    }
    for &d in d_list {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::Config(format!("d={d} outside [0,1]")));
        }
    }
    let ds = load_dataset(data)?;
    let bundles = load_autoencoders(ae_dir)?;
    let layout = layout_of(&bundles)?;
    let encoders = encoders_of(&bundles);
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("ablate_d.csv");
    if csv_path.exists() {
        std::fs::remove_file(&csv_path)?;
    }
    let classifiers = train_eval_classifiers(cfg, &ds)?;
    for &d in d_list {
        let diffusion = cfg.diffusion_config(Some(d));
        let opts = ScoreTrainOptions {
            net: cfg.score_net_config(),
            steps: cfg.score.steps,
            batch_size: cfg.score.batch_size,
            lr: cfg.score.lr,
            ema_momentum: cfg.score.ema_momentum,
            seed: cfg.seed.wrapping_add(SEED_TRAIN_SCORE),
            mode: TrainMode::Multitime,
        };
        let (trainer, _) = run_stage_two(&diffusion, &layout, &encoders, &ds, &opts)?;
        let net = trainer.ema_network();
        // evaluate with the ablated d in place so conditional sampling sees
        // the same schedule the net was trained under
        let mut eval_cfg = cfg.clone();
        eval_cfg.diffusion.d = d;
        let rows = coherence_and_quality_rows(
            &eval_cfg,
            &ds,
            &layout,
            &encoders,
            &classifiers,
            &net,
            cfg.seed.wrapping_add(SEED_EVAL),
        )?;
        append_metric_csv(&csv_path, &rows, d)?;
        let joint = rows
            .iter()
            .find(|r| r.metric == "joint_coherence")
            .map(|r| r.value)
            .unwrap_or(f64::NAN);
        println!("d={d}: joint coherence {joint:.2}");
    }
    println!("wrote {}", csv_path.display());
    Ok(())
}
