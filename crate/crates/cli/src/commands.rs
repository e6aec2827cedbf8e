//! Subcommand bodies. Each reads its inputs, writes under `cfg.out`, and
//! reports progress on stderr.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sssd_ecg::analysis::{
    beat_quantiles, detect_r_peaks, emit_band_plot, emit_trace_plot, interpolate_conditions, segment_beats,
    BandGrid, BeatMatrix, InterpolationRequest,
};
use sssd_ecg::checkpoint::{load_checkpoint, read_checkpoint_meta, restore_into, save_checkpoint};
use sssd_ecg::data::{load_dataset, make_toy_corpus, save_dataset, Dataset, LabelVector, LabelVocabulary, LEADS_12};
use sssd_ecg::diffusion::ScheduleConfig;
use sssd_ecg::eval::three_way_protocol;
use sssd_ecg::gan::{train_gan, GanConfig, GanModel, GanTrainConfig};
use sssd_ecg::leads::{check_lead_consistency, reconstruct_12_leads, EightLeadFrame};
use sssd_ecg::model::{generate_dataset_copy, train_sssd, CachedSssd, GenerateOptions, SssdEcg, SssdEcgConfig};
use sssd_ecg::rng::{self, derive_seed};
use sssd_ecg::s4::S4Config;

use crate::config::{ExperimentConfig, ModelKind};

/// Sub-streams of the global seed.
const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;
const SHUFFLE_STREAM: u64 = 4;

const CACHE_ENV: &str = "SSSD_ECG_CACHE";

/// Architecture recorded next to every checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointInfo {
    model_kind: ModelKind,
    model: SssdEcgConfig,
    s4: S4Config,
    diffusion: ScheduleConfig,
    gan: GanConfig,
}

/// Replaces the architecture sections of `cfg` with those the checkpoint
/// was trained with. An explicit `--model` that disagrees is an error.
pub fn adopt_checkpoint(cfg: &mut ExperimentConfig, explicit_model: bool) -> Result<()> {
    let Some(path) = &cfg.generate.checkpoint else {
        return Ok(());
    };
    let meta = read_checkpoint_meta(path).with_context(|| format!("checkpoint {}", path.display()))?;
    let info: CheckpointInfo = serde_json::from_value(meta.info)
        .with_context(|| format!("{}: sidecar does not describe a model", path.display()))?;
    if explicit_model && info.model_kind != cfg.model_kind {
        bail!(
            "--model {:?} but checkpoint {} holds {:?}",
            cfg.model_kind,
            path.display(),
            info.model_kind
        );
    }
    cfg.model_kind = info.model_kind;
    cfg.model = info.model;
    cfg.s4 = info.s4;
    cfg.diffusion = info.diffusion;
    cfg.gan = info.gan;
    Ok(())
}

/// Absolute form of an existing path, so a resolved config does not depend
/// on the working directory.
pub fn absolutize(p: &mut PathBuf) {
    if let Ok(abs) = std::fs::canonicalize(&*p) {
        *p = abs;
    }
}

fn inputs(cfg: &ExperimentConfig) -> Vec<&Path> {
    let mut v: Vec<&Path> = Vec::new();
    v.extend(cfg.data.corpus.as_deref());
    v.extend(cfg.evaluate.synthetic.as_deref());
    v.extend(cfg.analysis.datasets.values().map(PathBuf::as_path));
    v
}

/// Refuses output directories that are, or lie inside, an input dataset.
pub fn guard_inputs(cfg: &ExperimentConfig) -> Result<()> {
    let out = canonical_prefix(&cfg.out);
    for input in inputs(cfg) {
        let Ok(input_abs) = std::fs::canonicalize(input) else {
            continue;
        };
        ensure!(
            !out.starts_with(&input_abs),
            "output directory {} lies inside input dataset {}",
            cfg.out.display(),
            input.display()
        );
    }
    Ok(())
}

/// Canonical form of the longest existing ancestor, with the rest appended.
fn canonical_prefix(p: &Path) -> PathBuf {
    let p = if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
    };
    let mut rest = Vec::new();
    let mut cur = p.as_path();
    loop {
        if let Ok(c) = std::fs::canonicalize(cur) {
            return rest.iter().rev().fold(c, |acc, part| acc.join(part));
        }
        match (cur.parent(), cur.file_name()) {
            (Some(parent), Some(name)) => {
                rest.push(name.to_owned());
                cur = parent;
            }
            _ => return p,
        }
    }
}

fn toy_corpus(cfg: &ExperimentConfig) -> Result<Dataset> {
    let t = &cfg.toy;
    let Some(cache) = std::env::var_os(CACHE_ENV) else {
        return Ok(make_toy_corpus(t.n_records, t.n_labels, t.length, t.seed)?);
    };
    let dir = PathBuf::from(cache).join(format!("toy-n{}-k{}-l{}-s{}", t.n_records, t.n_labels, t.length, t.seed));
    if dir.is_dir() {
        if let Ok(ds) = load_dataset(&dir, cfg.data.sampling_rate) {
            return Ok(ds);
        }
    }
    let ds = make_toy_corpus(t.n_records, t.n_labels, t.length, t.seed)?;
    // Write to a private directory first so a concurrent reader never sees a
    // partial container.
    let tmp = dir.with_extension(format!("tmp{}", std::process::id()));
    save_dataset(&ds, &tmp).with_context(|| format!("caching toy corpus in {}", tmp.display()))?;
    if std::fs::rename(&tmp, &dir).is_err() {
        let _ = std::fs::remove_dir_all(&tmp);
    }
    Ok(ds)
}

/// The configured corpus, or the toy corpus when none is given.
fn load_corpus(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data.corpus {
        Some(dir) => load_dataset(dir, cfg.data.sampling_rate).with_context(|| format!("loading {}", dir.display())),
        None => toy_corpus(cfg),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn make_toy(cfg: &ExperimentConfig) -> Result<()> {
    let t = &cfg.toy;
    let ds = make_toy_corpus(t.n_records, t.n_labels, t.length, t.seed)?;
    let dir = cfg.out.join("corpus");
    save_dataset(&ds, &dir)?;
    eprintln!("wrote {} records to {}", ds.len(), dir.display());
    Ok(())
}

/// A trained (or freshly initialized) generator of either family.
enum Generator {
    Sssd(Box<SssdEcg<f32>>),
    Gan(Box<GanModel<f32>>),
}

impl Generator {
    fn init(cfg: &ExperimentConfig) -> Result<Self> {
        let seed = derive_seed(cfg.seed, INIT_STREAM);
        Ok(match cfg.model_kind {
            ModelKind::SssdEcg => Generator::Sssd(Box::new(SssdEcg::new(cfg.model.clone(), cfg.s4.clone(), seed)?)),
            _ => Generator::Gan(Box::new(GanModel::new(cfg.gan_config()?, seed)?)),
        })
    }

    /// Checkpoint weights when one is configured, seeded initial weights
    /// otherwise.
    fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let mut g = Self::init(cfg)?;
        if let Some(path) = &cfg.generate.checkpoint {
            let (loaded, _) = load_checkpoint::<f32>(path).with_context(|| format!("checkpoint {}", path.display()))?;
            let store = match &mut g {
                Generator::Sssd(m) => &mut m.store,
                Generator::Gan(m) => &mut m.store,
            };
            restore_into(store, &loaded).with_context(|| format!("checkpoint {}", path.display()))?;
        }
        Ok(g)
    }

    fn generate(
        &self,
        cfg: &ExperimentConfig,
        labels: &[LabelVector],
        folds: Option<&[u8]>,
        vocabulary: &LabelVocabulary,
    ) -> Result<Dataset> {
        let seed = cfg.generation_seed();
        let batch_size = cfg.generate.batch_size;
        Ok(match self {
            Generator::Sssd(m) => {
                let sched = cfg.diffusion.build()?;
                generate_dataset_copy(m, labels, folds, vocabulary, &sched, &GenerateOptions { batch_size, seed })?
            }
            Generator::Gan(m) => m.generate_dataset(labels, folds, vocabulary, seed, batch_size)?,
        })
    }
}

pub fn train(cfg: &ExperimentConfig) -> Result<()> {
    let data = load_corpus(cfg)?;
    let seed = derive_seed(cfg.seed, TRAIN_STREAM);
    let info = CheckpointInfo {
        model_kind: cfg.model_kind,
        model: cfg.model.clone(),
        s4: cfg.s4.clone(),
        diffusion: cfg.diffusion,
        gan: if cfg.model_kind == ModelKind::SssdEcg { cfg.gan } else { cfg.gan_config()? },
    };
    let ckpt = cfg.out.join("model.ckpt");
    let started = std::time::Instant::now();
    match Generator::init(cfg)? {
        Generator::Sssd(mut model) => {
            let sched = cfg.diffusion.build()?;
            let curve = train_sssd(&mut model, &data, &sched, &cfg.train, seed, |step, loss| {
                eprintln!("step {step:>7}  loss {loss:.5}  {:.0}s", started.elapsed().as_secs_f64())
            })?;
            save_checkpoint(&ckpt, &model.store, serde_json::to_value(&info)?)?;
            write_json(&cfg.out.join("training_curve.json"), &curve)?;
        }
        Generator::Gan(mut model) => {
            let n_train = data.split_indices(sssd_ecg::data::Split::Train).len();
            let gan = &model.config;
            let tc = GanTrainConfig {
                steps: gan.epochs * n_train.div_ceil(gan.batch_size),
                batch_size: gan.batch_size,
                lr: gan.lr,
            };
            eprintln!("training {:?} for {} steps", gan.arch, tc.steps);
            let curve = train_gan(&mut model, &data, &tc, seed)?;
            if let (Some(g), Some(d)) = (curve.g_loss.last(), curve.d_loss.last()) {
                eprintln!("final g_loss {g:.5}  d_loss {d:.5}  {:.0}s", started.elapsed().as_secs_f64());
            }
            save_checkpoint(&ckpt, &model.store, serde_json::to_value(&info)?)?;
            write_json(&cfg.out.join("training_curve.json"), &curve)?;
        }
    }
    eprintln!("wrote {}", ckpt.display());
    Ok(())
}

pub fn generate(cfg: &ExperimentConfig) -> Result<()> {
    let vocab = LabelVocabulary::ptbxl();
    let label = vocab.encode(&cfg.generate.labels)?;
    let labels = vec![label; cfg.generate.n];
    let ds = Generator::load(cfg)?.generate(cfg, &labels, None, &vocab)?;
    let dir = cfg.out.join("dataset");
    save_dataset(&ds, &dir)?;
    eprintln!("wrote {} records to {}", ds.len(), dir.display());
    Ok(())
}

pub fn synth_copy(cfg: &ExperimentConfig) -> Result<()> {
    let real = load_corpus(cfg)?;
    let folds: Vec<u8> = real.records.iter().map(|r| r.fold).collect();
    let started = std::time::Instant::now();
    let ds = Generator::load(cfg)?.generate(cfg, &real.labels, Some(&folds), &real.vocabulary)?;
    let dir = cfg.out.join("synthetic");
    save_dataset(&ds, &dir)?;
    eprintln!(
        "wrote {} records to {} in {:.0}s",
        ds.len(),
        dir.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn evaluate(cfg: &ExperimentConfig) -> Result<()> {
    let real = load_corpus(cfg)?;
    let path = cfg
        .evaluate
        .synthetic
        .as_ref()
        .context("evaluate needs a synthetic dataset (--synthetic or evaluate.synthetic)")?;
    let mut synth = load_dataset(path, cfg.data.sampling_rate).with_context(|| format!("loading {}", path.display()))?;
    if cfg.evaluate.shuffle_synthetic_labels {
        synth.labels.shuffle(&mut rng::seeded(derive_seed(cfg.seed, SHUFFLE_STREAM)));
    }
    let table = three_way_protocol(&real, &synth, &cfg.eval, derive_seed(cfg.seed, EVAL_STREAM))?;
    let out = cfg.out.join("metrics.json");
    table.write_json(&out)?;
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |a| format!("{a:.4}"));
    println!("real->real   {}", fmt(table.real_real.macro_auroc));
    println!("real->synth  {}", fmt(table.real_synth.macro_auroc));
    println!("synth->real  {}", fmt(table.synth_real.macro_auroc));
    println!("synth->synth {}", fmt(table.synth_synth.macro_auroc));
    eprintln!("wrote {}", out.display());
    Ok(())
}

/// Pooled beats of the first `max_records` records, one matrix per lead.
fn pooled_beats(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<BeatMatrix>> {
    let mut pooled: Vec<BeatMatrix> = (0..12).map(|lead| BeatMatrix { lead, beats: Vec::new() }).collect();
    for r in ds.records.iter().take(cfg.analysis.max_records) {
        ensure!(r.n_leads == 12, "record {} has {} leads, expected 12", r.record_id, r.n_leads);
        let peaks = detect_r_peaks(&r.lead(cfg.analysis.detection_lead), r.sampling_rate as f64)
            .with_context(|| format!("record {}", r.record_id))?;
        for (acc, m) in pooled.iter_mut().zip(segment_beats(r, &peaks)) {
            acc.beats.extend(m.beats);
        }
    }
    Ok(pooled)
}

pub fn beatplot(cfg: &ExperimentConfig) -> Result<()> {
    let mut sets: BTreeMap<String, Dataset> = BTreeMap::new();
    if !cfg.analysis.datasets.contains_key("real") {
        sets.insert("real".into(), load_corpus(cfg)?);
    }
    for (name, dir) in &cfg.analysis.datasets {
        let ds = load_dataset(dir, cfg.data.sampling_rate).with_context(|| format!("loading {}", dir.display()))?;
        sets.insert(name.clone(), ds);
    }
    let leads: Vec<&str> = cfg.analysis.plot_leads.iter().map(String::as_str).collect();
    let mut grid = BandGrid::new();
    let mut counts = BTreeMap::new();
    for (name, ds) in &sets {
        let pooled = pooled_beats(cfg, ds)?;
        ensure!(!pooled[0].is_empty(), "dataset {name}: no complete beats detected");
        counts.insert(name.clone(), pooled[0].len());
        let mut row = BTreeMap::new();
        for &lead in &leads {
            let idx = LEADS_12.iter().position(|l| *l == lead).context("unknown lead")?;
            row.insert(lead.to_string(), beat_quantiles(&pooled[idx])?);
        }
        grid.insert(name.clone(), row);
    }
    emit_band_plot(&grid, &leads, &cfg.out.join("beats.png"))?;
    emit_band_plot(&grid, &leads, &cfg.out.join("beats.json"))?;
    write_json(&cfg.out.join("beat_counts.json"), &counts)?;
    for (name, n) in &counts {
        eprintln!("{name}: {n} beats");
    }
    Ok(())
}

#[derive(Serialize)]
struct InterpolationOutput<'a> {
    from: &'a [String],
    to: &'a [String],
    alphas: &'a [f64],
    seed: u64,
    /// Lead-major 12-lead samples, one per `α`.
    samples: Vec<Vec<f32>>,
}

pub fn interpolate(cfg: &ExperimentConfig) -> Result<()> {
    let Generator::Sssd(model) = Generator::load(cfg)? else {
        bail!("interpolate needs an sssd-ecg model");
    };
    let vocab = LabelVocabulary::ptbxl();
    let req = InterpolationRequest {
        a: vocab.encode(&cfg.analysis.from)?,
        b: vocab.encode(&cfg.analysis.to)?,
        alphas: cfg.analysis.alphas.clone(),
        seed: cfg.generation_seed(),
    };
    let sched = cfg.diffusion.build()?;
    let cached = CachedSssd::new(&model)?;
    let outs = interpolate_conditions(&cached, &req, &sched, model.config.length)?;
    let mut samples = Vec::with_capacity(outs.len());
    for x in outs {
        let frame = EightLeadFrame::new(x.into_data())?;
        samples.push(reconstruct_12_leads(&frame));
    }
    let len = model.config.length;
    let lead = cfg.analysis.detection_lead;
    let traces: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s[lead * len..(lead + 1) * len].iter().map(|&v| v as f64).collect())
        .collect();
    emit_trace_plot(&traces, &cfg.out.join("interpolation.png"))?;
    write_json(
        &cfg.out.join("interpolation.json"),
        &InterpolationOutput {
            from: &cfg.analysis.from,
            to: &cfg.analysis.to,
            alphas: &req.alphas,
            seed: req.seed,
            samples,
        },
    )?;
    eprintln!("wrote {} interpolation samples", traces.len());
    Ok(())
}

#[derive(Serialize)]
struct LeadReport {
    tolerance: f64,
    n_records: usize,
    max_residual: f64,
    inconsistent: Vec<String>,
}

pub fn leadcheck(cfg: &ExperimentConfig, tolerance: f64) -> Result<()> {
    ensure!(tolerance >= 0.0, "tolerance must be non-negative");
    let ds = load_corpus(cfg)?;
    let mut report = LeadReport {
        tolerance,
        n_records: ds.len(),
        max_residual: 0.0,
        inconsistent: Vec::new(),
    };
    for r in &ds.records {
        let c = check_lead_consistency(&r.lead_major(), tolerance).with_context(|| format!("record {}", r.record_id))?;
        report.max_residual = report.max_residual.max(c.max_residual);
        if !c.consistent {
            report.inconsistent.push(r.record_id.clone());
        }
    }
    write_json(&cfg.out.join("leadcheck.json"), &report)?;
    println!(
        "{} records, max residual {:.3e}, {} inconsistent",
        report.n_records,
        report.max_residual,
        report.inconsistent.len()
    );
    ensure!(
        report.inconsistent.is_empty(),
        "{} records violate the limb-lead identities",
        report.inconsistent.len()
    );
    Ok(())
}
