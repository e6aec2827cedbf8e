//! Experiment configuration: built-in profile, then the JSON file laid over
//! it key by key, then command-line overrides. The merged result is what
//! every run writes to `config.resolved.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sssd_ecg::data::{ToyConfig, SAMPLING_RATE};
use sssd_ecg::diffusion::ScheduleConfig;
use sssd_ecg::eval::ClassifierConfig;
use sssd_ecg::gan::{GanArch, GanConfig};
use sssd_ecg::model::{SssdEcgConfig, TrainConfig};
use sssd_ecg::s4::S4Config;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    SssdEcg,
    Wavegan,
    Pulse2pulse,
}

impl ModelKind {
    pub fn gan_arch(self) -> Option<GanArch> {
        match self {
            ModelKind::SssdEcg => None,
            ModelKind::Wavegan => Some(GanArch::WaveGan),
            ModelKind::Pulse2pulse => Some(GanArch::Pulse2Pulse),
        }
    }
}

/// Dataset locations. A missing `corpus` means the toy corpus of the `toy`
/// section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub corpus: Option<PathBuf>,
    pub sampling_rate: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    /// Trained weights; `None` samples from the seeded initialization.
    pub checkpoint: Option<PathBuf>,
    /// Statement codes shared by every generated record.
    pub labels: Vec<String>,
    pub n: usize,
    /// Records per sampler call.
    pub batch_size: usize,
    /// Alternative seed for generation only; `None` uses the global seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub synthetic: Option<PathBuf>,
    /// Permutes the synthetic label vectors across records before training
    /// (negative control).
    pub shuffle_synthetic_labels: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Named datasets compared in the beat figure.
    pub datasets: BTreeMap<String, PathBuf>,
    /// Lead used for R-peak detection (12-lead index; 1 is lead II).
    pub detection_lead: usize,
    /// Records per dataset that enter the beat quantiles.
    pub max_records: usize,
    /// Leads drawn in the beat figure.
    pub plot_leads: Vec<String>,
    pub alphas: Vec<f64>,
    /// Interpolation endpoints as statement codes (`α = 1` gives `from`).
    pub from: Vec<String>,
    pub to: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
    pub model_kind: ModelKind,
    pub desk_scale: bool,
    pub data: DataSection,
    pub toy: ToyConfig,
    pub diffusion: ScheduleConfig,
    pub s4: S4Config,
    pub model: SssdEcgConfig,
    pub train: TrainConfig,
    pub gan: GanConfig,
    pub eval: ClassifierConfig,
    pub generate: GenerateSection,
    pub evaluate: EvaluateSection,
    pub analysis: AnalysisSection,
}

impl ExperimentConfig {
    /// Full-size settings.
    pub fn reference() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            workers: 0,
            model_kind: ModelKind::SssdEcg,
            desk_scale: false,
            data: DataSection {
                corpus: None,
                sampling_rate: SAMPLING_RATE,
            },
            toy: ToyConfig::default(),
            diffusion: ScheduleConfig::default(),
            s4: S4Config::default(),
            model: SssdEcgConfig::default(),
            train: TrainConfig::default(),
            gan: GanConfig::wavegan(),
            eval: ClassifierConfig::full(),
            generate: GenerateSection {
                checkpoint: None,
                labels: vec!["NORM".into()],
                n: 1,
                batch_size: 16,
                seed: None,
            },
            evaluate: EvaluateSection {
                synthetic: None,
                shuffle_synthetic_labels: false,
            },
            analysis: AnalysisSection {
                datasets: BTreeMap::new(),
                detection_lead: 1,
                max_records: 250,
                plot_leads: ["I", "II", "V1", "V2", "V5", "V6"].map(String::from).to_vec(),
                alphas: sssd_ecg::analysis::DEFAULT_ALPHAS.to_vec(),
                from: vec!["LVH".into()],
                to: vec!["STACH".into()],
            },
        }
    }

    /// Reduced profile that trains on one CPU core in under four hours.
    ///
    /// Fifty diffusion steps with `β_T = 0.08` keep `Σβ` (and so the
    /// terminal `ᾱ`) close to the 200-step reference schedule.
    pub fn desk() -> Self {
        let mut c = Self::reference();
        c.desk_scale = true;
        c.diffusion = ScheduleConfig {
            steps: 50,
            beta_start: 1e-4,
            beta_end: 0.08,
        };
        c.s4.state_size = 32;
        c.model.n_residual_layers = 2;
        c.model.residual_channels = 64;
        c.model.skip_channels = 64;
        c.train = TrainConfig {
            steps: 14_000,
            batch_size: 8,
            lr: 1e-3,
            clip_norm: Some(1.0),
            lr_final: Some(1e-5),
            log_every: 100,
        };
        c.gan = GanConfig {
            model_size: 8,
            latent_dim: 100,
            batch_size: 16,
            epochs: 20,
            ..GanConfig::wavegan()
        };
        c.eval = ClassifierConfig::desk();
        c.generate.batch_size = 25;
        c
    }

    pub fn base(desk: bool) -> Self {
        if desk {
            Self::desk()
        } else {
            Self::reference()
        }
    }

    /// Base profile with `file` merged over it. Keys absent from the base
    /// (misspellings included) fail deserialization.
    pub fn resolve(desk: bool, file: Option<&Path>) -> Result<Self> {
        let mut merged = serde_json::to_value(Self::base(desk))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let overlay: Value =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            ensure!(overlay.is_object(), "{}: top level must be an object", path.display());
            // A resolved config carries its own profile flag.
            if let Some(d) = overlay.get("desk_scale").and_then(Value::as_bool) {
                if d != desk {
                    merged = serde_json::to_value(Self::base(d))?;
                }
            }
            merge(&mut merged, overlay);
        }
        let cfg: Self = serde_json::from_value(merged).context("invalid configuration")?;
        Ok(cfg)
    }

    pub fn gan_config(&self) -> Result<GanConfig> {
        let arch = self
            .model_kind
            .gan_arch()
            .context("model_kind is not a GAN")?;
        Ok(GanConfig {
            arch,
            n_labels: self.model.n_labels,
            length: self.model.length,
            ..self.gan.clone()
        })
    }

    pub fn generation_seed(&self) -> u64 {
        self.generate.seed.unwrap_or(self.seed)
    }

    /// Checks every section before any computation starts.
    pub fn validate(&self) -> Result<()> {
        self.toy.validate()?;
        self.diffusion.build()?;
        self.s4.validate()?;
        self.model.validate()?;
        self.eval.validate()?;
        if self.model_kind.gan_arch().is_some() {
            self.gan_config()?.validate()?;
        }
        ensure!(self.train.steps > 0 && self.train.batch_size > 0, "train.steps and train.batch_size must be positive");
        ensure!(self.train.lr > 0.0, "train.lr must be positive");
        ensure!(self.generate.batch_size > 0, "generate.batch_size must be positive");
        ensure!(self.generate.n > 0, "generate.n must be positive");
        ensure!(self.data.sampling_rate > 0, "data.sampling_rate must be positive");
        ensure!(self.analysis.detection_lead < 12, "analysis.detection_lead must index one of 12 leads");
        ensure!(self.analysis.max_records > 0, "analysis.max_records must be positive");
        for lead in &self.analysis.plot_leads {
            if !sssd_ecg::data::LEADS_12.contains(&lead.as_str()) {
                bail!("analysis.plot_leads: unknown lead {lead}");
            }
        }
        if let Some(a) = self.analysis.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            bail!("analysis.alphas: {a} outside [0, 1]");
        }
        if self.data.corpus.is_none() && self.toy.length != self.model.length {
            bail!(
                "toy.length {} differs from model.length {}",
                self.toy.length,
                self.model.length
            );
        }
        Ok(())
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("config.resolved.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }
}

/// Overlays `src` on `dst`: objects merge per key, everything else replaces.
fn merge(dst: &mut Value, src: Value) {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                match d.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        d.insert(k, v);
                    }
                }
            }
        }
        (d, s) => *d = s,
    }
}
