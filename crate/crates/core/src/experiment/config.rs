//! Experiment configuration (versioned JSON).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::DEFAULT_MARKER;
use crate::error::{Error, Result};
use crate::eval::Smoothing;
use crate::gan::GanSpec;
use crate::lm::FuseSpec;
use crate::nmt::{FineTuneSpec, ModelConfig, TrainSpec};
use crate::synth::NoiseSpec;
use crate::tensor::AdamConfig;
use crate::toyworld::ToyWorldSpec;

pub const CONFIG_VERSION: u32 = 1;

/// How in-domain pseudo-parallel data is obtained and used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scheme {
    Baseline,
    Backtrans,
    Fwdtrans,
    Backfwdtrans,
    Copy,
    CopyMarked,
    CopyDummies,
    Noise { base: Box<Scheme> },
    Gan { base: Box<Scheme> },
    DeepFusion { base: Box<Scheme> },
}

/// How the final translation model is trained after the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Training {
    None,
    FineTune,
    Gan,
}

impl Scheme {
    pub fn noise(base: Scheme) -> Self {
        Scheme::Noise { base: Box::new(base) }
    }

    pub fn gan(base: Scheme) -> Self {
        Scheme::Gan { base: Box::new(base) }
    }

    pub fn deep_fusion(base: Scheme) -> Self {
        Scheme::DeepFusion { base: Box::new(base) }
    }

    fn is_plain_synthetic(&self) -> bool {
        matches!(
            self,
            Scheme::Backtrans | Scheme::Fwdtrans | Scheme::Backfwdtrans | Scheme::Copy | Scheme::CopyMarked | Scheme::CopyDummies
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} in scheme {self}")));
        match self {
            Scheme::Noise { base } if !base.is_plain_synthetic() => bad("noise needs a synthetic base"),
            Scheme::Gan { base } if !(base.is_plain_synthetic() || matches!(**base, Scheme::Noise { .. })) => {
                bad("gan needs a synthetic base")
            }
            Scheme::DeepFusion { base } if matches!(**base, Scheme::DeepFusion { .. }) => bad("nested deep-fusion"),
            Scheme::Noise { base } | Scheme::Gan { base } | Scheme::DeepFusion { base } => base.validate(),
            _ => Ok(()),
        }
    }

    /// The part of the scheme that produces pseudo-parallel data.
    pub(crate) fn synthetic(&self) -> Option<&Scheme> {
        match self {
            Scheme::Baseline => None,
            Scheme::Gan { base } | Scheme::DeepFusion { base } => base.synthetic(),
            s => Some(s),
        }
    }

    pub(crate) fn training(&self) -> Training {
        match self {
            Scheme::Baseline => Training::None,
            Scheme::Gan { .. } => Training::Gan,
            Scheme::DeepFusion { base } => base.training(),
            _ => Training::FineTune,
        }
    }

    pub(crate) fn fusion(&self) -> bool {
        matches!(self, Scheme::DeepFusion { .. })
    }

    pub(crate) fn uses_back_translation(&self) -> bool {
        match self {
            Scheme::Backtrans | Scheme::Backfwdtrans => true,
            Scheme::Noise { base } | Scheme::Gan { base } | Scheme::DeepFusion { base } => base.uses_back_translation(),
            _ => false,
        }
    }

    /// Whether synthesis translates with the baseline model.
    pub(crate) fn uses_forward_model(&self) -> bool {
        match self {
            Scheme::Fwdtrans | Scheme::Backfwdtrans => true,
            Scheme::Noise { base } | Scheme::Gan { base } | Scheme::DeepFusion { base } => base.uses_forward_model(),
            _ => false,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Baseline => f.write_str("baseline"),
            Scheme::Backtrans => f.write_str("backtrans"),
            Scheme::Fwdtrans => f.write_str("fwdtrans"),
            Scheme::Backfwdtrans => f.write_str("backfwdtrans"),
            Scheme::Copy => f.write_str("copy"),
            Scheme::CopyMarked => f.write_str("copy-marked"),
            Scheme::CopyDummies => f.write_str("copy-dummies"),
            Scheme::Noise { base } => write!(f, "{base}+noise"),
            Scheme::Gan { base } => write!(f, "{base}+gan"),
            Scheme::DeepFusion { base } if **base == Scheme::Baseline => f.write_str("deep-fusion"),
            Scheme::DeepFusion { base } => write!(f, "{base}+deep-fusion"),
        }
    }
}

/// Parses names such as `copy-marked+noise+gan` or `deep-fusion`.
impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('+').map(str::trim);
        let head = parts.next().unwrap_or_default();
        let mut scheme = match head {
            "baseline" => Scheme::Baseline,
            "backtrans" => Scheme::Backtrans,
            "fwdtrans" => Scheme::Fwdtrans,
            "backfwdtrans" => Scheme::Backfwdtrans,
            "copy" => Scheme::Copy,
            "copy-marked" => Scheme::CopyMarked,
            "copy-dummies" => Scheme::CopyDummies,
            "deep-fusion" => Scheme::deep_fusion(Scheme::Baseline),
            other => return Err(Error::Config(format!("unknown scheme {other:?}"))),
        };
        for m in parts {
            scheme = match m {
                "noise" => Scheme::noise(scheme),
                "gan" | "gans" => Scheme::gan(scheme),
                "deep-fusion" => Scheme::deep_fusion(scheme),
                other => return Err(Error::Config(format!("unknown scheme modifier {other:?}"))),
            };
        }
        scheme.validate()?;
        Ok(scheme)
    }
}

/// Input files of a run. Relative paths are resolved against the
/// configuration file's directory by [`ExperimentConfig::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataFiles {
    /// Out-of-domain natural parallel training data (TSV).
    pub out_train: PathBuf,
    pub out_dev: PathBuf,
    pub out_test: Option<PathBuf>,
    /// In-domain monolingual target sentences.
    pub in_mono: PathBuf,
    /// In-domain monolingual source sentences (forward translation).
    pub in_src_mono: Option<PathBuf>,
    pub in_dev: PathBuf,
    pub in_test: PathBuf,
    /// Rule-based target→source translator (JSON) for back-translation.
    pub bt_rules: Option<PathBuf>,
}

impl DataFiles {
    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        let mut v = vec![&mut self.out_train, &mut self.out_dev, &mut self.in_mono, &mut self.in_dev, &mut self.in_test];
        v.extend(self.out_test.as_mut());
        v.extend(self.in_src_mono.as_mut());
        v.extend(self.bt_rules.as_mut());
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSpec {
    Toyworld { spec: ToyWorldSpec },
    Files(DataFiles),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BtQuality {
    /// The rule-based translator as is.
    Good,
    /// The rule-based translator with a share of output words replaced by UNK.
    Bad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BtSpec {
    pub quality: BtQuality,
    pub error_rate: f64,
}

impl Default for BtSpec {
    fn default() -> Self {
        BtSpec {
            quality: BtQuality::Good,
            error_rate: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Selection {
    None,
    Random { budget: usize },
    Monotonic {
        budget: usize,
        #[serde(default = "default_ibm1_iterations")]
        ibm1_iterations: usize,
    },
}

fn default_ibm1_iterations() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TuneOn {
    /// Out-of-domain natural parallel data.
    OutDomain,
    /// The scheme's in-domain pseudo-parallel data.
    Pseudo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionSection {
    pub lm_train: TrainSpec,
    pub tune: TrainSpec,
    pub fuse: FuseSpec,
    pub tune_on: TuneOn,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection {
            lm_train: TrainSpec::default(),
            tune: TrainSpec {
                max_updates: 500,
                ..TrainSpec::default()
            },
            fuse: FuseSpec::default(),
            tune_on: TuneOn::OutDomain,
        }
    }
}

/// Model dimensions (vocabulary sizes come from the data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attention_dim: usize,
    pub max_len: usize,
    pub init_scale: f64,
}

impl Default for ModelDims {
    fn default() -> Self {
        let c = ModelConfig::new(0, 0);
        ModelDims {
            embed_dim: c.embed_dim,
            hidden_dim: c.hidden_dim,
            attention_dim: c.attention_dim,
            max_len: c.max_len,
            init_scale: c.init_scale,
        }
    }
}

impl ModelDims {
    pub fn config(&self, src_vocab_size: usize, tgt_vocab_size: usize) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            attention_dim: self.attention_dim,
            max_len: self.max_len,
            init_scale: self.init_scale,
            ..ModelConfig::new(src_vocab_size, tgt_vocab_size)
        }
    }
}

/// A full pipeline run. The `seed` fields inside the nested training specs
/// are ignored: every stage derives its seed from `seed` and its name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub data: DataSpec,
    pub scheme: Scheme,
    pub marker: String,
    pub model: ModelDims,
    pub train: TrainSpec,
    pub finetune: TrainSpec,
    pub finetune_options: FineTuneSpec,
    pub noise: NoiseSpec,
    pub bt: BtSpec,
    pub gan: GanSpec,
    pub fusion: FusionSection,
    pub selection: Selection,
    pub beam: usize,
    pub smoothing: Smoothing,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            seed: 1,
            data: DataSpec::Toyworld {
                spec: ToyWorldSpec::default(),
            },
            scheme: Scheme::Baseline,
            marker: DEFAULT_MARKER.to_string(),
            model: ModelDims::default(),
            train: TrainSpec::default(),
            finetune: TrainSpec {
                max_updates: 1000,
                ..TrainSpec::default()
            },
            finetune_options: FineTuneSpec::default(),
            noise: NoiseSpec::default(),
            bt: BtSpec::default(),
            gan: GanSpec::default(),
            fusion: FusionSection::default(),
            selection: Selection::None,
            beam: 3,
            smoothing: Smoothing::None,
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale settings on the default toy world.
    pub fn toy(scheme: Scheme, seed: u64) -> Self {
        let adam = AdamConfig {
            lr: 0.005,
            ..AdamConfig::default()
        };
        let train = TrainSpec {
            adam,
            batch_size: 32,
            validation_interval: 200,
            patience: 4,
            max_updates: 2000,
            ..TrainSpec::default()
        };
        ExperimentConfig {
            seed,
            scheme,
            model: ModelDims {
                embed_dim: 24,
                hidden_dim: 48,
                attention_dim: 32,
                max_len: 50,
                init_scale: 0.25,
            },
            finetune: TrainSpec {
                max_updates: 1000,
                validation_interval: 100,
                ..train.clone()
            },
            gan: GanSpec {
                pretrain_updates: 200,
                disc_hidden: 32,
                ..GanSpec::default()
            },
            fusion: FusionSection {
                lm_train: TrainSpec {
                    max_updates: 1500,
                    ..train.clone()
                },
                tune: TrainSpec {
                    max_updates: 500,
                    validation_interval: 100,
                    ..train.clone()
                },
                ..FusionSection::default()
            },
            train,
            ..ExperimentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version)));
        }
        self.scheme.validate()?;
        self.model.config(4, 4).validate()?;
        self.noise.validate()?;
        self.gan.validate()?;
        if self.beam == 0 {
            return Err(Error::Config("beam must be at least 1".into()));
        }
        if let DataSpec::Files(f) = &self.data {
            let mut f = f.clone();
            for p in f.paths_mut() {
                if !p.exists() {
                    return Err(Error::Config(format!("missing data file {}", p.display())));
                }
            }
            let needs_src = self.scheme.uses_forward_model();
            if needs_src && f.in_src_mono.is_none() {
                return Err(Error::Config(format!("scheme {} needs data.in_src_mono", self.scheme)));
            }
            if self.scheme.uses_back_translation() && f.bt_rules.is_none() {
                return Err(Error::Config(format!("scheme {} needs data.bt_rules", self.scheme)));
            }
        }
        if let DataSpec::Toyworld { spec } = &self.data {
            spec.validate()?;
        }
        Ok(())
    }

    /// Reads and validates a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c: ExperimentConfig = serde_json::from_str(&text)?;
        if let DataSpec::Files(f) = &mut c.data {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in f.paths_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_names_round_trip() {
        for s in [
            "baseline",
            "backtrans",
            "backfwdtrans",
            "copy-dummies",
            "copy-marked+noise",
            "copy-marked+noise+gan",
            "deep-fusion",
            "copy-marked+noise+gan+deep-fusion",
        ] {
            let parsed: Scheme = s.parse().unwrap();
            assert_eq!(parsed.to_string(), s);
        }
        assert!("baseline+noise".parse::<Scheme>().is_err());
        assert!("baseline+gan".parse::<Scheme>().is_err());
        assert!("copy+zap".parse::<Scheme>().is_err());
    }

    #[test]
    fn scheme_shape() {
        let s: Scheme = "copy-marked+noise+gan+deep-fusion".parse().unwrap();
        assert_eq!(s.synthetic().unwrap().to_string(), "copy-marked+noise");
        assert_eq!(s.training(), Training::Gan);
        assert!(s.fusion());
        assert_eq!(Scheme::Baseline.synthetic(), None);
        assert!("backfwdtrans".parse::<Scheme>().unwrap().uses_forward_model());
    }

    #[test]
    fn config_json_round_trip_and_hash() {
        let c = ExperimentConfig::toy("copy-marked+noise+gan".parse().unwrap(), 3);
        let back: ExperimentConfig = serde_json::from_str(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
        let other = ExperimentConfig { seed: 4, ..c.clone() };
        assert_ne!(other.hash().unwrap(), c.hash().unwrap());
        c.validate().unwrap();
    }

    #[test]
    fn version_is_checked() {
        let c = ExperimentConfig {
            version: 99,
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
