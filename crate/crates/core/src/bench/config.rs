use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::methods::{MethodKind, MethodSpec, DEFAULT_NFE};
use crate::sampler::ReverseStepMode;
use crate::scene::{PerturbationSpec, SceneConfig};
use crate::schedule::{build_cosine_schedule, NoiseSchedule, DEFAULT_OFFSET, DEFAULT_TOTAL_STEPS};
use crate::surrogate::SurrogateSpec;

pub const CONFIG_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub total_steps: usize,
    pub offset: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            total_steps: DEFAULT_TOTAL_STEPS,
            offset: DEFAULT_OFFSET,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub schema: u32,
    pub seed: u64,
    pub num_samples: usize,
    #[serde(default = "default_nfe")]
    pub nfe: usize,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    pub surrogates: Vec<SurrogateSpec>,
    pub methods: Vec<MethodSpec>,
    /// Default output directory when none is given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_nfe() -> usize {
    DEFAULT_NFE
}

impl Default for BenchConfig {
    /// 500 samples, ±15°/±15 cm, NFE 10, T = 1000, s = 0.008, all four methods
    /// on the range-dependent surrogate.
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA,
            seed: 0,
            num_samples: 500,
            nfe: DEFAULT_NFE,
            schedule: ScheduleConfig::default(),
            scene: SceneConfig::default(),
            perturbation: PerturbationSpec::default(),
            surrogates: vec![SurrogateSpec::range_dependent(0.9, 2.0, 0.01)],
            methods: vec![
                MethodSpec::single(),
                MethodSpec::naiter(),
                MethodSpec::new(MethodKind::Nlsd),
                MethodSpec::lsd(ReverseStepMode::PosteriorMean),
            ],
            output_dir: None,
        }
    }
}

impl BenchConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every sub-spec. Parameter errors are reported as config errors.
    pub fn validate(&self) -> Result<()> {
        let check = || -> Result<()> {
            if self.schema != CONFIG_SCHEMA {
                return Err(Error::Config(format!(
                    "unsupported schema {} (expected {CONFIG_SCHEMA})",
                    self.schema
                )));
            }
            if self.num_samples < 1 {
                return Err(Error::Config("num_samples must be >= 1".into()));
            }
            if self.surrogates.is_empty() || self.methods.is_empty() {
                return Err(Error::Config("need at least one surrogate and one method".into()));
            }
            self.schedule()?;
            self.scene.validate()?;
            self.perturbation.validate()?;
            let mut seen = HashSet::new();
            for s in &self.surrogates {
                s.validate()?;
                if !seen.insert(s.label()) {
                    return Err(Error::Config(format!("duplicate surrogate {}", s.label())));
                }
            }
            let mut seen = HashSet::new();
            for m in &self.methods {
                m.validate()?;
                let nfe = m.resolved_nfe(self.nfe);
                if nfe < 1 || nfe > self.schedule.total_steps {
                    return Err(Error::Config(format!(
                        "{}: nfe {nfe} outside 1..={}",
                        m.label(),
                        self.schedule.total_steps
                    )));
                }
                if !seen.insert(m.label()) {
                    return Err(Error::Config(format!("duplicate method {}", m.label())));
                }
            }
            Ok(())
        };
        check().map_err(|e| match e {
            Error::InvalidArgument(msg) | Error::ContractViolation(msg) => Error::Config(msg),
            other => other,
        })
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        build_cosine_schedule(self.schedule.total_steps, self.schedule.offset)
    }

    fn hash_json(value: &serde_json::Value) -> String {
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Digest of everything that determines the dataset: seed, sample count,
    /// scene configuration and perturbation ranges.
    pub fn dataset_hash(&self) -> String {
        Self::hash_json(&serde_json::json!({
            "schema": self.schema,
            "seed": self.seed,
            "num_samples": self.num_samples,
            "scene": self.scene,
            "perturbation": self.perturbation,
        }))
    }

    /// Digest of the whole configuration except the output directory.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        Self::hash_json(&serde_json::to_value(&c).expect("config serializes"))
    }
}

/// First eight bytes (little endian) of SHA-256 over length-prefixed parts.
pub fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
