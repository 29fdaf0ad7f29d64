//! Run configuration read from a TOML document.
//!
//! Every key has a default, so an empty file is a valid configuration. All
//! randomness is derived from the top-level `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ann::IndexMode;
use crate::encoder::LossKind;
use crate::error::{Error, Result};
use crate::infer::{TreeParams, DEFAULT_MIN_LEAF, MAX_DEPTH};
use crate::metrics::{DEFAULT_A, DEFAULT_B};
use crate::negmine::{MinerConfig, Strategy};
use crate::synth::SynthSpec;
use crate::theory::VerifyConfig;
use crate::trainer::{AdamConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training points with their labels.
    pub train: Option<PathBuf>,
    /// Label feature rows.
    pub labels: Option<PathBuf>,
    /// Test points with their labels.
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { dim: 64 }
    }
}

macro_rules! stage_config {
    ($name:ident, $epochs:expr, $lr:expr) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name {
            pub epochs: usize,
            pub learning_rate: f64,
            pub stop_at_p1: Option<f64>,
        }

        impl Default for $name {
            fn default() -> Self {
                Self { epochs: $epochs, learning_rate: $lr, stop_at_p1: None }
            }
        }
    };
}

stage_config!(M1Config, 300, 1e-4);
stage_config!(M2Config, 50, 1e-3);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub gamma: f64,
    pub loss_kind: LossKind,
    /// Training points sampled for the per-epoch P@1 (0 disables it).
    pub eval_sample: usize,
    pub miner: MinerConfig,
    pub adam: AdamConfig,
    pub m1: M1Config,
    pub m2: M2Config,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            gamma: 0.3,
            loss_kind: LossKind::Hinge,
            eval_sample: 1000,
            miner: MinerConfig::default(),
            adam: AdamConfig::default(),
            m1: M1Config::default(),
            m2: M2Config::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexChoice {
    Auto,
    Exact,
    Approximate,
}

impl IndexChoice {
    pub fn mode(self, num_vectors: usize, seed: u64) -> IndexMode {
        let mode = match self {
            IndexChoice::Auto => IndexMode::auto(num_vectors),
            IndexChoice::Exact => IndexMode::Exact,
            IndexChoice::Approximate => IndexMode::approximate(),
        };
        match mode {
            IndexMode::Approximate { degree, ef_construction, ef_search, .. } => {
                IndexMode::Approximate { degree, ef_construction, ef_search, seed }
            }
            m => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub k: usize,
    /// Shortlist size; unset means `max(2k, 100)` clamped to the label count.
    pub shortlist: Option<usize>,
    pub fusion: bool,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Training points used to fit the fusion tree.
    pub validation_points: usize,
    pub index: IndexChoice,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            k: 5,
            shortlist: None,
            fusion: true,
            max_depth: MAX_DEPTH,
            min_leaf: DEFAULT_MIN_LEAF,
            validation_points: 1000,
            index: IndexChoice::Auto,
        }
    }
}

impl InferConfig {
    pub fn tree_params(&self) -> TreeParams {
        TreeParams { max_depth: self.max_depth, min_leaf: self.min_leaf }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub a: f64,
    pub b: f64,
    pub ks: Vec<usize>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { a: DEFAULT_A, b: DEFAULT_B, ks: vec![1, 3, 5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub strategies: Vec<Strategy>,
    pub epochs: usize,
    pub stop_at_p1: Option<f64>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { strategies: Strategy::ALL.to_vec(), epochs: 50, stop_at_p1: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub infer: InferConfig,
    pub metrics: MetricsConfig,
    pub verify: VerifyConfig,
    pub compare: CompareConfig,
    pub synth: SynthSpec,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.dim < 2 {
            return Err(Error::Config("model.dim must be >= 2".into()));
        }
        self.m1_config().validate()?;
        self.m2_config().validate()?;
        if self.infer.k == 0 || self.infer.shortlist == Some(0) {
            return Err(Error::Config("infer.k and infer.shortlist must be >= 1".into()));
        }
        if self.infer.max_depth > MAX_DEPTH || self.infer.min_leaf == 0 {
            return Err(Error::Config(format!("infer.max_depth must be <= {MAX_DEPTH}, infer.min_leaf >= 1")));
        }
        if self.metrics.ks.is_empty() || self.metrics.ks.contains(&0) {
            return Err(Error::Config("metrics.ks must be non-empty with k >= 1".into()));
        }
        if !(self.metrics.a > 0.0 && self.metrics.a < 1.0) || !(self.metrics.b >= 0.0) {
            return Err(Error::Config("metrics.a must lie in (0, 1) and metrics.b >= 0".into()));
        }
        if self.compare.strategies.is_empty() {
            return Err(Error::Config("compare.strategies must not be empty".into()));
        }
        Ok(())
    }

    fn stage(&self, epochs: usize, learning_rate: f64, stop_at_p1: Option<f64>, seed: u64) -> TrainConfig {
        TrainConfig {
            miner: self.train.miner.clone(),
            gamma: self.train.gamma,
            loss_kind: self.train.loss_kind,
            epochs,
            learning_rate,
            adam: self.train.adam,
            seed,
            eval_sample: self.train.eval_sample,
            stop_at_p1,
        }
    }

    pub fn m1_config(&self) -> TrainConfig {
        let m = &self.train.m1;
        self.stage(m.epochs, m.learning_rate, m.stop_at_p1, self.derived_seed(1))
    }

    pub fn m2_config(&self) -> TrainConfig {
        let m = &self.train.m2;
        self.stage(m.epochs, m.learning_rate, m.stop_at_p1, self.derived_seed(2))
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec { seed: self.derived_seed(3), ..self.synth.clone() }
    }

    pub fn verify_config(&self) -> VerifyConfig {
        VerifyConfig { seed: self.derived_seed(4), ..self.verify.clone() }
    }

    pub fn encoder_seed(&self) -> u64 {
        self.derived_seed(5)
    }

    pub fn index_seed(&self) -> u64 {
        self.derived_seed(6)
    }

    /// Independent stream per component, all from the master seed.
    pub fn derived_seed(&self, component: u64) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(component.wrapping_mul(0xD1B5_4A32_D192_ED03))
    }
}
