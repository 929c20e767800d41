//! The experiment configuration, as read from a TOML file.
//!
//! Every section rejects unknown keys. See `configs/paper.toml` at the
//! repository root for the canonical example.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::active::RoundConfig;
use crate::error::{Error, Result};
use crate::miner::AscentConfig;
use crate::nn::TrainConfig;
use crate::oracle::{
    make_synthetic_oracle, BarrierOracle, FdConfig, Oracle, SyntheticParams,
    DEFAULT_BARRIER_DOMAIN,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// `barrier`, `quadratic-bowl`, `multimodal-sine` or `constant`.
    pub kind: String,
    /// Raw-unit bounds, one `[lo, hi]` per dimension.
    #[serde(default)]
    pub domain: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub fd: FdConfig,
    /// Synthetic oracles only.
    #[serde(default)]
    pub params: Option<SyntheticParams>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            kind: "barrier".into(),
            domain: None,
            fd: FdConfig::default(),
            params: None,
        }
    }
}

impl OracleConfig {
    pub fn build(&self) -> Result<Arc<dyn Oracle>> {
        match self.kind.as_str() {
            "barrier" => {
                if self.params.is_some() {
                    return Err(Error::InvalidSpec(
                        "oracle.params applies to synthetic oracles only".into(),
                    ));
                }
                let domain = self
                    .domain
                    .clone()
                    .unwrap_or_else(|| DEFAULT_BARRIER_DOMAIN.to_vec());
                Ok(Arc::new(BarrierOracle::new(domain)?))
            }
            kind => {
                let mut params = self.params.clone().unwrap_or_default();
                if let Some(domain) = &self.domain {
                    params.dim = domain.len();
                    params.domain = Some(domain.clone());
                }
                make_synthetic_oracle(kind, &params)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_size: usize,
    pub test_size: usize,
    pub train_seed: u64,
    pub test_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_size: 200_000,
            test_size: 10_000,
            train_seed: 1,
            test_seed: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub init_seed: u64,
    /// Seeds mini-batch shuffling.
    pub train_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![512; 5],
            init_seed: 7,
            train_seed: 11,
        }
    }
}

impl ModelConfig {
    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(input_dim);
        dims.extend(&self.hidden);
        dims.push(1);
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub oracle: OracleConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mine: AscentConfig,
    #[serde(rename = "loop")]
    pub rounds: RoundConfig,
    /// Artifact directory; the `--out` flag takes precedence.
    pub out_dir: Option<String>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let oracle = self.oracle.build()?;
        self.oracle.fd.validate()?;
        if self.data.train_size == 0 || self.data.test_size == 0 {
            return Err(Error::InvalidSpec("data sizes must be positive".into()));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::InvalidSpec("hidden widths must be positive".into()));
        }
        let _ = oracle.dim();
        self.train.validate()?;
        self.mine.validate()?;
        self.rounds.validate()?;
        Ok(())
    }

    /// Replaces every seed with one derived from `k`: data `k`, `k + 1`;
    /// model init `k + 2`; shuffling `k + 3`.
    pub fn override_seeds(&mut self, k: u64) {
        self.data.train_seed = k;
        self.data.test_seed = k.wrapping_add(1);
        self.model.init_seed = k.wrapping_add(2);
        self.model.train_seed = k.wrapping_add(3);
    }

    /// Canonical JSON form, used for hashing and checkpoint headers.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
