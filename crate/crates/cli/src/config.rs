//! Versioned JSON configs. Unknown fields are rejected so that a misspelt
//! convention cannot be silently ignored.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use lcg_core::gbs::{CircuitSpec, Cost};
use lcg_core::optimize::{Budget, HopSettings};
use lcg_core::stellar::ReduceOptions;

use crate::{config_error, Failure};

pub const SCHEMA: &str = "lcg-sim/1";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeraldConfig {
    pub schema: String,
    pub circuit: CircuitSpec,
    /// Simulate an inverse cascade stage by stage, rank-reducing in between.
    #[serde(default)]
    pub staged: Option<ReduceOptions>,
}

fn sum_delta() -> Cost {
    Cost::SumDelta
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    pub schema: String,
    pub circuit: CircuitSpec,
    #[serde(default = "sum_delta")]
    pub cost: Cost,
    #[serde(default)]
    pub budget: Budget,
    /// Basin hopping; `hops = 0` runs a single local minimization.
    #[serde(default)]
    pub hops: HopSettings,
    /// Re-optimize under each uniform transmissivity instead.
    #[serde(default)]
    pub loss_sweep: Option<Vec<f64>>,
}

trait Versioned {
    fn schema(&self) -> &str;
}

impl Versioned for HeraldConfig {
    fn schema(&self) -> &str {
        &self.schema
    }
}

impl Versioned for OptimizeConfig {
    fn schema(&self) -> &str {
        &self.schema
    }
}

/// Parse a config, reporting the JSON path of the first offending field.
#[allow(private_bounds)]
pub fn parse<T: DeserializeOwned + Versioned>(text: &str) -> Result<T, Failure> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: T = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        config_error(format!("config at `{path}`: {}", e.into_inner()))
    })?;
    if cfg.schema() != SCHEMA {
        return Err(config_error(format!("config at `schema`: expected {SCHEMA:?}, got {:?}", cfg.schema())));
    }
    Ok(cfg)
}

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub version: &'static str,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub hbar: f64,
}

impl Provenance {
    pub fn new(config: &str, seed: Option<u64>) -> Self {
        let digest = Sha256::digest(config.as_bytes());
        Self {
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            seed,
            hbar: lcg_core::phase_space::HBAR,
        }
    }
}
