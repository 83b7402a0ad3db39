//! Experiment configuration: one JSON document, unknown keys rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use optmarket::dispatch::{
    stylized_instance, Availability, CostBlock, CostCurve, DispatchableGen, Limit, MarketInstance,
    RenewableGen,
};
use optmarket::scenario::{discretize, sample, ScenarioSet, UniformScenarioModel};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub market: MarketConfig,
    #[serde(default)]
    pub option: OptionConfig,
    #[serde(default)]
    pub risk: RiskConfig,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub demand_mw: f64,
    pub mean_mw: f64,
    pub std_mw: f64,
    /// Exactly one of `stylized` and `custom`.
    pub stylized: Option<StylizedConfig>,
    pub custom: Option<CustomConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StylizedConfig {
    pub rho: f64,
    #[serde(default)]
    pub extra_peakers: Vec<PeakerConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakerConfig {
    pub id: String,
    pub marginal_cost: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomConfig {
    #[serde(default)]
    pub dispatchables: Vec<DispatchableConfig>,
    #[serde(default)]
    pub renewables: Vec<RenewableConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    /// Omitted for the unbounded last block.
    pub capacity_mw: Option<f64>,
    pub marginal_cost: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispatchableConfig {
    pub id: String,
    pub cap_mw: Option<f64>,
    pub ramp_mw: Option<f64>,
    pub blocks: Vec<BlockConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewableConfig {
    pub id: String,
    pub cap_mw: f64,
    #[serde(default = "one")]
    pub availability_scale: f64,
    #[serde(default)]
    pub availability_offset_mw: f64,
    pub blocks: Vec<BlockConfig>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionMode {
    #[default]
    None,
    Bilateral,
    Centralized,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionConfig {
    #[serde(default)]
    pub mode: OptionMode,
    pub bilateral: Option<BilateralConfig>,
    pub centralized: Option<CentralizedConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BilateralConfig {
    #[serde(default = "wind")]
    pub buyer: String,
    #[serde(default = "peaker")]
    pub seller: String,
    pub price: f64,
    pub strike: f64,
    /// Defaults to the buyer's best response.
    pub volume_mw: Option<f64>,
}

fn wind() -> String {
    optmarket::WIND_ID.into()
}

fn peaker() -> String {
    optmarket::PEAKER_ID.into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideConfig {
    Buyer,
    Seller,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
pub enum ObjectiveConfig {
    #[serde(rename = "max-ms")]
    #[value(name = "max-ms")]
    MaxMs,
    #[serde(rename = "zero-ms")]
    #[value(name = "zero-ms")]
    ZeroMs,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub q_max: f64,
    pub k_max: f64,
    pub delta_max_mw: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BidConfig {
    pub id: String,
    pub side: SideConfig,
    /// Defaults to `q, K <= max spot` and `delta <= sqrt(3) std`.
    #[serde(rename = "box")]
    pub bbox: Option<BoxConfig>,
    /// Zero selects the risk-neutral test.
    #[serde(default)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationMode {
    #[default]
    Greedy,
    Split,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationConfig {
    #[serde(default)]
    pub mode: AllocationMode,
    #[serde(default)]
    pub fractions: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentralizedConfig {
    pub bids: Vec<BidConfig>,
    #[serde(default)]
    pub allocation: AllocationConfig,
    #[serde(default = "max_ms")]
    pub objective: ObjectiveConfig,
}

fn max_ms() -> ObjectiveConfig {
    ObjectiveConfig::MaxMs
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KGridConfig {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    #[serde(default)]
    pub alphas: Vec<f64>,
    pub delta_cap_mw: Option<f64>,
    pub k_grid: Option<KGridConfig>,
    pub q_bracket: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_scenarios")]
    pub scenarios: usize,
    /// Monte Carlo sampling when set, midpoint quadrature otherwise.
    pub seed: Option<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_scenarios() -> usize {
    2000
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenarios: default_scenarios(),
            seed: None,
            output_dir: default_output(),
        }
    }
}

/// A parsed config with the hash of its source bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
}

impl LoadedConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        config.validate()?;
        let sha256 = Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self { config, sha256 })
    }
}

impl ExperimentConfig {
    fn validate(&self) -> Result<(), CliError> {
        let m = &self.market;
        match (&m.stylized, &m.custom) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(CliError::Config(
                    "market: exactly one of `stylized` and `custom` is required".into(),
                ))
            }
        }
        self.model()?;
        if self.run.scenarios == 0 {
            return Err(CliError::Config("run.scenarios must be positive".into()));
        }
        match self.option.mode {
            OptionMode::None => {}
            OptionMode::Bilateral if self.option.bilateral.is_none() => {
                return Err(CliError::Config("option.mode is bilateral but option.bilateral is missing".into()))
            }
            OptionMode::Centralized if self.option.centralized.is_none() => {
                return Err(CliError::Config(
                    "option.mode is centralized but option.centralized is missing".into(),
                ))
            }
            _ => {}
        }
        for (i, a) in self.risk.alphas.iter().enumerate() {
            if !(0.0..1.0).contains(a) {
                return Err(CliError::Config(format!("risk.alphas[{i}] must lie in [0, 1), got {a}")));
            }
        }
        if let Some(g) = &self.risk.k_grid {
            if g.count == 0 || !(g.stop >= g.start) {
                return Err(CliError::Config("risk.k_grid needs count > 0 and stop >= start".into()));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<UniformScenarioModel<f64>, CliError> {
        UniformScenarioModel::new(self.market.mean_mw, self.market.std_mw)
            .map_err(|e| CliError::Config(format!("market: {e}")))
    }

    pub fn rho(&self) -> Option<f64> {
        self.market.stylized.as_ref().map(|s| s.rho)
    }

    pub fn instance(&self) -> Result<MarketInstance<f64>, CliError> {
        let model = self.model()?;
        let m = &self.market;
        if let Some(s) = &m.stylized {
            let extra: Vec<(String, f64)> =
                s.extra_peakers.iter().map(|p| (p.id.clone(), p.marginal_cost)).collect();
            return Ok(stylized_instance(m.demand_mw, model, s.rho, &extra)?);
        }
        let c = m.custom.as_ref().expect("validated");
        let curve = |blocks: &[BlockConfig]| {
            CostCurve::new(
                blocks
                    .iter()
                    .map(|b| CostBlock {
                        capacity: b.capacity_mw.map(Limit::Finite).unwrap_or(Limit::Unbounded),
                        marginal_cost: b.marginal_cost,
                    })
                    .collect(),
            )
        };
        let limit = |x: Option<f64>| x.map(Limit::Finite).unwrap_or(Limit::Unbounded);
        let dispatchables = c
            .dispatchables
            .iter()
            .map(|d| {
                Ok(DispatchableGen {
                    id: d.id.clone(),
                    cap: limit(d.cap_mw),
                    ramp: limit(d.ramp_mw),
                    cost: curve(&d.blocks)?,
                })
            })
            .collect::<Result<Vec<_>, optmarket::dispatch::DispatchError>>()?;
        let renewables = c
            .renewables
            .iter()
            .map(|r| {
                Ok(RenewableGen {
                    id: r.id.clone(),
                    cap: r.cap_mw,
                    cost: curve(&r.blocks)?,
                    availability: Availability {
                        scale: r.availability_scale,
                        offset: r.availability_offset_mw,
                    },
                })
            })
            .collect::<Result<Vec<_>, optmarket::dispatch::DispatchError>>()?;
        Ok(MarketInstance::new(m.demand_mw, dispatchables, renewables, model)?)
    }

    /// Scenario set for `n` scenarios: sampled when `seed` is set, midpoint
    /// quadrature otherwise.
    pub fn scenarios(&self, n: usize, seed: Option<u64>) -> Result<ScenarioSet<f64>, CliError> {
        let model = self.model()?;
        let set = match seed {
            Some(s) => sample(&model, n, s),
            None => discretize(&model, n),
        };
        set.map_err(|e| CliError::Config(format!("run: {e}")))
    }
}
