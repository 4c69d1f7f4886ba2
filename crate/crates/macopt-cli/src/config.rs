//! JSON scenario files. The schema is strict — unknown keys are rejected —
//! so a typo'd field fails loudly instead of silently running defaults.

use std::path::Path;

use macopt::battery::{DischargeModel, UserParams};
use macopt::multi_user::MultiUserInstance;
use macopt::solver::SolveOptions;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub users: Vec<UserConfig>,
    /// Frame length T, seconds.
    pub horizon: f64,
    #[serde(default)]
    pub strategy: StrategyChoice,
    #[serde(default)]
    pub rate_unit: RateUnit,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    pub battery_energy: f64,
    pub circuit_cost: f64,
    pub model: ModelConfig,
}

/// Discharge-model description. `kind` selects the shape; the other keys
/// must match it (`resistance`/`coefficient` for quadratic, `samples` for
/// tabulated, nothing for ideal).
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub resistance: Option<f64>,
    pub coefficient: Option<f64>,
    pub samples: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ideal,
    Quadratic,
    Tabulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyChoice {
    Noma,
    Tdma,
    Hybrid,
    #[default]
    All,
}

impl StrategyChoice {
    /// The concrete strategies this choice asks for, in emission order.
    pub fn strategies(self) -> Vec<macopt::Strategy> {
        match self {
            StrategyChoice::Noma => vec![macopt::Strategy::Noma],
            StrategyChoice::Tdma => vec![macopt::Strategy::Tdma],
            StrategyChoice::Hybrid => vec![macopt::Strategy::Hybrid],
            StrategyChoice::All => {
                vec![macopt::Strategy::Noma, macopt::Strategy::Tdma, macopt::Strategy::Hybrid]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RateUnit {
    #[default]
    Bits,
    Nats,
}

impl RateUnit {
    pub fn label(self) -> &'static str {
        match self {
            RateUnit::Bits => "rate_bits",
            RateUnit::Nats => "rate_nats",
        }
    }

    pub fn from_nats(self, nats: f64) -> f64 {
        match self {
            RateUnit::Bits => macopt::nats_to_bits(nats),
            RateUnit::Nats => nats,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tolerance: Option<f64>,
    pub max_iter: Option<usize>,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        let config: ScenarioConfig = serde_json::from_str(&text)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        if let Some(tol) = config.solver.tolerance {
            if !tol.is_finite() || tol <= 0.0 {
                return Err(format!("solver.tolerance must be positive (got {tol})"));
            }
        }
        if config.solver.max_iter == Some(0) {
            return Err("solver.max_iter must be at least 1".into());
        }
        Ok(config)
    }

    /// Ascent options with `--tol` taking precedence over the file.
    pub fn solve_options(&self, tol_flag: Option<f64>) -> SolveOptions<f64> {
        let mut options = SolveOptions::with_tolerance(
            tol_flag.or(self.solver.tolerance).unwrap_or(1e-8),
        );
        if let Some(cap) = self.solver.max_iter {
            options.max_iter = cap;
        }
        options
    }

    pub fn user_params(&self) -> Result<Vec<UserParams<f64>>, String> {
        self.users.iter().map(UserConfig::params).collect()
    }

    pub fn instance(&self) -> Result<MultiUserInstance<f64>, String> {
        MultiUserInstance::new(self.user_params()?, self.horizon).map_err(|e| e.to_string())
    }
}

impl UserConfig {
    pub fn params(&self) -> Result<UserParams<f64>, String> {
        UserParams::new(self.battery_energy, self.circuit_cost, self.model.build()?)
            .map_err(|e| e.to_string())
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<DischargeModel<f64>, String> {
        let reject = |key: &str, kind: &str| -> String {
            format!("model key \"{key}\" does not apply to kind \"{kind}\"")
        };
        match self.kind {
            ModelKind::Ideal => {
                if self.resistance.is_some() || self.coefficient.is_some() {
                    return Err(reject("resistance/coefficient", "ideal"));
                }
                if self.samples.is_some() {
                    return Err(reject("samples", "ideal"));
                }
                Ok(DischargeModel::ideal())
            }
            ModelKind::Quadratic => {
                if self.samples.is_some() {
                    return Err(reject("samples", "quadratic"));
                }
                let r = self.resistance.ok_or("quadratic model requires \"resistance\"")?;
                match self.coefficient {
                    Some(k) => DischargeModel::quadratic_with_coefficient(r, k),
                    None => DischargeModel::quadratic(r),
                }
                .map_err(|e| e.to_string())
            }
            ModelKind::Tabulated => {
                if self.resistance.is_some() || self.coefficient.is_some() {
                    return Err(reject("resistance/coefficient", "tabulated"));
                }
                let samples =
                    self.samples.clone().ok_or("tabulated model requires \"samples\"")?;
                DischargeModel::tabulated(samples).map_err(|e| e.to_string())
            }
        }
    }
}
