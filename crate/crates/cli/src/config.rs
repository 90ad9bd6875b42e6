//! Versioned TOML run configuration. Command-line flags override file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zigam_core::engine::StructuralForm;
use zigam_core::likelihoods::Family;
use zigam_core::model::PriorConfig;
use zigam_core::simulate::SimulationConfig;

use crate::error::{CliError, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub data: DataPaths,
    pub model: ModelOptions,
    pub hurdle: HurdleSettings,
    pub diagnose: DiagnoseSettings,
    pub predict: PredictSettings,
    pub simulate: SimulationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: None,
            threads: None,
            data: DataPaths::default(),
            model: ModelOptions::default(),
            hurdle: HurdleSettings::default(),
            diagnose: DiagnoseSettings::default(),
            predict: PredictSettings::default(),
            simulate: SimulationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub events: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    pub population: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    pub form: StructuralForm,
    pub family: Family,
    /// Longest mesh edge inside the domain, in degrees.
    pub max_edge: f64,
    /// Minimum spacing between data locations kept as mesh nodes.
    pub cutoff: f64,
    pub knots: Option<usize>,
    pub priors: PriorConfig,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            form: StructuralForm::II,
            family: Family::NegBinomial,
            max_edge: 3.0,
            cutoff: 2.5,
            knots: None,
            priors: PriorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HurdleSettings {
    /// Maximum number of threshold candidates.
    pub grid_size: usize,
    pub pi_samples: usize,
    pub waic_samples: usize,
}

impl Default for HurdleSettings {
    fn default() -> Self {
        Self {
            grid_size: 21,
            pi_samples: 10_000,
            waic_samples: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSettings {
    pub samples: usize,
}

impl Default for DiagnoseSettings {
    fn default() -> Self {
        Self { samples: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSettings {
    pub nx: usize,
    pub ny: usize,
    pub threshold: i64,
    pub samples: usize,
    /// Fitted years to predict; defaults to the last fitted year.
    pub years: Option<Vec<i32>>,
}

impl Default for PredictSettings {
    fn default() -> Self {
        Self {
            nx: 150,
            ny: 150,
            threshold: 20,
            samples: 10_000,
            years: None,
        }
    }
}

impl RunConfig {
    /// Reads a config file, resolving relative data paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text)?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.events, &mut cfg.data.regions, &mut cfg.data.population]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| CliError::Config("a seed is required: pass --seed or set `seed` in the config".into()))
    }

    pub fn data_path(&self, which: &str) -> Result<&Path> {
        let p = match which {
            "events" => &self.data.events,
            "regions" => &self.data.regions,
            _ => &self.data.population,
        };
        let p = p
            .as_deref()
            .ok_or_else(|| CliError::Config(format!("no {which} file given (--{which} or [data].{which})")))?;
        if !p.exists() {
            return Err(CliError::Config(format!("{which} file {} does not exist", p.display())));
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 4\n[model]\nform = \"i\"\n[predict]\nthreshold = 5\n").unwrap();
        assert_eq!(cfg.seed, Some(4));
        assert_eq!(cfg.model.form, StructuralForm::I);
        assert_eq!(cfg.model.family, Family::NegBinomial);
        assert_eq!(cfg.predict.threshold, 5);
        assert_eq!(cfg.predict.nx, 150);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[model]\nshape = 3\n").is_err());
    }
}
