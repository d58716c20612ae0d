use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use ptvmc_core::driver::{AnsatzSettings, CompressSettings, QuenchSpec};
use ptvmc_core::lattice::LatticeSpec;
use ptvmc_core::operators::TFIM_CRITICAL_FIELD;
use ptvmc_core::schemes::SchemeId;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::Common;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn one() -> f64 {
    1.0
}

fn critical_quench() -> f64 {
    2.0 * TFIM_CRITICAL_FIELD
}

pub type QuenchConfig = QuenchSpec;

pub fn apply_overrides_quench(cfg: &mut QuenchConfig, common: &Common) {
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.full_summation {
        cfg.compress.sampling.full_summation = true;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// All spins along +x (uniform amplitudes).
    #[default]
    XPolarized,
    /// All spins along +z.
    ZPolarized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactConfig {
    pub lattice: LatticeSpec,
    #[serde(default = "one")]
    pub coupling: f64,
    pub h_final: f64,
    pub t_final: f64,
    /// Output interval.
    #[serde(default = "default_exact_dt")]
    pub dt: f64,
    #[serde(default)]
    pub initial: InitialState,
}

fn default_exact_dt() -> f64 {
    0.01
}

impl ExactConfig {
    pub fn validate(&self) -> Result<()> {
        self.lattice.validate()?;
        anyhow::ensure!(self.dt > 0.0 && self.dt.is_finite(), "dt must be positive, got {}", self.dt);
        anyhow::ensure!(self.t_final >= 0.0 && self.t_final.is_finite(), "t_final must be non-negative, got {}", self.t_final);
        anyhow::ensure!(self.h_final.is_finite() && self.coupling.is_finite(), "h_final and coupling must be finite");
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeCheckConfig {
    pub lattice: LatticeSpec,
    pub coupling: f64,
    pub h_final: f64,
    pub t_final: f64,
    pub dt_grid: Vec<f64>,
    pub schemes: Vec<SchemeId>,
}

impl Default for SchemeCheckConfig {
    fn default() -> Self {
        Self {
            lattice: LatticeSpec::new(2, 3).expect("valid lattice"),
            coupling: 1.0,
            h_final: critical_quench(),
            t_final: 0.2,
            dt_grid: vec![0.004, 0.002, 0.001, 0.0005],
            schemes: SchemeId::all_supported(),
        }
    }
}

impl SchemeCheckConfig {
    pub fn validate(&self) -> Result<()> {
        self.lattice.validate()?;
        anyhow::ensure!(!self.dt_grid.is_empty(), "dt_grid is empty");
        anyhow::ensure!(self.dt_grid.iter().all(|d| *d > 0.0 && d.is_finite()), "dt_grid entries must be positive");
        anyhow::ensure!(self.t_final > 0.0, "t_final must be positive");
        Ok(())
    }
}

/// A random target state and a start point near it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchingConfig {
    pub lattice: LatticeSpec,
    #[serde(default)]
    pub ansatz: AnsatzSettings,
    /// Scale of the random target parameters.
    #[serde(default = "default_target_scale")]
    pub target_scale: f64,
    /// Scale of the random offset between start and target parameters.
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub compress: CompressSettings,
}

fn default_target_scale() -> f64 {
    0.3
}

fn default_perturbation() -> f64 {
    0.05
}

impl MatchingConfig {
    pub fn apply_overrides(&mut self, common: &Common) {
        if let Some(seed) = common.seed {
            self.seed = seed;
        }
        if common.full_summation {
            self.compress.sampling.full_summation = true;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lattice.validate()?;
        anyhow::ensure!(self.target_scale >= 0.0 && self.perturbation >= 0.0, "scales must be non-negative");
        self.compress.validate()?;
        Ok(())
    }
}
