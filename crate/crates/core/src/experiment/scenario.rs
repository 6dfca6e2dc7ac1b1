//! Scenario files.
//!
//! A scenario is a TOML document; every omitted key takes the value of
//! [`Scenario::reference_baseline`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GeometryConfig;
use crate::optimizer::{OptimizerConfig, SystemParams};
use crate::propagation::PropagationConfig;
use crate::units::{db_to_linear, dbm_to_watts};

/// Time-switching baseline settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Harvest-window lengths compared in outage experiments.
    pub tau_d_grid: Vec<usize>,
    /// Harvest window used where a single baseline curve is reported.
    pub reference_tau_d: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            tau_d_grid: vec![20, 60, 100],
            reference_tau_d: 60,
        }
    }
}

/// Sweep grids for the figure drivers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub mu_list: Vec<f64>,
    pub rsi_grid_db: Vec<f64>,
    pub rate_grid: Vec<f64>,
    /// Residual SI used by the outage sweep.
    pub outage_rsi_db: f64,
    /// Rate requirement used by the residual-SI sweep.
    pub rsi_sweep_rate: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            mu_list: vec![0.3, 0.5, 0.7],
            rsi_grid_db: vec![-110.0, -105.0, -100.0, -95.0, -90.0, -85.0, -80.0],
            rate_grid: vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0],
            outage_rsi_db: -100.0,
            rsi_sweep_rate: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub num_aps: usize,
    pub num_users: usize,
    pub tau_p: usize,
    pub tau_c: usize,
    /// Pilot power, watts.
    pub rho_p: f64,
    pub noise_dbm: f64,
    pub mu: f64,
    pub rsi_db: f64,
    /// Battery budget per user, joules.
    pub e_max: f64,
    /// Per-AP power budget, watts.
    pub p_max: f64,
    /// Rate requirement per user, bits/s/Hz.
    pub rate_th: f64,
    pub drops: usize,
    pub seed: u64,
    pub geometry: GeometryConfig,
    pub propagation: PropagationConfig,
    pub baseline: Option<BaselineConfig>,
    pub sweeps: SweepConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario::reference_baseline()
    }
}

impl Scenario {
    /// `M=64, K=4, τ_p=2, τ_c=200`, 0.1 W pilots, −96 dBm noise, `μ=0.5`,
    /// `E^max = 0.2 J`, `P^max = 1 W`, 500 drops.
    pub fn reference_baseline() -> Self {
        Scenario {
            num_aps: 64,
            num_users: 4,
            tau_p: 2,
            tau_c: 200,
            rho_p: 0.1,
            noise_dbm: -96.0,
            mu: 0.5,
            rsi_db: -90.0,
            e_max: 0.2,
            p_max: 1.0,
            rate_th: 2.5,
            drops: 500,
            seed: 1,
            geometry: GeometryConfig::default(),
            propagation: PropagationConfig::default(),
            baseline: Some(BaselineConfig::default()),
            sweeps: SweepConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn tau_u(&self) -> usize {
        self.tau_c - self.tau_p
    }

    pub fn noise_power(&self) -> f64 {
        dbm_to_watts(self.noise_dbm)
    }

    pub fn rsi_linear(&self) -> f64 {
        db_to_linear(self.rsi_db)
    }

    pub fn baseline_or_default(&self) -> BaselineConfig {
        self.baseline.clone().unwrap_or_default()
    }

    pub fn system_params(&self) -> SystemParams {
        SystemParams {
            tau_c: self.tau_c,
            tau_p: self.tau_p,
            mu: self.mu,
            e_max: self.e_max,
            p_max: self.p_max,
            rate_th: self.rate_th,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive, got {v}")))
            }
        };
        if self.num_aps == 0 {
            return Err(Error::config("num_aps", "must be at least 1"));
        }
        if self.num_users == 0 {
            return Err(Error::config("num_users", "must be at least 1"));
        }
        if self.tau_p == 0 {
            return Err(Error::config("tau_p", "must be at least 1"));
        }
        if self.tau_p >= self.tau_c {
            return Err(Error::config("tau_c", format!("must exceed tau_p={}", self.tau_p)));
        }
        positive("rho_p", self.rho_p)?;
        positive("e_max", self.e_max)?;
        positive("p_max", self.p_max)?;
        positive("geometry.side_m", self.geometry.side_m)?;
        if !self.noise_dbm.is_finite() {
            return Err(Error::config("noise_dbm", "must be finite"));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::config("mu", format!("must lie in [0, 1], got {}", self.mu)));
        }
        if !(self.rsi_db < 0.0) {
            return Err(Error::config("rsi_db", format!("must be negative, got {}", self.rsi_db)));
        }
        if !(self.rate_th >= 0.0) || !self.rate_th.is_finite() {
            return Err(Error::config("rate_th", format!("must be non-negative, got {}", self.rate_th)));
        }
        if self.drops == 0 {
            return Err(Error::config("drops", "must be at least 1"));
        }
        if self.geometry.height_diff_m < 0.0 {
            return Err(Error::config("geometry.height_diff_m", "must be non-negative"));
        }
        self.propagation
            .validate()
            .map_err(|e| Error::config("propagation", e.to_string()))?;
        if let Some(b) = &self.baseline {
            let tau_ul = self.tau_u();
            for &d in b.tau_d_grid.iter().chain(std::iter::once(&b.reference_tau_d)) {
                if d >= tau_ul {
                    return Err(Error::config(
                        "baseline.tau_d_grid",
                        format!("tau_d={d} leaves no uplink samples (tau_c - tau_p = {tau_ul})"),
                    ));
                }
            }
        }
        if self.sweeps.mu_list.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::config("sweeps.mu_list", "entries must lie in [0, 1]"));
        }
        if self.sweeps.rsi_grid_db.iter().any(|r| !(*r < 0.0)) || !(self.sweeps.outage_rsi_db < 0.0) {
            return Err(Error::config("sweeps.rsi_grid_db", "residual SI levels must be negative dB"));
        }
        if self.sweeps.rate_grid.iter().any(|r| !(*r >= 0.0)) || !(self.sweeps.rsi_sweep_rate >= 0.0) {
            return Err(Error::config("sweeps.rate_grid", "rates must be non-negative"));
        }
        let o = &self.optimizer;
        if o.max_iterations == 0 || !(o.eps_conv > 0.0) || !(o.eps_mono >= 0.0) {
            return Err(Error::config("optimizer", "max_iterations, eps_conv must be positive"));
        }
        Ok(())
    }
}
