//! Multi-drop campaigns.
//!
//! Every drop derives its own seeds from the scenario seed and the drop
//! index, so drop `i` is the same deployment whatever else runs alongside
//! it, and sweeps over μ, residual SI or rate are paired comparisons.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimation::{assign_pilots, compute_estimation_stats};
use crate::experiment::output::CsvRow;
use crate::experiment::scenario::Scenario;
use crate::geometry::generate_positions;
use crate::optimizer::{run, DropInputs, OptimizerOutcome, Problem, Protocol};
use crate::propagation::compute_channel_stats;
use crate::rng::{derive_seed, Domain};
use crate::units::db_to_linear;

/// Second-order inputs of drop `index`.
pub fn drop_inputs(s: &Scenario, index: usize) -> Result<DropInputs> {
    let i = index as u64;
    let deployment = generate_positions(
        s.num_aps,
        s.num_users,
        &s.geometry,
        derive_seed(s.seed, Domain::Deployment, i),
    )?;
    let stats = compute_channel_stats(&deployment, &s.propagation, derive_seed(s.seed, Domain::LargeScale, i))?;
    let pilots = assign_pilots(s.num_users, s.tau_p, derive_seed(s.seed, Domain::Pilots, i))?;
    let est = compute_estimation_stats(&stats, &pilots, s.tau_p, s.rho_p, s.noise_power())?;
    Ok(DropInputs {
        stats,
        pilots,
        est,
        rsi: vec![s.rsi_linear(); s.num_aps],
    })
}

/// Same drop with a different residual-SI level.
pub fn with_rsi_db(mut drop: DropInputs, rsi_db: f64) -> DropInputs {
    let v = db_to_linear(rsi_db);
    drop.rsi.iter_mut().for_each(|r| *r = v);
    drop
}

pub fn protocol_label(p: Protocol) -> String {
    match p {
        Protocol::Proposed => "proposed".to_string(),
        Protocol::TimeSwitching { tau_d } => format!("ts(tau_d={tau_d})"),
    }
}

/// Outcome of one algorithm on one drop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropResult {
    pub drop_index: usize,
    pub algorithm: String,
    pub feasible: bool,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub monotone: bool,
    pub anomaly: bool,
    pub per_user_se: Vec<f64>,
    pub battery_fraction: Vec<f64>,
    pub trace: Vec<f64>,
    pub max_lp_violation: f64,
}

impl DropResult {
    pub fn from_outcome(drop_index: usize, protocol: Protocol, out: &OptimizerOutcome) -> Self {
        DropResult {
            drop_index,
            algorithm: protocol_label(protocol),
            feasible: out.feasible,
            objective: if out.feasible { out.objective() } else { f64::NAN },
            iterations: out.iterations,
            converged: out.converged,
            monotone: out.monotone,
            anomaly: out.anomaly,
            per_user_se: out.per_user_se.clone(),
            battery_fraction: out.battery_fraction.clone(),
            trace: out.objective_trace.clone(),
            max_lp_violation: out.max_lp_violation,
        }
    }

    pub fn mean_se(&self) -> f64 {
        mean(&self.per_user_se)
    }

    pub fn mean_battery_fraction(&self) -> f64 {
        mean(&self.battery_fraction)
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Mean and standard error.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = mean(xs);
    if n == 1 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

/// Summary of one algorithm over all drops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub algorithm: String,
    pub drops: usize,
    pub feasible_drops: usize,
    pub outage_rate: f64,
    /// Over feasible drops.
    pub mean_battery_fraction: f64,
    pub battery_fraction_stderr: f64,
    pub mean_se: f64,
    pub se_stderr: f64,
    pub mean_objective: f64,
    pub objective_stderr: f64,
    pub mean_iterations: f64,
}

pub fn aggregate(algorithm: &str, results: &[DropResult]) -> Aggregate {
    let feasible: Vec<&DropResult> = results.iter().filter(|r| r.feasible).collect();
    let collect = |f: &dyn Fn(&DropResult) -> f64| -> Vec<f64> { feasible.iter().map(|r| f(r)).collect() };
    let (bf, bf_se) = mean_stderr(&collect(&|r| r.mean_battery_fraction()));
    let (se, se_se) = mean_stderr(&collect(&|r| r.mean_se()));
    let (obj, obj_se) = mean_stderr(&collect(&|r| r.objective));
    let its = mean(&collect(&|r| r.iterations as f64));
    Aggregate {
        algorithm: algorithm.to_string(),
        drops: results.len(),
        feasible_drops: feasible.len(),
        outage_rate: if results.is_empty() {
            0.0
        } else {
            1.0 - feasible.len() as f64 / results.len() as f64
        },
        mean_battery_fraction: bf,
        battery_fraction_stderr: bf_se,
        mean_se: se,
        se_stderr: se_se,
        mean_objective: obj,
        objective_stderr: obj_se,
        mean_iterations: its,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub algorithms: Vec<String>,
    /// `results[a][i]` is algorithm `a` on drop `i`.
    pub results: Vec<Vec<DropResult>>,
    pub aggregates: Vec<Aggregate>,
}

impl CampaignResult {
    /// Per-drop rows (`sweep_var = drop`) followed by the aggregates.
    pub fn to_rows(&self) -> Vec<CsvRow> {
        let mut rows = Vec::new();
        for (label, res) in self.algorithms.iter().zip(&self.results) {
            for r in res {
                let i = r.drop_index as f64;
                rows.push(CsvRow::new("drop", i, label, "feasible", f64::from(u8::from(r.feasible)), 0.0));
                if r.feasible {
                    rows.push(CsvRow::new("drop", i, label, "battery_energy", r.objective, 0.0));
                    rows.push(CsvRow::new("drop", i, label, "se_per_user", r.mean_se(), 0.0));
                    rows.push(CsvRow::new("drop", i, label, "battery_fraction", r.mean_battery_fraction(), 0.0));
                    rows.push(CsvRow::new("drop", i, label, "iterations", r.iterations as f64, 0.0));
                }
            }
        }
        for a in &self.aggregates {
            let n = a.drops as f64;
            let label = a.algorithm.as_str();
            rows.push(CsvRow::new("campaign", n, label, "outage_rate", a.outage_rate, (a.outage_rate * (1.0 - a.outage_rate) / n).sqrt()));
            rows.push(CsvRow::new("campaign", n, label, "battery_energy", a.mean_objective, a.objective_stderr));
            rows.push(CsvRow::new("campaign", n, label, "se_per_user", a.mean_se, a.se_stderr));
            rows.push(CsvRow::new("campaign", n, label, "battery_fraction", a.mean_battery_fraction, a.battery_fraction_stderr));
            rows.push(CsvRow::new("campaign", n, label, "iterations", a.mean_iterations, 0.0));
        }
        rows
    }
}

/// Protocols run by a campaign: the proposed scheme plus every configured baseline.
pub fn campaign_protocols(s: &Scenario) -> Vec<Protocol> {
    let mut out = vec![Protocol::Proposed];
    if let Some(b) = &s.baseline {
        out.extend(b.tau_d_grid.iter().map(|&tau_d| Protocol::TimeSwitching { tau_d }));
    }
    out
}

/// Optimizes every protocol on one drop.
pub fn run_drop(s: &Scenario, drop: &DropInputs, index: usize, protocols: &[Protocol]) -> Result<Vec<DropResult>> {
    let params = s.system_params();
    protocols
        .iter()
        .map(|&p| {
            let problem = Problem::new(&params, drop, p)?;
            let out = run(&problem, &s.optimizer)?;
            Ok(DropResult::from_outcome(index, p, &out))
        })
        .collect()
}

/// Maps `f` over drop indices in parallel and returns results in index order.
pub fn par_drops<T: Send>(drops: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..drops).into_par_iter().map(f).collect()
}

pub fn run_campaign(s: &Scenario) -> Result<CampaignResult> {
    s.validate()?;
    let protocols = campaign_protocols(s);
    let per_drop = par_drops(s.drops, |i| run_drop(s, &drop_inputs(s, i)?, i, &protocols))?;
    let mut results = vec![Vec::with_capacity(s.drops); protocols.len()];
    for drop in per_drop {
        for (a, r) in drop.into_iter().enumerate() {
            results[a].push(r);
        }
    }
    let algorithms: Vec<String> = protocols.iter().map(|&p| protocol_label(p)).collect();
    let aggregates = algorithms
        .iter()
        .zip(&results)
        .map(|(a, r)| aggregate(a, r))
        .collect();
    Ok(CampaignResult {
        algorithms,
        results,
        aggregates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Scenario {
        let mut s = Scenario::reference_baseline();
        s.num_aps = 8;
        s.num_users = 2;
        s.drops = 3;
        s
    }

    #[test]
    fn zero_rate_campaign() {
        let mut s = small();
        s.rate_th = 0.0;
        s.drops = 1;
        let c = run_campaign(&s).unwrap();
        for agg in &c.aggregates {
            assert_eq!(agg.outage_rate, 0.0);
            assert_eq!(agg.mean_objective, 0.0);
        }
    }

    #[test]
    fn drops_are_reproducible_and_distinct() {
        let s = small();
        let a = drop_inputs(&s, 0).unwrap();
        let b = drop_inputs(&s, 0).unwrap();
        let c = drop_inputs(&s, 1).unwrap();
        assert_eq!(a.stats, b.stats);
        assert_ne!(a.stats, c.stats);
    }

    #[test]
    fn aggregate_skips_infeasible_drops() {
        let mk = |feasible: bool, se: f64| DropResult {
            drop_index: 0,
            algorithm: "x".into(),
            feasible,
            objective: 1.0,
            iterations: 1,
            converged: true,
            monotone: true,
            anomaly: false,
            per_user_se: vec![se],
            battery_fraction: vec![0.5],
            trace: vec![1.0],
            max_lp_violation: 0.0,
        };
        let agg = aggregate("x", &[mk(true, 2.0), mk(false, 100.0), mk(true, 4.0)]);
        assert!((agg.outage_rate - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(agg.mean_se, 3.0);
    }
}
