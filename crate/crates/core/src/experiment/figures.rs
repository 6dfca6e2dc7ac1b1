//! Drivers for the convergence, residual-SI and outage experiments.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::experiment::campaign::{
    aggregate, drop_inputs, mean_stderr, par_drops, protocol_label, with_rsi_db, DropResult,
};
use crate::experiment::output::CsvRow;
use crate::experiment::scenario::Scenario;
use crate::optimizer::{first_iteration_feasible, run, Problem, Protocol};

fn optimize_one(s: &Scenario, i: usize, rsi_db: f64, mu: f64, protocol: Protocol) -> Result<DropResult> {
    let drop = with_rsi_db(drop_inputs(s, i)?, rsi_db);
    let mut params = s.system_params();
    params.mu = mu;
    let problem = Problem::new(&params, &drop, protocol)?;
    Ok(DropResult::from_outcome(i, protocol, &run(&problem, &s.optimizer)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    pub mu_list: Vec<f64>,
    /// `results[u][i]`: proposed scheme at `mu_list[u]` on drop `i`.
    pub results: Vec<Vec<DropResult>>,
}

pub fn experiment_convergence(s: &Scenario, mu_list: &[f64]) -> Result<ConvergenceResult> {
    s.validate()?;
    let per_drop = par_drops(s.drops, |i| {
        mu_list
            .iter()
            .map(|&mu| optimize_one(s, i, s.rsi_db, mu, Protocol::Proposed))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(ConvergenceResult {
        mu_list: mu_list.to_vec(),
        results: transpose(per_drop, mu_list.len()),
    })
}

fn transpose<T>(per_drop: Vec<Vec<T>>, width: usize) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = (0..width).map(|_| Vec::with_capacity(per_drop.len())).collect();
    for row in per_drop {
        for (a, v) in row.into_iter().enumerate() {
            out[a].push(v);
        }
    }
    out
}

impl ConvergenceResult {
    pub fn to_rows(&self) -> Vec<CsvRow> {
        let mut rows = Vec::new();
        for (u, &mu) in self.mu_list.iter().enumerate() {
            let feasible: Vec<&DropResult> = self.results[u].iter().filter(|r| r.feasible).collect();
            let label = format!("proposed(mu={mu})");
            let len = feasible.iter().map(|r| r.trace.len()).max().unwrap_or(0);
            // shorter traces are held at their converged value
            for it in 0..len {
                let vals: Vec<f64> = feasible
                    .iter()
                    .map(|r| r.trace.get(it).or(r.trace.last()).copied().unwrap_or(f64::NAN))
                    .collect();
                let (m, se) = mean_stderr(&vals);
                rows.push(CsvRow::new("iteration", (it + 1) as f64, &label, "objective", m, se));
            }
        }
        for (u, &mu) in self.mu_list.iter().enumerate() {
            let agg = aggregate("proposed", &self.results[u]);
            let n = agg.drops as f64;
            let rate = |f: &dyn Fn(&DropResult) -> bool| {
                let c = self.results[u].iter().filter(|r| r.feasible && f(r)).count() as f64;
                c / (agg.feasible_drops.max(1) as f64)
            };
            rows.push(CsvRow::new("mu", mu, "proposed", "converged_objective", agg.mean_objective, agg.objective_stderr));
            let its: Vec<f64> = self.results[u].iter().filter(|r| r.feasible).map(|r| r.iterations as f64).collect();
            let (mi, si) = mean_stderr(&its);
            rows.push(CsvRow::new("mu", mu, "proposed", "iterations", mi, si));
            rows.push(CsvRow::new(
                "mu",
                mu,
                "proposed",
                "outage_rate",
                agg.outage_rate,
                (agg.outage_rate * (1.0 - agg.outage_rate) / n).sqrt(),
            ));
            rows.push(CsvRow::new("mu", mu, "proposed", "converged_fraction", rate(&|r| r.converged), 0.0));
            rows.push(CsvRow::new("mu", mu, "proposed", "monotone_fraction", rate(&|r| r.monotone), 0.0));
        }
        rows
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RsiSweepResult {
    pub rsi_grid_db: Vec<f64>,
    pub ts_tau_d: usize,
    pub rate_th: f64,
    /// `proposed[r][i]`, `ts[r][i]`: residual SI `rsi_grid_db[r]`, drop `i`.
    pub proposed: Vec<Vec<DropResult>>,
    pub ts: Vec<Vec<DropResult>>,
}

pub fn experiment_rsi_sweep(s: &Scenario, rsi_grid_db: &[f64]) -> Result<RsiSweepResult> {
    s.validate()?;
    let tau_d = s.baseline_or_default().reference_tau_d;
    let mut sc = s.clone();
    sc.rate_th = s.sweeps.rsi_sweep_rate;
    let per_drop = par_drops(s.drops, |i| {
        rsi_grid_db
            .iter()
            .map(|&r| {
                Ok((
                    optimize_one(&sc, i, r, sc.mu, Protocol::Proposed)?,
                    optimize_one(&sc, i, r, sc.mu, Protocol::TimeSwitching { tau_d })?,
                ))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let pairs = transpose(per_drop, rsi_grid_db.len());
    let (proposed, ts) = pairs.into_iter().map(|col| col.into_iter().unzip()).unzip();
    Ok(RsiSweepResult {
        rsi_grid_db: rsi_grid_db.to_vec(),
        ts_tau_d: tau_d,
        rate_th: sc.rate_th,
        proposed,
        ts,
    })
}

impl RsiSweepResult {
    pub fn ts_label(&self) -> String {
        protocol_label(Protocol::TimeSwitching { tau_d: self.ts_tau_d })
    }

    /// Largest grid point up to which the proposed battery fraction stays at
    /// or below the baseline's, and the next grid point (where it exceeds).
    pub fn crossover_bracket(&self) -> (Option<f64>, Option<f64>) {
        let mut below = None;
        for (r, &db) in self.rsi_grid_db.iter().enumerate() {
            let p = aggregate("p", &self.proposed[r]).mean_battery_fraction;
            let t = aggregate("t", &self.ts[r]).mean_battery_fraction;
            if p <= t {
                below = Some(db);
            } else {
                return (below, Some(db));
            }
        }
        (below, None)
    }

    pub fn to_rows(&self) -> Vec<CsvRow> {
        let mut rows = Vec::new();
        let ts_label = self.ts_label();
        for (r, &db) in self.rsi_grid_db.iter().enumerate() {
            for (label, res) in [("proposed", &self.proposed[r]), (ts_label.as_str(), &self.ts[r])] {
                let agg = aggregate(label, res);
                let n = agg.drops as f64;
                rows.push(CsvRow::new("rsi_db", db, label, "battery_fraction", agg.mean_battery_fraction, agg.battery_fraction_stderr));
                rows.push(CsvRow::new("rsi_db", db, label, "se_per_user", agg.mean_se, agg.se_stderr));
                rows.push(CsvRow::new("rsi_db", db, label, "battery_energy", agg.mean_objective, agg.objective_stderr));
                rows.push(CsvRow::new(
                    "rsi_db",
                    db,
                    label,
                    "outage_rate",
                    agg.outage_rate,
                    (agg.outage_rate * (1.0 - agg.outage_rate) / n).sqrt(),
                ));
            }
        }
        let (below, above) = self.crossover_bracket();
        rows.push(CsvRow::new("crossover", 0.0, "proposed", "last_rsi_db_at_or_below_ts", below.unwrap_or(f64::NAN), 0.0));
        rows.push(CsvRow::new("crossover", 1.0, "proposed", "first_rsi_db_above_ts", above.unwrap_or(f64::NAN), 0.0));
        rows
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutageResult {
    pub rate_grid: Vec<f64>,
    pub rsi_db: f64,
    pub algorithms: Vec<String>,
    /// `feasible[a][r][i]`: algorithm `a`, rate `rate_grid[r]`, drop `i`.
    pub feasible: Vec<Vec<Vec<bool>>>,
}

pub fn experiment_outage(s: &Scenario, rate_grid: &[f64], ts_tau_d_grid: &[usize]) -> Result<OutageResult> {
    s.validate()?;
    let mut protocols = vec![Protocol::Proposed];
    protocols.extend(ts_tau_d_grid.iter().map(|&tau_d| Protocol::TimeSwitching { tau_d }));
    let rsi_db = s.sweeps.outage_rsi_db;
    let per_drop = par_drops(s.drops, |i| {
        let drop = with_rsi_db(drop_inputs(s, i)?, rsi_db);
        protocols
            .iter()
            .map(|&p| {
                rate_grid
                    .iter()
                    .map(|&rate| {
                        let mut params = s.system_params();
                        params.rate_th = rate;
                        first_iteration_feasible(&Problem::new(&params, &drop, p)?, &s.optimizer)
                    })
                    .collect::<Result<Vec<bool>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut feasible = vec![vec![Vec::with_capacity(s.drops); rate_grid.len()]; protocols.len()];
    for drop in per_drop {
        for (a, per_rate) in drop.into_iter().enumerate() {
            for (r, f) in per_rate.into_iter().enumerate() {
                feasible[a][r].push(f);
            }
        }
    }
    Ok(OutageResult {
        rate_grid: rate_grid.to_vec(),
        rsi_db,
        algorithms: protocols.iter().map(|&p| protocol_label(p)).collect(),
        feasible,
    })
}

impl OutageResult {
    pub fn outage_rate(&self, a: usize, r: usize) -> f64 {
        let v = &self.feasible[a][r];
        v.iter().filter(|f| !**f).count() as f64 / v.len().max(1) as f64
    }

    pub fn to_rows(&self) -> Vec<CsvRow> {
        let mut rows = Vec::new();
        for (a, label) in self.algorithms.iter().enumerate() {
            for (r, &rate) in self.rate_grid.iter().enumerate() {
                let p = self.outage_rate(a, r);
                let n = self.feasible[a][r].len().max(1) as f64;
                rows.push(CsvRow::new("rate_th", rate, label, "outage_rate", p, (p * (1.0 - p) / n).sqrt()));
            }
        }
        rows
    }
}
