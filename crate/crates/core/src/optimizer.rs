//! Battery-energy minimization by alternating LP power allocation and
//! receive-filter updates.
//!
//! For fixed filters every constraint is linear in `(p^(d), η^(e), η^(b))`:
//! the SINR requirement is written as
//! `(1+Γ_th) η_k |α^H B_k|² - Γ_th Σ_j η_j α^H C_{k,j} α - Γ_th Σ p α^H F α ≥ Γ_th α^H D_k α`,
//! the harvest budget as `τ_u η^(e)_k ≤ E^(d)_k` with the η-dependent part of
//! `E^(d)` moved to the left, and the per-AP budget as `Σ_k γ_{m,k} p_{m,k} ≤ P^max`.
//! With powers fixed, `α_k ∝ Σ_k⁻¹ B_k` maximizes user `k`'s SINR, so each
//! outer iteration keeps the previous allocation feasible and the battery
//! draw can only go down.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::closedform::{
    harvest_coefficients, harvested_energy_direct, inner, quad_form, sinr_terms, sinr_threshold,
    spectral_efficiency, stats_matrices, HarvestCoefficients, StatsMatrices,
};
use crate::error::{Error, Result};
use crate::estimation::{EstimationStats, PilotAssignment};
use crate::grid::Grid;
use crate::lpsolver::{self, LinearProgram, LpStatus, Relation, Tolerances};
use crate::propagation::ChannelStats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// `p^(d)_{m,k}`, watts.
    pub p_dl: Grid<f64>,
    /// Power drawn from harvested energy, watts.
    pub eta_e: Vec<f64>,
    /// Power drawn from the battery, watts.
    pub eta_b: Vec<f64>,
    pub alpha: Vec<DVector<Complex64>>,
}

impl Allocation {
    /// All-zero powers and all-ones filters.
    pub fn zeros(num_aps: usize, num_users: usize) -> Self {
        Allocation {
            p_dl: Grid::filled(num_aps, num_users, 0.0),
            eta_e: vec![0.0; num_users],
            eta_b: vec![0.0; num_users],
            alpha: ones_filters(num_aps, num_users),
        }
    }

    /// Total uplink power `η_k = η^(e)_k + η^(b)_k`.
    pub fn eta(&self) -> Vec<f64> {
        self.eta_e.iter().zip(&self.eta_b).map(|(e, b)| e + b).collect()
    }
}

pub fn ones_filters(num_aps: usize, num_users: usize) -> Vec<DVector<Complex64>> {
    vec![DVector::from_element(num_aps, Complex64::new(1.0, 0.0)); num_users]
}

/// Operating point shared by every drop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub tau_c: usize,
    pub tau_p: usize,
    /// Energy-harvesting efficiency.
    pub mu: f64,
    /// Battery budget per user, joules.
    pub e_max: f64,
    /// Per-AP power budget, watts.
    pub p_max: f64,
    /// Rate requirement per user, bits/s/Hz.
    pub rate_th: f64,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        if self.tau_p == 0 || self.tau_p >= self.tau_c {
            return Err(Error::param(format!(
                "need 0 < tau_p < tau_c, got tau_p={} tau_c={}",
                self.tau_p, self.tau_c
            )));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::param(format!("mu must lie in [0, 1], got {}", self.mu)));
        }
        if !(self.e_max >= 0.0) || !(self.p_max > 0.0) || !(self.rate_th >= 0.0) {
            return Err(Error::param("e_max, p_max and rate_th must be non-negative (p_max positive)"));
        }
        Ok(())
    }
}

/// Second-order inputs for one drop.
#[derive(Clone, Debug)]
pub struct DropInputs {
    pub stats: ChannelStats,
    pub pilots: PilotAssignment,
    pub est: EstimationStats,
    /// Residual self-interference level per AP, linear.
    pub rsi: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    /// Users harvest during the whole uplink phase and recycle their own signal.
    Proposed,
    /// `τ_d` samples reserved for harvesting, APs silent during uplink.
    TimeSwitching { tau_d: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Relative objective change that counts as converged.
    pub eps_conv: f64,
    /// Relative slack allowed before a trace counts as non-monotone.
    pub eps_mono: f64,
    /// Relative margin added to `Γ_th` inside the LP.
    pub sinr_margin: f64,
    /// Secondary objective over the set of battery-optimal allocations.
    pub tie_break: TieBreak,
    pub tolerances: Tolerances,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: 50,
            eps_conv: 1e-5,
            eps_mono: 1e-7,
            sinr_margin: 1e-9,
            tie_break: TieBreak::MaxMinSinr,
            tolerances: Tolerances::default(),
        }
    }
}

/// How to pick among allocations with the same minimal battery draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Keep the first optimal vertex.
    None,
    /// Maximize the harvested energy spent on transmission.
    SpendHarvest,
    /// Maximize the summed SINR-row slack, each row divided by its noise term.
    SinrSlack,
    /// Maximize the smallest user SINR, by a Dinkelbach iteration on a common threshold.
    MaxMinSinr,
}

/// Everything the LP and the filter update need for one drop and protocol.
#[derive(Clone, Debug)]
pub struct Problem {
    pub protocol: Protocol,
    pub matrices: StatsMatrices,
    pub harvest: HarvestCoefficients,
    pub gamma: Grid<f64>,
    pub tau_u: usize,
    pub tau_c: usize,
    pub sinr_th: f64,
    pub e_max: f64,
    pub p_max: f64,
}

impl Problem {
    pub fn new(params: &SystemParams, drop: &DropInputs, protocol: Protocol) -> Result<Self> {
        params.validate()?;
        let tau_ul = params.tau_c - params.tau_p;
        let (tau_u, tau_harvest) = match protocol {
            Protocol::Proposed => (tau_ul, tau_ul),
            Protocol::TimeSwitching { tau_d } => {
                if tau_d >= tau_ul {
                    return Err(Error::param(format!(
                        "tau_d={tau_d} leaves no uplink samples (tau_c - tau_p = {tau_ul})"
                    )));
                }
                (tau_ul - tau_d, tau_d)
            }
        };
        let mut matrices = stats_matrices(&drop.est, &drop.stats, &drop.pilots, &drop.rsi)?;
        let mut harvest = harvest_coefficients(
            &drop.est,
            &drop.stats,
            &drop.pilots,
            params.mu,
            tau_harvest as f64,
        );
        if let Protocol::TimeSwitching { .. } = protocol {
            matrices = matrices.without_self_interference();
            harvest = harvest.without_user_terms();
        }
        Ok(Problem {
            protocol,
            matrices,
            harvest,
            gamma: drop.est.gamma.clone(),
            tau_u,
            tau_c: params.tau_c,
            sinr_th: sinr_threshold(params.rate_th, tau_u, params.tau_c),
            e_max: params.e_max,
            p_max: params.p_max,
        })
    }

    pub fn num_aps(&self) -> usize {
        self.matrices.num_aps
    }

    pub fn num_users(&self) -> usize {
        self.matrices.num_users
    }

    pub fn num_vars(&self) -> usize {
        self.num_aps() * self.num_users() + 2 * self.num_users()
    }

    fn p_var(&self, m: usize, k: usize) -> usize {
        m * self.num_users() + k
    }

    fn eta_e_var(&self, k: usize) -> usize {
        self.num_aps() * self.num_users() + k
    }

    fn eta_b_var(&self, k: usize) -> usize {
        self.num_aps() * self.num_users() + self.num_users() + k
    }

    fn allocation_from(&self, x: &[f64], alpha: &[DVector<Complex64>]) -> Allocation {
        let (mc, kc) = (self.num_aps(), self.num_users());
        Allocation {
            p_dl: Grid::from_fn(mc, kc, |m, k| x[self.p_var(m, k)]),
            eta_e: (0..kc).map(|k| x[self.eta_e_var(k)]).collect(),
            eta_b: (0..kc).map(|k| x[self.eta_b_var(k)]).collect(),
            alpha: alpha.to_vec(),
        }
    }

    pub fn sinr(&self, alloc: &Allocation, k: usize) -> Result<f64> {
        let eta = alloc.eta();
        Ok(sinr_terms(&self.matrices, &alloc.p_dl, &eta, &alloc.alpha[k], k)?.sinr())
    }

    pub fn spectral_efficiency(&self, alloc: &Allocation) -> Result<Vec<f64>> {
        (0..self.num_users())
            .map(|k| Ok(spectral_efficiency(self.sinr(alloc, k)?, self.tau_u, self.tau_c)))
            .collect()
    }
}

/// Battery-draw LP for fixed filters, variables ordered
/// `[p_{0,0}, .., p_{M-1,K-1}, η^(e)_0.., η^(b)_0..]`.
pub fn build_lp(problem: &Problem, alpha: &[DVector<Complex64>], sinr_margin: f64) -> Result<LinearProgram> {
    build_lp_at(problem, alpha, problem.sinr_th * (1.0 + sinr_margin))
}

/// Same LP with every user held to the SINR threshold `gamma_th`.
pub fn build_lp_at(problem: &Problem, alpha: &[DVector<Complex64>], gamma_th: f64) -> Result<LinearProgram> {
    let (mc, kc) = (problem.num_aps(), problem.num_users());
    if alpha.len() != kc {
        return Err(Error::param("one receive filter per user required"));
    }
    let n = problem.num_vars();
    let mut lp = LinearProgram::new(n);
    for m in 0..mc {
        for k in 0..kc {
            lp.names[problem.p_var(m, k)] = format!("p_{m}_{k}");
        }
    }
    for k in 0..kc {
        lp.names[problem.eta_e_var(k)] = format!("eta_e_{k}");
        lp.names[problem.eta_b_var(k)] = format!("eta_b_{k}");
        lp.objective[problem.eta_b_var(k)] = problem.tau_u as f64;
        lp.upper_bounds[problem.eta_b_var(k)] = problem.e_max / problem.tau_u as f64;
    }

    for k in 0..kc {
        if alpha[k].iter().all(|x| x.norm_sqr() == 0.0) {
            return Err(Error::param(format!("receive filter of user {k} is zero")));
        }
        if gamma_th == 0.0 {
            continue;
        }
        let (row, rhs) = sinr_row(problem, &alpha[k], k, gamma_th);
        lp.add_constraint(row, Relation::Ge, rhs);
    }

    let h = &problem.harvest;
    for k in 0..kc {
        let mut row = vec![0.0; n];
        for m in 0..mc {
            for j in 0..kc {
                row[problem.p_var(m, j)] = -h.ap_coefficient(k, m, j);
            }
        }
        for j in 0..kc {
            let u = h.from_users[(k, j)];
            row[problem.eta_e_var(j)] -= u;
            row[problem.eta_b_var(j)] -= u;
        }
        row[problem.eta_e_var(k)] += problem.tau_u as f64;
        lp.add_constraint(row, Relation::Le, 0.0);
    }

    for m in 0..mc {
        let mut row = vec![0.0; n];
        for k in 0..kc {
            row[problem.p_var(m, k)] = problem.gamma[(m, k)];
        }
        lp.add_constraint(row, Relation::Le, problem.p_max);
    }
    Ok(lp)
}

/// Linear form of `Γ_k(α) ≥ gamma`: `row · x ≥ rhs`.
fn sinr_row(problem: &Problem, a: &DVector<Complex64>, k: usize, gamma: f64) -> (Vec<f64>, f64) {
    let (mc, kc) = (problem.num_aps(), problem.num_users());
    let weighted = |diag: &[f64]| -> f64 { a.iter().zip(diag).map(|(x, d)| x.norm_sqr() * d).sum() };
    let mut row = vec![0.0; problem.num_vars()];
    let signal = inner(a, &problem.matrices.b[k]).norm_sqr();
    for j in 0..kc {
        let c = quad_form(problem.matrices.c(k, j), a);
        let coef = if j == k { (1.0 + gamma) * signal - gamma * c } else { -gamma * c };
        row[problem.eta_e_var(j)] = coef;
        row[problem.eta_b_var(j)] = coef;
    }
    for q in 0..mc {
        for j in 0..kc {
            row[problem.p_var(q, j)] = -gamma * weighted(problem.matrices.f_diag(k, q, j));
        }
    }
    (row, gamma * weighted(problem.matrices.d[k].as_slice()))
}

fn tie_break_objective(problem: &Problem, alpha: &[DVector<Complex64>], rule: TieBreak) -> Option<Vec<f64>> {
    let n = problem.num_vars();
    match rule {
        TieBreak::None | TieBreak::MaxMinSinr => None,
        TieBreak::SpendHarvest => {
            let mut c = vec![0.0; n];
            for k in 0..problem.num_users() {
                c[problem.eta_e_var(k)] = -(problem.tau_u as f64);
            }
            Some(c)
        }
        TieBreak::SinrSlack => {
            let gamma = if problem.sinr_th > 0.0 { problem.sinr_th } else { 1.0 };
            let mut c = vec![0.0; n];
            for (k, a) in alpha.iter().enumerate() {
                let (row, rhs) = sinr_row(problem, a, k, gamma);
                if rhs <= 0.0 {
                    continue;
                }
                for (ci, ri) in c.iter_mut().zip(&row) {
                    *ci -= ri / rhs;
                }
            }
            Some(c)
        }
    }
}

/// Per-user `(signal, interference)` linear forms, the noise term and the
/// SINR at `x` under filters `alpha`.
fn sinr_parts(problem: &Problem, alpha: &[DVector<Complex64>], x: &[f64]) -> Vec<(Vec<f64>, f64, f64)> {
    let dot = |r: &[f64]| r.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    alpha
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let (row0, _) = sinr_row(problem, a, k, 0.0);
            let (row1, noise) = sinr_row(problem, a, k, 1.0);
            let signal = dot(&row0);
            // row1 = 2 signal - (signal + interference)
            let interference = 2.0 * signal - dot(&row1) - signal;
            let sinr = signal / (interference.max(0.0) + noise);
            (row0, noise, sinr)
        })
        .collect()
}

/// Dinkelbach iteration for the largest common SINR reachable with battery
/// draw at most `cap`, started from the feasible point `x0`.
fn max_min_sinr(
    problem: &Problem,
    alpha: &[DVector<Complex64>],
    battery: &[f64],
    cap: f64,
    x0: &[f64],
    config: &OptimizerConfig,
) -> Result<(f64, Vec<f64>)> {
    let n = problem.num_vars();
    let kc = problem.num_users();
    let min_sinr = |x: &[f64]| sinr_parts(problem, alpha, x).iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
    let mut x = x0.to_vec();
    let mut t = min_sinr(&x).max(0.0);
    for _ in 0..30 {
        let mut lp = LinearProgram::new(n + 1);
        lp.upper_bounds[..n].copy_from_slice(&build_lp_at(problem, alpha, 0.0)?.upper_bounds);
        lp.objective[n] = -1.0;
        lp.names[n] = "slack".to_string();
        for (k, a) in alpha.iter().enumerate() {
            let (mut row, rhs) = sinr_row(problem, a, k, t);
            let (_, noise) = sinr_row(problem, a, k, 1.0);
            row.push(-noise);
            lp.add_constraint(row, Relation::Ge, rhs);
        }
        for c in build_lp_at(problem, alpha, 0.0)?.constraints {
            let mut coeffs = c.coeffs;
            coeffs.push(0.0);
            lp.add_constraint(coeffs, c.relation, c.rhs);
        }
        if cap <= 0.0 {
            for k in 0..kc {
                lp.upper_bounds[problem.eta_b_var(k)] = 0.0;
            }
        } else {
            let mut row = battery.to_vec();
            row.push(0.0);
            lp.add_constraint(row, Relation::Le, cap);
        }
        let sol = lpsolver::solve(&lp, &config.tolerances)?;
        if sol.status != LpStatus::Optimal {
            log::debug!("max-min step returned {:?} at t={t:e}", sol.status);
            break;
        }
        let cand = sol.x[..n].to_vec();
        let t_new = min_sinr(&cand);
        if !(t_new > t) {
            break;
        }
        let gain = t_new - t;
        x = cand;
        t = t_new;
        if gain <= 1e-9 * t {
            break;
        }
    }
    Ok((t, x))
}

/// `Σ_k = Σ_j η_j C_{k,j} + Σ_{q,j} p_{q,j} F_{k,q,j} + D_k`.
pub fn interference_matrix(problem: &Problem, alloc: &Allocation, k: usize) -> DMatrix<Complex64> {
    let mc = problem.num_aps();
    let eta = alloc.eta();
    let mut sigma = DMatrix::<Complex64>::zeros(mc, mc);
    for (j, &e) in eta.iter().enumerate() {
        if e != 0.0 {
            sigma += problem.matrices.c(k, j) * Complex64::new(e, 0.0);
        }
    }
    let f = problem.matrices.aggregate_f(k, &alloc.p_dl);
    for m in 0..mc {
        sigma[(m, m)] += Complex64::new(f[m] + problem.matrices.d[k][m], 0.0);
    }
    sigma
}

/// Generalized-Rayleigh-quotient filters `α_k = Σ_k⁻¹ B_k / ‖Σ_k⁻¹ B_k‖`.
pub fn update_filters(problem: &Problem, alloc: &Allocation) -> Result<Vec<DVector<Complex64>>> {
    (0..problem.num_users())
        .map(|k| {
            let sigma = interference_matrix(problem, alloc, k);
            let scale = (0..sigma.nrows()).map(|m| sigma[(m, m)].re).fold(0.0, f64::max);
            if !(scale > 0.0) {
                return Err(Error::Degenerate(format!("interference matrix of user {k} is zero")));
            }
            let chol = (sigma / Complex64::new(scale, 0.0))
                .cholesky()
                .ok_or_else(|| Error::Degenerate(format!("interference matrix of user {k} is singular")))?;
            let a = chol.solve(&problem.matrices.b[k]);
            let norm = a.norm();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::Degenerate(format!("user {k} has no useful channel estimate")));
            }
            Ok(a / Complex64::new(norm, 0.0))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOutcome {
    pub feasible: bool,
    pub allocation: Allocation,
    /// Battery energy `Σ_k τ_u η^(b)_k` after each LP.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub per_user_se: Vec<f64>,
    pub battery_fraction: Vec<f64>,
    pub converged: bool,
    /// Trace non-increasing within the configured relative slack.
    pub monotone: bool,
    /// An LP became infeasible after a feasible iteration.
    pub anomaly: bool,
    /// Worst relative constraint violation over all LP solutions.
    pub max_lp_violation: f64,
}

impl OptimizerOutcome {
    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }

    fn infeasible(problem: &Problem, max_lp_violation: f64) -> Self {
        let kc = problem.num_users();
        OptimizerOutcome {
            feasible: false,
            allocation: Allocation::zeros(problem.num_aps(), kc),
            objective_trace: Vec::new(),
            iterations: 1,
            per_user_se: vec![0.0; kc],
            battery_fraction: vec![0.0; kc],
            converged: false,
            monotone: true,
            anomaly: false,
            max_lp_violation,
        }
    }
}

pub fn battery_fraction(alloc: &Allocation) -> Vec<f64> {
    alloc
        .eta_e
        .iter()
        .zip(&alloc.eta_b)
        .map(|(&e, &b)| if e + b > 0.0 { b / (e + b) } else { 0.0 })
        .collect()
}

struct LpStep {
    status: LpStatus,
    x: Vec<f64>,
    objective: f64,
    /// Tie-break value at `x` (larger is better), when a tie-break ran.
    secondary: Option<f64>,
    violation: f64,
}

fn solve_step(problem: &Problem, alpha: &[DVector<Complex64>], config: &OptimizerConfig) -> Result<LpStep> {
    let lp = build_lp(problem, alpha, config.sinr_margin)?;
    let sol = lpsolver::solve(&lp, &config.tolerances)?;
    if sol.status != LpStatus::Optimal {
        return Ok(LpStep {
            status: sol.status,
            x: sol.x,
            objective: f64::NAN,
            secondary: None,
            violation: 0.0,
        });
    }
    let mut x = sol.x;
    let objective = sol.objective_value;
    let mut violation = lp.max_violation(&x);
    let mut secondary = None;
    if let Some(c) = tie_break_objective(problem, alpha, config.tie_break) {
        // cap the battery draw at its optimum and re-optimize inside that face
        let mut second = lp.clone();
        let cap = objective.max(0.0) * (1.0 + 1e-9);
        second.add_constraint(lp.objective.clone(), Relation::Le, cap);
        second.objective = c.clone();
        let s2 = lpsolver::solve(&second, &config.tolerances)?;
        if s2.status == LpStatus::Optimal {
            let v2 = lp.max_violation(&s2.x);
            if v2 <= config.tolerances.feasibility {
                x = s2.x;
                violation = v2;
            }
            secondary = Some(-c.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>());
        } else {
            log::debug!("tie-break stage returned {:?}; keeping stage-one point", s2.status);
        }
    }
    if config.tie_break == TieBreak::MaxMinSinr {
        let cap = objective.max(0.0) * (1.0 + 1e-9);
        let (t, x2) = max_min_sinr(problem, alpha, &lp.objective, cap, &x, config)?;
        let v2 = lp.max_violation(&x2);
        if v2 <= config.tolerances.feasibility {
            x = x2;
            violation = v2;
        }
        secondary = Some(t);
    }
    let objective = lp.objective_value(&x);
    Ok(LpStep {
        status: LpStatus::Optimal,
        x,
        objective,
        secondary,
        violation,
    })
}

/// Alternating LP / filter loop from all-ones filters.
pub fn run(problem: &Problem, config: &OptimizerConfig) -> Result<OptimizerOutcome> {
    let (mc, kc) = (problem.num_aps(), problem.num_users());
    let mut alpha = ones_filters(mc, kc);
    let mut trace: Vec<f64> = Vec::new();
    let mut best: Option<Allocation> = None;
    let mut converged = false;
    let mut monotone = true;
    let mut anomaly = false;
    let mut last_secondary: Option<f64> = None;
    let mut max_violation: f64 = 0.0;
    let mut iterations = 0;
    let zero_level = 1e-12 * kc as f64 * problem.e_max.max(f64::MIN_POSITIVE);

    while iterations < config.max_iterations {
        iterations += 1;
        let step = solve_step(problem, &alpha, config)?;
        if step.status != LpStatus::Optimal {
            if best.is_none() {
                log::debug!("first LP returned {:?}: outage", step.status);
                return Ok(OptimizerOutcome::infeasible(problem, max_violation));
            }
            log::warn!("LP returned {:?} after a feasible iteration", step.status);
            anomaly = true;
            iterations -= 1;
            break;
        }
        max_violation = max_violation.max(step.violation);
        let obj = step.objective;
        if let Some(&prev) = trace.last() {
            if obj > prev + config.eps_mono * prev.abs().max(zero_level) {
                log::warn!("objective rose from {prev:e} to {obj:e} at iteration {iterations}");
                monotone = false;
            }
        }
        let mut alloc = problem.allocation_from(&step.x, &alpha);
        alloc.alpha = update_filters(problem, &alloc)?;
        alpha = alloc.alpha.clone();
        let settled = |prev: f64, cur: f64| (cur - prev).abs() <= config.eps_conv * prev.abs().max(cur.abs());
        let primary_done = match trace.last() {
            _ if obj <= zero_level => true,
            Some(&prev) => settled(prev, obj),
            None => false,
        };
        // the tie-break point also depends on the filters, so it has to settle too
        let done = primary_done
            && match (step.secondary, last_secondary) {
                (None, _) => true,
                (Some(cur), Some(prev)) => settled(prev, cur),
                (Some(_), None) => false,
            };
        last_secondary = step.secondary;
        trace.push(obj);
        best = Some(alloc);
        if done {
            converged = true;
            break;
        }
    }
    let allocation = best.ok_or_else(|| Error::Internal("optimizer finished without an iterate".into()))?;
    Ok(OptimizerOutcome {
        feasible: true,
        per_user_se: problem.spectral_efficiency(&allocation)?,
        battery_fraction: battery_fraction(&allocation),
        allocation,
        objective_trace: trace,
        iterations,
        converged,
        monotone,
        anomaly,
        max_lp_violation: max_violation,
    })
}

pub fn optimize(params: &SystemParams, drop: &DropInputs, config: &OptimizerConfig) -> Result<OptimizerOutcome> {
    run(&Problem::new(params, drop, Protocol::Proposed)?, config)
}

pub fn optimize_ts_baseline(
    params: &SystemParams,
    drop: &DropInputs,
    tau_d: usize,
    config: &OptimizerConfig,
) -> Result<OptimizerOutcome> {
    run(&Problem::new(params, drop, Protocol::TimeSwitching { tau_d })?, config)
}

/// Outage test: is the first LP (all-ones filters) feasible?
pub fn first_iteration_feasible(problem: &Problem, config: &OptimizerConfig) -> Result<bool> {
    let lp = build_lp(problem, &ones_filters(problem.num_aps(), problem.num_users()), config.sinr_margin)?;
    Ok(lpsolver::solve(&lp, &config.tolerances)?.status == LpStatus::Optimal)
}

/// Worst violation of each constraint family, evaluated directly from the
/// closed forms rather than from LP rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    /// `max_k (R_th - R_k)`, bits/s/Hz.
    pub rate_shortfall: f64,
    /// `max_k (τ_u η^(e)_k - E^(d)_k) / max(E^(d)_k, τ_u η^(e)_k)`.
    pub harvest_excess: f64,
    /// `max_k (τ_u η^(b)_k - E^max) / E^max`.
    pub battery_excess: f64,
    /// `max_m (Σ_k γ p - P^max) / P^max`.
    pub power_excess: f64,
    pub min_power: f64,
}

pub fn verify_outcome(
    params: &SystemParams,
    drop: &DropInputs,
    problem: &Problem,
    alloc: &Allocation,
) -> Result<ConstraintCheck> {
    let (mc, kc) = (problem.num_aps(), problem.num_users());
    let eta = alloc.eta();
    let tau_u = problem.tau_u as f64;
    let (eta_users, stats) = match problem.protocol {
        Protocol::Proposed => (eta.clone(), drop.stats.clone()),
        Protocol::TimeSwitching { .. } => (vec![0.0; kc], drop.stats.clone()),
    };
    let energy = harvested_energy_direct(
        &drop.est,
        &stats,
        &drop.pilots,
        params.mu,
        problem.harvest.tau_harvest,
        &alloc.p_dl,
        &eta_users,
    );
    let se = problem.spectral_efficiency(alloc)?;
    let mut check = ConstraintCheck {
        rate_shortfall: f64::NEG_INFINITY,
        harvest_excess: f64::NEG_INFINITY,
        battery_excess: f64::NEG_INFINITY,
        power_excess: f64::NEG_INFINITY,
        min_power: f64::INFINITY,
    };
    for k in 0..kc {
        check.rate_shortfall = check.rate_shortfall.max(params.rate_th - se[k]);
        let used = tau_u * alloc.eta_e[k];
        let scale = energy[k].max(used).max(f64::MIN_POSITIVE);
        check.harvest_excess = check.harvest_excess.max((used - energy[k]) / scale);
        let battery = tau_u * alloc.eta_b[k];
        check.battery_excess = check
            .battery_excess
            .max((battery - params.e_max) / params.e_max.max(f64::MIN_POSITIVE));
        check.min_power = check.min_power.min(alloc.eta_e[k]).min(alloc.eta_b[k]);
    }
    for m in 0..mc {
        let used: f64 = (0..kc).map(|k| problem.gamma[(m, k)] * alloc.p_dl[(m, k)]).sum();
        check.power_excess = check.power_excess.max((used - params.p_max) / params.p_max);
        for k in 0..kc {
            check.min_power = check.min_power.min(alloc.p_dl[(m, k)]);
        }
    }
    Ok(check)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::compute_estimation_stats;
    use crate::propagation::LinkStats;
    use rand::Rng;

    fn instance(seed: u64, m: usize, k: usize, pilots: Vec<usize>, tau_p: usize, rsi: f64) -> DropInputs {
        let mut rng = crate::rng::seeded(seed);
        let ap_user = Grid::from_fn(m, k, |_, _| {
            LinkStats::new(rng.random_range(0.2..1.5), rng.random_range(0.0..1.0))
        });
        let user_user = Grid::from_fn(k, k, |a, b| {
            if a == b {
                LinkStats::nlos(0.03)
            } else {
                LinkStats::nlos(rng.random_range(0.001..0.01))
            }
        });
        let ap_ap = Grid::from_fn(m, m, |a, b| {
            if a == b {
                LinkStats::nlos(0.03)
            } else {
                LinkStats::nlos(0.01)
            }
        });
        let mut ap_ap = ap_ap;
        for a in 0..m {
            for b in 0..a {
                ap_ap[(a, b)] = ap_ap[(b, a)];
            }
        }
        let mut user_user = user_user;
        for a in 0..k {
            for b in 0..a {
                user_user[(a, b)] = user_user[(b, a)];
            }
        }
        let stats = ChannelStats::new(ap_user, user_user, ap_ap).unwrap();
        let pilots = PilotAssignment::from_indices(pilots, tau_p).unwrap();
        let est = compute_estimation_stats(&stats, &pilots, tau_p, 1.0, 1.0).unwrap();
        DropInputs {
            stats,
            pilots,
            est,
            rsi: vec![rsi; m],
        }
    }

    fn params(rate_th: f64) -> SystemParams {
        SystemParams {
            tau_c: 200,
            tau_p: 2,
            mu: 0.5,
            e_max: 5e3,
            p_max: 1.0,
            rate_th,
        }
    }

    #[test]
    fn identity_quotient() {
        let drop = instance(1, 3, 1, vec![0], 1, 0.0);
        let mut problem = Problem::new(&params(1.0), &drop, Protocol::Proposed).unwrap();
        // Σ = D = I when the user is silent
        problem.matrices.d[0] = DVector::from_element(3, 1.0);
        problem.matrices.b[0] = DVector::from_fn(3, |m, _| Complex64::new(if m == 0 { 1.0 } else { 0.0 }, 0.0));
        let alloc = Allocation::zeros(3, 1);
        let a = update_filters(&problem, &alloc).unwrap();
        assert!((a[0][0].norm() - 1.0).abs() < 1e-12);
        assert!(a[0][1].norm() < 1e-12 && a[0][2].norm() < 1e-12);
    }

    #[test]
    fn filter_update_beats_random_probes() {
        let mut rng = crate::rng::seeded(77);
        for seed in 0..5 {
            let drop = instance(seed, 4, 3, vec![0, 1, 0], 2, 1e-3);
            let problem = Problem::new(&params(1.0), &drop, Protocol::Proposed).unwrap();
            let mut alloc = Allocation::zeros(4, 3);
            alloc.p_dl = Grid::from_fn(4, 3, |_, _| rng.random_range(0.0..1.0));
            alloc.eta_e = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            alloc.eta_b = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let previous = alloc.clone();
            alloc.alpha = update_filters(&problem, &alloc).unwrap();
            for k in 0..3 {
                let best = problem.sinr(&alloc, k).unwrap();
                assert!(best >= problem.sinr(&previous, k).unwrap() - 1e-10);
                for _ in 0..100 {
                    let mut probe = alloc.clone();
                    let v = DVector::from_fn(4, |_, _| {
                        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                    });
                    probe.alpha[k] = &v / Complex64::new(v.norm(), 0.0);
                    assert!(best >= problem.sinr(&probe, k).unwrap() - 1e-9);
                }
            }
        }
    }

    #[test]
    fn no_rate_demand_gives_zero_objective() {
        let drop = instance(3, 3, 2, vec![0, 1], 2, 1e-3);
        let out = optimize(&params(0.0), &drop, &OptimizerConfig::default()).unwrap();
        assert!(out.feasible && out.converged, "{out:?}");
        assert!(out.objective_trace.iter().all(|o| o.abs() < 1e-15), "{out:?}");
    }

    #[test]
    fn single_user_water_line() {
        // M=4, K=1, no RSI: the LP optimum is
        // τ_u η_b = max(0, (τ_u - u) η* - A)
        // with η* the SINR water-line and A the AP harvest at full power.
        let drop = instance(11, 4, 1, vec![0], 1, 0.0);
        let mut p = params(1.0);
        p.p_max = 1e-3;
        let problem = Problem::new(&p, &drop, Protocol::Proposed).unwrap();
        let alpha = ones_filters(4, 1);
        let lp = build_lp(&problem, &alpha, 0.0).unwrap();
        let sol = lpsolver::solve(&lp, &Tolerances::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);

        let g = problem.sinr_th;
        let a = &alpha[0];
        let s = inner(a, &problem.matrices.b[0]).norm_sqr();
        let c = quad_form(problem.matrices.c(0, 0), a);
        let d: f64 = a.iter().zip(problem.matrices.d[0].iter()).map(|(x, v)| x.norm_sqr() * v).sum();
        let eta_star = g * d / ((1.0 + g) * s - g * c);
        let tau_u = problem.tau_u as f64;
        let u = problem.harvest.from_users[(0, 0)];
        let full: f64 = (0..4)
            .map(|m| problem.harvest.ap_coefficient(0, m, 0) * p.p_max / problem.gamma[(m, 0)])
            .sum();
        let expected = ((tau_u - u) * eta_star - full).max(0.0);
        assert!(expected > 0.0);
        assert!(
            (sol.objective_value - expected).abs() <= 1e-8 * expected,
            "{} vs {}",
            sol.objective_value,
            expected
        );
    }

    #[test]
    fn trace_is_monotone_and_constraints_hold() {
        let cfg = OptimizerConfig::default();
        for seed in 0..4 {
            let drop = instance(100 + seed, 4, 2, vec![0, 1], 2, 1e-3);
            let mut p = params(2.0);
            p.p_max = 0.05;
            let problem = Problem::new(&p, &drop, Protocol::Proposed).unwrap();
            let out = run(&problem, &cfg).unwrap();
            if !out.feasible {
                continue;
            }
            assert!(out.monotone && !out.anomaly);
            for w in out.objective_trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-7) + 1e-15);
            }
            let check = verify_outcome(&p, &drop, &problem, &out.allocation).unwrap();
            assert!(check.rate_shortfall <= 1e-9, "{check:?}");
            assert!(check.harvest_excess <= 1e-8, "{check:?}");
            assert!(check.battery_excess <= 1e-8 && check.power_excess <= 1e-8);
            assert!(check.min_power >= 0.0);
        }
    }

    #[test]
    fn max_min_tie_break_keeps_the_battery_optimum() {
        let mut p = params(1.0);
        p.p_max = 0.05;
        let none = OptimizerConfig { tie_break: TieBreak::None, ..OptimizerConfig::default() };
        let maxmin = OptimizerConfig::default();
        let min_sinr = |pr: &Problem, a: &[DVector<Complex64>], x: &[f64]| {
            sinr_parts(pr, a, x).iter().map(|q| q.2).fold(f64::INFINITY, f64::min)
        };
        let mut checked = 0;
        for seed in 0..6 {
            let drop = instance(300 + seed, 4, 2, vec![0, 1], 2, 1e-3);
            let problem = Problem::new(&p, &drop, Protocol::Proposed).unwrap();
            let alpha = ones_filters(4, 2);
            let a = solve_step(&problem, &alpha, &none).unwrap();
            if a.status != LpStatus::Optimal {
                continue;
            }
            let b = solve_step(&problem, &alpha, &maxmin).unwrap();
            assert!(b.objective <= a.objective * (1.0 + 1e-6) + 1e-15);
            let (sa, sb) = (min_sinr(&problem, &alpha, &a.x), min_sinr(&problem, &alpha, &b.x));
            assert!(sb >= sa * (1.0 - 1e-9), "{sb} < {sa}");
            assert!((b.secondary.unwrap() - sb).abs() <= 1e-9 * sb);
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn zero_harvest_window_is_battery_only() {
        let drop = instance(5, 3, 2, vec![0, 1], 2, 1e-3);
        let out = optimize_ts_baseline(&params(1.0), &drop, 0, &OptimizerConfig::default()).unwrap();
        assert!(out.feasible);
        assert!(out.allocation.eta_e.iter().all(|&e| e.abs() < 1e-12));
        assert!(out.battery_fraction.iter().all(|&f| (f - 1.0).abs() < 1e-9));
    }

    #[test]
    fn empty_battery_forces_harvest_only() {
        let drop = instance(6, 3, 1, vec![0], 1, 0.0);
        let mut p = params(0.5);
        p.e_max = 0.0;
        let out = optimize(&p, &drop, &OptimizerConfig::default()).unwrap();
        if out.feasible {
            assert!(out.allocation.eta_b.iter().all(|&b| b.abs() < 1e-15));
        }
    }

    #[test]
    fn harvest_window_must_leave_uplink() {
        let drop = instance(5, 2, 1, vec![0], 1, 0.0);
        assert!(optimize_ts_baseline(&params(1.0), &drop, 198, &OptimizerConfig::default()).is_err());
    }

    #[test]
    fn battery_fraction_handles_zero_draw() {
        let mut a = Allocation::zeros(1, 2);
        a.eta_e = vec![1.0, 0.0];
        a.eta_b = vec![1.0, 0.0];
        assert_eq!(battery_fraction(&a), vec![0.5, 0.0]);
    }
}
