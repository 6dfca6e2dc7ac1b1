//! Pilot assignment and phase-unaware LMMSE estimation.
//!
//! With `P_k` the users sharing user `k`'s pilot, AP `m` observes
//! `y = Σ_{j∈P_k} √(τ_p ρ_p) g_{m,j} + n` after projecting onto the pilot and
//! forms `ĝ_{m,k} = √(τ_p ρ_p) w_{m,k} ψ_{m,k}⁻¹ y` with
//! `ψ_{m,k} = Σ_{j∈P_k} τ_p ρ_p w_{m,j} + σ²`. The estimate has variance
//! `γ = τ_p ρ_p w² / ψ` and the error variance is `c = w - γ`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::propagation::{complex_gaussian, ChannelRealization, ChannelStats};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PilotAssignment {
    pub tau_p: usize,
    pub pilot_index: Vec<usize>,
    /// `copilot_sets[k]` lists every user on `k`'s pilot, `k` included.
    pub copilot_sets: Vec<Vec<usize>>,
}

impl PilotAssignment {
    pub fn from_indices(pilot_index: Vec<usize>, tau_p: usize) -> Result<Self> {
        if tau_p == 0 {
            return Err(Error::param("tau_p must be at least 1"));
        }
        if let Some(bad) = pilot_index.iter().find(|&&p| p >= tau_p) {
            return Err(Error::param(format!("pilot index {bad} out of range for tau_p={tau_p}")));
        }
        let copilot_sets = pilot_index
            .iter()
            .map(|&p| {
                pilot_index
                    .iter()
                    .enumerate()
                    .filter(|&(_, &q)| q == p)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        Ok(PilotAssignment {
            tau_p,
            pilot_index,
            copilot_sets,
        })
    }

    pub fn num_users(&self) -> usize {
        self.pilot_index.len()
    }

    pub fn shares_pilot(&self, k: usize, j: usize) -> bool {
        self.pilot_index[k] == self.pilot_index[j]
    }
}

/// Each user picks one of `tau_p` orthogonal pilots uniformly at random.
pub fn assign_pilots(num_users: usize, tau_p: usize, seed: u64) -> Result<PilotAssignment> {
    if tau_p == 0 {
        return Err(Error::param("tau_p must be at least 1"));
    }
    let mut rng = rng::seeded(seed);
    let idx = (0..num_users).map(|_| rng.random_range(0..tau_p)).collect();
    PilotAssignment::from_indices(idx, tau_p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationStats {
    pub psi: Grid<f64>,
    pub gamma: Grid<f64>,
    pub c_err: Grid<f64>,
    pub tau_p: usize,
    pub rho_p: f64,
    pub noise_power: f64,
}

impl EstimationStats {
    /// `τ_p ρ_p`.
    pub fn pilot_gain(&self) -> f64 {
        self.tau_p as f64 * self.rho_p
    }

    /// LMMSE scaling `√(τ_p ρ_p) w / ψ` applied to the projected observation.
    pub fn estimator_weight(&self, stats: &ChannelStats, m: usize, k: usize) -> f64 {
        self.pilot_gain().sqrt() * stats.ap_user[(m, k)].w / self.psi[(m, k)]
    }
}

pub fn compute_estimation_stats(
    stats: &ChannelStats,
    pilots: &PilotAssignment,
    tau_p: usize,
    rho_p: f64,
    noise_power: f64,
) -> Result<EstimationStats> {
    if tau_p == 0 || !(rho_p > 0.0) || !(noise_power > 0.0) {
        return Err(Error::param(format!(
            "estimation needs positive tau_p, rho_p, noise (got {tau_p}, {rho_p}, {noise_power})"
        )));
    }
    let (m_count, k_count) = (stats.num_aps(), stats.num_users());
    if pilots.num_users() != k_count {
        return Err(Error::param("pilot assignment does not match the number of users"));
    }
    let gain = tau_p as f64 * rho_p;
    let psi = Grid::from_fn(m_count, k_count, |m, k| {
        pilots.copilot_sets[k]
            .iter()
            .map(|&j| gain * stats.ap_user[(m, j)].w)
            .sum::<f64>()
            + noise_power
    });
    let gamma = Grid::from_fn(m_count, k_count, |m, k| {
        let w = stats.ap_user[(m, k)].w;
        gain * w * w / psi[(m, k)]
    });
    let c_err = Grid::from_fn(m_count, k_count, |m, k| {
        (stats.ap_user[(m, k)].w - gamma[(m, k)]).max(0.0)
    });
    Ok(EstimationStats {
        psi,
        gamma,
        c_err,
        tau_p,
        rho_p,
        noise_power,
    })
}

/// LMMSE estimates for one realization, seeded.
pub fn estimate_channels(
    realization: &ChannelRealization,
    stats: &ChannelStats,
    pilots: &PilotAssignment,
    est: &EstimationStats,
    noise_seed: u64,
) -> Grid<Complex64> {
    let mut rng = rng::seeded(noise_seed);
    let mut out = Grid::filled(stats.num_aps(), stats.num_users(), Complex64::new(0.0, 0.0));
    estimate_channels_into(realization, stats, pilots, est, &mut rng, &mut out);
    out
}

/// Projected-noise path: one `CN(0, σ²)` draw per (AP, pilot) stands in for
/// the projection of the full pilot-phase noise vector.
pub fn estimate_channels_into(
    realization: &ChannelRealization,
    stats: &ChannelStats,
    pilots: &PilotAssignment,
    est: &EstimationStats,
    rng: &mut impl Rng,
    out: &mut Grid<Complex64>,
) {
    let (m_count, k_count) = (stats.num_aps(), stats.num_users());
    let amp = est.pilot_gain().sqrt();
    let mut projected = vec![Complex64::new(0.0, 0.0); pilots.tau_p];
    for m in 0..m_count {
        for slot in projected.iter_mut() {
            *slot = complex_gaussian(rng, est.noise_power);
        }
        for j in 0..k_count {
            projected[pilots.pilot_index[j]] += realization.ap_user[(m, j)] * amp;
        }
        for k in 0..k_count {
            out[(m, k)] = projected[pilots.pilot_index[k]] * est.estimator_weight(stats, m, k);
        }
    }
}

/// Reference path that materializes orthonormal DFT pilots of length `τ_p`,
/// builds the received pilot block and projects it explicitly.
pub fn estimate_channels_full_pilot(
    realization: &ChannelRealization,
    stats: &ChannelStats,
    pilots: &PilotAssignment,
    est: &EstimationStats,
    rng: &mut impl Rng,
) -> Grid<Complex64> {
    let tau = pilots.tau_p;
    let (m_count, k_count) = (stats.num_aps(), stats.num_users());
    // φ_p[t] = e^{j2π pt/τ} / √τ
    let phi = |p: usize, t: usize| {
        Complex64::from_polar(
            1.0 / (tau as f64).sqrt(),
            2.0 * std::f64::consts::PI * (p * t) as f64 / tau as f64,
        )
    };
    let amp = est.pilot_gain().sqrt();
    let mut out = Grid::filled(m_count, k_count, Complex64::new(0.0, 0.0));
    let mut y = vec![Complex64::new(0.0, 0.0); tau];
    for m in 0..m_count {
        for (t, yt) in y.iter_mut().enumerate() {
            *yt = complex_gaussian(rng, est.noise_power);
            for j in 0..k_count {
                *yt += realization.ap_user[(m, j)] * amp * phi(pilots.pilot_index[j], t).conj();
            }
        }
        for k in 0..k_count {
            let proj: Complex64 = (0..tau).map(|t| y[t] * phi(pilots.pilot_index[k], t)).sum();
            out[(m, k)] = proj * est.estimator_weight(stats, m, k);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::{ChannelRealization, LinkStats};

    fn stats_from(ap_user: Grid<LinkStats>) -> ChannelStats {
        let (m, k) = (ap_user.rows(), ap_user.cols());
        ChannelStats::new(
            ap_user,
            Grid::filled(k, k, LinkStats::nlos(0.1)),
            Grid::filled(m, m, LinkStats::nlos(0.1)),
        )
        .unwrap()
    }

    #[test]
    fn copilot_sets_are_consistent() {
        let p = assign_pilots(4, 2, 3).unwrap();
        let mut by_group = [0usize; 2];
        for &i in &p.pilot_index {
            assert!(i < 2);
            by_group[i] += 1;
        }
        let total: usize = p.copilot_sets.iter().map(Vec::len).sum();
        assert_eq!(total, by_group.iter().map(|g| g * g).sum::<usize>());
        for k in 0..4 {
            assert!(p.copilot_sets[k].contains(&k));
            for &j in &p.copilot_sets[k] {
                assert!(p.copilot_sets[j].contains(&k));
            }
        }
        let single = assign_pilots(1, 2, 0).unwrap();
        assert_eq!(single.copilot_sets, vec![vec![0]]);
        let orth = PilotAssignment::from_indices(vec![0, 1, 2, 3], 4).unwrap();
        assert!(orth.copilot_sets.iter().enumerate().all(|(k, s)| s == &vec![k]));
        assert!(assign_pilots(2, 0, 0).is_err());
    }

    #[test]
    fn single_user_formula() {
        let stats = stats_from(Grid::filled(1, 1, LinkStats::nlos(1.0)));
        let pilots = PilotAssignment::from_indices(vec![0], 1).unwrap();
        let e = compute_estimation_stats(&stats, &pilots, 1, 1.0, 1.0).unwrap();
        assert_eq!(e.psi[(0, 0)], 2.0);
        assert_eq!(e.gamma[(0, 0)], 0.5);
        assert_eq!(e.c_err[(0, 0)], 0.5);
    }

    #[test]
    fn contamination_limits() {
        let ws = [1.0, 3.0];
        let stats = stats_from(Grid::from_fn(1, 2, |_, k| LinkStats::nlos(ws[k])));
        let pilots = PilotAssignment::from_indices(vec![0, 0], 1).unwrap();
        let e = compute_estimation_stats(&stats, &pilots, 1, 1e6, 1.0).unwrap();
        for k in 0..2 {
            let limit = ws[k] * ws[k] / (ws[0] + ws[1]);
            assert!((e.gamma[(0, k)] - limit).abs() < 1e-5 * limit);
        }
        // equal copilots
        let stats = stats_from(Grid::filled(1, 2, LinkStats::nlos(2.0)));
        let e = compute_estimation_stats(&stats, &pilots, 2, 0.5, 0.3).unwrap();
        let expected = 1.0 * 4.0 / (2.0 * 1.0 * 2.0 + 0.3);
        assert!((e.gamma[(0, 0)] - expected).abs() < 1e-15);
        assert!(e.gamma[(0, 0)] < 1.0);
        for m in 0..1 {
            for k in 0..2 {
                assert_eq!(e.gamma[(m, k)] + e.c_err[(m, k)], 2.0);
            }
        }
    }

    #[test]
    fn noiseless_single_user_recovers_channel() {
        let stats = stats_from(Grid::filled(3, 1, LinkStats::new(0.5, 0.7)));
        let pilots = PilotAssignment::from_indices(vec![0], 2).unwrap();
        let e = compute_estimation_stats(&stats, &pilots, 2, 0.1, 1e-300).unwrap();
        let mut rng = rng::seeded(1);
        let mut r = ChannelRealization::zeros(&stats);
        r.resample(&stats, &mut rng);
        let g_hat = estimate_channels(&r, &stats, &pilots, &e, 4);
        for m in 0..3 {
            assert!((g_hat[(m, 0)] - r.ap_user[(m, 0)]).norm() < 1e-12);
        }
    }

    #[test]
    fn full_pilot_path_matches_projected_moments() {
        let stats = stats_from(Grid::from_fn(2, 3, |m, k| LinkStats::new(0.3 + 0.2 * k as f64, 0.4 * m as f64)));
        let pilots = PilotAssignment::from_indices(vec![0, 1, 0], 2).unwrap();
        let e = compute_estimation_stats(&stats, &pilots, 2, 0.7, 0.4).unwrap();
        let n = 100_000;
        let mut rng = rng::seeded(8);
        let mut r = ChannelRealization::zeros(&stats);
        let mut var_full = Grid::filled(2, 3, 0.0);
        let mut var_fourth = Grid::filled(2, 3, 0.0);
        for _ in 0..n {
            r.resample(&stats, &mut rng);
            let g = estimate_channels_full_pilot(&r, &stats, &pilots, &e, &mut rng);
            for m in 0..2 {
                for k in 0..3 {
                    let p = g[(m, k)].norm_sqr();
                    var_full[(m, k)] += p;
                    var_fourth[(m, k)] += p * p;
                }
            }
        }
        for m in 0..2 {
            for k in 0..3 {
                let mean = var_full[(m, k)] / n as f64;
                let se = ((var_fourth[(m, k)] / n as f64 - mean * mean) / n as f64).sqrt();
                assert!((mean - e.gamma[(m, k)]).abs() < 4.0 * se, "({m},{k}) {mean} vs {}", e.gamma[(m, k)]);
            }
        }
    }
}
