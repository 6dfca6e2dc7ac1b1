//! Closed-form harvested energy, uplink statistics and effective SINR.
//!
//! All quantities depend only on second-order statistics. With
//! `G = τ_p ρ_p`, `A_{m,k} = √G w_{m,k}/ψ_{m,k}` and `a = |h̄|`:
//!
//! * `b_{m,k} = E[ĝ*_{m,k} g_{m,k}] = G w²/ψ` (equal to `γ_{m,k}`),
//! * `c^{m,m}_{k,j} = γ_{m,k} w_{m,j} + [j∈P_k] G² (w_{m,k}/ψ_{m,k})² (2a²_{m,j}β_{m,j} + β²_{m,j})`,
//! * `c^{m,m'}_{k,j} = [j∈P_k] G² Π_{n∈{m,m'}} w_{n,k} w_{n,j}/ψ_{n,k}` for `m ≠ m'`,
//! * `d_{m,k} = σ² γ_{m,k}`,
//! * `f^{m,m}_{k,q,j} = σ^RSI_m w⃛_{m,q} E[|ĝ_{m,k}|² |ĝ_{q,j}|²]`, zero off the diagonal.
//!
//! and the harvested energy is a linear form in `(p^(d), η)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{EstimationStats, PilotAssignment};
use crate::grid::Grid;
use crate::optimizer::Allocation;
use crate::propagation::ChannelStats;

/// Coefficients of `E_k^(d) = Σ_{m,j} (from_ap + contamination)_{k,(m,j)} p_{m,j} + Σ_j from_users_{k,j} η_j`.
///
/// Columns of `from_ap` / `contamination` are indexed `m * K + j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarvestCoefficients {
    pub from_ap: Grid<f64>,
    pub contamination: Grid<f64>,
    pub from_users: Grid<f64>,
    pub mu: f64,
    pub tau_harvest: f64,
}

impl HarvestCoefficients {
    pub fn num_users(&self) -> usize {
        self.from_users.rows()
    }

    /// Total coefficient multiplying `p^(d)_{m,j}` in `E_k^(d)`.
    pub fn ap_coefficient(&self, k: usize, m: usize, j: usize) -> f64 {
        let col = m * self.num_users() + j;
        self.from_ap[(k, col)] + self.contamination[(k, col)]
    }

    pub fn evaluate(&self, p_dl: &Grid<f64>, eta: &[f64]) -> Vec<f64> {
        let k_count = self.num_users();
        (0..k_count)
            .map(|k| {
                let ap: f64 = (0..p_dl.rows())
                    .flat_map(|m| (0..k_count).map(move |j| (m, j)))
                    .map(|(m, j)| self.ap_coefficient(k, m, j) * p_dl[(m, j)])
                    .sum();
                let users: f64 = (0..k_count).map(|j| self.from_users[(k, j)] * eta[j]).sum();
                ap + users
            })
            .collect()
    }

    /// Drops every user-transmit contribution (AP-only harvesting).
    pub fn without_user_terms(mut self) -> Self {
        self.from_users.as_mut_slice().iter_mut().for_each(|u| *u = 0.0);
        self
    }
}

pub fn harvest_coefficients(
    est: &EstimationStats,
    stats: &ChannelStats,
    pilots: &PilotAssignment,
    mu: f64,
    tau_harvest: f64,
) -> HarvestCoefficients {
    let (m_count, k_count) = (stats.num_aps(), stats.num_users());
    let g = est.pilot_gain();
    let scale = mu * tau_harvest;
    let from_ap = Grid::from_fn(k_count, m_count * k_count, |k, col| {
        let (m, j) = (col / k_count, col % k_count);
        scale * est.gamma[(m, j)] * stats.ap_user[(m, k)].w
    });
    let contamination = Grid::from_fn(k_count, m_count * k_count, |k, col| {
        let (m, j) = (col / k_count, col % k_count);
        if !pilots.shares_pilot(k, j) {
            return 0.0;
        }
        let ratio = stats.ap_user[(m, j)].w / est.psi[(m, j)];
        scale * g * g * ratio * ratio * stats.ap_user[(m, k)].excess_fourth_moment()
    });
    let from_users = Grid::from_fn(k_count, k_count, |k, j| scale * stats.user_user[(k, j)].w);
    HarvestCoefficients {
        from_ap,
        contamination,
        from_users,
        mu,
        tau_harvest,
    }
}

/// Direct term-by-term evaluation of the average harvested energy, written
/// in the complex-LOS form (independent of [`harvest_coefficients`]).
pub fn harvested_energy_direct(
    est: &EstimationStats,
    stats: &ChannelStats,
    pilots: &PilotAssignment,
    mu: f64,
    tau_harvest: f64,
    p_dl: &Grid<f64>,
    eta: &[f64],
) -> Vec<f64> {
    let (m_count, k_count) = (stats.num_aps(), stats.num_users());
    let g = est.pilot_gain();
    (0..k_count)
        .map(|k| {
            let mut first = 0.0;
            for m in 0..m_count {
                for j in 0..k_count {
                    first += p_dl[(m, j)] * est.gamma[(m, j)] * stats.ap_user[(m, k)].w;
                }
            }
            let second: f64 = (0..k_count).map(|j| eta[j] * stats.user_user[(k, j)].w).sum();
            let mut third = 0.0;
            for m in 0..m_count {
                let link = stats.ap_user[(m, k)];
                let h_bar = Complex64::new(link.los_amplitude, 0.0);
                for &j in &pilots.copilot_sets[k] {
                    let r = est.psi[(m, j)].recip() * stats.ap_user[(m, j)].w;
                    let cross = (h_bar.conj() * r * h_bar * stats.ap_user[(m, j)].w / est.psi[(m, j)]).re;
                    third += p_dl[(m, j)] * (2.0 * link.beta * cross + link.beta * link.beta * r * r);
                }
            }
            mu * tau_harvest * (first + second + g * g * third)
        })
        .collect()
}

/// Which pilot factor multiplies the LOS/NLOS terms inside `b`, `c`, `f`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TauReading {
    /// `τ_p ρ_p`, consistent with the estimator.
    Pilot,
    /// `τ_d ρ_p` with a hypothetical harvest length, kept for the oracle report.
    Literal { tau_d: usize },
}

/// How the `q = m` diagonal of `F` is evaluated for co-pilot users.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FBranch {
    /// `σ w⃛ A²_{m,k} A²_{m,j} E|y_{m,k}|⁴`, the exact fourth moment of the
    /// shared pilot observation.
    Exact,
    /// `σ w⃛ E[|ĝ_{m,k}|² |g_{m,j}|²]`-shaped expression as typeset
    /// alongside the SINR; it treats the transmitted estimate as the channel.
    Printed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixOptions {
    pub reading: TauReading,
    pub f_branch: FBranch,
}

impl Default for MatrixOptions {
    fn default() -> Self {
        MatrixOptions {
            reading: TauReading::Pilot,
            f_branch: FBranch::Exact,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatsMatrices {
    pub num_aps: usize,
    pub num_users: usize,
    pub b: Vec<DVector<Complex64>>,
    /// Row-major over `(k, j)`.
    pub c: Vec<DMatrix<Complex64>>,
    /// Diagonal of `D_k`.
    pub d: Vec<DVector<f64>>,
    /// Diagonals of `F_{k,q,j}`, flattened as `((k*M + q)*K + j)*M + m`.
    pub f: Vec<f64>,
    pub rsi: Vec<f64>,
}

impl StatsMatrices {
    pub fn c(&self, k: usize, j: usize) -> &DMatrix<Complex64> {
        &self.c[k * self.num_users + j]
    }

    pub fn f_diag(&self, k: usize, q: usize, j: usize) -> &[f64] {
        let m = self.num_aps;
        let start = ((k * m + q) * self.num_users + j) * m;
        &self.f[start..start + m]
    }

    pub fn d_matrix(&self, k: usize) -> DMatrix<Complex64> {
        DMatrix::from_diagonal(&self.d[k].map(|x| Complex64::new(x, 0.0)))
    }

    pub fn f_matrix(&self, k: usize, q: usize, j: usize) -> DMatrix<Complex64> {
        let diag = DVector::from_iterator(
            self.num_aps,
            self.f_diag(k, q, j).iter().map(|&x| Complex64::new(x, 0.0)),
        );
        DMatrix::from_diagonal(&diag)
    }

    /// Diagonal of `Σ_{q,j} p_{q,j} F_{k,q,j}`.
    pub fn aggregate_f(&self, k: usize, p_dl: &Grid<f64>) -> DVector<f64> {
        let mut acc = DVector::zeros(self.num_aps);
        for q in 0..self.num_aps {
            for j in 0..self.num_users {
                let p = p_dl[(q, j)];
                if p == 0.0 {
                    continue;
                }
                for (a, f) in acc.iter_mut().zip(self.f_diag(k, q, j)) {
                    *a += p * f;
                }
            }
        }
        acc
    }

    /// Same matrices with `F ≡ 0` (APs silent during uplink).
    pub fn without_self_interference(mut self) -> Self {
        self.f.iter_mut().for_each(|x| *x = 0.0);
        self.rsi.iter_mut().for_each(|x| *x = 0.0);
        self
    }
}

pub fn stats_matrices(
    est: &EstimationStats,
    stats: &ChannelStats,
    pilots: &PilotAssignment,
    rsi: &[f64],
) -> Result<StatsMatrices> {
    stats_matrices_with(est, stats, pilots, rsi, MatrixOptions::default())
}

pub fn stats_matrices_with(
    est: &EstimationStats,
    stats: &ChannelStats,
    pilots: &PilotAssignment,
    rsi: &[f64],
    options: MatrixOptions,
) -> Result<StatsMatrices> {
    let (m_count, k_count) = (stats.num_aps(), stats.num_users());
    if rsi.len() != m_count {
        return Err(Error::param(format!("expected {m_count} residual-SI levels, got {}", rsi.len())));
    }
    if let Some(bad) = rsi.iter().find(|&&s| !(0.0..1.0).contains(&s)) {
        return Err(Error::param(format!("residual SI must lie in [0, 1), got {bad}")));
    }
    let g = match options.reading {
        TauReading::Pilot => est.pilot_gain(),
        TauReading::Literal { tau_d } => tau_d as f64 * est.rho_p,
    };
    let w = |m: usize, k: usize| stats.ap_user[(m, k)].w;
    let ratio = |m: usize, k: usize| w(m, k) / est.psi[(m, k)];

    let b = (0..k_count)
        .map(|k| DVector::from_fn(m_count, |m, _| Complex64::new(g * w(m, k) * ratio(m, k), 0.0)))
        .collect();

    let mut c = Vec::with_capacity(k_count * k_count);
    for k in 0..k_count {
        for j in 0..k_count {
            let shared = pilots.shares_pilot(k, j);
            let mut mat = DMatrix::from_fn(m_count, m_count, |m, mp| {
                let v = if m == mp {
                    let mut v = est.gamma[(m, k)] * w(m, j);
                    if shared {
                        let r = ratio(m, k);
                        v += g * g * r * r * stats.ap_user[(m, j)].excess_fourth_moment();
                    }
                    v
                } else if shared {
                    g * g * ratio(m, k) * w(m, j) * ratio(mp, k) * w(mp, j)
                } else {
                    0.0
                };
                Complex64::new(v, 0.0)
            });
            let sym = (&mat + mat.adjoint()) * Complex64::new(0.5, 0.0);
            mat.copy_from(&sym);
            c.push(mat);
        }
    }

    let d = (0..k_count)
        .map(|k| DVector::from_fn(m_count, |m, _| est.noise_power * est.gamma[(m, k)]))
        .collect();

    let mut f = vec![0.0; k_count * m_count * k_count * m_count];
    for k in 0..k_count {
        for q in 0..m_count {
            for j in 0..k_count {
                let base = ((k * m_count + q) * k_count + j) * m_count;
                for m in 0..m_count {
                    let sigma = rsi[m];
                    if sigma == 0.0 {
                        continue;
                    }
                    let cross = stats.ap_ap[(m, q)].w;
                    let moment = if q != m || !pilots.shares_pilot(k, j) {
                        est.gamma[(m, k)] * est.gamma[(q, j)]
                    } else {
                        match options.f_branch {
                            FBranch::Exact => {
                                let fourth: f64 = pilots.copilot_sets[k]
                                    .iter()
                                    .map(|&i| stats.ap_user[(m, i)].los_power().powi(2))
                                    .sum();
                                let (rk, rj) = (ratio(m, k), ratio(m, j));
                                2.0 * est.gamma[(m, k)] * est.gamma[(m, j)]
                                    - g.powi(4) * (rk * rj).powi(2) * fourth
                            }
                            FBranch::Printed => {
                                let r = ratio(m, k);
                                g * g * r * r * stats.ap_user[(q, j)].excess_fourth_moment()
                                    + est.gamma[(m, k)] * est.c_err[(q, j)]
                                    + est.gamma[(m, k)] * est.gamma[(q, j)]
                            }
                        }
                    };
                    f[base + m] = cross * sigma * moment;
                }
            }
        }
    }

    Ok(StatsMatrices {
        num_aps: m_count,
        num_users: k_count,
        b,
        c,
        d,
        f,
        rsi: rsi.to_vec(),
    })
}

/// Per-term breakdown of the effective SINR for one user.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinrTerms {
    /// `η_k |α^H B_k|²`.
    pub signal: f64,
    /// `α^H (Σ_j η_j C_{k,j}) α`, desired-signal power included.
    pub data_power: f64,
    /// `α^H (Σ_{q,j} p_{q,j} F_{k,q,j}) α`.
    pub si_power: f64,
    /// `α^H D_k α`.
    pub noise_power: f64,
}

impl SinrTerms {
    pub fn denominator(&self) -> f64 {
        self.data_power - self.signal + self.si_power + self.noise_power
    }

    pub fn sinr(&self) -> f64 {
        if self.signal == 0.0 {
            return 0.0;
        }
        self.signal / self.denominator()
    }
}

pub(crate) fn quad_form(mat: &DMatrix<Complex64>, v: &DVector<Complex64>) -> f64 {
    (v.adjoint() * mat * v)[(0, 0)].re
}

/// `α^H x`.
pub(crate) fn inner(a: &DVector<Complex64>, x: &DVector<Complex64>) -> Complex64 {
    a.iter().zip(x.iter()).map(|(ai, xi)| ai.conj() * xi).sum()
}

pub fn sinr_terms(
    matrices: &StatsMatrices,
    p_dl: &Grid<f64>,
    eta: &[f64],
    alpha: &DVector<Complex64>,
    k: usize,
) -> Result<SinrTerms> {
    if alpha.len() != matrices.num_aps {
        return Err(Error::param("receive filter length does not match M"));
    }
    if alpha.iter().all(|a| a.norm_sqr() == 0.0) {
        return Err(Error::param(format!("receive filter of user {k} is zero")));
    }
    let signal = eta[k] * inner(alpha, &matrices.b[k]).norm_sqr();
    let data_power = (0..matrices.num_users)
        .filter(|&j| eta[j] != 0.0)
        .map(|j| eta[j] * quad_form(matrices.c(k, j), alpha))
        .sum();
    let f_agg = matrices.aggregate_f(k, p_dl);
    let weighted = |diag: &DVector<f64>| -> f64 {
        alpha.iter().zip(diag.iter()).map(|(a, d)| a.norm_sqr() * d).sum()
    };
    Ok(SinrTerms {
        signal,
        data_power,
        si_power: weighted(&f_agg),
        noise_power: weighted(&matrices.d[k]),
    })
}

/// Effective SINR `Γ_k` of user `k` under `alloc`.
pub fn effective_sinr(matrices: &StatsMatrices, alloc: &Allocation, k: usize) -> Result<f64> {
    let eta = alloc.eta();
    Ok(sinr_terms(matrices, &alloc.p_dl, &eta, &alloc.alpha[k], k)?.sinr())
}

/// `R = τ_u/τ_c log₂(1 + Γ)` in bits/s/Hz.
pub fn spectral_efficiency(sinr: f64, tau_u: usize, tau_c: usize) -> f64 {
    tau_u as f64 / tau_c as f64 * (1.0 + sinr).log2()
}

/// SINR needed to reach `rate` bits/s/Hz.
pub fn sinr_threshold(rate: f64, tau_u: usize, tau_c: usize) -> f64 {
    if rate == 0.0 {
        return 0.0;
    }
    (tau_c as f64 * rate / tau_u as f64).exp2() - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::compute_estimation_stats;
    use crate::propagation::LinkStats;
    use proptest::prelude::*;

    fn random_instance(seed: u64, m: usize, k: usize, pilots: Vec<usize>, tau_p: usize) -> (ChannelStats, PilotAssignment, EstimationStats) {
        use rand::Rng;
        let mut rng = crate::rng::seeded(seed);
        let ap_user = Grid::from_fn(m, k, |_, _| LinkStats::new(rng.random_range(0.2..1.5), rng.random_range(0.0..1.0)));
        let mut uu = Grid::filled(k, k, LinkStats::nlos(0.2));
        for a in 0..k {
            for b in a..k {
                let l = LinkStats::new(rng.random_range(0.05..0.5), rng.random_range(0.0..0.5));
                uu[(a, b)] = l;
                uu[(b, a)] = l;
            }
        }
        let mut aa = Grid::filled(m, m, LinkStats::nlos(0.2));
        for a in 0..m {
            for b in a..m {
                let l = LinkStats::new(rng.random_range(0.05..0.5), rng.random_range(0.0..0.5));
                aa[(a, b)] = l;
                aa[(b, a)] = l;
            }
        }
        let stats = ChannelStats::new(ap_user, uu, aa).unwrap();
        let pilots = PilotAssignment::from_indices(pilots, tau_p).unwrap();
        let est = compute_estimation_stats(&stats, &pilots, tau_p, 0.6, 0.5).unwrap();
        (stats, pilots, est)
    }

    #[test]
    fn harvest_zero_power_is_zero() {
        let (stats, pilots, est) = random_instance(1, 3, 2, vec![0, 0], 2);
        let h = harvest_coefficients(&est, &stats, &pilots, 0.5, 198.0);
        let e = h.evaluate(&Grid::filled(3, 2, 0.0), &[0.0, 0.0]);
        assert_eq!(e, vec![0.0, 0.0]);
        for k in 0..2 {
            assert!(h.from_users[(k, k)] > 0.0);
        }
        assert!(h.from_ap.as_slice().iter().chain(h.contamination.as_slice()).all(|&x| x >= 0.0));
    }

    #[test]
    fn harvest_single_term() {
        let stats = ChannelStats::new(
            Grid::filled(1, 1, LinkStats::nlos(1.0)),
            Grid::filled(1, 1, LinkStats::zero()),
            Grid::filled(1, 1, LinkStats::nlos(0.1)),
        )
        .unwrap();
        let pilots = PilotAssignment::from_indices(vec![0], 1).unwrap();
        let mut est = compute_estimation_stats(&stats, &pilots, 1, 1.0, 1.0).unwrap();
        assert_eq!(est.gamma[(0, 0)], 0.5);
        // isolate the non-contaminated term
        let h = harvest_coefficients(&est, &stats, &pilots, 0.5, 198.0);
        let plain = h.from_ap[(0, 0)];
        assert!((plain - 49.5).abs() < 1e-12);
        est.rho_p = 1.0;
        let e = h.evaluate(&Grid::filled(1, 1, 1.0), &[0.0]);
        assert!(e[0] >= 49.5);
    }

    proptest! {
        #[test]
        fn harvest_linear_form_matches_direct(seed in 0u64..500, copilot in proptest::bool::ANY) {
            let pil = if copilot { vec![0, 0, 1] } else { vec![0, 1, 2] };
            let (stats, pilots, est) = random_instance(seed, 4, 3, pil, 3);
            let h = harvest_coefficients(&est, &stats, &pilots, 0.4, 120.0);
            use rand::Rng;
            let mut rng = crate::rng::seeded(seed + 1000);
            let p = Grid::from_fn(4, 3, |_, _| rng.random_range(0.0..2.0));
            let eta: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let lin = h.evaluate(&p, &eta);
            let direct = harvested_energy_direct(&est, &stats, &pilots, 0.4, 120.0, &p, &eta);
            for (a, b) in lin.iter().zip(&direct) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }

        #[test]
        fn c_matrices_are_hermitian_psd(seed in 0u64..200) {
            let (stats, pilots, est) = random_instance(seed, 4, 3, vec![0, 0, 1], 2);
            let mats = stats_matrices(&est, &stats, &pilots, &[1e-3; 4]).unwrap();
            for c in &mats.c {
                prop_assert!((c - c.adjoint()).norm() < 1e-14 * c.norm());
                let eig = nalgebra::SymmetricEigen::new(c.clone());
                let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
                prop_assert!(min >= -1e-12 * c.norm());
            }
            for d in &mats.d {
                prop_assert!(d.iter().all(|&x| x > 0.0));
            }
        }

        #[test]
        fn sinr_is_scale_invariant_in_filter(seed in 0u64..200, re in -3.0f64..3.0, im in -3.0f64..3.0) {
            prop_assume!(re.abs() + im.abs() > 1e-3);
            let (stats, pilots, est) = random_instance(seed, 3, 2, vec![0, 1], 2);
            let mats = stats_matrices(&est, &stats, &pilots, &[1e-2; 3]).unwrap();
            use rand::Rng;
            let mut rng = crate::rng::seeded(seed);
            let alpha = DVector::from_fn(3, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let p = Grid::filled(3, 2, 0.7);
            let eta = [0.3, 0.9];
            let s1 = sinr_terms(&mats, &p, &eta, &alpha, 0).unwrap().sinr();
            let scaled = &alpha * Complex64::new(re, im);
            let s2 = sinr_terms(&mats, &p, &eta, &scaled, 0).unwrap().sinr();
            prop_assert!((s1 - s2).abs() <= 1e-10 * s1);
        }

        #[test]
        fn sinr_never_increases_with_rsi(seed in 0u64..200, lo in 0.0f64..0.3, extra in 0.0f64..0.3) {
            let (stats, pilots, est) = random_instance(seed, 3, 2, vec![0, 0], 1);
            let a = stats_matrices(&est, &stats, &pilots, &[lo; 3]).unwrap();
            let b = stats_matrices(&est, &stats, &pilots, &[lo + extra; 3]).unwrap();
            let alpha = DVector::from_element(3, Complex64::new(1.0, 0.0));
            let p = Grid::filled(3, 2, 0.5);
            let eta = [0.4, 0.6];
            let sa = sinr_terms(&a, &p, &eta, &alpha, 1).unwrap().sinr();
            let sb = sinr_terms(&b, &p, &eta, &alpha, 1).unwrap().sinr();
            prop_assert!(sb <= sa * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_rsi_gives_zero_f() {
        let (stats, pilots, est) = random_instance(3, 3, 2, vec![0, 0], 2);
        let mats = stats_matrices(&est, &stats, &pilots, &[0.0; 3]).unwrap();
        assert!(mats.f.iter().all(|&x| x == 0.0));
        assert!(stats_matrices(&est, &stats, &pilots, &[1.0; 3]).is_err());
        assert!(stats_matrices(&est, &stats, &pilots, &[0.0; 2]).is_err());
    }

    #[test]
    fn orthogonal_nlos_c_collapses() {
        let stats = ChannelStats::new(
            Grid::from_fn(3, 2, |m, k| LinkStats::nlos(0.5 + m as f64 + k as f64)),
            Grid::filled(2, 2, LinkStats::nlos(0.1)),
            Grid::filled(3, 3, LinkStats::nlos(0.1)),
        )
        .unwrap();
        let pilots = PilotAssignment::from_indices(vec![0, 1], 2).unwrap();
        let est = compute_estimation_stats(&stats, &pilots, 2, 1.0, 0.5).unwrap();
        let mats = stats_matrices(&est, &stats, &pilots, &[0.0; 3]).unwrap();
        let c = mats.c(0, 1);
        for m in 0..3 {
            for mp in 0..3 {
                let expected = if m == mp { est.gamma[(m, 0)] * stats.ap_user[(m, 1)].w } else { 0.0 };
                assert!((c[(m, mp)].re - expected).abs() < 1e-15);
            }
        }
        for m in 0..3 {
            assert!((mats.b[1][m].re - est.gamma[(m, 1)]).abs() < 1e-15);
        }
    }

    #[test]
    fn f_is_diagonal() {
        let (stats, pilots, est) = random_instance(5, 3, 2, vec![0, 0], 2);
        let mats = stats_matrices(&est, &stats, &pilots, &[1e-3; 3]).unwrap();
        let f = mats.f_matrix(0, 1, 1);
        for m in 0..3 {
            for mp in 0..3 {
                if m != mp {
                    assert_eq!(f[(m, mp)].norm(), 0.0);
                }
            }
        }
        assert!(f[(1, 1)].re > 0.0);
    }

    #[test]
    fn sinr_edge_cases() {
        let (stats, pilots, est) = random_instance(7, 1, 1, vec![0], 1);
        let mats = stats_matrices(&est, &stats, &pilots, &[0.0]).unwrap();
        let alpha = DVector::from_element(1, Complex64::new(1.0, 0.0));
        let p = Grid::filled(1, 1, 0.0);
        assert_eq!(sinr_terms(&mats, &p, &[0.0], &alpha, 0).unwrap().sinr(), 0.0);
        let eta = 0.8;
        let s = sinr_terms(&mats, &p, &[eta], &alpha, 0).unwrap().sinr();
        let b = mats.b[0][0].re;
        let c = mats.c(0, 0)[(0, 0)].re;
        let expected = eta * b * b / (eta * (c - b * b) + est.noise_power * est.gamma[(0, 0)]);
        assert!((s - expected).abs() < 1e-12 * expected);
        let zero = DVector::from_element(1, Complex64::new(0.0, 0.0));
        assert!(sinr_terms(&mats, &p, &[eta], &zero, 0).is_err());
    }

    #[test]
    fn rate_threshold_values() {
        assert_eq!(spectral_efficiency(0.0, 198, 200), 0.0);
        assert!((spectral_efficiency(1.0, 198, 200) - 0.99).abs() < 1e-15);
        assert_eq!(sinr_threshold(0.0, 198, 200), 0.0);
        assert!((sinr_threshold(2.5, 198, 200) - 4.756742).abs() < 1e-6);
        assert!((sinr_threshold(2.0, 198, 200) - 3.056406).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn threshold_round_trip(rate in 0.0f64..6.0, tau_u in 50usize..199) {
            let r = spectral_efficiency(sinr_threshold(rate, tau_u, 200), tau_u, 200);
            prop_assert!((r - rate).abs() < 1e-12);
        }
    }
}
