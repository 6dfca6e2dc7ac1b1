//! Large-scale statistics and small-scale realizations for the three link
//! classes: AP-user, user-user and AP-AP.
//!
//! Each link is Rician with an unknown, uniformly distributed LOS phase:
//! `g = a e^{jθ} + h`, `h ~ CN(0, β)`, so `E[g] = 0` and
//! `E[|g|²] = w = a² + β`. Large-scale gains follow the indoor-hotspot
//! (office) path-loss family with distance-dependent LOS probability,
//! log-normal shadowing and a distance-dependent Rician factor. Every
//! constant lives in [`PropagationConfig`].
//!
//! Seeding: [`compute_channel_stats`] and [`sample_realization`] take a
//! seed and create a private ChaCha stream, so they are pure functions of
//! their inputs. Campaigns derive per-drop seeds with
//! [`crate::rng::derive_seed`]; the Monte-Carlo oracle uses one stream id per
//! batch (see [`crate::rng::stream`]).

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Deployment;
use crate::grid::Grid;
use crate::rng;
use crate::units::db_to_linear;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationConfig {
    pub carrier_freq_ghz: f64,
    pub bandwidth_hz: f64,
    pub los_intercept_db: f64,
    pub los_distance_slope: f64,
    pub los_freq_slope: f64,
    pub nlos_intercept_db: f64,
    pub nlos_distance_slope: f64,
    pub nlos_freq_slope: f64,
    /// LOS is certain below this planar distance.
    pub los_prob_near_m: f64,
    pub los_prob_mid_m: f64,
    pub los_prob_mid_decay_m: f64,
    pub los_prob_far_decay_m: f64,
    pub los_prob_far_scale: f64,
    pub shadow_los_db: f64,
    pub shadow_nlos_db: f64,
    pub rician_k_intercept_db: f64,
    pub rician_k_slope_db_per_m: f64,
    /// Total gain of the user self-interference loop.
    pub user_self_loop_db: f64,
    /// Total gain of the AP self-interference loop.
    pub ap_self_loop_db: f64,
    /// Rician factor of both self-loops (0 = pure NLOS).
    pub self_loop_rician_k: f64,
    /// Distances are clamped to this value before entering the path loss.
    pub min_distance_m: f64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            carrier_freq_ghz: 3.4,
            bandwidth_hz: 20e6,
            los_intercept_db: 32.4,
            los_distance_slope: 17.3,
            los_freq_slope: 20.0,
            nlos_intercept_db: 17.30,
            nlos_distance_slope: 38.3,
            nlos_freq_slope: 24.9,
            los_prob_near_m: 5.0,
            los_prob_mid_m: 49.0,
            los_prob_mid_decay_m: 70.8,
            los_prob_far_decay_m: 211.7,
            los_prob_far_scale: 0.54,
            shadow_los_db: 3.0,
            shadow_nlos_db: 8.03,
            rician_k_intercept_db: 13.0,
            rician_k_slope_db_per_m: 0.03,
            user_self_loop_db: -15.0,
            ap_self_loop_db: -15.0,
            self_loop_rician_k: 0.0,
            min_distance_m: 1.0,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_freq_ghz", self.carrier_freq_ghz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("los_prob_mid_decay_m", self.los_prob_mid_decay_m),
            ("los_prob_far_decay_m", self.los_prob_far_decay_m),
            ("min_distance_m", self.min_distance_m),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(
                    format!("propagation.{field}"),
                    format!("must be positive, got {v}"),
                ));
            }
        }
        if self.shadow_los_db < 0.0 || self.shadow_nlos_db < 0.0 {
            return Err(Error::config("propagation.shadow_*_db", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.los_prob_far_scale) {
            return Err(Error::config("propagation.los_prob_far_scale", "must lie in [0, 1]"));
        }
        if self.self_loop_rician_k < 0.0 {
            return Err(Error::config("propagation.self_loop_rician_k", "must be non-negative"));
        }
        Ok(())
    }

    /// LOS path loss in dB at 3-D distance `d3` (meters).
    pub fn path_loss_los_db(&self, d3: f64) -> f64 {
        let d = d3.max(self.min_distance_m);
        self.los_intercept_db
            + self.los_distance_slope * d.log10()
            + self.los_freq_slope * self.carrier_freq_ghz.log10()
    }

    /// NLOS path loss in dB, never below the LOS value.
    pub fn path_loss_nlos_db(&self, d3: f64) -> f64 {
        let d = d3.max(self.min_distance_m);
        let nlos = self.nlos_intercept_db
            + self.nlos_distance_slope * d.log10()
            + self.nlos_freq_slope * self.carrier_freq_ghz.log10();
        nlos.max(self.path_loss_los_db(d3))
    }

    pub fn los_probability(&self, d2: f64) -> f64 {
        if d2 <= self.los_prob_near_m {
            1.0
        } else if d2 <= self.los_prob_mid_m {
            (-(d2 - self.los_prob_near_m) / self.los_prob_mid_decay_m).exp()
        } else {
            (-(d2 - self.los_prob_mid_m) / self.los_prob_far_decay_m).exp() * self.los_prob_far_scale
        }
    }

    /// Linear Rician factor of a LOS link at 3-D distance `d3`.
    pub fn rician_factor(&self, d3: f64) -> f64 {
        db_to_linear(self.rician_k_intercept_db - self.rician_k_slope_db_per_m * d3)
    }
}

/// Second-order statistics of one link.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    /// NLOS variance β.
    pub beta: f64,
    /// LOS magnitude `|h̄|`; the phase is unknown.
    pub los_amplitude: f64,
    /// Mean-square gain `|h̄|² + β`.
    pub w: f64,
    pub is_los: bool,
}

impl LinkStats {
    /// Splits a total gain `omega` into LOS and NLOS parts with Rician factor `kappa`.
    pub fn from_total_gain(omega: f64, kappa: f64, is_los: bool) -> Self {
        let (beta, los_power) = if is_los && kappa > 0.0 {
            if kappa.is_infinite() {
                (0.0, omega)
            } else {
                (omega / (kappa + 1.0), omega * kappa / (kappa + 1.0))
            }
        } else {
            (omega, 0.0)
        };
        LinkStats::new(beta, los_power.sqrt())
    }

    pub fn new(beta: f64, los_amplitude: f64) -> Self {
        LinkStats {
            beta,
            los_amplitude,
            w: los_amplitude * los_amplitude + beta,
            is_los: los_amplitude > 0.0,
        }
    }

    pub fn nlos(beta: f64) -> Self {
        LinkStats::new(beta, 0.0)
    }

    pub fn zero() -> Self {
        LinkStats::new(0.0, 0.0)
    }

    /// `|h̄|²`.
    pub fn los_power(&self) -> f64 {
        self.los_amplitude * self.los_amplitude
    }

    /// `E[|g|⁴] - w² = 2|h̄|²β + β²`.
    pub fn excess_fourth_moment(&self) -> f64 {
        2.0 * self.los_power() * self.beta + self.beta * self.beta
    }

    fn sample(&self, rng: &mut impl Rng) -> (Complex64, f64) {
        let theta = rng.random_range(0.0..2.0 * PI);
        let los = Complex64::from_polar(self.los_amplitude, theta);
        (los + complex_gaussian(rng, self.beta), theta)
    }
}

/// Draws from `CN(0, variance)`.
pub fn complex_gaussian(rng: &mut impl Rng, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Uniform-phase unit-modulus symbol.
pub fn unit_phase(rng: &mut impl Rng) -> Complex64 {
    Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    /// M x K.
    pub ap_user: Grid<LinkStats>,
    /// K x K, diagonal holds the user self-loops.
    pub user_user: Grid<LinkStats>,
    /// M x M, diagonal holds the AP self-interference loops.
    pub ap_ap: Grid<LinkStats>,
}

impl ChannelStats {
    pub fn new(
        ap_user: Grid<LinkStats>,
        user_user: Grid<LinkStats>,
        ap_ap: Grid<LinkStats>,
    ) -> Result<Self> {
        let (m, k) = (ap_user.rows(), ap_user.cols());
        if m == 0 || k == 0 {
            return Err(Error::param("channel statistics need M >= 1 and K >= 1"));
        }
        if user_user.rows() != k || user_user.cols() != k {
            return Err(Error::param("user-user grid must be K x K"));
        }
        if ap_ap.rows() != m || ap_ap.cols() != m {
            return Err(Error::param("AP-AP grid must be M x M"));
        }
        for (name, g) in [("ap_user", &ap_user), ("user_user", &user_user), ("ap_ap", &ap_ap)] {
            if g.as_slice().iter().any(|l| !(l.w.is_finite() && l.beta >= 0.0)) {
                return Err(Error::param(format!("{name} contains invalid link statistics")));
            }
        }
        Ok(ChannelStats {
            ap_user,
            user_user,
            ap_ap,
        })
    }

    pub fn num_aps(&self) -> usize {
        self.ap_user.rows()
    }

    pub fn num_users(&self) -> usize {
        self.ap_user.cols()
    }

    /// Copy with every user self-loop removed (self-recycling ablation).
    pub fn without_user_self_loops(&self) -> Self {
        let mut out = self.clone();
        for k in 0..self.num_users() {
            out.user_user[(k, k)] = LinkStats::zero();
        }
        out
    }
}

/// Draws LOS states, shadowing and Rician splits for every link of a drop.
pub fn compute_channel_stats(
    deployment: &Deployment,
    config: &PropagationConfig,
    seed: u64,
) -> Result<ChannelStats> {
    config.validate()?;
    let m_count = deployment.num_aps();
    let k_count = deployment.num_users();
    let mut rng = rng::seeded(seed);

    let mut ap_user = Grid::filled(m_count, k_count, LinkStats::zero());
    for m in 0..m_count {
        for k in 0..k_count {
            let d2 = deployment.ap_user_planar(m, k);
            let d3 = deployment.ap_user_distance(m, k);
            ap_user[(m, k)] = draw_link(d2, d3, config, &mut rng)?;
        }
    }

    let self_loop = |db: f64| {
        let omega = db_to_linear(db);
        let k = config.self_loop_rician_k;
        LinkStats::from_total_gain(omega, k, k > 0.0)
    };

    let mut user_user = Grid::filled(k_count, k_count, LinkStats::zero());
    for k in 0..k_count {
        user_user[(k, k)] = self_loop(config.user_self_loop_db);
        for j in k + 1..k_count {
            let d = deployment.user_user_distance(k, j);
            let link = draw_link(d, d, config, &mut rng)?;
            user_user[(k, j)] = link;
            user_user[(j, k)] = link;
        }
    }

    let mut ap_ap = Grid::filled(m_count, m_count, LinkStats::zero());
    for m in 0..m_count {
        ap_ap[(m, m)] = self_loop(config.ap_self_loop_db);
        for q in m + 1..m_count {
            let d = deployment.ap_ap_distance(m, q);
            let link = draw_link(d, d, config, &mut rng)?;
            ap_ap[(m, q)] = link;
            ap_ap[(q, m)] = link;
        }
    }

    ChannelStats::new(ap_user, user_user, ap_ap)
}

fn draw_link(d2: f64, d3: f64, config: &PropagationConfig, rng: &mut impl Rng) -> Result<LinkStats> {
    if !(d3 >= 0.0 && d3.is_finite()) {
        return Err(Error::Internal(format!("non-finite link distance {d3}")));
    }
    let los = rng.random::<f64>() < config.los_probability(d2);
    let z: f64 = rng.sample(StandardNormal);
    let (pl, sigma, kappa) = if los {
        let d = d3.max(config.min_distance_m);
        (config.path_loss_los_db(d3), config.shadow_los_db, config.rician_factor(d))
    } else {
        (config.path_loss_nlos_db(d3), config.shadow_nlos_db, 0.0)
    };
    let omega = db_to_linear(-(pl + sigma * z));
    Ok(LinkStats::from_total_gain(omega, kappa, los))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LosPhases {
    pub ap_user: Grid<f64>,
    pub user_user: Grid<f64>,
    pub ap_ap: Grid<f64>,
}

/// One small-scale realization of every channel in a drop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub ap_user: Grid<Complex64>,
    pub user_user: Grid<Complex64>,
    pub ap_ap: Grid<Complex64>,
    pub los_phases: LosPhases,
}

impl ChannelRealization {
    pub fn zeros(stats: &ChannelStats) -> Self {
        let (m, k) = (stats.num_aps(), stats.num_users());
        let z = Complex64::new(0.0, 0.0);
        ChannelRealization {
            ap_user: Grid::filled(m, k, z),
            user_user: Grid::filled(k, k, z),
            ap_ap: Grid::filled(m, m, z),
            los_phases: LosPhases {
                ap_user: Grid::filled(m, k, 0.0),
                user_user: Grid::filled(k, k, 0.0),
                ap_ap: Grid::filled(m, m, 0.0),
            },
        }
    }

    /// Redraws every link in place. Reciprocal links (user-user, AP-AP) share
    /// one draw for both orientations.
    pub fn resample(&mut self, stats: &ChannelStats, rng: &mut impl Rng) {
        let (m_count, k_count) = (stats.num_aps(), stats.num_users());
        for m in 0..m_count {
            for k in 0..k_count {
                let (g, th) = stats.ap_user[(m, k)].sample(rng);
                self.ap_user[(m, k)] = g;
                self.los_phases.ap_user[(m, k)] = th;
            }
        }
        for k in 0..k_count {
            for j in k..k_count {
                let (g, th) = stats.user_user[(k, j)].sample(rng);
                self.user_user[(k, j)] = g;
                self.user_user[(j, k)] = g;
                self.los_phases.user_user[(k, j)] = th;
                self.los_phases.user_user[(j, k)] = th;
            }
        }
        for m in 0..m_count {
            for q in m..m_count {
                let (g, th) = stats.ap_ap[(m, q)].sample(rng);
                self.ap_ap[(m, q)] = g;
                self.ap_ap[(q, m)] = g;
                self.los_phases.ap_ap[(m, q)] = th;
                self.los_phases.ap_ap[(q, m)] = th;
            }
        }
    }
}

pub fn sample_realization(stats: &ChannelStats, seed: u64) -> ChannelRealization {
    let mut rng = rng::seeded(seed);
    sample_realization_with(stats, &mut rng)
}

pub fn sample_realization_with(stats: &ChannelStats, rng: &mut impl Rng) -> ChannelRealization {
    let mut out = ChannelRealization::zeros(stats);
    out.resample(stats, rng);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_positions, GeometryConfig};

    fn single_link_stats(link: LinkStats) -> ChannelStats {
        ChannelStats::new(
            Grid::filled(1, 1, link),
            Grid::filled(1, 1, LinkStats::nlos(0.1)),
            Grid::filled(1, 1, LinkStats::nlos(0.1)),
        )
        .unwrap()
    }

    #[test]
    fn rician_split_limits() {
        let nlos = LinkStats::from_total_gain(2.5, 0.0, false);
        assert_eq!(nlos.los_amplitude, 0.0);
        assert_eq!(nlos.beta, 2.5);
        let big = LinkStats::from_total_gain(2.5, 1e12, true);
        assert!(big.beta < 1e-11);
        assert!((big.los_power() - 2.5).abs() < 1e-9);
        let inf = LinkStats::from_total_gain(2.5, f64::INFINITY, true);
        assert_eq!(inf.beta, 0.0);
        let mid = LinkStats::from_total_gain(3.0, 2.0, true);
        assert!((mid.w - 3.0).abs() < 1e-15);
        assert!((mid.los_power() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn inh_los_path_loss_at_ten_meters() {
        let cfg = PropagationConfig::default();
        let expected = 32.4 + 17.3 + 20.0 * 3.4f64.log10();
        assert!((cfg.path_loss_los_db(10.0) - expected).abs() < 1e-12);
        assert!((cfg.path_loss_los_db(10.0) - 60.33).abs() < 5e-3);
        assert!(cfg.path_loss_nlos_db(10.0) >= cfg.path_loss_los_db(10.0));
    }

    #[test]
    fn los_probability_pieces() {
        let cfg = PropagationConfig::default();
        assert_eq!(cfg.los_probability(3.0), 1.0);
        assert!((cfg.los_probability(20.0) - (-15.0f64 / 70.8).exp()).abs() < 1e-15);
        assert!((cfg.los_probability(60.0) - 0.54 * (-11.0f64 / 211.7).exp()).abs() < 1e-15);
    }

    #[test]
    fn drop_stats_invariants() {
        let dep = generate_positions(16, 4, &GeometryConfig::default(), 3).unwrap();
        let cfg = PropagationConfig::default();
        let stats = compute_channel_stats(&dep, &cfg, 9).unwrap();
        assert_eq!(stats, compute_channel_stats(&dep, &cfg, 9).unwrap());
        for grid in [&stats.ap_user, &stats.user_user, &stats.ap_ap] {
            for l in grid.as_slice() {
                assert!(l.beta > 0.0);
                assert!(l.w >= l.beta);
                assert!((l.w - (l.los_power() + l.beta)).abs() <= 1e-15 * l.w);
                if !l.is_los {
                    assert_eq!(l.los_amplitude, 0.0);
                }
            }
        }
        for k in 0..4 {
            for j in 0..4 {
                assert_eq!(stats.user_user[(k, j)].w, stats.user_user[(j, k)].w);
            }
            assert!((stats.user_user[(k, k)].w - db_to_linear(-15.0)).abs() < 1e-15);
        }
        for m in 0..16 {
            for q in 0..16 {
                assert_eq!(stats.ap_ap[(m, q)].beta, stats.ap_ap[(q, m)].beta);
            }
        }
    }

    #[test]
    fn deterministic_los_magnitude() {
        let stats = single_link_stats(LinkStats::new(0.0, 1.0));
        let mut rng = rng::seeded(5);
        let mut r = ChannelRealization::zeros(&stats);
        for _ in 0..100 {
            r.resample(&stats, &mut rng);
            assert!((r.ap_user[(0, 0)].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn moments_match_statistics() {
        let link = LinkStats::new(0.6, 0.8);
        let stats = single_link_stats(link);
        let n = 200_000;
        let mut rng = rng::seeded(17);
        let mut r = ChannelRealization::zeros(&stats);
        let (mut sum, mut sum_sq, mut sum_pow2) = (Complex64::new(0.0, 0.0), 0.0, 0.0);
        for _ in 0..n {
            r.resample(&stats, &mut rng);
            let g = r.ap_user[(0, 0)];
            sum += g;
            sum_sq += g.norm_sqr();
            sum_pow2 += g.norm_sqr().powi(2);
        }
        let nf = n as f64;
        let mean_pow = sum_sq / nf;
        let se = ((sum_pow2 / nf - mean_pow * mean_pow) / nf).sqrt();
        assert!((mean_pow - link.w).abs() < 3.0 * se, "{mean_pow} vs {}", link.w);
        let se_mean = (link.w / 2.0 / nf).sqrt();
        assert!((sum.re / nf).abs() < 3.0 * se_mean);
        assert!((sum.im / nf).abs() < 3.0 * se_mean);
    }
}
