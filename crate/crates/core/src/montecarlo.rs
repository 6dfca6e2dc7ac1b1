//! Sample-level oracle for the closed forms.
//!
//! Each sample draws a full channel realization, runs the pilot phase through
//! the LMMSE estimator, and then evaluates the defining products of every
//! statistic (or the assembled received signals) with fresh noise and
//! symbols. Samples are grouped into fixed-size batches, each on its own RNG
//! substream; batch moments are merged pairwise in batch order so the result
//! is independent of the worker count.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closedform::StatsMatrices;
use crate::error::{Error, Result};
use crate::estimation::{estimate_channels_into, EstimationStats, PilotAssignment};
use crate::grid::Grid;
use crate::optimizer::Allocation;
use crate::propagation::{complex_gaussian, unit_phase, ChannelRealization, ChannelStats};
use crate::rng;

const BATCH: usize = 1 << 14;

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: Complex64,
    /// Standard error of the real part.
    pub std_error: f64,
    pub std_error_im: f64,
    pub n_samples: usize,
}

impl McEstimate {
    /// z-score of the real part against `reference`; zero for an exact match.
    pub fn z_score(&self, reference: f64) -> f64 {
        let delta = self.mean.re - reference;
        if delta == 0.0 {
            0.0
        } else {
            delta / self.std_error
        }
    }

    pub fn z_score_im(&self, reference: f64) -> f64 {
        let delta = self.mean.im - reference;
        if delta == 0.0 {
            0.0
        } else {
            delta / self.std_error_im
        }
    }
}

/// Running mean and centered second moment of a complex sample, per part.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    n: u64,
    mean: Complex64,
    m2_re: f64,
    m2_im: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, x: Complex64) {
        self.n += 1;
        let n = self.n as f64;
        let d = x - self.mean;
        self.mean += d / n;
        let d2 = x - self.mean;
        self.m2_re += d.re * d2.re;
        self.m2_im += d.im * d2.im;
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let d = other.mean - self.mean;
        self.mean += d * (nb / n);
        self.m2_re += other.m2_re + d.re * d.re * na * nb / n;
        self.m2_im += other.m2_im + d.im * d.im * na * nb / n;
        self.n += other.n;
    }

    pub fn estimate(&self) -> McEstimate {
        let n = self.n as f64;
        let se = |m2: f64| if self.n > 1 { (m2 / (n - 1.0) / n).sqrt() } else { f64::NAN };
        McEstimate {
            mean: self.mean,
            std_error: se(self.m2_re),
            std_error_im: se(self.m2_im),
            n_samples: self.n as usize,
        }
    }
}

type Ctx<'a> = (&'a ChannelStats, &'a EstimationStats, &'a PilotAssignment);

/// Realization plus estimates and uplink noise for one sample.
struct Sample {
    real: ChannelRealization,
    est: Grid<Complex64>,
    noise: Vec<Complex64>,
}

impl Sample {
    fn new(stats: &ChannelStats) -> Self {
        Sample {
            real: ChannelRealization::zeros(stats),
            est: Grid::filled(stats.num_aps(), stats.num_users(), Complex64::new(0.0, 0.0)),
            noise: vec![Complex64::new(0.0, 0.0); stats.num_aps()],
        }
    }

    fn draw(&mut self, (stats, est, pilots): Ctx<'_>, rng: &mut impl Rng) {
        self.real.resample(stats, rng);
        estimate_channels_into(&self.real, stats, pilots, est, rng, &mut self.est);
        for n in self.noise.iter_mut() {
            *n = complex_gaussian(rng, est.noise_power);
        }
    }
}

fn check_samples(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::param("Monte-Carlo estimates need at least two samples"));
    }
    Ok(())
}

/// Runs `body` over `n` samples split in batches, merging per-batch results in order.
fn batched<T, F, M>(n: usize, seed: u64, init: impl Fn() -> T + Sync, body: F, merge: M) -> T
where
    T: Send,
    F: Fn(&mut T, &mut rand_chacha::ChaCha8Rng, usize) + Sync,
    M: Fn(&mut T, T) + Sync,
{
    let batches = n.div_ceil(BATCH);
    let results: Vec<T> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, b as u64);
            let len = BATCH.min(n - b * BATCH);
            let mut acc = init();
            body(&mut acc, &mut rng, len);
            acc
        })
        .collect();
    pairwise(results, &merge).unwrap_or_else(init)
}

fn pairwise<T, M: Fn(&mut T, T)>(mut items: Vec<T>, merge: &M) -> Option<T> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                merge(&mut a, b);
            }
            next.push(a);
        }
        items = next;
    }
    items.pop()
}

#[allow(clippy::ptr_arg)]
fn merge_all(a: &mut Vec<Moments>, b: Vec<Moments>) {
    for (x, y) in a.iter_mut().zip(&b) {
        x.merge(y);
    }
}

/// Per-user `τ μ |z_k|²` with `z_k` the received energy-phase signal.
#[allow(clippy::too_many_arguments)]
pub fn mc_harvested_energy(
    stats: &ChannelStats,
    est: &EstimationStats,
    pilots: &PilotAssignment,
    alloc: &Allocation,
    mu: f64,
    tau_harvest: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    check_samples(n_samples)?;
    let (mc, kc) = (stats.num_aps(), stats.num_users());
    let eta = alloc.eta();
    let sqrt_p = alloc.p_dl.map(|p| p.sqrt());
    let sqrt_eta: Vec<f64> = eta.iter().map(|e| e.sqrt()).collect();
    let ctx = (stats, est, pilots);
    let acc = batched(
        n_samples,
        seed,
        || vec![Moments::default(); kc],
        |acc, rng, len| {
            let mut s = Sample::new(stats);
            let mut sym = vec![Complex64::new(0.0, 0.0); mc * kc];
            let mut x = vec![Complex64::new(0.0, 0.0); kc];
            for _ in 0..len {
                s.draw(ctx, rng);
                for v in sym.iter_mut() {
                    *v = unit_phase(rng);
                }
                for v in x.iter_mut() {
                    *v = complex_gaussian(rng, 1.0);
                }
                // per-AP transmit signal Σ_j √p ĝ s
                let tx: Vec<Complex64> = (0..mc)
                    .map(|m| (0..kc).map(|j| s.est[(m, j)] * sym[m * kc + j] * sqrt_p[(m, j)]).sum())
                    .collect();
                for k in 0..kc {
                    let mut z: Complex64 = (0..mc).map(|m| s.real.ap_user[(m, k)].conj() * tx[m]).sum();
                    for j in 0..kc {
                        z += s.real.user_user[(k, j)] * x[j] * sqrt_eta[j];
                    }
                    acc[k].push(Complex64::new(tau_harvest * mu * z.norm_sqr(), 0.0));
                }
            }
        },
        merge_all,
    );
    Ok(acc.iter().map(Moments::estimate).collect())
}

/// Identifies one element of B, C, D or F.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementId {
    B { m: usize, k: usize },
    C { k: usize, j: usize, m: usize, mp: usize },
    D { m: usize, k: usize },
    F { k: usize, q: usize, j: usize, m: usize, mp: usize },
}

impl ElementId {
    pub fn validate(&self, num_aps: usize, num_users: usize) -> Result<()> {
        let ok = match *self {
            ElementId::B { m, k } | ElementId::D { m, k } => m < num_aps && k < num_users,
            ElementId::C { k, j, m, mp } => k < num_users && j < num_users && m < num_aps && mp < num_aps,
            ElementId::F { k, q, j, m, mp } => {
                k < num_users && j < num_users && q < num_aps && m < num_aps && mp < num_aps
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("element {self:?} out of range for M={num_aps}, K={num_users}")))
        }
    }

    /// Closed-form value of this element.
    pub fn closed_form(&self, mats: &StatsMatrices) -> Complex64 {
        match *self {
            ElementId::B { m, k } => mats.b[k][m],
            ElementId::C { k, j, m, mp } => mats.c(k, j)[(m, mp)],
            ElementId::D { m, k } => Complex64::new(mats.d[k][m], 0.0),
            ElementId::F { k, q, j, m, mp } => {
                if m == mp {
                    Complex64::new(mats.f_diag(k, q, j)[m], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            ElementId::B { m, k } => format!("b[m={m},k={k}]"),
            ElementId::C { k, j, m, mp } => format!("c[k={k},j={j},m={m},m'={mp}]"),
            ElementId::D { m, k } => format!("d[m={m},k={k}]"),
            ElementId::F { k, q, j, m, mp } => format!("f[k={k},q={q},j={j},m={m},m'={mp}]"),
        }
    }
}

/// Monte-Carlo estimates of every element of B, C, D and F.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementEstimates {
    pub num_aps: usize,
    pub num_users: usize,
    b: Vec<McEstimate>,
    c: Vec<McEstimate>,
    d: Vec<McEstimate>,
    f: Vec<McEstimate>,
}

impl ElementEstimates {
    pub fn get(&self, id: ElementId) -> McEstimate {
        let (mc, kc) = (self.num_aps, self.num_users);
        match id {
            ElementId::B { m, k } => self.b[m * kc + k],
            ElementId::C { k, j, m, mp } => self.c[((k * kc + j) * mc + m) * mc + mp],
            ElementId::D { m, k } => self.d[m * kc + k],
            ElementId::F { k, q, j, m, mp } => self.f[(((k * mc + q) * kc + j) * mc + m) * mc + mp],
        }
    }

    /// Every element id, in storage order.
    pub fn ids(&self) -> Vec<ElementId> {
        all_ids(self.num_aps, self.num_users)
    }
}

pub fn all_ids(mc: usize, kc: usize) -> Vec<ElementId> {
    let mut ids = Vec::new();
    for m in 0..mc {
        for k in 0..kc {
            ids.push(ElementId::B { m, k });
        }
    }
    for k in 0..kc {
        for j in 0..kc {
            for m in 0..mc {
                for mp in 0..mc {
                    ids.push(ElementId::C { k, j, m, mp });
                }
            }
        }
    }
    for m in 0..mc {
        for k in 0..kc {
            ids.push(ElementId::D { m, k });
        }
    }
    for k in 0..kc {
        for q in 0..mc {
            for j in 0..kc {
                for m in 0..mc {
                    for mp in 0..mc {
                        ids.push(ElementId::F { k, q, j, m, mp });
                    }
                }
            }
        }
    }
    ids
}

pub fn mc_stats_all(
    stats: &ChannelStats,
    est: &EstimationStats,
    pilots: &PilotAssignment,
    rsi: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<ElementEstimates> {
    check_samples(n_samples)?;
    let (mc, kc) = (stats.num_aps(), stats.num_users());
    if rsi.len() != mc {
        return Err(Error::param("one residual-SI level per AP required"));
    }
    let sqrt_rsi: Vec<f64> = rsi.iter().map(|s| s.sqrt()).collect();
    let (nb, ncc, nd, nf) = (mc * kc, kc * kc * mc * mc, mc * kc, kc * mc * kc * mc * mc);
    let ctx = (stats, est, pilots);
    let acc = batched(
        n_samples,
        seed,
        || vec![Moments::default(); nb + ncc + nd + nf],
        |acc, rng, len| {
            let mut s = Sample::new(stats);
            let (b_acc, rest) = acc.split_at_mut(nb);
            let (c_acc, rest) = rest.split_at_mut(ncc);
            let (d_acc, f_acc) = rest.split_at_mut(nd);
            let mut x = vec![Complex64::new(0.0, 0.0); mc];
            for _ in 0..len {
                s.draw(ctx, rng);
                for m in 0..mc {
                    for k in 0..kc {
                        let gh = s.est[(m, k)];
                        b_acc[m * kc + k].push(gh.conj() * s.real.ap_user[(m, k)]);
                        d_acc[m * kc + k].push(Complex64::new(gh.norm_sqr() * s.noise[m].norm_sqr(), 0.0));
                    }
                }
                for k in 0..kc {
                    for j in 0..kc {
                        for m in 0..mc {
                            x[m] = s.est[(m, k)].conj() * s.real.ap_user[(m, j)];
                        }
                        let base = (k * kc + j) * mc * mc;
                        for m in 0..mc {
                            for mp in 0..mc {
                                c_acc[base + m * mc + mp].push(x[m] * x[mp].conj());
                            }
                        }
                    }
                }
                for k in 0..kc {
                    for q in 0..mc {
                        for j in 0..kc {
                            let gqj = s.est[(q, j)];
                            for m in 0..mc {
                                x[m] = s.est[(m, k)].conj() * s.real.ap_ap[(m, q)] * gqj * sqrt_rsi[m];
                            }
                            let base = ((k * mc + q) * kc + j) * mc * mc;
                            for m in 0..mc {
                                for mp in 0..mc {
                                    f_acc[base + m * mc + mp].push(x[m] * x[mp].conj());
                                }
                            }
                        }
                    }
                }
            }
        },
        merge_all,
    );
    let est: Vec<McEstimate> = acc.iter().map(Moments::estimate).collect();
    Ok(ElementEstimates {
        num_aps: mc,
        num_users: kc,
        b: est[..nb].to_vec(),
        c: est[nb..nb + ncc].to_vec(),
        d: est[nb + ncc..nb + ncc + nd].to_vec(),
        f: est[nb + ncc + nd..].to_vec(),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn mc_stats_element(
    stats: &ChannelStats,
    est: &EstimationStats,
    pilots: &PilotAssignment,
    rsi: &[f64],
    which: ElementId,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    which.validate(stats.num_aps(), stats.num_users())?;
    Ok(mc_stats_all(stats, est, pilots, rsi, n_samples, seed)?.get(which))
}

/// Monte-Carlo decomposition of the combined uplink signal of one user.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinrMc {
    /// `η_k |E[α^H ĝ* g]|²`.
    pub signal: McEstimate,
    /// `E|Σ_j √η_j α^H (ĝ*_k ⊙ g_j) x_j|²`.
    pub data_power: McEstimate,
    /// Residual self-interference power.
    pub si_power: McEstimate,
    pub noise_power: McEstimate,
    /// `E|x̂_k|²` of the assembled signal.
    pub total_power: McEstimate,
    /// `signal / (total - signal)` with a delta-method standard error.
    pub sinr: McEstimate,
}

impl SinrMc {
    /// Interference-plus-noise estimate `data - signal + si + noise`.
    pub fn denominator(&self) -> f64 {
        self.data_power.mean.re - self.signal.mean.re + self.si_power.mean.re + self.noise_power.mean.re
    }
}

/// Mean and covariance of a small real vector.
#[derive(Clone, Debug, PartialEq)]
struct CovAcc {
    n: u64,
    mean: Vec<f64>,
    co: Vec<f64>,
}

impl CovAcc {
    fn new(dim: usize) -> Self {
        CovAcc {
            n: 0,
            mean: vec![0.0; dim],
            co: vec![0.0; dim * dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        let d = self.mean.len();
        self.n += 1;
        let n = self.n as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / n;
        }
        for i in 0..d {
            let after = x[i] - self.mean[i];
            for j in 0..d {
                self.co[i * d + j] += delta[j] * after;
            }
        }
    }

    fn merge(&mut self, o: &CovAcc) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = o.clone();
            return;
        }
        let d = self.mean.len();
        let (na, nb) = (self.n as f64, o.n as f64);
        let n = na + nb;
        let delta: Vec<f64> = o.mean.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        for i in 0..d {
            for j in 0..d {
                self.co[i * d + j] += o.co[i * d + j] + delta[i] * delta[j] * na * nb / n;
            }
        }
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl * nb / n;
        }
        self.n += o.n;
    }

    /// Covariance of the sample means.
    fn mean_cov(&self, i: usize, j: usize) -> f64 {
        let n = self.n as f64;
        self.co[i * self.mean.len() + j] / (n - 1.0) / n
    }

    fn real_estimate(&self, i: usize) -> McEstimate {
        McEstimate {
            mean: Complex64::new(self.mean[i], 0.0),
            std_error: self.mean_cov(i, i).sqrt(),
            std_error_im: 0.0,
            n_samples: self.n as usize,
        }
    }
}

// component order in the per-user accumulator
const GAIN_RE: usize = 0;
const GAIN_IM: usize = 1;
const DATA: usize = 2;
const SI: usize = 3;
const NOISE: usize = 4;
const TOTAL: usize = 5;

#[allow(clippy::too_many_arguments)]
pub fn mc_sinr_terms(
    stats: &ChannelStats,
    est: &EstimationStats,
    pilots: &PilotAssignment,
    alloc: &Allocation,
    rsi: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<SinrMc>> {
    check_samples(n_samples)?;
    let (mc, kc) = (stats.num_aps(), stats.num_users());
    if rsi.len() != mc || alloc.alpha.len() != kc {
        return Err(Error::param("allocation or residual-SI size mismatch"));
    }
    let eta = alloc.eta();
    let sqrt_eta: Vec<f64> = eta.iter().map(|e| e.sqrt()).collect();
    let sqrt_p = alloc.p_dl.map(|p| p.sqrt());
    let sqrt_rsi: Vec<f64> = rsi.iter().map(|s| s.sqrt()).collect();
    let alpha: Vec<DVector<Complex64>> = alloc.alpha.clone();
    let ctx = (stats, est, pilots);
    let acc = batched(
        n_samples,
        seed,
        || vec![CovAcc::new(6); kc],
        |acc, rng, len| {
            let mut s = Sample::new(stats);
            let mut sym = vec![Complex64::new(0.0, 0.0); mc * kc];
            let mut x = vec![Complex64::new(0.0, 0.0); kc];
            let mut si_at_ap = vec![Complex64::new(0.0, 0.0); mc];
            for _ in 0..len {
                s.draw(ctx, rng);
                for v in sym.iter_mut() {
                    *v = unit_phase(rng);
                }
                for v in x.iter_mut() {
                    *v = complex_gaussian(rng, 1.0);
                }
                let tx: Vec<Complex64> = (0..mc)
                    .map(|q| (0..kc).map(|j| s.est[(q, j)] * sym[q * kc + j] * sqrt_p[(q, j)]).sum())
                    .collect();
                for m in 0..mc {
                    let leak: Complex64 = (0..mc).map(|q| s.real.ap_ap[(m, q)] * tx[q]).sum();
                    si_at_ap[m] = leak * sqrt_rsi[m];
                }
                for k in 0..kc {
                    let a = &alpha[k];
                    let mut gain = Complex64::new(0.0, 0.0);
                    let mut data = Complex64::new(0.0, 0.0);
                    let mut si = Complex64::new(0.0, 0.0);
                    let mut noise = Complex64::new(0.0, 0.0);
                    for m in 0..mc {
                        let w = a[m].conj() * s.est[(m, k)].conj();
                        gain += w * s.real.ap_user[(m, k)];
                        let rx: Complex64 = (0..kc).map(|j| s.real.ap_user[(m, j)] * x[j] * sqrt_eta[j]).sum();
                        data += w * rx;
                        si += w * si_at_ap[m];
                        noise += w * s.noise[m];
                    }
                    let total = data + si + noise;
                    acc[k].push(&[
                        gain.re,
                        gain.im,
                        data.norm_sqr(),
                        si.norm_sqr(),
                        noise.norm_sqr(),
                        total.norm_sqr(),
                    ]);
                }
            }
        },
        |a, b| {
            for (x, y) in a.iter_mut().zip(&b) {
                x.merge(y);
            }
        },
    );
    Ok(acc
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let (gr, gi) = (c.mean[GAIN_RE], c.mean[GAIN_IM]);
            let e = eta[k];
            let signal_val = e * (gr * gr + gi * gi);
            // gradient of the signal w.r.t. (gain_re, gain_im)
            let (sr, si) = (2.0 * e * gr, 2.0 * e * gi);
            let var_s = sr * sr * c.mean_cov(GAIN_RE, GAIN_RE)
                + si * si * c.mean_cov(GAIN_IM, GAIN_IM)
                + 2.0 * sr * si * c.mean_cov(GAIN_RE, GAIN_IM);
            let signal = McEstimate {
                mean: Complex64::new(signal_val, 0.0),
                std_error: var_s.max(0.0).sqrt(),
                std_error_im: 0.0,
                n_samples: c.n as usize,
            };
            let t = c.mean[TOTAL];
            let den = t - signal_val;
            let ratio = if signal_val == 0.0 { 0.0 } else { signal_val / den };
            // R = S/(T-S): dR/dS = T/(T-S)², dR/dT = -S/(T-S)²
            let (ds, dt) = (t / (den * den), -signal_val / (den * den));
            let cov_st = sr * c.mean_cov(GAIN_RE, TOTAL) + si * c.mean_cov(GAIN_IM, TOTAL);
            let var_r = ds * ds * var_s + dt * dt * c.mean_cov(TOTAL, TOTAL) + 2.0 * ds * dt * cov_st;
            SinrMc {
                signal,
                data_power: c.real_estimate(DATA),
                si_power: c.real_estimate(SI),
                noise_power: c.real_estimate(NOISE),
                total_power: c.real_estimate(TOTAL),
                sinr: McEstimate {
                    mean: Complex64::new(ratio, 0.0),
                    std_error: if signal_val == 0.0 { 0.0 } else { var_r.max(0.0).sqrt() },
                    std_error_im: 0.0,
                    n_samples: c.n as usize,
                },
            }
        })
        .collect())
}
