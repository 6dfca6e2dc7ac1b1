//! AP and user placement on a wrap-around square.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub type Point = [f64; 2];

/// Deployment area parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// Side of the square area in meters.
    pub side_m: f64,
    /// Vertical offset between the AP plane and the user plane in meters.
    pub height_diff_m: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            side_m: 100.0,
            height_diff_m: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub side_length: f64,
    pub ap_positions: Vec<Point>,
    pub user_positions: Vec<Point>,
    pub height_diff: f64,
    pub rng_seed: u64,
}

impl Deployment {
    pub fn num_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn num_users(&self) -> usize {
        self.user_positions.len()
    }

    /// 3-D distance between AP `m` and user `k`.
    pub fn ap_user_distance(&self, m: usize, k: usize) -> f64 {
        wrap_distance(
            self.ap_positions[m],
            self.user_positions[k],
            self.side_length,
            self.height_diff,
        )
    }

    /// Planar (wrapped) distance between AP `m` and user `k`.
    pub fn ap_user_planar(&self, m: usize, k: usize) -> f64 {
        wrap_distance(self.ap_positions[m], self.user_positions[k], self.side_length, 0.0)
    }

    pub fn user_user_distance(&self, k: usize, j: usize) -> f64 {
        wrap_distance(self.user_positions[k], self.user_positions[j], self.side_length, 0.0)
    }

    pub fn ap_ap_distance(&self, m: usize, q: usize) -> f64 {
        wrap_distance(self.ap_positions[m], self.ap_positions[q], self.side_length, 0.0)
    }
}

/// Places `num_aps` APs and `num_users` users i.i.d. uniformly on the square.
pub fn generate_positions(
    num_aps: usize,
    num_users: usize,
    config: &GeometryConfig,
    seed: u64,
) -> Result<Deployment> {
    if num_aps == 0 || num_users == 0 {
        return Err(Error::param(format!(
            "deployment needs at least one AP and one user (got M={num_aps}, K={num_users})"
        )));
    }
    if !(config.side_m > 0.0 && config.side_m.is_finite()) {
        return Err(Error::param(format!("side length must be positive, got {}", config.side_m)));
    }
    if !(config.height_diff_m >= 0.0 && config.height_diff_m.is_finite()) {
        return Err(Error::param(format!(
            "height difference must be non-negative, got {}",
            config.height_diff_m
        )));
    }
    let side = config.side_m;
    let mut rng = rng::seeded(seed);
    let mut draw = |n: usize| -> Vec<Point> {
        (0..n)
            .map(|_| [rng.random_range(0.0..side), rng.random_range(0.0..side)])
            .collect()
    };
    let ap_positions = draw(num_aps);
    let user_positions = draw(num_users);
    Ok(Deployment {
        side_length: side,
        ap_positions,
        user_positions,
        height_diff: config.height_diff_m,
        rng_seed: seed,
    })
}

/// Distance on the torus of side `side`, with a vertical offset applied after
/// the planar minimum over the nine shifted images of `b`.
pub fn wrap_distance(a: Point, b: Point, side: f64, height: f64) -> f64 {
    let mut best = f64::INFINITY;
    for sx in [-side, 0.0, side] {
        for sy in [-side, 0.0, side] {
            let dx = a[0] - (b[0] + sx);
            let dy = a[1] - (b[1] + sy);
            best = best.min(dx * dx + dy * dy);
        }
    }
    (best + height * height).sqrt()
}
