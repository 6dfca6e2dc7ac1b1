//! Shared test oracles.
#![allow(dead_code)]

use cellfree_core::lpsolver::{LinearProgram, Relation};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random LP with a finite box and a known feasible point.
pub fn random_box_lp(seed: u64) -> LinearProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=6);
    let m = rng.random_range(1..=8);
    let mut lp = LinearProgram::new(n);
    let mut x0 = vec![0.0; n];
    for j in 0..n {
        let lo = if rng.random_bool(0.3) { rng.random_range(-1.0..0.0) } else { 0.0 };
        let hi = lo + rng.random_range(0.5..4.0);
        lp.lower_bounds[j] = lo;
        lp.upper_bounds[j] = hi;
        x0[j] = rng.random_range(lo..hi);
        lp.objective[j] = rng.random_range(-1.0..1.0);
    }
    let mut equalities = 0;
    for _ in 0..m {
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ax: f64 = a.iter().zip(&x0).map(|(p, q)| p * q).sum();
        let u: f64 = rng.random();
        let (rel, rhs) = if u < 0.15 && equalities + 1 < n {
            equalities += 1;
            (Relation::Eq, ax)
        } else if u < 0.6 {
            (Relation::Le, ax + rng.random_range(0.0..1.0))
        } else {
            (Relation::Ge, ax - rng.random_range(0.0..1.0))
        };
        lp.add_constraint(a, rel, rhs);
    }
    lp
}

/// Brute-force optimum over all basic solutions of a bounded LP.
pub fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_vars();
    let mut eqs: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut pool: Vec<(Vec<f64>, f64)> = Vec::new();
    for c in &lp.constraints {
        match c.relation {
            Relation::Eq => eqs.push((c.coeffs.clone(), c.rhs)),
            _ => pool.push((c.coeffs.clone(), c.rhs)),
        }
    }
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        pool.push((e.clone(), lp.lower_bounds[j]));
        pool.push((e, lp.upper_bounds[j]));
    }
    if eqs.len() > n {
        return None;
    }
    let need = n - eqs.len();
    let mut best: Option<f64> = None;
    let mut pick = Vec::with_capacity(need);
    subsets(pool.len(), need, 0, &mut pick, &mut |idx| {
        let rows: Vec<&(Vec<f64>, f64)> = eqs.iter().chain(idx.iter().map(|&i| &pool[i])).collect();
        let a = DMatrix::from_fn(n, n, |r, c| rows[r].0[c]);
        let b = DVector::from_fn(n, |r, _| rows[r].1);
        let Some(x) = a.clone().lu().solve(&b) else { return };
        if (&a * &x - &b).amax() > 1e-9 * (1.0 + b.amax()) {
            return;
        }
        let x: Vec<f64> = x.iter().copied().collect();
        if feasible(lp, &x, 1e-9) {
            let v = lp.objective_value(&x);
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    });
    best
}

fn subsets(total: usize, k: usize, start: usize, pick: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    if pick.len() == k {
        f(pick);
        return;
    }
    for i in start..total {
        if total - i < k - pick.len() {
            break;
        }
        pick.push(i);
        subsets(total, k, i + 1, pick, f);
        pick.pop();
    }
}

/// Independent row and bound check. Row violations are relative to
/// `max(|rhs|, Σ|a_i x_i|, tiny)` so rows with tiny coefficients are judged
/// on their own scale.
pub fn relative_violation(lp: &LinearProgram, x: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (j, &v) in x.iter().enumerate() {
        worst = worst.max(lp.lower_bounds[j] - v).max(v - lp.upper_bounds[j]);
    }
    for c in &lp.constraints {
        let ax: f64 = c.coeffs.iter().zip(x).map(|(a, b)| a * b).sum();
        let mag: f64 = c.coeffs.iter().zip(x).map(|(a, b)| (a * b).abs()).sum();
        let scale = c.rhs.abs().max(mag).max(f64::MIN_POSITIVE);
        let v = match c.relation {
            Relation::Le => ax - c.rhs,
            Relation::Ge => c.rhs - ax,
            Relation::Eq => (ax - c.rhs).abs(),
        };
        worst = worst.max(v / scale);
    }
    worst
}

pub fn feasible(lp: &LinearProgram, x: &[f64], tol: f64) -> bool {
    relative_violation(lp, x) <= tol
}
