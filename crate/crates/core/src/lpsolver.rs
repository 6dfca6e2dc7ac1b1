//! Dense two-phase primal simplex for small linear programs.
//!
//! Variables are shifted to their lower bounds; finite upper bounds become
//! explicit rows. Rows and columns are equilibrated before the tableau is
//! formed, since the wireless problems mix watt-scale powers with path
//! gains around 1e-10. Pivoting uses Dantzig's rule and falls back to
//! Bland's rule after a streak of degenerate pivots. On exit the basic
//! solution is recomputed from the scaled constraint matrix so primal values
//! do not carry the accumulated tableau round-off.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

impl Relation {
    fn flipped(self) -> Self {
        match self {
            Relation::Le => Relation::Ge,
            Relation::Ge => Relation::Le,
            Relation::Eq => Relation::Eq,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `minimize objective·x` over the constraints and `lower <= x <= upper`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub lower_bounds: Vec<f64>,
    pub upper_bounds: Vec<f64>,
    pub names: Vec<String>,
}

impl LinearProgram {
    /// `n` variables with bounds `[0, +inf)` and a zero objective.
    pub fn new(n: usize) -> Self {
        LinearProgram {
            objective: vec![0.0; n],
            constraints: Vec::new(),
            lower_bounds: vec![0.0; n],
            upper_bounds: vec![f64::INFINITY; n],
            names: (0..n).map(|i| format!("x{i}")).collect(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_constraint(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.lower_bounds.len() != n || self.upper_bounds.len() != n || self.names.len() != n {
            return Err(Error::param("bound/name vectors must match the variable count"));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(Error::param(format!(
                    "constraint {i} has {} coefficients, expected {n}",
                    c.coeffs.len()
                )));
            }
            if !c.rhs.is_finite() || c.coeffs.iter().any(|a| !a.is_finite()) {
                return Err(Error::param(format!("constraint {i} has non-finite data")));
            }
        }
        for j in 0..n {
            let (l, u) = (self.lower_bounds[j], self.upper_bounds[j]);
            if !l.is_finite() {
                return Err(Error::param(format!("variable {j} needs a finite lower bound")));
            }
            if u < l || u.is_nan() {
                return Err(Error::param(format!("variable {j} has lower {l} > upper {u}")));
            }
            if !self.objective[j].is_finite() {
                return Err(Error::param(format!("objective coefficient {j} is not finite")));
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation over rows and bounds. Row violations are measured
    /// relative to `max(|rhs|, Σ|a_j x_j|)`, bound violations absolutely.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            let mag: f64 = c.coeffs.iter().zip(x).map(|(a, v)| (a * v).abs()).sum();
            let scale = mag.max(c.rhs.abs());
            let viol = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            if viol > 0.0 {
                worst = worst.max(if scale > 0.0 { viol / scale } else { viol });
            }
        }
        for ((&v, &l), &u) in x.iter().zip(&self.lower_bounds).zip(&self.upper_bounds) {
            worst = worst.max(l - v).max(v - u);
        }
        worst
    }

    /// Plain-text dump, one line per constraint.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let fmt_row = |s: &mut String, coeffs: &[f64]| {
            let mut any = false;
            for (j, &a) in coeffs.iter().enumerate() {
                if a != 0.0 {
                    let _ = write!(s, " {a:+e} {}", self.names[j]);
                    any = true;
                }
            }
            if !any {
                s.push_str(" 0");
            }
        };
        let _ = writeln!(s, "# vars={} rows={}", self.num_vars(), self.constraints.len());
        s.push_str("minimize:");
        fmt_row(&mut s, &self.objective);
        s.push('\n');
        for (i, c) in self.constraints.iter().enumerate() {
            let _ = write!(s, "r{i}:");
            fmt_row(&mut s, &c.coeffs);
            let _ = writeln!(s, " {} {:e}", c.relation.symbol(), c.rhs);
        }
        for j in 0..self.num_vars() {
            let _ = writeln!(
                s,
                "bound {}: {:e} <= {} <= {:e}",
                j, self.lower_bounds[j], self.names[j], self.upper_bounds[j]
            );
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Primal feasibility, relative to the row magnitude.
    pub feasibility: f64,
    /// Reduced-cost threshold on the scaled problem.
    pub optimality: f64,
    /// Smallest admissible pivot element on the scaled problem.
    pub pivot: f64,
    pub max_iterations: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub degenerate_streak: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            feasibility: 1e-8,
            optimality: 1e-9,
            pivot: 1e-10,
            max_iterations: 50_000,
            degenerate_streak: 30,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub iterations: usize,
}

struct Tableau {
    /// `rows x (cols + 1)`, RHS in the last column.
    t: Vec<f64>,
    rows: usize,
    cols: usize,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.cols + 1) + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.cols)
    }

    fn pivot(&mut self, r: usize, c: usize, cost: &mut [f64]) {
        let w = self.cols + 1;
        let p = self.t[r * w + c];
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for v in prow.iter_mut() {
            *v /= p;
        }
        prow[c] = 1.0;
        let eliminate = |row: &mut [f64]| {
            let f = row[c];
            if f != 0.0 {
                for (x, &y) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * y;
                }
                row[c] = 0.0;
            }
        };
        for row in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            eliminate(row);
        }
        eliminate(cost);
        self.basis[r] = c;
    }
}

enum Outcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

fn simplex_loop(
    tab: &mut Tableau,
    cost: &mut [f64],
    allowed: &[bool],
    tol: &Tolerances,
    iterations: &mut usize,
) -> Outcome {
    let mut streak = 0usize;
    loop {
        if *iterations >= tol.max_iterations {
            return Outcome::IterationLimit;
        }
        let bland = streak >= tol.degenerate_streak;
        let mut enter = None;
        let mut best = -tol.optimality;
        for j in 0..tab.cols {
            if !allowed[j] || cost[j] >= -tol.optimality {
                continue;
            }
            if bland {
                enter = Some(j);
                break;
            }
            if cost[j] < best {
                best = cost[j];
                enter = Some(j);
            }
        }
        let Some(c) = enter else {
            return Outcome::Optimal;
        };

        let mut leave: Option<usize> = None;
        let mut min_ratio = f64::INFINITY;
        for i in 0..tab.rows {
            let a = tab.at(i, c);
            if a <= tol.pivot {
                continue;
            }
            let ratio = tab.rhs(i).max(0.0) / a;
            let take = match leave {
                None => true,
                Some(l) => {
                    let eps = 1e-12 * (1.0 + min_ratio.abs());
                    if ratio < min_ratio - eps {
                        true
                    } else if ratio <= min_ratio + eps {
                        if bland {
                            tab.basis[i] < tab.basis[l]
                        } else {
                            a > tab.at(l, c)
                        }
                    } else {
                        false
                    }
                }
            };
            if take {
                leave = Some(i);
                min_ratio = ratio.min(min_ratio);
            }
        }
        let Some(r) = leave else {
            return Outcome::Unbounded;
        };
        if min_ratio <= 1e-14 {
            streak += 1;
        } else {
            streak = 0;
        }
        tab.pivot(r, c, cost);
        // clamp round-off so the ratio test stays well-defined
        let w = tab.cols + 1;
        for i in 0..tab.rows {
            let v = &mut tab.t[i * w + tab.cols];
            if *v < 0.0 && *v > -1e-11 {
                *v = 0.0;
            }
        }
        *iterations += 1;
    }
}

/// Equilibrates `a` in place; returns `(row_scale, col_scale)`.
fn equilibrate(a: &mut [Vec<f64>], n: usize) -> (Vec<f64>, Vec<f64>) {
    let m = a.len();
    let mut rs = vec![1.0; m];
    let mut cs = vec![1.0; n];
    for _ in 0..6 {
        for (i, row) in a.iter().enumerate() {
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for (j, &v) in row.iter().enumerate() {
                let x = (v * rs[i] * cs[j]).abs();
                if x > 0.0 {
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
            }
            if hi > 0.0 {
                rs[i] /= (lo * hi).sqrt();
            }
        }
        for j in 0..n {
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for (i, row) in a.iter().enumerate() {
                let x = (row[j] * rs[i] * cs[j]).abs();
                if x > 0.0 {
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
            }
            if hi > 0.0 {
                cs[j] /= (lo * hi).sqrt();
            }
        }
    }
    for (i, row) in a.iter().enumerate() {
        let hi = row
            .iter()
            .enumerate()
            .map(|(j, &v)| (v * rs[i] * cs[j]).abs())
            .fold(0.0, f64::max);
        if hi > 0.0 {
            rs[i] /= hi;
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v *= rs[i] * cs[j];
        }
    }
    (rs, cs)
}

/// Solves `B x = rhs` for a dense square `B` (row-major) by partial pivoting.
fn dense_solve(mut b: Vec<f64>, mut rhs: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| b[x * n + col].abs().total_cmp(&b[y * n + col].abs()))?;
        if b[piv * n + col].abs() < 1e-14 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                b.swap(col * n + k, piv * n + k);
            }
            rhs.swap(col, piv);
        }
        let p = b[col * n + col];
        for r in col + 1..n {
            let f = b[r * n + col] / p;
            if f != 0.0 {
                for k in col..n {
                    b[r * n + k] -= f * b[col * n + k];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| b[r * n + k] * x[k]).sum();
        x[r] = (rhs[r] - s) / b[r * n + r];
    }
    Some(x)
}

pub fn solve(lp: &LinearProgram, tol: &Tolerances) -> Result<LpSolution> {
    lp.validate()?;
    let n = lp.num_vars();
    let lower = &lp.lower_bounds;

    // rows over the shifted variables y = x - l
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rels = Vec::new();
    let mut rhs = Vec::new();
    for c in &lp.constraints {
        let shift: f64 = c.coeffs.iter().zip(lower).map(|(a, l)| a * l).sum();
        rows.push(c.coeffs.clone());
        rels.push(c.relation);
        rhs.push(c.rhs - shift);
    }
    for j in 0..n {
        let u = lp.upper_bounds[j];
        if u.is_finite() {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            rows.push(e);
            rels.push(Relation::Le);
            rhs.push(u - lower[j]);
        }
    }
    let m = rows.len();
    // drop empty rows after checking them
    let mut keep = Vec::with_capacity(m);
    for i in 0..m {
        if rows[i].iter().all(|&a| a == 0.0) {
            let ok = match rels[i] {
                Relation::Le => rhs[i] >= 0.0,
                Relation::Ge => rhs[i] <= 0.0,
                Relation::Eq => rhs[i] == 0.0,
            };
            if !ok {
                return Ok(LpSolution {
                    status: LpStatus::Infeasible,
                    x: lower.clone(),
                    objective_value: lp.objective_value(lower),
                    iterations: 0,
                });
            }
        } else {
            keep.push(i);
        }
    }
    let mut a: Vec<Vec<f64>> = keep.iter().map(|&i| rows[i].clone()).collect();
    let mut rels: Vec<Relation> = keep.iter().map(|&i| rels[i]).collect();
    let mut b: Vec<f64> = keep.iter().map(|&i| rhs[i]).collect();
    let m = a.len();

    let (rs, cs) = equilibrate(&mut a, n);
    for i in 0..m {
        b[i] *= rs[i];
        if b[i] < 0.0 {
            b[i] = -b[i];
            for v in a[i].iter_mut() {
                *v = -*v;
            }
            rels[i] = rels[i].flipped();
        }
    }
    let mut cost_scaled: Vec<f64> = (0..n).map(|j| lp.objective[j] * cs[j]).collect();
    let cmax = cost_scaled.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    if cmax > 0.0 {
        cost_scaled.iter_mut().for_each(|c| *c /= cmax);
    }

    // column layout: structural | slack/surplus | artificial
    let n_slack = rels.iter().filter(|r| **r != Relation::Eq).count();
    let n_art = rels.iter().filter(|r| **r != Relation::Le).count();
    let cols = n + n_slack + n_art;
    let w = cols + 1;
    let mut t = vec![0.0; m * w];
    let mut basis = vec![0usize; m];
    let mut is_art = vec![false; cols];
    let (mut next_slack, mut next_art) = (n, n + n_slack);
    for i in 0..m {
        t[i * w..i * w + n].copy_from_slice(&a[i]);
        t[i * w + cols] = b[i];
        match rels[i] {
            Relation::Le => {
                t[i * w + next_slack] = 1.0;
                basis[i] = next_slack;
                next_slack += 1;
            }
            Relation::Ge => {
                t[i * w + next_slack] = -1.0;
                next_slack += 1;
                t[i * w + next_art] = 1.0;
                basis[i] = next_art;
                is_art[next_art] = true;
                next_art += 1;
            }
            Relation::Eq => {
                t[i * w + next_art] = 1.0;
                basis[i] = next_art;
                is_art[next_art] = true;
                next_art += 1;
            }
        }
    }
    let original = t.clone();
    let mut tab = Tableau {
        t,
        rows: m,
        cols,
        basis,
    };
    let mut iterations = 0usize;
    let bmax = b.iter().fold(0.0f64, |acc, v| acc.max(*v));

    // phase 1
    if n_art > 0 {
        let mut cost = vec![0.0; w];
        for i in 0..m {
            if is_art[tab.basis[i]] {
                for (j, c) in cost.iter_mut().enumerate() {
                    *c -= tab.at(i, j);
                }
            }
        }
        for j in 0..cols {
            if is_art[j] {
                cost[j] = 0.0;
            }
        }
        let allowed = vec![true; cols];
        if let Outcome::IterationLimit = simplex_loop(&mut tab, &mut cost, &allowed, tol, &mut iterations) {
            return Ok(limit_solution(lp, iterations));
        }
        let infeas = -cost[cols];
        if infeas > tol.feasibility * (1.0 + bmax) {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: lower.clone(),
                objective_value: lp.objective_value(lower),
                iterations,
            });
        }
        // drive artificials out of the basis
        let mut redundant = Vec::new();
        for i in 0..m {
            if !is_art[tab.basis[i]] {
                continue;
            }
            let candidate = (0..cols)
                .filter(|&j| !is_art[j])
                .max_by(|&x, &y| tab.at(i, x).abs().total_cmp(&tab.at(i, y).abs()));
            match candidate {
                Some(j) if tab.at(i, j).abs() > 1e-9 => {
                    let mut dummy = vec![0.0; w];
                    tab.pivot(i, j, &mut dummy);
                }
                _ => redundant.push(i),
            }
        }
        if !redundant.is_empty() {
            let keep_rows: Vec<usize> = (0..m).filter(|i| !redundant.contains(i)).collect();
            let mut nt = Vec::with_capacity(keep_rows.len() * w);
            let mut no = Vec::with_capacity(keep_rows.len() * w);
            let mut nb = Vec::with_capacity(keep_rows.len());
            for &i in &keep_rows {
                nt.extend_from_slice(&tab.t[i * w..(i + 1) * w]);
                no.extend_from_slice(&original[i * w..(i + 1) * w]);
                nb.push(tab.basis[i]);
            }
            tab.t = nt;
            tab.rows = keep_rows.len();
            tab.basis = nb;
            return finish(lp, tab, no, &is_art, &cost_scaled, &cs, tol, iterations);
        }
    }
    finish(lp, tab, original, &is_art, &cost_scaled, &cs, tol, iterations)
}

fn limit_solution(lp: &LinearProgram, iterations: usize) -> LpSolution {
    LpSolution {
        status: LpStatus::IterationLimit,
        x: lp.lower_bounds.clone(),
        objective_value: lp.objective_value(&lp.lower_bounds),
        iterations,
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    lp: &LinearProgram,
    mut tab: Tableau,
    original: Vec<f64>,
    is_art: &[bool],
    cost_scaled: &[f64],
    cs: &[f64],
    tol: &Tolerances,
    mut iterations: usize,
) -> Result<LpSolution> {
    let n = lp.num_vars();
    let cols = tab.cols;
    let w = cols + 1;
    let m = tab.rows;

    let mut cost = vec![0.0; w];
    cost[..n].copy_from_slice(cost_scaled);
    for i in 0..m {
        let cb = if tab.basis[i] < n { cost_scaled[tab.basis[i]] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..w {
                cost[j] -= cb * tab.at(i, j);
            }
        }
    }
    let allowed: Vec<bool> = (0..cols).map(|j| !is_art[j]).collect();
    let outcome = simplex_loop(&mut tab, &mut cost, &allowed, tol, &mut iterations);
    let status = match outcome {
        Outcome::Optimal => LpStatus::Optimal,
        Outcome::Unbounded => LpStatus::Unbounded,
        Outcome::IterationLimit => return Ok(limit_solution(lp, iterations)),
    };

    let extract = |ys: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|j| {
                let x = lp.lower_bounds[j] + ys[j].max(0.0) * cs[j];
                x.min(lp.upper_bounds[j])
            })
            .collect()
    };
    let mut y_tab = vec![0.0; cols];
    for i in 0..m {
        y_tab[tab.basis[i]] = tab.rhs(i);
    }
    let x_tab = extract(&y_tab);

    // refine from the unpivoted matrix with the final basis
    let mut bmat = vec![0.0; m * m];
    for i in 0..m {
        for (k, &bj) in tab.basis.iter().enumerate() {
            bmat[i * m + k] = original[i * w + bj];
        }
    }
    let brhs: Vec<f64> = (0..m).map(|i| original[i * w + cols]).collect();
    let x = match dense_solve(bmat, brhs, m) {
        Some(xb) => {
            let mut y = vec![0.0; cols];
            for (k, &bj) in tab.basis.iter().enumerate() {
                y[bj] = xb[k];
            }
            let x_ref = extract(&y);
            if lp.max_violation(&x_ref) <= lp.max_violation(&x_tab) {
                x_ref
            } else {
                x_tab
            }
        }
        None => x_tab,
    };
    Ok(LpSolution {
        status,
        objective_value: lp.objective_value(&x),
        x,
        iterations,
    })
}
