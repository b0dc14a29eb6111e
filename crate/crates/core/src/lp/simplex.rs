//! Dense two-phase tableau simplex with Bland's rule.
//!
//! Entering column: lowest index with negative reduced cost. Leaving row:
//! minimum ratio, ties broken by lowest basic-variable index. Both choices are
//! deterministic, so identical inputs give identical pivots.

use nalgebra::DMatrix;

use super::{LinearProgram, LpSolution, LpStatus};
use crate::{Real, Result};

const MAX_PIVOTS: usize = 50_000;

/// Standard-form column terms `x_k = offset + Σ coef·y_col`.
struct VarMap<T> {
    offset: T,
    terms: Vec<(usize, T)>,
}

struct Tableau<T: Real> {
    t: DMatrix<T>,
    basis: Vec<usize>,
    active: Vec<bool>,
    tol: T,
}

impl<T: Real> Tableau<T> {
    fn rhs_col(&self) -> usize {
        self.t.ncols() - 1
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let nc = self.t.ncols();
        let p = self.t[(r, c)];
        for j in 0..nc {
            self.t[(r, j)] /= p;
        }
        self.t[(r, c)] = T::one();
        for i in 0..self.t.nrows() {
            if i == r {
                continue;
            }
            let f = self.t[(i, c)];
            if f == T::zero() {
                continue;
            }
            for j in 0..nc {
                let v = self.t[(r, j)];
                if v != T::zero() {
                    self.t[(i, j)] -= f * v;
                }
            }
            self.t[(i, c)] = T::zero();
            let rhs = nc - 1;
            if self.t[(i, rhs)] < T::zero() && self.t[(i, rhs)] > -self.tol {
                self.t[(i, rhs)] = T::zero();
            }
        }
        self.basis[r] = c;
    }

    fn reduced_costs(&self, cost: &[T]) -> Vec<T> {
        let nc = self.t.ncols() - 1;
        let mut rc = cost.to_vec();
        for (i, &b) in self.basis.iter().enumerate() {
            if !self.active[i] || cost[b] == T::zero() {
                continue;
            }
            for (j, r) in rc.iter_mut().enumerate().take(nc) {
                *r -= cost[b] * self.t[(i, j)];
            }
        }
        rc
    }

    /// Runs simplex iterations; returns `None` on optimality.
    fn optimize(&mut self, cost: &[T], allowed: &[bool]) -> Option<LpStatus> {
        let cscale = cost.iter().fold(T::one(), |m, c| m.max(c.abs()));
        let rc_tol = self.tol * cscale;
        let rhs = self.rhs_col();
        for _ in 0..MAX_PIVOTS {
            let rc = self.reduced_costs(cost);
            let enter = (0..rhs).find(|&j| allowed[j] && rc[j] < -rc_tol);
            let c = enter?;
            let mut leave: Option<(usize, T)> = None;
            for i in 0..self.t.nrows() {
                if !self.active[i] {
                    continue;
                }
                let a = self.t[(i, c)];
                if a <= self.tol {
                    continue;
                }
                let ratio = self.t[(i, rhs)] / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        let slack = self.tol * (T::one() + br.abs());
                        if ratio < br - slack || (ratio <= br + slack && self.basis[i] < self.basis[bi]) {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            match leave {
                None => return Some(LpStatus::Unbounded),
                Some((r, _)) => self.pivot(r, c),
            }
        }
        Some(LpStatus::IterationLimit)
    }
}

pub fn solve_lp<T: Real>(lp: &LinearProgram<T>) -> Result<LpSolution<T>> {
    lp.validate()?;
    let n = lp.num_vars();
    let tol = T::eps().sqrt() * T::lit(0.1);

    // Substitute bounded and free variables by nonnegative columns.
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0;
    let mut bound_rows: Vec<(usize, T, String)> = Vec::new();
    for k in 0..n {
        let map = match (lp.lower[k], lp.upper[k]) {
            (Some(l), u) => {
                if let Some(u) = u {
                    bound_rows.push((ncols, u - l, format!("bound {}", lp.var_labels[k])));
                }
                ncols += 1;
                VarMap {
                    offset: l,
                    terms: vec![(ncols - 1, T::one())],
                }
            }
            (None, Some(u)) => {
                ncols += 1;
                VarMap {
                    offset: u,
                    terms: vec![(ncols - 1, -T::one())],
                }
            }
            (None, None) => {
                ncols += 2;
                VarMap {
                    offset: T::zero(),
                    terms: vec![(ncols - 2, T::one()), (ncols - 1, -T::one())],
                }
            }
        };
        maps.push(map);
    }
    let ns = ncols;

    let transform = |row: &[T], rhs: T| {
        let mut out = vec![T::zero(); ns];
        let mut b = rhs;
        for (k, &a) in row.iter().enumerate() {
            if a == T::zero() {
                continue;
            }
            b -= a * maps[k].offset;
            for &(c, coef) in &maps[k].terms {
                out[c] += a * coef;
            }
        }
        (out, b)
    };

    // (coefficients, rhs, is_le, label)
    let mut rows: Vec<(Vec<T>, T, bool, String)> = Vec::new();
    for ((r, &b), l) in lp.eq_rows.iter().zip(&lp.eq_rhs).zip(&lp.eq_labels) {
        let (a, b) = transform(r, b);
        rows.push((a, b, false, l.clone()));
    }
    for ((r, &b), l) in lp.ub_rows.iter().zip(&lp.ub_rhs).zip(&lp.ub_labels) {
        let (a, b) = transform(r, b);
        rows.push((a, b, true, l.clone()));
    }
    for (c, b, l) in bound_rows {
        let mut a = vec![T::zero(); ns];
        a[c] = T::one();
        rows.push((a, b, true, l));
    }

    let m = rows.len();
    let nslack = rows.iter().filter(|r| r.2).count();
    let nart = rows.iter().filter(|r| !r.2 || r.1 < T::zero()).count();
    let total = ns + nslack + nart;
    let mut t = DMatrix::zeros(m, total + 1);
    let mut basis = vec![0; m];
    let mut art_row = Vec::new();
    let (mut si, mut ai) = (ns, ns + nslack);
    for (i, (a, b, is_le, _)) in rows.iter().enumerate() {
        let sign = if *b < T::zero() { -T::one() } else { T::one() };
        for c in 0..ns {
            t[(i, c)] = a[c] * sign;
        }
        t[(i, total)] = *b * sign;
        if *is_le {
            t[(i, si)] = sign;
            if sign > T::zero() {
                basis[i] = si;
            }
            si += 1;
        }
        if !*is_le || sign < T::zero() {
            t[(i, ai)] = T::one();
            basis[i] = ai;
            art_row.push(i);
            ai += 1;
        }
    }
    let mut tab = Tableau {
        t,
        basis,
        active: vec![true; m],
        tol,
    };

    let is_art = |j: usize| j >= ns + nslack && j < total;
    let mut cost1 = vec![T::zero(); total];
    for (j, c) in cost1.iter_mut().enumerate() {
        if is_art(j) {
            *c = T::one();
        }
    }
    let all = vec![true; total];
    if let Some(status) = tab.optimize(&cost1, &all) {
        if status == LpStatus::IterationLimit {
            return Ok(failed(status, n));
        }
    }
    let bscale = rows.iter().fold(T::one(), |s, r| s.max(r.1.abs()));
    let infeas: T = (0..m)
        .filter(|&i| is_art(tab.basis[i]))
        .fold(T::zero(), |s, i| s + tab.t[(i, total)]);
    if infeas > tol * bscale * T::lit(10.0) {
        let mut sol = failed(LpStatus::Infeasible, n);
        sol.violated = (0..m)
            .filter(|&i| is_art(tab.basis[i]) && tab.t[(i, total)] > tol * bscale)
            .map(|i| rows[i].3.clone())
            .collect();
        return Ok(sol);
    }
    // Drive remaining artificials out of the basis; drop redundant rows.
    for i in 0..m {
        if !is_art(tab.basis[i]) {
            continue;
        }
        match (0..ns + nslack).find(|&j| tab.t[(i, j)].abs() > tol) {
            Some(j) => tab.pivot(i, j),
            None => tab.active[i] = false,
        }
    }

    let mut cost2 = vec![T::zero(); total];
    for (map, &obj) in maps.iter().zip(&lp.objective) {
        for &(c, coef) in &map.terms {
            cost2[c] += obj * coef;
        }
    }
    let allowed: Vec<bool> = (0..total).map(|j| !is_art(j)).collect();
    if let Some(status) = tab.optimize(&cost2, &allowed) {
        return Ok(failed(status, n));
    }

    let mut y = vec![T::zero(); total];
    for i in 0..m {
        if tab.active[i] {
            y[tab.basis[i]] = tab.t[(i, total)];
        }
    }
    let x: Vec<T> = maps
        .iter()
        .map(|mp| mp.terms.iter().fold(mp.offset, |s, &(c, coef)| s + coef * y[c]))
        .collect();
    let objective = x.iter().zip(&lp.objective).fold(T::zero(), |s, (&a, &c)| s + a * c);
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        violated: vec![],
    })
}

fn failed<T: Real>(status: LpStatus, n: usize) -> LpSolution<T> {
    LpSolution {
        status,
        x: vec![T::zero(); n],
        objective: T::zero(),
        violated: vec![],
    }
}
