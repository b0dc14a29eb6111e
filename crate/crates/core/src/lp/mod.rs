//! Small dense linear programs: representation, solver and the per-iteration
//! problem builders.

mod builders;
mod simplex;

pub use builders::*;
pub use simplex::solve_lp;

use std::fmt::Write as _;

use crate::{Error, Real, Result};

/// `min cᵀx` subject to `A_eq x = b_eq`, `A_ub x ≤ b_ub`, `lower ≤ x ≤ upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram<T> {
    pub objective: Vec<T>,
    pub eq_rows: Vec<Vec<T>>,
    pub eq_rhs: Vec<T>,
    pub eq_labels: Vec<String>,
    pub ub_rows: Vec<Vec<T>>,
    pub ub_rhs: Vec<T>,
    pub ub_labels: Vec<String>,
    /// `None` is unbounded in that direction.
    pub lower: Vec<Option<T>>,
    pub upper: Vec<Option<T>>,
    pub var_labels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution<T> {
    pub status: LpStatus,
    pub x: Vec<T>,
    pub objective: T,
    /// Labels of rows left violated by phase one when infeasible.
    pub violated: Vec<String>,
}

impl<T: Real> Default for LinearProgram<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> LinearProgram<T> {
    pub fn new() -> Self {
        LinearProgram {
            objective: vec![],
            eq_rows: vec![],
            eq_rhs: vec![],
            eq_labels: vec![],
            ub_rows: vec![],
            ub_rhs: vec![],
            ub_labels: vec![],
            lower: vec![],
            upper: vec![],
            var_labels: vec![],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// Adds a variable and returns its index. Existing rows gain a zero column.
    pub fn add_var(&mut self, label: impl Into<String>, cost: T, lower: Option<T>, upper: Option<T>) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.var_labels.push(label.into());
        for r in self.eq_rows.iter_mut().chain(self.ub_rows.iter_mut()) {
            r.push(T::zero());
        }
        self.objective.len() - 1
    }

    fn dense(&self, terms: &[(usize, T)]) -> Vec<T> {
        let mut row = vec![T::zero(); self.num_vars()];
        for &(k, a) in terms {
            row[k] += a;
        }
        row
    }

    pub fn add_eq(&mut self, label: impl Into<String>, terms: &[(usize, T)], rhs: T) {
        let row = self.dense(terms);
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
        self.eq_labels.push(label.into());
    }

    pub fn add_le(&mut self, label: impl Into<String>, terms: &[(usize, T)], rhs: T) {
        let row = self.dense(terms);
        self.ub_rows.push(row);
        self.ub_rhs.push(rhs);
        self.ub_labels.push(label.into());
    }

    pub fn var(&self, label: &str) -> Option<usize> {
        self.var_labels.iter().position(|l| l == label)
    }

    pub fn value(&self, sol: &LpSolution<T>, label: &str) -> Option<T> {
        self.var(label).and_then(|k| sol.x.get(k).copied())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let bad = |s: String| Err(Error::MalformedLp(s));
        if self.lower.len() != n || self.upper.len() != n || self.var_labels.len() != n {
            return bad("bound or label count mismatch".into());
        }
        if self.eq_rows.len() != self.eq_rhs.len() || self.ub_rows.len() != self.ub_rhs.len() {
            return bad("row/rhs count mismatch".into());
        }
        if self.eq_rows.iter().chain(&self.ub_rows).any(|r| r.len() != n) {
            return bad("row width mismatch".into());
        }
        for k in 0..n {
            if let (Some(l), Some(u)) = (self.lower[k], self.upper[k]) {
                if l > u {
                    return bad(format!("variable {} has lower > upper", self.var_labels[k]));
                }
            }
        }
        let mut labels = self.var_labels.clone();
        labels.sort();
        labels.dedup();
        if labels.len() != n {
            return bad("variable labels are not unique".into());
        }
        let finite = |x: &T| x.is_finite();
        if !self.objective.iter().all(finite)
            || !self.eq_rhs.iter().chain(&self.ub_rhs).all(finite)
            || !self.eq_rows.iter().chain(&self.ub_rows).flatten().all(finite)
        {
            return bad("non-finite coefficient".into());
        }
        Ok(())
    }

    /// Plain-text dump: objective, rows and bounds, one item per line.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let term = |s: &mut String, a: T, k: usize| {
            let _ = write!(s, " {:+.12e}*{}", a.f64(), self.var_labels[k]);
        };
        s.push_str("minimize");
        for (k, &c) in self.objective.iter().enumerate() {
            if c != T::zero() {
                term(&mut s, c, k);
            }
        }
        s.push('\n');
        let rows = self
            .eq_rows
            .iter()
            .zip(&self.eq_rhs)
            .zip(&self.eq_labels)
            .map(|((r, b), l)| (r, b, l, "="))
            .chain(
                self.ub_rows
                    .iter()
                    .zip(&self.ub_rhs)
                    .zip(&self.ub_labels)
                    .map(|((r, b), l)| (r, b, l, "<=")),
            );
        for (row, rhs, label, op) in rows {
            let _ = write!(s, "row {label}:");
            for (k, &a) in row.iter().enumerate() {
                if a != T::zero() {
                    term(&mut s, a, k);
                }
            }
            let _ = writeln!(s, " {op} {:+.12e}", rhs.f64());
        }
        for k in 0..self.num_vars() {
            let f = |b: Option<T>, inf: &str| b.map_or(inf.to_string(), |v| format!("{:+.12e}", v.f64()));
            let _ = writeln!(
                s,
                "bound {}: {} .. {}",
                self.var_labels[k],
                f(self.lower[k], "-inf"),
                f(self.upper[k], "+inf")
            );
        }
        s
    }
}
