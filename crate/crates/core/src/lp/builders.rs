//! Per-iteration linear programs of the allocator.
//!
//! Every builder shares the same core layout: gains `m_j`, `d_j` with box
//! bounds, increments `dm_j`, `dd_j` with step windows, and linking rows
//! `m_j - dm_j = m_j^ν`. Mode rows carry the first-order update of `σ_i` or
//! `ζ_i` from the sensitivities.

use super::LinearProgram;
use crate::freq::AggregateParams;
use crate::grid::GainBounds;
use crate::modal::ModeSet;
use crate::Real;

/// Objective weights. All must be positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostConfig<T> {
    pub c_zeta: T,
    pub c_f: T,
    pub c_fdot: T,
    pub c_m: T,
    pub c_d: T,
}

impl<T: Real> Default for CostConfig<T> {
    fn default() -> Self {
        CostConfig {
            c_zeta: T::lit(100.0),
            c_f: T::lit(10.0),
            c_fdot: T::lit(10.0),
            c_m: T::one(),
            c_d: T::one(),
        }
    }
}

impl<T: Real> CostConfig<T> {
    pub fn is_valid(&self) -> bool {
        [self.c_zeta, self.c_f, self.c_fdot, self.c_m, self.c_d]
            .iter()
            .all(|&c| c > T::zero())
    }
}

/// Per-unit increment windows. The effective window of unit `k` is the
/// interval spanned by `lo·φ_k` and `hi·φ_k`, so a negative `φ` flips and
/// shrinks it.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBounds<T> {
    pub dm_lo: Vec<T>,
    pub dm_hi: Vec<T>,
    pub dd_lo: Vec<T>,
    pub dd_hi: Vec<T>,
    pub phi_m: Vec<T>,
    pub phi_d: Vec<T>,
}

impl<T: Real> StepBounds<T> {
    pub fn uniform(n: usize, step_m: T, step_d: T) -> Self {
        StepBounds {
            dm_lo: vec![-step_m; n],
            dm_hi: vec![step_m; n],
            dd_lo: vec![-step_d; n],
            dd_hi: vec![step_d; n],
            phi_m: vec![T::one(); n],
            phi_d: vec![T::one(); n],
        }
    }

    pub fn with_phi(mut self, phi_m: Vec<T>, phi_d: Vec<T>) -> Self {
        self.phi_m = phi_m;
        self.phi_d = phi_d;
        self
    }

    fn window(lo: T, hi: T, phi: T) -> (T, T) {
        let (a, b) = (lo * phi, hi * phi);
        (a.min(b), a.max(b))
    }

    pub fn window_m(&self, k: usize) -> (T, T) {
        Self::window(self.dm_lo[k], self.dm_hi[k], self.phi_m[k])
    }

    pub fn window_d(&self, k: usize) -> (T, T) {
        Self::window(self.dd_lo[k], self.dd_hi[k], self.phi_d[k])
    }
}

/// `φ_j = s_j / max_j s_j`, clipped to `[-1, 1]`; all ones when no entry is positive.
pub fn phi_normalize<T: Real>(s: &[T]) -> Vec<T> {
    let mx = s.iter().fold(T::zero(), |m, &x| m.max(x));
    if !(mx > T::zero()) {
        return vec![T::one(); s.len()];
    }
    s.iter().map(|&x| (x / mx).max(-T::one()).min(T::one())).collect()
}

/// How the RoCoF limit enters the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RocofForm {
    /// `f0|ΔP| ≤ lim·M`, linear in `M` after cross-multiplication.
    Exact,
    /// First-order expansion of `-f0ΔP/M` around the current `M`.
    Taylor,
}

/// Linearized frequency data at the current iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreqRows<T> {
    pub agg: AggregateParams<T>,
    pub nadir: T,
    pub dnadir_dm: T,
    pub dnadir_dd: T,
    pub rocof_limit: T,
    pub nadir_limit: T,
    pub form: RocofForm,
    /// Margin that turns `M/T - F_g < D` into a non-strict row.
    pub eps_tm: T,
}

/// Data shared by all builders.
#[derive(Debug, Clone)]
pub struct SlpInputs<'a, T: Real> {
    pub modes: &'a ModeSet<T>,
    /// Rows of `modes` that receive constraints.
    pub kept: Vec<usize>,
    /// Controllable units in the column order of `modes.gains`.
    pub units: Vec<usize>,
    /// `p_g / Σ p_g` per controllable unit.
    pub weights: Vec<T>,
    pub m: Vec<T>,
    pub d: Vec<T>,
    pub bounds: Vec<GainBounds<T>>,
    pub steps: StepBounds<T>,
    /// Contribution of fixed units to `M` and `D`.
    pub m_fixed: T,
    pub d_fixed: T,
    /// `None` drops every frequency row.
    pub freq: Option<FreqRows<T>>,
}

/// Which problem a built program encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpPhase {
    Stability,
    Damping,
    Effort,
    Uniform,
}

impl LpPhase {
    pub fn label(self) -> &'static str {
        match self {
            LpPhase::Stability => "stability",
            LpPhase::Damping => "damping",
            LpPhase::Effort => "effort",
            LpPhase::Uniform => "uniform",
        }
    }
}

struct GainVars {
    dm: Vec<usize>,
    dd: Vec<usize>,
    m: Vec<usize>,
    d: Vec<usize>,
}

fn gain_block<T: Real>(lp: &mut LinearProgram<T>, inp: &SlpInputs<T>, c_m: T, c_d: T) -> GainVars {
    let nu = inp.units.len();
    let mut v = GainVars {
        dm: vec![],
        dd: vec![],
        m: vec![],
        d: vec![],
    };
    for k in 0..nu {
        let j = inp.units[k];
        let b = &inp.bounds[k];
        v.m.push(lp.add_var(format!("m_{j}"), c_m * inp.weights[k], Some(b.m_lo), Some(b.m_hi)));
    }
    for k in 0..nu {
        let j = inp.units[k];
        let b = &inp.bounds[k];
        v.d.push(lp.add_var(format!("d_{j}"), c_d * inp.weights[k], Some(b.d_lo), Some(b.d_hi)));
    }
    for k in 0..nu {
        let (lo, hi) = inp.steps.window_m(k);
        v.dm.push(lp.add_var(format!("dm_{}", inp.units[k]), T::zero(), Some(lo), Some(hi)));
    }
    for k in 0..nu {
        let (lo, hi) = inp.steps.window_d(k);
        v.dd.push(lp.add_var(format!("dd_{}", inp.units[k]), T::zero(), Some(lo), Some(hi)));
    }
    for k in 0..nu {
        let j = inp.units[k];
        lp.add_eq(
            format!("link_m_{j}"),
            &[(v.m[k], T::one()), (v.dm[k], -T::one())],
            inp.m[k],
        );
        lp.add_eq(
            format!("link_d_{j}"),
            &[(v.d[k], T::one()), (v.dd[k], -T::one())],
            inp.d[k],
        );
    }
    v
}

/// Adds `x_i - Σ S_ig Δ_g = x_i^ν` for every kept mode; returns the `x_i` columns.
fn mode_rows<T: Real>(lp: &mut LinearProgram<T>, inp: &SlpInputs<T>, g: &GainVars, zeta: bool) -> Vec<usize> {
    let nu = inp.units.len();
    let name = if zeta { "zeta" } else { "sigma" };
    let mut out = vec![];
    for &i in &inp.kept {
        let x = lp.add_var(format!("{name}_{i}"), T::zero(), None, None);
        let (sens, now) = if zeta {
            (&inp.modes.dzeta, inp.modes.zetas[i])
        } else {
            (&inp.modes.dsigma, inp.modes.lambdas[i].re)
        };
        let mut terms = vec![(x, T::one())];
        for k in 0..nu {
            terms.push((g.dm[k], -sens[(i, k)]));
            terms.push((g.dd[k], -sens[(i, nu + k)]));
        }
        lp.add_eq(format!("update_{name}_{i}"), &terms, now);
        out.push(x);
    }
    out
}

/// Aggregate definitions and frequency rows. `hard` pins the slacks to zero.
fn freq_rows<T: Real>(lp: &mut LinearProgram<T>, inp: &SlpInputs<T>, g: &GainVars, costs: &CostConfig<T>, hard: bool) {
    let nu = inp.units.len();
    let zero = T::zero();
    let upper = if hard { Some(zero) } else { None };
    let Some(fr) = inp.freq else {
        return;
    };
    let mv = lp.add_var("M", zero, None, None);
    let dv = lp.add_var("D", zero, None, None);
    let mut tm = vec![(mv, T::one())];
    let mut td = vec![(dv, T::one())];
    for k in 0..nu {
        tm.push((g.m[k], -inp.weights[k]));
        td.push((g.d[k], -inp.weights[k]));
    }
    lp.add_eq("def_M", &tm, inp.m_fixed);
    lp.add_eq("def_D", &td, inp.d_fixed);

    let f1 = lp.add_var("eta_f1", costs.c_f, Some(zero), upper);
    let f2 = lp.add_var("eta_f2", costs.c_f, Some(zero), upper);
    let fd1 = lp.add_var("eta_fdot1", costs.c_fdot, Some(zero), upper);
    let fd2 = lp.add_var("eta_fdot2", costs.c_fdot, Some(zero), upper);

    let a = &fr.agg;
    let nv = lp.add_var("nadir", zero, None, None);
    lp.add_eq(
        "nadir_taylor",
        &[(nv, T::one()), (mv, -fr.dnadir_dm), (dv, -fr.dnadir_dd)],
        fr.nadir - fr.dnadir_dm * a.m - fr.dnadir_dd * a.d,
    );
    lp.add_le("nadir_lower", &[(nv, -T::one()), (f1, -T::one())], fr.nadir_limit);
    lp.add_le("nadir_upper", &[(nv, T::one()), (f2, -T::one())], fr.nadir_limit);

    let f0dp = a.f0 * a.dp;
    match fr.form {
        RocofForm::Exact => {
            lp.add_le("rocof_loss", &[(mv, -fr.rocof_limit), (fd1, -T::one())], -f0dp);
            lp.add_le("rocof_gain", &[(mv, -fr.rocof_limit), (fd2, -T::one())], f0dp);
        }
        RocofForm::Taylor => {
            let rv = lp.add_var("rocof", zero, None, None);
            let slope = f0dp / (a.m * a.m);
            lp.add_eq(
                "rocof_taylor",
                &[(rv, T::one()), (mv, -slope)],
                -f0dp / a.m - slope * a.m,
            );
            lp.add_le("rocof_loss", &[(rv, -T::one()), (fd1, -T::one())], fr.rocof_limit);
            lp.add_le("rocof_gain", &[(rv, T::one()), (fd2, -T::one())], fr.rocof_limit);
        }
    }
    if a.r_g > a.f_g {
        lp.add_le(
            "nadir_time",
            &[(mv, T::one() / a.t), (dv, -T::one())],
            a.f_g - fr.eps_tm,
        );
    }
}

/// Minimize the largest real part of the kept modes.
pub fn build_step1<T: Real>(inp: &SlpInputs<T>) -> LinearProgram<T> {
    let mut lp = LinearProgram::new();
    let g = gain_block(&mut lp, inp, T::zero(), T::zero());
    let sig = mode_rows(&mut lp, inp, &g, false);
    let smax = lp.add_var("sigma_max", T::one(), None, None);
    for (&i, &s) in inp.kept.iter().zip(&sig) {
        lp.add_le(format!("epi_sigma_{i}"), &[(s, T::one()), (smax, -T::one())], T::zero());
    }
    lp
}

/// Maximize the worst damping ratio with soft frequency limits.
pub fn build_step2<T: Real>(inp: &SlpInputs<T>, costs: &CostConfig<T>) -> LinearProgram<T> {
    let mut lp = LinearProgram::new();
    let g = gain_block(&mut lp, inp, T::zero(), T::zero());
    let zeta = mode_rows(&mut lp, inp, &g, true);
    let zmin = lp.add_var("zeta_min", -costs.c_zeta, None, None);
    for (&i, &z) in inp.kept.iter().zip(&zeta) {
        lp.add_le(format!("epi_zeta_{i}"), &[(zmin, T::one()), (z, -T::one())], T::zero());
    }
    freq_rows(&mut lp, inp, &g, costs, false);
    lp
}

fn effort_program<T: Real>(inp: &SlpInputs<T>, costs: &CostConfig<T>, zeta_floor: T, soft: bool) -> LinearProgram<T> {
    let mut lp = LinearProgram::new();
    let g = gain_block(&mut lp, inp, costs.c_m, costs.c_d);
    let zeta = mode_rows(&mut lp, inp, &g, true);
    let ez = lp.add_var(
        "eta_zeta",
        costs.c_zeta,
        Some(T::zero()),
        if soft { None } else { Some(T::zero()) },
    );
    for (&i, &z) in inp.kept.iter().zip(&zeta) {
        lp.add_le(
            format!("floor_zeta_{i}"),
            &[(z, -T::one()), (ez, -T::one())],
            -zeta_floor,
        );
    }
    freq_rows(&mut lp, inp, &g, costs, !soft);
    lp
}

/// Minimize `c_M M + c_D D` with hard damping and frequency limits.
pub fn build_step3<T: Real>(inp: &SlpInputs<T>, costs: &CostConfig<T>, zeta_floor: T) -> LinearProgram<T> {
    effort_program(inp, costs, zeta_floor, false)
}

/// Single program combining all objectives, every limit softened by a slack.
pub fn build_uniform<T: Real>(inp: &SlpInputs<T>, costs: &CostConfig<T>, zeta_floor: T) -> LinearProgram<T> {
    effort_program(inp, costs, zeta_floor, true)
}

/// Slack variable labels in a fixed order.
pub const SLACK_LABELS: [&str; 5] = ["eta_f1", "eta_f2", "eta_fdot1", "eta_fdot2", "eta_zeta"];
