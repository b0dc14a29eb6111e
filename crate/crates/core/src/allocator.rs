//! Outer sequential-LP loop: linearize, solve the per-iteration program,
//! validate the step against the re-linearized spectrum and halve it when the
//! first-order prediction is off.

use crate::freq::{aggregate, metrics, AggregateParams, FreqMetrics};
use crate::grid::{AllocationState, GainBounds, GridCase, LinearModel, ModelProvider, UnitKind};
use crate::lp::{
    build_step1, build_step2, build_step3, build_uniform, phi_normalize, solve_lp, CostConfig, FreqRows, LinearProgram,
    LpPhase, LpSolution, LpStatus, RocofForm, SlpInputs, StepBounds, SLACK_LABELS,
};
use crate::modal::{decompose, match_modes, worst_modes, ModeSet, WorstModes};
use crate::{Error, Real, Result};

/// Source of the per-unit step normalization factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiPolicy {
    /// Plain step windows.
    Off,
    /// Scale by the sensitivities of the worst mode.
    WorstMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Uniform,
    Multistep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig<T> {
    pub zeta_floor: T,
    pub rocof_limit: T,
    pub nadir_limit: T,
    pub max_iterations: usize,
    /// Largest accepted `|ζ_predicted - ζ_actual|` over matched modes.
    pub mismatch_threshold: T,
    pub min_step_scale: T,
    pub convergence_eps: T,
    pub window: usize,
    pub step_m: T,
    pub step_d: T,
    pub phi: PhiPolicy,
    pub rocof_form: RocofForm,
    pub freq_constraints: bool,
    pub filter_tol: T,
    pub eps_tm: T,
    /// Slack magnitude treated as zero.
    pub slack_tol: T,
    /// Allowed dip of `ζ_min` below `min(previous, floor)` at an accepted step;
    /// `None` disables the check.
    pub monotone_tol: Option<T>,
    /// Same check during the effort phase, where the damping rows are hard.
    pub effort_guard: Option<T>,
}

impl<T: Real> Default for LoopConfig<T> {
    fn default() -> Self {
        LoopConfig {
            zeta_floor: T::lit(0.1),
            rocof_limit: T::one(),
            nadir_limit: T::lit(0.8),
            max_iterations: 500,
            mismatch_threshold: T::lit(0.01),
            min_step_scale: T::lit(1.0 / 64.0),
            convergence_eps: T::lit(1e-4),
            window: 5,
            step_m: T::lit(0.5),
            step_d: T::lit(0.5),
            phi: PhiPolicy::WorstMode,
            rocof_form: RocofForm::Exact,
            freq_constraints: true,
            filter_tol: T::lit(crate::modal::FILTER_TOL),
            eps_tm: T::lit(1e-6),
            slack_tol: T::lit(1e-9),
            monotone_tol: None,
            effort_guard: Some(T::lit(1e-4)),
        }
    }
}

impl<T: Real> LoopConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let mut errs = vec![];
        let pos = |x: T| x > T::zero();
        for (name, v) in [
            ("zeta_floor", self.zeta_floor),
            ("rocof_limit", self.rocof_limit),
            ("nadir_limit", self.nadir_limit),
            ("mismatch_threshold", self.mismatch_threshold),
            ("min_step_scale", self.min_step_scale),
            ("convergence_eps", self.convergence_eps),
            ("step_m", self.step_m),
            ("step_d", self.step_d),
            ("filter_tol", self.filter_tol),
            ("eps_tm", self.eps_tm),
            ("slack_tol", self.slack_tol),
        ] {
            if !pos(v) {
                errs.push(format!("loop.{name} must be > 0"));
            }
        }
        if self.max_iterations == 0 {
            errs.push("loop.max_iterations must be >= 1".into());
        }
        if self.window == 0 {
            errs.push("loop.window must be >= 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

/// Metrics of one allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T> {
    pub m: Vec<T>,
    pub d: Vec<T>,
    pub zeta_min: T,
    pub sigma_max: T,
    pub rocof: T,
    pub nadir: T,
    pub agg_m: T,
    pub agg_d: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T> {
    pub nu: usize,
    pub phase: LpPhase,
    pub state: Snapshot<T>,
    /// `|ΔM| + |ΔD|` relative to the previous accepted state.
    pub change: T,
    pub halvings: usize,
    pub step_scale: T,
    pub mismatch: T,
    /// Predicted and re-linearized damping ratios of the matched modes.
    pub predicted_zeta: Vec<T>,
    pub actual_zeta: Vec<T>,
    /// In the order of [`SLACK_LABELS`].
    pub slacks: [T; 5],
    /// `∂ζ_min/∂α` at the start of the iteration, in [`ModeSet::gains`] order.
    pub dzeta_min: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Converged,
    Stalled { phase: LpPhase, reason: String },
    MaxIterations { phase: LpPhase },
    Infeasible { phase: LpPhase, rows: Vec<String> },
}

impl Outcome {
    pub fn is_converged(&self) -> bool {
        matches!(self, Outcome::Converged)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace<T> {
    pub initial: Snapshot<T>,
    pub records: Vec<IterationRecord<T>>,
    pub outcome: Outcome,
}

/// Receives accepted iterations as they happen.
pub trait TraceSink<T> {
    fn record(&mut self, rec: &IterationRecord<T>);
}

/// Discards every record.
pub struct NullSink;

impl<T> TraceSink<T> for NullSink {
    fn record(&mut self, _: &IterationRecord<T>) {}
}

#[derive(Debug, Clone)]
pub struct AllocResult<T> {
    pub alloc: AllocationState<T>,
    pub trace: IterationTrace<T>,
    /// Allocation at the end of each multistep phase.
    pub phase_ends: Vec<(LpPhase, AllocationState<T>)>,
}

/// Linearization, spectrum and frequency metrics of one allocation.
#[derive(Debug, Clone)]
pub struct Evaluation<T: Real> {
    pub model: LinearModel<T>,
    pub modes: ModeSet<T>,
    pub worst: WorstModes<T>,
    pub agg: AggregateParams<T>,
    pub freq: FreqMetrics<T>,
}

impl<T: Real> Evaluation<T> {
    pub fn snapshot(&self, alloc: &AllocationState<T>) -> Snapshot<T> {
        Snapshot {
            m: alloc.m.clone(),
            d: alloc.d.clone(),
            zeta_min: self.worst.zeta_min,
            sigma_max: self.worst.sigma_max,
            rocof: self.freq.rocof_max,
            nadir: self.freq.nadir,
            agg_m: self.agg.m,
            agg_d: self.agg.d,
        }
    }
}

pub fn evaluate<T: Real, P: ModelProvider<T> + ?Sized>(
    provider: &P,
    case: &GridCase<T>,
    alloc: &AllocationState<T>,
    filter_tol: T,
) -> Result<Evaluation<T>> {
    let model = provider.linearize(case, alloc)?;
    let modes = decompose(&model)?;
    let worst = worst_modes(&modes, filter_tol)?;
    let agg = aggregate(case, alloc)?;
    let freq = metrics(&agg)?;
    Ok(Evaluation {
        model,
        modes,
        worst,
        agg,
        freq,
    })
}

/// Damping floor and, when enabled, RoCoF and nadir limits hold within `tol`.
pub fn criteria_met<T: Real>(ev: &Evaluation<T>, cfg: &LoopConfig<T>, tol: T) -> bool {
    let zeta_ok = ev.worst.zeta_min >= cfg.zeta_floor - tol;
    if !cfg.freq_constraints {
        return zeta_ok;
    }
    zeta_ok && ev.freq.rocof_max.abs() <= cfg.rocof_limit + tol && ev.freq.nadir.abs() <= cfg.nadir_limit + tol
}

/// True iff the last `window` records all changed `M + D` by less than `eps`.
pub fn convergence_check<T: Real>(trace: &IterationTrace<T>, eps: T, window: usize) -> bool {
    window_converged(&trace.records, eps, window, None)
}

fn window_converged<T: Real>(records: &[IterationRecord<T>], eps: T, window: usize, phase: Option<LpPhase>) -> bool {
    if window == 0 || records.len() < window {
        return false;
    }
    records[records.len() - window..]
        .iter()
        .all(|r| r.change < eps && phase.is_none_or(|p| r.phase == p))
}

/// Settings of the prediction check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalvingConfig<T> {
    pub mismatch_threshold: T,
    pub min_step_scale: T,
    pub filter_tol: T,
    /// `(previous ζ_min, floor, tolerance)`: reject steps that push `ζ_min`
    /// below `min(previous, floor) - tolerance`.
    pub monotone: Option<(T, T, T)>,
}

#[derive(Debug, Clone)]
pub struct AcceptedStep<T: Real> {
    pub alloc: AllocationState<T>,
    pub eval: Evaluation<T>,
    pub scale: T,
    pub halvings: usize,
    pub mismatch: T,
    pub predicted: Vec<T>,
    pub actual: Vec<T>,
}

#[derive(Debug, Clone)]
pub enum Validation<T: Real> {
    Accepted(Box<AcceptedStep<T>>),
    /// Scale fell below the minimum; carries the last observed mismatch.
    Failed {
        mismatch: T,
        halvings: usize,
    },
}

/// Applies `scale·Δ`, re-linearizes and compares damping ratios with the
/// first-order prediction, halving `scale` until the mismatch is acceptable.
#[allow(clippy::too_many_arguments)]
pub fn validate_and_halve<T: Real, P: ModelProvider<T> + ?Sized>(
    provider: &P,
    case: &GridCase<T>,
    prev_alloc: &AllocationState<T>,
    prev_modes: &ModeSet<T>,
    kept: &[usize],
    units: &[usize],
    delta_m: &[T],
    delta_d: &[T],
    cfg: &HalvingConfig<T>,
) -> Result<Validation<T>> {
    let nu = units.len();
    let mut step: Vec<T> = vec![T::zero(); kept.len()];
    for (a, &i) in kept.iter().enumerate() {
        for k in 0..nu {
            step[a] += prev_modes.dzeta[(i, k)] * delta_m[k] + prev_modes.dzeta[(i, nu + k)] * delta_d[k];
        }
    }
    let mut scale = T::one();
    let mut halvings = 0;
    let mut last;
    loop {
        let mut next = prev_alloc.clone();
        for (k, &j) in units.iter().enumerate() {
            next.m[j] += scale * delta_m[k];
            next.d[j] += scale * delta_d[k];
            if let Some(b) = &prev_alloc.bounds[j] {
                next.m[j] = next.m[j].max(b.m_lo).min(b.m_hi);
                next.d[j] = next.d[j].max(b.d_lo).min(b.d_hi);
            }
        }
        next.iteration = prev_alloc.iteration + 1;
        let eval = evaluate(provider, case, &next, cfg.filter_tol)?;
        let new_kept = eval.modes.distinct(cfg.filter_tol);
        let pairs = match_modes(prev_modes, kept, &eval.modes, &new_kept);
        let mut predicted = vec![];
        let mut actual = vec![];
        let mut mismatch = T::zero();
        for (a, &i) in kept.iter().enumerate() {
            if let Some(k) = pairs[a] {
                let p = prev_modes.zetas[i] + scale * step[a];
                let q = eval.modes.zetas[k];
                mismatch = mismatch.max((p - q).abs());
                predicted.push(p);
                actual.push(q);
            }
        }
        last = mismatch;
        let monotone_ok = cfg
            .monotone
            .is_none_or(|(prev, floor, tol)| eval.worst.zeta_min >= prev.min(floor) - tol);
        if mismatch <= cfg.mismatch_threshold && monotone_ok {
            return Ok(Validation::Accepted(Box::new(AcceptedStep {
                alloc: next,
                eval,
                scale,
                halvings,
                mismatch,
                predicted,
                actual,
            })));
        }
        let half = scale * T::lit(0.5);
        if half < cfg.min_step_scale {
            break;
        }
        scale = half;
        halvings += 1;
    }
    Ok(Validation::Failed {
        mismatch: last,
        halvings,
    })
}

fn controllable_bounds<T: Real>(case: &GridCase<T>, alloc: &AllocationState<T>, units: &[usize]) -> Vec<GainBounds<T>> {
    units
        .iter()
        .map(|&j| {
            alloc.bounds[j].unwrap_or(GainBounds {
                m_lo: alloc.m[j].min(case.units[j].m),
                m_hi: alloc.m[j].max(case.units[j].m),
                d_lo: alloc.d[j].min(case.units[j].d),
                d_hi: alloc.d[j].max(case.units[j].d),
            })
        })
        .collect()
}

fn phi_for<T: Real>(sens: &[T], nu: usize) -> (Vec<T>, Vec<T>) {
    (phi_normalize(&sens[..nu]), phi_normalize(&sens[nu..]))
}

/// Assembles the builder inputs at the current iterate.
pub fn slp_inputs<'a, T: Real>(
    case: &GridCase<T>,
    alloc: &AllocationState<T>,
    ev: &'a Evaluation<T>,
    cfg: &LoopConfig<T>,
    phase: LpPhase,
    phi_active: bool,
) -> SlpInputs<'a, T> {
    let units = case.controllable();
    let nu = units.len();
    let total = case.total_generation();
    let weights: Vec<T> = units.iter().map(|&j| case.units[j].p_g / total).collect();
    let (mut m_fixed, mut d_fixed) = (T::zero(), T::zero());
    for (j, u) in case.units.iter().enumerate() {
        if u.kind == UnitKind::Sg {
            m_fixed += u.p_g * alloc.m[j] / total;
            d_fixed += u.p_g * alloc.d[j] / total;
        }
    }
    let mut steps = StepBounds::uniform(nu, cfg.step_m, cfg.step_d);
    if phi_active && cfg.phi == PhiPolicy::WorstMode {
        let ng = ev.modes.gains.len();
        let sens: Vec<T> = match phase {
            LpPhase::Stability => (0..ng).map(|g| -ev.modes.dsigma[(ev.worst.sigma_idx, g)]).collect(),
            _ => (0..ng).map(|g| ev.modes.dzeta[(ev.worst.zeta_idx, g)]).collect(),
        };
        let (pm, pd) = phi_for(&sens, nu);
        steps = steps.with_phi(pm, pd);
    }
    let freq = cfg.freq_constraints.then_some(FreqRows {
        agg: ev.agg,
        nadir: ev.freq.nadir,
        dnadir_dm: ev.freq.dnadir_dm,
        dnadir_dd: ev.freq.dnadir_dd,
        rocof_limit: cfg.rocof_limit,
        nadir_limit: cfg.nadir_limit,
        form: cfg.rocof_form,
        eps_tm: cfg.eps_tm,
    });
    SlpInputs {
        modes: &ev.modes,
        kept: ev.worst.kept.clone(),
        units: units.clone(),
        weights,
        m: units.iter().map(|&j| alloc.m[j]).collect(),
        d: units.iter().map(|&j| alloc.d[j]).collect(),
        bounds: controllable_bounds(case, alloc, &units),
        steps,
        m_fixed,
        d_fixed,
        freq,
    }
}

/// Builds the program of `phase` at the current iterate.
pub fn build_phase<T: Real>(
    inp: &SlpInputs<T>,
    phase: LpPhase,
    costs: &CostConfig<T>,
    zeta_floor: T,
) -> LinearProgram<T> {
    match phase {
        LpPhase::Stability => build_step1(inp),
        LpPhase::Damping => build_step2(inp, costs),
        LpPhase::Effort => build_step3(inp, costs, zeta_floor),
        LpPhase::Uniform => build_uniform(inp, costs, zeta_floor),
    }
}

/// Gain increments `(Δm, Δd)` per controllable unit from a solved program.
pub fn increments<T: Real>(lp: &LinearProgram<T>, sol: &LpSolution<T>, units: &[usize]) -> (Vec<T>, Vec<T>) {
    let get = |l: String| lp.value(sol, &l).unwrap_or(T::zero());
    (
        units.iter().map(|j| get(format!("dm_{j}"))).collect(),
        units.iter().map(|j| get(format!("dd_{j}"))).collect(),
    )
}

fn slacks<T: Real>(lp: &LinearProgram<T>, sol: &LpSolution<T>) -> [T; 5] {
    SLACK_LABELS.map(|l| lp.value(sol, l).unwrap_or(T::zero()))
}

pub fn run_uniform<T: Real, P: ModelProvider<T> + ?Sized>(
    provider: &P,
    case: &GridCase<T>,
    alloc0: &AllocationState<T>,
    cfg: &LoopConfig<T>,
    costs: &CostConfig<T>,
    sink: &mut dyn TraceSink<T>,
) -> Result<AllocResult<T>> {
    run(provider, case, alloc0, cfg, costs, Method::Uniform, sink)
}

pub fn run_multistep<T: Real, P: ModelProvider<T> + ?Sized>(
    provider: &P,
    case: &GridCase<T>,
    alloc0: &AllocationState<T>,
    cfg: &LoopConfig<T>,
    costs: &CostConfig<T>,
    sink: &mut dyn TraceSink<T>,
) -> Result<AllocResult<T>> {
    run(provider, case, alloc0, cfg, costs, Method::Multistep, sink)
}

pub fn run<T: Real, P: ModelProvider<T> + ?Sized>(
    provider: &P,
    case: &GridCase<T>,
    alloc0: &AllocationState<T>,
    cfg: &LoopConfig<T>,
    costs: &CostConfig<T>,
    method: Method,
    sink: &mut dyn TraceSink<T>,
) -> Result<AllocResult<T>> {
    cfg.validate()?;
    if !costs.is_valid() {
        return Err(Error::Validation(vec!["costs must all be > 0".into()]));
    }
    let units = case.controllable();
    let crit_tol = cfg.slack_tol;
    let mut alloc = alloc0.clone();
    let mut ev = evaluate(provider, case, &alloc, cfg.filter_tol)?;
    let initial = ev.snapshot(&alloc);
    let mut records: Vec<IterationRecord<T>> = vec![];
    let mut phase_ends = vec![];
    let mut phase = match method {
        Method::Uniform => LpPhase::Uniform,
        Method::Multistep => LpPhase::Stability,
    };
    let mut phase_records = 0usize;

    let outcome = loop {
        // Multistep phase transitions on actual metrics.
        if phase == LpPhase::Stability && ev.worst.sigma_max < T::zero() {
            phase_ends.push((phase, alloc.clone()));
            phase = LpPhase::Damping;
            phase_records = 0;
        }
        if phase == LpPhase::Damping && criteria_met(&ev, cfg, crit_tol) {
            phase_ends.push((phase, alloc.clone()));
            phase = LpPhase::Effort;
            phase_records = 0;
        }
        if records.len() >= cfg.max_iterations {
            break Outcome::MaxIterations { phase };
        }

        let phi_active = match phase {
            LpPhase::Stability | LpPhase::Damping => true,
            LpPhase::Effort => false,
            LpPhase::Uniform => !criteria_met(&ev, cfg, crit_tol),
        };
        let inp = slp_inputs(case, &alloc, &ev, cfg, phase, phi_active);
        let lp = build_phase(&inp, phase, costs, cfg.zeta_floor);
        let sol = solve_lp(&lp)?;
        if sol.status != LpStatus::Optimal {
            break match sol.status {
                LpStatus::Infeasible => Outcome::Infeasible {
                    phase,
                    rows: sol.violated,
                },
                s => Outcome::Stalled {
                    phase,
                    reason: format!("LP status {s:?}"),
                },
            };
        }
        let (dm, dd) = increments(&lp, &sol, &units);
        let lp_slacks = slacks(&lp, &sol);
        // The damping guard only engages from a stable iterate; once the
        // criteria hold, uniform steps are guarded like effort steps.
        let guard = match (phase, cfg.monotone_tol) {
            (LpPhase::Damping | LpPhase::Uniform, Some(tol)) if ev.worst.sigma_max < T::zero() => {
                Some((ev.worst.zeta_min, cfg.zeta_floor, tol))
            }
            (LpPhase::Uniform, _) if !phi_active => {
                cfg.effort_guard.map(|tol| (ev.worst.zeta_min, cfg.zeta_floor, tol))
            }
            (LpPhase::Effort, _) => cfg.effort_guard.map(|tol| (ev.worst.zeta_min, cfg.zeta_floor, tol)),
            _ => None,
        };
        let hc = HalvingConfig {
            mismatch_threshold: cfg.mismatch_threshold,
            min_step_scale: cfg.min_step_scale,
            filter_tol: cfg.filter_tol,
            monotone: guard,
        };
        let step = match validate_and_halve(provider, case, &alloc, &ev.modes, &ev.worst.kept, &units, &dm, &dd, &hc)? {
            Validation::Accepted(s) => s,
            Validation::Failed { mismatch, halvings } => {
                break Outcome::Stalled {
                    phase,
                    reason: format!(
                        "step failure after {halvings} halvings, mismatch {:.3e}",
                        mismatch.f64()
                    ),
                };
            }
        };
        let step = *step;
        let zi = ev.worst.zeta_idx;
        let dzeta_min = (0..ev.modes.gains.len()).map(|g| ev.modes.dzeta[(zi, g)]).collect();
        let change = (step.eval.agg.m - ev.agg.m).abs() + (step.eval.agg.d - ev.agg.d).abs();
        let rec = IterationRecord {
            nu: records.len() + 1,
            phase,
            state: step.eval.snapshot(&step.alloc),
            change,
            halvings: step.halvings,
            step_scale: step.scale,
            mismatch: step.mismatch,
            predicted_zeta: step.predicted,
            actual_zeta: step.actual,
            slacks: lp_slacks,
            dzeta_min,
        };
        sink.record(&rec);
        let slack_max = rec.slacks.iter().fold(T::zero(), |m, &s| m.max(s));
        records.push(rec);
        phase_records += 1;
        alloc = step.alloc;
        ev = step.eval;

        let settled =
            phase_records >= cfg.window && window_converged(&records, cfg.convergence_eps, cfg.window, Some(phase));
        if settled {
            match phase {
                LpPhase::Effort => break Outcome::Converged,
                LpPhase::Uniform if slack_max < cfg.slack_tol => break Outcome::Converged,
                LpPhase::Uniform => {
                    break Outcome::Stalled {
                        phase,
                        reason: format!("gains settled with slack {:.3e}", slack_max.f64()),
                    }
                }
                _ => {
                    break Outcome::Stalled {
                        phase,
                        reason: "gains settled before the phase goal was reached".into(),
                    }
                }
            }
        }
    };
    if phase == LpPhase::Effort || phase == LpPhase::Uniform {
        phase_ends.push((phase, alloc.clone()));
    }
    Ok(AllocResult {
        alloc,
        trace: IterationTrace {
            initial,
            records,
            outcome,
        },
        phase_ends,
    })
}
