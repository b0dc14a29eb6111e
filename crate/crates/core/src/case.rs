//! JSON case files: parsing, validation with defaults, and export.
//!
//! ```json
//! {
//!   "schema": 1,
//!   "name": "example",
//!   "network": { "base_mva": 900, "f0_hz": 50, "buses": [1, 2],
//!                "lines": [{ "from": 1, "to": 2, "b": 10 }] },
//!   "units": [
//!     { "bus": 1, "kind": "SG", "p_g": 700, "m0": 13, "d0": 40,
//!       "governor": { "t": 6, "r_inv": 15, "f_frac": 0.3 } },
//!     { "bus": 2, "kind": "GridFollowingVSC", "p_g": 700, "m0": 0.5, "d0": 2,
//!       "bounds": { "m": [0.5, 12], "d": [1, 40] } }
//!   ],
//!   "scenario": { "variant": "low-inertia", "disturbance_bus": 1, "dp_mw": 700 },
//!   "limits": { "zeta_floor": 0.1, "rocof_hz_s": 1, "nadir_hz": 0.8 },
//!   "loop": { "step_m": 0.5, "step_d": 0.5 },
//!   "costs": { "c_zeta": 100, "c_f": 10, "c_fdot": 10, "c_m": 1, "c_d": 1 }
//! }
//! ```
//!
//! `limits`, `loop`, `costs`, `name`, `pll_damping` and `dp_mw` are optional.
//! Omitted `dp_mw` means the loss of the unit at the disturbance bus.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::allocator::{LoopConfig, PhiPolicy};
use crate::grid::{AllocationState, Disturbance, GainBounds, GenUnit, Governor, GridCase, Line, UnitKind};
use crate::lp::{CostConfig, RocofForm};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    LowInertia,
    NoInertia,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub network: NetworkSpec,
    pub units: Vec<UnitSpec>,
    pub scenario: ScenarioSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<LimitsSpec>,
    #[serde(rename = "loop", default, skip_serializing_if = "Option::is_none")]
    pub loop_cfg: Option<LoopSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<CostSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub base_mva: f64,
    pub f0_hz: f64,
    pub buses: Vec<usize>,
    pub lines: Vec<LineSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub from: usize,
    pub to: usize,
    /// Series susceptance in p.u. on the system base.
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitSpec {
    pub bus: usize,
    pub kind: UnitKind,
    pub p_g: f64,
    pub m0: f64,
    pub d0: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub pll_damping: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub governor: Option<GovernorSpec>,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    pub m: [f64; 2],
    pub d: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GovernorSpec {
    pub t: f64,
    pub r_inv: f64,
    pub f_frac: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub variant: Variant,
    pub disturbance_bus: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp_mw: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsSpec {
    pub zeta_floor: Option<f64>,
    pub rocof_hz_s: Option<f64>,
    pub nadir_hz: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhiSpec {
    Off,
    WorstMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RocofSpec {
    Exact,
    Taylor,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSpec {
    pub max_iterations: Option<usize>,
    pub mismatch_threshold: Option<f64>,
    pub min_step_scale: Option<f64>,
    pub convergence_eps: Option<f64>,
    pub window: Option<usize>,
    pub step_m: Option<f64>,
    pub step_d: Option<f64>,
    pub phi: Option<PhiSpec>,
    pub rocof_form: Option<RocofSpec>,
    pub freq_constraints: Option<bool>,
    pub filter_tol: Option<f64>,
    pub eps_tm: Option<f64>,
    pub slack_tol: Option<f64>,
    /// Negative disables the monotone damping check.
    pub monotone_tol: Option<f64>,
    /// Negative disables the effort-phase damping check.
    pub effort_guard: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub c_zeta: Option<f64>,
    pub c_f: Option<f64>,
    pub c_fdot: Option<f64>,
    pub c_m: Option<f64>,
    pub c_d: Option<f64>,
}

/// A validated case with its solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCase {
    pub name: String,
    pub variant: Variant,
    pub grid: GridCase<f64>,
    pub bounds: Vec<Option<GainBounds<f64>>>,
    pub loop_cfg: LoopConfig<f64>,
    pub costs: CostConfig<f64>,
}

impl LoadedCase {
    /// Gains as given in the file.
    pub fn initial_allocation(&self) -> AllocationState<f64> {
        AllocationState::from_case(&self.grid, self.bounds.clone())
    }
}

pub fn parse_case(text: &str) -> Result<LoadedCase> {
    let file: CaseFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    from_file(&file)
}

pub fn load_case(path: &Path) -> Result<LoadedCase> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_case(&text)
}

fn pick<T: Copy + std::fmt::Debug>(v: Option<T>, default: T, key: &str) -> T {
    v.unwrap_or_else(|| {
        log::info!("default applied: {key} = {default:?}");
        default
    })
}

/// Validates a parsed file, listing every violation.
pub fn from_file(f: &CaseFile) -> Result<LoadedCase> {
    let mut errs = Vec::new();
    if f.schema != SCHEMA_VERSION {
        errs.push(format!("schema: expected {SCHEMA_VERSION}, found {}", f.schema));
    }
    let mut bounds = Vec::with_capacity(f.units.len());
    for (j, u) in f.units.iter().enumerate() {
        let who = format!("unit {j} (bus {})", u.bus);
        if !(u.m0 > 0.0) {
            errs.push(format!("{who}: m0 must be > 0, got {}", u.m0));
        }
        if !(u.d0 >= 0.0) {
            errs.push(format!("{who}: d0 must be >= 0, got {}", u.d0));
        }
        if !(u.p_g > 0.0) {
            errs.push(format!("{who}: p_g must be > 0, got {}", u.p_g));
        }
        match (u.kind.is_converter(), u.bounds) {
            (true, None) => {
                errs.push(format!("{who}: bounds are required for converter units"));
                bounds.push(None);
            }
            (false, Some(_)) => {
                errs.push(format!("{who}: bounds only apply to converter units"));
                bounds.push(None);
            }
            (false, None) => bounds.push(None),
            (true, Some(b)) => {
                if !(b.m[0] > 0.0 && b.m[0] <= b.m[1]) {
                    errs.push(format!("{who}: bounds.m must satisfy 0 < lo <= hi"));
                } else if !(u.m0 >= b.m[0] && u.m0 <= b.m[1]) {
                    errs.push(format!("{who}: m0 outside bounds.m"));
                }
                if !(b.d[0] >= 0.0 && b.d[0] <= b.d[1]) {
                    errs.push(format!("{who}: bounds.d must satisfy 0 <= lo <= hi"));
                } else if !(u.d0 >= b.d[0] && u.d0 <= b.d[1]) {
                    errs.push(format!("{who}: d0 outside bounds.d"));
                }
                bounds.push(Some(GainBounds {
                    m_lo: b.m[0],
                    m_hi: b.m[1],
                    d_lo: b.d[0],
                    d_hi: b.d[1],
                }));
            }
        }
    }
    let has_sg = f.units.iter().any(|u| u.kind == UnitKind::Sg);
    match f.scenario.variant {
        Variant::NoInertia if has_sg => errs.push("scenario.variant no-inertia admits no SG units".into()),
        Variant::LowInertia if !has_sg => errs.push("scenario.variant low-inertia needs at least one SG".into()),
        _ => {}
    }
    let dp_mw = match f.scenario.dp_mw {
        Some(v) => v,
        None => match f.units.iter().find(|u| u.bus == f.scenario.disturbance_bus) {
            Some(u) => {
                log::info!("default applied: scenario.dp_mw = {} (unit at disturbance bus)", u.p_g);
                u.p_g
            }
            None => {
                errs.push("scenario.dp_mw is required when no unit sits at the disturbance bus".into());
                0.0
            }
        },
    };
    if !dp_mw.is_finite() {
        errs.push("scenario.dp_mw must be finite".into());
    }

    let grid = GridCase {
        buses: f.network.buses.clone(),
        lines: f
            .network
            .lines
            .iter()
            .map(|l| Line {
                from: l.from,
                to: l.to,
                b: l.b,
            })
            .collect(),
        units: f
            .units
            .iter()
            .map(|u| GenUnit {
                bus: u.bus,
                kind: u.kind,
                p_g: u.p_g,
                m: u.m0,
                d: u.d0,
                pll_damping: u.pll_damping,
                governor: u.governor.map(|g| Governor {
                    t: g.t,
                    r_inv: g.r_inv,
                    f_frac: g.f_frac,
                }),
            })
            .collect(),
        base_power: f.network.base_mva,
        f0: f.network.f0_hz,
        disturbance: Disturbance {
            bus: f.scenario.disturbance_bus,
            dp_mw,
        },
    };
    match grid.validate() {
        Ok(()) => {}
        Err(Error::Validation(v)) => errs.extend(v),
        Err(e) => errs.push(e.to_string()),
    }

    let d = LoopConfig::<f64>::default();
    let lim = f.limits.unwrap_or_default();
    let lp = f.loop_cfg.unwrap_or_default();
    let monotone = pick(lp.monotone_tol, d.monotone_tol.unwrap_or(-1.0), "loop.monotone_tol");
    let effort = pick(lp.effort_guard, d.effort_guard.unwrap_or(-1.0), "loop.effort_guard");
    let loop_cfg = LoopConfig {
        zeta_floor: pick(lim.zeta_floor, d.zeta_floor, "limits.zeta_floor"),
        rocof_limit: pick(lim.rocof_hz_s, d.rocof_limit, "limits.rocof_hz_s"),
        nadir_limit: pick(lim.nadir_hz, d.nadir_limit, "limits.nadir_hz"),
        max_iterations: pick(lp.max_iterations, d.max_iterations, "loop.max_iterations"),
        mismatch_threshold: pick(lp.mismatch_threshold, d.mismatch_threshold, "loop.mismatch_threshold"),
        min_step_scale: pick(lp.min_step_scale, d.min_step_scale, "loop.min_step_scale"),
        convergence_eps: pick(lp.convergence_eps, d.convergence_eps, "loop.convergence_eps"),
        window: pick(lp.window, d.window, "loop.window"),
        step_m: pick(lp.step_m, d.step_m, "loop.step_m"),
        step_d: pick(lp.step_d, d.step_d, "loop.step_d"),
        phi: match pick(lp.phi, PhiSpec::WorstMode, "loop.phi") {
            PhiSpec::Off => PhiPolicy::Off,
            PhiSpec::WorstMode => PhiPolicy::WorstMode,
        },
        rocof_form: match pick(lp.rocof_form, RocofSpec::Exact, "loop.rocof_form") {
            RocofSpec::Exact => RocofForm::Exact,
            RocofSpec::Taylor => RocofForm::Taylor,
        },
        freq_constraints: pick(lp.freq_constraints, d.freq_constraints, "loop.freq_constraints"),
        filter_tol: pick(lp.filter_tol, d.filter_tol, "loop.filter_tol"),
        eps_tm: pick(lp.eps_tm, d.eps_tm, "loop.eps_tm"),
        slack_tol: pick(lp.slack_tol, d.slack_tol, "loop.slack_tol"),
        monotone_tol: (monotone >= 0.0).then_some(monotone),
        effort_guard: (effort >= 0.0).then_some(effort),
    };
    if let Err(Error::Validation(v)) = loop_cfg.validate() {
        errs.extend(v);
    }
    let dc = CostConfig::<f64>::default();
    let c = f.costs.unwrap_or_default();
    let costs = CostConfig {
        c_zeta: pick(c.c_zeta, dc.c_zeta, "costs.c_zeta"),
        c_f: pick(c.c_f, dc.c_f, "costs.c_f"),
        c_fdot: pick(c.c_fdot, dc.c_fdot, "costs.c_fdot"),
        c_m: pick(c.c_m, dc.c_m, "costs.c_m"),
        c_d: pick(c.c_d, dc.c_d, "costs.c_d"),
    };
    if !costs.is_valid() {
        errs.push("costs: every weight must be > 0".into());
    }
    if !errs.is_empty() {
        return Err(Error::Validation(errs));
    }
    Ok(LoadedCase {
        name: f.name.clone().unwrap_or_else(|| "case".into()),
        variant: f.scenario.variant,
        grid,
        bounds,
        loop_cfg,
        costs,
    })
}

/// Fully explicit file that loads back to an equal [`LoadedCase`].
pub fn to_file(c: &LoadedCase) -> CaseFile {
    let l = &c.loop_cfg;
    CaseFile {
        schema: SCHEMA_VERSION,
        name: Some(c.name.clone()),
        network: NetworkSpec {
            base_mva: c.grid.base_power,
            f0_hz: c.grid.f0,
            buses: c.grid.buses.clone(),
            lines: c
                .grid
                .lines
                .iter()
                .map(|l| LineSpec {
                    from: l.from,
                    to: l.to,
                    b: l.b,
                })
                .collect(),
        },
        units: c
            .grid
            .units
            .iter()
            .zip(&c.bounds)
            .map(|(u, b)| UnitSpec {
                bus: u.bus,
                kind: u.kind,
                p_g: u.p_g,
                m0: u.m,
                d0: u.d,
                pll_damping: u.pll_damping,
                bounds: b.map(|b| BoundsSpec {
                    m: [b.m_lo, b.m_hi],
                    d: [b.d_lo, b.d_hi],
                }),
                governor: u.governor.map(|g| GovernorSpec {
                    t: g.t,
                    r_inv: g.r_inv,
                    f_frac: g.f_frac,
                }),
            })
            .collect(),
        scenario: ScenarioSpec {
            variant: c.variant,
            disturbance_bus: c.grid.disturbance.bus,
            dp_mw: Some(c.grid.disturbance.dp_mw),
        },
        limits: Some(LimitsSpec {
            zeta_floor: Some(l.zeta_floor),
            rocof_hz_s: Some(l.rocof_limit),
            nadir_hz: Some(l.nadir_limit),
        }),
        loop_cfg: Some(LoopSpec {
            max_iterations: Some(l.max_iterations),
            mismatch_threshold: Some(l.mismatch_threshold),
            min_step_scale: Some(l.min_step_scale),
            convergence_eps: Some(l.convergence_eps),
            window: Some(l.window),
            step_m: Some(l.step_m),
            step_d: Some(l.step_d),
            phi: Some(match l.phi {
                PhiPolicy::Off => PhiSpec::Off,
                PhiPolicy::WorstMode => PhiSpec::WorstMode,
            }),
            rocof_form: Some(match l.rocof_form {
                RocofForm::Exact => RocofSpec::Exact,
                RocofForm::Taylor => RocofSpec::Taylor,
            }),
            freq_constraints: Some(l.freq_constraints),
            filter_tol: Some(l.filter_tol),
            eps_tm: Some(l.eps_tm),
            slack_tol: Some(l.slack_tol),
            monotone_tol: Some(l.monotone_tol.unwrap_or(-1.0)),
            effort_guard: Some(l.effort_guard.unwrap_or(-1.0)),
        }),
        costs: Some(CostSpec {
            c_zeta: Some(c.costs.c_zeta),
            c_f: Some(c.costs.c_f),
            c_fdot: Some(c.costs.c_fdot),
            c_m: Some(c.costs.c_m),
            c_d: Some(c.costs.c_d),
        }),
    }
}

pub fn export_case(c: &LoadedCase) -> String {
    let mut s = serde_json::to_string_pretty(&to_file(c)).expect("case serializes");
    s.push('\n');
    s
}
