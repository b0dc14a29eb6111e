mod common;

use common::*;
use inertia_alloc::allocator::{evaluate, AllocResult, Method};
use inertia_alloc::bundle::metric_table;
use inertia_alloc::case::LoadedCase;
use inertia_alloc::grid::{SwingModel, UnitKind};
use inertia_alloc::lp::LpPhase;

fn runs() -> Vec<(LoadedCase, Method, AllocResult<f64>)> {
    let mut out = vec![];
    for name in [LOW, NONE] {
        let c = load(name);
        for method in [Method::Uniform, Method::Multistep] {
            let r = run_case(&c, method);
            out.push((c.clone(), method, r));
        }
    }
    out
}

#[test]
fn trace_invariants_hold() {
    for (c, method, res) in runs() {
        let init = c.initial_allocation();
        let tag = format!("{} {method:?}", c.name);
        for (k, r) in res.trace.records.iter().enumerate() {
            assert_eq!(r.nu, k + 1, "{tag}");
            let a = alloc_of(&c, &r.state);
            assert!(a.within_bounds(1e-9), "{tag}: iteration {} leaves the bounds", r.nu);
            for (j, u) in c.grid.units.iter().enumerate() {
                if u.kind == UnitKind::Sg {
                    assert_eq!((a.m[j], a.d[j]), (init.m[j], init.d[j]), "{tag}: SG {j} moved");
                }
            }
            assert!(
                r.mismatch <= c.loop_cfg.mismatch_threshold,
                "{tag}: mismatch {}",
                r.mismatch
            );
            assert!(r.step_scale > 0.0 && r.step_scale <= 1.0);
            assert_eq!(r.step_scale, 0.5f64.powi(r.halvings as i32));
        }
    }
}

#[test]
fn multistep_phases_run_in_order() {
    let rank = |p: LpPhase| match p {
        LpPhase::Stability => 0,
        LpPhase::Damping => 1,
        LpPhase::Effort => 2,
        LpPhase::Uniform => panic!("uniform step in a multistep run"),
    };
    for (c, method, res) in runs() {
        if method != Method::Multistep {
            assert!(res.trace.records.iter().all(|r| r.phase == LpPhase::Uniform));
            continue;
        }
        let ranks: Vec<u8> = res.trace.records.iter().map(|r| rank(r.phase)).collect();
        assert!(ranks.windows(2).all(|w| w[0] <= w[1]), "{}: {ranks:?}", c.name);
        if let Some(first) = res.trace.records.iter().find(|r| r.phase != LpPhase::Stability) {
            let before = res.trace.records.iter().take_while(|r| r.nu < first.nu).last();
            let prev = before.map_or(&res.trace.initial, |r| &r.state);
            assert!(
                prev.sigma_max < 0.0,
                "{}: left the stability phase while unstable",
                c.name
            );
        }
        for r in res.trace.records.iter().filter(|r| r.phase == LpPhase::Effort) {
            assert!(r.state.sigma_max < 0.0, "{} iteration {}", c.name, r.nu);
        }
    }
}

#[test]
fn monotone_guard_keeps_damping_non_decreasing() {
    let tol = 1e-6;
    for name in [LOW, NONE] {
        let mut c = load(name);
        c.loop_cfg.monotone_tol = Some(tol);
        for method in [Method::Uniform, Method::Multistep] {
            let res = run_case(&c, method);
            let mut prev = &res.trace.initial;
            for r in &res.trace.records {
                let guarded = matches!(r.phase, LpPhase::Damping | LpPhase::Uniform) && prev.sigma_max < 0.0;
                if guarded {
                    let base = prev.zeta_min.min(c.loop_cfg.zeta_floor);
                    assert!(
                        r.state.zeta_min >= base - tol,
                        "{} {method:?} iteration {}: {} -> {}",
                        c.name,
                        r.nu,
                        prev.zeta_min,
                        r.state.zeta_min
                    );
                }
                prev = &r.state;
            }
        }
    }
}

#[test]
fn effort_phase_never_raises_effort() {
    for (c, method, res) in runs() {
        if method != Method::Multistep {
            continue;
        }
        let recs = &res.trace.records;
        for w in recs.windows(2) {
            if w[1].phase != LpPhase::Effort {
                continue;
            }
            let before = effort(&c, &w[0].state.m, &w[0].state.d);
            let after = effort(&c, &w[1].state.m, &w[1].state.d);
            // The hard damping rows may buy back a dip below the floor left
            // by the previous step; otherwise effort cannot grow.
            let restoring = w[0].state.zeta_min < c.loop_cfg.zeta_floor;
            assert!(
                restoring || after <= before + 1e-9 * before.max(1.0),
                "{} iteration {}: {before} -> {after}",
                c.name,
                w[1].nu
            );
        }
    }
}

#[test]
fn terminal_metrics_recompute_from_the_allocation() {
    for (c, method, res) in runs() {
        let last = &res.trace.records.last().expect("records").state;
        assert_eq!(res.alloc.m, last.m);
        assert_eq!(res.alloc.d, last.d);
        let t = metric_table(&c.grid, &res.alloc, c.loop_cfg.filter_tol).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(1.0);
        let tag = format!("{} {method:?}", c.name);
        assert!(close(t.zeta_min, last.zeta_min), "{tag}");
        assert!(close(t.sigma_max, last.sigma_max), "{tag}");
        assert!(close(t.rocof_hz_s, last.rocof), "{tag}");
        assert!(close(t.nadir_hz, last.nadir), "{tag}");
        assert!(close(t.inertia_pu_s, last.agg_m), "{tag}");
        assert!(close(t.damping_pu, last.agg_d), "{tag}");
        let total = c.grid.total_generation();
        assert!(close(t.inertia_mws2, t.inertia_pu_s * total / c.grid.f0));
    }
}

#[test]
fn initial_snapshot_describes_the_case() {
    let c = load(LOW);
    let res = run_case(&c, Method::Uniform);
    let ev = evaluate(&SwingModel, &c.grid, &c.initial_allocation(), c.loop_cfg.filter_tol).unwrap();
    assert_eq!(res.trace.initial, ev.snapshot(&c.initial_allocation()));
    assert!(
        res.trace.initial.sigma_max > 0.0,
        "the low-inertia case starts unstable"
    );
}

#[test]
fn no_inertia_case_has_more_controllable_units() {
    let (a, b) = (load(LOW), load(NONE));
    assert_eq!(a.grid.units.len(), b.grid.units.len());
    let buses = |c: &LoadedCase| c.grid.units.iter().map(|u| u.bus).collect::<Vec<_>>();
    assert_eq!(buses(&a), buses(&b));
    assert!(b.grid.controllable().len() > a.grid.controllable().len());
    for (ua, ub) in a.grid.units.iter().zip(&b.grid.units) {
        if ua.kind != ub.kind {
            assert_eq!((ua.kind, ub.kind), (UnitKind::Sg, UnitKind::GridFormingVsc));
        }
    }
}
