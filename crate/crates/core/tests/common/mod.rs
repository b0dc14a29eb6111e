#![allow(dead_code)]

use std::path::PathBuf;
use std::process::{Command, Output};

use inertia_alloc::allocator::{run, AllocResult, Method, NullSink, Snapshot};
use inertia_alloc::case::{load_case, LoadedCase};
use inertia_alloc::grid::{AllocationState, SwingModel};

pub const LOW: &str = "kundur3_low_inertia.json";
pub const NONE: &str = "kundur3_no_inertia.json";

pub fn case_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("cases").join(name)
}

pub fn load(name: &str) -> LoadedCase {
    load_case(&case_path(name)).expect("case loads")
}

pub fn run_case(c: &LoadedCase, method: Method) -> AllocResult<f64> {
    run(
        &SwingModel,
        &c.grid,
        &c.initial_allocation(),
        &c.loop_cfg,
        &c.costs,
        method,
        &mut NullSink,
    )
    .expect("allocator runs")
}

pub fn without_freq(mut c: LoadedCase) -> LoadedCase {
    c.loop_cfg.freq_constraints = false;
    c
}

/// Allocation recorded in a trace snapshot.
pub fn alloc_of(c: &LoadedCase, s: &Snapshot<f64>) -> AllocationState<f64> {
    let mut a = c.initial_allocation();
    a.m = s.m.clone();
    a.d = s.d.clone();
    a
}

pub fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inertia-alloc"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Weighted effort `Σ c_M m_j + c_D d_j` over controllable units.
pub fn effort(c: &LoadedCase, m: &[f64], d: &[f64]) -> f64 {
    c.grid
        .controllable()
        .iter()
        .map(|&j| c.costs.c_m * m[j] + c.costs.c_d * d[j])
        .sum()
}
