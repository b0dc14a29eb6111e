//! Result files written by the command-line tool.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::allocator::{evaluate, AllocResult, IterationRecord, IterationTrace, Outcome, TraceSink};
use crate::case::LoadedCase;
use crate::grid::{AllocationState, GridCase, SwingModel};
use crate::lp::SLACK_LABELS;
use crate::modal::{spectrum, GainKind};
use crate::norms::norm_report;
use crate::sim::fmt12;
use crate::{Complex, Error, Result};

/// Relative bracket width of the reported H∞ norm.
pub const HINF_TOL: f64 = 1e-6;

/// Performance summary of one allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    #[serde(rename = "inertia_MWs2")]
    pub inertia_mws2: f64,
    #[serde(rename = "damping_MWs")]
    pub damping_mws: f64,
    /// Aggregate `M` in s on total generation.
    pub inertia_pu_s: f64,
    /// Aggregate `D` in p.u. on total generation.
    pub damping_pu: f64,
    pub zeta_min: f64,
    pub sigma_max: f64,
    pub rocof_hz_s: f64,
    pub nadir_hz: f64,
    /// `null` when infinite.
    pub h2: Option<f64>,
    pub hinf: Option<f64>,
    pub stable: bool,
}

/// Computes every metric of `alloc` from scratch.
pub fn metric_table(case: &GridCase<f64>, alloc: &AllocationState<f64>, filter_tol: f64) -> Result<MetricTable> {
    let ev = evaluate(&SwingModel, case, alloc, filter_tol)?;
    let norms = norm_report(&ev.model.state_space(), HINF_TOL)?;
    let total = case.total_generation();
    Ok(MetricTable {
        inertia_mws2: ev.agg.m * total / case.f0,
        damping_mws: ev.agg.d * total / case.f0,
        inertia_pu_s: ev.agg.m,
        damping_pu: ev.agg.d,
        zeta_min: ev.worst.zeta_min,
        sigma_max: ev.worst.sigma_max,
        rocof_hz_s: ev.freq.rocof_max,
        nadir_hz: ev.freq.nadir,
        h2: norms.h2,
        hinf: norms.hinf,
        stable: norms.stable,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub case: String,
    pub method: String,
    pub outcome: String,
    pub iterations: usize,
    #[serde(flatten)]
    pub metrics: MetricTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSnapshot {
    pub tag: String,
    pub lambdas: Vec<Complex<f64>>,
    pub zetas: Vec<f64>,
}

pub fn snapshot(tag: &str, case: &GridCase<f64>, alloc: &AllocationState<f64>) -> Result<SpectrumSnapshot> {
    let model = crate::grid::linearize(case, alloc)?;
    let s = spectrum(&model.a)?;
    Ok(SpectrumSnapshot {
        tag: tag.into(),
        lambdas: s.lambdas,
        zetas: s.zetas,
    })
}

#[derive(Debug, Clone)]
pub struct ResultBundle {
    pub case: LoadedCase,
    pub method: String,
    pub alloc: AllocationState<f64>,
    pub metrics: MetricTable,
    pub trace: IterationTrace<f64>,
    pub spectra: Vec<SpectrumSnapshot>,
}

impl ResultBundle {
    pub fn new(case: &LoadedCase, method: &str, res: &AllocResult<f64>) -> Result<Self> {
        let grid = &case.grid;
        let mut spectra = vec![snapshot("initial", grid, &case.initial_allocation())?];
        for (phase, a) in &res.phase_ends {
            spectra.push(snapshot(phase.label(), grid, a)?);
        }
        spectra.push(snapshot("final", grid, &res.alloc)?);
        Ok(ResultBundle {
            case: case.clone(),
            method: method.into(),
            alloc: res.alloc.clone(),
            metrics: metric_table(grid, &res.alloc, case.loop_cfg.filter_tol)?,
            trace: res.trace.clone(),
            spectra,
        })
    }

    pub fn metrics_file(&self) -> MetricsFile {
        MetricsFile {
            case: self.case.name.clone(),
            method: self.method.clone(),
            outcome: outcome_label(&self.trace.outcome),
            iterations: self.trace.records.len(),
            metrics: self.metrics.clone(),
        }
    }
}

pub fn outcome_label(o: &Outcome) -> String {
    match o {
        Outcome::Converged => "converged".into(),
        Outcome::Stalled { phase, reason } => format!("stalled in {} phase: {reason}", phase.label()),
        Outcome::MaxIterations { phase } => format!("iteration limit in {} phase", phase.label()),
        Outcome::Infeasible { phase, rows } => {
            format!("infeasible in {} phase: {}", phase.label(), rows.join(" "))
        }
    }
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(format!("{}: {e}", path.display()))
}

pub fn write_allocation<W: Write>(case: &GridCase<f64>, alloc: &AllocationState<f64>, w: W) -> Result<()> {
    let mut wr = csv_writer(w);
    wr.write_record(["unit", "bus", "kind", "m", "d"]).map_err(csv_err)?;
    for (j, u) in case.units.iter().enumerate() {
        wr.write_record([
            j.to_string(),
            u.bus.to_string(),
            u.kind.label().to_string(),
            fmt12(alloc.m[j]),
            fmt12(alloc.d[j]),
        ])
        .map_err(csv_err)?;
    }
    wr.flush().map_err(|e| Error::Io(e.to_string()))
}

/// Reads `(m, d)` per unit back from an allocation table.
pub fn read_allocation(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut out = vec![];
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let num = |k: usize| {
            rec.get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Io(format!("allocation row {}: bad field {k}", out.len())))
        };
        out.push((num(3)?, num(4)?));
    }
    Ok(out)
}

/// Column names of a trace table.
pub fn trace_header(case: &GridCase<f64>) -> Vec<String> {
    let mut h: Vec<String> = [
        "nu",
        "phase",
        "zeta_min",
        "sigma_max",
        "rocof",
        "nadir",
        "M",
        "D",
        "halvings",
        "step_scale",
        "mismatch",
        "change",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend(SLACK_LABELS.iter().map(|s| s.to_string()));
    let gains = crate::modal::gain_layout(&case.controllable());
    let name = |&(j, k): &(usize, GainKind)| {
        let g = if k == GainKind::M { "m" } else { "d" };
        format!("{g}_{}", case.units[j].bus)
    };
    h.extend(gains.iter().map(name));
    h.extend(gains.iter().map(|g| format!("dzeta_min_d{}", name(g))));
    h
}

fn trace_row(case: &GridCase<f64>, r: &IterationRecord<f64>) -> Vec<String> {
    let s = &r.state;
    let mut row = vec![
        r.nu.to_string(),
        r.phase.label().to_string(),
        fmt12(s.zeta_min),
        fmt12(s.sigma_max),
        fmt12(s.rocof),
        fmt12(s.nadir),
        fmt12(s.agg_m),
        fmt12(s.agg_d),
        r.halvings.to_string(),
        fmt12(r.step_scale),
        fmt12(r.mismatch),
        fmt12(r.change),
    ];
    row.extend(r.slacks.iter().map(|&x| fmt12(x)));
    let units = case.controllable();
    row.extend(units.iter().map(|&j| fmt12(s.m[j])));
    row.extend(units.iter().map(|&j| fmt12(s.d[j])));
    row.extend(r.dzeta_min.iter().map(|&x| fmt12(x)));
    row
}

/// Streams trace rows to CSV as iterations are accepted.
pub struct CsvTraceSink<'a, W: Write> {
    case: &'a GridCase<f64>,
    wr: csv::Writer<W>,
    error: Option<Error>,
}

impl<'a, W: Write> CsvTraceSink<'a, W> {
    pub fn new(case: &'a GridCase<f64>, w: W) -> Result<Self> {
        let mut wr = csv_writer(w);
        wr.write_record(trace_header(case)).map_err(csv_err)?;
        Ok(CsvTraceSink { case, wr, error: None })
    }

    /// Flushes and reports the first write error, if any.
    pub fn finish(mut self) -> Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.wr.flush().map_err(|e| Error::Io(e.to_string()))
    }
}

impl<W: Write> TraceSink<f64> for CsvTraceSink<'_, W> {
    fn record(&mut self, rec: &IterationRecord<f64>) {
        if self.error.is_none() {
            if let Err(e) = self.wr.write_record(trace_row(self.case, rec)) {
                self.error = Some(csv_err(e));
            }
        }
    }
}

pub fn write_trace<W: Write>(case: &GridCase<f64>, trace: &IterationTrace<f64>, w: W) -> Result<()> {
    let mut sink = CsvTraceSink::new(case, w)?;
    for r in &trace.records {
        sink.record(r);
    }
    sink.finish()
}

pub fn write_spectrum<W: Write>(s: &SpectrumSnapshot, w: W) -> Result<()> {
    let mut wr = csv_writer(w);
    wr.write_record(["re", "im", "zeta"]).map_err(csv_err)?;
    for (l, z) in s.lambdas.iter().zip(&s.zetas) {
        wr.write_record([fmt12(l.re), fmt12(l.im), fmt12(*z)])
            .map_err(csv_err)?;
    }
    wr.flush().map_err(|e| Error::Io(e.to_string()))
}

pub fn metrics_json(m: &MetricsFile) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("metrics serialize");
    s.push('\n');
    s
}

/// Writes `allocation.csv`, `metrics.json`, `trace.csv` and one
/// `spectrum_<tag>.csv` per snapshot into `dir`.
pub fn export_bundle(b: &ResultBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let file = |name: &str| {
        let p = dir.join(name);
        fs::File::create(&p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))
    };
    let grid = &b.case.grid;
    write_allocation(grid, &b.alloc, file("allocation.csv")?)?;
    let mut mf = file("metrics.json")?;
    mf.write_all(metrics_json(&b.metrics_file()).as_bytes())
        .map_err(io_err(dir))?;
    write_trace(grid, &b.trace, file("trace.csv")?)?;
    for s in &b.spectra {
        write_spectrum(s, file(&format!("spectrum_{}.csv", s.tag))?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Disturbance, GenUnit, Governor, Line, UnitKind};

    fn two_bus() -> GridCase<f64> {
        GridCase {
            buses: vec![1, 2],
            lines: vec![Line {
                from: 1,
                to: 2,
                b: 10.0,
            }],
            units: vec![
                GenUnit {
                    bus: 1,
                    kind: UnitKind::Sg,
                    p_g: 50.0,
                    m: 8.0,
                    d: 1.0,
                    pll_damping: 0.0,
                    governor: Some(Governor {
                        t: 5.0,
                        r_inv: 20.0,
                        f_frac: 0.3,
                    }),
                },
                GenUnit {
                    bus: 2,
                    kind: UnitKind::GridFollowingVsc,
                    p_g: 50.0,
                    m: 2.0,
                    d: 2.0,
                    pll_damping: 0.0,
                    governor: None,
                },
            ],
            base_power: 100.0,
            f0: 50.0,
            disturbance: Disturbance { bus: 1, dp_mw: 10.0 },
        }
    }

    #[test]
    fn allocation_round_trip() {
        let c = two_bus();
        let a = AllocationState::unbounded(&c);
        let mut buf = vec![];
        write_allocation(&c, &a, &mut buf).unwrap();
        let back = read_allocation(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, vec![(8.0, 1.0), (2.0, 2.0)]);
    }

    #[test]
    fn spectrum_rows_pair_up() {
        let c = two_bus();
        let s = snapshot("t", &c, &AllocationState::unbounded(&c)).unwrap();
        for l in s.lambdas.iter().filter(|l| l.im != 0.0) {
            assert!(s.lambdas.iter().any(|k| k.re == l.re && k.im == -l.im));
        }
    }

    #[test]
    fn metric_keys_follow_table_layout() {
        let c = two_bus();
        let m = metric_table(&c, &AllocationState::unbounded(&c), 1e-9).unwrap();
        let js = serde_json::to_value(&m).unwrap();
        for k in [
            "inertia_MWs2",
            "damping_MWs",
            "zeta_min",
            "rocof_hz_s",
            "nadir_hz",
            "h2",
            "hinf",
        ] {
            assert!(js.get(k).is_some(), "{k}");
        }
        // M = (50·8 + 50·2)/100 = 5 s on total generation.
        assert!((m.inertia_pu_s - 5.0).abs() < 1e-12);
        assert!((m.inertia_mws2 - 5.0 * 100.0 / 50.0).abs() < 1e-12);
    }
}
