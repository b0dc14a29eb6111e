//! Network data and the parametric reduced-order swing/VSM state-space model.
//!
//! Per unit `j` on rating `p_g` the speed equation in system per-unit reads
//!
//! ```text
//! m_j p_j/S_b dω_j/dt = -β_j u - (d_j - pll_j) p_j/S_b ω_j - p_j/S_b (f_j ω_j + x_j) - Σ_k L_jk δ_k
//! T_j dx_j/dt          = (r_j - f_j) ω_j - x_j                      (SG only)
//! dδ_j/dt              = ω_b (ω_j - ω_ref)                           (j ≠ ref)
//! ```
//!
//! where `u` is the power deficit at the disturbance bus (p.u. on `S_b`),
//! `β_j` its Kron distribution factor and `L` the Kron-reduced susceptance
//! Laplacian on the generator buses.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UnitKind {
    #[serde(rename = "SG")]
    Sg,
    #[serde(rename = "GridFormingVSC")]
    GridFormingVsc,
    #[serde(rename = "GridFollowingVSC")]
    GridFollowingVsc,
}

impl UnitKind {
    pub fn is_converter(self) -> bool {
        self != UnitKind::Sg
    }

    pub fn label(self) -> &'static str {
        match self {
            UnitKind::Sg => "SG",
            UnitKind::GridFormingVsc => "GridFormingVSC",
            UnitKind::GridFollowingVsc => "GridFollowingVSC",
        }
    }
}

/// First-order turbine-governor with transfer function `(r_inv + f_frac T s)/(1 + T s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Governor<T> {
    pub t: T,
    pub r_inv: T,
    pub f_frac: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenUnit<T> {
    pub bus: usize,
    pub kind: UnitKind,
    /// Dispatched power in MW, also the rating on which `m` and `d` are expressed.
    pub p_g: T,
    pub m: T,
    pub d: T,
    /// Negative damping injected by the synchronization loop of a
    /// grid-following unit; the dynamics see `d - pll_damping`.
    pub pll_damping: T,
    pub governor: Option<Governor<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line<T> {
    pub from: usize,
    pub to: usize,
    pub b: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disturbance<T> {
    pub bus: usize,
    pub dp_mw: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCase<T> {
    pub buses: Vec<usize>,
    pub lines: Vec<Line<T>>,
    pub units: Vec<GenUnit<T>>,
    pub base_power: T,
    pub f0: T,
    pub disturbance: Disturbance<T>,
}

impl<T: Real> GridCase<T> {
    pub fn omega_base(&self) -> T {
        T::two_pi() * self.f0
    }

    pub fn total_generation(&self) -> T {
        self.units.iter().fold(T::zero(), |s, u| s + u.p_g)
    }

    /// Indices of units whose gains are decision variables.
    pub fn controllable(&self) -> Vec<usize> {
        (0..self.units.len())
            .filter(|&j| self.units[j].kind.is_converter())
            .collect()
    }

    /// Grounded unit: first SG, else first grid-forming unit, else unit 0.
    pub fn reference_unit(&self) -> usize {
        let find = |k| self.units.iter().position(|u| u.kind == k);
        find(UnitKind::Sg)
            .or_else(|| find(UnitKind::GridFormingVsc))
            .unwrap_or(0)
    }

    fn bus_index(&self) -> BTreeMap<usize, usize> {
        self.buses.iter().enumerate().map(|(i, &b)| (b, i)).collect()
    }

    /// Checks every structural invariant and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let idx = self.bus_index();
        if idx.len() != self.buses.len() {
            errs.push("duplicate bus ids".to_string());
        }
        if self.base_power <= T::zero() {
            errs.push("base_power must be > 0".into());
        }
        if self.f0 <= T::zero() {
            errs.push("f0 must be > 0".into());
        }
        if self.buses.is_empty() {
            errs.push("at least one bus is required".into());
        }
        if self.units.is_empty() {
            errs.push("at least one unit is required".into());
        }
        for (k, l) in self.lines.iter().enumerate() {
            if !idx.contains_key(&l.from) || !idx.contains_key(&l.to) {
                errs.push(format!("line {k}: unknown bus"));
            }
            if l.from == l.to {
                errs.push(format!("line {k}: self loop"));
            }
            if !(l.b > T::zero()) {
                errs.push(format!("line {k}: susceptance must be > 0"));
            }
        }
        let mut seen = BTreeMap::new();
        for (j, u) in self.units.iter().enumerate() {
            if !idx.contains_key(&u.bus) {
                errs.push(format!("unit {j}: unknown bus {}", u.bus));
            }
            if let Some(prev) = seen.insert(u.bus, j) {
                errs.push(format!("unit {j}: bus {} already hosts unit {prev}", u.bus));
            }
            if !(u.m > T::zero()) {
                errs.push(format!("unit {j}: m must be > 0"));
            }
            if !(u.d >= T::zero()) {
                errs.push(format!("unit {j}: d must be >= 0"));
            }
            if !(u.p_g > T::zero()) {
                errs.push(format!("unit {j}: p_g must be > 0"));
            }
            if !(u.pll_damping >= T::zero()) {
                errs.push(format!("unit {j}: pll_damping must be >= 0"));
            }
            if u.pll_damping > T::zero() && u.kind != UnitKind::GridFollowingVsc {
                errs.push(format!("unit {j}: pll_damping only applies to grid-following units"));
            }
            match (&u.governor, u.kind) {
                (None, UnitKind::Sg) => errs.push(format!("unit {j}: SG requires a governor")),
                (Some(_), k) if k.is_converter() => errs.push(format!("unit {j}: converter units carry no governor")),
                (Some(g), _) => {
                    if !(g.t > T::zero()) {
                        errs.push(format!("unit {j}: governor T must be > 0"));
                    }
                    if !(g.r_inv >= T::zero()) {
                        errs.push(format!("unit {j}: governor r_inv must be >= 0"));
                    }
                    if !(g.f_frac >= T::zero() && g.f_frac <= T::one()) {
                        errs.push(format!("unit {j}: governor f_frac must lie in [0, 1]"));
                    }
                }
                _ => {}
            }
        }
        if !idx.contains_key(&self.disturbance.bus) {
            errs.push(format!("disturbance bus {} unknown", self.disturbance.bus));
        }
        if !errs.is_empty() {
            return Err(Error::Validation(errs));
        }
        self.check_connected()
    }

    fn check_connected(&self) -> Result<()> {
        let idx = self.bus_index();
        let n = self.buses.len();
        let mut adj = vec![Vec::new(); n];
        for l in &self.lines {
            let (a, b) = (idx[&l.from], idx[&l.to]);
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &k in &adj[i] {
                if !seen[k] {
                    seen[k] = true;
                    queue.push_back(k);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(Error::Disconnected(self.buses[i])),
            None => Ok(()),
        }
    }

    /// Bus susceptance Laplacian in the order of `buses`.
    pub fn laplacian(&self) -> DMatrix<T> {
        let idx = self.bus_index();
        let n = self.buses.len();
        let mut y = DMatrix::zeros(n, n);
        for l in &self.lines {
            let (a, b) = (idx[&l.from], idx[&l.to]);
            y[(a, a)] += l.b;
            y[(b, b)] += l.b;
            y[(a, b)] -= l.b;
            y[(b, a)] -= l.b;
        }
        y
    }
}

/// Box bounds on the gains of a controllable unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainBounds<T> {
    pub m_lo: T,
    pub m_hi: T,
    pub d_lo: T,
    pub d_hi: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationState<T> {
    pub m: Vec<T>,
    pub d: Vec<T>,
    /// `None` for units whose gains are fixed (SGs).
    pub bounds: Vec<Option<GainBounds<T>>>,
    pub iteration: usize,
}

impl<T: Real> AllocationState<T> {
    /// Gains as given in the case; converters receive the supplied bounds.
    pub fn from_case(case: &GridCase<T>, bounds: Vec<Option<GainBounds<T>>>) -> Self {
        AllocationState {
            m: case.units.iter().map(|u| u.m).collect(),
            d: case.units.iter().map(|u| u.d).collect(),
            bounds,
            iteration: 0,
        }
    }

    /// Unbounded converter gains; convenient for analysis.
    pub fn unbounded(case: &GridCase<T>) -> Self {
        let b = case
            .units
            .iter()
            .map(|u| {
                u.kind.is_converter().then(|| GainBounds {
                    m_lo: T::lit(1e-6),
                    m_hi: T::lit(1e12),
                    d_lo: T::zero(),
                    d_hi: T::lit(1e12),
                })
            })
            .collect();
        Self::from_case(case, b)
    }

    pub fn within_bounds(&self, tol: T) -> bool {
        self.bounds.iter().enumerate().all(|(j, b)| match b {
            Some(b) => {
                self.m[j] >= b.m_lo - tol
                    && self.m[j] <= b.m_hi + tol
                    && self.d[j] >= b.d_lo - tol
                    && self.d[j] <= b.d_hi + tol
            }
            None => true,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c: DMatrix<T>,
    pub d: DMatrix<T>,
}

impl<T: Real> StateSpace<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, c: DMatrix<T>) -> Self {
        let d = DMatrix::zeros(c.nrows(), b.ncols());
        StateSpace { a, b, c, d }
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    Angle,
    Speed,
    Governor,
}

impl StateKind {
    pub fn label(self) -> &'static str {
        match self {
            StateKind::Angle => "angle",
            StateKind::Speed => "speed",
            StateKind::Governor => "governor",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c: DMatrix<T>,
    pub d: DMatrix<T>,
    pub state_labels: Vec<(usize, StateKind)>,
    /// Units whose gains are decision variables.
    pub controllable: Vec<usize>,
    /// Indexed by unit id.
    pub da_dm: Vec<DMatrix<T>>,
    pub da_dd: Vec<DMatrix<T>>,
}

impl<T: Real> LinearModel<T> {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn state_index(&self, unit: usize, kind: StateKind) -> Option<usize> {
        self.state_labels.iter().position(|&s| s == (unit, kind))
    }

    pub fn state_space(&self) -> StateSpace<T> {
        StateSpace {
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c.clone(),
            d: self.d.clone(),
        }
    }
}

/// Kron reduction of a Laplacian onto the `keep` indices.
#[derive(Debug, Clone)]
pub struct KronReduction<T: Real> {
    pub reduced: DMatrix<T>,
    /// `-Y_KE Y_EE^{-1}`: share of an injection at an eliminated bus seen at each kept bus.
    pub distribution: DMatrix<T>,
    pub eliminated: Vec<usize>,
}

pub fn kron_reduce<T: Real>(y: &DMatrix<T>, keep: &[usize]) -> Result<KronReduction<T>> {
    let n = y.nrows();
    let elim: Vec<usize> = (0..n).filter(|i| !keep.contains(i)).collect();
    let pick = |r: &[usize], c: &[usize]| DMatrix::from_fn(r.len(), c.len(), |i, j| y[(r[i], c[j])]);
    let ykk = pick(keep, keep);
    if elim.is_empty() {
        return Ok(KronReduction {
            reduced: ykk,
            distribution: DMatrix::zeros(keep.len(), 0),
            eliminated: elim,
        });
    }
    let yke = pick(keep, &elim);
    let yee = pick(&elim, &elim);
    let lu = yee.lu();
    let yee_inv_yek = lu.solve(&yke.transpose()).ok_or(Error::Singular("Kron reduction"))?;
    let mut reduced = ykk - &yke * &yee_inv_yek;
    reduced = (&reduced + reduced.transpose()) * T::lit(0.5);
    let distribution = -yee_inv_yek.transpose();
    Ok(KronReduction {
        reduced,
        distribution,
        eliminated: elim,
    })
}

/// Source of linearized models; lets a richer dynamic model replace the swing model.
pub trait ModelProvider<T: Real> {
    fn linearize(&self, case: &GridCase<T>, alloc: &AllocationState<T>) -> Result<LinearModel<T>>;
}

/// Reduced-order swing/VSM model with first-order SG governors.
#[derive(Debug, Clone, Copy, Default)]
pub struct SwingModel;

impl<T: Real> ModelProvider<T> for SwingModel {
    fn linearize(&self, case: &GridCase<T>, alloc: &AllocationState<T>) -> Result<LinearModel<T>> {
        linearize(case, alloc)
    }
}

pub fn linearize<T: Real>(case: &GridCase<T>, alloc: &AllocationState<T>) -> Result<LinearModel<T>> {
    case.validate()?;
    let nu = case.units.len();
    if alloc.m.len() != nu || alloc.d.len() != nu {
        return Err(Error::InvalidCase("allocation does not cover every unit".into()));
    }
    for j in 0..nu {
        if !(alloc.m[j] > T::zero()) {
            return Err(Error::NonPositiveInertia {
                unit: j,
                value: alloc.m[j].f64(),
            });
        }
    }
    let bus_idx = case.bus_index();
    let keep: Vec<usize> = case.units.iter().map(|u| bus_idx[&u.bus]).collect();
    let kron = kron_reduce(&case.laplacian(), &keep)?;
    let lr = &kron.reduced;

    // Share of the disturbance seen at each unit.
    let dist_bus = bus_idx[&case.disturbance.bus];
    let share: Vec<T> = match keep.iter().position(|&k| k == dist_bus) {
        Some(j) => (0..nu).map(|i| if i == j { T::one() } else { T::zero() }).collect(),
        None => {
            let e = kron.eliminated.iter().position(|&k| k == dist_bus).unwrap();
            (0..nu).map(|i| kron.distribution[(i, e)]).collect()
        }
    };

    let r = case.reference_unit();
    let mut labels = Vec::new();
    for (j, u) in case.units.iter().enumerate() {
        if j != r {
            labels.push((j, StateKind::Angle));
        }
        labels.push((j, StateKind::Speed));
        if u.governor.is_some() {
            labels.push((j, StateKind::Governor));
        }
    }
    let n = labels.len();
    let pos = |j: usize, k: StateKind| labels.iter().position(|&s| s == (j, k)).unwrap();
    let wb = case.omega_base();
    let sb = case.base_power;

    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, 1);
    let mut da_dm = Vec::with_capacity(nu);
    let mut da_dd = Vec::with_capacity(nu);
    for (j, u) in case.units.iter().enumerate() {
        let w = pos(j, StateKind::Speed);
        let scale = u.p_g / sb;
        let ms = alloc.m[j] * scale;
        if j != r {
            let ang = pos(j, StateKind::Angle);
            a[(ang, w)] += wb;
            a[(ang, pos(r, StateKind::Speed))] -= wb;
        }
        a[(w, w)] -= (alloc.d[j] - u.pll_damping) * scale;
        for k in 0..nu {
            if k != r {
                a[(w, pos(k, StateKind::Angle))] -= lr[(j, k)];
            }
        }
        if let Some(g) = &u.governor {
            let x = pos(j, StateKind::Governor);
            a[(w, w)] -= g.f_frac * scale;
            a[(w, x)] -= scale;
            a[(x, w)] = (g.r_inv - g.f_frac) / g.t;
            a[(x, x)] = -T::one() / g.t;
        }
        for k in 0..n {
            a[(w, k)] /= ms;
        }
        b[(w, 0)] = -share[j] / ms;

        let mut dm = DMatrix::zeros(n, n);
        for k in 0..n {
            dm[(w, k)] = -a[(w, k)] / alloc.m[j];
        }
        let mut dd = DMatrix::zeros(n, n);
        dd[(w, w)] = -scale / ms;
        da_dm.push(dm);
        da_dd.push(dd);
    }
    let speeds: Vec<usize> = (0..nu).map(|j| pos(j, StateKind::Speed)).collect();
    let c = DMatrix::from_fn(nu, n, |i, k| if speeds[i] == k { T::one() } else { T::zero() });
    let d = DMatrix::zeros(nu, 1);
    Ok(LinearModel {
        a,
        b,
        c,
        d,
        state_labels: labels,
        controllable: case.controllable(),
        da_dm,
        da_dd,
    })
}

/// Re-linearizes with unit `unit` moved by `(dm, dd)`.
pub fn perturb_gain<T: Real, P: ModelProvider<T> + ?Sized>(
    provider: &P,
    case: &GridCase<T>,
    alloc: &AllocationState<T>,
    unit: usize,
    dm: T,
    dd: T,
) -> Result<LinearModel<T>> {
    if unit >= case.units.len() {
        return Err(Error::UnknownUnit(unit));
    }
    let mut next = alloc.clone();
    next.m[unit] += dm;
    next.d[unit] += dd;
    if !(next.m[unit] > T::zero()) {
        return Err(Error::NonPositiveInertia {
            unit,
            value: next.m[unit].f64(),
        });
    }
    provider.linearize(case, &next)
}
