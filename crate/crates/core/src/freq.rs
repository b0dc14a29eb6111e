//! Closed-form frequency metrics of the aggregate single-machine response
//!
//! ```text
//! Δf(s) = -f0 ΔP (1 + T s) / (s (M T s² + (M + T(D + F_g)) s + D + R_g))
//! ```
//!
//! and their sensitivities to aggregate inertia `M` and damping `D`.

use nalgebra::DMatrix;

use crate::grid::{AllocationState, GridCase, StateSpace, UnitKind};
use crate::{Error, Real, Result};

/// Governor time constant used when no unit carries a governor.
pub const DEFAULT_T: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateParams<T> {
    pub m: T,
    pub d: T,
    pub r_g: T,
    pub f_g: T,
    pub t: T,
    pub f0: T,
    /// Power deficit in p.u. of total generation.
    pub dp: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NadirPoint<T> {
    /// Extreme frequency deviation in Hz, negative for a deficit.
    pub nadir: T,
    /// Time of the extremum in s; infinite for a monotone response.
    pub t_m: T,
    pub zeta_s: T,
    pub omega_n: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreqMetrics<T> {
    pub rocof_max: T,
    pub nadir: T,
    pub t_m: T,
    pub zeta_s: T,
    pub omega_n: T,
    pub dnadir_dm: T,
    pub dnadir_dd: T,
}

impl<T: Real> AggregateParams<T> {
    fn check(&self) -> Result<()> {
        let bad = |s: &str| Err(Error::InvalidAggregate(s.into()));
        if !(self.m > T::zero()) {
            return bad("M must be > 0");
        }
        if !(self.d >= T::zero()) {
            return bad("D must be >= 0");
        }
        if !(self.r_g >= T::zero()) {
            return bad("R_g must be >= 0");
        }
        if !(self.f_g >= T::zero() && self.f_g <= T::one()) {
            return bad("F_g must lie in [0, 1]");
        }
        if !(self.t > T::zero()) {
            return bad("T must be > 0");
        }
        if !(self.d + self.r_g > T::zero()) {
            return bad("D + R_g must be > 0");
        }
        Ok(())
    }

    pub fn zeta_s(&self) -> T {
        (self.m + self.t * (self.d + self.f_g)) / (T::lit(2.0) * (self.m * self.t * (self.d + self.r_g)).sqrt())
    }

    pub fn omega_n(&self) -> T {
        ((self.d + self.r_g) / (self.m * self.t)).sqrt()
    }

    /// Steady-state deviation `-f0 ΔP/(D + R_g)`.
    pub fn steady_state(&self) -> T {
        -self.f0 * self.dp / (self.d + self.r_g)
    }

    /// Whether the nadir time is positive: `M/T - F_g < D`.
    pub fn nadir_time_valid(&self) -> bool {
        self.m / self.t - self.f_g < self.d
    }

    fn with_md(&self, m: T, d: T) -> Self {
        AggregateParams { m, d, ..*self }
    }
}

/// Maximum RoCoF `-f0 ΔP/M` in Hz/s.
pub fn rocof<T: Real>(p: &AggregateParams<T>) -> Result<T> {
    if !(p.m > T::zero()) {
        return Err(Error::InvalidAggregate("M must be > 0".into()));
    }
    Ok(-p.f0 * p.dp / p.m)
}

fn underdamped<T: Real>(p: &AggregateParams<T>) -> NadirPoint<T> {
    let zs = p.zeta_s();
    let wn = p.omega_n();
    let wd = wn * (T::one() - zs * zs).sqrt();
    let mut phase = wd.atan2(zs * wn - T::one() / p.t);
    if phase < T::zero() {
        phase += T::pi();
    }
    let t_m = phase / wd;
    let amp = (p.t * (p.r_g - p.f_g) / p.m).sqrt();
    NadirPoint {
        nadir: p.steady_state() * (T::one() + amp * (-zs * wn * t_m).exp()),
        t_m,
        zeta_s: zs,
        omega_n: wn,
    }
}

/// Nadir from the underdamped closed form.
///
/// Rejects parameter sets outside its domain with
/// [`Error::NadirTimeInvalid`] or [`Error::Overdamped`].
pub fn nadir<T: Real>(p: &AggregateParams<T>) -> Result<NadirPoint<T>> {
    p.check()?;
    if !(p.r_g > p.f_g) {
        return Err(Error::InvalidAggregate("R_g must exceed F_g".into()));
    }
    if !p.nadir_time_valid() {
        return Err(Error::NadirTimeInvalid);
    }
    if p.zeta_s() >= T::one() {
        return Err(Error::Overdamped);
    }
    Ok(underdamped(p))
}

/// Extremum of the aggregate step response on the whole parameter domain.
///
/// Agrees with [`nadir`] where the latter is defined and continues it
/// through critical damping into the real-pole regime. A monotone response
/// returns the steady-state deviation with `t_m = ∞`.
pub fn nadir_response<T: Real>(p: &AggregateParams<T>) -> Result<NadirPoint<T>> {
    p.check()?;
    let inf = T::from_f64(f64::INFINITY).unwrap();
    let a = p.m * p.t;
    let b = p.m + p.t * (p.d + p.f_g);
    let c = p.d + p.r_g;
    let ss = p.steady_state();
    let monotone = NadirPoint {
        nadir: ss,
        t_m: inf,
        zeta_s: p.zeta_s(),
        omega_n: p.omega_n(),
    };
    if !(p.r_g > p.f_g) {
        return Ok(monotone);
    }
    let disc = b * b - T::lit(4.0) * a * c;
    let crit = T::lit(1e-10) * b * b;
    if disc < -crit {
        return Ok(underdamped(p));
    }
    if disc <= crit {
        // Double pole p: y = ss (1 + e^{pt}(-1 + β t)) with β = c/M + p.
        let pole = -b / (T::lit(2.0) * a);
        let beta = c / p.m + pole;
        if beta <= T::zero() {
            return Ok(monotone);
        }
        let t_m = -(c / p.m) / (pole * beta);
        return Ok(NadirPoint {
            nadir: ss * (T::one() + (pole * t_m).exp() * (-T::one() + beta * t_m)),
            t_m,
            ..monotone
        });
    }
    let sq = disc.sqrt();
    let two_a = T::lit(2.0) * a;
    let p1 = (-b + sq) / two_a;
    let p2 = (-b - sq) / two_a;
    let r1 = T::one() + p.t * p1;
    let r2 = T::one() + p.t * p2;
    if r1 == T::zero() {
        return Ok(monotone);
    }
    let q = r2 / r1;
    if q <= T::zero() {
        return Ok(monotone);
    }
    let t_m = q.ln() / (p1 - p2);
    if t_m <= T::zero() {
        return Ok(monotone);
    }
    let k1 = c * r1 / (a * p1 * (p1 - p2));
    let k2 = c * r2 / (a * p2 * (p2 - p1));
    Ok(NadirPoint {
        nadir: ss * (T::one() + k1 * (p1 * t_m).exp() + k2 * (p2 * t_m).exp()),
        t_m,
        ..monotone
    })
}

/// Finite-difference step relative to the variable magnitude.
pub fn fd_step<T: Real>() -> T {
    if T::eps() < T::lit(1e-12) {
        T::lit(1e-6)
    } else {
        T::eps().cbrt()
    }
}

fn central_gradient<T: Real>(
    p: &AggregateParams<T>,
    h_rel: T,
    f: impl Fn(&AggregateParams<T>) -> Result<NadirPoint<T>>,
) -> Result<(T, T)> {
    let hm = h_rel * p.m.abs().max(T::one());
    let hd = h_rel * p.d.abs().max(T::one());
    let two = T::lit(2.0);
    let gm = (f(&p.with_md(p.m + hm, p.d))?.nadir - f(&p.with_md(p.m - hm, p.d))?.nadir) / (two * hm);
    let gd = (f(&p.with_md(p.m, p.d + hd))?.nadir - f(&p.with_md(p.m, p.d - hd))?.nadir) / (two * hd);
    Ok((gm, gd))
}

/// `(∂nadir/∂M, ∂nadir/∂D)` of [`nadir`] by central differences.
pub fn nadir_gradient<T: Real>(p: &AggregateParams<T>) -> Result<(T, T)> {
    nadir_gradient_step(p, fd_step())
}

pub fn nadir_gradient_step<T: Real>(p: &AggregateParams<T>, h_rel: T) -> Result<(T, T)> {
    central_gradient(p, h_rel, nadir)
}

/// `(∂nadir/∂M, ∂nadir/∂D)` of [`nadir_response`] by central differences.
pub fn response_gradient<T: Real>(p: &AggregateParams<T>) -> Result<(T, T)> {
    central_gradient(p, fd_step(), nadir_response)
}

/// All metrics from the continuous nadir.
pub fn metrics<T: Real>(p: &AggregateParams<T>) -> Result<FreqMetrics<T>> {
    let n = nadir_response(p)?;
    let (gm, gd) = response_gradient(p)?;
    Ok(FreqMetrics {
        rocof_max: rocof(p)?,
        nadir: n.nadir,
        t_m: n.t_m,
        zeta_s: n.zeta_s,
        omega_n: n.omega_n,
        dnadir_dm: gm,
        dnadir_dd: gd,
    })
}

/// Generation-weighted aggregate parameters of an allocation.
pub fn aggregate<T: Real>(case: &GridCase<T>, alloc: &AllocationState<T>) -> Result<AggregateParams<T>> {
    let total = case.total_generation();
    if !(total > T::zero()) {
        return Err(Error::ZeroGeneration);
    }
    let mut m = T::zero();
    let mut d = T::zero();
    let mut r = T::zero();
    let mut f = T::zero();
    let mut t = T::zero();
    let mut sg_p = T::zero();
    for (j, u) in case.units.iter().enumerate() {
        m += u.p_g * alloc.m[j];
        d += u.p_g * alloc.d[j];
        if let (UnitKind::Sg, Some(g)) = (u.kind, &u.governor) {
            r += u.p_g * g.r_inv;
            f += u.p_g * g.f_frac;
            t += u.p_g * g.t;
            sg_p += u.p_g;
        }
    }
    Ok(AggregateParams {
        m: m / total,
        d: d / total,
        r_g: r / total,
        f_g: f / total,
        t: if sg_p > T::zero() { t / sg_p } else { T::lit(DEFAULT_T) },
        f0: case.f0,
        dp: case.disturbance.dp_mw / total,
    })
}

/// Two-state model with input `ΔP` and output `Δf` in Hz.
pub fn aggregate_model<T: Real>(p: &AggregateParams<T>) -> StateSpace<T> {
    let a = DMatrix::from_row_slice(
        2,
        2,
        &[
            -(p.d + p.f_g) / p.m,
            -T::one() / p.m,
            (p.r_g - p.f_g) / p.t,
            -T::one() / p.t,
        ],
    );
    let b = DMatrix::from_row_slice(2, 1, &[-T::one() / p.m, T::zero()]);
    let c = DMatrix::from_row_slice(1, 2, &[p.f0, T::zero()]);
    StateSpace::new(a, b, c)
}
