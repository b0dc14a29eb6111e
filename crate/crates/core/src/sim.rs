//! Fixed-step RK4 integration of linear state-space models.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::eigen::eigenvalues;
use crate::grid::StateSpace;
use crate::{Error, Real, Result};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_HORIZON: f64 = 30.0;
const DIVERGENCE: f64 = 1e12;

/// Samples `y(t)` at every step, `t[0] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub t: Vec<T>,
    /// One row per sample, one column per output.
    pub y: Vec<Vec<T>>,
}

impl<T: Real> Trajectory<T> {
    /// Smallest value of output `k` and the time at which it occurs.
    pub fn min_of(&self, k: usize) -> (T, T) {
        let mut best = (self.y[0][k], self.t[0]);
        for (row, &t) in self.y.iter().zip(&self.t) {
            if row[k] < best.0 {
                best = (row[k], t);
            }
        }
        best
    }

    pub fn last(&self) -> &[T] {
        self.y.last().map(|r| r.as_slice()).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpulseEnergy<T> {
    pub energy: T,
    /// Horizon shorter than five slowest time constants.
    pub short_horizon: bool,
}

fn check(dt: f64, horizon: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidSim("dt must be > 0".into()));
    }
    if !(horizon > dt) || !horizon.is_finite() {
        return Err(Error::InvalidSim("horizon must exceed dt".into()));
    }
    Ok((horizon / dt).round() as usize)
}

/// Integrates `ẋ = A x + b u` with constant `u` from `x0`, calling `emit`
/// at every sample including `t = 0`.
fn integrate<T: Real>(
    a: &DMatrix<T>,
    forcing: &DVector<T>,
    x0: DVector<T>,
    dt: T,
    steps: usize,
    mut emit: impl FnMut(T, &DVector<T>),
) -> Result<()> {
    let half = dt * T::lit(0.5);
    let sixth = dt / T::lit(6.0);
    let two = T::lit(2.0);
    let n = x0.len();
    // k_out = A x_in + forcing, without allocating.
    let f = |out: &mut DVector<T>, x: &DVector<T>| {
        out.copy_from(forcing);
        out.gemv(T::one(), a, x, T::one());
    };
    let mut x = x0;
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
        DVector::zeros(n),
        DVector::zeros(n),
        DVector::zeros(n),
        DVector::zeros(n),
        DVector::zeros(n),
    );
    emit(T::zero(), &x);
    let limit = T::lit(DIVERGENCE);
    for k in 1..=steps {
        f(&mut k1, &x);
        tmp.copy_from(&x);
        tmp.axpy(half, &k1, T::one());
        f(&mut k2, &tmp);
        tmp.copy_from(&x);
        tmp.axpy(half, &k2, T::one());
        f(&mut k3, &tmp);
        tmp.copy_from(&x);
        tmp.axpy(dt, &k3, T::one());
        f(&mut k4, &tmp);
        k2 += &k3;
        x.axpy(sixth, &k1, T::one());
        x.axpy(sixth * two, &k2, T::one());
        x.axpy(sixth, &k4, T::one());
        let t = dt * T::from_usize(k).unwrap();
        if !(x.norm() <= limit) {
            return Err(Error::Diverged(t.f64()));
        }
        emit(t, &x);
    }
    Ok(())
}

/// Response to a step of size `dp` on the first input from rest.
pub fn step_response<T: Real>(ss: &StateSpace<T>, dp: T, horizon: T, dt: T) -> Result<Trajectory<T>> {
    let steps = check(dt.f64(), horizon.f64())?;
    let n = ss.order();
    if ss.b.ncols() == 0 {
        return Err(Error::InvalidSim("model has no input".into()));
    }
    let forcing = ss.b.column(0) * dp;
    let dcol = ss.d.column(0) * dp;
    let mut out = Trajectory {
        t: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps + 1),
    };
    integrate(&ss.a, &forcing, DVector::zeros(n), dt, steps, |t, x| {
        out.t.push(t);
        out.y.push((&ss.c * x + &dcol).iter().copied().collect());
    })?;
    Ok(out)
}

/// `√(Σ_k ∫ ‖y_k‖² dt)` where `y_k` is the free response from `x(0) = b_k`,
/// accumulated with the trapezoidal rule.
pub fn impulse_energy<T: Real>(ss: &StateSpace<T>, horizon: T, dt: T) -> Result<ImpulseEnergy<T>> {
    let steps = check(dt.f64(), horizon.f64())?;
    let n = ss.order();
    let mut short_horizon = false;
    if n > 0 {
        let lambdas = eigenvalues(&ss.a)?;
        if lambdas.iter().any(|l| l.re >= T::zero()) {
            return Err(Error::Unstable);
        }
        let slowest = lambdas.iter().fold(T::zero(), |m, l| m.max(T::one() / -l.re));
        short_horizon = horizon < slowest * T::lit(5.0);
    }
    let zero = DVector::zeros(n);
    let mut total = T::zero();
    let mut y = DVector::zeros(ss.c.nrows());
    for col in 0..ss.b.ncols() {
        let mut prev: Option<T> = None;
        integrate(&ss.a, &zero, ss.b.column(col).into_owned(), dt, steps, |_, x| {
            y.gemv(T::one(), &ss.c, x, T::zero());
            let e = y.norm_squared();
            if let Some(p) = prev {
                total += (p + e) * dt * T::lit(0.5);
            }
            prev = Some(e);
        })?;
    }
    Ok(ImpulseEnergy {
        energy: total.sqrt(),
        short_horizon,
    })
}

/// Horizon of ten slowest time constants, as used by the impulse oracle.
pub fn settling_horizon<T: Real>(ss: &StateSpace<T>) -> Result<T> {
    let lambdas = eigenvalues(&ss.a)?;
    let slow = lambdas
        .iter()
        .fold(T::zero(), |m, l| m.max(T::one() / (-l.re).max(T::lit(1e-12))));
    Ok(slow * T::lit(10.0))
}

/// Formats a value with 12 significant digits.
pub fn fmt12(x: f64) -> String {
    format!("{x:.11e}")
}

/// Writes `t,y_1,...,y_m` rows with LF line endings.
pub fn write_csv<T: Real, W: Write>(traj: &Trajectory<T>, w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    let m = traj.y.first().map_or(0, |r| r.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|k| format!("y_{k}")));
    let io = |e: csv::Error| Error::Io(e.to_string());
    wr.write_record(&header).map_err(io)?;
    for (t, row) in traj.t.iter().zip(&traj.y) {
        let mut rec = vec![fmt12(t.f64())];
        rec.extend(row.iter().map(|v| fmt12(v.f64())));
        wr.write_record(&rec).map_err(io)?;
    }
    wr.flush().map_err(|e| Error::Io(e.to_string()))
}
