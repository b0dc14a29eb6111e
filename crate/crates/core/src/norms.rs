//! H2 and H∞ norms of a stable state-space model.

use nalgebra::DMatrix;

use crate::eigen::eigenvalues;
use crate::grid::StateSpace;
use crate::{Complex, Error, Real, Result};

/// Distance from the imaginary axis below which a Hamiltonian eigenvalue
/// counts as lying on it. Widened to `100·eps·‖H‖_F` when that is larger.
pub const IMAG_AXIS_TOL: f64 = 1e-8;

/// `None` marks an infinite norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormReport<T> {
    pub h2: Option<T>,
    pub hinf: Option<T>,
    pub hinf_bracket: Option<(T, T)>,
    pub stable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HinfResult<T> {
    /// Upper end of the final bracket.
    pub value: T,
    pub lower: T,
    pub upper: T,
}

pub fn is_hurwitz<T: Real>(a: &DMatrix<T>) -> Result<bool> {
    if a.nrows() == 0 {
        return Ok(true);
    }
    Ok(eigenvalues(a)?.iter().all(|l| l.re < T::zero()))
}

fn check_shapes<T: Real>(ss: &StateSpace<T>) -> Result<()> {
    let n = ss.a.nrows();
    if ss.a.ncols() != n || ss.b.nrows() != n || ss.c.ncols() != n || ss.d.shape() != (ss.c.nrows(), ss.b.ncols()) {
        return Err(Error::InvalidSim("inconsistent state-space dimensions".into()));
    }
    Ok(())
}

/// Controllability Gramian from `A P + P Aᵀ + B Bᵀ = 0`, solved in
/// vectorized form `(I ⊗ A + A ⊗ I) vec P = -vec(B Bᵀ)`.
pub fn controllability_gramian<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = a.nrows();
    let mut k = DMatrix::<T>::zeros(n * n, n * n);
    for i in 0..n {
        for j in 0..n {
            for r in 0..n {
                // (I ⊗ A): block (i, i) holds A.
                k[(i * n + r, i * n + j)] += a[(r, j)];
                // (A ⊗ I): block (i, j) holds a_ij I.
                k[(i * n + r, j * n + r)] += a[(i, j)];
            }
        }
    }
    let q = b * b.transpose();
    let rhs = DMatrix::from_iterator(n * n, 1, q.iter().map(|&x| -x));
    let sol = k.lu().solve(&rhs).ok_or(Error::Singular("Lyapunov operator"))?;
    let p = DMatrix::from_iterator(n, n, sol.iter().copied());
    Ok((&p + p.transpose()) * T::lit(0.5))
}

pub fn h2_norm<T: Real>(ss: &StateSpace<T>) -> Result<T> {
    check_shapes(ss)?;
    if ss.d.iter().any(|&x| x != T::zero()) {
        return Err(Error::NonzeroFeedthrough);
    }
    if !is_hurwitz(&ss.a)? {
        return Err(Error::Unstable);
    }
    let p = controllability_gramian(&ss.a, &ss.b)?;
    let tr = (&ss.c * p * ss.c.transpose()).trace();
    Ok(tr.max(T::zero()).sqrt())
}

fn sigma_max_c<T: Real>(m: &DMatrix<Complex<T>>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(T::zero(), |s, &x| s.max(x))
}

fn sigma_max_r<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(T::zero(), |s, &x| s.max(x))
}

/// `σ_max(C (jωI - A)⁻¹ B + D)`.
pub fn gain_at<T: Real>(ss: &StateSpace<T>, w: T) -> Result<T> {
    let n = ss.order();
    if n == 0 {
        return Ok(sigma_max_r(&ss.d));
    }
    let z = |x: T| Complex::new(x, T::zero());
    let mut m = ss.a.map(|x| z(-x));
    for i in 0..n {
        m[(i, i)] += Complex::new(T::zero(), w);
    }
    let b = ss.b.map(z);
    let x = m.lu().solve(&b).ok_or(Error::Singular("resolvent"))?;
    let g = ss.c.map(z) * x + ss.d.map(z);
    Ok(sigma_max_c(&g))
}

/// Whether `γ` exceeds the H∞ norm: the Hamiltonian has no eigenvalue on the
/// imaginary axis.
fn is_upper_bound<T: Real>(ss: &StateSpace<T>, gamma: T) -> Result<bool> {
    let n = ss.order();
    let mi = ss.b.ncols();
    let dt = ss.d.transpose();
    let r = DMatrix::<T>::identity(mi, mi) * (gamma * gamma) - &dt * &ss.d;
    let rinv = r.try_inverse().ok_or(Error::Singular("gamma^2 I - D'D"))?;
    let a11 = &ss.a + &ss.b * &rinv * &dt * &ss.c;
    let a12 = &ss.b * &rinv * ss.b.transpose();
    let po = ss.c.nrows();
    let a21 = -(ss.c.transpose() * (DMatrix::<T>::identity(po, po) + &ss.d * &rinv * &dt) * &ss.c);
    let a22 = -a11.transpose();
    let mut h = DMatrix::<T>::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&a11);
    h.view_mut((0, n), (n, n)).copy_from(&a12);
    h.view_mut((n, 0), (n, n)).copy_from(&a21);
    h.view_mut((n, n), (n, n)).copy_from(&a22);
    let tol = T::lit(IMAG_AXIS_TOL).max(T::lit(100.0) * T::eps() * crate::fro(&h));
    Ok(!eigenvalues(&h)?.iter().any(|l| l.re.abs() < tol))
}

/// H∞ norm by γ-bisection on the Hamiltonian imaginary-axis test, stopped
/// when the bracket width is at most `tol·γ_upper`.
pub fn hinf_norm<T: Real>(ss: &StateSpace<T>, tol: T) -> Result<HinfResult<T>> {
    check_shapes(ss)?;
    if !(tol > T::zero()) {
        return Err(Error::InvalidSim("tolerance must be > 0".into()));
    }
    let sd = sigma_max_r(&ss.d);
    if ss.order() == 0 || ss.b.ncols() == 0 || ss.c.nrows() == 0 {
        return Ok(HinfResult {
            value: sd,
            lower: sd,
            upper: sd,
        });
    }
    if !is_hurwitz(&ss.a)? {
        return Err(Error::Unstable);
    }
    let mut lo = sd.max(gain_at(ss, T::zero())?);
    // Probe the modal frequencies for a tighter lower bound.
    for l in eigenvalues(&ss.a)? {
        if l.im > T::zero() {
            lo = lo.max(gain_at(ss, l.im)?);
        }
    }
    if lo == T::zero() {
        if ss.b.iter().all(|&x| x == T::zero()) || ss.c.iter().all(|&x| x == T::zero()) {
            return Ok(HinfResult {
                value: T::zero(),
                lower: T::zero(),
                upper: T::zero(),
            });
        }
        lo = T::lit(1e-12);
    }
    // Strictly above σ_max(D) so that γ²I - DᵀD stays invertible.
    lo = lo.max(sd * (T::one() + T::lit(1e-12)));
    let mut hi = lo * T::lit(2.0);
    let mut doublings = 0;
    while !is_upper_bound(ss, hi)? {
        lo = hi;
        hi *= T::lit(2.0);
        doublings += 1;
        if doublings > 200 {
            return Err(Error::InvalidSim("H-infinity upper bound search failed".into()));
        }
    }
    while hi - lo > tol * hi {
        let mid = (lo + hi) * T::lit(0.5);
        if is_upper_bound(ss, mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(HinfResult {
        value: hi,
        lower: lo,
        upper: hi,
    })
}

/// Both norms; an unstable model reports infinite norms instead of failing.
pub fn norm_report<T: Real>(ss: &StateSpace<T>, tol: T) -> Result<NormReport<T>> {
    check_shapes(ss)?;
    if !is_hurwitz(&ss.a)? {
        return Ok(NormReport {
            h2: None,
            hinf: None,
            hinf_bracket: None,
            stable: false,
        });
    }
    let h2 = match h2_norm(ss) {
        Ok(v) => Some(v),
        Err(Error::NonzeroFeedthrough) => None,
        Err(e) => return Err(e),
    };
    let hi = hinf_norm(ss, tol)?;
    Ok(NormReport {
        h2,
        hinf: Some(hi.value),
        hinf_bracket: Some((hi.lower, hi.upper)),
        stable: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lag() -> StateSpace<f64> {
        StateSpace::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
    }

    #[test]
    fn first_order_lag_h2() {
        assert!((h2_norm(&lag()).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn first_order_lag_hinf() {
        let r = hinf_norm(&lag(), 1e-9).unwrap();
        assert!((r.value - 1.0).abs() < 1e-8);
        assert!(r.upper - r.lower <= 1e-9 * r.upper);
    }

    #[test]
    fn zero_input_gives_zero_norms() {
        let mut ss = lag();
        ss.b[(0, 0)] = 0.0;
        assert_eq!(h2_norm(&ss).unwrap(), 0.0);
        assert_eq!(hinf_norm(&ss, 1e-6).unwrap().value, 0.0);
    }

    #[test]
    fn static_gain_hinf_is_sigma_max_d() {
        let ss = StateSpace {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, 2),
            c: DMatrix::zeros(2, 0),
            d: DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -4.0]),
        };
        assert_eq!(hinf_norm(&ss, 1e-6).unwrap().value, 4.0);
    }

    #[test]
    fn feedthrough_rejected_for_h2() {
        let mut ss = lag();
        ss.d[(0, 0)] = 0.5;
        assert_eq!(h2_norm(&ss), Err(Error::NonzeroFeedthrough));
        let r = hinf_norm(&ss, 1e-9).unwrap();
        assert!((r.value - 1.5).abs() < 1e-8);
    }

    #[test]
    fn unstable_reports_infinite() {
        let mut ss = lag();
        ss.a[(0, 0)] = 0.5;
        assert_eq!(h2_norm(&ss), Err(Error::Unstable));
        let rep = norm_report(&ss, 1e-6).unwrap();
        assert!(!rep.stable && rep.h2.is_none() && rep.hinf.is_none());
    }

    #[test]
    fn lightly_damped_resonance_peak() {
        // 1/(s² + 2ζs + 1) peaks at 1/(2ζ√(1-ζ²)).
        let z: f64 = 0.05;
        let ss = StateSpace::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -2.0 * z]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        );
        let want = 1.0 / (2.0 * z * (1.0 - z * z).sqrt());
        let got = hinf_norm(&ss, 1e-9).unwrap().value;
        assert!((got - want).abs() < 1e-6 * want, "{got} vs {want}");
        // ∫ y² for this system is 1/(4ζ).
        let h2 = h2_norm(&ss).unwrap();
        assert!((h2 - (1.0 / (4.0 * z)).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn f32_lag() {
        let ss = StateSpace::<f32>::new(
            DMatrix::from_element(1, 1, -2.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        );
        assert!((h2_norm(&ss).unwrap() - 0.5).abs() < 1e-5);
        assert!((hinf_norm(&ss, 1e-4).unwrap().value - 0.5).abs() < 1e-3);
    }
}
