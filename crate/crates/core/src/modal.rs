//! Eigenpairs, damping ratios and their first-order sensitivities to the
//! converter gains.

use nalgebra::DMatrix;

use crate::eigen::eig;
use crate::grid::LinearModel;
use crate::{fro, Complex, Error, Real, Result};

/// Default magnitude below which an eigenvalue is treated as a numerical zero.
pub const FILTER_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GainKind {
    M,
    D,
}

#[derive(Debug, Clone)]
pub struct ModeSet<T: Real> {
    pub lambdas: Vec<Complex<T>>,
    /// Right eigenvectors `u_i` as columns.
    pub right_vecs: DMatrix<Complex<T>>,
    /// Left eigenvectors `v_i` as columns with `v_iᵀ u_k = δ_ik`.
    pub left_vecs: DMatrix<Complex<T>>,
    pub zetas: Vec<T>,
    /// Column order of the sensitivity matrices.
    pub gains: Vec<(usize, GainKind)>,
    /// `∂σ_i/∂α` with modes as rows and `gains` as columns.
    pub dsigma: DMatrix<T>,
    pub domega: DMatrix<T>,
    pub dzeta: DMatrix<T>,
}

/// Damping ratio `-σ/|λ|`.
pub fn damping_ratio<T: Real>(l: Complex<T>) -> T {
    let mag = crate::cabs(l);
    if mag == T::zero() {
        T::zero()
    } else {
        -l.re / mag
    }
}

/// Gains differentiated by [`decompose`]: inertia of every controllable unit,
/// then damping of every controllable unit.
pub fn gain_layout(controllable: &[usize]) -> Vec<(usize, GainKind)> {
    controllable
        .iter()
        .map(|&j| (j, GainKind::M))
        .chain(controllable.iter().map(|&j| (j, GainKind::D)))
        .collect()
}

pub fn decompose<T: Real>(model: &LinearModel<T>) -> Result<ModeSet<T>> {
    let mut modes = spectrum(&model.a)?;
    modes.gains = gain_layout(&model.controllable);
    let ng = modes.gains.len();
    let n = modes.lambdas.len();
    modes.dsigma = DMatrix::zeros(n, ng);
    modes.domega = DMatrix::zeros(n, ng);
    modes.dzeta = DMatrix::zeros(n, ng);
    let partner = conjugate_partners(&modes.lambdas);
    for i in 0..n {
        if modes.lambdas[i].im < T::zero() {
            continue;
        }
        for (g, &(j, kind)) in modes.gains.iter().enumerate() {
            let da = match kind {
                GainKind::M => &model.da_dm[j],
                GainKind::D => &model.da_dd[j],
            };
            let dl = eig_sensitivity(&modes, da, i)?;
            modes.dsigma[(i, g)] = dl.re;
            modes.domega[(i, g)] = dl.im;
            modes.dzeta[(i, g)] = if crate::cabs(modes.lambdas[i]) > T::zero() {
                zeta_sensitivity(&modes, i, dl.re, dl.im)?
            } else {
                T::zero()
            };
        }
    }
    for (i, p) in partner.iter().enumerate() {
        if let Some(&k) = p.as_ref() {
            for g in 0..ng {
                modes.dsigma[(i, g)] = modes.dsigma[(k, g)];
                modes.domega[(i, g)] = -modes.domega[(k, g)];
                modes.dzeta[(i, g)] = modes.dzeta[(k, g)];
            }
        }
    }
    Ok(modes)
}

/// Eigenpairs and damping ratios of `a` without sensitivities.
pub fn spectrum<T: Real>(a: &DMatrix<T>) -> Result<ModeSet<T>> {
    let e = eig(a)?;
    let n = e.values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        let (a, b) = (e.values[x], e.values[y]);
        b.re.partial_cmp(&a.re).unwrap().then(b.im.partial_cmp(&a.im).unwrap())
    });
    let lambdas: Vec<Complex<T>> = order.iter().map(|&i| e.values[i]).collect();
    let right = DMatrix::from_fn(n, n, |r, c| e.vectors[(r, order[c])]);

    let scale = fro(a).max(T::lit(1e-30));
    let tol = T::lit(1e-8) * scale;
    for i in 0..n {
        for k in i + 1..n {
            if crate::cabs(lambdas[i] - lambdas[k]) < tol {
                return Err(Error::Defective(fmt_c(lambdas[i]), fmt_c(lambdas[k])));
            }
        }
    }
    let inv = right
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Defective("spectrum".into(), "eigenvector basis".into()))?;
    let mut left = inv.transpose();
    let partner = conjugate_partners(&lambdas);
    for i in 0..n {
        if let Some(k) = partner[i] {
            for r in 0..n {
                left[(r, i)] = left[(r, k)].conj();
            }
        }
    }
    let zetas = lambdas.iter().map(|&l| damping_ratio(l)).collect();
    Ok(ModeSet {
        lambdas,
        right_vecs: right,
        left_vecs: left,
        zetas,
        gains: vec![],
        dsigma: DMatrix::zeros(n, 0),
        domega: DMatrix::zeros(n, 0),
        dzeta: DMatrix::zeros(n, 0),
    })
}

fn fmt_c<T: Real>(l: Complex<T>) -> String {
    format!("{:.6e}{:+.6e}j", l.re.f64(), l.im.f64())
}

/// For each mode with negative imaginary part, the index of its conjugate.
fn conjugate_partners<T: Real>(l: &[Complex<T>]) -> Vec<Option<usize>> {
    (0..l.len())
        .map(|i| {
            if l[i].im >= T::zero() {
                return None;
            }
            (0..l.len()).filter(|&k| l[k].im > T::zero()).min_by(|&a, &b| {
                let da = crate::cabs(l[a] - l[i].conj());
                let db = crate::cabs(l[b] - l[i].conj());
                da.partial_cmp(&db).unwrap()
            })
        })
        .collect()
}

/// `v_iᵀ dA u_i`.
pub fn eig_sensitivity<T: Real>(modes: &ModeSet<T>, da: &DMatrix<T>, i: usize) -> Result<Complex<T>> {
    let n = modes.lambdas.len();
    if i >= n {
        return Err(Error::ModeIndex(i));
    }
    let mut acc = Complex::new(T::zero(), T::zero());
    for r in 0..n {
        let vr = modes.left_vecs[(r, i)];
        if vr == Complex::new(T::zero(), T::zero()) {
            continue;
        }
        let mut row = Complex::new(T::zero(), T::zero());
        for c in 0..n {
            let x = da[(r, c)];
            if x != T::zero() {
                row += modes.right_vecs[(c, i)] * x;
            }
        }
        acc += vr * row;
    }
    Ok(acc)
}

/// `ω(σ ∂ω - ω ∂σ)/|λ|³`.
pub fn zeta_sensitivity<T: Real>(modes: &ModeSet<T>, i: usize, dsigma: T, domega: T) -> Result<T> {
    let l = *modes.lambdas.get(i).ok_or(Error::ModeIndex(i))?;
    let (s, w) = (l.re, l.im);
    let r2 = s * s + w * w;
    if r2 == T::zero() {
        return Err(Error::ZeroEigenvalue);
    }
    Ok(w * (s * domega - w * dsigma) / (r2 * r2.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstModes<T> {
    pub sigma_max: T,
    pub zeta_min: T,
    pub sigma_idx: usize,
    pub zeta_idx: usize,
    /// Modes kept by the filter, one per conjugate pair.
    pub kept: Vec<usize>,
}

impl<T: Real> ModeSet<T> {
    /// Modes with `|λ| > filter_tol` and `Im λ ≥ 0`: one entry per conjugate pair.
    pub fn distinct(&self, filter_tol: T) -> Vec<usize> {
        (0..self.lambdas.len())
            .filter(|&i| crate::cabs(self.lambdas[i]) > filter_tol && self.lambdas[i].im >= T::zero())
            .collect()
    }

    pub fn gain_column(&self, unit: usize, kind: GainKind) -> Option<usize> {
        self.gains.iter().position(|&g| g == (unit, kind))
    }
}

pub fn worst_modes<T: Real>(modes: &ModeSet<T>, filter_tol: T) -> Result<WorstModes<T>> {
    let kept = modes.distinct(filter_tol);
    let first = *kept.first().ok_or(Error::AllModesFiltered)?;
    let (mut si, mut zi) = (first, first);
    for &i in &kept {
        if modes.lambdas[i].re > modes.lambdas[si].re {
            si = i;
        }
        if modes.zetas[i] < modes.zetas[zi] {
            zi = i;
        }
    }
    Ok(WorstModes {
        sigma_max: modes.lambdas[si].re,
        zeta_min: modes.zetas[zi],
        sigma_idx: si,
        zeta_idx: zi,
        kept,
    })
}

/// Pairs each `prev` mode in `prev_idx` with a mode in `next_idx` by greedy
/// maximal normalized correlation `|v_oldᵀ u_new|`.
pub fn match_modes<T: Real>(
    prev: &ModeSet<T>,
    prev_idx: &[usize],
    next: &ModeSet<T>,
    next_idx: &[usize],
) -> Vec<Option<usize>> {
    let n = prev.lambdas.len();
    let mut corr = DMatrix::<T>::zeros(prev_idx.len(), next_idx.len());
    for (a, &i) in prev_idx.iter().enumerate() {
        let vi = prev.left_vecs.column(i);
        let vn = vi.iter().fold(T::zero(), |s, x| s + x.norm_sqr()).sqrt();
        for (b, &k) in next_idx.iter().enumerate() {
            let uk = next.right_vecs.column(k);
            let mut dot = Complex::new(T::zero(), T::zero());
            for r in 0..n {
                dot += vi[r] * uk[r];
            }
            let un = uk.iter().fold(T::zero(), |s, x| s + x.norm_sqr()).sqrt();
            corr[(a, b)] = crate::cabs(dot) / (vn * un);
        }
    }
    let mut out = vec![None; prev_idx.len()];
    let mut used_a = vec![false; prev_idx.len()];
    let mut used_b = vec![false; next_idx.len()];
    for _ in 0..prev_idx.len().min(next_idx.len()) {
        let mut best: Option<(usize, usize)> = None;
        for a in 0..prev_idx.len() {
            if used_a[a] {
                continue;
            }
            for b in 0..next_idx.len() {
                if used_b[b] {
                    continue;
                }
                if best.is_none_or(|(x, y)| corr[(a, b)] > corr[(x, y)]) {
                    best = Some((a, b));
                }
            }
        }
        let (a, b) = best.unwrap();
        used_a[a] = true;
        used_b[b] = true;
        out[a] = Some(next_idx[b]);
    }
    out
}
