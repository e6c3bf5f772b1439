//! Mode-wise linear stability of homogeneous equilibria.
//!
//! A perturbation `C e^{λt} cos(nπx/L)` of a homogeneous state obeys
//! `λ C = A C` with `A = J(u0) − diag(D_B, D_W, 0)·(nπ/L)²`. Stability is
//! decided per mode by the Routh–Hurwitz conditions on the characteristic
//! cubic and cross-checked against the eigenvalues. A real eigenvalue
//! crosses zero where `det A = 0`, which along the upper vegetated branch
//! defines the Turing locus `F(p, n, L) = 0`.

use crate::error::{Error, Result};
use crate::model::{
    equilibrium, fold_point, reaction_jacobian, reaction_residual, BranchTag, HomogeneousState,
    Mat3, ModelParams,
};
use crate::scalar::Real;
use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;

/// Upper end of the precipitation window searched for Turing roots.
pub const TURING_P_MAX: f64 = 2.0;
/// Uniform samples used to bracket sign changes of `F`.
pub const TURING_SAMPLES: usize = 2001;
/// Default highest mode checked by [`homogeneous_stability`].
pub const DEFAULT_N_MAX: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeMatrix<S> {
    pub n: u32,
    /// Squared wavenumber `(nπ/L)²`.
    pub k2: S,
    pub a: Mat3<S>,
}

/// Coefficients of `λ³ + c2 λ² + c1 λ + c0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharCoeffs<S> {
    pub c2: S,
    pub c1: S,
    pub c0: S,
}

impl<S: Real> CharCoeffs<S> {
    /// `c2 = −tr A`, `c1 = ½(tr²A − tr A²)`, `c0 = −det A`.
    pub fn from_matrix(a: &Mat3<S>) -> Self {
        let tr = a[0][0] + a[1][1] + a[2][2];
        let mut tr_sq = S::zero();
        for i in 0..3 {
            for k in 0..3 {
                tr_sq = tr_sq + a[i][k] * a[k][i];
            }
        }
        Self {
            c2: -tr,
            c1: (tr * tr - tr_sq) / S::lit(2.0),
            c0: -det3(a),
        }
    }

    pub fn eval(&self, x: Complex<S>) -> Complex<S> {
        ((x + self.c2) * x + self.c1) * x + self.c0
    }

    fn eval_deriv(&self, x: Complex<S>) -> Complex<S> {
        (x * S::lit(3.0) + self.c2 * S::lit(2.0)) * x + self.c1
    }
}

pub fn det3<S: Real>(a: &Mat3<S>) -> S {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Strict Routh–Hurwitz test for a monic cubic: `c2 > 0`, `c0 > 0`,
/// `c2·c1 > c0`.
pub fn routh_hurwitz<S: Real>(cc: &CharCoeffs<S>) -> bool {
    cc.c2 > S::zero() && cc.c0 > S::zero() && cc.c2 * cc.c1 > cc.c0
}

fn squared_wavenumber<S: Real>(n: u32, length: S) -> S {
    let k = S::lit(n as f64) * S::PI() / length;
    k * k
}

fn equilibrium_tolerance<S: Real>() -> S {
    S::lit(1e-8).max(S::epsilon() * S::lit(1e3))
}

/// Mode matrix of `u0` for mode `n` on the domain length in `params`.
pub fn mode_matrix<S: Real>(
    u0: &HomogeneousState<S>,
    p: S,
    n: u32,
    params: &ModelParams<S>,
) -> Result<ModeMatrix<S>> {
    mode_matrix_for_length(u0, p, n, params.length, params)
}

pub fn mode_matrix_for_length<S: Real>(
    u0: &HomogeneousState<S>,
    p: S,
    n: u32,
    length: S,
    params: &ModelParams<S>,
) -> Result<ModeMatrix<S>> {
    let residual = reaction_residual(u0.triple(), p, params);
    if !(residual <= equilibrium_tolerance()) {
        return Err(Error::NotEquilibrium {
            residual: residual.to_f64().unwrap_or(f64::NAN),
        });
    }
    let k2 = squared_wavenumber(n, length);
    let a = if u0.is_vegetated() {
        simplified_vegetated_matrix(u0, p, k2, params)
    } else {
        let removal = params.toxin_removal(p);
        [
            [-params.d - params.diff_b * k2, S::zero(), S::zero()],
            [S::zero(), -params.l - params.diff_w * k2, S::zero()],
            [params.q * params.d, S::zero(), -removal],
        ]
    };
    Ok(ModeMatrix { n, k2, a })
}

/// Mode matrix after eliminating `d + sT0 = cB0W0` and `rB0² + l = p/W0`.
fn simplified_vegetated_matrix<S: Real>(
    u0: &HomogeneousState<S>,
    p: S,
    k2: S,
    params: &ModelParams<S>,
) -> Mat3<S> {
    let (b, w) = (u0.b, u0.w);
    let cbw = params.c * b * w;
    [
        [cbw - params.diff_b * k2, params.c * b * b, -params.s * b],
        [-S::lit(2.0) * params.r * b * w, -p / w - params.diff_w * k2, S::zero()],
        [
            params.q * cbw,
            S::zero(),
            params.q * params.s * b - params.toxin_removal(p),
        ],
    ]
}

/// Mode matrix assembled from the unsimplified Jacobian.
pub fn mode_matrix_from_jacobian<S: Real>(
    u0: &HomogeneousState<S>,
    p: S,
    k2: S,
    params: &ModelParams<S>,
) -> Mat3<S> {
    let mut a = reaction_jacobian(u0.triple(), p, params);
    a[0][0] = a[0][0] - params.diff_b * k2;
    a[1][1] = a[1][1] - params.diff_w * k2;
    a
}

fn polish_root<S: Real>(cc: &CharCoeffs<S>, mut z: Complex<S>) -> Complex<S> {
    let mut best = cc.eval(z).norm();
    for _ in 0..4 {
        let d = cc.eval_deriv(z);
        if d.norm() == S::zero() {
            break;
        }
        let next = z - cc.eval(z) / d;
        let r = cc.eval(next).norm();
        if !(r < best) {
            break;
        }
        best = r;
        z = next;
    }
    z
}

fn quadratic_roots<S: Real>(b1: S, b0: S) -> [Complex<S>; 2] {
    let disc = b1 * b1 - S::lit(4.0) * b0;
    let two = S::lit(2.0);
    if disc >= S::zero() {
        let q = -(b1 + disc.sqrt().copysign(b1)) / two;
        if q == S::zero() {
            return [Complex::new(S::zero(), S::zero()); 2];
        }
        [Complex::new(q, S::zero()), Complex::new(b0 / q, S::zero())]
    } else {
        let re = -b1 / two;
        let im = (-disc).sqrt() / two;
        [Complex::new(re, im), Complex::new(re, -im)]
    }
}

/// Real root by bisection inside the Cauchy bound, then deflation. Used when
/// the closed form is ill-conditioned (nearly repeated roots).
fn cubic_roots_deflated<S: Real>(cc: &CharCoeffs<S>) -> [Complex<S>; 3] {
    let bound = S::one() + cc.c2.abs().max(cc.c1.abs()).max(cc.c0.abs());
    let f = |x: S| ((x + cc.c2) * x + cc.c1) * x + cc.c0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..300 {
        let mid = (lo + hi) / S::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > S::zero() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let r = (lo + hi) / S::lit(2.0);
    let b1 = cc.c2 + r;
    let b0 = cc.c1 + r * b1;
    let [q1, q2] = quadratic_roots(b1, b0);
    [Complex::new(r, S::zero()), q1, q2]
}

/// Roots of the characteristic cubic, sorted by decreasing real part.
///
/// Cardano / trigonometric closed form with a Newton polish; nearly repeated
/// roots fall back to bisection plus deflation.
pub fn cubic_roots<S: Real>(cc: &CharCoeffs<S>) -> [Complex<S>; 3] {
    let three = S::lit(3.0);
    let two = S::lit(2.0);
    let shift = cc.c2 / three;
    let pp = cc.c1 - cc.c2 * cc.c2 / three;
    let qq = two * cc.c2 * cc.c2 * cc.c2 / S::lit(27.0) - cc.c2 * cc.c1 / three + cc.c0;
    let half_q = qq / two;
    let third_p = pp / three;
    let disc = half_q * half_q + third_p * third_p * third_p;
    let scale = half_q * half_q + (third_p * third_p * third_p).abs();
    let near_repeated = disc.abs() <= S::lit(1e-10) * scale;

    let mut roots = if near_repeated || !disc.is_finite() {
        cubic_roots_deflated(cc)
    } else if disc > S::zero() {
        let a = -(half_q.abs() + disc.sqrt()).cbrt().copysign(half_q);
        let b = if a == S::zero() { S::zero() } else { -third_p / a };
        let re = -(a + b) / two - shift;
        let im = (a - b) * three.sqrt() / two;
        [
            Complex::new(a + b - shift, S::zero()),
            Complex::new(re, im),
            Complex::new(re, -im),
        ]
    } else {
        let r = two * (-third_p).sqrt();
        let arg = (qq / (two * third_p * (-third_p).sqrt())).max(-S::one()).min(S::one());
        let theta = arg.acos() / three;
        let tau = S::TAU() / three;
        [0.0, 1.0, 2.0].map(|k| Complex::new(r * (theta - tau * S::lit(k)).cos() - shift, S::zero()))
    };
    for z in roots.iter_mut() {
        let im = z.im;
        *z = polish_root(cc, *z);
        if im == S::zero() {
            z.im = S::zero();
        }
    }
    roots.sort_by(|x, y| y.re.partial_cmp(&x.re).unwrap_or(std::cmp::Ordering::Equal));
    roots
}

pub fn eigenvalues3<S: Real>(a: &Mat3<S>) -> [Complex<S>; 3] {
    cubic_roots(&CharCoeffs::from_matrix(a))
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeReport<S> {
    pub n: u32,
    pub coeffs: CharCoeffs<S>,
    pub routh_hurwitz_pass: bool,
    pub leading_real_part: S,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport<S> {
    pub modes: Vec<ModeReport<S>>,
    pub stable: bool,
    pub first_violating_mode: Option<u32>,
}

/// Routh–Hurwitz verdict for every mode `0..=n_max`, checked against the
/// eigenvalues of each mode matrix.
pub fn homogeneous_stability<S: Real>(
    u0: &HomogeneousState<S>,
    p: S,
    params: &ModelParams<S>,
    n_max: u32,
) -> Result<StabilityReport<S>> {
    if n_max < 1 {
        return Err(Error::invalid("n_max must be at least 1"));
    }
    let mut modes = Vec::with_capacity(n_max as usize + 1);
    for n in 0..=n_max {
        let m = mode_matrix(u0, p, n, params)?;
        let coeffs = CharCoeffs::from_matrix(&m.a);
        let pass = routh_hurwitz(&coeffs);
        let lead = eigenvalues3(&m.a)[0].re;
        let tol = S::lit(1e-9).max(S::epsilon() * S::lit(1e3) * (S::one() + coeffs.c2.abs()));
        if (pass && lead > tol) || (!pass && lead < -tol) {
            return Err(Error::InternalConsistency(format!(
                "mode {n}: Routh-Hurwitz says {} but leading eigenvalue real part is {lead}",
                if pass { "stable" } else { "unstable" }
            )));
        }
        modes.push(ModeReport {
            n,
            coeffs,
            routh_hurwitz_pass: pass,
            leading_real_part: lead,
        });
    }
    let first_violating_mode = modes.iter().find(|m| !m.routh_hurwitz_pass).map(|m| m.n);
    Ok(StabilityReport {
        stable: first_violating_mode.is_none(),
        modes,
        first_violating_mode,
    })
}

/// `F(p, n, L) = det A` along the upper vegetated branch, written out in
/// closed form. `None` where the upper branch does not exist.
pub fn turing_objective<S: Real>(p: S, n: u32, length: S, params: &ModelParams<S>) -> Option<S> {
    let u0 = equilibrium(p, BranchTag::Upper, params).ok()??;
    let k2 = squared_wavenumber(n, length);
    Some(turing_objective_at(&u0, p, k2, params))
}

pub(crate) fn turing_objective_at<S: Real>(
    u0: &HomogeneousState<S>,
    p: S,
    k2: S,
    params: &ModelParams<S>,
) -> S {
    let (b, w) = (u0.b, u0.w);
    let water = -p / w - params.diff_w * k2;
    let tox = params.q * params.s * b - params.toxin_removal(p);
    (params.c * b * w - params.diff_b * k2) * water * tox
        - S::lit(2.0) * params.r * params.c * b * b * b * w * (-tox)
        + params.s * b * water * params.q * params.c * w * b
}

fn refine_root<S: Real>(f: &impl Fn(S) -> S, mut lo: S, mut hi: S, width: S, ftol: S) -> S {
    let mut flo = f(lo);
    let two = S::lit(2.0);
    for _ in 0..200 {
        if hi - lo < width {
            break;
        }
        let mid = (lo + hi) / two;
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == S::zero() {
            return mid;
        }
        if (fm > S::zero()) == (flo > S::zero()) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    // Secant polish inside the final bracket.
    let fhi = f(hi);
    let mut x = if fhi != flo { lo - flo * (hi - lo) / (fhi - flo) } else { (lo + hi) / two };
    x = x.max(lo).min(hi);
    let mid = (lo + hi) / two;
    if f(x).abs() > f(mid).abs() || f(x).abs() > ftol && f(mid).abs() <= ftol {
        x = mid;
    }
    x
}

/// All roots of `F(·, n, L)` in `(p_c0, p_max]`, ascending.
pub fn turing_roots<S: Real>(n: u32, length: S, params: &ModelParams<S>, p_max: S) -> Vec<S> {
    let Some((pc0, _)) = fold_point(params) else {
        return Vec::new();
    };
    let start = pc0 + S::lit(1e-6);
    if start >= p_max {
        return Vec::new();
    }
    let k2 = squared_wavenumber(n, length);
    let f = |p: S| -> S {
        match equilibrium(p, BranchTag::Upper, params) {
            Ok(Some(u0)) => turing_objective_at(&u0, p, k2, params),
            _ => S::nan(),
        }
    };
    let step = (p_max - start) / S::lit((TURING_SAMPLES - 1) as f64);
    let samples: Vec<(S, S)> = (0..TURING_SAMPLES)
        .map(|i| {
            let p = if i + 1 == TURING_SAMPLES { p_max } else { start + step * S::lit(i as f64) };
            (p, f(p))
        })
        .collect();
    let mut roots = Vec::new();
    for pair in samples.windows(2) {
        let ((pa, fa), (pb, fb)) = (pair[0], pair[1]);
        if fa.is_nan() || fb.is_nan() {
            continue;
        }
        if fa == S::zero() {
            roots.push(pa);
        } else if (fa > S::zero()) != (fb > S::zero()) && fb != S::zero() {
            roots.push(refine_root(&f, pa, pb, S::lit(1e-8), S::lit(1e-10)));
        }
    }
    if let Some(&(pl, fl)) = samples.last() {
        if fl == S::zero() {
            roots.push(pl);
        }
    }
    roots
}

/// Onset precipitation of mode `n`: the largest root of `F(p, n, L) = 0`
/// above the homogeneous fold, or `None` if mode `n` never destabilises.
pub fn turing_locus<S: Real>(n: u32, length: S, params: &ModelParams<S>) -> Option<S> {
    turing_roots(n, length, params, S::lit(TURING_P_MAX)).last().copied()
}

#[derive(Debug, Clone, Serialize)]
pub struct TuringScanRow<S> {
    pub length: S,
    pub n: u32,
    pub roots: Vec<S>,
}

impl<S: Real> TuringScanRow<S> {
    pub fn onset(&self) -> Option<S> {
        self.roots.last().copied()
    }
}

/// Turing roots for modes `0..=n_max` at one domain length.
pub fn turing_scan<S: Real>(length: S, n_max: u32, params: &ModelParams<S>) -> Vec<TuringScanRow<S>> {
    (0..=n_max)
        .into_par_iter()
        .map(|n| TuringScanRow {
            length,
            n,
            roots: turing_roots(n, length, params, S::lit(TURING_P_MAX)),
        })
        .collect()
}

/// Domain length below which mode 1 no longer destabilises the upper branch
/// anywhere above the fold: the smallest root of `F(p_c0, 1, L)` in
/// `[0.1, 20]`.
pub fn critical_domain_size<S: Real>(params: &ModelParams<S>) -> Result<S> {
    let (pc0, _) = fold_point(params).ok_or_else(|| Error::NoSolution("no homogeneous fold".into()))?;
    let u0 = equilibrium(pc0, BranchTag::Upper, params)?
        .ok_or_else(|| Error::NoSolution("no vegetated state at the fold".into()))?;
    let g = |len: S| turing_objective_at(&u0, pc0, squared_wavenumber(1, len), params);
    let (lo, hi) = (S::lit(0.1), S::lit(20.0));
    let samples = 2000;
    let step = (hi - lo) / S::lit(samples as f64);
    let mut prev = (lo, g(lo));
    for i in 1..=samples {
        let x = lo + step * S::lit(i as f64);
        let gx = g(x);
        if gx == S::zero() {
            return Ok(x);
        }
        if (gx > S::zero()) != (prev.1 > S::zero()) {
            return Ok(refine_root(&g, prev.0, x, S::lit(1e-7), S::zero()));
        }
        prev = (x, gx);
    }
    Err(Error::NoSolution(
        "F(p_c0, 1, L) has no sign change for L in [0.1, 20]".into(),
    ))
}
