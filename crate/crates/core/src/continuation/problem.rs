//! The augmented steady-state problem `F(U, p) = 0` in scaled variables,
//! with the Newton corrector, the tangent and the spectral monitors.
//!
//! Unknowns are `y = (U ⊘ s, p)` where `s` repeats a per-component scale
//! over the nodes; `W` is two orders of magnitude larger than `B`, and
//! without scaling the arclength would be dominated by water.

use crate::banded::{dot, norm2, norm_inf, BandedLu, BandedMatrix, Bordered};
use crate::continuation::{BranchPoint, ContinuationOptions, Measures};
use crate::discretization::{jacobian, rhs_dp, rhs_into, FieldState, GridSpec, COMPONENTS};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::symmetry::first_moment;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

pub struct Problem<'a> {
    pub grid: GridSpec,
    pub params: &'a ModelParams<f64>,
    scale: Vec<f64>,
}

/// Outcome of the corrector.
#[derive(Debug, Clone)]
pub struct Corrected {
    pub y: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// `F_y` at one point: the scaled banded state Jacobian, its factorization
/// (if regular) and `∂F/∂p`.
pub struct Linearization {
    a: BandedMatrix<f64>,
    lu: Option<BandedLu<f64>>,
    fp: Vec<f64>,
}

impl Linearization {
    /// Solves `[F_y; cᵀ] z = rhs` and returns `z` with the sign of the
    /// bordered determinant. Block elimination on the band LU first; a dense
    /// solve is used if that is unavailable or inaccurate.
    pub fn solve(&self, c: &[f64], rhs: &[f64]) -> Result<(Vec<f64>, f64)> {
        let n = self.a.n();
        if let Some(lu) = &self.lu {
            if let Ok(sys) = Bordered::new(&self.a, lu, &self.fp, &c[..n], c[n]) {
                let (x, y) = sys.solve(&rhs[..n], rhs[n]);
                let mut z = x;
                z.push(y);
                // Conditioning grows like N², so a few 1e-9 is normal on fine
                // grids; block elimination breaking down near a singular
                // `F_U` shows up orders of magnitude higher.
                if z.iter().all(|v| v.is_finite()) && self.relative_residual(c, &z, rhs) < 1e-6 {
                    return Ok((z, sys.det_sign()));
                }
            }
        }
        self.solve_dense(c, rhs)
    }

    fn relative_residual(&self, c: &[f64], z: &[f64], rhs: &[f64]) -> f64 {
        let n = self.a.n();
        let az = self.a.matvec(&z[..n]);
        let mut r = 0.0f64;
        for i in 0..n {
            r = r.max((az[i] + self.fp[i] * z[n] - rhs[i]).abs());
        }
        r = r.max((dot(c, z) - rhs[n]).abs());
        let scale = norm_inf(rhs).max(norm_inf(z) * 1e-6).max(f64::MIN_POSITIVE);
        r / scale
    }

    fn solve_dense(&self, c: &[f64], rhs: &[f64]) -> Result<(Vec<f64>, f64)> {
        let n = self.a.n();
        let m = DMatrix::from_fn(n + 1, n + 1, |i, j| {
            if i == n {
                c[j]
            } else if j == n {
                self.fp[i]
            } else {
                self.a.get(i, j)
            }
        });
        let lu = m.lu();
        let det = lu.determinant();
        let z = lu
            .solve(&DVector::from_column_slice(rhs))
            .ok_or_else(|| Error::SingularPoint("augmented Jacobian is singular".into()))?;
        Ok((z.as_slice().to_vec(), det.signum()))
    }
}

impl<'a> Problem<'a> {
    pub fn new(grid: GridSpec, params: &'a ModelParams<f64>, variable_scale: [f64; 3]) -> Self {
        let scale = (0..grid.dim()).map(|i| variable_scale[i % COMPONENTS]).collect();
        Self { grid, params, scale }
    }

    /// Length of the augmented vector.
    pub fn dim(&self) -> usize {
        self.grid.dim() + 1
    }

    pub fn augment(&self, u: &[f64], p: f64) -> Vec<f64> {
        let mut y: Vec<f64> = u.iter().zip(&self.scale).map(|(v, s)| v / s).collect();
        y.push(p);
        y
    }

    pub fn unscale(&self, y: &[f64]) -> (Vec<f64>, f64) {
        let n = self.grid.dim();
        (y[..n].iter().zip(&self.scale).map(|(v, s)| v * s).collect(), y[n])
    }

    /// Scales a state-space direction into augmented coordinates (no `p`
    /// component).
    pub fn scale_direction(&self, du: &[f64]) -> Vec<f64> {
        let mut v: Vec<f64> = du.iter().zip(&self.scale).map(|(v, s)| v / s).collect();
        v.push(0.0);
        v
    }

    pub fn residual(&self, y: &[f64]) -> Vec<f64> {
        let (u, p) = self.unscale(y);
        let mut f = vec![0.0; u.len()];
        rhs_into(&self.grid, &u, p, self.params, &mut f);
        f
    }

    pub fn linearize(&self, y: &[f64]) -> Linearization {
        let (u, p) = self.unscale(y);
        let mut a = jacobian(&self.grid, &u, p, self.params);
        for i in 0..a.n() {
            for j in a.row_range(i) {
                a.set(i, j, a.get(i, j) * self.scale[j]);
            }
        }
        let lu = a.factor().ok();
        Linearization {
            a,
            lu,
            fp: rhs_dp(&self.grid, &u, self.params),
        }
    }

    /// Newton on `F(y) = 0`, `(y − y_pred)·v = 0`.
    ///
    /// Converges when `‖F‖∞ < tol` and `‖δy‖₂ < step_tol`; with `relaxed`
    /// the step criterion is dropped, which is needed next to branch points
    /// where the augmented system itself becomes singular and Newton slows
    /// to a linear rate.
    pub fn corrector(
        &self,
        y_pred: &[f64],
        v: &[f64],
        opts: &ContinuationOptions,
        relaxed: bool,
    ) -> Result<Corrected> {
        let n = self.grid.dim();
        let mut y = y_pred.to_vec();
        let mut f = self.residual(&y);
        let mut res = norm_inf(&f);
        for it in 0..=opts.max_corrector_iter {
            let g = dot(&y.iter().zip(y_pred).map(|(a, b)| a - b).collect::<Vec<_>>(), v);
            if it == opts.max_corrector_iter {
                break;
            }
            let lin = self.linearize(&y);
            let mut rhs: Vec<f64> = f.iter().map(|x| -x).collect();
            rhs.push(-g);
            let (dy, _) = lin.solve(v, &rhs)?;
            for i in 0..=n {
                y[i] += dy[i];
            }
            f = self.residual(&y);
            res = norm_inf(&f);
            if !res.is_finite() {
                break;
            }
            let step = norm2(&dy);
            if res < opts.residual_tol && (relaxed || step < opts.step_tol) {
                return Ok(Corrected {
                    y,
                    iterations: it + 1,
                    residual: res,
                });
            }
        }
        Err(Error::CorrectorFailure {
            iterations: opts.max_corrector_iter,
            residual: res,
        })
    }

    /// Unit null vector of `F_y` oriented along `v_prev`.
    pub fn tangent(&self, y: &[f64], v_prev: &[f64]) -> Result<Vec<f64>> {
        self.tangent_with(&self.linearize(y), v_prev)
    }

    pub fn tangent_with(&self, lin: &Linearization, v_prev: &[f64]) -> Result<Vec<f64>> {
        let mut rhs = vec![0.0; self.dim()];
        rhs[self.grid.dim()] = 1.0;
        let (mut t, _) = lin.solve(v_prev, &rhs)?;
        let nrm = norm2(&t);
        if !(nrm.is_finite() && nrm > 0.0) {
            return Err(Error::SingularPoint("tangent is not defined".into()));
        }
        let sign = if dot(&t, v_prev) < 0.0 { -1.0 } else { 1.0 };
        for x in t.iter_mut() {
            *x *= sign / nrm;
        }
        Ok(t)
    }

    /// Evaluates everything recorded at an accepted point.
    pub fn point(&self, y: &[f64], v_prev: &[f64], opts: &ContinuationOptions) -> Result<BranchPoint> {
        let lin = self.linearize(y);
        let tangent = self.tangent_with(&lin, v_prev)?;
        let (_, det_sign) = lin.solve(&tangent, &vec![1.0; self.dim()])?;
        let (u, p) = self.unscale(y);
        let state = FieldState::from_vec(self.grid, &u)?;
        let residual = norm_inf(&self.residual(y));
        let (n_unstable, leading) = if opts.monitor_stability {
            let spec = spectrum(&self.grid, &u, p, self.params)?;
            let count = spec.iter().filter(|z| z.re > 0.0).count();
            (Some(count), Some(spec[0].re))
        } else {
            (None, None)
        };
        Ok(BranchPoint {
            measures: Measures::of(&state),
            p,
            tau_fold: tangent[self.grid.dim()],
            tau_branch: det_sign,
            tangent,
            n_unstable,
            leading_eigenvalue: leading,
            residual,
            state,
        })
    }
}

impl Measures {
    pub fn of(state: &FieldState) -> Self {
        let w = state.grid.weights();
        let len = state.grid.length;
        let mean_b = w.iter().zip(&state.b).map(|(w, b)| w * b).sum::<f64>() / len;
        let l2_b = (w.iter().zip(&state.b).map(|(w, b)| w * b * b).sum::<f64>() / len).sqrt();
        Self {
            mean_b,
            max_b: state.b.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)),
            l2_b,
            first_moment: first_moment(state),
        }
    }
}

/// Eigenvalues of the unscaled state Jacobian, sorted by decreasing real
/// part.
pub fn spectrum(
    grid: &GridSpec,
    u: &[f64],
    p: f64,
    params: &ModelParams<f64>,
) -> Result<Vec<Complex<f64>>> {
    let jac = jacobian(grid, u, p, params);
    let n = jac.n();
    // nalgebra's Schur stalls on the block-triangular bare-soil Jacobian.
    let m = faer::Mat::<f64>::from_fn(n, n, |i, j| jac.get(i, j));
    let ev = m
        .eigenvalues()
        .map_err(|e| Error::InternalConsistency(format!("eigenvalue iteration failed: {e:?}")))?;
    let mut ev: Vec<Complex<f64>> = ev.iter().map(|z| Complex::new(z.re, z.im)).collect();
    ev.sort_by(|a, b| b.re.total_cmp(&a.re));
    Ok(ev)
}

/// Eigenvalue of smallest modulus of the unscaled state Jacobian and its
/// unit eigenvector, by inverse iteration on the band LU.
pub fn critical_eigenpair(
    grid: &GridSpec,
    u: &[f64],
    p: f64,
    params: &ModelParams<f64>,
) -> Result<(f64, Vec<f64>)> {
    let jac = jacobian(grid, u, p, params);
    let n = jac.n();
    let lu = match jac.factor() {
        Ok(lu) => lu,
        Err(_) => jac.shifted(1e-12).factor()?,
    };
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7548776662).sin()).collect();
    let nrm = norm2(&x);
    x.iter_mut().for_each(|v| *v /= nrm);
    for _ in 0..200 {
        let mut z = lu.solve(&x);
        let nz = norm2(&z);
        if !(nz.is_finite() && nz > 0.0) {
            return Err(Error::SingularPoint("inverse iteration broke down".into()));
        }
        let sign = if dot(&z, &x) < 0.0 { -1.0 } else { 1.0 };
        z.iter_mut().for_each(|v| *v *= sign / nz);
        let change = z.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        x = z;
        if change < 1e-13 {
            break;
        }
    }
    let jx = jac.matvec(&x);
    Ok((dot(&x, &jx), x))
}
