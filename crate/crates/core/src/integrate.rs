//! TR-BDF2 time stepping for the semidiscrete system.
//!
//! Each step is a trapezoidal stage to `t + γh` followed by a BDF2 stage to
//! `t + h`, with `γ = 2 − √2` so both stages share the iteration matrix
//! `I − (γ/2) h J`. The scheme is second order and L-stable; the embedded
//! error estimate is filtered through the same matrix.

use crate::banded::{BandedLu, BandedMatrix};
use crate::discretization::{jacobian, rhs_into, FieldState, GridSpec};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use serde::{Deserialize, Serialize};

const GAMMA: f64 = 2.0 - std::f64::consts::SQRT_2;
const D: f64 = GAMMA / 2.0;
const W: f64 = std::f64::consts::SQRT_2 / 4.0;
const NEWTON_MAX_ITER: usize = 8;
const NEWTON_KAPPA: f64 = 1e-2;

/// An autonomous ODE `y' = f(y)` with a banded Jacobian.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, y: &[f64], out: &mut [f64]);
    fn jacobian(&self, y: &[f64]) -> BandedMatrix<f64>;
}

/// The method-of-lines system at fixed precipitation.
pub struct SemiDiscrete<'a> {
    pub grid: GridSpec,
    pub p: f64,
    pub params: &'a ModelParams<f64>,
}

impl OdeSystem for SemiDiscrete<'_> {
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn rhs(&self, y: &[f64], out: &mut [f64]) {
        rhs_into(&self.grid, y, self.p, self.params, out)
    }

    fn jacobian(&self, y: &[f64]) -> BandedMatrix<f64> {
        jacobian(&self.grid, y, self.p, self.params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub initial_step: f64,
    pub max_step: f64,
    pub t_end: f64,
    /// Stop once `‖dU/dt‖∞` drops below this.
    pub steady_state_threshold: f64,
    /// `settle` hands over to Newton once `‖dU/dt‖∞` is below this.
    pub newton_handoff: f64,
    /// Record a snapshot whenever this much time has passed; `None` keeps
    /// only the endpoints.
    pub snapshot_every: Option<f64>,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            abs_tol: 1e-6,
            initial_step: 1e-3,
            max_step: 1e3,
            t_end: 1e6,
            steady_state_threshold: 1e-10,
            newton_handoff: 1e-7,
            snapshot_every: None,
        }
    }
}

impl IntegratorOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("initial_step", self.initial_step),
            ("max_step", self.max_step),
            ("t_end", self.t_end),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.steady_state_threshold >= 0.0) {
            return Err(Error::invalid("steady_state_threshold must be non-negative"));
        }
        if let Some(dt) = self.snapshot_every {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::invalid("snapshot interval must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    TEnd,
    SteadyState,
    StepFailure,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<FieldState>,
    pub termination: TerminationReason,
    pub steps: usize,
    pub rejected: usize,
}

impl Trajectory {
    pub fn last(&self) -> &FieldState {
        self.snapshots.last().expect("trajectory has at least the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least the initial time")
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Iteration matrix `I − d h J` and its factorization.
struct Iteration {
    h: f64,
    lu: BandedLu<f64>,
}

impl Iteration {
    fn new(jac: &BandedMatrix<f64>, h: f64) -> Result<Self> {
        let mut m = jac.clone();
        for i in 0..m.n() {
            for j in m.row_range(i) {
                let v = -D * h * m.get(i, j) + if i == j { 1.0 } else { 0.0 };
                m.set(i, j, v);
            }
        }
        Ok(Self { h, lu: m.factor()? })
    }
}

/// Solves `z − rhs_const − d h f(z) = 0` by modified Newton, starting from
/// `z`. Returns the iteration count, or `None` when it does not converge.
fn stage_solve<F: OdeSystem>(
    sys: &F,
    it: &Iteration,
    base: &[f64],
    z: &mut [f64],
    fz: &mut [f64],
    scale: &[f64],
) -> Option<usize> {
    let n = z.len();
    let mut res = vec![0.0; n];
    let mut prev_norm = f64::INFINITY;
    for k in 1..=NEWTON_MAX_ITER {
        sys.rhs(z, fz);
        for i in 0..n {
            res[i] = -(z[i] - base[i] - D * it.h * fz[i]);
        }
        it.lu.solve_in_place(&mut res);
        let mut norm = 0.0f64;
        for i in 0..n {
            z[i] += res[i];
            norm = norm.max((res[i] / scale[i]).abs());
        }
        if !norm.is_finite() {
            return None;
        }
        if norm < NEWTON_KAPPA {
            sys.rhs(z, fz);
            return Some(k);
        }
        if k > 1 && norm > 0.9 * prev_norm {
            return None;
        }
        prev_norm = norm;
    }
    None
}

struct StepResult {
    y: Vec<f64>,
    f: Vec<f64>,
    err: f64,
    iterations: usize,
}

fn trbdf2_step<F: OdeSystem>(
    sys: &F,
    it: &Iteration,
    y: &[f64],
    fy: &[f64],
    opts: &IntegratorOptions,
) -> Option<StepResult> {
    let n = y.len();
    let h = it.h;
    let scale: Vec<f64> = y.iter().map(|v| opts.abs_tol + opts.rel_tol * v.abs()).collect();

    let base1: Vec<f64> = (0..n).map(|i| y[i] + D * h * fy[i]).collect();
    let mut zg: Vec<f64> = (0..n).map(|i| y[i] + GAMMA * h * fy[i]).collect();
    let mut fg = vec![0.0; n];
    let it1 = stage_solve(sys, it, &base1, &mut zg, &mut fg, &scale)?;

    let base2: Vec<f64> = (0..n).map(|i| y[i] + W * h * (fy[i] + fg[i])).collect();
    // Extrapolate the stage value through (t, y), (t + γh, z_γ).
    let mut z: Vec<f64> = (0..n).map(|i| y[i] + (zg[i] - y[i]) / GAMMA).collect();
    let mut fz = vec![0.0; n];
    let it2 = stage_solve(sys, it, &base2, &mut z, &mut fz, &scale)?;

    let mut est: Vec<f64> = (0..n)
        .map(|i| h * ((1.0 - 4.0 * W) / 3.0 * fy[i] + fg[i] / 3.0 - 2.0 * D / 3.0 * fz[i]))
        .collect();
    it.lu.solve_in_place(&mut est);
    let err = (0..n).fold(0.0f64, |m, i| {
        let sc = opts.abs_tol + opts.rel_tol * y[i].abs().max(z[i].abs());
        m.max((est[i] / sc).abs())
    });
    Some(StepResult {
        y: z,
        f: fz,
        err,
        iterations: it1 + it2,
    })
}

/// Fixed-step TR-BDF2 with Newton iterated to round-off, used to measure
/// the order of the scheme.
pub struct Stepper<'a, F> {
    sys: &'a F,
}

impl<'a, F: OdeSystem> Stepper<'a, F> {
    pub fn new(sys: &'a F) -> Self {
        Self { sys }
    }

    pub fn step(&self, y: &[f64], h: f64) -> Result<Vec<f64>> {
        let n = y.len();
        let mut fy = vec![0.0; n];
        self.sys.rhs(y, &mut fy);
        let it = Iteration::new(&self.sys.jacobian(y), h)?;
        let tight = IntegratorOptions {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            ..Default::default()
        };
        trbdf2_step(self.sys, &it, y, &fy, &tight)
            .map(|s| s.y)
            .ok_or(Error::NewtonFailure { residual: f64::NAN })
    }

    pub fn run(&self, y0: &[f64], h: f64, steps: usize) -> Result<Vec<f64>> {
        let mut y = y0.to_vec();
        for _ in 0..steps {
            y = self.step(&y, h)?;
        }
        Ok(y)
    }
}

/// Adaptive integration of a general [`OdeSystem`]. `record` receives every
/// accepted `(t, y)`.
pub fn integrate_system<F: OdeSystem>(
    sys: &F,
    y0: &[f64],
    opts: &IntegratorOptions,
    mut record: impl FnMut(f64, &[f64]),
) -> Result<(TerminationReason, usize, usize)> {
    opts.validate()?;
    let n = sys.dim();
    if y0.len() != n || y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial state must be finite and match the system size"));
    }
    let mut t = 0.0;
    let mut y = y0.to_vec();
    let mut fy = vec![0.0; n];
    sys.rhs(&y, &mut fy);
    if inf_norm(&fy) < opts.steady_state_threshold {
        return Ok((TerminationReason::SteadyState, 0, 0));
    }
    let mut h = opts.initial_step.min(opts.max_step).min(opts.t_end);
    let mut jac = sys.jacobian(&y);
    let mut jac_fresh = true;
    let mut it: Option<Iteration> = None;
    let (mut steps, mut rejected) = (0, 0);
    let h_min = 1e-14 * opts.t_end;

    while t < opts.t_end {
        if h < h_min {
            return Ok((TerminationReason::StepFailure, steps, rejected));
        }
        let last = t + h >= opts.t_end * (1.0 - 1e-14);
        if last {
            h = opts.t_end - t;
        }
        if it.as_ref().is_none_or(|i| i.h != h) {
            it = match Iteration::new(&jac, h) {
                Ok(i) => Some(i),
                Err(_) => {
                    h *= 0.25;
                    rejected += 1;
                    continue;
                }
            };
        }
        let iteration = it.as_ref().expect("iteration matrix set above");
        match trbdf2_step(sys, iteration, &y, &fy, opts) {
            None => {
                rejected += 1;
                if jac_fresh {
                    h *= 0.25;
                } else {
                    jac = sys.jacobian(&y);
                    jac_fresh = true;
                    it = None;
                }
            }
            Some(step) if step.err > 1.0 || !step.err.is_finite() => {
                rejected += 1;
                let fac = if step.err.is_finite() { (0.9 * step.err.powf(-1.0 / 3.0)).max(0.2) } else { 0.2 };
                h *= fac;
            }
            Some(step) => {
                t = if last { opts.t_end } else { t + h };
                y = step.y;
                fy = step.f;
                steps += 1;
                record(t, &y);
                if inf_norm(&fy) < opts.steady_state_threshold {
                    return Ok((TerminationReason::SteadyState, steps, rejected));
                }
                let fac = if step.err > 0.0 { 0.9 * step.err.powf(-1.0 / 3.0) } else { 5.0 };
                let h_new = (h * fac.clamp(0.2, 5.0)).min(opts.max_step);
                // Keep the Jacobian while Newton stays fast; refresh it
                // otherwise so the next step starts from a good model.
                if step.iterations > 4 {
                    jac = sys.jacobian(&y);
                    jac_fresh = true;
                    it = None;
                } else {
                    jac_fresh = false;
                }
                if (h_new - h).abs() > 0.05 * h {
                    h = h_new;
                }
            }
        }
    }
    Ok((TerminationReason::TEnd, steps, rejected))
}

/// Integrates the field equations from `u0` at precipitation `p`.
pub fn integrate(
    u0: &FieldState,
    p: f64,
    opts: &IntegratorOptions,
    params: &ModelParams<f64>,
) -> Result<Trajectory> {
    if !u0.is_finite() {
        return Err(Error::invalid("initial state is not finite"));
    }
    let sys = SemiDiscrete {
        grid: u0.grid,
        p,
        params,
    };
    let grid = u0.grid;
    let mut times = vec![0.0];
    let mut snapshots = vec![u0.clone()];
    let mut next_snap = opts.snapshot_every;
    let mut last_y = None;
    let (termination, steps, rejected) = integrate_system(&sys, &u0.to_vec(), opts, |t, y| {
        if let (Some(dt), Some(ts)) = (opts.snapshot_every, next_snap) {
            if t >= ts {
                times.push(t);
                snapshots.push(FieldState::from_vec(grid, y).expect("grid-sized vector"));
                next_snap = Some(ts + dt * ((t - ts) / dt).floor().max(0.0) + dt);
                last_y = None;
                return;
            }
        }
        last_y = Some((t, y.to_vec()));
    })?;
    if let Some((t, y)) = last_y {
        times.push(t);
        snapshots.push(FieldState::from_vec(grid, &y)?);
    }
    Ok(Trajectory {
        times,
        snapshots,
        termination,
        steps,
        rejected,
    })
}

/// Newton on `F(U) = 0` at fixed `p` with the banded Jacobian. Returns the
/// converged vector and its residual `‖F‖∞`.
pub fn newton_polish(
    grid: &GridSpec,
    u: &[f64],
    p: f64,
    params: &ModelParams<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64)> {
    let mut x = u.to_vec();
    let mut f = vec![0.0; x.len()];
    rhs_into(grid, &x, p, params, &mut f);
    let mut res = inf_norm(&f);
    for _ in 0..max_iter {
        if res < tol {
            return Ok((x, res));
        }
        let lu = jacobian(grid, &x, p, params).factor()?;
        let mut dx: Vec<f64> = f.iter().map(|v| -v).collect();
        lu.solve_in_place(&mut dx);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
        rhs_into(grid, &x, p, params, &mut f);
        res = inf_norm(&f);
        if !res.is_finite() {
            break;
        }
    }
    if res < tol {
        Ok((x, res))
    } else {
        Err(Error::NewtonFailure { residual: res })
    }
}

/// Residual bound guaranteed by [`settle`].
pub const SETTLE_TOL: f64 = 1e-10;

/// Integrates until the state is nearly stationary, then polishes it with
/// Newton to `‖F‖∞ < 1e−10`.
pub fn settle(
    u0: &FieldState,
    p: f64,
    opts: &IntegratorOptions,
    params: &ModelParams<f64>,
) -> Result<FieldState> {
    let grid = u0.grid;
    let handoff = opts.newton_handoff.max(opts.steady_state_threshold);
    let mut stage = IntegratorOptions {
        steady_state_threshold: handoff,
        snapshot_every: None,
        ..*opts
    };
    let mut start = u0.clone();
    let mut elapsed = 0.0;
    loop {
        stage.t_end = opts.t_end - elapsed;
        let traj = integrate(&start, p, &stage, params)?;
        elapsed += traj.final_time();
        let last = traj.last().clone();
        let y = last.to_vec();
        if traj.termination == TerminationReason::SteadyState {
            if let Ok((x, _)) = newton_polish(&grid, &y, p, params, SETTLE_TOL, 20) {
                let moved = x.iter().zip(&y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                if moved < 1e-3 * (1.0 + inf_norm(&y)) {
                    return FieldState::from_vec(grid, &x);
                }
            }
            // Newton jumped away or failed: tighten the hand-off and keep
            // integrating.
            stage.steady_state_threshold *= 0.1;
        }
        let residual = {
            let mut f = vec![0.0; y.len()];
            rhs_into(&grid, &y, p, params, &mut f);
            inf_norm(&f)
        };
        if traj.termination != TerminationReason::SteadyState
            || elapsed >= opts.t_end
            || stage.steady_state_threshold < opts.steady_state_threshold.max(1e-14)
        {
            return Err(Error::Timeout {
                t: elapsed,
                residual,
                last: Box::new(last),
            });
        }
        start = last;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{equilibrium, BranchTag, HomogeneousState};

    type P = ModelParams<f64>;

    /// `y' = A y` with a fixed tridiagonal `A`.
    struct Linear(BandedMatrix<f64>);

    impl OdeSystem for Linear {
        fn dim(&self) -> usize {
            self.0.n()
        }
        fn rhs(&self, y: &[f64], out: &mut [f64]) {
            out.copy_from_slice(&self.0.matvec(y));
        }
        fn jacobian(&self, _: &[f64]) -> BandedMatrix<f64> {
            self.0.clone()
        }
    }

    fn scalar_decay(lambda: f64) -> Linear {
        let mut a = BandedMatrix::zeros(1, 0, 0);
        a.set(0, 0, lambda);
        Linear(a)
    }

    #[test]
    fn scalar_decay_is_second_order() {
        let sys = scalar_decay(-1.0);
        let st = Stepper::new(&sys);
        let errs: Vec<f64> = [20, 40, 80]
            .iter()
            .map(|&n| (st.run(&[1.0], 1.0 / n as f64, n).unwrap()[0] - (-1.0f64).exp()).abs())
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((1.9..2.1).contains(&order), "{order}");
        }
    }

    #[test]
    fn l_stable_on_very_stiff_decay() {
        let sys = scalar_decay(-1e8);
        let y = Stepper::new(&sys).step(&[1.0], 1.0).unwrap();
        assert!(y[0].abs() < 1e-6);
    }

    #[test]
    fn error_estimate_is_third_order() {
        let sys = scalar_decay(-1.0);
        let est = |h: f64| {
            let it = Iteration::new(&sys.jacobian(&[1.0]), h).unwrap();
            let opts = IntegratorOptions {
                abs_tol: 1.0,
                rel_tol: 0.0,
                ..Default::default()
            };
            trbdf2_step(&sys, &it, &[1.0], &[-1.0], &opts).unwrap().err
        };
        let ratio = est(0.02) / est(0.01);
        assert!((7.0..9.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn adaptive_run_meets_tolerance() {
        let sys = scalar_decay(-2.0);
        let opts = IntegratorOptions {
            t_end: 3.0,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            steady_state_threshold: 0.0,
            ..Default::default()
        };
        let mut last = (0.0, 1.0);
        let (reason, steps, _) = integrate_system(&sys, &[1.0], &opts, |t, y| last = (t, y[0])).unwrap();
        assert_eq!(reason, TerminationReason::TEnd);
        assert_eq!(last.0, 3.0);
        assert!(steps > 10);
        assert!((last.1 - (-6.0f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn bare_soil_is_a_fixed_point() {
        let params = P::calibrated();
        let grid = GridSpec::new(8.0, 40).unwrap();
        let bare = FieldState::homogeneous(grid, &HomogeneousState::bare_soil(1.0, &params));
        let opts = IntegratorOptions {
            t_end: 100.0,
            ..Default::default()
        };
        let traj = integrate(&bare, 1.0, &opts, &params).unwrap();
        assert_eq!(traj.termination, TerminationReason::SteadyState);
        assert_eq!(traj.last(), &bare);
    }

    #[test]
    fn snapshots_are_increasing_and_finite() {
        let params = P::calibrated();
        let grid = GridSpec::new(8.0, 20).unwrap();
        let u = equilibrium(1.3, BranchTag::Upper, &params).unwrap().unwrap();
        let mut s = FieldState::homogeneous(grid, &u);
        s.b[3] *= 1.2;
        let opts = IntegratorOptions {
            t_end: 200.0,
            snapshot_every: Some(20.0),
            ..Default::default()
        };
        let traj = integrate(&s, 1.3, &opts, &params).unwrap();
        assert!(traj.times.windows(2).all(|w| w[0] < w[1]));
        assert!(traj.snapshots.iter().all(FieldState::is_finite));
        assert!(traj.times.len() >= 10);
        assert_eq!(traj.final_time(), 200.0);
    }

    #[test]
    fn settle_returns_polished_state() {
        let params = P::calibrated();
        let grid = GridSpec::new(8.0, 20).unwrap();
        let u = equilibrium(1.5, BranchTag::Upper, &params).unwrap().unwrap();
        let mut s = FieldState::homogeneous(grid, &u);
        s.b[5] *= 1.05;
        let out = settle(&s, 1.5, &IntegratorOptions::default(), &params).unwrap();
        let f = crate::discretization::rhs(&grid, &out.to_vec(), 1.5, &params);
        assert!(inf_norm(&f) < SETTLE_TOL);
        assert!((out.b[0] - u.b).abs() < 1e-8);
    }

    #[test]
    fn settle_times_out_with_last_state() {
        let params = P::calibrated();
        let grid = GridSpec::new(8.0, 20).unwrap();
        let u = equilibrium(1.5, BranchTag::Upper, &params).unwrap().unwrap();
        let mut s = FieldState::homogeneous(grid, &u);
        s.b[5] *= 1.5;
        let opts = IntegratorOptions {
            t_end: 1.0,
            ..Default::default()
        };
        match settle(&s, 1.5, &opts, &params) {
            Err(Error::Timeout { last, .. }) => assert!(last.is_finite()),
            other => panic!("expected timeout, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_options() {
        let opts = IntegratorOptions {
            rel_tol: 0.0,
            ..Default::default()
        };
        assert!(opts.validate().is_err());
    }
}
