use super::problem::{critical_eigenpair, Problem};
use super::{BifurcationEvent, Branch, BranchPoint, ContinuationOptions, EventKind, Termination};
use crate::banded::{dot, norm2};
use crate::discretization::FieldState;
use crate::error::{Error, Result};
use crate::integrate::newton_polish;
use crate::symmetry::{classify, reflect_vec};
use log::{debug, warn};

/// Converges `state` at fixed `p` and evaluates it as the first point of a
/// branch. The tangent is oriented towards increasing `p` (or along the
/// state direction if `p` is stationary).
pub fn seed_point(
    problem: &Problem,
    state: &FieldState,
    p: f64,
    opts: &ContinuationOptions,
) -> Result<BranchPoint> {
    let (u, _) = newton_polish(&problem.grid, &state.to_vec(), p, problem.params, opts.residual_tol * 1e-2, 30)?;
    let y = problem.augment(&u, p);
    let mut e = vec![0.0; problem.dim()];
    e[problem.grid.dim()] = 1.0;
    problem.point(&y, &e, opts)
}

fn axpy(x: &[f64], a: f64, v: &[f64]) -> Vec<f64> {
    x.iter().zip(v).map(|(x, v)| x + a * v).collect()
}

/// Follows a branch from `seed` along `direction · seed.tangent`.
pub fn continue_branch(
    problem: &Problem,
    seed: &BranchPoint,
    direction: f64,
    opts: &ContinuationOptions,
) -> Result<Branch> {
    opts.validate()?;
    let mut first = seed.clone();
    if direction < 0.0 {
        first.tangent.iter_mut().for_each(|v| *v = -*v);
        first.tau_fold = -first.tau_fold;
        first.tau_branch = -first.tau_branch;
    }
    let y0 = problem.augment(&first.state.to_vec(), first.p);
    let mut points = vec![first];
    let mut events = Vec::new();
    let mut h = opts.h_init;
    let mut termination = Termination::MaxSteps;

    for _ in 0..opts.max_steps {
        let prev = points.last().expect("branch has a seed");
        let x = problem.augment(&prev.state.to_vec(), prev.p);
        let v = &prev.tangent;
        let pred = axpy(&x, h, v);
        let attempt = problem
            .corrector(&pred, v, opts, false)
            .and_then(|c| problem.point(&c.y, v, opts).map(|pt| (c, pt)));
        let (corr, point) = match attempt {
            Ok((c, pt)) if dot(&pt.tangent, v) >= opts.min_tangent_cos => (c, pt),
            other => {
                if let Err(e) = &other {
                    debug!("step h = {h:e} rejected: {e}");
                }
                h /= 2.0;
                if h < opts.h_min {
                    let msg = format!("step underflow at p = {:.6}", prev.p);
                    warn!("{msg}");
                    termination = Termination::StepUnderflow(msg);
                    break;
                }
                continue;
            }
        };

        let fold_cross = prev.tau_fold * point.tau_fold < 0.0;
        let branch_cross = prev.tau_branch != point.tau_branch;
        if fold_cross && branch_cross && h > 4.0 * opts.h_min {
            // Both tests changed sign; shrink the step to separate them.
            h /= 2.0;
            continue;
        }
        let kind = if branch_cross {
            Some(EventKind::BranchPoint)
        } else if fold_cross {
            Some(EventKind::Fold)
        } else {
            None
        };
        if let Some(kind) = kind {
            match refine_event(problem, prev, &point, kind, opts) {
                Ok(ev) => events.push(ev),
                Err(e) => warn!("could not refine {} near p = {:.5}: {e}", kind.as_str(), point.p),
            }
        }

        let y = problem.augment(&point.state.to_vec(), point.p);
        let out_of_range = point.p < opts.p_min || point.p > opts.p_max;
        points.push(point);
        if corr.iterations <= 3 {
            h = (h * opts.grow).min(opts.h_max);
        }
        if out_of_range {
            termination = Termination::ParameterBound;
            break;
        }
        if points.len() > 10 {
            let d: Vec<f64> = y.iter().zip(&y0).map(|(a, b)| a - b).collect();
            if norm2(&d) < h {
                termination = Termination::ClosedLoop;
                break;
            }
        }
    }

    Ok(Branch {
        id: 0,
        provenance: String::new(),
        depth: 0,
        seed_shape: classify(&seed.state).profile_shape,
        points,
        events,
        termination,
        conjugate_of: None,
    })
}

fn is_homogeneous(state: &FieldState) -> bool {
    let (lo, hi) = state
        .b
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    hi - lo <= 1e-7 * (1.0 + hi.abs())
}

/// Locates a fold or branch point between two consecutive points `a`, `b`.
///
/// Trial points live on the secant from `a` to `b`; each is pulled back onto
/// the branch by the corrector restricted to the hyperplane normal to the
/// secant. Folds use Illinois regula falsi on `τ_fold`; branch points use
/// bisection on the sign of `τ_branch`.
pub fn refine_event(
    problem: &Problem,
    a: &BranchPoint,
    b: &BranchPoint,
    kind: EventKind,
    opts: &ContinuationOptions,
) -> Result<BifurcationEvent> {
    let ya = problem.augment(&a.state.to_vec(), a.p);
    let yb = problem.augment(&b.state.to_vec(), b.p);
    let d: Vec<f64> = yb.iter().zip(&ya).map(|(b, a)| b - a).collect();
    let len = norm2(&d);
    let unit: Vec<f64> = d.iter().map(|x| x / len).collect();
    let eval = |t: f64| -> Result<BranchPoint> {
        let pred = axpy(&ya, t, &d);
        let c = problem.corrector(&pred, &unit, opts, true)?;
        let mut pt = problem.point(&c.y, &a.tangent, opts)?;
        // Keep the branch-test sign relative to the tangent at `a`.
        if dot(&pt.tangent, &a.tangent) < 0.0 {
            pt.tangent.iter_mut().for_each(|v| *v = -*v);
            pt.tau_fold = -pt.tau_fold;
            pt.tau_branch = -pt.tau_branch;
        }
        Ok(pt)
    };

    let point = match kind {
        EventKind::Fold => {
            let (mut t0, mut f0) = (0.0, a.tau_fold);
            let (mut t1, mut f1) = (1.0, b.tau_fold);
            let mut best = if f0.abs() < f1.abs() { a.clone() } else { b.clone() };
            let mut side = 0;
            for _ in 0..80 {
                if best.tau_fold.abs() < opts.fold_tol || (t1 - t0) * len < 1e-15 {
                    break;
                }
                let t = (t0 * f1 - t1 * f0) / (f1 - f0);
                let t = if t > t0 && t < t1 { t } else { 0.5 * (t0 + t1) };
                let pt = eval(t)?;
                let ft = pt.tau_fold;
                if ft.abs() < best.tau_fold.abs() {
                    best = pt;
                }
                if (ft > 0.0) == (f0 > 0.0) {
                    t0 = t;
                    f0 = ft;
                    if side == -1 {
                        f1 /= 2.0;
                    }
                    side = -1;
                } else {
                    t1 = t;
                    f1 = ft;
                    if side == 1 {
                        f0 /= 2.0;
                    }
                    side = 1;
                }
            }
            best
        }
        EventKind::BranchPoint | EventKind::TuringOnset => {
            let s0 = a.tau_branch;
            let (mut t0, mut t1) = (0.0, 1.0);
            let mut last = None;
            while (t1 - t0) * len > opts.branch_point_tol {
                let tm = 0.5 * (t0 + t1);
                if tm <= t0 || tm >= t1 {
                    break;
                }
                let pt = eval(tm)?;
                if pt.tau_branch == s0 {
                    t0 = tm;
                } else {
                    t1 = tm;
                }
                last = Some(pt);
            }
            match last {
                Some(pt) => pt,
                None => eval(0.5)?,
            }
        }
    };

    let mut point = point;
    if kind != EventKind::Fold {
        // The tangent solve is singular at a branch point and picks up the
        // critical mode; the secant is the reliable direction there.
        point.tangent = unit.clone();
    }
    let (kind, test_value, breaks_reflection) = match kind {
        EventKind::Fold => (EventKind::Fold, point.tau_fold.abs(), None),
        _ => {
            let u = point.state.to_vec();
            let (lambda, phi) = critical_eigenpair(&problem.grid, &u, point.p, problem.params)?;
            let rphi = reflect_vec(&phi);
            let odd = rphi.iter().zip(&phi).map(|(r, f)| (r + f).abs()).fold(0.0f64, f64::max);
            let kind = if is_homogeneous(&point.state) {
                EventKind::TuringOnset
            } else {
                EventKind::BranchPoint
            };
            (kind, lambda.abs(), Some(odd < 1e-6))
        }
    };
    if !point.residual.is_finite() || point.residual >= opts.residual_tol {
        return Err(Error::CorrectorFailure {
            iterations: opts.max_corrector_iter,
            residual: point.residual,
        });
    }
    Ok(BifurcationEvent {
        kind,
        label: None,
        p: point.p,
        test_value,
        detection_interval: (a.p, b.p),
        breaks_reflection,
        branch: 0,
        point,
    })
}
