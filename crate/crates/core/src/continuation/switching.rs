use super::problem::{critical_eigenpair, Problem};
use super::{BifurcationEvent, BranchPoint, ContinuationOptions};
use crate::banded::{dot, norm2};
use crate::error::{Error, Result};
use log::debug;

fn normalize(v: &mut [f64]) {
    let n = norm2(v);
    v.iter_mut().for_each(|x| *x /= n);
}

/// Direction of the crossing branch at a simple branch point.
///
/// There the rectangular Jacobian `F_y` has a two-dimensional kernel spanned
/// by the current tangent `v` and `(φ, 0)`, with `φ` the critical null
/// vector of `F_U`. The crossing direction is the part of `(φ, 0)`
/// orthogonal to `v`.
fn crossing_direction(problem: &Problem, event: &BifurcationEvent) -> Result<Vec<f64>> {
    let pt = &event.point;
    let (_, phi) = critical_eigenpair(&problem.grid, &pt.state.to_vec(), pt.p, problem.params)?;
    let mut d = problem.scale_direction(&phi);
    normalize(&mut d);
    let v = &pt.tangent;
    let along = dot(&d, v);
    if along.abs() > 0.99 {
        return Err(Error::SwitchFailure("critical mode is parallel to the branch".into()));
    }
    d.iter_mut().zip(v).for_each(|(a, b)| *a -= along * b);
    normalize(&mut d);
    Ok(d)
}

/// Seeds on both sides of the crossing branch at a branch point.
///
/// Each seed starts from `x ± ε d` with `ε = switch_eps · ‖x‖` and is
/// corrected on the hyperplane normal to `d`; its tangent points away from
/// the branch point. A few offsets are tried before giving up.
pub fn switch_branch(
    problem: &Problem,
    event: &BifurcationEvent,
    opts: &ContinuationOptions,
) -> Result<Vec<BranchPoint>> {
    if !event.kind.is_branching() {
        return Err(Error::SwitchFailure("event is a fold".into()));
    }
    let d = crossing_direction(problem, event)?;
    let x = problem.augment(&event.point.state.to_vec(), event.point.p);
    let base = opts.switch_eps * norm2(&x);
    let mut seeds = Vec::new();
    for sign in [1.0, -1.0] {
        let dir: Vec<f64> = d.iter().map(|v| sign * v).collect();
        let mut found = None;
        for factor in [1.0, 0.3, 3.0] {
            let eps = base * factor;
            let pred: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + eps * b).collect();
            let attempt = problem
                .corrector(&pred, &dir, opts, false)
                .and_then(|c| problem.point(&c.y, &dir, opts));
            match attempt {
                Ok(pt) => {
                    // Reject seeds that slid back onto the original branch.
                    let moved: Vec<f64> = problem
                        .augment(&pt.state.to_vec(), pt.p)
                        .iter()
                        .zip(&x)
                        .map(|(a, b)| a - b)
                        .collect();
                    if dot(&moved, &dir) > 0.5 * eps {
                        found = Some(pt);
                        break;
                    }
                }
                Err(e) => debug!("switch seed with eps {eps:e} failed: {e}"),
            }
        }
        if let Some(pt) = found {
            seeds.push(pt);
        }
    }
    if seeds.is_empty() {
        return Err(Error::SwitchFailure(format!(
            "no seed converged at p = {:.6}; try another switch_eps",
            event.p
        )));
    }
    Ok(seeds)
}
