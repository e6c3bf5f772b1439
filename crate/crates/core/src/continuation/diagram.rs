use super::branch::{continue_branch, seed_point};
use super::problem::Problem;
use super::switching::switch_branch;
use super::{BifurcationEvent, Branch, BranchPoint, ContinuationOptions, EventKind, Termination};
use crate::discretization::{FieldState, GridSpec};
use crate::error::Result;
use crate::model::{equilibrium, BranchTag, HomogeneousState, ModelParams};
use crate::symmetry::{classify, ProfileShape};
use log::info;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeSet;

#[derive(Debug, Clone, Serialize)]
pub struct Diagram {
    pub grid: GridSpec,
    pub branches: Vec<Branch>,
    /// Every event of every branch, ordered by `p` then label.
    pub events: Vec<BifurcationEvent>,
    /// Failures that did not stop the run.
    pub diagnostics: Vec<String>,
}

impl Diagram {
    pub fn labeled(&self, label: &str) -> Option<&BifurcationEvent> {
        self.events.iter().find(|e| e.label.as_deref() == Some(label))
    }

    pub fn is_complete(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

/// Distance from `q` to the polyline through `pts`.
fn polyline_distance(q: &[f64; SIG], pts: &[[f64; SIG]]) -> f64 {
    let mut best = f64::INFINITY;
    for w in pts.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let mut ab2 = 0.0;
        let mut aq_ab = 0.0;
        for k in 0..SIG {
            ab2 += (b[k] - a[k]) * (b[k] - a[k]);
            aq_ab += (q[k] - a[k]) * (b[k] - a[k]);
        }
        let t = if ab2 > 0.0 { (aq_ab / ab2).clamp(0.0, 1.0) } else { 0.0 };
        let d2: f64 = (0..SIG).map(|k| (q[k] - a[k] - t * (b[k] - a[k])).powi(2)).sum();
        best = best.min(d2);
    }
    if pts.len() == 1 {
        best = (0..SIG).map(|k| (q[k] - pts[0][k]).powi(2)).sum();
    }
    best.sqrt()
}

const SIG: usize = 5;

/// Per-point coordinates used to compare branches. The midpoint value
/// separates bell from inverted bell, which share the other measures.
fn signature(b: &Branch, mirrored: bool) -> Vec<[f64; SIG]> {
    b.points
        .iter()
        .map(|pt| {
            let m = &pt.measures;
            let fm = if mirrored { -m.first_moment } else { m.first_moment };
            let bs = &pt.state.b;
            let mid = 0.5 * (bs[(bs.len() - 1) / 2] + bs[bs.len() / 2]);
            [m.mean_b, m.max_b, fm, mid, pt.p]
        })
        .collect()
}

const MATCH_TOL: f64 = 1e-3;
const MATCH_FRACTION: f64 = 0.95;

/// Whether (almost) every point of `cand` lies on `known`.
fn covered_by(cand: &[[f64; SIG]], known: &[[f64; SIG]]) -> bool {
    let hits = cand.iter().filter(|q| polyline_distance(q, known) < MATCH_TOL).count();
    hits as f64 >= MATCH_FRACTION * cand.len() as f64
}

fn homogeneous_seed(
    problem: &Problem,
    u: &HomogeneousState<f64>,
    p: f64,
    opts: &ContinuationOptions,
) -> Result<BranchPoint> {
    seed_point(problem, &FieldState::homogeneous(problem.grid, u), p, opts)
}

/// Role of a branch in the labelling scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    Bare,
    Homogeneous,
    Bell,
    InvertedBell,
    SkewedLeft,
    SkewedRight,
    Other,
}

struct Pending {
    seed: BranchPoint,
    provenance: String,
    depth: usize,
    role: Role,
}

/// Whether two events are the same point reached along different branches.
/// A pitchfork approached along its asymmetric branch is located less
/// sharply, hence the loose tolerance.
fn same_point(a: &BifurcationEvent, b: &BifurcationEvent) -> bool {
    if (a.p - b.p).abs() > 1e-4 {
        return false;
    }
    let (x, y) = (a.point.state.to_vec(), b.point.state.to_vec());
    x.iter().zip(&y).all(|(u, v)| (u - v).abs() <= 1e-3 * (1.0 + v.abs()))
}

fn child_role(parent: Role, event_label: Option<&str>, seed: &BranchPoint) -> Role {
    let shape = classify(&seed.state).profile_shape;
    match (parent, event_label) {
        (Role::Homogeneous, Some("TB1")) => match shape {
            ProfileShape::Bell => Role::Bell,
            ProfileShape::InvertedBell => Role::InvertedBell,
            _ => Role::Other,
        },
        (Role::Bell, Some("PF1")) => {
            if seed.measures.first_moment < 0.0 {
                Role::SkewedLeft
            } else {
                Role::SkewedRight
            }
        }
        _ => Role::Other,
    }
}

/// Assigns the conventional labels to the events of a branch.
fn label_events(branch: &mut Branch, role: Role) {
    let first_of = |branch: &mut Branch, pred: &dyn Fn(&BifurcationEvent) -> bool, label: &str| {
        if let Some(ev) = branch.events.iter_mut().find(|e| pred(e)) {
            ev.label = Some(label.to_string());
        }
    };
    let fold = |e: &BifurcationEvent| e.kind == EventKind::Fold;
    let bp = |e: &BifurcationEvent| e.kind == EventKind::BranchPoint;
    match role {
        Role::Homogeneous => {
            let fold_at = branch.events.iter().position(fold);
            if let Some(i) = fold_at {
                branch.events[i].label = Some("LP1".into());
            }
            let upto = fold_at.unwrap_or(branch.events.len());
            let mut turing: Vec<usize> = (0..upto)
                .filter(|&i| branch.events[i].kind == EventKind::TuringOnset)
                .collect();
            turing.sort_by(|&a, &b| branch.events[b].p.total_cmp(&branch.events[a].p));
            for (k, i) in turing.into_iter().take(2).enumerate() {
                branch.events[i].label = Some(format!("TB{}", k + 1));
            }
        }
        Role::Bell => {
            first_of(branch, &bp, "PF1");
            first_of(branch, &fold, "LP2");
        }
        Role::InvertedBell => {
            first_of(branch, &bp, "PF2");
            first_of(branch, &fold, "LP3");
        }
        Role::SkewedLeft => first_of(branch, &fold, "LP4"),
        Role::SkewedRight => first_of(branch, &fold, "LP5"),
        Role::Bare | Role::Other => {}
    }
}

/// Computes the full bifurcation diagram in `p` on `grid`.
///
/// Starts from bare soil and the upper homogeneous state at `p_max`, walks
/// down in `p`, switches at every branch point up to `max_depth` and drops
/// branches already traced. Mirror-image branches are kept and linked.
pub fn full_diagram(params: &ModelParams<f64>, grid: GridSpec, opts: &ContinuationOptions) -> Result<Diagram> {
    opts.validate()?;
    params.validate()?;
    let problem = Problem::new(grid, params, opts.variable_scale);
    let mut diagnostics = Vec::new();
    let mut pending = Vec::new();

    let p0 = opts.p_max;
    pending.push(Pending {
        seed: homogeneous_seed(&problem, &HomogeneousState::bare_soil(p0, params), p0, opts)?,
        provenance: format!("bare soil from p = {p0}"),
        depth: 0,
        role: Role::Bare,
    });
    if let Some(u) = equilibrium(p0, BranchTag::Upper, params)? {
        pending.push(Pending {
            seed: homogeneous_seed(&problem, &u, p0, opts)?,
            provenance: format!("upper homogeneous from p = {p0}"),
            depth: 0,
            role: Role::Homogeneous,
        });
    }

    let mut branches: Vec<Branch> = Vec::new();
    let mut roles: Vec<Role> = Vec::new();
    let mut switched: Vec<BifurcationEvent> = Vec::new();

    while !pending.is_empty() {
        let batch = std::mem::take(&mut pending);
        let traced: Vec<Result<Branch>> = batch
            .par_iter()
            .map(|job| {
                let dir = if job.depth == 0 { -1.0 } else { 1.0 };
                continue_branch(&problem, &job.seed, dir, opts)
            })
            .collect();

        for (job, result) in batch.into_iter().zip(traced) {
            let mut branch = match result {
                Ok(b) => b,
                Err(e) => {
                    diagnostics.push(format!("{}: {e}", job.provenance));
                    continue;
                }
            };
            let sig = signature(&branch, false);
            if branches.iter().any(|b| covered_by(&sig, &signature(b, false))) {
                info!("dropping duplicate branch {}", job.provenance);
                continue;
            }
            let id = branches.len();
            branch.id = id;
            branch.provenance = job.provenance.clone();
            branch.depth = job.depth;
            branch.conjugate_of = branches
                .iter()
                .find(|b| covered_by(&signature(&branch, true), &signature(b, false)))
                .map(|b| b.id);
            for ev in branch.events.iter_mut() {
                ev.branch = id;
            }
            label_events(&mut branch, job.role);
            if let Termination::StepUnderflow(msg) = &branch.termination {
                diagnostics.push(format!("{}: {msg}", job.provenance));
            }
            info!(
                "branch {id} ({}): {} points, {} events",
                branch.provenance,
                branch.points.len(),
                branch.events.len()
            );

            if job.depth < opts.max_depth {
                for ev in branch.events.iter().filter(|e| e.kind.is_branching()) {
                    if switched.iter().any(|s| same_point(s, ev)) {
                        continue;
                    }
                    switched.push(ev.clone());
                    let name = ev.label.clone().unwrap_or_else(|| format!("{} at p = {:.4}", ev.kind.as_str(), ev.p));
                    match switch_branch(&problem, ev, opts) {
                        Ok(seeds) => {
                            for (k, seed) in seeds.into_iter().enumerate() {
                                let role = child_role(job.role, ev.label.as_deref(), &seed);
                                pending.push(Pending {
                                    seed,
                                    provenance: format!("{name} {}", if k == 0 { '+' } else { '-' }),
                                    depth: job.depth + 1,
                                    role,
                                });
                            }
                        }
                        Err(e) => diagnostics.push(format!("switching at {name}: {e}")),
                    }
                }
            }
            branches.push(branch);
            roles.push(job.role);
        }
    }

    let mut events: Vec<BifurcationEvent> = branches.iter().flat_map(|b| b.events.iter().cloned()).collect();
    events.sort_by(|a, b| a.p.total_cmp(&b.p).then_with(|| a.label.cmp(&b.label)));
    Ok(Diagram {
        grid,
        branches,
        events,
        diagnostics,
    })
}

/// Kinds of linearly stable steady states found on the diagram at `p`:
/// `bare`, `homogeneous`, or the profile shape name.
pub fn stable_shapes_at(diagram: &Diagram, p: f64) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for branch in &diagram.branches {
        for w in branch.points.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if (a.p - p) * (b.p - p) > 0.0 {
                continue;
            }
            let near = if (a.p - p).abs() <= (b.p - p).abs() { a } else { b };
            if near.n_unstable != Some(0) {
                continue;
            }
            let shape = classify(&near.state).profile_shape;
            let kind = if near.measures.max_b.abs() < 1e-8 {
                "bare".to_string()
            } else if shape == ProfileShape::Flat {
                "homogeneous".to_string()
            } else {
                shape.as_str().to_string()
            };
            out.insert(kind);
        }
    }
    out
}
