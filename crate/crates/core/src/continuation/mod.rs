//! Pseudo-arclength continuation of steady states in the precipitation
//! rate, with fold and branch-point detection, branch switching and the
//! assembly of the complete diagram.

mod branch;
mod diagram;
mod problem;
mod switching;

pub use branch::{continue_branch, refine_event, seed_point};
pub use diagram::{full_diagram, stable_shapes_at, Diagram};
pub use problem::{critical_eigenpair, spectrum, Corrected, Linearization, Problem};
pub use switching::switch_branch;

use crate::discretization::FieldState;
use crate::error::{Error, Result};
use crate::symmetry::ProfileShape;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuationOptions {
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub grow: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub max_steps: usize,
    /// Corrector bound on `‖F‖∞`.
    pub residual_tol: f64,
    /// Corrector bound on the Newton step.
    pub step_tol: f64,
    pub max_corrector_iter: usize,
    /// Per-component scale of `(B, W, T)` in the arclength metric.
    pub variable_scale: [f64; 3],
    /// Smallest cosine allowed between consecutive tangents.
    pub min_tangent_cos: f64,
    /// Count unstable eigenvalues at every point.
    pub monitor_stability: bool,
    /// Branch-switching offset relative to `‖x‖`.
    pub switch_eps: f64,
    pub max_depth: usize,
    /// Arclength width at which branch-point bisection stops.
    pub branch_point_tol: f64,
    /// Target for `|τ_fold|` at a refined fold.
    pub fold_tol: f64,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            h_init: 0.01,
            h_min: 1e-5,
            h_max: 0.05,
            grow: 1.3,
            p_min: 0.0,
            p_max: 2.0,
            max_steps: 3000,
            residual_tol: 1e-8,
            step_tol: 1e-8,
            max_corrector_iter: 12,
            variable_scale: [1.0, 100.0, 0.1],
            min_tangent_cos: 0.95,
            monitor_stability: true,
            switch_eps: 1e-3,
            max_depth: 2,
            branch_point_tol: 1e-10,
            fold_tol: 1e-8,
        }
    }
}

impl ContinuationOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.h_min > 0.0 && self.h_min <= self.h_init && self.h_init <= self.h_max && self.h_max <= 0.1) {
            return Err(Error::invalid("step sizes must satisfy 0 < h_min <= h_init <= h_max <= 0.1"));
        }
        if !(self.p_min < self.p_max) {
            return Err(Error::invalid("p_min must be below p_max"));
        }
        if self.variable_scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("variable scales must be positive"));
        }
        if !(self.grow > 1.0) || self.max_corrector_iter == 0 {
            return Err(Error::invalid("grow factor must exceed 1 and the corrector needs iterations"));
        }
        Ok(())
    }
}

/// Scalar summaries of a profile used for plotting and matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measures {
    pub mean_b: f64,
    pub max_b: f64,
    /// `(∫ B² dx / L)^{1/2}`.
    pub l2_b: f64,
    pub first_moment: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchPoint {
    pub state: FieldState,
    pub p: f64,
    /// Unit tangent in scaled coordinates, `p` last.
    pub tangent: Vec<f64>,
    pub measures: Measures,
    pub n_unstable: Option<usize>,
    pub leading_eigenvalue: Option<f64>,
    /// `p`-component of the tangent.
    pub tau_fold: f64,
    /// Sign of the determinant of `[F_y; vᵀ]`.
    pub tau_branch: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Fold,
    BranchPoint,
    TuringOnset,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Fold => "fold",
            EventKind::BranchPoint => "branch_point",
            EventKind::TuringOnset => "turing_onset",
        }
    }

    pub fn is_branching(self) -> bool {
        self != EventKind::Fold
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BifurcationEvent {
    pub kind: EventKind,
    pub label: Option<String>,
    pub p: f64,
    pub point: BranchPoint,
    /// `|τ_fold|` for folds, `|λ|` of the critical eigenvalue otherwise.
    pub test_value: f64,
    /// `p` at the two ends of the detection step.
    pub detection_interval: (f64, f64),
    /// For branch points: whether the critical mode is odd under reflection.
    pub breaks_reflection: Option<bool>,
    /// Index of the branch the event lies on.
    pub branch: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ParameterBound,
    ClosedLoop,
    MaxSteps,
    StepUnderflow(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    /// How the branch was seeded.
    pub provenance: String,
    pub depth: usize,
    /// Shape of the seed profile.
    pub seed_shape: ProfileShape,
    pub points: Vec<BranchPoint>,
    pub events: Vec<BifurcationEvent>,
    pub termination: Termination,
    /// Branch holding the mirror image of this one.
    pub conjugate_of: Option<usize>,
}
