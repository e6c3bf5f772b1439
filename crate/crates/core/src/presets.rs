//! Named initial conditions for simulations.

use crate::discretization::{FieldState, GridSpec};
use crate::error::{Error, Result};
use crate::integrate::{settle, IntegratorOptions};
use crate::model::{equilibrium, BranchTag, HomogeneousState, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Bare,
    Homogeneous,
    BumpUp,
    BumpDown,
    BellPerturbLeft,
    BellPerturbRight,
    File(PathBuf),
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "bare" => Preset::Bare,
            "homogeneous" => Preset::Homogeneous,
            "bump-up" => Preset::BumpUp,
            "bump-down" => Preset::BumpDown,
            "bell-perturb-left" => Preset::BellPerturbLeft,
            "bell-perturb-right" => Preset::BellPerturbRight,
            _ => match s.strip_prefix("file:") {
                Some(path) if !path.is_empty() => Preset::File(path.into()),
                _ => return Err(Error::invalid(format!("unknown preset '{s}'"))),
            },
        })
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Preset::Bare => f.write_str("bare"),
            Preset::Homogeneous => f.write_str("homogeneous"),
            Preset::BumpUp => f.write_str("bump-up"),
            Preset::BumpDown => f.write_str("bump-down"),
            Preset::BellPerturbLeft => f.write_str("bell-perturb-left"),
            Preset::BellPerturbRight => f.write_str("bell-perturb-right"),
            Preset::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PresetOptions {
    /// Window of the central bump, in `x`.
    pub bump_window: (f64, f64),
    pub bump_up_factor: f64,
    pub bump_down_factor: f64,
    /// Window of the off-centre kick applied to the bell (left variant; the
    /// right one is its mirror image).
    pub kick_window: (f64, f64),
    pub kick_factor: f64,
    /// Precipitation at which the bell is prepared.
    pub bell_p: f64,
    /// Relative amplitude of the uniform noise on `B` for `homogeneous`.
    pub noise: f64,
    pub seed: u64,
}

impl Default for PresetOptions {
    fn default() -> Self {
        Self {
            bump_window: (3.8, 4.2),
            bump_up_factor: 1.1,
            bump_down_factor: 0.9,
            kick_window: (1.1, 2.1),
            kick_factor: 1.1,
            bell_p: 1.1,
            noise: 0.01,
            seed: 0,
        }
    }
}

/// Nodes between the snapped window ends, both included. Points right of
/// `L/2` are snapped from the right end, so a window and its mirror image
/// select mirrored node sets even at rounding ties.
pub fn window_nodes(grid: &GridSpec, window: (f64, f64)) -> std::ops::RangeInclusive<usize> {
    let h = grid.h();
    // Ties (up to rounding noise) go to the node farther from the end.
    let from_end = |d: f64| ((d / h + 0.5 + 1e-9).floor() as usize).min(grid.n);
    let snap = |x: f64| {
        let x = x.clamp(0.0, grid.length);
        if x <= 0.5 * grid.length {
            from_end(x)
        } else {
            grid.n - from_end(grid.length - x)
        }
    };
    snap(window.0)..=snap(window.1)
}

fn scale_window(u: &mut FieldState, window: (f64, f64), factor: f64) {
    let grid = u.grid;
    for i in window_nodes(&grid, window) {
        u.b[i] *= factor;
        u.w[i] *= factor;
        u.t[i] *= factor;
    }
}

fn upper_state(p: f64, params: &ModelParams<f64>) -> Result<HomogeneousState<f64>> {
    equilibrium(p, BranchTag::Upper, params)?
        .ok_or_else(|| Error::NoSolution(format!("no vegetated homogeneous state at p = {p}")))
}

/// The symmetric bell obtained by settling the central bump at `bell_p`.
pub fn bell_state(
    grid: GridSpec,
    params: &ModelParams<f64>,
    opts: &PresetOptions,
    integ: &IntegratorOptions,
) -> Result<FieldState> {
    let mut u = FieldState::homogeneous(grid, &upper_state(opts.bell_p, params)?);
    scale_window(&mut u, opts.bump_window, opts.bump_up_factor);
    settle(&u, opts.bell_p, integ, params)
}

/// Builds the initial state for `preset` at precipitation `p`.
pub fn initial_state(
    preset: &Preset,
    grid: GridSpec,
    p: f64,
    params: &ModelParams<f64>,
    opts: &PresetOptions,
    integ: &IntegratorOptions,
) -> Result<FieldState> {
    match preset {
        Preset::Bare => Ok(FieldState::homogeneous(grid, &HomogeneousState::bare_soil(p, params))),
        Preset::Homogeneous => {
            let mut u = FieldState::homogeneous(grid, &upper_state(p, params)?);
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            for b in u.b.iter_mut() {
                *b *= 1.0 + opts.noise * rng.random_range(-1.0..=1.0);
            }
            Ok(u)
        }
        Preset::BumpUp | Preset::BumpDown => {
            let mut u = FieldState::homogeneous(grid, &upper_state(p, params)?);
            let factor = if *preset == Preset::BumpUp {
                opts.bump_up_factor
            } else {
                opts.bump_down_factor
            };
            scale_window(&mut u, opts.bump_window, factor);
            Ok(u)
        }
        Preset::BellPerturbLeft | Preset::BellPerturbRight => {
            let mut u = bell_state(grid, params, opts, integ)?;
            let (a, b) = opts.kick_window;
            let window = if *preset == Preset::BellPerturbLeft {
                (a, b)
            } else {
                (grid.length - b, grid.length - a)
            };
            scale_window(&mut u, window, opts.kick_factor);
            Ok(u)
        }
        Preset::File(path) => {
            let file = std::fs::File::open(path)?;
            let u = FieldState::read_csv(file)?;
            if u.grid.n != grid.n || (u.grid.length - grid.length).abs() > 1e-9 * grid.length {
                return Err(Error::invalid(format!(
                    "state in {} has N = {}, L = {}; expected N = {}, L = {}",
                    path.display(),
                    u.grid.n,
                    u.grid.length,
                    grid.n,
                    grid.length
                )));
            }
            Ok(u)
        }
    }
}
