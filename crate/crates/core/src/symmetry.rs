//! The reflection `x → L − x` and profile classification.

use crate::discretization::FieldState;
use serde::{Deserialize, Serialize};

/// Relative defect below which a state counts as reflection symmetric.
pub const SYMMETRY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    Symmetric,
    Asymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileShape {
    Flat,
    Bell,
    InvertedBell,
    SkewedLeft,
    SkewedRight,
    Other,
}

impl ProfileShape {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileShape::Flat => "flat",
            ProfileShape::Bell => "bell",
            ProfileShape::InvertedBell => "inverted_bell",
            ProfileShape::SkewedLeft => "skewed_left",
            ProfileShape::SkewedRight => "skewed_right",
            ProfileShape::Other => "other",
        }
    }

    /// Shape of the reflected profile.
    pub fn reflected(self) -> Self {
        match self {
            ProfileShape::SkewedLeft => ProfileShape::SkewedRight,
            ProfileShape::SkewedRight => ProfileShape::SkewedLeft,
            s => s,
        }
    }
}

impl std::fmt::Display for ProfileShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub defect: f64,
    pub classification: Symmetry,
    pub profile_shape: ProfileShape,
}

/// Expected symmetry of the pattern born from mode `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnsetShape {
    /// Symmetric about `L/2`.
    Symmetric,
    /// A half-period cosine, skewed left or right.
    HalfPeriod,
}

pub fn reflect(u: &FieldState) -> FieldState {
    let rev = |v: &[f64]| v.iter().rev().copied().collect();
    FieldState {
        grid: u.grid,
        b: rev(&u.b),
        w: rev(&u.w),
        t: rev(&u.t),
    }
}

/// Reverses a node-major `(B, W, T)` vector node by node.
pub fn reflect_vec(v: &[f64]) -> Vec<f64> {
    v.chunks_exact(3).rev().flatten().copied().collect()
}

/// `‖U − reflect U‖₂ / ‖U‖₂` over all three components.
pub fn defect(u: &FieldState) -> f64 {
    let mut diff = 0.0;
    let mut norm = 0.0;
    let n = u.grid.nodes();
    // Visit mirror pairs so that the sums are bitwise reflection invariant.
    for field in [&u.b, &u.w, &u.t] {
        for i in 0..n / 2 {
            let (a, b) = (field[i], field[n - 1 - i]);
            let d = a - b;
            diff += 2.0 * d * d;
            norm += a * a + b * b;
        }
        if n % 2 == 1 {
            norm += field[n / 2] * field[n / 2];
        }
    }
    if norm == 0.0 {
        0.0
    } else {
        (diff / norm).sqrt()
    }
}

/// `∫ (x − L/2) B dx / (L ∫ B dx)`; negative when biomass leans left.
pub fn first_moment(u: &FieldState) -> f64 {
    let w = u.grid.weights();
    let half = u.grid.length / 2.0;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..u.grid.nodes() {
        num += w[i] * (u.grid.x(i) - half) * u.b[i];
        den += w[i] * u.b[i];
    }
    if den == 0.0 {
        0.0
    } else {
        num / (den * u.grid.length)
    }
}

fn center_value(b: &[f64]) -> f64 {
    let n = b.len();
    if n % 2 == 1 {
        b[n / 2]
    } else {
        (b[n / 2 - 1] + b[n / 2]) / 2.0
    }
}

pub fn classify(u: &FieldState) -> SymmetryReport {
    let defect = defect(u);
    let classification = if defect < SYMMETRY_TOL {
        Symmetry::Symmetric
    } else {
        Symmetry::Asymmetric
    };
    let b = &u.b;
    let (lo, hi) = b.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let mean = b.iter().sum::<f64>() / b.len() as f64;
    let profile_shape = if hi - lo <= 1e-8 * mean.abs() || hi == lo {
        ProfileShape::Flat
    } else if classification == Symmetry::Symmetric {
        let center = center_value(b);
        let edge = b[0].max(b[b.len() - 1]);
        let edge_lo = b[0].min(b[b.len() - 1]);
        if center > edge {
            ProfileShape::Bell
        } else if center < edge_lo {
            ProfileShape::InvertedBell
        } else {
            ProfileShape::Other
        }
    } else {
        let m = first_moment(u);
        if m < 0.0 {
            ProfileShape::SkewedLeft
        } else if m > 0.0 {
            ProfileShape::SkewedRight
        } else {
            ProfileShape::Other
        }
    };
    SymmetryReport {
        defect,
        classification,
        profile_shape,
    }
}

pub fn near_onset_shape(n: u32) -> OnsetShape {
    if n % 2 == 0 {
        OnsetShape::Symmetric
    } else {
        OnsetShape::HalfPeriod
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::GridSpec;
    use std::f64::consts::PI;

    fn profile(n: usize, f: impl Fn(f64) -> f64) -> FieldState {
        let grid = GridSpec::new(8.0, n).unwrap();
        let b: Vec<f64> = (0..=n).map(|i| f(grid.x(i))).collect();
        let w = b.iter().map(|v| 1.0 - v).collect();
        let t = b.iter().map(|v| 0.1 * v).collect();
        FieldState::new(grid, b, w, t).unwrap()
    }

    #[test]
    fn homogeneous_is_fixed_and_flat() {
        let u = profile(40, |_| 0.3);
        assert_eq!(reflect(&u), u);
        let r = classify(&u);
        assert_eq!(r.defect, 0.0);
        assert_eq!(r.profile_shape, ProfileShape::Flat);
    }

    #[test]
    fn reflection_is_an_involution() {
        let u = profile(37, |x| (x * 1.3).sin() + 0.1 * x);
        assert_eq!(reflect(&reflect(&u)), u);
        assert_eq!(reflect_vec(&reflect_vec(&u.to_vec())), u.to_vec());
        assert_eq!(reflect_vec(&u.to_vec()), reflect(&u).to_vec());
    }

    #[test]
    fn shapes() {
        let bell = profile(40, |x| 0.3 - 0.1 * (2.0 * PI * x / 8.0).cos());
        let inv = profile(40, |x| 0.3 + 0.1 * (2.0 * PI * x / 8.0).cos());
        let left = profile(40, |x| 0.3 + 0.1 * (PI * x / 8.0).cos());
        assert_eq!(classify(&bell).profile_shape, ProfileShape::Bell);
        assert_eq!(classify(&inv).profile_shape, ProfileShape::InvertedBell);
        let r = classify(&left);
        assert_eq!(r.profile_shape, ProfileShape::SkewedLeft);
        assert!(r.defect > 0.1);
        assert_eq!(classify(&reflect(&left)).profile_shape, ProfileShape::SkewedRight);
    }

    #[test]
    fn classification_is_equivariant() {
        let u = profile(41, |x| 0.2 + 0.05 * (x * 0.9).sin());
        let (a, b) = (classify(&u), classify(&reflect(&u)));
        assert_eq!(a.defect, b.defect);
        assert_eq!(a.profile_shape.reflected(), b.profile_shape);
    }

    #[test]
    fn onset_shape_follows_mode_parity() {
        assert_eq!(near_onset_shape(2), OnsetShape::Symmetric);
        assert_eq!(near_onset_shape(1), OnsetShape::HalfPeriod);
        assert_eq!(near_onset_shape(4), OnsetShape::Symmetric);
    }
}
