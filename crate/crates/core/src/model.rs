//! Reaction kinetics, spatially homogeneous equilibria and the pointwise
//! reaction Jacobian of the biomass / water / toxicity system.
//!
//! With `u = (B, W, T)` the reaction part reads
//!
//! ```text
//! f = c B² W − (d + s T) B
//! g = p − r B² W − l W
//! h = q (d + s T) B − (k + w p) T
//! ```
//!
//! Only `B` and `W` diffuse. Everything here is generic over [`Real`] so the
//! same code runs in `f32` and `f64`.

use crate::error::{Error, Result};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

/// A `(B, W, T)` triple of values or rates.
pub type Triple<S> = [S; 3];
/// Row-major 3×3 matrix.
pub type Mat3<S> = [[S; 3]; 3];

/// Rate and diffusion constants plus the domain length.
///
/// Field names follow the usual symbols; the JSON keys are the symbols
/// themselves (`"c"`, `"d"`, …, `"D_B"`, `"D_W"`, `"L"`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[serde(bound(deserialize = "S: Real + Deserialize<'de>", serialize = "S: Serialize"))]
pub struct ModelParams<S> {
    /// Biomass growth rate.
    pub c: S,
    /// Biomass death rate.
    pub d: S,
    /// Toxin decay rate.
    pub k: S,
    /// Evaporation rate.
    pub l: S,
    /// Fraction of dead biomass turned into toxins.
    pub q: S,
    /// Water uptake rate.
    pub r: S,
    /// Sensitivity of plants to toxicity.
    pub s: S,
    /// Wash-out of toxins by precipitation.
    pub w: S,
    #[serde(rename = "D_B")]
    pub diff_b: S,
    #[serde(rename = "D_W", alias = "D_w")]
    pub diff_w: S,
    #[serde(rename = "L")]
    pub length: S,
}

impl<S: Real> Default for ModelParams<S> {
    fn default() -> Self {
        Self {
            c: S::lit(0.002),
            d: S::lit(0.01),
            k: S::lit(0.01),
            l: S::lit(0.01),
            q: S::lit(0.05),
            r: S::lit(0.35),
            s: S::lit(0.2),
            w: S::lit(0.001),
            diff_b: S::lit(0.01),
            diff_w: S::lit(0.8),
            length: S::lit(8.0),
        }
    }
}

impl<S: Real> ModelParams<S> {
    /// The tabulated defaults with the toxin fraction halved (`q = 0.025`).
    ///
    /// This is the set whose homogeneous fold sits at `p ≈ 0.64` with
    /// `B ≈ 0.156`, and whose `L = 8` Turing points sit at `p ≈ 1.14`
    /// (`n = 2`) and `p ≈ 1.06` (`n = 1`). Only the product `s·q` enters the
    /// biomass and water dynamics, so halving `s` instead would give the same
    /// `B`, `W` and a doubled `T`.
    pub fn calibrated() -> Self {
        Self {
            q: S::lit(0.025),
            ..Self::default()
        }
    }

    pub fn with_length(mut self, length: S) -> Self {
        self.length = length;
        self
    }

    /// Checks that every constant is strictly positive and finite.
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("c", self.c),
            ("d", self.d),
            ("k", self.k),
            ("l", self.l),
            ("q", self.q),
            ("r", self.r),
            ("s", self.s),
            ("w", self.w),
            ("D_B", self.diff_b),
            ("D_W", self.diff_w),
            ("L", self.length),
        ];
        for (name, v) in named {
            if !v.is_finite() || v <= S::zero() {
                return Err(Error::invalid(format!(
                    "parameter {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Toxin removal rate `k + w p`.
    #[inline]
    pub fn toxin_removal(&self, p: S) -> S {
        self.k + self.w * p
    }
}

/// Which family a homogeneous equilibrium belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchTag {
    BareSoil,
    Upper,
    Lower,
}

impl BranchTag {
    pub fn as_str(self) -> &'static str {
        match self {
            BranchTag::BareSoil => "bare_soil",
            BranchTag::Upper => "upper",
            BranchTag::Lower => "lower",
        }
    }
}

impl std::str::FromStr for BranchTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bare_soil" | "bare" => Ok(BranchTag::BareSoil),
            "upper" => Ok(BranchTag::Upper),
            "lower" => Ok(BranchTag::Lower),
            other => Err(Error::invalid(format!("unknown branch tag {other:?}"))),
        }
    }
}

/// A spatially uniform steady state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousState<S> {
    #[serde(rename = "B")]
    pub b: S,
    #[serde(rename = "W")]
    pub w: S,
    #[serde(rename = "T")]
    pub t: S,
    pub branch_tag: BranchTag,
}

impl<S: Real> HomogeneousState<S> {
    pub fn bare_soil(p: S, params: &ModelParams<S>) -> Self {
        Self {
            b: S::zero(),
            w: p / params.l,
            t: S::zero(),
            branch_tag: BranchTag::BareSoil,
        }
    }

    pub fn triple(&self) -> Triple<S> {
        [self.b, self.w, self.t]
    }

    pub fn is_vegetated(&self) -> bool {
        self.branch_tag != BranchTag::BareSoil
    }
}

/// Coefficients of the biomass quadratic `a2 B² + a1 B + a0 = 0` whose
/// positive roots are the vegetated equilibria.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadraticCoeffs<S> {
    pub a2: S,
    pub a1: S,
    pub a0: S,
    pub discriminant: S,
}

impl<S: Real> QuadraticCoeffs<S> {
    /// Double-root test `|Δ| ≤ 1e-10 · a1²`.
    pub fn is_degenerate(&self) -> bool {
        self.discriminant.abs() <= S::lit(1e-10) * self.a1 * self.a1
    }
}

fn check_finite<S: Real>(values: &[S], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("non-finite {what}")))
    }
}

fn check_precipitation<S: Real>(p: S) -> Result<()> {
    if !p.is_finite() || p < S::zero() {
        return Err(Error::invalid(format!(
            "precipitation must be finite and non-negative, got {p}"
        )));
    }
    Ok(())
}

/// Reaction rates `(f, g, h)` at `u = (B, W, T)`.
pub fn reaction<S: Real>(u: Triple<S>, p: S, params: &ModelParams<S>) -> Result<Triple<S>> {
    check_finite(&u, "state")?;
    check_precipitation(p)?;
    Ok(reaction_unchecked(u, p, params))
}

/// [`reaction`] without argument validation, for inner loops.
#[inline]
pub fn reaction_unchecked<S: Real>(u: Triple<S>, p: S, params: &ModelParams<S>) -> Triple<S> {
    let [b, w, t] = u;
    let b2w = b * b * w;
    let loss = params.d + params.s * t;
    [
        params.c * b2w - loss * b,
        p - params.r * b2w - params.l * w,
        params.q * loss * b - params.toxin_removal(p) * t,
    ]
}

/// Largest absolute reaction rate.
pub fn reaction_residual<S: Real>(u: Triple<S>, p: S, params: &ModelParams<S>) -> S {
    reaction_unchecked(u, p, params)
        .iter()
        .fold(S::zero(), |m, v| m.max(v.abs()))
}

pub fn quadratic_coeffs<S: Real>(p: S, params: &ModelParams<S>) -> Result<QuadraticCoeffs<S>> {
    check_precipitation(p)?;
    let removal = params.toxin_removal(p);
    let a2 = params.s * params.q * params.c * p + params.d * params.r * removal;
    let a1 = -removal * params.c * p;
    let a0 = removal * params.d * params.l;
    let discriminant = a1 * a1 - S::lit(4.0) * a0 * a2;
    Ok(QuadraticCoeffs {
        a2,
        a1,
        a0,
        discriminant,
    })
}

/// Real roots of the biomass quadratic as `(larger, smaller)`; equal for a
/// double root, `None` when the discriminant is negative. Roots are not
/// filtered for sign.
pub fn biomass_roots<S: Real>(qc: &QuadraticCoeffs<S>) -> Option<(S, S)> {
    if qc.is_degenerate() {
        let b = -qc.a1 / (S::lit(2.0) * qc.a2);
        return Some((b, b));
    }
    if qc.discriminant < S::zero() {
        return None;
    }
    // Cancellation-free form: the root with the larger magnitude comes from
    // adding like-signed terms, the other from Vieta.
    let sq = qc.discriminant.sqrt();
    let big = -(qc.a1 + sq.copysign(qc.a1)) / S::lit(2.0);
    let r1 = big / qc.a2;
    let r2 = qc.a0 / big;
    Some((r1.max(r2), r1.min(r2)))
}

fn vegetated_state<S: Real>(b: S, p: S, params: &ModelParams<S>, tag: BranchTag) -> HomogeneousState<S> {
    let w = p / (params.r * b * b + params.l);
    let t = (params.c * b * w - params.d) / params.s;
    HomogeneousState {
        b,
        w,
        t,
        branch_tag: tag,
    }
}

/// All homogeneous equilibria at precipitation `p`.
///
/// Always contains the bare-soil state; adds the upper and lower vegetated
/// states when the discriminant is positive, or a single `Upper` state at a
/// double root. Negative biomass roots are dropped with a log message.
pub fn homogeneous_equilibria<S: Real>(
    p: S,
    params: &ModelParams<S>,
) -> Result<Vec<HomogeneousState<S>>> {
    let qc = quadratic_coeffs(p, params)?;
    let mut out = vec![HomogeneousState::bare_soil(p, params)];
    let Some((hi, lo)) = biomass_roots(&qc) else {
        return Ok(out);
    };
    let mut push = |b: S, tag| {
        if b > S::zero() {
            out.push(vegetated_state(b, p, params, tag));
        } else {
            log::debug!("dropping non-physical biomass root {b} at p = {p}");
        }
    };
    if qc.is_degenerate() {
        push(hi, BranchTag::Upper);
    } else {
        push(hi, BranchTag::Upper);
        push(lo, BranchTag::Lower);
    }
    Ok(out)
}

/// The equilibrium with the given tag at `p`, if it exists.
pub fn equilibrium<S: Real>(
    p: S,
    tag: BranchTag,
    params: &ModelParams<S>,
) -> Result<Option<HomogeneousState<S>>> {
    let all = homogeneous_equilibria(p, params)?;
    let found = all.iter().copied().find(|s| s.branch_tag == tag);
    // At a double root the single state stands in for the lower branch too.
    if found.is_none() && tag == BranchTag::Lower && all.len() == 2 {
        return Ok(Some(HomogeneousState {
            branch_tag: BranchTag::Lower,
            ..all[1]
        }));
    }
    Ok(found)
}

/// Precipitation at which the two vegetated branches merge (zero of the
/// discriminant), together with the biomass of the double root.
pub fn fold_point<S: Real>(params: &ModelParams<S>) -> Option<(S, S)> {
    let disc = |p: S| quadratic_coeffs(p, params).map(|q| q.discriminant).ok();
    // Δ(0) < 0 always; grow the bracket until Δ turns positive.
    let mut lo = S::zero();
    let mut hi = S::lit(0.125);
    let mut steps = 0;
    while disc(hi)? <= S::zero() {
        lo = hi;
        hi = hi + hi;
        steps += 1;
        if steps > 40 {
            return None;
        }
    }
    // The first crossing may sit below `lo` only if Δ dips twice; scan the
    // last bracket finely to catch the first sign change.
    let samples = 64;
    let mut a = lo;
    let step = (hi - lo) / S::lit(samples as f64);
    for i in 1..=samples {
        let b = lo + step * S::lit(i as f64);
        if disc(b)? > S::zero() {
            hi = b;
            break;
        }
        a = b;
    }
    lo = a;
    for _ in 0..200 {
        let mid = (lo + hi) / S::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if disc(mid)? > S::zero() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let p = hi;
    let qc = quadratic_coeffs(p, params).ok()?;
    Some((p, -qc.a1 / (S::lit(2.0) * qc.a2)))
}

/// Partial derivatives of `(f, g, h)` with respect to `(B, W, T)`.
pub fn reaction_jacobian<S: Real>(u: Triple<S>, p: S, params: &ModelParams<S>) -> Mat3<S> {
    let [b, w, t] = u;
    let two = S::lit(2.0);
    let loss = params.d + params.s * t;
    [
        [two * params.c * b * w - loss, params.c * b * b, -params.s * b],
        [-two * params.r * b * w, -params.r * b * b - params.l, S::zero()],
        [params.q * loss, S::zero(), params.q * params.s * b - params.toxin_removal(p)],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    type P = ModelParams<f64>;

    /// Plain Newton on the full 3×3 reaction system, independent of the
    /// quadratic reduction.
    fn newton_equilibrium(mut u: Triple<f64>, p: f64, params: &P) -> Triple<f64> {
        for _ in 0..60 {
            let r = reaction_unchecked(u, p, params);
            let j = reaction_jacobian(u, p, params);
            let m = nalgebra::Matrix3::from_fn(|i, k| j[i][k]);
            let dx = m.lu().solve(&nalgebra::Vector3::new(-r[0], -r[1], -r[2])).unwrap();
            for i in 0..3 {
                u[i] += dx[i];
            }
            if dx.norm() < 1e-15 * (1.0 + u[1].abs()) {
                break;
            }
        }
        u
    }

    #[test]
    fn defaults_match_table_values() {
        let p = P::default();
        assert_eq!(
            [p.c, p.d, p.k, p.l, p.q, p.r, p.s, p.w, p.diff_b, p.diff_w],
            [0.002, 0.01, 0.01, 0.01, 0.05, 0.35, 0.2, 0.001, 0.01, 0.8]
        );
        assert_eq!(p.length, 8.0);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn bare_soil_is_a_zero_of_the_reaction() {
        let params = P::default();
        let r = reaction([0.0, 1.0 / params.l, 0.0], 1.0, &params).unwrap();
        assert_eq!(r, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn hand_substituted_reaction() {
        let params = P::default();
        let r = reaction([1.0, 1.0, 0.0], 0.0, &params).unwrap();
        let expect = [-0.008, -0.36, 0.0005];
        for i in 0..3 {
            assert!((r[i] - expect[i]).abs() < 1e-15, "{r:?}");
        }
    }

    #[test]
    fn reaction_rejects_non_finite_input() {
        let params = P::default();
        assert!(matches!(
            reaction([f64::NAN, 1.0, 0.0], 1.0, &params),
            Err(Error::InvalidArgument(_))
        ));
        assert!(reaction([0.0, 1.0, 0.0], f64::INFINITY, &params).is_err());
    }

    #[test]
    fn upper_equilibrium_matches_full_newton() {
        for params in [P::default(), P::calibrated()] {
            let states = homogeneous_equilibria(1.2, &params).unwrap();
            assert_eq!(states.len(), 3);
            for s in &states[1..] {
                let oracle = newton_equilibrium(s.triple(), 1.2, &params);
                assert!((oracle[0] - s.b).abs() < 1e-12 * s.b.max(1.0));
                assert!((oracle[1] - s.w).abs() < 1e-10 * s.w);
                assert!(reaction_residual(s.triple(), 1.2, &params) < 1e-12);
            }
            assert!(states[1].b > states[2].b && states[2].b > 0.0);
        }
    }

    #[test]
    fn discriminant_signs() {
        let params = P::calibrated();
        let below = quadratic_coeffs(0.5, &params).unwrap();
        assert!(below.discriminant < 0.0);
        let above = quadratic_coeffs(1.0, &params).unwrap();
        assert!(above.discriminant > 0.0);
        let (hi, lo) = biomass_roots(&above).unwrap();
        assert!(hi > lo && lo > 0.0);
        assert!(above.a2 > 0.0 && above.a0 > 0.0 && above.a1 < 0.0);
    }

    #[test]
    fn fold_of_calibrated_set() {
        let (pc0, b) = fold_point(&P::calibrated()).unwrap();
        assert!((pc0 - 0.64).abs() < 0.005, "{pc0}");
        assert!((b - 0.156).abs() < 0.002, "{b}");
        let qc = quadratic_coeffs(0.64, &P::calibrated()).unwrap();
        // Relative to the scale a1², the discriminant nearly vanishes.
        assert!(qc.discriminant.abs() / (qc.a1 * qc.a1) < 0.02);
        let at = quadratic_coeffs(pc0, &P::calibrated()).unwrap();
        assert!(at.discriminant.abs() / (at.a1 * at.a1) < 1e-6);
    }

    #[test]
    fn fold_of_table_defaults_differs() {
        let (pc0, b) = fold_point(&P::default()).unwrap();
        assert!((pc0 - 0.6925).abs() < 1e-3, "{pc0}");
        assert!((b - 0.1444).abs() < 1e-3, "{b}");
    }

    #[test]
    fn double_root_yields_single_upper_state() {
        let params = P::calibrated();
        let (pc0, b) = fold_point(&params).unwrap();
        let states = homogeneous_equilibria(pc0, &params).unwrap();
        assert_eq!(states.len(), 2);
        assert_eq!(states[1].branch_tag, BranchTag::Upper);
        assert!((states[1].b - b).abs() < 1e-6);
    }

    #[test]
    fn below_fold_only_bare_soil() {
        let states = homogeneous_equilibria(0.5, &P::calibrated()).unwrap();
        assert_eq!(states.len(), 1);
        assert_eq!(states[0].branch_tag, BranchTag::BareSoil);
        assert!((states[0].w - 50.0).abs() < 1e-12);
    }

    #[test]
    fn bare_soil_jacobian_structure() {
        let params = P::default();
        let p = 1.3;
        let j = reaction_jacobian([0.0, p / params.l, 0.0], p, &params);
        assert_eq!(j[0], [-params.d, 0.0, 0.0]);
        assert_eq!(j[1], [0.0, -params.l, 0.0]);
        assert_eq!(j[2], [params.q * params.d, 0.0, -(params.k + params.w * p)]);
    }

    #[test]
    fn simplified_first_entry_on_upper_branch() {
        let params = P::default();
        let s = equilibrium(1.2, BranchTag::Upper, &params).unwrap().unwrap();
        let j = reaction_jacobian(s.triple(), 1.2, &params);
        let simplified = params.c * s.b * s.w;
        assert!((j[0][0] - simplified).abs() < 1e-13);
        assert!((simplified - (params.d + params.s * s.t)).abs() < 1e-13);
    }

    #[test]
    fn generic_over_f32() {
        let params = ModelParams::<f32>::calibrated();
        let states = homogeneous_equilibria(1.2f32, &params).unwrap();
        assert_eq!(states.len(), 3);
        assert!(reaction_residual(states[1].triple(), 1.2, &params) < 1e-5);
        let (pc0, _) = fold_point(&params).unwrap();
        assert!((pc0 - 0.6405).abs() < 1e-3);
    }

    #[test]
    fn json_missing_keys_default() {
        let p: P = serde_json::from_str(r#"{"q": 0.025, "L": 4.0}"#).unwrap();
        assert_eq!(p, P::calibrated().with_length(4.0));
        assert!(serde_json::from_str::<P>(r#"{"qq": 1}"#).is_err());
        let round: P = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(round, p);
    }
}
