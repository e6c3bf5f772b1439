//! Method-of-lines semi-discretization on `N + 1` nodes with ghost-node
//! Neumann boundaries.
//!
//! Unknowns are ordered node-major, `(B₀, W₀, T₀, B₁, W₁, T₁, …)`, so the
//! Jacobian is block tridiagonal with 3×3 blocks and fits a band of width 3
//! on both sides of the diagonal.

use crate::banded::BandedMatrix;
use crate::error::{Error, Result};
use crate::model::{reaction_jacobian, reaction_unchecked, HomogeneousState, ModelParams};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

pub const COMPONENTS: usize = 3;
/// Half bandwidth of the node-major Jacobian.
pub const BANDWIDTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub length: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn new(length: f64, n: usize) -> Result<Self> {
        if n < 8 {
            return Err(Error::invalid(format!("grid needs N >= 8 intervals, got {n}")));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::invalid(format!("domain length must be positive, got {length}")));
        }
        Ok(Self { length, n })
    }

    pub fn h(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn nodes(&self) -> usize {
        self.n + 1
    }

    pub fn dim(&self) -> usize {
        COMPONENTS * self.nodes()
    }

    pub fn x(&self, i: usize) -> f64 {
        if i == self.n {
            self.length
        } else {
            i as f64 * self.h()
        }
    }

    /// Trapezoid quadrature weights.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.h();
        (0..self.nodes())
            .map(|i| if i == 0 || i == self.n { h / 2.0 } else { h })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    pub grid: GridSpec,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    #[serde(rename = "T")]
    pub t: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    x: f64,
    #[serde(rename = "B")]
    b: f64,
    #[serde(rename = "W")]
    w: f64,
    #[serde(rename = "T")]
    t: f64,
}

impl FieldState {
    pub fn new(grid: GridSpec, b: Vec<f64>, w: Vec<f64>, t: Vec<f64>) -> Result<Self> {
        let n = grid.nodes();
        if b.len() != n || w.len() != n || t.len() != n {
            return Err(Error::invalid(format!(
                "profile lengths ({}, {}, {}) do not match {n} nodes",
                b.len(),
                w.len(),
                t.len()
            )));
        }
        Ok(Self { grid, b, w, t })
    }

    pub fn homogeneous(grid: GridSpec, u: &HomogeneousState<f64>) -> Self {
        let n = grid.nodes();
        Self {
            grid,
            b: vec![u.b; n],
            w: vec![u.w; n],
            t: vec![u.t; n],
        }
    }

    /// Node-major vector.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.grid.dim());
        for i in 0..self.grid.nodes() {
            v.extend_from_slice(&[self.b[i], self.w[i], self.t[i]]);
        }
        v
    }

    pub fn from_vec(grid: GridSpec, v: &[f64]) -> Result<Self> {
        if v.len() != grid.dim() {
            return Err(Error::invalid(format!(
                "vector of length {} does not match grid dimension {}",
                v.len(),
                grid.dim()
            )));
        }
        let col = |c: usize| v.iter().skip(c).step_by(COMPONENTS).copied().collect();
        Ok(Self {
            grid,
            b: col(0),
            w: col(1),
            t: col(2),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.b.iter().chain(&self.w).chain(&self.t).all(|v| v.is_finite())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        for i in 0..self.grid.nodes() {
            wr.serialize(CsvRow {
                x: self.grid.x(i),
                b: self.b[i],
                w: self.w[i],
                t: self.t[i],
            })?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads `x,B,W,T` rows; lines starting with `#` are skipped. The grid
    /// is rebuilt from the node count and the last `x`.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let rows: Vec<CsvRow> = rd.deserialize().collect::<std::result::Result<_, _>>()?;
        if rows.len() < 2 {
            return Err(Error::invalid("field CSV needs at least two rows"));
        }
        let grid = GridSpec::new(rows[rows.len() - 1].x, rows.len() - 1)?;
        Ok(Self {
            grid,
            b: rows.iter().map(|r| r.b).collect(),
            w: rows.iter().map(|r| r.w).collect(),
            t: rows.iter().map(|r| r.t).collect(),
        })
    }
}

/// Neumann Laplacian of one component, written into `out`.
///
/// The interior stencil is summed as `(u[i−1] + u[i+1]) − 2u[i]`, which is
/// symmetric under index reversal, so mirrored inputs give mirrored outputs
/// bit for bit.
pub fn neumann_laplacian(u: &[f64], h: f64, out: &mut [f64]) {
    let n = u.len() - 1;
    let ih2 = 1.0 / (h * h);
    out[0] = 2.0 * (u[1] - u[0]) * ih2;
    out[n] = 2.0 * (u[n - 1] - u[n]) * ih2;
    for i in 1..n {
        out[i] = ((u[i - 1] + u[i + 1]) - 2.0 * u[i]) * ih2;
    }
}

/// Right-hand side on node-major vectors, with no validation.
pub fn rhs_into(grid: &GridSpec, u: &[f64], p: f64, params: &ModelParams<f64>, out: &mut [f64]) {
    let nodes = grid.nodes();
    let ih2 = 1.0 / (grid.h() * grid.h());
    let lap = |c: usize, i: usize| -> f64 {
        let at = |j: usize| u[COMPONENTS * j + c];
        if i == 0 {
            2.0 * (at(1) - at(0)) * ih2
        } else if i == nodes - 1 {
            2.0 * (at(i - 1) - at(i)) * ih2
        } else {
            ((at(i - 1) + at(i + 1)) - 2.0 * at(i)) * ih2
        }
    };
    for i in 0..nodes {
        let k = COMPONENTS * i;
        let r = reaction_unchecked([u[k], u[k + 1], u[k + 2]], p, params);
        out[k] = r[0] + params.diff_b * lap(0, i);
        out[k + 1] = r[1] + params.diff_w * lap(1, i);
        out[k + 2] = r[2];
    }
}

pub fn rhs(grid: &GridSpec, u: &[f64], p: f64, params: &ModelParams<f64>) -> Vec<f64> {
    let mut out = vec![0.0; u.len()];
    rhs_into(grid, u, p, params, &mut out);
    out
}

/// Time derivative of a field state.
pub fn semidiscrete_rhs(state: &FieldState, p: f64, params: &ModelParams<f64>) -> Result<FieldState> {
    if !state.is_finite() || !p.is_finite() {
        return Err(Error::invalid("non-finite state or precipitation"));
    }
    let out = rhs(&state.grid, &state.to_vec(), p, params);
    FieldState::from_vec(state.grid, &out)
}

/// Banded Jacobian of [`rhs`] with respect to the node-major unknowns.
pub fn jacobian(grid: &GridSpec, u: &[f64], p: f64, params: &ModelParams<f64>) -> BandedMatrix<f64> {
    let nodes = grid.nodes();
    let dim = grid.dim();
    let ih2 = 1.0 / (grid.h() * grid.h());
    let mut jac = BandedMatrix::zeros(dim, BANDWIDTH, BANDWIDTH);
    for i in 0..nodes {
        let k = COMPONENTS * i;
        let jr = reaction_jacobian([u[k], u[k + 1], u[k + 2]], p, params);
        for a in 0..3 {
            for b in 0..3 {
                jac.set(k + a, k + b, jr[a][b]);
            }
        }
        for (c, diff) in [(0, params.diff_b), (1, params.diff_w)] {
            let row = k + c;
            let dc = diff * ih2;
            if i == 0 {
                jac.add(row, row, -2.0 * dc);
                jac.add(row, row + COMPONENTS, 2.0 * dc);
            } else if i == nodes - 1 {
                jac.add(row, row, -2.0 * dc);
                jac.add(row, row - COMPONENTS, 2.0 * dc);
            } else {
                jac.add(row, row, -2.0 * dc);
                jac.add(row, row - COMPONENTS, dc);
                jac.add(row, row + COMPONENTS, dc);
            }
        }
    }
    jac
}

pub fn semidiscrete_jacobian(state: &FieldState, p: f64, params: &ModelParams<f64>) -> BandedMatrix<f64> {
    jacobian(&state.grid, &state.to_vec(), p, params)
}

/// `∂F/∂p`, which is `1` in every `W` row and `−wT` in every `T` row.
pub fn rhs_dp(grid: &GridSpec, u: &[f64], params: &ModelParams<f64>) -> Vec<f64> {
    let mut out = vec![0.0; grid.dim()];
    for i in 0..grid.nodes() {
        out[COMPONENTS * i + 1] = 1.0;
        out[COMPONENTS * i + 2] = -params.w * u[COMPONENTS * i + 2];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{equilibrium, BranchTag};
    use crate::stability::{eigenvalues3, mode_matrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type P = ModelParams<f64>;

    fn upper(p: f64, params: &P) -> HomogeneousState<f64> {
        equilibrium(p, BranchTag::Upper, params).unwrap().unwrap()
    }

    fn random_state(grid: GridSpec, seed: u64) -> FieldState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = grid.nodes();
        FieldState {
            grid,
            b: (0..n).map(|_| rng.random_range(0.0..0.5)).collect(),
            w: (0..n).map(|_| rng.random_range(1.0..20.0)).collect(),
            t: (0..n).map(|_| rng.random_range(0.0..0.2)).collect(),
        }
    }

    #[test]
    fn grid_rejects_coarse_meshes() {
        assert!(GridSpec::new(8.0, 7).is_err());
        let g = GridSpec::new(8.0, 40).unwrap();
        assert_eq!(g.x(40), 8.0);
        assert_eq!(g.dim(), 123);
    }

    #[test]
    fn homogeneous_equilibrium_is_stationary() {
        let params = P::calibrated();
        let grid = GridSpec::new(8.0, 40).unwrap();
        let u = FieldState::homogeneous(grid, &upper(1.2, &params));
        let f = semidiscrete_rhs(&u, 1.2, &params).unwrap();
        let m = f.to_vec().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(m < 1e-12, "{m}");
    }

    #[test]
    fn rhs_is_reflection_equivariant_bitwise() {
        let params = P::calibrated();
        let grid = GridSpec::new(8.0, 33).unwrap();
        let u = random_state(grid, 5);
        let mut r = u.clone();
        r.b.reverse();
        r.w.reverse();
        r.t.reverse();
        let f = semidiscrete_rhs(&u, 0.9, &params).unwrap();
        let mut fr = semidiscrete_rhs(&r, 0.9, &params).unwrap();
        fr.b.reverse();
        fr.w.reverse();
        fr.t.reverse();
        assert_eq!(f, fr);
    }

    #[test]
    fn laplacian_conserves_trapezoid_mass() {
        let grid = GridSpec::new(8.0, 50).unwrap();
        let u: Vec<f64> = (0..51).map(|i| (i as f64 * 0.37).sin() + 2.0).collect();
        let mut out = vec![0.0; 51];
        neumann_laplacian(&u, grid.h(), &mut out);
        let mass: f64 = grid.weights().iter().zip(&out).map(|(w, v)| w * v).sum();
        assert!(mass.abs() < 1e-11, "{mass}");
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let params = P::calibrated();
        let grid = GridSpec::new(8.0, 16).unwrap();
        let state = random_state(grid, 9);
        let u = state.to_vec();
        let jac = jacobian(&grid, &u, 1.1, &params);
        let dim = grid.dim();
        for j in 0..dim {
            let step = 1e-6 * (1.0 + u[j].abs());
            let (mut up, mut dn) = (u.clone(), u.clone());
            up[j] += step;
            dn[j] -= step;
            let (fp, fm) = (rhs(&grid, &up, 1.1, &params), rhs(&grid, &dn, 1.1, &params));
            for i in 0..dim {
                let fd = (fp[i] - fm[i]) / (2.0 * step);
                let an = jac.get(i, j);
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "({i},{j}) {fd} vs {an}");
            }
        }
    }

    #[test]
    fn diffusion_rows_sum_to_zero_on_bare_soil() {
        let params = P::calibrated();
        let grid = GridSpec::new(8.0, 20).unwrap();
        let bare = FieldState::homogeneous(grid, &HomogeneousState::bare_soil(1.0, &params));
        let jac = semidiscrete_jacobian(&bare, 1.0, &params);
        let jr = reaction_jacobian(bare.to_vec()[..3].try_into().unwrap(), 1.0, &params);
        for i in 0..grid.dim() {
            let c = i % 3;
            let s: f64 = (0..grid.dim()).map(|j| jac.get(i, j)).sum::<f64>()
                - jr[c].iter().sum::<f64>();
            assert!(s.abs() < 1e-9, "row {i}: {s}");
        }
    }

    #[test]
    fn cosine_mode_growth_matches_mode_matrix() {
        // The discrete Laplacian maps cos(nπx/L) to itself times
        // −(2/h²)(1 − cos(nπh/L)); the linearised dynamics of the mode is
        // then a 3×3 problem whose leading eigenvalue approaches the
        // continuum one at N = 200.
        let params = P::calibrated();
        let p = 1.14;
        let grid = GridSpec::new(8.0, 200).unwrap();
        let u0 = upper(p, &params);
        let base = FieldState::homogeneous(grid, &u0).to_vec();
        let jac = jacobian(&grid, &base, p, &params);
        let modes: Vec<f64> = (0..grid.nodes())
            .map(|i| (2.0 * std::f64::consts::PI * grid.x(i) / 8.0).cos())
            .collect();
        let w = grid.weights();
        let norm: f64 = modes.iter().zip(&w).map(|(m, w)| m * m * w).sum();
        let mut reduced = [[0.0; 3]; 3];
        for b in 0..3 {
            let mut v = vec![0.0; grid.dim()];
            for i in 0..grid.nodes() {
                v[3 * i + b] = modes[i];
            }
            let jv = jac.matvec(&v);
            for a in 0..3 {
                let proj: f64 = (0..grid.nodes()).map(|i| jv[3 * i + a] * modes[i] * w[i]).sum();
                reduced[a][b] = proj / norm;
            }
        }
        let discrete = eigenvalues3(&reduced)[0].re;
        let analytic = eigenvalues3(&mode_matrix(&u0, p, 2, &params).unwrap().a)[0].re;
        let scale = analytic.abs().max(1e-3);
        assert!((discrete - analytic).abs() < 1e-3 * scale.max(0.01), "{discrete} vs {analytic}");
    }

    #[test]
    fn csv_and_json_round_trip_exactly() {
        let grid = GridSpec::new(8.0, 12).unwrap();
        let s = random_state(grid, 1);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = FieldState::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.b, s.b);
        assert_eq!(back.w, s.w);
        assert_eq!(back.t, s.t);
        assert_eq!(back.grid.n, 12);
        let json = serde_json::to_string(&s).unwrap();
        let back: FieldState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rhs_rejects_non_finite() {
        let params = P::calibrated();
        let grid = GridSpec::new(8.0, 10).unwrap();
        let mut s = random_state(grid, 2);
        s.w[3] = f64::NAN;
        assert!(semidiscrete_rhs(&s, 1.0, &params).is_err());
    }

    #[test]
    fn vector_round_trip() {
        let grid = GridSpec::new(8.0, 10).unwrap();
        let s = random_state(grid, 3);
        assert_eq!(FieldState::from_vec(grid, &s.to_vec()).unwrap(), s);
        assert!(FieldState::from_vec(grid, &[0.0; 5]).is_err());
    }
}
