//! Banded matrices and LU factorization with partial pivoting.
//!
//! Storage is row-major with room for the `kl` extra super-diagonals that
//! pivoting can fill in, as in LAPACK `gbtrf`. Single-bordered systems
//! `[A b; cᵀ d]` are solved by block elimination on top of the band LU.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix<S> {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<S>,
}

impl<S: Real> BandedMatrix<S> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            data: vec![S::zero(); n * (kl + ku + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kl(&self) -> usize {
        self.kl
    }

    pub fn ku(&self) -> usize {
        self.ku
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.kl >= i && j <= i + self.ku
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            S::zero()
        }
    }

    /// Panics outside the band.
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: S) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.data[k] = self.data[k] + v;
    }

    /// `A − σ I`.
    pub fn shifted(&self, sigma: S) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            out.add(i, i, -sigma);
        }
        out
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                self.row_range(i)
                    .fold(S::zero(), |acc, j| acc + self.data[self.idx(i, j)] * x[j])
            })
            .collect()
    }

    pub fn matvec_transpose(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![S::zero(); self.n];
        for i in 0..self.n {
            for j in self.row_range(i) {
                y[j] = y[j] + self.data[self.idx(i, j)] * x[i];
            }
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<S>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn factor(&self) -> Result<BandedLu<S>> {
        BandedLu::new(self)
    }
}

/// `P A = L U` for a band matrix; `U` has `kl + ku` super-diagonals.
#[derive(Debug, Clone)]
pub struct BandedLu<S> {
    n: usize,
    kl: usize,
    /// Super-diagonals of `U` after fill-in.
    ku2: usize,
    u: Vec<S>,
    mult: Vec<S>,
    perm: Vec<usize>,
}

impl<S: Real> BandedLu<S> {
    pub fn new(a: &BandedMatrix<S>) -> Result<Self> {
        let (n, kl) = (a.n, a.kl);
        let ku2 = a.kl + a.ku;
        let w = kl + ku2 + 1;
        let mut u = vec![S::zero(); n * w];
        let at = |i: usize, j: usize| i * w + (j + kl - i);
        for i in 0..n {
            for j in a.row_range(i) {
                u[at(i, j)] = a.get(i, j);
            }
        }
        let mut mult = vec![S::zero(); n * kl.max(1)];
        let mut perm = vec![0; n];
        for k in 0..n {
            let last = (k + kl + 1).min(n);
            let mut piv = k;
            let mut best = u[at(k, k)].abs();
            for r in k + 1..last {
                let v = u[at(r, k)].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == S::zero() || !best.is_finite() {
                return Err(Error::Singular(k));
            }
            perm[k] = piv;
            let cols = k..(k + ku2 + 1).min(n);
            if piv != k {
                for j in cols.clone() {
                    u.swap(at(k, j), at(piv, j));
                }
            }
            let pivot = u[at(k, k)];
            for r in k + 1..last {
                let m = u[at(r, k)] / pivot;
                mult[k * kl + (r - k - 1)] = m;
                u[at(r, k)] = S::zero();
                if m != S::zero() {
                    for j in k + 1..cols.end {
                        u[at(r, j)] = u[at(r, j)] - m * u[at(k, j)];
                    }
                }
            }
        }
        Ok(Self {
            n,
            kl,
            ku2,
            u,
            mult,
            perm,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn ui(&self, i: usize, j: usize) -> S {
        self.u[i * (self.kl + self.ku2 + 1) + (j + self.kl - i)]
    }

    pub fn solve_in_place(&self, b: &mut [S]) {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        for k in 0..n {
            b.swap(k, self.perm[k]);
            let bk = b[k];
            if bk != S::zero() {
                for r in k + 1..(k + self.kl + 1).min(n) {
                    b[r] = b[r] - self.mult[k * self.kl + (r - k - 1)] * bk;
                }
            }
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..(i + self.ku2 + 1).min(n) {
                s = s - self.ui(i, j) * b[j];
            }
            b[i] = s / self.ui(i, i);
        }
    }

    pub fn solve(&self, b: &[S]) -> Vec<S> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[S]) -> Vec<S> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut z = b.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for j in i.saturating_sub(self.ku2)..i {
                s = s - self.ui(j, i) * z[j];
            }
            z[i] = s / self.ui(i, i);
        }
        for k in (0..n).rev() {
            let mut s = z[k];
            for r in k + 1..(k + self.kl + 1).min(n) {
                s = s - self.mult[k * self.kl + (r - k - 1)] * z[r];
            }
            z[k] = s;
            z.swap(k, self.perm[k]);
        }
        z
    }

    /// Sign of `det A` (±1).
    pub fn det_sign(&self) -> S {
        let mut neg = false;
        for k in 0..self.n {
            if self.perm[k] != k {
                neg = !neg;
            }
            if self.ui(k, k) < S::zero() {
                neg = !neg;
            }
        }
        if neg {
            -S::one()
        } else {
            S::one()
        }
    }

    pub fn log_abs_det(&self) -> S {
        (0..self.n).fold(S::zero(), |acc, k| acc + self.ui(k, k).abs().ln())
    }

    /// Smallest `|U_kk|` relative to the largest; a cheap singularity probe.
    pub fn pivot_ratio(&self) -> S {
        let (mut lo, mut hi) = (S::infinity(), S::zero());
        for k in 0..self.n {
            let v = self.ui(k, k).abs();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        lo / hi
    }
}

pub fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (x, y)| acc + *x * *y)
}

pub fn norm2<S: Real>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

pub fn norm_inf<S: Real>(a: &[S]) -> S {
    a.iter().fold(S::zero(), |m, v| m.max(v.abs()))
}

/// The bordered matrix `[A b; cᵀ d]`, solved by block elimination with the
/// factorization of `A` (Govaerts–Pryce mixed variant) plus one step of
/// iterative refinement.
pub struct Bordered<'a, S> {
    a: &'a BandedMatrix<S>,
    lu: &'a BandedLu<S>,
    b: &'a [S],
    c: &'a [S],
    d: S,
    v: Vec<S>,
    w: Vec<S>,
    delta: S,
    delta_star: S,
}

impl<'a, S: Real> Bordered<'a, S> {
    pub fn new(
        a: &'a BandedMatrix<S>,
        lu: &'a BandedLu<S>,
        b: &'a [S],
        c: &'a [S],
        d: S,
    ) -> Result<Self> {
        let v = lu.solve(b);
        let w = lu.solve_transpose(c);
        let delta = d - dot(c, &v);
        let delta_star = d - dot(b, &w);
        if delta == S::zero() || delta_star == S::zero() || !delta.is_finite() {
            return Err(Error::Singular(a.n()));
        }
        Ok(Self {
            a,
            lu,
            b,
            c,
            d,
            v,
            w,
            delta,
            delta_star,
        })
    }

    /// Schur complement `d − cᵀ A⁻¹ b`.
    pub fn schur(&self) -> S {
        self.delta
    }

    /// Sign of the bordered determinant.
    pub fn det_sign(&self) -> S {
        self.lu.det_sign() * self.delta.signum()
    }

    fn solve_once(&self, f: &[S], g: S) -> (Vec<S>, S) {
        let y1 = (g - dot(&self.w, f)) / self.delta_star;
        let mut xi: Vec<S> = f.iter().zip(self.b).map(|(fi, bi)| *fi - *bi * y1).collect();
        self.lu.solve_in_place(&mut xi);
        let g1 = g - dot(self.c, &xi) - self.d * y1;
        let y2 = g1 / self.delta;
        let x = xi.iter().zip(&self.v).map(|(a, b)| *a - *b * y2).collect();
        (x, y1 + y2)
    }

    pub fn solve(&self, f: &[S], g: S) -> (Vec<S>, S) {
        let (mut x, mut y) = self.solve_once(f, g);
        let ax = self.a.matvec(&x);
        let rf: Vec<S> = (0..f.len()).map(|i| f[i] - ax[i] - self.b[i] * y).collect();
        let rg = g - dot(self.c, &x) - self.d * y;
        let (dx, dy) = self.solve_once(&rf, rg);
        for (xi, di) in x.iter_mut().zip(dx) {
            *xi = *xi + di;
        }
        y = y + dy;
        (x, y)
    }
}
