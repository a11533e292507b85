//! Small-dimension symmetric tensor algebra.
//!
//! Second-order symmetric tensors are stored in Mandel form: the diagonal
//! components followed by the off-diagonal components scaled by √2. With that
//! scaling the Euclidean dot product of the stored vectors is exactly the
//! Frobenius double contraction of the full matrices, so a fourth-order tensor
//! acting on symmetric tensors is a plain symmetric `m × m` matrix.
//!
//! Component order:
//! - `d = 2`: `(11, 22, √2·12)`
//! - `d = 3`: `(11, 22, 33, √2·23, √2·13, √2·12)`

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

pub const MAX_COMPONENTS: usize = 6;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Relative major-symmetry violation tolerated by [`Tensor4Sym::check_ellipticity`].
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("unsupported dimension {0}, expected 2 or 3")]
    UnsupportedDimension(usize),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("expected {expected} components, got {got}")]
    ComponentCount { expected: usize, got: usize },
    #[error("fourth-order tensor violates major symmetry (max |C_ij - C_ji| = {0:e})")]
    NotSymmetric(f64),
    #[error("ellipticity constant must be positive, got {0}")]
    InvalidConstant(f64),
    #[error("fourth-order tensor is singular")]
    Singular,
}

/// Number of independent components of a symmetric `d × d` tensor.
pub fn components(d: usize) -> usize {
    d * (d + 1) / 2
}

fn check_dim(d: usize) -> Result<(), TensorError> {
    if d == 2 || d == 3 {
        Ok(())
    } else {
        Err(TensorError::UnsupportedDimension(d))
    }
}

/// Maps a Mandel slot to its (row, col) index pair.
pub fn mandel_index(d: usize, slot: usize) -> (usize, usize) {
    match (d, slot) {
        (2, 0) => (0, 0),
        (2, 1) => (1, 1),
        (2, 2) => (0, 1),
        (3, 0) => (0, 0),
        (3, 1) => (1, 1),
        (3, 2) => (2, 2),
        (3, 3) => (1, 2),
        (3, 4) => (0, 2),
        (3, 5) => (0, 1),
        _ => panic!("invalid Mandel slot {slot} for d = {d}"),
    }
}

/// Symmetric second-order tensor in dimension 2 or 3.
#[derive(Clone, Copy, PartialEq)]
pub struct SymTensor2 {
    dim: usize,
    c: [f64; MAX_COMPONENTS],
}

impl fmt::Debug for SymTensor2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymTensor2")
            .field("dim", &self.dim)
            .field("mandel", &self.as_slice())
            .finish()
    }
}

impl SymTensor2 {
    pub fn zero(d: usize) -> Self {
        assert!(d == 2 || d == 3, "unsupported dimension {d}");
        Self {
            dim: d,
            c: [0.0; MAX_COMPONENTS],
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut t = Self::zero(d);
        for i in 0..d {
            t.c[i] = 1.0;
        }
        t
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut t = Self::zero(values.len());
        t.c[..values.len()].copy_from_slice(values);
        t
    }

    /// Builds from Mandel components (`d(d+1)/2` values).
    pub fn from_mandel(d: usize, values: &[f64]) -> Result<Self, TensorError> {
        check_dim(d)?;
        let m = components(d);
        if values.len() != m {
            return Err(TensorError::ComponentCount {
                expected: m,
                got: values.len(),
            });
        }
        let mut t = Self::zero(d);
        t.c[..m].copy_from_slice(values);
        Ok(t)
    }

    /// Builds from a full matrix given row-major; only the upper triangle is
    /// read after symmetrization `(M + Mᵀ)/2`.
    pub fn from_matrix(d: usize, rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        check_dim(d)?;
        if rows.len() != d || rows.iter().any(|r| r.len() != d) {
            return Err(TensorError::ComponentCount {
                expected: d * d,
                got: rows.iter().map(Vec::len).sum(),
            });
        }
        let mut t = Self::zero(d);
        for slot in 0..components(d) {
            let (i, j) = mandel_index(d, slot);
            t.c[slot] = if i == j {
                rows[i][i]
            } else {
                SQRT_2 * 0.5 * (rows[i][j] + rows[j][i])
            };
        }
        Ok(t)
    }

    /// Symmetric part of a full `d × d` array, `sym(B) = (B + Bᵀ)/2`.
    pub fn sym_of(d: usize, b: &[[f64; 3]; 3]) -> Self {
        let mut t = Self::zero(d);
        for slot in 0..components(d) {
            let (i, j) = mandel_index(d, slot);
            t.c[slot] = if i == j {
                b[i][i]
            } else {
                SQRT_2 * 0.5 * (b[i][j] + b[j][i])
            };
        }
        t
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        components(self.dim)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.c[..components(self.dim)]
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        let m = components(self.dim);
        &mut self.c[..m]
    }

    /// Full-matrix entry `T_ij`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let d = self.dim;
        if i == j {
            return self.c[i];
        }
        let slot = (0..components(d))
            .find(|&s| {
                let (a, b) = mandel_index(d, s);
                (a == i && b == j) || (a == j && b == i)
            })
            .expect("index out of range");
        self.c[slot] / SQRT_2
    }

    /// Reconstructs the full symmetric matrix (upper-left `d × d` block used).
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for slot in 0..self.len() {
            let (i, j) = mandel_index(self.dim, slot);
            if i == j {
                m[i][i] = self.c[slot];
            } else {
                m[i][j] = self.c[slot] / SQRT_2;
                m[j][i] = m[i][j];
            }
        }
        m
    }

    pub fn trace(&self) -> f64 {
        self.c[..self.dim].iter().sum()
    }

    /// Trace-free part `T - (tr T / d) I`.
    pub fn dev(&self) -> Self {
        let mut out = *self;
        let p = self.trace() / self.dim as f64;
        for i in 0..self.dim {
            out.c[i] -= p;
        }
        out
    }

    /// Frobenius double contraction. Panics on dimension mismatch; see
    /// [`SymTensor2::try_inner`] for the checked variant.
    #[inline]
    pub fn inner(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        self.c[..self.len()]
            .iter()
            .zip(&other.c)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn try_inner(&self, other: &Self) -> Result<f64, TensorError> {
        if self.dim != other.dim {
            return Err(TensorError::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        Ok(self.inner(other))
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = *self;
        out.c.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

impl Add for SymTensor2 {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl AddAssign for SymTensor2 {
    fn add_assign(&mut self, rhs: Self) {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        for (a, b) in self.c.iter_mut().zip(rhs.c) {
            *a += b;
        }
    }
}

impl Sub for SymTensor2 {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        self -= rhs;
        self
    }
}

impl SubAssign for SymTensor2 {
    fn sub_assign(&mut self, rhs: Self) {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        for (a, b) in self.c.iter_mut().zip(rhs.c) {
            *a -= b;
        }
    }
}

impl Neg for SymTensor2 {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl Mul<SymTensor2> for f64 {
    type Output = SymTensor2;
    fn mul(self, rhs: SymTensor2) -> SymTensor2 {
        rhs.scale(self)
    }
}

impl Mul<f64> for SymTensor2 {
    type Output = SymTensor2;
    fn mul(self, rhs: f64) -> SymTensor2 {
        self.scale(rhs)
    }
}

/// Coefficients of an isotropic map `C = dev_coef·P_dev + vol_coef·P_vol`,
/// where `P_vol T = (tr T / d) I` and `P_dev = Id - P_vol`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsotropicModuli {
    pub dev_coef: f64,
    pub vol_coef: f64,
}

/// Linear map on symmetric tensors, stored as a symmetric Mandel matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4Sym {
    dim: usize,
    m: [[f64; MAX_COMPONENTS]; MAX_COMPONENTS],
    iso: Option<IsotropicModuli>,
}

/// Outcome of an ellipticity check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipticityReport {
    pub pass: bool,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Tensor4Sym {
    pub fn identity(d: usize) -> Self {
        Self::isotropic(d, 1.0, 1.0)
    }

    pub fn scaled_identity(d: usize, s: f64) -> Self {
        Self::isotropic(d, s, s)
    }

    pub fn isotropic(d: usize, dev_coef: f64, vol_coef: f64) -> Self {
        assert!(d == 2 || d == 3, "unsupported dimension {d}");
        let mut m = [[0.0; MAX_COMPONENTS]; MAX_COMPONENTS];
        let nd = components(d);
        for (i, row) in m.iter_mut().enumerate().take(nd) {
            row[i] = dev_coef;
        }
        let df = d as f64;
        for i in 0..d {
            for j in 0..d {
                m[i][j] += (vol_coef - dev_coef) / df;
            }
        }
        Self {
            dim: d,
            m,
            iso: Some(IsotropicModuli { dev_coef, vol_coef }),
        }
    }

    /// Compliance of an isotropic solid with shear modulus `g` and bulk
    /// modulus `k` (so that `tr σ = d·k·tr ε`): `A = P_dev/(2g) + P_vol/(d·k)`.
    pub fn isotropic_compliance(d: usize, shear_modulus: f64, bulk_modulus: f64) -> Self {
        Self::isotropic(
            d,
            1.0 / (2.0 * shear_modulus),
            1.0 / (d as f64 * bulk_modulus),
        )
    }

    /// Builds from a dense Mandel matrix given row-major (`m × m`).
    pub fn from_mandel_matrix(d: usize, rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        check_dim(d)?;
        let nd = components(d);
        if rows.len() != nd || rows.iter().any(|r| r.len() != nd) {
            return Err(TensorError::ComponentCount {
                expected: nd * nd,
                got: rows.iter().map(Vec::len).sum(),
            });
        }
        let mut m = [[0.0; MAX_COMPONENTS]; MAX_COMPONENTS];
        for i in 0..nd {
            m[i][..nd].copy_from_slice(&rows[i][..nd]);
        }
        Ok(Self { dim: d, m, iso: None })
    }

    /// Builds from a function of the Mandel indices (`0..m`).
    pub(crate) fn from_fn(d: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let nd = components(d);
        let mut m = [[0.0; MAX_COMPONENTS]; MAX_COMPONENTS];
        for (i, row) in m.iter_mut().enumerate().take(nd) {
            for (j, v) in row.iter_mut().enumerate().take(nd) {
                *v = f(i, j);
            }
        }
        Self { dim: d, m, iso: None }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn isotropic_moduli(&self) -> Option<IsotropicModuli> {
        self.iso
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        let nd = components(self.dim);
        (0..nd).map(|i| self.m[i][..nd].to_vec()).collect()
    }

    /// `C·T`. Panics on dimension mismatch.
    #[inline]
    pub fn apply(&self, t: &SymTensor2) -> SymTensor2 {
        assert_eq!(self.dim, t.dim, "dimension mismatch");
        if let Some(iso) = self.iso {
            let d = self.dim;
            let p = t.trace() / d as f64;
            let mut out = t.scale(iso.dev_coef);
            for i in 0..d {
                out.c[i] += (iso.vol_coef - iso.dev_coef) * p;
            }
            return out;
        }
        self.apply_dense(t)
    }

    /// Matrix-vector product on the stored Mandel matrix, ignoring the
    /// isotropic fast path.
    pub fn apply_dense(&self, t: &SymTensor2) -> SymTensor2 {
        assert_eq!(self.dim, t.dim, "dimension mismatch");
        let nd = components(self.dim);
        let mut out = SymTensor2::zero(self.dim);
        for i in 0..nd {
            out.c[i] = (0..nd).map(|j| self.m[i][j] * t.c[j]).sum();
        }
        out
    }

    pub fn try_apply(&self, t: &SymTensor2) -> Result<SymTensor2, TensorError> {
        if self.dim != t.dim {
            return Err(TensorError::DimensionMismatch {
                left: self.dim,
                right: t.dim,
            });
        }
        Ok(self.apply(t))
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        let nd = components(self.dim);
        DMatrix::from_fn(nd, nd, |i, j| self.m[i][j])
    }

    fn from_dmatrix(d: usize, mat: &DMatrix<f64>) -> Self {
        let nd = components(d);
        let mut m = [[0.0; MAX_COMPONENTS]; MAX_COMPONENTS];
        for i in 0..nd {
            for j in 0..nd {
                m[i][j] = mat[(i, j)];
            }
        }
        Self { dim: d, m, iso: None }
    }

    pub fn max_asymmetry(&self) -> f64 {
        let nd = components(self.dim);
        let mut worst = 0.0f64;
        for i in 0..nd {
            for j in (i + 1)..nd {
                worst = worst.max((self.m[i][j] - self.m[j][i]).abs());
            }
        }
        worst
    }

    fn scale_of(&self) -> f64 {
        let nd = components(self.dim);
        (0..nd)
            .flat_map(|i| (0..nd).map(move |j| (i, j)))
            .fold(0.0f64, |a, (i, j)| a.max(self.m[i][j].abs()))
    }

    /// Eigenvalues of the symmetric Mandel matrix in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        if let Some(iso) = self.iso {
            let nd = components(self.dim);
            let mut ev = vec![iso.dev_coef; nd - 1];
            ev.push(iso.vol_coef);
            ev.sort_by(f64::total_cmp);
            return ev;
        }
        let eig = SymmetricEigen::new(self.to_dmatrix());
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Checks `c1·|T|² ≤ C T·T ≤ c1⁻¹·|T|²` through the extremal eigenvalues.
    pub fn check_ellipticity(&self, c1: f64) -> Result<EllipticityReport, TensorError> {
        if c1 <= 0.0 || !c1.is_finite() {
            return Err(TensorError::InvalidConstant(c1));
        }
        let asym = self.max_asymmetry();
        if asym > SYMMETRY_TOL * self.scale_of().max(1.0) {
            return Err(TensorError::NotSymmetric(asym));
        }
        let ev = self.eigenvalues();
        let lambda_min = ev[0];
        let lambda_max = ev[ev.len() - 1];
        Ok(EllipticityReport {
            pass: c1 <= lambda_min && lambda_max <= 1.0 / c1,
            lambda_min,
            lambda_max,
        })
    }

    pub fn inverse(&self) -> Result<Self, TensorError> {
        if let Some(iso) = self.iso {
            if iso.dev_coef == 0.0 || iso.vol_coef == 0.0 {
                return Err(TensorError::Singular);
            }
            return Ok(Self::isotropic(self.dim, 1.0 / iso.dev_coef, 1.0 / iso.vol_coef));
        }
        let inv = self
            .to_dmatrix()
            .try_inverse()
            .ok_or(TensorError::Singular)?;
        let sym = (&inv + inv.transpose()) * 0.5;
        Ok(Self::from_dmatrix(self.dim, &sym))
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for row in out.m.iter_mut() {
            row.iter_mut().for_each(|v| *v *= s);
        }
        out.iso = self.iso.map(|i| IsotropicModuli {
            dev_coef: i.dev_coef * s,
            vol_coef: i.vol_coef * s,
        });
        out
    }
}

/// Penalty map `μ⁻¹ (|β| - κ)₊ β/|β|`; exactly zero when `|β| ≤ κ`.
pub fn penalty(beta: &SymTensor2, kappa: f64, mu: f64) -> SymTensor2 {
    let nb = beta.norm();
    if nb <= kappa {
        return SymTensor2::zero(beta.dim());
    }
    beta.scale((nb - kappa) / (mu * nb))
}

/// Potential whose gradient is [`penalty`]: `μ⁻¹ (|β| - κ)₊² / 2`.
pub fn penalty_potential(beta: &SymTensor2, kappa: f64, mu: f64) -> f64 {
    let over = (beta.norm() - kappa).max(0.0);
    0.5 * over * over / mu
}
