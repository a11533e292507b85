//! Sparse symmetric systems: CSR storage, a banded Cholesky factorization and
//! Jacobi-preconditioned conjugate gradients.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearSolveError {
    #[error("matrix is not positive definite (pivot {pivot:e} at row {row}); the system is unconstrained or singular")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("size mismatch: matrix {matrix}, vector {vector}")]
    SizeMismatch { matrix: usize, vector: usize },
}

/// Square matrix in compressed sparse row form with sorted column indices.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an all-zero matrix from per-row sorted column lists.
    pub fn from_pattern(rows: Vec<Vec<usize>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        for r in rows {
            cols.extend(r);
            row_ptr.push(cols.len());
        }
        let nnz = cols.len();
        Self {
            n,
            row_ptr,
            cols,
            vals: vec![0.0; nnz],
        }
    }

    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        self.cols[range.clone()]
            .binary_search(&col)
            .ok()
            .map(|k| range.start + k)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.position(row, col).map_or(0.0, |p| self.vals[p])
    }

    pub fn clear(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[p] * x[self.cols[p]];
            }
            *yi = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.cols[self.row_ptr[i]..self.row_ptr[i + 1]].iter().map(move |&j| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[p];
                worst = worst.max((self.vals[p] - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for (i, row) in out.iter_mut().enumerate() {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                row[self.cols[p]] = self.vals[p];
            }
        }
        out
    }
}

/// Cholesky factor `L` stored by rows within a fixed lower bandwidth.
#[derive(Clone, Debug)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    /// Row `i` holds `L[i][i-bw ..= i]`.
    band: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self, LinearSolveError> {
        let n = a.n;
        let bw = a.bandwidth();
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for i in 0..n {
            for p in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.cols[p];
                if j <= i {
                    band[i * w + (j + bw - i)] = a.vals[p];
                }
            }
        }
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(bw));
                let (ri, rj) = (i * w + bw - i, j * w + bw - j);
                let s = band[ri + j] - dot(&band[ri + lo..ri + j], &band[rj + lo..rj + j]);
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(LinearSolveError::NotPositiveDefinite { row: i, pivot: s });
                    }
                    band[ri + i] = s.sqrt();
                } else {
                    band[ri + j] = s / band[rj + j];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinearSolveError> {
        if b.len() != self.n {
            return Err(LinearSolveError::SizeMismatch {
                matrix: self.n,
                vector: b.len(),
            });
        }
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let mut y = b.to_vec();
        for i in 0..n {
            let ri = i * w + bw - i;
            let lo = i.saturating_sub(bw);
            let s = y[i] - dot(&self.band[ri + lo..ri + i], &y[lo..i]);
            y[i] = s / self.band[ri + i];
        }
        for i in (0..n).rev() {
            let ri = i * w + bw - i;
            y[i] /= self.band[ri + i];
            let yi = y[i];
            let lo = i.saturating_sub(bw);
            for (yk, l) in y[lo..i].iter_mut().zip(&self.band[ri + lo..ri + i]) {
                *yk -= l * yi;
            }
        }
        Ok(y)
    }
}

/// Four-way unrolled dot product (lets the compiler vectorize).
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Jacobi-preconditioned conjugate gradients; returns the solution and the
/// iteration count.
pub fn pcg(a: &CsrMatrix, b: &[f64], rtol: f64, max_iter: usize) -> Result<(Vec<f64>, usize), LinearSolveError> {
    let n = a.n;
    if b.len() != n {
        return Err(LinearSolveError::SizeMismatch { matrix: n, vector: b.len() });
    }
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let diag = a.diagonal();
    if let Some(row) = diag.iter().position(|&v| v <= 0.0) {
        return Err(LinearSolveError::NotPositiveDefinite { row, pivot: diag[row] });
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for it in 1..=max_iter {
        a.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(LinearSolveError::NotPositiveDefinite { row: 0, pivot: pap });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= rtol * bnorm {
            return Ok((x, it));
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    Err(LinearSolveError::NoConvergence {
        iterations: max_iter,
        residual: rnorm / bnorm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let rows = (0..n)
            .map(|i| {
                let mut r = Vec::new();
                if i > 0 {
                    r.push(i - 1);
                }
                r.push(i);
                if i + 1 < n {
                    r.push(i + 1);
                }
                r
            })
            .collect();
        let mut a = CsrMatrix::from_pattern(rows);
        for i in 0..n {
            for p in a.row_ptr[i]..a.row_ptr[i + 1] {
                a.vals[p] = if a.cols[p] == i { 2.0 } else { -1.0 };
            }
        }
        a
    }

    #[test]
    fn band_cholesky_solves_tridiagonal() {
        let a = laplacian_1d(50);
        let xs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; 50];
        a.matvec(&xs, &mut b);
        let x = BandCholesky::factor(&a).unwrap().solve(&b).unwrap();
        for (u, v) in x.iter().zip(&xs) {
            assert!((u - v).abs() < 1e-11);
        }
    }

    #[test]
    fn pcg_matches_direct() {
        let a = laplacian_1d(40);
        let b: Vec<f64> = (0..40).map(|i| 1.0 + i as f64 * 0.1).collect();
        let direct = BandCholesky::factor(&a).unwrap().solve(&b).unwrap();
        let (x, _) = pcg(&a, &b, 1e-13, 1000).unwrap();
        for (u, v) in x.iter().zip(&direct) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn indefinite_is_rejected() {
        let mut a = laplacian_1d(5);
        let p = a.position(2, 2).unwrap();
        a.vals[p] = -1.0;
        assert!(matches!(
            BandCholesky::factor(&a),
            Err(LinearSolveError::NotPositiveDefinite { .. })
        ));
    }
}
