use rayon::prelude::*;

use crate::linalg::CsrMatrix;
use crate::tensor::{SymTensor2, Tensor4Sym};

use super::grid::{Grid, NOT_FREE};
use super::DiscretizationError;

/// Closed-form data of a loading scenario: Dirichlet displacement `u₀`,
/// reference stress `σ₀` (initial stress and Neumann traction `σ₀ n`) and
/// body force `f`.
pub trait LoadData: Send + Sync {
    fn displacement(&self, t: f64, x: &[f64; 3]) -> [f64; 3];
    fn reference_stress(&self, t: f64, x: &[f64; 3]) -> SymTensor2;
    fn body_force(&self, t: f64, x: &[f64; 3]) -> [f64; 3];
}

/// Per-quadrature-point material tangent.
#[derive(Clone, Copy)]
pub enum TangentField<'a> {
    Uniform(&'a Tensor4Sym),
    PerPoint(&'a [Tensor4Sym]),
}

impl TangentField<'_> {
    #[inline]
    fn at(&self, qp: usize) -> &Tensor4Sym {
        match self {
            Self::Uniform(t) => t,
            Self::PerPoint(ts) => &ts[qp],
        }
    }
}

/// Sparsity pattern on the free unknowns plus the cell-to-CSR scatter map.
#[derive(Clone, Debug)]
pub struct Assembler {
    template: CsrMatrix,
    /// `scatter[cell·k² + r·k + s]` for element dofs `r, s` (`k = 2^d·d`).
    scatter: Vec<usize>,
    /// `brows[q][a·d + i]`
    brows: Vec<Vec<SymTensor2>>,
    ndof_e: usize,
}

impl Assembler {
    pub fn new(grid: &Grid) -> Self {
        let d = grid.dim();
        let nloc = grid.qp_per_cell();
        let ndof_e = nloc * d;
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); grid.n_free()];
        for cell in 0..grid.n_cells() {
            let dofs = element_dofs(grid, cell);
            for &r in &dofs {
                let fr = grid.free_index(r);
                if fr == NOT_FREE {
                    continue;
                }
                for &s in &dofs {
                    let fs = grid.free_index(s);
                    if fs != NOT_FREE {
                        rows[fr].push(fs);
                    }
                }
            }
        }
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
        }
        let template = CsrMatrix::from_pattern(rows);
        let mut scatter = Vec::with_capacity(grid.n_cells() * ndof_e * ndof_e);
        for cell in 0..grid.n_cells() {
            let dofs = element_dofs(grid, cell);
            for &r in &dofs {
                for &s in &dofs {
                    let (fr, fs) = (grid.free_index(r), grid.free_index(s));
                    scatter.push(if fr == NOT_FREE || fs == NOT_FREE {
                        NOT_FREE
                    } else {
                        template.position(fr, fs).expect("pattern entry")
                    });
                }
            }
        }
        let brows = (0..nloc)
            .map(|q| {
                (0..nloc)
                    .flat_map(|a| (0..d).map(move |i| (a, i)))
                    .map(|(a, i)| grid.b_row(q, a, i))
                    .collect()
            })
            .collect();
        Self {
            template,
            scatter,
            brows,
            ndof_e,
        }
    }

    pub fn pattern(&self) -> &CsrMatrix {
        &self.template
    }

    fn element_matrix(&self, grid: &Grid, cell: usize, tangents: TangentField<'_>) -> Vec<f64> {
        let k = self.ndof_e;
        let nloc = grid.qp_per_cell();
        let w = grid.qp_weight();
        let mut ke = vec![0.0; k * k];
        for q in 0..nloc {
            let c = tangents.at(cell * nloc + q);
            let rows = &self.brows[q];
            let cb: Vec<SymTensor2> = rows.iter().map(|b| c.apply(b)).collect();
            for r in 0..k {
                for s in r..k {
                    let v = w * rows[r].inner(&cb[s]);
                    ke[r * k + s] += v;
                }
            }
        }
        for r in 0..k {
            for s in 0..r {
                ke[r * k + s] = ke[s * k + r];
            }
        }
        ke
    }

    /// Stiffness matrix on the free unknowns.
    pub fn tangent(&self, grid: &Grid, tangents: TangentField<'_>) -> Result<CsrMatrix, DiscretizationError> {
        if let TangentField::PerPoint(ts) = tangents {
            if ts.len() != grid.n_qp() {
                return Err(DiscretizationError::FieldSize {
                    expected: grid.n_qp(),
                    got: ts.len(),
                });
            }
        }
        let k2 = self.ndof_e * self.ndof_e;
        let elems: Vec<Vec<f64>> = (0..grid.n_cells())
            .into_par_iter()
            .map(|cell| self.element_matrix(grid, cell, tangents))
            .collect();
        let mut mat = self.template.clone();
        for (cell, ke) in elems.iter().enumerate() {
            let map = &self.scatter[cell * k2..(cell + 1) * k2];
            for (pos, v) in map.iter().zip(ke) {
                if *pos != NOT_FREE {
                    mat.vals[*pos] += v;
                }
            }
        }
        Ok(mat)
    }

    /// `∫ σ : E(v_i)` for every dof (Dirichlet dofs included).
    pub fn internal_force(&self, grid: &Grid, sigma: &[SymTensor2]) -> Result<Vec<f64>, DiscretizationError> {
        if sigma.len() != grid.n_qp() {
            return Err(DiscretizationError::FieldSize {
                expected: grid.n_qp(),
                got: sigma.len(),
            });
        }
        let nloc = grid.qp_per_cell();
        let w = grid.qp_weight();
        let k = self.ndof_e;
        let elems: Vec<Vec<f64>> = (0..grid.n_cells())
            .into_par_iter()
            .map(|cell| {
                let mut fe = vec![0.0; k];
                for q in 0..nloc {
                    let s = &sigma[cell * nloc + q];
                    for (r, b) in self.brows[q].iter().enumerate() {
                        fe[r] += w * s.inner(b);
                    }
                }
                fe
            })
            .collect();
        let mut f = vec![0.0; grid.n_dofs()];
        for (cell, fe) in elems.iter().enumerate() {
            for (dof, v) in element_dofs(grid, cell).iter().zip(fe) {
                f[*dof] += v;
            }
        }
        Ok(f)
    }
}

/// Element dof list, local node major.
pub fn element_dofs(grid: &Grid, cell: usize) -> Vec<usize> {
    let d = grid.dim();
    let nodes = grid.cell_nodes(cell);
    nodes[..grid.qp_per_cell()]
        .iter()
        .flat_map(|&n| (0..d).map(move |i| n * d + i))
        .collect()
}

/// `∫ f·v_i + ∮_{Neumann} (σ₀ n)·v_i` for every dof.
pub fn external_force(grid: &Grid, loads: &dyn LoadData, t: f64) -> Vec<f64> {
    let d = grid.dim();
    let nloc = grid.qp_per_cell();
    let w = grid.qp_weight();
    let mut f = vec![0.0; grid.n_dofs()];
    for cell in 0..grid.n_cells() {
        let nodes = grid.cell_nodes(cell);
        for q in 0..nloc {
            let x = grid.qp_coords(cell, q);
            let b = loads.body_force(t, &x);
            let shape = grid.shape(q);
            for a in 0..nloc {
                for i in 0..d {
                    f[nodes[a] * d + i] += w * b[i] * shape[a];
                }
            }
        }
    }
    // Bottom faces: outward normal -e_d, so the traction is -σ₀[:, d-1].
    let g = 0.5 * 0.577_350_269_189_625_8;
    let nface = 1usize << (d - 1);
    let wf = (grid.h / 2.0).powi(d as i32 - 1);
    for &cell in grid.neumann_cells() {
        let nodes = grid.cell_nodes(cell);
        let center = grid.cell_center(cell);
        for fq in 0..nface {
            let mut x = center;
            x[d - 1] = 0.0;
            let mut xi = [0.0; 3];
            for k in 0..d - 1 {
                xi[k] = if fq >> k & 1 == 1 { 1.0 } else { -1.0 } * 2.0 * g;
                x[k] += 0.5 * xi[k] * grid.h;
            }
            let s0 = loads.reference_stress(t, &x);
            let traction: Vec<f64> = (0..d).map(|i| -s0.get(i, d - 1)).collect();
            for a in 0..nloc {
                if a >> (d - 1) & 1 == 1 {
                    continue;
                }
                let na: f64 = (0..d - 1)
                    .map(|k| {
                        let s = if a >> k & 1 == 1 { 1.0 } else { -1.0 };
                        0.5 * (1.0 + s * xi[k])
                    })
                    .product();
                for i in 0..d {
                    f[nodes[a] * d + i] += wf * traction[i] * na;
                }
            }
        }
    }
    f
}

/// Restriction of a full dof vector to the free unknowns.
pub fn free_part(grid: &Grid, full: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.n_free()];
    for (dof, v) in full.iter().enumerate() {
        let fi = grid.free_index(dof);
        if fi != NOT_FREE {
            out[fi] = *v;
        }
    }
    out
}

/// Equilibrium residual `∫ σ:E(v_i) - ∫ f·v_i - ∮ σ₀n·v_i` on the free unknowns.
pub fn assemble_residual(
    assembler: &Assembler,
    grid: &Grid,
    sigma: &[SymTensor2],
    loads: &dyn LoadData,
    t: f64,
) -> Result<Vec<f64>, DiscretizationError> {
    let fint = assembler.internal_force(grid, sigma)?;
    let fext = external_force(grid, loads, t);
    let r: Vec<f64> = fint.iter().zip(&fext).map(|(a, b)| a - b).collect();
    Ok(free_part(grid, &r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::grid::{BoundaryMode, Geometry};
    use crate::linalg::BandCholesky;

    struct ConstantStress(SymTensor2);

    impl LoadData for ConstantStress {
        fn displacement(&self, _t: f64, _x: &[f64; 3]) -> [f64; 3] {
            [0.0; 3]
        }
        fn reference_stress(&self, _t: f64, _x: &[f64; 3]) -> SymTensor2 {
            self.0
        }
        fn body_force(&self, _t: f64, _x: &[f64; 3]) -> [f64; 3] {
            [0.0; 3]
        }
    }

    #[test]
    fn constant_stress_is_in_equilibrium_with_its_traction() {
        for (d, mode) in [(2, BoundaryMode::Mixed), (3, BoundaryMode::AllNeumannBottom), (2, BoundaryMode::AllNeumannBottom)] {
            let grid = Grid::new(Geometry::new(d, mode).unwrap(), 3).unwrap();
            let asm = Assembler::new(&grid);
            let s = if d == 2 {
                SymTensor2::from_mandel(2, &[0.3, -0.8, 0.5]).unwrap()
            } else {
                SymTensor2::from_mandel(3, &[0.3, -0.8, 0.1, 0.5, -0.2, 0.7]).unwrap()
            };
            let sigma = vec![s; grid.n_qp()];
            let r = assemble_residual(&asm, &grid, &sigma, &ConstantStress(s), 0.0).unwrap();
            assert!(r.iter().all(|v| v.abs() < 1e-14), "{:?}", r.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        }
    }

    #[test]
    fn elastic_tangent_is_symmetric_positive_definite() {
        for mode in [BoundaryMode::Mixed, BoundaryMode::AllDirichlet, BoundaryMode::AllNeumannBottom] {
            let grid = Grid::new(Geometry::new(2, mode).unwrap(), 3).unwrap();
            let asm = Assembler::new(&grid);
            let c = Tensor4Sym::isotropic(2, 2.0, 3.0);
            let k = asm.tangent(&grid, TangentField::Uniform(&c)).unwrap();
            assert!(k.max_asymmetry() < 1e-12);
            assert!(BandCholesky::factor(&k).is_ok());
        }
    }
}
