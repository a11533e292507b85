use serde::{Deserialize, Serialize};

use crate::tensor::{components, SymTensor2};

use super::DiscretizationError;

/// Gauss abscissa of the 2-point rule on `[-1, 1]`.
const GAUSS: f64 = 0.577_350_269_189_625_8;

/// How the bottom face `x_d = 0` is split between Dirichlet and Neumann data.
/// All other faces are always Dirichlet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    /// Dirichlet where `x_{d-1} ≤ 0`, Neumann where `x_{d-1} > 0`.
    Mixed,
    AllDirichlet,
    AllNeumannBottom,
}

/// The cube `(-1,1)^{d-1} × (0,1)` with a boundary partition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dim: usize,
    pub mode: BoundaryMode,
}

impl Geometry {
    pub fn new(dim: usize, mode: BoundaryMode) -> Result<Self, DiscretizationError> {
        if dim != 2 && dim != 3 {
            return Err(DiscretizationError::UnsupportedDimension(dim));
        }
        Ok(Self { dim, mode })
    }

    pub fn volume(&self) -> f64 {
        2f64.powi(self.dim as i32 - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeTag {
    Interior,
    Dirichlet,
    Neumann,
}

/// Uniform Q1 grid with `n` cells per unit length (`2n` along the
/// tangential axes, `n` along `x_d`). Nodes and cells are numbered
/// row-major with the last axis fastest.
#[derive(Clone, Debug)]
pub struct Grid {
    pub geometry: Geometry,
    pub n: usize,
    pub h: f64,
    node_counts: [usize; 3],
    cell_counts: [usize; 3],
    node_strides: [usize; 3],
    cell_strides: [usize; 3],
    tags: Vec<NodeTag>,
    dof_map: Vec<usize>,
    n_free: usize,
    /// `shape[q][a]`
    shape: Vec<Vec<f64>>,
    /// `grads[q][a][k]` = ∂N_a/∂x_k at local quadrature point `q`.
    grads: Vec<Vec<[f64; 3]>>,
    qp_weight: f64,
    neumann_cells: Vec<usize>,
}

pub const NOT_FREE: usize = usize::MAX;

fn strides(counts: &[usize; 3], d: usize) -> [usize; 3] {
    let mut s = [0; 3];
    s[d - 1] = 1;
    for k in (0..d - 1).rev() {
        s[k] = s[k + 1] * counts[k + 1];
    }
    s
}

impl Grid {
    pub fn new(geometry: Geometry, n: usize) -> Result<Self, DiscretizationError> {
        if n < 2 {
            return Err(DiscretizationError::TooCoarse(n));
        }
        let d = geometry.dim;
        let mut node_counts = [1; 3];
        let mut cell_counts = [1; 3];
        for k in 0..d {
            let cells = if k + 1 < d { 2 * n } else { n };
            cell_counts[k] = cells;
            node_counts[k] = cells + 1;
        }
        let node_strides = strides(&node_counts, d);
        let cell_strides = strides(&cell_counts, d);
        let h = 1.0 / n as f64;
        let nloc = 1usize << d;

        let mut shape = vec![vec![0.0; nloc]; nloc];
        let mut grads = vec![vec![[0.0; 3]; nloc]; nloc];
        for q in 0..nloc {
            let xi: Vec<f64> = (0..d)
                .map(|k| if q >> k & 1 == 1 { GAUSS } else { -GAUSS })
                .collect();
            for a in 0..nloc {
                let sgn: Vec<f64> = (0..d)
                    .map(|k| if a >> k & 1 == 1 { 1.0 } else { -1.0 })
                    .collect();
                let factors: Vec<f64> = (0..d).map(|k| 0.5 * (1.0 + sgn[k] * xi[k])).collect();
                shape[q][a] = factors.iter().product();
                for k in 0..d {
                    let mut g = 0.5 * sgn[k] * (2.0 / h);
                    for (l, f) in factors.iter().enumerate() {
                        if l != k {
                            g *= f;
                        }
                    }
                    grads[q][a][k] = g;
                }
            }
        }

        let mut grid = Self {
            geometry,
            n,
            h,
            node_counts,
            cell_counts,
            node_strides,
            cell_strides,
            tags: Vec::new(),
            dof_map: Vec::new(),
            n_free: 0,
            shape,
            grads,
            qp_weight: (h / 2.0).powi(d as i32),
            neumann_cells: Vec::new(),
        };
        grid.tags = (0..grid.n_nodes()).map(|i| grid.classify(i)).collect();
        let mut next = 0;
        grid.dof_map = vec![NOT_FREE; grid.n_dofs()];
        for i in 0..grid.n_nodes() {
            if grid.tags[i] != NodeTag::Dirichlet {
                for c in 0..d {
                    grid.dof_map[i * d + c] = next;
                    next += 1;
                }
            }
        }
        grid.n_free = next;
        grid.neumann_cells = (0..grid.n_cells())
            .filter(|&c| {
                let idx = grid.cell_multi(c);
                if idx[d - 1] != 0 {
                    return false;
                }
                match geometry.mode {
                    BoundaryMode::AllDirichlet => false,
                    BoundaryMode::AllNeumannBottom => true,
                    BoundaryMode::Mixed => grid.cell_center(c)[d - 2] > 0.0,
                }
            })
            .collect();
        Ok(grid)
    }

    fn classify(&self, node: usize) -> NodeTag {
        let d = self.dim();
        let idx = self.node_multi(node);
        let other_face = (0..d - 1).any(|k| idx[k] == 0 || idx[k] == self.node_counts[k] - 1)
            || idx[d - 1] == self.node_counts[d - 1] - 1;
        if other_face {
            return NodeTag::Dirichlet;
        }
        if idx[d - 1] != 0 {
            return NodeTag::Interior;
        }
        match self.geometry.mode {
            BoundaryMode::AllDirichlet => NodeTag::Dirichlet,
            BoundaryMode::AllNeumannBottom => NodeTag::Neumann,
            BoundaryMode::Mixed => {
                if self.node_coords(node)[d - 2] > 1e-12 {
                    NodeTag::Neumann
                } else {
                    NodeTag::Dirichlet
                }
            }
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.geometry.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.node_counts[..self.dim()].iter().product()
    }

    pub fn n_cells(&self) -> usize {
        self.cell_counts[..self.dim()].iter().product()
    }

    pub fn n_dofs(&self) -> usize {
        self.n_nodes() * self.dim()
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    /// Quadrature points (and local nodes) per cell, `2^d`.
    #[inline]
    pub fn qp_per_cell(&self) -> usize {
        1 << self.dim()
    }

    pub fn n_qp(&self) -> usize {
        self.n_cells() * self.qp_per_cell()
    }

    pub fn node_counts(&self) -> &[usize] {
        &self.node_counts[..self.dim()]
    }

    pub fn cell_counts(&self) -> &[usize] {
        &self.cell_counts[..self.dim()]
    }

    /// Cell-index offset of a unit shift along `axis`.
    pub fn cell_stride(&self, axis: usize) -> usize {
        self.cell_strides[axis]
    }

    pub fn tag(&self, node: usize) -> NodeTag {
        self.tags[node]
    }

    pub fn tags(&self) -> &[NodeTag] {
        &self.tags
    }

    /// Free-unknown index of a dof, or [`NOT_FREE`] for Dirichlet dofs.
    #[inline]
    pub fn free_index(&self, dof: usize) -> usize {
        self.dof_map[dof]
    }

    pub fn dof_map(&self) -> &[usize] {
        &self.dof_map
    }

    pub fn qp_weight(&self) -> f64 {
        self.qp_weight
    }

    pub fn neumann_cells(&self) -> &[usize] {
        &self.neumann_cells
    }

    pub fn lower_corner(&self, axis: usize) -> f64 {
        if axis + 1 < self.dim() {
            -1.0
        } else {
            0.0
        }
    }

    pub fn node_multi(&self, node: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        let mut r = node;
        for k in 0..self.dim() {
            idx[k] = r / self.node_strides[k];
            r %= self.node_strides[k];
        }
        idx
    }

    pub fn node_index(&self, idx: &[usize]) -> usize {
        (0..self.dim()).map(|k| idx[k] * self.node_strides[k]).sum()
    }

    pub fn node_coords(&self, node: usize) -> [f64; 3] {
        let idx = self.node_multi(node);
        let mut x = [0.0; 3];
        for k in 0..self.dim() {
            x[k] = self.lower_corner(k) + idx[k] as f64 * self.h;
        }
        x
    }

    pub fn cell_multi(&self, cell: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        let mut r = cell;
        for k in 0..self.dim() {
            idx[k] = r / self.cell_strides[k];
            r %= self.cell_strides[k];
        }
        idx
    }

    pub fn cell_index(&self, idx: &[usize]) -> usize {
        (0..self.dim()).map(|k| idx[k] * self.cell_strides[k]).sum()
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 3] {
        let idx = self.cell_multi(cell);
        let mut x = [0.0; 3];
        for k in 0..self.dim() {
            x[k] = self.lower_corner(k) + (idx[k] as f64 + 0.5) * self.h;
        }
        x
    }

    /// Global node indices of a cell; local node `a` has offset bit `k` along axis `k`.
    pub fn cell_nodes(&self, cell: usize) -> [usize; 8] {
        let idx = self.cell_multi(cell);
        let base = self.node_index(&idx);
        let mut out = [0; 8];
        for (a, slot) in out.iter_mut().enumerate().take(self.qp_per_cell()) {
            *slot = base
                + (0..self.dim())
                    .filter(|k| a >> k & 1 == 1)
                    .map(|k| self.node_strides[k])
                    .sum::<usize>();
        }
        out
    }

    /// Offset of local quadrature point `q` from the cell center, in units of `h`.
    pub fn qp_offset(&self, q: usize, axis: usize) -> f64 {
        if q >> axis & 1 == 1 {
            0.5 * GAUSS
        } else {
            -0.5 * GAUSS
        }
    }

    pub fn qp_coords(&self, cell: usize, q: usize) -> [f64; 3] {
        let mut x = self.cell_center(cell);
        for (k, xk) in x.iter_mut().enumerate().take(self.dim()) {
            *xk += self.qp_offset(q, k) * self.h;
        }
        x
    }

    /// Coordinates of quadrature point with global index `qp = cell·2^d + q`.
    pub fn qp_point(&self, qp: usize) -> [f64; 3] {
        let nq = self.qp_per_cell();
        self.qp_coords(qp / nq, qp % nq)
    }

    #[inline]
    pub fn shape(&self, q: usize) -> &[f64] {
        &self.shape[q]
    }

    #[inline]
    pub fn shape_grads(&self, q: usize) -> &[[f64; 3]] {
        &self.grads[q]
    }

    /// Full displacement gradient `∂u_i/∂x_k` at a quadrature point.
    pub fn gradient_at(&self, u: &[f64], cell: usize, q: usize) -> [[f64; 3]; 3] {
        let d = self.dim();
        let nodes = self.cell_nodes(cell);
        let mut g = [[0.0; 3]; 3];
        for (a, &node) in nodes.iter().enumerate().take(self.qp_per_cell()) {
            let dn = &self.grads[q][a];
            for i in 0..d {
                let ui = u[node * d + i];
                for k in 0..d {
                    g[i][k] += ui * dn[k];
                }
            }
        }
        g
    }

    pub fn value_at(&self, u: &[f64], cell: usize, q: usize) -> [f64; 3] {
        let d = self.dim();
        let nodes = self.cell_nodes(cell);
        let mut v = [0.0; 3];
        for (a, &node) in nodes.iter().enumerate().take(self.qp_per_cell()) {
            for (i, vi) in v.iter_mut().enumerate().take(d) {
                *vi += self.shape[q][a] * u[node * d + i];
            }
        }
        v
    }

    /// Nodal interpolant of a vector field.
    pub fn interpolate(&self, f: impl Fn(&[f64; 3]) -> [f64; 3]) -> Vec<f64> {
        let d = self.dim();
        let mut u = vec![0.0; self.n_dofs()];
        for node in 0..self.n_nodes() {
            let v = f(&self.node_coords(node));
            u[node * d..node * d + d].copy_from_slice(&v[..d]);
        }
        u
    }

    /// Quadrature-point samples of a scalar or tensor field.
    pub fn sample_qp<T>(&self, f: impl Fn(&[f64; 3]) -> T) -> Vec<T> {
        (0..self.n_qp()).map(|qp| f(&self.qp_point(qp))).collect()
    }

    /// Strain-displacement row: Mandel components of `E(N_a e_i)` at local
    /// quadrature point `q`.
    pub fn b_row(&self, q: usize, a: usize, i: usize) -> SymTensor2 {
        let d = self.dim();
        let g = self.grads[q][a];
        let mut e = [[0.0; 3]; 3];
        e[i][..d].copy_from_slice(&g[..d]);
        SymTensor2::sym_of(d, &e)
    }

    pub fn mandel_components(&self) -> usize {
        components(self.dim())
    }
}

/// Symmetric gradient `E(u) = (∇u + ∇uᵀ)/2` at every quadrature point.
pub fn sym_gradient(u: &[f64], grid: &Grid) -> Result<Vec<SymTensor2>, DiscretizationError> {
    if u.len() != grid.n_dofs() {
        return Err(DiscretizationError::FieldSize {
            expected: grid.n_dofs(),
            got: u.len(),
        });
    }
    let d = grid.dim();
    let nq = grid.qp_per_cell();
    Ok((0..grid.n_qp())
        .map(|qp| SymTensor2::sym_of(d, &grid.gradient_at(u, qp / nq, qp % nq)))
        .collect())
}
