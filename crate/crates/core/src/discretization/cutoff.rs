use serde::{Deserialize, Serialize};

use super::grid::Grid;
use super::DiscretizationError;

/// Which part of the bottom face the weight is allowed to touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutoffSide {
    /// `x_{d-1} > 0` (the Neumann half in mixed mode).
    Neumann,
    /// `x_{d-1} < 0`.
    Dirichlet,
    /// The whole bottom face (no interface to avoid).
    Full,
}

/// C² quintic step: 0 for `τ ≤ 0`, 1 for `τ ≥ 1`.
pub fn smoothstep(tau: f64) -> f64 {
    if tau <= 0.0 {
        0.0
    } else if tau >= 1.0 {
        1.0
    } else {
        tau * tau * tau * (10.0 + tau * (-15.0 + 6.0 * tau))
    }
}

fn window(x: f64, lo: f64, hi: f64, width: f64) -> f64 {
    smoothstep((x - lo) / width) * smoothstep((hi - x) / width)
}

/// Localization weight `φ(x)`: a tensor product of C² bumps that vanishes
/// within `eps0` of the Dirichlet/Neumann interface and of every face except
/// the selected half of `x_d = 0`, and is independent of `x_d` near that face.
pub fn cutoff_value(d: usize, x: &[f64; 3], eps0: f64, side: CutoffSide) -> f64 {
    let mut phi = 1.0;
    for &xk in x.iter().take(d.saturating_sub(2)) {
        phi *= window(xk, -1.0 + eps0, 1.0 - eps0, eps0);
    }
    let split = x[d - 2];
    phi *= match side {
        CutoffSide::Neumann => window(split, eps0, 1.0 - eps0, eps0),
        CutoffSide::Dirichlet => window(split, -1.0 + eps0, -eps0, eps0),
        CutoffSide::Full => window(split, -1.0 + eps0, 1.0 - eps0, eps0),
    };
    phi * smoothstep((1.0 - eps0 - x[d - 1]) / eps0)
}

/// Sampled localization weight.
#[derive(Clone, Debug)]
pub struct Cutoff {
    pub eps0: f64,
    pub h0: f64,
    pub side: CutoffSide,
    pub nodal: Vec<f64>,
    pub qp: Vec<f64>,
}

impl Cutoff {
    pub fn value(&self, d: usize, x: &[f64; 3]) -> f64 {
        cutoff_value(d, x, self.eps0, self.side)
    }

    /// A weight identically equal to one (unweighted seminorms).
    pub fn unit(grid: &Grid) -> Self {
        Self {
            eps0: 0.0,
            h0: 0.0,
            side: CutoffSide::Neumann,
            nodal: vec![1.0; grid.n_nodes()],
            qp: vec![1.0; grid.n_qp()],
        }
    }
}

pub fn make_cutoff(grid: &Grid, eps0: f64, h0: f64, side: CutoffSide) -> Result<Cutoff, DiscretizationError> {
    if !(eps0 > 0.0 && eps0 < 0.5) {
        return Err(DiscretizationError::InvalidCutoff(format!("eps0 = {eps0} outside (0, 1/2)")));
    }
    if !(h0 > 0.0 && h0 < 0.5) {
        return Err(DiscretizationError::InvalidCutoff(format!("h0 = {h0} outside (0, 1/2)")));
    }
    // Plateau along the split axis is [2 eps0, 1 - 2 eps0].
    if 2.0 * eps0 >= 1.0 - 2.0 * eps0 {
        return Err(DiscretizationError::InvalidCutoff(format!(
            "inconsistent margins: eps0 = {eps0} leaves an empty core region"
        )));
    }
    if h0 > 1.0 - 2.0 * eps0 {
        return Err(DiscretizationError::InvalidCutoff(format!(
            "h0 = {h0} exceeds the x_d-plateau 1 - 2 eps0"
        )));
    }
    let d = grid.dim();
    Ok(Cutoff {
        eps0,
        h0,
        side,
        nodal: (0..grid.n_nodes())
            .map(|i| cutoff_value(d, &grid.node_coords(i), eps0, side))
            .collect(),
        qp: grid.sample_qp(|x| cutoff_value(d, x, eps0, side)),
    })
}
