//! Weighted difference-quotient seminorms of recorded histories, scaling
//! exponent fits, the theoretical exponent targets and penalty sweeps.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::constitutive::Model;
use crate::discretization::{make_cutoff, BoundaryMode, Cutoff, CutoffSide, DiscretizationError, Grid};
use crate::evolution::{run_with, EnergyReport, EvolutionError, FieldHistory, FieldKind, RunOptions, RunOutcome, Scenario};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("shift {shift} along {axis} exceeds the available range ({max})")]
    ShiftOutOfRange { axis: Axis, shift: usize, max: usize },
    #[error("empty ladder along {0}: grid or time step too coarse")]
    EmptyLadder(Axis),
    #[error("{got} positive rows in the fit window, need at least 4")]
    TooFewPoints { got: usize },
    #[error("axis {axis} not available in dimension {d}")]
    InvalidAxis { axis: Axis, d: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty strip: {0}")]
    EmptyStrip(String),
    #[error(transparent)]
    Discretization(#[from] DiscretizationError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
}

/// Difference direction. Tangential axes are numbered from 1 as in `x_1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    Time,
    /// Zero-based coordinate index `j < d - 1`.
    Tangential(usize),
    Normal,
}

impl Axis {
    /// Coordinate index of a spatial axis.
    pub fn coordinate(self, d: usize) -> Option<usize> {
        match self {
            Self::Time => None,
            Self::Tangential(j) => (j + 1 < d).then_some(j),
            Self::Normal => Some(d - 1),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Time => write!(f, "time"),
            Self::Tangential(j) => write!(f, "tangential-{}", j + 1),
            Self::Normal => write!(f, "normal"),
        }
    }
}

impl FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "time" => Ok(Self::Time),
            "normal" => Ok(Self::Normal),
            _ => s
                .strip_prefix("tangential-")
                .and_then(|j| j.parse::<usize>().ok())
                .filter(|&j| j >= 1)
                .map(|j| Self::Tangential(j - 1))
                .ok_or_else(|| format!("unknown axis `{s}` (expected time, normal or tangential-j)")),
        }
    }
}

impl Serialize for Axis {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Axis {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// How the per-time values are aggregated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Sup,
    Integral,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sup => "sup",
            Self::Integral => "integral",
        })
    }
}

/// Integer shift multiples `1, 2, …, s_max` thinned to a roughly
/// log-uniform sequence (ratio `2^{1/4}`).
pub fn shift_ladder(max_shift: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    let mut j = 0;
    loop {
        let s = 2f64.powf(j as f64 / 4.0).round() as usize;
        if s > max_shift {
            break;
        }
        if out.last() != Some(&s) {
            out.push(s);
        }
        j += 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightInfo {
    pub eps0: f64,
    pub h0: f64,
    pub side: Option<CutoffSide>,
}

impl WeightInfo {
    fn of(c: &Cutoff) -> Self {
        Self {
            eps0: c.eps0,
            h0: c.h0,
            side: (c.eps0 > 0.0).then_some(c.side),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeminormRow {
    pub shift: usize,
    pub h: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeminormTable {
    pub axis: Axis,
    pub field: FieldKind,
    pub mode: Aggregation,
    pub weight: WeightInfo,
    pub rows: Vec<SeminormRow>,
}

/// Read access to a field at a time level by flat component index.
struct Access<'a> {
    hist: &'a FieldHistory,
    kind: FieldKind,
    width: usize,
    materialized: Vec<Vec<f64>>,
}

impl<'a> Access<'a> {
    fn new(hist: &'a FieldHistory, kind: FieldKind) -> Self {
        let materialized = if kind == FieldKind::GradURate {
            hist.levels(kind).map(|k| hist.field(kind, k)).collect()
        } else {
            Vec::new()
        };
        Self {
            hist,
            kind,
            width: hist.width(kind),
            materialized,
        }
    }

    fn first(&self) -> usize {
        *self.hist.levels(self.kind).start()
    }

    fn last(&self) -> usize {
        *self.hist.levels(self.kind).end()
    }

    #[inline]
    fn at(&self, k: usize, i: usize) -> f64 {
        let h = self.hist;
        match self.kind {
            FieldKind::Sigma => h.sigma[k][i],
            FieldKind::Xi => h.xi[k][i],
            FieldKind::SigmaRate => (h.sigma[k][i] - h.sigma[k - 1][i]) / h.dt,
            FieldKind::XiRate => (h.xi[k][i] - h.xi[k - 1][i]) / h.dt,
            FieldKind::GradURate => self.materialized[k - 1][i],
        }
    }
}

/// Shifted difference `w(· + h) - w(·)` of a quadrature-point field.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffField {
    pub axis: Axis,
    pub shift: usize,
    pub h: f64,
    /// Time level of the unshifted point.
    pub level: usize,
    pub width: usize,
    /// Unshifted quadrature points where the shifted point is inside the
    /// domain (all points for the time axis).
    pub points: Vec<usize>,
    /// `width` components per entry of `points`.
    pub values: Vec<f64>,
}

fn max_spatial_shift(grid: &Grid, a: usize) -> usize {
    grid.cell_counts()[a] / 2
}

/// Unweighted shifted difference of `kind` at time level `level`.
pub fn diff_quotient(
    hist: &FieldHistory,
    kind: FieldKind,
    axis: Axis,
    shift: usize,
    level: usize,
) -> Result<DiffField, ProbeError> {
    let grid = &hist.grid;
    let acc = Access::new(hist, kind);
    let w = acc.width;
    match axis.coordinate(grid.dim()) {
        None if axis != Axis::Time => Err(ProbeError::InvalidAxis { axis, d: grid.dim() }),
        None => {
            let max = acc.last() - acc.first();
            if shift == 0 || level < acc.first() || level + shift > acc.last() {
                return Err(ProbeError::ShiftOutOfRange { axis, shift, max });
            }
            let values = (0..grid.n_qp() * w)
                .map(|i| acc.at(level + shift, i) - acc.at(level, i))
                .collect();
            Ok(DiffField {
                axis,
                shift,
                h: shift as f64 * hist.dt,
                level,
                width: w,
                points: (0..grid.n_qp()).collect(),
                values,
            })
        }
        Some(a) => {
            let max = grid.cell_counts()[a] - 1;
            if shift == 0 || shift > max || level < acc.first() || level > acc.last() {
                return Err(ProbeError::ShiftOutOfRange { axis, shift, max });
            }
            let nq = grid.qp_per_cell();
            let stride = grid.cell_stride(a);
            let mut points = Vec::new();
            let mut values = Vec::new();
            for cell in 0..grid.n_cells() {
                if grid.cell_multi(cell)[a] + shift >= grid.cell_counts()[a] {
                    continue;
                }
                let other = cell + shift * stride;
                for q in 0..nq {
                    let (p0, p1) = (cell * nq + q, other * nq + q);
                    points.push(p0);
                    for c in 0..w {
                        values.push(acc.at(level, p1 * w + c) - acc.at(level, p0 * w + c));
                    }
                }
            }
            Ok(DiffField {
                axis,
                shift,
                h: shift as f64 * grid.h,
                level,
                width: w,
                points,
                values,
            })
        }
    }
}

struct SpatialShift {
    /// Index along the shifted axis for every cell.
    axis_index: Vec<usize>,
    count: usize,
    stride: usize,
}

impl SpatialShift {
    fn new(grid: &Grid, a: usize) -> Self {
        Self {
            axis_index: (0..grid.n_cells()).map(|c| grid.cell_multi(c)[a]).collect(),
            count: grid.cell_counts()[a],
            stride: grid.cell_stride(a),
        }
    }

    /// `∫ φ² |Δw|²` at level `k`, with `φ` taken at the unshifted point and
    /// pairs leaving the domain dropped.
    fn value(&self, grid: &Grid, acc: &Access<'_>, phi: &[f64], s: usize, k: usize) -> f64 {
        let nq = grid.qp_per_cell();
        let w = acc.width;
        let mut sum = 0.0;
        for (cell, &idx) in self.axis_index.iter().enumerate() {
            if idx + s >= self.count {
                continue;
            }
            let other = cell + s * self.stride;
            for q in 0..nq {
                let (p0, p1) = (cell * nq + q, other * nq + q);
                for c in 0..w {
                    let (a0, a1) = (acc.at(k, p0 * w + c), acc.at(k, p1 * w + c));
                    let diff = phi[p0] * (a1 - a0);
                    sum += diff * diff;
                }
            }
        }
        grid.qp_weight() * sum
    }
}

fn time_pair_value(grid: &Grid, acc: &Access<'_>, phi: &[f64], s: usize, k: usize) -> f64 {
    let w = acc.width;
    let mut sum = 0.0;
    for qp in 0..grid.n_qp() {
        let p2 = phi[qp] * phi[qp];
        for c in 0..w {
            let d = acc.at(k + s, qp * w + c) - acc.at(k, qp * w + c);
            sum += p2 * d * d;
        }
    }
    grid.qp_weight() * sum
}

/// Aggregated weighted seminorm `S(h)` over a ladder of shifts.
///
/// Time sums use `N - s` level pairs (spatial integrals use `N` levels)
/// starting at the first level where the field is defined, each weighted
/// by `Δt`.
pub fn seminorm_table(
    hist: &FieldHistory,
    axis: Axis,
    field: FieldKind,
    cutoff: &Cutoff,
    mode: Aggregation,
) -> Result<SeminormTable, ProbeError> {
    let grid = &hist.grid;
    let acc = Access::new(hist, field);
    let phi = &cutoff.qp;
    let n_steps = hist.steps();
    let first = acc.first();
    let rows = match axis.coordinate(grid.dim()) {
        None if axis != Axis::Time => return Err(ProbeError::InvalidAxis { axis, d: grid.dim() }),
        None => {
            let ladder = shift_ladder(n_steps / 2);
            if ladder.is_empty() {
                return Err(ProbeError::EmptyLadder(axis));
            }
            ladder
                .iter()
                .map(|&s| {
                    let pairs: Vec<f64> = (first..first + n_steps - s)
                        .into_par_iter()
                        .map(|k| time_pair_value(grid, &acc, phi, s, k))
                        .collect();
                    let value = match mode {
                        Aggregation::Integral => hist.dt * pairs.iter().sum::<f64>(),
                        Aggregation::Sup => pairs.iter().copied().fold(0.0, f64::max),
                    };
                    SeminormRow {
                        shift: s,
                        h: s as f64 * hist.dt,
                        value,
                    }
                })
                .collect()
        }
        Some(a) => {
            let ladder = shift_ladder(max_spatial_shift(grid, a));
            if ladder.is_empty() {
                return Err(ProbeError::EmptyLadder(axis));
            }
            let shifter = SpatialShift::new(grid, a);
            let levels: Vec<usize> = match mode {
                Aggregation::Integral => (first..first + n_steps).collect(),
                Aggregation::Sup => (first..=acc.last()).collect(),
            };
            ladder
                .iter()
                .map(|&s| {
                    let vals: Vec<f64> = levels
                        .par_iter()
                        .map(|&k| shifter.value(grid, &acc, phi, s, k))
                        .collect();
                    let value = match mode {
                        Aggregation::Integral => hist.dt * vals.iter().sum::<f64>(),
                        Aggregation::Sup => vals.iter().copied().fold(0.0, f64::max),
                    };
                    SeminormRow {
                        shift: s,
                        h: s as f64 * grid.h,
                        value,
                    }
                })
                .collect()
        }
    };
    Ok(SeminormTable {
        axis,
        field,
        mode,
        weight: WeightInfo::of(cutoff),
        rows,
    })
}

/// Least-squares slope of `log S` against `log h`, halved.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExponentFit {
    Fitted {
        s_hat: f64,
        r2: f64,
        points: usize,
        /// Rows in the window with `S(h) = 0`, left out of the fit.
        excluded_zero_rows: usize,
        h_min: f64,
        h_max: f64,
    },
    /// Every row in the window is exactly zero.
    IdenticallyRegular,
}

impl ExponentFit {
    pub fn s_hat(&self) -> Option<f64> {
        match self {
            Self::Fitted { s_hat, .. } => Some(*s_hat),
            Self::IdenticallyRegular => None,
        }
    }

    pub fn r2(&self) -> Option<f64> {
        match self {
            Self::Fitted { r2, .. } => Some(*r2),
            Self::IdenticallyRegular => None,
        }
    }
}

fn in_window(h: f64, window: [f64; 2]) -> bool {
    h >= window[0] * (1.0 - 1e-9) && h <= window[1] * (1.0 + 1e-9)
}

/// Ordinary least squares `y = a + b x`; returns `(b, a, r²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

pub fn fit_exponent(table: &SeminormTable, window: [f64; 2]) -> Result<ExponentFit, ProbeError> {
    let rows: Vec<&SeminormRow> = table.rows.iter().filter(|r| in_window(r.h, window)).collect();
    if !rows.is_empty() && rows.iter().all(|r| r.value == 0.0) {
        return Ok(ExponentFit::IdenticallyRegular);
    }
    let pos: Vec<&&SeminormRow> = rows.iter().filter(|r| r.value > 0.0).collect();
    if pos.len() < 4 {
        return Err(ProbeError::TooFewPoints { got: pos.len() });
    }
    let x: Vec<f64> = pos.iter().map(|r| r.h.ln()).collect();
    let y: Vec<f64> = pos.iter().map(|r| r.value.ln()).collect();
    let (slope, _, r2) = linear_fit(&x, &y);
    Ok(ExponentFit::Fitted {
        s_hat: slope / 2.0,
        r2,
        points: pos.len(),
        excluded_zero_rows: rows.len() - pos.len(),
        h_min: pos.iter().map(|r| r.h).fold(f64::INFINITY, f64::min),
        h_max: pos.iter().map(|r| r.h).fold(0.0, f64::max),
    })
}

/// Which part of the boundary the localization weight sits next to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetBoundary {
    Neumann,
    Dirichlet,
}

impl TargetBoundary {
    pub fn of(mode: BoundaryMode, side: CutoffSide) -> Self {
        match (mode, side) {
            (BoundaryMode::AllDirichlet, _) | (BoundaryMode::Mixed, CutoffSide::Dirichlet) => Self::Dirichlet,
            _ => Self::Neumann,
        }
    }
}

impl FromStr for TargetBoundary {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "neumann" | "mixed" | "all-neumann-bottom" => Ok(Self::Neumann),
            "dirichlet" | "all-dirichlet" => Ok(Self::Dirichlet),
            _ => Err(format!(
                "unknown boundary `{s}` (expected neumann, dirichlet, mixed, all-dirichlet or all-neumann-bottom)"
            )),
        }
    }
}

/// `α(d) = (2d - 7 + √(1 + 4d² + 20d)) / (8(d - 1))`
pub fn alpha(d: usize) -> f64 {
    let d = d as f64;
    (2.0 * d - 7.0 + (1.0 + 4.0 * d * d + 20.0 * d).sqrt()) / (8.0 * (d - 1.0))
}

/// `λ = 1 / (2β(d - 1) + 1)`
pub fn lambda(beta: f64, d: usize) -> f64 {
    1.0 / (2.0 * beta * (d as f64 - 1.0) + 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BetaValue {
    pub p: f64,
    pub beta: f64,
    pub lambda: f64,
    /// In `d = 2` the upper bound on `p` degenerates to `∞`.
    pub unbounded_range: bool,
}

/// `β(p, d) = (p - 2) / (4(d - 1) - 2p(d - 2))` for `p ∈ (2, 2(d-1)/(d-2))`.
pub fn beta(p: f64, d: usize) -> Result<BetaValue, ProbeError> {
    if d != 2 && d != 3 {
        return Err(ProbeError::InvalidParameter(format!("dimension {d} not in {{2, 3}}")));
    }
    let df = d as f64;
    let upper = if d == 2 { f64::INFINITY } else { 2.0 * (df - 1.0) / (df - 2.0) };
    if !(p > 2.0 && p < upper) {
        return Err(ProbeError::InvalidParameter(format!("p = {p} outside (2, {upper})")));
    }
    let b = (p - 2.0) / (4.0 * (df - 1.0) - 2.0 * p * (df - 2.0));
    Ok(BetaValue {
        p,
        beta: b,
        lambda: lambda(b, d),
        unbounded_range: d == 2,
    })
}

/// Inverse of [`beta`] in `p`.
pub fn p_for_beta(b: f64, d: usize) -> f64 {
    let df = d as f64;
    (4.0 * b * (df - 1.0) + 2.0) / (1.0 + 2.0 * b * (df - 2.0))
}

/// Fractional exponents `s` (in `S(h) ≲ h^{2s}`) predicted for each
/// probed quantity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExponentTargets {
    pub d: usize,
    pub model: Model,
    pub boundary: TargetBoundary,
    pub sigma_normal: f64,
    pub rate_time: f64,
    pub rate_tangential: f64,
    pub rate_normal: f64,
    pub alpha: f64,
    /// Largest `β` for which the normal-direction iteration improves
    /// (`α/3`), with the matching `p` and `λ`.
    pub beta_critical: BetaValue,
}

impl ExponentTargets {
    /// Target for a probe, if the theory provides one.
    pub fn target_for(&self, axis: Axis, field: FieldKind, mode: Aggregation) -> Option<f64> {
        use FieldKind::*;
        match (axis, field, mode) {
            (Axis::Normal, Sigma | Xi, Aggregation::Sup) => Some(self.sigma_normal),
            (Axis::Normal, SigmaRate | XiRate, Aggregation::Integral) => Some(self.rate_normal),
            (Axis::Time, SigmaRate | XiRate, Aggregation::Integral) => Some(self.rate_time),
            (Axis::Tangential(_), SigmaRate | XiRate, Aggregation::Integral) => Some(self.rate_tangential),
            (Axis::Tangential(_) | Axis::Time, Sigma | Xi, _) => Some(1.0),
            _ => None,
        }
    }
}

pub fn target_exponents(d: usize, model: Model, boundary: TargetBoundary) -> Result<ExponentTargets, ProbeError> {
    if d != 2 && d != 3 {
        return Err(ProbeError::InvalidParameter(format!("dimension {d} not in {{2, 3}}")));
    }
    let a = alpha(d);
    let (sigma_normal, rate_normal) = match (model, boundary) {
        (Model::Isotropic, TargetBoundary::Neumann) => (a, a / 3.0),
        _ => (0.6, 0.2),
    };
    let bc = a / 3.0;
    Ok(ExponentTargets {
        d,
        model,
        boundary,
        sigma_normal,
        rate_time: 0.5,
        rate_tangential: 0.5,
        rate_normal,
        alpha: a,
        beta_critical: BetaValue {
            p: p_for_beta(bc, d),
            beta: bc,
            lambda: lambda(bc, d),
            unbounded_range: d == 2,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InterpolationRow {
    pub shift: usize,
    pub h: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `None` when the right side vanishes.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InterpolationReport {
    pub delta: f64,
    pub rows: Vec<InterpolationRow>,
    /// `max R / min R` over rows with a finite ratio.
    pub spread: Option<f64>,
    /// No plastic activity anywhere in the history.
    pub degenerate: bool,
}

fn normal_pair_sum(hist: &FieldHistory, kinds: [FieldKind; 2], phi: &[f64], s: usize) -> f64 {
    let grid = &hist.grid;
    let a = grid.dim() - 1;
    let shifter = SpatialShift::new(grid, a);
    kinds
        .iter()
        .map(|&kind| {
            let acc = Access::new(hist, kind);
            let first = acc.first();
            let vals: Vec<f64> = (first..first + hist.steps())
                .into_par_iter()
                .map(|k| shifter.value(grid, &acc, phi, s, k))
                .collect();
            hist.dt * vals.iter().sum::<f64>()
        })
        .sum()
}

/// Ratios `R(h) = LHS(h) / RHS(h)` of the time-interpolation inequality for
/// normal shifts in `window`.
pub fn interpolation_check(
    hist: &FieldHistory,
    cutoff: &Cutoff,
    delta: f64,
    window: [f64; 2],
) -> Result<InterpolationReport, ProbeError> {
    if !(delta > 0.0 && delta < 1.0 / 3.0) {
        return Err(ProbeError::InvalidParameter(format!("delta = {delta} outside (0, 1/3)")));
    }
    if hist.steps() < 8 {
        return Err(ProbeError::InvalidParameter(format!(
            "history has {} steps, need at least 8",
            hist.steps()
        )));
    }
    let grid = &hist.grid;
    let degenerate = hist.xi.iter().all(|lvl| lvl.iter().all(|v| *v == 0.0));
    let ladder: Vec<usize> = shift_ladder(max_spatial_shift(grid, grid.dim() - 1))
        .into_iter()
        .filter(|&s| in_window(s as f64 * grid.h, window))
        .collect();
    if ladder.is_empty() {
        return Err(ProbeError::EmptyLadder(Axis::Normal));
    }
    let rows: Vec<InterpolationRow> = ladder
        .iter()
        .map(|&s| {
            let lhs = normal_pair_sum(hist, [FieldKind::SigmaRate, FieldKind::XiRate], &cutoff.qp, s);
            let base = normal_pair_sum(hist, [FieldKind::Sigma, FieldKind::Xi], &cutoff.qp, s);
            let rhs = base.powf(1.0 / 3.0 - delta);
            InterpolationRow {
                shift: s,
                h: s as f64 * grid.h,
                lhs,
                rhs,
                ratio: (rhs > 0.0).then(|| lhs / rhs),
            }
        })
        .collect();
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r.ratio).filter(|r| *r > 0.0).collect();
    let spread = (!ratios.is_empty()).then(|| {
        ratios.iter().copied().fold(0.0, f64::max) / ratios.iter().copied().fold(f64::INFINITY, f64::min)
    });
    Ok(InterpolationReport {
        delta,
        rows,
        spread,
        degenerate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StripTime {
    pub t: f64,
    /// `∫_{x_d < h} |D_d u̇ φ|²`
    pub normal_gradient: f64,
    /// `∫_{x_d < h} |E(u̇) φ|²`
    pub sym_gradient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StripReport {
    pub shift: usize,
    pub h: f64,
    pub per_time: Vec<StripTime>,
    /// `Σ Δt ∫ |D_d u̇ φ|²`
    pub normal_gradient_integral: f64,
    pub sym_gradient_integral: f64,
    /// `Σ Δt (∫ |D_d u̇ φ|²)^{1/2}`
    pub normal_gradient_root_integral: f64,
}

/// Strip integrals of the velocity gradient over `x_d ∈ (0, h)`, `h = shift/n`.
pub fn strip_gradient_norm(hist: &FieldHistory, shift: usize, cutoff: &Cutoff) -> Result<StripReport, ProbeError> {
    let grid = &hist.grid;
    let d = grid.dim();
    let h = shift as f64 * grid.h;
    if shift == 0 || shift > grid.cell_counts()[d - 1] {
        return Err(ProbeError::EmptyStrip(format!("shift {shift}")));
    }
    if cutoff.h0 > 0.0 && h > cutoff.h0 * (1.0 + 1e-12) {
        return Err(ProbeError::EmptyStrip(format!("h = {h} exceeds h0 = {}", cutoff.h0)));
    }
    let nq = grid.qp_per_cell();
    let w = grid.qp_weight();
    let cells: Vec<usize> = (0..grid.n_cells())
        .filter(|&c| grid.cell_multi(c)[d - 1] < shift)
        .collect();
    let per_time: Vec<StripTime> = (1..=hist.steps())
        .into_par_iter()
        .map(|k| {
            let v: Vec<f64> = hist.u[k].iter().zip(&hist.u[k - 1]).map(|(a, b)| (a - b) / hist.dt).collect();
            let (mut nd, mut es) = (0.0, 0.0);
            for &cell in &cells {
                for q in 0..nq {
                    let p2 = cutoff.qp[cell * nq + q].powi(2);
                    let g = grid.gradient_at(&v, cell, q);
                    for i in 0..d {
                        nd += w * p2 * g[i][d - 1] * g[i][d - 1];
                        for j in 0..d {
                            let e = 0.5 * (g[i][j] + g[j][i]);
                            es += w * p2 * e * e;
                        }
                    }
                }
            }
            StripTime {
                t: hist.times[k],
                normal_gradient: nd,
                sym_gradient: es,
            }
        })
        .collect();
    Ok(StripReport {
        shift,
        h,
        normal_gradient_integral: hist.dt * per_time.iter().map(|r| r.normal_gradient).sum::<f64>(),
        sym_gradient_integral: hist.dt * per_time.iter().map(|r| r.sym_gradient).sum::<f64>(),
        normal_gradient_root_integral: hist.dt * per_time.iter().map(|r| r.normal_gradient.sqrt()).sum::<f64>(),
        per_time,
    })
}

/// One probed quantity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub struct ProbeSpec {
    pub axis: Axis,
    pub field: FieldKind,
    pub mode: Aggregation,
}

impl ProbeSpec {
    pub fn new(axis: Axis, field: FieldKind, mode: Aggregation) -> Self {
        Self { axis, field, mode }
    }

    pub fn label(&self) -> String {
        format!("{}_{}_{}", self.axis, self.field.name(), self.mode)
    }
}

/// The standard probe set: normal, tangential and time seminorms of the
/// stress and hardening variable and their rates.
pub fn default_probes(d: usize) -> Vec<ProbeSpec> {
    use Aggregation::*;
    use FieldKind::*;
    let mut v = vec![
        ProbeSpec::new(Axis::Time, SigmaRate, Integral),
        ProbeSpec::new(Axis::Time, XiRate, Integral),
        ProbeSpec::new(Axis::Normal, Sigma, Sup),
        ProbeSpec::new(Axis::Normal, Xi, Sup),
        ProbeSpec::new(Axis::Normal, SigmaRate, Integral),
        ProbeSpec::new(Axis::Normal, XiRate, Integral),
    ];
    for j in 0..d - 1 {
        v.push(ProbeSpec::new(Axis::Tangential(j), Sigma, Sup));
        v.push(ProbeSpec::new(Axis::Tangential(j), SigmaRate, Integral));
    }
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub eps0: f64,
    pub h0: f64,
    pub side: CutoffSide,
}

/// Probe settings; `None` windows resolve to `[2/n, 1/4]` and `[2Δt, T/4]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub cutoff: CutoffSpec,
    pub probes: Vec<ProbeSpec>,
    pub space_window: Option<[f64; 2]>,
    pub time_window: Option<[f64; 2]>,
    pub delta: f64,
}

impl ProbeConfig {
    pub fn space_window(&self, grid: &Grid) -> [f64; 2] {
        self.space_window.unwrap_or([2.0 * grid.h, 0.25])
    }

    pub fn time_window(&self, dt: f64, t_final: f64) -> [f64; 2] {
        self.time_window.unwrap_or([2.0 * dt, 0.25 * t_final])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExponentReport {
    pub probe: ProbeSpec,
    pub window: [f64; 2],
    pub fit: Option<ExponentFit>,
    /// Why no fit is available.
    pub error: Option<String>,
    pub target: Option<f64>,
    /// `ŝ - (target - δ)`
    pub margin: Option<f64>,
    /// `max_h S(h) / h^{2 (target - δ)}` over the window.
    pub nikolskii_constant: Option<f64>,
}

/// `max/min` of `sup_t ‖φ Δ^h w‖₂ / h` over the window.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuotientSpread {
    pub probe: ProbeSpec,
    pub quotients: Vec<(f64, f64)>,
    pub spread: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeReport {
    pub targets: ExponentTargets,
    pub delta: f64,
    pub space_window: [f64; 2],
    pub time_window: [f64; 2],
    pub tables: Vec<SeminormTable>,
    pub exponents: Vec<ExponentReport>,
    pub tangential_quotients: Vec<QuotientSpread>,
    pub interpolation: Option<InterpolationReport>,
    pub interpolation_error: Option<String>,
    pub strips: Vec<StripReport>,
}

impl ProbeReport {
    pub fn exponent(&self, probe: ProbeSpec) -> Option<&ExponentReport> {
        self.exponents.iter().find(|e| e.probe == probe)
    }

    pub fn table(&self, probe: ProbeSpec) -> Option<&SeminormTable> {
        self.tables
            .iter()
            .find(|t| t.axis == probe.axis && t.field == probe.field && t.mode == probe.mode)
    }
}

pub fn quotient_spread(table: &SeminormTable, window: [f64; 2]) -> QuotientSpread {
    let quotients: Vec<(f64, f64)> = table
        .rows
        .iter()
        .filter(|r| in_window(r.h, window))
        .map(|r| (r.h, r.value.sqrt() / r.h))
        .collect();
    let pos: Vec<f64> = quotients.iter().map(|q| q.1).filter(|v| *v > 0.0).collect();
    QuotientSpread {
        probe: ProbeSpec::new(table.axis, table.field, table.mode),
        spread: (!pos.is_empty()).then(|| {
            pos.iter().copied().fold(0.0, f64::max) / pos.iter().copied().fold(f64::INFINITY, f64::min)
        }),
        quotients,
    }
}

/// All probes of `config` on a completed history.
pub fn probe_history(hist: &FieldHistory, scenario: &Scenario, config: &ProbeConfig) -> Result<ProbeReport, ProbeError> {
    let grid = &hist.grid;
    let d = grid.dim();
    let c = &config.cutoff;
    let cutoff = make_cutoff(grid, c.eps0, c.h0, c.side)?;
    let targets = target_exponents(d, scenario.model(), TargetBoundary::of(scenario.geometry.mode, c.side))?;
    let space_window = config.space_window(grid);
    let time_window = config.time_window(hist.dt, scenario.t_final);
    let mut tables = Vec::new();
    let mut exponents = Vec::new();
    let mut tangential_quotients = Vec::new();
    for &probe in &config.probes {
        let window = if probe.axis == Axis::Time { time_window } else { space_window };
        let table = seminorm_table(hist, probe.axis, probe.field, &cutoff, probe.mode)?;
        let target = targets.target_for(probe.axis, probe.field, probe.mode);
        let (fit, error) = match fit_exponent(&table, window) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let margin = fit.and_then(|f| f.s_hat()).zip(target).map(|(s, t)| s - (t - config.delta));
        let nikolskii_constant = target.map(|t| {
            table
                .rows
                .iter()
                .filter(|r| in_window(r.h, window))
                .map(|r| r.value / r.h.powf(2.0 * (t - config.delta)))
                .fold(0.0, f64::max)
        });
        if matches!(probe.axis, Axis::Tangential(_)) && probe.mode == Aggregation::Sup {
            tangential_quotients.push(quotient_spread(&table, window));
        }
        exponents.push(ExponentReport {
            probe,
            window,
            fit,
            error,
            target,
            margin,
            nikolskii_constant,
        });
        tables.push(table);
    }
    let (interpolation, interpolation_error) = match interpolation_check(hist, &cutoff, config.delta, space_window) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let max_strip = ((c.h0 / grid.h) + 1e-9).floor() as usize;
    let strips = shift_ladder(max_strip)
        .into_iter()
        .filter_map(|s| strip_gradient_norm(hist, s, &cutoff).ok())
        .collect();
    Ok(ProbeReport {
        targets,
        delta: config.delta,
        space_window,
        time_window,
        tables,
        exponents,
        tangential_quotients,
        interpolation,
        interpolation_error,
        strips,
    })
}

/// Energy quantities compared across a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergySummary {
    pub sup_sigma_rate_l2: f64,
    pub sup_xi_rate_l2: f64,
    pub sup_u_rate_h1: f64,
    pub final_overshoot_l2: f64,
    pub max_overshoot_linf: f64,
    pub final_penalty_energy: f64,
    pub energy_bound: f64,
}

impl From<&EnergyReport> for EnergySummary {
    fn from(e: &EnergyReport) -> Self {
        Self {
            sup_sigma_rate_l2: e.sup_sigma_rate_l2,
            sup_xi_rate_l2: e.sup_xi_rate_l2,
            sup_u_rate_h1: e.sup_u_rate_h1,
            final_overshoot_l2: e.final_overshoot_l2,
            max_overshoot_linf: e.max_overshoot_linf,
            final_penalty_energy: e.final_penalty_energy,
            energy_bound: e.energy_bound,
        }
    }
}

impl EnergySummary {
    fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("sup_sigma_rate_l2", self.sup_sigma_rate_l2),
            ("sup_xi_rate_l2", self.sup_xi_rate_l2),
            ("sup_u_rate_h1", self.sup_u_rate_h1),
            ("final_overshoot_l2", self.final_overshoot_l2),
            ("max_overshoot_linf", self.max_overshoot_linf),
            ("final_penalty_energy", self.final_penalty_energy),
            ("energy_bound", self.energy_bound),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepEntry {
    pub mu: f64,
    pub error: Option<String>,
    pub energy: Option<EnergySummary>,
    pub newton_iterations: usize,
    pub exponents: Vec<ExponentReport>,
    pub interpolation_spread: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub r2: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UniformityReport {
    pub mus: Vec<f64>,
    pub dt: f64,
    /// `Δt ≤ μ_min / 2`
    pub dt_rule_satisfied: bool,
    pub entries: Vec<SweepEntry>,
    /// `max/min` over successful runs; `1` when every value is zero,
    /// `None` when only some are.
    pub spreads: BTreeMap<String, Option<f64>>,
    /// Log-log slope of the final L² overshoot against `μ`.
    pub overshoot_slope_l2: Option<SlopeFit>,
    pub overshoot_slope_linf: Option<SlopeFit>,
    pub failures: usize,
}

fn spread(values: &[f64]) -> Option<f64> {
    let max = values.iter().copied().fold(0.0, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        Some(1.0)
    } else if min > 0.0 {
        Some(max / min)
    } else {
        None
    }
}

fn slope(points: &[(f64, f64)]) -> Option<SlopeFit> {
    let pos: Vec<&(f64, f64)> = points.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).collect();
    if pos.len() < 2 {
        return None;
    }
    let x: Vec<f64> = pos.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = pos.iter().map(|p| p.1.ln()).collect();
    let (s, _, r2) = linear_fit(&x, &y);
    Some(SlopeFit {
        slope: s,
        r2,
        points: pos.len(),
    })
}

/// Which runs of a sweep get the probe set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeScope {
    All,
    SmallestMu,
}

/// Runs `scenario` for every `μ` (one history in memory at a time). `probe`
/// enables the probe set on the runs selected by `scope`; `on_run` sees each
/// completed run.
pub fn mu_sweep(
    scenario: &Scenario,
    mus: &[f64],
    probe: Option<&ProbeConfig>,
    scope: ProbeScope,
    mut on_run: impl FnMut(f64, &Scenario, &RunOutcome, Option<&ProbeReport>),
) -> Result<UniformityReport, ProbeError> {
    if mus.is_empty() || mus.iter().any(|m| !(*m > 0.0)) {
        return Err(ProbeError::InvalidParameter("mu values must be positive and non-empty".into()));
    }
    let mu_min = mus.iter().copied().fold(f64::INFINITY, f64::min);
    let mut entries = Vec::new();
    for &mu in mus {
        let probe = probe.filter(|_| scope == ProbeScope::All || mu == mu_min);
        let entry = (|| -> Result<SweepEntry, String> {
            let scn = scenario.with_mu(mu).map_err(|e| e.to_string())?;
            let out = run_with(
                &scn,
                RunOptions {
                    record_history: probe.is_some(),
                },
            )
            .map_err(|e| e.to_string())?;
            let report = match (probe, out.history.as_ref()) {
                (Some(cfg), Some(h)) => Some(probe_history(h, &scn, cfg).map_err(|e| e.to_string())?),
                _ => None,
            };
            on_run(mu, &scn, &out, report.as_ref());
            Ok(SweepEntry {
                mu,
                error: None,
                energy: Some(EnergySummary::from(&out.energy)),
                newton_iterations: out.total_newton_iterations(),
                exponents: report.as_ref().map(|r| r.exponents.clone()).unwrap_or_default(),
                interpolation_spread: report.as_ref().and_then(|r| r.interpolation.as_ref()).and_then(|i| i.spread),
            })
        })()
        .unwrap_or_else(|e| SweepEntry {
            mu,
            error: Some(e),
            energy: None,
            newton_iterations: 0,
            exponents: Vec::new(),
            interpolation_spread: None,
        });
        entries.push(entry);
    }
    let ok: Vec<&SweepEntry> = entries.iter().filter(|e| e.error.is_none()).collect();
    let mut spreads = BTreeMap::new();
    if let Some(first) = ok.first().and_then(|e| e.energy) {
        for (i, (name, _)) in first.named().iter().enumerate() {
            let vals: Vec<f64> = ok.iter().filter_map(|e| e.energy).map(|e| e.named()[i].1).collect();
            spreads.insert((*name).to_string(), spread(&vals));
        }
    }
    let over = |f: fn(&EnergySummary) -> f64| -> Vec<(f64, f64)> {
        ok.iter().filter_map(|e| e.energy.as_ref().map(|en| (e.mu, f(en)))).collect()
    };
    Ok(UniformityReport {
        mus: mus.to_vec(),
        dt: scenario.dt(),
        dt_rule_satisfied: scenario.dt() <= 0.5 * mu_min * (1.0 + 1e-12),
        failures: entries.len() - ok.len(),
        overshoot_slope_l2: slope(&over(|e| e.final_overshoot_l2)),
        overshoot_slope_linf: slope(&over(|e| e.max_overshoot_linf)),
        entries,
        spreads,
    })
}
