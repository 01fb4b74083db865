//! Dense assembly of the discrete nonlocal operator.
//!
//! Unknowns are cell values of a piecewise-constant function vanishing
//! outside the domain. The pair weight is
//! `w_ij = ½ (Q(i,j) + Q(j,i))` with `Q(i,j) = |C_i| ∫_{C_j} K(x_i, y) dy`,
//! so that `uᵀ A u = ½ ∬ K (u(x) - u(y))² + ∫ c u²` with
//!
//! ```text
//! A_ii = Σ_j w_ij + κ_i + c_i |C_i|,   A_ij = -w_ij,
//! ```
//!
//! where `κ_i` collects the interaction of cell `i` with the exterior of the
//! domain. Cells more than two cells apart use the midpoint rule.

use std::cell::RefCell;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{unit_ball_volume, unit_sphere_area, Kernel, KernelError, Modulation, ProfileKind, RadialProfile};
use crate::quad::{self, QuadConfig, QuadError};
use crate::rearrange::{Grid, GridFunction};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("kernel is {kernel}-D but the grid is {grid}-D")]
    Dimension { kernel: usize, grid: usize },
    #[error("near-field quadrature for cells {i} and {j} did not settle within the refinement cap")]
    NearField { i: usize, j: usize },
    #[error("angular quadrature did not converge at (ρ, τ) = ({rho}, {tau})")]
    Angular { rho: f64, tau: f64 },
    #[error("negative coefficient {value} at unknown {index}")]
    NegativeCoefficient { index: usize, value: f64 },
    #[error("dense storage for {cells} unknowns needs {bytes} bytes, above the cap of {cap}")]
    TooLarge { cells: usize, bytes: u64, cap: u64 },
    #[error("invalid assembly input: {0}")]
    Invalid(String),
}

/// Strict upper triangle of a symmetric matrix, stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedSym {
    m: usize,
    data: Vec<f64>,
}

impl PackedSym {
    pub fn zeros(m: usize) -> Self {
        Self {
            m,
            data: vec![0.0; m * m.saturating_sub(1) / 2],
        }
    }

    /// Bytes needed for `m` unknowns.
    pub fn bytes_for(m: usize) -> u64 {
        (m as u64) * (m as u64).saturating_sub(1) / 2 * 8
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    fn row_offset(&self, i: usize) -> usize {
        i * (2 * self.m - i - 1) / 2
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.data[self.row_offset(i) + j - i - 1],
            std::cmp::Ordering::Greater => self.data[self.row_offset(j) + i - j - 1],
        }
    }

    /// Entries `(i, j)` for `j > i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let start = self.row_offset(i);
        &self.data[start..start + self.m - i - 1]
    }

    fn rows_mut(&mut self) -> Vec<&mut [f64]> {
        let mut rows = Vec::with_capacity(self.m);
        let mut rest: &mut [f64] = &mut self.data;
        for i in 0..self.m {
            let (head, tail) = rest.split_at_mut(self.m - i - 1);
            rows.push(head);
            rest = tail;
        }
        rows
    }

    /// `y = W x` with a fixed block reduction order, so the result does not
    /// depend on the number of threads.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        const BLOCK: usize = 256;
        let m = self.m;
        let blocks: Vec<(usize, usize)> = (0..m).step_by(BLOCK).map(|b| (b, (b + BLOCK).min(m))).collect();
        let parts: Vec<(Vec<f64>, Vec<f64>)> = blocks
            .par_iter()
            .map(|&(b0, b1)| {
                let mut own = vec![0.0; b1 - b0];
                let mut trans = vec![0.0; m - b0];
                for i in b0..b1 {
                    let xi = x[i];
                    let mut acc = 0.0;
                    for (k, &w) in self.row(i).iter().enumerate() {
                        let j = i + 1 + k;
                        acc += w * x[j];
                        trans[j - b0] += w * xi;
                    }
                    own[i - b0] = acc;
                }
                (own, trans)
            })
            .collect();
        let mut y = vec![0.0; m];
        for (&(b0, _), (own, trans)) in blocks.iter().zip(&parts) {
            for (k, v) in own.iter().enumerate() {
                y[b0 + k] += v;
            }
            for (k, v) in trans.iter().enumerate() {
                y[b0 + k] += v;
            }
        }
        y
    }
}

/// What the unknowns of an operator live on.
#[derive(Debug, Clone, PartialEq)]
pub enum Layout {
    /// Domain cells of a grid, ascending linear index.
    Grid(Grid),
    /// Concentric shells of width `radius / shells` in `R^dim`.
    Shells { dim: usize, radius: f64, shells: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssemblyDiagnostics {
    pub unknowns: usize,
    pub near_pairs: usize,
    /// Deepest subdivision level used by tensor Gauss rules on near pairs.
    pub max_refinement_depth: u32,
    /// Largest `|C_i| T_i (Λ - 1)`, the width of the exterior tail interval.
    pub max_tail_width: f64,
    pub max_tail: f64,
    pub median_kappa: f64,
    /// Whether the exterior tail stays below `1e-3` of the median killing term.
    pub tail_margin_ok: bool,
    pub storage_bytes: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    pub near_rel_tol: f64,
    /// Cap on tensor-rule doublings per near pair.
    pub max_levels: u32,
    pub max_bytes: Option<u64>,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            near_rel_tol: 1e-6,
            max_levels: 6,
            max_bytes: None,
        }
    }
}

/// Symmetric weights plus killing and lower-order diagonals.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    layout: Layout,
    weights: Arc<PackedSym>,
    row_sums: Arc<Vec<f64>>,
    kappa: Arc<Vec<f64>>,
    kappa_bounds: Arc<Vec<(f64, f64)>>,
    mass: Arc<Vec<f64>>,
    c: Vec<f64>,
    diagnostics: AssemblyDiagnostics,
}

impl DiscreteOperator {
    fn from_parts(
        layout: Layout,
        weights: PackedSym,
        kappa_bounds: Vec<(f64, f64)>,
        mass: Vec<f64>,
        c: Vec<f64>,
        mut diagnostics: AssemblyDiagnostics,
    ) -> Self {
        let m = weights.dim();
        let mut row_sums = vec![0.0; m];
        for i in 0..m {
            for (k, &w) in weights.row(i).iter().enumerate() {
                row_sums[i] += w;
                row_sums[i + 1 + k] += w;
            }
        }
        let kappa: Vec<f64> = kappa_bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
        let mut sorted = kappa.clone();
        sorted.sort_by(f64::total_cmp);
        diagnostics.median_kappa = sorted.get(m / 2).copied().unwrap_or(0.0);
        diagnostics.unknowns = m;
        diagnostics.storage_bytes = PackedSym::bytes_for(m);
        Self {
            layout,
            weights: Arc::new(weights),
            row_sums: Arc::new(row_sums),
            kappa: Arc::new(kappa),
            kappa_bounds: Arc::new(kappa_bounds),
            mass: Arc::new(mass),
            c,
            diagnostics,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn grid(&self) -> Option<&Grid> {
        match &self.layout {
            Layout::Grid(g) => Some(g),
            Layout::Shells { .. } => None,
        }
    }

    pub fn size(&self) -> usize {
        self.mass.len()
    }

    pub fn weights(&self) -> &PackedSym {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights.get(i, j)
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn kappa_bounds(&self) -> &[(f64, f64)] {
        &self.kappa_bounds
    }

    /// Volume of each unknown's cell or shell.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn coefficient(&self) -> &[f64] {
        &self.c
    }

    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    pub fn diagnostics(&self) -> &AssemblyDiagnostics {
        &self.diagnostics
    }

    /// Same weights with a different lower-order coefficient.
    pub fn with_coefficient(&self, c: &[f64]) -> Result<Self, AssemblyError> {
        check_coefficient(c, self.size())?;
        Ok(Self {
            c: c.to_vec(),
            ..self.clone()
        })
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.size())
            .map(|i| self.row_sums[i] + self.kappa[i] + self.c[i] * self.mass[i])
            .collect()
    }

    /// `A x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weights.matvec(x);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = (self.row_sums[i] + self.kappa[i] + self.c[i] * self.mass[i]) * x[i] - *yi;
        }
        y
    }

    /// `b_i = f_i |C_i|`.
    pub fn load(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(self.mass.iter()).map(|(a, m)| a * m).collect()
    }

    fn pair_sum(&self, u: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.size() {
            for (k, &w) in self.weights.row(i).iter().enumerate() {
                let d = u[i] - u[i + 1 + k];
                acc += w * d * d;
            }
        }
        acc
    }

    /// `½ Σ_{i≠j} w_ij (u_i - u_j)² + Σ (κ_i + c_i |C_i|) u_i²`, equal to `uᵀ A u`.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let diag: f64 = (0..self.size())
            .map(|i| (self.kappa[i] + self.c[i] * self.mass[i]) * u[i] * u[i])
            .sum();
        self.pair_sum(u) + diag
    }

    /// `∬ K (u(x) - u(y))²` over all of `R^N × R^N`, without the coefficient.
    pub fn seminorm_sq(&self, u: &[f64]) -> f64 {
        let ext: f64 = (0..self.size()).map(|i| self.kappa[i] * u[i] * u[i]).sum();
        2.0 * (self.pair_sum(u) + ext)
    }

    pub fn energy_of(&self, u: &GridFunction) -> Result<f64, AssemblyError> {
        Ok(self.energy(&self.restrict(u)?))
    }

    /// Values of `u` on the unknowns of this operator.
    pub fn restrict(&self, u: &GridFunction) -> Result<Vec<f64>, AssemblyError> {
        match &self.layout {
            Layout::Grid(g) if g == u.grid() => Ok(u.interior()),
            _ => Err(AssemblyError::Invalid("function does not live on the operator's grid".into())),
        }
    }

    /// Writes `i,j,w` for every stored pair with nonzero weight.
    pub fn write_triplets<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "w"])?;
        for i in 0..self.size() {
            for (k, &v) in self.weights.row(i).iter().enumerate() {
                if v != 0.0 {
                    w.write_record([i.to_string(), (i + 1 + k).to_string(), format!("{v:.16e}")])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn diagnostics_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.diagnostics).unwrap_or(serde_json::Value::Null)
    }
}

fn check_coefficient(c: &[f64], m: usize) -> Result<(), AssemblyError> {
    if c.len() != m {
        return Err(AssemblyError::Invalid(format!("coefficient has {} entries, expected {m}", c.len())));
    }
    if let Some((index, &value)) = c.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
        return Err(AssemblyError::NegativeCoefficient { index, value });
    }
    Ok(())
}

/// Radial tail `T(a) = ∫_a^∞ j(r) r^{N-1} dr`, tabulated for profiles
/// without a closed form.
enum Tail<'a> {
    Exact(&'a RadialProfile),
    Table {
        profile: &'a RadialProfile,
        a0: f64,
        a1: f64,
        log_step: f64,
        nodes: Vec<f64>,
        values: Vec<f64>,
        slopes: Vec<f64>,
    },
}

impl<'a> Tail<'a> {
    fn new(profile: &'a RadialProfile, a0: f64, a1: f64) -> Result<Self, KernelError> {
        if !matches!(profile.kind(), ProfileKind::Logarithmic { .. }) {
            return Ok(Tail::Exact(profile));
        }
        const NODES: usize = 4096;
        let log_step = (a1 / a0).ln() / (NODES - 1) as f64;
        let nodes: Vec<f64> = (0..NODES).map(|k| a0 * (log_step * k as f64).exp()).collect();
        // integrate node to node and accumulate from the outside in
        let dim = profile.dim() as i32;
        let dens = |r: f64| profile.value(r) * r.powi(dim - 1);
        let mut values = vec![0.0; NODES];
        values[NODES - 1] = profile.radial_tail(nodes[NODES - 1])?;
        let rule = quad::gauss_legendre(10);
        for k in (0..NODES - 1).rev() {
            values[k] = values[k + 1] + quad::gauss_fixed(dens, nodes[k], nodes[k + 1], &rule);
        }
        let slopes = nodes.iter().map(|&a| -dens(a)).collect();
        Ok(Tail::Table {
            profile,
            a0,
            a1,
            log_step,
            nodes,
            values,
            slopes,
        })
    }

    fn eval(&self, a: f64) -> Result<f64, KernelError> {
        match self {
            Tail::Exact(p) => p.radial_tail(a),
            Tail::Table {
                profile,
                a0,
                a1,
                log_step,
                nodes,
                values,
                slopes,
            } => {
                if a < *a0 || a > *a1 {
                    return profile.radial_tail(a);
                }
                let k = (((a / a0).ln() / log_step).floor() as usize).min(nodes.len() - 2);
                let (x0, x1) = (nodes[k], nodes[k + 1]);
                let dx = x1 - x0;
                let t = (a - x0) / dx;
                let (h00, h10, h01, h11) = (
                    (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t),
                    t * (1.0 - t) * (1.0 - t),
                    t * t * (3.0 - 2.0 * t),
                    t * t * (t - 1.0),
                );
                Ok(h00 * values[k] + h10 * dx * slopes[k] + h01 * values[k + 1] + h11 * dx * slopes[k + 1])
            }
        }
    }
}

/// Per-assembly context shared by the weight routines.
struct Ctx<'a> {
    kernel: &'a Kernel,
    grid: &'a Grid,
    h: f64,
    vol: f64,
    tail: Tail<'a>,
    rule: (Vec<f64>, Vec<f64>),
    opts: AssemblyOptions,
}

const FINE: QuadConfig = QuadConfig {
    rel_tol: 1e-10,
    abs_tol: 1e-300,
    max_depth: 20,
};

impl<'a> Ctx<'a> {
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// `∫_{C} J(|x - y|) dy` over the square cell `C` centered at `c`, by
    /// rays from `x`; `x` lies outside `C`.
    fn polar_cell_integral(&self, x: [f64; 2], c: [f64; 2]) -> Result<f64, AssemblyError> {
        let hh = 0.5 * self.h;
        let lo = [c[0] - hh, c[1] - hh];
        let hi = [c[0] + hh, c[1] + hh];
        let base = (c[1] - x[1]).atan2(c[0] - x[0]);
        let mut angles: Vec<f64> = [(lo[0], lo[1]), (hi[0], lo[1]), (lo[0], hi[1]), (hi[0], hi[1])]
            .iter()
            .map(|&(px, py)| wrap(((py - x[1]).atan2(px - x[0])) - base))
            .collect();
        angles.sort_by(f64::total_cmp);
        let err = RefCell::new(None);
        let f = |phi: f64| {
            let th = base + phi;
            let dir = [th.cos(), th.sin()];
            match ray_box(&x, &dir, &lo, &hi) {
                Some((t0, t1)) if t1 > t0 => guard(&err, self.tail.eval(t0)) - guard(&err, self.tail.eval(t1)),
                _ => 0.0,
            }
        };
        let r = quad::integrate_pieces(f, &angles, FINE)?;
        if let Some(e) = err.into_inner() {
            return Err(e.into());
        }
        Ok(r)
    }

    /// `∫_{C_j} K(x, y) dy` by doubling tensor Gauss rules; returns the
    /// value and the level at which it settled.
    fn tensor_cell_integral(&self, x: &[f64], c: [f64; 2], pair: (usize, usize)) -> Result<(f64, u32), AssemblyError> {
        let dim = self.dim();
        let (nodes, weights) = &self.rule;
        let eval = |subs: usize| -> f64 {
            let hs = self.h / subs as f64;
            let mut acc = 0.0;
            let mut y = [0.0; 2];
            if dim == 1 {
                for a in 0..subs {
                    let left = c[0] - 0.5 * self.h + a as f64 * hs;
                    for (t, w) in nodes.iter().zip(weights) {
                        y[0] = left + 0.5 * hs * (t + 1.0);
                        let d = (y[0] - x[0]).abs();
                        acc += w * 0.5 * hs * self.kernel.value_at(x, &y[..1], d);
                    }
                }
            } else {
                for a in 0..subs {
                    for b in 0..subs {
                        let l0 = c[0] - 0.5 * self.h + a as f64 * hs;
                        let l1 = c[1] - 0.5 * self.h + b as f64 * hs;
                        for (t0, w0) in nodes.iter().zip(weights) {
                            y[0] = l0 + 0.5 * hs * (t0 + 1.0);
                            for (t1, w1) in nodes.iter().zip(weights) {
                                y[1] = l1 + 0.5 * hs * (t1 + 1.0);
                                let d = ((y[0] - x[0]).powi(2) + (y[1] - x[1]).powi(2)).sqrt();
                                acc += w0 * w1 * 0.25 * hs * hs * self.kernel.value_at(x, &y, d);
                            }
                        }
                    }
                }
            }
            acc
        };
        let mut prev = eval(1);
        for level in 1..=self.opts.max_levels {
            let next = eval(1 << level);
            if (next - prev).abs() <= self.opts.near_rel_tol * next.abs() {
                return Ok((next, level));
            }
            prev = next;
        }
        Err(AssemblyError::NearField { i: pair.0, j: pair.1 })
    }

    /// `∫_{C_j} K(x, y) dy` in 1-D by adaptive quadrature with the profile's
    /// break points.
    fn adaptive_interval_integral(&self, x: f64, c: f64) -> Result<f64, AssemblyError> {
        let (a, b) = (c - 0.5 * self.h, c + 0.5 * self.h);
        let mut breaks = vec![a];
        for &r in self.kernel.envelope().breakpoints() {
            for y in [x - r, x + r] {
                if y > a && y < b {
                    breaks.push(y);
                }
            }
        }
        breaks.push(b);
        breaks.sort_by(f64::total_cmp);
        let xs = [x];
        Ok(quad::integrate_pieces(
            |y| self.kernel.value_at(&xs, &[y], (y - x).abs()),
            &breaks,
            FINE,
        )?)
    }

    /// `Q = |C_i| ∫_{C_j} K(x_i, y) dy` for a near pair.
    fn near_q(&self, x: [f64; 2], c: [f64; 2], pair: (usize, usize)) -> Result<(f64, u32), AssemblyError> {
        let plain = matches!(self.kernel.modulation(), Modulation::None);
        let (val, depth) = match (self.dim(), plain) {
            (1, true) => {
                let d = (c[0] - x[0]).abs();
                let hh = 0.5 * self.h;
                (self.tail.eval(d - hh)? - self.tail.eval(d + hh)?, 0)
            }
            (1, false) => (self.adaptive_interval_integral(x[0], c[0])?, 0),
            (_, true) => (self.polar_cell_integral(x, c)?, 0),
            _ => self.tensor_cell_integral(&x[..self.dim()], c, pair)?,
        };
        Ok((self.vol * val, depth))
    }

    /// Weight for cells `i, j` (linear grid indices).
    fn pair_weight(&self, i: usize, j: usize) -> Result<(f64, u32, bool), AssemblyError> {
        let ki = self.grid.multi_index(i);
        let kj = self.grid.multi_index(j);
        let cheb = (0..self.dim()).map(|d| ki[d].abs_diff(kj[d])).max().unwrap_or(0);
        if cheb == 0 {
            return Ok((0.0, 0, false));
        }
        let xi = self.grid.center(i);
        let xj = self.grid.center(j);
        let dim = self.dim();
        if cheb > 2 {
            let d = crate::kernels::distance(&xi[..dim], &xj[..dim]);
            return Ok((self.kernel.value_at(&xi[..dim], &xj[..dim], d) * self.vol * self.vol, 0, false));
        }
        let (qij, d1) = self.near_q(xi, xj, (i, j))?;
        if self.kernel.is_translation_invariant() {
            return Ok((qij, d1, true));
        }
        let (qji, d2) = self.near_q(xj, xi, (j, i))?;
        Ok((0.5 * (qij + qji), d1.max(d2), true))
    }

    /// `|C_i| ∫_{outside box} J(|x_i - y|) dy`.
    fn exterior_tail(&self, i: usize) -> Result<f64, AssemblyError> {
        let x = self.grid.center(i);
        let l = self.grid.half_width();
        let t = match self.dim() {
            1 => self.tail.eval(l - x[0])? + self.tail.eval(l + x[0])?,
            _ => {
                let corners = [(l, l), (-l, l), (-l, -l), (l, -l)];
                let mut angles: Vec<f64> = corners
                    .iter()
                    .map(|&(px, py)| (py - x[1]).atan2(px - x[0]))
                    .collect();
                angles.sort_by(f64::total_cmp);
                angles.push(angles[0] + 2.0 * std::f64::consts::PI);
                let lo = [-l, -l];
                let hi = [l, l];
                let err = RefCell::new(None);
                let f = |th: f64| {
                    let dir = [th.cos(), th.sin()];
                    let exit = ray_box(&x, &dir, &lo, &hi).map(|(_, t1)| t1).unwrap_or(0.0);
                    guard(&err, self.tail.eval(exit))
                };
                let v = quad::integrate_pieces(f, &angles, QuadConfig::default())?;
                if let Some(e) = err.into_inner() {
                    return Err(e.into());
                }
                v
            }
        };
        Ok(self.vol * t)
    }
}

/// Records the first error of a callback that must return a number.
fn guard(slot: &RefCell<Option<KernelError>>, r: Result<f64, KernelError>) -> f64 {
    r.unwrap_or_else(|e| {
        slot.borrow_mut().get_or_insert(e);
        0.0
    })
}

fn wrap(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = a % two_pi;
    if a > std::f64::consts::PI {
        a -= two_pi;
    } else if a <= -std::f64::consts::PI {
        a += two_pi;
    }
    a
}

/// Entry and exit distances of the ray `x + t dir` through the box `[lo, hi]`.
fn ray_box(x: &[f64; 2], dir: &[f64; 2], lo: &[f64; 2], hi: &[f64; 2]) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for d in 0..2 {
        if dir[d].abs() < 1e-300 {
            if x[d] < lo[d] || x[d] > hi[d] {
                return None;
            }
        } else {
            let a = (lo[d] - x[d]) / dir[d];
            let b = (hi[d] - x[d]) / dir[d];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    (t1 >= t0.max(0.0)).then_some((t0.max(0.0), t1))
}

/// Assembles the operator of `kernel` on the domain cells of `grid` with
/// lower-order coefficient `c >= 0`.
pub fn assemble(kernel: &Kernel, grid: &Grid, c: &GridFunction) -> Result<DiscreteOperator, AssemblyError> {
    assemble_with(kernel, grid, c, AssemblyOptions::default())
}

pub fn assemble_with(
    kernel: &Kernel,
    grid: &Grid,
    c: &GridFunction,
    opts: AssemblyOptions,
) -> Result<DiscreteOperator, AssemblyError> {
    let start = Instant::now();
    if kernel.dim() != grid.dim() {
        return Err(AssemblyError::Dimension {
            kernel: kernel.dim(),
            grid: grid.dim(),
        });
    }
    if c.grid() != grid {
        return Err(AssemblyError::Invalid("coefficient lives on a different grid".into()));
    }
    let cells = grid.masked_indices();
    let m = cells.len();
    let bytes = PackedSym::bytes_for(m);
    if let Some(cap) = opts.max_bytes {
        if bytes > cap {
            return Err(AssemblyError::TooLarge { cells: m, bytes, cap });
        }
    }
    let c_vals = c.interior();
    check_coefficient(&c_vals, m)?;

    let h = grid.h();
    let dim = grid.dim();
    let far_reach = 4.0 * grid.half_width() * (dim as f64).sqrt() + h;
    let ctx = Ctx {
        kernel,
        grid,
        h,
        vol: grid.cell_volume(),
        tail: Tail::new(kernel.envelope(), 0.25 * h, far_reach)?,
        rule: quad::gauss_legendre(8),
        opts,
    };

    // Translation-invariant kernels get one weight per offset.
    let n = grid.n() as i64;
    let span = (2 * n - 1) as usize;
    let offset_index = |i: usize, j: usize| -> usize {
        let a = grid.multi_index(i);
        let b = grid.multi_index(j);
        let mut idx = 0usize;
        for d in 0..dim {
            idx = idx * span + (b[d] as i64 - a[d] as i64 + n - 1) as usize;
        }
        idx
    };
    let table: Option<Vec<(f64, u32, bool)>> = if kernel.is_translation_invariant() {
        let total = span.pow(dim as u32);
        // anchor cell 0 at a fictitious origin: offsets are realized by pairs
        // (i, j) sharing the same displacement, so evaluate with explicit centers
        let entries: Result<Vec<_>, AssemblyError> = (0..total)
            .into_par_iter()
            .map(|idx| {
                let mut off = [0i64; 2];
                let mut rem = idx;
                for d in (0..dim).rev() {
                    off[d] = (rem % span) as i64 - (n - 1);
                    rem /= span;
                }
                offset_weight(&ctx, off)
            })
            .collect();
        Some(entries?)
    } else {
        None
    };
    let weight = |i: usize, j: usize| -> Result<(f64, u32, bool), AssemblyError> {
        match &table {
            Some(t) => Ok(t[offset_index(i, j)]),
            None => ctx.pair_weight(i, j),
        }
    };

    let mut packed = PackedSym::zeros(m);
    let row_stats: Result<Vec<(usize, u32)>, AssemblyError> = packed
        .rows_mut()
        .into_par_iter()
        .enumerate()
        .map(|(a, row)| {
            let mut near = 0;
            let mut depth = 0;
            for (k, slot) in row.iter_mut().enumerate() {
                let (w, d, is_near) = weight(cells[a], cells[a + 1 + k])?;
                *slot = w;
                near += usize::from(is_near);
                depth = depth.max(d);
            }
            Ok((near, depth))
        })
        .collect();
    let row_stats = row_stats?;

    let lambda = kernel.lambda();
    let kappa_parts: Result<Vec<((f64, f64), f64, u32)>, AssemblyError> = cells
        .par_iter()
        .map(|&i| {
            let mut inbox = 0.0;
            let mut depth = 0;
            for j in 0..grid.cell_count() {
                if !grid.is_masked(j) {
                    let (w, d, _) = weight(i, j)?;
                    inbox += w;
                    depth = depth.max(d);
                }
            }
            let tail = ctx.exterior_tail(i)?;
            Ok(((inbox + tail, inbox + lambda * tail), tail, depth))
        })
        .collect();
    let kappa_parts = kappa_parts?;

    let tails: Vec<f64> = kappa_parts.iter().map(|p| p.1).collect();
    let kappa_bounds: Vec<(f64, f64)> = kappa_parts.iter().map(|p| p.0).collect();
    let max_tail = tails.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut sorted_tails = tails.clone();
    sorted_tails.sort_by(f64::total_cmp);
    let diagnostics = AssemblyDiagnostics {
        near_pairs: row_stats.iter().map(|s| s.0).sum(),
        max_refinement_depth: row_stats
            .iter()
            .map(|s| s.1)
            .chain(kappa_parts.iter().map(|p| p.2))
            .max()
            .unwrap_or(0),
        max_tail_width: max_tail * (lambda - 1.0),
        max_tail,
        ..Default::default()
    };
    let mass = vec![grid.cell_volume(); m];
    let mut op = DiscreteOperator::from_parts(Layout::Grid(grid.clone()), packed, kappa_bounds, mass, c_vals, diagnostics);
    let median_tail = sorted_tails[m / 2];
    op.diagnostics.tail_margin_ok = median_tail <= 1e-3 * op.diagnostics.median_kappa;
    if !op.diagnostics.tail_margin_ok && lambda > 1.0 {
        log::warn!(
            "exterior tail ({median_tail:.3e}) exceeds 1e-3 of the median killing term ({:.3e}); \
             the modulation bracket [1, {lambda}] is resolved by its midpoint",
            op.diagnostics.median_kappa
        );
    }
    op.diagnostics.seconds = start.elapsed().as_secs_f64();
    Ok(op)
}

/// Weight for a translation-invariant kernel between cells displaced by `off`.
fn offset_weight(ctx: &Ctx<'_>, off: [i64; 2]) -> Result<(f64, u32, bool), AssemblyError> {
    let dim = ctx.dim();
    let cheb = off[..dim].iter().map(|o| o.unsigned_abs()).max().unwrap_or(0);
    if cheb == 0 {
        return Ok((0.0, 0, false));
    }
    let x = [0.0; 2];
    let mut y = [0.0; 2];
    for d in 0..dim {
        y[d] = off[d] as f64 * ctx.h;
    }
    if cheb > 2 {
        let d = crate::kernels::distance(&x[..dim], &y[..dim]);
        return Ok((ctx.kernel.value_at(&x[..dim], &y[..dim], d) * ctx.vol * ctx.vol, 0, false));
    }
    let (q, depth) = ctx.near_q(x, y, (0, 1))?;
    Ok((q, depth, true))
}

/// Operator of `J♯` acting on radial functions in the ball `B_R`, with one
/// unknown per shell of width `R / shells`.
pub fn assemble_radial(
    profile: &RadialProfile,
    radius: f64,
    shells: usize,
    c_radial: &[f64],
) -> Result<DiscreteOperator, AssemblyError> {
    let start = Instant::now();
    let dim = profile.dim();
    if shells < 2 || !(radius > 0.0) {
        return Err(AssemblyError::Invalid("need at least two shells and a positive radius".into()));
    }
    check_coefficient(c_radial, shells)?;
    if c_radial.windows(2).any(|w| w[1] < w[0]) {
        return Err(AssemblyError::Invalid("radial coefficient must be non-decreasing".into()));
    }
    let delta = radius / shells as f64;
    let omega = unit_ball_volume(dim);
    let sphere = unit_sphere_area(dim);
    let mass: Vec<f64> = (0..shells)
        .map(|k| omega * delta.powi(dim as i32) * (((k + 1) as f64).powi(dim as i32) - (k as f64).powi(dim as i32)))
        .collect();
    let rho = |k: usize| (k as f64 + 0.5) * delta;
    let tail = Tail::new(profile, 0.25 * delta, 4.0 * radius)?;
    let rule = quad::gauss_legendre(8);
    let radial = RadialCtx { profile, dim, tail: &tail };

    let mut packed = PackedSym::zeros(shells);
    let stats: Result<Vec<usize>, AssemblyError> = packed
        .rows_mut()
        .into_par_iter()
        .enumerate()
        .map(|(k, row)| {
            let mut near = 0;
            for (off, slot) in row.iter_mut().enumerate() {
                let l = k + 1 + off;
                *slot = if dim == 1 {
                    // direct and mirrored cells, each with the grid's near/far rule
                    let direct = if l - k <= 2 {
                        let d = (l - k) as f64 * delta;
                        tail.eval(d - 0.5 * delta)? - tail.eval(d + 0.5 * delta)?
                    } else {
                        delta * profile.value((l - k) as f64 * delta)
                    };
                    let mirror = if k + l < 2 {
                        tail.eval((k + l) as f64 * delta + 0.5 * delta)? - tail.eval((k + l + 1) as f64 * delta + 0.5 * delta)?
                    } else {
                        delta * profile.value(rho(k) + rho(l))
                    };
                    near += usize::from(l - k <= 2 || k + l < 2);
                    mass[k] * (direct + mirror)
                } else if l - k <= 2 {
                    near += 1;
                    let qkl = mass[k] * radial.shell_integral(rho(k), l as f64 * delta, (l + 1) as f64 * delta, &rule)?;
                    let qlk = mass[l] * radial.shell_integral(rho(l), k as f64 * delta, (k + 1) as f64 * delta, &rule)?;
                    0.5 * (qkl + qlk)
                } else {
                    mass[k] * mass[l] * radial.angular(rho(k), rho(l))? / sphere
                };
            }
            Ok(near)
        })
        .collect();
    let stats = stats?;

    let kappa_bounds: Result<Vec<(f64, f64)>, AssemblyError> = (0..shells)
        .into_par_iter()
        .map(|k| {
            let v = mass[k] * radial.exterior(rho(k), radius)?;
            Ok((v, v))
        })
        .collect();
    let kappa_bounds = kappa_bounds?;
    let diagnostics = AssemblyDiagnostics {
        near_pairs: stats.iter().sum(),
        max_tail: kappa_bounds.iter().fold(0.0f64, |a, b| a.max(b.0)),
        tail_margin_ok: true,
        ..Default::default()
    };
    let mut op = DiscreteOperator::from_parts(
        Layout::Shells { dim, radius, shells },
        packed,
        kappa_bounds,
        mass,
        c_radial.to_vec(),
        diagnostics,
    );
    op.diagnostics.seconds = start.elapsed().as_secs_f64();
    Ok(op)
}

struct RadialCtx<'a> {
    profile: &'a RadialProfile,
    dim: usize,
    tail: &'a Tail<'a>,
}

impl RadialCtx<'_> {
    /// `∫_{S^{N-1}} J(|ρ e₁ - τ y'|) dH^{N-1}(y')`.
    fn angular(&self, rho: f64, tau: f64) -> Result<f64, AssemblyError> {
        angular_average(self.profile, rho, tau)
    }

    /// `∫_a^b τ^{N-1} A(ρ, τ) dτ` by doubling composite Gauss rules.
    fn shell_integral(&self, rho: f64, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> Result<f64, AssemblyError> {
        let n1 = self.dim as i32 - 1;
        let eval = |panels: usize| -> Result<f64, AssemblyError> {
            let w = (b - a) / panels as f64;
            let mut acc = 0.0;
            for p in 0..panels {
                let lo = a + p as f64 * w;
                for (t, wt) in rule.0.iter().zip(&rule.1) {
                    let tau = lo + 0.5 * w * (t + 1.0);
                    acc += wt * 0.5 * w * tau.powi(n1) * self.angular(rho, tau)?;
                }
            }
            Ok(acc)
        };
        let mut prev = eval(1)?;
        for level in 1..=10 {
            let next = eval(1 << level)?;
            if (next - prev).abs() <= 1e-6 * next.abs() {
                return Ok(next);
            }
            prev = next;
        }
        Err(AssemblyError::Angular { rho, tau: a })
    }

    /// `∫_{|y| > R} J(|ρ e₁ - y|) dy` by rays from the point.
    fn exterior(&self, rho: f64, radius: f64) -> Result<f64, AssemblyError> {
        let exit = |c: f64| -> f64 {
            let s2 = 1.0 - c * c;
            -rho * c + (radius * radius - rho * rho * s2).max(0.0).sqrt()
        };
        let pi = std::f64::consts::PI;
        match self.dim {
            1 => Ok(self.tail.eval(radius - rho)? + self.tail.eval(radius + rho)?),
            d => {
                let err = RefCell::new(None);
                let weight = if d == 2 { 2.0 } else { unit_sphere_area(d - 1) };
                let f = |th: f64| {
                    let w = if d == 2 { 1.0 } else { th.sin().powi(d as i32 - 2) };
                    w * guard(&err, self.tail.eval(exit(th.cos())))
                };
                let v = quad::integrate(f, 0.0, pi, QuadConfig::default())?;
                if let Some(e) = err.into_inner() {
                    return Err(e.into());
                }
                Ok(weight * v)
            }
        }
    }
}

/// Angular average `A(ρ, τ) = ∫_{S^{N-1}} J(|ρ e₁ - τ y'|) dH^{N-1}(y')`.
///
/// `N = 1` sums the two points of `S⁰`. `N = 2` uses a trapezoid rule from
/// 256 angles, doubled until it settles; tabulated profiles are integrated
/// exactly between the angles where the distance crosses a table radius.
/// `N >= 3` uses composite Gauss rules in the polar angle.
pub fn angular_average(profile: &RadialProfile, rho: f64, tau: f64) -> Result<f64, AssemblyError> {
    let dim = profile.dim();
    let pi = std::f64::consts::PI;
    let dist = |th: f64| (rho * rho + tau * tau - 2.0 * rho * tau * th.cos()).max(0.0).sqrt();
    if dim == 1 {
        return Ok(profile.value((rho - tau).abs()) + profile.value(rho + tau));
    }
    if rho == 0.0 || tau == 0.0 {
        return Ok(unit_sphere_area(dim) * profile.value(rho.max(tau)));
    }
    if dim == 2 {
        if let ProfileKind::Tabulated { radii, values } = profile.kind() {
            // distance grows with θ on [0, π]; integrate the step function exactly
            let (lo, hi) = ((rho - tau).abs(), rho + tau);
            let mut cuts = vec![0.0];
            for r in radii.iter().filter(|r| **r > lo && **r < hi) {
                let c = ((rho * rho + tau * tau - r * r) / (2.0 * rho * tau)).clamp(-1.0, 1.0);
                cuts.push(c.acos());
            }
            cuts.push(pi);
            let mut acc = 0.0;
            for w in cuts.windows(2) {
                let mid = dist(0.5 * (w[0] + w[1]));
                let k = radii.partition_point(|&rk| rk < mid);
                acc += values.get(k).copied().unwrap_or(0.0) * (w[1] - w[0]);
            }
            return Ok(2.0 * profile.normalization() * acc);
        }
        let trap = |m: usize| -> f64 {
            // half circle, endpoints weighted by ½
            let step = pi / m as f64;
            let mut s = 0.5 * (profile.value(dist(0.0)) + profile.value(dist(pi)));
            for k in 1..m {
                s += profile.value(dist(k as f64 * step));
            }
            2.0 * s * step
        };
        let mut m = 128;
        let mut prev = trap(m);
        while m < (1 << 20) {
            m *= 2;
            let next = trap(m);
            if (next - prev).abs() <= 1e-10 * next.abs() {
                return Ok(next);
            }
            prev = next;
        }
        return Err(AssemblyError::Angular { rho, tau });
    }
    let rule = quad::gauss_legendre(16);
    let eval = |panels: usize| -> f64 {
        let w = pi / panels as f64;
        let mut acc = 0.0;
        for p in 0..panels {
            let lo = p as f64 * w;
            for (t, wt) in rule.0.iter().zip(&rule.1) {
                let th = lo + 0.5 * w * (t + 1.0);
                acc += wt * 0.5 * w * th.sin().powi(dim as i32 - 2) * profile.value(dist(th));
            }
        }
        unit_sphere_area(dim - 1) * acc
    };
    let mut panels = 8;
    let mut prev = eval(panels);
    while panels < (1 << 14) {
        panels *= 2;
        let next = eval(panels);
        if (next - prev).abs() <= 1e-10 * next.abs() {
            return Ok(next);
        }
        prev = next;
    }
    Err(AssemblyError::Angular { rho, tau })
}
