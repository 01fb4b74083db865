//! Grids, grid functions and discrete rearrangements.
//!
//! Cells of the bounding box `[-L, L]^N` are ordered by distance of their
//! centers from the origin, ties broken lexicographically. A prefix of that
//! order is the discrete ball; the Schwarz rearrangement of a function on `M`
//! cells is a permutation of its absolute values onto the first `M` cells.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("unsupported grid dimension {0} (expected 1 or 2)")]
    Dimension(usize),
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("domain contains no cell centers")]
    EmptyDomain,
    #[error("grids differ in dimension, size or box")]
    Mismatch,
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("cell {0} lies outside the domain but has a nonzero value")]
    ExteriorNonzero(usize),
    #[error("negative value {value} at cell {cell}; rearrange |f| first")]
    Negative { cell: usize, value: f64 },
    #[error("radii must be nonnegative and increasing")]
    Radii,
    #[error("malformed grid csv: {0}")]
    Csv(String),
}

/// Cell center; only the first `dim` coordinates are meaningful.
pub type Point = [f64; 2];

/// Open subset of the box described as a union of simple pieces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Intervals { intervals: Vec<[f64; 2]> },
    Boxes { boxes: Vec<Vec<[f64; 2]>> },
    Ball { radius: f64, center: Option<Vec<f64>> },
}

impl Domain {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Domain::Intervals { intervals } => intervals.iter().any(|[a, b]| x[0] > *a && x[0] < *b),
            Domain::Boxes { boxes } => boxes
                .iter()
                .any(|b| b.iter().zip(x).all(|([a, c], xi)| *xi > *a && *xi < *c)),
            Domain::Ball { radius, center } => {
                let d2: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(k, xi)| {
                        let c = center.as_ref().and_then(|c| c.get(k)).copied().unwrap_or(0.0);
                        (xi - c) * (xi - c)
                    })
                    .sum();
                d2 < radius * radius
            }
        }
    }
}

#[derive(Debug)]
struct GridData {
    dim: usize,
    n: usize,
    half_width: f64,
    mask: Vec<bool>,
    masked: Vec<usize>,
    order: OnceLock<Vec<usize>>,
}

/// Uniform cell grid over `[-L, L]^N` with a domain mask. Cheap to clone.
#[derive(Debug, Clone)]
pub struct Grid(Arc<GridData>);

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || (self.same_geometry(other) && self.0.mask == other.0.mask)
    }
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, n: usize, mask: Vec<bool>) -> Result<Self, GridError> {
        if !(1..=2).contains(&dim) {
            return Err(GridError::Dimension(dim));
        }
        if n == 0 || !(half_width > 0.0 && half_width.is_finite()) {
            return Err(GridError::Invalid(format!("need n >= 1 and L > 0, got n={n}, L={half_width}")));
        }
        let total = n.pow(dim as u32);
        if mask.len() != total {
            return Err(GridError::Length { expected: total, got: mask.len() });
        }
        let masked: Vec<usize> = (0..total).filter(|&i| mask[i]).collect();
        if masked.is_empty() {
            return Err(GridError::EmptyDomain);
        }
        Ok(Grid(Arc::new(GridData {
            dim,
            n,
            half_width,
            mask,
            masked,
            order: OnceLock::new(),
        })))
    }

    /// Masks the cells whose centers lie in `domain`.
    pub fn from_domain(dim: usize, half_width: f64, n: usize, domain: &Domain) -> Result<Self, GridError> {
        if !(1..=2).contains(&dim) {
            return Err(GridError::Dimension(dim));
        }
        let probe = Grid::new(dim, half_width, n, vec![true; n.pow(dim as u32)])?;
        let mask = (0..probe.cell_count())
            .map(|i| domain.contains(&probe.center(i)[..dim]))
            .collect();
        Grid::new(dim, half_width, n, mask)
    }

    pub fn full(dim: usize, half_width: f64, n: usize) -> Result<Self, GridError> {
        Grid::new(dim, half_width, n, vec![true; n.pow(dim as u32)])
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    pub fn n(&self) -> usize {
        self.0.n
    }

    pub fn half_width(&self) -> f64 {
        self.0.half_width
    }

    pub fn h(&self) -> f64 {
        2.0 * self.0.half_width / self.0.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.0.dim as i32)
    }

    pub fn cell_count(&self) -> usize {
        self.0.mask.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.0.mask
    }

    pub fn is_masked(&self, idx: usize) -> bool {
        self.0.mask[idx]
    }

    /// Linear indices of the cells in the domain, ascending.
    pub fn masked_indices(&self) -> &[usize] {
        &self.0.masked
    }

    pub fn masked_count(&self) -> usize {
        self.0.masked.len()
    }

    pub fn measure(&self) -> f64 {
        self.masked_count() as f64 * self.cell_volume()
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        match self.0.dim {
            1 => [idx, 0],
            _ => [idx / self.0.n, idx % self.0.n],
        }
    }

    pub fn linear_index(&self, k: [usize; 2]) -> usize {
        match self.0.dim {
            1 => k[0],
            _ => k[0] * self.0.n + k[1],
        }
    }

    pub fn center(&self, idx: usize) -> Point {
        let k = self.multi_index(idx);
        let h = self.h();
        let mut p = [0.0; 2];
        for d in 0..self.0.dim {
            p[d] = -self.0.half_width + (k[d] as f64 + 0.5) * h;
        }
        p
    }

    /// `4 |center|² / h²` as an exact integer.
    pub fn radius_key(&self, idx: usize) -> u64 {
        let k = self.multi_index(idx);
        let n = self.0.n as i64;
        (0..self.0.dim)
            .map(|d| {
                let m = 2 * k[d] as i64 - n + 1;
                (m * m) as u64
            })
            .sum()
    }

    /// All cells of the box ordered by distance from the origin, ties broken
    /// lexicographically by index.
    pub fn schwarz_order(&self) -> &[usize] {
        self.0.order.get_or_init(|| {
            let mut order: Vec<usize> = (0..self.cell_count()).collect();
            order.sort_by_key(|&i| (self.radius_key(i), self.multi_index(i)));
            order
        })
    }

    /// Grid whose domain is the discrete ball with as many cells as this one.
    pub fn schwarz_grid(&self) -> Grid {
        let mut mask = vec![false; self.cell_count()];
        for &i in &self.schwarz_order()[..self.masked_count()] {
            mask[i] = true;
        }
        Grid::new(self.0.dim, self.0.half_width, self.0.n, mask).expect("same geometry, nonempty")
    }

    /// Whether the masked cells are a prefix of the Schwarz order.
    pub fn is_discrete_ball(&self) -> bool {
        self.schwarz_order()[..self.masked_count()].iter().all(|&i| self.0.mask[i])
    }

    pub fn same_geometry(&self, other: &Grid) -> bool {
        self.0.dim == other.0.dim && self.0.n == other.0.n && self.0.half_width == other.0.half_width
    }

    /// Radii `{h k}` reaching past every cell center in the box.
    pub fn default_radii(&self) -> Vec<f64> {
        let max_key = (0..self.cell_count()).map(|i| self.radius_key(i)).max().unwrap_or(0);
        let k_max = ((max_key as f64).sqrt() / 2.0).ceil() as usize + 1;
        (0..=k_max).map(|k| k as f64 * self.h()).collect()
    }

    /// Snaps a radius outward to the next multiple of `h`, returning the multiple.
    pub fn snap_radius(&self, r: f64) -> u64 {
        let q = r / self.h();
        let k = q.round();
        if (q - k).abs() <= 1e-9 * q.abs().max(1.0) {
            k as u64
        } else {
            q.ceil() as u64
        }
    }
}

/// Values on every cell of a grid, zero outside the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![0.0; grid.cell_count()],
        }
    }

    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.cell_count() {
            return Err(GridError::Length {
                expected: grid.cell_count(),
                got: values.len(),
            });
        }
        if let Some(i) = (0..values.len()).find(|&i| !grid.is_masked(i) && values[i] != 0.0) {
            return Err(GridError::ExteriorNonzero(i));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    /// Samples `f` at the centers of the domain cells.
    pub fn from_fn(grid: &Grid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let dim = grid.dim();
        let values = (0..grid.cell_count())
            .map(|i| if grid.is_masked(i) { f(&grid.center(i)[..dim]) } else { 0.0 })
            .collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    /// Builds a function from values on the domain cells, in ascending index order.
    pub fn from_interior(grid: &Grid, interior: &[f64]) -> Result<Self, GridError> {
        if interior.len() != grid.masked_count() {
            return Err(GridError::Length {
                expected: grid.masked_count(),
                got: interior.len(),
            });
        }
        let mut values = vec![0.0; grid.cell_count()];
        for (&i, &v) in grid.masked_indices().iter().zip(interior) {
            values[i] = v;
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn interior(&self) -> Vec<f64> {
        self.grid.masked_indices().iter().map(|&i| self.values[i]).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..self.values.len())
            .map(|i| if self.grid.is_masked(i) { f(self.values[i]) } else { 0.0 })
            .collect();
        Self {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete `L^p` norm; `p = f64::INFINITY` gives the sup norm.
    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.max_abs();
        }
        let sum: f64 = self.grid.masked_indices().iter().map(|&i| self.values[i].abs().powf(p)).sum();
        (sum * self.grid.cell_volume()).powf(1.0 / p)
    }

    pub fn integral(&self) -> f64 {
        self.grid.masked_indices().iter().map(|&i| self.values[i]).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let dim = self.grid.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = ["i", "j"][..dim].to_vec();
        header.extend_from_slice(&["x", "y"][..dim]);
        header.extend_from_slice(&["value", "masked"]);
        w.write_record(&header)?;
        for idx in 0..self.grid.cell_count() {
            let k = self.grid.multi_index(idx);
            let c = self.grid.center(idx);
            let mut row: Vec<String> = (0..dim).map(|d| k[d].to_string()).collect();
            row.extend((0..dim).map(|d| format_float(c[d])));
            row.push(format_float(self.values[idx]));
            row.push(u8::from(self.grid.is_masked(idx)).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> crate::Result<()> {
        self.write_csv(std::fs::File::create(path)?)?;
        Ok(())
    }

    /// Reads the layout written by [`GridFunction::write_csv`].
    pub fn read_csv<R: Read>(input: R) -> Result<Self, GridError> {
        let bad = |m: String| GridError::Csv(m);
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
        let dim = match header.len() {
            4 => 1,
            6 => 2,
            k => return Err(bad(format!("expected 4 or 6 columns, found {k}"))),
        };
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let parse_u = |k: usize| rec[k].parse::<usize>().map_err(|e| bad(format!("{e}")));
            let parse_f = |k: usize| rec[k].parse::<f64>().map_err(|e| bad(format!("{e}")));
            let idx = [parse_u(0)?, if dim == 2 { parse_u(1)? } else { 0 }];
            let x0 = parse_f(dim)?;
            let value = parse_f(2 * dim)?;
            let masked = parse_u(2 * dim + 1)? != 0;
            rows.push((idx, x0, value, masked));
        }
        let n = match dim {
            1 => rows.len(),
            _ => (rows.len() as f64).sqrt().round() as usize,
        };
        if n == 0 || n.pow(dim as u32) != rows.len() || n < 2 {
            return Err(bad(format!("{} rows do not form a square grid", rows.len())));
        }
        // x_k = L (2k + 1 - n) / n, averaged over cells for a stable estimate of L
        let mut acc = 0.0;
        for (idx, x0, _, _) in &rows {
            acc += x0 * n as f64 / (2.0 * idx[0] as f64 + 1.0 - n as f64);
        }
        let half_width = acc / rows.len() as f64;
        let mut mask = vec![false; rows.len()];
        let mut values = vec![0.0; rows.len()];
        let probe = Grid::full(dim, half_width, n)?;
        for (idx, _, value, m) in rows {
            if idx[0] >= n || idx[1] >= n.max(1) {
                return Err(bad("index out of range".into()));
            }
            let li = probe.linear_index(idx);
            mask[li] = m;
            values[li] = if m { value } else { 0.0 };
        }
        let grid = Grid::new(dim, half_width, n, mask)?;
        GridFunction::new(&grid, values)
    }
}

pub(crate) fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// `h^N #{cells in Ω : |f| > t}`.
pub fn distribution_function(f: &GridFunction, t: f64) -> f64 {
    let g = f.grid();
    g.masked_indices().iter().filter(|&&i| f.values[i].abs() > t).count() as f64 * g.cell_volume()
}

/// Absolute values on the domain cells, sorted non-increasing.
pub fn decreasing_rearrangement_1d(f: &GridFunction) -> Vec<f64> {
    let mut v: Vec<f64> = f.interior().into_iter().map(f64::abs).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Decreasing,
    Increasing,
}

/// Schwarz rearrangement of `|f|` onto the discrete ball of the same size.
pub fn schwarz_rearrangement(f: &GridFunction, direction: Direction) -> GridFunction {
    let mut sorted = decreasing_rearrangement_1d(f);
    if direction == Direction::Increasing {
        sorted.reverse();
    }
    let grid = f.grid().schwarz_grid();
    let mut values = vec![0.0; grid.cell_count()];
    for (&i, v) in grid.schwarz_order().iter().zip(sorted) {
        values[i] = v;
    }
    GridFunction { grid, values }
}

/// Radii and `∫_{B_r} f` at each of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationCurve {
    pub radii: Vec<f64>,
    pub integrals: Vec<f64>,
}

impl ConcentrationCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r", "integral"])?;
        for (r, v) in self.radii.iter().zip(&self.integrals) {
            w.write_record([format_float(*r), format_float(*v)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Snapped radius multiples for `radii`, or the grid defaults.
fn radius_multiples(grid: &Grid, radii: Option<&[f64]>) -> Result<Vec<u64>, GridError> {
    match radii {
        None => Ok((0..grid.default_radii().len() as u64).collect()),
        Some(r) => {
            if r.iter().any(|x| !(*x >= 0.0)) || r.windows(2).any(|w| w[1] < w[0]) {
                return Err(GridError::Radii);
            }
            Ok(r.iter().map(|x| grid.snap_radius(*x)).collect())
        }
    }
}

/// Cumulative sums over cells with `|center| <= h m`, summed in Schwarz order.
pub(crate) fn prefix_integrals(f: &GridFunction, multiples: &[u64]) -> Vec<f64> {
    let g = f.grid();
    let order = g.schwarz_order();
    let vol = g.cell_volume();
    let mut out = Vec::with_capacity(multiples.len());
    let mut pos = 0;
    let mut acc = 0.0;
    for &m in multiples {
        let bound = 4 * m * m;
        if pos > 0 && g.radius_key(order[pos - 1]) > bound {
            // radii are increasing, so this only happens on repeats after snapping
            pos = order.partition_point(|&i| g.radius_key(i) <= bound);
            acc = order[..pos].iter().map(|&i| f.values[i]).sum();
        }
        while pos < order.len() && g.radius_key(order[pos]) <= bound {
            acc += f.values[order[pos]];
            pos += 1;
        }
        out.push(acc * vol);
    }
    out
}

/// `h^N Σ_{|center| <= r} f` for each radius; user radii snap outward to
/// multiples of `h`.
pub fn concentration_curve(f: &GridFunction, radii: Option<&[f64]>) -> Result<ConcentrationCurve, GridError> {
    if let Some(i) = (0..f.values.len()).find(|&i| f.values[i] < 0.0) {
        return Err(GridError::Negative {
            cell: i,
            value: f.values[i],
        });
    }
    let multiples = radius_multiples(f.grid(), radii)?;
    let h = f.grid().h();
    Ok(ConcentrationCurve {
        radii: multiples.iter().map(|&m| m as f64 * h).collect(),
        integrals: prefix_integrals(f, &multiples),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    /// `max_r (∫_{B_r} a - ∫_{B_r} b)`
    pub max_violation: f64,
    pub worst_radius: f64,
}

/// Largest excess of the concentration of `a` over that of `b`.
pub fn concentration_dominates(
    a: &GridFunction,
    b: &GridFunction,
    radii: Option<&[f64]>,
) -> Result<DominationReport, GridError> {
    if !a.grid().same_geometry(b.grid()) {
        return Err(GridError::Mismatch);
    }
    let ca = concentration_curve(a, radii)?;
    let cb = concentration_curve(b, radii)?;
    Ok(max_difference(&ca.radii, &ca.integrals, &cb.integrals))
}

pub(crate) fn max_difference(radii: &[f64], a: &[f64], b: &[f64]) -> DominationReport {
    let mut rep = DominationReport {
        max_violation: f64::NEG_INFINITY,
        worst_radius: 0.0,
    };
    for ((r, x), y) in radii.iter().zip(a).zip(b) {
        if x - y > rep.max_violation {
            rep = DominationReport {
                max_violation: x - y,
                worst_radius: *r,
            };
        }
    }
    rep
}

/// `h^N (Σ f*_k g*_k - Σ |f_i g_i|)`, nonnegative by the rearrangement inequality.
pub fn hardy_littlewood_slack(f: &GridFunction, g: &GridFunction) -> Result<f64, GridError> {
    let (fs, gs, direct) = paired(f, g)?;
    let sorted: f64 = fs.iter().zip(&gs).map(|(a, b)| a * b).sum();
    Ok((sorted - direct) * f.grid().cell_volume())
}

/// `h^N (Σ |f_i g_i| - Σ f♯ g_♯)`: pairing a decreasing with an increasing
/// arrangement gives the smallest sum, so this is nonnegative.
pub fn hardy_littlewood_lower_slack(f: &GridFunction, g: &GridFunction) -> Result<f64, GridError> {
    let (fs, mut gs, direct) = paired(f, g)?;
    gs.reverse();
    let opposite: f64 = fs.iter().zip(&gs).map(|(a, b)| a * b).sum();
    Ok((direct - opposite) * f.grid().cell_volume())
}

fn paired(f: &GridFunction, g: &GridFunction) -> Result<(Vec<f64>, Vec<f64>, f64), GridError> {
    if f.grid() != g.grid() {
        return Err(GridError::Mismatch);
    }
    let direct: f64 = f
        .grid()
        .masked_indices()
        .iter()
        .map(|&i| (f.values[i] * g.values[i]).abs())
        .sum();
    Ok((decreasing_rearrangement_1d(f), decreasing_rearrangement_1d(g), direct))
}

/// Convex, nonnegative test functions vanishing at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexTest {
    Square,
    Power { p: f64 },
    Shifted { tau: f64 },
}

impl ConvexTest {
    pub fn family(taus: &[f64]) -> Vec<ConvexTest> {
        let mut v = vec![ConvexTest::Square, ConvexTest::Power { p: 1.5 }, ConvexTest::Power { p: 3.0 }];
        v.extend(taus.iter().map(|&tau| ConvexTest::Shifted { tau }));
        v
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            ConvexTest::Square => t * t,
            ConvexTest::Power { p } => t.powf(*p),
            ConvexTest::Shifted { tau } => (t - tau).max(0.0),
        }
    }
}

/// `∫ Φ(v) - ∫ Φ(u)`.
pub fn convex_mean_comparison(u: &GridFunction, v: &GridFunction, phi: ConvexTest) -> Result<f64, GridError> {
    if !u.grid().same_geometry(v.grid()) {
        return Err(GridError::Mismatch);
    }
    for f in [u, v] {
        if let Some(i) = (0..f.values.len()).find(|&i| f.values[i] < 0.0) {
            return Err(GridError::Negative {
                cell: i,
                value: f.values[i],
            });
        }
    }
    let total = |f: &GridFunction| f.grid().masked_indices().iter().map(|&i| phi.eval(f.values[i])).sum::<f64>();
    Ok((total(v) - total(u)) * u.grid().cell_volume())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn interval(n: usize) -> Grid {
        Grid::from_domain(1, 1.0, n, &Domain::Intervals { intervals: vec![[-1.0, 1.0]] }).unwrap()
    }

    #[test]
    fn distribution_of_constant() {
        let g = interval(16);
        let f = GridFunction::from_fn(&g, |_| 1.0);
        assert_eq!(distribution_function(&f, 0.5), g.measure());
        assert_eq!(distribution_function(&f, 1.0), 0.0);
    }

    #[test]
    fn distribution_of_tent_by_cell_count() {
        let g = interval(200);
        let f = GridFunction::from_fn(&g, |x| 1.0 - x[0].abs());
        let count = (0..200)
            .filter(|&k| {
                let x = -1.0 + (k as f64 + 0.5) * 0.01;
                1.0 - f64::abs(x) > 0.5
            })
            .count();
        let mu = distribution_function(&f, 0.5);
        assert_eq!(mu, count as f64 * g.cell_volume());
        assert!((mu - 1.0).abs() <= g.cell_volume());
    }

    #[test]
    fn sorting_examples() {
        let g = Grid::full(1, 1.5, 3).unwrap();
        let f = GridFunction::new(&g, vec![3.0, 1.0, 2.0]).unwrap();
        assert_eq!(decreasing_rearrangement_1d(&f), vec![3.0, 2.0, 1.0]);
        let c = GridFunction::from_fn(&g, |_| 4.0);
        assert_eq!(decreasing_rearrangement_1d(&c), vec![4.0; 3]);
    }

    #[test]
    fn schwarz_order_is_centered_1d() {
        let g = Grid::full(1, 1.0, 6).unwrap();
        assert_eq!(g.schwarz_order(), &[2, 3, 1, 4, 0, 5]);
    }

    #[test]
    fn schwarz_of_constant_and_idempotence() {
        let g = Grid::from_domain(
            2,
            1.0,
            16,
            &Domain::Boxes {
                boxes: vec![vec![[0.2, 0.9], [-0.5, 0.3]]],
            },
        )
        .unwrap();
        let f = GridFunction::from_fn(&g, |_| 2.5);
        let s = schwarz_rearrangement(&f, Direction::Decreasing);
        assert_eq!(s.grid().masked_count(), g.masked_count());
        assert!(s.grid().is_discrete_ball());
        assert!(s.interior().iter().all(|v| *v == 2.5));
        let twice = schwarz_rearrangement(&s, Direction::Decreasing);
        assert_eq!(twice, s);
    }

    #[test]
    fn radially_decreasing_on_ball_is_fixed() {
        let g = Grid::from_domain(2, 1.0, 32, &Domain::Ball { radius: 0.7, center: None }).unwrap();
        assert!(g.is_discrete_ball());
        let f = GridFunction::from_fn(&g, |x| (-(x[0] * x[0] + x[1] * x[1])).exp());
        let s = schwarz_rearrangement(&f, Direction::Decreasing);
        assert_eq!(s.values(), f.values());
    }

    #[test]
    fn two_bumps_become_one_equimeasurable_profile() {
        let g = Grid::from_domain(
            1,
            1.0,
            128,
            &Domain::Intervals {
                intervals: vec![[-1.0, -0.2], [0.2, 1.0]],
            },
        )
        .unwrap();
        let f = GridFunction::from_fn(&g, |x| (1.0 - ((x[0].abs() - 0.6) / 0.4).powi(2)).max(0.0));
        let s = schwarz_rearrangement(&f, Direction::Decreasing);
        for k in 0..50 {
            let t = k as f64 / 50.0;
            assert_eq!(distribution_function(&f, t), distribution_function(&s, t));
        }
        // outward non-increasing along the layout
        let order = s.grid().schwarz_order();
        let m = s.grid().masked_count();
        assert!(order[..m].windows(2).all(|w| s.value(w[0]) >= s.value(w[1])));
    }

    #[test]
    fn increasing_rearrangement_runs_outward_up() {
        let g = interval(32);
        let c = GridFunction::from_fn(&g, |x| x[0] + 1.0);
        let s = schwarz_rearrangement(&c, Direction::Increasing);
        let order = s.grid().schwarz_order();
        assert!(order[..32].windows(2).all(|w| s.value(w[0]) <= s.value(w[1])));
    }

    #[test]
    fn concentration_examples() {
        let g = Grid::from_domain(1, 2.0, 40, &Domain::Ball { radius: 1.0, center: None }).unwrap();
        let f = GridFunction::from_fn(&g, |_| 1.0);
        let c = concentration_curve(&f, Some(&[0.0, 1.0, 1.5])).unwrap();
        assert_eq!(c.integrals[0], 0.0);
        assert!((c.integrals[1] - 2.0).abs() < 1e-12);
        assert!((c.integrals[2] - 2.0).abs() < 1e-12);
        let neg = f.map(|v| -v);
        assert!(matches!(concentration_curve(&neg, None), Err(GridError::Negative { .. })));
    }

    #[test]
    fn concentration_of_rearranged_tent_matches_brute_force() {
        let g = Grid::from_domain(2, 1.0, 32, &Domain::Ball { radius: 0.9, center: Some(vec![0.05, 0.0]) }).unwrap();
        let f = GridFunction::from_fn(&g, |x| (0.9 - (x[0] * x[0] + x[1] * x[1]).sqrt()).max(0.0));
        let s = schwarz_rearrangement(&f, Direction::Decreasing);
        let r = 0.45;
        let curve = concentration_curve(&s, Some(&[r])).unwrap();
        let snapped = curve.radii[0];
        let brute: f64 = (0..s.grid().cell_count())
            .filter(|&i| {
                let c = s.grid().center(i);
                (c[0] * c[0] + c[1] * c[1]).sqrt() <= snapped + 1e-12
            })
            .map(|i| s.value(i))
            .sum::<f64>()
            * s.grid().cell_volume();
        assert!((curve.integrals[0] - brute).abs() < 1e-12);
        assert!(snapped >= r && snapped - r < s.grid().h());
    }

    #[test]
    fn domination_examples() {
        let g = Grid::full(1, 2.0, 40).unwrap();
        let a = GridFunction::from_fn(&g, |x| if x[0].abs() < 1.0 { 1.0 } else { 0.0 });
        let b = GridFunction::from_fn(&g, |_| 0.5);
        let same = concentration_dominates(&a, &a, None).unwrap();
        assert_eq!(same.max_violation, 0.0);
        let zero = GridFunction::zeros(&g);
        assert!(concentration_dominates(&zero, &b, None).unwrap().max_violation <= 0.0);
        let rep = concentration_dominates(&a, &b, None).unwrap();
        assert!((rep.max_violation - 1.0).abs() < 1e-12);
        assert!((rep.worst_radius - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hardy_littlewood_examples() {
        let g = Grid::full(1, 1.0, 2).unwrap();
        let f = GridFunction::new(&g, vec![1.0, 2.0]).unwrap();
        let gg = GridFunction::new(&g, vec![2.0, 1.0]).unwrap();
        assert_eq!(hardy_littlewood_slack(&f, &gg).unwrap(), 1.0);
        assert_eq!(hardy_littlewood_slack(&f, &f).unwrap(), 0.0);
        let c = GridFunction::new(&g, vec![3.0, 3.0]).unwrap();
        assert_eq!(hardy_littlewood_slack(&f, &c).unwrap(), 0.0);
    }

    #[test]
    fn norms_preserved_on_random_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Grid::from_domain(2, 1.0, 16, &Domain::Boxes { boxes: vec![vec![[-0.8, 0.1], [-0.9, 0.9]]] }).unwrap();
        for _ in 0..20 {
            let f = GridFunction::from_fn(&g, |_| rng.gen_range(-1.0..1.0));
            let s = schwarz_rearrangement(&f, Direction::Decreasing);
            for p in [1.0, 2.0, f64::INFINITY] {
                let (a, b) = (f.lp_norm(p), s.lp_norm(p));
                assert!((a - b).abs() <= 1e-12 * a, "p={p}");
            }
            let l2: f64 = decreasing_rearrangement_1d(&f).iter().map(|v| v * v).sum::<f64>() * g.cell_volume();
            assert!((l2.sqrt() - f.lp_norm(2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn convex_examples() {
        let g = interval(8);
        let u = GridFunction::from_fn(&g, |x| x[0].abs());
        assert_eq!(convex_mean_comparison(&u, &u, ConvexTest::Square).unwrap(), 0.0);
        let zero = GridFunction::zeros(&g);
        for phi in ConvexTest::family(&[0.25]) {
            assert!(convex_mean_comparison(&zero, &u, phi).unwrap() >= 0.0);
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = Grid::from_domain(2, 1.5, 8, &Domain::Ball { radius: 1.0, center: None }).unwrap();
        let f = GridFunction::from_fn(&g, |x| x[0] - 0.3 * x[1]);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = GridFunction::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.values(), f.values());
        assert_eq!(back.grid().mask(), g.mask());
        assert!((back.grid().half_width() - 1.5).abs() < 1e-14);
    }

    #[test]
    fn snapping_goes_outward() {
        let g = Grid::full(1, 1.0, 10).unwrap();
        assert_eq!(g.snap_radius(0.2), 1);
        assert_eq!(g.snap_radius(0.21), 2);
        assert_eq!(g.snap_radius(0.0), 0);
    }
}
