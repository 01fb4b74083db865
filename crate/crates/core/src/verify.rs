//! Numerical checks of the comparison results, each returning a signed slack
//! against a tolerance. A report passes when `slack <= tolerance`, except for
//! the max/min lemma whose conclusion is strict.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{AssemblyError, DiscreteOperator};
use crate::kernels::{KernelError, ProfileKind, RadialProfile};
use crate::quad::{self, QuadConfig, QuadError};
use crate::rearrange::{
    max_difference, prefix_integrals, schwarz_rearrangement, Direction, GridError, GridFunction,
};
use crate::solvers::{self, SolveError, SolverOptions, Trajectory};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("{check}: precondition violated: {detail}")]
    Precondition { check: &'static str, detail: String },
    #[error("{check}: inputs do not match: {detail}")]
    Mismatch { check: &'static str, detail: String },
    #[error("query at {value} lies outside the admissible range {range}")]
    Domain { value: f64, range: String },
    #[error("{check}: slack is not finite")]
    NonFinite { check: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

/// Discretization allowance `τ(h) = max(1e-8, κ_tol h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub kappa_tol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { kappa_tol: 0.05 }
    }
}

impl Tolerance {
    pub fn tau(&self, h: f64) -> f64 {
        (self.kappa_tol * h).max(1e-8)
    }
}

/// Where the slack was attained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Location {
    None,
    Radius { r: f64 },
    Time { step: usize, t: f64, r: f64 },
    Cell { index: usize },
    Level { level: f64 },
    Sample { rho: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub slack: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub worst_location: Location,
    /// Set when the hypothesis of the check did not hold and nothing was tested.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub vacuous: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl CheckReport {
    /// Report passing iff `slack <= tolerance`.
    pub fn new(check: &str, slack: f64, tolerance: f64, worst_location: Location) -> Result<Self, VerifyError> {
        if !slack.is_finite() {
            return Err(VerifyError::NonFinite { check: check.into() });
        }
        Ok(Self {
            check: check.into(),
            slack,
            tolerance,
            pass: slack <= tolerance,
            worst_location,
            vacuous: false,
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_meta(mut self, key: &str, value: impl Serialize) -> Self {
        self.metadata
            .insert(key.into(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
        self
    }

    /// One JSON object with the report fields and `config_hash`.
    pub fn to_jsonl(&self, config_hash: &str) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v["config_hash"] = serde_json::Value::String(config_hash.into());
        v.to_string()
    }
}

/// Combines per-step or per-level reports into one: worst slack, all must pass.
pub fn summarize(check: &str, reports: &[CheckReport]) -> Option<CheckReport> {
    let worst = reports
        .iter()
        .max_by(|a, b| (a.slack - a.tolerance).total_cmp(&(b.slack - b.tolerance)))?;
    let mut out = worst.clone();
    out.check = check.into();
    out.pass = reports.iter().all(|r| r.pass);
    out.vacuous = reports.iter().all(|r| r.vacuous);
    out.metadata.insert("count".into(), reports.len().into());
    Some(out)
}

/// Concentration curves of `u♯` and `v` on common radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCurves {
    pub radii: Vec<f64>,
    pub u_sharp: Vec<f64>,
    pub v: Vec<f64>,
}

impl ComparisonCurves {
    pub fn diff(&self) -> Vec<f64> {
        self.u_sharp.iter().zip(&self.v).map(|(a, b)| a - b).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r", "conc_u_sharp", "conc_v", "diff"])?;
        for k in 0..self.radii.len() {
            w.write_record([
                format!("{:.16e}", self.radii[k]),
                format!("{:.16e}", self.u_sharp[k]),
                format!("{:.16e}", self.v[k]),
                format!("{:.16e}", self.u_sharp[k] - self.v[k]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn multiples(g: &crate::rearrange::Grid, radii: Option<&[f64]>) -> Vec<u64> {
    match radii {
        Some(r) => r.iter().map(|x| g.snap_radius(*x)).collect(),
        None => (0..g.default_radii().len() as u64).collect(),
    }
}

/// `∫_{B_r} u♯` and `∫_{B_r} v`, where `u♯` rearranges `|u|` and `v` lives on
/// the symmetrized domain of `u`'s grid.
pub fn comparison_curves(u: &GridFunction, v: &GridFunction, radii: Option<&[f64]>) -> Result<ComparisonCurves, VerifyError> {
    let ball = u.grid().schwarz_grid();
    if v.grid() != &ball {
        return Err(VerifyError::Mismatch {
            check: "check_comparison",
            detail: "v is not defined on the symmetrized domain of u".into(),
        });
    }
    let us = schwarz_rearrangement(u, Direction::Decreasing);
    let m = multiples(&ball, radii);
    let h = ball.h();
    Ok(ComparisonCurves {
        radii: m.iter().map(|&k| k as f64 * h).collect(),
        u_sharp: prefix_integrals(&us, &m),
        v: prefix_integrals(v, &m),
    })
}

/// `max_r (∫_{B_r} u♯ - ∫_{B_r} v)` against `τ(h)`.
pub fn check_comparison(u: &GridFunction, v: &GridFunction, radii: Option<&[f64]>, tol: Tolerance) -> Result<CheckReport, VerifyError> {
    let curves = comparison_curves(u, v, radii)?;
    let d = max_difference(&curves.radii, &curves.u_sharp, &curves.v);
    let g = u.grid();
    Ok(
        CheckReport::new("check_comparison", d.max_violation, tol.tau(g.h()), Location::Radius { r: d.worst_radius })?
            .with_meta("n", g.n())
            .with_meta("dim", g.dim()),
    )
}

/// `uᵀA_u u - vᵀA_v v` against `τ(h)`.
pub fn check_energy_comparison(
    op_u: &DiscreteOperator,
    u: &[f64],
    op_v: &DiscreteOperator,
    v: &[f64],
    tol: Tolerance,
) -> Result<CheckReport, VerifyError> {
    if u.len() != op_u.size() || v.len() != op_v.size() {
        return Err(VerifyError::Mismatch {
            check: "check_energy_comparison",
            detail: "vector length differs from operator size".into(),
        });
    }
    let eu = op_u.energy(u);
    let ev = op_v.energy(v);
    let h = op_u.grid().map(|g| g.h()).unwrap_or(0.0);
    Ok(CheckReport::new("check_energy_comparison", eu - ev, tol.tau(h), Location::None)?
        .with_meta("energy_u", eu)
        .with_meta("energy_v", ev))
}

/// Per-step comparison along two trajectories on matching grids.
pub fn check_parabolic_comparison(
    traj_u: &Trajectory,
    traj_v: &Trajectory,
    radii: Option<&[f64]>,
    tol: Tolerance,
) -> Result<Vec<CheckReport>, VerifyError> {
    const CHECK: &str = "check_parabolic_comparison";
    if traj_u.time != traj_v.time {
        return Err(VerifyError::Mismatch {
            check: CHECK,
            detail: "trajectories use different time grids".into(),
        });
    }
    let initial = comparison_curves(&traj_u.grid_function(0)?, &traj_v.grid_function(0)?, radii)?;
    let d0 = max_difference(&initial.radii, &initial.u_sharp, &initial.v);
    let scale = initial.v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    if d0.max_violation > 1e-12 * scale {
        return Err(VerifyError::Precondition {
            check: CHECK,
            detail: format!(
                "initial data are not ordered by concentration: excess {:.3e} at r = {}",
                d0.max_violation, d0.worst_radius
            ),
        });
    }
    let mut out = Vec::with_capacity(traj_u.time.steps);
    for n in 1..=traj_u.time.steps {
        let u = traj_u.grid_function(n)?;
        let rep = check_comparison(&u, &traj_v.grid_function(n)?, radii, tol)?;
        let r = match rep.worst_location {
            Location::Radius { r } => r,
            _ => 0.0,
        };
        let mut rep = CheckReport::new(
            CHECK,
            rep.slack,
            rep.tolerance,
            Location::Time {
                step: n,
                t: traj_u.time.time(n),
                r,
            },
        )?;
        rep.metadata.insert("n".into(), u.grid().n().into());
        out.push(rep);
    }
    Ok(out)
}

/// Solves with a nonpositive source; the slack is `max_i u_i`.
pub fn check_max_principle(op: &DiscreteOperator, f: &[f64], opts: SolverOptions) -> Result<CheckReport, VerifyError> {
    if let Some(i) = f.iter().position(|v| *v > 0.0) {
        return Err(VerifyError::Precondition {
            check: "check_max_principle",
            detail: format!("source is positive at unknown {i}"),
        });
    }
    let sol = solvers::solve_elliptic(op, f, opts)?;
    let (idx, max) = sol
        .u
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let index = op.grid().map(|g| g.masked_indices()[idx]).unwrap_or(idx);
    CheckReport::new("check_max_principle", max, 10.0 * opts.tol, Location::Cell { index })
}

/// `[u♯]²_{J♯} - [u]²_K`, with `op_ball` assembled on the symmetrized domain.
pub fn check_polya_szego(
    op_k: &DiscreteOperator,
    op_ball: &DiscreteOperator,
    u: &GridFunction,
    tol: Tolerance,
) -> Result<CheckReport, VerifyError> {
    let us = schwarz_rearrangement(u, Direction::Decreasing);
    let a = op_k.seminorm_sq(&op_k.restrict(&u.abs())?);
    let b = op_ball.seminorm_sq(&op_ball.restrict(&us)?);
    Ok(CheckReport::new("check_polya_szego", b - a, tol.tau(u.grid().h()), Location::None)?
        .with_meta("seminorm_u", a)
        .with_meta("seminorm_u_sharp", b))
}

/// Pairings `F` with `F(a₂,b₂) + F(a₁,b₁) ≥ F(a₂,b₁) + F(a₁,b₂)` for `a₂ ≥ a₁`, `b₂ ≥ b₁`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    Product,
    Min,
}

impl Pairing {
    pub fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            Pairing::Product => a * b,
            Pairing::Min => a.min(b),
        }
    }
}

/// `h^{2N} Σ_{i,j} F(u_i, v_j) W(|x_i - x_j|)` over the domain cells,
/// with `W(0)` on the diagonal.
pub fn riesz_functional(u: &GridFunction, v: &GridFunction, w: &RadialProfile, pairing: Pairing) -> f64 {
    let g = u.grid();
    let cells = g.masked_indices();
    let centers: Vec<_> = cells.iter().map(|&i| g.center(i)).collect();
    let dim = g.dim();
    let mut acc = 0.0;
    for (a, &i) in cells.iter().enumerate() {
        for (b, &j) in cells.iter().enumerate() {
            let d = crate::kernels::distance(&centers[a][..dim], &centers[b][..dim]);
            acc += pairing.eval(u.values()[i], v.values()[j]) * w.value(d);
        }
    }
    acc * g.cell_volume() * g.cell_volume()
}

/// `I(u, v) - I(u♯, v♯)` for an integrable weight with finite value at 0.
pub fn check_riesz(
    w: &RadialProfile,
    u: &GridFunction,
    v: &GridFunction,
    pairing: Pairing,
    tol: Tolerance,
) -> Result<CheckReport, VerifyError> {
    const CHECK: &str = "check_riesz";
    if !matches!(w.kind(), ProfileKind::ExpDecay { .. } | ProfileKind::Tabulated { .. }) {
        return Err(VerifyError::Precondition {
            check: CHECK,
            detail: "weight must be integrable and bounded at the origin".into(),
        });
    }
    w.total_mass()?;
    if u.grid() != v.grid() {
        return Err(VerifyError::Mismatch {
            check: CHECK,
            detail: "u and v live on different grids".into(),
        });
    }
    if let Some(i) = u.values().iter().chain(v.values()).position(|x| *x < 0.0) {
        return Err(VerifyError::Precondition {
            check: CHECK,
            detail: format!("negative value at entry {i}"),
        });
    }
    let ws = w.rearranged();
    let us = schwarz_rearrangement(u, Direction::Decreasing);
    let vs = schwarz_rearrangement(v, Direction::Decreasing);
    let direct = riesz_functional(u, v, w, pairing);
    let sym = riesz_functional(&us, &vs, &ws, pairing);
    Ok(CheckReport::new(CHECK, direct - sym, tol.tau(u.grid().h()), Location::None)?
        .with_meta("pairing", pairing)
        .with_meta("direct", direct)
        .with_meta("symmetrized", sym))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CoareaMode {
    /// `½ ∬ K |u(x) - u(y)|` against the perimeter of the super-level sets.
    Plain,
    /// `½ ∬ K (u(x) - u(y)) ((u(x)-t)⁺ - (u(y)-t)⁺)` against the flux through
    /// super-level sets above `t`.
    Truncated { t: f64 },
}

/// Both sides of the discrete layer-cake identity on the operator's unknowns.
pub fn coarea_sides(op: &DiscreteOperator, u: &[f64], mode: CoareaMode) -> Result<(f64, f64), VerifyError> {
    let m = op.size();
    if u.len() != m {
        return Err(VerifyError::Mismatch {
            check: "check_coarea",
            detail: "vector length differs from operator size".into(),
        });
    }
    if let Some(i) = u.iter().position(|x| !(*x >= 0.0)) {
        return Err(VerifyError::Precondition {
            check: "check_coarea",
            detail: format!("u is negative at unknown {i}"),
        });
    }
    let kappa = op.kappa();
    let t = match mode {
        CoareaMode::Plain => 0.0,
        CoareaMode::Truncated { t } => t,
    };
    let truncated = matches!(mode, CoareaMode::Truncated { .. });

    let mut lhs = 0.0;
    for i in 0..m {
        for (k, &w) in op.weights().row(i).iter().enumerate() {
            let j = i + 1 + k;
            lhs += if truncated {
                w * (u[i] - u[j]) * ((u[i] - t).max(0.0) - (u[j] - t).max(0.0))
            } else {
                w * (u[i] - u[j]).abs()
            };
        }
        lhs += if truncated {
            kappa[i] * u[i] * (u[i] - t).max(0.0)
        } else {
            kappa[i] * u[i]
        };
    }

    // Walk the levels upward; S = {u >= current level} shrinks one cell at a time.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| u[a].total_cmp(&u[b]));
    let mut inside = vec![true; m];
    let mut measure: f64 = if truncated {
        (0..m).map(|i| kappa[i] * u[i]).sum()
    } else {
        kappa.iter().sum()
    };
    let mut rhs = 0.0;
    let mut prev = 0.0;
    let mut pos = 0;
    while pos < m {
        let level = u[order[pos]];
        if level > prev {
            let length = if truncated { (level - prev.max(t)).max(0.0) } else { level - prev };
            rhs += length * measure;
            prev = level;
        }
        while pos < m && u[order[pos]] == level {
            let i = order[pos];
            inside[i] = false;
            for j in 0..m {
                if j == i {
                    continue;
                }
                let w = op.weight(i, j);
                if w == 0.0 {
                    continue;
                }
                let term = if truncated { u[i] - u[j] } else { 1.0 };
                if inside[j] {
                    // i leaves S: pair (j, i) starts crossing
                    measure += if truncated { -w * term } else { w };
                } else {
                    // pair (i, j) no longer crosses
                    measure -= w * term;
                }
            }
            measure -= if truncated { kappa[i] * u[i] } else { kappa[i] };
            pos += 1;
        }
    }
    Ok((lhs, rhs))
}

/// `|lhs - rhs|` of the discrete coarea identity, at `1e-10` relative.
pub fn check_coarea(op: &DiscreteOperator, u: &GridFunction, mode: CoareaMode) -> Result<CheckReport, VerifyError> {
    let (lhs, rhs) = coarea_sides(op, &op.restrict(u)?, mode)?;
    let scale = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
    Ok(CheckReport::new("check_coarea", (lhs - rhs).abs(), 1e-10 * scale, Location::None)?
        .with_meta("mode", mode)
        .with_meta("lhs", lhs)
        .with_meta("rhs", rhs))
}

/// Cellwise `min(h, max(0, u - t))`.
pub fn truncate(u: &GridFunction, t: f64, h: f64) -> GridFunction {
    u.map(|x| (x - t).max(0.0).min(h))
}

/// For each level `t`, with `B = {u♯ > t}`:
/// `Σ_{i∈B, j∉B} w_ij (u_i - u_j) + Σ_B κ_i u_i + Σ_B c_i |C_i| u_i - Σ_B f_i |C_i|`.
pub fn check_level_set_inequality(
    op: &DiscreteOperator,
    usharp: &GridFunction,
    c: &[f64],
    f: &[f64],
    levels: &[f64],
    tol: Tolerance,
) -> Result<Vec<CheckReport>, VerifyError> {
    const CHECK: &str = "check_level_set_inequality";
    let grid = op.grid().ok_or(VerifyError::Mismatch {
        check: CHECK,
        detail: "operator has no grid".into(),
    })?;
    let u = op.restrict(usharp)?;
    let m = u.len();
    if c.len() != m || f.len() != m {
        return Err(VerifyError::Mismatch {
            check: CHECK,
            detail: "coefficient or source length differs from operator size".into(),
        });
    }
    let mass = op.mass();
    let kappa = op.kappa();
    let tau = tol.tau(grid.h());
    let mut out = Vec::with_capacity(levels.len());
    for &t in levels {
        let inside: Vec<bool> = u.iter().map(|&x| x > t).collect();
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for i in (0..m).filter(|&i| inside[i]) {
            for j in (0..m).filter(|&j| !inside[j]) {
                lhs += op.weight(i, j) * (u[i] - u[j]);
            }
            lhs += kappa[i] * u[i] + c[i] * mass[i] * u[i];
            rhs += f[i] * mass[i];
        }
        out.push(
            CheckReport::new(CHECK, lhs - rhs, tau, Location::Level { level: t })?
                .with_meta("ball_cells", inside.iter().filter(|b| **b).count()),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phi {
    /// `Φ₁(x) = ∫_{|y|>r} J(x - y) dy` for `|x| < r`.
    Complement,
    /// `Φ₂(y) = ∫_{|x|<r} J(x - y) dx` for `|y| > r`.
    Ball,
}

/// `Φ₁` or `Φ₂` at the given distances from the origin.
pub fn phi_values(profile: &RadialProfile, r: f64, which: Phi, points: &[f64]) -> Result<Vec<f64>, VerifyError> {
    let dim = profile.dim();
    if dim > 2 {
        return Err(KernelError::AssumptionViolated(format!("Φ evaluation supports N ≤ 2, got {dim}")).into());
    }
    let tail = |a: f64| profile.radial_tail(a);
    let cfg = QuadConfig::default().with_rel_tol(1e-11);
    points
        .iter()
        .map(|&rho| {
            let ok = match which {
                Phi::Complement => (0.0..r).contains(&rho),
                Phi::Ball => rho > r && rho.is_finite(),
            };
            if !ok {
                return Err(VerifyError::Domain {
                    value: rho,
                    range: match which {
                        Phi::Complement => format!("[0, {r})"),
                        Phi::Ball => format!("({r}, ∞)"),
                    },
                });
            }
            if dim == 1 {
                return Ok(match which {
                    Phi::Complement => tail(r - rho)? + tail(r + rho)?,
                    Phi::Ball => tail(rho - r)? - tail(rho + r)?,
                });
            }
            let err = std::cell::RefCell::new(None);
            let eval = |a: f64| match tail(a) {
                Ok(v) => v,
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    0.0
                }
            };
            let value = match which {
                Phi::Complement => {
                    // exit distance from x to the circle along direction θ
                    let g = |th: f64| {
                        let s = rho * th.sin();
                        eval(-rho * th.cos() + (r * r - s * s).sqrt())
                    };
                    2.0 * quad::integrate(g, 0.0, PI, cfg)?
                }
                Phi::Ball => {
                    // sin θ = (r/ρ) sin φ removes the square-root edge at the tangent rays
                    let k = r / rho;
                    let g = |ph: f64| {
                        let sth = k * ph.sin();
                        let cth = (1.0 - sth * sth).sqrt();
                        let half = r * ph.cos();
                        let jac = k * ph.cos() / cth;
                        (eval(rho * cth - half) - eval(rho * cth + half)) * jac
                    };
                    2.0 * quad::integrate(g, 0.0, PI / 2.0, cfg)?
                }
            };
            if let Some(e) = err.into_inner() {
                return Err(e.into());
            }
            Ok(value)
        })
        .collect()
}

/// Largest adjacent-sample violation of `Φ₁` increasing on `[0, r)` and
/// `Φ₂` decreasing on `(r, 4r]`, against `1e-8`.
pub fn check_phi_monotonicity(profile: &RadialProfile, r: f64, samples: usize) -> Result<CheckReport, VerifyError> {
    let inner: Vec<f64> = (0..samples).map(|k| r * k as f64 / samples as f64).collect();
    let outer: Vec<f64> = (1..=samples).map(|k| r * (1.0 + 3.0 * k as f64 / samples as f64)).collect();
    let p1 = phi_values(profile, r, Phi::Complement, &inner)?;
    let p2 = phi_values(profile, r, Phi::Ball, &outer)?;
    let mut slack = f64::NEG_INFINITY;
    let mut at = 0.0;
    for k in 1..samples {
        let v1 = p1[k - 1] - p1[k];
        if v1 > slack {
            slack = v1;
            at = inner[k];
        }
        let v2 = p2[k] - p2[k - 1];
        if v2 > slack {
            slack = v2;
            at = outer[k];
        }
    }
    if samples < 2 {
        slack = 0.0;
    }
    Ok(CheckReport::new("check_phi_monotonicity", slack, 1e-8, Location::Sample { rho: at })?
        .with_meta("r", r)
        .with_meta("samples", samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LensExtrema {
    /// `max |y|²` over the closure of `B_r(ρ e₁) \ B_r(ρ' e₁)`.
    pub max_sq: f64,
    /// `min |y|²` over the closure of `B_r(ρ' e₁) \ B_r(ρ e₁)`.
    pub min_sq: f64,
}

/// Extrema of `|y|²` over the two halves of the symmetric difference of two
/// planar discs of radius `r` centred at `ρ e₁` and `ρ' e₁`, `0 < ρ < ρ'`.
/// Both regions are sampled along their boundary arcs, where the extrema of
/// `|y|²` lie, together with the corner points where the circles meet.
pub fn lens_extrema(r: f64, rho: f64, rho_p: f64, samples: usize) -> LensExtrema {
    let mut max_sq = f64::NEG_INFINITY;
    let mut min_sq = f64::INFINITY;
    let slack = 1e-12 * (r + rho_p);
    let dist = |x: f64, y: f64, c: f64| ((x - c) * (x - c) + y * y).sqrt();
    for k in 0..samples {
        let th = 2.0 * PI * k as f64 / samples as f64;
        let (c, s) = (th.cos(), th.sin());
        // circle around ρ: in the first region where it stays outside the other disc
        let (x, y) = (rho + r * c, r * s);
        if dist(x, y, rho_p) >= r - slack {
            max_sq = max_sq.max(x * x + y * y);
        }
        if dist(x, y, rho_p) <= r + slack {
            min_sq = min_sq.min(x * x + y * y);
        }
        let (x, y) = (rho_p + r * c, r * s);
        if dist(x, y, rho) <= r + slack {
            max_sq = max_sq.max(x * x + y * y);
        }
        if dist(x, y, rho) >= r - slack {
            min_sq = min_sq.min(x * x + y * y);
        }
    }
    let half = 0.5 * (rho_p - rho);
    if half <= r {
        let x = 0.5 * (rho + rho_p);
        let y2 = r * r - half * half;
        max_sq = max_sq.max(x * x + y2);
        min_sq = min_sq.min(x * x + y2);
    }
    LensExtrema { max_sq, min_sq }
}

/// Outcome of the discrete max/min lemma on one radial pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxMinOutcome {
    /// `∫_{B_r̄} (u - v) h₁` when the running integral has a positive maximum.
    pub inner: Option<f64>,
    /// `∫_{B_R \ B_r̄} (u - v) h₂` when the outer integral has a negative minimum.
    pub outer: Option<f64>,
}

/// Shell form of the max/min lemma. `u`, `v`, `h1`, `h2` are shell values
/// from the centre outward and `volumes` the shell volumes. Maxima closer to
/// zero than a rounding floor count as absent.
pub fn maxmin_lemma(u: &[f64], v: &[f64], volumes: &[f64], h1: &[f64], h2: &[f64]) -> Result<MaxMinOutcome, VerifyError> {
    const CHECK: &str = "check_maxmin_lemma";
    let k = u.len();
    if [v.len(), volumes.len(), h1.len(), h2.len()].iter().any(|&l| l != k) || k == 0 {
        return Err(VerifyError::Mismatch {
            check: CHECK,
            detail: "radial sequences differ in length".into(),
        });
    }
    if h1.iter().chain(h2).any(|x| !(*x > 0.0))
        || h1.windows(2).any(|w| w[1] < w[0])
        || h2.windows(2).any(|w| w[1] > w[0])
    {
        return Err(VerifyError::Precondition {
            check: CHECK,
            detail: "h1 must be positive increasing and h2 positive decreasing".into(),
        });
    }
    let d: Vec<f64> = (0..k).map(|i| (u[i] - v[i]) * volumes[i]).collect();
    let floor = 64.0 * f64::EPSILON * d.iter().map(|x| x.abs()).sum::<f64>();

    // running integrals I_m = Σ_{i<m} d_i, m = 0..=k
    let mut best = (0usize, 0.0f64);
    let mut acc = 0.0;
    for (m, di) in d.iter().enumerate() {
        acc += di;
        if acc > best.1 {
            best = (m + 1, acc);
        }
    }
    let inner = (best.1 > floor).then(|| (0..best.0).map(|i| d[i] * h1[i]).sum());

    // outer integrals over shells m..k, with 0 < m < k
    let mut worst = (0usize, 0.0f64);
    let mut acc = 0.0;
    for m in (1..k).rev() {
        acc += d[m];
        if acc < worst.1 {
            worst = (m, acc);
        }
    }
    let outer = (worst.1 < -floor).then(|| (worst.0..k).map(|i| d[i] * h2[i]).sum());
    Ok(MaxMinOutcome { inner, outer })
}

/// Reports `max(-inner, outer)`; passes iff strictly negative. Vacuous when
/// neither hypothesis holds.
pub fn check_maxmin_lemma(u: &[f64], v: &[f64], volumes: &[f64], h1: &[f64], h2: &[f64]) -> Result<CheckReport, VerifyError> {
    let out = maxmin_lemma(u, v, volumes, h1, h2)?;
    let slack = match (out.inner.map(|a| -a), out.outer) {
        (None, None) => None,
        (Some(a), None) | (None, Some(a)) => Some(a),
        (Some(a), Some(b)) => Some(a.max(b)),
    };
    let mut rep = CheckReport::new("check_maxmin_lemma", slack.unwrap_or(0.0), f64::MIN_POSITIVE, Location::None)?;
    rep.pass = slack.map_or(true, |s| s < 0.0);
    rep.vacuous = slack.is_none();
    Ok(rep.with_meta("inner", out.inner).with_meta("outer", out.outer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble;
    use crate::kernels::Kernel;
    use crate::rearrange::{Domain, Grid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn interval_grid(n: usize) -> Grid {
        Grid::from_domain(1, 1.0, n, &Domain::Intervals { intervals: vec![[-0.6, 0.9]] }).unwrap()
    }

    fn op(g: &Grid) -> DiscreteOperator {
        assemble(
            &Kernel::translation_invariant(RadialProfile::power(g.dim(), 0.4)),
            g,
            &GridFunction::zeros(g),
        )
        .unwrap()
    }

    #[test]
    fn tolerance_floor() {
        let t = Tolerance::default();
        assert_eq!(t.tau(1e-9), 1e-8);
        assert!((t.tau(0.1) - 0.005).abs() < 1e-18);
    }

    #[test]
    fn jsonl_fields() {
        let r = CheckReport::new("check_comparison", -1.0, 0.1, Location::Radius { r: 0.5 }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_jsonl("abc")).unwrap();
        for k in ["check", "slack", "tolerance", "pass", "worst_location", "config_hash"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(v["worst_location"]["r"], 0.5);
        assert!(CheckReport::new("x", f64::NAN, 1.0, Location::None).is_err());
    }

    #[test]
    fn coarea_two_valued() {
        let g = interval_grid(16);
        let a = op(&g);
        let m = a.size();
        let u: Vec<f64> = (0..m).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let (lhs, rhs) = coarea_sides(&a, &u, CoareaMode::Plain).unwrap();
        let mut direct = 0.0;
        for i in 0..m {
            if u[i] == 1.0 {
                direct += a.kappa()[i];
                for j in 0..m {
                    if u[j] == 0.0 {
                        direct += a.weight(i, j);
                    }
                }
            }
        }
        assert!((lhs - direct).abs() <= 1e-12 * direct);
        assert!((rhs - direct).abs() <= 1e-12 * direct);
    }

    #[test]
    fn coarea_brute_force_levels() {
        let g = Grid::from_domain(1, 1.0, 16, &Domain::Intervals { intervals: vec![[-0.25, 0.25]] }).unwrap();
        let a = op(&g);
        assert_eq!(a.size(), 4);
        let u = [0.0, 2.0, 0.5, 2.0];
        let levels = [0.0f64, 0.5, 2.0];
        for mode in [CoareaMode::Plain, CoareaMode::Truncated { t: 0.3 }, CoareaMode::Truncated { t: 1.0 }] {
            let t = match mode {
                CoareaMode::Plain => 0.0,
                CoareaMode::Truncated { t } => t,
            };
            let tr = matches!(mode, CoareaMode::Truncated { .. });
            let mut rhs = 0.0;
            for k in 1..levels.len() {
                let lo = if tr { levels[k - 1].max(t) } else { levels[k - 1] };
                let len = (levels[k] - lo).max(0.0);
                let mut flux = 0.0;
                for i in 0..4 {
                    if u[i] < levels[k] {
                        continue;
                    }
                    flux += a.kappa()[i] * if tr { u[i] } else { 1.0 };
                    for j in 0..4 {
                        if u[j] < levels[k] {
                            flux += a.weight(i, j) * if tr { u[i] - u[j] } else { 1.0 };
                        }
                    }
                }
                rhs += len * flux;
            }
            let (l, r) = coarea_sides(&a, &u, mode).unwrap();
            assert!((r - rhs).abs() <= 1e-12 * rhs.abs().max(1.0), "{mode:?}");
            assert!((l - r).abs() <= 1e-10 * l.abs().max(1.0), "{mode:?}");
        }
        let (l, r) = coarea_sides(&a, &u, CoareaMode::Truncated { t: 5.0 }).unwrap();
        assert_eq!((l, r), (0.0, 0.0));
    }

    #[test]
    fn coarea_random_functions() {
        let g = Grid::from_domain(
            2,
            1.0,
            16,
            &Domain::Boxes {
                boxes: vec![vec![[-0.8, 0.1], [-0.5, 0.6]], vec![[0.3, 0.9], [-0.9, 0.0]]],
            },
        )
        .unwrap();
        let a = op(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let u: Vec<f64> = (0..a.size()).map(|_| (rng.gen_range(0..6) as f64) * 0.3).collect();
            let gf = GridFunction::from_interior(&g, &u).unwrap();
            assert!(check_coarea(&a, &gf, CoareaMode::Plain).unwrap().pass);
            assert!(check_coarea(&a, &gf, CoareaMode::Truncated { t: 0.7 }).unwrap().pass);
        }
        let neg = GridFunction::from_fn(&g, |_| -1.0);
        assert!(check_coarea(&a, &neg, CoareaMode::Plain).is_err());
    }

    #[test]
    fn truncation_formula() {
        let g = interval_grid(32);
        let tent = GridFunction::from_fn(&g, |x| 1.0 - x[0].abs());
        let tr = truncate(&tent, 0.25, 0.5);
        for i in g.masked_indices() {
            let x = g.center(*i)[0];
            assert_eq!(tr.value(*i), (1.0 - x.abs() - 0.25).max(0.0).min(0.5));
        }
        assert!(truncate(&tent, 2.0, 1.0).values().iter().all(|v| *v == 0.0));
        let c = GridFunction::from_fn(&g, |_| 3.0);
        assert!(truncate(&c, 1.0, 0.5)
            .interior()
            .iter()
            .all(|v| *v == 0.5));
    }

    #[test]
    fn max_principle_spike() {
        let g = interval_grid(64);
        let a = op(&g);
        let mut f = vec![0.0; a.size()];
        f[7] = -3.0;
        let rep = check_max_principle(&a, &f, SolverOptions::default()).unwrap();
        assert!(rep.pass && rep.slack < 0.0);
        let rep = check_max_principle(&a, &vec![0.0; a.size()], SolverOptions::default()).unwrap();
        assert_eq!(rep.slack, 0.0);
        assert!(check_max_principle(&a, &vec![1.0; a.size()], SolverOptions::default()).is_err());
    }

    #[test]
    fn comparison_equality_case() {
        let g = Grid::from_domain(1, 1.0, 64, &Domain::Ball { radius: 0.5, center: None }).unwrap();
        assert!(g.is_discrete_ball());
        let a = op(&g);
        let f = GridFunction::from_fn(&g, |x| 1.0 - x[0] * x[0]);
        let (u, _) = solvers::solve_grid(&a, &f, SolverOptions::default()).unwrap();
        let rep = check_comparison(&u, &u, None, Tolerance::default()).unwrap();
        assert!(rep.slack.abs() <= 1e-12);
        let other = GridFunction::zeros(&interval_grid(64));
        assert!(check_comparison(&u, &other, None, Tolerance::default()).is_err());
    }

    #[test]
    fn riesz_rejects_singular_weight() {
        let g = interval_grid(16);
        let u = GridFunction::from_fn(&g, |_| 1.0);
        let w = RadialProfile::power(1, 0.5);
        assert!(check_riesz(&w, &u, &u, Pairing::Product, Tolerance::default()).is_err());
    }

    #[test]
    fn riesz_off_center_cluster() {
        let g = Grid::full(2, 1.0, 16).unwrap();
        let u = GridFunction::from_fn(&g, |x| if (x[0] - 0.5).abs() < 0.2 && (x[1] + 0.3).abs() < 0.3 { 1.0 } else { 0.0 });
        let radii: Vec<f64> = (1..=40).map(|k| 0.05 * k as f64).collect();
        let values: Vec<f64> = radii.iter().map(|r| (-(r * r) / 0.3).exp()).collect();
        let w = RadialProfile::tabulated(2, radii, values).unwrap();
        for p in [Pairing::Product, Pairing::Min] {
            let rep = check_riesz(&w, &u, &u, p, Tolerance::default()).unwrap();
            assert!(rep.pass && rep.slack < 0.0, "{rep:?}");
        }
    }

    #[test]
    fn phi_exponential_oracle() {
        let j = RadialProfile::exp_decay(1, 1.0).unwrap();
        let v = phi_values(&j, 1.0, Phi::Complement, &[0.0]).unwrap()[0];
        assert!((v - 2.0 * (-1.0f64).exp()).abs() < 1e-12);
        let far = phi_values(&j, 1.0, Phi::Ball, &[40.0]).unwrap()[0];
        assert!(far < 1e-15);
        assert!(phi_values(&j, 1.0, Phi::Complement, &[1.5]).is_err());
        assert!(phi_values(&j, 1.0, Phi::Ball, &[0.5]).is_err());
    }

    #[test]
    fn phi_planar_against_cartesian_quadrature() {
        let j = RadialProfile::exp_decay(2, 1.0).unwrap();
        let r = 1.0;
        // Φ₂ at distance 2 by brute-force integration over the disc
        let rho = 2.0;
        let cfg = QuadConfig::default().with_rel_tol(1e-10);
        let inner = |x: f64| {
            let hy = (r * r - x * x).max(0.0).sqrt();
            quad::integrate(|y| j.value(((x - rho).powi(2) + y * y).sqrt()), -hy, hy, cfg).unwrap()
        };
        let brute = quad::integrate(inner, -r, r, cfg).unwrap();
        let v = phi_values(&j, r, Phi::Ball, &[rho]).unwrap()[0];
        assert!((v - brute).abs() < 1e-8 * brute, "{v} {brute}");
        // Φ₁(0) = 2π T(r) = 2π (1 + r) e^{-r}
        let v0 = phi_values(&j, r, Phi::Complement, &[0.0]).unwrap()[0];
        assert!((v0 - 2.0 * PI * 2.0 * (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn phi_monotone_for_fractional() {
        for dim in [1, 2] {
            let rep = check_phi_monotonicity(&RadialProfile::power(dim, 0.5), 1.0, 16).unwrap();
            assert!(rep.pass, "{rep:?}");
        }
        let rep = check_phi_monotonicity(&RadialProfile::power(1, 0.5), 1.0, 1).unwrap();
        assert!(rep.pass);
    }

    #[test]
    fn lens_identity() {
        for &(r, a, b) in &[(1.0, 0.2, 0.7), (1.0, 0.1, 1.9), (0.5, 1.0, 1.3)] {
            let e = lens_extrema(r, a, b, 20_000);
            let target = r * r + a * b;
            assert!((e.max_sq - target).abs() < 1e-6);
            assert!((e.min_sq - target).abs() < 1e-6);
        }
        // disjoint discs
        let e = lens_extrema(0.5, 1.0, 3.0, 20_000);
        assert!(e.max_sq < e.min_sq);
    }

    #[test]
    fn maxmin_cases() {
        let vol = [1.0, 3.0, 5.0, 7.0];
        let h1 = [1.0, 2.0, 3.0, 4.0];
        let h2 = [1.0, 0.5, 0.25, 0.1];
        let u = [2.0; 4];
        let v = [1.0; 4];
        let rep = check_maxmin_lemma(&u, &v, &vol, &h1, &h2).unwrap();
        assert!(rep.pass && !rep.vacuous && rep.slack < 0.0);
        let rep = check_maxmin_lemma(&u, &u, &vol, &h1, &h2).unwrap();
        assert!(rep.vacuous && rep.pass);
        assert!(check_maxmin_lemma(&u, &v, &vol, &h2, &h2).is_err());
    }
}
