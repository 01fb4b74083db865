//! Conjugate gradients for the discrete elliptic problem and implicit Euler
//! for the parabolic one.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::DiscreteOperator;
use crate::quad;
use crate::rearrange::{Grid, GridError, GridFunction};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("CG stopped after {iterations} iterations at relative residual {residual:.3e}")]
    NotConverged {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },
    #[error("time step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<SolveError>,
    },
    #[error("invalid solver input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 20_000,
        }
    }
}

/// Symmetric positive definite operator known through its action.
pub trait LinearOperator: Sync {
    fn size(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn diagonal(&self) -> Vec<f64>;
}

impl LinearOperator for DiscreteOperator {
    fn size(&self) -> usize {
        DiscreteOperator::size(self)
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        DiscreteOperator::apply(self, x)
    }

    fn diagonal(&self) -> Vec<f64> {
        DiscreteOperator::diagonal(self)
    }
}

/// `A + diag(extra)`.
pub struct Shifted<'a> {
    pub op: &'a DiscreteOperator,
    pub extra: Vec<f64>,
}

impl LinearOperator for Shifted<'_> {
    fn size(&self) -> usize {
        self.op.size()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.op.apply(x);
        for ((yi, e), xi) in y.iter_mut().zip(&self.extra).zip(x) {
            *yi += e * xi;
        }
        y
    }

    fn diagonal(&self) -> Vec<f64> {
        self.op.diagonal().iter().zip(&self.extra).map(|(a, b)| a + b).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final `‖b - A x‖ / ‖b‖`.
    pub residual: f64,
}

/// Jacobi-preconditioned CG from the zero vector.
pub fn conjugate_gradient<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    opts: SolverOptions,
) -> Result<CgOutcome, SolveError> {
    let m = a.size();
    if b.len() != m {
        return Err(SolveError::Invalid(format!("rhs has {} entries, expected {m}", b.len())));
    }
    if !(opts.tol > 0.0) {
        return Err(SolveError::Invalid("tolerance must be positive".into()));
    }
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; m];
    if bnorm == 0.0 {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            residual: 0.0,
        });
    }
    let inv: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut history = Vec::new();
    for it in 1..=opts.max_iter {
        let ap = a.apply(&p);
        let alpha = rz / dot(&p, &ap);
        for k in 0..m {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let res = dot(&r, &r).sqrt() / bnorm;
        history.push(res);
        if res <= opts.tol {
            // confirm with the true residual to guard against drift
            let ax = a.apply(&x);
            let true_res = b.iter().zip(&ax).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt() / bnorm;
            if true_res <= opts.tol {
                return Ok(CgOutcome {
                    x,
                    iterations: it,
                    residual: true_res,
                });
            }
            r = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        }
        for k in 0..m {
            z[k] = r[k] * inv[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..m {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(SolveError::NotConverged {
        iterations: opts.max_iter,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticSolution {
    /// Values on the operator's unknowns.
    pub u: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// `½ uᵀAu - bᵀu`.
    pub functional: f64,
}

/// `½ wᵀAw - bᵀw` with `b_i = f_i |C_i|`.
pub fn energy_functional(op: &DiscreteOperator, f: &[f64], w: &[f64]) -> f64 {
    let b = op.load(f);
    0.5 * op.energy(w) - dot(&b, w)
}

/// Solves `A u = f |C|`.
pub fn solve_elliptic(op: &DiscreteOperator, f: &[f64], opts: SolverOptions) -> Result<EllipticSolution, SolveError> {
    let b = op.load(f);
    let out = conjugate_gradient(op, &b, opts)?;
    let functional = energy_functional(op, f, &out.x);
    Ok(EllipticSolution {
        u: out.x,
        iterations: out.iterations,
        residual: out.residual,
        functional,
    })
}

/// Grid-function front end of [`solve_elliptic`].
pub fn solve_grid(op: &DiscreteOperator, f: &GridFunction, opts: SolverOptions) -> Result<(GridFunction, EllipticSolution), SolveError> {
    let grid = op
        .grid()
        .ok_or_else(|| SolveError::Invalid("operator is not defined on a grid".into()))?;
    if grid != f.grid() {
        return Err(GridError::Mismatch.into());
    }
    let sol = solve_elliptic(op, &f.interior(), opts)?;
    Ok((GridFunction::from_interior(grid, &sol.u)?, sol))
}

/// Smallest change of the energy functional over random perturbations of
/// Euclidean norm `1e-3`; non-negative up to rounding at a minimizer.
pub fn minimality_probe(op: &DiscreteOperator, f: &[f64], u: &[f64], perturbations: usize, seed: u64) -> f64 {
    let base = energy_functional(op, f, u);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..perturbations {
        let mut d: Vec<f64> = (0..u.len()).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dot(&d, &d).sqrt();
        d.iter_mut().for_each(|v| *v *= 1e-3 / norm);
        worst = worst.min(perturbed_change(op, f, u, &d, base));
    }
    if worst.is_finite() {
        worst
    } else {
        0.0
    }
}

/// `E(u + δ) - E(u)` given `E(u)`.
pub fn perturbed_change(op: &DiscreteOperator, f: &[f64], u: &[f64], delta: &[f64], base: f64) -> f64 {
    let w: Vec<f64> = u.iter().zip(delta).map(|(a, b)| a + b).collect();
    energy_functional(op, f, &w) - base
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub final_time: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(final_time: f64, steps: usize) -> Result<Self, SolveError> {
        if !(final_time > 0.0) || steps == 0 {
            return Err(SolveError::Invalid("need T > 0 and at least one step".into()));
        }
        Ok(Self { final_time, steps })
    }

    pub fn dt(&self) -> f64 {
        self.final_time / self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }
}

/// Per-step averages `(1/Δt) ∫_{t_n}^{t_{n+1}} g(i, t) dt` by 8-point Gauss rules.
pub fn time_average(unknowns: usize, g: impl Fn(usize, f64) -> f64, tg: &TimeGrid) -> Vec<Vec<f64>> {
    let rule = quad::gauss_legendre(8);
    (0..tg.steps)
        .map(|n| {
            let (a, b) = (tg.time(n), tg.time(n + 1));
            (0..unknowns)
                .map(|i| quad::gauss_fixed(|t| g(i, t), a, b, &rule) / (b - a))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub time: TimeGrid,
    pub grid: Option<Grid>,
    pub u0: Vec<f64>,
    /// `u_1, …, u_steps`.
    pub states: Vec<Vec<f64>>,
    pub iterations: Vec<usize>,
    pub residuals: Vec<f64>,
    pub c_avg: Vec<Vec<f64>>,
    pub f_avg: Vec<Vec<f64>>,
}

impl Trajectory {
    /// `u_n`, with `u_0` the initial datum.
    pub fn state(&self, n: usize) -> &[f64] {
        if n == 0 {
            &self.u0
        } else {
            &self.states[n - 1]
        }
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.time.steps)
    }

    pub fn grid_function(&self, n: usize) -> Result<GridFunction, SolveError> {
        let g = self
            .grid
            .as_ref()
            .ok_or_else(|| SolveError::Invalid("trajectory has no grid".into()))?;
        Ok(GridFunction::from_interior(g, self.state(n))?)
    }

    /// Piecewise-constant interpolant: `u_{n+1}` on `(t_n, t_{n+1}]`.
    pub fn piecewise_constant(&self, t: f64) -> &[f64] {
        let n = ((t / self.time.dt()).ceil() as usize).clamp(1, self.time.steps);
        self.state(n)
    }

    /// Piecewise-linear interpolant through `(t_n, u_n)`.
    pub fn piecewise_linear(&self, t: f64) -> Vec<f64> {
        let dt = self.time.dt();
        let n = ((t / dt).floor() as usize).min(self.time.steps - 1);
        let s = (t - self.time.time(n)) / dt;
        self.state(n)
            .iter()
            .zip(self.state(n + 1))
            .map(|(a, b)| (1.0 - s) * a + s * b)
            .collect()
    }

    /// Writes `u_<n>.csv` per step (including `n = 0`) and `index.json`.
    pub fn export(&self, dir: &Path, ledger: Option<&EnergyLedger>) -> crate::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for n in 0..=self.time.steps {
            let file = format!("u_{n:04}.csv");
            if let Ok(gf) = self.grid_function(n) {
                gf.save_csv(&dir.join(&file))?;
            } else {
                let mut w = csv::Writer::from_path(dir.join(&file))?;
                w.write_record(["k", "value"])?;
                for (k, v) in self.state(n).iter().enumerate() {
                    w.write_record([k.to_string(), format!("{v:.16e}")])?;
                }
                w.flush()?;
            }
            entries.push(serde_json::json!({
                "step": n,
                "t": self.time.time(n),
                "file": file,
                "iterations": if n == 0 { 0 } else { self.iterations[n - 1] },
                "residual": if n == 0 { 0.0 } else { self.residuals[n - 1] },
            }));
        }
        let index = serde_json::json!({
            "final_time": self.time.final_time,
            "steps": self.time.steps,
            "dt": self.time.dt(),
            "states": entries,
            "energy_ledger": ledger,
        });
        std::fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index).map_err(std::io::Error::other)?)?;
        Ok(())
    }
}

/// Implicit Euler: `(A + c_n|C| + |C|/Δt) u_{n+1} = (f_n + u_n/Δt) |C|`.
///
/// `c_avg` and `f_avg` hold one vector per step, or a single vector used for
/// every step. `c_avg` adds to the operator's own coefficient.
pub fn parabolic_solve(
    op: &DiscreteOperator,
    c_avg: &[Vec<f64>],
    f_avg: &[Vec<f64>],
    u0: &[f64],
    tg: TimeGrid,
    opts: SolverOptions,
) -> Result<Trajectory, SolveError> {
    let m = op.size();
    let per_step = |v: &[Vec<f64>], name: &str| -> Result<Vec<Vec<f64>>, SolveError> {
        match v.len() {
            0 => Ok(vec![vec![0.0; m]; tg.steps]),
            1 => Ok(vec![v[0].clone(); tg.steps]),
            k if k == tg.steps => Ok(v.to_vec()),
            k => Err(SolveError::Invalid(format!("{name} has {k} steps, expected {}", tg.steps))),
        }
    };
    let c_avg = per_step(c_avg, "coefficient")?;
    let f_avg = per_step(f_avg, "source")?;
    if u0.len() != m || c_avg.iter().chain(&f_avg).any(|v| v.len() != m) {
        return Err(SolveError::Invalid("per-step data do not match the operator size".into()));
    }
    if c_avg.iter().flatten().any(|c| *c < 0.0) {
        return Err(SolveError::Invalid("coefficient must be nonnegative".into()));
    }
    let dt = tg.dt();
    let mass = op.mass();
    let mut states = Vec::with_capacity(tg.steps);
    let mut iterations = Vec::with_capacity(tg.steps);
    let mut residuals = Vec::with_capacity(tg.steps);
    let mut prev = u0.to_vec();
    for n in 0..tg.steps {
        let extra: Vec<f64> = (0..m).map(|i| (c_avg[n][i] + 1.0 / dt) * mass[i]).collect();
        let shifted = Shifted { op, extra };
        let b: Vec<f64> = (0..m).map(|i| (f_avg[n][i] + prev[i] / dt) * mass[i]).collect();
        let out = conjugate_gradient(&shifted, &b, opts).map_err(|e| SolveError::Step {
            step: n + 1,
            source: Box::new(e),
        })?;
        iterations.push(out.iterations);
        residuals.push(out.residual);
        prev = out.x.clone();
        states.push(out.x);
    }
    Ok(Trajectory {
        time: tg,
        grid: op.grid().cloned(),
        u0: u0.to_vec(),
        states,
        iterations,
        residuals,
        c_avg,
        f_avg,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub step: usize,
    /// `Σ_{k≤n} ‖u_{k+1} - u_k‖²`
    pub increments: f64,
    /// `‖u_{n+1}‖²`
    pub norm_sq: f64,
    /// `½ Δt Σ_{k≤n} [u_{k+1}]²`
    pub seminorm_term: f64,
    pub lhs: f64,
    /// `Δt Σ_{k≤n} ‖f_k‖²`
    pub source_term: f64,
    /// `max(0, lhs - ‖u_0‖²) / (Δt Σ ‖f_k‖²)`, zero without a source.
    pub c_fit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub initial_sq: f64,
    pub rows: Vec<LedgerRow>,
    /// Largest per-step fitted constant.
    pub c_fit: f64,
    /// `∫_0^T ‖û(t) - u_N(t)‖² dt` between the linear and constant interpolants.
    pub interpolation_gap: f64,
}

/// Accumulates the discrete energy estimate along a trajectory.
pub fn discrete_energy_ledger(traj: &Trajectory, op: &DiscreteOperator) -> EnergyLedger {
    let mass = op.mass();
    let norm_sq = |v: &[f64]| v.iter().zip(mass.iter()).map(|(a, m)| a * a * m).sum::<f64>();
    let dt = traj.time.dt();
    let initial_sq = norm_sq(&traj.u0);
    let mut increments = 0.0;
    let mut semis = 0.0;
    let mut sources = 0.0;
    let mut gap = 0.0;
    let mut rows = Vec::with_capacity(traj.time.steps);
    for n in 0..traj.time.steps {
        let (a, b) = (traj.state(n), traj.state(n + 1));
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
        let inc = norm_sq(&diff);
        increments += inc;
        // û - u_N = (s - 1)(u_{n+1} - u_n) on the step, whose square integrates to Δt/3
        gap += dt / 3.0 * inc;
        semis += 0.5 * dt * op.seminorm_sq(b);
        sources += dt * norm_sq(&traj.f_avg[n]);
        let nsq = norm_sq(b);
        let lhs = increments + nsq + semis;
        let c_fit = if sources > 0.0 { (lhs - initial_sq).max(0.0) / sources } else { 0.0 };
        rows.push(LedgerRow {
            step: n + 1,
            increments,
            norm_sq: nsq,
            seminorm_term: semis,
            lhs,
            source_term: sources,
            c_fit,
        });
    }
    let c_fit = rows.iter().map(|r| r.c_fit).fold(0.0, f64::max);
    EnergyLedger {
        initial_sq,
        rows,
        c_fit,
        interpolation_gap: gap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble;
    use crate::kernels::{Kernel, RadialProfile};
    use crate::rearrange::Domain;

    fn setup(n: usize, s: f64) -> (Grid, DiscreteOperator) {
        let g = Grid::from_domain(1, 1.0, n, &Domain::Intervals { intervals: vec![[-1.0, 1.0]] }).unwrap();
        let op = assemble(
            &Kernel::translation_invariant(RadialProfile::power(1, s)),
            &g,
            &GridFunction::zeros(&g),
        )
        .unwrap();
        (g, op)
    }

    #[test]
    fn zero_source_gives_zero() {
        let (_, op) = setup(32, 0.5);
        let sol = solve_elliptic(&op, &vec![0.0; op.size()], SolverOptions::default()).unwrap();
        assert!(sol.u.iter().all(|v| *v == 0.0));
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn residual_meets_tolerance() {
        let (_, op) = setup(128, 0.75);
        let f = vec![1.0; op.size()];
        let sol = solve_elliptic(&op, &f, SolverOptions::default()).unwrap();
        let b = op.load(&f);
        let au = op.apply(&sol.u);
        let r = b.iter().zip(&au).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() / dot(&b, &b).sqrt();
        assert!(r <= 1e-10);
    }

    #[test]
    fn non_convergence_reports_history() {
        let (_, op) = setup(64, 0.5);
        let f = vec![1.0; op.size()];
        let err = solve_elliptic(&op, &f, SolverOptions { tol: 1e-14, max_iter: 2 }).unwrap_err();
        match err {
            SolveError::NotConverged { history, .. } => assert_eq!(history.len(), 2),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn linearity_and_reflection_symmetry() {
        let (g, op) = setup(64, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f1: Vec<f64> = (0..op.size()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f2: Vec<f64> = (0..op.size()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let opts = SolverOptions::default();
        let u1 = solve_elliptic(&op, &f1, opts).unwrap().u;
        let u2 = solve_elliptic(&op, &f2, opts).unwrap().u;
        let mix: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let u = solve_elliptic(&op, &mix, opts).unwrap().u;
        let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..u.len() {
            assert!((u[k] - (2.0 * u1[k] - 0.5 * u2[k])).abs() <= 10.0 * opts.tol * scale.max(1.0) * 100.0);
        }
        let sym = GridFunction::from_fn(&g, |x| 1.0 + x[0] * x[0]);
        let us = solve_elliptic(&op, &sym.interior(), opts).unwrap().u;
        let m = us.len();
        let top = us.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for k in 0..m {
            assert!((us[k] - us[m - 1 - k]).abs() <= 10.0 * opts.tol * top * 10.0);
        }
    }

    #[test]
    fn minimality_probe_never_decreases() {
        let (_, op) = setup(64, 0.5);
        let f = vec![1.0; op.size()];
        let sol = solve_elliptic(&op, &f, SolverOptions::default()).unwrap();
        assert_eq!(minimality_probe(&op, &f, &sol.u, 0, 1), 0.0);
        assert!(minimality_probe(&op, &f, &sol.u, 100, 1) >= -1e-8);
        let zero = vec![0.0; op.size()];
        let base = energy_functional(&op, &f, &sol.u);
        assert_eq!(perturbed_change(&op, &f, &sol.u, &zero, base), 0.0);
        // residual direction
        let b = op.load(&f);
        let au = op.apply(&sol.u);
        let mut r: Vec<f64> = b.iter().zip(&au).map(|(x, y)| x - y).collect();
        let norm = dot(&r, &r).sqrt().max(1e-300);
        r.iter_mut().for_each(|v| *v *= 1e-3 / norm);
        assert!(perturbed_change(&op, &f, &sol.u, &r, base) >= -1e-8);
    }

    #[test]
    fn time_averages() {
        let tg = TimeGrid::new(3.0, 3).unwrap();
        let c = time_average(2, |_, _| 4.0, &tg);
        assert!(c.iter().flatten().all(|v| (v - 4.0).abs() < 1e-14));
        let lin = time_average(1, |_, t| t, &tg);
        assert!((lin[0][0] - 0.5).abs() < 1e-14);
        let tg = TimeGrid::new(std::f64::consts::PI, 4).unwrap();
        let s = time_average(1, |_, t| t.sin(), &tg);
        for (n, v) in s.iter().enumerate() {
            let (a, b) = (tg.time(n), tg.time(n + 1));
            let exact = (a.cos() - b.cos()) / (b - a);
            assert!((v[0] - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_data_stay_zero_and_decay_without_source() {
        let (_, op) = setup(32, 0.5);
        let m = op.size();
        let tg = TimeGrid::new(1.0, 8).unwrap();
        let traj = parabolic_solve(&op, &[], &[vec![0.0; m]], &vec![0.0; m], tg, SolverOptions::default()).unwrap();
        assert!(traj.states.iter().flatten().all(|v| *v == 0.0));
        let ledger = discrete_energy_ledger(&traj, &op);
        assert!(ledger.rows.iter().all(|r| r.lhs == 0.0));

        let u0: Vec<f64> = (0..m).map(|i| ((i as f64) * 0.3).sin() + 1.0).collect();
        for steps in [1, 4, 32] {
            let tg = TimeGrid::new(2.0, steps).unwrap();
            let traj = parabolic_solve(&op, &[], &[], &u0, tg, SolverOptions::default()).unwrap();
            let norms: Vec<f64> = (0..=steps).map(|n| dot(traj.state(n), traj.state(n))).collect();
            assert!(norms.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn large_step_reaches_elliptic_solution() {
        let (_, op) = setup(64, 0.5);
        let m = op.size();
        let f = vec![1.0; m];
        let ell = solve_elliptic(&op, &f, SolverOptions { tol: 1e-12, ..Default::default() }).unwrap();
        let tg = TimeGrid::new(1e6, 1).unwrap();
        let traj = parabolic_solve(&op, &[], &[f.clone()], &vec![0.0; m], tg, SolverOptions { tol: 1e-12, ..Default::default() }).unwrap();
        let err = traj.last().iter().zip(&ell.u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-5, "{err}");

        let tg = TimeGrid::new(2.0, 8).unwrap();
        let traj = parabolic_solve(&op, &[], &[f], &vec![0.0; m], tg, SolverOptions::default()).unwrap();
        let dist: Vec<f64> = (0..=8)
            .map(|n| traj.state(n).iter().zip(&ell.u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .collect();
        assert!(dist.windows(2).all(|w| w[1] < w[0]), "{dist:?}");
    }

    #[test]
    fn interpolants() {
        let (_, op) = setup(16, 0.5);
        let m = op.size();
        let tg = TimeGrid::new(1.0, 4).unwrap();
        let traj = parabolic_solve(&op, &[], &[vec![1.0; m]], &vec![0.0; m], tg, SolverOptions::default()).unwrap();
        assert_eq!(traj.piecewise_constant(0.3), traj.state(2));
        let mid = traj.piecewise_linear(0.375);
        for k in 0..m {
            assert!((mid[k] - 0.5 * (traj.state(1)[k] + traj.state(2)[k])).abs() < 1e-15);
        }
    }
}
