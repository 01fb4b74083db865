//! Scenario execution: assemble both problems, solve, run checks, write artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use nonlocal_core::assembly::{assemble_with, AssemblyOptions, DiscreteOperator, PackedSym};
use nonlocal_core::kernels::{fractional_normalization, unit_ball_volume, Kernel, Modulation, RadialProfile};
use nonlocal_core::rearrange::{schwarz_rearrangement, Direction, Grid, GridFunction};
use nonlocal_core::solvers::{
    discrete_energy_ledger, parabolic_solve, solve_grid, time_average, EllipticSolution, SolverOptions, TimeGrid,
    Trajectory,
};
use nonlocal_core::verify::{self, CheckReport, CoareaMode, Pairing, Tolerance};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{FieldSpec, Normalization, ScenarioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Elliptic,
    Parabolic,
    /// Elliptic solve, plus the parabolic one when a time block is present.
    Verify,
}

impl Mode {
    fn elliptic(self) -> bool {
        matches!(self, Mode::Elliptic | Mode::Verify)
    }

    fn parabolic(self, cfg: &ScenarioConfig) -> bool {
        match self {
            Mode::Elliptic => false,
            Mode::Parabolic => true,
            Mode::Verify => cfg.time.is_some(),
        }
    }
}

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub reports: Vec<CheckReport>,
    pub skipped: Vec<String>,
    pub output: PathBuf,
}

impl RunOutcome {
    pub fn all_pass(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }

    pub fn exit_code(&self) -> i32 {
        if self.all_pass() {
            EXIT_PASS
        } else {
            EXIT_CHECK_FAILED
        }
    }

    /// Largest slack per check name.
    pub fn worst_slacks(&self) -> BTreeMap<String, f64> {
        let mut out: BTreeMap<String, f64> = BTreeMap::new();
        for r in &self.reports {
            let e = out.entry(r.check.clone()).or_insert(f64::NEG_INFINITY);
            *e = e.max(r.slack);
        }
        out
    }
}

/// Kernel `K` of the original problem and the translation-invariant `J♯`.
pub fn build_kernels(cfg: &ScenarioConfig) -> Result<(Kernel, Kernel)> {
    let k = &cfg.kernel;
    let dim = cfg.dimension;
    let mut profile = match k.kind.as_str() {
        "fractional" => RadialProfile::power(dim, k.s.context("kernel.s")?),
        "sum_of_powers" => RadialProfile::sum_of_powers(dim, k.s_list.as_deref().context("kernel.s_list")?),
        "logarithmic" => RadialProfile::logarithmic(dim, k.epsilon.context("kernel.epsilon")?)?,
        "exponential" => RadialProfile::exp_decay(dim, k.rate.context("kernel.rate")?)?,
        "tabulated" => {
            let path = k.table.as_deref().context("kernel.table")?;
            RadialProfile::from_csv(dim, path).with_context(|| format!("loading {}", path.display()))?
        }
        other => bail!("unknown kernel kind {other}"),
    };
    profile = match &k.normalization {
        Normalization::Named(s) if s == "exact" => {
            let gamma = fractional_normalization(dim, k.s.context("kernel.s")?);
            profile.with_normalization(gamma)
        }
        Normalization::Value(g) => profile.with_normalization(*g),
        Normalization::Named(_) => profile,
    };
    let sharp = Kernel::translation_invariant(profile.rearranged());
    let kernel = match k.modulation.as_str() {
        "radial" => Kernel::new(
            profile,
            Modulation::Radial {
                lambda: k.lambda,
                frequency: k.frequency,
            },
        )?,
        "spatial" => Kernel::new(
            profile,
            Modulation::Spatial {
                lambda: k.lambda,
                frequency: k.frequency,
            },
        )?,
        _ => Kernel::translation_invariant(profile),
    };
    Ok((kernel, sharp))
}

pub fn build_grid(cfg: &ScenarioConfig) -> Result<Grid> {
    Ok(Grid::from_domain(
        cfg.dimension,
        cfg.grid.half_width,
        cfg.grid.n,
        &cfg.domain,
    )?)
}

/// Samples a field spec on the domain cells of `grid`.
pub fn field_on(spec: &FieldSpec, grid: &Grid) -> Result<GridFunction> {
    if spec.kind == "table" {
        let path = spec.path.as_deref().context("table field without a path")?;
        let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let table = GridFunction::read_csv(file).with_context(|| format!("reading {}", path.display()))?;
        let tg = table.grid();
        let hw = grid.half_width();
        if tg.dim() != grid.dim() || tg.n() != grid.n() || (tg.half_width() - hw).abs() > 1e-9 * hw {
            bail!(
                "{} holds a {}-D grid with n = {} and half-width {}, expected {}-D, n = {}, half-width {}",
                path.display(),
                tg.dim(),
                tg.n(),
                tg.half_width(),
                grid.dim(),
                grid.n(),
                hw
            );
        }
        let values = (0..grid.cell_count())
            .map(|i| if grid.is_masked(i) { table.value(i) } else { 0.0 })
            .collect();
        return Ok(GridFunction::new(grid, values)?);
    }
    let dim = grid.dim();
    let center = spec.center.clone().unwrap_or_else(|| vec![0.0; dim]);
    Ok(GridFunction::from_fn(grid, |x| {
        let r = x.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        spec.radial_value(r)
    }))
}

/// Bytes of dense pairwise storage one run needs.
pub fn storage_estimate(cfg: &ScenarioConfig, unknowns: usize, mode: Mode) -> u64 {
    let per_op = PackedSym::bytes_for(unknowns);
    // a time-dependent coefficient needs a coefficient-free copy of each operator
    let copies = if mode.parabolic(cfg) && cfg.coefficient.time.is_some() { 4 } else { 2 };
    per_op * copies
}

pub fn memory_cap_bytes(cfg: &ScenarioConfig) -> u64 {
    cfg.memory_cap_mb.saturating_mul(1 << 20)
}

struct Problem {
    grid: Grid,
    ball: Grid,
    kernel_sharp: Kernel,
    c: GridFunction,
    c_sharp: GridFunction,
    f: GridFunction,
    f_sharp: GridFunction,
    op_u: DiscreteOperator,
    op_v: DiscreteOperator,
}

struct Elliptic {
    u: GridFunction,
    v: GridFunction,
    sol_u: EllipticSolution,
    sol_v: EllipticSolution,
}

struct Parabolic {
    traj_u: Trajectory,
    traj_v: Trajectory,
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Writes `error.json` describing `err` into `dir`.
pub fn write_error(dir: &Path, err: &anyhow::Error) -> Result<()> {
    fs::create_dir_all(dir)?;
    let chain: Vec<String> = err.chain().map(|e| e.to_string()).collect();
    write_json(
        &dir.join("error.json"),
        &json!({ "error": err.to_string(), "causes": chain, "exit_code": EXIT_ERROR }),
    )
}

/// Runs a scenario and writes its artifacts; errors leave `error.json` behind.
pub fn run_scenario(cfg: &ScenarioConfig, mode: Mode) -> Result<RunOutcome> {
    let out = cfg.output.clone();
    let res = run_inner(cfg, mode);
    if let Err(e) = &res {
        if let Err(w) = write_error(&out, e) {
            log::error!("could not write error.json: {w:#}");
        }
    }
    res
}

fn run_inner(cfg: &ScenarioConfig, mode: Mode) -> Result<RunOutcome> {
    if mode == Mode::Parabolic && cfg.time.is_none() {
        bail!("solve-parabolic needs a time block in the scenario");
    }
    let out = &cfg.output;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let hash = cfg.hash();
    let mut diag = serde_json::Map::new();
    diag.insert("config_hash".into(), json!(hash));
    diag.insert("mode".into(), json!(mode));

    let t0 = Instant::now();
    let problem = build_problem(cfg, mode, &mut diag)?;
    let assembly_s = t0.elapsed().as_secs_f64();

    let opts = SolverOptions {
        tol: cfg.tolerances.solver,
        max_iter: cfg.tolerances.max_iter,
    };
    let t1 = Instant::now();
    let elliptic = if mode.elliptic() {
        let (u, sol_u) = solve_grid(&problem.op_u, &problem.f, opts).context("solving the original problem")?;
        let (v, sol_v) =
            solve_grid(&problem.op_v, &problem.f_sharp, opts).context("solving the symmetrized problem")?;
        diag.insert(
            "elliptic".into(),
            json!({
                "iterations_u": sol_u.iterations,
                "residual_u": sol_u.residual,
                "functional_u": sol_u.functional,
                "iterations_v": sol_v.iterations,
                "residual_v": sol_v.residual,
                "functional_v": sol_v.functional,
            }),
        );
        Some(Elliptic { u, v, sol_u, sol_v })
    } else {
        None
    };
    let parabolic = if mode.parabolic(cfg) {
        let p = solve_parabolic(cfg, &problem, opts)?;
        let ledger_u = discrete_energy_ledger(&p.traj_u, &problem.op_u);
        let ledger_v = discrete_energy_ledger(&p.traj_v, &problem.op_v);
        p.traj_u.export(&out.join("trajectory_u"), Some(&ledger_u))?;
        p.traj_v.export(&out.join("trajectory_v"), Some(&ledger_v))?;
        diag.insert(
            "parabolic".into(),
            json!({
                "steps": p.traj_u.time.steps,
                "dt": p.traj_u.time.dt(),
                "iterations_u": p.traj_u.iterations.iter().sum::<usize>(),
                "iterations_v": p.traj_v.iterations.iter().sum::<usize>(),
                "max_residual_u": p.traj_u.residuals.iter().cloned().fold(0.0, f64::max),
                "max_residual_v": p.traj_v.residuals.iter().cloned().fold(0.0, f64::max),
                "energy_constant_u": ledger_u.c_fit,
                "energy_constant_v": ledger_v.c_fit,
            }),
        );
        Some(p)
    } else {
        None
    };
    let solve_s = t1.elapsed().as_secs_f64();

    // u and v: elliptic solutions, or the final parabolic states
    let (u, v) = match (&elliptic, &parabolic) {
        (Some(e), _) => (e.u.clone(), e.v.clone()),
        (None, Some(p)) => (
            p.traj_u.grid_function(p.traj_u.time.steps)?,
            p.traj_v.grid_function(p.traj_v.time.steps)?,
        ),
        (None, None) => unreachable!("every mode solves something"),
    };
    u.save_csv(&out.join("u.csv"))?;
    v.save_csv(&out.join("v.csv"))?;
    let curves = verify::comparison_curves(&u, &v, None)?;
    let max_abs_diff = curves.diff().iter().fold(0.0f64, |m, d| m.max(d.abs()));
    curves.write_csv(fs::File::create(out.join("concentration.csv"))?)?;
    diag.insert("max_abs_concentration_diff".into(), json!(max_abs_diff));

    let t2 = Instant::now();
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    let ctx = CheckContext {
        cfg,
        problem: &problem,
        elliptic: elliptic.as_ref(),
        parabolic: parabolic.as_ref(),
        u: &u,
        v: &v,
        opts,
    };
    let mut failure = None;
    for name in cfg.selected_checks() {
        match ctx.run(&name) {
            Ok(Some(mut r)) => reports.append(&mut r),
            Ok(None) => {
                log::warn!("{name} skipped: not applicable to this command");
                skipped.push(name);
            }
            Err(e) => {
                failure = Some(e.context(format!("running {name}")));
                break;
            }
        }
    }
    let checks_s = t2.elapsed().as_secs_f64();

    let mut lines = String::new();
    for r in &reports {
        lines.push_str(&r.to_jsonl(&hash));
        lines.push('\n');
    }
    fs::write(out.join("checks.jsonl"), lines)?;

    diag.insert("skipped_checks".into(), json!(skipped));
    diag.insert(
        "timings_s".into(),
        json!({ "assembly": assembly_s, "solve": solve_s, "checks": checks_s }),
    );
    diag.insert(
        "checks_passed".into(),
        json!(reports.iter().filter(|r| r.pass).count()),
    );
    diag.insert("checks_total".into(), json!(reports.len()));
    write_json(&out.join("diagnostics.json"), &Value::Object(diag))?;

    if let Some(e) = failure {
        return Err(e);
    }
    for r in reports.iter().filter(|r| !r.pass) {
        log::warn!(
            "{} failed: slack {:.3e} > tolerance {:.3e} at {:?}",
            r.check,
            r.slack,
            r.tolerance,
            r.worst_location
        );
    }
    Ok(RunOutcome {
        reports,
        skipped,
        output: out.clone(),
    })
}

fn build_problem(cfg: &ScenarioConfig, mode: Mode, diag: &mut serde_json::Map<String, Value>) -> Result<Problem> {
    let grid = build_grid(cfg)?;
    let ball = grid.schwarz_grid();
    let m = grid.masked_count();
    let needed = storage_estimate(cfg, m, mode);
    let cap = memory_cap_bytes(cfg);
    if needed > cap {
        bail!(
            "refusing to assemble: {m} unknowns need {:.1} MiB of pairwise storage, above the cap of {} MiB",
            needed as f64 / (1u64 << 20) as f64,
            cfg.memory_cap_mb
        );
    }
    let (kernel, kernel_sharp) = build_kernels(cfg)?;
    let c = field_on(&cfg.coefficient, &grid).context("evaluating the coefficient")?;
    if let Some(i) = c.values().iter().position(|x| *x < 0.0) {
        bail!("coefficient is negative at cell {i}");
    }
    let f = field_on(&cfg.source, &grid).context("evaluating the source")?;
    let c_sharp = schwarz_rearrangement(&c, Direction::Increasing);
    let f_sharp = schwarz_rearrangement(&f.abs(), Direction::Decreasing);
    let aopts = AssemblyOptions {
        max_bytes: Some(cap),
        ..AssemblyOptions::default()
    };
    let op_u = assemble_with(&kernel, &grid, &c, aopts).context("assembling the original operator")?;
    let op_v = assemble_with(&kernel_sharp, &ball, &c_sharp, aopts).context("assembling the symmetrized operator")?;
    diag.insert(
        "grid".into(),
        json!({
            "dimension": grid.dim(),
            "n": grid.n(),
            "h": grid.h(),
            "unknowns": m,
            "measure": grid.measure(),
        }),
    );
    diag.insert("assembly_u".into(), op_u.diagnostics_json());
    diag.insert("assembly_v".into(), op_v.diagnostics_json());
    Ok(Problem {
        grid,
        ball,
        kernel_sharp,
        c,
        c_sharp,
        f,
        f_sharp,
        op_u,
        op_v,
    })
}

/// Per-step averages of a time profile.
fn step_factors(spec: &FieldSpec, tg: &TimeGrid) -> Option<Vec<f64>> {
    spec.time.as_ref()?;
    Some(
        time_average(1, |_, t| spec.time_factor(t), tg)
            .into_iter()
            .map(|v| v[0])
            .collect(),
    )
}

fn scaled(base: &[f64], factors: &Option<Vec<f64>>, abs: bool) -> Vec<Vec<f64>> {
    match factors {
        None => vec![base.to_vec()],
        Some(g) => g
            .iter()
            .map(|&k| {
                let k = if abs { k.abs() } else { k };
                base.iter().map(|x| x * k).collect()
            })
            .collect(),
    }
}

fn solve_parabolic(cfg: &ScenarioConfig, p: &Problem, opts: SolverOptions) -> Result<Parabolic> {
    let time = cfg.time.as_ref().context("missing time block")?;
    let tg = TimeGrid::new(time.final_time, time.steps)?;
    let gc = step_factors(&cfg.coefficient, &tg);
    let gf = step_factors(&cfg.source, &tg);
    if let Some(g) = &gc {
        if let Some(n) = g.iter().position(|x| *x < 0.0) {
            bail!("coefficient time profile is negative on step {}", n + 1);
        }
    }
    let u0 = field_on(&cfg.initial, &p.grid).context("evaluating the initial datum")?;
    let v0 = schwarz_rearrangement(&u0.abs(), Direction::Decreasing);

    let run = |op: &DiscreteOperator, c: &GridFunction, f: &GridFunction, x0: &GridFunction, abs: bool| -> Result<Trajectory> {
        let f_avg = scaled(&op.restrict(f)?, &gf, abs);
        let x0 = op.restrict(x0)?;
        let traj = match &gc {
            // move the coefficient into the per-step data
            Some(_) => {
                let bare = op.with_coefficient(&vec![0.0; op.size()])?;
                let c_avg = scaled(&op.restrict(c)?, &gc, false);
                parabolic_solve(&bare, &c_avg, &f_avg, &x0, tg, opts)?
            }
            None => parabolic_solve(op, &[], &f_avg, &x0, tg, opts)?,
        };
        Ok(traj)
    };
    let traj_u = run(&p.op_u, &p.c, &p.f, &u0, false).context("evolving the original problem")?;
    let traj_v = run(&p.op_v, &p.c_sharp, &p.f_sharp, &v0, true).context("evolving the symmetrized problem")?;
    Ok(Parabolic { traj_u, traj_v })
}

struct CheckContext<'a> {
    cfg: &'a ScenarioConfig,
    problem: &'a Problem,
    elliptic: Option<&'a Elliptic>,
    parabolic: Option<&'a Parabolic>,
    u: &'a GridFunction,
    v: &'a GridFunction,
    opts: SolverOptions,
}

impl CheckContext<'_> {
    fn tol(&self) -> Tolerance {
        Tolerance {
            kappa_tol: self.cfg.tolerances.kappa_tol,
        }
    }

    /// `None` when the check does not apply to what was solved.
    fn run(&self, name: &str) -> Result<Option<Vec<CheckReport>>> {
        let p = self.problem;
        let tol = self.tol();
        let reports = match name {
            "check_comparison" => vec![verify::check_comparison(self.u, self.v, None, tol)?],
            "check_energy_comparison" => {
                let Some(e) = self.elliptic else { return Ok(None) };
                vec![verify::check_energy_comparison(&p.op_u, &e.sol_u.u, &p.op_v, &e.sol_v.u, tol)?]
            }
            "check_parabolic_comparison" => {
                let Some(par) = self.parabolic else { return Ok(None) };
                verify::check_parabolic_comparison(&par.traj_u, &par.traj_v, None, tol)?
            }
            "check_max_principle" => {
                let neg: Vec<f64> = p.op_u.restrict(&p.f)?.iter().map(|x| -x.abs()).collect();
                vec![verify::check_max_principle(&p.op_u, &neg, self.opts)?]
            }
            "check_polya_szego" => vec![verify::check_polya_szego(&p.op_u, &p.op_v, &self.u.abs(), tol)?],
            "check_riesz" => {
                let w = RadialProfile::exp_decay(self.cfg.dimension, 1.0)?;
                let (a, b) = (self.u.abs(), p.f.abs());
                vec![
                    verify::check_riesz(&w, &a, &b, Pairing::Product, tol)?,
                    verify::check_riesz(&w, &a, &b, Pairing::Min, tol)?,
                ]
            }
            "check_coarea" => {
                let a = self.u.abs();
                let t = 0.5 * a.max_abs();
                vec![
                    verify::check_coarea(&p.op_u, &a, CoareaMode::Plain)?,
                    verify::check_coarea(&p.op_u, &a, CoareaMode::Truncated { t })?,
                ]
            }
            "check_level_set_inequality" => {
                let us = schwarz_rearrangement(&self.u.abs(), Direction::Decreasing);
                let top = us.max_abs();
                let levels: Vec<f64> = (1..=8).map(|k| top * k as f64 / 9.0).collect();
                let c = p.op_v.restrict(&p.c_sharp)?;
                let f = p.op_v.restrict(&p.f_sharp)?;
                verify::check_level_set_inequality(&p.op_v, &us, &c, &f, &levels, tol)?
            }
            "check_phi_monotonicity" => {
                let dim = p.grid.dim();
                let r = (p.grid.measure() / unit_ball_volume(dim)).powf(1.0 / dim as f64);
                vec![verify::check_phi_monotonicity(p.kernel_sharp.envelope(), r, 64)?]
            }
            "check_maxmin_lemma" => {
                let us = schwarz_rearrangement(&self.u.abs(), Direction::Decreasing);
                let (a, b, vols, h1, h2) = shell_profiles(&p.ball, &us, self.v);
                vec![verify::check_maxmin_lemma(&a, &b, &vols, &h1, &h2)?]
            }
            other => return Err(anyhow!("unknown check {other}")),
        };
        Ok(Some(reports))
    }
}

/// Shell averages of two functions on a discrete ball, with shell volumes and
/// the weights `h₁ = r`, `h₂ = 1/(1+r)` at each shell's outer radius.
#[allow(clippy::type_complexity)]
fn shell_profiles(ball: &Grid, a: &GridFunction, b: &GridFunction) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let h = ball.h();
    let dim = ball.dim();
    let mut shells: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for &i in ball.masked_indices() {
        let x = ball.center(i);
        let r = x[..dim].iter().map(|t| t * t).sum::<f64>().sqrt();
        let e = shells.entry((r / h).floor() as usize).or_insert((0.0, 0.0, 0));
        e.0 += a.value(i);
        e.1 += b.value(i);
        e.2 += 1;
    }
    let mut out = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (k, (sa, sb, count)) in shells {
        let outer = (k + 1) as f64 * h;
        out.0.push(sa / count as f64);
        out.1.push(sb / count as f64);
        out.2.push(count as f64 * ball.cell_volume());
        out.3.push(outer);
        out.4.push(1.0 / (1.0 + outer));
    }
    out
}

/// Decreasing rearrangement of a grid CSV, written in the same layout.
pub fn rearrange_file(input: &Path, output: &Path, direction: Direction) -> Result<()> {
    let f = GridFunction::read_csv(fs::File::open(input).with_context(|| format!("opening {}", input.display()))?)
        .with_context(|| format!("reading {}", input.display()))?;
    let src = match direction {
        Direction::Decreasing => f.abs(),
        Direction::Increasing => f,
    };
    let r = schwarz_rearrangement(&src, direction);
    r.save_csv(output).with_context(|| format!("writing {}", output.display()))?;
    Ok(())
}
