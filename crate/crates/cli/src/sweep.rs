//! Grid refinement sweeps: rerun a scenario at `n, 2n, …` and compare slacks.

use std::collections::BTreeMap;
use std::fs;

use anyhow::{bail, Context, Result};
use nonlocal_core::rearrange::Grid;
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::pipeline::{memory_cap_bytes, run_scenario, storage_estimate, Mode, EXIT_CHECK_FAILED, EXIT_PASS};

/// Positive slacks below this count as zero when forming ratios.
pub const SLACK_FLOOR: f64 = 1e-10;
/// Required ratio between consecutive positive slacks.
pub const DECAY_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, Serialize)]
pub struct SweepLevel {
    pub level: usize,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    pub unknowns: usize,
    /// Largest slack per check at this level.
    pub slacks: BTreeMap<String, f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckDecay {
    /// `max(s⁺_coarse, floor) / max(s⁺_fine, floor)` for each consecutive pair.
    pub ratios: Vec<f64>,
    /// Whether each refinement reduced the positive slack enough.
    pub decays: Vec<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub config_hash: String,
    pub mode: Mode,
    pub levels: Vec<SweepLevel>,
    pub decay: BTreeMap<String, CheckDecay>,
    pub pass: bool,
}

impl SweepReport {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            EXIT_PASS
        } else {
            EXIT_CHECK_FAILED
        }
    }
}

/// `(ratio, decays)` between a coarse and a fine slack.
pub fn decay_ratio(coarse: f64, fine: f64) -> (f64, bool) {
    let (c, f) = (coarse.max(0.0), fine.max(0.0));
    let ratio = c.max(SLACK_FLOOR) / f.max(SLACK_FLOOR);
    (ratio, f <= SLACK_FLOOR || c >= DECAY_FACTOR * f)
}

fn level_config(cfg: &ScenarioConfig, level: usize) -> ScenarioConfig {
    let mut c = cfg.clone();
    c.grid.n = cfg.grid.n << level;
    if let Some(t) = c.time.as_mut() {
        t.steps = cfg.time.as_ref().map_or(1, |t| t.steps) << level;
    }
    c.output = cfg.output.join(format!("level_{level}"));
    c
}

/// Runs `levels` refinements sequentially. The memory guard is applied to
/// every level before anything is assembled.
pub fn refine_sweep(cfg: &ScenarioConfig, levels: usize, mode: Mode) -> Result<SweepReport> {
    if levels < 2 {
        bail!("a sweep needs at least 2 levels, got {levels}");
    }
    let cap = memory_cap_bytes(cfg);
    let mut plans = Vec::with_capacity(levels);
    for level in 0..levels {
        let lc = level_config(cfg, level);
        let grid = Grid::from_domain(lc.dimension, lc.grid.half_width, lc.grid.n, &lc.domain)
            .with_context(|| format!("building the level {level} grid"))?;
        let m = grid.masked_count();
        let bytes = storage_estimate(&lc, m, mode);
        if bytes > cap {
            bail!(
                "refusing sweep: level {level} (n = {}) has {m} unknowns needing {:.1} MiB of pairwise storage, above the cap of {} MiB",
                lc.grid.n,
                bytes as f64 / (1u64 << 20) as f64,
                cfg.memory_cap_mb
            );
        }
        plans.push((lc, m));
    }
    let mut out = Vec::with_capacity(levels);
    for (level, (lc, m)) in plans.into_iter().enumerate() {
        log::info!("sweep level {level}: n = {}", lc.grid.n);
        let run = run_scenario(&lc, mode).with_context(|| format!("sweep level {level}"))?;
        out.push(SweepLevel {
            level,
            n: lc.grid.n,
            steps: lc.time.as_ref().filter(|_| mode != Mode::Elliptic).map(|t| t.steps),
            unknowns: m,
            slacks: run.worst_slacks(),
            pass: run.all_pass(),
        });
    }
    let mut decay: BTreeMap<String, CheckDecay> = BTreeMap::new();
    for name in out[0].slacks.keys() {
        let mut d = CheckDecay {
            ratios: Vec::new(),
            decays: Vec::new(),
        };
        for w in out.windows(2) {
            let (Some(a), Some(b)) = (w[0].slacks.get(name), w[1].slacks.get(name)) else { continue };
            let (r, ok) = decay_ratio(*a, *b);
            d.ratios.push(r);
            d.decays.push(ok);
        }
        decay.insert(name.clone(), d);
    }
    let pass = out.iter().all(|l| l.pass) && decay.values().all(|d| d.decays.iter().all(|x| *x));
    let report = SweepReport {
        config_hash: cfg.hash(),
        mode,
        levels: out,
        decay,
        pass,
    };
    fs::create_dir_all(&cfg.output)?;
    fs::write(
        cfg.output.join("sweep.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    Ok(report)
}
