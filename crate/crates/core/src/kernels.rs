//! Symmetric nonlocal kernels `K(x, y) = a(x, y) * J(|x - y|)`.
//!
//! `J` is a [`RadialProfile`], the radial lower envelope of the kernel. The
//! modulation `a` is symmetric and bounded in `[1, Λ]`, so `K >= J` holds
//! everywhere and `Λ` is the ellipticity ratio of a rough kernel.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::quad::{self, QuadConfig, QuadError};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("kernel is singular at x = y")]
    Singular,
    #[error("Lévy integrability violated: {0}")]
    AssumptionViolated(String),
    #[error("exponential weight has infinite mass for t = {0}")]
    InfiniteMass(f64),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("dimension mismatch: kernel is {kernel}-D, points are {points}-D")]
    DimensionMismatch { kernel: usize, points: usize },
    #[error("cannot read profile table: {0}")]
    Table(String),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

/// Surface measure of the unit sphere `S^{N-1}`.
pub fn unit_sphere_area(dim: usize) -> f64 {
    let n = dim as f64;
    2.0 * PI.powf(0.5 * n) / gamma(0.5 * n)
}

/// Volume of the unit ball in `R^N`.
pub fn unit_ball_volume(dim: usize) -> f64 {
    let n = dim as f64;
    PI.powf(0.5 * n) / gamma(0.5 * n + 1.0)
}

/// Normalization making `γ |z|^{-N-2s}` the kernel of `(-Δ)^s`.
pub fn fractional_normalization(dim: usize, s: f64) -> f64 {
    let n = dim as f64;
    s * 4f64.powf(s) * gamma(0.5 * n + s) / (PI.powf(0.5 * n) * gamma(1.0 - s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileKind {
    /// `r^{-(N+2s)}`
    Power { s: f64 },
    /// `Σ_i r^{-(N+2 s_i)}`
    SumOfPowers { s: Vec<f64> },
    /// `log^ε(1+r) / r^{N+2}`
    Logarithmic { epsilon: f64 },
    /// `e^{-λ r}`
    ExpDecay { rate: f64 },
    /// Piecewise constant on shells `(r_{k-1}, r_k]`, with `r_{-1} = 0` and
    /// zero beyond the last radius.
    Tabulated { radii: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    dim: usize,
    kind: ProfileKind,
    gamma: f64,
}

impl RadialProfile {
    pub fn power(dim: usize, s: f64) -> Self {
        Self::analytic(dim, ProfileKind::Power { s })
    }

    pub fn sum_of_powers(dim: usize, s: &[f64]) -> Self {
        Self::analytic(dim, ProfileKind::SumOfPowers { s: s.to_vec() })
    }

    /// Logarithmic profile; `epsilon` must lie in `(0, N+2]` for the profile
    /// to be radially decreasing.
    pub fn logarithmic(dim: usize, epsilon: f64) -> Result<Self, KernelError> {
        if !(epsilon > 0.0 && epsilon <= dim as f64 + 2.0) {
            return Err(KernelError::InvalidProfile(format!(
                "logarithmic exponent must lie in (0, {}], got {epsilon}",
                dim + 2
            )));
        }
        Ok(Self::analytic(dim, ProfileKind::Logarithmic { epsilon }))
    }

    pub fn exp_decay(dim: usize, rate: f64) -> Result<Self, KernelError> {
        if !(rate > 0.0) {
            return Err(KernelError::InvalidProfile(format!("decay rate must be positive, got {rate}")));
        }
        Ok(Self::analytic(dim, ProfileKind::ExpDecay { rate }))
    }

    pub fn tabulated(dim: usize, radii: Vec<f64>, values: Vec<f64>) -> Result<Self, KernelError> {
        if radii.is_empty() || radii.len() != values.len() {
            return Err(KernelError::InvalidProfile(
                "table needs matching, non-empty radius and value columns".into(),
            ));
        }
        if radii[0] <= 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(KernelError::InvalidProfile("table radii must be positive and strictly increasing".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(KernelError::InvalidProfile("table values must be finite and nonnegative".into()));
        }
        Ok(Self::analytic(dim, ProfileKind::Tabulated { radii, values }))
    }

    /// Loads a two-column `radius,value` CSV; a header row is optional.
    pub fn from_csv(dim: usize, path: &Path) -> Result<Self, KernelError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| KernelError::Table(e.to_string()))?;
        let (mut radii, mut values) = (Vec::new(), Vec::new());
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| KernelError::Table(e.to_string()))?;
            if record.len() < 2 {
                return Err(KernelError::Table(format!("row {row}: expected two columns")));
            }
            match (record[0].parse::<f64>(), record[1].parse::<f64>()) {
                (Ok(r), Ok(v)) => {
                    radii.push(r);
                    values.push(v);
                }
                _ if row == 0 => continue,
                _ => return Err(KernelError::Table(format!("row {row}: not a number"))),
            }
        }
        Self::tabulated(dim, radii, values)
    }

    fn analytic(dim: usize, kind: ProfileKind) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        Self { dim, kind, gamma: 1.0 }
    }

    pub fn with_normalization(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &ProfileKind {
        &self.kind
    }

    pub fn normalization(&self) -> f64 {
        self.gamma
    }

    /// Profile value `j(r)` for `r > 0`.
    pub fn value(&self, r: f64) -> f64 {
        let n = self.dim as f64;
        let raw = match &self.kind {
            ProfileKind::Power { s } => r.powf(-(n + 2.0 * s)),
            ProfileKind::SumOfPowers { s } => s.iter().map(|si| r.powf(-(n + 2.0 * si))).sum(),
            ProfileKind::Logarithmic { epsilon } => r.ln_1p().powf(*epsilon) / r.powf(n + 2.0),
            ProfileKind::ExpDecay { rate } => (-rate * r).exp(),
            ProfileKind::Tabulated { radii, values } => {
                let k = radii.partition_point(|&rk| rk < r);
                values.get(k).copied().unwrap_or(0.0)
            }
        };
        self.gamma * raw
    }

    /// Whether the profile is non-increasing in the radius.
    pub fn is_radially_decreasing(&self) -> bool {
        match &self.kind {
            ProfileKind::Tabulated { values, .. } => values.windows(2).all(|w| w[1] <= w[0]),
            ProfileKind::Power { s } => self.dim as f64 + 2.0 * s >= 0.0,
            ProfileKind::SumOfPowers { s } => s.iter().all(|si| self.dim as f64 + 2.0 * si >= 0.0),
            _ => true,
        }
    }

    /// Break points where the profile is not smooth.
    pub fn breakpoints(&self) -> &[f64] {
        match &self.kind {
            ProfileKind::Tabulated { radii, .. } => radii,
            _ => &[],
        }
    }

    /// `∫_a^∞ j(r) r^p dr` for `a > 0`.
    pub fn tail_moment(&self, a: f64, p: i32) -> Result<f64, KernelError> {
        let n = self.dim as f64;
        let power_tail = |s: f64| -> Result<f64, KernelError> {
            let e = p as f64 - n - 2.0 * s;
            if e >= -1.0 {
                return Err(KernelError::AssumptionViolated(format!(
                    "tail of r^{e} is not integrable"
                )));
            }
            Ok(a.powf(e + 1.0) / (-e - 1.0))
        };
        let raw = match &self.kind {
            ProfileKind::Power { s } => power_tail(*s)?,
            ProfileKind::SumOfPowers { s } => {
                let mut acc = 0.0;
                for si in s {
                    acc += power_tail(*si)?;
                }
                acc
            }
            ProfileKind::ExpDecay { rate } => {
                // ∫_a^∞ e^{-λr} r^p dr = e^{-λa} Σ_k p!/k! a^k / λ^{p-k+1}
                assert!(p >= 0, "exponential tail moment needs p >= 0");
                let mut acc = 0.0;
                let mut coeff = 1.0; // p!/k!
                for k in (0..=p).rev() {
                    acc += coeff * a.powi(k) / rate.powi(p - k + 1);
                    coeff *= k as f64;
                }
                (-rate * a).exp() * acc
            }
            ProfileKind::Tabulated { radii, values } => {
                let pp = p as f64 + 1.0;
                let mut lo = 0.0f64;
                let mut acc = 0.0;
                for (r, v) in radii.iter().zip(values) {
                    let start = lo.max(a);
                    if *r > start {
                        acc += v * (r.powf(pp) - start.powf(pp)) / pp;
                    }
                    lo = *r;
                }
                acc
            }
            ProfileKind::Logarithmic { .. } => {
                let unit = self.clone().with_normalization(1.0);
                quad::integrate_to_infinity(|r| unit.value(r) * r.powi(p), a, QuadConfig::default().with_rel_tol(1e-12))?
            }
        };
        Ok(self.gamma * raw)
    }

    /// Radial tail `T(a) = ∫_a^∞ j(r) r^{N-1} dr`, the outward mass of `J`
    /// per unit solid angle beyond distance `a`.
    pub fn radial_tail(&self, a: f64) -> Result<f64, KernelError> {
        self.tail_moment(a, self.dim as i32 - 1)
    }

    /// `∫_a^b j(r) r^{N-1} dr` for `0 < a < b`.
    pub fn radial_mass_between(&self, a: f64, b: f64) -> Result<f64, KernelError> {
        Ok(self.radial_tail(a)? - self.radial_tail(b)?)
    }

    /// Schwarz rearrangement `J♯` of the profile.
    ///
    /// Analytic kinds are already radially decreasing and come back unchanged.
    /// Tabulated shells are sorted by value and re-stacked from the origin so
    /// that every value keeps the volume of the shell it came from.
    pub fn rearranged(&self) -> RadialProfile {
        match &self.kind {
            ProfileKind::Tabulated { radii, values } => {
                let omega = unit_ball_volume(self.dim);
                let n = self.dim as i32;
                let mut shells: Vec<(f64, f64)> = Vec::with_capacity(radii.len());
                let mut lo = 0.0f64;
                for (r, v) in radii.iter().zip(values) {
                    shells.push((*v, omega * (r.powi(n) - lo.powi(n))));
                    lo = *r;
                }
                shells.sort_by(|x, y| y.0.total_cmp(&x.0));
                let mut cumulative = 0.0;
                let mut new_radii = Vec::with_capacity(shells.len());
                let mut new_values = Vec::with_capacity(shells.len());
                for (k, (v, vol)) in shells.iter().enumerate() {
                    cumulative += vol;
                    let mut r = (cumulative / omega).powf(1.0 / self.dim as f64);
                    // keep the stack strictly increasing even if rounding collapses a shell
                    if let Some(prev) = new_radii.last() {
                        if r <= *prev {
                            r = f64::from_bits(prev.to_bits() + 1);
                        }
                    }
                    if k + 1 == shells.len() && shells.len() == radii.len() {
                        // total volume is preserved; pin the outer radius to the original
                        r = r.max(*radii.last().unwrap_or(&r));
                    }
                    new_radii.push(r);
                    new_values.push(*v);
                }
                RadialProfile {
                    dim: self.dim,
                    kind: ProfileKind::Tabulated {
                        radii: new_radii,
                        values: new_values,
                    },
                    gamma: self.gamma,
                }
            }
            _ => self.clone(),
        }
    }

    /// `∫_{R^N} J(|y|) min(|y|², 1) dy`; finite iff the Lévy condition holds.
    pub fn levy_integral(&self) -> Result<f64, KernelError> {
        let n = self.dim as i32;
        let cfg = QuadConfig::default();
        let violated = |e: QuadError| KernelError::AssumptionViolated(format!("Lévy integral diverges ({e})"));
        let (head, tail) = match &self.kind {
            ProfileKind::Tabulated { radii, .. } => {
                let mut inner = vec![0.0];
                inner.extend(radii.iter().copied().filter(|r| *r < 1.0));
                inner.push(1.0);
                let head = quad::integrate_pieces(|r| self.value(r) * r.powi(n + 1), &inner, cfg).map_err(violated)?;
                let mut outer = vec![1.0];
                outer.extend(radii.iter().copied().filter(|r| *r > 1.0));
                let tail = quad::integrate_pieces(|r| self.value(r) * r.powi(n - 1), &outer, cfg).map_err(violated)?;
                (head, tail)
            }
            _ => {
                let head = quad::integrate_singular(|r| self.value(r) * r.powi(n + 1), 0.0, 1.0, cfg).map_err(violated)?;
                let tail = quad::integrate_to_infinity(|r| self.value(r) * r.powi(n - 1), 1.0, cfg).map_err(violated)?;
                (head, tail)
            }
        };
        let total = unit_sphere_area(self.dim) * (head + tail);
        if !total.is_finite() {
            return Err(KernelError::AssumptionViolated("Lévy integral is not finite".into()));
        }
        Ok(total)
    }

    /// `∫_{R^N} J(|y|) dy`, finite only for integrable profiles.
    pub fn total_mass(&self) -> Result<f64, KernelError> {
        let n = self.dim as i32;
        let cfg = QuadConfig::default();
        let diverges = |e: QuadError| KernelError::AssumptionViolated(format!("profile is not integrable ({e})"));
        let body = match &self.kind {
            ProfileKind::Tabulated { .. } => self.tail_moment(f64::MIN_POSITIVE, n - 1)? / self.gamma,
            _ => {
                let head = quad::integrate_singular(|r| self.value(r) * r.powi(n - 1), 0.0, 1.0, cfg).map_err(diverges)?;
                let tail = quad::integrate_to_infinity(|r| self.value(r) * r.powi(n - 1), 1.0, cfg).map_err(diverges)?;
                (head + tail) / self.gamma
            }
        };
        Ok(unit_sphere_area(self.dim) * self.gamma * body)
    }

    /// Mass of the exponential weight `e^{-t / J♯}` inside `B_R` together with
    /// a certified bound on the mass outside.
    pub fn exp_weight_mass(&self, t: f64, radius: f64) -> Result<ExpWeightMass, KernelError> {
        if !(t > 0.0) {
            return Err(KernelError::InfiniteMass(t));
        }
        let sharp = self.rearranged();
        let n = self.dim as i32;
        let integrand = |r: f64| {
            let j = sharp.value(r);
            if j > 0.0 {
                (-t / j).exp() * r.powi(n - 1)
            } else {
                0.0
            }
        };
        let mut breaks = vec![0.0];
        breaks.extend(sharp.breakpoints().iter().copied().filter(|r| *r < radius));
        breaks.push(radius);
        let inner = unit_sphere_area(self.dim) * quad::integrate_pieces(integrand, &breaks, QuadConfig::default())?;
        // j(ρ) (ρ^N - R^N)/N <= ∫_R^ρ j r^{N-1} dr <= T, so the weight decays
        // like exp(-t (ρ^N - R^N) / (N T)) and integrates to |S^{N-1}| T / t.
        let tail_mass = sharp.radial_tail(radius)?;
        let tail_bound = unit_sphere_area(self.dim) * tail_mass / t;
        Ok(ExpWeightMass { inner, tail_bound })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpWeightMass {
    /// `∫_{|y|<R} e^{-t/J♯(|y|)} dy`
    pub inner: f64,
    /// Upper bound on the same integral over `|y| >= R`.
    pub tail_bound: f64,
}

impl ExpWeightMass {
    pub fn upper(&self) -> f64 {
        self.inner + self.tail_bound
    }
}

/// Symmetric multiplier `a(x, y) ∈ [1, Λ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Modulation {
    None,
    /// `1 + (Λ-1) sin²(ω |x-y|)`: translation invariant, comparable to `J`.
    Radial { lambda: f64, frequency: f64 },
    /// `1 + (Λ-1) sin²(ω (|x|² + |y|²))`: position dependent.
    Spatial { lambda: f64, frequency: f64 },
}

impl Modulation {
    pub fn upper_bound(&self) -> f64 {
        match self {
            Modulation::None => 1.0,
            Modulation::Radial { lambda, .. } | Modulation::Spatial { lambda, .. } => *lambda,
        }
    }

    fn factor(&self, x: &[f64], y: &[f64], dist: f64) -> f64 {
        match self {
            Modulation::None => 1.0,
            Modulation::Radial { lambda, frequency } => 1.0 + (lambda - 1.0) * (frequency * dist).sin().powi(2),
            Modulation::Spatial { lambda, frequency } => {
                let sx: f64 = x.iter().map(|v| v * v).sum();
                let sy: f64 = y.iter().map(|v| v * v).sum();
                1.0 + (lambda - 1.0) * (frequency * (sx + sy)).sin().powi(2)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    envelope: RadialProfile,
    modulation: Modulation,
}

impl Kernel {
    pub fn new(envelope: RadialProfile, modulation: Modulation) -> Result<Self, KernelError> {
        let lambda = modulation.upper_bound();
        if !(lambda >= 1.0 && lambda.is_finite()) {
            return Err(KernelError::InvalidProfile(format!("modulation bound Λ must be >= 1, got {lambda}")));
        }
        Ok(Self { envelope, modulation })
    }

    /// Translation-invariant kernel `K(x, y) = J(|x - y|)`.
    pub fn translation_invariant(envelope: RadialProfile) -> Self {
        Self {
            envelope,
            modulation: Modulation::None,
        }
    }

    pub fn dim(&self) -> usize {
        self.envelope.dim
    }

    pub fn envelope(&self) -> &RadialProfile {
        &self.envelope
    }

    pub fn modulation(&self) -> &Modulation {
        &self.modulation
    }

    /// `Λ`, the upper bound of the modulation.
    pub fn lambda(&self) -> f64 {
        self.modulation.upper_bound()
    }

    pub fn is_translation_invariant(&self) -> bool {
        !matches!(self.modulation, Modulation::Spatial { .. })
    }

    /// `K(x, y)`; errors on the diagonal.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
        if x.len() != self.dim() || y.len() != self.dim() {
            return Err(KernelError::DimensionMismatch {
                kernel: self.dim(),
                points: x.len().max(y.len()),
            });
        }
        let d = distance(x, y);
        if d == 0.0 {
            return Err(KernelError::Singular);
        }
        Ok(self.value_at(x, y, d))
    }

    /// Kernel value when the caller already knows `d = |x - y| > 0`.
    pub(crate) fn value_at(&self, x: &[f64], y: &[f64], d: f64) -> f64 {
        self.modulation.factor(x, y, d) * self.envelope.value(d)
    }
}

pub(crate) fn distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}
