//! Configuration, orchestration of the solvers, convergence studies and
//! JSON/CSV output for the `kamgrid` command line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::coupling::{estimate_coupling_gap, estimate_discounted_cost, SimConfig, Strategy};
use crate::ctmc::StationaryPolicy;
use crate::discounted::{solve_discounted, SolverConfig};
use crate::error::{KamError, Result};
use crate::lagrangian::{golden_max, AxisKinetic, LagrangianSpec, Potential, TabulatedPotential, TrigTerm};
use crate::lattice::{GridFunction, Lattice, NodeIndex, TorusPoint};
use crate::mather::{action, holonomic_residual, lp_mather_oracle, mather_from_policy, VelocityGrid, MAX_LP_VARIABLES};
use crate::problem::LatticeProblem;
use crate::weak_kam::{
    mcshane_default, relative_value_iteration_anchored, solve_weak_kam_anchored, ContinuationSchedule,
    WeakKamSolution,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    pub resolution: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
    /// Whitespace- or comma-separated values, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagrangianConfig {
    /// One entry per axis, or a single entry for all axes. Empty means
    /// `|v|^2 / 2`.
    #[serde(default)]
    pub kinetic: Vec<AxisKinetic>,
    #[serde(default)]
    pub potential: Vec<TrigTerm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential_table: Option<TableConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscountedSection {
    pub lambda: f64,
}

impl Default for DiscountedSection {
    fn default() -> Self {
        DiscountedSection { lambda: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeakKamSection {
    /// Anchor node index; the origin when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor: Option<Vec<usize>>,
    /// Also run relative value iteration and report the agreement.
    pub cross_check: bool,
    /// Per-axis samples of the Lipschitz extension written to CSV; 0 skips it.
    pub extension_samples: usize,
}

impl Default for WeakKamSection {
    fn default() -> Self {
        WeakKamSection {
            anchor: None,
            cross_check: true,
            extension_samples: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatherSection {
    pub velocity_step: f64,
    pub velocity_max: f64,
    /// Add each node's optimal velocity to its LP velocity set.
    pub augment_policy: bool,
    pub random_tests: usize,
    pub lp: bool,
}

impl Default for MatherSection {
    fn default() -> Self {
        MatherSection {
            velocity_step: 0.25,
            velocity_max: 3.0,
            augment_policy: true,
            random_tests: 20,
            lp: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingPolicy {
    /// `coupling.velocity` at every node; rest when unset.
    Constant,
    /// Optimal policy of the weak KAM problem.
    WeakKam,
    /// Optimal policy of the discounted problem at `discounted.lambda`.
    Discounted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingSection {
    pub policy: CouplingPolicy,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub velocity: Vec<f64>,
    /// Start of the deterministic motion; the chain start when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub motion_start: Option<Vec<f64>>,
    /// Chain start node; the origin when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain_start: Option<Vec<usize>>,
}

impl Default for CouplingSection {
    fn default() -> Self {
        CouplingSection {
            policy: CouplingPolicy::Constant,
            velocity: Vec::new(),
            motion_start: None,
            chain_start: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    /// `|Hbar_N - Hbar|` over the resolution sweep.
    EffectiveHamiltonian,
    /// Discounted solutions over the sweep against the finest resolution.
    Discounted,
    /// `|-lambda phi(anchor) - Hbar_N|` over `study.lambdas` at fixed N.
    DiscountSweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub kind: StudyKind,
    pub lambda: f64,
    pub reference_resolution: usize,
    pub lambdas: Vec<f64>,
    /// `C` in the bound column `C N^{-1/2}` of the effective Hamiltonian study.
    pub rate_constant: f64,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            kind: StudyKind::EffectiveHamiltonian,
            lambda: 0.5,
            reference_resolution: 512,
            lambdas: vec![0.5, 0.25, 0.125, 0.0625, 0.03125],
            rate_constant: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<usize>,
    pub lagrangian: LagrangianConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub schedule: ContinuationSchedule,
    #[serde(default)]
    pub discounted: DiscountedSection,
    #[serde(default)]
    pub weak_kam: WeakKamSection,
    #[serde(default)]
    pub mather: MatherSection,
    #[serde(default)]
    pub simulation: SimConfig,
    #[serde(default)]
    pub coupling: CouplingSection,
    #[serde(default)]
    pub study: StudySection,
}

impl PartialEq for SolverConfig {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_value(self).ok() == serde_json::to_value(other).ok()
    }
}

impl PartialEq for ContinuationSchedule {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_value(self).ok() == serde_json::to_value(other).ok()
    }
}

impl PartialEq for SimConfig {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_value(self).ok() == serde_json::to_value(other).ok()
    }
}

impl ProblemConfig {
    /// Parses and validates TOML. Parse errors carry line and field.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ProblemConfig = toml::from_str(text).map_err(|e| KamError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| KamError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| KamError::Internal(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dimension;
        if d == 0 {
            return Err(KamError::config("dimension must be >= 1"));
        }
        if self.resolution.is_none() && self.sweep.is_empty() {
            return Err(KamError::config("set resolution or sweep"));
        }
        if let Some(n) = self.resolution {
            if n < 2 {
                return Err(KamError::config(format!("resolution must be >= 2, got {n}")));
            }
        }
        if let Some(&bad) = self.sweep.iter().find(|&&n| n < 2) {
            return Err(KamError::config(format!("sweep entries must be >= 2, got {bad}")));
        }
        let k = self.lagrangian.kinetic.len();
        if k != 0 && k != 1 && k != d {
            return Err(KamError::config(format!(
                "lagrangian.kinetic needs 1 or {d} entries, got {k}"
            )));
        }
        if self.lagrangian.potential_table.is_some() && !self.lagrangian.potential.is_empty() {
            return Err(KamError::config("set either lagrangian.potential or lagrangian.potential_table"));
        }
        if let Some(t) = &self.lagrangian.potential_table {
            if t.values.is_empty() == t.path.is_none() {
                return Err(KamError::config("potential_table needs exactly one of values or path"));
            }
        }
        if let Some(bad) = self.lagrangian.potential.iter().find(|t| t.k.len() != d) {
            return Err(KamError::config(format!(
                "lagrangian.potential wave vector {:?} does not have {d} entries",
                bad.k
            )));
        }
        // exponent and weight checks
        LagrangianSpec::power_law(self.kinetic(), Potential::zero())?;
        self.solver.validate()?;
        self.schedule.validate()?;
        self.simulation.validate()?;
        if !(self.discounted.lambda > 0.0) {
            return Err(KamError::config("discounted.lambda must be > 0"));
        }
        if let Some(a) = &self.weak_kam.anchor {
            self.check_node("weak_kam.anchor", a)?;
        }
        let m = &self.mather;
        if !(m.velocity_step > 0.0) || !(m.velocity_max >= 0.0) || m.random_tests == 0 {
            return Err(KamError::config(
                "mather needs velocity_step > 0, velocity_max >= 0 and random_tests >= 1",
            ));
        }
        let c = &self.coupling;
        if !c.velocity.is_empty() && c.velocity.len() != d {
            return Err(KamError::config(format!("coupling.velocity needs {d} entries")));
        }
        if let Some(x) = &c.motion_start {
            if x.len() != d || x.iter().any(|v| !v.is_finite()) {
                return Err(KamError::config("coupling.motion_start needs finite coordinates per axis"));
            }
        }
        if let Some(x) = &c.chain_start {
            self.check_node("coupling.chain_start", x)?;
        }
        let s = &self.study;
        if !(s.lambda > 0.0) || s.lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err(KamError::config("study lambdas must be > 0"));
        }
        if s.reference_resolution < 2 || !(s.rate_constant > 0.0) {
            return Err(KamError::config("study needs reference_resolution >= 2 and rate_constant > 0"));
        }
        Ok(())
    }

    fn check_node(&self, field: &str, idx: &[usize]) -> Result<()> {
        if idx.len() != self.dimension {
            return Err(KamError::config(format!("{field} needs {} entries", self.dimension)));
        }
        let smallest = self.resolutions().into_iter().min().unwrap_or(2);
        if idx.iter().any(|&k| k >= smallest) {
            return Err(KamError::config(format!("{field} lies outside an N={smallest} lattice")));
        }
        Ok(())
    }

    fn resolutions(&self) -> Vec<usize> {
        self.resolution.into_iter().chain(self.sweep.iter().copied()).collect()
    }

    /// The resolution for single-lattice subcommands.
    pub fn main_resolution(&self) -> usize {
        self.resolution.or(self.sweep.first().copied()).unwrap_or(2)
    }

    fn kinetic(&self) -> Vec<AxisKinetic> {
        match self.lagrangian.kinetic.as_slice() {
            [] => vec![AxisKinetic::QUADRATIC; self.dimension],
            [one] => vec![*one; self.dimension],
            many => many.to_vec(),
        }
    }

    /// The Lagrangian; table paths resolve against `base`.
    pub fn lagrangian_spec(&self, base: &Path) -> Result<LagrangianSpec> {
        let potential = match &self.lagrangian.potential_table {
            Some(t) => {
                let values = match &t.path {
                    Some(p) => read_table(&base.join(p))?,
                    None => t.values.clone(),
                };
                Potential::Tabulated(TabulatedPotential::new(self.dimension, t.resolution, values)?)
            }
            None => Potential::Trig(self.lagrangian.potential.clone()),
        };
        LagrangianSpec::power_law(self.kinetic(), potential)
    }

    pub fn problem(&self, n: usize, base: &Path) -> Result<LatticeProblem> {
        LatticeProblem::new(Lattice::new(self.dimension, n)?, self.lagrangian_spec(base)?)
    }
}

fn read_table(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| KamError::Config(format!("cannot read potential table {}: {e}", path.display())))?;
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| KamError::Config(format!("bad number {s:?} in {}", path.display())))
        })
        .collect()
}

/// `-min P` for a power-law Lagrangian: the minimum over a fine grid,
/// polished by coordinate-wise golden-section search.
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveReference {
    pub value: f64,
    /// `-min P` over the grid alone, before refinement.
    pub grid_value: f64,
    pub grid_per_axis: usize,
    pub argmin: Vec<f64>,
}

/// Grid points per axis of the reference minimization.
pub fn reference_grid(dim: usize) -> usize {
    match dim {
        1 => 10_000,
        2 => 1000,
        3 => 100,
        d => (1e6f64.powf(1.0 / d as f64).floor() as usize).max(10),
    }
}

/// Effective Hamiltonian of a Lagrangian `sum kinetic + P(x)` with nonnegative
/// kinetic part vanishing at rest: resting at a minimum of `P` is optimal, so
/// `Hbar = -min P`.
pub fn effective_h_reference(spec: &LagrangianSpec) -> Result<EffectiveReference> {
    if !spec.is_separable() {
        return Err(KamError::argument(
            "no analytic effective Hamiltonian for a black-box Lagrangian",
        ));
    }
    let d = spec.dim();
    let m = reference_grid(d);
    let p = spec.potential();
    let total = m.pow(d as u32);
    let mut best = (f64::INFINITY, vec![0.0; d]);
    let mut x = vec![0.0; d];
    for flat in 0..total {
        let mut r = flat;
        for a in (0..d).rev() {
            x[a] = (r % m) as f64 / m as f64;
            r /= m;
        }
        let v = p.eval(&x);
        if v < best.0 {
            best = (v, x.clone());
        }
    }
    let h = 1.0 / m as f64;
    let mut arg = best.1.clone();
    for _ in 0..4 {
        for a in 0..d {
            let centre = arg[a];
            let (t, _) = golden_max(
                |s| {
                    let mut y = arg.clone();
                    y[a] = s;
                    -p.eval(&y)
                },
                centre - h,
                centre + h,
            );
            arg[a] = t;
        }
    }
    let polished = p.eval(&arg);
    let value = polished.min(best.0);
    if polished > best.0 {
        arg = best.1;
    }
    Ok(EffectiveReference {
        value: -value,
        grid_value: -best.0,
        grid_per_axis: m,
        argmin: TorusPoint::new(&arg).coords().to_vec(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyPoint {
    pub sweep_var: f64,
    pub value: f64,
    pub error: f64,
    pub bound: f64,
    /// Slope of the fit through this and all earlier points.
    pub slope_partial: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceStudy {
    /// `"N"` or `"lambda"`.
    pub variable: &'static str,
    pub reference: Option<f64>,
    pub reference_kind: String,
    pub points: Vec<StudyPoint>,
    pub slope: Option<f64>,
    /// Smallest `C` with `error <= C * rate` at every point.
    pub fitted_constant: f64,
    /// Some error vanished, so no log-log fit exists.
    pub degenerate: bool,
    /// Errors decrease along the sweep.
    pub monotone: bool,
    pub note: String,
}

/// Least-squares slope of `ln y` against `ln x`. Needs at least three points
/// and positive data.
pub fn fit_loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(KamError::argument("slope fit needs paired data"));
    }
    if x.len() < 3 {
        return Err(KamError::config(format!(
            "a slope fit needs at least 3 points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(KamError::argument("slope fit needs positive data"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(KamError::argument("slope fit needs distinct sweep values"));
    }
    Ok(sxy / sxx)
}

/// Fills slopes, bounds and flags from `(sweep_var, value, error)` triples;
/// `rate(x)` is the shape of the bound.
fn assemble(
    variable: &'static str,
    reference: Option<f64>,
    reference_kind: String,
    raw: Vec<(f64, f64, f64)>,
    rate: impl Fn(f64) -> f64,
    fixed_constant: Option<f64>,
    note: String,
) -> Result<ConvergenceStudy> {
    if raw.len() < 3 {
        return Err(KamError::config(format!(
            "a convergence study needs at least 3 sweep points, got {}",
            raw.len()
        )));
    }
    let degenerate = raw.iter().any(|p| !(p.2 > 0.0));
    let fitted_constant = raw.iter().map(|p| p.2 / rate(p.0)).fold(0.0, f64::max);
    let constant = fixed_constant.unwrap_or(fitted_constant);
    let xs: Vec<f64> = raw.iter().map(|p| p.0).collect();
    let es: Vec<f64> = raw.iter().map(|p| p.2).collect();
    let points = raw
        .iter()
        .enumerate()
        .map(|(k, &(x, value, error))| StudyPoint {
            sweep_var: x,
            value,
            error,
            bound: constant * rate(x),
            slope_partial: if !degenerate && k >= 2 {
                fit_loglog_slope(&xs[..=k], &es[..=k]).ok()
            } else {
                None
            },
        })
        .collect();
    let slope = if degenerate { None } else { Some(fit_loglog_slope(&xs, &es)?) };
    let monotone = es.windows(2).all(|w| w[1] <= w[0]);
    Ok(ConvergenceStudy {
        variable,
        reference,
        reference_kind,
        points,
        slope,
        fitted_constant,
        degenerate,
        monotone,
        note,
    })
}

fn weak_kam_at(
    problem: &LatticeProblem,
    schedule: &ContinuationSchedule,
    cfg: &SolverConfig,
    anchor: usize,
) -> Result<WeakKamSolution> {
    solve_weak_kam_anchored(problem, schedule, cfg, anchor)
}

/// `|Hbar_N - Hbar|` over `sweep`, against `-min P` when available and the
/// weak KAM value at `reference_resolution` otherwise.
pub fn effective_h_study(
    spec: &LagrangianSpec,
    sweep: &[usize],
    reference_resolution: usize,
    rate_constant: f64,
    schedule: &ContinuationSchedule,
    cfg: &SolverConfig,
) -> Result<ConvergenceStudy> {
    if sweep.len() < 3 {
        return Err(KamError::config(format!(
            "a convergence study needs at least 3 sweep points, got {}",
            sweep.len()
        )));
    }
    let d = spec.dim();
    let (reference, kind) = match effective_h_reference(spec) {
        Ok(r) => (
            r.value,
            format!("analytic: -min P over a {}-point grid per axis", r.grid_per_axis),
        ),
        Err(_) => {
            let p = LatticeProblem::new(Lattice::new(d, reference_resolution)?, spec.clone())?;
            let sol = weak_kam_at(&p, schedule, cfg, 0)?;
            (sol.h_bar, format!("self-convergence surrogate: weak KAM value at N={reference_resolution}"))
        }
    };
    let values = crate::par_map(sweep.len(), |k| {
        let p = LatticeProblem::new(Lattice::new(d, sweep[k])?, spec.clone())?;
        Ok(weak_kam_at(&p, schedule, cfg, 0)?.h_bar)
    })?;
    let raw = sweep
        .iter()
        .zip(values)
        .map(|(&n, h)| (n as f64, h, (h - reference).abs()))
        .collect();
    assemble(
        "N",
        Some(reference),
        kind,
        raw,
        |n| n.powf(-0.5),
        Some(rate_constant),
        format!("bound column is {rate_constant} * N^(-1/2)"),
    )
}

/// Discounted solutions over `sweep` against the solution at
/// `reference_resolution`, compared at the coarse nodes. The continuum
/// solution has no closed form, so the finest lattice stands in for it.
pub fn rate_study_discounted(
    spec: &LagrangianSpec,
    sweep: &[usize],
    lambda: f64,
    reference_resolution: usize,
    cfg: &SolverConfig,
) -> Result<ConvergenceStudy> {
    if let Some(&bad) = sweep.iter().find(|&&n| reference_resolution % n != 0) {
        return Err(KamError::config(format!(
            "sweep resolution {bad} does not divide the reference resolution {reference_resolution}"
        )));
    }
    let d = spec.dim();
    let fine_problem = LatticeProblem::new(Lattice::new(d, reference_resolution)?, spec.clone())?;
    let fine = solve_discounted(&fine_problem, lambda, cfg)?;
    let errors = crate::par_map(sweep.len(), |k| {
        let n = sweep[k];
        let lat = Lattice::new(d, n)?;
        let p = LatticeProblem::new(lat, spec.clone())?;
        let coarse = solve_discounted(&p, lambda, cfg)?;
        let ratio = reference_resolution / n;
        let mut err = 0.0f64;
        for x in 0..lat.node_count() {
            let idx: Vec<usize> = lat.index(x).as_slice().iter().map(|&i| i * ratio).collect();
            let y = fine_problem.lattice().linear(&NodeIndex::new(&idx));
            err = err.max((coarse.phi[x] - fine.phi[y]).abs());
        }
        Ok((coarse.phi[0], err))
    })?;
    let raw = sweep
        .iter()
        .zip(errors)
        .map(|(&n, (v, e))| (n as f64, v, e))
        .collect();
    assemble(
        "N",
        None,
        format!("self-convergence surrogate: discounted solution at N={reference_resolution}"),
        raw,
        |n| lambda.powf(-1.5) * n.powf(-0.5),
        None,
        format!(
            "the continuum discounted solution has no closed form, so the lattice solution at \
             N={reference_resolution} replaces it; bound column is the fitted C1 * lambda^(-3/2) * N^(-1/2)"
        ),
    )
}

/// `|-lambda phi_lambda(anchor) - Hbar_N|` along `lambdas` at a fixed lattice.
pub fn discount_sweep_study(
    problem: &LatticeProblem,
    lambdas: &[f64],
    schedule: &ContinuationSchedule,
    cfg: &SolverConfig,
    anchor: usize,
) -> Result<ConvergenceStudy> {
    let wk = weak_kam_at(problem, schedule, cfg, anchor)?;
    let estimates = crate::par_map(lambdas.len(), |k| {
        let l = lambdas[k];
        Ok(-l * solve_discounted(problem, l, cfg)?.phi[anchor])
    })?;
    let raw = lambdas
        .iter()
        .zip(estimates)
        .map(|(&l, e)| (l, e, (e - wk.h_bar).abs()))
        .collect();
    assemble(
        "lambda",
        Some(wk.h_bar),
        format!("weak KAM value at N={}", problem.lattice().resolution()),
        raw,
        |l| l,
        None,
        "bound column is the fitted C * lambda".into(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    SolveDiscounted,
    WeakKam,
    Mather,
    Simulate,
    Converge,
    Reference,
}

impl Subcommand {
    pub const ALL: [Subcommand; 6] = [
        Subcommand::SolveDiscounted,
        Subcommand::WeakKam,
        Subcommand::Mather,
        Subcommand::Simulate,
        Subcommand::Converge,
        Subcommand::Reference,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::SolveDiscounted => "solve-discounted",
            Subcommand::WeakKam => "weak-kam",
            Subcommand::Mather => "mather",
            Subcommand::Simulate => "simulate",
            Subcommand::Converge => "converge",
            Subcommand::Reference => "reference",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub quiet: bool,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;

struct Outcome {
    result: Value,
    csv: Option<String>,
    summary: String,
}

/// Companion CSV of a JSON output path.
pub fn csv_path(out: &Path) -> PathBuf {
    let candidate = out.with_extension("csv");
    if candidate == out {
        out.with_extension("table.csv")
    } else {
        candidate
    }
}

/// Runs a subcommand and writes its outputs; returns the process exit code.
pub fn run(sub: Subcommand, config: &Path, out: &Path, opts: &RunOptions) -> i32 {
    let mut cfg = match ProblemConfig::load(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("kamgrid: {e}");
            return EXIT_VALIDATION;
        }
    };
    if let Some(seed) = opts.seed {
        cfg.simulation.seed = seed;
    }
    let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
    let outcome = execute(sub, &cfg, &base);
    let (status, result, csv, code) = match outcome {
        Ok(o) => {
            if !opts.quiet {
                println!("{}", o.summary);
            }
            ("ok", o.result, o.csv, EXIT_OK)
        }
        Err(KamError::Convergence {
            context,
            residual,
            iterations,
            best,
        }) => {
            eprintln!("kamgrid: {context} did not converge (residual {residual:.3e})");
            let best = best.map(|b| json!({ "values": b.values, "scalar": b.scalar }));
            (
                "convergence-failure",
                json!({
                    "context": context,
                    "residual": residual,
                    "iterations": iterations,
                    "best_iterate": best,
                }),
                None,
                EXIT_CONVERGENCE,
            )
        }
        Err(e @ (KamError::Config(_) | KamError::Argument(_))) => {
            eprintln!("kamgrid: {e}");
            return EXIT_VALIDATION;
        }
        Err(e) => {
            eprintln!("kamgrid: {e}");
            return EXIT_FAILURE;
        }
    };
    let doc = json!({
        "tool": "kamgrid",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": sub.name(),
        "status": status,
        "metadata": {
            "seed": cfg.simulation.seed,
            "tolerance": cfg.solver.tolerance,
            "resolution": cfg.main_resolution(),
            "parallel": cfg!(feature = "parallel"),
        },
        "config": serde_json::to_value(&cfg).unwrap_or(Value::Null),
        "result": result,
    });
    let written = write_json(out, &doc).and_then(|_| match &csv {
        Some(text) => fs::write(csv_path(out), text).map_err(KamError::from),
        None => Ok(()),
    });
    if let Err(e) = written {
        eprintln!("kamgrid: {e}");
        return EXIT_FAILURE;
    }
    code
}

fn write_json(path: &Path, doc: &Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(doc).map_err(|e| KamError::Internal(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn anchor_of(cfg: &ProblemConfig, lat: &Lattice) -> usize {
    cfg.weak_kam
        .anchor
        .as_ref()
        .map(|a| lat.linear(&NodeIndex::new(a)))
        .unwrap_or(0)
}

fn policy_rows(policy: &StationaryPolicy) -> Vec<Vec<f64>> {
    (0..policy.node_count()).map(|x| policy.get(x).to_vec()).collect()
}

fn coord_header(prefix: &str, d: usize) -> String {
    (1..=d).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(",")
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn execute(sub: Subcommand, cfg: &ProblemConfig, base: &Path) -> Result<Outcome> {
    match sub {
        Subcommand::SolveDiscounted => run_discounted(cfg, base),
        Subcommand::WeakKam => run_weak_kam(cfg, base),
        Subcommand::Mather => run_mather(cfg, base),
        Subcommand::Simulate => run_simulate(cfg, base),
        Subcommand::Converge => run_converge(cfg, base),
        Subcommand::Reference => run_reference(cfg, base),
    }
}

fn run_discounted(cfg: &ProblemConfig, base: &Path) -> Result<Outcome> {
    let n = cfg.main_resolution();
    let problem = cfg.problem(n, base)?;
    let lambda = cfg.discounted.lambda;
    let sol = solve_discounted(&problem, lambda, &cfg.solver)?;
    let constants = problem.constants()?;
    let diag = sol.diagnostics(&problem, &constants);
    let d = problem.dim();
    let mut csv = format!("{},phi,{}\n", coord_header("x", d), coord_header("v", d));
    for x in 0..problem.node_count() {
        let _ = writeln!(
            csv,
            "{},{},{}",
            join(problem.node_coords(x)),
            sol.phi[x],
            join(sol.policy.get(x))
        );
    }
    Ok(Outcome {
        summary: format!(
            "solve-discounted N={n} lambda={lambda}: residual {:.3e} after {} policy iterations",
            sol.residual, sol.iterations
        ),
        result: json!({
            "resolution": n,
            "lambda": lambda,
            "phi": sol.phi.values(),
            "policy": policy_rows(&sol.policy),
            "residual": sol.residual,
            "effective_tolerance": sol.effective_tolerance,
            "iterations": sol.iterations,
            "warnings": sol.warnings,
            "diagnostics": diag,
            "constants": constants,
        }),
        csv: Some(csv),
    })
}

fn weak_kam_json(problem: &LatticeProblem, sol: &WeakKamSolution) -> Value {
    json!({
        "resolution": problem.lattice().resolution(),
        "h_bar": sol.h_bar,
        "psi": sol.psi.values(),
        "anchor": sol.anchor.as_slice(),
        "residual": sol.residual,
        "schedule_used": sol.schedule_used,
        "trace": sol.trace,
        "policy": policy_rows(&sol.policy),
        "max_difference": sol.max_difference(problem),
    })
}

fn run_weak_kam(cfg: &ProblemConfig, base: &Path) -> Result<Outcome> {
    let n = cfg.main_resolution();
    let problem = cfg.problem(n, base)?;
    let anchor = anchor_of(cfg, problem.lattice());
    let sol = weak_kam_at(&problem, &cfg.schedule, &cfg.solver, anchor)?;
    let constants = problem.constants()?;
    let mut result = weak_kam_json(&problem, &sol);
    result["constants"] = serde_json::to_value(&constants).unwrap_or(Value::Null);
    let mut summary = format!("weak-kam N={n}: Hbar_N = {:.12} (residual {:.3e})", sol.h_bar, sol.residual);
    if cfg.weak_kam.cross_check {
        let rvi = relative_value_iteration_anchored(&problem, &cfg.solver, anchor)?;
        let gap = (rvi.h_bar - sol.h_bar).abs();
        result["cross_check"] = json!({
            "method": "relative value iteration",
            "h_bar": rvi.h_bar,
            "residual": rvi.residual,
            "iterations": rvi.iterations,
            "difference": gap,
        });
        let _ = write!(summary, ", relative value iteration differs by {gap:.3e}");
    }
    let mut csv = None;
    let m = cfg.weak_kam.extension_samples;
    if m > 0 {
        let ext = mcshane_default(&problem, &sol.psi)?;
        let d = problem.dim();
        let mut text = format!("{},value\n", coord_header("x", d));
        let total = m.pow(d as u32);
        let mut x = vec![0.0; d];
        for flat in 0..total {
            let mut r = flat;
            for a in (0..d).rev() {
                x[a] = (r % m) as f64 / m as f64;
                r /= m;
            }
            let v = ext.eval(&TorusPoint::new(&x))?;
            let _ = writeln!(text, "{},{v}", join(&x));
        }
        result["extension"] = json!({ "lipschitz_constant": ext.lipschitz_constant(), "samples_per_axis": m });
        csv = Some(text);
    }
    Ok(Outcome { result, csv, summary })
}

fn run_mather(cfg: &ProblemConfig, base: &Path) -> Result<Outcome> {
    let n = cfg.main_resolution();
    let problem = cfg.problem(n, base)?;
    let anchor = anchor_of(cfg, problem.lattice());
    let sol = weak_kam_at(&problem, &cfg.schedule, &cfg.solver, anchor)?;
    let mu = mather_from_policy(&problem, &sol.policy)?;
    let act = action(&problem, &mu)?;
    let holo = holonomic_residual(&problem, &mu, cfg.mather.random_tests, cfg.simulation.seed)?;
    let constants = problem.constants()?;
    let d = problem.dim();
    let mut csv = format!("{},{},weight\n", coord_header("x", d), coord_header("v", d));
    for a in mu.atoms() {
        let _ = writeln!(csv, "{},{},{}", join(problem.node_coords(a.node)), join(&a.velocity), a.weight);
    }
    let mut result = json!({
        "resolution": n,
        "h_bar": sol.h_bar,
        "action": act,
        "action_gap": (act + sol.h_bar).abs(),
        "holonomic": holo,
        "atoms": mu.atoms(),
        "support_speed": mu.max_speed(),
        "c5": constants.c5,
    });
    let mut summary = format!(
        "mather N={n}: action {act:.12}, -Hbar_N {:.12}, holonomic residual {:.3e}",
        -sol.h_bar, holo.residual
    );
    if cfg.mather.lp {
        let grid = VelocityGrid::uniform(cfg.mather.velocity_step, cfg.mather.velocity_max)?;
        let policy = cfg.mather.augment_policy.then_some(&sol.policy);
        match lp_mather_oracle(&problem, &grid, policy) {
            Ok(lp) => {
                let gap = (lp.certificate.value + sol.h_bar).abs();
                let _ = write!(summary, ", LP value {:.12}", lp.certificate.value);
                result["lp"] = json!({
                    "certificate": lp.certificate,
                    "gap": gap,
                    "support": lp.measure.atoms(),
                });
            }
            Err(KamError::Config(msg)) => {
                result["lp"] = json!({ "skipped": msg, "limit": MAX_LP_VARIABLES });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Outcome {
        result,
        csv: Some(csv),
        summary,
    })
}

fn run_simulate(cfg: &ProblemConfig, base: &Path) -> Result<Outcome> {
    let n = cfg.main_resolution();
    let problem = cfg.problem(n, base)?;
    let lat = *problem.lattice();
    let d = lat.dim();
    let c = &cfg.coupling;
    let policy = match c.policy {
        CouplingPolicy::Constant if c.velocity.is_empty() => StationaryPolicy::zero(&lat),
        CouplingPolicy::Constant => StationaryPolicy::constant(&lat, &c.velocity)?,
        CouplingPolicy::WeakKam => weak_kam_at(&problem, &cfg.schedule, &cfg.solver, anchor_of(cfg, &lat))?.policy,
        CouplingPolicy::Discounted => solve_discounted(&problem, cfg.discounted.lambda, &cfg.solver)?.policy,
    };
    let chain_start = NodeIndex::new(&c.chain_start.clone().unwrap_or_else(|| vec![0; d]));
    let motion_start = match &c.motion_start {
        Some(x) => TorusPoint::new(x),
        None => lat.point(lat.linear(&chain_start)),
    };
    let mut sim = cfg.simulation.clone();
    if sim.times.is_empty() {
        sim.times = vec![sim.horizon];
    }
    let report = estimate_coupling_gap(&lat, Strategy::Stationary(&policy), &motion_start, &chain_start, &sim)?;
    let mut csv = String::from("t,mean,stderr,bound,pass\n");
    for r in &report.rows {
        let _ = writeln!(csv, "{},{},{},{},{}", r.t, r.mean, r.stderr, r.bound, r.pass);
    }
    let mut result = json!({
        "resolution": n,
        "policy_kind": c.policy,
        "coupling": report,
    });
    let mut summary = format!(
        "simulate N={n}: coupling bound {} at {} times",
        if report.all_pass() { "holds" } else { "VIOLATED" },
        report.rows.len()
    );
    if let Some(lambda) = sim.lambda {
        let sol = solve_discounted(&problem, lambda, &cfg.solver)?;
        let z = lat.linear(&chain_start);
        let est = estimate_discounted_cost(&problem, &sol.policy, &chain_start, lambda, &sim)?;
        let gap = (est.estimate - sol.phi[z]).abs();
        let ok = gap <= 3.0 * est.stderr + est.truncation_bound;
        result["discounted_cost"] = json!({
            "lambda": lambda,
            "estimate": est,
            "solver_value": sol.phi[z],
            "gap": gap,
            "consistent": ok,
        });
        let _ = write!(summary, ", discounted cost {} the solver value", if ok { "matches" } else { "MISSES" });
    }
    Ok(Outcome {
        result,
        csv: Some(csv),
        summary,
    })
}

fn study_csv(study: &ConvergenceStudy) -> String {
    let mut csv = String::from("sweep_var,error,bound,slope_partial\n");
    for p in &study.points {
        let slope = p.slope_partial.map(|s| s.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{},{}", p.sweep_var, p.error, p.bound, slope);
    }
    csv
}

fn run_converge(cfg: &ProblemConfig, base: &Path) -> Result<Outcome> {
    let spec = cfg.lagrangian_spec(base)?;
    let s = &cfg.study;
    let study = match s.kind {
        StudyKind::EffectiveHamiltonian => {
            effective_h_study(&spec, &cfg.sweep, s.reference_resolution, s.rate_constant, &cfg.schedule, &cfg.solver)?
        }
        StudyKind::Discounted => rate_study_discounted(&spec, &cfg.sweep, s.lambda, s.reference_resolution, &cfg.solver)?,
        StudyKind::DiscountSweep => {
            let problem = cfg.problem(cfg.main_resolution(), base)?;
            let anchor = anchor_of(cfg, problem.lattice());
            discount_sweep_study(&problem, &s.lambdas, &cfg.schedule, &cfg.solver, anchor)?
        }
    };
    let within = study.points.iter().all(|p| p.error <= p.bound);
    let summary = format!(
        "converge ({} sweep, {} points): slope {}, errors within bound: {within}",
        study.variable,
        study.points.len(),
        study.slope.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a (degenerate)".into())
    );
    Ok(Outcome {
        csv: Some(study_csv(&study)),
        result: json!({ "kind": s.kind, "study": study, "within_bound": within }),
        summary,
    })
}

fn run_reference(cfg: &ProblemConfig, base: &Path) -> Result<Outcome> {
    let spec = cfg.lagrangian_spec(base)?;
    let r = effective_h_reference(&spec)?;
    Ok(Outcome {
        summary: format!("Hbar = -min P = {}", r.value),
        result: json!({
            "h_bar": r.value,
            "grid_value": r.grid_value,
            "grid_per_axis": r.grid_per_axis,
            "argmin": r.argmin,
            "formula": "-min P",
        }),
        csv: None,
    })
}

/// Samples of a grid function as `(coords, value)` rows, for callers that
/// want the raw profile.
pub fn profile(problem: &LatticeProblem, f: &GridFunction) -> Vec<(Vec<f64>, f64)> {
    (0..problem.node_count())
        .map(|x| (problem.node_coords(x).to_vec(), f[x]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
dimension = 1
resolution = 8

[[lagrangian.potential]]
k = [1]
cos = 1.0
"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = ProblemConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.main_resolution(), 8);
        assert_eq!(cfg.solver.tolerance, 1e-10);
        let spec = cfg.lagrangian_spec(Path::new(".")).unwrap();
        assert!((spec.potential().eval(&[0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ProblemConfig::from_toml_str(MINIMAL).unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ProblemConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        for (bad, needle) in [
            ("dimension = 1\nresolution = 8\n[lagrangian]\nkinetic = [{ exponent = 1.0, weight = 1.0 }]\n", "exponent"),
            ("dimension = 1\nresolution = 1\n[lagrangian]\n", "resolution"),
            ("dimension = 1\nresolution = 8\nbogus = 3\n[lagrangian]\n", "bogus"),
            ("dimension = 2\nresolution = 8\n[[lagrangian.potential]]\nk = [1]\ncos = 1.0\n", "wave vector"),
            ("dimension = 1\nresolution = 8\n[lagrangian]\n[solver]\ntolerance = -1.0\n", "tolerance"),
        ] {
            match ProblemConfig::from_toml_str(bad) {
                Err(KamError::Config(msg)) => assert!(msg.contains(needle), "{msg}"),
                other => panic!("expected a config error for {bad:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn parse_errors_report_line() {
        let err = ProblemConfig::from_toml_str("dimension = 1\nresolution = \"eight\"\n[lagrangian]\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn slope_fit() {
        let x = [8.0, 16.0, 32.0, 64.0];
        let y: Vec<f64> = x.iter().map(|n: &f64| 3.0 * n.powf(-0.5)).collect();
        assert!((fit_loglog_slope(&x, &y).unwrap() + 0.5).abs() < 1e-12);
        assert!(matches!(fit_loglog_slope(&x[..2], &y[..2]), Err(KamError::Config(_))));
    }

    #[test]
    fn references() {
        let cos = LagrangianSpec::mechanical(1, Potential::cosine(&[1], 1.0, 0.0)).unwrap();
        assert!((effective_h_reference(&cos).unwrap().value - 1.0).abs() < 1e-12);
        let zero = LagrangianSpec::mechanical(1, Potential::zero()).unwrap();
        assert_eq!(effective_h_reference(&zero).unwrap().value, 0.0);
        let mixed = LagrangianSpec::mechanical(
            1,
            Potential::cosine(&[1], 1.0, 0.0).plus(Potential::Trig(vec![TrigTerm { k: vec![2], cos_coeff: 0.0, sin_coeff: 0.3 }])).unwrap(),
        )
        .unwrap();
        // brute-force minimum on a 10^6 grid
        let dense = (0..1_000_000)
            .map(|i| {
                let x = i as f64 / 1e6;
                mixed.potential().eval(&[x])
            })
            .fold(f64::INFINITY, f64::min);
        assert!((effective_h_reference(&mixed).unwrap().value + dense).abs() < 1e-9);
    }

    #[test]
    fn degenerate_study_is_flagged() {
        let zero = LagrangianSpec::mechanical(1, Potential::zero()).unwrap();
        let study = rate_study_discounted(&zero, &[8, 16, 32], 0.5, 64, &SolverConfig::default()).unwrap();
        assert!(study.degenerate && study.slope.is_none());
        assert!(study.points.iter().all(|p| p.error == 0.0));
        assert!(effective_h_study(&zero, &[8, 16], 64, 1.0, &ContinuationSchedule::default(), &SolverConfig::default()).is_err());
    }
}
