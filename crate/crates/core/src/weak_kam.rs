//! The lattice weak KAM equation `H_N(x, (-Delta_N) psi(x)) = Hbar_N`.
//!
//! [`solve_weak_kam`] follows the vanishing-discount path: discounted
//! problems at a geometric sequence of `lambda`, normalized at an anchor.
//! Since `-lambda phi(anchor)` only approaches `Hbar_N` at rate `lambda`,
//! every step also evaluates the current policy under the long-run average
//! criterion and improves it until the equation holds, which pins down the
//! constant to rounding. [`relative_value_iteration`] is an independent
//! route through the uniformized chain.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ctmc::{PolicyGenerator, StationaryPolicy};
use crate::discounted::{greedy, max_difference, solve_discounted_from, velocity_cap, SolverConfig};
use crate::error::{BestIterate, KamError, Result};
use crate::lattice::{wrap_distance, GridFunction, Lattice, NodeIndex, TorusPoint};
use crate::problem::LatticeProblem;
use crate::sparse::{self, DENSE_LIMIT};

/// How the Bellman tolerance of each discounted step is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepTolerance {
    /// The solver tolerance at every step.
    Fixed,
    /// `max(tolerance, factor * lambda)`: coarse early steps, tight late ones.
    Proportional { factor: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationSchedule {
    pub lambda0: f64,
    pub ratio: f64,
    pub min_lambda: f64,
    pub step_tolerance: StepTolerance,
}

impl Default for ContinuationSchedule {
    fn default() -> Self {
        ContinuationSchedule {
            lambda0: 1.0,
            ratio: 0.5,
            min_lambda: 1e-7,
            step_tolerance: StepTolerance::Fixed,
        }
    }
}

impl ContinuationSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(KamError::config(format!("schedule.ratio must lie in (0,1), got {}", self.ratio)));
        }
        if !(self.lambda0 > 0.0) || !(self.min_lambda > 0.0) || self.min_lambda > self.lambda0 {
            return Err(KamError::config("schedule needs 0 < min_lambda <= lambda0"));
        }
        if let StepTolerance::Proportional { factor } = self.step_tolerance {
            if !(factor > 0.0) {
                return Err(KamError::config("schedule.step_tolerance factor must be > 0"));
            }
        }
        Ok(())
    }

    /// `lambda0, lambda0 * ratio, ...` down to `min_lambda`.
    pub fn lambdas(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut l = self.lambda0;
        while l >= self.min_lambda * (1.0 - 1e-12) {
            out.push(l);
            l *= self.ratio;
        }
        out
    }

    fn step_tolerance(&self, tol: f64, lambda: f64) -> f64 {
        match self.step_tolerance {
            StepTolerance::Fixed => tol,
            StepTolerance::Proportional { factor } => tol.max(factor * lambda),
        }
    }
}

/// One continuation step as reported in outputs.
#[derive(Debug, Clone, Serialize)]
pub struct ContinuationStep {
    pub lambda: f64,
    /// `-lambda phi(anchor)`.
    pub discounted_estimate: f64,
    pub h_bar: f64,
    pub psi_change: f64,
    pub residual: f64,
    /// Whether the average-cost evaluation closed the equation at this step.
    pub polished: bool,
}

#[derive(Debug, Clone)]
pub struct WeakKamSolution {
    pub h_bar: f64,
    pub psi: GridFunction,
    pub anchor: NodeIndex,
    pub residual: f64,
    pub schedule_used: Vec<f64>,
    pub trace: Vec<ContinuationStep>,
    pub policy: StationaryPolicy,
    pub iterations: usize,
}

impl WeakKamSolution {
    /// `max |Delta^{+-} psi|`, bounded by `c3`.
    pub fn max_difference(&self, problem: &LatticeProblem) -> f64 {
        max_difference(problem, self.psi.values())
    }
}

/// `max_x |H_N(x, (-Delta_N) psi(x)) - Hbar|`.
pub fn weak_kam_residual(problem: &LatticeProblem, psi: &GridFunction, h_bar: f64) -> Result<f64> {
    problem.check_grid(psi.values())?;
    let (h, _) = greedy(problem, psi.values(), None)?;
    Ok(spread(&h, h_bar))
}

fn spread(h: &[f64], h_bar: f64) -> f64 {
    h.iter().fold(0.0f64, |m, v| m.max((v - h_bar).abs()))
}

fn check_anchor(problem: &LatticeProblem, anchor: usize) -> Result<()> {
    if anchor >= problem.node_count() {
        return Err(KamError::argument(format!(
            "anchor {anchor} outside a lattice of {} nodes",
            problem.node_count()
        )));
    }
    Ok(())
}

/// Floating-point floor of the weak KAM residual.
fn rounding_floor(problem: &LatticeProblem, psi: &[f64], policy: &StationaryPolicy) -> f64 {
    crate::discounted::rounding_floor(problem, psi, 0.0, policy)
}

/// Vanishing-discount solve anchored at the origin node.
pub fn solve_weak_kam(
    problem: &LatticeProblem,
    schedule: &ContinuationSchedule,
    cfg: &SolverConfig,
) -> Result<WeakKamSolution> {
    solve_weak_kam_anchored(problem, schedule, cfg, 0)
}

pub fn solve_weak_kam_anchored(
    problem: &LatticeProblem,
    schedule: &ContinuationSchedule,
    cfg: &SolverConfig,
    anchor: usize,
) -> Result<WeakKamSolution> {
    schedule.validate()?;
    cfg.validate()?;
    check_anchor(problem, anchor)?;
    let tol = cfg.tolerance;
    let mut policy = StationaryPolicy::zero(problem.lattice());
    let mut previous: Option<(Vec<f64>, f64)> = None;
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    let mut trace = Vec::new();
    let mut used = Vec::new();
    let mut iterations = 0;

    for lambda in schedule.lambdas() {
        let step_cfg = SolverConfig {
            tolerance: schedule.step_tolerance(tol, lambda),
            ..cfg.clone()
        };
        // warm start: the previous step's optimal policy is the greedy
        // policy of the previous phi
        let sol = solve_discounted_from(problem, lambda, &step_cfg, &policy)?;
        iterations += sol.iterations;
        used.push(lambda);
        policy = sol.policy.clone();

        let phi = sol.phi.values();
        let shift = phi[anchor];
        let discounted_estimate = -lambda * shift;
        let mut psi: Vec<f64> = phi.iter().map(|v| v - shift).collect();
        let mut h_bar = discounted_estimate;
        let mut polished = false;
        if let Some(p) = ergodic_polish(problem, &policy, &psi, anchor, tol, cfg.max_inner_iterations)? {
            psi = p.psi;
            h_bar = p.h_bar;
            polished = true;
        }
        let (hv, step_policy) = greedy(problem, &psi, None)?;
        let residual = spread(&hv, h_bar);

        let psi_change = previous
            .as_ref()
            .map(|(p, _)| p.iter().zip(&psi).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
            .unwrap_or(f64::INFINITY);
        let h_change = previous.as_ref().map(|(_, h)| (h - h_bar).abs()).unwrap_or(f64::INFINITY);
        trace.push(ContinuationStep {
            lambda,
            discounted_estimate,
            h_bar,
            psi_change,
            residual,
            polished,
        });
        if best.as_ref().is_none_or(|(r, _, _)| residual < *r) {
            best = Some((residual, psi.clone(), h_bar));
        }
        let floor = rounding_floor(problem, &psi, &step_policy);
        if psi_change <= tol && h_change <= tol && residual <= (10.0 * tol).max(floor) {
            return Ok(WeakKamSolution {
                h_bar,
                psi: GridFunction::new(psi),
                anchor: problem.lattice().index(anchor),
                residual,
                schedule_used: used,
                trace,
                policy: step_policy,
                iterations,
            });
        }
        previous = Some((psi, h_bar));
    }

    let (residual, values, h_bar) = best.expect("schedule has at least one step");
    Err(KamError::Convergence {
        context: "vanishing-discount continuation",
        residual,
        iterations: used.len(),
        best: Some(Box::new(BestIterate {
            values,
            scalar: Some(h_bar),
        })),
    })
}

struct Polished {
    psi: Vec<f64>,
    h_bar: f64,
}

const POLISH_ROUNDS: usize = 50;

/// Average-cost policy iteration started from `policy`. Returns `None` when
/// it does not close the equation (unequal class gains, oversized classes,
/// or a stalled improvement).
fn ergodic_polish(
    problem: &LatticeProblem,
    policy: &StationaryPolicy,
    warm: &[f64],
    anchor: usize,
    tol: f64,
    max_sweeps: usize,
) -> Result<Option<Polished>> {
    let mut policy = policy.clone();
    let mut pins = warm.to_vec();
    for _ in 0..POLISH_ROUNDS {
        let Some((mut psi, h_bar)) = evaluate_average(problem, &policy, &pins, max_sweeps)? else {
            return Ok(None);
        };
        let shift = psi[anchor];
        psi.iter_mut().for_each(|v| *v -= shift);
        let (hv, improved) = greedy(problem, &psi, None)?;
        let residual = spread(&hv, h_bar);
        if residual <= tol.max(rounding_floor(problem, &psi, &improved)) {
            return Ok(Some(Polished { psi, h_bar }));
        }
        if improved == policy {
            return Ok(None);
        }
        policy = improved;
        pins = psi;
    }
    Ok(None)
}

/// Solves `L_pi + Q[pi] psi = -Hbar` for a policy whose closed classes all
/// have the same gain. One node per class keeps its `pins` value; the other
/// values follow.
fn evaluate_average(
    problem: &LatticeProblem,
    policy: &StationaryPolicy,
    pins: &[f64],
    max_sweeps: usize,
) -> Result<Option<(Vec<f64>, f64)>> {
    let n = problem.node_count();
    let q = PolicyGenerator::new(problem.lattice(), policy)?;
    let adj = q.adjacency();
    let exit = q.exit_rates();
    let cost: Vec<f64> = (0..n).map(|x| problem.lagrangian(x, policy.get(x))).collect();
    let comps = sparse::components(&adj);

    let mut known = vec![None; n];
    let mut gain: Option<f64> = None;
    for (members, _) in comps.members.iter().zip(&comps.closed).filter(|(_, &c)| c) {
        if members.len() > DENSE_LIMIT {
            return Ok(None);
        }
        let (values, g) = class_average(members, &adj, &exit, &cost, pins)?;
        match gain {
            None => gain = Some(g),
            Some(g0) if (g - g0).abs() <= 1e-12 * (1.0 + g0.abs()) => {}
            Some(_) => return Ok(None),
        }
        for (&x, v) in members.iter().zip(values) {
            known[x] = Some(v);
        }
    }
    let h_bar = gain.expect("a finite chain has a closed class");
    let rhs: Vec<f64> = cost.iter().map(|c| c + h_bar).collect();
    match sparse::solve(&exit, &adj, &rhs, &known, max_sweeps) {
        Ok(psi) => Ok(Some((psi, h_bar))),
        Err(KamError::Internal(_)) | Err(KamError::Convergence { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// On a closed class: `exit psi(x) - sum_y c psi(y) - Hbar = L(x)` with
/// `psi(pin)` fixed.
fn class_average(
    members: &[usize],
    adj: &sparse::Adjacency,
    exit: &[f64],
    cost: &[f64],
    pins: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let pin = members[0];
    let pin_value = pins[pin];
    let s = members.len();
    let local: HashMap<usize, usize> = members.iter().enumerate().map(|(i, &x)| (x, i)).collect();
    // columns: psi at members[1..] then Hbar
    let col = |x: usize| local[&x] - 1;
    let mut a = DMatrix::<f64>::zeros(s, s);
    let mut b = DVector::<f64>::zeros(s);
    for (i, &x) in members.iter().enumerate() {
        b[i] = cost[x];
        if x == pin {
            b[i] -= exit[x] * pin_value;
        } else {
            a[(i, col(x))] += exit[x];
        }
        for &(y, c) in &adj[x] {
            if y == pin {
                b[i] += c * pin_value;
            } else {
                a[(i, col(y))] -= c;
            }
        }
        a[(i, s - 1)] = -1.0;
    }
    let sol = sparse::dense_solve(a, b).ok_or_else(|| KamError::Internal("singular class system".into()))?;
    let mut values = Vec::with_capacity(s);
    values.push(pin_value);
    values.extend(sol.iter().take(s - 1));
    Ok((values, sol[s - 1]))
}

/// Relative value iteration anchored at the origin node.
pub fn relative_value_iteration(problem: &LatticeProblem, cfg: &SolverConfig) -> Result<WeakKamSolution> {
    relative_value_iteration_anchored(problem, cfg, 0)
}

/// Iterates `phi <- phi - H_N^A(x, (-Delta_N) phi) / Lambda_u` on the chain
/// uniformized at `Lambda_u = N d A`, with velocities capped at `A = c5 + 1`
/// and `phi(anchor)` subtracted every sweep. Stops when the node-wise
/// Hamiltonian values span at most `2 tolerance`; `Hbar` is their midpoint.
pub fn relative_value_iteration_anchored(
    problem: &LatticeProblem,
    cfg: &SolverConfig,
    anchor: usize,
) -> Result<WeakKamSolution> {
    cfg.validate()?;
    check_anchor(problem, anchor)?;
    let cap = velocity_cap(problem)?;
    let rate = problem.lattice().resolution() as f64 * problem.dim() as f64 * cap;
    let mut phi = vec![0.0; problem.node_count()];
    let mut span = f64::INFINITY;
    let mut mid = 0.0;
    for iteration in 1..=cfg.max_value_iterations {
        let (h, _) = greedy(problem, &phi, Some(cap))?;
        let (lo, hi) = h.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        span = hi - lo;
        mid = 0.5 * (lo + hi);
        if span <= 2.0 * cfg.tolerance {
            let (hv, policy) = greedy(problem, &phi, None)?;
            let residual = spread(&hv, mid);
            return Ok(WeakKamSolution {
                h_bar: mid,
                psi: GridFunction::new(phi),
                anchor: problem.lattice().index(anchor),
                residual,
                schedule_used: Vec::new(),
                trace: Vec::new(),
                policy,
                iterations: iteration,
            });
        }
        for (p, hv) in phi.iter_mut().zip(&h) {
            *p -= hv / rate;
        }
        let shift = phi[anchor];
        phi.iter_mut().for_each(|v| *v -= shift);
    }
    Err(KamError::Convergence {
        context: "relative value iteration",
        residual: 0.5 * span,
        iterations: cfg.max_value_iterations,
        best: Some(Box::new(BestIterate {
            values: phi,
            scalar: Some(mid),
        })),
    })
}

/// `x -> min_y psi(y) + c |x - y|` over lattice nodes `y`.
#[derive(Debug, Clone)]
pub struct McShaneExtension {
    nodes: Vec<TorusPoint>,
    values: Vec<f64>,
    constant: f64,
}

impl McShaneExtension {
    pub fn lipschitz_constant(&self) -> f64 {
        self.constant
    }

    pub fn eval(&self, x: &TorusPoint) -> Result<f64> {
        let mut best = f64::INFINITY;
        for (y, v) in self.nodes.iter().zip(&self.values) {
            best = best.min(v + self.constant * wrap_distance(x, y)?);
        }
        Ok(best)
    }
}

/// Largest `|psi(x) - psi(y)| / |x - y|` over node pairs. Above 4096 nodes
/// the axis-neighbor ratio times `sqrt(d)` is returned instead, which still
/// dominates every pair.
pub fn discrete_lipschitz_ratio(lat: &Lattice, psi: &GridFunction) -> Result<f64> {
    if psi.len() != lat.node_count() {
        return Err(KamError::argument("grid function does not match the lattice"));
    }
    let n = lat.node_count();
    let v = psi.values();
    if n > 4096 {
        let mut m = 0.0f64;
        for x in 0..n {
            for g in crate::lattice::gradient_at(lat, v, x).pairs {
                m = m.max(g.0.abs()).max(g.1.abs());
            }
        }
        return Ok((lat.dim() as f64).sqrt() * m);
    }
    let points: Vec<TorusPoint> = (0..n).map(|x| lat.point(x)).collect();
    let mut m = 0.0f64;
    for x in 0..n {
        for y in x + 1..n {
            m = m.max((v[x] - v[y]).abs() / wrap_distance(&points[x], &points[y])?);
        }
    }
    Ok(m)
}

/// McShane extension with constant `c`; `c` must dominate the discrete
/// Lipschitz ratio of `psi` so that the extension interpolates.
pub fn mcshane_extend(lat: &Lattice, psi: &GridFunction, c: f64) -> Result<McShaneExtension> {
    let ratio = discrete_lipschitz_ratio(lat, psi)?;
    if !(c >= ratio * (1.0 - 1e-12)) {
        return Err(KamError::argument(format!(
            "Lipschitz constant {c} below the discrete ratio {ratio}"
        )));
    }
    Ok(McShaneExtension {
        nodes: (0..lat.node_count()).map(|x| lat.point(x)).collect(),
        values: psi.values().to_vec(),
        constant: c,
    })
}

/// Extension with constant `max(c4, discrete ratio)`.
pub fn mcshane_default(problem: &LatticeProblem, psi: &GridFunction) -> Result<McShaneExtension> {
    let c4 = problem.constants()?.c4;
    let c = c4.max(discrete_lipschitz_ratio(problem.lattice(), psi)?);
    mcshane_extend(problem.lattice(), psi, c)
}
