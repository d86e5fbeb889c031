//! The discounted Bellman system `lambda phi(x) + H_N(x, (-Delta_N) phi(x)) = 0`
//! on the lattice and its optimal stationary policy.
//!
//! Policy iteration is the primary method: each policy is evaluated exactly
//! by solving `(lambda I - Q[pi]) phi = L_pi`, and improved with the
//! closed-form argmax of the lattice Hamiltonian. Value iteration on the
//! uniformized chain is kept as an independent route.

use serde::{Deserialize, Serialize};

use crate::ctmc::{PolicyGenerator, StationaryPolicy};
use crate::error::{BestIterate, KamError, Result};
use crate::lagrangian::DiagnosticConstants;
use crate::lattice::{gradient_at, GridFunction};
use crate::problem::LatticeProblem;
use crate::sparse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    PolicyIteration,
    ValueIteration,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Target Bellman residual.
    pub tolerance: f64,
    pub max_policy_iterations: usize,
    /// Gauss-Seidel sweep budget for components too large for a dense solve.
    pub max_inner_iterations: usize,
    pub max_value_iterations: usize,
    pub method: Method,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: 1e-10,
            max_policy_iterations: 200,
            max_inner_iterations: 100_000,
            max_value_iterations: 10_000_000,
            method: Method::PolicyIteration,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(KamError::config(format!(
                "solver.tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if self.max_policy_iterations == 0 || self.max_inner_iterations == 0 || self.max_value_iterations == 0 {
            return Err(KamError::config("solver iteration budgets must be positive"));
        }
        Ok(())
    }
}

/// Discounts below this trigger a conditioning warning.
pub const SMALL_DISCOUNT: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct DiscountedSolution {
    pub lambda: f64,
    pub phi: GridFunction,
    pub policy: StationaryPolicy,
    pub residual: f64,
    pub iterations: usize,
    /// Tolerance actually enforced: the requested one, raised to the
    /// floating-point floor of the residual when `|phi|` is large.
    pub effective_tolerance: f64,
    pub warnings: Vec<String>,
}

/// Observed quantities next to the a-priori bounds they should respect.
#[derive(Debug, Clone, Serialize)]
pub struct DiscountedDiagnostics {
    /// `lambda * max |phi|`, bounded by `c0`.
    pub scaled_sup: f64,
    pub c0: f64,
    /// `max |Delta^{+-} phi|`, bounded by `c3`.
    pub max_difference: f64,
    pub c3: f64,
    /// `max |pi(x)|`, bounded by `c5`.
    pub max_speed: f64,
    pub c5: f64,
}

impl DiscountedSolution {
    pub fn diagnostics(&self, problem: &LatticeProblem, constants: &DiagnosticConstants) -> DiscountedDiagnostics {
        DiscountedDiagnostics {
            scaled_sup: self.lambda * self.phi.sup_norm(),
            c0: constants.c0,
            max_difference: max_difference(problem, self.phi.values()),
            c3: constants.c3,
            max_speed: self.policy.sup_speed(),
            c5: constants.c5,
        }
    }
}

/// `max_x max_i |Delta^{+-}_i phi(x)|`.
pub fn max_difference(problem: &LatticeProblem, phi: &[f64]) -> f64 {
    (0..problem.node_count())
        .flat_map(|x| gradient_at(problem.lattice(), phi, x).pairs.into_iter())
        .fold(0.0f64, |m, (p, q)| m.max(p.abs()).max(q.abs()))
}

pub fn solve_discounted(problem: &LatticeProblem, lambda: f64, cfg: &SolverConfig) -> Result<DiscountedSolution> {
    let start = StationaryPolicy::zero(problem.lattice());
    solve_discounted_from(problem, lambda, cfg, &start)
}

/// Same as [`solve_discounted`], with policy iteration started from
/// `initial` (ignored by value iteration).
pub fn solve_discounted_from(
    problem: &LatticeProblem,
    lambda: f64,
    cfg: &SolverConfig,
    initial: &StationaryPolicy,
) -> Result<DiscountedSolution> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(KamError::argument(format!("discount must be > 0, got {lambda}")));
    }
    cfg.validate()?;
    let mut warnings = Vec::new();
    if lambda < SMALL_DISCOUNT {
        warnings.push(format!(
            "discount {lambda:e} is below {SMALL_DISCOUNT:e}: conditioning degrades like 1/lambda, \
             prefer the weak KAM solver"
        ));
    }
    let mut sol = match cfg.method {
        Method::PolicyIteration => policy_iteration(problem, lambda, cfg, initial.clone())?,
        Method::ValueIteration => value_iteration(problem, lambda, cfg)?,
    };
    sol.warnings.extend(warnings);
    Ok(sol)
}

/// Solves `(lambda I - Q[pi]) phi = L(., pi(.))`.
pub fn evaluate_policy(
    problem: &LatticeProblem,
    policy: &StationaryPolicy,
    lambda: f64,
    max_sweeps: usize,
) -> Result<GridFunction> {
    let q = PolicyGenerator::new(problem.lattice(), policy)?;
    let diag: Vec<f64> = q.exit_rates().iter().map(|e| lambda + e).collect();
    let rhs: Vec<f64> = (0..problem.node_count())
        .map(|x| problem.lagrangian(x, policy.get(x)))
        .collect();
    let known = vec![None; problem.node_count()];
    Ok(GridFunction::new(sparse::solve(
        &diag,
        &q.adjacency(),
        &rhs,
        &known,
        max_sweeps,
    )?))
}

/// Node-wise `H_N(x, (-Delta_N) phi(x))` together with the greedy policy.
pub(crate) fn greedy(problem: &LatticeProblem, phi: &[f64], cap: Option<f64>) -> Result<(Vec<f64>, StationaryPolicy)> {
    let mut policy = StationaryPolicy::zero(problem.lattice());
    let mut values = Vec::with_capacity(problem.node_count());
    for x in 0..problem.node_count() {
        let (h, v) = problem.hamiltonian_of(phi, x, cap)?;
        values.push(h);
        policy.set(x, &v);
    }
    Ok((values, policy))
}

/// `max_x |lambda phi(x) + H_N(x, (-Delta_N) phi(x))|`.
pub fn bellman_residual(problem: &LatticeProblem, phi: &GridFunction, lambda: f64) -> Result<f64> {
    problem.check_grid(phi.values())?;
    let (h, _) = greedy(problem, phi.values(), None)?;
    Ok(residual_from(phi.values(), &h, lambda))
}

fn residual_from(phi: &[f64], h: &[f64], lambda: f64) -> f64 {
    phi.iter()
        .zip(h)
        .fold(0.0f64, |m, (p, hv)| m.max((lambda * p + hv).abs()))
}

/// Node-wise argmax of `(-Delta_N) phi . v - L(x, v)`.
pub fn optimal_policy(problem: &LatticeProblem, phi: &GridFunction) -> Result<StationaryPolicy> {
    problem.check_grid(phi.values())?;
    Ok(greedy(problem, phi.values(), None)?.1)
}

/// Floating-point floor of the Bellman residual for a given `phi`.
pub(crate) fn rounding_floor(problem: &LatticeProblem, phi: &[f64], lambda: f64, policy: &StationaryPolicy) -> f64 {
    let sup = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let n = problem.lattice().resolution() as f64;
    let d = problem.dim() as f64;
    let l_sup = (0..problem.node_count())
        .map(|x| problem.lagrangian(x, policy.get(x)).abs())
        .fold(0.0, f64::max);
    64.0 * f64::EPSILON * (lambda * sup + 2.0 * n * d * sup * (1.0 + policy.sup_speed()) + l_sup)
}

fn policy_iteration(
    problem: &LatticeProblem,
    lambda: f64,
    cfg: &SolverConfig,
    mut policy: StationaryPolicy,
) -> Result<DiscountedSolution> {
    let mut best: Option<(f64, GridFunction)> = None;
    for iteration in 1..=cfg.max_policy_iterations {
        let phi = evaluate_policy(problem, &policy, lambda, cfg.max_inner_iterations)?;
        let (h, improved) = greedy(problem, phi.values(), None)?;
        let residual = residual_from(phi.values(), &h, lambda);
        let tolerance = cfg.tolerance.max(rounding_floor(problem, phi.values(), lambda, &improved));
        if residual <= tolerance {
            return Ok(DiscountedSolution {
                lambda,
                phi,
                policy: improved,
                residual,
                iterations: iteration,
                effective_tolerance: tolerance,
                warnings: Vec::new(),
            });
        }
        if best.as_ref().is_none_or(|(r, _)| residual < *r) {
            best = Some((residual, phi));
        }
        if improved == policy {
            break;
        }
        policy = improved;
    }
    let (residual, phi) = best.expect("at least one policy evaluation");
    Err(KamError::Convergence {
        context: "discounted policy iteration",
        residual,
        iterations: cfg.max_policy_iterations,
        best: Some(Box::new(BestIterate {
            values: phi.into_values(),
            scalar: None,
        })),
    })
}

/// Per-axis velocity cap for value iteration: `c5 + 1`.
pub(crate) fn velocity_cap(problem: &LatticeProblem) -> Result<f64> {
    Ok(problem.constants()?.c5 + 1.0)
}

fn value_iteration(problem: &LatticeProblem, lambda: f64, cfg: &SolverConfig) -> Result<DiscountedSolution> {
    let cap = velocity_cap(problem)?;
    let n = problem.lattice().resolution() as f64;
    let rate = n * problem.dim() as f64 * cap;
    let mut phi = vec![0.0; problem.node_count()];
    let mut last = f64::INFINITY;
    for iteration in 1..=cfg.max_value_iterations {
        let (h, _) = greedy(problem, &phi, Some(cap))?;
        // phi <- (rate phi + min_v [L + Q phi]) / (lambda + rate)
        let mut change = 0.0f64;
        for (p, hv) in phi.iter_mut().zip(&h) {
            let next = (rate * *p - hv) / (lambda + rate);
            change = change.max((next - *p).abs());
            *p = next;
        }
        last = change * (lambda + rate);
        if last <= cfg.tolerance * 0.5 || iteration == cfg.max_value_iterations {
            let (h, policy) = greedy(problem, &phi, None)?;
            let residual = residual_from(&phi, &h, lambda);
            let tolerance = cfg.tolerance.max(rounding_floor(problem, &phi, lambda, &policy));
            if residual <= tolerance {
                let mut warnings = Vec::new();
                if policy.as_flat().iter().any(|v| v.abs() >= cap) {
                    warnings.push(format!("optimal velocity reaches the search box {cap}"));
                }
                return Ok(DiscountedSolution {
                    lambda,
                    phi: GridFunction::new(phi),
                    policy,
                    residual,
                    iterations: iteration,
                    effective_tolerance: tolerance,
                    warnings,
                });
            }
        }
    }
    Err(KamError::Convergence {
        context: "discounted value iteration",
        residual: last,
        iterations: cfg.max_value_iterations,
        best: Some(Box::new(BestIterate {
            values: phi,
            scalar: None,
        })),
    })
}
