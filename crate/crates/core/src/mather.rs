//! Discrete Mather measures: probability measures on (node, velocity) pairs
//! that are holonomic for the lattice and minimize the action.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ctmc::{row_at, stationary_distribution, PolicyGenerator, StationaryPolicy};
use crate::error::{KamError, Result};
use crate::lattice::{gradient_at, pair_dot_unchecked, wrap_distance, Lattice, TorusPoint};
use crate::problem::LatticeProblem;
use crate::simplex::solve_lp;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Atom {
    pub node: usize,
    pub velocity: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscreteMatherMeasure {
    dim: usize,
    atoms: Vec<Atom>,
}

impl DiscreteMatherMeasure {
    /// Weights must be nonnegative and sum to one.
    pub fn new(dim: usize, atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(KamError::argument("a measure needs at least one atom"));
        }
        if atoms.iter().any(|a| a.velocity.len() != dim) {
            return Err(KamError::argument("atom velocity arity does not match the dimension"));
        }
        if atoms.iter().any(|a| !(a.weight >= 0.0) || !a.weight.is_finite()) {
            return Err(KamError::argument("atom weights must be nonnegative"));
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(KamError::argument(format!("atom weights sum to {total}, not 1")));
        }
        Ok(DiscreteMatherMeasure { dim, atoms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// `t * self + (1 - t) * other`.
    pub fn mix(&self, other: &DiscreteMatherMeasure, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) || self.dim != other.dim {
            return Err(KamError::argument("mixture needs t in [0,1] and equal dimensions"));
        }
        let mut atoms: Vec<Atom> = self
            .atoms
            .iter()
            .map(|a| Atom {
                weight: t * a.weight,
                ..a.clone()
            })
            .collect();
        atoms.extend(other.atoms.iter().map(|a| Atom {
            weight: (1.0 - t) * a.weight,
            ..a.clone()
        }));
        DiscreteMatherMeasure::new(self.dim, atoms)
    }

    pub fn max_speed(&self) -> f64 {
        self.atoms.iter().map(|a| norm(&a.velocity)).fold(0.0, f64::max)
    }

    pub fn mean_speed(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight * norm(&a.velocity)).sum()
    }

    fn check(&self, problem: &LatticeProblem) -> Result<()> {
        if self.dim != problem.dim() || self.atoms.iter().any(|a| a.node >= problem.node_count()) {
            return Err(KamError::argument("measure does not live on this lattice"));
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|w| w * w).sum::<f64>().sqrt()
}

/// `sum_x m_x delta_{(x, pi(x))}` with `m` the stationary distribution of
/// `Q[pi]`. Nodes of zero mass are left out.
pub fn mather_from_policy(problem: &LatticeProblem, policy: &StationaryPolicy) -> Result<DiscreteMatherMeasure> {
    let q = PolicyGenerator::new(problem.lattice(), policy)?;
    let m = stationary_distribution(&q)?;
    let atoms = m
        .weights()
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(x, &w)| Atom {
            node: x,
            velocity: policy.get(x).to_vec(),
            weight: w,
        })
        .collect();
    DiscreteMatherMeasure::new(problem.dim(), atoms)
}

/// `sum weight * L(node, velocity)`.
pub fn action(problem: &LatticeProblem, mu: &DiscreteMatherMeasure) -> Result<f64> {
    mu.check(problem)?;
    Ok(mu.atoms.iter().map(|a| a.weight * problem.lagrangian(a.node, &a.velocity)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    Indicator,
    Random,
}

#[derive(Debug, Clone, Serialize)]
pub struct HolonomicReport {
    pub residual: f64,
    /// Maximum over the indicator basis alone.
    pub indicator_residual: f64,
    pub test_functions: usize,
    /// Family of the test function attaining the residual.
    pub worst: BasisKind,
}

/// Largest normalized `|sum weight * (Delta phi(node) . velocity)|` over all
/// indicator functions of nodes and `n_tests` random grid functions.
pub fn holonomic_residual(
    problem: &LatticeProblem,
    mu: &DiscreteMatherMeasure,
    n_tests: usize,
    seed: u64,
) -> Result<HolonomicReport> {
    mu.check(problem)?;
    if n_tests == 0 {
        return Err(KamError::argument("holonomic check needs at least one random test"));
    }
    let lat = problem.lattice();
    let scale = 1.0 + mu.mean_speed();

    // indicator of y: the pairing at x is the generator entry Q_{x,y}(v)
    let mut flow = vec![0.0; problem.node_count()];
    for a in &mu.atoms {
        let row = row_at(lat, a.node, &a.velocity);
        for &(y, r) in &row.entries {
            flow[y] += a.weight * r;
            flow[a.node] -= a.weight * r;
        }
    }
    let indicator = flow.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random = 0.0f64;
    for _ in 0..n_tests {
        let phi: Vec<f64> = (0..problem.node_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sup = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let total: f64 = mu
            .atoms
            .iter()
            .map(|a| a.weight * pair_dot_unchecked(&gradient_at(lat, &phi, a.node), &a.velocity))
            .sum();
        random = random.max(total.abs() / (sup * scale));
    }
    let (residual, worst) = if indicator >= random {
        (indicator, BasisKind::Indicator)
    } else {
        (random, BasisKind::Random)
    };
    Ok(HolonomicReport {
        residual,
        indicator_residual: indicator,
        test_functions: problem.node_count() + n_tests,
        worst,
    })
}

/// Symmetric per-axis velocity values; the LP uses their Cartesian product.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityGrid {
    values: Vec<f64>,
}

impl VelocityGrid {
    pub fn new(values: &[f64]) -> Result<Self> {
        let mut v: Vec<f64> = values.to_vec();
        if v.is_empty() || v.iter().any(|w| !w.is_finite()) {
            return Err(KamError::config("velocity grid needs finite values"));
        }
        v.sort_by(f64::total_cmp);
        v.dedup();
        let symmetric = v.iter().all(|&w| v.iter().any(|&u| (u + w).abs() <= 1e-12 * (1.0 + w.abs())));
        if !symmetric {
            return Err(KamError::config("velocity grid must be symmetric about 0"));
        }
        Ok(VelocityGrid { values: v })
    }

    /// `-max, -max + step, ..., max`, rounded to the step.
    pub fn uniform(step: f64, max: f64) -> Result<Self> {
        if !(step > 0.0) || !(max >= 0.0) {
            return Err(KamError::config("velocity grid needs step > 0 and max >= 0"));
        }
        let k = (max / step + 1e-9).floor() as i64;
        let values: Vec<f64> = (-k..=k).map(|i| i as f64 * step).collect();
        VelocityGrid::new(&values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Largest LP the dense simplex accepts.
pub const MAX_LP_VARIABLES: usize = 50_000;

#[derive(Debug, Clone, Serialize)]
pub struct LpCertificate {
    pub value: f64,
    pub dual_residual: f64,
    pub primal_residual: f64,
    pub variables: usize,
    pub constraints: usize,
    pub pivots: usize,
}

#[derive(Debug, Clone)]
pub struct LpMatherResult {
    pub certificate: LpCertificate,
    pub measure: DiscreteMatherMeasure,
}

fn velocity_product(values: &[f64], dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |&w| {
                    let mut p = prefix.clone();
                    p.push(w);
                    p
                })
            })
            .collect();
    }
    out
}

/// Minimizes the action over holonomic probability measures supported on
/// `grid^d` at every node, plus `policy(x)` at node `x` when given.
pub fn lp_mather_oracle(
    problem: &LatticeProblem,
    grid: &VelocityGrid,
    policy: Option<&StationaryPolicy>,
) -> Result<LpMatherResult> {
    let lat = problem.lattice();
    let n = problem.node_count();
    let d = problem.dim();
    let product = velocity_product(grid.values(), d);

    let mut columns: Vec<(usize, Vec<f64>)> = Vec::new();
    for x in 0..n {
        for v in &product {
            columns.push((x, v.clone()));
        }
        if let Some(p) = policy {
            let v = p.get(x);
            if !product.iter().any(|u| u.as_slice() == v) {
                columns.push((x, v.to_vec()));
            }
        }
    }
    if columns.len() > MAX_LP_VARIABLES {
        return Err(KamError::config(format!(
            "Mather LP would have {} variables, limit is {MAX_LP_VARIABLES}",
            columns.len()
        )));
    }

    // holonomic rows for all nodes but the last (their sum vanishes), then mass
    let rows = n;
    let mut a = vec![vec![0.0; columns.len()]; rows];
    let mut cost = Vec::with_capacity(columns.len());
    for (j, (x, v)) in columns.iter().enumerate() {
        cost.push(problem.lagrangian(*x, v));
        let row = row_at(lat, *x, v);
        for &(y, r) in &row.entries {
            if y < n - 1 {
                a[y][j] += r;
            }
            if *x < n - 1 {
                a[*x][j] -= r;
            }
        }
        a[rows - 1][j] = 1.0;
    }
    let mut b = vec![0.0; rows];
    b[rows - 1] = 1.0;

    let sol = solve_lp(&cost, &a, &b).map_err(|e| match e {
        KamError::Lp(_) => KamError::Internal(format!("Mather LP failed: {e}")),
        other => other,
    })?;
    let atoms: Vec<Atom> = columns
        .iter()
        .zip(&sol.x)
        .filter(|(_, &w)| w > 1e-14)
        .map(|((x, v), &w)| Atom {
            node: *x,
            velocity: v.clone(),
            weight: w,
        })
        .collect();
    let total: f64 = atoms.iter().map(|a| a.weight).sum();
    let atoms = atoms
        .into_iter()
        .map(|a| Atom {
            weight: a.weight / total,
            ..a
        })
        .collect();
    Ok(LpMatherResult {
        certificate: LpCertificate {
            value: sol.value,
            dual_residual: sol.dual_residual,
            primal_residual: sol.primal_residual,
            variables: columns.len(),
            constraints: rows,
            pivots: sol.pivots,
        },
        measure: DiscreteMatherMeasure::new(d, atoms)?,
    })
}

/// Atoms merged into torus cells (`cells` per axis) times velocity cells of
/// side `velocity_cell`; each bin sits at its cell centers.
fn binned(lat: &Lattice, mu: &DiscreteMatherMeasure, cells: usize, velocity_cell: f64) -> Vec<(TorusPoint, Vec<f64>, f64)> {
    let mut bins: BTreeMap<(Vec<usize>, Vec<i64>), f64> = BTreeMap::new();
    for a in &mu.atoms {
        let x = lat.point(a.node);
        let cx: Vec<usize> = x.coords().iter().map(|&c| ((c * cells as f64).floor() as usize).min(cells - 1)).collect();
        let cv: Vec<i64> = a.velocity.iter().map(|&w| (w / velocity_cell).round() as i64).collect();
        *bins.entry((cx, cv)).or_insert(0.0) += a.weight;
    }
    bins.into_iter()
        .map(|((cx, cv), w)| {
            let x: Vec<f64> = cx.iter().map(|&c| (c as f64 + 0.5) / cells as f64).collect();
            let v: Vec<f64> = cv.iter().map(|&c| c as f64 * velocity_cell).collect();
            (TorusPoint::new(&x), v, w)
        })
        .collect()
}

/// Bounded-Lipschitz distance between two binned measures, possibly on
/// different lattices: the supremum of `int f d(mu - nu)` over `|f| <= 1`,
/// `Lip(f) <= 1` for the metric `|x - y| + |v - w|`. On finite supports this
/// is optimal transport with cost `min(metric, 2)`, solved as an LP.
pub fn bounded_lipschitz_distance(
    lat_a: &Lattice,
    a: &DiscreteMatherMeasure,
    lat_b: &Lattice,
    b: &DiscreteMatherMeasure,
    cells: usize,
    velocity_cell: f64,
) -> Result<f64> {
    if a.dim() != b.dim() || lat_a.dim() != a.dim() || lat_b.dim() != b.dim() {
        return Err(KamError::argument("measures of different dimensions"));
    }
    if cells == 0 || !(velocity_cell > 0.0) {
        return Err(KamError::argument("binning needs cells >= 1 and velocity_cell > 0"));
    }
    let pa = binned(lat_a, a, cells, velocity_cell);
    let pb = binned(lat_b, b, cells, velocity_cell);
    let (s, t) = (pa.len(), pb.len());
    let mut cost = Vec::with_capacity(s * t);
    for (xa, va, _) in &pa {
        for (xb, vb, _) in &pb {
            let dv: f64 = va.iter().zip(vb).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            cost.push((wrap_distance(xa, xb)? + dv).min(2.0));
        }
    }
    let mut rows = vec![vec![0.0; s * t]; s + t];
    let mut rhs = Vec::with_capacity(s + t);
    for i in 0..s {
        for j in 0..t {
            rows[i][i * t + j] = 1.0;
            rows[s + j][i * t + j] = 1.0;
        }
        rhs.push(pa[i].2);
    }
    rhs.extend(pb.iter().map(|p| p.2));
    Ok(solve_lp(&cost, &rows, &rhs)?.value.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discounted::SolverConfig;
    use crate::lagrangian::{LagrangianSpec, Potential};
    use crate::weak_kam::{solve_weak_kam, ContinuationSchedule};

    fn mechanical(d: usize, n: usize, potential: Potential) -> LatticeProblem {
        LatticeProblem::new(Lattice::new(d, n).unwrap(), LagrangianSpec::mechanical(d, potential).unwrap()).unwrap()
    }

    #[test]
    fn zero_policy_gives_uniform_measure() {
        let p = mechanical(1, 8, Potential::zero());
        let mu = mather_from_policy(&p, &StationaryPolicy::zero(p.lattice())).unwrap();
        assert_eq!(mu.atoms().len(), 8);
        assert!(mu.atoms().iter().all(|a| (a.weight - 0.125).abs() < 1e-15 && a.velocity == [0.0]));
        assert_eq!(action(&p, &mu).unwrap(), 0.0);
        assert_eq!(holonomic_residual(&p, &mu, 5, 1).unwrap().residual, 0.0);
    }

    #[test]
    fn two_node_instance() {
        let p = mechanical(1, 2, Potential::cosine(&[1], 1.0, 0.0));
        let policy = StationaryPolicy::from_flat(p.lattice(), vec![2.0, 0.0]).unwrap();
        let mu = mather_from_policy(&p, &policy).unwrap();
        assert_eq!(mu.atoms(), &[Atom { node: 1, velocity: vec![0.0], weight: 1.0 }]);
        assert!((action(&p, &mu).unwrap() + 1.0).abs() < 1e-15);
        let grid = VelocityGrid::uniform(1.0, 2.0).unwrap();
        let lp = lp_mather_oracle(&p, &grid, None).unwrap();
        assert!((lp.certificate.value + 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_moving_atom_is_not_holonomic() {
        let p = mechanical(1, 10, Potential::zero());
        let mu = DiscreteMatherMeasure::new(1, vec![Atom { node: 3, velocity: vec![0.5], weight: 1.0 }]).unwrap();
        let r = holonomic_residual(&p, &mu, 3, 2).unwrap();
        // indicator at the node itself: N |v| / (1 + |v|)
        assert!((r.indicator_residual - 10.0 * 0.5 / 1.5).abs() < 1e-12);
        assert!(r.residual >= r.indicator_residual);
    }

    #[test]
    fn policy_measure_attains_minus_h_bar() {
        let p = mechanical(1, 16, Potential::cosine(&[1], 1.0, 0.7));
        let sol = solve_weak_kam(&p, &ContinuationSchedule::default(), &SolverConfig::default()).unwrap();
        let mu = mather_from_policy(&p, &sol.policy).unwrap();
        assert!(holonomic_residual(&p, &mu, 20, 3).unwrap().residual <= 1e-9);
        assert!((action(&p, &mu).unwrap() + sol.h_bar).abs() <= 1e-8);
        assert!(mu.max_speed() <= p.constants().unwrap().c5);
    }

    #[test]
    fn random_policy_measures_are_holonomic_and_mixtures_stay_so() {
        let p = mechanical(2, 5, Potential::cosine(&[1, 0], 1.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut make = || {
            let v: Vec<f64> = (0..50).map(|_| rng.random_range(-2.0..2.0)).collect();
            mather_from_policy(&p, &StationaryPolicy::from_flat(p.lattice(), v).unwrap()).unwrap()
        };
        let (a, b) = (make(), make());
        let ra = holonomic_residual(&p, &a, 10, 4).unwrap().residual;
        let rb = holonomic_residual(&p, &b, 10, 4).unwrap().residual;
        let rm = holonomic_residual(&p, &a.mix(&b, 0.3).unwrap(), 10, 4).unwrap().residual;
        assert!(ra <= 1e-9 && rb <= 1e-9 && rm <= 1e-9);
        let la = action(&p, &a).unwrap();
        let lb = action(&p, &b).unwrap();
        let lm = action(&p, &a.mix(&b, 0.5).unwrap()).unwrap();
        assert!((lm - 0.5 * (la + lb)).abs() < 1e-12);
    }

    #[test]
    fn lp_sandwich_small() {
        let p = mechanical(1, 8, Potential::cosine(&[1], 1.0, 0.7));
        let sol = solve_weak_kam(&p, &ContinuationSchedule::default(), &SolverConfig::default()).unwrap();
        let grid = VelocityGrid::uniform(0.25, 3.0).unwrap();
        let lp = lp_mather_oracle(&p, &grid, Some(&sol.policy)).unwrap();
        assert!((lp.certificate.value + sol.h_bar).abs() <= 1e-6);
        assert!(lp.certificate.dual_residual <= 1e-9);
        assert!(holonomic_residual(&p, &lp.measure, 5, 1).unwrap().residual <= 1e-9);
    }

    #[test]
    fn lp_free_particle_and_limits() {
        let p = mechanical(1, 6, Potential::zero());
        let lp = lp_mather_oracle(&p, &VelocityGrid::uniform(1.0, 1.0).unwrap(), None).unwrap();
        assert!(lp.certificate.value.abs() < 1e-14);
        assert!(VelocityGrid::new(&[0.0, 1.0]).is_err());
        let big = mechanical(2, 40, Potential::zero());
        assert!(matches!(
            lp_mather_oracle(&big, &VelocityGrid::uniform(0.5, 2.0).unwrap(), None),
            Err(KamError::Config(_))
        ));
    }

    #[test]
    fn bounded_lipschitz_examples() {
        let lat = Lattice::new(1, 8).unwrap();
        let dirac = |node: usize, v: f64| DiscreteMatherMeasure::new(1, vec![Atom { node, velocity: vec![v], weight: 1.0 }]).unwrap();
        let d0 = bounded_lipschitz_distance(&lat, &dirac(2, 0.0), &lat, &dirac(2, 0.0), 8, 0.1).unwrap();
        assert!(d0.abs() < 1e-15);
        // torus cells 1/8 apart and velocities 0.5 apart
        let d1 = bounded_lipschitz_distance(&lat, &dirac(2, 0.0), &lat, &dirac(3, 0.5), 8, 0.1).unwrap();
        assert!((d1 - 0.625).abs() < 1e-12);
        let far = bounded_lipschitz_distance(&lat, &dirac(0, -3.0), &lat, &dirac(4, 3.0), 8, 0.1).unwrap();
        assert!((far - 2.0).abs() < 1e-12);
        let lat2 = Lattice::new(1, 16).unwrap();
        let same = bounded_lipschitz_distance(&lat, &dirac(4, 0.0), &lat2, &dirac(8, 0.0), 8, 0.1).unwrap();
        assert!(same.abs() < 1e-15);
    }
}
