//! Generators `Q^N(v)` of the lattice Markov chain, their action on grid
//! functions, forward Kolmogorov evolution and stationary distributions.

use nalgebra::{DMatrix, DVector};
use smallvec::SmallVec;

use crate::error::{KamError, Result};
use crate::lattice::{Dir, GridFunction, Lattice, NodeIndex};
use crate::sparse::{self, Adjacency, DENSE_LIMIT};

/// Off-diagonal rates out of one node. The diagonal is minus their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorRow {
    pub node: usize,
    pub entries: SmallVec<[(usize, f64); 6]>,
}

impl GeneratorRow {
    pub fn exit_rate(&self) -> f64 {
        self.entries.iter().map(|&(_, r)| r).sum()
    }

    pub fn diagonal(&self) -> f64 {
        -self.exit_rate()
    }

    /// `Q_{x,y}` including the diagonal.
    pub fn entry(&self, y: usize) -> f64 {
        let off: f64 = self.entries.iter().filter(|&&(t, _)| t == y).map(|&(_, r)| r).sum();
        if y == self.node {
            off + self.diagonal()
        } else {
            off
        }
    }
}

/// Row of `Q^N(v)` at `i`: rate `N|v_i|` towards the `sgn(v_i)` neighbor on
/// each axis with `v_i != 0`.
pub fn generator_row(lat: &Lattice, i: &NodeIndex, v: &[f64]) -> Result<GeneratorRow> {
    if v.len() != lat.dim() || i.as_slice().len() != lat.dim() {
        return Err(KamError::argument("velocity or index arity does not match the lattice"));
    }
    Ok(row_at(lat, lat.linear(i), v))
}

pub(crate) fn row_at(lat: &Lattice, node: usize, v: &[f64]) -> GeneratorRow {
    let inv_h = lat.resolution() as f64;
    let entries = v
        .iter()
        .enumerate()
        .filter(|&(_, &vi)| vi != 0.0)
        .map(|(axis, &vi)| {
            let dir = if vi > 0.0 { Dir::Plus } else { Dir::Minus };
            (lat.step(node, axis, dir), inv_h * vi.abs())
        })
        .collect();
    GeneratorRow { node, entries }
}

/// One velocity per node.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPolicy {
    dim: usize,
    velocities: Vec<f64>,
}

impl StationaryPolicy {
    pub fn zero(lat: &Lattice) -> Self {
        StationaryPolicy {
            dim: lat.dim(),
            velocities: vec![0.0; lat.node_count() * lat.dim()],
        }
    }

    pub fn constant(lat: &Lattice, v: &[f64]) -> Result<Self> {
        if v.len() != lat.dim() {
            return Err(KamError::argument("constant velocity arity does not match the lattice"));
        }
        Self::from_flat(lat, v.repeat(lat.node_count()))
    }

    /// Velocities flattened node-major.
    pub fn from_flat(lat: &Lattice, velocities: Vec<f64>) -> Result<Self> {
        if velocities.len() != lat.node_count() * lat.dim() {
            return Err(KamError::argument(format!(
                "policy has {} entries, expected {}",
                velocities.len(),
                lat.node_count() * lat.dim()
            )));
        }
        if velocities.iter().any(|v| !v.is_finite()) {
            return Err(KamError::argument("policy velocities must be finite"));
        }
        Ok(StationaryPolicy {
            dim: lat.dim(),
            velocities,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.velocities.len() / self.dim
    }

    pub fn get(&self, node: usize) -> &[f64] {
        &self.velocities[node * self.dim..(node + 1) * self.dim]
    }

    pub(crate) fn set(&mut self, node: usize, v: &[f64]) {
        self.velocities[node * self.dim..(node + 1) * self.dim].copy_from_slice(v);
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.velocities
    }

    /// `max_x |pi(x)|` in the Euclidean norm.
    pub fn sup_speed(&self) -> f64 {
        self.velocities
            .chunks(self.dim)
            .map(|v| v.iter().map(|w| w * w).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// `Q^N[pi]`, one row per node.
#[derive(Debug, Clone)]
pub struct PolicyGenerator {
    lattice: Lattice,
    rows: Vec<GeneratorRow>,
}

impl PolicyGenerator {
    pub fn new(lat: &Lattice, policy: &StationaryPolicy) -> Result<Self> {
        if policy.dim() != lat.dim() || policy.node_count() != lat.node_count() {
            return Err(KamError::argument("policy shape does not match the lattice"));
        }
        Ok(PolicyGenerator {
            lattice: *lat,
            rows: (0..lat.node_count()).map(|x| row_at(lat, x, policy.get(x))).collect(),
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn rows(&self) -> &[GeneratorRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Uniformization constant: the largest exit rate.
    pub fn uniformization_rate(&self) -> f64 {
        self.rows.iter().map(GeneratorRow::exit_rate).fold(0.0, f64::max)
    }

    pub(crate) fn adjacency(&self) -> Adjacency {
        self.rows.iter().map(|r| r.entries.to_vec()).collect()
    }

    pub(crate) fn exit_rates(&self) -> Vec<f64> {
        self.rows.iter().map(GeneratorRow::exit_rate).collect()
    }

    /// Row vector times generator: `(m Q)_y`.
    pub fn left_apply(&self, m: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; m.len()];
        for (x, row) in self.rows.iter().enumerate() {
            let mx = m[x];
            if mx == 0.0 {
                continue;
            }
            for &(y, r) in &row.entries {
                out[y] += mx * r;
                out[x] -= mx * r;
            }
        }
        out
    }
}

/// `(Q phi)(x) = sum_y Q_{x,y} phi(y)`.
pub fn apply_generator(q: &PolicyGenerator, phi: &GridFunction) -> Result<GridFunction> {
    if phi.len() != q.len() {
        return Err(KamError::argument("grid function does not match the generator"));
    }
    let v = phi.values();
    Ok(GridFunction::new(
        q.rows
            .iter()
            .map(|row| row.entries.iter().map(|&(y, r)| r * (v[y] - v[row.node])).sum())
            .collect(),
    ))
}

/// Probability weights on the lattice nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(KamError::argument("distribution weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(KamError::argument(format!("distribution sums to {total}, not 1")));
        }
        Ok(Distribution(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Distribution(vec![1.0 / n as f64; n])
    }

    /// Point mass `1_z`.
    pub fn dirac(n: usize, z: usize) -> Self {
        let mut w = vec![0.0; n];
        w[z] = 1.0;
        Distribution(w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    fn renormalized(mut w: Vec<f64>) -> Self {
        for x in w.iter_mut() {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        let total: f64 = w.iter().sum();
        for x in w.iter_mut() {
            *x /= total;
        }
        Distribution(w)
    }
}

const POISSON_TAIL: f64 = 1e-12;
const MAX_POISSON_MEAN: f64 = 32.0;

/// Solves `dm/dt = m Q` over `[0, t]` by uniformization, split into at least
/// `steps` sub-intervals (more when `Lambda_u dt` would exceed 32).
pub fn forward_evolve(q: &PolicyGenerator, m0: &Distribution, t: f64, steps: usize) -> Result<Distribution> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(KamError::argument(format!("evolution time must be >= 0, got {t}")));
    }
    if m0.0.len() != q.len() {
        return Err(KamError::argument("initial distribution does not match the generator"));
    }
    let rate = q.uniformization_rate();
    if rate == 0.0 || t == 0.0 {
        return Ok(m0.clone());
    }
    let steps = steps.max(1).max((rate * t / MAX_POISSON_MEAN).ceil() as usize);
    let dt = t / steps as f64;
    let mean = rate * dt;
    let mut m = m0.0.clone();
    for _ in 0..steps {
        // sum_k e^{-a} a^k / k! * m P^k with P = I + Q / rate
        let mut weight = (-mean).exp();
        let mut cumulative = weight;
        let mut term = m.clone();
        let mut acc: Vec<f64> = term.iter().map(|v| v * weight).collect();
        let mut k = 0usize;
        while cumulative < 1.0 - POISSON_TAIL {
            k += 1;
            let flow = q.left_apply(&term);
            for (t, f) in term.iter_mut().zip(&flow) {
                *t += f / rate;
            }
            weight *= mean / k as f64;
            cumulative += weight;
            for (a, t) in acc.iter_mut().zip(&term) {
                *a += weight * t;
            }
            if k > 10_000 {
                break;
            }
        }
        m = Distribution::renormalized(acc).0;
    }
    Ok(Distribution(m))
}

/// A stationary distribution `m Q = 0`.
///
/// When the chain has several closed classes, the returned one is the limit
/// of the evolution started from the uniform distribution: each class
/// receives the mass that flows into it, spread by its own stationary law.
/// Classes up to the dense limit are solved directly; larger ones fall back
/// to power iteration on the lazy uniformized operator.
pub fn stationary_distribution(q: &PolicyGenerator) -> Result<Distribution> {
    let n = q.len();
    let rate = q.uniformization_rate();
    if rate == 0.0 {
        return Ok(Distribution::uniform(n));
    }
    let adj = q.adjacency();
    let comps = sparse::components(&adj);
    let too_big = comps
        .members
        .iter()
        .zip(&comps.closed)
        .any(|(m, &c)| c && m.len() > DENSE_LIMIT);
    let m = if too_big {
        power_iteration(q, 2_000_000)?
    } else {
        exact_stationary(q, &adj, &comps)?
    };
    let residual = q.left_apply(&m).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if residual > 1e-10 * rate {
        return Err(KamError::convergence("stationary distribution", residual, 0));
    }
    Ok(Distribution(m))
}

fn exact_stationary(q: &PolicyGenerator, adj: &Adjacency, comps: &sparse::Components) -> Result<Vec<f64>> {
    let n = q.len();
    let exit = q.exit_rates();
    let transient: Vec<bool> = (0..n).map(|x| !comps.closed[comps.component_of[x]]).collect();

    // expected occupation times z of transient nodes from the uniform start:
    // z (-Q_TT) = u_T, a system on the reversed graph
    let reversed = sparse::transpose(adj);
    let known: Vec<Option<f64>> = transient.iter().map(|&t| if t { None } else { Some(0.0) }).collect();
    let start = vec![1.0 / n as f64; n];
    let occupation = sparse::solve(&exit, &reversed, &start, &known, 1_000_000)?;

    let mut m = vec![0.0; n];
    for (k, comp) in comps.members.iter().enumerate() {
        if !comps.closed[k] {
            continue;
        }
        let mut mass = comp.len() as f64 / n as f64;
        for x in (0..n).filter(|&x| transient[x]) {
            for &(y, r) in &adj[x] {
                if comps.component_of[y] == k {
                    mass += occupation[x] * r;
                }
            }
        }
        let law = class_law(q, comp)?;
        for (&x, p) in comp.iter().zip(law) {
            m[x] = mass * p;
        }
    }
    Ok(Distribution::renormalized(m).0)
}

/// Stationary law of an irreducible closed class.
fn class_law(q: &PolicyGenerator, comp: &[usize]) -> Result<Vec<f64>> {
    let s = comp.len();
    if s == 1 {
        return Ok(vec![1.0]);
    }
    let local: std::collections::HashMap<usize, usize> = comp.iter().enumerate().map(|(i, &x)| (x, i)).collect();
    // Q_C^T m = 0 with the last equation replaced by sum m = 1
    let mut a = DMatrix::<f64>::zeros(s, s);
    for (i, &x) in comp.iter().enumerate() {
        let row = &q.rows[x];
        for &(y, r) in &row.entries {
            let j = local[&y];
            a[(j, i)] += r;
            a[(i, i)] -= r;
        }
    }
    for j in 0..s {
        a[(s - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(s);
    b[s - 1] = 1.0;
    let sol = sparse::dense_solve(a, b).ok_or_else(|| KamError::Internal("singular class generator".into()))?;
    Ok(sol.iter().map(|&v| v.max(0.0)).collect())
}

fn power_iteration(q: &PolicyGenerator, budget: usize) -> Result<Vec<f64>> {
    let n = q.len();
    let rate = q.uniformization_rate();
    let mut m = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    for _ in 0..budget {
        let flow = q.left_apply(&m);
        residual = flow.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if residual <= 1e-11 * rate {
            return Ok(m);
        }
        // lazy step m <- m (I + Q / (2 rate)) keeps the iteration aperiodic
        for (mi, f) in m.iter_mut().zip(&flow) {
            *mi += 0.5 * f / rate;
        }
        m = Distribution::renormalized(m).0;
    }
    Err(KamError::convergence("stationary power iteration", residual, budget))
}
