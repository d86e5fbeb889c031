//! Linear systems on the transition graph of a policy.
//!
//! Every system solved here has the form
//! `diag[x] u[x] - sum_y coeff(x,y) u[y] = rhs[x]` with `coeff >= 0`, one row
//! per node and at most `2d` couplings. Strongly connected components are
//! solved sinks-first, so acyclic parts cost one substitution per node and
//! only genuine cycles reach a dense LU (or Gauss-Seidel above
//! [`DENSE_LIMIT`]).

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::error::{KamError, Result};

/// Largest component handed to the dense LU.
pub(crate) const DENSE_LIMIT: usize = 2000;

pub(crate) type Adjacency = Vec<Vec<(usize, f64)>>;

/// Strongly connected components in reverse topological order: every edge
/// leaving a component points to one listed earlier.
pub(crate) struct Components {
    pub members: Vec<Vec<usize>>,
    pub component_of: Vec<usize>,
    /// No edge leaves the component.
    pub closed: Vec<bool>,
}

pub(crate) fn components(adj: &Adjacency) -> Components {
    let n = adj.len();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, n * 2);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for (x, row) in adj.iter().enumerate() {
        for &(y, c) in row {
            if c > 0.0 && y != x {
                graph.add_edge(nodes[x], nodes[y], ());
            }
        }
    }
    let members: Vec<Vec<usize>> = tarjan_scc(&graph)
        .into_iter()
        .map(|c| {
            let mut v: Vec<usize> = c.into_iter().map(|i| i.index()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    let mut component_of = vec![0; n];
    for (k, comp) in members.iter().enumerate() {
        for &x in comp {
            component_of[x] = k;
        }
    }
    let closed = members
        .iter()
        .enumerate()
        .map(|(k, comp)| {
            comp.iter()
                .all(|&x| adj[x].iter().all(|&(y, c)| c <= 0.0 || component_of[y] == k))
        })
        .collect();
    Components {
        members,
        component_of,
        closed,
    }
}

/// Reverses every edge, keeping coefficients.
pub(crate) fn transpose(adj: &Adjacency) -> Adjacency {
    let mut out: Adjacency = vec![Vec::new(); adj.len()];
    for (x, row) in adj.iter().enumerate() {
        for &(y, c) in row {
            out[y].push((x, c));
        }
    }
    out
}

/// Solves for the unknown nodes (`known[x] == None`); known nodes enter the
/// right-hand side.
pub(crate) fn solve(
    diag: &[f64],
    adj: &Adjacency,
    rhs: &[f64],
    known: &[Option<f64>],
    max_sweeps: usize,
) -> Result<Vec<f64>> {
    let n = adj.len();
    let comps = components(adj);
    let mut u: Vec<f64> = known.iter().map(|k| k.unwrap_or(0.0)).collect();
    let mut done: Vec<bool> = known.iter().map(Option::is_some).collect();
    debug_assert_eq!(diag.len(), n);

    for comp in &comps.members {
        let unknown: Vec<usize> = comp.iter().copied().filter(|&x| !done[x]).collect();
        match unknown.len() {
            0 => continue,
            1 => {
                let x = unknown[0];
                let mut acc = rhs[x];
                for &(y, c) in &adj[x] {
                    if y != x {
                        acc += c * u[y];
                    }
                }
                let d = diag[x] - self_coupling(adj, x);
                if d == 0.0 {
                    return Err(KamError::Internal(format!("singular row at node {x}")));
                }
                u[x] = acc / d;
            }
            s if s <= DENSE_LIMIT => {
                let local = local_index(&unknown);
                let mut a = DMatrix::<f64>::zeros(s, s);
                let mut b = DVector::<f64>::zeros(s);
                for (i, &x) in unknown.iter().enumerate() {
                    a[(i, i)] += diag[x];
                    b[i] = rhs[x];
                    for &(y, c) in &adj[x] {
                        match local.get(&y) {
                            Some(&j) => a[(i, j)] -= c,
                            None => b[i] += c * u[y],
                        }
                    }
                }
                let sol = a
                    .lu()
                    .solve(&b)
                    .ok_or_else(|| KamError::Internal("singular component system".into()))?;
                for (i, &x) in unknown.iter().enumerate() {
                    u[x] = sol[i];
                }
            }
            _ => gauss_seidel(diag, adj, rhs, &unknown, &mut u, max_sweeps)?,
        }
        for &x in &unknown {
            done[x] = true;
        }
    }
    Ok(u)
}

fn self_coupling(adj: &Adjacency, x: usize) -> f64 {
    adj[x].iter().filter(|&&(y, _)| y == x).map(|&(_, c)| c).sum()
}

fn local_index(nodes: &[usize]) -> std::collections::HashMap<usize, usize> {
    nodes.iter().enumerate().map(|(i, &x)| (x, i)).collect()
}

fn gauss_seidel(
    diag: &[f64],
    adj: &Adjacency,
    rhs: &[f64],
    nodes: &[usize],
    u: &mut [f64],
    max_sweeps: usize,
) -> Result<()> {
    let mut last_change = f64::INFINITY;
    for _ in 0..max_sweeps {
        let mut change = 0.0f64;
        let mut scale = 0.0f64;
        for &x in nodes {
            let mut acc = rhs[x];
            for &(y, c) in &adj[x] {
                if y != x {
                    acc += c * u[y];
                }
            }
            let next = acc / (diag[x] - self_coupling(adj, x));
            change = change.max((next - u[x]).abs());
            scale = scale.max(next.abs());
            u[x] = next;
        }
        last_change = change;
        if change <= 1e-15 * (1.0 + scale) {
            return Ok(());
        }
    }
    Err(KamError::convergence("Gauss-Seidel sweep", last_change, max_sweeps))
}

/// Dense solve of `A x = b`; `None` when singular.
pub(crate) fn dense_solve(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    a.lu().solve(&b)
}
