//! The flat torus, the regular lattice `(hZ)^d / Z^d` and its one-sided
//! finite differences.
//!
//! Nodes are addressed either by a [`NodeIndex`] (one integer per axis) or by
//! a linear id in row-major order, last axis fastest. Node coordinates are
//! always recomputed as `idx * h`; nothing stores accumulated floats.

use smallvec::SmallVec;

use crate::error::{KamError, Result};

/// Inline storage for per-axis data; dimensions above three spill to the heap.
pub type AxisVec<T> = SmallVec<[T; 3]>;

/// A point of the torus, stored as its canonical representative in `[0,1)^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusPoint {
    coords: AxisVec<f64>,
}

impl TorusPoint {
    /// Projects an arbitrary point of `R^d` onto the torus.
    pub fn new(coords: &[f64]) -> Self {
        TorusPoint {
            coords: coords.iter().map(|&c| canonical(c)).collect(),
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// Canonical representative of `x mod 1` in `[0,1)`.
pub fn canonical(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    // rem_euclid rounds -1e-17 up to exactly 1.0
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Torus distance: minimum Euclidean norm of `x - y + n` over shifts
/// `n in {-1,0,1}^d`.
pub fn wrap_distance(x: &TorusPoint, y: &TorusPoint) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(KamError::argument(format!(
            "dimension mismatch: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(shortest_displacement(x.coords(), y.coords())
        .iter()
        .map(|d| d * d)
        .sum::<f64>()
        .sqrt())
}

/// The displacement `x - y + n` of minimal norm over `n in {-1,0,1}^d`.
///
/// The squared norm is a sum of per-axis terms, so enumerating all `3^d`
/// shifts reduces to picking the best shift on each axis independently.
pub fn shortest_displacement(x: &[f64], y: &[f64]) -> AxisVec<f64> {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| {
            let base = a - b;
            [base - 1.0, base, base + 1.0]
                .into_iter()
                .fold(base, |best, c| if c.abs() < best.abs() { c } else { best })
        })
        .collect()
}

/// The lattice `Lambda_N` on the `d`-dimensional torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lattice {
    dim: usize,
    n: usize,
}

/// Integer coordinates of a lattice node, each in `0..N`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeIndex(pub AxisVec<usize>);

impl NodeIndex {
    pub fn new(idx: &[usize]) -> Self {
        NodeIndex(idx.iter().copied().collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// Step direction along an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dir {
    Plus,
    Minus,
}

impl Lattice {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if dim == 0 {
            return Err(KamError::argument("lattice dimension must be at least 1"));
        }
        if n < 2 {
            return Err(KamError::argument(format!(
                "lattice resolution must be at least 2, got {n}"
            )));
        }
        let too_big = (0..dim).try_fold(1usize, |acc, _| acc.checked_mul(n)).is_none();
        if too_big {
            return Err(KamError::argument("lattice node count overflows usize"));
        }
        Ok(Lattice { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Resolution `N`.
    pub fn resolution(&self) -> usize {
        self.n
    }

    /// Spacing `h = 1/N`.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn node_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Distance in linear ids between neighbors along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    pub fn linear(&self, idx: &NodeIndex) -> usize {
        idx.0.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn index(&self, mut node: usize) -> NodeIndex {
        let mut idx: AxisVec<usize> = SmallVec::from_elem(0, self.dim);
        for slot in idx.iter_mut().rev() {
            *slot = node % self.n;
            node /= self.n;
        }
        NodeIndex(idx)
    }

    /// Integer coordinate of a linear node id along one axis.
    pub fn coord(&self, node: usize, axis: usize) -> usize {
        (node / self.stride(axis)) % self.n
    }

    /// Position of a node on the torus.
    pub fn point(&self, node: usize) -> TorusPoint {
        let h = self.h();
        TorusPoint {
            coords: (0..self.dim).map(|a| self.coord(node, a) as f64 * h).collect(),
        }
    }

    /// Linear id of the neighbor one step along `axis` with wrap-around.
    pub fn step(&self, node: usize, axis: usize, dir: Dir) -> usize {
        let stride = self.stride(axis);
        let c = self.coord(node, axis);
        match dir {
            Dir::Plus if c + 1 == self.n => node - c * stride,
            Dir::Plus => node + stride,
            Dir::Minus if c == 0 => node + (self.n - 1) * stride,
            Dir::Minus => node - stride,
        }
    }

    /// Neighbor of `i` along `axis` (zero-based) in direction `dir`.
    pub fn neighbor(&self, i: &NodeIndex, axis: usize, dir: Dir) -> Result<NodeIndex> {
        if axis >= self.dim {
            return Err(KamError::argument(format!(
                "axis {axis} out of range for dimension {}",
                self.dim
            )));
        }
        let mut out = i.clone();
        out.0[axis] = match dir {
            Dir::Plus => (i.0[axis] + 1) % self.n,
            Dir::Minus => (i.0[axis] + self.n - 1) % self.n,
        };
        Ok(out)
    }

    /// The lattice node nearest to a torus point (ties round up).
    pub fn nearest_node(&self, x: &TorusPoint) -> usize {
        let n = self.n as f64;
        x.coords()
            .iter()
            .fold(0, |acc, &c| acc * self.n + ((c * n).round() as usize % self.n))
    }
}

/// One real value per lattice node in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction(Vec<f64>);

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Self {
        GridFunction(values)
    }

    pub fn zeros(lat: &Lattice) -> Self {
        GridFunction(vec![0.0; lat.node_count()])
    }

    pub fn from_fn(lat: &Lattice, mut f: impl FnMut(&TorusPoint) -> f64) -> Self {
        GridFunction((0..lat.node_count()).map(|i| f(&lat.point(i))).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check(&self, lat: &Lattice) -> Result<()> {
        if self.0.len() != lat.node_count() {
            return Err(KamError::argument(format!(
                "grid function has {} values, lattice has {} nodes",
                self.0.len(),
                lat.node_count()
            )));
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for GridFunction {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Forward/backward difference pairs `(xi_i^+, xi_i^-)` per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteGradient {
    pub pairs: AxisVec<(f64, f64)>,
}

impl DiscreteGradient {
    pub fn new(pairs: &[(f64, f64)]) -> Self {
        DiscreteGradient {
            pairs: pairs.iter().copied().collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.pairs.len()
    }

    /// Componentwise negation, giving `(-Delta_N) phi`.
    pub fn negated(&self) -> Self {
        DiscreteGradient {
            pairs: self.pairs.iter().map(|&(p, m)| (-p, -m)).collect(),
        }
    }
}

/// `Delta_N phi` at a node.
pub fn discrete_gradient(lat: &Lattice, phi: &GridFunction, i: &NodeIndex) -> Result<DiscreteGradient> {
    phi.check(lat)?;
    Ok(gradient_at(lat, phi.values(), lat.linear(i)))
}

/// `Delta_N phi` at a linear node id; the slice must have `N^d` entries.
pub(crate) fn gradient_at(lat: &Lattice, phi: &[f64], node: usize) -> DiscreteGradient {
    let inv_h = lat.resolution() as f64;
    let here = phi[node];
    DiscreteGradient {
        pairs: (0..lat.dim())
            .map(|a| {
                let up = phi[lat.step(node, a, Dir::Plus)];
                let down = phi[lat.step(node, a, Dir::Minus)];
                ((up - here) * inv_h, (down - here) * inv_h)
            })
            .collect(),
    }
}

/// `(-Delta_N) phi` at a linear node id.
pub(crate) fn neg_gradient_at(lat: &Lattice, phi: &[f64], node: usize) -> DiscreteGradient {
    let inv_h = lat.resolution() as f64;
    let here = phi[node];
    DiscreteGradient {
        pairs: (0..lat.dim())
            .map(|a| {
                let up = phi[lat.step(node, a, Dir::Plus)];
                let down = phi[lat.step(node, a, Dir::Minus)];
                ((here - up) * inv_h, (here - down) * inv_h)
            })
            .collect(),
    }
}

/// `xi . v = sum_i xi_i^+ v_i^+ + xi_i^- v_i^-` with `v^+ = max(v,0)`,
/// `v^- = max(-v,0)`.
pub fn pair_dot(xi: &DiscreteGradient, v: &[f64]) -> Result<f64> {
    if xi.dim() != v.len() {
        return Err(KamError::argument(format!(
            "pairing arity mismatch: gradient has {} axes, velocity {}",
            xi.dim(),
            v.len()
        )));
    }
    Ok(pair_dot_unchecked(xi, v))
}

pub(crate) fn pair_dot_unchecked(xi: &DiscreteGradient, v: &[f64]) -> f64 {
    xi.pairs
        .iter()
        .zip(v)
        .map(|(&(p, m), &vi)| p * vi.max(0.0) + m * (-vi).max(0.0))
        .sum()
}
