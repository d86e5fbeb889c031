use smallvec::SmallVec;

use crate::error::{KamError, Result};
use crate::lagrangian::{diagnostic_constants, DiagnosticConstants, LagrangianSpec};
use crate::lattice::{neg_gradient_at, AxisVec, DiscreteGradient, Lattice};

/// A discrete problem instance: lattice plus Lagrangian, with the potential
/// cached at every node.
#[derive(Debug, Clone)]
pub struct LatticeProblem {
    lattice: Lattice,
    spec: LagrangianSpec,
    node_potential: Vec<f64>,
    node_points: Vec<AxisVec<f64>>,
}

impl LatticeProblem {
    pub fn new(lattice: Lattice, spec: LagrangianSpec) -> Result<Self> {
        if lattice.dim() != spec.dim() {
            return Err(KamError::config(format!(
                "lattice dimension {} does not match Lagrangian dimension {}",
                lattice.dim(),
                spec.dim()
            )));
        }
        let node_points: Vec<AxisVec<f64>> = (0..lattice.node_count())
            .map(|i| SmallVec::from_slice(lattice.point(i).coords()))
            .collect();
        let node_potential = if spec.is_separable() {
            node_points.iter().map(|x| spec.potential().eval(x)).collect()
        } else {
            vec![0.0; lattice.node_count()]
        };
        Ok(LatticeProblem {
            lattice,
            spec,
            node_potential,
            node_points,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn spec(&self) -> &LagrangianSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn node_count(&self) -> usize {
        self.lattice.node_count()
    }

    pub fn node_coords(&self, node: usize) -> &[f64] {
        &self.node_points[node]
    }

    /// `L(x, v)` at a node.
    pub fn lagrangian(&self, node: usize, v: &[f64]) -> f64 {
        if self.spec.is_separable() {
            self.spec.kinetic_energy(v) + self.node_potential[node]
        } else {
            self.spec.eval_raw(&self.node_points[node], v)
        }
    }

    /// `H_N(x, xi)` and its maximizer at a node, optionally with every
    /// velocity component restricted to `[-cap, cap]`.
    pub fn hamiltonian(&self, node: usize, xi: &DiscreteGradient, cap: Option<f64>) -> Result<(f64, AxisVec<f64>)> {
        self.spec
            .lattice_hamiltonian_with_potential(&self.node_points[node], self.node_potential[node], xi, cap)
    }

    /// `H_N(x, (-Delta_N) phi(x))` and its maximizer.
    pub fn hamiltonian_of(&self, phi: &[f64], node: usize, cap: Option<f64>) -> Result<(f64, AxisVec<f64>)> {
        self.hamiltonian(node, &neg_gradient_at(&self.lattice, phi, node), cap)
    }

    pub fn constants(&self) -> Result<DiagnosticConstants> {
        diagnostic_constants(&self.spec, DiagnosticConstants::default_resolution(self.dim()))
    }

    pub(crate) fn check_grid(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.node_count() {
            return Err(KamError::argument(format!(
                "grid function has {} values, lattice has {} nodes",
                values.len(),
                self.node_count()
            )));
        }
        Ok(())
    }
}
