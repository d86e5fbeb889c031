//! Lattice Markov-chain discretization of stationary Hamilton-Jacobi and weak
//! KAM equations on the flat torus.
//!
//! The torus is replaced by the lattice `(hZ)^d / Z^d`, velocities by jump
//! rates of a continuous-time Markov chain, and the PDEs by finite Bellman
//! systems. The crate solves the discounted and ergodic (weak KAM) systems,
//! builds discrete Mather measures, and checks the discretization against
//! Monte-Carlo simulation of the chain.

pub mod coupling;
pub mod ctmc;
pub mod discounted;
pub mod error;
pub mod harness;
pub mod lagrangian;
pub mod lattice;
pub mod mather;
pub mod problem;
pub mod simplex;
mod sparse;
pub mod weak_kam;

pub use error::{KamError, Result};
pub use lagrangian::{AxisKinetic, LagrangianSpec, Potential};
pub use lattice::{GridFunction, Lattice, NodeIndex, TorusPoint};
pub use problem::LatticeProblem;

/// Maps `f` over `0..n`, in parallel with the `parallel` feature. Output order
/// is the index order either way.
pub(crate) fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
