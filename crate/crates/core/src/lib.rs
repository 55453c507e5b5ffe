//! # mfg-sinkhorn
//!
//! Grid solver for N-population second-order mean field games with
//! non-local repulsive interactions, written as a time-discretized entropic
//! (multi-marginal) transport problem and solved with a semi-implicit
//! multi-population Sinkhorn iteration.
//!
//! Each population `i` is described by a path plan on `K + 1` time instants
//! whose density with respect to a Markovian heat-kernel reference factorizes
//! as `exp(u_0(x_0)) * ... * exp(u_K(x_K))`. The solver only ever stores the
//! `N * (K + 1)` potentials, forward/backward messages and marginals; the
//! plan itself is never materialized outside the [`oracle`] module.
//!
//! ## Layout
//!
//! | module | contents |
//! |--------|----------|
//! | [`grid`] | cell-centered grids, mass/scalar fields, separable heat kernel |
//! | [`interaction`] | interaction kernels `V^{i,j}` and their convolution with densities |
//! | [`mmot`] | potentials, forward/backward messages, marginals, plan entropy |
//! | [`solver`] | the outer Sinkhorn loop |
//! | [`diagnostics`] | energies, Hopf-Cole / Fokker-Planck cross-checks, figure metrics |
//! | [`oracle`] | brute-force dense-tensor references for tiny instances |
//! | [`config`], [`output`], [`runner`] | experiment files, frames, manifest and the CLI driver |
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64`, which is what the
//! command-line driver and the on-disk formats use.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod interaction;
pub mod mmot;
pub mod oracle;
pub mod output;
pub mod runner;
pub mod scalar;
pub mod solver;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Grid = grid::GridSpec<f64>;
pub type Mass = grid::MassField<f64>;
pub type Potential = grid::ScalarField<f64>;
pub type HeatKernel = grid::SeparableKernel<f64>;
pub type Kernel = interaction::InteractionKernel<f64>;
pub type Interactions = interaction::InteractionMatrix<f64>;
pub type Problem = solver::ProblemSpec<f64>;
pub type Solver = solver::Solver<f64>;
pub type Marginals = mmot::MarginalSet<f64>;
pub type Potentials = mmot::PotentialStack<f64>;
pub type Energies = diagnostics::EnergyBreakdown<f64>;
