//! Graph p-Laplacian semi-supervised regression on random geometric graphs.
//!
//! Given `N` labeled points and `n - N` unlabeled samples, the estimators in
//! this crate minimize the discrete p-Dirichlet energy
//! `(1/(ε^p n²)) Σ W_ij |f_i - f_j|^p` over ε-neighborhood graphs, with the
//! labels imposed as hard constraints, as a penalty, or on small balls
//! around each labeled point. The [`harness`] module runs the ε-sweeps used
//! to study when these estimators converge to the continuum p-Laplace
//! solution and when they degenerate into spikes.

// NaN-rejecting comparisons and index loops over several arrays are intended.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod continuum;
pub mod diagnostics;
pub mod energy;
mod envelope;
pub mod error;
pub mod graph;
pub mod harness;
mod power;
pub mod quadrature;
pub mod sampling;
pub mod solver;
pub mod spatial;

pub use energy::{NodeFunction, PinSet};
pub use error::{Error, Result};
pub use graph::{KernelKind, KernelProfile, WeightedGraph};
pub use sampling::{Density, Domain, LabeledPoint, PointCloud};
pub use solver::{Init, SolveOptions, SolveReport};
