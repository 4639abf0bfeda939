//! Reiterated homogenization of monotone parabolic operators with oscillations
//! in `x/eps`, `t/eps` and `x/eps^2`: cell problems, the effective flux, the
//! homogenized and oscillatory solvers, and a harness that compares them.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cell;
pub mod effective;
pub mod error;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod operators;
pub mod orlicz;
pub mod pde;
pub mod solver;
pub mod trig;

pub use cell::{solve_cell, CorrectorSolution};
pub use effective::{effective_flux_q, tabulate_q, CellGrids, ClampPolicy, EffectiveFluxTable, EffectiveParams, MidFluxCache};
pub use error::{Error, Result};
pub use grid::{DomainGrid, Field, Mesh, PeriodicCellGrid, TimeGrid, VectorField};
pub use harness::{ExperimentConfig, ReportRow};
pub use operators::{verify_axioms, AxiomReport, FluxOperator};
pub use orlicz::{luxemburg_norm, DiscreteField, NFunction};
pub use pde::{fine_solve, macro_solve, SolutionHistory, Source};
pub use solver::NewtonOptions;
pub use trig::TrigPoly;
