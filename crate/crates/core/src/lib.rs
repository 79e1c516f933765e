//! Level-set methods for convex optimization: solve
//! `minimize φ(x) subject to ρ(Ax − b) ≤ σ` by finding the root of
//! `v(τ) − σ`, where `v(τ) = min{ρ(Ax − b) : φ(x) ≤ τ}`, using inexact
//! secant or Newton steps driven by inner solvers with dual certificates.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod inner;
pub mod linalg;
pub mod misfits;
pub mod oracle;
pub mod problems;
pub mod rootfind;

pub use geometry::{ConstraintSet, GeometryError, PolarKind, SupportValue};
pub use inner::{FwStepRule, InnerResult, InnerSolver};
pub use linalg::DenseMatrix;
pub use misfits::{DataLoss, Glm, GlmFamily, MisfitKind};
pub use oracle::{
    InnerConfig, LevelSetOracle, OracleError, OracleReply, SyntheticMode, SyntheticOracle,
    ValueOracle,
};
pub use problems::{LevelSetProblem, Solution, SolveOptions};
pub use rootfind::{
    Method, MinorantEvaluation, RootConfig, RootResult, RootStatus, SolveTrace, TraceRecord,
};
