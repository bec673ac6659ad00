//! Scenario approximation of robust convex programs.
//!
//! Sample-size certification, stage budget allocation, four scenario solution
//! methods (standard, multi-stage, recursive with shared samples, recursive
//! with re-sampling) with feasibility certificates, empirical validation, and
//! a reach-avoid approximate dynamic programming case study built on top.

pub mod allocation;
pub mod bounds;
pub mod budget;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod lp;
pub mod reachavoid;
pub mod sampling;
pub mod validation;

pub use allocation::{Allocation, AllocationProblem, Method};
pub use bounds::{BoundKind, BoundQuery, BoundResult};
pub use error::{Error, Result};
