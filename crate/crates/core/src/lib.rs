//! Optimal-design-based subsampling of large tabular datasets.
//!
//! A large dataset is treated as a finite population generated by a
//! super-population regression model. The crate computes continuous D- and
//! A-optimal designs for that model, rounds them to integer allocations and
//! picks the dataset rows nearest each optimal support point. Competing
//! samplers (simple random, leverage PPS, IBOSS and the exchange algorithm)
//! and a seeded Monte Carlo harness compare the resulting subsamples.
//!
//! Module map:
//!
//! - [`basis`], [`model`], [`transform`], [`dataset`]: feature maps, model
//!   specifications, information matrices, criteria and efficiencies.
//! - [`design`]: continuous design solver, equivalence-theorem certificate,
//!   support reduction and integer rounding.
//! - [`samplers`]: ODB, IBOSS, SRS, leverage PPS and exchange selections.
//! - [`estimators`]: OLS and logistic maximum likelihood on a subsample.
//! - [`sim`]: population generation, the replication study and its
//!   summaries, and the brute-force best-subset oracle.

pub mod basis;
pub mod dataset;
pub mod design;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod model;
pub mod samplers;
pub mod seeds;
pub mod sim;
pub mod transform;

pub use basis::{BasisKind, FeatureBasis};
pub use dataset::Dataset;
pub use design::{
    round_design, solve_continuous_design, CandidateSet, ExactAllocation, SolvedDesign,
    SolverSettings,
};
pub use error::{OdbError, Result};
pub use model::{
    criterion_value, efficiency, glm_weight, info_matrix_of_dataset, info_matrix_of_design,
    info_matrix_of_rows, Criterion, DesignMeasure, Family, InfoMatrix, ModelSpec,
};

pub use samplers::{SampleSelection, Sampler};
pub use transform::BoxTransform;

// The guide's snippets run as doctests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/information.md")]
    mod information {}
    #[doc = include_str!("../../../book/src/designs.md")]
    mod designs {}
    #[doc = include_str!("../../../book/src/rounding.md")]
    mod rounding {}
    #[doc = include_str!("../../../book/src/samplers.md")]
    mod samplers {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
