//! Maximum-likelihood identification of linear innovation-form state-space
//! models under LMI-region eigenvalue constraints.
//!
//! The nonlinear semidefinite program is converted into an ordinary nonlinear
//! program by parameterizing every semidefinite block through a sparse
//! Cholesky factor and eliminating the off-pattern factor entries by forward
//! completion ([`bmz`]). The resulting problem is solved by the bundled
//! augmented-Lagrangian solver ([`nlp`]).
//!
//! All numerical code is generic over [`Real`]; the aliases at the crate root
//! fix the scalar to `f64`.

pub mod bmz;
pub mod error;
pub mod ident;
pub mod index_set;
pub mod linalg;
pub mod model;
pub mod nlp;
pub mod oracle;
pub mod region;
pub mod scalar;

pub use error::{Error, Result};
pub use index_set::IndexSet;
pub use scalar::Real;

pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;

pub type LmiRegion = region::LmiRegion<f64>;
pub type TightenedRegionConstraint = region::TightenedRegionConstraint<f64>;
pub type ConstraintSpec = bmz::ConstraintSpec<f64>;
pub type FactorPoint = bmz::FactorPoint<f64>;
pub type ThetaPoint = bmz::ThetaPoint<f64>;
pub type InnovationModel = model::InnovationModel<f64>;
pub type LadmSpec = model::LadmSpec<f64>;
pub type Dataset = model::Dataset<f64>;
pub type NlpProblem = nlp::NlpProblem<f64>;
pub type SolveOptions = nlp::SolveOptions<f64>;
pub type SolveReport = nlp::SolveReport<f64>;
pub type BarrierQuery = oracle::BarrierQuery<f64>;
pub type EigConstraintSpec = ident::EigConstraintSpec<f64>;
pub type ProblemSpec = ident::ProblemSpec<f64>;
pub type FitReport = ident::FitReport<f64>;
