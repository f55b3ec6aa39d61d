//! Second-order likelihood adjustments with nuisance parameters.
//!
//! The crate computes expected log-likelihood derivative arrays for a set of
//! curved exponential-family models, contracts them into the leading-order
//! means of the information and nuisance-parameter adjustments of the signed
//! root statistic, decomposes the Bartlett correction, and checks all of it
//! against a likelihood engine and parametric bootstrap simulation.
//!
//! The algebraic layers are generic over [`Scalar`], implemented for `f32`,
//! `f64` and exact rationals.

pub mod adjust;
pub mod cumulants;
pub mod family;
pub mod inference;
pub mod jet;
pub mod model;
pub mod scalar;
pub mod simulation;
pub mod tensor;
pub mod zoo;

pub use adjust::{
    adjustment_report, b_np_explicit, bartlett_decompose, cornish_fisher, mle_mean_expansion, orthogonal_bnp,
    orthogonal_gnp, pivot_cumulants, profile_score_mean, AdjustError, AdjustmentReport, BartlettDecomposition,
    PivotCumulants, PivotKind,
};
pub use cumulants::{cumulants_analytic, cumulants_fd, cumulants_mc, CumulantOrder, CumulantSet, Provenance};
pub use family::Family;
pub use jet::Jet;
pub use model::{reparameterize, Dataset, Model, ModelDef, ModelError, ModelInstance, PhiMap, PsiMap};
pub use scalar::Scalar;
pub use tensor::{contract, contract_scalar, info_geometry, Contracted, InfoGeometry, SymTensor, TensorError};
pub use zoo::{ModelConfig, TableCase};

/// Exact rational scalar.
pub type Rational = num_rational::BigRational;

pub type SymTensor64 = SymTensor<f64>;
pub type SymTensor32 = SymTensor<f32>;
pub type ExactSymTensor = SymTensor<Rational>;
pub type CumulantSet64 = CumulantSet<f64>;
pub type ExactCumulantSet = CumulantSet<Rational>;
pub type InfoGeometry64 = InfoGeometry<f64>;
pub type ExactInfoGeometry = InfoGeometry<Rational>;
pub type AdjustmentReport64 = AdjustmentReport<f64>;
pub type ExactAdjustmentReport = AdjustmentReport<Rational>;
pub type Jet64 = Jet<f64>;
