//! Cumulant generating functions of elliptical mixtures: partition algebra,
//! Lancaster interactions, saddlepoint and Edgeworth approximations,
//! moment fitting and Monte Carlo checks.

// negated comparisons are used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cgf_model;
pub mod cumulant_algebra;
pub mod density_approx;
pub mod error;
pub mod estimation;
pub mod lancaster;
pub mod numeric;
pub mod partitions;
pub mod simulation;

pub use cgf_model::{
    AggregatedCgf, AggregationMap, Cgf, EllipticalCgf, FormulaVariant, GammaCgf, PolynomialCgf, Univariate,
    UnivariateCgf, ValidityReport,
};
pub use cumulant_algebra::{CumulantTensor, MomentSet, MultiIndex};
pub use density_approx::{EntropyWeights, SaddlepointSolution};
pub use error::{CgfError, Result};
pub use estimation::{CovarianceEstimate, GammaComponent, GammaMixture, MixtureFit, PoweredExpParams};
pub use lancaster::{GridSpec, MarginalOracle};
pub use partitions::SetPartition;
pub use simulation::{BlockMaximaBands, Ecdf, QuantileBands, ReplicateSummary, SimulationPlan};
