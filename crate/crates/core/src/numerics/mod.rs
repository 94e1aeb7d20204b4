//! Statistical and linear-algebra kernels shared by the probes, the
//! evaluation harness and the anomaly detector.
//!
//! Every covariance that gets inverted is first regularized with a ridge of
//! `RIDGE_SCALE * trace / d` (see [`ridge`]).

mod auroc;
mod erasure;
mod householder;
mod linalg;
mod mahalanobis;
pub mod optim;
mod platt;
pub mod quadrature;
mod quantile;

pub use auroc::{auroc, auroc_split, ScoredLabels};
pub use erasure::{erase_binary_concept, ConceptEraser};
pub use householder::householder_reflect;
pub use linalg::{
    column_means, covariance, ridge, sym_inv_sqrt, sym_sqrt, top_principal_component, GaussianFit,
    RIDGE_SCALE,
};
pub use mahalanobis::{mahalanobis, CovarianceVariant, MahalanobisScorer};
pub use platt::{fit_platt, sigmoid, PlattParams, PLATT_SLOPE_CAP};
pub use quantile::{quantile, quantiles};
