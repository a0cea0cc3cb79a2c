//! Linear interference alignment on the two-cell MIMO interfering multiple
//! access channel: closed-form DoF values, scheme construction with symbol
//! extension, feasibility verification, rank-ratio converse audits, and
//! finite-SNR rate evaluation.

pub mod channel;
pub mod converse;
pub mod dof_theory;
pub mod error;
pub mod numlin;
pub mod rate_eval;
pub mod scheme;

pub use channel::{sample_instance, ImacInstance, Mode};
pub use error::{Error, Result};
pub use numlin::{Field, Matrix, RankReport, RankTolerancePolicy};
pub use scheme::{
    design, verify_feasibility, DesignOptions, FeasibilityReport, FeasibilityTolerances,
    LinearScheme,
};
