pub mod basis;
pub mod error;
pub mod fstats;
pub mod homogeneity;
pub mod ingest;
pub mod mfpca;
pub mod resample;
pub mod rmfanova;
pub mod simulate;

pub use basis::{make_basis, Basis, BasisSystem, CurveSet, GramMatrix, Smoother};
pub use error::{Error, Result};
pub use rmfanova::{PairedSample, Statistic, TestReport};
