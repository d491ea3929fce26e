pub mod config;
pub mod contour;
pub mod error;
pub mod expsum;
pub mod fem;
pub mod growth;
pub mod model;
pub mod oracle;
pub mod quad;
pub mod scheme;
pub mod spectral;
pub mod suites;
pub mod tensor;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use expsum::{BuildOptions, ExpSum};
pub use growth::GrowthClass;
pub use model::{FactorSpectrum, SeparableOperator};
pub use scheme::SolveReport;
pub use spectral::SchemeParameters;
pub use tensor::{EigenTensor, GridFunction, NodalTensor, RankOneTerm, SparseVec, TensorSum};
