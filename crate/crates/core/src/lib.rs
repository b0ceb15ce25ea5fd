//! Best-subset variable selection solvers and a forecasting harness for
//! many-predictor macroeconomic data.

pub mod error;
pub mod gds;
pub mod harness;
pub mod config;
pub mod oracle;
pub mod exhaustive;
pub mod factor;
pub mod fredmd;
pub mod greedy;
pub mod l1;
pub mod linalg;
pub mod model;
pub mod paths;
pub mod problem;
pub mod rng;
pub mod selection;
pub mod sim;
pub mod smc;

pub use error::{Error, Result};
pub use model::{SolverKind, SubsetModel};
pub use problem::{ColumnMeta, RegressionProblem, Standardizer};
