//! Generalized empirical likelihood estimation for moment condition models,
//! built on the maximum-entropy-on-the-mean saddle-point program.

pub mod approx;
pub mod config;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod run;
pub mod sample;
pub mod solver;

pub use error::{GelError, Result};
pub use kernel::{DivergenceKernel, KernelName};
pub use model::{builtin_model, MomentModel, ModelParams, ThetaBox};
pub use sample::Sample;
pub use solver::SolverOptions;
