//! Robust sequential monitoring for parameter change based on the density
//! power divergence, with normal i.i.d. and GARCH(p,q) engines.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod critval;
pub mod dpd;
pub mod error;
pub mod garch;
pub mod model;
pub mod monitor;
pub mod normal;
pub mod optim;
pub mod retro;
pub mod series;
pub mod simlab;

pub use dpd::{Alpha, BoundaryFn, NormKind};
pub use error::{Error, Result};
pub use garch::GarchParams;
pub use model::{fit, Engine, FitOptions, FitResult, ScoreSource, ScoreStream, Theta};
pub use monitor::{run_monitor, MonitorOutcome, MonitorState};
pub use normal::NormalTheta;
