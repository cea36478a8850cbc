//! Item response calibration, scoring and DIF screening for mixed-format
//! question banks, plus the generation pipeline that produces them.

pub mod analytics;
pub mod calibration;
pub mod dif;
pub mod error;
pub mod genpipe;
pub mod model;
pub mod quadrature;
pub mod scoring;
pub mod simulator;

pub use calibration::{fit_mixed, CalibratedItem, CalibrationConfig, CalibrationResult};
pub use error::{Error, Result};
pub use model::{
    DropReason, DroppedItem, Dichotomous2PL, Difficulty, GradedParams, ItemKind, ItemParams, ResponseMatrix,
};
pub use quadrature::{gauss_hermite_grid, QuadratureGrid};
