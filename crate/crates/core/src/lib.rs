//! Practical identifiability limits of the SIR epidemic model.
//!
//! Integration of the SIR system and its linearization, perturbation
//! bounds, a Gaussian observation model, maximum likelihood fitting with
//! sensitivity-based gradients, likelihood-ratio power calculations and a
//! small ingest/experiment layer used by the `sirlimits` CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bfgs;
pub mod cases;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod normal;
pub mod perturb;
pub mod simulate;
pub mod testing;
pub mod sir;

pub use error::{Error, Result};
pub use sir::{
    epidemic_summary, find_peak_time, incidence, integrate_exact, integrate_linearized, peak_time,
    summarize_epidemic, EpidemicSummary, Incidence, InitialCondition, SirParams, Trajectory, TrajectoryKind,
};

/// Float formatting used by every CSV writer: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
