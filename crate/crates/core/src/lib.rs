//! Joint symbol-level precoding and IRS phase design for minimum worst-case
//! symbol-error probability in a multiuser MISO downlink.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: system dimensions, channels, design variables and the
//!   received-signal model.
//! * [`constellation`]: QAM/PSK geometry, detection, Gray labels and the
//!   SEP bound.
//! * [`objective`]: exact minimax objective, its log-sum-exp smoothing and
//!   analytic gradients.
//! * [`optimizer`]: projections, the accelerated projected gradient solver
//!   and the alternating-minimization driver.
//! * [`channel`]: scenario geometry, path loss and Rician channel synthesis.
//! * [`baselines`]: zero-forcing and SLP reference schemes.
//! * [`sim`]: Monte-Carlo BER evaluation.
//! * [`diagnostics`]: randomized self-checks of gradients, projections and
//!   the smoothing bound.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod channel;
pub mod constellation;
pub mod diagnostics;
mod error;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod sim;

pub use error::{Error, Result};

/// Double-precision complex scalar used throughout.
pub type C64 = num_complex::Complex64;

/// Converts a value in dB to linear units.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts a linear power ratio to dB.
pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}
