//! Pricing and calibration toolkit for the Heston stochastic volatility model.
//!
//! The crate is organised bottom-up:
//!
//! * [`charfn`] evaluates the characteristic function in four equivalent
//!   representations, including a branch-cut free form used everywhere else.
//! * [`quadrature`] builds Gauss-Legendre and trapezoid rules and integrates
//!   blocks of integrands that share one evaluation per node.
//! * [`pricer`] prices European calls and puts by the two-integral formula.
//! * [`gradient`] differentiates the call price with respect to all five model
//!   parameters analytically, with a central-difference reference.
//! * [`blackscholes`] provides Black-Scholes prices, spot deltas, implied
//!   volatilities and delta-to-strike conversion.
//! * [`calibrator`] fits parameters to a quote chain by Levenberg-Marquardt.
//! * [`harness`] generates synthetic surfaces and runs the validation studies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blackscholes;
pub mod calibrator;
pub mod charfn;
mod error;
pub mod gradient;
pub mod harness;
pub mod pricer;
pub mod quadrature;

pub use calibrator::{calibrate, CalibrationReport, LmOptions, StopReason};
pub use charfn::{HestonParams, MarketContext, Representation};
pub use error::{HestonError, Result};
pub use gradient::GradientVector;
pub use pricer::{OptionSpec, OptionType, QuoteChain};
pub use quadrature::QuadratureRule;

/// Trading days per year; maturities quoted in days are divided by this.
pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;
