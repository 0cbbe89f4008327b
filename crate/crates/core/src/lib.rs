//! Significance-driven computation skipping for quantized int8 CNNs on
//! microcontroller-class targets.
//!
//! The pipeline:
//!
//! 1. [`model`] loads a pre-quantized network (or generates a synthetic fixture).
//! 2. [`significance`] captures mean activations on calibration data and scores
//!    every `input * weight` product of every conv output channel.
//! 3. [`approx`] turns a threshold configuration into a skip plan and runs the
//!    approximate network on the bit-exact [`qinfer`] engine.
//! 4. [`dse`] sweeps layer subsets and thresholds, extracts the accuracy / MAC
//!    Pareto front and picks a configuration for a given accuracy-loss budget.
//! 5. [`codegen`] emits C99 kernels with weights baked in as constants, weight
//!    pairs packed for dual 16-bit MACs, and skipped products left out.
//!
//! [`cli`] wires the steps into the `axkern` command.

mod binio;
pub mod error;

pub mod approx;
pub mod cli;
pub mod codegen;
pub mod dse;
pub mod model;
pub mod qinfer;
pub mod significance;

pub use error::{Error, Result};
