//! A desk-scale laboratory for discrete diffusion language models.
//!
//! The crate implements masked (absorbing-state), uniform-state and
//! interpolating (Eso-LM) diffusion alongside an autoregressive baseline,
//! trains small denoisers on synthetic languages whose likelihoods are exactly
//! computable, and runs the scaling-law and speed–quality analysis pipeline on
//! the results.
//!
//! Module map:
//! * [`schedule`], [`vocab`], [`categorical`], [`rng`] — shared primitives;
//! * [`processes`] — forward kernels and exact reverse posteriors;
//! * [`objectives`] — AR, masked, low-variance, uniform-state and Eso-LM losses;
//! * [`denoisers`] — tabular and MLP backends with visibility control;
//! * [`training`] — synthetic languages, AdamW and the training loop;
//! * [`samplers`] — AR, ancestral and block samplers with a cost model;
//! * [`evaluation`] — likelihood bounds, generative perplexity, entropy;
//! * [`scaling`] — FLOP accounting, IsoFLOP/power-law/speed–quality fits,
//!   Pareto frontiers and sweeps;
//! * [`cli`] — configuration and command implementations.

pub mod categorical;
pub mod cli;
pub mod denoisers;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod objectives;
pub mod processes;
pub mod rng;
pub mod samplers;
pub mod scaling;
pub mod schedule;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};
