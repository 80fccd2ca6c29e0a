//! Amplitude-PMF anti-spoofing front end.
//!
//! Audio is split into channels by time-domain filter banks, each channel is
//! summarised by its amplitude probability mass function, and the PMFs are
//! compared against pooled genuine/spoofed models under eight histogram
//! measures. The resulting difference features are embedded with diffusion
//! maps (Nyström extension for unseen files) and scored by logistic regression.

pub mod audio_io;
pub mod classifier;
mod container;
pub mod diffusion;
pub mod distances;
mod error;
pub mod features;
pub mod filterbank;
pub mod metrics;
pub mod models;
pub mod par;
pub mod pipeline;
pub mod pmf;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
