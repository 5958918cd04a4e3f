//! Layer-wise spectral analysis of convolutional networks for multichannel
//! time series.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! * [`signal`] — trials, synthetic band-structured data, preprocessing,
//!   cropping and the dataset container format;
//! * [`spectral`] — real DFT analysis/synthesis plus amplitude and phase
//!   perturbation of trials;
//! * [`net`] — a configurable 5-conv-layer network for `channels x time`
//!   inputs with activation taps, receptive-field arithmetic, training and
//!   checkpoints;
//! * [`probe`] — frequency-resolved amplitude/phase perturbation correlations
//!   per analysis layer;
//! * [`windows`] — most-activating input-window extraction, sinusoid/linear
//!   fitting and the accompanying statistics.
//!
//! Everything stochastic takes an explicit seed (see [`rng`]); with a fixed
//! seed, results are identical whether or not the `parallel` feature is
//! enabled.

pub mod net;
pub mod par;
pub mod probe;
pub mod rng;
pub mod signal;
pub mod spectral;
pub mod windows;
