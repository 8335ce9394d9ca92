//! Uncertainty quantification of homogenized elastic properties of voxelized
//! two-phase composites.
//!
//! The crate bundles a Galerkin FFT homogenization solver ([`fft`]), a small
//! deep-learning engine that trains a surrogate of that solver ([`ann`]),
//! pseudospectral polynomial chaos machinery ([`pce`]) and the pipeline that
//! ties them together with Monte Carlo baselines ([`uq`]).

pub mod ann;
pub mod cli;
pub mod dataset;
pub mod fft;
mod io;
pub mod microstructure;
pub mod pce;
pub mod tensor;
pub mod uq;
