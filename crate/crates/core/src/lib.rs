//! Finite-element micromagnetics for periodic unit cells.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`] reads tetrahedral meshes, finds periodic node pairs, merges them
//!   to a single parent per periodic class and folds protruding geometry back
//!   into one period.
//! * [`femops`] assembles the periodicity-aware sparse operators (exchange
//!   Laplacian, nodal magnetic charge, nodal gradient).
//! * [`pgf`] evaluates the free-space and periodic 1/r Green's functions.
//! * [`baim`] computes scalar potentials from nodal charges with a
//!   project / FFT-convolve / interpolate / precorrect pipeline, and provides
//!   the direct O(N²) superposition used to check it.
//! * [`field`] combines everything into the effective field.
//! * [`dynamics`] integrates the LLG equation and drives relaxation,
//!   hysteresis sweeps, and the thin-film spin-wave dispersion oracle.
//!
//! All quantities are CGS: lengths in cm, magnetisation in emu/cm³, fields in
//! Oe, energies in erg.

pub mod baim;
pub mod config;
pub mod dynamics;
pub mod exec;
pub mod femops;
pub mod field;
pub mod math;
pub mod mesh;
pub mod meshgen;
pub mod output;
pub mod pgf;
pub mod sparse;
pub mod special;

mod error;

pub use error::{Error, Result};
pub use exec::Exec;
pub use math::Vec3;
