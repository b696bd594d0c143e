//! Link-level simulation of doubly-dispersive MIMO channels under OTFS and
//! OFDM modulation, with zero-forcing precoding and precoder prediction from
//! outdated CSI.
//!
//! The crate is organized around the processing chain:
//!
//! * [`linalg`] — deterministic builders for the structured complex matrices
//!   everything else composes (DFT, cyclic shifts, diagonal phase ramps,
//!   Kronecker products, the Dirichlet kernel).
//! * [`channel`] — path-set generation per mobility scenario and the
//!   time-varying channel matrices at block / OFDM-symbol / OTFS-frame
//!   granularity, plus a sample-level time-domain oracle.
//! * [`ofdm`] / [`otfs`] — per-waveform equivalent channels, pilots and
//!   channel estimation; for OTFS also the reduced integer form, the
//!   fractional Dirichlet-spread form and the cyclic-prefix periodicity
//!   factor that makes integer channels predictable.
//! * [`mimo`] — MIMO assembly, ZF precoding, deterministic OTFS precoder
//!   prediction, LMMSE equalization, QPSK mapping and BER counting.
//! * [`predict`] — CE-BEM / GCE-BEM basis-expansion prediction and
//!   Gauss-Newton Doppler refinement.
//! * [`harness`] — seeded Monte Carlo trials, scenario definitions, pilot
//!   parity enforcement and metric aggregation.
//! * [`io`] — CSV/JSON import and export of grids, channels and results.

// Link against system OpenBLAS for the dense complex factorizations.
extern crate blas_src;
extern crate openblas_src;

pub mod channel;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod mimo;
pub mod ofdm;
pub mod otfs;
pub mod predict;
pub mod scenario;
pub mod solve;

pub use error::{DdlsError, Result};

use num_complex::Complex64;

/// Dense complex matrix used throughout the crate.
pub type CMat = ndarray::Array2<Complex64>;
/// Dense complex vector.
pub type CVec = ndarray::Array1<Complex64>;
