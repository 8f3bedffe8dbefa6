//! Simulation and reconstruction toolkit for coded-aperture snapshot
//! spectral imaging.
//!
//! * [`imaging`]: masks, dispersion, and the SD-/SS-CASSI operators.
//! * [`tensor`]: dense maps, reverse-mode tape, and Adam.
//! * [`network`]: the conditional generator (bottleneck residual blocks plus
//!   a multi-scale spatial-spectral attention module).
//! * [`recon`]: the unsupervised fitting loop and the GAP-TV baseline.
//! * [`metrics`]: PSNR, SSIM, and spectral correlation.
//! * [`io`]: the `HSC1` cube container, CSV reports, and PNG export.
//! * [`synth`]: seeded piecewise-smooth test scenes.

pub mod error;
pub mod imaging;
pub mod io;
pub mod metrics;
pub mod network;
pub mod par;
pub mod recon;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
