//! PPG peak detection toolkit.
//!
//! The crate bundles everything needed to detect systolic peaks in
//! photoplethysmography signals and evaluate the results:
//!
//! * a minimal dense-tensor kernel with reverse-mode gradients
//!   ([`tensor`], [`autodiff`], [`attention`], [`fft`]),
//! * signal preprocessing and SNR measurement ([`signal`]),
//! * distance-transform labels and the peak-searching function
//!   ([`labeling`]),
//! * the temporal-attentive U-Net model and its training loop ([`model`]),
//! * classical time-domain detectors ([`baselines`]),
//! * peak/HR/HRV evaluation metrics ([`metrics`]),
//! * a seeded synthetic PPG generator ([`synth`]).

pub mod attention;
pub mod autodiff;
pub mod baselines;
pub mod error;
pub mod fft;
pub mod labeling;
pub mod metrics;
pub mod model;
pub mod signal;
pub mod synth;
pub mod tensor;

pub use error::{Result, TauError};
pub use tensor::Tensor;
