//! Core of the MRLMC toolkit: multimodal (fNIRS + EEG) representation
//! learning with multiscale spatio-temporal contrasting, transformer-based
//! semantic consistency and a focal-loss depression classifier.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches the
//! filesystem (dataset and checkpoint formats, JSON configs, the CLI) lives in
//! the `mrlmc` companion crate.
//!
//! Pipeline, bottom to top:
//!
//! ```text
//! signal      Signal / Record / TaskMeta, synthetic two-modality generator
//! preprocess  zero-phase FIR band-pass, band-limited resampling,
//!             channel selection, modified Beer-Lambert conversion
//! augment     time masking / time warping bounded by the question time t_q,
//!             (x, y) pair assembly for single- and multi-modal modes
//! encoder     per-modality adapter + shared multiscale convolution -> v, u
//! contrastive cosine similarity and the symmetric NT-Xent loss L_MSC
//! semantic    stacked pre-norm transformer units -> z^f, z^e and L_SC
//! head        fusion classifier, focal loss L_FL, total objective
//! model       the composed network with hand-written backprop
//! training    splits, RMSprop loop, model selection, ablation and sweeps
//! ```
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod augment;
pub mod config;
pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod head;
pub mod math;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod preprocess;
pub mod rng;
pub mod semantic;
pub mod signal;
pub mod synth;
pub mod training;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use metrics::MetricsReport;
pub use model::Model;
pub use signal::{Label, Modality, Record, Signal, TaskMeta};
