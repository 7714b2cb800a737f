//! Cough detection and cough-type clustering.
//!
//! The pipeline runs WAV ingestion ([`audio_io`]) through spectral analysis
//! ([`dsp`]), clip-level feature vectors ([`features`]), augmentation of the
//! cough class ([`augment`]), a from-scratch 1D CNN ([`cnn`]) with a random
//! forest baseline ([`forest`]), evaluation ([`metrics`]) and k-means based
//! cough-type discovery ([`cluster`]). [`synthgen`] produces a seeded
//! synthetic corpus with known ground truth and [`pipeline`] wires the stages
//! together for the command-line front end.

pub mod audio_io;
pub mod augment;
pub mod cluster;
pub mod cnn;
pub mod dsp;
pub mod features;
pub mod forest;
pub mod metrics;
pub mod pipeline;
pub mod plot;
pub mod rng;
pub mod synthgen;

pub use audio_io::AudioClip;
pub use features::{FeatureVector, LabeledDataset};
