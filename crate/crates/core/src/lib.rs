//! Motion-based handwriting recognition.
//!
//! The crate turns pen-orientation recordings (yaw/pitch/roll sampled at an
//! irregular rate while a single lowercase letter is written) into
//! fixed-length feature rows, optionally augments and denoises them, and
//! classifies them with one of four models: k-nearest neighbours, a
//! one-vs-all polynomial-kernel SVM, a 1-D CNN and a stacked LSTM.
//!
//! Module map:
//!
//! * [`sensor_data`]: frames, sequences and the on-disk CSV dataset layout.
//! * [`preprocess`]: calibration, zero-origin normalization and resampling.
//! * [`augment`]: jitter, quaternion rotation and per-channel stretch.
//! * [`nn`]: the small dense-tensor toolkit the neural models are built on.
//! * [`autoencoder`]: the per-channel denoising autoencoder.
//! * [`classifiers`]: KNN, SVM, CNN and LSTM behind one interface.
//! * [`experiments`]: splits, the train/evaluate harness and ablations.
//! * [`synth`]: a deterministic synthetic pen-motion generator.

pub mod augment;
pub mod autoencoder;
pub mod classifiers;
pub mod experiments;
pub mod nn;
pub mod preprocess;
pub mod seed;
pub mod sensor_data;
pub mod synth;

pub use sensor_data::{CalibrationRecord, Dataset, Frame, Label, Sequence, NUM_CLASSES};
pub use preprocess::ResampledSequence;
