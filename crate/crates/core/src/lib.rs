//! Data augmentation for multiple-choice video question answering.
//!
//! The crate provides three training-set augmentations for 5-way
//! multiple-choice VideoQA datasets (horizontal flip, wrong-answer
//! resampling and candidate mirroring), a from-scratch ST-VQA model with
//! temporal attention trained by pairwise hinge loss and Adam, and a harness
//! that measures augmentation effects per split and per question type.
//!
//! | module | contents |
//! |--------|----------|
//! | [`dataset`] | rows, question types, answer pools, manifests, splits |
//! | [`augment`] | flip / resample / mirror and the composed pipeline |
//! | [`features`] | clip feature files, stores, flipped and synthetic features |
//! | [`text`] | tokenizer and word-embedding tables |
//! | [`model`] | encoders, attention, decoder, checkpoints |
//! | [`training`] | hinge loss, Adam, training loop |
//! | [`harness`] | evaluation, experiment matrix, bias and accuracy tables |
//! | [`synthetic`] | seeded synthetic corpora |
//!
//! See `examples/` for one runnable program per capability.

pub mod augment;
pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod features;
pub mod harness;
pub mod model;
pub mod rng;
pub mod synthetic;
pub mod tensor;
pub mod text;
pub mod training;

pub use error::{Error, Result};
