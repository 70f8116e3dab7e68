//! Jeffreys-divergence output regularization for classification-trained
//! embedding extractors, with cross-entropy and label-smoothing baselines and
//! a small synthetic speaker-verification lab to compare them.
//!
//! - [`loss`]: losses over softmax posteriors and their logit gradients.
//! - [`trainer`]: MLP embedding extractor with an AAM cosine head, SGD with momentum.
//! - [`synth`]: synthetic speakers, domain shifts and trial lists.
//! - [`scoring`]: centered cosine scoring, DET, EER, minDCF.
//! - [`probe`]: top-training-speaker counts and expected-KL comparison.
//! - [`experiment`]: end-to-end comparison runs and report files.
//! - [`selftest`]: the invariant suite behind the `self-test` command.

pub mod error;
pub mod experiment;
pub mod loss;
pub mod probe;
pub mod scoring;
pub mod selftest;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
