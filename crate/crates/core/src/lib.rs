//! Double defense for data-driven remaining-useful-life (RUL) regressors.
//!
//! The crate covers the whole pipeline on C-MAPSS-format turbofan data:
//!
//! * [`data`]: parsing, RUL labelling, normalisation, sliding windows;
//! * [`nn`]: CNN, recurrent and hybrid regressors with input gradients;
//! * [`attack`]: FGSM, BIM and MIM crafting and random test-set injection;
//! * [`features`]: the 37-dimensional detection feature vector;
//! * [`detect`]: one-class SVM and local-outlier-factor novelty detectors;
//! * [`defense`]: transferability analysis, adversarial retraining and the
//!   selective routing pipeline;
//! * [`metrics`]: RMSE, F-beta, ROC AUC and report emission;
//! * [`experiment`]: the manifest-driven runner behind the `dodem` binary.

pub mod data;
pub mod error;
pub mod io;
pub mod nn;
pub mod attack;
pub mod features;
pub mod detect;
pub mod metrics;
pub mod defense;
pub mod synthetic;
pub mod experiment;

pub use error::{Error, Result};
