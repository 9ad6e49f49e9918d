//! Hyperspectral pixel classification with genetic band and model selection.

pub mod classifiers;
pub mod data;
pub mod io;
pub mod preprocess;
pub mod seed;
pub mod selection;
pub mod synth;
pub mod scenarios;
