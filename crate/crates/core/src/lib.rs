//! Orthography-aware encoder pre-training and language-routed text
//! classification for Arabic-script languages (Kurdish Sorani, Arabic,
//! Persian, Urdu).

pub mod cli;
pub mod numerics;
pub mod data;
pub mod model;
pub mod orthography;
pub mod evaluation;
pub mod tokenization;
pub mod training;
