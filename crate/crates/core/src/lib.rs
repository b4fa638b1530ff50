pub mod dataset;
pub mod emotion_led;
pub mod evaluation;
pub mod experiment;
pub mod error;
pub mod grouping;
pub mod mood_model;
pub mod numerics;
pub mod par;
pub mod persist;
pub mod recommender;

pub use error::{Error, Result};
