//! Predictive maintenance from run-to-failure sensor data.
//!
//! Sensor tuples are summarized by Attribute Oriented Induction into a
//! weighted knowledge base; each cycle of a simulation is then scored by the
//! weight of the most specific cluster it matches. The resulting
//! quantification series feeds an EWMA chart for change detection, Western
//! Electric run rules for anomaly declaration, and an LSTM forecaster that
//! rolls the series forward to estimate remaining useful life.

pub mod aoi;
pub mod config;
pub mod dataio;
pub mod error;
pub mod hierarchy;
pub mod kb;
pub mod lstm;
pub mod pipeline;
pub mod quantify;
pub mod spc;
pub mod synth;

pub use error::{Error, Result};
