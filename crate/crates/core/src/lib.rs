//! Average age of information of slotted ALOHA and irregular repetition
//! slotted ALOHA (IRSA).
//!
//! - [`analysis`]: closed-form throughput, load and age expressions
//! - [`decoder`]: IRSA frames and the SIC peeling decoder
//! - [`sim`]: Monte Carlo loss-rate estimation and time-domain age simulation
//! - [`optimize`]: activity sweeps, frame-size optimisation, age ratios
//! - [`cli`]: the `irsa-aoi` command line front end

pub mod analysis;
pub mod cli;
pub mod decoder;
pub mod model;
pub mod optimize;
pub mod rng;
pub mod sim;

pub use model::{DegreeDistribution, Protocol, SystemConfig};
