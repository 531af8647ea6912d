//! Lane-level topological localization with a variable set of hidden Markov
//! models, one per hypothesized road topology.
//!
//! * [`hmm`] holds the lane-state chain, forward filtering and normalized entropy.
//! * [`obsmodel`] turns lane-line and vehicle detections into per-state likelihoods.
//! * [`transport`] implements earth mover's distance over simplices of different
//!   sizes and the belief initialization built on it.
//! * [`vsm`] manages the model bank: likely model set selection, belief transfer,
//!   map discrepancy detection and localization queries.
//! * [`sim`] generates synthetic observations, runs topology-estimation grids and
//!   scores replay logs.
//! * [`cli`] is the command-line front end.

pub mod cli;
pub mod error;
pub mod hmm;
pub mod obsmodel;
pub mod sim;
pub mod transport;
pub mod vsm;

pub use error::{Error, Result};
pub use hmm::{Belief, LaneHmm, TransitionParams};
pub use obsmodel::{LaneGeometry, ObsParams, ObservationFrame};
