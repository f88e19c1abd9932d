//! Offline-to-online actor-critic learning where the target network is
//! replaced by a penalty on the inner products of critic features.
//!
//! The crate is organized bottom-up:
//!
//! * [`autodiff`] - tape, dense networks, Adam
//! * [`envs`] - reacher and grasping toys, demonstrators, datasets
//! * [`replay`] - N-step transitions and the offline/online buffer pair
//! * [`agents`] - critics, the tanh-Gaussian actor, every learning rule
//! * [`diagnostics`] - feature similarity, Q traces, histograms, statistics
//! * [`harness`] - experiment configuration and the collect/train/evaluate pipeline

pub mod agents;
pub mod autodiff;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod harness;
pub mod replay;
pub mod rng;

pub use error::{Error, Result};
