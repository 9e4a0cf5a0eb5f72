//! Latent-environment semi-Markov random walks over user trajectories.
//!
//! Users are modelled as random surfers that repeatedly pick a latent
//! environment according to their personal preferences and then take a few
//! steps of a no-revisit random walk over that environment's weighted item
//! clique, with environment-specific inter-event times. The crate learns such
//! a model from timestamped `user, item` event logs using a parallel collapsed
//! Gibbs sampler with merge/split adaptation of the environment count, and
//! uses it for personalized next-item ranking, predictive likelihood and
//! inter-item flow estimation.
//!
//! Pipeline: [`corpus`] parses and cleans logs, [`windows`] turns them into
//! sliding-window tuples, [`sampler`] (or [`parallel`]) trains a [`state::Model`],
//! [`predict`] answers queries, and [`eval`] scores it against the
//! [`baselines`]. [`synth`] generates ground-truth corpora.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adapt;
pub mod baselines;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model_io;
pub mod parallel;
pub mod predict;
pub mod residence;
pub mod sampler;
pub mod state;
pub mod synth;
pub mod windows;

pub use error::{Error, Result};
pub use state::{Hyperparams, Model, ModelState};
pub use windows::{Window, WindowSet};
