//! Budget-aware query-rewrite planning over a simulated database.
//!
//! The pipeline: generate a synthetic workload ([`workload`]), synthesize
//! ground-truth plan times for it ([`sim_env`]), train a Q-network policy
//! that learns which rewritten query to cost-estimate next ([`qnet`] over
//! the MDP in [`mdp`] with estimation costs from [`qte`]), then rewrite
//! queries online ([`rewriter`]), optionally routed by a selectivity
//! classifier ([`hybrid`]), and score everything ([`metrics`]).

pub mod error;
pub mod hybrid;
pub mod mdp;
pub mod metrics;
pub mod qnet;
pub mod qte;
pub mod rewriter;
pub mod rng;
pub mod scalar;
pub mod sim_env;
pub mod time;
pub mod workload;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use time::Micros;

/// Single-precision Q-network.
pub type QNetwork32 = qnet::QNetwork<f32>;
/// Double-precision Q-network, the default throughout the CLI.
pub type QNetwork64 = qnet::QNetwork<f64>;
