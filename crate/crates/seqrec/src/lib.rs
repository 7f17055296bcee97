//! Sequential recommendation as a decision problem.
//!
//! `seqrec` learns a k-order Markov-chain model of item sequences (with
//! fractional-count skipping, similarity clustering and mixture modeling),
//! lifts it into a Markov decision process whose policy maximizes
//! long-term profit rather than click likelihood, and scores rankers with
//! the recommendation-score and exponential-decay offline metrics. A
//! seeded simulator closes the loop: synthetic users with a known behavior
//! model let the MDP and myopic policies be compared on realized profit.
//!
//! The `examples/` directory is the front door — one runnable program per
//! capability:
//!
//! ```text
//! cargo run --example build_model        # counting, skipping, clustering, mixture
//! cargo run --example ingest_logs       # parsing, sessionization, filtering, splitting
//! cargo run --example solve_policy      # MDP lift, policy iteration, profit-aware ranking
//! cargo run --example evaluate_metrics  # RC@m and exponential-decay scoring
//! cargo run --example explore_and_learn # Boltzmann exploration and online updates
//! cargo run --example simulate_profit   # MDP vs myopic on a ground-truth simulator
//! ```
//!
//! The same pipeline is scriptable through the thin `seqrec` binary
//! (`ingest`, `train`, `solve`, `evaluate`, `recommend`, `simulate`).

pub mod cli;
pub mod domain;
pub mod eval;
pub mod ingest;
pub mod mc;
pub mod mdp;
pub mod persist;
pub mod seeds;
pub mod sim;

mod error;

pub use domain::{state_from_history, unorder, ItemCatalog, ItemId, State, UnorderedState};
pub use error::{Error, Result};
pub use eval::{evaluate, Ranker, ScoreReport};
pub use ingest::{SessionSet, SplitTag};
pub use mc::{build, MixtureModel, ModelConfig};
pub use mdp::{MdpModel, MdpParams, Policy};
pub use sim::GroundTruth;
