//! Performative, fairness-aware re-ranking for two-sided recommendation markets.
//!
//! The crate is organised bottom-up:
//!
//! - [`types`]: items, users, candidate lists and the per-round market state.
//! - [`diffrank`]: exact ranking metrics (NDCG, Gini) and their relaxed,
//!   differentiable counterparts built on a softmax permutation matrix with
//!   Sinkhorn scaling.
//! - [`grad`]: a small reverse-mode tape used to differentiate the training
//!   loss with respect to user representations.
//! - [`agent`]: the strategic content creator and its closed-form best response.
//! - [`simulator`]: the frozen relevance model, synthetic market generation and
//!   CSV ingestion.
//! - [`dynamics`]: the multi-round retraining loop and its baselines.

pub mod agent;
pub mod diffrank;
pub mod dynamics;
pub mod error;
pub mod grad;
pub mod linalg;
pub mod rng;
pub mod simulator;
pub mod types;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use types::{
    score, CandidateList, GroundTruthPref, HyperParams, ItemFeatures, MarketState,
    RelevanceVector, UserRep,
};
