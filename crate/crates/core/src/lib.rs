//! Route choice modelling with the recursive logit model and a path-based
//! logit baseline: value functions, choice and path probabilities,
//! maximum-likelihood estimation, link flows and accessibility.

pub mod error;
pub mod estimation;
pub mod fixtures;
pub mod network;
pub mod path_logit;
pub mod prediction;
pub mod rl_model;
pub mod shortest_path;
pub mod sparse;
pub mod value_function;

pub use error::{Error, Result};
pub use network::{augment, Arc, ArcId, AugmentedNetwork, Network, NetworkBuilder, NodeId, StateId};
pub use shortest_path::Path;
pub use value_function::{UtilitySpec, ValueField};
