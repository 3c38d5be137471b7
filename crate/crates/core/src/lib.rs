//! Secure aggregation for hierarchical federated learning with unreliable
//! client-to-relay and relay-to-server links.
//!
//! Clients mask their models with zero-sum keys and send gradient-coded
//! symbols to `d` relays; relays add what they hear; the server decodes the
//! all-client sum from any `K-s` relays. Everything is exact arithmetic over
//! `Z_p`, so correctness, security and rates are checked by counting and rank.

pub mod audit;
pub mod cli;
pub mod error;
pub mod ff;
pub mod gc_code;
pub mod keygen;
pub mod metrics;
pub mod netsim;
pub mod protocol;
pub mod report;
pub mod scheme;
pub mod topology;
pub mod vectors;

pub use error::{HsaError, Result};
pub use scheme::{Scheme, SchemeParams};
