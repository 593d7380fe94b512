//! Conditional tabular VAE engine.
//!
//! Learns `p(x_s | x_c)` — target columns given condition columns — from
//! purchase-history-style tables, then generates synthetic target rows under
//! condition overrides for what-if comparison. Also provides the distribution
//! metrics and the product-level holdout harness used to evaluate it.

pub mod error;
pub mod exec;
pub mod experiment;
pub mod grad;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod schema;
pub mod transform;

pub use error::{Error, Result};
pub use exec::Execution;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
