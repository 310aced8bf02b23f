//! Deterministic random streams.
//!
//! Every random draw in an experiment comes from a ChaCha stream keyed by
//! `(base_seed, purpose, replication)` with the stream id set to the agent
//! index. ChaCha is counter based, so streams are independent of the order
//! in which replications or agents are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for every stochastic draw in the crate.
pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share key material.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    /// Network and per-agent problem parameters, shared by all replications.
    Instance = 1,
    /// Initial iterates of one replication.
    Init = 2,
    /// Gradient noise of one replication (one stream per agent).
    Noise = 3,
    /// Monte Carlo estimation of the noise bound.
    Sigma = 4,
}

/// Returns the stream for `(base_seed, purpose, replication, index)`.
pub fn stream(base_seed: u64, purpose: Purpose, replication: u64, index: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&base_seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    key[16..24].copy_from_slice(&replication.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// One independent noise stream per agent for replication `replication`.
pub fn agent_streams(base_seed: u64, replication: u64, agents: usize) -> Vec<StreamRng> {
    (0..agents as u64)
        .map(|i| stream(base_seed, Purpose::Noise, replication, i))
        .collect()
}
