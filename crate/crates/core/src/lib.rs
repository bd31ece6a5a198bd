//! Physical layer of a SWIPT-enabled satellite-terrestrial heterogeneous
//! network: configuration, Jakes-correlated channels, SINR / rate / energy
//! harvesting math, the multi-agent episodic environment and the
//! non-learning reference policies.

pub mod baselines;
pub mod channel;
pub mod env;
pub mod params;
pub mod phy;
pub mod rng;

pub use params::{ConfigError, SystemConfig};
pub use rng::{Purpose, RngStream, StreamId};
