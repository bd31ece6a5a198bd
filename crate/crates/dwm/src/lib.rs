//! Learning side of the system: recurrent world models, imagination-trained
//! actor-critics, and the offloading gate with edge-side latent refinement.

pub mod agent;
pub mod coord;
pub mod team;
pub mod worldmodel;

pub use agent::{ActMode, Actor, ActorCritic, Critic, LatentDynamics};
pub use coord::{decorrelate, execute_local, execute_slot, GateMode, GatePolicy, GateRecord};
pub use team::DwmAgent;
pub use worldmodel::{LatentState, ModelDims, SequenceBatch, WmLossBreakdown, WorldModel};
