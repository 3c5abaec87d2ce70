//! Multi-agent V-RACER with Remember-and-Forget Experience Replay.

pub mod codec;
pub mod dist;
pub mod envs;
pub mod learner;
pub mod net;
pub mod replay;
pub mod trainer;
