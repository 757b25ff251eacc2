//! Soft Actor-Critic: replay, the agent and its update rules, and the
//! per-task training loop.

mod agent;
mod replay;
mod train;

pub use agent::{
    act_with, standard_normal, MemoryBatch, NetRole, NoHook, PolicyLossProbe, SacAgent, SacConfig,
    UpdateHook, UpdateReport,
};
pub use replay::{Batch, ReplayBuffer, DEFAULT_BUFFER_CAPACITY};
pub use train::{evaluate, stream_seed, train_task, Streams, TrainOptions, TrainStats, UpdatePath};
