use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::agent::{standard_normal, MemoryBatch, SacAgent, UpdateHook, UpdateReport};
use super::replay::{Batch, ReplayBuffer};
use crate::augment::{AugmentationKind, Augmenter, EpisodicMemory};
use crate::env::{self, TaskSpec, Transition};
use crate::error::{Error, Result};

/// Derives an independent 64-bit seed for a named stream.
pub fn stream_seed(label: &str, seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update(b":");
    h.update(seed.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// Separate random streams so that, e.g., augmentation draws never shift
/// the environment's reset sequence.
#[derive(Debug, Clone)]
pub struct Streams {
    pub env: ChaCha8Rng,
    pub agent: ChaCha8Rng,
    pub replay: ChaCha8Rng,
    pub memory: ChaCha8Rng,
}

impl Streams {
    pub fn from_seed(seed: u64) -> Self {
        let mk = |l: &str| ChaCha8Rng::seed_from_u64(stream_seed(l, seed));
        Self {
            env: mk("env"),
            agent: mk("agent"),
            replay: mk("replay"),
            memory: mk("memory"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdatePath {
    /// Every update goes through the augmentation-aware path.
    #[default]
    Augmented,
    /// Augmentation code is bypassed entirely.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainOptions {
    pub steps: usize,
    /// Callback period in environment steps; 0 disables it.
    pub eval_interval: usize,
    pub path: UpdatePath,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrainStats {
    pub steps: usize,
    pub updates: usize,
    pub episodes: usize,
    pub successes: usize,
    pub last_report: Option<UpdateReport>,
}

/// Draws a memory batch when the update needs one and memory is non-empty.
fn memory_batch<R: Rng + ?Sized>(
    memory: &EpisodicMemory,
    n: usize,
    action_dim: usize,
    rng: &mut R,
) -> Result<Option<MemoryBatch>> {
    if memory.is_empty() || n == 0 {
        return Ok(None);
    }
    let picked = memory.sample(n, rng);
    let batch = Batch::from_transitions(&picked)?;
    let noise = standard_normal(n, action_dim, rng);
    let noise_next = standard_normal(n, action_dim, rng);
    Ok(Some(MemoryBatch {
        batch,
        noise,
        noise_next,
    }))
}

/// Trains on one task: random actions for the first `warmup_steps`, then one
/// update per environment step. `on_eval(local_step, agent)` fires every
/// `eval_interval` steps; returning `false` stops training early.
#[allow(clippy::too_many_arguments)]
pub fn train_task(
    agent: &mut SacAgent,
    task: &TaskSpec,
    opts: TrainOptions,
    buffer: &mut ReplayBuffer,
    augmenter: &mut Augmenter,
    memory: &EpisodicMemory,
    hook: &mut dyn UpdateHook,
    streams: &mut Streams,
    on_eval: &mut dyn FnMut(usize, &SacAgent) -> Result<bool>,
) -> Result<TrainStats> {
    if agent.state_dim() != env::STATE_DIM || agent.action_dim() != env::ACTION_DIM {
        return Err(Error::Shape("agent dimensions do not match the environment".into()));
    }
    let warmup = agent.config().warmup_steps;
    let batch_size = agent.config().batch_size;
    let needs_memory = augmenter.kind() == AugmentationKind::AdvGem || hook.wants_memory();
    let mut stats = TrainStats::default();
    let mut state = env::reset(task, streams.env.random());
    for t in 0..opts.steps {
        let obs = state.observation();
        let action = if t < warmup {
            (0..env::ACTION_DIM)
                .map(|_| streams.agent.random_range(-1.0..=1.0))
                .collect()
        } else {
            agent.act(&obs, true, &mut streams.agent)?
        };
        let (next, reward, finished) = env::step(task, &state, &action)?;
        let terminal = env::success(task, &next);
        buffer.push(Transition {
            state: obs,
            action,
            reward,
            next_state: next.observation(),
            done: terminal,
        });
        if finished {
            stats.episodes += 1;
            stats.successes += usize::from(terminal);
            state = env::reset(task, streams.env.random());
        } else {
            state = next;
        }
        if t >= warmup {
            let batch = buffer.sample(batch_size, &mut streams.replay)?;
            let mem = if needs_memory {
                memory_batch(memory, batch_size, agent.action_dim(), &mut streams.memory)?
            } else {
                None
            };
            let report = match opts.path {
                UpdatePath::Augmented => {
                    agent.augmented_update(&batch, augmenter, mem.as_ref(), &mut streams.agent, hook)?
                }
                UpdatePath::Plain => agent.update(&batch, mem.as_ref(), &mut streams.agent, hook)?,
            };
            stats.updates += 1;
            stats.last_report = Some(report);
        }
        stats.steps = t + 1;
        if opts.eval_interval > 0 && (t + 1) % opts.eval_interval == 0 && !on_eval(t + 1, agent)? {
            break;
        }
    }
    Ok(stats)
}

/// Success rate of the deterministic policy over `episodes` fresh episodes.
pub fn evaluate(
    policy: &crate::autodiff::Network,
    task: &TaskSpec,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::Input("evaluation needs at least one episode".into()));
    }
    let mut wins = 0;
    for _ in 0..episodes {
        let mut state = env::reset(task, rng.random());
        loop {
            let a = super::agent::act_with(policy, &state.observation(), false, rng)?;
            let (next, _, done) = env::step(task, &state, &a)?;
            if env::success(task, &next) {
                wins += 1;
                break;
            }
            if done {
                break;
            }
            state = next;
        }
    }
    Ok(wins as f64 / episodes as f64)
}
