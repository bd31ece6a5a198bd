//! Per-agent FIFO store of complete episodes.

use std::collections::VecDeque;

use dwm::worldmodel::SequenceBatch;
use ndarray::Array2;
use rand::Rng;

/// One agent's view of a finished episode: `T + 1` observations (the last
/// one follows the final step), `T` raw actions and `T` rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSequence {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
}

impl EpisodeSequence {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Builds an episode incrementally during collection.
#[derive(Debug, Clone, Default)]
pub struct EpisodeBuilder {
    obs: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    rewards: Vec<f64>,
}

impl EpisodeBuilder {
    pub fn new(first_obs: Vec<f64>) -> Self {
        Self {
            obs: vec![first_obs],
            actions: Vec::new(),
            rewards: Vec::new(),
        }
    }

    pub fn push(&mut self, action: Vec<f64>, reward: f64, next_obs: Vec<f64>) {
        self.actions.push(action);
        self.rewards.push(reward);
        self.obs.push(next_obs);
    }

    pub fn finish(self) -> EpisodeSequence {
        EpisodeSequence {
            obs: stack(&self.obs),
            actions: stack(&self.actions),
            rewards: self.rewards,
        }
    }
}

fn stack(rows: &[Vec<f64>]) -> Array2<f64> {
    let cols = rows.first().map_or(0, Vec::len);
    Array2::from_shape_vec((rows.len(), cols), rows.concat()).expect("uniform row lengths")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    episode_len: usize,
    episodes: VecDeque<EpisodeSequence>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, episode_len: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            episode_len,
            episodes: VecDeque::with_capacity(capacity.min(4096)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &EpisodeSequence> {
        self.episodes.iter()
    }

    /// Stores a complete episode, evicting the oldest when full. Partial
    /// episodes are rejected.
    pub fn push(&mut self, episode: EpisodeSequence) -> bool {
        if episode.len() != self.episode_len || episode.obs.nrows() != self.episode_len + 1 {
            return false;
        }
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
        true
    }

    /// Episode indices drawn uniformly with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        assert!(!self.episodes.is_empty(), "sampling from an empty replay buffer");
        (0..n).map(|_| rng.gen_range(0..self.episodes.len())).collect()
    }

    /// Time-major batch of `n` uniformly drawn episodes.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> SequenceBatch {
        let idx = self.sample_indices(n, rng);
        self.batch(&idx)
    }

    pub fn batch(&self, indices: &[usize]) -> SequenceBatch {
        let eps: Vec<&EpisodeSequence> = indices.iter().map(|&i| &self.episodes[i]).collect();
        let b = eps.len();
        let t = self.episode_len;
        let obs_dim = eps[0].obs.ncols();
        let act_dim = eps[0].actions.ncols();
        let mut obs = vec![Array2::zeros((b, obs_dim)); t + 1];
        let mut actions = vec![Array2::zeros((b, act_dim)); t];
        let mut rewards = vec![Array2::zeros((b, 1)); t];
        for (i, e) in eps.iter().enumerate() {
            for s in 0..=t {
                obs[s].row_mut(i).assign(&e.obs.row(s));
            }
            for s in 0..t {
                actions[s].row_mut(i).assign(&e.actions.row(s));
                rewards[s][[i, 0]] = e.rewards[s];
            }
        }
        SequenceBatch { obs, actions, rewards }
    }
}
