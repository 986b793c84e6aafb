//! Episodic replay: whole joint episodes, sampled per (episode, step).
//!
//! Histories are materialised lazily at sample time from the stored
//! per-step observations, newest first and zero-padded past the episode
//! start, so the buffer never stores the same observation `max_len`
//! times over.

use std::collections::VecDeque;

use rand::RngCore;

/// One finished joint episode: observations at every timestep (including
/// the reset observation), and per-transition actions, rewards, and the
/// valid-action masks of the *next* state.
#[derive(Debug, Clone)]
pub struct Episode {
    /// `obs[t][agent]` for `t` in `0..=T`.
    pub obs: Vec<Vec<Vec<f64>>>,
    /// `actions[k][agent]` for transition `k` in `0..T`.
    pub actions: Vec<Vec<usize>>,
    /// `rewards[k][agent]`.
    pub rewards: Vec<Vec<f64>>,
    /// `next_masks[k][agent]`: valid actions in the state transition `k`
    /// landed in.
    pub next_masks: Vec<Vec<Vec<bool>>>,
}

impl Episode {
    /// Starts an episode from the reset observation.
    pub fn start(first_obs: Vec<Vec<f64>>) -> Episode {
        Episode {
            obs: vec![first_obs],
            actions: Vec::new(),
            rewards: Vec::new(),
            next_masks: Vec::new(),
        }
    }

    /// Appends one transition.
    pub fn push(
        &mut self,
        actions: Vec<usize>,
        rewards: Vec<f64>,
        next_obs: Vec<Vec<f64>>,
        next_masks: Vec<Vec<bool>>,
    ) {
        self.obs.push(next_obs);
        self.actions.push(actions);
        self.rewards.push(rewards);
        self.next_masks.push(next_masks);
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Whether transition `k` ends the episode.
    pub fn is_terminal(&self, k: usize) -> bool {
        k + 1 == self.len()
    }
}

/// A fixed-shape history slice: `max_len × input_dim` values, row 0 the
/// newest observation, plus the validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedHistory {
    pub rows: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Builds agent `agent`'s history ending at state index `t` (0 = the
/// reset observation): rows `t, t-1, ..., t-max_len+1`, zero rows and
/// false mask where that runs past the start.
pub fn history_at(ep: &Episode, agent: usize, t: usize, max_len: usize) -> PaddedHistory {
    let dim = ep.obs[0][agent].len();
    let mut rows = vec![0.0; max_len * dim];
    let mut mask = vec![false; max_len];
    for j in 0..max_len {
        if j > t {
            break;
        }
        rows[j * dim..(j + 1) * dim].copy_from_slice(&ep.obs[t - j][agent]);
        mask[j] = true;
    }
    PaddedHistory { rows, mask }
}

/// Ring of whole episodes with uniform per-transition sampling.
#[derive(Debug)]
pub struct ReplayBuffer {
    episodes: VecDeque<Episode>,
    capacity: usize,
    total: usize,
}

impl ReplayBuffer {
    /// `capacity` is in episodes; the oldest whole episode is evicted
    /// when a new one would exceed it.
    pub fn new(capacity: usize) -> ReplayBuffer {
        ReplayBuffer {
            episodes: VecDeque::new(),
            capacity: capacity.max(1),
            total: 0,
        }
    }

    pub fn push(&mut self, ep: Episode) {
        if ep.is_empty() {
            return;
        }
        self.total += ep.len();
        self.episodes.push_back(ep);
        while self.episodes.len() > self.capacity {
            let old = self.episodes.pop_front().expect("non-empty ring");
            self.total -= old.len();
        }
    }

    pub fn n_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn n_transitions(&self) -> usize {
        self.total
    }

    pub fn episode(&self, idx: usize) -> &Episode {
        &self.episodes[idx]
    }

    /// Draws `batch` (episode index, transition index) pairs uniformly
    /// over every stored transition.
    pub fn sample(&self, rng: &mut impl RngCore, batch: usize) -> Vec<(usize, usize)> {
        assert!(self.total > 0, "sampling from an empty buffer");
        (0..batch)
            .map(|_| {
                let mut flat = (rng.next_u64() % self.total as u64) as usize;
                for (idx, ep) in self.episodes.iter().enumerate() {
                    if flat < ep.len() {
                        return (idx, flat);
                    }
                    flat -= ep.len();
                }
                unreachable!("flat index within total transitions");
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use atsc_sim::rng::stream;

    /// An episode whose observation at time t is the single value t, for
    /// easy history inspection.
    fn counting_episode(t_max: usize) -> Episode {
        let mut ep = Episode::start(vec![vec![0.0]]);
        for t in 1..=t_max {
            ep.push(vec![0], vec![-1.0], vec![vec![t as f64]], vec![vec![true]]);
        }
        ep
    }

    #[test]
    fn history_at_episode_start_is_all_padding_but_row_zero() {
        let ep = counting_episode(10);
        let h = history_at(&ep, 0, 0, 4);
        assert_eq!(h.rows, vec![0.0, 0.0, 0.0, 0.0]);
        assert_eq!(h.mask, vec![true, false, false, false]);
    }

    #[test]
    fn history_deep_in_episode_is_fully_valid_and_newest_first() {
        let ep = counting_episode(10);
        let h = history_at(&ep, 0, 9, 4);
        assert_eq!(h.rows, vec![9.0, 8.0, 7.0, 6.0]);
        assert_eq!(h.mask, vec![true, true, true, true]);
    }

    #[test]
    fn history_near_start_pads_the_tail() {
        let ep = counting_episode(10);
        let h = history_at(&ep, 0, 2, 4);
        assert_eq!(h.rows, vec![2.0, 1.0, 0.0, 0.0]);
        assert_eq!(h.mask, vec![true, true, true, false]);
    }

    /// Fuzz the contract across lengths and positions: the mask marks
    /// exactly the rows that exist and marked rows match the source.
    #[test]
    fn history_boundaries_fuzzed() {
        use rand::Rng;
        let mut rng = stream(31, "fuzz");
        for _ in 0..500 {
            let t_max = rng.gen_range(1..30usize);
            let max_len = rng.gen_range(1..12usize);
            let t = rng.gen_range(0..=t_max);
            let ep = counting_episode(t_max);
            let h = history_at(&ep, 0, t, max_len);
            assert_eq!(h.mask.len(), max_len);
            assert_eq!(h.rows.len(), max_len);
            for j in 0..max_len {
                if j <= t {
                    assert!(h.mask[j]);
                    assert_eq!(h.rows[j], (t - j) as f64);
                } else {
                    assert!(!h.mask[j]);
                    assert_eq!(h.rows[j], 0.0);
                }
            }
        }
    }

    #[test]
    fn ring_evicts_oldest_whole_episodes() {
        let mut buf = ReplayBuffer::new(2);
        for i in 1..=3usize {
            buf.push(counting_episode(i * 2));
        }
        assert_eq!(buf.n_episodes(), 2);
        // Episodes of length 4 and 6 remain; the length-2 one is gone.
        assert_eq!(buf.n_transitions(), 10);
        assert_eq!(buf.episode(0).len(), 4);
    }

    /// Sampling covers all transitions and respects the distribution
    /// roughly uniformly.
    #[test]
    fn sampling_is_uniform_over_transitions() {
        let mut buf = ReplayBuffer::new(4);
        buf.push(counting_episode(3)); // 3 transitions
        buf.push(counting_episode(7)); // 7 transitions
        let mut rng = stream(32, "replay");
        let mut counts = vec![vec![0u32; 3], vec![0u32; 7]];
        let draws = 100_000;
        for (ep, k) in buf.sample(&mut rng, draws) {
            counts[ep][k] += 1;
        }
        let expect = draws as f64 / 10.0;
        for ep in 0..2 {
            for &c in &counts[ep] {
                let ratio = c as f64 / expect;
                assert!((0.93..1.07).contains(&ratio), "ratio {ratio}");
            }
        }
    }

    #[test]
    fn terminal_flag_marks_only_the_last_transition() {
        let ep = counting_episode(5);
        for k in 0..5 {
            assert_eq!(ep.is_terminal(k), k == 4);
        }
    }
}
