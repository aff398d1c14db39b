//! Episode histories and per-agent action-observation histories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense index space over all action-observation histories of one agent.
///
/// A history at step `t` is `(a_0, o_1, ..., a_{t-1}, o_t)`. Histories of
/// length `t` occupy the contiguous block `offset(t) .. offset(t+1)`, in
/// lexicographic order of their `(a, o)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AoSpace {
    n_actions: usize,
    n_observations: usize,
    horizon: usize,
    offsets: Vec<usize>,
}

impl AoSpace {
    pub fn new(n_actions: usize, n_observations: usize, horizon: usize) -> Self {
        let branch = n_actions * n_observations;
        let mut offsets = Vec::with_capacity(horizon + 2);
        let mut acc = 0usize;
        let mut width = 1usize;
        for _ in 0..=horizon {
            offsets.push(acc);
            acc += width;
            width *= branch;
        }
        offsets.push(acc);
        AoSpace { n_actions, n_observations, horizon, offsets }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_observations(&self) -> usize {
        self.n_observations
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Total number of histories of length `0..=T`.
    pub fn len(&self) -> usize {
        self.offsets[self.horizon + 1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count_at(&self, t: usize) -> usize {
        self.offsets[t + 1] - self.offsets[t]
    }

    pub fn range_at(&self, t: usize) -> std::ops::Range<usize> {
        self.offsets[t]..self.offsets[t + 1]
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn step_of(&self, index: usize) -> usize {
        self.offsets.partition_point(|&o| o <= index) - 1
    }

    /// Index of the history extended by one `(action, observation)` pair.
    pub fn child(&self, index: usize, action: usize, obs: usize) -> usize {
        let t = self.step_of(index);
        debug_assert!(t < self.horizon);
        let code = index - self.offsets[t];
        self.offsets[t + 1] + code * self.n_actions * self.n_observations + action * self.n_observations + obs
    }

    pub fn index_of(&self, pairs: &[(usize, usize)]) -> Result<usize> {
        if pairs.len() > self.horizon {
            return Err(Error::OutOfRange(format!("history length {} > horizon {}", pairs.len(), self.horizon)));
        }
        let mut idx = self.root();
        for &(a, o) in pairs {
            if a >= self.n_actions || o >= self.n_observations {
                return Err(Error::OutOfRange(format!("pair ({a}, {o})")));
            }
            idx = self.child(idx, a, o);
        }
        Ok(idx)
    }

    pub fn pairs_of(&self, index: usize) -> Vec<(usize, usize)> {
        let t = self.step_of(index);
        let mut code = index - self.offsets[t];
        let mut out = vec![(0, 0); t];
        for k in (0..t).rev() {
            let pair = code % (self.n_actions * self.n_observations);
            code /= self.n_actions * self.n_observations;
            out[k] = (pair / self.n_observations, pair % self.n_observations);
        }
        out
    }

    /// All histories of length `t`, in lexicographic order.
    pub fn enumerate(&self, agent: usize, t: usize) -> Result<Vec<AoHistory>> {
        if t > self.horizon {
            return Err(Error::OutOfRange(format!("step {t} > horizon {}", self.horizon)));
        }
        Ok(self.range_at(t).map(|i| AoHistory { agent, pairs: self.pairs_of(i) }).collect())
    }
}

/// One agent's action-observation history `(a_0, o_1, ..., a_{t-1}, o_t)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AoHistory {
    pub agent: usize,
    pub pairs: Vec<(usize, usize)>,
}

impl AoHistory {
    pub fn step(&self) -> usize {
        self.pairs.len()
    }

    /// Alternating `[a_0, o_1, a_1, o_2, ...]` encoding used in policy files.
    pub fn to_flat(&self) -> Vec<usize> {
        self.pairs.iter().flat_map(|&(a, o)| [a, o]).collect()
    }

    pub fn from_flat(agent: usize, flat: &[usize]) -> Result<Self> {
        if !flat.len().is_multiple_of(2) {
            return Err(Error::ShapeMismatch("AO history must alternate action/observation".into()));
        }
        Ok(AoHistory { agent, pairs: flat.chunks(2).map(|c| (c[0], c[1])).collect() })
    }
}

/// Full episode record. `observations[t-1]` is the joint observation that
/// arrived at step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History<S> {
    pub states: Vec<usize>,
    pub actions: Vec<Vec<usize>>,
    pub observations: Vec<Vec<usize>>,
    pub rewards: Vec<S>,
}

impl<S: Clone + std::ops::Add<Output = S> + num_traits::Zero> History<S> {
    pub fn total_reward(&self) -> S {
        self.rewards.iter().cloned().fold(S::zero(), |a, b| a + b)
    }
}

impl<S> History<S> {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    /// Agent `i`'s action-observation history at step `t`.
    pub fn ao_history(&self, agent: usize, t: usize) -> AoHistory {
        AoHistory {
            agent,
            pairs: (0..t).map(|k| (self.actions[k][agent], self.observations[k][agent])).collect(),
        }
    }

    /// Same as [`History::ao_history`] but returns the dense index in `space`.
    pub fn ao_index(&self, space: &AoSpace, agent: usize, t: usize) -> usize {
        let mut idx = space.root();
        for k in 0..t {
            idx = space.child(idx, self.actions[k][agent], self.observations[k][agent]);
        }
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_branching() {
        let sp = AoSpace::new(2, 2, 1);
        assert_eq!(sp.count_at(0), 1);
        assert_eq!(sp.count_at(1), 4);
        assert_eq!(sp.len(), 5);
        let sp = AoSpace::new(3, 3, 2);
        assert_eq!(sp.count_at(1), 9);
        assert_eq!(sp.len(), 1 + 9 + 81);
    }

    #[test]
    fn index_round_trip() {
        let sp = AoSpace::new(3, 2, 3);
        for i in 0..sp.len() {
            let pairs = sp.pairs_of(i);
            assert_eq!(sp.index_of(&pairs).unwrap(), i);
            assert_eq!(sp.step_of(i), pairs.len());
        }
    }

    #[test]
    fn enumeration_is_lexicographic() {
        let sp = AoSpace::new(2, 2, 1);
        let hs = sp.enumerate(0, 1).unwrap();
        let flat: Vec<_> = hs.iter().map(|h| h.to_flat()).collect();
        assert_eq!(flat, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        assert_eq!(sp.enumerate(0, 0).unwrap(), vec![AoHistory { agent: 0, pairs: vec![] }]);
        assert!(sp.enumerate(0, 2).is_err());
    }
}
