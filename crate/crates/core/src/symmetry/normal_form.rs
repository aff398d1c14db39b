//! Label-erased histories: every state, action and observation index is
//! replaced by the rank of its first occurrence.

use serde::{Deserialize, Serialize};

use crate::history::History;

/// Normal form of a history. Ranks are kept in separate tracks: one for
/// states and one per agent for actions and for observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalForm<S> {
    pub states: Vec<usize>,
    pub actions: Vec<Vec<usize>>,
    pub observations: Vec<Vec<usize>>,
    pub rewards: Vec<S>,
}

#[derive(Default)]
struct Track {
    seen: Vec<(usize, usize)>,
}

impl Track {
    fn code(&mut self, x: usize) -> usize {
        if let Some(&(_, c)) = self.seen.iter().find(|(y, _)| *y == x) {
            return c;
        }
        let c = self.seen.len();
        self.seen.push((x, c));
        c
    }
}

pub fn normal_form<S: Clone>(tau: &History<S>) -> NormalForm<S> {
    let n = tau.actions.first().map_or(0, Vec::len);
    let mut st = Track::default();
    let mut at: Vec<Track> = (0..n).map(|_| Track::default()).collect();
    let mut ot: Vec<Track> = (0..n).map(|_| Track::default()).collect();
    // codes are assigned in episode order: s_0, a_0, s_1, o_1, a_1, ...
    let mut states = Vec::with_capacity(tau.states.len());
    let mut actions = Vec::with_capacity(tau.actions.len());
    let mut observations = Vec::with_capacity(tau.observations.len());
    for t in 0..tau.actions.len() {
        states.push(st.code(tau.states[t]));
        if t > 0 {
            observations.push(tau.observations[t - 1].iter().zip(&mut ot).map(|(&o, tr)| tr.code(o)).collect());
        }
        actions.push(tau.actions[t].iter().zip(&mut at).map(|(&a, tr)| tr.code(a)).collect());
    }
    NormalForm { states, actions, observations, rewards: tau.rewards.clone() }
}

impl<S: Clone> NormalForm<S> {
    /// Moves agent `i`'s slots to position `f_N(i)`.
    pub fn permute_agents(&self, agents: &[usize]) -> NormalForm<S> {
        let perm = |row: &Vec<usize>| {
            let mut out = vec![0; row.len()];
            for (i, &x) in row.iter().enumerate() {
                out[agents[i]] = x;
            }
            out
        };
        NormalForm {
            states: self.states.clone(),
            actions: self.actions.iter().map(perm).collect(),
            observations: self.observations.iter().map(perm).collect(),
            rewards: self.rewards.clone(),
        }
    }

    /// Reads the normal form back as an ordinary history.
    pub fn as_history(&self) -> History<S> {
        History {
            states: self.states.clone(),
            actions: self.actions.clone(),
            observations: self.observations.clone(),
            rewards: self.rewards.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, EnvName};
    use crate::eval::history_distribution;
    use crate::policy::TabularPolicy;
    use crate::symmetry::iso::Perms;
    use crate::symmetry::search::enumerate_automorphisms;

    fn all_labelings_fixing_agents(d: &crate::model::DecPomdp<f64>) -> Vec<Perms> {
        let sw = |k: usize| -> Vec<Vec<usize>> { if k == 2 { vec![vec![0, 1], vec![1, 0]] } else { vec![(0..k).collect()] } };
        let mut out = Vec::new();
        for a0 in sw(d.n_actions()[0]) {
            for a1 in sw(d.n_actions()[1]) {
                for o0 in sw(d.n_observations()[0]) {
                    for o1 in sw(d.n_observations()[1]) {
                        out.push(Perms {
                            agents: vec![0, 1],
                            states: vec![0],
                            actions: vec![a0.clone(), a1.clone()],
                            observations: vec![o0.clone(), o1.clone()],
                        });
                    }
                }
            }
        }
        out
    }

    #[test]
    fn repeated_action_gets_one_code() {
        let h = History {
            states: vec![0, 0],
            actions: vec![vec![2, 1], vec![2, 0]],
            observations: vec![vec![1, 2]],
            rewards: vec![1.0, -1.0],
        };
        let nf = normal_form(&h);
        assert_eq!(nf.actions, vec![vec![0, 0], vec![0, 1]]);
        assert_eq!(nf.observations, vec![vec![0, 0]]);
        assert_eq!(nf.states, vec![0, 0]);
        assert_eq!(nf.rewards, h.rewards);
        assert_eq!(normal_form(&nf.as_history()), nf);
    }

    #[test]
    fn within_agent_relabels_are_erased() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let dist = history_distribution(&d, &TabularPolicy::uniform(&d)).unwrap();
        for f in all_labelings_fixing_agents(&d) {
            for (tau, _) in &dist {
                assert_eq!(normal_form(&f.map_history(tau)), normal_form(tau));
            }
        }
    }

    #[test]
    fn agent_permutations_commute_with_normal_form() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let dist = history_distribution(&d, &TabularPolicy::uniform(&d)).unwrap();
        for g in enumerate_automorphisms(&d).unwrap() {
            for (tau, _) in &dist {
                assert_eq!(normal_form(&g.map_history(tau)), normal_form(tau).permute_agents(&g.agents));
            }
        }
    }
}
