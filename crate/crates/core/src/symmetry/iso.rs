//! Isomorphism tuples, their algebra, and their action on histories,
//! policies and models.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{AoHistory, AoSpace, History};
use crate::model::{DecPomdp, JointSpace};
use crate::policy::{LocalPolicy, TabularPolicy};
use crate::scalar::Scalar;

/// The raw bijection tuple `(f_N, f_S, (f_{A_i})_i, (f_{O_i})_i)`.
///
/// `actions[i]` maps source agent `i`'s actions to the actions of target
/// agent `agents[i]`; likewise for `observations`. The derived ordering is
/// lexicographic over `(agents, states, actions, observations)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Perms {
    pub agents: Vec<usize>,
    pub states: Vec<usize>,
    pub actions: Vec<Vec<usize>>,
    pub observations: Vec<Vec<usize>>,
}

/// A bijection tuple onto canonical index ranges. Since models here are
/// always indexed by dense ranges, a labeling is any well-shaped tuple.
pub type Labeling = Perms;

fn invert_perm(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (x, &y) in p.iter().enumerate() {
        inv[y] = x;
    }
    inv
}

fn is_perm(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    for &y in p {
        if y >= p.len() || seen[y] {
            return false;
        }
        seen[y] = true;
    }
    true
}

fn random_perm<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

impl Perms {
    pub fn identity<S: Scalar>(d: &DecPomdp<S>) -> Self {
        Perms {
            agents: (0..d.n_agents()).collect(),
            states: (0..d.n_states()).collect(),
            actions: d.n_actions().iter().map(|&k| (0..k).collect()).collect(),
            observations: d.n_observations().iter().map(|&k| (0..k).collect()).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        let id = |p: &[usize]| p.iter().enumerate().all(|(k, &v)| k == v);
        id(&self.agents)
            && id(&self.states)
            && self.actions.iter().all(|p| id(p))
            && self.observations.iter().all(|p| id(p))
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// Checks that every component is a bijection shaped for `d` as source.
    pub fn check_shape<S: Scalar>(&self, d: &DecPomdp<S>) -> Result<()> {
        let n = d.n_agents();
        let ok = self.agents.len() == n
            && is_perm(&self.agents)
            && self.states.len() == d.n_states()
            && is_perm(&self.states)
            && self.actions.len() == n
            && self.observations.len() == n
            && (0..n).all(|i| {
                self.actions[i].len() == d.n_actions()[i]
                    && is_perm(&self.actions[i])
                    && self.observations[i].len() == d.n_observations()[i]
                    && is_perm(&self.observations[i])
            });
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("bijection tuple is not shaped for this model".into()))
        }
    }

    /// Checks that `self` can map `d` onto `e` component-wise.
    pub fn check_shape_between<S: Scalar>(&self, d: &DecPomdp<S>, e: &DecPomdp<S>) -> Result<()> {
        self.check_shape(d)?;
        let fits = d.n_agents() == e.n_agents()
            && d.n_states() == e.n_states()
            && d.horizon() == e.horizon()
            && (0..d.n_agents()).all(|i| {
                let j = self.agents[i];
                e.n_actions()[j] == d.n_actions()[i] && e.n_observations()[j] == d.n_observations()[i]
            });
        if fits {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("component cardinalities or horizons differ".into()))
        }
    }

    pub fn inverse(&self) -> Perms {
        let n = self.agents.len();
        let agents = invert_perm(&self.agents);
        let mut actions = vec![Vec::new(); n];
        let mut observations = vec![Vec::new(); n];
        for i in 0..n {
            actions[self.agents[i]] = invert_perm(&self.actions[i]);
            observations[self.agents[i]] = invert_perm(&self.observations[i]);
        }
        Perms { agents, states: invert_perm(&self.states), actions, observations }
    }

    /// `self ∘ f`: first `f`, then `self`.
    pub fn after(&self, f: &Perms) -> Perms {
        let n = f.agents.len();
        let comp = |outer: &[usize], inner: &[usize]| inner.iter().map(|&x| outer[x]).collect::<Vec<_>>();
        Perms {
            agents: comp(&self.agents, &f.agents),
            states: comp(&self.states, &f.states),
            actions: (0..n).map(|i| comp(&self.actions[f.agents[i]], &f.actions[i])).collect(),
            observations: (0..n).map(|i| comp(&self.observations[f.agents[i]], &f.observations[i])).collect(),
        }
    }

    /// Agent `f_N(i)` plays `f_{A_i}(a_i)`.
    pub fn map_joint_action(&self, parts: &[usize]) -> Vec<usize> {
        let mut out = vec![0; parts.len()];
        for (i, &a) in parts.iter().enumerate() {
            out[self.agents[i]] = self.actions[i][a];
        }
        out
    }

    pub fn map_joint_observation(&self, parts: &[usize]) -> Vec<usize> {
        let mut out = vec![0; parts.len()];
        for (i, &o) in parts.iter().enumerate() {
            out[self.agents[i]] = self.observations[i][o];
        }
        out
    }

    pub fn map_state(&self, s: usize) -> usize {
        self.states[s]
    }

    pub fn map_ao_history(&self, h: &AoHistory) -> AoHistory {
        let i = h.agent;
        AoHistory {
            agent: self.agents[i],
            pairs: h.pairs.iter().map(|&(a, o)| (self.actions[i][a], self.observations[i][o])).collect(),
        }
    }

    /// Relabels every state, joint action and joint observation; rewards
    /// are left untouched.
    pub fn map_history<S: Clone>(&self, h: &History<S>) -> History<S> {
        History {
            states: h.states.iter().map(|&s| self.states[s]).collect(),
            actions: h.actions.iter().map(|a| self.map_joint_action(a)).collect(),
            observations: h.observations.iter().map(|o| self.map_joint_observation(o)).collect(),
            rewards: h.rewards.clone(),
        }
    }

    /// Dense index map from source agent `i`'s AO histories to target agent
    /// `f_N(i)`'s AO histories.
    pub fn ao_index_map(&self, source_agent: usize, space: &AoSpace) -> Vec<usize> {
        let fa = &self.actions[source_agent];
        let fo = &self.observations[source_agent];
        let mut map = vec![0; space.len()];
        for t in 0..space.horizon() {
            for h in space.range_at(t) {
                for a in 0..space.n_actions() {
                    for o in 0..space.n_observations() {
                        map[space.child(h, a, o)] = space.child(map[h], fa[a], fo[o]);
                    }
                }
            }
        }
        map
    }

    /// Sizes of the target model's per-agent action sets.
    pub fn target_sizes(&self, source: &[usize]) -> Vec<usize> {
        let mut out = vec![0; source.len()];
        for (i, &k) in source.iter().enumerate() {
            out[self.agents[i]] = k;
        }
        out
    }
}

impl fmt::Display for Perms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N{:?} S{:?} A{:?} O{:?}", self.agents, self.states, self.actions, self.observations)
    }
}

/// An isomorphism between two fingerprinted models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Isomorphism {
    pub source: String,
    pub target: String,
    #[serde(flatten)]
    pub map: Perms,
}

/// Which defining kernel equality failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Transition,
    Observation,
    Reward,
    Initial,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub condition: Condition,
    pub location: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} condition violated at {}", self.condition, self.location)
    }
}

/// Tolerance for kernel equality checks.
pub const ISO_TOLERANCE: f64 = 1e-12;

fn joint_map(f: &[Vec<usize>], agents: &[usize], src: &JointSpace, dst: &JointSpace) -> Vec<usize> {
    (0..src.len())
        .map(|x| {
            let mut parts = vec![0; agents.len()];
            for (i, &v) in src.decode(x).iter().enumerate() {
                parts[agents[i]] = f[i][v];
            }
            dst.encode(&parts)
        })
        .collect()
}

/// Returns the first violated kernel condition, or `None` when `f` is an
/// isomorphism from `d` to `e`.
pub fn check_isomorphism<S: Scalar>(d: &DecPomdp<S>, e: &DecPomdp<S>, f: &Perms) -> Result<Option<Violation>> {
    f.check_shape_between(d, e)?;
    let tol = ISO_TOLERANCE.max(S::default_tolerance());
    let eq = |x: &S, y: &S| x.approx_eq(y, tol);
    let amap = joint_map(&f.actions, &f.agents, d.joint_actions(), e.joint_actions());
    let omap = joint_map(&f.observations, &f.agents, d.joint_observations(), e.joint_observations());
    let fail = |condition, location: String| Ok(Some(Violation { condition, location }));
    for s in 0..d.n_states() {
        if !eq(d.initial(s), e.initial(f.states[s])) {
            return fail(Condition::Initial, format!("s={s}"));
        }
    }
    for s in 0..d.n_states() {
        for (a, &b) in amap.iter().enumerate() {
            if !eq(d.reward(s, a), e.reward(f.states[s], b)) {
                return fail(Condition::Reward, format!("s={s}, a={:?}", d.joint_actions().decode(a)));
            }
        }
    }
    for s in 0..d.n_states() {
        for (a, &b) in amap.iter().enumerate() {
            for s2 in 0..d.n_states() {
                if !eq(d.transition(s, a, s2), e.transition(f.states[s], b, f.states[s2])) {
                    return fail(
                        Condition::Transition,
                        format!("s={s}, a={:?}, s'={s2}", d.joint_actions().decode(a)),
                    );
                }
            }
        }
    }
    for s in 0..d.n_states() {
        for (a, &b) in amap.iter().enumerate() {
            for (o, &p) in omap.iter().enumerate() {
                if !eq(d.observation(s, a, o), e.observation(f.states[s], b, p)) {
                    return fail(
                        Condition::Observation,
                        format!(
                            "s={s}, a={:?}, o={:?}",
                            d.joint_actions().decode(a),
                            d.joint_observations().decode(o)
                        ),
                    );
                }
            }
        }
    }
    Ok(None)
}

pub fn is_isomorphism<S: Scalar>(d: &DecPomdp<S>, e: &DecPomdp<S>, f: &Perms) -> bool {
    matches!(check_isomorphism(d, e, f), Ok(None))
}

impl Isomorphism {
    /// Validates `map` as an isomorphism from `d` to `e`.
    pub fn new<S: Scalar>(d: &DecPomdp<S>, e: &DecPomdp<S>, map: Perms) -> Result<Self> {
        if let Some(v) = check_isomorphism(d, e, &map)? {
            return Err(Error::InvalidModel(format!("not an isomorphism: {v}")));
        }
        Ok(Isomorphism { source: d.fingerprint().to_string(), target: e.fingerprint().to_string(), map })
    }

    pub fn identity<S: Scalar>(d: &DecPomdp<S>) -> Self {
        Isomorphism { source: d.fingerprint().to_string(), target: d.fingerprint().to_string(), map: Perms::identity(d) }
    }

    pub fn invert(&self) -> Self {
        Isomorphism { source: self.target.clone(), target: self.source.clone(), map: self.map.inverse() }
    }

    /// `g ∘ f` for `f: D → E` and `g: E → F`.
    pub fn compose(g: &Isomorphism, f: &Isomorphism) -> Result<Self> {
        if f.target != g.source {
            return Err(Error::FingerprintMismatch { expected: f.target.clone(), found: g.source.clone() });
        }
        Ok(Isomorphism { source: f.source.clone(), target: g.target.clone(), map: g.map.after(&f.map) })
    }
}

/// Local policy `(f*π)_j` for target agent `j`.
pub fn pushforward_local<S: Scalar>(f: &Perms, pi: &TabularPolicy<S>, target_agent: usize) -> LocalPolicy<S> {
    let i = f.agents.iter().position(|&j| j == target_agent).expect("agent permutation is a bijection");
    let src = pi.local(i);
    let space = src.space();
    let map = f.ao_index_map(i, space);
    let k = space.n_actions();
    let mut probs = src.table().to_vec();
    for (h, &h2) in map.iter().enumerate() {
        for a in 0..k {
            probs[h2 * k + f.actions[i][a]] = src.prob(h, a).clone();
        }
    }
    LocalPolicy::from_table(space.clone(), probs).expect("same-size table")
}

/// Pushforward `f*π`: `(f*π)_j(a | τ) = π_{f^{-1} j}(f^{-1} a | f^{-1} τ)`.
pub fn pushforward<S: Scalar>(f: &Perms, pi: &TabularPolicy<S>) -> Result<TabularPolicy<S>> {
    let n = pi.n_agents();
    if f.n_agents() != n || (0..n).any(|i| f.actions[i].len() != pi.local(i).n_actions()) {
        return Err(Error::ShapeMismatch("bijection tuple does not match the policy".into()));
    }
    Ok(TabularPolicy::from_locals((0..n).map(|j| pushforward_local(f, pi, j)).collect()))
}

/// The relabeled model `f*D`, whose tables are those of `D` precomposed
/// with `f^{-1}`.
pub fn relabel<S: Scalar>(d: &DecPomdp<S>, f: &Labeling) -> Result<DecPomdp<S>> {
    f.check_shape(d)?;
    let inv = f.inverse();
    let n_actions = f.target_sizes(d.n_actions());
    let n_obs = f.target_sizes(d.n_observations());
    let src_a = d.joint_actions();
    let src_o = d.joint_observations();
    DecPomdp::from_fn(
        d.n_states(),
        &n_actions,
        &n_obs,
        d.horizon(),
        |s, b, s2| d.transition(inv.states[s], src_a.encode(&inv.map_joint_action(b)), inv.states[s2]).clone(),
        |s, b, o| {
            d.observation(inv.states[s], src_a.encode(&inv.map_joint_action(b)), src_o.encode(&inv.map_joint_observation(o)))
                .clone()
        },
        |s, b| d.reward(inv.states[s], src_a.encode(&inv.map_joint_action(b))).clone(),
        |s| d.initial(inv.states[s]).clone(),
    )
}

/// Uniform draw from the product of all component permutation groups.
pub fn sample_labeling<S: Scalar, R: Rng + ?Sized>(d: &DecPomdp<S>, rng: &mut R) -> Labeling {
    Perms {
        agents: random_perm(d.n_agents(), rng),
        states: random_perm(d.n_states(), rng),
        actions: d.n_actions().iter().map(|&k| random_perm(k, rng)).collect(),
        observations: d.n_observations().iter().map(|&k| random_perm(k, rng)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, reference_policy, EnvName, RefPolicy};
    use crate::eval::{expected_return, history_distribution};
    use crate::rng;

    fn swap_second_agent_actions() -> Perms {
        Perms {
            agents: vec![0, 1],
            states: vec![0],
            actions: vec![vec![0, 1], vec![1, 0]],
            observations: vec![vec![1, 0], vec![0, 1]],
        }
    }

    #[test]
    fn identity_is_an_automorphism() {
        for name in EnvName::ALL {
            let d = build_env::<f64>(name);
            assert_eq!(check_isomorphism(&d, &d, &Perms::identity(&d)).unwrap(), None);
        }
    }

    #[test]
    fn relabeled_two_stage_game() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let f = swap_second_agent_actions();
        let e = relabel(&d, &f).unwrap();
        let ja = |a: &[usize]| d.joint_actions().encode(a);
        assert_eq!(*e.reward(0, ja(&[0, 0])), -1.0);
        assert_eq!(*e.reward(0, ja(&[0, 1])), 1.0);
        assert_eq!(*e.reward(0, ja(&[1, 0])), 1.0);
        assert_eq!(check_isomorphism(&d, &e, &f).unwrap(), None);
        let v = check_isomorphism(&d, &d, &f).unwrap().unwrap();
        assert_eq!(v.condition, Condition::Reward);
    }

    #[test]
    fn relabel_identity_is_noop() {
        let d = build_env::<f64>(EnvName::Asymmetric);
        assert_eq!(relabel(&d, &Perms::identity(&d)).unwrap(), d);
    }

    #[test]
    fn agent_swap_maps_joint_action() {
        let f = Perms { agents: vec![1, 0], states: vec![0], actions: vec![vec![1, 0], vec![0, 1]], observations: vec![vec![0, 1], vec![0, 1]] };
        // agent 0's action 0 becomes agent 1's action 1; agent 1's action 1 stays 1 at slot 0
        assert_eq!(f.map_joint_action(&[0, 1]), vec![1, 1]);
        let g = Perms { agents: vec![1, 0], states: vec![0], actions: vec![vec![0, 1], vec![0, 1]], observations: vec![vec![0, 1], vec![0, 1]] };
        assert_eq!(g.map_joint_action(&[0, 1]), vec![1, 0]);
    }

    #[test]
    fn inverse_and_compose() {
        let d = build_env::<f64>(EnvName::Asymmetric);
        let mut r = rng::stream(5);
        for _ in 0..20 {
            let f = sample_labeling(&d, &mut r);
            let g = sample_labeling(&d, &mut r);
            assert!(f.inverse().after(&f).is_identity());
            assert!(f.after(&f.inverse()).is_identity());
            let e = relabel(&d, &f).unwrap();
            let e2 = relabel(&e, &g).unwrap();
            assert!(is_isomorphism(&d, &e2, &g.after(&f)));
            assert!(is_isomorphism(&e, &d, &f.inverse()));
            let fi = Isomorphism::new(&d, &e, f.clone()).unwrap();
            let gi = Isomorphism::new(&e, &e2, g.clone()).unwrap();
            assert!(Isomorphism::compose(&gi, &fi).is_ok());
            assert!(matches!(Isomorphism::compose(&fi, &gi), Err(Error::FingerprintMismatch { .. })));
        }
        let id = Isomorphism::identity(&d);
        assert_eq!(id.invert(), id);
    }

    #[test]
    fn history_map_round_trips() {
        let d = build_env::<f64>(EnvName::Asymmetric);
        let pi = TabularPolicy::uniform(&d);
        let mut r = rng::stream(11);
        for _ in 0..20 {
            let f = sample_labeling(&d, &mut r);
            let tau = crate::eval::sample_episode(&d, &pi, &mut r);
            assert_eq!(f.inverse().map_history(&f.map_history(&tau)), tau);
            let h = tau.ao_history(1, 2);
            assert_eq!(f.inverse().map_ao_history(&f.map_ao_history(&h)), h);
        }
    }

    #[test]
    fn pushforward_transports_history_distribution() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let pi = reference_policy::<f64>(EnvName::TwoStage, RefPolicy::Repeat).unwrap();
        let f = swap_second_agent_actions();
        let e = relabel(&d, &f).unwrap();
        let fpi = pushforward(&f, &pi).unwrap();
        assert!((expected_return(&d, &pi).unwrap() - expected_return(&e, &fpi).unwrap()).abs() < 1e-12);
        let src = history_distribution(&d, &pi).unwrap();
        let dst = history_distribution(&e, &fpi).unwrap();
        assert_eq!(src.len(), dst.len());
        for (tau, p) in &src {
            let ftau = f.map_history(tau);
            let q = dst.iter().find(|(h, _)| *h == ftau).map(|(_, q)| *q).unwrap();
            assert!((p - q).abs() < 1e-12);
        }
        assert_eq!(pushforward(&Perms::identity(&d), &pi).unwrap(), pi);
    }

    #[test]
    fn sampled_labelings_are_well_shaped_and_seeded() {
        let d = build_env::<f64>(EnvName::Asymmetric);
        let a = sample_labeling(&d, &mut rng::stream(3));
        let b = sample_labeling(&d, &mut rng::stream(3));
        assert_eq!(a, b);
        assert!(a.check_shape(&d).is_ok());
        let single = DecPomdp::<f64>::from_fn(1, &[1], &[1], 0, |_, _, _| 1.0, |_, _, _| 1.0, |_, _| 0.0, |_| 1.0).unwrap();
        assert!(sample_labeling(&single, &mut rng::stream(0)).is_identity());
    }

    #[test]
    fn agent_permutations_are_uniform() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let mut r = rng::stream(17);
        let n = 10_000;
        let swaps = (0..n).filter(|_| sample_labeling(&d, &mut r).agents == vec![1, 0]).count();
        // binomial(10^4, 1/2) has std 50
        assert!((swaps as i64 - 5000).abs() < 250, "{swaps}");
    }
}
