//! Backtracking enumeration of isomorphisms and automorphism groups.

use std::borrow::Cow;
use std::ops::ControlFlow;

use rand::Rng;

use super::iso::{is_isomorphism, relabel, sample_labeling, Isomorphism, Perms, ISO_TOLERANCE};
use crate::error::{Error, Result};
use crate::model::DecPomdp;
use crate::scalar::Scalar;

/// Default cap on search nodes.
pub const DEFAULT_NODE_CAP: u64 = 100_000_000;

/// Groups up to this order are stored element by element.
pub const LIST_LIMIT: u64 = 100_000;

#[derive(Debug, Clone, Copy)]
enum Var {
    State(usize),
    Action(usize, usize),
    Obs(usize, usize),
}

struct Search<'a, S> {
    d: &'a DecPomdp<S>,
    e: &'a DecPomdp<S>,
    tol: f64,
    vars: Vec<Var>,
    /// joint actions (resp. observations) completed by assigning `vars[k]`
    completes: Vec<Vec<usize>>,
    d_actions: Vec<Vec<usize>>,
    d_obs: Vec<Vec<usize>>,
    d_sig: Vec<Vec<f64>>,
    e_sig: Vec<Vec<f64>>,
    cur: Perms,
    used_states: Vec<bool>,
    used_actions: Vec<Vec<bool>>,
    used_obs: Vec<Vec<bool>>,
    nodes: u64,
    cap: u64,
}

fn interleave(sizes: &[usize]) -> Vec<(usize, usize)> {
    let max = sizes.iter().copied().max().unwrap_or(0);
    let mut out = Vec::new();
    for k in 0..max {
        for (i, &n) in sizes.iter().enumerate() {
            if k < n {
                out.push((i, k));
            }
        }
    }
    out
}

/// Sorted multiset of a state's outgoing reward and transition entries;
/// isomorphic states must have equal signatures.
fn signature<S: Scalar>(m: &DecPomdp<S>, s: usize) -> Vec<f64> {
    let na = m.joint_actions().len();
    let mut r: Vec<f64> = (0..na).map(|a| m.reward(s, a).as_f64()).collect();
    r.sort_by(f64::total_cmp);
    let mut t: Vec<f64> = (0..na).flat_map(|a| (0..m.n_states()).map(move |s2| (a, s2))).map(|(a, s2)| m.transition(s, a, s2).as_f64()).collect();
    t.sort_by(f64::total_cmp);
    r.extend(t);
    r
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// All permutations of `0..n` in lexicographic order.
pub(crate) fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut p: Vec<usize> = (0..n).collect();
    let mut out = vec![p.clone()];
    while next_permutation(&mut p) {
        out.push(p.clone());
    }
    out
}

impl<'a, S: Scalar> Search<'a, S> {
    fn new(d: &'a DecPomdp<S>, e: &'a DecPomdp<S>, cap: u64) -> Self {
        let n = d.n_agents();
        let mut vars: Vec<Var> = (0..d.n_states()).map(Var::State).collect();
        let action_vars = interleave(d.n_actions());
        let obs_vars = interleave(d.n_observations());
        let a0 = vars.len();
        vars.extend(action_vars.iter().map(|&(i, k)| Var::Action(i, k)));
        let o0 = vars.len();
        vars.extend(obs_vars.iter().map(|&(i, k)| Var::Obs(i, k)));

        let pos = |list: &[(usize, usize)], i: usize, k: usize| list.iter().position(|&x| x == (i, k)).unwrap();
        let mut completes = vec![Vec::new(); vars.len()];
        let d_actions: Vec<Vec<usize>> = (0..d.joint_actions().len()).map(|a| d.joint_actions().decode(a)).collect();
        let d_obs: Vec<Vec<usize>> = (0..d.joint_observations().len()).map(|o| d.joint_observations().decode(o)).collect();
        for (a, parts) in d_actions.iter().enumerate() {
            let last = parts.iter().enumerate().map(|(i, &k)| pos(&action_vars, i, k)).max().unwrap();
            completes[a0 + last].push(a);
        }
        for (o, parts) in d_obs.iter().enumerate() {
            let last = parts.iter().enumerate().map(|(i, &k)| pos(&obs_vars, i, k)).max().unwrap();
            completes[o0 + last].push(o);
        }
        Search {
            d,
            e,
            tol: ISO_TOLERANCE.max(S::default_tolerance()),
            vars,
            completes,
            d_actions,
            d_obs,
            d_sig: (0..d.n_states()).map(|s| signature(d, s)).collect(),
            e_sig: (0..e.n_states()).map(|s| signature(e, s)).collect(),
            cur: Perms {
                agents: (0..n).collect(),
                states: vec![0; d.n_states()],
                actions: d.n_actions().iter().map(|&k| vec![0; k]).collect(),
                observations: d.n_observations().iter().map(|&k| vec![0; k]).collect(),
            },
            used_states: vec![false; d.n_states()],
            used_actions: d.n_actions().iter().map(|&k| vec![false; k]).collect(),
            used_obs: d.n_observations().iter().map(|&k| vec![false; k]).collect(),
            nodes: 0,
            cap,
        }
    }

    fn eq(&self, x: &S, y: &S) -> bool {
        x.approx_eq(y, self.tol)
    }

    fn target_action(&self, a: usize) -> usize {
        self.e.joint_actions().encode(&self.cur.map_joint_action(&self.d_actions[a]))
    }

    fn consistent(&self, k: usize) -> bool {
        let (d, e) = (self.d, self.e);
        match self.vars[k] {
            Var::State(s) => {
                let v = self.cur.states[s];
                self.eq(d.initial(s), e.initial(v))
                    && self.d_sig[s].len() == self.e_sig[v].len()
                    && self.d_sig[s].iter().zip(&self.e_sig[v]).all(|(x, y)| (x - y).abs() <= self.tol)
            }
            Var::Action(..) => self.completes[k].iter().all(|&a| {
                let b = self.target_action(a);
                (0..d.n_states()).all(|s| {
                    let fs = self.cur.states[s];
                    self.eq(d.reward(s, a), e.reward(fs, b))
                        && (0..d.n_states()).all(|s2| self.eq(d.transition(s, a, s2), e.transition(fs, b, self.cur.states[s2])))
                })
            }),
            Var::Obs(..) => self.completes[k].iter().all(|&o| {
                let p = e.joint_observations().encode(&self.cur.map_joint_observation(&self.d_obs[o]));
                (0..d.joint_actions().len()).all(|a| {
                    let b = self.target_action(a);
                    (0..d.n_states()).all(|s| self.eq(d.observation(s, a, o), e.observation(self.cur.states[s], b, p)))
                })
            }),
        }
    }

    fn assign(&mut self, k: usize, v: usize, on: bool) {
        match self.vars[k] {
            Var::State(s) => {
                self.cur.states[s] = v;
                self.used_states[v] = on;
            }
            Var::Action(i, x) => {
                self.cur.actions[i][x] = v;
                self.used_actions[i][v] = on;
            }
            Var::Obs(i, x) => {
                self.cur.observations[i][x] = v;
                self.used_obs[i][v] = on;
            }
        }
    }

    fn domain(&self, k: usize) -> usize {
        match self.vars[k] {
            Var::State(_) => self.used_states.len(),
            Var::Action(i, _) => self.used_actions[i].len(),
            Var::Obs(i, _) => self.used_obs[i].len(),
        }
    }

    fn is_used(&self, k: usize, v: usize) -> bool {
        match self.vars[k] {
            Var::State(_) => self.used_states[v],
            Var::Action(i, _) => self.used_actions[i][v],
            Var::Obs(i, _) => self.used_obs[i][v],
        }
    }

    fn go(&mut self, k: usize, visit: &mut dyn FnMut(&Perms) -> ControlFlow<()>) -> Result<ControlFlow<()>> {
        if k == self.vars.len() {
            return Ok(visit(&self.cur));
        }
        for v in 0..self.domain(k) {
            if self.is_used(k, v) {
                continue;
            }
            self.nodes += 1;
            if self.nodes > self.cap {
                return Err(Error::cap("isomorphism search nodes", self.cap));
            }
            self.assign(k, v, true);
            let flow = if self.consistent(k) { self.go(k + 1, visit)? } else { ControlFlow::Continue(()) };
            self.assign(k, v, false);
            if flow.is_break() {
                return Ok(flow);
            }
        }
        Ok(ControlFlow::Continue(()))
    }

    fn run(&mut self, visit: &mut dyn FnMut(&Perms) -> ControlFlow<()>) -> Result<()> {
        let (d, e) = (self.d, self.e);
        if d.n_agents() != e.n_agents() || d.n_states() != e.n_states() || d.horizon() != e.horizon() {
            return Ok(());
        }
        let n = d.n_agents();
        let mut agents: Vec<usize> = (0..n).collect();
        loop {
            let fits = (0..n).all(|i| {
                e.n_actions()[agents[i]] == d.n_actions()[i] && e.n_observations()[agents[i]] == d.n_observations()[i]
            });
            if fits {
                self.cur.agents.clone_from(&agents);
                if self.go(0, visit)?.is_break() {
                    return Ok(());
                }
            }
            if !next_permutation(&mut agents) {
                return Ok(());
            }
        }
    }
}

/// Streams every isomorphism from `d` to `e` to `visit`, in search order.
pub fn search_isomorphisms<S: Scalar>(
    d: &DecPomdp<S>,
    e: &DecPomdp<S>,
    node_cap: u64,
    mut visit: impl FnMut(&Perms) -> ControlFlow<()>,
) -> Result<()> {
    Search::new(d, e, node_cap).run(&mut visit)
}

/// All isomorphisms from `d` to `e`, sorted lexicographically.
pub fn enumerate_isomorphisms<S: Scalar>(d: &DecPomdp<S>, e: &DecPomdp<S>) -> Result<Vec<Isomorphism>> {
    let mut maps = Vec::new();
    search_isomorphisms(d, e, DEFAULT_NODE_CAP, |f| {
        maps.push(f.clone());
        ControlFlow::Continue(())
    })?;
    maps.sort();
    Ok(maps
        .into_iter()
        .map(|map| Isomorphism { source: d.fingerprint().to_string(), target: e.fingerprint().to_string(), map })
        .collect())
}

/// `Aut(d)`, sorted lexicographically; the identity comes first.
pub fn enumerate_automorphisms<S: Scalar>(d: &DecPomdp<S>) -> Result<Vec<Perms>> {
    let mut out = Vec::new();
    search_isomorphisms(d, d, DEFAULT_NODE_CAP, |f| {
        out.push(f.clone());
        ControlFlow::Continue(())
    })?;
    out.sort();
    Ok(out)
}

pub fn count_isomorphisms<S: Scalar>(d: &DecPomdp<S>, e: &DecPomdp<S>) -> Result<u64> {
    let mut n = 0u64;
    search_isomorphisms(d, e, DEFAULT_NODE_CAP, |_| {
        n += 1;
        ControlFlow::Continue(())
    })?;
    Ok(n)
}

/// First isomorphism in search order, if any.
pub fn first_isomorphism<S: Scalar>(d: &DecPomdp<S>, e: &DecPomdp<S>) -> Result<Option<Perms>> {
    let mut found = None;
    search_isomorphisms(d, e, DEFAULT_NODE_CAP, |f| {
        found = Some(f.clone());
        ControlFlow::Break(())
    })?;
    Ok(found)
}

fn find(root: &mut [usize], x: usize) -> usize {
    let mut x = x;
    while root[x] != x {
        root[x] = root[root[x]];
        x = root[x];
    }
    x
}

fn orbits_from_roots(root: &mut [usize]) -> Vec<Vec<usize>> {
    let n = root.len();
    let mut orbits: Vec<Vec<usize>> = Vec::new();
    let mut index = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(root, i);
        if index[r] == usize::MAX {
            index[r] = orbits.len();
            orbits.push(Vec::new());
        }
        orbits[index[r]].push(i);
    }
    orbits
}

/// Group order and agent orbits in a single search pass.
fn count_with_orbits<S: Scalar>(d: &DecPomdp<S>) -> Result<(u64, Vec<Vec<usize>>)> {
    let n = d.n_agents();
    let mut root: Vec<usize> = (0..n).collect();
    let mut count = 0u64;
    search_isomorphisms(d, d, DEFAULT_NODE_CAP, |f| {
        count += 1;
        for i in 0..n {
            let (a, b) = (find(&mut root, i), find(&mut root, f.agents[i]));
            root[a.max(b)] = a.min(b);
        }
        ControlFlow::Continue(())
    })?;
    Ok((count, orbits_from_roots(&mut root)))
}

/// Partition of agents into orbits under `Aut(d)`.
pub fn agent_orbits<S: Scalar>(d: &DecPomdp<S>) -> Result<Vec<Vec<usize>>> {
    Ok(count_with_orbits(d)?.1)
}

/// `Aut(D)`, either listed or, for large groups, sampled on demand.
///
/// Large groups are sampled by drawing a uniform labeling `f`, taking the
/// first isomorphism `h` from `D` to `f*D` in search order, and returning
/// `f^{-1} ∘ h`. Because `Iso(D, f*D) = f ∘ Aut(D)` and the search order is
/// fixed, the result is uniform over `Aut(D)`.
#[derive(Debug, Clone)]
pub struct AutGroup {
    order: u64,
    orbits: Vec<Vec<usize>>,
    elements: Option<Vec<Perms>>,
    model: Option<DecPomdp<f64>>,
}

fn orbits_of(n: usize, elements: &[Perms]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        if out.iter().any(|o| o.contains(&i)) {
            continue;
        }
        let mut orbit: Vec<usize> = elements.iter().map(|g| g.agents[i]).collect();
        orbit.push(i);
        orbit.sort_unstable();
        orbit.dedup();
        out.push(orbit);
    }
    out
}

impl AutGroup {
    pub fn new<S: Scalar>(d: &DecPomdp<S>) -> Result<Self> {
        let (order, orbits) = count_with_orbits(d)?;
        if order <= LIST_LIMIT {
            Ok(AutGroup::from_elements(enumerate_automorphisms(d)?))
        } else {
            Ok(AutGroup { order, orbits, elements: None, model: Some(d.to_f64()) })
        }
    }

    /// Wraps a known element list, e.g. one loaded from a cache.
    pub fn from_elements(mut elements: Vec<Perms>) -> Self {
        elements.sort();
        let n = elements.first().map_or(0, Perms::n_agents);
        AutGroup { order: elements.len() as u64, orbits: orbits_of(n, &elements), elements: Some(elements), model: None }
    }

    pub fn order(&self) -> u64 {
        self.order
    }

    /// Agent orbits; the group is closed, so one pass over its elements suffices.
    pub fn agent_orbits(&self) -> &[Vec<usize>] {
        &self.orbits
    }

    pub fn elements(&self) -> Result<&[Perms]> {
        self.elements.as_deref().ok_or_else(|| Error::cap("listed automorphisms", LIST_LIMIT))
    }

    pub fn is_listed(&self) -> bool {
        self.elements.is_some()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Cow<'_, Perms> {
        match (&self.elements, &self.model) {
            (Some(list), _) => Cow::Borrowed(&list[rng.gen_range(0..list.len())]),
            (None, Some(d)) => {
                let f = sample_labeling(d, rng);
                let e = relabel(d, &f).expect("labeling shaped for model");
                let h = first_isomorphism(d, &e).expect("search within cap").expect("f is an isomorphism");
                Cow::Owned(f.inverse().after(&h))
            }
            (None, None) => unreachable!("group is either listed or sampled"),
        }
    }
}

/// Every labeling of `d`: all tuples of bijections of agents, states and
/// per-agent actions and observations. Only feasible for tiny models.
pub fn all_labelings<S: Scalar>(d: &DecPomdp<S>) -> Vec<Perms> {
    let n = d.n_agents();
    let mut out =
        vec![Perms { agents: vec![], states: vec![], actions: vec![vec![]; n], observations: vec![vec![]; n] }];
    let expand = |cands: Vec<Perms>, opts: Vec<Vec<usize>>, set: &dyn Fn(&mut Perms, Vec<usize>)| {
        let mut next = Vec::with_capacity(cands.len() * opts.len());
        for c in &cands {
            for o in &opts {
                let mut c2 = c.clone();
                set(&mut c2, o.clone());
                next.push(c2);
            }
        }
        next
    };
    out = expand(out, permutations(n), &|c, p| c.agents = p);
    out = expand(out, permutations(d.n_states()), &|c, p| c.states = p);
    for i in 0..n {
        out = expand(out, permutations(d.n_actions()[i]), &|c, p| c.actions[i] = p);
        out = expand(out, permutations(d.n_observations()[i]), &|c, p| c.observations[i] = p);
    }
    out
}

/// Checks every labeling directly against the isomorphism conditions.
/// Returns the number of candidates tried and the sorted automorphisms.
pub fn automorphisms_by_exhaustion<S: Scalar>(d: &DecPomdp<S>) -> (u64, Vec<Perms>) {
    let candidates = all_labelings(d);
    let total = candidates.len() as u64;
    let mut auts: Vec<Perms> = candidates.into_iter().filter(|f| is_isomorphism(d, d, f)).collect();
    auts.sort();
    (total, auts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, EnvName};

    #[test]
    fn two_stage_matches_brute_force() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let (total, oracle) = automorphisms_by_exhaustion(&d);
        assert_eq!(total, 32);
        assert_eq!(oracle.len(), 4);
        assert_eq!(enumerate_automorphisms(&d).unwrap(), oracle);
    }

    #[test]
    fn asymmetric_matches_brute_force() {
        let d = build_env::<f64>(EnvName::Asymmetric);
        let (total, oracle) = automorphisms_by_exhaustion(&d);
        assert_eq!(total, 2 * 6 * 6 * 6 * 6 * 6);
        assert_eq!(oracle.len(), 2);
        assert_eq!(enumerate_automorphisms(&d).unwrap(), oracle);
    }

    #[test]
    fn lever_counts() {
        let d4 = build_env::<f64>(EnvName::Lever4);
        let (total, oracle) = automorphisms_by_exhaustion(&d4);
        assert_eq!(total, 2 * 24 * 24);
        assert_eq!(oracle.len(), 12);
        assert_eq!(enumerate_automorphisms(&d4).unwrap(), oracle);
        let d = build_env::<f64>(EnvName::Lever);
        assert_eq!(count_isomorphisms(&d, &d).unwrap(), 2 * 362_880);
    }

    #[test]
    fn orbits() {
        assert_eq!(agent_orbits(&build_env::<f64>(EnvName::TwoStage)).unwrap(), vec![vec![0, 1]]);
        assert_eq!(agent_orbits(&build_env::<f64>(EnvName::Asymmetric)).unwrap(), vec![vec![0], vec![1]]);
        let single = DecPomdp::<f64>::from_fn(1, &[2], &[1], 1, |_, _, _| 1.0, |_, _, _| 1.0, |_, a| a[0] as f64, |_| 1.0).unwrap();
        assert_eq!(agent_orbits(&single).unwrap(), vec![vec![0]]);
    }

    #[test]
    fn node_cap_is_enforced() {
        let d = build_env::<f64>(EnvName::Lever);
        let r = search_isomorphisms(&d, &d, 1000, |_| ControlFlow::Continue(()));
        assert!(matches!(r, Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn sampled_group_draws_automorphisms_uniformly() {
        let d = build_env::<f64>(EnvName::Lever4);
        let listed = AutGroup::new(&d).unwrap();
        let sampled = AutGroup { order: 12, orbits: vec![vec![0, 1]], elements: None, model: Some(d.clone()) };
        let elems = listed.elements().unwrap();
        let mut counts = vec![0usize; elems.len()];
        let mut r = crate::rng::stream(23);
        let n = 12_000;
        for _ in 0..n {
            let g = sampled.sample(&mut r);
            assert!(is_isomorphism(&d, &d, &g));
            counts[elems.iter().position(|x| *x == *g).unwrap()] += 1;
        }
        // each count ~ Binomial(12000, 1/12): mean 1000, std ~30
        assert!(counts.iter().all(|&c| (c as i64 - 1000).abs() < 150), "{counts:?}");
    }

    #[test]
    fn isomorphisms_to_a_relabeled_model_contain_the_labeling() {
        let d = build_env::<f64>(EnvName::Asymmetric);
        let mut r = crate::rng::stream(4);
        for _ in 0..10 {
            let f = sample_labeling(&d, &mut r);
            let e = relabel(&d, &f).unwrap();
            let isos = enumerate_isomorphisms(&d, &e).unwrap();
            assert_eq!(isos.len(), 2);
            assert!(isos.iter().any(|i| i.map == f));
        }
    }
}
