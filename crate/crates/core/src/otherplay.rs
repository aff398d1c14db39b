//! Other-play: automorphism profiles, the OP objective, the symmetrizer
//! and policy equivalence.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{self, sample_categorical, McEstimate, Visitor, DEFAULT_HISTORY_CAP};
use crate::history::History;
use crate::model::DecPomdp;
use crate::policy::{LocalPolicy, TabularPolicy};
use crate::scalar::Scalar;
use crate::symmetry::{pushforward, pushforward_local, AutGroup, Perms};

/// One automorphism per agent.
pub type AutoProfile = Vec<Perms>;

/// Default cap on the number of enumerated automorphism profiles.
pub const DEFAULT_PROFILE_CAP: u64 = 1_000_000;

/// `π̂` with `π̂_i = (ĝ_i*π)_i`.
pub fn apply_profile<S: Scalar>(profile: &[Perms], pi: &TabularPolicy<S>) -> TabularPolicy<S> {
    TabularPolicy::from_locals(profile.iter().enumerate().map(|(i, g)| pushforward_local(g, pi, i)).collect())
}

/// Distinct local policies `proj_i(g*π)` over `g ∈ Aut`, with multiplicities.
pub(crate) fn distinct_locals<S: Scalar>(pi: &TabularPolicy<S>, auts: &[Perms], agent: usize) -> Vec<(LocalPolicy<S>, usize)> {
    let mut out: Vec<(LocalPolicy<S>, usize)> = Vec::new();
    for g in auts {
        let l = pushforward_local(g, pi, agent);
        match out.iter_mut().find(|(x, _)| *x == l) {
            Some((_, c)) => *c += 1,
            None => out.push((l, 1)),
        }
    }
    out
}

fn check_profiles(n_auts: usize, n_agents: usize) -> Result<()> {
    let total = (n_auts as f64).powi(n_agents as i32);
    if total > DEFAULT_PROFILE_CAP as f64 {
        return Err(Error::cap("automorphism profiles (use the Monte-Carlo estimate)", DEFAULT_PROFILE_CAP));
    }
    Ok(())
}

/// Every combination of one entry per slot, as index tuples.
pub(crate) fn product_indices(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &k in sizes {
        out = out.into_iter().flat_map(|p| (0..k).map(move |x| [p.clone(), vec![x]].concat())).collect();
    }
    out
}

/// Exact OP value: mean return over all `|Aut|^N` profiles.
pub fn op_value<S: Scalar>(d: &DecPomdp<S>, pi: &TabularPolicy<S>, auts: &[Perms]) -> Result<S> {
    pi.check_domain(d)?;
    let n = d.n_agents();
    check_profiles(auts.len(), n)?;
    let per_agent: Vec<_> = (0..n).map(|i| distinct_locals(pi, auts, i)).collect();
    let combos = product_indices(&per_agent.iter().map(Vec::len).collect::<Vec<_>>());
    let terms: Vec<S> = combos
        .par_iter()
        .map(|c| {
            let locals: Vec<&LocalPolicy<S>> = c.iter().enumerate().map(|(i, &k)| &per_agent[i][k].0).collect();
            let mult: usize = c.iter().enumerate().map(|(i, &k)| per_agent[i][k].1).product();
            eval::expected_return_locals(d, &locals).map(|j| j * S::from_usize(mult).expect("count fits scalar"))
        })
        .collect::<Result<_>>()?;
    let total = S::from_usize(auts.len()).expect("count fits scalar");
    let denom = (0..n).fold(S::one(), |acc, _| acc * total.clone());
    Ok(crate::scalar::sum(terms) / denom)
}

/// What happened at one decision of an episode played under a profile,
/// expressed in the coordinates of the underlying (unpermuted) policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceStep {
    pub agent: usize,
    pub history: usize,
    pub action: usize,
}

/// Samples one episode of `apply_profile(profile, π)` without materializing
/// the permuted policy. If `trace` is given, it receives, per step and
/// agent, the source agent, source history and source action.
pub fn sample_profile_episode<S: Scalar, R: Rng + ?Sized>(
    d: &DecPomdp<S>,
    pi: &TabularPolicy<S>,
    profile: &[&Perms],
    rng: &mut R,
    trace: Option<&mut Vec<SourceStep>>,
) -> History<S> {
    sample_slots_episode(d, &vec![pi; d.n_agents()], profile, rng, trace)
}

/// Like [`sample_profile_episode`], but slot `i` draws its source local
/// policy from `slots[i]`.
pub fn sample_slots_episode<S: Scalar, R: Rng + ?Sized>(
    d: &DecPomdp<S>,
    slots: &[&TabularPolicy<S>],
    profile: &[&Perms],
    rng: &mut R,
    mut trace: Option<&mut Vec<SourceStep>>,
) -> History<S> {
    let n = d.n_agents();
    let src: Vec<usize> = (0..n).map(|i| profile[i].agents.iter().position(|&j| j == i).unwrap()).collect();
    let inv_obs: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let fo = &profile[i].observations[src[i]];
            let mut inv = vec![0; fo.len()];
            for (x, &y) in fo.iter().enumerate() {
                inv[y] = x;
            }
            inv
        })
        .collect();
    let mut s = sample_categorical((0..d.n_states()).map(|k| d.initial(k).as_f64()), rng);
    let mut hists = vec![0usize; n];
    let mut h = History { states: vec![s], actions: vec![], observations: vec![], rewards: vec![] };
    let mut src_actions = vec![0usize; n];
    for t in 0..=d.horizon() {
        let mut a = vec![0; n];
        for i in 0..n {
            let local = slots[i].local(src[i]);
            let x = sample_categorical(local.row(hists[i]).iter().map(|p| p.as_f64()), rng);
            src_actions[i] = x;
            a[i] = profile[i].actions[src[i]][x];
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(SourceStep { agent: src[i], history: hists[i], action: x });
            }
        }
        let ja = d.joint_actions().encode(&a);
        h.rewards.push(d.reward(s, ja).clone());
        if t < d.horizon() {
            let s2 = sample_categorical((0..d.n_states()).map(|k| d.transition(s, ja, k).as_f64()), rng);
            let jo = sample_categorical((0..d.joint_observations().len()).map(|o| d.observation(s2, ja, o).as_f64()), rng);
            let o = d.joint_observations().decode(jo);
            for i in 0..n {
                hists[i] = slots[i].local(src[i]).space().child(hists[i], src_actions[i], inv_obs[i][o[i]]);
            }
            h.observations.push(o);
            h.states.push(s2);
            s = s2;
        }
        h.actions.push(a);
    }
    h
}

/// Monte-Carlo OP value: a fresh profile and episode per sample.
pub fn op_value_mc<S: Scalar>(d: &DecPomdp<S>, pi: &TabularPolicy<S>, group: &AutGroup, n: usize, seed: u64) -> McEstimate {
    eval::mc_estimate(n, seed, |r| {
        let profile: Vec<_> = (0..d.n_agents()).map(|_| group.sample(r)).collect();
        let refs: Vec<&Perms> = profile.iter().map(|g| g.as_ref()).collect();
        sample_profile_episode(d, pi, &refs, r, None).total_reward().as_f64()
    })
}

/// `Ψ(π)` together with the reachability of each AO history under the
/// reference opponent distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetrizedPolicy<S> {
    pub policy: TabularPolicy<S>,
    /// `reachable[i][h]` is false where `Ψ` fell back to uniform.
    pub reachable: Vec<Vec<bool>>,
}

struct Conditional<'a, S> {
    agent: usize,
    weight: S,
    local: &'a LocalPolicy<S>,
    mass: &'a mut [S],
    mass_action: &'a mut [S],
}

impl<S: Scalar> Visitor<S> for Conditional<'_, S> {
    fn decision(&mut self, _t: usize, _state: usize, histories: &[usize], reach: &S) {
        let h = histories[self.agent];
        let m = self.weight.clone() * reach.clone();
        if m.is_zero() {
            return;
        }
        let k = self.local.n_actions();
        self.mass[h] = self.mass[h].clone() + m.clone();
        for a in 0..k {
            let x = &mut self.mass_action[h * k + a];
            *x = x.clone() + m.clone() * self.local.prob(h, a).clone();
        }
    }
}

/// The symmetrizer `Ψ`. Agent `i`'s local policy is drawn uniformly from
/// `{proj_i(g*π) : g ∈ Aut}`; each opponent independently plays either a
/// uniformly drawn `proj_j(g*π)` or uniform random actions, with
/// probability 1/2 each. `Ψ_i(·|τ)` is agent `i`'s conditional action
/// distribution given `τ`, computed by exact enumeration.
pub fn symmetrize<S: Scalar>(d: &DecPomdp<S>, pi: &TabularPolicy<S>, auts: &[Perms]) -> Result<SymmetrizedPolicy<S>> {
    pi.check_domain(d)?;
    let n = d.n_agents();
    check_profiles(auts.len() + 1, n)?;
    let n_auts = S::from_usize(auts.len()).expect("count fits scalar");
    let half = S::from_ratio(1, 2);
    let per_agent: Vec<_> = (0..n).map(|i| distinct_locals(pi, auts, i)).collect();
    let uniform: Vec<LocalPolicy<S>> = pi.locals().iter().map(|l| LocalPolicy::uniform(l.space().clone())).collect();
    let mut locals = Vec::with_capacity(n);
    let mut reachable = Vec::with_capacity(n);
    for i in 0..n {
        // options per slot as (local policy, probability of being drawn)
        let options: Vec<Vec<(&LocalPolicy<S>, S)>> = (0..n)
            .map(|j| {
                let own = j == i;
                let mut v: Vec<(&LocalPolicy<S>, S)> = per_agent[j]
                    .iter()
                    .map(|(l, c)| {
                        let w = S::from_usize(*c).unwrap() / n_auts.clone();
                        (l, if own { w } else { w * half.clone() })
                    })
                    .collect();
                if !own {
                    v.push((&uniform[j], half.clone()));
                }
                v
            })
            .collect();
        let space = pi.local(i).space();
        let k = space.n_actions();
        let combos = product_indices(&options.iter().map(Vec::len).collect::<Vec<_>>());
        let partial: Vec<(Vec<S>, Vec<S>)> = combos
            .par_iter()
            .map(|c| {
                let mut mass = vec![S::zero(); space.len()];
                let mut mass_action = vec![S::zero(); space.len() * k];
                let walkers: Vec<&LocalPolicy<S>> = c.iter().enumerate().map(|(j, &x)| options[j][x].0).collect();
                let weight = c.iter().enumerate().fold(S::one(), |acc, (j, &x)| acc * options[j][x].1.clone());
                let mut v = Conditional { agent: i, weight, local: walkers[i], mass: &mut mass, mass_action: &mut mass_action };
                eval::walk(d, &walkers, DEFAULT_HISTORY_CAP, &mut v)?;
                Ok((mass, mass_action))
            })
            .collect::<Result<_>>()?;
        let mut mass = vec![S::zero(); space.len()];
        let mut mass_action = vec![S::zero(); space.len() * k];
        for (m, ma) in partial {
            for (x, y) in mass.iter_mut().zip(m) {
                *x = x.clone() + y;
            }
            for (x, y) in mass_action.iter_mut().zip(ma) {
                *x = x.clone() + y;
            }
        }
        let mut probs = Vec::with_capacity(space.len() * k);
        let mut reach = Vec::with_capacity(space.len());
        let unif = S::one() / S::from_usize(k).unwrap();
        for h in 0..space.len() {
            if mass[h].is_zero() {
                probs.extend(std::iter::repeat_n(unif.clone(), k));
                reach.push(false);
            } else {
                probs.extend((0..k).map(|a| mass_action[h * k + a].clone() / mass[h].clone()));
                reach.push(true);
            }
        }
        locals.push(LocalPolicy::from_table(space.clone(), probs)?);
        reachable.push(reach);
    }
    Ok(SymmetrizedPolicy { policy: TabularPolicy::from_locals(locals), reachable })
}

/// Largest deviation `|g*π − π|` over automorphisms, agents, histories and actions.
pub fn invariance_gap<S: Scalar>(pi: &TabularPolicy<S>, auts: &[Perms]) -> f64 {
    auts.iter()
        .map(|g| pushforward(g, pi).map(|p| p.max_abs_diff(pi)).unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max)
}

pub fn is_invariant<S: Scalar>(pi: &TabularPolicy<S>, auts: &[Perms], tol: f64) -> bool {
    invariance_gap(pi, auts) <= tol
}

/// Default equivalence tolerance for learned policies.
pub const LEARNED_TOLERANCE: f64 = 1e-6;

/// Largest difference between `Ψ(π)` and `Ψ(π')` on AO histories reachable
/// under both.
pub fn equivalence_gap<S: Scalar>(a: &SymmetrizedPolicy<S>, b: &SymmetrizedPolicy<S>) -> f64 {
    let mut gap = 0.0f64;
    for (i, (la, lb)) in a.policy.locals().iter().zip(b.policy.locals()).enumerate() {
        for h in 0..la.space().len() {
            if a.reachable[i][h] && b.reachable[i][h] {
                for (x, y) in la.row(h).iter().zip(lb.row(h)) {
                    gap = gap.max((x.clone() - y.clone()).abs().as_f64());
                }
            }
        }
    }
    gap
}

/// Whether `π` and `π'` have the same symmetrizer image on reachable histories.
pub fn policies_equivalent<S: Scalar>(
    d: &DecPomdp<S>,
    a: &TabularPolicy<S>,
    b: &TabularPolicy<S>,
    auts: &[Perms],
    tol: f64,
) -> Result<bool> {
    Ok(equivalence_gap(&symmetrize(d, a, auts)?, &symmetrize(d, b, auts)?) <= tol)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::envs::{build_env, reference_policy, EnvName, RefPolicy};
    use crate::rng;
    use crate::symmetry::enumerate_automorphisms;
    use num_rational::Rational64;

    pub(crate) fn random_policy(d: &DecPomdp<f64>, r: &mut impl rand::Rng) -> TabularPolicy<f64> {
        TabularPolicy::random(d, r)
    }

    /// Own-action likelihood weighting: the opponent factor cancels in the
    /// conditional, leaving a mixture of the candidates weighted by the
    /// probability each assigns to agent `i`'s own past actions.
    fn psi_oracle(pi: &TabularPolicy<f64>, auts: &[Perms], i: usize, pairs: &[(usize, usize)]) -> Vec<f64> {
        let cands: Vec<LocalPolicy<f64>> = auts.iter().map(|g| pushforward_local(g, pi, i)).collect();
        let sp = cands[0].space();
        let h = sp.index_of(pairs).unwrap();
        let k = sp.n_actions();
        let mut num = vec![0.0; k];
        let mut den = 0.0;
        for c in &cands {
            let mut w = 1.0;
            for t in 0..pairs.len() {
                w *= c.prob(sp.index_of(&pairs[..t]).unwrap(), pairs[t].0);
            }
            den += w;
            for a in 0..k {
                num[a] += w * c.prob(h, a);
            }
        }
        num.into_iter().map(|x| x / den).collect()
    }

    #[test]
    fn reference_op_values() {
        let d = build_env::<Rational64>(EnvName::TwoStage);
        let auts = enumerate_automorphisms(&d).unwrap();
        for which in [RefPolicy::Repeat, RefPolicy::Switch] {
            let pi = reference_policy(EnvName::TwoStage, which).unwrap();
            assert_eq!(op_value(&d, &pi, &auts).unwrap(), Rational64::new(1, 2));
            assert!(is_invariant(&pi, &auts, 0.0));
        }
    }

    #[test]
    fn matching_pennies_values() {
        let d = build_env::<Rational64>(EnvName::MatchingPennies);
        let auts = enumerate_automorphisms(&d).unwrap();
        assert_eq!(auts.len(), 2);
        let one = Rational64::from_integer(1);
        let zero = Rational64::from_integer(0);
        let det = TabularPolicy::from_fn(&d, |i, _| if i == 0 { vec![one, zero] } else { vec![zero, one] }).unwrap();
        assert_eq!(op_value(&d, &det, &auts).unwrap(), Rational64::new(1, 8));
        assert!(!is_invariant(&det, &auts, 1e-9));
        let mixed = reference_policy(EnvName::MatchingPennies, RefPolicy::MixedOptimum).unwrap();
        assert_eq!(op_value(&d, &mixed, &auts).unwrap(), Rational64::new(1, 7));
        let psi = symmetrize(&d, &det, &auts).unwrap();
        for i in 0..2 {
            assert_eq!(psi.policy.local(i).row(0), &[Rational64::new(1, 2), Rational64::new(1, 2)]);
        }
    }

    #[test]
    fn symmetrizer_fixes_repeat_policy() {
        let d = build_env::<Rational64>(EnvName::TwoStage);
        let auts = enumerate_automorphisms(&d).unwrap();
        let pi = reference_policy(EnvName::TwoStage, RefPolicy::Repeat).unwrap();
        let psi = symmetrize(&d, &pi, &auts).unwrap();
        assert_eq!(psi.policy, pi);
        assert!(psi.reachable.iter().flatten().all(|&r| r));
    }

    #[test]
    fn symmetrizer_matches_likelihood_oracle() {
        let mut r = rng::stream(31);
        for name in [EnvName::TwoStage, EnvName::Asymmetric] {
            let d = build_env::<f64>(name);
            let auts = enumerate_automorphisms(&d).unwrap();
            for _ in 0..5 {
                let pi = random_policy(&d, &mut r);
                let psi = symmetrize(&d, &pi, &auts).unwrap();
                for i in 0..2 {
                    let sp = pi.local(i).space();
                    for h in 0..sp.len() {
                        let want = psi_oracle(&pi, &auts, i, &sp.pairs_of(h));
                        for (x, y) in psi.policy.local(i).row(h).iter().zip(&want) {
                            assert!((x - y).abs() < 1e-12, "{name} agent {i} history {h}");
                        }
                    }
                }
                let op = op_value(&d, &pi, &auts).unwrap();
                let j = eval::expected_return(&d, &psi.policy).unwrap();
                assert!((op - j).abs() < 1e-12);
                assert!(invariance_gap(&psi.policy, &auts) < 1e-12);
            }
        }
    }

    #[test]
    fn unreachable_histories_fall_back_to_uniform() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let auts = enumerate_automorphisms(&d).unwrap();
        let pi = TabularPolicy::from_fn(&d, |_, _| vec![1.0, 0.0]).unwrap();
        let psi = symmetrize(&d, &pi, &auts).unwrap();
        let sp = pi.local(0).space();
        assert!(psi.reachable[0].iter().all(|&x| x));
        assert_eq!(psi.policy.local(0).row(sp.root()), &[0.5, 0.5]);

        let a = build_env::<f64>(EnvName::Asymmetric);
        let aut_a = enumerate_automorphisms(&a).unwrap();
        let det = TabularPolicy::from_fn(&a, |_, _| vec![1.0, 0.0, 0.0]).unwrap();
        let psi = symmetrize(&a, &det, &aut_a).unwrap();
        let spa = det.local(0).space();
        let never = spa.index_of(&[(2, 0)]).unwrap();
        assert!(!psi.reachable[0][never]);
        assert!((psi.policy.local(0).row(never)[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn equivalence() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let auts = enumerate_automorphisms(&d).unwrap();
        let rp = reference_policy::<f64>(EnvName::TwoStage, RefPolicy::Repeat).unwrap();
        let sp = reference_policy::<f64>(EnvName::TwoStage, RefPolicy::Switch).unwrap();
        assert!(!policies_equivalent(&d, &rp, &sp, &auts, 1e-9).unwrap());
        assert!(policies_equivalent(&d, &rp, &rp, &auts, 1e-9).unwrap());
        let mut r = rng::stream(2);
        let pi = random_policy(&d, &mut r);
        let shared = {
            let l = random_policy(&d, &mut r).local(0).clone();
            TabularPolicy::from_locals(vec![l.clone(), l])
        };
        for g0 in &auts {
            for g1 in &auts {
                let profile = [g0.clone(), g1.clone()];
                // agent-symmetric policies are equivalent to every profile image
                assert!(policies_equivalent(&d, &shared, &apply_profile(&profile, &shared), &auts, 1e-12).unwrap());
                let moved = apply_profile(&profile, &pi);
                let seats_both = g0.agents == g1.agents;
                if seats_both {
                    assert!(policies_equivalent(&d, &pi, &moved, &auts, 1e-12).unwrap());
                } else {
                    // a mixed profile seats the same source agent twice
                    assert!(!policies_equivalent(&d, &pi, &moved, &auts, 1e-6).unwrap());
                }
            }
        }
    }

    #[test]
    fn op_mc_agrees_with_exact() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let group = AutGroup::new(&d).unwrap();
        let pi = random_policy(&d, &mut rng::stream(8));
        let exact = op_value(&d, &pi, group.elements().unwrap()).unwrap();
        let est = op_value_mc(&d, &pi, &group, 20_000, 1);
        assert!((est.mean - exact).abs() < 4.0 * est.std_err, "{est:?} vs {exact}");
    }

    #[test]
    fn traced_sources_reproduce_the_permuted_policy() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let auts = enumerate_automorphisms(&d).unwrap();
        let pi = random_policy(&d, &mut rng::stream(3));
        let profile = [&auts[3], &auts[1]];
        let permuted = apply_profile(&[auts[3].clone(), auts[1].clone()], &pi);
        let mut trace = Vec::new();
        let tau = sample_profile_episode(&d, &pi, &profile, &mut rng::stream(4), Some(&mut trace));
        for t in 0..=d.horizon() {
            for i in 0..2 {
                let st = trace[t * 2 + i];
                let h = tau.ao_index(permuted.local(i).space(), i, t);
                assert_eq!(pi.prob(st.agent, st.history, st.action), permuted.prob(i, h, tau.actions[t][i]));
            }
        }
    }
}
