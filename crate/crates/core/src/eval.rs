//! Episode semantics: exact forward enumeration and Monte-Carlo sampling.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::history::{AoSpace, History};
use crate::model::DecPomdp;
use crate::policy::{LocalPolicy, TabularPolicy};
use crate::rng;
use crate::scalar::Scalar;

/// Default cap on the number of full histories visited by exact enumeration.
pub const DEFAULT_HISTORY_CAP: u64 = 10_000_000;

/// Callbacks fired while walking the episode tree. `reach` is the
/// probability of arriving at the node, `mass` additionally includes the
/// chosen joint action.
pub(crate) trait Visitor<S> {
    fn decision(&mut self, _t: usize, _state: usize, _histories: &[usize], _reach: &S) {}
    fn reward(&mut self, _t: usize, _reward: &S, _mass: &S) {}
    fn leaf(&mut self, _history: &History<S>, _prob: &S) {}
    fn wants_leaves(&self) -> bool {
        false
    }
}

struct Walker<'a, S, V> {
    d: &'a DecPomdp<S>,
    locals: &'a [&'a LocalPolicy<S>],
    spaces: Vec<&'a AoSpace>,
    ja_parts: Vec<Vec<usize>>,
    jo_parts: Vec<Vec<usize>>,
    visitor: &'a mut V,
    cap: u64,
    leaves: u64,
    path: History<S>,
}

impl<S: Scalar, V: Visitor<S>> Walker<'_, S, V> {
    fn node(&mut self, t: usize, s: usize, hists: &[usize], reach: S) -> Result<()> {
        self.visitor.decision(t, s, hists, &reach);
        let n = self.d.n_agents();
        let horizon = self.d.horizon();
        let track = self.visitor.wants_leaves();
        for ja in 0..self.ja_parts.len() {
            let mut pa = reach.clone();
            for i in 0..n {
                pa = pa * self.locals[i].prob(hists[i], self.ja_parts[ja][i]).clone();
                if pa.is_zero() {
                    break;
                }
            }
            if pa.is_zero() {
                continue;
            }
            let r = self.d.reward(s, ja).clone();
            self.visitor.reward(t, &r, &pa);
            if track {
                self.path.actions.push(self.ja_parts[ja].clone());
                self.path.rewards.push(r);
            }
            if t == horizon {
                self.leaves += 1;
                if self.leaves > self.cap {
                    return Err(Error::cap("enumerated histories", self.cap));
                }
                if track {
                    self.visitor.leaf(&self.path, &pa);
                }
            } else {
                for s2 in 0..self.d.n_states() {
                    let pt = self.d.transition(s, ja, s2);
                    if pt.is_zero() {
                        continue;
                    }
                    let ps = pa.clone() * pt.clone();
                    for jo in 0..self.jo_parts.len() {
                        let po = self.d.observation(s2, ja, jo);
                        if po.is_zero() {
                            continue;
                        }
                        let next: Vec<usize> = (0..n)
                            .map(|i| self.spaces[i].child(hists[i], self.ja_parts[ja][i], self.jo_parts[jo][i]))
                            .collect();
                        if track {
                            self.path.states.push(s2);
                            self.path.observations.push(self.jo_parts[jo].clone());
                        }
                        self.node(t + 1, s2, &next, ps.clone() * po.clone())?;
                        if track {
                            self.path.states.pop();
                            self.path.observations.pop();
                        }
                    }
                }
            }
            if track {
                self.path.actions.pop();
                self.path.rewards.pop();
            }
        }
        Ok(())
    }
}

/// Walks every positive-probability episode of `d` when agent `i` follows
/// `locals[i]`.
pub(crate) fn walk<S: Scalar, V: Visitor<S>>(
    d: &DecPomdp<S>,
    locals: &[&LocalPolicy<S>],
    cap: u64,
    visitor: &mut V,
) -> Result<()> {
    if locals.len() != d.n_agents() {
        return Err(Error::ShapeMismatch(format!("{} local policies for {} agents", locals.len(), d.n_agents())));
    }
    for (i, l) in locals.iter().enumerate() {
        if l.n_actions() != d.n_actions()[i] || l.space().n_observations() != d.n_observations()[i] || l.space().horizon() != d.horizon() {
            return Err(Error::ShapeMismatch(format!("local policy {i} does not match the model")));
        }
    }
    let ja_parts = (0..d.joint_actions().len()).map(|a| d.joint_actions().decode(a)).collect();
    let jo_parts = (0..d.joint_observations().len()).map(|o| d.joint_observations().decode(o)).collect();
    let spaces = locals.iter().map(|l| l.space()).collect();
    let roots = vec![0usize; d.n_agents()];
    let mut w = Walker {
        d,
        locals,
        spaces,
        ja_parts,
        jo_parts,
        visitor,
        cap,
        leaves: 0,
        path: History { states: vec![], actions: vec![], observations: vec![], rewards: vec![] },
    };
    for s0 in 0..d.n_states() {
        let b = d.initial(s0).clone();
        if b.is_zero() {
            continue;
        }
        w.path.states.push(s0);
        w.node(0, s0, &roots, b)?;
        w.path.states.pop();
    }
    Ok(())
}

pub(crate) fn local_refs<S>(pi: &TabularPolicy<S>) -> Vec<&LocalPolicy<S>>
where
    S: Scalar,
{
    pi.locals().iter().collect()
}

struct Collect<S> {
    out: Vec<(History<S>, S)>,
}

impl<S: Scalar> Visitor<S> for Collect<S> {
    fn leaf(&mut self, history: &History<S>, prob: &S) {
        self.out.push((history.clone(), prob.clone()));
    }
    fn wants_leaves(&self) -> bool {
        true
    }
}

struct ReturnSum<S> {
    total: S,
}

impl<S: Scalar> Visitor<S> for ReturnSum<S> {
    fn reward(&mut self, _t: usize, reward: &S, mass: &S) {
        self.total = self.total.clone() + reward.clone() * mass.clone();
    }
}

/// Exact distribution over full histories (positive-mass support only).
pub fn history_distribution<S: Scalar>(d: &DecPomdp<S>, pi: &TabularPolicy<S>) -> Result<Vec<(History<S>, S)>> {
    history_distribution_capped(d, &local_refs(pi), DEFAULT_HISTORY_CAP)
}

pub fn history_distribution_capped<S: Scalar>(
    d: &DecPomdp<S>,
    locals: &[&LocalPolicy<S>],
    cap: u64,
) -> Result<Vec<(History<S>, S)>> {
    let mut c = Collect { out: Vec::new() };
    walk(d, locals, cap, &mut c)?;
    Ok(c.out)
}

/// Exact `J(π) = E_π[Σ_t R_t]`.
pub fn expected_return<S: Scalar>(d: &DecPomdp<S>, pi: &TabularPolicy<S>) -> Result<S> {
    expected_return_locals(d, &local_refs(pi))
}

/// Exact return when agent `i` follows `locals[i]`; used for cross-play.
pub fn expected_return_locals<S: Scalar>(d: &DecPomdp<S>, locals: &[&LocalPolicy<S>]) -> Result<S> {
    let mut v = ReturnSum { total: S::zero() };
    walk(d, locals, DEFAULT_HISTORY_CAP, &mut v)?;
    Ok(v.total)
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(weights: impl Iterator<Item = f64> + Clone, rng: &mut R) -> usize {
    let total: f64 = weights.clone().sum();
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, w) in weights.enumerate() {
        if w > 0.0 {
            last_positive = k;
            acc += w;
            if u < acc {
                return k;
            }
        }
    }
    last_positive
}

/// Samples one full episode.
pub fn sample_episode<S: Scalar, R: Rng + ?Sized>(d: &DecPomdp<S>, pi: &TabularPolicy<S>, rng: &mut R) -> History<S> {
    sample_episode_locals(d, &local_refs(pi), rng)
}

pub fn sample_episode_locals<S: Scalar, R: Rng + ?Sized>(
    d: &DecPomdp<S>,
    locals: &[&LocalPolicy<S>],
    rng: &mut R,
) -> History<S> {
    let n = d.n_agents();
    let mut s = sample_categorical((0..d.n_states()).map(|k| d.initial(k).as_f64()), rng);
    let mut hists = vec![0usize; n];
    let mut h = History { states: vec![s], actions: vec![], observations: vec![], rewards: vec![] };
    for t in 0..=d.horizon() {
        let a: Vec<usize> = (0..n)
            .map(|i| {
                let row = locals[i].row(hists[i]);
                sample_categorical(row.iter().map(|p| p.as_f64()), rng)
            })
            .collect();
        let ja = d.joint_actions().encode(&a);
        h.rewards.push(d.reward(s, ja).clone());
        if t < d.horizon() {
            let s2 = sample_categorical((0..d.n_states()).map(|k| d.transition(s, ja, k).as_f64()), rng);
            let jo = sample_categorical((0..d.joint_observations().len()).map(|o| d.observation(s2, ja, o).as_f64()), rng);
            let o = d.joint_observations().decode(jo);
            for i in 0..n {
                hists[i] = locals[i].space().child(hists[i], a[i], o[i]);
            }
            h.observations.push(o);
            h.states.push(s2);
            s = s2;
        }
        h.actions.push(a);
    }
    h
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

/// Episodes per independently seeded block.
pub(crate) const MC_BLOCK: usize = 256;

/// Runs `n` draws of `sample(rng)` in fixed-size blocks, each with its own
/// stream derived from `seed`, and reduces in block order.
pub fn mc_estimate<F>(n: usize, seed: u64, sample: F) -> McEstimate
where
    F: Fn(&mut rng::SimRng) -> f64 + Sync,
{
    mc_estimate_blocked(n, seed, MC_BLOCK, sample)
}

/// [`mc_estimate`] with `block` samples per seeded stream; use small
/// blocks when each sample is expensive.
pub fn mc_estimate_blocked<F>(n: usize, seed: u64, block: usize, sample: F) -> McEstimate
where
    F: Fn(&mut rng::SimRng) -> f64 + Sync,
{
    assert!(n >= 1 && block >= 1, "at least one sample required");
    let blocks = n.div_ceil(block);
    let partial: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::child_stream(seed, &[b as u64]);
            let len = block.min(n - b * block);
            let mut s = 0.0;
            let mut ss = 0.0;
            for _ in 0..len {
                let x = sample(&mut r);
                s += x;
                ss += x * x;
            }
            (s, ss)
        })
        .collect();
    let (s, ss) = partial.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let nf = n as f64;
    let mean = s / nf;
    let std_err = if n > 1 {
        let var = ((ss - nf * mean * mean) / (nf - 1.0)).max(0.0);
        (var / nf).sqrt()
    } else {
        0.0
    };
    McEstimate { mean, std_err, n }
}

/// Monte-Carlo estimate of `J(π)`.
pub fn expected_return_mc<S: Scalar>(d: &DecPomdp<S>, pi: &TabularPolicy<S>, n_episodes: usize, seed: u64) -> McEstimate {
    let locals = local_refs(pi);
    mc_estimate(n_episodes, seed, |r| sample_episode_locals(d, &locals, r).total_reward().as_f64())
}
