//! Random hash tie-breaking: a frozen ReLU network scores label-erased
//! histories, and a policy's score is its expected hash under other-play.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::history::History;
use crate::model::DecPomdp;
use crate::otherplay::{self, sample_profile_episode};
use crate::policy::{LocalPolicy, TabularPolicy};
use crate::rng;
use crate::symmetry::{normal_form, permutations, relabel, AutGroup, NormalForm, Perms};

pub const HIDDEN_WIDTH: usize = 32;
pub const HIDDEN_LAYERS: usize = 4;

/// Cap on the labelings enumerated per history when the environment code is hashed.
pub const LABELING_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    n_in: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    fn apply(&self, x: &[f64], relu: bool) -> Vec<f64> {
        self.bias
            .iter()
            .enumerate()
            .map(|(j, b)| {
                let z = b + self.weights[j * self.n_in..(j + 1) * self.n_in].iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                if relu {
                    z.max(0.0)
                } else {
                    z
                }
            })
            .collect()
    }
}

/// Fixed MLP with four ReLU layers of width 32 and a scalar output. Weights
/// and biases are uniform on `[-1, 1]`; the network is never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct HashNetwork {
    seed: u64,
    input_width: usize,
    layers: Vec<Layer>,
}

impl HashNetwork {
    pub fn new(seed: u64, input_width: usize) -> Result<Self> {
        if input_width == 0 {
            return Err(Error::Config("hash network input width must be positive".into()));
        }
        let mut r = rng::stream(seed);
        let mut widths = vec![input_width];
        widths.extend([HIDDEN_WIDTH; HIDDEN_LAYERS]);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                n_in: w[0],
                weights: (0..w[0] * w[1]).map(|_| r.gen_range(-1.0..=1.0)).collect(),
                bias: (0..w[1]).map(|_| r.gen_range(-1.0..=1.0)).collect(),
            })
            .collect();
        Ok(HashNetwork { seed, input_width, layers })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_width {
            return Err(Error::ShapeMismatch(format!("hash input has width {}, network expects {}", x.len(), self.input_width)));
        }
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h, k < last);
        }
        Ok(h[0])
    }
}

/// Which parts of a normal form enter the hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeFields {
    pub states: bool,
    pub actions: bool,
    pub observations: bool,
    pub rewards: bool,
}

impl Default for EncodeFields {
    fn default() -> Self {
        EncodeFields { states: false, actions: true, observations: false, rewards: true }
    }
}

impl EncodeFields {
    pub const ALL: EncodeFields = EncodeFields { states: true, actions: true, observations: true, rewards: true };
}

/// Length of [`encode`]'s output for histories of `d`.
pub fn encoded_width<S: crate::Scalar>(d: &DecPomdp<S>, fields: EncodeFields) -> usize {
    let n = d.n_agents();
    let steps = d.horizon() + 1;
    let mut w = 0;
    if fields.states {
        w += steps;
    }
    if fields.observations {
        w += d.horizon() * n;
    }
    if fields.actions {
        w += steps * n;
    }
    if fields.rewards {
        w += steps;
    }
    w
}

/// Flat layout, per step `t`: state code, observation codes (t ≥ 1,
/// agent-major), action codes (agent-major), reward.
pub fn encode(nf: &NormalForm<f64>, fields: EncodeFields) -> Vec<f64> {
    let mut out = Vec::new();
    for t in 0..nf.actions.len() {
        if fields.states {
            out.push(nf.states[t] as f64);
        }
        if fields.observations && t > 0 {
            out.extend(nf.observations[t - 1].iter().map(|&o| o as f64));
        }
        if fields.actions {
            out.extend(nf.actions[t].iter().map(|&a| a as f64));
        }
        if fields.rewards {
            out.push(nf.rewards[t]);
        }
    }
    out
}

/// `#(f_N(ι(τ)))` for one agent permutation.
pub fn hash_history(net: &HashNetwork, nf: &NormalForm<f64>, agents: &[usize], fields: EncodeFields) -> Result<f64> {
    net.forward(&encode(&nf.permute_agents(agents), fields))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieBreakConfig {
    /// Episodes per Monte-Carlo estimate.
    pub n_samples: usize,
    pub encode_fields: EncodeFields,
    /// Hash the relabeled environment's tables alongside each history.
    pub include_env_code: bool,
    pub hash_seed: u64,
    /// Enumerate histories instead of sampling.
    pub exact: bool,
}

impl Default for TieBreakConfig {
    fn default() -> Self {
        TieBreakConfig { n_samples: 2048, encode_fields: EncodeFields::default(), include_env_code: false, hash_seed: 0, exact: false }
    }
}

impl TieBreakConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.exact && self.n_samples == 0 {
            return Err(Error::Config("tie-breaking needs at least one sample".into()));
        }
        if encoded_input_empty(self.encode_fields) && !self.include_env_code {
            return Err(Error::Config("no fields selected for hashing".into()));
        }
        Ok(())
    }

    /// The hash network sized for `d`.
    pub fn network<S: crate::Scalar>(&self, d: &DecPomdp<S>) -> Result<HashNetwork> {
        HashNetwork::new(self.hash_seed, self.input_width(d))
    }

    pub fn input_width<S: crate::Scalar>(&self, d: &DecPomdp<S>) -> usize {
        let extra = if self.include_env_code { d.table_features().len() } else { 0 };
        encoded_width(d, self.encode_fields) + extra
    }
}

fn encoded_input_empty(f: EncodeFields) -> bool {
    !(f.states || f.actions || f.observations || f.rewards)
}

fn completions(partial: &[Option<usize>]) -> Vec<Vec<usize>> {
    let free_codes: Vec<usize> = (0..partial.len()).filter(|c| !partial.contains(&Some(*c))).collect();
    permutations(free_codes.len())
        .into_iter()
        .map(|p| {
            let mut k = 0;
            partial
                .iter()
                .map(|x| {
                    x.unwrap_or_else(|| {
                        k += 1;
                        free_codes[p[k - 1]]
                    })
                })
                .collect()
        })
        .collect()
}

fn bind(map: &mut [Option<usize>], x: usize, code: usize) -> bool {
    match map[x] {
        Some(c) => c == code,
        None if map.contains(&Some(code)) => false,
        None => {
            map[x] = Some(code);
            true
        }
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|x| x as f64).product()
}

/// Every labeling `f` of `d` with `f τ = ι(τ)`.
pub fn normalizing_labelings<S: crate::Scalar>(d: &DecPomdp<S>, tau: &History<S>, cap: usize) -> Result<Vec<Perms>> {
    let nf = normal_form(tau);
    let n = d.n_agents();
    let mut out = Vec::new();
    for agents in permutations(n) {
        if (0..n).any(|i| d.n_actions()[i] != d.n_actions()[agents[i]] || d.n_observations()[i] != d.n_observations()[agents[i]]) {
            continue;
        }
        let mut states = vec![None; d.n_states()];
        let mut actions: Vec<Vec<Option<usize>>> = d.n_actions().iter().map(|&k| vec![None; k]).collect();
        let mut obs: Vec<Vec<Option<usize>>> = d.n_observations().iter().map(|&k| vec![None; k]).collect();
        let mut ok = tau.states.iter().zip(&nf.states).all(|(&s, &c)| bind(&mut states, s, c));
        for t in 0..tau.actions.len() {
            for i in 0..n {
                ok = ok && bind(&mut actions[i], tau.actions[t][i], nf.actions[t][agents[i]]);
                if t > 0 {
                    ok = ok && bind(&mut obs[i], tau.observations[t - 1][i], nf.observations[t - 1][agents[i]]);
                }
            }
        }
        if !ok {
            continue;
        }
        let free = |m: &[Option<usize>]| m.iter().filter(|x| x.is_none()).count();
        let count = factorial(free(&states))
            * actions.iter().map(|m| factorial(free(m))).product::<f64>()
            * obs.iter().map(|m| factorial(free(m))).product::<f64>();
        if out.len() as f64 + count > cap as f64 {
            return Err(Error::cap("normalizing labelings", cap as u64));
        }
        let mut partial = vec![Perms { agents: agents.clone(), states: vec![], actions: vec![vec![]; n], observations: vec![vec![]; n] }];
        let mut expand = |opts: Vec<Vec<usize>>, set: &dyn Fn(&mut Perms, Vec<usize>)| {
            partial = partial
                .iter()
                .flat_map(|p| {
                    opts.iter().map(move |o| {
                        let mut q = p.clone();
                        set(&mut q, o.clone());
                        q
                    })
                })
                .collect();
        };
        expand(completions(&states), &|p, v| p.states = v);
        for i in 0..n {
            expand(completions(&actions[i]), &|p, v| p.actions[i] = v);
            expand(completions(&obs[i]), &|p, v| p.observations[i] = v);
        }
        out.extend(partial);
    }
    Ok(out)
}

/// Hash of one history, made label-free: the mean over all agent
/// permutations of the normal form or, with `include_env_code`, the mean
/// over all normalizing labelings of `(f*D, ι(τ))`.
pub fn history_score(d: &DecPomdp<f64>, net: &HashNetwork, tau: &History<f64>, cfg: &TieBreakConfig) -> Result<f64> {
    let nf = normal_form(tau);
    if cfg.include_env_code {
        let base = encode(&nf, cfg.encode_fields);
        let fs = normalizing_labelings(d, tau, LABELING_CAP)?;
        let mut total = 0.0;
        for f in &fs {
            let mut x = base.clone();
            x.extend(relabel(d, f)?.table_features());
            total += net.forward(&x)?;
        }
        Ok(total / fs.len() as f64)
    } else {
        let perms = permutations(d.n_agents());
        let mut total = 0.0;
        for p in &perms {
            total += hash_history(net, &nf, p, cfg.encode_fields)?;
        }
        Ok(total / perms.len() as f64)
    }
}

fn history_key(tau: &History<f64>) -> Vec<u64> {
    let mut k: Vec<u64> = tau.states.iter().map(|&s| s as u64).collect();
    k.extend(tau.actions.iter().flatten().map(|&a| a as u64));
    k.extend(tau.observations.iter().flatten().map(|&o| o as u64));
    k.extend(tau.rewards.iter().map(|r| r.to_bits()));
    k
}

/// Exact distribution of histories under a uniformly random automorphism
/// profile applied to `π`, with equal histories merged.
pub fn op_history_distribution(d: &DecPomdp<f64>, pi: &TabularPolicy<f64>, auts: &[Perms]) -> Result<Vec<(History<f64>, f64)>> {
    pi.check_domain(d)?;
    let n = d.n_agents();
    if (auts.len() as f64).powi(n as i32) > otherplay::DEFAULT_PROFILE_CAP as f64 {
        return Err(Error::cap("automorphism profiles", otherplay::DEFAULT_PROFILE_CAP));
    }
    let per_agent: Vec<_> = (0..n).map(|i| otherplay::distinct_locals(pi, auts, i)).collect();
    let combos = otherplay::product_indices(&per_agent.iter().map(Vec::len).collect::<Vec<_>>());
    let total = (auts.len() as f64).powi(n as i32);
    let parts: Vec<Vec<(History<f64>, f64)>> = combos
        .par_iter()
        .map(|c| {
            let locals: Vec<&LocalPolicy<f64>> = c.iter().enumerate().map(|(i, &k)| &per_agent[i][k].0).collect();
            let w = c.iter().enumerate().map(|(i, &k)| per_agent[i][k].1 as f64).product::<f64>() / total;
            let dist = eval::history_distribution_capped(d, &locals, eval::DEFAULT_HISTORY_CAP)?;
            Ok(dist.into_iter().map(|(h, p)| (h, p * w)).collect())
        })
        .collect::<Result<_>>()?;
    let mut merged: BTreeMap<Vec<u64>, (History<f64>, f64)> = BTreeMap::new();
    for (h, p) in parts.into_iter().flatten() {
        merged.entry(history_key(&h)).or_insert_with(|| (h, 0.0)).1 += p;
    }
    Ok(merged.into_values().collect())
}

/// `Σ_τ P(τ) score(τ)` over a distribution from [`op_history_distribution`].
pub fn chi_from_distribution(d: &DecPomdp<f64>, dist: &[(History<f64>, f64)], net: &HashNetwork, cfg: &TieBreakConfig) -> Result<f64> {
    let scores: Vec<f64> = dist.par_iter().map(|(h, _)| history_score(d, net, h, cfg)).collect::<Result<_>>()?;
    Ok(dist.iter().zip(scores).map(|((_, p), s)| p * s).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TieBreakValue {
    pub value: f64,
    /// Zero for exact values.
    pub std_err: f64,
    pub exact: bool,
}

/// The tie-breaking value `χ(D, π)`, exact or from `cfg.n_samples` episodes.
pub fn tie_break_value(
    d: &DecPomdp<f64>,
    pi: &TabularPolicy<f64>,
    group: &AutGroup,
    net: &HashNetwork,
    cfg: &TieBreakConfig,
    seed: u64,
) -> Result<TieBreakValue> {
    cfg.validate()?;
    if net.input_width() != cfg.input_width(d) {
        return Err(Error::ShapeMismatch(format!("hash network width {} does not fit this model", net.input_width())));
    }
    if cfg.exact {
        let dist = op_history_distribution(d, pi, group.elements()?)?;
        return Ok(TieBreakValue { value: chi_from_distribution(d, &dist, net, cfg)?, std_err: 0.0, exact: true });
    }
    pi.check_domain(d)?;
    let failure = OnceLock::new();
    let est = eval::mc_estimate(cfg.n_samples, seed, |r| {
        let profile: Vec<_> = (0..d.n_agents()).map(|_| group.sample(r)).collect();
        let refs: Vec<&Perms> = profile.iter().map(|g| g.as_ref()).collect();
        let tau = sample_profile_episode(d, pi, &refs, r, None);
        history_score(d, net, &tau, cfg).unwrap_or_else(|e| {
            let _ = failure.set(e);
            0.0
        })
    });
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(TieBreakValue { value: est.mean, std_err: est.std_err, exact: false })
}

/// Outcome of OP with tie-breaking.
#[derive(Debug, Clone)]
pub struct Selection {
    pub chosen: usize,
    pub candidates: Vec<TabularPolicy<f64>>,
    /// `None` throughout when there is a single candidate.
    pub values: Vec<Option<TieBreakValue>>,
}

impl Selection {
    pub fn policy(&self) -> &TabularPolicy<f64> {
        &self.candidates[self.chosen]
    }
}

/// Scores every candidate and keeps the first one with the highest value.
pub fn select_by_tiebreak(
    d: &DecPomdp<f64>,
    group: &AutGroup,
    candidates: Vec<TabularPolicy<f64>>,
    net: &HashNetwork,
    cfg: &TieBreakConfig,
    seed: u64,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::Config("tie-breaking needs at least one candidate".into()));
    }
    if candidates.len() == 1 {
        return Ok(Selection { chosen: 0, candidates, values: vec![None] });
    }
    // identical candidates share one evaluation
    let first: Vec<usize> = (0..candidates.len()).map(|k| (0..=k).find(|&j| candidates[j] == candidates[k]).unwrap()).collect();
    let unique: Vec<usize> = (0..candidates.len()).filter(|&k| first[k] == k).collect();
    let scored: Vec<TieBreakValue> = unique
        .par_iter()
        .map(|&k| tie_break_value(d, &candidates[k], group, net, cfg, rng::derive_seed(seed, &[k as u64])))
        .collect::<Result<_>>()?;
    let values: Vec<TieBreakValue> = first.iter().map(|j| scored[unique.iter().position(|u| u == j).unwrap()]).collect();
    let mut chosen = 0;
    for (k, v) in values.iter().enumerate() {
        if v.value > values[chosen].value {
            chosen = k;
        }
    }
    Ok(Selection { chosen, candidates, values: values.into_iter().map(Some).collect() })
}

/// Trains `k` candidates with `trainer(seed index)` and selects one.
pub fn op_with_tiebreak<F>(
    d: &DecPomdp<f64>,
    group: &AutGroup,
    k: usize,
    trainer: F,
    net: &HashNetwork,
    cfg: &TieBreakConfig,
    seed: u64,
) -> Result<Selection>
where
    F: Fn(usize) -> Result<TabularPolicy<f64>> + Sync,
{
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let candidates: Vec<TabularPolicy<f64>> = (0..k).into_par_iter().map(&trainer).collect::<Result<_>>()?;
    select_by_tiebreak(d, group, candidates, net, cfg, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, reference_policy, EnvName, RefPolicy};
    use crate::otherplay::apply_profile;
    use crate::symmetry::{enumerate_automorphisms, pushforward, sample_labeling};

    #[test]
    fn network_is_deterministic_and_seed_sensitive() {
        let a = HashNetwork::new(5, 6).unwrap();
        let b = HashNetwork::new(5, 6).unwrap();
        let c = HashNetwork::new(6, 6).unwrap();
        let mut r = rng::stream(1);
        let mut gap: f64 = 0.0;
        for k in 0..1000 {
            let x: Vec<f64> = (0..6).map(|_| r.gen_range(-3.0..3.0)).collect();
            if k < 100 {
                assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
            }
            gap = gap.max((a.forward(&x).unwrap() - c.forward(&x).unwrap()).abs());
        }
        assert!(gap > 0.0);
        assert!(a.forward(&[0.0; 6]).unwrap().is_finite());
        assert!(matches!(a.forward(&[0.0; 5]), Err(Error::ShapeMismatch(_))));
        assert!(HashNetwork::new(0, 0).is_err());
    }

    #[test]
    fn zero_input_propagates_biases() {
        let net = HashNetwork::new(3, 4).unwrap();
        let mut h: Vec<f64> = net.layers[0].bias.iter().map(|b| b.max(0.0)).collect();
        for layer in &net.layers[1..4] {
            h = layer.apply(&h, true);
        }
        let out = net.layers[4].apply(&h, false)[0];
        assert_eq!(net.forward(&[0.0; 4]).unwrap(), out);
    }

    #[test]
    fn identity_permutation_is_direct_encoding() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let net = HashNetwork::new(2, encoded_width(&d, EncodeFields::ALL)).unwrap();
        let tau = History { states: vec![0, 0], actions: vec![vec![1, 0], vec![0, 0]], observations: vec![vec![0, 1]], rewards: vec![-1.0, 1.0] };
        let nf = normal_form(&tau);
        let x = encode(&nf, EncodeFields::ALL);
        assert_eq!(x, vec![0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(hash_history(&net, &nf, &[0, 1], EncodeFields::ALL).unwrap(), net.forward(&x).unwrap());
    }

    #[test]
    fn single_agent_score_is_one_hash() {
        let d = DecPomdp::<f64>::from_fn(1, &[3], &[1], 0, |_, _, _| 1.0, |_, _, _| 1.0, |_, a| a[0] as f64, |_| 1.0).unwrap();
        let cfg = TieBreakConfig::default();
        let net = cfg.network(&d).unwrap();
        let tau = History { states: vec![0], actions: vec![vec![2]], observations: vec![], rewards: vec![2.0] };
        assert_eq!(history_score(&d, &net, &tau, &cfg).unwrap(), net.forward(&[0.0, 2.0]).unwrap());
    }

    #[test]
    fn within_agent_relabels_hash_identically() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let cfg = TieBreakConfig { encode_fields: EncodeFields::ALL, ..TieBreakConfig::default() };
        let net = cfg.network(&d).unwrap();
        let tau = History { states: vec![0, 0], actions: vec![vec![1, 0], vec![1, 1]], observations: vec![vec![0, 1]], rewards: vec![-1.0, 1.0] };
        let f = Perms { agents: vec![0, 1], states: vec![0], actions: vec![vec![1, 0], vec![1, 0]], observations: vec![vec![1, 0], vec![1, 0]] };
        let g = f.map_history(&tau);
        let a = hash_history(&net, &normal_form(&tau), &[0, 1], cfg.encode_fields).unwrap();
        let b = hash_history(&net, &normal_form(&g), &[0, 1], cfg.encode_fields).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn normalizing_labelings_map_onto_the_normal_form() {
        let d = build_env::<f64>(EnvName::Asymmetric);
        let mut r = rng::stream(3);
        let pi = crate::otherplay::tests::random_policy(&d, &mut r);
        for _ in 0..20 {
            let tau = eval::sample_episode(&d, &pi, &mut r);
            let fs = normalizing_labelings(&d, &tau, LABELING_CAP).unwrap();
            assert!(!fs.is_empty());
            let nf = normal_form(&tau).as_history();
            for f in &fs {
                assert_eq!(f.map_history(&tau), nf);
            }
        }
    }

    #[test]
    fn exact_chi_is_constant_over_profiles_and_labelings() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let auts = enumerate_automorphisms(&d).unwrap();
        let group = AutGroup::new(&d).unwrap();
        let mut r = rng::stream(8);
        for env_code in [false, true] {
            let cfg = TieBreakConfig { exact: true, include_env_code: env_code, hash_seed: 4, ..TieBreakConfig::default() };
            let net = cfg.network(&d).unwrap();
            let pi = crate::otherplay::tests::random_policy(&d, &mut r);
            let shared = {
                let l = crate::otherplay::tests::random_policy(&d, &mut r).local(0).clone();
                TabularPolicy::from_locals(vec![l.clone(), l])
            };
            let base = tie_break_value(&d, &pi, &group, &net, &cfg, 0).unwrap().value;
            let base_shared = tie_break_value(&d, &shared, &group, &net, &cfg, 0).unwrap().value;
            for combo in otherplay::product_indices(&[auts.len(), auts.len()]) {
                let prof: Vec<Perms> = combo.iter().map(|&c| auts[c].clone()).collect();
                let v = tie_break_value(&d, &apply_profile(&prof, &shared), &group, &net, &cfg, 0).unwrap().value;
                assert!((v - base_shared).abs() < 1e-9);
                // profiles seating one source agent in both slots change the class
                if prof[0].agents == prof[1].agents {
                    let v = tie_break_value(&d, &apply_profile(&prof, &pi), &group, &net, &cfg, 0).unwrap().value;
                    assert!((v - base).abs() < 1e-9);
                }
            }
            for _ in 0..5 {
                let f = sample_labeling(&d, &mut r);
                let e = relabel(&d, &f).unwrap();
                let ge = AutGroup::new(&e).unwrap();
                let v = tie_break_value(&e, &pushforward(&f, &pi).unwrap(), &ge, &net, &cfg, 0).unwrap().value;
                assert!((v - base).abs() < 1e-9, "{v} vs {base}");
            }
        }
    }

    #[test]
    fn monte_carlo_agrees_with_exact() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let group = AutGroup::new(&d).unwrap();
        let pi = reference_policy::<f64>(EnvName::TwoStage, RefPolicy::Switch).unwrap();
        let mut cfg = TieBreakConfig { exact: true, ..TieBreakConfig::default() };
        let mut inside = 0;
        for seed in 0..20 {
            cfg.hash_seed = seed;
            cfg.exact = true;
            let net = cfg.network(&d).unwrap();
            let exact = tie_break_value(&d, &pi, &group, &net, &cfg, 0).unwrap();
            cfg.exact = false;
            let mc = tie_break_value(&d, &pi, &group, &net, &cfg, 100 + seed).unwrap();
            if (mc.value - exact.value).abs() <= 4.0 * mc.std_err {
                inside += 1;
            }
        }
        assert!(inside >= 19, "{inside}/20");
    }

    #[test]
    fn single_candidate_skips_scoring_and_ties_keep_the_first() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let group = AutGroup::new(&d).unwrap();
        let cfg = TieBreakConfig { exact: true, ..TieBreakConfig::default() };
        let net = cfg.network(&d).unwrap();
        let pr = reference_policy::<f64>(EnvName::TwoStage, RefPolicy::Repeat).unwrap();
        let one = op_with_tiebreak(&d, &group, 1, |_| Ok(pr.clone()), &net, &cfg, 0).unwrap();
        assert_eq!((one.chosen, one.values.clone()), (0, vec![None]));
        let same = op_with_tiebreak(&d, &group, 3, |_| Ok(pr.clone()), &net, &cfg, 0).unwrap();
        assert_eq!(same.chosen, 0);
        let vals: Vec<f64> = same.values.iter().map(|v| v.unwrap().value).collect();
        assert!(vals.iter().all(|&v| v == vals[0]));
        let failing = op_with_tiebreak(&d, &group, 2, |_| Err(Error::Config("boom".into())), &net, &cfg, 0);
        assert!(failing.is_err());
    }
}
