//! Policy-gradient other-play training on tabular softmax policies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::history::AoSpace;
use crate::model::DecPomdp;
use crate::otherplay::{self, sample_profile_episode, SourceStep};
use crate::policy::{ao_spaces, LocalPolicy, TabularPolicy};
use crate::rng;
use crate::symmetry::{AutGroup, Perms};
use rand::Rng;

/// Environment steps allowed per trained policy when sizing default runs.
pub const STEP_BUDGET: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    RmsProp,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSharing {
    /// Share one table when all agents form a single orbit.
    Auto,
    Shared,
    Separate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_steps: usize,
    pub batch_episodes: usize,
    pub learning_rate: f64,
    pub rms_alpha: f64,
    pub rms_epsilon: f64,
    /// Weight of the entropy bonus.
    pub entropy_coeff: f64,
    pub share_weights: WeightSharing,
    pub optimizer: Optimizer,
    /// Initial logits are drawn uniformly from `[-init_scale, init_scale]`.
    pub init_scale: f64,
    /// Exact OP value is recorded on the curve every this many updates.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_steps: 10_000,
            batch_episodes: 32,
            learning_rate: 5e-4,
            rms_alpha: 0.99,
            rms_epsilon: 1e-5,
            entropy_coeff: 0.1,
            share_weights: WeightSharing::Auto,
            optimizer: Optimizer::RmsProp,
            init_scale: 0.5,
            eval_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with as many updates as fit in [`STEP_BUDGET`] env steps.
    pub fn for_env<S: crate::Scalar>(d: &DecPomdp<S>) -> Self {
        let c = TrainConfig::default();
        TrainConfig { n_steps: STEP_BUDGET / (c.batch_episodes * (d.horizon() + 1)), ..c }
    }

    pub fn env_steps<S: crate::Scalar>(&self, d: &DecPomdp<S>) -> usize {
        self.n_steps * self.batch_episodes * (d.horizon() + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_steps == 0 || self.batch_episodes == 0 || self.eval_every == 0 {
            return bad("step, batch and evaluation counts must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.entropy_coeff >= 0.0) {
            return bad("entropy coefficient must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.rms_alpha) || !(self.rms_epsilon > 0.0) {
            return bad("rms_alpha must lie in [0, 1) and rms_epsilon must be positive");
        }
        if !(self.init_scale >= 0.0) {
            return bad("init_scale must be nonnegative");
        }
        Ok(())
    }
}

/// Softmax logits, one table per distinct parameter block. Tied agents
/// point at the same table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    table_of: Vec<usize>,
    /// `(n_actions, n_observations)` per table; every table shares the horizon.
    shapes: Vec<(usize, usize)>,
    horizon: usize,
    logits: Vec<Vec<f64>>,
}

fn softmax_into(z: &[f64], out: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &x) in out.iter_mut().zip(z) {
        *o = (x - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

impl PolicyParams {
    /// All-zero logits (uniform policy).
    pub fn zeros<S: crate::Scalar>(d: &DecPomdp<S>, shared: bool) -> Result<Self> {
        let spaces = ao_spaces(d);
        if shared && spaces.iter().any(|s| *s != spaces[0]) {
            return Err(Error::Config("weight sharing needs identical action and observation sets".into()));
        }
        let table_of: Vec<usize> = if shared { vec![0; spaces.len()] } else { (0..spaces.len()).collect() };
        let n_tables = if shared { 1 } else { spaces.len() };
        let shapes: Vec<(usize, usize)> = (0..n_tables).map(|t| (spaces[t].n_actions(), spaces[t].n_observations())).collect();
        let logits = (0..n_tables).map(|t| vec![0.0; spaces[t].len() * spaces[t].n_actions()]).collect();
        Ok(PolicyParams { table_of, shapes, horizon: d.horizon(), logits })
    }

    pub fn random<S: crate::Scalar, R: Rng + ?Sized>(d: &DecPomdp<S>, shared: bool, scale: f64, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(d, shared)?;
        if scale > 0.0 {
            for t in &mut p.logits {
                for x in t.iter_mut() {
                    *x = rng.gen_range(-scale..=scale);
                }
            }
        }
        Ok(p)
    }

    pub fn n_agents(&self) -> usize {
        self.table_of.len()
    }

    pub fn is_shared(&self) -> bool {
        self.logits.len() < self.table_of.len()
    }

    pub fn table_of(&self, agent: usize) -> usize {
        self.table_of[agent]
    }

    pub fn n_params(&self) -> usize {
        self.logits.iter().map(Vec::len).sum()
    }

    pub fn space(&self, table: usize) -> AoSpace {
        AoSpace::new(self.shapes[table].0, self.shapes[table].1, self.horizon)
    }

    pub fn tables(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn tables_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.logits
    }

    /// Logits laid out per agent, duplicating tied tables.
    pub fn agent_logits(&self) -> Vec<Vec<f64>> {
        self.table_of.iter().map(|&t| self.logits[t].clone()).collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.logits.iter().flatten().copied().collect()
    }

    pub fn set_flat(&mut self, x: &[f64]) {
        let mut k = 0;
        for t in &mut self.logits {
            let n = t.len();
            t.copy_from_slice(&x[k..k + n]);
            k += n;
        }
    }

    /// Softmax probabilities of one table.
    pub fn probs(&self, table: usize) -> Vec<f64> {
        let k = self.shapes[table].0;
        let z = &self.logits[table];
        let mut out = vec![0.0; z.len()];
        for (zr, or) in z.chunks(k).zip(out.chunks_mut(k)) {
            softmax_into(zr, or);
        }
        out
    }

    pub fn policy(&self) -> TabularPolicy<f64> {
        let tables: Vec<LocalPolicy<f64>> = (0..self.logits.len())
            .map(|t| LocalPolicy::from_table(self.space(t), self.probs(t)).expect("table shape"))
            .collect();
        TabularPolicy::from_locals(self.table_of.iter().map(|&t| tables[t].clone()).collect())
    }

    fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.logits.iter().map(|t| vec![0.0; t.len()]).collect()
    }
}

/// One sampled episode in source coordinates: `steps[t * N + i]` is agent
/// `i`'s decision at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEpisode {
    pub steps: Vec<SourceStep>,
    pub rewards: Vec<f64>,
}

/// Entropy-regularized REINFORCE loss and its exact gradient with respect
/// to the logits:
/// `-(1 / (K (T+1) N)) Σ_k Σ_t Σ_i [G_t log π(ã | τ̃) + α H(π(· | τ̃))]`,
/// where `(ã, τ̃)` are the source action and history of the permuted agent.
pub fn loss_and_grad(params: &PolicyParams, batch: &[BatchEpisode], entropy_coeff: f64) -> (f64, Vec<Vec<f64>>) {
    let n = params.n_agents();
    let probs: Vec<Vec<f64>> = (0..params.logits.len()).map(|t| params.probs(t)).collect();
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    let steps = params.horizon + 1;
    let scale = 1.0 / (batch.len() * steps * n) as f64;
    for ep in batch {
        let mut g = 0.0;
        for t in (0..steps).rev() {
            g += ep.rewards[t];
            for i in 0..n {
                let st = ep.steps[t * n + i];
                let table = params.table_of[st.agent];
                let k = params.shapes[table].0;
                let row = &probs[table][st.history * k..(st.history + 1) * k];
                let h = entropy(row);
                loss -= scale * (g * row[st.action].ln() + entropy_coeff * h);
                let gr = &mut grad[table][st.history * k..(st.history + 1) * k];
                for b in 0..k {
                    let dlog = if b == st.action { 1.0 } else { 0.0 } - row[b];
                    let dent = if row[b] > 0.0 { -row[b] * (row[b].ln() + h) } else { 0.0 };
                    gr[b] -= scale * (g * dlog + entropy_coeff * dent);
                }
            }
        }
    }
    (loss, grad)
}

fn check_profiles(order: usize, n: usize) -> Result<()> {
    if (order as f64).powi(n as i32) > otherplay::DEFAULT_PROFILE_CAP as f64 {
        return Err(Error::cap("automorphism profiles", otherplay::DEFAULT_PROFILE_CAP));
    }
    Ok(())
}

/// Exact gradient of the OP value with respect to the logits, by
/// differentiating `Σ_ĝ Σ_τ P_ĝ(τ) R(τ) / |Aut|^N` through every action
/// probability along each history.
pub fn exact_op_grad(d: &DecPomdp<f64>, params: &PolicyParams, auts: &[Perms]) -> Result<Vec<Vec<f64>>> {
    let n = d.n_agents();
    check_profiles(auts.len(), n)?;
    let pi = params.policy();
    pi.check_domain(d)?;
    let probs: Vec<Vec<f64>> = (0..params.logits.len()).map(|t| params.probs(t)).collect();
    let spaces = ao_spaces(d);
    // for slot i under automorphism g: source agent, history map and action map
    let views: Vec<Vec<(usize, Vec<usize>, Vec<usize>)>> = (0..n)
        .map(|i| {
            auts.iter()
                .map(|g| {
                    let inv = g.inverse();
                    (inv.agents[i], inv.ao_index_map(i, &spaces[i]), inv.actions[i].clone())
                })
                .collect()
        })
        .collect();
    let mut grad = params.zeros_like();
    let total = (auts.len() as f64).powi(n as i32);
    for combo in otherplay::product_indices(&vec![auts.len(); n]) {
        let profile: Vec<Perms> = combo.iter().map(|&c| auts[c].clone()).collect();
        let permuted = otherplay::apply_profile(&profile, &pi);
        let locals: Vec<&LocalPolicy<f64>> = permuted.locals().iter().collect();
        for (tau, p) in eval::history_distribution_capped(d, &locals, eval::DEFAULT_HISTORY_CAP)? {
            let w = p * tau.total_reward() / total;
            if w == 0.0 {
                continue;
            }
            for t in 0..=d.horizon() {
                for i in 0..n {
                    let (src, hmap, amap) = &views[i][combo[i]];
                    let h = hmap[tau.ao_index(&spaces[i], i, t)];
                    let a = amap[tau.actions[t][i]];
                    let table = params.table_of[*src];
                    let k = params.shapes[table].0;
                    for b in 0..k {
                        let e = if b == a { 1.0 } else { 0.0 };
                        grad[table][h * k + b] += w * (e - probs[table][h * k + b]);
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// Every `(profile, history)` pair of the OP game with its probability,
/// traced in source coordinates. The probability-weighted sum of
/// single-episode loss gradients is the exact expected estimator.
pub fn exhaustive_op_batches(d: &DecPomdp<f64>, params: &PolicyParams, auts: &[Perms]) -> Result<Vec<(f64, BatchEpisode)>> {
    let n = d.n_agents();
    let pi = params.policy();
    let spaces = ao_spaces(d);
    let mut out = Vec::new();
    let total = (auts.len() as f64).powi(n as i32);
    for combo in otherplay::product_indices(&vec![auts.len(); n]) {
        let profile: Vec<Perms> = combo.iter().map(|&c| auts[c].clone()).collect();
        let permuted = otherplay::apply_profile(&profile, &pi);
        for (tau, p) in eval::history_distribution(d, &permuted)? {
            let mut steps = Vec::new();
            for t in 0..=d.horizon() {
                for i in 0..n {
                    let inv = profile[i].inverse();
                    let h = inv.ao_index_map(i, &spaces[i])[tau.ao_index(&spaces[i], i, t)];
                    steps.push(SourceStep { agent: inv.agents[i], history: h, action: inv.actions[i][tau.actions[t][i]] });
                }
            }
            out.push((p / total, BatchEpisode { steps, rewards: tau.rewards }));
        }
    }
    Ok(out)
}

/// One point on a training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub update: usize,
    /// Mean batch return, an unbiased estimate of the current OP value.
    pub mc_op_estimate: f64,
    pub exact_op_value: Option<f64>,
    /// Mean policy entropy over the decisions in the batch.
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: PolicyParams,
    pub policy: TabularPolicy<f64>,
    pub curve: Vec<CurvePoint>,
}

struct RmsProp {
    v: Vec<Vec<f64>>,
}

/// Algorithm: each update samples `K` episodes, each under a fresh uniform
/// automorphism profile, and takes one optimizer step on [`loss_and_grad`].
pub fn train_op(d: &DecPomdp<f64>, group: &AutGroup, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let shared = match cfg.share_weights {
        WeightSharing::Shared => true,
        WeightSharing::Separate => false,
        WeightSharing::Auto => {
            let spaces = ao_spaces(d);
            group.agent_orbits().len() == 1 && spaces.iter().all(|s| *s == spaces[0])
        }
    };
    let params = PolicyParams::random(d, shared, cfg.init_scale, &mut rng::child_stream(cfg.seed, &[0]))?;
    train_op_from(d, group, cfg, params)
}

/// [`train_op`] starting from the given parameters; `init_scale` and
/// `share_weights` are ignored.
pub fn train_op_from(d: &DecPomdp<f64>, group: &AutGroup, cfg: &TrainConfig, mut params: PolicyParams) -> Result<TrainOutput> {
    cfg.validate()?;
    let n = d.n_agents();
    if params.n_agents() != n || params.horizon != d.horizon() {
        return Err(Error::ShapeMismatch("parameters sized for a different model".into()));
    }
    params.policy().check_domain(d)?;
    let mut r = rng::child_stream(cfg.seed, &[1]);
    let exact_auts = match group.elements() {
        Ok(list) if check_profiles(list.len(), n).is_ok() => Some(list),
        _ => None,
    };
    let mut opt = RmsProp { v: params.zeros_like() };
    let mut curve = Vec::with_capacity(cfg.n_steps + 1);
    let mut batch = Vec::with_capacity(cfg.batch_episodes);
    for update in 0..cfg.n_steps {
        let pi = params.policy();
        batch.clear();
        let mut ret = 0.0;
        for _ in 0..cfg.batch_episodes {
            let profile: Vec<_> = (0..n).map(|_| group.sample(&mut r)).collect();
            let refs: Vec<&Perms> = profile.iter().map(|g| g.as_ref()).collect();
            let mut steps = Vec::with_capacity((d.horizon() + 1) * n);
            let tau = sample_profile_episode(d, &pi, &refs, &mut r, Some(&mut steps));
            ret += tau.total_reward();
            batch.push(BatchEpisode { steps, rewards: tau.rewards });
        }
        let (loss, grad) = loss_and_grad(&params, &batch, cfg.entropy_coeff);
        if !loss.is_finite() {
            return Err(Error::Divergence { update, loss });
        }
        let mut ent = 0.0;
        for ep in &batch {
            for st in &ep.steps {
                ent += entropy(pi.local(st.agent).row(st.history));
            }
        }
        let exact = match exact_auts {
            Some(a) if update % cfg.eval_every == 0 => Some(otherplay::op_value(d, &pi, a)?),
            _ => None,
        };
        curve.push(CurvePoint {
            update,
            mc_op_estimate: ret / cfg.batch_episodes as f64,
            exact_op_value: exact,
            entropy: ent / (cfg.batch_episodes * (d.horizon() + 1) * n) as f64,
        });
        for (t, g) in grad.iter().enumerate() {
            let z = &mut params.logits[t];
            match cfg.optimizer {
                Optimizer::RmsProp => {
                    let v = &mut opt.v[t];
                    for j in 0..g.len() {
                        v[j] = cfg.rms_alpha * v[j] + (1.0 - cfg.rms_alpha) * g[j] * g[j];
                        z[j] -= cfg.learning_rate * g[j] / (v[j].sqrt() + cfg.rms_epsilon);
                    }
                }
                Optimizer::Sgd => {
                    for j in 0..g.len() {
                        z[j] -= cfg.learning_rate * g[j];
                    }
                }
            }
        }
        if params.logits.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { update, loss: f64::NAN });
        }
    }
    let policy = params.policy();
    if let Some(a) = exact_auts {
        let v = otherplay::op_value(d, &policy, a)?;
        if let Some(last) = curve.last_mut() {
            last.exact_op_value = Some(v);
        }
    }
    Ok(TrainOutput { params, policy, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, EnvName};
    use crate::symmetry::enumerate_automorphisms;

    #[test]
    fn expected_estimator_matches_exact_gradient() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let auts = enumerate_automorphisms(&d).unwrap();
        for shared in [true, false] {
            let params = PolicyParams::random(&d, shared, 1.0, &mut rng::stream(9)).unwrap();
            let exact = exact_op_grad(&d, &params, &auts).unwrap();
            let mut mean = params.zeros_like();
            for (w, ep) in exhaustive_op_batches(&d, &params, &auts).unwrap() {
                let (_, g) = loss_and_grad(&params, &[ep], 0.0);
                for (m, x) in mean.iter_mut().flatten().zip(g.iter().flatten()) {
                    *m += w * x;
                }
            }
            let factor = ((d.horizon() + 1) * d.n_agents()) as f64;
            for (m, e) in mean.iter().flatten().zip(exact.iter().flatten()) {
                assert!((factor * m + e).abs() < 1e-12, "{m} vs {e}");
            }
        }
    }

    #[test]
    fn exact_gradient_matches_finite_differences() {
        let d = build_env::<f64>(EnvName::Asymmetric);
        let auts = enumerate_automorphisms(&d).unwrap();
        let mut params = PolicyParams::random(&d, false, 1.0, &mut rng::stream(4)).unwrap();
        let g = exact_op_grad(&d, &params, &auts).unwrap().concat();
        let x0 = params.flat();
        let h = 1e-5;
        for j in (0..x0.len()).step_by(7) {
            let mut x = x0.clone();
            x[j] += h;
            params.set_flat(&x);
            let up = otherplay::op_value(&d, &params.policy(), &auts).unwrap();
            x[j] -= 2.0 * h;
            params.set_flat(&x);
            let down = otherplay::op_value(&d, &params.policy(), &auts).unwrap();
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1.0), "param {j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let group = AutGroup::new(&d).unwrap();
        let mut params = PolicyParams::random(&d, true, 1.0, &mut rng::stream(1)).unwrap();
        let pi = params.policy();
        let mut r = rng::stream(2);
        let batch: Vec<BatchEpisode> = (0..8)
            .map(|_| {
                let prof: Vec<_> = (0..2).map(|_| group.sample(&mut r).into_owned()).collect();
                let refs: Vec<&Perms> = prof.iter().collect();
                let mut steps = Vec::new();
                let tau = sample_profile_episode(&d, &pi, &refs, &mut r, Some(&mut steps));
                BatchEpisode { steps, rewards: tau.rewards }
            })
            .collect();
        let (_, g) = loss_and_grad(&params, &batch, 0.5);
        let g = g.concat();
        let x0 = params.flat();
        let h = 1e-5;
        for j in 0..x0.len() {
            let mut x = x0.clone();
            x[j] += h;
            params.set_flat(&x);
            let up = loss_and_grad(&params, &batch, 0.5).0;
            x[j] -= 2.0 * h;
            params.set_flat(&x);
            let down = loss_and_grad(&params, &batch, 0.5).0;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1e-3), "param {j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn uniform_policy_with_zero_rewards_has_zero_gradient() {
        let d = DecPomdp::<f64>::from_fn(1, &[2, 2], &[1, 1], 1, |_, _, _| 1.0, |_, _, _| 1.0, |_, _| 0.0, |_| 1.0).unwrap();
        let params = PolicyParams::zeros(&d, false).unwrap();
        let group = AutGroup::new(&d).unwrap();
        let pi = params.policy();
        let mut r = rng::stream(0);
        let refs: Vec<Perms> = (0..2).map(|_| group.sample(&mut r).into_owned()).collect();
        let mut steps = Vec::new();
        let tau = sample_profile_episode(&d, &pi, &[&refs[0], &refs[1]], &mut r, Some(&mut steps));
        let (_, g) = loss_and_grad(&params, &[BatchEpisode { steps, rewards: tau.rewards }], 0.5);
        assert!(g.iter().flatten().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn single_episode_reinforce_identity() {
        let d = build_env::<f64>(EnvName::Lever4);
        let params = PolicyParams::random(&d, false, 1.0, &mut rng::stream(6)).unwrap();
        let p0 = params.probs(0);
        let p1 = params.probs(1);
        let ep = BatchEpisode {
            steps: vec![SourceStep { agent: 0, history: 0, action: 3 }, SourceStep { agent: 1, history: 0, action: 3 }],
            rewards: vec![0.9],
        };
        let (_, g) = loss_and_grad(&params, &[ep], 0.0);
        for b in 0..4 {
            let e = if b == 3 { 1.0 } else { 0.0 };
            assert!((g[0][b] + 0.9 * (e - p0[b]) / 2.0).abs() < 1e-15);
            assert!((g[1][b] + 0.9 * (e - p1[b]) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn shared_tables_halve_parameters_and_sum_gradients() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let sep = PolicyParams::random(&d, false, 1.0, &mut rng::stream(3)).unwrap();
        let mut tied = PolicyParams::zeros(&d, true).unwrap();
        tied.logits[0] = sep.logits[0].clone();
        let sep = PolicyParams { logits: vec![tied.logits[0].clone(), tied.logits[0].clone()], ..sep };
        assert_eq!(2 * tied.n_params(), sep.n_params());
        let auts = enumerate_automorphisms(&d).unwrap();
        let gs = exact_op_grad(&d, &sep, &auts).unwrap();
        let gt = exact_op_grad(&d, &tied, &auts).unwrap();
        for j in 0..gt[0].len() {
            assert!((gt[0][j] - gs[0][j] - gs[1][j]).abs() < 1e-12);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let group = AutGroup::new(&d).unwrap();
        let cfg = TrainConfig { n_steps: 50, seed: 12, ..TrainConfig::default() };
        let a = train_op(&d, &group, &cfg).unwrap();
        let b = train_op(&d, &group, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.curve, b.curve);
        assert!(a.params.is_shared());
        let bad = TrainConfig { learning_rate: 0.0, ..cfg };
        assert!(matches!(train_op(&d, &group, &bad), Err(Error::Config(_))));
    }
}
