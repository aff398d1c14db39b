//! Cross-play evaluation, XP matrices, policy clustering and label-free
//! coordination game payoffs.

use std::sync::OnceLock;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, McEstimate};
use crate::model::DecPomdp;
use crate::otherplay::{self, distinct_locals, product_indices, sample_slots_episode};
use crate::policy::{LocalPolicy, TabularPolicy};
use crate::rng::{self, SimRng};
use crate::scalar::Scalar;
use crate::symmetry::{first_isomorphism, pushforward, relabel, sample_labeling, AutGroup, Perms};
use crate::tiebreak::{select_by_tiebreak, TieBreakConfig};
use crate::training::{train_op, TrainConfig};

/// Default episodes per XP cell.
pub const XP_EPISODES: usize = 2048;
/// Default episodes per clustering comparison.
pub const CLUSTER_EPISODES: usize = 256;
pub const CLUSTER_THRESHOLD: f64 = 0.6;

/// Exact cross-play value: slot `i` plays `proj_i(g_i* slots[i])` for
/// independent uniform `g_i ∈ Aut`.
pub fn xp_value<S: Scalar>(d: &DecPomdp<S>, slots: &[&TabularPolicy<S>], auts: &[Perms]) -> Result<S> {
    let n = d.n_agents();
    if slots.len() != n {
        return Err(Error::ShapeMismatch(format!("{} policies for {} agent slots", slots.len(), n)));
    }
    for pi in slots {
        pi.check_domain(d)?;
    }
    if (auts.len() as f64).powi(n as i32) > otherplay::DEFAULT_PROFILE_CAP as f64 {
        return Err(Error::cap("automorphism profiles", otherplay::DEFAULT_PROFILE_CAP));
    }
    let per_slot: Vec<_> = (0..n).map(|i| distinct_locals(slots[i], auts, i)).collect();
    let combos = product_indices(&per_slot.iter().map(Vec::len).collect::<Vec<_>>());
    let terms: Vec<S> = combos
        .par_iter()
        .map(|c| {
            let locals: Vec<&LocalPolicy<S>> = c.iter().enumerate().map(|(i, &k)| &per_slot[i][k].0).collect();
            let mult: usize = c.iter().enumerate().map(|(i, &k)| per_slot[i][k].1).product();
            eval::expected_return_locals(d, &locals).map(|j| j * S::from_usize(mult).expect("count fits scalar"))
        })
        .collect::<Result<_>>()?;
    let total = S::from_usize(auts.len()).expect("count fits scalar");
    let denom = (0..n).fold(S::one(), |acc, _| acc * total.clone());
    Ok(crate::scalar::sum(terms) / denom)
}

/// Slot 0 from `a`, every other slot from `b`.
pub fn xp_pair<S: Scalar>(d: &DecPomdp<S>, a: &TabularPolicy<S>, b: &TabularPolicy<S>, auts: &[Perms]) -> Result<S> {
    let slots: Vec<&TabularPolicy<S>> = (0..d.n_agents()).map(|i| if i == 0 { a } else { b }).collect();
    xp_value(d, &slots, auts)
}

/// Monte-Carlo cross-play value with a fresh profile per episode.
pub fn xp_value_mc<S: Scalar>(d: &DecPomdp<S>, slots: &[&TabularPolicy<S>], group: &AutGroup, n: usize, seed: u64) -> Result<McEstimate> {
    if slots.len() != d.n_agents() {
        return Err(Error::ShapeMismatch(format!("{} policies for {} agent slots", slots.len(), d.n_agents())));
    }
    for pi in slots {
        pi.check_domain(d)?;
    }
    Ok(eval::mc_estimate(n, seed, |r| {
        let profile: Vec<_> = (0..d.n_agents()).map(|_| group.sample(r)).collect();
        let refs: Vec<&Perms> = profile.iter().map(|g| g.as_ref()).collect();
        sample_slots_episode(d, slots, &refs, r, None).total_reward().as_f64()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum XpMode {
    Exact,
    MonteCarlo { episodes: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XpMatrix {
    pub values: Vec<Vec<f64>>,
    /// Episodes per cell; `None` for exact cells.
    pub episodes: Option<usize>,
    pub fingerprint: String,
}

impl XpMatrix {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean over ordered pairs `k ≠ l`.
    pub fn avg_offdiag(&self) -> f64 {
        let n = self.values.len();
        let mut s = 0.0;
        for k in 0..n {
            for l in 0..n {
                if k != l {
                    s += self.values[k][l];
                }
            }
        }
        s / (n * (n - 1)) as f64
    }

    pub fn write_csv<W: std::io::Write>(&self, ids: &[String], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![String::new()];
        header.extend(ids.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in ids.iter().zip(&self.values) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn xp_cell(d: &DecPomdp<f64>, a: &TabularPolicy<f64>, b: &TabularPolicy<f64>, group: &AutGroup, mode: XpMode, k: usize, l: usize) -> Result<f64> {
    match mode {
        XpMode::Exact => xp_pair(d, a, b, group.elements()?),
        XpMode::MonteCarlo { episodes, seed } => {
            let slots: Vec<&TabularPolicy<f64>> = (0..d.n_agents()).map(|i| if i == 0 { a } else { b }).collect();
            Ok(xp_value_mc(d, &slots, group, episodes, rng::derive_seed(seed, &[k as u64, l as u64]))?.mean)
        }
    }
}

/// All ordered pairs, cell `(k, l)` = slot 0 from `policies[k]`, the rest from `policies[l]`.
pub fn xp_matrix(d: &DecPomdp<f64>, policies: &[TabularPolicy<f64>], group: &AutGroup, mode: XpMode) -> Result<XpMatrix> {
    let n = policies.len();
    if n < 2 {
        return Err(Error::Config("an XP matrix needs at least two policies".into()));
    }
    let cells: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|c| xp_cell(d, &policies[c / n], &policies[c % n], group, mode, c / n, c % n))
        .collect::<Result<_>>()?;
    Ok(XpMatrix {
        values: cells.chunks(n).map(<[f64]>::to_vec).collect(),
        episodes: match mode {
            XpMode::Exact => None,
            XpMode::MonteCarlo { episodes, .. } => Some(episodes),
        },
        fingerprint: d.fingerprint().to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyClass {
    pub members: Vec<usize>,
    pub representative: usize,
}

/// Greedy clustering in input order: a policy joins the first class whose
/// representative `r` has `|XP(π, π) - XP(π, r)| < threshold`, else it opens
/// a new class. `xp(k, l)` supplies cross-play values.
pub fn cluster_with(n: usize, threshold: f64, mut xp: impl FnMut(usize, usize) -> Result<f64>) -> Result<Vec<PolicyClass>> {
    if !(threshold > 0.0) {
        return Err(Error::Config("clustering threshold must be positive".into()));
    }
    let mut classes: Vec<PolicyClass> = Vec::new();
    for k in 0..n {
        let own = xp(k, k)?;
        let mut joined = false;
        for c in classes.iter_mut() {
            if (own - xp(k, c.representative)?).abs() < threshold {
                c.members.push(k);
                joined = true;
                break;
            }
        }
        if !joined {
            classes.push(PolicyClass { members: vec![k], representative: k });
        }
    }
    Ok(classes)
}

pub fn cluster_matrix(m: &XpMatrix, threshold: f64) -> Result<Vec<PolicyClass>> {
    cluster_with(m.len(), threshold, |k, l| Ok(m.values[k][l]))
}

pub fn cluster_policies(d: &DecPomdp<f64>, policies: &[TabularPolicy<f64>], threshold: f64, group: &AutGroup, mode: XpMode) -> Result<Vec<PolicyClass>> {
    cluster_with(policies.len(), threshold, |k, l| xp_cell(d, &policies[k], &policies[l], group, mode, k, l))
}

/// A principal's policy-producing procedure in the LFC game. Procedures see
/// only their relabeled copy of the problem.
#[derive(Debug, Clone)]
pub enum Procedure {
    /// Ships a fixed policy of the reference model through a uniformly
    /// drawn isomorphism onto the principal's copy.
    Fixed(TabularPolicy<f64>),
    /// Ships a uniformly drawn member of the pool.
    Pool(Vec<TabularPolicy<f64>>),
    /// Runs a uniformly drawn procedure.
    Mix(Vec<Procedure>),
    /// Trains with other-play on the copy.
    Train(TrainConfig),
    /// Draws `k` candidates from `inner` and keeps the one with the highest
    /// tie-breaking value on the copy.
    TieBreak { inner: Box<Procedure>, k: usize, cfg: TieBreakConfig },
}

/// Reference model and its symmetry group, needed to ship fixed policies.
pub struct LfcContext<'a> {
    pub d: &'a DecPomdp<f64>,
    pub group: &'a AutGroup,
}

impl LfcContext<'_> {
    /// A uniformly random isomorphism from the reference model to `e`.
    fn random_iso(&self, e: &DecPomdp<f64>, r: &mut SimRng) -> Result<Perms> {
        let h = first_isomorphism(self.d, e)?.ok_or_else(|| Error::InvalidModel("copy is not isomorphic to the reference model".into()))?;
        Ok(h.after(&self.group.sample(r)))
    }
}

impl Procedure {
    pub fn run(&self, ctx: &LfcContext<'_>, e: &DecPomdp<f64>, e_group: &AutGroup, r: &mut SimRng) -> Result<TabularPolicy<f64>> {
        match self {
            Procedure::Fixed(pi) => pushforward(&ctx.random_iso(e, r)?, pi),
            Procedure::Pool(pool) => {
                if pool.is_empty() {
                    return Err(Error::Config("empty policy pool".into()));
                }
                let k = r.gen_range(0..pool.len());
                pushforward(&ctx.random_iso(e, r)?, &pool[k])
            }
            Procedure::Mix(ps) => {
                if ps.is_empty() {
                    return Err(Error::Config("empty procedure mix".into()));
                }
                let k = r.gen_range(0..ps.len());
                ps[k].run(ctx, e, e_group, r)
            }
            Procedure::Train(cfg) => {
                let cfg = TrainConfig { seed: r.gen(), ..cfg.clone() };
                Ok(train_op(e, e_group, &cfg)?.policy)
            }
            Procedure::TieBreak { inner, k, cfg } => {
                let candidates = (0..*k).map(|_| inner.run(ctx, e, e_group, r)).collect::<Result<Vec<_>>>()?;
                let net = cfg.network(e)?;
                let sel = select_by_tiebreak(e, e_group, candidates, &net, cfg, r.gen())?;
                Ok(sel.candidates[sel.chosen].clone())
            }
        }
    }
}

/// Payoff of the LFC game: per round, each principal `i` gets a uniformly
/// relabeled copy `f_i*D`, runs `procedures[i]` on it, and the result is
/// pulled back to `D` through a uniform isomorphism; slot `i` then plays
/// principal `i`'s local policy and the exact return is recorded.
pub fn lfc_payoff(d: &DecPomdp<f64>, group: &AutGroup, procedures: &[Procedure], n_outer: usize, seed: u64) -> Result<McEstimate> {
    let n = d.n_agents();
    if procedures.len() != n {
        return Err(Error::ShapeMismatch(format!("{} procedures for {} principals", procedures.len(), n)));
    }
    if n_outer == 0 {
        return Err(Error::Config("at least one outer round required".into()));
    }
    let ctx = LfcContext { d, group };
    let failure = OnceLock::new();
    let est = eval::mc_estimate_blocked(n_outer, seed, 1, |r| {
        let mut round = || -> Result<f64> {
            let mut locals = Vec::with_capacity(n);
            for (i, proc_i) in procedures.iter().enumerate() {
                let f = sample_labeling(d, r);
                let e = relabel(d, &f)?;
                let e_group = AutGroup::new(&e)?;
                let pi_e = proc_i.run(&ctx, &e, &e_group, r)?;
                // Iso(f*D, D) = Aut(D) ∘ f^{-1}
                let back = group.sample(r).after(&f.inverse());
                locals.push(pushforward(&back, &pi_e)?.local(i).clone());
            }
            let refs: Vec<&LocalPolicy<f64>> = locals.iter().collect();
            eval::expected_return_locals(d, &refs)
        };
        round().unwrap_or_else(|e| {
            let _ = failure.set(e);
            0.0
        })
    });
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, reference_policy, EnvName, RefPolicy};
    use crate::otherplay::op_value;
    use crate::symmetry::enumerate_automorphisms;

    fn refs() -> (DecPomdp<f64>, AutGroup, TabularPolicy<f64>, TabularPolicy<f64>) {
        let d = build_env::<f64>(EnvName::TwoStage);
        let g = AutGroup::new(&d).unwrap();
        let r = reference_policy(EnvName::TwoStage, RefPolicy::Repeat).unwrap();
        let s = reference_policy(EnvName::TwoStage, RefPolicy::Switch).unwrap();
        (d, g, r, s)
    }

    #[test]
    fn reference_cross_play_values() {
        let (d, g, r, s) = refs();
        let auts = g.elements().unwrap();
        assert!((xp_pair(&d, &r, &s, auts).unwrap() + 0.5).abs() < 1e-12);
        assert!((xp_pair(&d, &r, &r, auts).unwrap() - 0.5).abs() < 1e-12);
        let mut rng = rng::stream(5);
        for _ in 0..5 {
            let pi = crate::otherplay::tests::random_policy(&d, &mut rng);
            assert!((xp_pair(&d, &pi, &pi, auts).unwrap() - op_value(&d, &pi, auts).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_rational_cross_play() {
        let d = build_env::<crate::Rational>(EnvName::TwoStage);
        let auts = enumerate_automorphisms(&d).unwrap();
        let r = reference_policy::<crate::Rational>(EnvName::TwoStage, RefPolicy::Repeat).unwrap();
        let s = reference_policy::<crate::Rational>(EnvName::TwoStage, RefPolicy::Switch).unwrap();
        assert_eq!(xp_pair(&d, &r, &s, &auts).unwrap(), crate::Rational::new(-1, 2));
    }

    #[test]
    fn monte_carlo_cross_play_agrees() {
        let (d, g, _, _) = refs();
        let mut rng = rng::stream(6);
        let a = crate::otherplay::tests::random_policy(&d, &mut rng);
        let b = crate::otherplay::tests::random_policy(&d, &mut rng);
        let exact = xp_pair(&d, &a, &b, g.elements().unwrap()).unwrap();
        let mc = xp_value_mc(&d, &[&a, &b], &g, 40_000, 2).unwrap();
        assert!((mc.mean - exact).abs() < 4.0 * mc.std_err, "{mc:?} vs {exact}");
    }

    #[test]
    fn matrices_and_offdiagonal_means() {
        let (d, g, r, s) = refs();
        let m = xp_matrix(&d, &vec![r.clone(); 10], &g, XpMode::Exact).unwrap();
        assert!(m.values.iter().flatten().all(|x| (x - 0.5).abs() < 1e-12));
        assert!((m.avg_offdiag() - 0.5).abs() < 1e-12);
        let mixed: Vec<_> = (0..10).map(|k| if k < 5 { r.clone() } else { s.clone() }).collect();
        let m = xp_matrix(&d, &mixed, &g, XpMode::Exact).unwrap();
        assert!((m.avg_offdiag() + 1.0 / 18.0).abs() < 1e-12);
        let m2 = xp_matrix(&d, &[r.clone(), s.clone()], &g, XpMode::Exact).unwrap();
        assert_eq!(m2.len(), 2);
        assert!((m2.avg_offdiag() + 0.5).abs() < 1e-12);
        assert!(xp_matrix(&d, &[r], &g, XpMode::Exact).is_err());
    }

    #[test]
    fn clustering_reference_lists() {
        let (d, g, r, s) = refs();
        let classes = cluster_policies(&d, &[r.clone(), s.clone(), r.clone()], CLUSTER_THRESHOLD, &g, XpMode::Exact).unwrap();
        assert_eq!(classes, vec![PolicyClass { members: vec![0, 2], representative: 0 }, PolicyClass { members: vec![1], representative: 1 }]);
        let one = cluster_policies(&d, &vec![s; 4], CLUSTER_THRESHOLD, &g, XpMode::Exact).unwrap();
        assert_eq!(one.len(), 1);
        assert!(cluster_policies(&d, &[r], 0.0, &g, XpMode::Exact).is_err());
    }

    #[test]
    fn lfc_payoff_with_fixed_procedures() {
        let (d, g, r, s) = refs();
        let fixed = [Procedure::Fixed(r.clone()), Procedure::Fixed(r.clone())];
        let est = lfc_payoff(&d, &g, &fixed, 200, 1).unwrap();
        assert!((est.mean - 0.5).abs() <= 3.0 * est.std_err + 1e-9, "{est:?}");
        let split = [Procedure::Fixed(r.clone()), Procedure::Fixed(s.clone())];
        let est = lfc_payoff(&d, &g, &split, 50, 1).unwrap();
        assert!((est.mean + 0.5).abs() < 1e-9);
        let mix = Procedure::Mix(vec![Procedure::Fixed(r), Procedure::Fixed(s)]);
        let est = lfc_payoff(&d, &g, &[mix.clone(), mix], 400, 2).unwrap();
        assert!(est.mean.abs() < 0.2, "{est:?}");
    }

    #[test]
    fn trivial_symmetry_reduces_to_plain_return() {
        let d = DecPomdp::<f64>::from_fn(1, &[1], &[1], 1, |_, _, _| 1.0, |_, _, _| 1.0, |_, _| 0.25, |_| 1.0).unwrap();
        let g = AutGroup::new(&d).unwrap();
        assert_eq!(g.order(), 1);
        let pi = TabularPolicy::uniform(&d);
        let est = lfc_payoff(&d, &g, &[Procedure::Fixed(pi.clone())], 10, 0).unwrap();
        assert_eq!(est.mean, eval::expected_return(&d, &pi).unwrap());
    }

    #[test]
    fn relabeling_preserves_cross_play() {
        let (d, _, _, _) = refs();
        let auts = enumerate_automorphisms(&d).unwrap();
        let mut rng = rng::stream(11);
        for _ in 0..5 {
            let a = crate::otherplay::tests::random_policy(&d, &mut rng);
            let b = crate::otherplay::tests::random_policy(&d, &mut rng);
            let f = sample_labeling(&d, &mut rng);
            let e = relabel(&d, &f).unwrap();
            let e_auts = enumerate_automorphisms(&e).unwrap();
            let (fa, fb) = (pushforward(&f, &a).unwrap(), pushforward(&f, &b).unwrap());
            // the agent permutation moves the slots as well
            let slots_e: Vec<&TabularPolicy<f64>> = {
                let mut v = vec![&fa; 2];
                v[f.agents[1]] = &fb;
                v
            };
            let lhs = xp_value(&d, &[&a, &b], &auts).unwrap();
            let rhs = xp_value(&e, &slots_e, &e_auts).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
