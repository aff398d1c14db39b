//! Tabular joint policies defined on every syntactic AO history.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{AoHistory, AoSpace};
use crate::model::DecPomdp;
use crate::scalar::Scalar;

/// One agent's local policy: a probability vector per AO history.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPolicy<S> {
    space: AoSpace,
    probs: Vec<S>,
}

impl<S: Scalar> LocalPolicy<S> {
    pub fn uniform(space: AoSpace) -> Self {
        let a = space.n_actions();
        let p = S::one() / S::from_usize(a).expect("action count fits scalar");
        let probs = vec![p; space.len() * a];
        LocalPolicy { space, probs }
    }

    /// Builds the table from a closure returning the action distribution for
    /// each history.
    pub fn from_fn(space: AoSpace, mut f: impl FnMut(&[(usize, usize)]) -> Vec<S>) -> Result<Self> {
        let a = space.n_actions();
        let mut probs = Vec::with_capacity(space.len() * a);
        for h in 0..space.len() {
            let row = f(&space.pairs_of(h));
            if row.len() != a {
                return Err(Error::ShapeMismatch(format!("row of length {} for {a} actions", row.len())));
            }
            probs.extend(row);
        }
        Ok(LocalPolicy { space, probs })
    }

    pub fn from_table(space: AoSpace, probs: Vec<S>) -> Result<Self> {
        if probs.len() != space.len() * space.n_actions() {
            return Err(Error::ShapeMismatch(format!(
                "table of {} entries, expected {}",
                probs.len(),
                space.len() * space.n_actions()
            )));
        }
        Ok(LocalPolicy { space, probs })
    }

    pub fn space(&self) -> &AoSpace {
        &self.space
    }

    pub fn n_actions(&self) -> usize {
        self.space.n_actions()
    }

    pub fn prob(&self, history: usize, action: usize) -> &S {
        &self.probs[history * self.space.n_actions() + action]
    }

    pub fn row(&self, history: usize) -> &[S] {
        let a = self.space.n_actions();
        &self.probs[history * a..(history + 1) * a]
    }

    pub fn row_mut(&mut self, history: usize) -> &mut [S] {
        let a = self.space.n_actions();
        &mut self.probs[history * a..(history + 1) * a]
    }

    pub fn table(&self) -> &[S] {
        &self.probs
    }

    pub fn map_scalar<T: Scalar>(&self, f: impl Fn(&S) -> T) -> LocalPolicy<T> {
        LocalPolicy { space: self.space.clone(), probs: self.probs.iter().map(f).collect() }
    }

    /// Largest pointwise difference to another local policy on the same space.
    pub fn max_abs_diff(&self, other: &LocalPolicy<S>) -> f64 {
        self.probs.iter().zip(&other.probs).map(|(a, b)| (a.clone() - b.clone()).abs().as_f64()).fold(0.0, f64::max)
    }
}

/// Joint policy `(π_1, ..., π_N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy<S> {
    locals: Vec<LocalPolicy<S>>,
}

impl<S: Scalar> TabularPolicy<S> {
    pub fn uniform(d: &DecPomdp<S>) -> Self {
        TabularPolicy { locals: ao_spaces(d).into_iter().map(LocalPolicy::uniform).collect() }
    }

    pub fn from_locals(locals: Vec<LocalPolicy<S>>) -> Self {
        TabularPolicy { locals }
    }

    /// Same local policy rule for every agent, e.g. a symmetric reference policy.
    pub fn from_fn(d: &DecPomdp<S>, mut f: impl FnMut(usize, &[(usize, usize)]) -> Vec<S>) -> Result<Self> {
        let locals = ao_spaces(d)
            .into_iter()
            .enumerate()
            .map(|(i, sp)| LocalPolicy::from_fn(sp, |h| f(i, h)))
            .collect::<Result<_>>()?;
        Ok(TabularPolicy { locals })
    }

    pub fn n_agents(&self) -> usize {
        self.locals.len()
    }

    pub fn local(&self, agent: usize) -> &LocalPolicy<S> {
        &self.locals[agent]
    }

    pub fn local_mut(&mut self, agent: usize) -> &mut LocalPolicy<S> {
        &mut self.locals[agent]
    }

    pub fn locals(&self) -> &[LocalPolicy<S>] {
        &self.locals
    }

    pub fn into_locals(self) -> Vec<LocalPolicy<S>> {
        self.locals
    }

    pub fn prob(&self, agent: usize, history: usize, action: usize) -> &S {
        self.locals[agent].prob(history, action)
    }

    /// Checks that the policy is shaped for `d`.
    pub fn check_domain(&self, d: &DecPomdp<S>) -> Result<()> {
        let spaces = ao_spaces(d);
        if spaces.len() != self.locals.len() || spaces.iter().zip(&self.locals).any(|(s, l)| s != l.space()) {
            return Err(Error::ShapeMismatch("policy is not defined on this model's AO histories".into()));
        }
        Ok(())
    }

    /// Row-sum and sign violations as `(agent, history, message)`.
    pub fn violations(&self, tol: f64) -> Vec<(usize, usize, String)> {
        let mut out = Vec::new();
        for (i, l) in self.locals.iter().enumerate() {
            for h in 0..l.space().len() {
                let row = l.row(h);
                if row.iter().any(|p| p.as_f64() < 0.0) {
                    out.push((i, h, "negative probability".to_string()));
                }
                let s = crate::scalar::sum(row.iter().cloned());
                if !s.approx_eq(&S::one(), tol) {
                    out.push((i, h, format!("row sums to {}", s.as_f64())));
                }
            }
        }
        out
    }

    pub fn map_scalar<T: Scalar>(&self, f: impl Fn(&S) -> T) -> TabularPolicy<T> {
        TabularPolicy { locals: self.locals.iter().map(|l| l.map_scalar(&f)).collect() }
    }

    pub fn to_f64(&self) -> TabularPolicy<f64> {
        self.map_scalar(|x| x.as_f64())
    }

    pub fn max_abs_diff(&self, other: &TabularPolicy<S>) -> f64 {
        self.locals.iter().zip(&other.locals).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max)
    }
}

impl TabularPolicy<f64> {
    /// Independent random rows, each weight drawn from U[0, 1) plus a small floor.
    pub fn random<R: rand::Rng + ?Sized>(d: &DecPomdp<f64>, r: &mut R) -> Self {
        let locals = ao_spaces(d)
            .into_iter()
            .map(|sp| {
                let a = sp.n_actions();
                let mut probs = Vec::with_capacity(sp.len() * a);
                for _ in 0..sp.len() {
                    let w: Vec<f64> = (0..a).map(|_| r.gen::<f64>() + 1e-3).collect();
                    let s: f64 = w.iter().sum();
                    probs.extend(w.into_iter().map(|x| x / s));
                }
                LocalPolicy { space: sp, probs }
            })
            .collect();
        TabularPolicy { locals }
    }
}

pub fn ao_spaces<S>(d: &DecPomdp<S>) -> Vec<AoSpace>
where
    S: Scalar,
{
    (0..d.n_agents()).map(|i| AoSpace::new(d.n_actions()[i], d.n_observations()[i], d.horizon())).collect()
}

/// On-disk policy format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyFile {
    pub env_fingerprint: String,
    pub agents: Vec<AgentTable>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentTable {
    pub entries: Vec<PolicyEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyEntry {
    /// Alternating `[a_0, o_1, a_1, o_2, ...]`.
    pub history: Vec<usize>,
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
}

impl PolicyFile {
    pub fn from_policy<S: Scalar>(d: &DecPomdp<S>, pi: &TabularPolicy<S>, logits: Option<&[Vec<f64>]>) -> Self {
        let agents = pi
            .locals()
            .iter()
            .enumerate()
            .map(|(i, l)| AgentTable {
                entries: (0..l.space().len())
                    .map(|h| {
                        let a = l.n_actions();
                        PolicyEntry {
                            history: AoHistory { agent: i, pairs: l.space().pairs_of(h) }.to_flat(),
                            probs: l.row(h).iter().map(|p| p.as_f64()).collect(),
                            logits: logits.map(|lg| lg[i][h * a..(h + 1) * a].to_vec()),
                        }
                    })
                    .collect(),
            })
            .collect();
        PolicyFile { env_fingerprint: d.fingerprint().to_string(), agents }
    }

    /// Rebuilds the policy, requiring the fingerprint to match `d` and every
    /// AO history to be present exactly once.
    pub fn to_policy<S: Scalar>(&self, d: &DecPomdp<S>) -> Result<TabularPolicy<S>> {
        if self.env_fingerprint != d.fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: d.fingerprint().to_string(),
                found: self.env_fingerprint.clone(),
            });
        }
        let spaces = ao_spaces(d);
        if spaces.len() != self.agents.len() {
            return Err(Error::ShapeMismatch(format!("{} agent tables for {} agents", self.agents.len(), spaces.len())));
        }
        let mut locals = Vec::new();
        for (i, (space, table)) in spaces.into_iter().zip(&self.agents).enumerate() {
            let a = space.n_actions();
            let mut probs: Vec<Option<S>> = vec![None; space.len() * a];
            for e in &table.entries {
                let h = AoHistory::from_flat(i, &e.history)?;
                let idx = space.index_of(&h.pairs)?;
                if e.probs.len() != a {
                    return Err(Error::ShapeMismatch(format!("agent {i}: history {:?} has {} probs", e.history, e.probs.len())));
                }
                for (k, &p) in e.probs.iter().enumerate() {
                    probs[idx * a + k] = Some(S::from_f64_lossy(p));
                }
            }
            let probs = probs
                .into_iter()
                .collect::<Option<Vec<S>>>()
                .ok_or_else(|| Error::ShapeMismatch(format!("agent {i}: policy table does not cover every AO history")))?;
            locals.push(LocalPolicy::from_table(space, probs)?);
        }
        Ok(TabularPolicy::from_locals(locals))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, reference_policy, EnvName, RefPolicy};

    #[test]
    fn uniform_policy_is_normalized() {
        let d = build_env::<f64>(EnvName::Asymmetric);
        let pi = TabularPolicy::uniform(&d);
        assert!(pi.violations(1e-12).is_empty());
        assert_eq!(pi.local(0).space().len(), 91);
    }

    #[test]
    fn policy_file_round_trip() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let pi = reference_policy::<f64>(EnvName::TwoStage, RefPolicy::Repeat).unwrap();
        let file = PolicyFile::from_policy(&d, &pi, None);
        let json = serde_json::to_string(&file).unwrap();
        let back: PolicyFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_policy(&d).unwrap(), pi);
    }

    #[test]
    fn policy_file_rejects_foreign_env() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let e = build_env::<f64>(EnvName::MatchingPennies);
        let file = PolicyFile::from_policy(&e, &TabularPolicy::uniform(&e), None);
        assert!(matches!(file.to_policy(&d), Err(Error::FingerprintMismatch { .. })));
    }
}
