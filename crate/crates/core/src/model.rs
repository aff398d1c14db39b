//! Finite-horizon Dec-POMDP model and its JSON representation.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mixed-radix indexing of joint actions / joint observations.
///
/// Agent 0 is the most significant digit, so the flattened order is
/// row-major over `(x_0, x_1, ..., x_{N-1})`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointSpace {
    sizes: Vec<usize>,
    strides: Vec<usize>,
    total: usize,
}

impl JointSpace {
    pub fn new(sizes: &[usize]) -> Self {
        let mut strides = vec![1; sizes.len()];
        for i in (0..sizes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * sizes[i + 1];
        }
        let total = sizes.iter().product();
        JointSpace { sizes: sizes.to_vec(), strides, total }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn encode(&self, parts: &[usize]) -> usize {
        debug_assert_eq!(parts.len(), self.sizes.len());
        parts.iter().zip(&self.strides).map(|(x, s)| x * s).sum()
    }

    pub fn component(&self, index: usize, agent: usize) -> usize {
        (index / self.strides[agent]) % self.sizes[agent]
    }

    pub fn decode(&self, index: usize) -> Vec<usize> {
        (0..self.sizes.len()).map(|i| self.component(index, i)).collect()
    }
}

/// Tabular Dec-POMDP with dense 0-based index ranges.
///
/// Observations are emitted on arrival in a state: the joint observation at
/// step `t >= 1` is drawn from `observation(s_t, a_{t-1}, ·)`. There is no
/// observation at step 0.
#[derive(Clone, PartialEq)]
pub struct DecPomdp<S> {
    n_states: usize,
    n_actions: Vec<usize>,
    n_observations: Vec<usize>,
    horizon: usize,
    actions: JointSpace,
    observations: JointSpace,
    transition: Vec<S>,
    observation: Vec<S>,
    reward: Vec<S>,
    initial: Vec<S>,
    fingerprint: String,
}

impl<S: Scalar> fmt::Debug for DecPomdp<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DecPomdp")
            .field("n_states", &self.n_states)
            .field("n_actions", &self.n_actions)
            .field("n_observations", &self.n_observations)
            .field("horizon", &self.horizon)
            .field("fingerprint", &self.fingerprint)
            .finish()
    }
}

/// A single invariant violation reported by [`DecPomdp::validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

impl<S: Scalar> DecPomdp<S> {
    /// Builds a model from kernel functions evaluated on decoded joint indices.
    #[allow(clippy::too_many_arguments)]
    pub fn from_fn(
        n_states: usize,
        n_actions: &[usize],
        n_observations: &[usize],
        horizon: usize,
        mut transition: impl FnMut(usize, &[usize], usize) -> S,
        mut observation: impl FnMut(usize, &[usize], &[usize]) -> S,
        mut reward: impl FnMut(usize, &[usize]) -> S,
        mut initial: impl FnMut(usize) -> S,
    ) -> Result<Self> {
        if n_actions.len() != n_observations.len() || n_actions.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "{} action sets vs {} observation sets",
                n_actions.len(),
                n_observations.len()
            )));
        }
        if n_states == 0 || n_actions.contains(&0) || n_observations.contains(&0) {
            return Err(Error::ShapeMismatch("empty state/action/observation set".into()));
        }
        let actions = JointSpace::new(n_actions);
        let observations = JointSpace::new(n_observations);
        let ja_all: Vec<Vec<usize>> = (0..actions.len()).map(|a| actions.decode(a)).collect();
        let jo_all: Vec<Vec<usize>> = (0..observations.len()).map(|o| observations.decode(o)).collect();
        let mut t = Vec::with_capacity(n_states * actions.len() * n_states);
        let mut o = Vec::with_capacity(n_states * actions.len() * observations.len());
        let mut r = Vec::with_capacity(n_states * actions.len());
        for s in 0..n_states {
            for a in &ja_all {
                for s2 in 0..n_states {
                    t.push(transition(s, a, s2));
                }
            }
        }
        for s in 0..n_states {
            for a in &ja_all {
                for jo in &jo_all {
                    o.push(observation(s, a, jo));
                }
            }
        }
        for s in 0..n_states {
            for a in &ja_all {
                r.push(reward(s, a));
            }
        }
        let b0 = (0..n_states).map(&mut initial).collect();
        Ok(Self::assemble(n_states, n_actions, n_observations, horizon, t, o, r, b0))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        n_states: usize,
        n_actions: &[usize],
        n_observations: &[usize],
        horizon: usize,
        transition: Vec<S>,
        observation: Vec<S>,
        reward: Vec<S>,
        initial: Vec<S>,
    ) -> Self {
        let mut d = DecPomdp {
            n_states,
            n_actions: n_actions.to_vec(),
            n_observations: n_observations.to_vec(),
            horizon,
            actions: JointSpace::new(n_actions),
            observations: JointSpace::new(n_observations),
            transition,
            observation,
            reward,
            initial,
            fingerprint: String::new(),
        };
        d.fingerprint = d.compute_fingerprint();
        d
    }

    pub fn n_agents(&self) -> usize {
        self.n_actions.len()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> &[usize] {
        &self.n_actions
    }

    pub fn n_observations(&self) -> &[usize] {
        &self.n_observations
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn joint_actions(&self) -> &JointSpace {
        &self.actions
    }

    pub fn joint_observations(&self) -> &JointSpace {
        &self.observations
    }

    /// Content hash of the model tables; stable across runs and platforms.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn transition(&self, s: usize, joint_action: usize, next: usize) -> &S {
        &self.transition[(s * self.actions.len() + joint_action) * self.n_states + next]
    }

    pub fn observation(&self, s: usize, joint_action: usize, joint_obs: usize) -> &S {
        &self.observation[(s * self.actions.len() + joint_action) * self.observations.len() + joint_obs]
    }

    pub fn reward(&self, s: usize, joint_action: usize) -> &S {
        &self.reward[s * self.actions.len() + joint_action]
    }

    pub fn initial(&self, s: usize) -> &S {
        &self.initial[s]
    }

    /// Largest absolute reward; returns are bounded by `(T+1)` times this.
    pub fn max_abs_reward(&self) -> f64 {
        self.reward.iter().map(|r| r.as_f64().abs()).fold(0.0, f64::max)
    }

    /// Returns every invariant violation; empty iff the model is well formed.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let tol = S::default_tolerance().max(1e-12);
        let mut out = Vec::new();
        let check_row = |out: &mut Vec<Diagnostic>, location: String, row: &[S]| {
            let mut total = 0.0;
            for (k, p) in row.iter().enumerate() {
                let x = p.as_f64();
                if !x.is_finite() {
                    out.push(Diagnostic { location: format!("{location}[{k}]"), message: "non-finite entry".into() });
                } else if x < 0.0 {
                    out.push(Diagnostic { location: format!("{location}[{k}]"), message: format!("negative entry {x}") });
                }
                total += x;
            }
            // exact scalars are summed exactly; floats accumulate in f64
            let exact_sum = crate::scalar::sum(row.iter().cloned());
            if !exact_sum.approx_eq(&S::one(), tol) {
                out.push(Diagnostic { location, message: format!("row sums to {total}, expected 1") });
            }
        };
        let na = self.actions.len();
        let no = self.observations.len();
        for s in 0..self.n_states {
            for a in 0..na {
                let start = (s * na + a) * self.n_states;
                check_row(
                    &mut out,
                    format!("transition(s={s}, a={:?})", self.actions.decode(a)),
                    &self.transition[start..start + self.n_states],
                );
                let start = (s * na + a) * no;
                check_row(
                    &mut out,
                    format!("observation(s={s}, a={:?})", self.actions.decode(a)),
                    &self.observation[start..start + no],
                );
                if !self.reward(s, a).as_f64().is_finite() {
                    out.push(Diagnostic {
                        location: format!("reward(s={s}, a={:?})", self.actions.decode(a)),
                        message: "non-finite reward".into(),
                    });
                }
            }
        }
        check_row(&mut out, "initial".into(), &self.initial);
        out
    }

    /// Converts every table entry into another scalar type.
    pub fn map_scalar<T: Scalar>(&self, f: impl Fn(&S) -> T) -> DecPomdp<T> {
        DecPomdp::assemble(
            self.n_states,
            &self.n_actions,
            &self.n_observations,
            self.horizon,
            self.transition.iter().map(&f).collect(),
            self.observation.iter().map(&f).collect(),
            self.reward.iter().map(&f).collect(),
            self.initial.iter().map(&f).collect(),
        )
    }

    pub fn to_f64(&self) -> DecPomdp<f64> {
        self.map_scalar(|x| x.as_f64())
    }

    pub fn to_spec(&self) -> EnvSpec {
        let na = self.actions.len();
        let no = self.observations.len();
        let ns = self.n_states;
        EnvSpec {
            n_agents: self.n_agents(),
            n_states: ns,
            n_actions: self.n_actions.clone(),
            n_observations: self.n_observations.clone(),
            horizon: self.horizon,
            transition: (0..ns)
                .map(|s| (0..na).map(|a| (0..ns).map(|s2| self.transition(s, a, s2).as_f64()).collect()).collect())
                .collect(),
            observation: (0..ns)
                .map(|s| (0..na).map(|a| (0..no).map(|o| self.observation(s, a, o).as_f64()).collect()).collect())
                .collect(),
            reward: (0..ns).map(|s| (0..na).map(|a| self.reward(s, a).as_f64()).collect()).collect(),
            initial: self.initial.iter().map(|x| x.as_f64()).collect(),
            indexing: Some(INDEXING_NOTE.to_string()),
        }
    }

    fn compute_fingerprint(&self) -> String {
        let mut spec = self.to_spec();
        spec.indexing = None;
        let bytes = serde_json::to_vec(&spec).expect("spec serializes");
        let digest = Sha256::digest(&bytes);
        hex::encode(&digest[..16])
    }

    /// Every table entry as `f64`, in a fixed order; used as a model code.
    pub fn table_features(&self) -> Vec<f64> {
        self.transition
            .iter()
            .chain(&self.observation)
            .chain(&self.reward)
            .chain(&self.initial)
            .map(|x| x.as_f64())
            .collect()
    }
}

pub const INDEXING_NOTE: &str =
    "all indices are 0-based; joint actions/observations flatten agent-major (agent 0 most significant)";

/// JSON interchange format for environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub n_agents: usize,
    pub n_states: usize,
    pub n_actions: Vec<usize>,
    pub n_observations: Vec<usize>,
    pub horizon: usize,
    /// `[s][joint_a][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `[s][joint_a][joint_o]`, `s` being the state the observation is emitted in
    pub observation: Vec<Vec<Vec<f64>>>,
    /// `[s][joint_a]`
    pub reward: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indexing: Option<String>,
}

impl EnvSpec {
    /// Checks table shapes and builds the model. Stochasticity is not
    /// enforced here; call [`DecPomdp::validate`] for that.
    pub fn to_model<S: Scalar>(&self) -> Result<DecPomdp<S>> {
        if self.n_actions.len() != self.n_agents || self.n_observations.len() != self.n_agents {
            return Err(Error::ShapeMismatch(format!(
                "n_agents = {} but {} action sets and {} observation sets",
                self.n_agents,
                self.n_actions.len(),
                self.n_observations.len()
            )));
        }
        let na: usize = self.n_actions.iter().product();
        let no: usize = self.n_observations.iter().product();
        let ns = self.n_states;
        let bad = |what: &str| Error::ShapeMismatch(format!("{what} table has wrong shape"));
        if self.transition.len() != ns
            || self.transition.iter().any(|r| r.len() != na || r.iter().any(|x| x.len() != ns))
        {
            return Err(bad("transition"));
        }
        if self.observation.len() != ns
            || self.observation.iter().any(|r| r.len() != na || r.iter().any(|x| x.len() != no))
        {
            return Err(bad("observation"));
        }
        if self.reward.len() != ns || self.reward.iter().any(|r| r.len() != na) {
            return Err(bad("reward"));
        }
        if self.initial.len() != ns {
            return Err(bad("initial"));
        }
        let conv = |x: f64| -> Result<S> {
            S::from_f64(x).ok_or_else(|| Error::InvalidModel(format!("value {x} not representable")))
        };
        let flat3 = |t: &Vec<Vec<Vec<f64>>>| -> Result<Vec<S>> {
            t.iter().flatten().flatten().map(|&x| conv(x)).collect()
        };
        Ok(DecPomdp::assemble(
            ns,
            &self.n_actions,
            &self.n_observations,
            self.horizon,
            flat3(&self.transition)?,
            flat3(&self.observation)?,
            self.reward.iter().flatten().map(|&x| conv(x)).collect::<Result<_>>()?,
            self.initial.iter().map(|&x| conv(x)).collect::<Result<_>>()?,
        ))
    }
}
