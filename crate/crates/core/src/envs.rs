//! Built-in toy environments and their analytic reference policies.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::DecPomdp;
use crate::policy::TabularPolicy;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvName {
    /// One-shot lever coordination game with ten levers, the last paying 0.9.
    Lever,
    /// Four-lever version of the same game; small enough to brute-force.
    Lever4,
    /// Two rounds, two levers, each agent observes the other's previous lever.
    TwoStage,
    /// Three rounds with an agent-specific final round.
    Asymmetric,
    /// Single-round game with no optimal deterministic OP policy.
    MatchingPennies,
}

impl EnvName {
    pub const ALL: [EnvName; 5] =
        [EnvName::Lever, EnvName::Lever4, EnvName::TwoStage, EnvName::Asymmetric, EnvName::MatchingPennies];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::Lever => "lever",
            EnvName::Lever4 => "lever4",
            EnvName::TwoStage => "two_stage",
            EnvName::Asymmetric => "asymmetric",
            EnvName::MatchingPennies => "matching_pennies",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            EnvName::Lever => "2 agents, 10 levers, one round; matching pays 1.0 (levers 0-8) or 0.9 (lever 9)",
            EnvName::Lever4 => "2 agents, 4 levers, one round; matching pays 1.0 (levers 0-2) or 0.9 (lever 3)",
            EnvName::TwoStage => "2 agents, 2 levers, two rounds; +1 on match, -1 otherwise; observe partner's last lever",
            EnvName::Asymmetric => "2 agents, 3 levers, three rounds; last round pays 1 iff agent 0 pulls lever 2",
            EnvName::MatchingPennies => "2 agents, 2 actions, one round; rewards [[-1/2, 1], [1, -1]]",
        }
    }

    /// Named reference policies available for this environment.
    pub fn reference_policies(self) -> &'static [RefPolicy] {
        match self {
            EnvName::Lever | EnvName::Lever4 => &[RefPolicy::UniqueLever],
            EnvName::TwoStage => &[RefPolicy::Repeat, RefPolicy::Switch],
            EnvName::MatchingPennies => &[RefPolicy::MixedOptimum],
            EnvName::Asymmetric => &[],
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvName::ALL.into_iter().find(|e| e.as_str() == s).ok_or_else(|| Error::UnknownEnv(s.to_string()))
    }
}

fn lever_game<S: Scalar>(n_levers: usize) -> DecPomdp<S> {
    let last = n_levers - 1;
    DecPomdp::from_fn(
        1,
        &[n_levers, n_levers],
        &[1, 1],
        0,
        |_, _, _| S::one(),
        |_, _, _| S::one(),
        |_, a| match (a[0] == a[1], a[0] == last) {
            (false, _) => S::zero(),
            (true, false) => S::one(),
            (true, true) => S::from_ratio(9, 10),
        },
        |_| S::one(),
    )
    .expect("lever game shape")
}

/// Observation kernel in which each agent sees the other's previous action.
fn observe_partner<S: Scalar>(a: &[usize], o: &[usize]) -> S {
    if o[0] == a[1] && o[1] == a[0] {
        S::one()
    } else {
        S::zero()
    }
}

/// Builds a catalog environment with exact table entries.
pub fn build_env<S: Scalar>(name: EnvName) -> DecPomdp<S> {
    match name {
        EnvName::Lever => lever_game(10),
        EnvName::Lever4 => lever_game(4),
        EnvName::TwoStage => DecPomdp::from_fn(
            1,
            &[2, 2],
            &[2, 2],
            1,
            |_, _, _| S::one(),
            |_, a, o| observe_partner(a, o),
            |_, a| if a[0] == a[1] { S::one() } else { -S::one() },
            |_| S::one(),
        )
        .expect("two-stage shape"),
        EnvName::Asymmetric => DecPomdp::from_fn(
            3,
            &[3, 3],
            &[3, 3],
            2,
            |s, _, s2| if s2 == (s + 1).min(2) { S::one() } else { S::zero() },
            |_, a, o| observe_partner(a, o),
            |s, a| {
                if s < 2 {
                    if a[0] == a[1] && a[0] < 2 {
                        S::one()
                    } else {
                        -S::one()
                    }
                } else if a[0] == 2 {
                    S::one()
                } else {
                    S::zero()
                }
            },
            |s| if s == 0 { S::one() } else { S::zero() },
        )
        .expect("asymmetric shape"),
        EnvName::MatchingPennies => DecPomdp::from_fn(
            1,
            &[2, 2],
            &[1, 1],
            0,
            |_, _, _| S::one(),
            |_, _, _| S::one(),
            |_, a| match (a[0], a[1]) {
                (0, 0) => S::from_ratio(-1, 2),
                (1, 1) => -S::one(),
                _ => S::one(),
            },
            |_| S::one(),
        )
        .expect("matching pennies shape"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RefPolicy {
    /// Uniform first round, then repeat your own lever after a match.
    Repeat,
    /// Uniform first round, then switch lever after a match.
    Switch,
    /// Both agents play `[4/7, 3/7]`.
    MixedOptimum,
    /// Both agents always pull the last (0.9) lever.
    UniqueLever,
}

impl RefPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            RefPolicy::Repeat => "repeat",
            RefPolicy::Switch => "switch",
            RefPolicy::MixedOptimum => "mixed_optimum",
            RefPolicy::UniqueLever => "unique_lever",
        }
    }
}

impl FromStr for RefPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [RefPolicy::Repeat, RefPolicy::Switch, RefPolicy::MixedOptimum, RefPolicy::UniqueLever]
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown reference policy `{s}`")))
    }
}

/// Exact reference policy `which` for catalog environment `env`.
pub fn reference_policy<S: Scalar>(env: EnvName, which: RefPolicy) -> Result<TabularPolicy<S>> {
    if !env.reference_policies().contains(&which) {
        return Err(Error::Config(format!("no reference policy `{}` for {env}", which.as_str())));
    }
    let d = build_env::<S>(env);
    let half = S::from_ratio(1, 2);
    match which {
        RefPolicy::Repeat | RefPolicy::Switch => TabularPolicy::from_fn(&d, |_, pairs| match pairs.last() {
            Some(&(a, o)) if a == o => {
                let keep = which == RefPolicy::Repeat;
                (0..2).map(|b| if (b == a) == keep { S::one() } else { S::zero() }).collect()
            }
            _ => vec![half.clone(), half.clone()],
        }),
        RefPolicy::MixedOptimum => TabularPolicy::from_fn(&d, |_, _| vec![S::from_ratio(4, 7), S::from_ratio(3, 7)]),
        RefPolicy::UniqueLever => {
            let n = d.n_actions()[0];
            TabularPolicy::from_fn(&d, |_, _| (0..n).map(|a| if a + 1 == n { S::one() } else { S::zero() }).collect())
        }
    }
}
