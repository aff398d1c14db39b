//! Desk-scale experiment: train runs × seeds OP policies, apply tie-breaking
//! for several K, and evaluate cross-play between runs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lfc::{cluster_matrix, xp_matrix, PolicyClass, XpMatrix, XpMode, CLUSTER_THRESHOLD};
use crate::model::DecPomdp;
use crate::otherplay::op_value;
use crate::policy::TabularPolicy;
use crate::rng;
use crate::symmetry::AutGroup;
use crate::tiebreak::{chi_from_distribution, op_history_distribution, tie_break_value, TieBreakConfig};
use crate::training::{train_op, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub runs: usize,
    pub seeds_per_run: usize,
    pub k_list: Vec<usize>,
    pub train: TrainConfig,
    /// `hash_seed` is replaced by each entry of `hash_seeds`.
    pub tiebreak: TieBreakConfig,
    pub hash_seeds: Vec<u64>,
    pub xp_mode: XpMode,
    pub cluster_threshold: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    /// 10 runs × 8 seeds, K ∈ {1, 2, 4, 8}, 20 hash seeds, exact evaluation.
    pub fn desk_scale<S: crate::Scalar>(d: &DecPomdp<S>) -> Self {
        ExperimentConfig {
            runs: 10,
            seeds_per_run: 8,
            k_list: vec![1, 2, 4, 8],
            train: TrainConfig::for_env(d),
            tiebreak: TieBreakConfig { exact: true, ..TieBreakConfig::default() },
            hash_seeds: (0..20).collect(),
            xp_mode: XpMode::Exact,
            cluster_threshold: CLUSTER_THRESHOLD,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs < 2 || self.seeds_per_run == 0 || self.hash_seeds.is_empty() {
            return Err(Error::Config("need at least two runs, one seed per run and one hash seed".into()));
        }
        if self.k_list.iter().any(|&k| k == 0 || k > self.seeds_per_run) {
            return Err(Error::Config(format!("every K must lie in 1..={}", self.seeds_per_run)));
        }
        self.train.validate()?;
        self.tiebreak.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KResult {
    pub k: usize,
    /// Average off-diagonal XP per hash seed.
    pub avg_offdiag: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Selected policy index per hash seed and run.
    pub selected: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub fingerprint: String,
    pub policies: Vec<TabularPolicy<f64>>,
    pub final_op_values: Vec<f64>,
    /// Per policy: `(update, exact OP value)` points of its training curve.
    pub curves: Vec<Vec<(usize, f64)>>,
    /// `chi[h][p]`: tie-breaking value of policy `p` under hash seed `h`.
    pub chi: Vec<Vec<f64>>,
    pub per_k: Vec<KResult>,
    /// XP matrix over all policies, used for clustering.
    pub full_xp: XpMatrix,
    pub classes: Vec<PolicyClass>,
    /// Between-run XP matrices for the first hash seed, one per K.
    pub run_matrices: Vec<XpMatrix>,
}

impl ExperimentResult {
    pub fn k_result(&self, k: usize) -> Option<&KResult> {
        self.per_k.iter().find(|r| r.k == k)
    }

    /// Fraction of policies in each class, largest first.
    pub fn class_shares(&self) -> Vec<f64> {
        let n = self.policies.len() as f64;
        let mut v: Vec<f64> = self.classes.iter().map(|c| c.members.len() as f64 / n).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

pub fn run_experiment(d: &DecPomdp<f64>, group: &AutGroup, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let total = cfg.runs * cfg.seeds_per_run;
    let trained: Vec<_> = (0..total)
        .into_par_iter()
        .map(|p| train_op(d, group, &TrainConfig { seed: rng::derive_seed(cfg.seed, &[0, p as u64]), ..cfg.train.clone() }))
        .collect::<Result<_>>()?;
    let curves: Vec<Vec<(usize, f64)>> =
        trained.iter().map(|t| t.curve.iter().filter_map(|c| c.exact_op_value.map(|v| (c.update, v))).collect()).collect();
    let policies: Vec<TabularPolicy<f64>> = trained.into_iter().map(|t| t.policy).collect();
    let final_op_values: Vec<f64> = match group.elements() {
        Ok(auts) => policies.par_iter().map(|pi| op_value(d, pi, auts)).collect::<Result<_>>()?,
        Err(_) => vec![f64::NAN; total],
    };

    let chi: Vec<Vec<f64>> = if cfg.tiebreak.exact {
        let auts = group.elements()?;
        let dists: Vec<_> = policies.par_iter().map(|pi| op_history_distribution(d, pi, auts)).collect::<Result<_>>()?;
        cfg.hash_seeds
            .iter()
            .map(|&h| {
                let tb = TieBreakConfig { hash_seed: h, ..cfg.tiebreak.clone() };
                let net = tb.network(d)?;
                dists.iter().map(|dist| chi_from_distribution(d, dist, &net, &tb)).collect()
            })
            .collect::<Result<_>>()?
    } else {
        cfg.hash_seeds
            .iter()
            .enumerate()
            .map(|(hi, &h)| {
                let tb = TieBreakConfig { hash_seed: h, ..cfg.tiebreak.clone() };
                let net = tb.network(d)?;
                policies
                    .par_iter()
                    .enumerate()
                    .map(|(p, pi)| {
                        let s = rng::derive_seed(cfg.seed, &[1, hi as u64, p as u64]);
                        Ok(tie_break_value(d, pi, group, &net, &tb, s)?.value)
                    })
                    .collect()
            })
            .collect::<Result<_>>()?
    };

    let full_xp = xp_matrix(d, &policies, group, cfg.xp_mode)?;
    let classes = cluster_matrix(&full_xp, cfg.cluster_threshold)?;

    let mut per_k = Vec::new();
    let mut run_matrices = Vec::new();
    for &k in &cfg.k_list {
        let mut selected = Vec::new();
        let mut avgs = Vec::new();
        for (hi, scores) in chi.iter().enumerate() {
            let picks: Vec<usize> = (0..cfg.runs)
                .map(|r| {
                    let base = r * cfg.seeds_per_run;
                    let mut best = base;
                    for p in base..base + k {
                        if scores[p] > scores[best] {
                            best = p;
                        }
                    }
                    best
                })
                .collect();
            // cells come from the full matrix when evaluation is exact
            let m = match cfg.xp_mode {
                XpMode::Exact => XpMatrix {
                    values: picks.iter().map(|&a| picks.iter().map(|&b| full_xp.values[a][b]).collect()).collect(),
                    episodes: None,
                    fingerprint: d.fingerprint().to_string(),
                },
                XpMode::MonteCarlo { episodes, seed } => {
                    let chosen: Vec<TabularPolicy<f64>> = picks.iter().map(|&p| policies[p].clone()).collect();
                    xp_matrix(d, &chosen, group, XpMode::MonteCarlo { episodes, seed: rng::derive_seed(seed, &[k as u64, hi as u64]) })?
                }
            };
            avgs.push(m.avg_offdiag());
            if hi == 0 {
                run_matrices.push(m);
            }
            selected.push(picks);
        }
        let (mean, std) = mean_std(&avgs);
        per_k.push(KResult { k, avg_offdiag: avgs, mean, std, selected });
    }

    Ok(ExperimentResult {
        config: cfg.clone(),
        fingerprint: d.fingerprint().to_string(),
        policies,
        final_op_values,
        curves,
        chi,
        per_k,
        full_xp,
        classes,
        run_matrices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, EnvName};

    #[test]
    fn small_experiment_is_deterministic_and_k1_uses_first_seed() {
        let d = build_env::<f64>(EnvName::TwoStage);
        let g = AutGroup::new(&d).unwrap();
        let cfg = ExperimentConfig {
            runs: 3,
            seeds_per_run: 2,
            k_list: vec![1, 2],
            train: TrainConfig { n_steps: 200, ..TrainConfig::default() },
            hash_seeds: vec![0, 1],
            ..ExperimentConfig::desk_scale(&d)
        };
        let a = run_experiment(&d, &g, &cfg).unwrap();
        let b = run_experiment(&d, &g, &cfg).unwrap();
        assert_eq!(a.policies, b.policies);
        assert_eq!(a.per_k, b.per_k);
        assert_eq!(a.k_result(1).unwrap().selected[0], vec![0, 2, 4]);
        assert_eq!(a.run_matrices.len(), 2);
        let bad = ExperimentConfig { k_list: vec![3], ..cfg };
        assert!(run_experiment(&d, &g, &bad).is_err());
    }
}
