use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;
use serde_json::{json, Value};
use zsclab::envs::EnvName;
use zsclab::eval::expected_return;
use zsclab::lfc::{cluster_policies, lfc_payoff, xp_matrix, Procedure, XpMode};
use zsclab::otherplay::{equivalence_gap, invariance_gap, op_value, op_value_mc, symmetrize};
use zsclab::pipeline::{run_experiment, ExperimentConfig};
use zsclab::report;
use zsclab::rng;
use zsclab::symmetry::{check_isomorphism, relabel, sample_labeling, Perms};
use zsclab::tiebreak::{select_by_tiebreak, EncodeFields, TieBreakConfig};
use zsclab::training::{train_op, Optimizer, TrainConfig, WeightSharing};
use zsclab::verify::{run_verify, VerifyOptions};
use zsclab::{Env, PolicyFile};

use crate::io::{emit, load_env, load_group, load_policy, load_policy_dir, resolve, Run};
use crate::{Cli, Command, EnvCmd, OpCmd, OptimizerArg, ShareArg, SymCmd, TrainOverrides};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct CheckFailed(String);

/// 1 for failed checks and diverged training, 3 for resource caps, 2 otherwise.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.chain().any(|c| c.is::<CheckFailed>()) {
        return 1;
    }
    match e.chain().find_map(|c| c.downcast_ref::<zsclab::Error>()) {
        Some(zsclab::Error::CapExceeded { .. }) => 3,
        Some(zsclab::Error::Divergence { .. }) => 1,
        _ => 2,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let run = Run::start(cli.seed);
    match &cli.cmd {
        Command::Env { cmd } => env_cmd(cli, &run, cmd),
        Command::Sym { cmd } => sym_cmd(cli, &run, cmd),
        Command::Op { cmd } => op_cmd(cli, &run, cmd),
        Command::Train(a) => train(cli, &run, a),
        Command::Tiebreak(a) => tiebreak(cli, &run, a),
        Command::Xp(a) => xp(cli, &run, a),
        Command::Cluster(a) => cluster(cli, &run, a),
        Command::Lfc(a) => lfc(cli, a),
        Command::Verify(a) => verify(cli, &run, a),
        Command::Experiment(a) => experiment(cli, &run, a),
    }
}

fn s(x: impl ToString) -> String {
    x.to_string()
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn env_cmd(cli: &Cli, run: &Run, cmd: &EnvCmd) -> Result<()> {
    match cmd {
        EnvCmd::List => {
            let items: Vec<Value> = EnvName::ALL
                .iter()
                .map(|n| {
                    let refs: Vec<&str> = n.reference_policies().iter().map(|r| r.as_str()).collect();
                    json!({ "name": n.as_str(), "description": n.description(), "reference_policies": refs })
                })
                .collect();
            let mut rows = vec![vec![s("name"), s("description")]];
            rows.extend(EnvName::ALL.iter().map(|n| vec![s(n.as_str()), s(n.description())]));
            emit(cli.format, &items, &rows)
        }
        EnvCmd::Show { name, out } => {
            let d = load_env(name)?;
            let spec = d.to_spec();
            match out {
                Some(p) => {
                    let p = resolve(&cli.out_dir, p)?;
                    write_json(&p, &spec)?;
                    run.write_manifest(&p, json!({ "env": name }), Some(&d), std::slice::from_ref(&p))?;
                    Ok(())
                }
                None => {
                    println!("{}", serde_json::to_string_pretty(&spec)?);
                    Ok(())
                }
            }
        }
    }
}

fn perms_json(p: &Perms) -> String {
    serde_json::to_string(p).unwrap_or_default()
}

fn sym_cmd(cli: &Cli, run: &Run, cmd: &SymCmd) -> Result<()> {
    match cmd {
        SymCmd::Auts { env } => {
            let d = load_env(env)?;
            let g = load_group(&d)?;
            let elements = g.elements().ok();
            let out = json!({
                "count": g.order(),
                "listed": g.is_listed(),
                "agent_orbits": g.agent_orbits(),
                "automorphisms": elements,
            });
            let mut rows = vec![vec![s("index"), s("automorphism")]];
            for (k, p) in elements.unwrap_or(&[]).iter().enumerate() {
                rows.push(vec![s(k), perms_json(p)]);
            }
            emit(cli.format, &out, &rows)
        }
        SymCmd::Check { env, target, iso } => {
            let d = load_env(env)?;
            let e = load_env(target)?;
            let f: Perms = serde_json::from_str(&fs::read_to_string(iso).with_context(|| format!("reading {}", iso.display()))?)?;
            f.check_shape_between(&d, &e)?;
            let violation = check_isomorphism(&d, &e, &f)?;
            let out = json!({ "isomorphism": violation.is_none(), "violation": violation });
            let rows = vec![vec![s("isomorphism"), s("violation")], vec![
                s(violation.is_none()),
                violation.as_ref().map(|v| v.to_string()).unwrap_or_default(),
            ]];
            emit(cli.format, &out, &rows)?;
            match violation {
                None => Ok(()),
                Some(v) => Err(CheckFailed(v.to_string()).into()),
            }
        }
        SymCmd::Relabel { env, out } => {
            let d = load_env(env)?;
            let f = sample_labeling(&d, &mut rng::stream(cli.seed));
            let e = relabel(&d, &f)?;
            match out {
                Some(p) => {
                    let p = resolve(&cli.out_dir, p)?;
                    write_json(&p, &e.to_spec())?;
                    let mut lp = p.as_os_str().to_owned();
                    lp.push(".labeling.json");
                    let lp = PathBuf::from(lp);
                    write_json(&lp, &f)?;
                    run.write_manifest(&p, json!({ "env": env }), Some(&d), &[p.clone(), lp])?;
                    emit(cli.format, &f, &[vec![s("labeling")], vec![perms_json(&f)]])
                }
                None => {
                    println!("{}", serde_json::to_string_pretty(&json!({ "labeling": f, "env": e.to_spec() }))?);
                    Ok(())
                }
            }
        }
    }
}

fn op_cmd(cli: &Cli, run: &Run, cmd: &OpCmd) -> Result<()> {
    match cmd {
        OpCmd::Value { env, policy, episodes } => {
            let d = load_env(env)?;
            let g = load_group(&d)?;
            let pi = load_policy(&d, policy)?;
            let out = match (episodes, g.elements()) {
                (None, Ok(auts)) => {
                    let v = op_value(&d, &pi, auts)?;
                    json!({ "op_value": v, "std_err": 0.0, "exact": true, "expected_return": expected_return(&d, &pi)? })
                }
                (n, _) => {
                    let est = op_value_mc(&d, &pi, &g, n.unwrap_or(zsclab::lfc::XP_EPISODES), cli.seed);
                    json!({ "op_value": est.mean, "std_err": est.std_err, "exact": false, "episodes": est.n })
                }
            };
            let rows = vec![vec![s("op_value"), s("std_err"), s("exact")], vec![
                s(&out["op_value"]),
                s(&out["std_err"]),
                s(&out["exact"]),
            ]];
            emit(cli.format, &out, &rows)
        }
        OpCmd::Symmetrize { env, policy, out } => {
            let d = load_env(env)?;
            let g = load_group(&d)?;
            let auts = g.elements()?;
            let pi = load_policy(&d, policy)?;
            let psi = symmetrize(&d, &pi, auts)?;
            let p = resolve(&cli.out_dir, out)?;
            write_json(&p, &PolicyFile::from_policy(&d, &psi.policy, None))?;
            run.write_manifest(&p, json!({ "env": env, "policy": policy }), Some(&d), std::slice::from_ref(&p))?;
            let summary = json!({
                "op_value": op_value(&d, &pi, auts)?,
                "psi_return": expected_return(&d, &psi.policy)?,
                "psi_invariance_gap": invariance_gap(&psi.policy, auts),
                "out": p.display().to_string(),
            });
            let rows = vec![vec![s("op_value"), s("psi_return"), s("psi_invariance_gap")], vec![
                s(&summary["op_value"]),
                s(&summary["psi_return"]),
                s(&summary["psi_invariance_gap"]),
            ]];
            emit(cli.format, &summary, &rows)
        }
        OpCmd::Equiv { env, p1, p2, tol } => {
            let d = load_env(env)?;
            let g = load_group(&d)?;
            let auts = g.elements()?;
            let a = symmetrize(&d, &load_policy(&d, p1)?, auts)?;
            let b = symmetrize(&d, &load_policy(&d, p2)?, auts)?;
            let gap = equivalence_gap(&a, &b);
            let out = json!({ "gap": gap, "tol": tol, "equivalent": gap <= *tol });
            emit(cli.format, &out, &[vec![s("gap"), s("tol"), s("equivalent")], vec![s(gap), s(tol), s(gap <= *tol)]])
        }
    }
}

fn train_config(d: &Env, o: &TrainOverrides, seed: u64) -> TrainConfig {
    let base = TrainConfig::for_env(d);
    TrainConfig {
        n_steps: o.steps.unwrap_or(base.n_steps),
        batch_episodes: o.batch.unwrap_or(base.batch_episodes),
        entropy_coeff: o.alpha.unwrap_or(base.entropy_coeff),
        learning_rate: o.lr.unwrap_or(base.learning_rate),
        optimizer: match o.optimizer {
            Some(OptimizerArg::Rmsprop) => Optimizer::RmsProp,
            Some(OptimizerArg::Sgd) => Optimizer::Sgd,
            None => base.optimizer,
        },
        share_weights: match o.share {
            Some(ShareArg::Auto) => WeightSharing::Auto,
            Some(ShareArg::Shared) => WeightSharing::Shared,
            Some(ShareArg::Separate) => WeightSharing::Separate,
            None => base.share_weights,
        },
        eval_every: o.eval_every.unwrap_or(base.eval_every),
        seed,
        ..base
    }
}

fn train(cli: &Cli, run: &Run, a: &crate::TrainArgs) -> Result<()> {
    let d = load_env(&a.env)?;
    let g = load_group(&d)?;
    let cfg = train_config(&d, &a.train, cli.seed);
    let out = train_op(&d, &g, &cfg)?;
    let p = resolve(&cli.out_dir, &a.out)?;
    write_json(&p, &PolicyFile::from_policy(&d, &out.policy, Some(&out.params.agent_logits())))?;
    let mut artifacts = vec![p.clone()];
    if let Some(c) = &a.curve {
        let c = resolve(&cli.out_dir, c)?;
        report::write_curve_csv(&out.curve, fs::File::create(&c)?)?;
        run.write_manifest(&c, serde_json::to_value(&cfg)?, Some(&d), std::slice::from_ref(&c))?;
        artifacts.push(c);
    }
    run.write_manifest(&p, serde_json::to_value(&cfg)?, Some(&d), &artifacts)?;
    let last = out.curve.last();
    let summary = json!({
        "env_steps": cfg.env_steps(&d),
        "updates": cfg.n_steps,
        "final_op_value": last.and_then(|c| c.exact_op_value),
        "final_batch_return": last.map(|c| c.mc_op_estimate),
        "out": p.display().to_string(),
    });
    let rows = vec![vec![s("env_steps"), s("final_op_value")], vec![s(cfg.env_steps(&d)), s(&summary["final_op_value"])]];
    emit(cli.format, &summary, &rows)
}

fn tiebreak(cli: &Cli, run: &Run, a: &crate::TiebreakArgs) -> Result<()> {
    let d = load_env(&a.env)?;
    let g = load_group(&d)?;
    let (ids, pols) = load_policy_dir(&d, &a.policies)?;
    let cfg = TieBreakConfig {
        n_samples: a.samples,
        encode_fields: if a.all_fields { EncodeFields::ALL } else { EncodeFields::default() },
        include_env_code: a.env_code,
        hash_seed: a.hash_seed,
        exact: cli.exact,
    };
    let net = cfg.network(&d)?;
    let sel = select_by_tiebreak(&d, &g, pols, &net, &cfg, cli.seed)?;
    let mut ranked: Vec<Value> = ids
        .iter()
        .zip(&sel.values)
        .enumerate()
        .map(|(k, (id, v))| {
            json!({
                "policy": id,
                "value": v.map(|v| v.value),
                "std_err": v.map(|v| v.std_err),
                "selected": k == sel.chosen,
            })
        })
        .collect();
    ranked.sort_by(|x, y| {
        let v = |z: &Value| z["value"].as_f64().unwrap_or(f64::NEG_INFINITY);
        v(y).total_cmp(&v(x))
    });
    let p = resolve(&cli.out_dir, &a.out)?;
    write_json(&p, &ranked)?;
    run.write_manifest(&p, serde_json::to_value(&cfg)?, Some(&d), std::slice::from_ref(&p))?;
    let mut rows = vec![vec![s("policy"), s("value"), s("std_err"), s("selected")]];
    rows.extend(ranked.iter().map(|r| vec![
        r["policy"].as_str().unwrap_or("").to_string(),
        s(&r["value"]),
        s(&r["std_err"]),
        s(&r["selected"]),
    ]));
    emit(cli.format, &ranked, &rows)
}

fn xp_mode(cli: &Cli, episodes: usize) -> XpMode {
    if cli.exact {
        XpMode::Exact
    } else {
        XpMode::MonteCarlo { episodes, seed: cli.seed }
    }
}

fn xp(cli: &Cli, run: &Run, a: &crate::XpArgs) -> Result<()> {
    let d = load_env(&a.env)?;
    let g = load_group(&d)?;
    let (ids, pols) = load_policy_dir(&d, &a.policies)?;
    let mode = xp_mode(cli, a.episodes);
    let m = xp_matrix(&d, &pols, &g, mode)?;
    let p = resolve(&cli.out_dir, &a.out)?;
    m.write_csv(&ids, fs::File::create(&p)?)?;
    let mut artifacts = vec![p.clone()];
    if let Some(svg) = &a.svg {
        let svg = resolve(&cli.out_dir, svg)?;
        fs::write(&svg, report::heatmap_svg(&m.values, &ids, "Cross-play"))?;
        artifacts.push(svg);
    }
    run.write_manifest(&p, serde_json::to_value(mode)?, Some(&d), &artifacts)?;
    let out = json!({ "avg_offdiag": m.avg_offdiag(), "policies": ids, "out": p.display().to_string() });
    emit(cli.format, &out, &[vec![s("avg_offdiag")], vec![s(m.avg_offdiag())]])
}

fn cluster(cli: &Cli, run: &Run, a: &crate::ClusterArgs) -> Result<()> {
    let d = load_env(&a.env)?;
    let g = load_group(&d)?;
    let (ids, pols) = load_policy_dir(&d, &a.policies)?;
    let mode = xp_mode(cli, a.episodes);
    let classes = cluster_policies(&d, &pols, a.threshold, &g, mode)?;
    let p = resolve(&cli.out_dir, &a.out)?;
    report::write_classes_csv(&classes, pols.len(), &ids, fs::File::create(&p)?)?;
    run.write_manifest(&p, json!({ "threshold": a.threshold, "mode": mode }), Some(&d), std::slice::from_ref(&p))?;
    let out: Vec<Value> = classes
        .iter()
        .map(|c| {
            json!({
                "representative": ids[c.representative],
                "members": c.members.iter().map(|&m| ids[m].clone()).collect::<Vec<_>>(),
                "share": c.members.len() as f64 / pols.len() as f64,
            })
        })
        .collect();
    let mut rows = vec![vec![s("class"), s("size"), s("representative")]];
    rows.extend(classes.iter().enumerate().map(|(k, c)| vec![s(k), s(c.members.len()), ids[c.representative].clone()]));
    emit(cli.format, &out, &rows)
}

/// Procedure description for `lfc --procedures`. Policy references are file
/// paths relative to the description, or `ref:<name>`.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcSpec {
    Fixed(String),
    Pool(Vec<String>),
    Mix(Vec<ProcSpec>),
    /// Overrides on top of the default training config.
    Train(#[serde(default)] serde_json::Map<String, Value>),
    TieBreak {
        inner: Box<ProcSpec>,
        k: usize,
        #[serde(default)]
        exact: bool,
        #[serde(default)]
        hash_seed: u64,
        #[serde(default = "default_samples")]
        samples: usize,
    },
}

fn default_samples() -> usize {
    2048
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum LfcSpec {
    PerPrincipal { principals: Vec<ProcSpec> },
    Shared { all: ProcSpec },
}

fn build_procedure(d: &Env, base: &Path, spec: &ProcSpec) -> Result<Procedure> {
    let policy = |r: &str| {
        let path = if r.starts_with("ref:") { r.to_string() } else { base.join(r).to_string_lossy().into_owned() };
        load_policy(d, &path)
    };
    Ok(match spec {
        ProcSpec::Fixed(r) => Procedure::Fixed(policy(r)?),
        ProcSpec::Pool(rs) => Procedure::Pool(rs.iter().map(|r| policy(r)).collect::<Result<_>>()?),
        ProcSpec::Mix(ps) => Procedure::Mix(ps.iter().map(|p| build_procedure(d, base, p)).collect::<Result<_>>()?),
        ProcSpec::Train(over) => {
            let mut cfg = serde_json::to_value(TrainConfig::for_env(d))?;
            for (k, v) in over {
                cfg[k] = v.clone();
            }
            let cfg: TrainConfig = serde_json::from_value(cfg).context("training overrides")?;
            cfg.validate()?;
            Procedure::Train(cfg)
        }
        ProcSpec::TieBreak { inner, k, exact, hash_seed, samples } => Procedure::TieBreak {
            inner: Box::new(build_procedure(d, base, inner)?),
            k: *k,
            cfg: TieBreakConfig { exact: *exact, hash_seed: *hash_seed, n_samples: *samples, ..TieBreakConfig::default() },
        },
    })
}

fn lfc(cli: &Cli, a: &crate::LfcArgs) -> Result<()> {
    let d = load_env(&a.env)?;
    let g = load_group(&d)?;
    let text = fs::read_to_string(&a.procedures).with_context(|| format!("reading {}", a.procedures.display()))?;
    let spec: LfcSpec = serde_json::from_str(&text).context("parsing procedure description")?;
    let base = a.procedures.parent().unwrap_or(Path::new("."));
    let procs: Vec<Procedure> = match &spec {
        LfcSpec::PerPrincipal { principals } => principals.iter().map(|p| build_procedure(&d, base, p)).collect::<Result<_>>()?,
        LfcSpec::Shared { all } => {
            let p = build_procedure(&d, base, all)?;
            vec![p; d.n_agents()]
        }
    };
    let est = lfc_payoff(&d, &g, &procs, a.outer, cli.seed)?;
    emit(cli.format, &est, &[vec![s("mean"), s("std_err"), s("n")], vec![s(est.mean), s(est.std_err), s(est.n)]])
}

fn verify(cli: &Cli, run: &Run, a: &crate::VerifyArgs) -> Result<()> {
    let two_stage = a.two_stage.as_deref().map(load_env).transpose()?;
    let opts = VerifyOptions { two_stage, seed: cli.seed, ..VerifyOptions::default() };
    let report = run_verify(&opts);
    let p = resolve(&cli.out_dir, &a.out)?;
    write_json(&p, &report)?;
    run.write_manifest(&p, json!({ "two_stage": a.two_stage, "seed": cli.seed }), opts.two_stage.as_ref(), std::slice::from_ref(&p))?;
    let mut rows = vec![["id", "name", "status", "value", "target", "tolerance", "seconds"].map(s).to_vec()];
    rows.extend(report.checks.iter().map(|c| {
        vec![
            s(c.id),
            c.name.clone(),
            serde_json::to_value(c.status).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
            c.value.clone(),
            c.target.clone(),
            c.tolerance.map(s).unwrap_or_default(),
            format!("{:.3}", c.seconds),
        ]
    }));
    emit(cli.format, &report, &rows)?;
    let failed: Vec<String> = report.failures().map(|c| format!("{} ({})", c.id, c.name)).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CheckFailed(format!("failed checks: {}", failed.join(", "))).into())
    }
}

fn experiment(cli: &Cli, run: &Run, a: &crate::ExperimentArgs) -> Result<()> {
    let d = load_env(&a.env)?;
    let g = load_group(&d)?;
    let base = ExperimentConfig::desk_scale(&d);
    let cfg = ExperimentConfig {
        runs: a.runs,
        seeds_per_run: a.seeds_per_run,
        k_list: a.k_list.clone(),
        train: train_config(&d, &a.train, 0),
        tiebreak: TieBreakConfig { exact: cli.exact, n_samples: a.samples, ..base.tiebreak },
        hash_seeds: (0..a.hash_seeds).collect(),
        xp_mode: xp_mode(cli, a.episodes),
        cluster_threshold: a.threshold,
        seed: cli.seed,
    };
    let res = run_experiment(&d, &g, &cfg)?;
    fs::create_dir_all(&cli.out_dir)?;
    let mut artifacts = report::write_experiment(&cli.out_dir, &d, &res)?;
    let cfg_path = cli.out_dir.join("config.json");
    write_json(&cfg_path, &cfg)?;
    artifacts.push(cfg_path);
    run.write_manifest(&cli.out_dir, serde_json::to_value(&cfg)?, Some(&d), &artifacts)?;
    let summary: Vec<Value> = res.per_k.iter().map(|r| json!({ "k": r.k, "mean": r.mean, "std": r.std })).collect();
    let mut rows = vec![vec![s("k"), s("mean"), s("std")]];
    rows.extend(res.per_k.iter().map(|r| vec![s(r.k), s(r.mean), s(r.std)]));
    emit(cli.format, &json!({ "avg_offdiag": summary, "class_shares": res.class_shares() }), &rows)
}
