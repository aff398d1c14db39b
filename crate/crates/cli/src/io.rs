use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use zsclab::envs::{reference_policy, EnvName, RefPolicy};
use zsclab::symmetry::{is_isomorphism, AutGroup, Perms};
use zsclab::{Env, EnvSpec, Policy, PolicyFile};

pub const CACHE_VAR: &str = "ZSCLAB_CACHE";

/// A catalog name or a path to an env JSON file.
pub fn load_env(arg: &str) -> Result<Env> {
    let path = Path::new(arg);
    if path.is_file() {
        let spec: EnvSpec = serde_json::from_str(&fs::read_to_string(path).with_context(|| format!("reading {arg}"))?)
            .with_context(|| format!("parsing env spec {arg}"))?;
        let d: Env = spec.to_model()?;
        let problems = d.validate();
        if !problems.is_empty() {
            let text: Vec<String> = problems.iter().map(|p| p.to_string()).collect();
            bail!(zsclab::Error::InvalidModel(text.join("; ")));
        }
        return Ok(d);
    }
    let name: EnvName = arg.parse()?;
    Ok(zsclab::envs::build_env(name))
}

fn catalog_name(d: &Env) -> Option<EnvName> {
    EnvName::ALL.into_iter().find(|n| zsclab::envs::build_env::<f64>(*n).fingerprint() == d.fingerprint())
}

/// A policy JSON file, or `ref:<name>` for a reference policy of a catalog env.
pub fn load_policy(d: &Env, arg: &str) -> Result<Policy> {
    if let Some(name) = arg.strip_prefix("ref:") {
        let env = catalog_name(d).context("reference policies need a catalog environment")?;
        let which: RefPolicy = name.parse()?;
        let pi: Policy = reference_policy(env, which)?;
        pi.check_domain(d)?;
        return Ok(pi);
    }
    let file: PolicyFile =
        serde_json::from_str(&fs::read_to_string(arg).with_context(|| format!("reading {arg}"))?).with_context(|| format!("parsing policy {arg}"))?;
    Ok(file.to_policy(d)?)
}

/// Policy files in `dir`, sorted by file name. Manifests are skipped.
pub fn policy_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    out.retain(|p| {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        name.ends_with(".json") && !name.ends_with(".manifest.json")
    });
    out.sort();
    if out.is_empty() {
        bail!(zsclab::Error::Config(format!("no policy files in {}", dir.display())));
    }
    Ok(out)
}

pub fn load_policy_dir(d: &Env, dir: &Path) -> Result<(Vec<String>, Vec<Policy>)> {
    let files = policy_files(dir)?;
    let ids = files.iter().map(|p| p.file_stem().unwrap_or_default().to_string_lossy().into_owned()).collect();
    let pols = files.iter().map(|p| load_policy(d, &p.to_string_lossy())).collect::<Result<_>>()?;
    Ok((ids, pols))
}

/// The automorphism group, memoized under `$ZSCLAB_CACHE/<fingerprint>.auts.json`
/// when the variable is set and the group is small enough to list.
pub fn load_group(d: &Env) -> Result<AutGroup> {
    let Some(dir) = std::env::var_os(CACHE_VAR) else {
        return Ok(AutGroup::new(d)?);
    };
    let path = PathBuf::from(dir).join(format!("{}.auts.json", d.fingerprint()));
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(elements) = serde_json::from_str::<Vec<Perms>>(&text) {
            if !elements.is_empty() && elements.iter().all(|g| is_isomorphism(d, d, g)) {
                return Ok(AutGroup::from_elements(elements));
            }
        }
    }
    let group = AutGroup::new(d)?;
    if let Ok(elements) = group.elements() {
        fs::create_dir_all(path.parent().unwrap_or(Path::new(".")))?;
        fs::write(&path, serde_json::to_vec(elements)?)?;
    }
    Ok(group)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Prints `json` or `rows` depending on the format.
pub fn emit<T: Serialize>(format: Format, json: &T, rows: &[Vec<String>]) -> Result<()> {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(json)?),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            for r in rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// Full argument vector; re-running it reproduces the artifacts.
    pub command: Vec<String>,
    pub config: Value,
    pub seed: u64,
    pub env_fingerprint: Option<String>,
    pub tool_version: String,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub artifacts: Vec<String>,
}

pub struct Run {
    pub command: Vec<String>,
    pub seed: u64,
    started: Instant,
    started_unix: u64,
}

impl Run {
    pub fn start(seed: u64) -> Self {
        Run {
            command: std::env::args().collect(),
            seed,
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    /// Writes `<path>.manifest.json`, or `<dir>/manifest.json` for a directory.
    pub fn write_manifest(&self, path: &Path, config: Value, env: Option<&Env>, artifacts: &[PathBuf]) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command.clone(),
            config,
            seed: self.seed,
            env_fingerprint: env.map(|d| d.fingerprint().to_string()),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: self.started_unix,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            artifacts: artifacts.iter().map(|p| p.display().to_string()).collect(),
        };
        let target = if path.is_dir() {
            path.join("manifest.json")
        } else {
            let mut name = path.as_os_str().to_owned();
            name.push(".manifest.json");
            PathBuf::from(name)
        };
        fs::write(&target, serde_json::to_vec_pretty(&manifest)?)?;
        Ok(target)
    }
}

/// `path` if absolute, else joined onto `out_dir`.
pub fn resolve(out_dir: &Path, path: &Path) -> Result<PathBuf> {
    let p = if path.is_absolute() { path.to_path_buf() } else { out_dir.join(path) };
    if let Some(parent) = p.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(p)
}
