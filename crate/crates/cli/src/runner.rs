//! Sweep execution and result persistence.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use steel_core::adaptive::{adaptive_steel, AdaptiveConfig};
use steel_core::bandit::{
    bandit_steel, kernel_smoothing_baseline, regression_baseline, BanditSteelConfig, EstimatedPropensity,
    KernelSmoothingConfig, RegressionConfig,
};
use steel_core::data::{build_pricing_dataset, load_loan_records, BanditDataset, TransitionDataset, LOAN_FEATURES};
use steel_core::funcapprox::{ActionBox, FeatureKind, ParamPolicy};
use steel_core::sim::{generate_loan_records, reference_value, regret, true_value, EnvSpec};
use steel_core::steel::{steel_optimize, SteelConfig};

use crate::config::{cell_hash, Cell, ExperimentConfig, MethodId, PricingSource, Source};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const CELLS_DIR: &str = "cells";

/// One line of `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub method: String,
    pub n: usize,
    pub t: Option<usize>,
    pub seed: u64,
    /// `None` when the data source has no ground truth.
    pub regret: Option<f64>,
    pub value: Option<f64>,
    /// Monte Carlo standard error of `value`.
    pub stderr: Option<f64>,
    pub pessimistic_value: Option<f64>,
    pub wall_clock_ms: u64,
    pub config_hash: String,
    /// Linear policy coefficients by state feature, for single-action
    /// degree-1 policies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<BTreeMap<String, f64>>,
}

/// Full output of one cell, written to `cells/<hash>.json`. Unlike the
/// record it carries no timing, so reruns reproduce it byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellArtifact {
    pub method: String,
    pub n: usize,
    pub t: Option<usize>,
    pub seed: u64,
    pub config_hash: String,
    pub regret: Option<f64>,
    pub value: Option<f64>,
    pub stderr: Option<f64>,
    pub pessimistic_value: Option<f64>,
    pub policy: ParamPolicy,
    pub result: serde_json::Value,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Concurrent cells; `None` uses every core.
    pub workers: Option<usize>,
    /// Discard earlier results instead of skipping completed cells.
    pub overwrite: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunReport {
    pub completed: usize,
    pub skipped: usize,
    pub failed: usize,
}

pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

struct Appender {
    file: Mutex<File>,
}

impl Appender {
    fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file: Mutex::new(file) })
    }

    fn push(&self, record: &ResultRecord) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let mut f = self.file.lock().map_err(|_| anyhow!("record writer poisoned"))?;
        f.write_all(line.as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    let out = &cfg.output_dir;
    let results = out.join(RESULTS_FILE);
    let cells_dir = out.join(CELLS_DIR);
    if opts.overwrite {
        if results.exists() {
            fs::remove_file(&results)?;
        }
        if cells_dir.exists() {
            fs::remove_dir_all(&cells_dir)?;
        }
    }
    fs::create_dir_all(&cells_dir).with_context(|| format!("creating {}", cells_dir.display()))?;

    let done: HashSet<String> = if results.exists() {
        read_records(&results)?.into_iter().map(|r| r.config_hash).collect()
    } else {
        HashSet::new()
    };
    let mut pending = Vec::new();
    let mut skipped = 0;
    for cell in cfg.cells() {
        let hash = cell_hash(cfg, &cell)?;
        if done.contains(&hash) {
            skipped += 1;
        } else {
            pending.push((cell, hash));
        }
    }
    log::info!("{} cells to run, {skipped} already recorded", pending.len());

    let appender = Appender::open(&results)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = opts.workers {
        if w == 0 {
            bail!("--workers must be positive");
        }
        builder = builder.num_threads(w);
    }
    let pool = builder.build()?;
    let outcomes: Vec<bool> = pool.install(|| {
        pending
            .par_iter()
            .map(|(cell, hash)| {
                let label = cfg.methods[cell.method].label();
                match run_cell(cfg, cell, hash, &cells_dir).and_then(|r| appender.push(&r)) {
                    Ok(()) => true,
                    Err(e) => {
                        log::error!("{label} n={} t={:?} seed={} failed: {e:#}", cell.n, cell.t, cell.seed);
                        false
                    }
                }
            })
            .collect()
    });
    let completed = outcomes.iter().filter(|ok| **ok).count();
    Ok(RunReport { completed, skipped, failed: outcomes.len() - completed })
}

struct Trained {
    policy: ParamPolicy,
    pessimistic_value: Option<f64>,
    result: serde_json::Value,
}

enum Data {
    Bandit(BanditDataset),
    Mdp(TransitionDataset),
}

fn run_cell(cfg: &ExperimentConfig, cell: &Cell, hash: &str, cells_dir: &Path) -> Result<ResultRecord> {
    let method = &cfg.methods[cell.method];
    let start = Instant::now();
    let (data, env, state_names) = load_data(cfg, cell)?;
    let defaults = method_defaults(&cfg.source, method.id, &data, env.as_ref())?;
    let table = merge(merge(defaults, &method.config), &method_overrides(method.id, env.as_ref(), cell.seed));
    let trained = train(method.id, table, &data, env.as_ref())?;
    let (value, stderr, regret_v) = match &env {
        Some(env) => {
            let template = ParamPolicy::new(
                trained.policy.feature_map().kind().clone(),
                env.state_dim(),
                trained.policy.action_box().clone(),
            )?;
            let reference = reference_value(env, &template, &cfg.reference)?;
            let v = true_value(env, &trained.policy, &cfg.reference)?;
            let r = regret(env, &trained.policy, reference.value, &cfg.reference)?;
            (Some(v.value), Some(v.stderr), Some(r))
        }
        None => (None, None, None),
    };
    let label = method.label();
    let artifact = CellArtifact {
        method: label.clone(),
        n: cell.n,
        t: cell.t,
        seed: cell.seed,
        config_hash: hash.to_string(),
        regret: regret_v,
        value,
        stderr,
        pessimistic_value: trained.pessimistic_value,
        policy: trained.policy.clone(),
        result: trained.result,
    };
    let path: PathBuf = cells_dir.join(format!("{hash}.json"));
    fs::write(&path, serde_json::to_string_pretty(&artifact)?)?;
    Ok(ResultRecord {
        method: label,
        n: cell.n,
        t: cell.t,
        seed: cell.seed,
        regret: regret_v,
        value,
        stderr,
        pessimistic_value: trained.pessimistic_value,
        wall_clock_ms: start.elapsed().as_millis() as u64,
        config_hash: hash.to_string(),
        coefficients: coefficients(&trained.policy, &state_names),
    })
}

fn load_data(cfg: &ExperimentConfig, cell: &Cell) -> Result<(Data, Option<EnvSpec>, Vec<String>)> {
    match &cfg.source {
        Source::Bandit(spec) => {
            let names = (1..=spec.state_dim).map(|i| format!("s{i}")).collect();
            Ok((Data::Bandit(spec.generate(cell.n, cell.seed)?), Some(EnvSpec::Bandit(spec.clone())), names))
        }
        Source::Mdp(spec) => {
            let t = cell.t.ok_or_else(|| anyhow!("mdp cell without horizon"))?;
            let names = (1..=spec.state_dim).map(|i| format!("s{i}")).collect();
            Ok((Data::Mdp(spec.generate(cell.n, t, cell.seed)?), Some(EnvSpec::Mdp(spec.clone())), names))
        }
        Source::Pricing(p) => {
            let names = LOAN_FEATURES.iter().map(|s| s.to_string()).chain(["intercept".to_string()]).collect();
            Ok((Data::Bandit(pricing_dataset(p, cell.n, cell.seed)?), None, names))
        }
    }
}

/// Pricing bandit data with prices and rewards in units of `price_scale`.
pub fn pricing_dataset(p: &PricingSource, n: usize, seed: u64) -> Result<BanditDataset> {
    let built = match &p.csv {
        Some(path) => {
            let records = load_loan_records(path)?;
            let all = build_pricing_dataset(&records)?.dataset;
            if all.len() < n {
                bail!("{} has {} usable records, {n} requested", path.display(), all.len());
            }
            all.sample(n, seed)?
        }
        None => build_pricing_dataset(&generate_loan_records(n, seed, &p.demand)?)?.dataset,
    };
    Ok(built.rescaled(1.0 / p.price_scale, 1.0 / p.price_scale)?)
}

fn toml_of<T: Serialize>(v: &T) -> Result<toml::Value> {
    Ok(toml::Value::try_from(v)?)
}

fn poly1() -> FeatureKind {
    FeatureKind::Polynomial { degree: 1 }
}

/// Source-dependent settings applied under the user's method table.
fn method_defaults(source: &Source, id: MethodId, data: &Data, env: Option<&EnvSpec>) -> Result<toml::Table> {
    let action_box = match (env, data) {
        (Some(env), _) => env.policy_box(),
        (None, Data::Bandit(ds)) => {
            let prices = ds.rows().iter().map(|r| r.action[0]);
            let lo = prices.clone().fold(0.0, f64::min);
            let hi = prices.fold(f64::NEG_INFINITY, f64::max);
            ActionBox::new(vec![lo], vec![hi])?
        }
        (None, Data::Mdp(_)) => bail!("mdp data needs an environment"),
    };
    let pricing = matches!(source, Source::Pricing(_));

    let mut t = toml::Table::new();
    t.insert("action_box".into(), toml_of(&action_box)?);
    match id {
        MethodId::Steel | MethodId::Adaptive | MethodId::BanditSteel => {
            if pricing {
                let (form, features) =
                    if id == MethodId::BanditSteel { ("reward_form", "reward_features") } else { ("q_form", "q_features") };
                t.insert("zeta".into(), toml::Value::Float(0.001));
                t.insert("eps1".into(), toml::Value::Float(13f64.sqrt()));
                t.insert("eps2".into(), toml::Value::Float(4.0));
                t.insert(form.into(), toml::Value::String("demand_structured".into()));
                t.insert(features.into(), toml_of(&poly1())?);
            }
            if id == MethodId::Adaptive {
                let mut outer = toml::Table::new();
                outer.insert("steel".into(), toml::Value::Table(t));
                return Ok(outer);
            }
        }
        MethodId::Regression => {
            if pricing {
                t.insert("reward_form".into(), toml::Value::String("demand_structured".into()));
                t.insert("reward_features".into(), toml_of(&poly1())?);
            }
        }
        MethodId::KernelSmoothing | MethodId::KernelSmoothingEstimated => {}
    }
    Ok(t)
}

/// Settings the cell dictates regardless of the method table.
fn method_overrides(id: MethodId, env: Option<&EnvSpec>, seed: u64) -> toml::Table {
    let mut t = toml::Table::new();
    match id {
        MethodId::Regression => return t,
        MethodId::Steel | MethodId::Adaptive => {
            t.insert("gamma".into(), toml::Value::Float(env.map_or(0.0, EnvSpec::gamma)));
        }
        _ => {}
    }
    t.insert("seed".into(), toml::Value::Integer(seed as i64));
    if id == MethodId::Adaptive {
        let mut outer = toml::Table::new();
        outer.insert("steel".into(), toml::Value::Table(t));
        return outer;
    }
    t
}

/// `user` over `base`, recursing into tables.
fn merge(mut base: toml::Table, user: &toml::Table) -> toml::Table {
    for (k, v) in user {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => {
                let merged = merge(std::mem::take(b), u);
                *b = merged;
            }
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
    base
}

fn typed<T: DeserializeOwned>(table: toml::Table) -> Result<T> {
    toml::Value::Table(table).try_into().context("invalid method config")
}

fn bandit_data(data: &Data, id: MethodId) -> Result<&BanditDataset> {
    match data {
        Data::Bandit(ds) => Ok(ds),
        Data::Mdp(_) => bail!("{} needs bandit data", id.name()),
    }
}

fn transitions(data: &Data) -> TransitionDataset {
    match data {
        Data::Bandit(ds) => ds.to_transitions(),
        Data::Mdp(ds) => ds.clone(),
    }
}

fn json<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn train(id: MethodId, table: toml::Table, data: &Data, env: Option<&EnvSpec>) -> Result<Trained> {
    match id {
        MethodId::Steel => {
            let cfg: SteelConfig = typed(table)?;
            let r = steel_optimize(&transitions(data), &cfg)?;
            Ok(Trained { policy: r.policy.clone(), pessimistic_value: Some(r.pessimistic_value), result: json(&r)? })
        }
        MethodId::Adaptive => {
            let cfg: AdaptiveConfig = typed(table)?;
            let r = adaptive_steel(&transitions(data), &cfg)?;
            Ok(Trained {
                policy: r.result.policy.clone(),
                pessimistic_value: Some(r.result.pessimistic_value),
                result: json(&r)?,
            })
        }
        MethodId::BanditSteel => {
            let cfg: BanditSteelConfig = typed(table)?;
            let r = bandit_steel(bandit_data(data, id)?, &cfg)?;
            Ok(Trained { policy: r.policy.clone(), pessimistic_value: Some(r.pessimistic_value), result: json(&r)? })
        }
        MethodId::Regression => {
            let cfg: RegressionConfig = typed(table)?;
            let (policy, reward) = regression_baseline(bandit_data(data, id)?, &cfg)?;
            Ok(Trained { policy, pessimistic_value: None, result: json(&reward)? })
        }
        MethodId::KernelSmoothing => {
            let cfg: KernelSmoothingConfig = typed(table)?;
            let ds = bandit_data(data, id)?;
            let Some(EnvSpec::Bandit(spec)) = env else { bail!("kernel_smoothing needs the true propensity of a bandit source") };
            let r = kernel_smoothing_baseline(ds, spec, &cfg)?;
            Ok(Trained { policy: r.policy.clone(), pessimistic_value: None, result: json(&r)? })
        }
        MethodId::KernelSmoothingEstimated => {
            let cfg: KernelSmoothingConfig = typed(table)?;
            let ds = bandit_data(data, id)?;
            let prop = EstimatedPropensity::fit(ds)?;
            let r = kernel_smoothing_baseline(ds, &prop, &cfg)?;
            Ok(Trained { policy: r.policy.clone(), pessimistic_value: None, result: json(&r)? })
        }
    }
}

/// Named coefficients of a single-action degree-1 policy.
fn coefficients(policy: &ParamPolicy, state_names: &[String]) -> Option<BTreeMap<String, f64>> {
    let degree_one = matches!(policy.feature_map().kind(), FeatureKind::Polynomial { degree: 1 });
    if !degree_one || policy.action_box().dim() != 1 || policy.n_params() != state_names.len() + 1 {
        return None;
    }
    let mut out = BTreeMap::new();
    out.insert("constant".to_string(), policy.coefficient(0, 0));
    for (j, name) in state_names.iter().enumerate() {
        out.insert(name.clone(), policy.coefficient(j + 1, 0));
    }
    Some(out)
}
