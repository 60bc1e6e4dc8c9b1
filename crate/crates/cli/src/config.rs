//! Experiment configuration files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use steel_core::sim::{BanditEnvSpec, LoanDemandSpec, MdpEnvSpec, ReferenceConfig};

/// Where the batch data of a cell comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    Bandit(BanditEnvSpec),
    Mdp(MdpEnvSpec),
    Pricing(PricingSource),
}

/// Loan pricing data. Without `csv` the records are synthetic, drawn from
/// `demand` with the cell seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricingSource {
    pub csv: Option<PathBuf>,
    pub demand: LoanDemandSpec,
    /// Prices and rewards are divided by this before learning.
    pub price_scale: f64,
}

impl Default for PricingSource {
    fn default() -> Self {
        Self { csv: None, demand: LoanDemandSpec::default(), price_scale: 1000.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodId {
    Steel,
    Adaptive,
    BanditSteel,
    Regression,
    KernelSmoothing,
    KernelSmoothingEstimated,
}

impl MethodId {
    pub fn name(self) -> &'static str {
        match self {
            MethodId::Steel => "steel",
            MethodId::Adaptive => "adaptive",
            MethodId::BanditSteel => "bandit_steel",
            MethodId::Regression => "regression",
            MethodId::KernelSmoothing => "kernel_smoothing",
            MethodId::KernelSmoothingEstimated => "kernel_smoothing_estimated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub id: MethodId,
    /// Name used in records; defaults to the method id.
    #[serde(default)]
    pub label: Option<String>,
    /// Method configuration, merged over the source-specific defaults.
    #[serde(default)]
    pub config: toml::Table,
}

impl MethodSpec {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.id.name().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Relative paths are resolved against the config file's directory.
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Sample sizes: rows (bandit, pricing) or trajectories (MDP).
    pub sample_sizes: Vec<usize>,
    /// Trajectory lengths; MDP only.
    #[serde(default)]
    pub horizons: Vec<usize>,
    pub source: Source,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub reference: ReferenceConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Source::Pricing(PricingSource { csv: Some(csv), .. }) = &mut cfg.source {
            if csv.is_relative() {
                *csv = base.join(&*csv);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            bail!("sample_sizes must be nonempty and positive");
        }
        if self.methods.is_empty() {
            bail!("no methods configured");
        }
        match &self.source {
            Source::Mdp(_) => {
                if self.horizons.is_empty() || self.horizons.contains(&0) {
                    bail!("an mdp source needs positive horizons");
                }
            }
            _ => {
                if !self.horizons.is_empty() {
                    bail!("horizons only apply to mdp sources");
                }
            }
        }
        if let Source::Pricing(p) = &self.source {
            if !(p.price_scale > 0.0 && p.price_scale.is_finite()) {
                bail!("price_scale must be positive");
            }
        }
        let mut labels: Vec<String> = self.methods.iter().map(MethodSpec::label).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.methods.len() {
            bail!("method labels must be unique");
        }
        for m in &self.methods {
            let ok = match (&self.source, m.id) {
                (Source::Mdp(_), MethodId::Steel | MethodId::Adaptive) => true,
                (Source::Mdp(_), _) => false,
                (Source::Pricing(_), MethodId::KernelSmoothing) => false,
                _ => true,
            };
            if !ok {
                bail!("method {} is not available for this source", m.id.name());
            }
        }
        Ok(())
    }

    /// Every `(method, N, T, seed)` cell in sweep order.
    pub fn cells(&self) -> Vec<Cell> {
        let horizons: Vec<Option<usize>> =
            if self.horizons.is_empty() { vec![None] } else { self.horizons.iter().map(|t| Some(*t)).collect() };
        let mut out = Vec::new();
        for (m, _) in self.methods.iter().enumerate() {
            for &n in &self.sample_sizes {
                for &t in &horizons {
                    for &seed in &self.seeds {
                        out.push(Cell { method: m, n, t, seed });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    /// Index into `ExperimentConfig::methods`.
    pub method: usize,
    pub n: usize,
    pub t: Option<usize>,
    pub seed: u64,
}

/// Hash binding a record to everything that determines its result.
pub fn cell_hash(cfg: &ExperimentConfig, cell: &Cell) -> Result<String> {
    let method = &cfg.methods[cell.method];
    let csv_digest = match &cfg.source {
        Source::Pricing(PricingSource { csv: Some(path), .. }) => {
            let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            Some(hex::encode(Sha256::digest(&bytes)))
        }
        _ => None,
    };
    let doc = serde_json::json!({
        "source": cfg.source,
        "csv_digest": csv_digest,
        "method": method,
        "reference": cfg.reference,
        "n": cell.n,
        "t": cell.t,
        "seed": cell.seed,
    });
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(&doc)?)))
}
