//! Experiment configuration: TOML file, command-line overrides and the
//! `--quick` scale-down.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bnnrisk::horseshoe::HorseshoeConfig;
use bnnrisk::mixing::{BnnArchitecture, MixingSpec};
use bnnrisk::shrinkage::{default_s_max, DEFAULT_GRID_POINTS};
use clap::Args;
use serde::{Deserialize, Serialize};

pub const OUT_ENV: &str = "BNNRISK_OUT";
pub const DEFAULT_OUT: &str = "bnnrisk-out";

pub const KNOWN_RULES: [&str; 6] = [
    "mle",
    "js",
    "bnn-fixed",
    "bnn-dropout",
    "bnn-hyper",
    "horseshoe",
];

/// Divisors applied by `--quick`.
pub const QUICK_M_V: usize = 10;
pub const QUICK_N_MC: usize = 10;
pub const QUICK_K_DIR: usize = 5;
pub const QUICK_HS_N_MC: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub p: usize,
    pub rules: Vec<String>,
    /// Hidden widths; the depth is `widths.len() + 1`.
    pub widths: Vec<usize>,
    pub scales: Vec<f64>,
    pub input_norm: f64,
    pub keep: Vec<f64>,
    pub r_min: f64,
    pub r_max: f64,
    pub r_step: f64,
    /// Sparsity levels for `horseshoe-risk`; empty means the standard grid.
    pub sparsity: Vec<usize>,
    /// Points on `[0, 2.5√p]` for the sparse and predictive runs.
    pub signal_points: usize,
    pub m_v: usize,
    pub n_mc: usize,
    pub k_dir: usize,
    pub seed: u64,
    pub table_points: usize,
    /// Table upper end; 0 means `(500 + 6√p)²`.
    pub s_max: f64,
    pub hs_iterations: usize,
    pub hs_burn_in: usize,
    pub hs_thin: usize,
    pub hs_n_mc: usize,
    pub v_x: f64,
    pub v_y: f64,
    pub n_outer: usize,
    pub n_inner: usize,
    pub output_dir: Option<PathBuf>,
    /// Set once `--quick` has been applied, so it is never applied twice.
    pub quick: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            p: 5,
            rules: ["mle", "bnn-fixed", "bnn-dropout", "bnn-hyper"]
                .map(String::from)
                .to_vec(),
            widths: vec![20, 20],
            scales: vec![1.0, 1.0, 1.0],
            input_norm: 1.0,
            keep: vec![0.8, 0.8],
            r_min: 0.0,
            r_max: 500.0,
            r_step: 1.0,
            sparsity: vec![],
            signal_points: 6,
            m_v: 200_000,
            n_mc: 50_000,
            k_dir: 10,
            seed: 1,
            table_points: DEFAULT_GRID_POINTS,
            s_max: 0.0,
            hs_iterations: 3000,
            hs_burn_in: 1000,
            hs_thin: 2,
            hs_n_mc: 500,
            v_x: 1.0,
            v_y: 1.0,
            n_outer: 400,
            n_inner: 50,
            output_dir: None,
            quick: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("invalid configuration file")?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn architecture(&self) -> BnnArchitecture {
        BnnArchitecture {
            widths: self.widths.clone(),
            scales: self.scales.clone(),
            input_norm: self.input_norm,
        }
    }

    pub fn fixed_spec(&self) -> MixingSpec {
        MixingSpec::FixedBnn(self.architecture())
    }

    pub fn dropout_spec(&self) -> MixingSpec {
        MixingSpec::DropoutBnn {
            arch: self.architecture(),
            keep: self.keep.clone(),
        }
    }

    pub fn horseshoe(&self) -> HorseshoeConfig {
        HorseshoeConfig {
            iterations: self.hs_iterations,
            burn_in: self.hs_burn_in,
            thin: self.hs_thin,
            seed: self.seed,
        }
    }

    pub fn table_s_max(&self) -> f64 {
        if self.s_max > 0.0 {
            self.s_max
        } else {
            default_s_max(self.p)
        }
    }

    pub fn r_grid(&self) -> Vec<f64> {
        let n = ((self.r_max - self.r_min) / self.r_step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| self.r_min + self.r_step * i as f64)
            .collect()
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    /// Divide the Monte Carlo sizes by the `QUICK_*` factors (never below 2,
    /// or 1 for directions).
    pub fn apply_quick(&mut self) {
        if self.quick {
            return;
        }
        self.quick = true;
        self.m_v = (self.m_v / QUICK_M_V).max(2);
        self.n_mc = (self.n_mc / QUICK_N_MC).max(2);
        self.k_dir = (self.k_dir / QUICK_K_DIR).max(1);
        self.hs_n_mc = (self.hs_n_mc / QUICK_HS_N_MC).max(2);
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            bail!("p must be positive");
        }
        if self.rules.is_empty() {
            bail!("at least one rule is required");
        }
        for r in &self.rules {
            if !KNOWN_RULES.contains(&r.as_str()) {
                bail!(
                    "unknown rule `{r}` (expected one of {})",
                    KNOWN_RULES.join(", ")
                );
            }
        }
        self.fixed_spec().validate().context("mixing parameters")?;
        self.dropout_spec()
            .validate()
            .context("dropout parameters")?;
        if !(self.r_step > 0.0) || !(self.r_min >= 0.0) || !(self.r_max >= self.r_min) {
            bail!("need 0 ≤ r_min ≤ r_max and r_step > 0");
        }
        if self.m_v == 0 || self.n_mc < 2 || self.k_dir == 0 || self.hs_n_mc < 2 {
            bail!("need m_v ≥ 1, n_mc ≥ 2, k_dir ≥ 1 and hs_n_mc ≥ 2");
        }
        if self.table_points < 2 {
            bail!("table needs at least 2 points");
        }
        if !(self.s_max >= 0.0) {
            bail!("s_max must be nonnegative");
        }
        self.horseshoe()
            .validate()
            .context("horseshoe chain parameters")?;
        if !(self.v_x > 0.0 && self.v_y > 0.0) {
            bail!("v_x and v_y must be positive");
        }
        if self.n_outer < 2 || self.n_inner < 2 {
            bail!("n_outer and n_inner must be at least 2");
        }
        if let Some(k) = self.sparsity.iter().find(|&&k| k == 0 || k > self.p) {
            bail!("sparsity level {k} outside 1..={}", self.p);
        }
        Ok(())
    }
}

/// Flags mirroring the configuration keys. Anything given here wins over the
/// file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scale Monte Carlo sizes down for a fast run
    #[arg(long)]
    pub quick: bool,
    #[arg(long)]
    pub p: Option<usize>,
    /// Comma-separated rule names
    #[arg(long, value_delimiter = ',')]
    pub rules: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    #[arg(long)]
    pub input_norm: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub keep: Option<Vec<f64>>,
    #[arg(long)]
    pub r_min: Option<f64>,
    #[arg(long)]
    pub r_max: Option<f64>,
    #[arg(long)]
    pub r_step: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub sparsity: Option<Vec<usize>>,
    #[arg(long)]
    pub signal_points: Option<usize>,
    #[arg(long)]
    pub m_v: Option<usize>,
    #[arg(long)]
    pub n_mc: Option<usize>,
    #[arg(long)]
    pub k_dir: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub table_points: Option<usize>,
    #[arg(long)]
    pub s_max: Option<f64>,
    #[arg(long)]
    pub hs_iterations: Option<usize>,
    #[arg(long)]
    pub hs_burn_in: Option<usize>,
    #[arg(long)]
    pub hs_thin: Option<usize>,
    #[arg(long)]
    pub hs_n_mc: Option<usize>,
    #[arg(long)]
    pub v_x: Option<f64>,
    #[arg(long)]
    pub v_y: Option<f64>,
    #[arg(long)]
    pub n_outer: Option<usize>,
    #[arg(long)]
    pub n_inner: Option<usize>,
    /// Output directory (default: $BNNRISK_OUT, else ./bnnrisk-out)
    #[arg(long = "out")]
    pub output_dir: Option<PathBuf>,
}

macro_rules! take {
    ($cfg:ident, $ov:ident, $($f:ident),*) => {
        $( if let Some(v) = $ov.$f.clone() { $cfg.$f = v; } )*
    };
}

impl Overrides {
    /// File (or defaults), then flags, then `--quick`, then validation.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let ov = self;
        take!(
            cfg,
            ov,
            p,
            rules,
            widths,
            scales,
            input_norm,
            keep,
            r_min,
            r_max,
            r_step,
            sparsity,
            signal_points,
            m_v,
            n_mc,
            k_dir,
            seed,
            table_points,
            s_max,
            hs_iterations,
            hs_burn_in,
            hs_thin,
            hs_n_mc,
            v_x,
            v_y,
            n_outer,
            n_inner
        );
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = Some(dir.clone());
        }
        if self.quick {
            cfg.apply_quick();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
