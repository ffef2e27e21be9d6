//! Run configuration: an optional TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use clap::Args;
use hypgl::solver::MinimizeOptions;
use hypgl::spectra::MAX_EIGENPAIRS;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub level: u64,
    pub degree: u64,
    pub kappa: f64,
    pub r: f64,
    pub seed: u64,
    /// Not echoed: the output location does not affect any result.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    pub mesh: MeshConfig,
    pub sweep: SweepConfig,
    pub solver: SolverConfig,
    pub spectrum: SpectrumConfig,
    pub cuspform: CuspformConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    /// Normalized truncation height.
    pub y: f64,
    pub h: f64,
}

/// `steps` equally spaced values of `r` from `r_from` to `r_to` inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub r_from: f64,
    pub r_to: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub restart: usize,
    pub penalty: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    /// Eigenpairs requested (raised to cover the ground space).
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CuspformConfig {
    pub cusp: usize,
    /// Height of the sampled horizontal line in the cusp chart.
    pub height: f64,
    pub points: usize,
    /// Truncation bound on `|cz + d|`.
    pub bound: f64,
    /// Fourier modes `−kmax..=kmax` are reported.
    pub kmax: i64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            level: 6,
            degree: 12,
            kappa: 1.0,
            r: 1.03,
            seed: 0,
            out: PathBuf::from("out"),
            mesh: MeshConfig::default(),
            sweep: SweepConfig::default(),
            solver: SolverConfig::default(),
            spectrum: SpectrumConfig::default(),
            cuspform: CuspformConfig::default(),
        }
    }
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig { y: 20.0, h: 0.1 }
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { r_from: 1.01, r_to: 1.08, steps: 8 }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = MinimizeOptions::default();
        SolverConfig { tol: o.tol, max_iter: o.max_iter, restart: o.restart, penalty: o.penalty }
    }
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig { count: 6 }
    }
}

impl Default for CuspformConfig {
    fn default() -> Self {
        CuspformConfig { cusp: 0, height: 1.0, points: 64, bound: 200.0, kmax: 4 }
    }
}

/// Flags shared by every command; each one wins over the config file.
#[derive(Clone, Debug, Default, Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub level: Option<u64>,
    #[arg(long, global = true)]
    pub degree: Option<u64>,
    #[arg(long, global = true)]
    pub kappa: Option<f64>,
    #[arg(long, global = true)]
    pub r: Option<f64>,
    /// Mesh truncation height.
    #[arg(long, global = true)]
    pub y: Option<f64>,
    /// Mesh size.
    #[arg(long, global = true)]
    pub h: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Eigenpairs requested by `spectrum`.
    #[arg(long, global = true)]
    pub count: Option<usize>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    #[arg(long, global = true)]
    pub r_from: Option<f64>,
    #[arg(long, global = true)]
    pub r_to: Option<f64>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|source| CliError::Config { path: path.display().to_string(), source })
    }

    /// File (if any) with the flags applied on top, validated.
    pub fn load(o: &Overrides) -> Result<Self> {
        let mut c = match &o.config {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = o.$flag.clone() { c.$($field).+ = v; })*
            };
        }
        set!(
            out => out, level => level, degree => degree, kappa => kappa, r => r,
            y => mesh.y, h => mesh.h, seed => seed, count => spectrum.count,
            tol => solver.tol, max_iter => solver.max_iter,
            r_from => sweep.r_from, r_to => sweep.r_to, steps => sweep.steps,
        );
        c.validate()?;
        Ok(c)
    }

    /// Preconditions of every pipeline, checked before any work.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { usage(format!("{name} = {v}: a positive finite value is required")) };
        if self.level < 2 {
            return usage(format!("level N = {}: N ≥ 2 is required", self.level));
        }
        if self.degree == 0 {
            return usage("degree must be at least 1");
        }
        positive("kappa", self.kappa)?;
        positive("r", self.r)?;
        positive("h", self.mesh.h)?;
        if self.mesh.y <= 1.0 || !self.mesh.y.is_finite() {
            return usage(format!("mesh Y = {}: Y > 1 is required", self.mesh.y));
        }
        if self.mesh.h > 1.0 {
            return usage(format!("mesh h = {}: h ≤ 1 is required", self.mesh.h));
        }
        positive("r_from", self.sweep.r_from)?;
        positive("r_to", self.sweep.r_to)?;
        if self.sweep.steps == 0 {
            return usage("sweep steps must be at least 1");
        }
        positive("tol", self.solver.tol)?;
        positive("penalty", self.solver.penalty)?;
        if self.solver.max_iter == 0 || self.solver.restart == 0 {
            return usage("solver max_iter and restart must be at least 1");
        }
        if self.spectrum.count == 0 || self.spectrum.count > MAX_EIGENPAIRS {
            return usage(format!("count = {}: 1 ≤ count ≤ {MAX_EIGENPAIRS} is required", self.spectrum.count));
        }
        positive("cuspform height", self.cuspform.height)?;
        positive("cuspform bound", self.cuspform.bound)?;
        if self.cuspform.points == 0 || self.cuspform.kmax < 1 {
            return usage("cuspform points and kmax must be at least 1");
        }
        Ok(())
    }

    pub fn sweep_values(&self) -> Vec<f64> {
        let SweepConfig { r_from, r_to, steps } = self.sweep;
        if steps == 1 {
            return vec![r_from];
        }
        (0..steps).map(|i| r_from + (r_to - r_from) * i as f64 / (steps - 1) as f64).collect()
    }

    pub fn minimize_options(&self) -> MinimizeOptions {
        let s = &self.solver;
        MinimizeOptions { tol: s.tol, max_iter: s.max_iter, restart: s.restart, penalty: s.penalty }
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Usage(msg.into()))
}
