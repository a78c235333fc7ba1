//! Run settings that can come from a TOML file or the command line.
//!
//! Every field is optional. [`RunSettings::overlay`] merges two layers, and
//! [`RunSettings::solver_config`] fills whatever is still unset from
//! [`SolverConfig::default`]. The CLI stacks flags over the file over the
//! defaults.
//!
//! ```toml
//! solvers = ["bsgd", "ista"]
//! blocks = "4x4"
//! mu = 6e-4
//! lambda = 0.1
//! epochs = 200
//!
//! [prox]
//! max_inner_iters = 100
//! tol = 1e-5
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::solvers::{SolverConfig, SolverKind};
use crate::tv::{LayoutKind, ProxSettings};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxOverrides {
    pub max_inner_iters: Option<usize>,
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub solvers: Option<Vec<SolverKind>>,
    /// `"MxN"`.
    pub blocks: Option<String>,
    pub mu: Option<f64>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub enforce_decrease: Option<bool>,
    pub warm_start_prox: Option<bool>,
    pub rho: Option<f64>,
    pub cg_iters: Option<usize>,
    pub workers: Option<usize>,
    pub sample_every: Option<usize>,
    pub layout: Option<LayoutKind>,
    #[serde(default)]
    pub prox: ProxOverrides,
}

macro_rules! overlay_fields {
    ($top:expr, $low:expr; $($f:ident),*) => {
        RunSettings {
            $($f: $top.$f.or($low.$f),)*
            prox: ProxOverrides {
                max_inner_iters: $top.prox.max_inner_iters.or($low.prox.max_inner_iters),
                tol: $top.prox.tol.or($low.prox.tol),
            },
        }
    };
}

impl RunSettings {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Fields set in `self` win; unset ones fall back to `lower`.
    pub fn overlay(self, lower: RunSettings) -> RunSettings {
        overlay_fields!(self, lower; solvers, blocks, mu, lambda, alpha, gamma, epochs, seed,
            enforce_decrease, warm_start_prox, rho, cg_iters, workers, sample_every, layout)
    }

    pub fn solver_config(&self) -> SolverConfig {
        let d = SolverConfig::default();
        let dp = ProxSettings::default();
        SolverConfig {
            mu: self.mu.unwrap_or(d.mu),
            lambda: self.lambda.unwrap_or(d.lambda),
            alpha: self.alpha.unwrap_or(d.alpha),
            gamma: self.gamma.unwrap_or(d.gamma),
            epochs: self.epochs.unwrap_or(d.epochs),
            seed: self.seed.unwrap_or(d.seed),
            prox: ProxSettings {
                max_inner_iters: self.prox.max_inner_iters.unwrap_or(dp.max_inner_iters),
                tol: self.prox.tol.unwrap_or(dp.tol),
            },
            warm_start_prox: self.warm_start_prox.unwrap_or(d.warm_start_prox),
            enforce_decrease: self.enforce_decrease.unwrap_or(d.enforce_decrease),
            rho: self.rho.unwrap_or(d.rho),
            cg_iters: self.cg_iters.unwrap_or(d.cg_iters),
            workers: self.workers.or(d.workers),
            ..d
        }
    }

    /// Row and column block counts, 4x4 when unset.
    pub fn block_counts(&self) -> Result<(usize, usize)> {
        self.blocks.as_deref().map_or(Ok((4, 4)), parse_blocks)
    }
}

/// Parses `"MxN"` (also accepts `X` and `*`).
pub fn parse_blocks(text: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidInput(format!("block layout `{text}` is not of the form MxN"));
    let (m, n) = text
        .trim()
        .split_once(['x', 'X', '*'])
        .ok_or_else(bad)?;
    let m: usize = m.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    if m == 0 || n == 0 {
        return Err(bad());
    }
    Ok((m, n))
}
