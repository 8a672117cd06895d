//! The JSON run configuration shared by every command. Every section is
//! optional and falls back to its defaults.

use std::path::{Path, PathBuf};

use lobrm_core::experiments::ExperimentConfig;
use lobrm_core::lobster::SessionConfig;
use lobrm_core::model::{BranchConfig, EsConfig, LobrmConfig, SlfnConfig, RIDGE_LAMBDAS};
use lobrm_core::synth::MarketConfig;
use lobrm_core::trend::TrendConfig;
use lobrm_core::types::Side;
use lobrm_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lobrm,
    Slfn,
    Ridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RidgeConfig {
    pub lambdas: Vec<f64>,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self {
            lambdas: RIDGE_LAMBDAS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub permutations: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            permutations: lobrm_core::metrics::PERMUTATIONS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub batch: usize,
    pub step: f64,
    pub tolerance: f64,
    pub abs_floor: f64,
    pub kink_ratio: f64,
    pub market: MarketConfig,
    pub model: LobrmConfig,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        let check = lobrm_autodiff::GradCheckConfig::default();
        let branch = |latent| BranchConfig {
            gru_units: 3,
            decoder: vec![4],
            latent,
        };
        Self {
            instances: 3,
            batch: 3,
            // Whole-ensemble losses lose digits to cancellation at smaller steps.
            step: 1e-4,
            tolerance: check.tolerance,
            abs_floor: check.abs_floor,
            kink_ratio: check.kink_ratio,
            market: MarketConfig {
                days: 3,
                session: SessionConfig {
                    close: 34_200.0 + 40.0 * 60.0,
                    open_trim_s: 300.0,
                    close_trim_s: 300.0,
                    ..SessionConfig::default()
                },
                ..MarketConfig::default()
            },
            model: LobrmConfig {
                window: 4,
                es: EsConfig {
                    gru_units: 3,
                    decay_mlp: vec![4],
                    decoder: vec![4],
                    latent: 3,
                },
                hc: branch(3),
                ws: branch(2),
                ..LobrmConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    /// Relative paths are resolved against the config file's directory.
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Trade-time CSV streamed by `replay`.
    pub input: Option<PathBuf>,
    pub side: Option<Side>,
    pub model_kind: Option<ModelKind>,
    /// Session filter for `replay`; the manifest's session otherwise.
    pub session: Option<SessionConfig>,
    pub market: MarketConfig,
    pub experiment: ExperimentConfig,
    pub slfn: SlfnConfig,
    pub ridge: RidgeConfig,
    pub eval: EvalConfig,
    pub trend: TrendConfig,
    pub gradcheck: GradcheckConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.manifest, &mut cfg.checkpoint, &mut cfg.input].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}
