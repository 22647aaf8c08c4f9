//! Run configuration: one TOML file per experiment, plus flag overrides.
//!
//! The file is the archival artifact — everything a run needs (worlds,
//! agent and simulator settings, network shape, GAN settings) lives in it,
//! and a rerun from the same file and seed reproduces the outputs byte for
//! byte. Command-line flags override individual values; flags win. Relative
//! paths inside the file resolve against the file's own directory, so a
//! config can ship next to its worlds and checkpoints.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use aloft::agent::AgentConfig;
use aloft::env::{NoiseConfig, SimConfig, WorldMap};
use aloft::gan::GanConfig;
use aloft::net::{ConvSpec, NetConfig, Variant};
use aloft::run::CurriculumStage;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, CliError};

/// Which policy drives the drone: a learnable network variant or one of the
/// two fixed baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum PolicyKind {
    Dqn,
    Drqn,
    DrqnTa,
    Random,
    Straight,
}

impl PolicyKind {
    /// The network variant to train or load, or `None` for baselines.
    pub fn learned(self) -> Option<Variant> {
        match self {
            PolicyKind::Dqn => Some(Variant::Dqn),
            PolicyKind::Drqn => Some(Variant::Drqn),
            PolicyKind::DrqnTa => Some(Variant::DrqnTa),
            PolicyKind::Random | PolicyKind::Straight => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Dqn => "dqn",
            PolicyKind::Drqn => "drqn",
            PolicyKind::DrqnTa => "drqn_ta",
            PolicyKind::Random => "random",
            PolicyKind::Straight => "straight",
        }
    }
}

/// Everything specific to this run, as opposed to reusable component
/// settings: which worlds, which policy, how long, and where artifacts live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Training curriculum in visit order; `eval` and `gan gen-data` use the
    /// first entry.
    pub worlds: Vec<PathBuf>,
    pub variant: PolicyKind,
    /// Environment-step budget for `train`, shared equally by the worlds.
    pub total_steps: usize,
    /// Periodic snapshot interval for `train`; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Episode count for `eval`.
    pub episodes: usize,
    /// Pair count for `gan gen-data`.
    pub count: usize,
    /// Network to evaluate (`eval`) or GAN to inspect (`gan eval`).
    pub checkpoint: Option<PathBuf>,
    /// Pair dataset consumed by `gan train` and `gan eval`.
    pub pairs: Option<PathBuf>,
    /// Held-out pair dataset for `gan train`; omitted, the `pairs` file is
    /// split according to the `[gan]` section's `n_train`/`n_heldout`.
    pub heldout: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> RunSection {
        RunSection {
            worlds: Vec::new(),
            variant: PolicyKind::DrqnTa,
            total_steps: 30_000,
            checkpoint_every: 10_000,
            episodes: 200,
            count: 1_000,
            checkpoint: None,
            pairs: None,
            heldout: None,
        }
    }
}

/// Optional overrides for the network architecture. Anything left out keeps
/// the stock depth-ray shape for the configured ray count and window.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub feature_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub attention_dim: Option<usize>,
    pub head_hidden: Option<usize>,
    pub conv: Option<Vec<ConvSpec>>,
}

/// The whole config file. Every section has defaults, so the empty file —
/// and no file at all — is valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; the `--seed` flag overrides.
    pub seed: Option<u64>,
    /// Output directory; the `--out` flag overrides.
    pub out: Option<PathBuf>,
    pub run: RunSection,
    pub agent: AgentConfig,
    pub sim: SimConfig,
    pub noise: Option<NoiseConfig>,
    pub net: NetSection,
    pub gan: GanConfig,
}

impl RunConfig {
    /// Rewrites relative paths to be relative to `base` (the config file's
    /// directory). Absolute paths pass through.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        for w in &mut self.run.worlds {
            fix(w);
        }
        if let Some(p) = &mut self.out {
            fix(p);
        }
        if let Some(p) = &mut self.run.checkpoint {
            fix(p);
        }
        if let Some(p) = &mut self.run.pairs {
            fix(p);
        }
        if let Some(p) = &mut self.run.heldout {
            fix(p);
        }
    }

    /// Network architecture for `variant`: the stock depth-ray shape sized
    /// by `[sim] n_rays` and `[agent] window_len`, with `[net]` overrides
    /// applied on top.
    pub fn net_config(&self, variant: Variant) -> NetConfig {
        let mut net = NetConfig::for_depth_rays(variant, self.sim.n_rays, self.agent.window_len);
        if let Some(d) = self.net.feature_dim {
            net.feature_dim = d;
        }
        if let Some(d) = self.net.hidden_dim {
            net.hidden_dim = d;
        }
        if let Some(d) = self.net.attention_dim {
            net.attention_dim = d;
        }
        if let Some(d) = self.net.head_hidden {
            net.head_hidden = d;
        }
        if let Some(conv) = &self.net.conv {
            net.conv_layers = conv.clone();
        }
        net
    }

    /// Loads every world in `[run] worlds`, in order, as curriculum stages
    /// named by each world's declared name.
    pub fn load_stages(&self) -> Result<Vec<CurriculumStage>, CliError> {
        if self.run.worlds.is_empty() {
            return Err(config_err(
                "no worlds configured: set `worlds` under [run] or pass --world",
            ));
        }
        self.run
            .worlds
            .iter()
            .map(|path| {
                let map = WorldMap::load(path).map_err(|e| config_err(e.to_string()))?;
                Ok(CurriculumStage {
                    name: map.name.clone(),
                    map: Arc::new(map),
                })
            })
            .collect()
    }

    /// Loads the first configured world, the one `eval` and `gan gen-data`
    /// operate in.
    pub fn load_first_world(&self) -> Result<Arc<WorldMap>, CliError> {
        Ok(self.load_stages()?.remove(0).map)
    }
}

/// Reads and parses the config file, or falls back to all defaults when no
/// file was given. Parse errors carry the file path and line.
pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let mut cfg: RunConfig = toml::from_str(&text)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    if let Some(dir) = path.parent() {
        cfg.resolve_paths(dir);
    }
    Ok(cfg)
}

/// Applies the seed override and enforces that commands drawing randomness
/// got a seed from somewhere.
pub fn require_seed(flag: Option<u64>, cfg: &RunConfig) -> Result<u64, CliError> {
    flag.or(cfg.seed).ok_or_else(|| {
        config_err("a seed is required: pass --seed or set `seed` in the config")
    })
}

/// Applies the output-directory override, creates the directory, and returns
/// it.
pub fn require_out(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = flag.or_else(|| cfg.out.clone()).ok_or_else(|| {
        config_err("an output directory is required: pass --out or set `out` in the config")
    })?;
    fs::create_dir_all(&out)
        .map_err(|e| config_err(format!("cannot create {}: {e}", out.display())))?;
    Ok(out)
}
