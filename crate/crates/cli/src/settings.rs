use std::path::Path;

use roi_core::geometry::Aabb;
use roi_core::rendering::SamplerConfig;
use serde::Deserialize;

use crate::error::CliError;

/// Settings shared by every command. Read from `--settings <file>` (JSON),
/// then overridden by the matching global flags.
///
/// Keys: `seed`, `threads`, `n_coarse`, `n_fine`, `jitter`, `background`,
/// `point_budget`. Anything else is rejected.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub n_coarse: Option<usize>,
    pub n_fine: Option<usize>,
    pub jitter: Option<bool>,
    pub background: Option<[f64; 3]>,
    pub point_budget: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// `flags` wins wherever it is set.
    pub fn overlay(self, flags: RunConfig) -> RunConfig {
        RunConfig {
            seed: flags.seed.or(self.seed),
            threads: flags.threads.or(self.threads),
            n_coarse: flags.n_coarse.or(self.n_coarse),
            n_fine: flags.n_fine.or(self.n_fine),
            jitter: flags.jitter.or(self.jitter),
            background: flags.background.or(self.background),
            point_budget: flags.point_budget.or(self.point_budget),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn sampler(&self, clip: Option<Aabb>) -> Result<SamplerConfig, CliError> {
        let d = SamplerConfig::default();
        let s = SamplerConfig {
            n_coarse: self.n_coarse.unwrap_or(d.n_coarse),
            n_fine: self.n_fine.unwrap_or(d.n_fine),
            jitter: self.jitter.unwrap_or(d.jitter),
            seed: self.seed(),
            background: self.background.unwrap_or(d.background),
            clip,
            ..d
        };
        s.check()?;
        Ok(s)
    }
}
