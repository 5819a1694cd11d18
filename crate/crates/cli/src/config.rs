//! Layered run configuration: flags over config file over built-in defaults.

use std::fs;
use std::path::Path;

use hmerw::pipeline::WeightScheme;
use hmerw::{EigenSolver, PipelineParams};
use serde::{Deserialize, Serialize};

use crate::args::{Common, PipelineArgs};
use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(alias = "R")]
    pub radius: Option<usize>,
    #[serde(alias = "K")]
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub ring_excludes_center: Option<bool>,
    pub scheme: Option<WeightScheme>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

/// Parses JSON, or TOML when the file ends in `.toml`.
pub fn parse_by_extension<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, String> {
    let toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if toml {
        toml::from_str(text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        parse_by_extension(path, &text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// Fully resolved pipeline settings, echoed into `run.json`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResolvedParams {
    #[serde(rename = "R")]
    pub radius: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub lambda: f64,
    pub ring_excludes_center: bool,
    pub scheme: WeightScheme,
}

impl ResolvedParams {
    pub fn resolve(flags: &PipelineArgs, file: &FileConfig) -> Result<Self, CliError> {
        let d = PipelineParams::default();
        let r = Self {
            radius: flags.radius.or(file.radius).unwrap_or(d.radius),
            k: flags.k.or(file.k).unwrap_or(d.k),
            lambda: flags.lambda.or(file.lambda).unwrap_or(d.lambda),
            ring_excludes_center: flags.ring_excludes_center || file.ring_excludes_center.unwrap_or(false),
            scheme: flags.scheme.map(Into::into).or(file.scheme).unwrap_or_default(),
        };
        r.check()?;
        Ok(r)
    }

    pub fn check(&self) -> Result<(), CliError> {
        self.pipeline(0).validate().map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn pipeline(&self, seed: u64) -> PipelineParams {
        PipelineParams {
            radius: self.radius,
            k: self.k,
            lambda: self.lambda,
            ring_excludes_center: self.ring_excludes_center,
            scheme: self.scheme,
            solver: EigenSolver {
                seed,
                ..EigenSolver::default()
            },
        }
    }
}

/// Seed and worker count shared by every command.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Runtime {
    pub seed: u64,
    pub jobs: Option<usize>,
}

impl Runtime {
    pub fn resolve(flags: &Common, file: &FileConfig) -> Result<Self, CliError> {
        let jobs = flags.jobs.or(file.jobs);
        if jobs == Some(0) {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        Ok(Self {
            seed: flags.seed.or(file.seed).unwrap_or(0),
            jobs,
        })
    }

    /// Sizes the global thread pool; a no-op without `--jobs`.
    pub fn install(&self) {
        if let Some(n) = self.jobs {
            // only fails if a pool already exists, which is harmless here
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}
