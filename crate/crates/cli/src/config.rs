//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use dxrank::genmap::DEFAULT_MAX_TOKENS;
use dxrank::metrics::{validate_ks, MacroAveraging, DEFAULT_KS};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Table,
    Remote,
}

/// Everything a run needs. Relative paths in a config file are resolved
/// against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub provider: ProviderKind,
    /// Table backend: model spec JSON.
    pub table_model: Option<PathBuf>,
    /// Remote backend: base URL of the inference server.
    pub endpoint: Option<String>,
    /// Remote backend: model name sent with each request.
    pub remote_model: Option<String>,
    /// Remote backend: model version recorded with prior caches.
    pub remote_version: Option<String>,
    /// Remote backend: vocabulary file, one token per line.
    pub vocab: Option<PathBuf>,
    pub template: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    pub alpha: f64,
    pub ks: Vec<usize>,
    pub macro_average: MacroAveraging,
    /// Existing prior cache to reuse.
    pub cache: Option<PathBuf>,
    pub build_cache: bool,
    pub out: PathBuf,
    /// Worker threads for scoring; 0 lets the pool decide.
    pub threads: usize,
    pub max_tokens: usize,
    /// Stop tokens for greedy decoding, as vocabulary strings.
    pub stop: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Table,
            table_model: None,
            endpoint: None,
            remote_model: None,
            remote_version: None,
            vocab: None,
            template: None,
            catalog: None,
            reports: None,
            alpha: dxrank::llrank::DEFAULT_ALPHA,
            ks: DEFAULT_KS.to_vec(),
            macro_average: MacroAveraging::GoldPresent,
            cache: None,
            build_cache: true,
            out: PathBuf::from("out"),
            threads: 0,
            max_tokens: DEFAULT_MAX_TOKENS,
            stop: Vec::new(),
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn from_toml(raw: &str) -> Result<Self, CliError> {
        toml::from_str(raw).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&raw)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut config.table_model,
            &mut config.vocab,
            &mut config.template,
            &mut config.catalog,
            &mut config.reports,
            &mut config.cache,
        ] {
            rebase(base, p);
        }
        if config.out.is_relative() {
            config.out = base.join(&config.out);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        dxrank::llrank::check_alpha(self.alpha).map_err(|e| CliError::Usage(e.to_string()))?;
        validate_ks(&self.ks).map_err(|_| {
            CliError::Usage(format!(
                "--k must be non-empty, positive and strictly increasing, got {:?}",
                self.ks
            ))
        })?;
        if self.max_tokens == 0 {
            return Err(CliError::Usage("max_tokens must be at least 1".into()));
        }
        Ok(())
    }

    pub fn require<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        value.as_ref().ok_or_else(|| {
            CliError::Usage(format!(
                "missing {name} (set it in the config file or pass --{})",
                name.replace('_', "-")
            ))
        })
    }
}
