//! Command-line runner for label ranking, the generate-then-map baseline,
//! evaluation tables, alpha sweeps and ICD code mapping.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dxrank::metrics::MacroAveraging;

use config::{ProviderKind, RunConfig};
pub use error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "dxrank",
    version,
    about = "Rank diagnostic labels against patient reports"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Rank every catalog label for each report by prior-corrected likelihood.
    Rank {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        cache: CacheArgs,
        /// Weight on the report-free prior term (>= 0).
        #[arg(long, allow_negative_numbers = true)]
        alpha: Option<f64>,
    },
    /// Greedy-decode a phrase per report and rank labels by word overlap.
    Genmap {
        #[command(flatten)]
        common: CommonArgs,
        /// Generation length cap in tokens.
        #[arg(long)]
        max_tokens: Option<usize>,
        /// Stop token (vocabulary string); repeat or comma-separate for several.
        #[arg(long, value_delimiter = ',')]
        stop: Option<Vec<String>>,
    },
    /// Compare two rankings files (M1 baseline, M2 method) against gold labels.
    Eval(EvalArgs),
    /// Score once, then rank and evaluate under several alpha values.
    AlphaSweep {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        cache: CacheArgs,
        #[command(flatten)]
        metrics: MetricArgs,
        /// Alpha values, comma-separated.
        #[arg(
            long,
            value_delimiter = ',',
            allow_negative_numbers = true,
            required = true
        )]
        alphas: Vec<f64>,
    },
    /// Score every label under the report-free prompt and save the cache.
    BuildPriorCache {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Convert ICD-9/ICD-10 codes to ICD-11 and write a review queue.
    MapIcd(MapIcdArgs),
}

#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scoring backend.
    #[arg(long, value_enum)]
    pub provider: Option<ProviderKind>,
    /// Table backend model spec (JSON).
    #[arg(long)]
    pub table_model: Option<PathBuf>,
    /// Remote backend base URL, e.g. http://127.0.0.1:8080.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Remote backend model name.
    #[arg(long)]
    pub remote_model: Option<String>,
    /// Remote backend vocabulary file, one token per line.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Prompt template file containing one `{report}` slot.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Label catalog TSV: code<TAB>name.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Reports JSON Lines file.
    #[arg(long)]
    pub reports: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Scoring worker threads (0 = one per core).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct CacheArgs {
    /// Existing prior cache to reuse.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Fail instead of building the prior cache when none is usable.
    #[arg(long)]
    pub no_build_cache: bool,
}

#[derive(Args, Debug, Default)]
pub struct MetricArgs {
    /// Cutoffs, comma-separated and strictly increasing.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Classes entering the Macro-F1 average.
    #[arg(long, value_enum)]
    pub macro_average: Option<Averaging>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum Averaging {
    GoldPresent,
    AllCatalog,
}

impl From<Averaging> for MacroAveraging {
    fn from(a: Averaging) -> Self {
        match a {
            Averaging::GoldPresent => MacroAveraging::GoldPresent,
            Averaging::AllCatalog => MacroAveraging::AllCatalog,
        }
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Baseline rankings (JSON Lines).
    #[arg(long, requires = "m2", conflicts_with = "summary")]
    pub m1: Option<PathBuf>,
    /// Method rankings (JSON Lines).
    #[arg(long, requires = "m1")]
    pub m2: Option<PathBuf>,
    /// Reports file supplying gold labels and specialties.
    #[arg(long)]
    pub reports: Option<PathBuf>,
    /// Model name for the table row.
    #[arg(long, default_value = "model")]
    pub model: String,
    /// Precomputed comparison (JSON) to render instead of rankings files.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub metrics: MetricArgs,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MapIcdArgs {
    /// ICD-9 to ICD-10 table: source<TAB>target<TAB>exact<TAB>mappable.
    #[arg(long)]
    pub gem9: PathBuf,
    /// ICD-10 to ICD-11 table, same format.
    #[arg(long)]
    pub gem10: PathBuf,
    /// Codes to convert: code<TAB>version (9 or 10).
    #[arg(long)]
    pub inputs: PathBuf,
    /// Non-disease codes to exclude, one per line.
    #[arg(long)]
    pub deny: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

impl CommonArgs {
    /// Loads `--config` (if any) and applies the flags on top.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.provider {
            c.provider = v;
        }
        macro_rules! over {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { c.$f = Some(v.clone()); })*};
        }
        over!(
            table_model,
            endpoint,
            remote_model,
            vocab,
            template,
            catalog,
            reports
        );
        if let Some(v) = &self.out {
            c.out = v.clone();
        }
        if let Some(v) = self.threads {
            c.threads = v;
        }
        Ok(c)
    }
}

impl CacheArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        if let Some(v) = &self.cache {
            c.cache = Some(v.clone());
        }
        if self.no_build_cache {
            c.build_cache = false;
        }
    }
}

impl MetricArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        if let Some(v) = &self.k {
            c.ks = v.clone();
        }
        if let Some(v) = self.macro_average {
            c.macro_average = v.into();
        }
    }
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
