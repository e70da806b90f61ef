//! Subcommand implementations. Every file is written under the configured
//! output directory, and records are ordered by report id.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::json;

use dxrank::corpus::{load_catalog, load_reports, LabelCatalog, PromptTemplate, Report, TokenView};
use dxrank::genmap::{genmap_rank, GenMapConfig, RarityWeights};
use dxrank::icdmap::{
    chain_to_icd11, load_gem, load_inputs, resolved_tsv, review_queue_tsv, summarize, DenyList,
    Stage, StageTable,
};
use dxrank::llrank::{alpha_sweep, score_batch, Execution, PriorCache, ReportFailure};
use dxrank::metrics::{
    evaluate, id_mismatch, per_specialty_hit, ComparisonTable, EvalRun, ModelComparison,
};
use dxrank::provider::{
    Provider, RemoteConfig, RemoteProvider, TableProvider, Tokenizer, VocabTokenizer,
};
use dxrank::ranking::{load_rankings, to_jsonl, ErrorRecord, RankingRecord};

use crate::config::{ProviderKind, RunConfig};
use crate::error::CliError;
use crate::{Command, EvalArgs, MapIcdArgs};

pub const RANKINGS_FILE: &str = "rankings.jsonl";
pub const GENMAP_FILE: &str = "genmap_rankings.jsonl";
pub const ERRORS_FILE: &str = "errors.jsonl";
pub const PRIOR_CACHE_FILE: &str = "prior_cache.json";
pub const EVAL_JSON_FILE: &str = "eval.json";
pub const EVAL_TEXT_FILE: &str = "eval.txt";
pub const SWEEP_FILE: &str = "alpha_sweep.csv";
pub const RESOLVED_FILE: &str = "resolved.tsv";
pub const QUEUE_FILE: &str = "review_queue.tsv";

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Rank {
            common,
            cache,
            alpha,
        } => {
            let mut c = common.resolve()?;
            cache.apply(&mut c);
            if let Some(a) = alpha {
                c.alpha = a;
            }
            c.validate()?;
            with_threads(c.threads, || cmd_rank(&c))
        }
        Command::Genmap {
            common,
            max_tokens,
            stop,
        } => {
            let mut c = common.resolve()?;
            if let Some(m) = max_tokens {
                c.max_tokens = m;
            }
            if let Some(s) = stop {
                c.stop = s;
            }
            c.validate()?;
            with_threads(c.threads, || cmd_genmap(&c))
        }
        Command::Eval(args) => cmd_eval(&args),
        Command::AlphaSweep {
            common,
            cache,
            metrics,
            alphas,
        } => {
            let mut c = common.resolve()?;
            cache.apply(&mut c);
            metrics.apply(&mut c);
            c.validate()?;
            for &a in &alphas {
                dxrank::llrank::check_alpha(a).map_err(|e| CliError::Usage(e.to_string()))?;
            }
            with_threads(c.threads, || cmd_alpha_sweep(&c, &alphas))
        }
        Command::BuildPriorCache { common } => {
            let c = common.resolve()?;
            c.validate()?;
            with_threads(c.threads, || cmd_build_prior_cache(&c))
        }
        Command::MapIcd(args) => cmd_map_icd(&args),
    }
}

fn with_threads<T>(threads: usize, f: impl FnOnce() -> T + Send) -> T
where
    T: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool starts");
    pool.install(f)
}

fn write_out(out: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Usage(format!("{}: {e}", out.display())))?;
    let path = out.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(path)
}

/// Everything loaded before any scoring call.
struct Inputs {
    provider: Arc<dyn Provider>,
    tokenizer: Arc<dyn Tokenizer>,
    catalog: LabelCatalog,
    template: PromptTemplate,
    reports: Vec<Report>,
}

type ProviderPair = (Arc<dyn Provider>, Arc<dyn Tokenizer>);

fn build_provider(c: &RunConfig) -> Result<ProviderPair, CliError> {
    match c.provider {
        ProviderKind::Table => {
            let path = RunConfig::require(&c.table_model, "table_model")?;
            let p = TableProvider::load(path)?;
            let tok: Arc<dyn Tokenizer> = Arc::new(p.vocab_tokenizer().clone());
            Ok((Arc::new(p), tok))
        }
        ProviderKind::Remote => {
            let endpoint = RunConfig::require(&c.endpoint, "endpoint")?;
            let model = RunConfig::require(&c.remote_model, "remote_model")?;
            let vocab = RunConfig::require(&c.vocab, "vocab")?;
            let tok: Arc<dyn Tokenizer> = Arc::new(VocabTokenizer::load(vocab)?);
            let mut rc = RemoteConfig::new(endpoint.clone(), model.clone());
            if let Some(v) = &c.remote_version {
                rc.version = v.clone();
            }
            Ok((Arc::new(RemoteProvider::new(rc, tok.clone())?), tok))
        }
    }
}

fn load_run_inputs(c: &RunConfig) -> Result<Inputs, CliError> {
    let (provider, tokenizer) = build_provider(c)?;
    let catalog = load_catalog(
        RunConfig::require(&c.catalog, "catalog")?,
        &TokenView::new(tokenizer.clone()),
    )?;
    let reports = load_reports(RunConfig::require(&c.reports, "reports")?)?;
    let template = match &c.template {
        Some(p) => PromptTemplate::load(p)?,
        None => PromptTemplate::default(),
    };
    Ok(Inputs {
        provider,
        tokenizer,
        catalog,
        template,
        reports,
    })
}

fn build_and_save_cache(c: &RunConfig, inputs: &Inputs) -> Result<PriorCache, CliError> {
    let cache = PriorCache::build(
        &inputs.catalog,
        &inputs.template,
        &*inputs.provider,
        Execution::Parallel,
    )?;
    let path = write_out(&c.out, PRIOR_CACHE_FILE, &(cache.to_json() + "\n"))?;
    log::info!(
        "prior cache with {} entries written to {}",
        cache.len(),
        path.display()
    );
    Ok(cache)
}

/// Reuses `--cache` (or a cache left in the output directory) when it was
/// built for this provider and prompt; otherwise builds a fresh one unless
/// building is disabled.
fn obtain_prior_cache(c: &RunConfig, inputs: &Inputs) -> Result<PriorCache, CliError> {
    let in_out = c.out.join(PRIOR_CACHE_FILE);
    let path = c.cache.clone().unwrap_or(in_out);
    if path.exists() {
        let loaded = PriorCache::load(&path).and_then(|cache| {
            cache.check(inputs.provider.id(), &inputs.template)?;
            Ok(cache)
        });
        match loaded {
            Ok(cache) => return Ok(cache),
            Err(e) if !c.build_cache => {
                return Err(CliError::Usage(format!(
                    "{}: {e} (and --no-build-cache is set)",
                    path.display()
                )))
            }
            Err(e) => log::warn!("{}: {e}; rebuilding", path.display()),
        }
    } else if !c.build_cache {
        return Err(CliError::Usage(format!(
            "no prior cache at {} and --no-build-cache is set; run build-prior-cache first",
            path.display()
        )));
    }
    build_and_save_cache(c, inputs)
}

fn error_records(mut failures: Vec<ReportFailure>) -> Vec<ErrorRecord> {
    failures.sort_by(|a, b| a.report_id.cmp(&b.report_id));
    failures
        .into_iter()
        .map(|f| ErrorRecord {
            report_id: f.report_id,
            error: f.error,
        })
        .collect()
}

/// Writes the error file and turns failures into the right exit status.
fn finish_batch(out: &Path, failures: Vec<ReportFailure>, total: usize) -> Result<(), CliError> {
    let failed = failures.len();
    let first = failures.first().map(|f| f.error.clone());
    let path = write_out(out, ERRORS_FILE, &to_jsonl(&error_records(failures)))?;
    if failed == 0 {
        Ok(())
    } else if failed == total {
        Err(CliError::Provider(format!(
            "all {total} report(s) failed, first error: {}",
            first.unwrap_or_default()
        )))
    } else {
        Err(CliError::Partial {
            failed,
            total,
            errors_file: path.display().to_string(),
        })
    }
}

fn cmd_rank(c: &RunConfig) -> Result<(), CliError> {
    let inputs = load_run_inputs(c)?;
    let cache = obtain_prior_cache(c, &inputs)?;
    let results = score_batch(
        &inputs.reports,
        &inputs.catalog,
        &inputs.template,
        &*inputs.provider,
        &cache,
        Execution::Parallel,
    );
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(scores) => records.push(scores.rank(&inputs.catalog, c.alpha)?.to_record()),
            Err(f) => failures.push(f),
        }
    }
    records.sort_by(|a, b| a.report_id.cmp(&b.report_id));
    let path = write_out(&c.out, RANKINGS_FILE, &to_jsonl(&records))?;
    println!(
        "ranked {} report(s) over {} labels (alpha = {}) -> {}",
        records.len(),
        inputs.catalog.len(),
        c.alpha,
        path.display()
    );
    finish_batch(&c.out, failures, inputs.reports.len())
}

fn cmd_genmap(c: &RunConfig) -> Result<(), CliError> {
    let inputs = load_run_inputs(c)?;
    let stop = c
        .stop
        .iter()
        .map(|s| {
            inputs.tokenizer.token_id(s).ok_or_else(|| {
                CliError::Usage(format!("stop token {s:?} is not in the vocabulary"))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let config = GenMapConfig {
        max_tokens: c.max_tokens,
        stop,
    };
    let weights = RarityWeights::build(&inputs.catalog);
    let results: Vec<Result<RankingRecord, ReportFailure>> = inputs
        .reports
        .par_iter()
        .map(|r| {
            genmap_rank(
                r,
                &inputs.catalog,
                &inputs.template,
                &*inputs.provider,
                &weights,
                &config,
            )
            .map(|g| RankingRecord {
                generated: Some(g.generated),
                ..g.ranking.to_record()
            })
            .map_err(|e| ReportFailure {
                report_id: r.id.clone(),
                error: e.to_string(),
            })
        })
        .collect();
    let (mut records, mut failures) = (Vec::new(), Vec::new());
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => failures.push(f),
        }
    }
    records.sort_by(|a, b| a.report_id.cmp(&b.report_id));
    let path = write_out(&c.out, GENMAP_FILE, &to_jsonl(&records))?;
    println!("mapped {} report(s) -> {}", records.len(), path.display());
    finish_batch(&c.out, failures, inputs.reports.len())
}

fn cmd_build_prior_cache(c: &RunConfig) -> Result<(), CliError> {
    let inputs = load_run_inputs(c)?;
    let cache = build_and_save_cache(c, &inputs)?;
    println!(
        "prior cache: {} labels -> {}",
        cache.len(),
        c.out.join(PRIOR_CACHE_FILE).display()
    );
    Ok(())
}

fn cmd_alpha_sweep(c: &RunConfig, alphas: &[f64]) -> Result<(), CliError> {
    let inputs = load_run_inputs(c)?;
    let cache = obtain_prior_cache(c, &inputs)?;
    let sweep = alpha_sweep(
        &inputs.reports,
        &inputs.catalog,
        &inputs.template,
        &*inputs.provider,
        &cache,
        alphas,
        &c.ks,
        c.macro_average,
        Execution::Parallel,
    )?;
    let csv = sweep.to_csv();
    write_out(&c.out, SWEEP_FILE, &csv)?;
    print!("{csv}");
    finish_batch(&c.out, sweep.failures, inputs.reports.len())
}

fn eval_config(args: &EvalArgs) -> Result<RunConfig, CliError> {
    let mut c = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(r) = &args.reports {
        c.reports = Some(r.clone());
    }
    if let Some(o) = &args.out {
        c.out = o.clone();
    }
    args.metrics.apply(&mut c);
    c.validate()?;
    Ok(c)
}

fn eval_run(records: &[RankingRecord], reports: &[Report]) -> Result<EvalRun, CliError> {
    Ok(EvalRun::from_reports(
        records.iter().map(|r| (r.report_id.as_str(), r.codes())),
        reports,
    )?)
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let c = eval_config(args)?;
    let document;
    let table = if let Some(summary) = &args.summary {
        let raw = std::fs::read_to_string(summary)
            .map_err(|e| CliError::Usage(format!("{}: {e}", summary.display())))?;
        let table: ComparisonTable = serde_json::from_str(&raw)
            .map_err(|e| CliError::Usage(format!("{}: {e}", summary.display())))?;
        document = table.to_json();
        table
    } else {
        let (Some(m1), Some(m2)) = (&args.m1, &args.m2) else {
            return Err(CliError::Usage(
                "eval needs --m1 and --m2, or --summary".into(),
            ));
        };
        let reports = load_reports(RunConfig::require(&c.reports, "reports")?)?;
        let r1 = load_rankings(m1)?;
        let r2 = load_rankings(m2)?;
        let diff = id_mismatch(
            r1.iter().map(|r| r.report_id.as_str()),
            r2.iter().map(|r| r.report_id.as_str()),
        );
        if !diff.is_empty() {
            return Err(CliError::Usage(format!(
                "rankings files cover different reports: {}",
                diff.join(", ")
            )));
        }
        let run1 = eval_run(&r1, &reports)?;
        let run2 = eval_run(&r2, &reports)?;
        let table = ComparisonTable::new(
            c.ks.clone(),
            vec![ModelComparison {
                model: args.model.clone(),
                m1: evaluate(&run1, &c.ks, c.macro_average)?,
                m2: evaluate(&run2, &c.ks, c.macro_average)?,
            }],
        );
        let mut specialty = serde_json::Map::new();
        for (name, run) in [(&table.m1_name, &run1), (&table.m2_name, &run2)] {
            let mut per_k = serde_json::Map::new();
            for &k in &c.ks {
                per_k.insert(k.to_string(), json!(per_specialty_hit(run, k)?));
            }
            specialty.insert(name.clone(), per_k.into());
        }
        let mut doc = table.to_json();
        doc["per_specialty_hit"] = specialty.into();
        doc["excluded_reports"] = json!(run2.warnings());
        document = doc;
        table
    };
    let text = table.render_text();
    write_out(
        &c.out,
        EVAL_JSON_FILE,
        &(serde_json::to_string_pretty(&document).expect("json") + "\n"),
    )?;
    write_out(&c.out, EVAL_TEXT_FILE, &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_map_icd(args: &MapIcdArgs) -> Result<(), CliError> {
    let s1 = StageTable::new(&load_gem(&args.gem9)?, Stage::Icd9To10);
    let s2 = StageTable::new(&load_gem(&args.gem10)?, Stage::Icd10To11);
    let inputs = load_inputs(&args.inputs)?;
    let deny = match &args.deny {
        Some(p) => DenyList::load(p)?,
        None => DenyList::default(),
    };
    let decisions = chain_to_icd11(&s1, &s2, &inputs, &deny);
    write_out(&args.out, RESOLVED_FILE, &resolved_tsv(&decisions))?;
    write_out(&args.out, QUEUE_FILE, &review_queue_tsv(&decisions))?;
    let s = summarize(&decisions);
    println!(
        "{} code(s): {} resolved, {} withheld for review, {} excluded",
        s.inputs, s.resolved, s.withheld, s.excluded
    );
    Ok(())
}
