//! `treeprompt`: validate corpora, run pipeline phases, and evaluate
//! translations from the command line.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use treeprompt_core::corpus::{self, CorpusFormat};
use treeprompt_core::embedding::{
    EmbeddingProvider, EmbeddingVector, FileProvider, HttpProvider, VectorStore,
};
use treeprompt_core::experiment::{ExperimentConfig, Pipeline};
use treeprompt_core::jsonl;
use treeprompt_core::metrics::{
    aggregate, attach_external, load_external_scores, EvalRecord, ExternalMetric,
};

#[derive(Parser)]
#[command(name = "treeprompt", version, about = "Preference-guided few-shot example selection and MT experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override output.dir
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override output.cache_dir
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Override both tree.seed and selection.seed
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(dir) = &self.out_dir {
            config.output.dir = dir.clone();
        }
        if let Some(dir) = &self.cache_dir {
            config.output.cache_dir = Some(dir.clone());
        }
        if let Some(seed) = self.seed {
            config.selection.seed = seed;
            if let Some(tree) = &mut config.tree {
                tree.seed = seed;
            }
        }
        Ok(config)
    }

    fn pipeline(&self) -> Result<Pipeline> {
        Ok(Pipeline::new(self.load()?)?)
    }
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Check a corpus file, reporting the first 10 problems
    Validate {
        path: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: CorpusFormat,
    },
}

#[derive(Args)]
struct EmbedArgs {
    /// Run the embed phase of an experiment config
    #[arg(long, conflicts_with_all = ["provider", "input", "output"])]
    config: Option<PathBuf>,
    /// Standalone mode: embedding provider kind
    #[arg(long, value_parser = ["file", "http"])]
    provider: Option<String>,
    /// Standalone mode: corpus to embed
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value = "jsonl")]
    format: CorpusFormat,
    #[arg(long, default_value = "src")]
    source_lang: String,
    #[arg(long, default_value = "tgt")]
    target_lang: String,
    /// file provider: precomputed vectors keyed by corpus id
    #[arg(long)]
    vectors: Option<PathBuf>,
    /// http provider: embedding endpoint URL
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
    /// Standalone mode: output vectors JSONL
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BuildPoolArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Copy the pool JSONL here as well
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Restrict to a single method (e.g. tree_afsp, knn+rerank, zero_shot)
    #[arg(long)]
    method: Option<String>,
    /// With --method: add the rerank pass
    #[arg(long)]
    rerank: bool,
    /// Override selection.k
    #[arg(long)]
    k: Option<usize>,
    /// Copy the (single) method's shots JSONL here as well
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run the evaluate phase of an experiment config
    #[arg(long, conflicts_with_all = ["hyps", "refs", "out"])]
    config: Option<PathBuf>,
    /// Standalone mode: hypotheses JSONL ({query_id, text})
    #[arg(long)]
    hyps: Option<PathBuf>,
    /// Standalone mode: references JSONL ({query_id, text})
    #[arg(long)]
    refs: Option<PathBuf>,
    /// External scores, repeatable: comet=path or bertscore=path
    #[arg(long = "external", value_name = "METRIC=PATH")]
    external: Vec<String>,
    /// Method name recorded in the report
    #[arg(long, default_value = "run")]
    method_name: String,
    /// Standalone mode: output report JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus file utilities
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
    /// Validate a config and its referenced files
    Validate(ConfigArgs),
    /// Materialize embeddings (config phase or standalone)
    Embed(EmbedArgs),
    /// Build the TreePrompt example pool
    BuildPool(BuildPoolArgs),
    /// Select few-shot demonstrations per test sentence
    Select(SelectArgs),
    /// Translate the test set with the selected demonstrations
    Translate(ConfigArgs),
    /// Score translations (config phase or standalone)
    Evaluate(EvaluateArgs),
    /// Regenerate report.md and report.csv from persisted results
    Report(ConfigArgs),
    /// Run every phase in order
    Run(ConfigArgs),
}

fn main() {
    if let Err(e) = dispatch(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Corpus { command } => corpus_command(command),
        Command::Validate(args) => {
            let pipeline = args.pipeline()?;
            println!(
                "ok: config {} valid, run dir {}",
                pipeline.config_hash(),
                pipeline.run_dir().display()
            );
            Ok(())
        }
        Command::Embed(args) => embed_command(args),
        Command::BuildPool(args) => build_pool_command(args),
        Command::Select(args) => select_command(args),
        Command::Translate(args) => {
            let pipeline = args.pipeline()?;
            pipeline.embed()?;
            pipeline.build_pool()?;
            pipeline.select_phase()?;
            let did = pipeline.translate()?;
            println!("translate: {}", if did { "done" } else { "up to date" });
            Ok(())
        }
        Command::Evaluate(args) => evaluate_command(args),
        Command::Report(args) => {
            let pipeline = args.pipeline()?;
            let reports = pipeline.read_method_reports().context(
                "no persisted method reports; run `treeprompt run` or `treeprompt evaluate` first",
            )?;
            let paths = pipeline.report(&reports)?;
            println!("report: {}", paths.markdown.display());
            println!("report: {}", paths.csv.display());
            Ok(())
        }
        Command::Run(args) => {
            let pipeline = args.pipeline()?;
            let manifest = pipeline.run()?;
            for phase in ["embed", "build-pool", "select", "translate", "evaluate", "report"] {
                if let Some(record) = manifest.phases.get(phase) {
                    println!(
                        "{phase}: {}",
                        if record.skipped { "up to date" } else { "done" }
                    );
                }
            }
            if let Some(size) = manifest.pool_size {
                println!("pool size: {size}");
            }
            println!(
                "prompts: {} labeling, {} translation, {} reranking",
                manifest.prompt_budget.labeling,
                manifest.prompt_budget.translation,
                manifest.prompt_budget.reranking,
            );
            println!(
                "backend requests this run: {} ({} cache hits)",
                manifest.ledger.requests_sent, manifest.ledger.cache_hits
            );
            println!("run dir: {}", pipeline.run_dir().display());
            Ok(())
        }
    }
}

fn corpus_command(command: CorpusCommand) -> Result<()> {
    match command {
        CorpusCommand::Validate { path, format } => {
            let problems = corpus::validate_file(&path, format)?;
            if problems.is_empty() {
                println!("ok: {} is a valid {format:?} corpus", path.display());
                return Ok(());
            }
            for problem in problems.iter().take(10) {
                println!("{problem}");
            }
            if problems.len() > 10 {
                println!("... and {} more", problems.len() - 10);
            }
            bail!("{} problem(s) in {}", problems.len(), path.display());
        }
    }
}

fn embed_command(args: EmbedArgs) -> Result<()> {
    if let Some(config) = &args.config {
        let pipeline = Pipeline::new(ExperimentConfig::load(config)?)?;
        let did = pipeline.embed()?;
        println!("embed: {}", if did { "done" } else { "up to date" });
        return Ok(());
    }
    let (input, output) = match (&args.input, &args.output) {
        (Some(input), Some(output)) => (input, output),
        _ => bail!("standalone mode needs --input and --output (or use --config)"),
    };
    let corpus = corpus::load_corpus(input, args.format, &args.source_lang, &args.target_lang)?;
    let provider: Box<dyn EmbeddingProvider> = match args.provider.as_deref() {
        Some("http") => {
            let endpoint = args
                .endpoint
                .clone()
                .context("--provider http needs --endpoint")?;
            Box::new(HttpProvider::new(endpoint).with_parallelism(args.parallelism))
        }
        Some("file") => {
            let vectors = args
                .vectors
                .clone()
                .context("--provider file needs --vectors")?;
            let store = VectorStore::load(&vectors)?;
            Box::new(FileProvider::for_corpus(&corpus, &store)?)
        }
        _ => bail!("--provider must be file or http in standalone mode"),
    };
    let texts: Vec<String> = corpus.pairs().iter().map(|p| p.source_text.clone()).collect();
    let vectors = provider.embed(&texts)?;
    let entries: Vec<(String, EmbeddingVector)> =
        corpus.ids().map(String::from).zip(vectors).collect();
    VectorStore::new(entries)?.save(output)?;
    println!("embedded {} texts -> {}", corpus.len(), output.display());
    Ok(())
}

fn build_pool_command(args: BuildPoolArgs) -> Result<()> {
    let pipeline = args.config.pipeline()?;
    pipeline.embed()?;
    let (did, size) = pipeline.build_pool()?;
    match size {
        Some(size) => println!(
            "build-pool: {} ({size} examples)",
            if did { "done" } else { "up to date" }
        ),
        None => println!("build-pool: no tree methods configured, nothing to do"),
    }
    if let Some(out) = &args.out {
        let source = pipeline.run_dir().join("pool").join("pool.jsonl");
        if !source.exists() {
            bail!("no pool was built, cannot copy to {}", out.display());
        }
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::copy(&source, out)
            .with_context(|| format!("copying pool to {}", out.display()))?;
        println!("pool: {}", out.display());
    }
    Ok(())
}

fn select_command(args: SelectArgs) -> Result<()> {
    let mut config = args.config.load()?;
    if let Some(method) = &args.method {
        let spec = if args.rerank && method != "zero_shot" {
            format!("{method}+rerank")
        } else {
            method.clone()
        };
        config.selection.methods = vec![spec];
    }
    if let Some(k) = args.k {
        config.selection.k = k;
    }
    let pipeline = Pipeline::new(config)?;
    pipeline.embed()?;
    pipeline.build_pool()?;
    let did = pipeline.select_phase()?;
    println!("select: {}", if did { "done" } else { "up to date" });
    if let Some(out) = &args.out {
        let method = args
            .method
            .clone()
            .context("--out needs --method to know which shots file to copy")?;
        let label = if args.rerank && method != "zero_shot" {
            format!("{method}+rerank")
        } else {
            method
        };
        let source = pipeline
            .run_dir()
            .join("methods")
            .join(&label)
            .join("shots.jsonl");
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::copy(&source, out)
            .with_context(|| format!("copying shots to {}", out.display()))?;
        println!("shots: {}", out.display());
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct TextRecord {
    query_id: String,
    text: String,
}

fn evaluate_command(args: EvaluateArgs) -> Result<()> {
    if let Some(config) = &args.config {
        let pipeline = Pipeline::new(ExperimentConfig::load(config)?)?;
        let (did, reports) = pipeline.evaluate()?;
        let paths = pipeline.report(&reports)?;
        println!("evaluate: {}", if did { "done" } else { "up to date" });
        println!("report: {}", paths.markdown.display());
        return Ok(());
    }
    let (hyps_path, refs_path) = match (&args.hyps, &args.refs) {
        (Some(h), Some(r)) => (h, r),
        _ => bail!("standalone mode needs --hyps and --refs (or use --config)"),
    };
    let hyps: Vec<TextRecord> = jsonl::read(hyps_path)?;
    let refs: Vec<TextRecord> = jsonl::read(refs_path)?;
    let references: std::collections::HashMap<&str, &str> = refs
        .iter()
        .map(|r| (r.query_id.as_str(), r.text.as_str()))
        .collect();
    let mut records = Vec::with_capacity(hyps.len());
    for hyp in &hyps {
        let reference = references
            .get(hyp.query_id.as_str())
            .with_context(|| format!("no reference for query_id {:?}", hyp.query_id))?;
        records.push(EvalRecord::score(hyp.query_id.clone(), &hyp.text, reference));
    }
    for spec in &args.external {
        let (metric, path) = spec
            .split_once('=')
            .with_context(|| format!("--external expects METRIC=PATH, got {spec:?}"))?;
        let metric = match metric {
            "comet" => ExternalMetric::Comet,
            "bertscore" => ExternalMetric::Bertscore,
            other => bail!("unknown external metric {other:?} (expected comet or bertscore)"),
        };
        let scores = load_external_scores(std::path::Path::new(path))?;
        let unmatched = attach_external(&mut records, &scores, metric);
        if !unmatched.is_empty() {
            eprintln!("warning: {} external scores match no hypothesis", unmatched.len());
        }
    }
    let report = aggregate(&records, &args.method_name)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(out) => {
            std::fs::write(out, &json)?;
            println!("report: {}", out.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}
