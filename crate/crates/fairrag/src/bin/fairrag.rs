//! Command-line surface: ingest -> embed/index -> (train | filter) ->
//! evaluate -> report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use fairrag::corpus::{ingest, ChunkStore, ChunkerConfig};
use fairrag::evaluation::{
    compare_report, eval_fairness, eval_utility, read_eval_records, read_qa_records,
    FairnessReport, UtilityReport,
};
use fairrag::fairfilter::{verdicts_to_jsonl, FilterTemplates};
use fairrag::fairft::{
    read_training_examples, save_checkpoint, train, CheckpointMeta, TrainStores, TrainerConfig,
};
use fairrag::gateway::http::{HttpGateway, HttpGatewayConfig};
use fairrag::gateway::mock::MockLlm;
use fairrag::gateway::{GenerationParams, LlmGateway};
use fairrag::pipeline::{FairFilterPipeline, NoRagPipeline, Pipeline, RagPipeline, Retriever};
use fairrag::retrieval::bm25::{bm25_build, Bm25Index};
use fairrag::retrieval::dense::EmbeddingStore;
use fairrag::retrieval::RetrieverConfig;
use fairrag::transform::QueryTransform;
use fairrag::util::atomic_write;

pub const ENV_CONFIG: &str = "FAIRRAG_CONFIG";

#[derive(Parser)]
#[command(name = "fairrag", version, about = "Fairness-aware RAG toolkit")]
struct Cli {
    /// JSON config file; flags override config values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Mode {
    NoRag,
    Rag,
    Fairfilter,
    Fairft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RetrieverChoice {
    Bm25,
    Dense,
}

/// File-level defaults; every field can be overridden by a flag.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct FileConfig {
    corpus: Option<PathBuf>,
    store: Option<PathBuf>,
    embeddings: Option<PathBuf>,
    index: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    templates: Option<PathBuf>,
    mock: Option<PathBuf>,
    mode: Option<Mode>,
    retriever: Option<RetrieverChoice>,
    model: Option<String>,
    top_k: Option<usize>,
    seed: Option<u64>,
    chunker: Option<ChunkerConfig>,
    trainer: Option<TrainerConfig>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let path = match path {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var(ENV_CONFIG).ok().map(PathBuf::from),
        };
        match path {
            Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(&p)?)?),
            None => Ok(Self::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Chunk a JSONL corpus into a chunk store directory.
    Ingest(IngestArgs),
    /// Embed every chunk into a binary vector store.
    Embed(EmbedArgs),
    /// Build the BM25 index over a chunk store.
    Index(IndexArgs),
    /// Fine-tune the retriever transform against frozen-model signals.
    Train(TrainArgs),
    /// Run the two-step filter over retrieved documents for a set of queries.
    Filter(FilterArgs),
    /// Stereotype agreement-rate evaluation.
    EvalFairness(EvalArgs),
    /// QA utility evaluation.
    EvalUtility(EvalArgs),
    /// Combine saved evaluation reports into a comparison table.
    Report(ReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    chunk_size: Option<usize>,
    #[arg(long)]
    overlap: Option<usize>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    mock: Option<PathBuf>,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    train_data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    mock: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    top_k_train: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    retriever: Option<RetrieverChoice>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    mock: Option<PathBuf>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long, value_enum)]
    retriever: Option<RetrieverChoice>,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    mock: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Saved eval report JSON files (label taken from metadata).
    #[arg(long, required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn require<T: Clone>(flag: Option<T>, cfg: Option<T>, name: &str) -> anyhow::Result<T> {
    flag.or(cfg)
        .ok_or_else(|| anyhow::anyhow!("missing required option --{name} (or config key)"))
}

fn build_gateway(
    mock: Option<&Path>,
    cfg_mock: Option<&Path>,
) -> anyhow::Result<Box<dyn LlmGateway>> {
    if let Some(path) = mock.or(cfg_mock) {
        return Ok(Box::new(MockLlm::from_spec_file(path)?));
    }
    Ok(Box::new(HttpGateway::new(HttpGatewayConfig::from_env()?)))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file_cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args, &file_cfg),
        Command::Embed(args) => cmd_embed(args, &file_cfg),
        Command::Index(args) => cmd_index(args, &file_cfg),
        Command::Train(args) => cmd_train(args, &file_cfg),
        Command::Filter(args) => cmd_filter(args, &file_cfg),
        Command::EvalFairness(args) => cmd_eval(args, &file_cfg, true),
        Command::EvalUtility(args) => cmd_eval(args, &file_cfg, false),
        Command::Report(args) => cmd_report(args),
    }
}

fn cmd_ingest(args: IngestArgs, cfg: &FileConfig) -> anyhow::Result<()> {
    let corpus = require(args.corpus, cfg.corpus.clone(), "corpus")?;
    let out = require(args.out, cfg.store.clone(), "out")?;
    let mut chunker = cfg.chunker.unwrap_or_default();
    if let Some(s) = args.chunk_size {
        chunker.chunk_size = s;
    }
    if let Some(o) = args.overlap {
        chunker.overlap = o;
    }
    let store = ingest(&corpus, chunker)?;
    store.save(&out)?;
    println!(
        "ingested {} documents into {} chunks ({})",
        store.manifest.doc_count,
        store.manifest.chunk_count,
        out.display()
    );
    Ok(())
}

fn cmd_embed(args: EmbedArgs, cfg: &FileConfig) -> anyhow::Result<()> {
    let store_dir = require(args.store, cfg.store.clone(), "store")?;
    let out = require(args.out, cfg.embeddings.clone(), "out")?;
    let gateway = build_gateway(args.mock.as_deref(), cfg.mock.as_deref())?;
    let store = ChunkStore::load(&store_dir)?;
    let mut emb = EmbeddingStore::new(gateway.embed_dim());
    for chunk in &store.chunks {
        emb.insert(chunk.chunk_id.clone(), gateway.embed(&chunk.text)?)?;
    }
    emb.save(&out)?;
    println!("embedded {} chunks (dim {}) into {}", emb.len(), emb.dim, out.display());
    Ok(())
}

fn cmd_index(args: IndexArgs, cfg: &FileConfig) -> anyhow::Result<()> {
    let store_dir = require(args.store, cfg.store.clone(), "store")?;
    let out = require(args.out, cfg.index.clone(), "out")?;
    let rcfg = RetrieverConfig::default();
    let store = ChunkStore::load(&store_dir)?;
    let index = bm25_build(
        &store,
        args.k1.unwrap_or(rcfg.bm25_k1),
        args.b.unwrap_or(rcfg.bm25_b),
    )?;
    index.save(&out)?;
    println!("indexed {} chunks into {}", index.doc_count, out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs, cfg: &FileConfig) -> anyhow::Result<()> {
    let store_dir = require(args.store, cfg.store.clone(), "store")?;
    let emb_path = require(args.embeddings, cfg.embeddings.clone(), "embeddings")?;
    let data_path = require(args.train_data, None, "train-data")?;
    let out = require(args.out, cfg.checkpoint.clone(), "out")?;
    let gateway = build_gateway(args.mock.as_deref(), cfg.mock.as_deref())?;

    let mut trainer = cfg.trainer.clone().unwrap_or_default();
    if let Some(e) = args.epochs {
        trainer.epochs = e;
    }
    if let Some(lr) = args.learning_rate {
        trainer.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        trainer.batch_size = b;
    }
    if let Some(k) = args.top_k_train {
        trainer.top_k_train = k;
    }

    let store = ChunkStore::load(&store_dir)?;
    let embeddings = EmbeddingStore::load(&emb_path)?;
    let examples = read_training_examples(&data_path)?;

    std::fs::create_dir_all(&out)?;
    let lock_path = out.join(".lock");
    let _lock = acquire_lock(&lock_path)?;

    let stores = TrainStores {
        chunk_store: &store,
        embeddings: &embeddings,
    };
    let (w, report) = train(&examples, &stores, gateway.as_ref(), &trainer)?;
    let meta = CheckpointMeta {
        config: trainer.clone(),
        epochs_completed: trainer.epochs,
        loss_curve: report.epoch_mean_losses.clone(),
    };
    save_checkpoint(&out, &w, &meta, &report)?;
    println!(
        "trained {} epochs; epoch losses: {:?}",
        trainer.epochs, report.epoch_mean_losses
    );
    Ok(())
}

struct LockGuard(PathBuf);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

fn acquire_lock(path: &Path) -> anyhow::Result<LockGuard> {
    match std::fs::OpenOptions::new().write(true).create_new(true).open(path) {
        Ok(_) => Ok(LockGuard(path.to_path_buf())),
        Err(_) => anyhow::bail!(
            "checkpoint directory is locked by another training run ({})",
            path.display()
        ),
    }
}

#[derive(Deserialize)]
struct QueryLine {
    query: String,
}

fn cmd_filter(args: FilterArgs, cfg: &FileConfig) -> anyhow::Result<()> {
    let store_dir = require(args.store, cfg.store.clone(), "store")?;
    let queries_path = require(args.queries, None, "queries")?;
    let out = require(args.out, None, "out")?;
    let gateway = build_gateway(args.mock.as_deref(), cfg.mock.as_deref())?;
    let store = ChunkStore::load(&store_dir)?;
    let top_k = args.top_k.or(cfg.top_k).unwrap_or(3);
    let templates = match args.templates.as_deref().or(cfg.templates.as_deref()) {
        Some(dir) => FilterTemplates::from_dir(dir)?,
        None => FilterTemplates::default(),
    };

    let choice = args.retriever.or(cfg.retriever).unwrap_or(RetrieverChoice::Bm25);
    let bm25;
    let emb;
    let retriever = match choice {
        RetrieverChoice::Bm25 => {
            let index_path = require(args.index, cfg.index.clone(), "index")?;
            bm25 = Bm25Index::load(&index_path)?;
            Retriever::Bm25(&bm25)
        }
        RetrieverChoice::Dense => {
            let emb_path = require(args.embeddings, cfg.embeddings.clone(), "embeddings")?;
            emb = EmbeddingStore::load(&emb_path)?;
            Retriever::Dense {
                store: &emb,
                transform: None,
                gateway: gateway.as_ref(),
            }
        }
    };

    let pipeline = FairFilterPipeline {
        retriever,
        chunk_store: &store,
        gateway: gateway.as_ref(),
        params: GenerationParams::default(),
        top_k,
        templates,
        label: "fairfilter".into(),
    };
    let text = std::fs::read_to_string(&queries_path)?;
    let mut audit = String::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let q: QueryLine = serde_json::from_str(line)?;
        let (_, filter) = pipeline.answer_with_filter(&q.query)?;
        audit.push_str(&verdicts_to_jsonl(&filter)?);
    }
    atomic_write(&out, audit.as_bytes())?;
    println!("filter audit written to {}", out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs, cfg: &FileConfig, fairness: bool) -> anyhow::Result<()> {
    let dataset = require(args.dataset, None, "dataset")?;
    let mode = require(args.mode, cfg.mode, "mode")?;
    let gateway = build_gateway(args.mock.as_deref(), cfg.mock.as_deref())?;
    let top_k = args.top_k.or(cfg.top_k).unwrap_or(3);
    let params = GenerationParams {
        model_name: args.model.clone().or(cfg.model.clone()).unwrap_or_else(|| "default".into()),
        ..GenerationParams::default()
    };
    let choice = args.retriever.or(cfg.retriever).unwrap_or(RetrieverChoice::Bm25);
    let seed = args.seed.or(cfg.seed).unwrap_or(0);

    // artifacts loaded only when the mode needs them
    let store;
    let bm25;
    let emb;
    let transform;
    let pipeline: Box<dyn Pipeline> = match mode {
        Mode::NoRag => Box::new(NoRagPipeline {
            gateway: gateway.as_ref(),
            params: params.clone(),
        }),
        Mode::Rag | Mode::Fairfilter | Mode::Fairft => {
            let store_dir = require(args.store, cfg.store.clone(), "store")?;
            store = ChunkStore::load(&store_dir)?;
            let retriever = match (mode, choice) {
                (Mode::Fairft, _) | (_, RetrieverChoice::Dense) => {
                    let emb_path = require(args.embeddings.clone(), cfg.embeddings.clone(), "embeddings")?;
                    emb = EmbeddingStore::load(&emb_path)?;
                    transform = match mode {
                        Mode::Fairft => {
                            let ckpt = require(args.checkpoint.clone(), cfg.checkpoint.clone(), "checkpoint")?;
                            let path = if ckpt.is_dir() { ckpt.join("transform.bin") } else { ckpt };
                            Some(QueryTransform::load(&path)?)
                        }
                        _ => None,
                    };
                    Retriever::Dense {
                        store: &emb,
                        transform: transform.as_ref(),
                        gateway: gateway.as_ref(),
                    }
                }
                (_, RetrieverChoice::Bm25) => {
                    let index_path = require(args.index.clone(), cfg.index.clone(), "index")?;
                    bm25 = Bm25Index::load(&index_path)?;
                    Retriever::Bm25(&bm25)
                }
            };
            match mode {
                Mode::Fairfilter => {
                    let templates = match args.templates.as_deref().or(cfg.templates.as_deref()) {
                        Some(dir) => FilterTemplates::from_dir(dir)?,
                        None => FilterTemplates::default(),
                    };
                    Box::new(FairFilterPipeline {
                        retriever,
                        chunk_store: &store,
                        gateway: gateway.as_ref(),
                        params: params.clone(),
                        top_k,
                        templates,
                        label: "fairfilter".into(),
                    })
                }
                _ => Box::new(RagPipeline {
                    retriever,
                    chunk_store: &store,
                    gateway: gateway.as_ref(),
                    params: params.clone(),
                    top_k,
                    label: match mode {
                        Mode::Fairft => "fairft".into(),
                        _ => format!("rag_{choice:?}").to_lowercase(),
                    },
                }),
            }
        }
    };

    let metadata = json!({
        "mode": mode,
        "retriever": choice,
        "model": params.model_name,
        "top_k": top_k,
        "seed": seed,
        "kind": if fairness { "fairness" } else { "utility" },
    });

    if fairness {
        let records = read_eval_records(&dataset)?;
        let report = eval_fairness(&records, pipeline.as_ref())?;
        write_eval_outputs(args.out.as_deref(), &metadata, &json!(report), fairness_csv(&report))?;
        print_single_run_table(&metadata, Some(&report), None)?;
    } else {
        let records = read_qa_records(&dataset)?;
        let report = eval_utility(&records, pipeline.as_ref())?;
        write_eval_outputs(args.out.as_deref(), &metadata, &json!(report), utility_csv(&report))?;
        print_single_run_table(&metadata, None, Some(&report))?;
    }
    Ok(())
}

fn fairness_csv(report: &FairnessReport) -> String {
    let mut out = String::from("category,agree_count,total,rate\n");
    for (cat, rate) in &report.per_category {
        out.push_str(&format!(
            "{},{},{},{}\n",
            cat.short(),
            rate.agree_count,
            rate.total,
            rate.rate
        ));
    }
    out.push_str(&format!(
        "Overall,{},{},{}\n",
        report.agree_count, report.total, report.overall_rate
    ));
    out
}

fn utility_csv(report: &UtilityReport) -> String {
    format!(
        "correct,total,rate\n{},{},{}\n",
        report.correct, report.total, report.rate
    )
}

fn write_eval_outputs(
    out: Option<&Path>,
    metadata: &serde_json::Value,
    report: &serde_json::Value,
    csv: String,
) -> anyhow::Result<()> {
    if let Some(out) = out {
        let payload = json!({"metadata": metadata, "report": report});
        atomic_write(out, serde_json::to_string_pretty(&payload)?.as_bytes())?;
        atomic_write(&out.with_extension("csv"), csv.as_bytes())?;
    }
    Ok(())
}

fn print_single_run_table(
    metadata: &serde_json::Value,
    fairness: Option<&FairnessReport>,
    utility: Option<&UtilityReport>,
) -> anyhow::Result<()> {
    let label = format!(
        "{}/{}",
        metadata["mode"].as_str().unwrap_or("?"),
        metadata["retriever"].as_str().unwrap_or("?")
    );
    let runs = vec![(label, fairness.cloned(), utility.cloned())];
    let (table, _) = compare_report(&runs)?;
    print!("{}", table.render());
    Ok(())
}

#[derive(Deserialize)]
struct SavedRun {
    metadata: serde_json::Value,
    report: serde_json::Value,
}

fn cmd_report(args: ReportArgs) -> anyhow::Result<()> {
    let mut runs: Vec<(String, Option<FairnessReport>, Option<UtilityReport>)> = Vec::new();
    let mut by_label: BTreeMap<String, (Option<FairnessReport>, Option<UtilityReport>)> =
        BTreeMap::new();
    let mut order = Vec::new();
    for path in &args.runs {
        let saved: SavedRun = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let label = format!(
            "{}/{}",
            saved.metadata["mode"].as_str().unwrap_or("?"),
            saved.metadata["retriever"].as_str().unwrap_or("?")
        );
        let entry = by_label.entry(label.clone()).or_default();
        if !order.contains(&label) {
            order.push(label.clone());
        }
        match saved.metadata["kind"].as_str() {
            Some("fairness") => entry.0 = Some(serde_json::from_value(saved.report)?),
            Some("utility") => entry.1 = Some(serde_json::from_value(saved.report)?),
            other => anyhow::bail!("unknown report kind {other:?} in {}", path.display()),
        }
    }
    for label in order {
        let (f, u) = by_label.remove(&label).unwrap();
        runs.push((label, f, u));
    }
    let (table, scatter) = compare_report(&runs)?;
    print!("{}", table.render());
    if let Some(out) = args.out {
        atomic_write(&out, serde_json::to_string_pretty(&table)?.as_bytes())?;
        atomic_write(&out.with_extension("scatter.csv"), scatter.as_bytes())?;
    }
    Ok(())
}
