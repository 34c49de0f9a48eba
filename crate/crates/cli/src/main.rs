use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use convsearch::corpus::{
    build_index, read_corpus, AnalysisConfig, DocStore, InvertedIndex, Stemmer,
};
use convsearch::embed::{
    CachedProvider, EmbeddingCache, EmbeddingProvider, SyntheticMode, SyntheticProvider,
};
use convsearch::eval::{
    attention_by_depth, bleu4, evaluate, export_embeddings, per_turn_breakdown, read_run,
    write_attention_csv, write_breakdown_csv, Gain, Metric, MetricConfig, Qrels,
};
use convsearch::pipeline::{read_turn_logs, Pipeline, PipelineConfig, QueryMethod};
use convsearch::rerank::{HeadKind, HeadParams};
use convsearch::retrieval::{search, RetrievalConfig, RetrievalModel};
use convsearch::rewrite::{
    build_t5_input, coref_pronoun_rewrite, prefix_rewrite, read_coref, read_topics,
    rewrite_via_provider, union_plan, EchoRewriter, QuerySource, RewriteRequest, Rewriter,
};
use convsearch::sidecar::{SidecarClient, SIDECAR_URL_ENV};
use convsearch::train::{
    binarize_qrels, cross_validate, default_grid, fit, prepare_conversations, sample_conversations,
    write_history, AdamConfig, GridPoint, QrelScale, QrelSet, TrainConfig,
};

#[derive(Parser)]
#[command(name = "convsearch", version, about = "Conversational passage search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an index from a JSONL corpus of {"id", "text"} records.
    Index(IndexArgs),
    /// Rank passages for a single query.
    Search(SearchArgs),
    /// Print the rewrites of every turn of every topic.
    Rewrite(RewriteArgs),
    /// Train a re-ranking head.
    Train(TrainArgs),
    /// Run the full pipeline over a topics file.
    Run(RunArgs),
    /// Score a TREC run against qrels.
    Evaluate(EvaluateArgs),
    /// Corpus BLEU-4 of rewrites against references (one per line).
    Bleu(BleuArgs),
    /// Tables from the per-turn logs of a run.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "porter")]
    stemmer: String,
    /// One stopword per line; replaces the built-in English list.
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RetrievalArgs {
    /// lmd, lmjm or bm25.
    #[arg(long, default_value = "lmd")]
    ranker: String,
    #[arg(long, default_value_t = 1000.0)]
    mu: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 0.9)]
    k1: f64,
    #[arg(long, default_value_t = 0.4)]
    b: f64,
    /// Passages retrieved per query.
    #[arg(short, long, default_value_t = 1000)]
    k: usize,
}

impl RetrievalArgs {
    fn config(&self) -> Result<RetrievalConfig> {
        let model: RetrievalModel = self.ranker.parse()?;
        let c = RetrievalConfig {
            model,
            k1: self.k1,
            b: self.b,
            lambda: self.lambda,
            mu: self.mu,
            k: self.k,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    query: String,
    #[command(flatten)]
    retrieval: RetrievalArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum RewriteMethod {
    Prefix,
    Coref,
    PrefixCoref,
    Union,
    T5Input,
    T5,
}

#[derive(Args)]
struct RewriteArgs {
    #[arg(long)]
    topics: PathBuf,
    #[arg(long, value_enum)]
    method: RewriteMethod,
    /// Coreference clusters keyed by topic id.
    #[arg(long)]
    coref: Option<PathBuf>,
    #[command(flatten)]
    sidecar: RewriterArgs,
}

#[derive(Args, Clone)]
struct RewriterArgs {
    /// `sidecar` or `echo`.
    #[arg(long, default_value = "sidecar")]
    rewriter: String,
    /// Defaults to $CONVSEARCH_SIDECAR_URL.
    #[arg(long)]
    sidecar_url: Option<String>,
}

#[derive(Args, Clone)]
struct EmbedArgs {
    /// `synthetic`, `topical` or `sidecar`.
    #[arg(long, default_value = "synthetic")]
    embedder: String,
    #[arg(long, default_value_t = 768)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    embed_seed: u64,
    /// Noise weight of the topical synthetic embedder.
    #[arg(long, default_value_t = 0.3)]
    epsilon: f64,
    /// Persistent embedding cache file.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Defaults to $CONVSEARCH_SIDECAR_URL.
    #[arg(long)]
    sidecar_url: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    topics: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Grade scale of the qrels: zero_two or zero_four.
    #[arg(long, default_value = "zero_two")]
    scale: String,
    #[arg(long, default_value = "memnet")]
    head: String,
    /// Which query of each turn is paired with its passage.
    #[arg(long, default_value = "manual")]
    query_source: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Select batch size and learning rate by 5 seeded topic splits first.
    #[arg(long)]
    cv: bool,
    /// Written after each epoch.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    embed: EmbedArgs,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    topics: PathBuf,
    #[arg(long, default_value = "raw")]
    method: String,
    /// Trained head; without one the retrieval ranking is final.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    #[arg(long)]
    coref: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    rerank_depth: usize,
    #[arg(long, default_value = "convsearch")]
    tag: String,
    #[command(flatten)]
    retrieval: RetrievalArgs,
    #[command(flatten)]
    embed: EmbedArgs,
    #[arg(long, default_value = "sidecar")]
    rewriter: String,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value_t = 3)]
    ndcg_k: usize,
    #[arg(long, default_value_t = 1000)]
    recall_k: usize,
    #[arg(long, default_value = "exponential")]
    gain: String,
    /// Minimum relevant grade for MAP, MRR and recall.
    #[arg(long, default_value_t = 1)]
    threshold: i32,
    #[arg(long)]
    json: bool,
    /// Writes a per-depth CSV of this metric (e.g. ndcg@3).
    #[arg(long)]
    by_depth: Option<String>,
    #[arg(long)]
    by_depth_out: Option<PathBuf>,
}

#[derive(Args)]
struct BleuArgs {
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    references: PathBuf,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Mean memory attention per turn depth as CSV.
    Attention {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top-1 pair embeddings per turn as CSV.
    Embeddings {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn load_index(dir: &Path) -> Result<(InvertedIndex, DocStore)> {
    let index = InvertedIndex::load(dir)
        .with_context(|| format!("loading index from {}", dir.display()))?;
    let docs = DocStore::load(dir)?;
    Ok((index, docs))
}

fn read_qrels(path: &Path) -> Result<Qrels> {
    Qrels::read(path).with_context(|| format!("reading qrels {}", path.display()))
}

fn sidecar(url: Option<&str>) -> Result<SidecarClient> {
    let url = match url {
        Some(u) => u.to_string(),
        None => std::env::var(SIDECAR_URL_ENV).map_err(|_| {
            convsearch::Error::Config(format!("pass --sidecar-url or set {SIDECAR_URL_ENV}"))
        })?,
    };
    Ok(SidecarClient::connect(&url)?)
}

fn embedder(args: &EmbedArgs) -> Result<Box<dyn EmbeddingProvider>> {
    let inner: Box<dyn EmbeddingProvider> = match args.embedder.as_str() {
        "synthetic" => Box::new(SyntheticProvider::new(args.dim, args.embed_seed)?),
        "topical" => Box::new(SyntheticProvider::with_mode(
            args.dim,
            args.embed_seed,
            SyntheticMode::Topical {
                epsilon: args.epsilon,
            },
        )?),
        "sidecar" => Box::new(sidecar(args.sidecar_url.as_deref())?),
        other => {
            return Err(convsearch::Error::Config(format!("unknown embedder `{other}`")).into())
        }
    };
    Ok(match &args.cache {
        Some(p) => Box::new(CachedProvider::new(inner, EmbeddingCache::open(p)?)),
        None => inner,
    })
}

fn rewriter(kind: &str, url: Option<&str>) -> Result<Box<dyn Rewriter>> {
    match kind {
        "echo" => Ok(Box::new(EchoRewriter)),
        "sidecar" => Ok(Box::new(sidecar(url)?)),
        other => Err(convsearch::Error::Config(format!("unknown rewriter `{other}`")).into()),
    }
}

fn cmd_index(a: IndexArgs) -> Result<()> {
    let stemmer: Stemmer = a.stemmer.parse()?;
    let analysis = match &a.stopwords {
        Some(p) => AnalysisConfig::new(stemmer, AnalysisConfig::load_stopwords(p)?, true)?,
        None => AnalysisConfig::with_stemmer(stemmer),
    };
    let docs =
        read_corpus(&a.corpus).with_context(|| format!("reading corpus {}", a.corpus.display()))?;
    let index = build_index(docs.iter().cloned(), &analysis)?;
    std::fs::create_dir_all(&a.out)?;
    index.save(&a.out)?;
    DocStore::from_docs(&docs).save(&a.out)?;
    info!(
        "indexed {} documents, {} terms",
        index.doc_count(),
        index.term_count()
    );
    println!(
        "indexed {} documents into {}",
        index.doc_count(),
        a.out.display()
    );
    Ok(())
}

fn cmd_search(a: SearchArgs) -> Result<()> {
    let (index, _) = load_index(&a.index)?;
    let list = search(&index, &a.query, &a.retrieval.config()?, index.analysis())?;
    let mut out = std::io::stdout().lock();
    for (i, e) in list.entries.iter().enumerate() {
        writeln!(out, "{}\t{}\t{}", i + 1, e.doc_id, e.score)?;
    }
    Ok(())
}

fn cmd_rewrite(a: RewriteArgs) -> Result<()> {
    let topics =
        read_topics(&a.topics).with_context(|| format!("reading topics {}", a.topics.display()))?;
    let coref = a
        .coref
        .as_deref()
        .map(|p| read_coref(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let rw = match a.method {
        RewriteMethod::T5 => Some(rewriter(
            &a.sidecar.rewriter,
            a.sidecar.sidecar_url.as_deref(),
        )?),
        _ => None,
    };
    let mut out = std::io::stdout().lock();
    for mut conv in topics {
        for i in 1..=conv.len() {
            let clusters = || -> Result<_> {
                coref
                    .as_ref()
                    .and_then(|c| c.get(&conv.topic_id))
                    .ok_or_else(|| {
                        convsearch::Error::Config(format!(
                            "no clusters for topic {}",
                            conv.topic_id
                        ))
                        .into()
                    })
            };
            let value = match a.method {
                RewriteMethod::Prefix => serde_json::json!(prefix_rewrite(&conv, i)?),
                RewriteMethod::Coref => {
                    serde_json::json!(coref_pronoun_rewrite(&conv, i, clusters()?)?)
                }
                RewriteMethod::PrefixCoref => {
                    let resolved = coref_pronoun_rewrite(&conv, i, clusters()?)?;
                    if i == 1 {
                        serde_json::json!(resolved)
                    } else {
                        serde_json::json!(convsearch::rewrite::join_queries(
                            &conv.turns[0].raw_query,
                            &resolved
                        ))
                    }
                }
                RewriteMethod::Union => serde_json::json!(union_plan(&conv, i, QuerySource::Raw)?),
                RewriteMethod::T5Input => serde_json::json!(build_t5_input(&conv, i)?),
                RewriteMethod::T5 => {
                    let r = rw.as_deref().expect("rewriter built for t5");
                    let text = rewrite_via_provider(&RewriteRequest::for_turn(&conv, i)?, r)?;
                    conv.turn_mut(i)?.rewritten_query = Some(text.clone());
                    serde_json::json!(text)
                }
            };
            let line = serde_json::json!({ "turn_key": conv.turn_key(i), "rewrite": value });
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let (_, docs) = load_index(&a.index)?;
    let topics =
        read_topics(&a.topics).with_context(|| format!("reading topics {}", a.topics.display()))?;
    let scale: QrelScale = a.scale.parse()?;
    let set = QrelSet::new(read_qrels(&a.qrels)?, scale)?;
    let binary = binarize_qrels(&set)?;
    let kind: HeadKind = a.head.parse()?;
    let source: QuerySource =
        serde_json::from_value(serde_json::json!(a.query_source)).map_err(|_| {
            convsearch::Error::Config(format!("unknown query source `{}`", a.query_source))
        })?;

    let mut conversations = Vec::new();
    for t in &topics {
        if binary.get(&t.turn_key(1)).is_none() {
            warn!("topic {}: turn 1 has no judgments, skipped", t.topic_id);
            continue;
        }
        conversations.extend(sample_conversations(t, &binary, source, a.seed)?);
    }
    if conversations.is_empty() {
        bail!(convsearch::Error::Invalid(
            "no training conversations could be built".into()
        ));
    }
    info!("{} training conversations", conversations.len());
    let provider = embedder(&a.embed)?;
    let data = prepare_conversations(&conversations, &docs, provider.as_ref())?;

    let mut config = TrainConfig {
        batch_size: a.batch_size,
        adam: AdamConfig {
            learning_rate: a.lr,
            ..Default::default()
        },
        epochs: a.epochs,
        patience: a.patience,
        hidden: a.hidden,
        seed: a.seed,
        threshold: 0.5,
        checkpoint: a.checkpoint.clone(),
    };
    let mut cv_json = None;
    if a.cv {
        let cv = cross_validate(&data, kind, provider.dim(), &default_grid(), &config, 5)?;
        let GridPoint {
            batch_size,
            learning_rate,
        } = cv.selected;
        println!("selected batch size {batch_size}, learning rate {learning_rate}");
        config.batch_size = batch_size;
        config.adam.learning_rate = learning_rate;
        cv_json = Some(serde_json::to_value(&cv)?);
    }
    let outcome = fit(&data, None, kind, provider.dim(), &config)?;
    let mut params = outcome.params;
    if let (Some(meta), Some(cv)) = (params.metadata.as_object_mut(), cv_json) {
        meta.insert("cross_validation".into(), cv);
    }
    params.save(&a.out)?;
    if let Some(h) = &a.history {
        write_history(h, &outcome.history)?;
    }
    if let Some(last) = outcome.history.last() {
        println!(
            "epoch {}: loss {:.4}, f1 {:.4}",
            last.epoch, last.train_loss, last.train_f1
        );
    }
    println!("saved {} head to {}", kind, a.out.display());
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let (index, docs) = load_index(&a.index)?;
    let topics =
        read_topics(&a.topics).with_context(|| format!("reading topics {}", a.topics.display()))?;
    let method: QueryMethod = a.method.parse()?;
    let config = PipelineConfig {
        query_method: method,
        retrieval: a.retrieval.config()?,
        rerank_depth: a.rerank_depth,
        metrics: MetricConfig::default(),
        tag: a.tag.clone(),
    };
    let qrels = a.qrels.as_deref().map(read_qrels).transpose()?;
    let coref = a
        .coref
        .as_deref()
        .map(|p| read_coref(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let head = a
        .model
        .as_deref()
        .map(|p| HeadParams::load(p).with_context(|| format!("loading model {}", p.display())))
        .transpose()?;
    let provider = match &head {
        Some(_) => Some(embedder(&a.embed)?),
        None => None,
    };
    let rw = match method {
        QueryMethod::T5 | QueryMethod::T5Union => {
            Some(rewriter(&a.rewriter, a.embed.sidecar_url.as_deref())?)
        }
        _ => None,
    };
    let mut pipeline = Pipeline::new(&config, &index, &docs);
    if let (Some(h), Some(p)) = (&head, &provider) {
        pipeline = pipeline.with_head(h, p.as_ref());
    }
    if let Some(r) = &rw {
        pipeline = pipeline.with_rewriter(r.as_ref());
    }
    if let Some(c) = &coref {
        pipeline = pipeline.with_coref(c);
    }
    let out = pipeline.run_benchmark(&topics, qrels.as_ref())?;
    out.write(&a.out, &config.tag)?;
    if let Some(r) = &out.report {
        print!("{}", r.to_text());
    }
    for f in &out.failures {
        eprintln!(
            "topic {} failed at turn {}: {}",
            f.topic_id, f.turn, f.error
        );
    }
    println!("wrote {} turns to {}", out.run.len(), a.out.display());
    if !out.failures.is_empty() {
        bail!("{} topic(s) failed", out.failures.len());
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let run = read_run(&a.run).with_context(|| format!("reading run {}", a.run.display()))?;
    let qrels = read_qrels(&a.qrels)?;
    let gain: Gain = a.gain.parse()?;
    let cfg = MetricConfig {
        ndcg_k: a.ndcg_k,
        recall_k: a.recall_k,
        gain,
        threshold: a.threshold,
    };
    let report = evaluate(&run, &qrels, &cfg)?;
    if a.json {
        println!("{}", report.to_json()?);
    } else {
        print!("{}", report.to_text());
    }
    if let Some(m) = &a.by_depth {
        let metric: Metric = m.parse()?;
        let table = per_turn_breakdown(&run, &qrels, metric, a.threshold)?;
        write_breakdown_csv(output(a.by_depth_out.as_deref())?, &metric.name(), &table)?;
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f).lines().collect::<std::io::Result<_>>()?)
}

fn cmd_bleu(a: BleuArgs) -> Result<()> {
    let c = read_lines(&a.candidates)?;
    let r = read_lines(&a.references)?;
    println!("{:.2}", 100.0 * bleu4(&c, &r)?);
    Ok(())
}

fn cmd_analyze(c: AnalyzeCommand) -> Result<()> {
    match c {
        AnalyzeCommand::Attention { logs, out } => {
            let table = attention_by_depth(&read_turn_logs(&logs)?)?;
            write_attention_csv(output(out.as_deref())?, &table)?;
        }
        AnalyzeCommand::Embeddings { logs, out } => {
            let n = export_embeddings(output(out.as_deref())?, &read_turn_logs(&logs)?)?;
            info!("exported {n} embeddings");
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<convsearch::Error>() {
            return if e.is_input_error() { 1 } else { 2 };
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            return if e.kind() == std::io::ErrorKind::NotFound {
                1
            } else {
                2
            };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Index(a) => cmd_index(a),
        Command::Search(a) => cmd_search(a),
        Command::Rewrite(a) => cmd_rewrite(a),
        Command::Train(a) => cmd_train(a),
        Command::Run(a) => cmd_run(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Bleu(a) => cmd_bleu(a),
        Command::Analyze(c) => cmd_analyze(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
