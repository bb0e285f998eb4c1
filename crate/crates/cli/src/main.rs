use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use stmaudit::corpus::{build_dtm_from_tokens, load_corpus, normalize_text, CorpusFormat, DocumentTermMatrix};
use stmaudit::dialect::{load_dialect_model, read_dialect_csv, score_corpus, write_dialect_csv};
use stmaudit::effects::{estimate_effects, export_coefficients, export_curves, parse_topics, predict_curves, EffectsConfig};
use stmaudit::pipeline::{
    ingest, resolve_stopwords, run_pipeline, write_documents_jsonl, write_dropped_csv, PipelineConfig,
};
use stmaudit::report::{all_top_words, top_document_rows, write_top_documents_csv, write_top_words_csv, Ranking};
use stmaudit::selection::{search_k, write_searchk_csv, write_searchk_topics_csv, SearchOptions};
use stmaudit::stm::{
    build_design, fit, read_design_csv, read_model_json, read_posteriors_jsonl, write_design_csv, write_model_json,
    write_posteriors_jsonl, write_theta_csv, StmConfig,
};
use stmaudit::synth::{generate_corpus, write_truth_json, SynthShape};
use stmaudit::{DialectModel, DocPosterior, GroundTruth, PrevalenceDesign};

#[derive(Parser)]
#[command(name = "stmaudit", version, about = "Topic-model audits of annotated corpora for dialect-correlated labels")]
struct Cli {
    /// Worker threads (results are identical for any count).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collapse labels, de-duplicate, normalize and build the document-term matrix.
    Ingest(IngestArgs),
    /// Score documents with a dialect mixture model.
    Dialect(DialectArgs),
    /// Fit a structural topic model.
    Fit(FitArgs),
    /// Compare diagnostics across numbers of topics.
    Searchk(SearchkArgs),
    /// Regress topic proportions on label and P(AAE).
    Effects(EffectsArgs),
    /// Top words and documents per topic.
    Report(ReportArgs),
    /// Run the full pipeline from a JSON config.
    Run(RunArgs),
    /// Generate a synthetic corpus from known parameters.
    Synth(SynthArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// jsonl or csv; inferred from the extension by default.
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    min_df: usize,
    /// Drop documents this model cannot score before building the matrix.
    #[arg(long)]
    dialect_model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DialectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Corpus (JSONL or CSV with id, text, label).
    #[arg(long)]
    documents: PathBuf,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Where the prevalence covariates come from.
#[derive(Args)]
struct DesignSource {
    /// Design CSV keyed by doc_id.
    #[arg(long, conflicts_with_all = ["documents", "dialect"])]
    design: Option<PathBuf>,
    /// Corpus providing labels, paired with --dialect.
    #[arg(long, requires = "dialect")]
    documents: Option<PathBuf>,
    /// Dialect CSV providing P(AAE), paired with --documents.
    #[arg(long, requires = "documents")]
    dialect: Option<PathBuf>,
}

#[derive(Args)]
struct EmArgs {
    #[arg(long, default_value_t = 30)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    pseudocount: Option<f64>,
}

impl EmArgs {
    fn config(&self) -> StmConfig {
        let mut c = StmConfig { k: self.k, seed: self.seed, ..StmConfig::default() };
        if let Some(v) = self.max_iters {
            c.max_em_iters = v;
        }
        if let Some(v) = self.tol {
            c.em_rel_tol = v;
        }
        if let Some(v) = self.pseudocount {
            c.beta_pseudocount = v;
        }
        c
    }
}

#[derive(Args)]
struct FitArgs {
    /// Directory with dtm.mtx, vocab.txt and doc_ids.txt.
    #[arg(long)]
    dtm: PathBuf,
    #[command(flatten)]
    design: DesignSource,
    #[command(flatten)]
    em: EmArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SearchkArgs {
    #[arg(long)]
    dtm: PathBuf,
    #[command(flatten)]
    design: DesignSource,
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50,60")]
    k_list: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    holdout_frac: f64,
    #[arg(long)]
    out: PathBuf,
    /// Optional per-topic coherence and exclusivity table.
    #[arg(long)]
    topics_out: Option<PathBuf>,
}

#[derive(Args)]
struct EffectsArgs {
    /// Output directory of `fit` (posteriors.jsonl and design.csv).
    #[arg(long)]
    run: PathBuf,
    /// `all` or 1-based topic numbers, e.g. 1,4,20.
    #[arg(long, default_value = "all")]
    topics: String,
    #[arg(long, default_value_t = 500)]
    sims: usize,
    #[arg(long, default_value_t = 25)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value_t = 10)]
    top_words: usize,
    #[arg(long, default_value_t = 10)]
    top_docs: usize,
    /// probability, frex or both.
    #[arg(long, default_value = "both")]
    ranking: String,
    /// Corpus to take document text from.
    #[arg(long)]
    documents: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    d: usize,
    #[arg(long, default_value_t = 500)]
    v: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 60.0)]
    mean_length: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// 1-based topic receiving a planted interaction coefficient.
    #[arg(long)]
    planted_topic: Option<usize>,
    #[arg(long, default_value_t = 2.0)]
    planted_coef: f64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Dialect(a) => cmd_dialect(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Searchk(a) => cmd_searchk(a),
        Command::Effects(a) => cmd_effects(a),
        Command::Report(a) => cmd_report(a),
        Command::Run(a) => cmd_run(a, cli.threads),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn corpus_format(path: &Path, explicit: Option<&str>) -> Result<CorpusFormat> {
    match explicit {
        Some(f) => f.parse().map_err(anyhow::Error::msg),
        None => CorpusFormat::from_path(path)
            .with_context(|| format!("cannot infer the format of {}; pass --format", path.display())),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let format = corpus_format(&a.corpus, a.format.as_deref())?;
    let stopwords = resolve_stopwords(a.stopwords.as_deref())?;
    let ing = ingest(&a.corpus, format, &stopwords).context("ingest")?;
    create_dir(&a.out)?;
    let ids: Vec<String> = ing.corpus.documents().iter().map(|d| d.id.clone()).collect();

    let mut keep: Vec<usize> = (0..ids.len()).collect();
    let mut dropped: Vec<(String, &'static str)> = ing.duplicate_ids.iter().map(|id| (id.clone(), "duplicate")).collect();
    if let Some(path) = &a.dialect_model {
        let model: DialectModel = load_dialect_model(path).context("loading dialect model")?;
        let scores = score_corpus(&model, &ids, &ing.tokens).context("dialect scoring")?;
        write_dialect_csv(&a.out.join("dialect.csv"), &model, &scores.posteriors)?;
        let bad: std::collections::HashSet<&str> = scores.dropped_doc_ids.iter().map(String::as_str).collect();
        keep.retain(|&i| !bad.contains(ids[i].as_str()));
        dropped.extend(scores.dropped_doc_ids.iter().map(|id| (id.clone(), "unscoreable")));
    }
    let kept_ids: Vec<String> = keep.iter().map(|&i| ids[i].clone()).collect();
    let kept_tokens: Vec<Vec<String>> = keep.iter().map(|&i| ing.tokens[i].clone()).collect();
    let build = build_dtm_from_tokens(&kept_ids, &kept_tokens, a.min_df).context("building the document-term matrix")?;
    build.dtm.write_dir(&a.out)?;
    dropped.extend(build.dropped_doc_ids.iter().map(|id| (id.clone(), "pruned")));
    write_dropped_csv(&a.out.join("dropped.csv"), &dropped)?;
    let docs = ing.corpus.documents();
    let final_docs: Vec<_> = build.kept_indices.iter().map(|&j| &docs[keep[j]]).collect();
    write_documents_jsonl(&a.out.join("documents.jsonl"), &final_docs)?;

    eprintln!(
        "{} documents in, {} spam, {} duplicates, {} dropped later; {} documents x {} terms ({} pruned, {:.4} of tokens kept)",
        ing.docs_in,
        ing.spam_dropped,
        ing.duplicate_ids.len(),
        kept_ids.len() - build.dtm.n_docs() + (ids.len() - keep.len()),
        build.dtm.n_docs(),
        build.dtm.n_terms(),
        build.stats.terms_pruned(),
        build.stats.retained_token_fraction()
    );
    Ok(())
}

fn cmd_dialect(a: DialectArgs) -> Result<()> {
    let format = corpus_format(&a.documents, a.format.as_deref())?;
    let corpus = load_corpus(&a.documents, format)?;
    let stopwords = resolve_stopwords(a.stopwords.as_deref())?;
    let model: DialectModel = load_dialect_model(&a.model).context("loading dialect model")?;
    let ids: Vec<String> = corpus.documents().iter().map(|d| d.id.clone()).collect();
    let tokens: Vec<Vec<String>> = corpus.documents().iter().map(|d| normalize_text(&d.text, &stopwords)).collect();
    let scores = score_corpus(&model, &ids, &tokens)?;
    write_dialect_csv(&a.out, &model, &scores.posteriors)?;
    eprintln!("scored {} documents, {} unscoreable", scores.posteriors.len(), scores.dropped_doc_ids.len());
    Ok(())
}

/// DTM rows and design rows matched by document id. Rows without
/// covariates are dropped.
fn load_aligned(dtm_dir: &Path, src: &DesignSource) -> Result<(DocumentTermMatrix, PrevalenceDesign)> {
    let dtm = DocumentTermMatrix::read_dir(dtm_dir).with_context(|| format!("reading {}", dtm_dir.display()))?;
    let (ids, design): (Vec<String>, PrevalenceDesign) = match (&src.design, &src.documents, &src.dialect) {
        (Some(path), _, _) => read_design_csv(path).with_context(|| format!("reading {}", path.display()))?,
        (None, Some(docs), Some(dialect)) => {
            let corpus = load_corpus(docs, corpus_format(docs, None)?)?;
            let rows = read_dialect_csv(dialect)?;
            let p: HashMap<&str, f64> = rows.iter().map(|r| (r.doc_id.as_str(), r.p_aae())).collect();
            let mut ids = Vec::new();
            let mut labels = Vec::new();
            let mut probs = Vec::new();
            for d in corpus.documents() {
                if let (Some(label), Some(&pa)) = (d.label.binary(), p.get(d.id.as_str())) {
                    ids.push(d.id.clone());
                    labels.push(label);
                    probs.push(pa);
                }
            }
            let design = build_design(&labels, &probs)?;
            (ids, design)
        }
        _ => bail!("give either --design or both --documents and --dialect"),
    };
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut rows = Vec::new();
    let mut design_rows = Vec::new();
    for (r, id) in dtm.doc_ids().iter().enumerate() {
        if let Some(&i) = index.get(id.as_str()) {
            rows.push(r);
            design_rows.push(i);
        }
    }
    if rows.is_empty() {
        bail!("no document of the matrix has covariates");
    }
    if rows.len() < dtm.n_docs() {
        eprintln!("dropping {} documents without covariates", dtm.n_docs() - rows.len());
    }
    Ok((dtm.select_rows(&rows), design.select_rows(&design_rows)))
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let (dtm, design) = load_aligned(&a.dtm, &a.design)?;
    let config = a.em.config();
    let fitted = fit(&dtm, &design, &config).context("fitting the topic model")?;
    create_dir(&a.out)?;
    dtm.write_dir(&a.out)?;
    let ids = dtm.doc_ids();
    write_design_csv(&a.out.join("design.csv"), ids, &design)?;
    write_model_json(&a.out.join("model.json"), &fitted, dtm.vocabulary())?;
    write_posteriors_jsonl(&a.out.join("posteriors.jsonl"), ids, &fitted.posteriors)?;
    write_theta_csv(&a.out.join("theta.csv"), ids, &fitted.posteriors)?;
    eprintln!(
        "K={} on {} documents: {} iterations, {}, objective {:.6}",
        config.k,
        dtm.n_docs(),
        fitted.iterations(),
        if fitted.converged { "converged" } else { "not converged" },
        fitted.elbo_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_searchk(a: SearchkArgs) -> Result<()> {
    let (dtm, design) = load_aligned(&a.dtm, &a.design)?;
    let mut config = StmConfig { seed: a.seed, ..StmConfig::default() };
    if let Some(v) = a.max_iters {
        config.max_em_iters = v;
    }
    if let Some(v) = a.tol {
        config.em_rel_tol = v;
    }
    let options = SearchOptions { holdout_frac: a.holdout_frac, ..SearchOptions::default() };
    let results = search_k(&dtm, &design, &a.k_list, &config, &options)?;
    let mut rows = Vec::new();
    for (k, r) in results {
        match r {
            Ok(d) => rows.push(d),
            Err(e) => eprintln!("K={k} failed: {e}"),
        }
    }
    write_searchk_csv(&a.out, &rows)?;
    if let Some(path) = &a.topics_out {
        write_searchk_topics_csv(path, &rows)?;
    }
    println!("k,heldout,residuals,coherence,exclusivity");
    for r in &rows {
        println!(
            "{},{:.6},{:.6},{:.6},{:.6}",
            r.k, r.heldout_loglik_per_token, r.residual_dispersion, r.mean_semantic_coherence, r.mean_exclusivity
        );
    }
    if rows.is_empty() {
        bail!("every K failed");
    }
    Ok(())
}

fn load_posteriors(run: &Path) -> Result<(Vec<String>, Vec<DocPosterior>)> {
    let path = run.join("posteriors.jsonl");
    let stored = read_posteriors_jsonl(&path).with_context(|| format!("reading {}", path.display()))?;
    let ids = stored.iter().map(|s| s.doc_id.clone()).collect();
    let posts = stored.iter().map(|s| s.to_posterior()).collect::<stmaudit::Result<Vec<_>>>()?;
    Ok((ids, posts))
}

fn cmd_effects(a: EffectsArgs) -> Result<()> {
    let (ids, posts) = load_posteriors(&a.run)?;
    let (design_ids, design): (Vec<String>, PrevalenceDesign) = read_design_csv(&a.run.join("design.csv"))?;
    if ids != design_ids {
        bail!("posteriors and design.csv list different documents");
    }
    let k = posts.first().map_or(0, |p| p.theta.len());
    let topics = parse_topics(&a.topics, k)?;
    let config = EffectsConfig { draws: a.draws, sims: a.sims, seed: a.seed };
    let effects = estimate_effects(&posts, &design, &topics, &config)?;
    let out = a.out.unwrap_or(a.run);
    create_dir(&out)?;
    export_coefficients(&effects, &out.join("effects_coef.csv"))?;
    export_curves(&predict_curves(&effects), &out.join("effects_curves.csv"))?;
    println!("topic,b0,b1,b2,b3,b3_lo,b3_hi");
    for e in &effects {
        let (lo, hi) = e.interval(3, 0.95);
        println!(
            "{},{:.5},{:.5},{:.5},{:.5},{:.5},{:.5}",
            e.topic + 1,
            e.coef[0],
            e.coef[1],
            e.coef[2],
            e.coef[3],
            lo,
            hi
        );
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let file = read_model_json(&a.run.join("model.json"))?;
    let dtm = DocumentTermMatrix::read_dir(&a.run)?;
    file.check_vocabulary(dtm.vocabulary())?;
    let model = file.model::<f64>()?;
    let rankings = match a.ranking.as_str() {
        "both" => vec![Ranking::Probability, Ranking::frex()],
        other => vec![other.parse::<Ranking>().map_err(anyhow::Error::msg)?],
    };
    let mut tables = Vec::new();
    for r in rankings {
        tables.push((r, all_top_words(&model, dtm.vocabulary(), a.top_words, r)?));
    }
    let (ids, posts) = load_posteriors(&a.run)?;
    let text: HashMap<String, String> = match &a.documents {
        Some(p) => load_corpus(p, corpus_format(p, None)?)?
            .documents()
            .iter()
            .map(|d| (d.id.clone(), d.text.clone()))
            .collect(),
        None => HashMap::new(),
    };
    let rows = top_document_rows(&posts, &ids, |id| text.get(id).cloned(), a.top_docs)?;
    let out = a.out.unwrap_or(a.run);
    create_dir(&out)?;
    write_top_words_csv(&out.join("top_words.csv"), &tables)?;
    write_top_documents_csv(&out.join("top_documents.csv"), &rows)?;
    for k in 0..model.n_topics() {
        for (r, t) in &tables {
            println!("topic {:>2} {:<11} {}", k + 1, r.name(), t[k].join(" "));
        }
    }
    Ok(())
}

fn cmd_run(a: RunArgs, threads: Option<usize>) -> Result<()> {
    let mut config = PipelineConfig::from_json_file(&a.config)
        .with_context(|| format!("reading config {}", a.config.display()))?;
    if let Some(k) = a.k {
        config.k = k;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(m) = a.max_iters {
        config.em.max_em_iters = m;
    }
    if let Some(o) = a.out {
        config.output_dir = o;
    }
    if threads.is_none() {
        if let Some(n) = config.threads {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
        }
    }
    let manifest = run_pipeline(&config)?;
    let c = &manifest.counts;
    eprintln!(
        "{} in, {} spam, {} duplicates, {} unscoreable, {} pruned; {} final ({:.1}% positive), {} terms",
        c.docs_in,
        c.spam_dropped,
        c.duplicates_dropped,
        c.unscoreable_dropped,
        c.docs_pruned,
        c.docs_final,
        100.0 * c.positive_share,
        c.terms_retained
    );
    eprintln!("artifacts in {}", config.output_dir.display());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let shape = SynthShape { docs: a.d, terms: a.v, topics: a.k, mean_length: a.mean_length, ..SynthShape::default() };
    let mut truth: GroundTruth = GroundTruth::sample(&shape, a.seed)?;
    if let Some(t) = a.planted_topic {
        if t == 0 || t >= a.k {
            bail!("planted topic must be in 1..{} (topic {} is the reference)", a.k, a.k);
        }
        truth = truth.with_planted_interaction(t - 1, a.planted_coef);
    }
    let corpus = generate_corpus(&truth, a.seed)?;
    create_dir(&a.out)?;
    corpus.dtm.write_dir(&a.out)?;
    write_design_csv(&a.out.join("design.csv"), corpus.dtm.doc_ids(), &truth.design_true)?;
    write_truth_json(&a.out.join("truth.json"), &truth)?;
    eprintln!("{} documents, {} terms, {} tokens", corpus.dtm.n_docs(), corpus.dtm.n_terms(), corpus.dtm.total_tokens());
    Ok(())
}
