//! End-to-end run: ingest, dialect scoring, document-term matrix, topic
//! model, covariate effects and reports, with a manifest of counts.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    build_dtm_from_tokens, collapse_labels, dedup, default_stopwords, load_corpus, load_stopwords, CorpusFormat,
    Document, LabeledCorpus, Stopwords,
};
use crate::dialect::{load_dialect_model, score_corpus, write_dialect_csv, DialectModel};
use crate::effects::{estimate_effects, export_coefficients, export_curves, predict_curves, EffectsConfig};
use crate::error::{Error, Result};
use crate::report::{all_top_words, top_document_rows, write_top_documents_csv, write_top_words_csv, Ranking};
use crate::stm::{
    build_design, fit, write_design_csv, write_model_json, write_posteriors_jsonl, write_theta_csv, StmConfig,
};

pub const MANIFEST_FORMAT: &str = "stmaudit-run";
pub const MANIFEST_VERSION: u32 = 1;

/// Estimation knobs of the topic model other than K and the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmSettings {
    pub max_em_iters: usize,
    pub em_rel_tol: f64,
    pub newton_max_iters: usize,
    pub newton_grad_tol: f64,
    pub ridge_lambda: f64,
    pub beta_pseudocount: f64,
}

impl Default for EmSettings {
    fn default() -> Self {
        let c = StmConfig::default();
        EmSettings {
            max_em_iters: c.max_em_iters,
            em_rel_tol: c.em_rel_tol,
            newton_max_iters: c.newton_max_iters,
            newton_grad_tol: c.newton_grad_tol,
            ridge_lambda: c.ridge_lambda,
            beta_pseudocount: c.beta_pseudocount,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EffectsSettings {
    pub draws: usize,
    pub sims: usize,
}

impl Default for EffectsSettings {
    fn default() -> Self {
        let c = EffectsConfig::default();
        EffectsSettings { draws: c.draws, sims: c.sims }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    /// `jsonl` or `csv`; taken from the corpus extension when absent.
    #[serde(default)]
    pub corpus_format: Option<String>,
    /// One stopword per line; the built-in English list when absent.
    #[serde(default)]
    pub stopwords: Option<PathBuf>,
    pub dialect_model: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default = "default_min_df")]
    pub min_df: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub em: EmSettings,
    #[serde(default)]
    pub effects: EffectsSettings,
    #[serde(default = "default_top")]
    pub top_words: usize,
    #[serde(default = "default_top")]
    pub top_documents: usize,
    /// Worker threads; results do not depend on it.
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_min_df() -> usize {
    5
}

fn default_k() -> usize {
    30
}

fn default_top() -> usize {
    10
}

impl PipelineConfig {
    pub fn new(corpus: PathBuf, dialect_model: PathBuf, output_dir: PathBuf) -> Self {
        PipelineConfig {
            corpus,
            corpus_format: None,
            stopwords: None,
            dialect_model,
            output_dir,
            min_df: default_min_df(),
            k: default_k(),
            seed: 0,
            em: EmSettings::default(),
            effects: EffectsSettings::default(),
            top_words: default_top(),
            top_documents: default_top(),
            threads: None,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn stm_config(&self) -> StmConfig {
        StmConfig {
            k: self.k,
            seed: self.seed,
            max_em_iters: self.em.max_em_iters,
            em_rel_tol: self.em.em_rel_tol,
            newton_max_iters: self.em.newton_max_iters,
            newton_grad_tol: self.em.newton_grad_tol,
            ridge_lambda: self.em.ridge_lambda,
            beta_pseudocount: self.em.beta_pseudocount,
        }
    }

    pub fn effects_config(&self) -> EffectsConfig {
        EffectsConfig { draws: self.effects.draws, sims: self.effects.sims, seed: self.seed }
    }

    pub fn corpus_format(&self) -> Result<CorpusFormat> {
        match &self.corpus_format {
            Some(f) => f.parse().map_err(Error::InvalidArgument),
            None => CorpusFormat::from_path(&self.corpus).ok_or_else(|| {
                Error::InvalidArgument(format!("cannot infer corpus format of {}", self.corpus.display()))
            }),
        }
    }

    /// Input paths that must exist and numeric settings that must be in range.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut inputs = vec![("corpus", &self.corpus), ("dialect model", &self.dialect_model)];
        if let Some(s) = &self.stopwords {
            inputs.push(("stopword list", s));
        }
        for (what, path) in inputs {
            if !path.is_file() {
                return Err(PipelineError::MissingPath { what, path: path.clone() });
            }
        }
        let stage = |source| PipelineError::Stage { stage: Stage::Config, source };
        if self.min_df == 0 {
            return Err(stage(Error::InvalidArgument("min_df must be at least 1".into())));
        }
        if self.top_words == 0 || self.top_documents == 0 {
            return Err(stage(Error::InvalidArgument("report sizes must be at least 1".into())));
        }
        if self.effects.draws > 0 && self.effects.sims == 0 {
            return Err(stage(Error::InvalidArgument("sims must be positive when draws are requested".into())));
        }
        self.stm_config().validate().map_err(stage)?;
        self.corpus_format().map_err(stage)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Dialect,
    Dtm,
    Design,
    Fit,
    Effects,
    Report,
    Manifest,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Dialect => "dialect",
            Stage::Dtm => "dtm",
            Stage::Design => "design",
            Stage::Fit => "fit",
            Stage::Effects => "effects",
            Stage::Report => "report",
            Stage::Manifest => "manifest",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{what} not found: {}", path.display())]
    MissingPath { what: &'static str, path: PathBuf },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Error,
    },
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            PipelineError::MissingPath { .. } => None,
        }
    }
}

/// Collapsed, de-duplicated corpus with normalized tokens.
#[derive(Clone, Debug)]
pub struct Ingested {
    pub docs_in: usize,
    pub spam_dropped: usize,
    pub duplicate_ids: Vec<String>,
    pub corpus: LabeledCorpus,
    pub tokens: Vec<Vec<String>>,
}

pub fn ingest(path: &Path, format: CorpusFormat, stopwords: &Stopwords) -> Result<Ingested> {
    let raw = load_corpus(path, format)?;
    let collapsed = collapse_labels(&raw)?;
    let spam_dropped = raw.len() - collapsed.len();
    let outcome = dedup(&collapsed, stopwords);
    Ok(Ingested {
        docs_in: raw.len(),
        spam_dropped,
        duplicate_ids: outcome.removed_ids,
        corpus: outcome.corpus,
        tokens: outcome.tokens,
    })
}

pub fn resolve_stopwords(path: Option<&Path>) -> Result<Stopwords> {
    match path {
        Some(p) => load_stopwords(p),
        None => Ok(default_stopwords()),
    }
}

/// One `{"id", "text", "label"}` object per line, readable by `load_corpus`.
pub fn write_documents_jsonl(path: &Path, documents: &[&Document]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for d in documents {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// CSV `doc_id,reason`.
pub fn write_dropped_csv(path: &Path, rows: &[(String, &'static str)]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "doc_id,reason").map_err(io)?;
    for (id, reason) in rows {
        writeln!(w, "{},{}", crate::dialect::csv_field(id), reason).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub docs_in: usize,
    pub spam_dropped: usize,
    pub duplicates_dropped: usize,
    pub unscoreable_dropped: usize,
    /// Documents left without tokens by vocabulary pruning.
    pub docs_pruned: usize,
    pub docs_final: usize,
    pub positive_final: usize,
    pub positive_share: f64,
    pub terms_before: usize,
    pub terms_retained: usize,
    pub terms_pruned: usize,
    pub tokens_before: u64,
    pub tokens_retained: u64,
    pub retained_token_fraction: f64,
}

impl Counts {
    /// `docs_final = docs_in − spam − duplicates − unscoreable − pruned`.
    pub fn identity_holds(&self) -> bool {
        self.docs_in
            .checked_sub(self.spam_dropped + self.duplicates_dropped + self.unscoreable_dropped + self.docs_pruned)
            == Some(self.docs_final)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub k: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: PipelineConfig,
    pub counts: Counts,
    pub fit: FitSummary,
    /// Artifact file name → SHA-256 of its contents.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Run every stage, writing artifacts into `config.output_dir` as each
/// stage completes.
pub fn run_pipeline(config: &PipelineConfig) -> Result<Manifest, PipelineError> {
    config.validate()?;
    let at = |stage: Stage| move |source: Error| PipelineError::Stage { stage, source };
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| at(Stage::Config)(Error::io(out, e)))?;
    let mut written: Vec<&'static str> = Vec::new();

    let stopwords = resolve_stopwords(config.stopwords.as_deref()).map_err(at(Stage::Ingest))?;
    let format = config.corpus_format().map_err(at(Stage::Config))?;
    let ingested = ingest(&config.corpus, format, &stopwords).map_err(at(Stage::Ingest))?;

    let model: DialectModel<f64> = load_dialect_model(&config.dialect_model).map_err(at(Stage::Dialect))?;
    let ids: Vec<String> = ingested.corpus.documents().iter().map(|d| d.id.clone()).collect();
    let scores = score_corpus(&model, &ids, &ingested.tokens).map_err(at(Stage::Dialect))?;
    write_dialect_csv(&out.join("dialect.csv"), &model, &scores.posteriors).map_err(at(Stage::Dialect))?;
    written.push("dialect.csv");

    let unscoreable: HashSet<&str> = scores.dropped_doc_ids.iter().map(String::as_str).collect();
    let scored: Vec<usize> = (0..ids.len()).filter(|&i| !unscoreable.contains(ids[i].as_str())).collect();
    let scored_ids: Vec<String> = scored.iter().map(|&i| ids[i].clone()).collect();
    let scored_tokens: Vec<Vec<String>> = scored.iter().map(|&i| ingested.tokens[i].clone()).collect();
    let build = build_dtm_from_tokens(&scored_ids, &scored_tokens, config.min_df).map_err(at(Stage::Dtm))?;
    build.dtm.write_dir(out).map_err(at(Stage::Dtm))?;
    written.extend(["dtm.mtx", "vocab.txt", "doc_ids.txt"]);

    // DTM row r is scored document kept_indices[r], whose posterior has the same index.
    let docs = ingested.corpus.documents();
    let final_docs: Vec<&Document> = build.kept_indices.iter().map(|&j| &docs[scored[j]]).collect();
    let labels: Vec<_> = final_docs
        .iter()
        .map(|d| d.label.binary().ok_or_else(|| Error::Internal(format!("{} is spam after collapsing", d.id))))
        .collect::<Result<_>>()
        .map_err(at(Stage::Design))?;
    let p_aae: Vec<f64> = build.kept_indices.iter().map(|&j| scores.posteriors[j].p_aae).collect();
    let design = build_design(&labels, &p_aae).map_err(at(Stage::Design))?;
    let doc_ids = build.dtm.doc_ids().to_vec();
    write_documents_jsonl(&out.join("documents.jsonl"), &final_docs).map_err(at(Stage::Design))?;
    write_design_csv(&out.join("design.csv"), &doc_ids, &design).map_err(at(Stage::Design))?;
    written.extend(["documents.jsonl", "design.csv"]);

    let mut dropped: Vec<(String, &'static str)> = Vec::new();
    dropped.extend(ingested.duplicate_ids.iter().map(|id| (id.clone(), "duplicate")));
    dropped.extend(scores.dropped_doc_ids.iter().map(|id| (id.clone(), "unscoreable")));
    dropped.extend(build.dropped_doc_ids.iter().map(|id| (id.clone(), "pruned")));
    write_dropped_csv(&out.join("dropped.csv"), &dropped).map_err(at(Stage::Design))?;
    written.push("dropped.csv");

    let fitted = fit(&build.dtm, &design, &config.stm_config()).map_err(at(Stage::Fit))?;
    let vocab = build.dtm.vocabulary();
    write_model_json(&out.join("model.json"), &fitted, vocab).map_err(at(Stage::Fit))?;
    write_posteriors_jsonl(&out.join("posteriors.jsonl"), &doc_ids, &fitted.posteriors).map_err(at(Stage::Fit))?;
    write_theta_csv(&out.join("theta.csv"), &doc_ids, &fitted.posteriors).map_err(at(Stage::Fit))?;
    written.extend(["model.json", "posteriors.jsonl", "theta.csv"]);

    let topics: Vec<usize> = (0..fitted.n_topics()).collect();
    let effects = estimate_effects(&fitted.posteriors, &design, &topics, &config.effects_config())
        .map_err(at(Stage::Effects))?;
    export_coefficients(&effects, &out.join("effects_coef.csv")).map_err(at(Stage::Effects))?;
    export_curves(&predict_curves(&effects), &out.join("effects_curves.csv")).map_err(at(Stage::Effects))?;
    written.extend(["effects_coef.csv", "effects_curves.csv"]);

    let tables = [Ranking::Probability, Ranking::frex()]
        .into_iter()
        .map(|r| all_top_words(&fitted.model, vocab, config.top_words, r).map(|t| (r, t)))
        .collect::<Result<Vec<_>>>()
        .map_err(at(Stage::Report))?;
    write_top_words_csv(&out.join("top_words.csv"), &tables).map_err(at(Stage::Report))?;
    let text: HashMap<&str, &str> = final_docs.iter().map(|d| (d.id.as_str(), d.text.as_str())).collect();
    let rows = top_document_rows(&fitted.posteriors, &doc_ids, |id| text.get(id).map(|s| s.to_string()), config.top_documents)
        .map_err(at(Stage::Report))?;
    write_top_documents_csv(&out.join("top_documents.csv"), &rows).map_err(at(Stage::Report))?;
    written.extend(["top_words.csv", "top_documents.csv"]);

    let positive_final = labels.iter().filter(|l| l.indicator() == 1.0).count();
    let docs_final = build.dtm.n_docs();
    let counts = Counts {
        docs_in: ingested.docs_in,
        spam_dropped: ingested.spam_dropped,
        duplicates_dropped: ingested.duplicate_ids.len(),
        unscoreable_dropped: scores.dropped_doc_ids.len(),
        docs_pruned: build.dropped_doc_ids.len(),
        docs_final,
        positive_final,
        positive_share: positive_final as f64 / docs_final as f64,
        terms_before: build.stats.terms_before,
        terms_retained: build.stats.terms_retained,
        terms_pruned: build.stats.terms_pruned(),
        tokens_before: build.stats.tokens_before,
        tokens_retained: build.stats.tokens_retained,
        retained_token_fraction: build.stats.retained_token_fraction(),
    };
    if !counts.identity_holds() {
        return Err(at(Stage::Manifest)(Error::Internal(format!("document counts do not add up: {counts:?}"))));
    }
    let mut artifacts = BTreeMap::new();
    for name in written {
        let hash = sha256_file(&out.join(name)).map_err(at(Stage::Manifest))?;
        artifacts.insert(name.to_string(), hash);
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        config: config.clone(),
        counts,
        fit: FitSummary {
            k: fitted.n_topics(),
            iterations: fitted.iterations(),
            converged: fitted.converged,
            final_objective: fitted.elbo_trace.last().copied().unwrap_or(f64::NAN),
        },
        artifacts,
    };
    let path = out.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| at(Stage::Manifest)(e.into()))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| at(Stage::Manifest)(Error::io(&path, e)))?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
