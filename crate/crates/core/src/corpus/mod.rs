//! Corpus ingestion: loading annotated documents, collapsing the label
//! scheme, de-duplication, text normalization and the document-term matrix.

mod dtm;
mod normalize;

use std::collections::hash_map::Entry;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dtm::{build_dtm, build_dtm_from_tokens, DocumentTermMatrix, DtmBuild, PruneStats};
pub use normalize::{
    default_stopwords, load_stopwords, normalize_text, Stopwords, MENTION_PLACEHOLDER,
    URL_PLACEHOLDER,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Abusive,
    Hateful,
    Normal,
    Spam,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Abusive => "abusive",
            Label::Hateful => "hateful",
            Label::Normal => "normal",
            Label::Spam => "spam",
        }
    }

    /// Binary view of a raw label. Spam has none.
    pub fn binary(self) -> Option<BinaryLabel> {
        match self {
            Label::Abusive | Label::Hateful => Some(BinaryLabel::Positive),
            Label::Normal => Some(BinaryLabel::Normal),
            Label::Spam => None,
        }
    }
}

impl FromStr for Label {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "abusive" => Ok(Label::Abusive),
            "hateful" => Ok(Label::Hateful),
            "normal" => Ok(Label::Normal),
            "spam" => Ok(Label::Spam),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Abusive-or-hateful versus normal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryLabel {
    Positive,
    Normal,
}

impl BinaryLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            BinaryLabel::Positive => "positive",
            BinaryLabel::Normal => "normal",
        }
    }

    pub fn indicator(self) -> f64 {
        match self {
            BinaryLabel::Positive => 1.0,
            BinaryLabel::Normal => 0.0,
        }
    }
}

impl FromStr for BinaryLabel {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "1" => Ok(BinaryLabel::Positive),
            "normal" | "0" => Ok(BinaryLabel::Normal),
            _ => Err(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelScheme {
    Raw4,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub label: Label,
}

/// Ordered documents plus the label scheme they are interpreted under. In the
/// binary scheme the raw label is kept (so hateful and abusive stay
/// distinguishable for auditing) but no document is spam.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledCorpus {
    documents: Vec<Document>,
    scheme: LabelScheme,
}

impl LabeledCorpus {
    pub fn new(documents: Vec<Document>, scheme: LabelScheme) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for (i, d) in documents.iter().enumerate() {
            if !seen.insert(d.id.as_str()) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate document id {:?}", d.id),
                });
            }
            if scheme == LabelScheme::Binary && d.label == Label::Spam {
                return Err(Error::InvalidScheme(format!(
                    "document {:?} is spam in a binary corpus",
                    d.id
                )));
            }
        }
        Ok(LabeledCorpus { documents, scheme })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn scheme(&self) -> LabelScheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.documents.iter().filter(|d| d.label == label).count()
    }

    /// Binary labels in document order; only valid for a binary corpus.
    pub fn binary_labels(&self) -> Result<Vec<BinaryLabel>> {
        if self.scheme != LabelScheme::Binary {
            return Err(Error::InvalidScheme("corpus is not in the binary scheme".into()));
        }
        Ok(self
            .documents
            .iter()
            .map(|d| d.label.binary().expect("binary corpus has no spam"))
            .collect())
    }

    /// Keep only documents whose id is in `keep`, preserving order.
    pub fn retain_ids(&self, keep: &HashSet<&str>) -> LabeledCorpus {
        LabeledCorpus {
            documents: self
                .documents
                .iter()
                .filter(|d| keep.contains(d.id.as_str()))
                .cloned()
                .collect(),
            scheme: self.scheme,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "jsonl" | "ndjson" | "json" => Some(CorpusFormat::Jsonl),
            "csv" => Some(CorpusFormat::Csv),
            _ => None,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "csv" => Ok(CorpusFormat::Csv),
            other => Err(format!("unknown corpus format {other:?}")),
        }
    }
}

fn parse_label(raw: &str, line: usize) -> Result<Label> {
    raw.parse().map_err(|_| Error::InvalidLabel { line, label: raw.to_string() })
}

fn json_field(obj: &serde_json::Map<String, serde_json::Value>, key: &str, line: usize) -> Result<String> {
    match obj.get(key) {
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
        Some(_) => Err(Error::Parse { line, message: format!("field {key:?} is not a string") }),
        None => Err(Error::Parse { line, message: format!("missing field {key:?}") }),
    }
}

/// Load an annotated corpus in the raw four-label scheme. Input order is kept.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<LabeledCorpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let documents = match format {
        CorpusFormat::Jsonl => {
            let mut docs = Vec::new();
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line_no = i + 1;
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let value: serde_json::Value = serde_json::from_str(&line)
                    .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
                let obj = value.as_object().ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: "record is not a JSON object".into(),
                })?;
                let id = json_field(obj, "id", line_no)?;
                let text = json_field(obj, "text", line_no)?;
                let label = parse_label(&json_field(obj, "label", line_no)?, line_no)?;
                docs.push(Document { id, text, label });
            }
            docs
        }
        CorpusFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
            let headers = rdr.headers()?.clone();
            let col = |name: &str| -> Result<usize> {
                headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Parse {
                    line: 1,
                    message: format!("missing column {name:?}"),
                })
            };
            let (id_col, text_col, label_col) = (col("id")?, col("text")?, col("label")?);
            let mut docs = Vec::new();
            for rec in rdr.records() {
                let rec = rec?;
                let line_no = rec.position().map(|p| p.line() as usize).unwrap_or(0);
                let get = |c: usize, name: &str| -> Result<String> {
                    rec.get(c).map(str::to_string).ok_or_else(|| Error::Parse {
                        line: line_no,
                        message: format!("missing field {name:?}"),
                    })
                };
                let label = parse_label(&get(label_col, "label")?, line_no)?;
                docs.push(Document { id: get(id_col, "id")?, text: get(text_col, "text")?, label });
            }
            docs
        }
    };
    if documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    LabeledCorpus::new(documents, LabelScheme::Raw4)
}

/// Drop spam and fold hateful and abusive into a single positive class.
pub fn collapse_labels(corpus: &LabeledCorpus) -> Result<LabeledCorpus> {
    if corpus.scheme != LabelScheme::Raw4 {
        return Err(Error::InvalidScheme("corpus is already binary".into()));
    }
    let documents: Vec<Document> = corpus
        .documents
        .iter()
        .filter(|d| d.label != Label::Spam)
        .cloned()
        .collect();
    if documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(LabeledCorpus { documents, scheme: LabelScheme::Binary })
}

#[derive(Clone, Debug)]
pub struct DedupOutcome {
    pub corpus: LabeledCorpus,
    /// Normalized tokens of each surviving document, aligned with `corpus`.
    pub tokens: Vec<Vec<String>>,
    pub removed_ids: Vec<String>,
}

impl DedupOutcome {
    pub fn removed(&self) -> usize {
        self.removed_ids.len()
    }
}

/// Remove documents whose normalized text repeats an earlier document's,
/// keeping the first occurrence.
pub fn dedup(corpus: &LabeledCorpus, stopwords: &Stopwords) -> DedupOutcome {
    let tokens: Vec<Vec<String>> = corpus
        .documents
        .par_iter()
        .map(|d| normalize_text(&d.text, stopwords))
        .collect();
    let mut first_seen: HashMap<String, usize> = HashMap::with_capacity(tokens.len());
    let mut kept_docs = Vec::new();
    let mut kept_tokens = Vec::new();
    let mut removed_ids = Vec::new();
    for (i, (doc, toks)) in corpus.documents.iter().zip(tokens).enumerate() {
        let key = toks.join(" ");
        if let Entry::Vacant(e) = first_seen.entry(key) {
            e.insert(i);
            kept_docs.push(doc.clone());
            kept_tokens.push(toks);
        } else {
            removed_ids.push(doc.id.clone());
        }
    }
    DedupOutcome {
        corpus: LabeledCorpus { documents: kept_docs, scheme: corpus.scheme },
        tokens: kept_tokens,
        removed_ids,
    }
}
