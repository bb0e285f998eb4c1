//! Topic inspection: highest-ranked words and documents per topic.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dialect::csv_field;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::selection::frex_matrix;
use crate::stm::{DocPosterior, StmModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Ranking {
    Probability,
    Frex { weight: f64 },
}

impl Ranking {
    pub fn frex() -> Self {
        Ranking::Frex { weight: 0.7 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Ranking::Probability => "probability",
            Ranking::Frex { .. } => "frex",
        }
    }
}

impl std::str::FromStr for Ranking {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "probability" | "prob" => Ok(Ranking::Probability),
            "frex" => Ok(Ranking::frex()),
            other => Err(format!("unknown ranking {other:?} (expected probability or frex)")),
        }
    }
}

/// Indices of the `m` largest scores, ties by ascending index.
pub fn top_indices<T: Scalar>(scores: &[T], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| desc(scores[a], scores[b]).then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

fn desc<T: Scalar>(a: T, b: T) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

fn check_topic(k: usize, n_topics: usize) -> Result<()> {
    if k >= n_topics {
        return Err(Error::InvalidArgument(format!("topic {} out of range 1..={n_topics}", k + 1)));
    }
    Ok(())
}

/// Top `m` terms of 0-based topic `k`; ties broken by term string.
pub fn top_words<T: Scalar>(
    model: &StmModel<T>,
    vocabulary: &[String],
    k: usize,
    m: usize,
    ranking: Ranking,
) -> Result<Vec<String>> {
    check_topic(k, model.n_topics())?;
    if vocabulary.len() != model.n_terms() {
        return Err(Error::Alignment(format!(
            "vocabulary has {} terms, model has {}",
            vocabulary.len(),
            model.n_terms()
        )));
    }
    let scores: Vec<T> = match ranking {
        Ranking::Probability => model.beta.row(k).iter().copied().collect(),
        Ranking::Frex { weight } => frex_matrix(&model.beta, weight).row(k).iter().copied().collect(),
    };
    Ok(ranked_terms(&scores, vocabulary, m))
}

fn ranked_terms<T: Scalar>(scores: &[T], vocabulary: &[String], m: usize) -> Vec<String> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| desc(scores[a], scores[b]).then_with(|| vocabulary[a].cmp(&vocabulary[b])));
    idx.into_iter().take(m).map(|v| vocabulary[v].clone()).collect()
}

/// Every topic's top words under one ranking.
pub fn all_top_words<T: Scalar>(
    model: &StmModel<T>,
    vocabulary: &[String],
    m: usize,
    ranking: Ranking,
) -> Result<Vec<Vec<String>>> {
    let scores: DMatrix<T> = match ranking {
        Ranking::Probability => model.beta.clone(),
        Ranking::Frex { weight } => frex_matrix(&model.beta, weight),
    };
    if vocabulary.len() != model.n_terms() {
        return Err(Error::Alignment(format!(
            "vocabulary has {} terms, model has {}",
            vocabulary.len(),
            model.n_terms()
        )));
    }
    Ok((0..model.n_topics())
        .map(|k| {
            let row: Vec<T> = scores.row(k).iter().copied().collect();
            ranked_terms(&row, vocabulary, m)
        })
        .collect())
}

/// The `n` documents with the largest θ_k, descending, ties by document
/// order; `(row index, θ_k)` pairs.
pub fn top_documents<T: Scalar>(posteriors: &[DocPosterior<T>], k: usize, n: usize) -> Result<Vec<(usize, T)>> {
    let n_topics = posteriors.first().map_or(0, |p| p.theta.len());
    check_topic(k, n_topics)?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let col: Vec<T> = posteriors.iter().map(|p| p.theta[k]).collect();
    Ok(top_indices(&col, n).into_iter().map(|d| (d, col[d])).collect())
}

/// CSV `topic,ranking,rank,term`, topics and ranks 1-based.
pub fn write_top_words_csv(path: &Path, tables: &[(Ranking, Vec<Vec<String>>)]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "topic,ranking,rank,term").map_err(io)?;
    for (ranking, topics) in tables {
        for (k, words) in topics.iter().enumerate() {
            for (r, word) in words.iter().enumerate() {
                writeln!(w, "{},{},{},{}", k + 1, ranking.name(), r + 1, csv_field(word)).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

/// One row of the top-documents table.
#[derive(Clone, Debug, PartialEq)]
pub struct TopDocument {
    pub topic: usize,
    pub rank: usize,
    pub doc_id: String,
    pub theta: f64,
    pub text: Option<String>,
}

/// CSV `topic,rank,doc_id,theta,text`.
pub fn write_top_documents_csv(path: &Path, rows: &[TopDocument]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "topic,rank,doc_id,theta,text").map_err(io)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.topic + 1,
            r.rank,
            csv_field(&r.doc_id),
            r.theta,
            csv_field(r.text.as_deref().unwrap_or(""))
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Top documents for every topic, with text looked up by id when given.
pub fn top_document_rows<T: Scalar>(
    posteriors: &[DocPosterior<T>],
    doc_ids: &[String],
    text: impl Fn(&str) -> Option<String>,
    n: usize,
) -> Result<Vec<TopDocument>> {
    if doc_ids.len() != posteriors.len() {
        return Err(Error::Alignment(format!(
            "{} document ids for {} posteriors",
            doc_ids.len(),
            posteriors.len()
        )));
    }
    let k = posteriors.first().map_or(0, |p| p.theta.len());
    let mut rows = Vec::new();
    for topic in 0..k {
        for (rank, (d, th)) in top_documents(posteriors, topic, n)?.into_iter().enumerate() {
            rows.push(TopDocument {
                topic,
                rank: rank + 1,
                doc_id: doc_ids[d].clone(),
                theta: th.as_f64(),
                text: text(&doc_ids[d]),
            });
        }
    }
    Ok(rows)
}
