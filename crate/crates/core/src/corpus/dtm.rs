use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{normalize_text, LabeledCorpus, Stopwords};
use crate::error::{Error, Result};

/// Sparse document-term counts. Rows are stored as `(term, count)` pairs
/// sorted by term index; the vocabulary is sorted lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DocumentTermMatrix {
    vocabulary: Vec<String>,
    doc_ids: Vec<String>,
    rows: Vec<Vec<(u32, u32)>>,
    doc_token_totals: Vec<u64>,
}

impl DocumentTermMatrix {
    pub fn new(vocabulary: Vec<String>, doc_ids: Vec<String>, mut rows: Vec<Vec<(u32, u32)>>) -> Result<Self> {
        if doc_ids.len() != rows.len() {
            return Err(Error::Alignment(format!(
                "{} doc ids for {} rows",
                doc_ids.len(),
                rows.len()
            )));
        }
        let v = vocabulary.len();
        for row in &mut rows {
            row.retain(|&(_, c)| c > 0);
            row.sort_unstable_by_key(|&(t, _)| t);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::InvalidArgument("repeated term within a row".into()));
            }
            if row.iter().any(|&(t, _)| t as usize >= v) {
                return Err(Error::InvalidArgument("term index out of range".into()));
            }
        }
        let doc_token_totals = rows
            .iter()
            .map(|r| r.iter().map(|&(_, c)| c as u64).sum())
            .collect();
        Ok(DocumentTermMatrix { vocabulary, doc_ids, rows, doc_token_totals })
    }

    pub fn n_docs(&self) -> usize {
        self.rows.len()
    }

    pub fn n_terms(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn row(&self, d: usize) -> &[(u32, u32)] {
        &self.rows[d]
    }

    pub fn rows(&self) -> &[Vec<(u32, u32)>] {
        &self.rows
    }

    pub fn doc_total(&self, d: usize) -> u64 {
        self.doc_token_totals[d]
    }

    pub fn doc_token_totals(&self) -> &[u64] {
        &self.doc_token_totals
    }

    pub fn total_tokens(&self) -> u64 {
        self.doc_token_totals.iter().sum()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Corpus-wide count of each term.
    pub fn term_totals(&self) -> Vec<u64> {
        let mut totals = vec![0u64; self.n_terms()];
        for row in &self.rows {
            for &(t, c) in row {
                totals[t as usize] += c as u64;
            }
        }
        totals
    }

    /// Number of documents containing each term.
    pub fn doc_frequencies(&self) -> Vec<usize> {
        let mut df = vec![0usize; self.n_terms()];
        for row in &self.rows {
            for &(t, _) in row {
                df[t as usize] += 1;
            }
        }
        df
    }

    /// Sub-matrix of the given rows (in the given order), same vocabulary.
    pub fn select_rows(&self, indices: &[usize]) -> DocumentTermMatrix {
        DocumentTermMatrix {
            vocabulary: self.vocabulary.clone(),
            doc_ids: indices.iter().map(|&i| self.doc_ids[i].clone()).collect(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            doc_token_totals: indices.iter().map(|&i| self.doc_token_totals[i]).collect(),
        }
    }

    /// Copy with some rows replaced.
    pub fn with_rows_replaced(&self, replacements: &[(usize, Vec<(u32, u32)>)]) -> Result<DocumentTermMatrix> {
        let mut rows = self.rows.clone();
        for (i, row) in replacements {
            rows[*i] = row.clone();
        }
        DocumentTermMatrix::new(self.vocabulary.clone(), self.doc_ids.clone(), rows)
    }

    /// Write `dtm.mtx` (Matrix Market coordinate triplets, 1-based),
    /// `vocab.txt` and `doc_ids.txt` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mtx = dir.join("dtm.mtx");
        let mut w = BufWriter::new(File::create(&mtx).map_err(|e| Error::io(&mtx, e))?);
        let io = |e| Error::io(&mtx, e);
        writeln!(w, "%%MatrixMarket matrix coordinate integer general").map_err(io)?;
        writeln!(w, "{} {} {}", self.n_docs(), self.n_terms(), self.nnz()).map_err(io)?;
        for (d, row) in self.rows.iter().enumerate() {
            for &(t, c) in row {
                writeln!(w, "{} {} {}", d + 1, t + 1, c).map_err(io)?;
            }
        }
        w.flush().map_err(io)?;
        write_lines(&dir.join("vocab.txt"), &self.vocabulary)?;
        write_lines(&dir.join("doc_ids.txt"), &self.doc_ids)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<DocumentTermMatrix> {
        let vocabulary = read_lines(&dir.join("vocab.txt"))?;
        let doc_ids = read_lines(&dir.join("doc_ids.txt"))?;
        let mtx = dir.join("dtm.mtx");
        let file = File::open(&mtx).map_err(|e| Error::io(&mtx, e))?;
        let mut rows: Vec<Vec<(u32, u32)>> = Vec::new();
        let mut header_seen = false;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&mtx, e))?;
            let line_no = i + 1;
            if line.starts_with('%') || line.trim().is_empty() {
                continue;
            }
            let nums: Vec<usize> = line
                .split_whitespace()
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
            if nums.len() != 3 {
                return Err(Error::Parse { line: line_no, message: "expected three integers".into() });
            }
            if !header_seen {
                header_seen = true;
                if nums[0] != doc_ids.len() || nums[1] != vocabulary.len() {
                    return Err(Error::Alignment(format!(
                        "matrix is {}x{} but there are {} doc ids and {} terms",
                        nums[0],
                        nums[1],
                        doc_ids.len(),
                        vocabulary.len()
                    )));
                }
                rows = vec![Vec::new(); nums[0]];
                continue;
            }
            let (d, t, c) = (nums[0], nums[1], nums[2]);
            if d == 0 || d > rows.len() || t == 0 {
                return Err(Error::Parse { line: line_no, message: "index out of range".into() });
            }
            rows[d - 1].push(((t - 1) as u32, c as u32));
        }
        DocumentTermMatrix::new(vocabulary, doc_ids, rows)
    }
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for l in lines {
        writeln!(w, "{l}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Term and token counts before and after vocabulary pruning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneStats {
    pub terms_before: usize,
    pub terms_retained: usize,
    pub tokens_before: u64,
    pub tokens_retained: u64,
}

impl PruneStats {
    pub fn terms_pruned(&self) -> usize {
        self.terms_before - self.terms_retained
    }

    pub fn retained_token_fraction(&self) -> f64 {
        if self.tokens_before == 0 {
            0.0
        } else {
            self.tokens_retained as f64 / self.tokens_before as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct DtmBuild {
    pub dtm: DocumentTermMatrix,
    /// Documents left with no tokens after pruning, in input order.
    pub dropped_doc_ids: Vec<String>,
    /// Row index in the input for each DTM row.
    pub kept_indices: Vec<usize>,
    pub stats: PruneStats,
}

/// Normalize every document and build the pruned document-term matrix.
pub fn build_dtm(corpus: &LabeledCorpus, stopwords: &Stopwords, min_df: usize) -> Result<DtmBuild> {
    let tokens: Vec<Vec<String>> = corpus
        .documents()
        .par_iter()
        .map(|d| normalize_text(&d.text, stopwords))
        .collect();
    let ids: Vec<String> = corpus.documents().iter().map(|d| d.id.clone()).collect();
    build_dtm_from_tokens(&ids, &tokens, min_df)
}

/// Build the matrix from already-normalized tokens. Terms appearing in fewer
/// than `min_df` documents are dropped, then documents with nothing left.
pub fn build_dtm_from_tokens(doc_ids: &[String], tokens: &[Vec<String>], min_df: usize) -> Result<DtmBuild> {
    if min_df == 0 {
        return Err(Error::InvalidArgument("min_df must be at least 1".into()));
    }
    if doc_ids.len() != tokens.len() {
        return Err(Error::Alignment("doc ids and token lists differ in length".into()));
    }
    if doc_ids.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut counts: Vec<BTreeMap<&str, u32>> = Vec::with_capacity(tokens.len());
    let mut df: HashMap<&str, usize> = HashMap::new();
    let mut tokens_before = 0u64;
    for toks in tokens {
        let mut m: BTreeMap<&str, u32> = BTreeMap::new();
        for t in toks {
            *m.entry(t.as_str()).or_default() += 1;
        }
        tokens_before += toks.len() as u64;
        for t in m.keys() {
            *df.entry(t).or_default() += 1;
        }
        counts.push(m);
    }
    let terms_before = df.len();
    let mut vocabulary: Vec<&str> = df
        .iter()
        .filter(|(_, &n)| n >= min_df)
        .map(|(t, _)| *t)
        .collect();
    vocabulary.sort_unstable();
    let index: HashMap<&str, u32> = vocabulary
        .iter()
        .enumerate()
        .map(|(i, t)| (*t, i as u32))
        .collect();

    let mut rows = Vec::new();
    let mut kept_ids = Vec::new();
    let mut kept_indices = Vec::new();
    let mut dropped_doc_ids = Vec::new();
    let mut tokens_retained = 0u64;
    for (i, m) in counts.iter().enumerate() {
        let row: Vec<(u32, u32)> = m
            .iter()
            .filter_map(|(t, &c)| index.get(t).map(|&j| (j, c)))
            .collect();
        if row.is_empty() {
            dropped_doc_ids.push(doc_ids[i].clone());
        } else {
            tokens_retained += row.iter().map(|&(_, c)| c as u64).sum::<u64>();
            rows.push(row);
            kept_ids.push(doc_ids[i].clone());
            kept_indices.push(i);
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let stats = PruneStats {
        terms_before,
        terms_retained: vocabulary.len(),
        tokens_before,
        tokens_retained,
    };
    let vocabulary = vocabulary.into_iter().map(str::to_string).collect();
    Ok(DtmBuild {
        dtm: DocumentTermMatrix::new(vocabulary, kept_ids, rows)?,
        dropped_doc_ids,
        kept_indices,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identical_one_word_documents() {
        let ids: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
        let toks = vec![strs(&["hello"]); 10];
        let b = build_dtm_from_tokens(&ids, &toks, 1).unwrap();
        assert_eq!(b.dtm.n_terms(), 1);
        assert_eq!(b.dtm.n_docs(), 10);
        assert!(b.dtm.rows().iter().all(|r| r == &[(0, 1)]));
        assert!(b.dropped_doc_ids.is_empty());
    }

    #[test]
    fn pruning_drops_terms_and_documents() {
        let ids = strs(&["a", "b", "c"]);
        let toks = vec![strs(&["x", "y", "y"]), strs(&["y", "z"]), strs(&["q"])];
        let b = build_dtm_from_tokens(&ids, &toks, 2).unwrap();
        assert_eq!(b.dtm.vocabulary(), ["y"]);
        assert_eq!(b.dtm.doc_ids(), ["a", "b"]);
        assert_eq!(b.dropped_doc_ids, ["c"]);
        assert_eq!(b.dtm.doc_token_totals(), [2, 1]);
        assert_eq!(b.stats.terms_before, 4);
        assert_eq!(b.stats.tokens_before, 6);
        assert_eq!(b.stats.tokens_retained, 3);
        assert!(matches!(build_dtm_from_tokens(&ids, &toks, 5), Err(Error::EmptyCorpus)));
        assert!(build_dtm_from_tokens(&ids, &toks, 0).is_err());
    }

    #[test]
    fn write_read_dir() {
        let ids = strs(&["a", "b"]);
        let toks = vec![strs(&["x", "y", "y"]), strs(&["y", "ü"])];
        let b = build_dtm_from_tokens(&ids, &toks, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        b.dtm.write_dir(dir.path()).unwrap();
        let back = DocumentTermMatrix::read_dir(dir.path()).unwrap();
        assert_eq!(back, b.dtm);
    }
}
