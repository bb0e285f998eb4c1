//! Dialect scoring with a word-probability model.
//!
//! Each class contributes a distribution `p(token | class)`; a document's
//! dialect mixture is the maximum-likelihood mixing vector found by a small
//! per-document EM, started from the model prior.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const N_CLASSES: usize = 4;
/// Canonical class names, in output column order.
pub const CLASS_NAMES: [&str; N_CLASSES] = ["sae", "aae", "hispanic", "asian"];

const EM_TOL: f64 = 1e-9;
const EM_MAX_ITERS: usize = 100;

#[derive(Clone, Debug)]
pub struct DialectModel<T: Scalar> {
    /// Class names in file order; mixture vectors use this order.
    classes: [String; N_CLASSES],
    /// Position of each canonical class (see [`CLASS_NAMES`]) within `classes`.
    canonical: [usize; N_CLASSES],
    table: HashMap<String, [T; N_CLASSES]>,
    prior: [T; N_CLASSES],
}

impl<T: Scalar> DialectModel<T> {
    /// Build from raw nonnegative weights; each class column is normalized to a
    /// distribution over the vocabulary. Rows of all zeros are dropped.
    pub fn from_weights(classes: [String; N_CLASSES], rows: Vec<(String, [f64; N_CLASSES])>) -> Result<Self> {
        let mut canonical = [usize::MAX; N_CLASSES];
        for (pos, name) in classes.iter().enumerate() {
            let lname = name.to_ascii_lowercase();
            let idx = CLASS_NAMES.iter().position(|c| *c == lname).ok_or_else(|| {
                Error::InvalidModel(format!("unknown class {name:?}, expected {CLASS_NAMES:?}"))
            })?;
            if canonical[idx] != usize::MAX {
                return Err(Error::InvalidModel(format!("class {name:?} appears twice")));
            }
            canonical[idx] = pos;
        }

        let mut col_sums = [0.0f64; N_CLASSES];
        let mut raw: HashMap<String, [f64; N_CLASSES]> = HashMap::with_capacity(rows.len());
        for (token, w) in rows {
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidModel(format!("token {token:?} has a negative or non-finite weight")));
            }
            let token = token.to_lowercase();
            if raw.contains_key(&token) {
                return Err(Error::InvalidModel(format!("duplicate token {token:?}")));
            }
            for c in 0..N_CLASSES {
                col_sums[c] += w[c];
            }
            raw.insert(token, w);
        }
        if let Some(c) = col_sums.iter().position(|s| *s <= 0.0) {
            return Err(Error::InvalidModel(format!("class {:?} has no weight", classes[c])));
        }
        let table = raw
            .into_iter()
            .filter(|(_, w)| w.iter().any(|x| *x > 0.0))
            .map(|(t, w)| {
                let mut p = [T::zero(); N_CLASSES];
                for c in 0..N_CLASSES {
                    p[c] = T::of(w[c] / col_sums[c]);
                }
                (t, p)
            })
            .collect();
        let uniform = T::of(1.0 / N_CLASSES as f64);
        Ok(DialectModel { classes, canonical, table, prior: [uniform; N_CLASSES] })
    }

    pub fn with_prior(mut self, prior: [f64; N_CLASSES]) -> Result<Self> {
        let total: f64 = prior.iter().sum();
        if prior.iter().any(|p| !(*p > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidModel("prior must be strictly positive and sum to 1".into()));
        }
        self.prior = prior.map(T::of);
        Ok(self)
    }

    pub fn classes(&self) -> &[String; N_CLASSES] {
        &self.classes
    }

    /// Index of the AAE class in mixture vectors.
    pub fn aae_index(&self) -> usize {
        self.canonical[1]
    }

    /// Mixture-vector position of canonical class `i` (0 = sae, 1 = aae, ...).
    pub fn canonical_index(&self, i: usize) -> usize {
        self.canonical[i]
    }

    pub fn prior(&self) -> &[T; N_CLASSES] {
        &self.prior
    }

    /// `p(token | class)` for every class, if the token is in the vocabulary.
    pub fn probabilities(&self, token: &str) -> Option<&[T; N_CLASSES]> {
        self.table.get(token)
    }

    pub fn vocabulary_size(&self) -> usize {
        self.table.len()
    }
}

/// Read a model file: TSV with header `token` followed by four class names.
pub fn load_dialect_model<T: Scalar>(path: &Path) -> Result<DialectModel<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse { line: 1, message: "missing header".into() })?;
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    if cols.len() != N_CLASSES + 1 {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected {} columns, found {}", N_CLASSES + 1, cols.len()),
        });
    }
    let classes: [String; N_CLASSES] = std::array::from_fn(|i| cols[i + 1].to_string());
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != N_CLASSES + 1 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} columns, found {}", N_CLASSES + 1, fields.len()),
            });
        }
        let mut w = [0.0f64; N_CLASSES];
        for c in 0..N_CLASSES {
            w[c] = fields[c + 1].trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad weight {:?}", fields[c + 1]),
            })?;
        }
        rows.push((fields[0].trim().to_string(), w));
    }
    DialectModel::from_weights(classes, rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DialectPosterior<T: Scalar> {
    pub doc_id: String,
    /// Mixture over classes, in the model's class order.
    pub pi: [T; N_CLASSES],
    pub p_aae: T,
    pub n_scored_tokens: usize,
}

/// Result of the per-document EM, with the mixture log-likelihood recorded
/// before the first update and after every update.
#[derive(Clone, Debug)]
pub struct MixtureFit<T: Scalar> {
    pub pi: [T; N_CLASSES],
    pub n_scored_tokens: usize,
    pub loglik_trace: Vec<T>,
    pub iterations: usize,
}

fn mixture_loglik<T: Scalar>(rows: &[(&[T; N_CLASSES], usize)], pi: &[T; N_CLASSES]) -> T {
    rows.iter().fold(T::zero(), |acc, (p, n)| {
        let mix = (0..N_CLASSES).fold(T::zero(), |s, c| s + pi[c] * p[c]);
        acc + T::of_usize(*n) * mix.ln()
    })
}

/// Run the mixture EM on a token list. `None` when no token is in the model.
pub fn fit_mixture<T: Scalar, S: AsRef<str>>(model: &DialectModel<T>, tokens: &[S]) -> Option<MixtureFit<T>> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in tokens {
        if model.table.contains_key(t.as_ref()) {
            *counts.entry(t.as_ref()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return None;
    }
    // fixed order so the sums are reproducible
    let mut keys: Vec<&str> = counts.keys().copied().collect();
    keys.sort_unstable();
    let rows: Vec<(&[T; N_CLASSES], usize)> = keys.iter().map(|k| (&model.table[*k], counts[k])).collect();
    let n_scored: usize = rows.iter().map(|(_, n)| n).sum();
    let inv_n = T::one() / T::of_usize(n_scored);

    let mut pi = model.prior;
    let mut trace = vec![mixture_loglik(&rows, &pi)];
    let mut iterations = 0;
    for _ in 0..EM_MAX_ITERS {
        let mut next = [T::zero(); N_CLASSES];
        for (p, n) in &rows {
            let weighted: [T; N_CLASSES] = std::array::from_fn(|c| pi[c] * p[c]);
            let denom = weighted.iter().fold(T::zero(), |a, &b| a + b);
            let scale = T::of_usize(*n) / denom;
            for c in 0..N_CLASSES {
                next[c] += weighted[c] * scale;
            }
        }
        for v in &mut next {
            *v *= inv_n;
        }
        let total = next.iter().fold(T::zero(), |a, &b| a + b);
        for v in &mut next {
            *v /= total;
        }
        let delta = (0..N_CLASSES).fold(T::zero(), |m, c| {
            let d = (next[c] - pi[c]).abs();
            if d > m { d } else { m }
        });
        pi = next;
        iterations += 1;
        trace.push(mixture_loglik(&rows, &pi));
        if delta < T::of(EM_TOL) {
            break;
        }
    }
    Some(MixtureFit { pi, n_scored_tokens: n_scored, loglik_trace: trace, iterations })
}

/// Score one document. `None` means no token could be scored.
pub fn score_document<T: Scalar, S: AsRef<str>>(
    model: &DialectModel<T>,
    doc_id: &str,
    tokens: &[S],
) -> Option<DialectPosterior<T>> {
    let fit = fit_mixture(model, tokens)?;
    Some(DialectPosterior {
        doc_id: doc_id.to_string(),
        pi: fit.pi,
        p_aae: fit.pi[model.aae_index()],
        n_scored_tokens: fit.n_scored_tokens,
    })
}

#[derive(Clone, Debug)]
pub struct CorpusScores<T: Scalar> {
    pub posteriors: Vec<DialectPosterior<T>>,
    pub dropped_doc_ids: Vec<String>,
}

/// Score every document; unscoreable ones are reported and left out.
pub fn score_corpus<T: Scalar, S: AsRef<str> + Sync>(
    model: &DialectModel<T>,
    doc_ids: &[String],
    tokens: &[Vec<S>],
) -> Result<CorpusScores<T>> {
    if doc_ids.len() != tokens.len() {
        return Err(Error::Alignment("doc ids and token lists differ in length".into()));
    }
    let scored: Vec<Option<DialectPosterior<T>>> = doc_ids
        .par_iter()
        .zip(tokens.par_iter())
        .map(|(id, toks)| score_document(model, id, toks))
        .collect();
    let mut posteriors = Vec::new();
    let mut dropped_doc_ids = Vec::new();
    for (id, s) in doc_ids.iter().zip(scored) {
        match s {
            Some(p) => posteriors.push(p),
            None => dropped_doc_ids.push(id.clone()),
        }
    }
    if posteriors.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(CorpusScores { posteriors, dropped_doc_ids })
}

/// CSV `doc_id,p_sae,p_aae,p_hispanic,p_asian,n_scored_tokens`.
pub fn write_dialect_csv<T: Scalar>(path: &Path, model: &DialectModel<T>, posteriors: &[DialectPosterior<T>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(w, "doc_id,p_sae,p_aae,p_hispanic,p_asian,n_scored_tokens").map_err(io)?;
    for p in posteriors {
        write!(w, "{}", csv_field(&p.doc_id)).map_err(io)?;
        for c in 0..N_CLASSES {
            write!(w, ",{}", p.pi[model.canonical_index(c)].as_f64()).map_err(io)?;
        }
        writeln!(w, ",{}", p.n_scored_tokens).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// A row of the dialect CSV, mixture in canonical class order.
#[derive(Clone, Debug, PartialEq)]
pub struct DialectRow {
    pub doc_id: String,
    pub pi: [f64; N_CLASSES],
    pub n_scored_tokens: usize,
}

impl DialectRow {
    pub fn p_aae(&self) -> f64 {
        self.pi[1]
    }
}

pub fn read_dialect_csv(path: &Path) -> Result<Vec<DialectRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != N_CLASSES + 2 {
            return Err(Error::Parse { line, message: "expected 6 columns".into() });
        }
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::Parse { line, message: format!("bad number {:?}", &rec[i]) })
        };
        out.push(DialectRow {
            doc_id: rec[0].to_string(),
            pi: [num(1)?, num(2)?, num(3)?, num(4)?],
            n_scored_tokens: rec[5]
                .parse()
                .map_err(|_| Error::Parse { line, message: "bad token count".into() })?,
        });
    }
    Ok(out)
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> [String; 4] {
        CLASS_NAMES.map(String::from)
    }

    fn toy() -> DialectModel<f64> {
        DialectModel::from_weights(
            names(),
            vec![
                ("t1".into(), [1.0, 0.0, 0.0, 0.0]),
                ("t2".into(), [0.0, 1.0, 0.0, 0.0]),
                ("t3".into(), [0.0, 1.0, 1.0, 1.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn identity_columns() {
        let m = DialectModel::<f64>::from_weights(
            names(),
            vec![("t1".into(), [1.0, 0.0, 0.0, 1.0]), ("t2".into(), [0.0, 1.0, 1.0, 0.0])],
        )
        .unwrap();
        assert_eq!(m.probabilities("t1").unwrap()[0], 1.0);
        assert_eq!(m.probabilities("t2").unwrap()[1], 1.0);
    }

    #[test]
    fn rejects_bad_models() {
        let neg = DialectModel::<f64>::from_weights(names(), vec![("a".into(), [1.0, -0.5, 1.0, 1.0])]);
        assert!(matches!(neg, Err(Error::InvalidModel(_))));
        let dup = DialectModel::<f64>::from_weights(
            names(),
            vec![("a".into(), [1.0; 4]), ("A".into(), [1.0; 4])],
        );
        assert!(matches!(dup, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn exclusive_tokens_force_fixed_point() {
        let m = toy();
        let p = score_document(&m, "d", &["t2", "t2", "zzz"]).unwrap();
        assert!((p.pi[1] - 1.0).abs() < 1e-8);
        assert_eq!(p.p_aae, p.pi[1]);
        assert_eq!(p.n_scored_tokens, 2);
    }

    #[test]
    fn out_of_vocabulary_is_unscoreable() {
        let m = toy();
        assert!(score_document(&m, "d", &["mentionplaceholder", "urlplaceholder"]).is_none());
        let ids = vec!["a".to_string(), "b".to_string()];
        let toks = vec![vec!["t1"], vec!["mentionplaceholder"]];
        let s = score_corpus(&m, &ids, &toks).unwrap();
        assert_eq!(s.dropped_doc_ids, ["b"]);
        assert_eq!(s.posteriors.len(), 1);
        let none = score_corpus(&m, &ids[1..], &toks[1..]);
        assert!(matches!(none, Err(Error::EmptyCorpus)));
    }

    #[test]
    fn header_order_is_respected() {
        let classes = ["aae", "sae", "asian", "hispanic"].map(String::from);
        let m = DialectModel::<f64>::from_weights(classes, vec![("x".into(), [1.0, 0.0, 0.0, 0.0]), ("y".into(), [0.0, 1.0, 1.0, 1.0])]).unwrap();
        assert_eq!(m.aae_index(), 0);
        let p = score_document(&m, "d", &["x"]).unwrap();
        assert!((p.p_aae - 1.0).abs() < 1e-8);
    }
}
