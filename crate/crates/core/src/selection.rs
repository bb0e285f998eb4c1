//! Diagnostics for choosing the number of topics: held-out document
//! completion likelihood, Pearson residual dispersion, Mimno semantic
//! coherence and FREX exclusivity.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::DocumentTermMatrix;
use crate::error::{Error, Result};
use crate::report::top_indices;
use crate::scalar::Scalar;
use crate::seed::rng_for;
use crate::stm::{fit, DocPosterior, FittedStm, PrevalenceDesign, StmConfig, StmModel};

pub const DEFAULT_HOLDOUT_FRAC: f64 = 0.1;
pub const DEFAULT_TOP_M: usize = 10;
pub const DEFAULT_FREX_WEIGHT: f64 = 0.7;

/// A training matrix in which some documents keep only half their tokens,
/// plus the removed halves.
#[derive(Clone, Debug)]
pub struct HeldoutSplit {
    pub train: DocumentTermMatrix,
    /// `(row, second-half counts)` sorted by row.
    pub heldout: Vec<(usize, Vec<(u32, u32)>)>,
}

impl HeldoutSplit {
    pub fn heldout_tokens(&self) -> u64 {
        self.heldout.iter().flat_map(|(_, r)| r.iter()).map(|&(_, c)| c as u64).sum()
    }
}

fn counts(tokens: &[u32]) -> Vec<(u32, u32)> {
    let mut sorted = tokens.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<(u32, u32)> = Vec::new();
    for t in sorted {
        match out.last_mut() {
            Some((v, c)) if *v == t => *c += 1,
            _ => out.push((t, 1)),
        }
    }
    out
}

/// Seeded document selection; each selected document's tokens are
/// shuffled and dealt alternately into a kept half and a held-out half.
/// Documents with fewer than two tokens are never held out.
pub fn heldout_split(dtm: &DocumentTermMatrix, holdout_frac: f64, seed: u64) -> Result<HeldoutSplit> {
    if !(holdout_frac > 0.0 && holdout_frac <= 0.5) {
        return Err(Error::InvalidArgument(format!("holdout fraction {holdout_frac} not in (0, 0.5]")));
    }
    let d = dtm.n_docs();
    let n_select = ((d as f64 * holdout_frac).round() as usize).clamp(1, d.max(1));
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut rng_for(seed, "heldout/select"));
    let mut selected: Vec<usize> = order.into_iter().take(n_select).filter(|&i| dtm.doc_total(i) >= 2).collect();
    selected.sort_unstable();

    let mut replacements = Vec::with_capacity(selected.len());
    let mut heldout = Vec::with_capacity(selected.len());
    for &i in &selected {
        let mut tokens: Vec<u32> = dtm.row(i).iter().flat_map(|&(v, c)| std::iter::repeat_n(v, c as usize)).collect();
        tokens.shuffle(&mut rng_for(seed, &format!("heldout/doc/{i}")));
        let keep: Vec<u32> = tokens.iter().step_by(2).copied().collect();
        let out: Vec<u32> = tokens.iter().skip(1).step_by(2).copied().collect();
        replacements.push((i, counts(&keep)));
        heldout.push((i, counts(&out)));
    }
    let train = dtm.with_rows_replaced(&replacements)?;
    Ok(HeldoutSplit { train, heldout })
}

/// Mean over held-out tokens of `log Σ_k θ_dk β_kv`, θ from the posteriors
/// of the kept halves. `None` when nothing was held out.
pub fn heldout_loglik<T: Scalar>(model: &StmModel<T>, posteriors: &[DocPosterior<T>], split: &HeldoutSplit) -> Option<T> {
    let mut total = T::zero();
    let mut n = 0u64;
    for (d, row) in &split.heldout {
        let theta = &posteriors[*d].theta;
        for &(v, c) in row {
            let p = (0..theta.len()).fold(T::zero(), |s, k| s + theta[k] * model.beta[(k, v as usize)]);
            total += p.max(T::tiny()).ln() * T::of(c as f64);
            n += c as u64;
        }
    }
    (n > 0).then(|| total / T::of(n as f64))
}

/// Fit on the split's training matrix and score its held-out halves.
pub fn heldout_likelihood<T: Scalar>(
    dtm: &DocumentTermMatrix,
    design: &PrevalenceDesign<T>,
    config: &StmConfig,
    holdout_frac: f64,
    seed: u64,
) -> Result<T> {
    let split = heldout_split(dtm, holdout_frac, seed)?;
    let fitted = fit(&split.train, design, config)?;
    heldout_loglik(&fitted.model, &fitted.posteriors, &split)
        .ok_or_else(|| Error::InvalidArgument("no document has two or more tokens to hold out".into()))
}

/// Per-topic Mimno coherence over the top `m` terms by β.
pub fn semantic_coherence<T: Scalar>(beta: &DMatrix<T>, dtm: &DocumentTermMatrix, m: usize) -> Result<Vec<T>> {
    if m < 2 {
        return Err(Error::InvalidArgument("coherence needs at least two terms".into()));
    }
    if beta.ncols() != dtm.n_terms() {
        return Err(Error::Alignment(format!("beta has {} terms, matrix has {}", beta.ncols(), dtm.n_terms())));
    }
    // Posting lists of the documents containing each term.
    let mut postings: Vec<Vec<u32>> = vec![Vec::new(); dtm.n_terms()];
    for (d, row) in dtm.rows().iter().enumerate() {
        for &(v, _) in row {
            postings[v as usize].push(d as u32);
        }
    }
    let co = |a: usize, b: usize| -> usize {
        let (x, y) = (&postings[a], &postings[b]);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < x.len() && j < y.len() {
            match x[i].cmp(&y[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    };
    Ok((0..beta.nrows())
        .map(|k| {
            let row: Vec<T> = beta.row(k).iter().copied().collect();
            let top = top_indices(&row, m);
            let mut c = T::zero();
            for i in 1..top.len() {
                for j in 0..i {
                    let dj = postings[top[j]].len();
                    if dj == 0 {
                        continue;
                    }
                    let dij = co(top[i], top[j]);
                    c += (T::of_usize(dij + 1) / T::of_usize(dj)).ln();
                }
            }
            c
        })
        .collect())
}

/// Empirical CDF value `#{u : x_u ≤ x_v} / n` for every entry.
fn ecdf<T: Scalar>(x: &[T]) -> Vec<T> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = vec![T::zero(); n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let f = T::of_usize(j + 1) / T::of_usize(n);
        for &u in &idx[i..=j] {
            out[u] = f;
        }
        i = j + 1;
    }
    out
}

/// FREX score of every topic-term pair, weight `w` on exclusivity.
pub fn frex_matrix<T: Scalar>(beta: &DMatrix<T>, w: f64) -> DMatrix<T> {
    let (k, v) = beta.shape();
    let col_sums: Vec<T> = (0..v).map(|j| beta.column(j).sum()).collect();
    let w = T::of(w);
    let mut out = DMatrix::zeros(k, v);
    for t in 0..k {
        let freq: Vec<T> = beta.row(t).iter().copied().collect();
        let excl: Vec<T> = (0..v).map(|j| beta[(t, j)] / col_sums[j]).collect();
        let f = ecdf(&freq);
        let e = ecdf(&excl);
        for j in 0..v {
            out[(t, j)] = T::one() / (w / e[j] + (T::one() - w) / f[j]);
        }
    }
    out
}

/// Per-topic mean FREX over the top `m` terms by β.
pub fn exclusivity<T: Scalar>(beta: &DMatrix<T>, w: f64, m: usize) -> Result<Vec<T>> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidArgument(format!("FREX weight {w} not in [0, 1]")));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("exclusivity needs at least one term".into()));
    }
    let frex = frex_matrix(beta, w);
    Ok((0..beta.nrows())
        .map(|k| {
            let row: Vec<T> = beta.row(k).iter().copied().collect();
            let top = top_indices(&row, m);
            top.iter().fold(T::zero(), |s, &v| s + frex[(k, v)]) / T::of_usize(top.len())
        })
        .collect())
}

const CELL_FLOOR: f64 = 1e-12;

/// Pearson statistic over all cells with expected count above 1e-12,
/// divided by (cells − K·(V−1)); NaN when that is not positive.
pub fn residual_dispersion<T: Scalar>(model: &StmModel<T>, posteriors: &[DocPosterior<T>], dtm: &DocumentTermMatrix) -> Result<T> {
    if posteriors.len() != dtm.n_docs() || model.n_terms() != dtm.n_terms() {
        return Err(Error::Alignment("posteriors, model and matrix disagree in shape".into()));
    }
    let (k, v) = (model.n_topics(), model.n_terms());
    let floor = T::of(CELL_FLOOR);
    let beta_max: Vec<T> = (0..v).map(|j| model.beta.column(j).max()).collect();
    let beta_min = model.beta.min();
    let per_doc: Vec<(T, usize)> = (0..dtm.n_docs())
        .into_par_iter()
        .map(|d| {
            let theta = &posteriors[d].theta;
            let n = T::of(dtm.doc_total(d) as f64);
            let expected = |j: usize| n * (0..k).fold(T::zero(), |s, t| s + theta[t] * model.beta[(t, j)]);
            let row = dtm.row(d);
            if n * beta_min > floor {
                // Every cell counts: zero cells contribute their expected count.
                let mut chi = T::zero();
                let mut observed_mass = T::zero();
                for &(j, c) in row {
                    let e = expected(j as usize);
                    let r = T::of(c as f64) - e;
                    chi += r * r / e;
                    observed_mass += e;
                }
                chi += (n - observed_mass).max(T::zero());
                (chi, v)
            } else {
                let mut chi = T::zero();
                let mut cells = 0;
                let mut next = 0;
                for j in 0..v {
                    let c = if next < row.len() && row[next].0 as usize == j {
                        next += 1;
                        T::of(row[next - 1].1 as f64)
                    } else {
                        T::zero()
                    };
                    if n * beta_max[j] <= floor {
                        continue;
                    }
                    let e = expected(j);
                    if e > floor {
                        let r = c - e;
                        chi += r * r / e;
                        cells += 1;
                    }
                }
                (chi, cells)
            }
        })
        .collect();
    let mut chi = T::zero();
    let mut cells = 0usize;
    for (c, n) in per_doc {
        chi += c;
        cells += n;
    }
    let params = k * v.saturating_sub(1);
    if cells <= params {
        return Ok(T::of(f64::NAN));
    }
    Ok(chi / T::of_usize(cells - params))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KDiagnostics {
    pub k: usize,
    pub heldout_loglik_per_token: f64,
    pub residual_dispersion: f64,
    pub mean_semantic_coherence: f64,
    pub mean_exclusivity: f64,
    pub coherence: Vec<f64>,
    pub exclusivity: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOptions {
    pub holdout_frac: f64,
    pub top_m: usize,
    pub frex_weight: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { holdout_frac: DEFAULT_HOLDOUT_FRAC, top_m: DEFAULT_TOP_M, frex_weight: DEFAULT_FREX_WEIGHT }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// All four diagnostics of one model fitted on `split.train`.
pub fn diagnose<T: Scalar>(fitted: &FittedStm<T>, split: &HeldoutSplit, options: &SearchOptions) -> Result<KDiagnostics> {
    let heldout = heldout_loglik(&fitted.model, &fitted.posteriors, split)
        .ok_or_else(|| Error::InvalidArgument("no document has two or more tokens to hold out".into()))?;
    let residual = residual_dispersion(&fitted.model, &fitted.posteriors, &split.train)?;
    let coherence: Vec<f64> = semantic_coherence(&fitted.model.beta, &split.train, options.top_m)?
        .into_iter()
        .map(|c| c.as_f64())
        .collect();
    let exclusivity: Vec<f64> = exclusivity(&fitted.model.beta, options.frex_weight, options.top_m)?
        .into_iter()
        .map(|c| c.as_f64())
        .collect();
    Ok(KDiagnostics {
        k: fitted.n_topics(),
        heldout_loglik_per_token: heldout.as_f64(),
        residual_dispersion: residual.as_f64(),
        mean_semantic_coherence: mean(&coherence),
        mean_exclusivity: mean(&exclusivity),
        coherence,
        exclusivity,
        iterations: fitted.iterations(),
        converged: fitted.converged,
    })
}

/// One seeded split shared by every K, one fit per K in parallel. Results
/// are sorted by K; a failed K does not stop the others.
pub fn search_k<T: Scalar>(
    dtm: &DocumentTermMatrix,
    design: &PrevalenceDesign<T>,
    k_list: &[usize],
    config: &StmConfig,
    options: &SearchOptions,
) -> Result<Vec<(usize, Result<KDiagnostics>)>> {
    if k_list.is_empty() {
        return Err(Error::InvalidArgument("empty K list".into()));
    }
    if let Some(&k) = k_list.iter().find(|&&k| k == 0) {
        return Err(Error::InvalidArgument(format!("K = {k} is not allowed")));
    }
    let mut ks = k_list.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let split = heldout_split(dtm, options.holdout_frac, config.seed)?;
    Ok(ks
        .par_iter()
        .map(|&k| {
            let cfg = StmConfig { k, ..config.clone() };
            let result = fit(&split.train, design, &cfg).and_then(|f| diagnose(&f, &split, options));
            (k, result)
        })
        .collect())
}

/// CSV `k,heldout,residuals,coherence,exclusivity`.
pub fn write_searchk_csv(path: &Path, rows: &[KDiagnostics]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "k,heldout,residuals,coherence,exclusivity").map_err(io)?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.k, r.heldout_loglik_per_token, r.residual_dispersion, r.mean_semantic_coherence, r.mean_exclusivity
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// CSV `k,topic,coherence,exclusivity`, topics 1-based.
pub fn write_searchk_topics_csv(path: &Path, rows: &[KDiagnostics]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "k,topic,coherence,exclusivity").map_err(io)?;
    for r in rows {
        for (t, (c, e)) in r.coherence.iter().zip(&r.exclusivity).enumerate() {
            writeln!(w, "{},{},{},{}", r.k, t + 1, c, e).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dtm(rows: Vec<Vec<(u32, u32)>>, v: usize) -> DocumentTermMatrix {
        let vocab = (0..v).map(|i| format!("t{i}")).collect();
        let ids = (0..rows.len()).map(|i| format!("d{i}")).collect();
        DocumentTermMatrix::new(vocab, ids, rows).unwrap()
    }

    #[test]
    fn coherence_always_cooccurring_pair() {
        let m = dtm(vec![vec![(0, 1), (1, 2)], vec![(0, 3), (1, 1)], vec![(2, 1)]], 3);
        let beta = DMatrix::from_row_slice(1, 3, &[0.5f64, 0.4, 0.1]);
        let c = semantic_coherence(&beta, &m, 2).unwrap();
        assert!((c[0] - (3.0f64 / 2.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn coherence_never_cooccurring() {
        let rows: Vec<_> = (0..100).map(|d| vec![((d % 2) as u32, 1)]).collect();
        let m = dtm(rows, 2);
        let beta = DMatrix::from_row_slice(1, 2, &[0.6f64, 0.4]);
        let c = semantic_coherence(&beta, &m, 2).unwrap();
        assert!((c[0] - (1.0f64 / 50.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn ecdf_ties() {
        let f = ecdf(&[0.2f64, 0.1, 0.2, 0.5]);
        assert_eq!(f, vec![0.75, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn exclusivity_single_topic_is_one() {
        let beta = DMatrix::from_row_slice(1, 4, &[0.4f64, 0.3, 0.2, 0.1]);
        let e = exclusivity(&beta, 0.7, 1).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exclusivity_identical_rows_equal() {
        let beta = DMatrix::from_row_slice(2, 3, &[0.5f64, 0.3, 0.2, 0.5, 0.3, 0.2]);
        let e = exclusivity(&beta, 0.7, 2).unwrap();
        assert_eq!(e[0], e[1]);
    }

    #[test]
    fn split_is_seeded_and_conserves_tokens() {
        let rows: Vec<_> = (0..30).map(|d| vec![(0, 1 + d % 3), (1, 2), (2, d % 2)].into_iter().filter(|r| r.1 > 0).collect()).collect();
        let m = dtm(rows, 3);
        let a = heldout_split(&m, 0.2, 9).unwrap();
        let b = heldout_split(&m, 0.2, 9).unwrap();
        assert_eq!(a.heldout, b.heldout);
        assert_eq!(a.heldout.len(), 6);
        assert_eq!(a.train.total_tokens() + a.heldout_tokens(), m.total_tokens());
        assert!(heldout_split(&m, 0.6, 9).is_err());
    }
}
