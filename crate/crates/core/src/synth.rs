//! Synthetic corpora drawn from known model parameters, and alignment of
//! estimated topics to the generating ones.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BinaryLabel, DocumentTermMatrix};
use crate::error::{Error, Result};
use crate::linalg::psd_lower_factor;
use crate::scalar::{softmax_pinned, Scalar};
use crate::seed::rng_for;
use crate::stm::{build_design, PrevalenceDesign, COVARIATE_NAMES};

/// Size and distributional knobs of a synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthShape {
    pub docs: usize,
    pub terms: usize,
    pub topics: usize,
    pub mean_length: f64,
    /// Probability that a document carries the positive label.
    pub positive_rate: f64,
    /// Symmetric Dirichlet concentration of each topic-word row.
    pub topic_concentration: f64,
    /// Diagonal of the logit covariance.
    pub sigma_scale: f64,
}

impl Default for SynthShape {
    fn default() -> Self {
        SynthShape {
            docs: 2000,
            terms: 500,
            topics: 5,
            mean_length: 60.0,
            positive_rate: 0.32,
            topic_concentration: 0.05,
            sigma_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth<T: Scalar> {
    pub beta_true: DMatrix<T>,
    pub gamma_true: DMatrix<T>,
    pub sigma_true: DMatrix<T>,
    pub design_true: PrevalenceDesign<T>,
    pub doc_lengths: Vec<usize>,
}

fn dirichlet_row(rng: &mut impl Rng, len: usize, alpha: f64) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).expect("positive concentration");
    loop {
        let draws: Vec<f64> = (0..len).map(|_| g.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            return draws.into_iter().map(|x| x / total).collect();
        }
    }
}

impl<T: Scalar> GroundTruth<T> {
    /// Draw topics, covariates and document lengths. `Γ` starts at zero and
    /// `Σ = sigma_scale·I`.
    pub fn sample(shape: &SynthShape, seed: u64) -> Result<Self> {
        if shape.topics == 0 || shape.terms == 0 || shape.docs == 0 {
            return Err(Error::InvalidArgument("docs, terms and topics must be positive".into()));
        }
        if !(shape.mean_length > 0.0) {
            return Err(Error::InvalidArgument("mean_length must be positive".into()));
        }
        let mut rng = rng_for(seed, "synth/topics");
        let mut beta = DMatrix::zeros(shape.topics, shape.terms);
        for k in 0..shape.topics {
            for (v, p) in dirichlet_row(&mut rng, shape.terms, shape.topic_concentration).into_iter().enumerate() {
                beta[(k, v)] = T::of(p);
            }
        }
        let mut rng = rng_for(seed, "synth/covariates");
        let mut labels = Vec::with_capacity(shape.docs);
        let mut p_aae = Vec::with_capacity(shape.docs);
        for _ in 0..shape.docs {
            let positive = rng.random::<f64>() < shape.positive_rate;
            labels.push(if positive { BinaryLabel::Positive } else { BinaryLabel::Normal });
            p_aae.push(T::of(rng.random::<f64>()));
        }
        let mut rng = rng_for(seed, "synth/lengths");
        let poisson = Poisson::new(shape.mean_length).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let doc_lengths = (0..shape.docs)
            .map(|_| (poisson.sample(&mut rng) as usize).max(1))
            .collect();
        let km1 = shape.topics - 1;
        Ok(GroundTruth {
            beta_true: beta,
            gamma_true: DMatrix::zeros(COVARIATE_NAMES.len(), km1),
            sigma_true: DMatrix::identity(km1, km1) * T::of(shape.sigma_scale),
            design_true: build_design(&labels, &p_aae)?,
            doc_lengths,
        })
    }

    /// Set the label×P(AAE) interaction coefficient of one free logit.
    pub fn with_planted_interaction(mut self, topic: usize, coefficient: f64) -> Self {
        self.gamma_true[(3, topic)] = T::of(coefficient);
        self
    }

    pub fn n_topics(&self) -> usize {
        self.beta_true.nrows()
    }

    pub fn n_terms(&self) -> usize {
        self.beta_true.ncols()
    }

    pub fn n_docs(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn vocabulary(&self) -> Vec<String> {
        let width = (self.n_terms().max(2) - 1).to_string().len();
        (0..self.n_terms()).map(|v| format!("w{v:0width$}")).collect()
    }

    pub fn doc_ids(&self) -> Vec<String> {
        let width = (self.n_docs().max(2) - 1).to_string().len();
        (0..self.n_docs()).map(|d| format!("doc{d:0width$}")).collect()
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus<T: Scalar> {
    pub dtm: DocumentTermMatrix,
    pub labels: Vec<BinaryLabel>,
    pub p_aae: Vec<T>,
    /// Topic proportions each document was drawn with.
    pub theta_true: Vec<Vec<T>>,
}

/// Draw one document per design row: `η ~ Normal(Γᵀx, Σ)`, `θ = softmax([η; 0])`,
/// then a topic and a word for every token.
pub fn generate_corpus<T: Scalar>(truth: &GroundTruth<T>, seed: u64) -> Result<SyntheticCorpus<T>> {
    let k = truth.n_topics();
    let km1 = k - 1;
    if truth.design_true.n_docs() != truth.n_docs() {
        return Err(Error::Alignment("design rows and document lengths differ".into()));
    }
    if truth.doc_lengths.contains(&0) {
        return Err(Error::InvalidArgument("every document needs at least one token".into()));
    }
    let chol = psd_lower_factor(&truth.sigma_true);
    let word_dists: Vec<WeightedIndex<f64>> = (0..k)
        .map(|t| {
            WeightedIndex::new(truth.beta_true.row(t).iter().map(|b| b.as_f64()))
                .map_err(|e| Error::InvalidArgument(format!("topic {t}: {e}")))
        })
        .collect::<Result<_>>()?;
    let x = truth.design_true.matrix();
    let mu_all = x * &truth.gamma_true;

    let docs: Vec<(Vec<(u32, u32)>, Vec<T>)> = (0..truth.n_docs())
        .into_par_iter()
        .map(|d| {
            let mut rng = rng_for(seed, &format!("synth/doc/{d}"));
            let z = DVector::from_fn(km1, |_, _| T::of(rng.sample::<f64, _>(StandardNormal)));
            let noise = &chol * z;
            let eta: Vec<T> = (0..km1).map(|j| mu_all[(d, j)] + noise[j]).collect();
            let theta = softmax_pinned(&eta);
            let topic_dist = WeightedIndex::new(theta.iter().map(|t| t.as_f64())).expect("theta is a distribution");
            let mut counts = vec![0u32; truth.n_terms()];
            for _ in 0..truth.doc_lengths[d] {
                let t = topic_dist.sample(&mut rng);
                counts[word_dists[t].sample(&mut rng)] += 1;
            }
            let row = counts
                .into_iter()
                .enumerate()
                .filter(|(_, c)| *c > 0)
                .map(|(v, c)| (v as u32, c))
                .collect();
            (row, theta)
        })
        .collect();
    let (rows, theta_true): (Vec<_>, Vec<_>) = docs.into_iter().unzip();
    let dtm = DocumentTermMatrix::new(truth.vocabulary(), truth.doc_ids(), rows)?;
    let labels = (0..truth.n_docs())
        .map(|d| if truth.design_true.positive(d) { BinaryLabel::Positive } else { BinaryLabel::Normal })
        .collect();
    let p_aae = (0..truth.n_docs()).map(|d| truth.design_true.p_aae(d)).collect();
    Ok(SyntheticCorpus { dtm, labels, p_aae, theta_true })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopicAlignment<T: Scalar> {
    /// `permutation[j]` is the estimated topic matched to true topic `j`.
    pub permutation: Vec<usize>,
    /// Cosine similarity of each matched pair, indexed by true topic.
    pub cosines: Vec<T>,
}

impl<T: Scalar> TopicAlignment<T> {
    pub fn mean_cosine(&self) -> T {
        let n = self.cosines.len().max(1);
        self.cosines.iter().fold(T::zero(), |a, &c| a + c) / T::of_usize(n)
    }
}

pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    let (mut ab, mut aa, mut bb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Greedy matching: repeatedly pair the most similar unmatched estimated and
/// true topics.
pub fn align_topics<T: Scalar>(beta_est: &DMatrix<T>, beta_true: &DMatrix<T>) -> Result<TopicAlignment<T>> {
    if beta_est.shape() != beta_true.shape() {
        return Err(Error::Alignment(format!(
            "estimated topics are {:?} but true topics are {:?}",
            beta_est.shape(),
            beta_true.shape()
        )));
    }
    let k = beta_true.nrows();
    let rows = |m: &DMatrix<T>, i: usize| -> Vec<T> { m.row(i).iter().copied().collect() };
    let mut pairs = Vec::with_capacity(k * k);
    for i in 0..k {
        let e = rows(beta_est, i);
        for j in 0..k {
            pairs.push((cosine(&e, &rows(beta_true, j)), i, j));
        }
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then((a.2, a.1).cmp(&(b.2, b.1))));
    let mut permutation = vec![usize::MAX; k];
    let mut cosines = vec![T::zero(); k];
    let mut used = vec![false; k];
    for (c, i, j) in pairs {
        if permutation[j] == usize::MAX && !used[i] {
            permutation[j] = i;
            cosines[j] = c;
            used[i] = true;
        }
    }
    Ok(TopicAlignment { permutation, cosines })
}

/// JSON form of a ground truth, sharing the model file's matrix layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub format: String,
    pub version: u32,
    pub n_topics: usize,
    pub n_terms: usize,
    pub covariates: Vec<String>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub sigma: Vec<f64>,
    pub doc_lengths: Vec<usize>,
}

fn flat<T: Scalar>(m: &DMatrix<T>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)].as_f64())).collect()
}

pub fn write_truth_json<T: Scalar>(path: &Path, truth: &GroundTruth<T>) -> Result<()> {
    let file = TruthFile {
        format: "stmaudit-truth".into(),
        version: 1,
        n_topics: truth.n_topics(),
        n_terms: truth.n_terms(),
        covariates: COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
        beta: flat(&truth.beta_true),
        gamma: flat(&truth.gamma_true),
        sigma: flat(&truth.sigma_true),
        doc_lengths: truth.doc_lengths.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_truth_json(path: &Path) -> Result<TruthFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_shape() -> SynthShape {
        SynthShape { docs: 50, terms: 30, topics: 3, mean_length: 20.0, ..Default::default() }
    }

    #[test]
    fn generation_is_deterministic() {
        let truth = GroundTruth::<f64>::sample(&small_shape(), 3).unwrap();
        let a = generate_corpus(&truth, 9).unwrap();
        let b = generate_corpus(&truth, 9).unwrap();
        assert_eq!(a.dtm, b.dtm);
        assert_eq!(a.p_aae, b.p_aae);
        let c = generate_corpus(&truth, 10).unwrap();
        assert_ne!(a.dtm, c.dtm);
        for (d, len) in truth.doc_lengths.iter().enumerate() {
            assert_eq!(a.dtm.doc_total(d), *len as u64);
        }
    }

    #[test]
    fn single_topic_frequencies_converge() {
        let shape = SynthShape { docs: 1000, terms: 40, topics: 1, mean_length: 100.0, ..Default::default() };
        let mut truth = GroundTruth::<f64>::sample(&shape, 1).unwrap();
        truth.doc_lengths = vec![100; 1000];
        let corpus = generate_corpus(&truth, 2).unwrap();
        let totals = corpus.dtm.term_totals();
        let n: u64 = totals.iter().sum();
        assert_eq!(n, 100_000);
        let (mut emp, mut exp, mut worst) = (0.0, 0.0, 0.0f64);
        for v in 0..40 {
            emp += totals[v] as f64 / n as f64;
            exp += truth.beta_true[(0, v)];
            worst = worst.max((emp - exp).abs());
        }
        assert!(worst < 0.01, "max CDF deviation {worst}");
    }

    #[test]
    fn degenerate_prior_gives_uniform_theta() {
        let mut truth = GroundTruth::<f64>::sample(&small_shape(), 4).unwrap();
        truth.sigma_true = DMatrix::zeros(2, 2);
        let corpus = generate_corpus(&truth, 5).unwrap();
        for theta in &corpus.theta_true {
            for t in theta {
                assert!((t - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn alignment_recovers_permutation() {
        let truth = GroundTruth::<f64>::sample(&small_shape(), 6).unwrap();
        let perm = [2usize, 0, 1];
        let est = DMatrix::from_fn(3, 30, |i, v| truth.beta_true[(perm[i], v)]);
        let al = align_topics(&est, &truth.beta_true).unwrap();
        for j in 0..3 {
            assert_eq!(perm[al.permutation[j]], j);
            assert!((al.cosines[j] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn alignment_of_noisy_topics() {
        let truth = GroundTruth::<f64>::sample(&small_shape(), 7).unwrap();
        let mut rng = rng_for(1, "test/noise");
        let mut est = truth.beta_true.clone();
        for v in est.iter_mut() {
            *v *= 1.0 + 0.02 * (rng.random::<f64>() - 0.5);
        }
        let al = align_topics(&est, &truth.beta_true).unwrap();
        assert!(al.cosines.iter().all(|&c| c > 0.99));
        assert_eq!(al.permutation, vec![0, 1, 2]);
    }

    #[test]
    fn one_hot_against_uniform() {
        let v = 16;
        let one_hot = DMatrix::from_fn(4, v, |i, j| if i == j { 1.0f64 } else { 0.0 });
        let uniform = DMatrix::from_element(4, v, 1.0 / v as f64);
        let al = align_topics(&uniform, &one_hot).unwrap();
        let mut seen = al.permutation.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        for c in al.cosines {
            assert!((c - 1.0 / (v as f64).sqrt()).abs() < 1e-12);
        }
        assert!(align_topics(&uniform, &DMatrix::zeros(3, v)).is_err());
    }
}
