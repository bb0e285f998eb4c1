use nalgebra::DMatrix;
use rand_distr::{Distribution, Gamma};

use super::{PrevalenceDesign, StmConfig};
use crate::corpus::DocumentTermMatrix;
use crate::scalar::Scalar;
use crate::seed::rng_for;

/// Global parameters of the topic model.
#[derive(Clone, Debug, PartialEq)]
pub struct StmModel<T: Scalar> {
    /// K×V, each row a distribution over the vocabulary.
    pub beta: DMatrix<T>,
    /// P×(K−1) prevalence coefficients.
    pub gamma: DMatrix<T>,
    /// (K−1)×(K−1) prior covariance of the free logits.
    pub sigma: DMatrix<T>,
}

impl<T: Scalar> StmModel<T> {
    pub fn n_topics(&self) -> usize {
        self.beta.nrows()
    }

    pub fn n_terms(&self) -> usize {
        self.beta.ncols()
    }

    /// Prior mean `Γᵀx` for a design row.
    pub fn prior_mean(&self, x: &[T]) -> Vec<T> {
        let km1 = self.gamma.ncols();
        (0..km1)
            .map(|j| (0..x.len()).fold(T::zero(), |acc, p| acc + self.gamma[(p, j)] * x[p]))
            .collect()
    }
}

/// Clamp every entry of a nonnegative row to at least the smallest normal
/// value and renormalize.
pub(crate) fn normalize_rows_floored<T: Scalar>(m: &mut DMatrix<T>) {
    for mut row in m.row_iter_mut() {
        let mut total = T::zero();
        for v in row.iter_mut() {
            if *v < T::tiny() {
                *v = T::tiny();
            }
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
}

/// Initial model: every topic starts at the corpus unigram distribution
/// perturbed by multiplicative Gamma noise (mean 1, coefficient of variation
/// 0.1), `Γ = 0`, `Σ = I`. A single topic gets no noise.
pub fn init_model<T: Scalar>(dtm: &DocumentTermMatrix, design: &PrevalenceDesign<T>, config: &StmConfig) -> StmModel<T> {
    let k = config.k;
    let v = dtm.n_terms();
    let totals = dtm.term_totals();
    let n = totals.iter().sum::<u64>() as f64;
    let freq: Vec<f64> = totals.iter().map(|&c| c as f64 / n).collect();

    let mut beta = DMatrix::from_fn(k, v, |_, j| T::of(freq[j]));
    if k > 1 {
        let mut rng = rng_for(config.seed, "stm/init");
        let noise = Gamma::new(100.0, 0.01).expect("valid gamma parameters");
        for i in 0..k {
            for j in 0..v {
                beta[(i, j)] = T::of(freq[j] * noise.sample(&mut rng));
            }
        }
    }
    normalize_rows_floored(&mut beta);
    StmModel {
        beta,
        gamma: DMatrix::zeros(design.n_covariates(), k - 1),
        sigma: DMatrix::identity(k - 1, k - 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BinaryLabel;
    use crate::stm::build_design;

    fn tiny_dtm() -> DocumentTermMatrix {
        DocumentTermMatrix::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["d1".into(), "d2".into()],
            vec![vec![(0, 2), (1, 1)], vec![(1, 3), (2, 4)]],
        )
        .unwrap()
    }

    fn design() -> PrevalenceDesign<f64> {
        build_design(&[BinaryLabel::Normal, BinaryLabel::Positive], &[0.1, 0.9]).unwrap()
    }

    #[test]
    fn single_topic_is_unigram() {
        let m = init_model(&tiny_dtm(), &design(), &StmConfig::with_k(1));
        let expect = [0.2, 0.4, 0.4];
        for j in 0..3 {
            assert!((m.beta[(0, j)] - expect[j]).abs() < 1e-15);
        }
        assert_eq!(m.gamma.shape(), (4, 0));
        assert_eq!(m.sigma.shape(), (0, 0));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = StmConfig { k: 4, seed: 11, ..Default::default() };
        let a = init_model(&tiny_dtm(), &design(), &cfg);
        let b = init_model(&tiny_dtm(), &design(), &cfg);
        assert_eq!(a, b);
        let c = init_model(&tiny_dtm(), &design(), &StmConfig { seed: 12, ..cfg.clone() });
        assert_ne!(a.beta, c.beta);
        for row in a.beta.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(a.sigma, DMatrix::identity(3, 3));
        assert!(a.gamma.iter().all(|g| *g == 0.0));
    }
}
