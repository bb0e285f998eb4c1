use nalgebra::DMatrix;

use crate::corpus::BinaryLabel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const COVARIATE_NAMES: [&str; 4] = ["intercept", "positive", "p_aae", "positive_x_p_aae"];

/// Prevalence covariates: one row `[1, a, p, a·p]` per document, where `a`
/// is the positive-label indicator and `p` the AAE probability.
#[derive(Clone, Debug, PartialEq)]
pub struct PrevalenceDesign<T: Scalar> {
    x: DMatrix<T>,
}

impl<T: Scalar> PrevalenceDesign<T> {
    /// Validate an existing D×4 matrix.
    pub fn from_matrix(x: DMatrix<T>) -> Result<Self> {
        if x.ncols() != COVARIATE_NAMES.len() {
            return Err(Error::Alignment(format!("design has {} columns, expected 4", x.ncols())));
        }
        for d in 0..x.nrows() {
            let (one, a, p, ap) = (x[(d, 0)], x[(d, 1)], x[(d, 2)], x[(d, 3)]);
            if one != T::one() {
                return Err(Error::InvalidCovariate { index: d, value: one.as_f64() });
            }
            if a != T::zero() && a != T::one() {
                return Err(Error::InvalidCovariate { index: d, value: a.as_f64() });
            }
            if !(p >= T::zero() && p <= T::one()) {
                return Err(Error::InvalidCovariate { index: d, value: p.as_f64() });
            }
            if ap != a * p {
                return Err(Error::InvalidCovariate { index: d, value: ap.as_f64() });
            }
        }
        Ok(PrevalenceDesign { x })
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.x
    }

    pub fn n_docs(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, d: usize) -> [T; 4] {
        [self.x[(d, 0)], self.x[(d, 1)], self.x[(d, 2)], self.x[(d, 3)]]
    }

    pub fn column_names(&self) -> [&'static str; 4] {
        COVARIATE_NAMES
    }

    pub fn positive(&self, d: usize) -> bool {
        self.x[(d, 1)] == T::one()
    }

    pub fn p_aae(&self, d: usize) -> T {
        self.x[(d, 2)]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        PrevalenceDesign { x: self.x.select_rows(rows) }
    }
}

pub fn build_design<T: Scalar>(labels: &[BinaryLabel], p_aae: &[T]) -> Result<PrevalenceDesign<T>> {
    if labels.len() != p_aae.len() {
        return Err(Error::Alignment(format!(
            "{} labels but {} dialect probabilities",
            labels.len(),
            p_aae.len()
        )));
    }
    let mut x = DMatrix::zeros(labels.len(), COVARIATE_NAMES.len());
    for (d, (label, &p)) in labels.iter().zip(p_aae).enumerate() {
        if !(p >= T::zero() && p <= T::one()) {
            return Err(Error::InvalidCovariate { index: d, value: p.as_f64() });
        }
        let a = T::of(label.indicator());
        x[(d, 0)] = T::one();
        x[(d, 1)] = a;
        x[(d, 2)] = p;
        x[(d, 3)] = a * p;
    }
    Ok(PrevalenceDesign { x })
}
