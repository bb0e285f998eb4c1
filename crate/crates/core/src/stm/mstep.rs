use nalgebra::{DMatrix, DVector};

use super::model::normalize_rows_floored;
use super::{DocPosterior, PrevalenceDesign, StmConfig, StmModel};
use crate::corpus::DocumentTermMatrix;
use crate::error::{Error, Result};
use crate::linalg::{ridge_solve, symmetrize};
use crate::scalar::Scalar;

/// Closed-form updates of beta, Gamma and Sigma from the E-step output.
/// Documents are reduced in index order so the result does not depend on
/// how the E-step was scheduled.
pub fn mstep<T: Scalar>(
    dtm: &DocumentTermMatrix,
    design: &PrevalenceDesign<T>,
    posteriors: &[DocPosterior<T>],
    config: &StmConfig,
) -> Result<StmModel<T>> {
    let d_count = dtm.n_docs();
    if posteriors.len() != d_count || design.n_docs() != d_count {
        return Err(Error::Alignment(format!(
            "{} documents, {} posteriors, {} design rows",
            d_count,
            posteriors.len(),
            design.n_docs()
        )));
    }
    let k = posteriors.first().map(|p| p.theta.len()).unwrap_or(config.k);
    let km1 = k - 1;
    let v = dtm.n_terms();

    let mut beta = DMatrix::from_element(k, v, T::of(config.beta_pseudocount));
    for (d, post) in posteriors.iter().enumerate() {
        let row = dtm.row(d);
        if post.phi.len() != row.len() * k {
            return Err(Error::Alignment(format!("responsibilities of document {d} do not match its row")));
        }
        for (i, &(w, c)) in row.iter().enumerate() {
            let cf = T::of(c as f64);
            for t in 0..k {
                beta[(t, w as usize)] += cf * post.phi[i * k + t];
            }
        }
    }
    normalize_rows_floored(&mut beta);

    let x = design.matrix();
    let h = DMatrix::from_fn(d_count, km1, |d, j| posteriors[d].eta_hat[j]);
    let gamma = if km1 == 0 {
        DMatrix::zeros(x.ncols(), 0)
    } else {
        ridge_solve(x, &h, T::of(config.ridge_lambda)).map_err(|_| {
            Error::Internal("ridge-regularized normal equations are singular".into())
        })?
    };

    let mut sigma = DMatrix::<T>::zeros(km1, km1);
    if km1 > 0 {
        let fitted = x * &gamma;
        for (d, post) in posteriors.iter().enumerate() {
            let r = DVector::from_fn(km1, |j, _| post.eta_hat[j] - fitted[(d, j)]);
            sigma += &post.nu;
            sigma += &r * r.transpose();
        }
        sigma /= T::of_usize(d_count);
        sigma = symmetrize(&sigma);
    }
    Ok(StmModel { beta, gamma, sigma })
}
