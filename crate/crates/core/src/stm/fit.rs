use rayon::prelude::*;

use super::{estep_doc, init_model, mstep, DocPosterior, PreparedModel, PrevalenceDesign, StmConfig, StmModel};
use crate::corpus::DocumentTermMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct FittedStm<T: Scalar> {
    pub model: StmModel<T>,
    /// One posterior per DTM row, computed under `model`.
    pub posteriors: Vec<DocPosterior<T>>,
    /// Objective after each E-step.
    pub elbo_trace: Vec<T>,
    pub converged: bool,
    pub config: StmConfig,
}

impl<T: Scalar> FittedStm<T> {
    pub fn n_topics(&self) -> usize {
        self.model.n_topics()
    }

    pub fn n_docs(&self) -> usize {
        self.posteriors.len()
    }

    pub fn iterations(&self) -> usize {
        self.elbo_trace.len()
    }

    pub fn theta(&self, d: usize) -> &[T] {
        &self.posteriors[d].theta
    }
}

/// EM objective: the documents' Laplace bounds plus the prior normalizer,
/// `Σ_d [f_d(η̂_d) + ½ logdet ν_d] − (D/2)·logdet Σ`.
pub fn objective<T: Scalar>(prepared: &PreparedModel<'_, T>, posteriors: &[DocPosterior<T>]) -> T {
    let bounds = posteriors.iter().fold(T::zero(), |acc, p| acc + p.bound);
    bounds - prepared.sigma_logdet() * T::of_usize(posteriors.len()) * T::of(0.5)
}

pub(crate) fn estep_all<T: Scalar>(
    prepared: &PreparedModel<'_, T>,
    dtm: &DocumentTermMatrix,
    design: &PrevalenceDesign<T>,
    warm: Option<&[DocPosterior<T>]>,
    config: &StmConfig,
) -> Result<Vec<DocPosterior<T>>> {
    (0..dtm.n_docs())
        .into_par_iter()
        .map(|d| {
            let start = warm.map(|w| w[d].eta_hat.as_slice());
            estep_doc(prepared, dtm.row(d), &design.row(d), start, config).map_err(|e| match e {
                Error::EmptyDocument { .. } => Error::EmptyDocument { index: d },
                e => e,
            })
        })
        .collect()
}

fn check_inputs<T: Scalar>(dtm: &DocumentTermMatrix, design: &PrevalenceDesign<T>, config: &StmConfig) -> Result<()> {
    config.validate()?;
    if dtm.n_docs() == 0 {
        return Err(Error::EmptyCorpus);
    }
    if design.n_docs() != dtm.n_docs() {
        return Err(Error::Alignment(format!(
            "design has {} rows but the matrix has {} documents",
            design.n_docs(),
            dtm.n_docs()
        )));
    }
    if let Some(d) = (0..dtm.n_docs()).find(|&d| dtm.doc_total(d) == 0) {
        return Err(Error::EmptyDocument { index: d });
    }
    Ok(())
}

/// Fit from the seeded initialization.
pub fn fit<T: Scalar>(dtm: &DocumentTermMatrix, design: &PrevalenceDesign<T>, config: &StmConfig) -> Result<FittedStm<T>> {
    check_inputs(dtm, design, config)?;
    let init = init_model(dtm, design, config);
    fit_with_init(dtm, design, config, init)
}

/// Alternate E- and M-steps until the relative change of the objective falls
/// below `em_rel_tol` or `max_em_iters` E-steps have run. The returned
/// posteriors always belong to the returned model.
pub fn fit_with_init<T: Scalar>(
    dtm: &DocumentTermMatrix,
    design: &PrevalenceDesign<T>,
    config: &StmConfig,
    init: StmModel<T>,
) -> Result<FittedStm<T>> {
    check_inputs(dtm, design, config)?;
    if init.n_topics() != config.k || init.n_terms() != dtm.n_terms() {
        return Err(Error::Alignment("initial model does not match K or the vocabulary".into()));
    }
    let mut model = init;
    let mut posteriors: Option<Vec<DocPosterior<T>>> = None;
    let mut trace: Vec<T> = Vec::new();
    let mut converged = false;
    for iter in 0..config.max_em_iters {
        let prepared = PreparedModel::new(&model)?;
        let current = estep_all(&prepared, dtm, design, posteriors.as_deref(), config)?;
        let value = objective(&prepared, &current);
        if !value.is_finite_value() {
            return Err(Error::Internal(format!("objective is not finite at iteration {}", iter + 1)));
        }
        if let Some(&prev) = trace.last() {
            let rel = ((value - prev) / prev).abs();
            if rel < T::of(config.em_rel_tol) {
                converged = true;
            }
        }
        trace.push(value);
        posteriors = Some(current);
        if converged || iter + 1 == config.max_em_iters {
            break;
        }
        model = mstep(dtm, design, posteriors.as_deref().unwrap(), config)?;
    }
    let mut posteriors = posteriors.expect("at least one E-step ran");
    for p in &mut posteriors {
        p.phi = Vec::new();
    }
    Ok(FittedStm { model, posteriors, elbo_trace: trace, converged, config: config.clone() })
}
