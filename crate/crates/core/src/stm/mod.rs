//! Structural topic model with a logistic-normal prevalence prior.
//!
//! Each document's topic proportions are `softmax([η; 0])` with
//! `η ~ Normal(Γᵀx, Σ)`, where `x` is the document's row of the prevalence
//! design. Estimation is variational EM: a Laplace approximation of each
//! document's `η` posterior (damped Newton to the mode, inverse negative
//! Hessian for the covariance), then closed-form updates of the topic-word
//! distributions, the prevalence coefficients (ridge regression) and `Σ`.

mod design;
mod estep;
mod fit;
mod io;
mod model;
mod mstep;

pub use design::{build_design, PrevalenceDesign, COVARIATE_NAMES};
pub use estep::{estep_doc, DocPosterior, PreparedModel};
pub use fit::{fit, fit_with_init, objective, FittedStm};
pub use io::{
    read_design_csv, read_model_json, read_posteriors_jsonl, vocabulary_hash, write_design_csv, write_model_json,
    write_posteriors_jsonl, write_theta_csv, ModelFile, StoredPosterior, MODEL_FORMAT, MODEL_FORMAT_VERSION,
};
pub use model::{init_model, StmModel};
pub use mstep::mstep;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StmConfig {
    pub k: usize,
    pub seed: u64,
    pub max_em_iters: usize,
    pub em_rel_tol: f64,
    pub newton_max_iters: usize,
    pub newton_grad_tol: f64,
    pub ridge_lambda: f64,
    pub beta_pseudocount: f64,
}

impl Default for StmConfig {
    fn default() -> Self {
        StmConfig {
            k: 30,
            seed: 0,
            max_em_iters: 200,
            em_rel_tol: 1e-5,
            newton_max_iters: 50,
            newton_grad_tol: 1e-7,
            ridge_lambda: 1e-6,
            beta_pseudocount: 0.01,
        }
    }
}

impl StmConfig {
    pub fn with_k(k: usize) -> Self {
        StmConfig { k, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        if self.max_em_iters == 0 {
            return Err(Error::InvalidArgument("max_em_iters must be at least 1".into()));
        }
        let positive = [
            ("em_rel_tol", self.em_rel_tol),
            ("newton_grad_tol", self.newton_grad_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !(self.ridge_lambda >= 0.0) || !(self.beta_pseudocount >= 0.0) {
            return Err(Error::InvalidArgument("ridge_lambda and beta_pseudocount must be nonnegative".into()));
        }
        Ok(())
    }
}
