use nalgebra::{DMatrix, DVector};

use super::{StmConfig, StmModel};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, cholesky_logdet, spd_inverse_logdet, symmetrize};
use crate::scalar::{log_sum_exp, softmax_pinned, Scalar};

const HESSIAN_JITTER: f64 = 1e-8;
const MAX_STEP_HALVINGS: usize = 60;

/// Laplace approximation of one document's logit posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct DocPosterior<T: Scalar> {
    /// Mode of the free logits (the K-th logit is pinned at 0).
    pub eta_hat: Vec<T>,
    /// Inverse negative Hessian at the mode.
    pub nu: DMatrix<T>,
    /// `softmax([eta_hat; 0])`.
    pub theta: Vec<T>,
    /// `f(eta_hat) + ½·logdet(nu)`.
    pub bound: T,
    /// Token responsibilities, row-major: one K-vector per nonzero term of the
    /// document row, in row order. Emptied once a fit finishes.
    pub phi: Vec<T>,
    pub newton_iters: usize,
}

/// Model quantities shared by every document in an E-step.
#[derive(Clone, Debug)]
pub struct PreparedModel<'a, T: Scalar> {
    model: &'a StmModel<T>,
    /// log beta, term-major (V×K) for contiguous per-term access.
    log_beta_t: Vec<T>,
    sigma_inv: DMatrix<T>,
    sigma_logdet: T,
}

impl<'a, T: Scalar> PreparedModel<'a, T> {
    pub fn new(model: &'a StmModel<T>) -> Result<Self> {
        let k = model.n_topics();
        let v = model.n_terms();
        let mut log_beta_t = vec![T::zero(); v * k];
        for t in 0..k {
            for w in 0..v {
                log_beta_t[w * k + t] = model.beta[(t, w)].ln();
            }
        }
        let (sigma_inv, sigma_logdet) = if k > 1 {
            spd_inverse_logdet(&model.sigma, T::of(HESSIAN_JITTER))
                .ok_or_else(|| Error::Internal("prior covariance is not positive definite".into()))?
        } else {
            (DMatrix::zeros(0, 0), T::zero())
        };
        Ok(PreparedModel { model, log_beta_t, sigma_inv, sigma_logdet })
    }

    pub fn model(&self) -> &StmModel<T> {
        self.model
    }

    pub fn sigma_logdet(&self) -> T {
        self.sigma_logdet
    }

    fn k(&self) -> usize {
        self.model.n_topics()
    }

    fn log_beta(&self, term: u32) -> &[T] {
        let k = self.k();
        &self.log_beta_t[term as usize * k..(term as usize + 1) * k]
    }

    /// `f(η) = −½(η−μ)ᵀΣ⁻¹(η−μ) + Σ_v c_v log Σ_k θ_k(η) β_kv`.
    pub fn doc_objective(&self, counts: &[(u32, u32)], mu: &[T], eta: &[T]) -> T {
        self.evaluate(counts, mu, eta, false).f
    }

    fn evaluate(&self, counts: &[(u32, u32)], mu: &[T], eta: &[T], hessian: bool) -> Evaluation<T> {
        let k = self.k();
        let km1 = k - 1;
        let lse_eta = log_sum_exp(eta.iter().copied().chain(std::iter::once(T::zero())));
        let log_theta: Vec<T> = eta
            .iter()
            .map(|&e| e - lse_eta)
            .chain(std::iter::once(-lse_eta))
            .collect();
        let theta: Vec<T> = log_theta.iter().map(|l| l.exp()).collect();

        let mut lik = T::zero();
        let mut n = T::zero();
        let mut s = vec![T::zero(); k];
        let mut h = DMatrix::<T>::zeros(km1, km1);
        let mut a = vec![T::zero(); k];
        for &(w, c) in counts {
            let lb = self.log_beta(w);
            for j in 0..k {
                a[j] = log_theta[j] + lb[j];
            }
            let lse = log_sum_exp(a.iter().copied());
            let cf = T::of(c as f64);
            lik += cf * lse;
            n += cf;
            for j in 0..k {
                a[j] = (a[j] - lse).exp();
                s[j] += cf * a[j];
            }
            if hessian {
                for i in 0..km1 {
                    h[(i, i)] += cf * a[i];
                    for j in 0..km1 {
                        h[(i, j)] -= cf * a[i] * a[j];
                    }
                }
            }
        }

        let r = DVector::from_iterator(km1, eta.iter().zip(mu).map(|(e, m)| *e - *m));
        let sinv_r = &self.sigma_inv * &r;
        let f = lik - r.dot(&sinv_r) * T::of(0.5);
        let grad: Vec<T> = (0..km1).map(|i| s[i] - n * theta[i] - sinv_r[i]).collect();
        if hessian {
            for i in 0..km1 {
                h[(i, i)] -= n * theta[i];
                for j in 0..km1 {
                    h[(i, j)] += n * theta[i] * theta[j] - self.sigma_inv[(i, j)];
                }
            }
        }
        Evaluation { f, grad, hess: h, theta }
    }
}

struct Evaluation<T: Scalar> {
    f: T,
    grad: Vec<T>,
    hess: DMatrix<T>,
    theta: Vec<T>,
}

/// Maximize the document objective by damped Newton ascent from `warm_start`
/// (the prior mean when `None`), then form the Laplace covariance.
pub fn estep_doc<T: Scalar>(
    prepared: &PreparedModel<'_, T>,
    counts: &[(u32, u32)],
    x: &[T],
    warm_start: Option<&[T]>,
    config: &StmConfig,
) -> Result<DocPosterior<T>> {
    if counts.iter().all(|&(_, c)| c == 0) {
        return Err(Error::EmptyDocument { index: 0 });
    }
    let k = prepared.k();
    let km1 = k - 1;
    let mu = prepared.model.prior_mean(x);
    let mut eta: Vec<T> = match warm_start {
        Some(w) if w.len() == km1 => w.to_vec(),
        _ => mu.clone(),
    };
    let tol = T::of(config.newton_grad_tol);
    let mut ev = prepared.evaluate(counts, &mu, &eta, true);
    let mut iters = 0;
    while iters < config.newton_max_iters {
        let gmax = ev.grad.iter().fold(T::zero(), |m, g| if g.abs() > m { g.abs() } else { m });
        if gmax < tol {
            break;
        }
        iters += 1;
        let grad = DVector::from_column_slice(&ev.grad);
        let direction = match cholesky_jittered(&(-&ev.hess), T::of(HESSIAN_JITTER)) {
            Some(c) => c.solve(&grad),
            None => grad,
        };
        let mut step = T::one();
        let mut accepted = false;
        for _ in 0..MAX_STEP_HALVINGS {
            let cand: Vec<T> = eta.iter().zip(direction.iter()).map(|(e, d)| *e + step * *d).collect();
            let ev_c = prepared.evaluate(counts, &mu, &cand, true);
            if ev_c.f > ev.f {
                eta = cand;
                ev = ev_c;
                accepted = true;
                break;
            }
            step *= T::of(0.5);
        }
        if !accepted {
            break;
        }
    }

    let (nu, logdet_nu) = if km1 == 0 {
        (DMatrix::zeros(0, 0), T::zero())
    } else {
        let chol = cholesky_jittered(&symmetrize(&(-&ev.hess)), T::of(HESSIAN_JITTER))
            .ok_or_else(|| Error::Internal("negative Hessian is not positive definite".into()))?;
        let logdet = -cholesky_logdet(&chol);
        (symmetrize(&chol.inverse()), logdet)
    };

    let mut phi = Vec::with_capacity(counts.len() * k);
    let mut a = vec![T::zero(); k];
    for &(w, _) in counts {
        let lb = prepared.log_beta(w);
        for j in 0..k {
            a[j] = ev.theta[j].ln() + lb[j];
        }
        let lse = log_sum_exp(a.iter().copied());
        phi.extend(a.iter().map(|&x| (x - lse).exp()));
    }

    Ok(DocPosterior {
        bound: ev.f + logdet_nu * T::of(0.5),
        // same formula a stored posterior is rebuilt with
        theta: softmax_pinned(&eta),
        eta_hat: eta,
        nu,
        phi,
        newton_iters: iters,
    })
}
