//! Regression of topic proportions on the prevalence design, with
//! uncertainty in θ propagated by sampling each document's Laplace posterior.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::BinaryLabel;
use crate::error::{Error, Result};
use crate::linalg::{psd_lower_factor, symmetrize};
use crate::scalar::{softmax_pinned, Scalar};
use crate::seed::rng_for;
use crate::stm::{DocPosterior, PrevalenceDesign};

pub const N_COEF: usize = 4;
pub const GRID_POINTS: usize = 101;

const CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EffectsConfig {
    /// Posterior draws of θ per document; 0 regresses on the point estimates.
    pub draws: usize,
    /// Coefficient vectors simulated from the per-draw sampling distributions.
    pub sims: usize,
    pub seed: u64,
}

impl Default for EffectsConfig {
    fn default() -> Self {
        EffectsConfig { draws: 25, sims: 500, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EffectEstimate<T: Scalar> {
    /// 0-based topic index.
    pub topic: usize,
    /// `[intercept, positive, p_aae, positive × p_aae]`.
    pub coef: [T; N_COEF],
    /// Empty when `draws == 0`.
    pub coef_draws: Vec<[T; N_COEF]>,
    /// Residual variance of the point-estimate regression.
    pub sigma2: T,
    pub n: usize,
}

impl<T: Scalar> EffectEstimate<T> {
    /// Percentile interval of one coefficient over the draws; the point
    /// value twice when there are none.
    pub fn interval(&self, j: usize, level: f64) -> (T, T) {
        if self.coef_draws.is_empty() {
            return (self.coef[j], self.coef[j]);
        }
        let mut v: Vec<T> = self.coef_draws.iter().map(|b| b[j]).collect();
        sort(&mut v);
        let a = (1.0 - level) / 2.0;
        (percentile(&v, a), percentile(&v, 1.0 - a))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EffectCurve<T: Scalar> {
    pub topic: usize,
    pub label: BinaryLabel,
    pub grid: Vec<T>,
    pub estimate: Vec<T>,
    pub lo95: Vec<T>,
    pub hi95: Vec<T>,
}

/// Ordinary least squares on a full-rank design.
#[derive(Clone, Debug)]
pub struct Ols<T: Scalar> {
    pub coef: Vec<T>,
    pub xtx_inv: DMatrix<T>,
    /// `RSS / (n − p)`, zero when `n ≤ p`.
    pub sigma2: T,
}

/// `(XᵀX)⁻¹`, or `SingularDesign` when XᵀX is numerically rank deficient.
pub fn gram_inverse<T: Scalar>(x: &DMatrix<T>) -> Result<DMatrix<T>> {
    let xtx = symmetrize(&(x.transpose() * x));
    let eig = xtx.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(T::zero(), |a, &b| if b.abs() > a { b.abs() } else { a });
    let min = eig.iter().fold(T::of(f64::INFINITY), |a, &b| if b < a { b } else { a });
    if max <= T::zero() || min <= max * T::of(1e-12) * T::of_usize(x.nrows().max(1)) {
        return Err(Error::SingularDesign);
    }
    let chol = xtx.cholesky().ok_or(Error::SingularDesign)?;
    Ok(symmetrize(&chol.inverse()))
}

pub fn ols<T: Scalar>(x: &DMatrix<T>, y: &[T]) -> Result<Ols<T>> {
    if x.nrows() != y.len() {
        return Err(Error::Alignment(format!("design has {} rows, response has {}", x.nrows(), y.len())));
    }
    let xtx_inv = gram_inverse(x)?;
    let yv = DVector::from_column_slice(y);
    let b = &xtx_inv * (x.transpose() * &yv);
    let resid = yv - x * &b;
    let (n, p) = (x.nrows(), x.ncols());
    let sigma2 = if n > p { resid.norm_squared() / T::of_usize(n - p) } else { T::zero() };
    Ok(Ols { coef: b.iter().copied().collect(), xtx_inv, sigma2 })
}

/// Per-topic regressions of θ on the design. `topics` are 0-based.
pub fn estimate_effects<T: Scalar>(
    posteriors: &[DocPosterior<T>],
    design: &PrevalenceDesign<T>,
    topics: &[usize],
    config: &EffectsConfig,
) -> Result<Vec<EffectEstimate<T>>> {
    let d = posteriors.len();
    if design.n_docs() != d {
        return Err(Error::Alignment(format!("design has {} rows but there are {d} posteriors", design.n_docs())));
    }
    if d == 0 {
        return Err(Error::EmptyCorpus);
    }
    let k = posteriors[0].theta.len();
    if let Some(&t) = topics.iter().find(|&&t| t >= k) {
        return Err(Error::InvalidArgument(format!("topic {} out of range 1..={k}", t + 1)));
    }
    if config.draws > 0 && config.sims == 0 {
        return Err(Error::InvalidArgument("sims must be positive when draws are requested".into()));
    }
    let x = design.matrix();
    let xtx_inv = gram_inverse(x)?;

    let mut out = Vec::with_capacity(topics.len());
    for &t in topics {
        let y: Vec<T> = posteriors.iter().map(|p| p.theta[t]).collect();
        let fit = ols(x, &y)?;
        let mut coef = [T::zero(); N_COEF];
        coef.copy_from_slice(&fit.coef);
        out.push(EffectEstimate { topic: t, coef, coef_draws: Vec::new(), sigma2: fit.sigma2, n: d });
    }
    if config.draws == 0 {
        return Ok(out);
    }

    let rounds = draw_regressions(posteriors, x, &xtx_inv, topics, config)?;
    let factor = psd_lower_factor(&xtx_inv);
    let sims: Vec<Vec<[T; N_COEF]>> = topics
        .par_iter()
        .map(|&t| {
            let mut rng = rng_for(config.seed, &format!("effects/sim/{t}"));
            let ti = topics.iter().position(|&u| u == t).unwrap();
            (0..config.sims)
                .map(|s| {
                    let (b, s2) = &rounds[s % rounds.len()][ti];
                    let z = DVector::from_fn(N_COEF, |_, _| T::of(rng.sample::<f64, _>(StandardNormal)));
                    let e = &factor * z * s2.sqrt();
                    let mut draw = *b;
                    for j in 0..N_COEF {
                        draw[j] += e[j];
                    }
                    draw
                })
                .collect()
        })
        .collect();
    for (est, draws) in out.iter_mut().zip(sims) {
        let n = T::of_usize(draws.len());
        for j in 0..N_COEF {
            est.coef[j] = draws.iter().fold(T::zero(), |a, b| a + b[j]) / n;
        }
        est.coef_draws = draws;
    }
    Ok(out)
}

/// For every round, the OLS coefficients and residual variance of each
/// requested topic on one joint draw of all documents' θ.
#[allow(clippy::type_complexity)]
fn draw_regressions<T: Scalar>(
    posteriors: &[DocPosterior<T>],
    x: &DMatrix<T>,
    xtx_inv: &DMatrix<T>,
    topics: &[usize],
    config: &EffectsConfig,
) -> Result<Vec<Vec<([T; N_COEF], T)>>> {
    let r = config.draws;
    let nt = topics.len();
    // Per round: Xᵀy for each topic (4 × nt, column-major) then Σ y² per topic.
    let width = N_COEF * nt + nt;
    let chunks: Vec<Vec<T>> = (0..posteriors.len().div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![T::zero(); r * width];
            for d in c * CHUNK..((c + 1) * CHUNK).min(posteriors.len()) {
                let p = &posteriors[d];
                let mut rng = rng_for(config.seed, &format!("effects/eta/{d}"));
                let l = psd_lower_factor(&p.nu);
                let xd = x.row(d);
                for round in 0..r {
                    let theta = if p.eta_hat.is_empty() {
                        vec![T::one()]
                    } else {
                        let z = DVector::from_fn(p.eta_hat.len(), |_, _| T::of(rng.sample::<f64, _>(StandardNormal)));
                        let e = &l * z;
                        let eta: Vec<T> = p.eta_hat.iter().zip(e.iter()).map(|(&a, &b)| a + b).collect();
                        softmax_pinned(&eta)
                    };
                    let base = round * width;
                    for (ti, &t) in topics.iter().enumerate() {
                        let y = theta[t];
                        for j in 0..N_COEF {
                            acc[base + ti * N_COEF + j] += xd[j] * y;
                        }
                        acc[base + N_COEF * nt + ti] += y * y;
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![T::zero(); r * width];
    for c in &chunks {
        for (a, b) in total.iter_mut().zip(c) {
            *a += *b;
        }
    }
    let n = posteriors.len();
    let df = n.saturating_sub(N_COEF);
    Ok((0..r)
        .map(|round| {
            let base = round * width;
            (0..nt)
                .map(|ti| {
                    let xty = DVector::from_column_slice(&total[base + ti * N_COEF..base + (ti + 1) * N_COEF]);
                    let b = xtx_inv * &xty;
                    let yty = total[base + N_COEF * nt + ti];
                    let rss = (yty - b.dot(&xty)).max(T::zero());
                    let s2 = if df > 0 { rss / T::of_usize(df) } else { T::zero() };
                    let mut coef = [T::zero(); N_COEF];
                    coef.copy_from_slice(b.as_slice());
                    (coef, s2)
                })
                .collect()
        })
        .collect())
}

pub fn grid<T: Scalar>() -> Vec<T> {
    (0..GRID_POINTS).map(|i| T::of_usize(i) / T::of_usize(GRID_POINTS - 1)).collect()
}

/// Expected proportion across P(AAE) for one label, with a 95% band from
/// the coefficient draws.
pub fn predict_curve<T: Scalar>(effect: &EffectEstimate<T>, label: BinaryLabel) -> EffectCurve<T> {
    let a = T::of(label.indicator());
    let grid = grid::<T>();
    let mut estimate = Vec::with_capacity(GRID_POINTS);
    let mut lo95 = Vec::with_capacity(GRID_POINTS);
    let mut hi95 = Vec::with_capacity(GRID_POINTS);
    for &p in &grid {
        let x = [T::one(), a, p, a * p];
        let dot = |b: &[T; N_COEF]| (0..N_COEF).fold(T::zero(), |s, j| s + b[j] * x[j]);
        if effect.coef_draws.is_empty() {
            let v = dot(&effect.coef);
            estimate.push(v);
            lo95.push(v);
            hi95.push(v);
        } else {
            let mut v: Vec<T> = effect.coef_draws.iter().map(dot).collect();
            let mean = v.iter().fold(T::zero(), |s, &y| s + y) / T::of_usize(v.len());
            sort(&mut v);
            estimate.push(mean);
            lo95.push(percentile(&v, 0.025));
            hi95.push(percentile(&v, 0.975));
        }
    }
    EffectCurve { topic: effect.topic, label, grid, estimate, lo95, hi95 }
}

/// Both labels' curves for every estimate, positive first.
pub fn predict_curves<T: Scalar>(effects: &[EffectEstimate<T>]) -> Vec<EffectCurve<T>> {
    effects
        .iter()
        .flat_map(|e| [predict_curve(e, BinaryLabel::Positive), predict_curve(e, BinaryLabel::Normal)])
        .collect()
}

fn sort<T: Scalar>(v: &mut [T]) {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
}

/// Linear-interpolation percentile of sorted values, `q ∈ [0, 1]`.
pub fn percentile<T: Scalar>(sorted: &[T], q: f64) -> T {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = T::of(h - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// CSV `topic,label,p_aae,estimate,lo95,hi95`, topics 1-based.
pub fn export_curves<T: Scalar>(curves: &[EffectCurve<T>], path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "topic,label,p_aae,estimate,lo95,hi95").map_err(io)?;
    for c in curves {
        for i in 0..c.grid.len() {
            writeln!(
                w,
                "{},{},{:.2},{},{},{}",
                c.topic + 1,
                c.label.as_str(),
                c.grid[i].as_f64(),
                c.estimate[i].as_f64(),
                c.lo95[i].as_f64(),
                c.hi95[i].as_f64()
            )
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// CSV `topic,b0..b3,b0_lo,b0_hi,..,b3_lo,b3_hi,sigma2,n` with 95% intervals.
pub fn export_coefficients<T: Scalar>(effects: &[EffectEstimate<T>], path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write!(w, "topic,b0,b1,b2,b3").map_err(io)?;
    for j in 0..N_COEF {
        write!(w, ",b{j}_lo,b{j}_hi").map_err(io)?;
    }
    writeln!(w, ",sigma2,n").map_err(io)?;
    for e in effects {
        write!(w, "{}", e.topic + 1).map_err(io)?;
        for j in 0..N_COEF {
            write!(w, ",{}", e.coef[j].as_f64()).map_err(io)?;
        }
        for j in 0..N_COEF {
            let (lo, hi) = e.interval(j, 0.95);
            write!(w, ",{},{}", lo.as_f64(), hi.as_f64()).map_err(io)?;
        }
        writeln!(w, ",{},{}", e.sigma2.as_f64(), e.n).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Parse `all` or a comma list of 1-based topic numbers into 0-based indices.
pub fn parse_topics(spec: &str, k: usize) -> Result<Vec<usize>> {
    let spec = spec.trim();
    if spec.eq_ignore_ascii_case("all") {
        return Ok((0..k).collect());
    }
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let t: usize = part
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad topic number {part:?}")))?;
        if t == 0 || t > k {
            return Err(Error::InvalidArgument(format!("topic {t} out of range 1..={k}")));
        }
        if !out.contains(&(t - 1)) {
            out.push(t - 1);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("no topics given".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stm::build_design;

    fn posterior(theta: Vec<f64>) -> DocPosterior<f64> {
        let k = theta.len();
        let last = theta[k - 1];
        let eta: Vec<f64> = theta[..k - 1].iter().map(|t| (t / last).ln()).collect();
        DocPosterior {
            eta_hat: eta,
            nu: DMatrix::identity(k - 1, k - 1) * 0.01,
            theta,
            bound: 0.0,
            phi: Vec::new(),
            newton_iters: 0,
        }
    }

    fn design(n: usize) -> PrevalenceDesign<f64> {
        let labels: Vec<_> = (0..n)
            .map(|i| if i % 2 == 0 { BinaryLabel::Positive } else { BinaryLabel::Normal })
            .collect();
        let p: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).fract()).collect();
        build_design(&labels, &p).unwrap()
    }

    #[test]
    fn constant_response() {
        let n = 12;
        let posts: Vec<_> = (0..n).map(|_| posterior(vec![0.3, 0.7])).collect();
        let cfg = EffectsConfig { draws: 0, ..Default::default() };
        let est = estimate_effects(&posts, &design(n), &[0], &cfg).unwrap();
        assert!((est[0].coef[0] - 0.3).abs() < 1e-10);
        for j in 1..4 {
            assert!(est[0].coef[j].abs() < 1e-10);
        }
        assert!(est[0].coef_draws.is_empty());
    }

    #[test]
    fn singular_design() {
        let labels = vec![BinaryLabel::Normal; 5];
        let d = build_design(&labels, &[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let posts: Vec<_> = (0..5).map(|_| posterior(vec![0.5, 0.5])).collect();
        let cfg = EffectsConfig { draws: 0, ..Default::default() };
        assert!(matches!(estimate_effects(&posts, &d, &[0], &cfg), Err(Error::SingularDesign)));
    }

    #[test]
    fn draws_are_deterministic_and_sized() {
        let n = 40;
        let posts: Vec<_> = (0..n)
            .map(|i| {
                let a = 0.2 + 0.5 * (i as f64 / n as f64);
                posterior(vec![a, 1.0 - a])
            })
            .collect();
        let cfg = EffectsConfig { draws: 5, sims: 50, seed: 3 };
        let a = estimate_effects(&posts, &design(n), &[0, 1], &cfg).unwrap();
        let b = estimate_effects(&posts, &design(n), &[0, 1], &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].coef_draws.len(), 50);
        let one = estimate_effects(&posts, &design(n), &[1], &cfg).unwrap();
        assert_eq!(one[0].coef_draws, a[1].coef_draws);
    }

    #[test]
    fn point_curve_arithmetic() {
        let e = EffectEstimate { topic: 0, coef: [0.0f64, 0.0, 0.5, 0.2], coef_draws: vec![], sigma2: 0.0, n: 1 };
        let c = predict_curve(&e, BinaryLabel::Positive);
        assert_eq!(c.grid.len(), 101);
        assert!((c.estimate[80] - 0.56).abs() < 1e-12);
        assert_eq!(c.lo95, c.estimate);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0f64, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert!((percentile(&v, 0.025) - 1.1).abs() < 1e-12);
        assert_eq!(percentile(&[7.0], 0.9), 7.0);
    }

    #[test]
    fn topic_lists() {
        assert_eq!(parse_topics("all", 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_topics("1,3", 3).unwrap(), vec![0, 2]);
        assert!(parse_topics("4", 3).is_err());
        assert!(parse_topics("0", 3).is_err());
    }
}
