//! Full-covariance Gaussian mixtures fitted by EM, model selection by k-fold
//! cross-validated likelihood, and Gaussian mixture regression on the first
//! (time) coordinate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::TAU;
use std::ops::RangeInclusive;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmmError {
    #[error("component {component} covariance is singular after regularisation")]
    SingularComponent { component: usize },
    #[error("not enough data: {samples} samples for {components} components in {dims} dimensions")]
    InsufficientData {
        samples: usize,
        components: usize,
        dims: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Relative diagonal floor added when a covariance fails Cholesky.
const REG_FLOOR: f64 = 1e-6;
const REG_ESCALATIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop once the mean per-sample log-likelihood improves by less than this.
    pub tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-8,
        }
    }
}

/// Gaussian mixture `sum_m prior_m N(mean_m, cov_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    pub priors: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

/// Cached factorisation of one component.
struct Component {
    log_norm: f64,
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl Component {
    fn log_density(&self, x: &DVector<f64>) -> f64 {
        const STACK: usize = 16;
        let d = x.len();
        if d > STACK {
            let diff = x - &self.mean;
            let y = self
                .chol
                .l_dirty()
                .solve_lower_triangular(&diff)
                .expect("Cholesky factor has a positive diagonal");
            return self.log_norm - 0.5 * y.norm_squared();
        }
        // forward substitution without allocating; this is the EM hot path
        let l = self.chol.l_dirty();
        let mut y = [0.0; STACK];
        let mut sq = 0.0;
        for i in 0..d {
            let mut v = x[i] - self.mean[i];
            for j in 0..i {
                v -= l[(i, j)] * y[j];
            }
            y[i] = v / l[(i, i)];
            sq += y[i] * y[i];
        }
        self.log_norm - 0.5 * sq
    }
}

fn factor(
    prior: f64,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    component: usize,
) -> Result<Component, GmmError> {
    let chol = Cholesky::new(cov.clone()).ok_or(GmmError::SingularComponent { component })?;
    let d = mean.len() as f64;
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(Component {
        log_norm: prior.ln() - 0.5 * (d * TAU.ln() + log_det),
        mean: mean.clone(),
        chol,
    })
}

/// Adds an escalating diagonal floor (relative to the mean variance) until the
/// covariance factors, or gives up.
fn regularize(cov: &mut DMatrix<f64>, component: usize) -> Result<(), GmmError> {
    if Cholesky::new(cov.clone()).is_some() {
        return Ok(());
    }
    let d = cov.nrows();
    let scale = cov.trace() / d as f64;
    for k in 0..REG_ESCALATIONS {
        let floor = REG_FLOOR * 10f64.powi(k as i32) * scale;
        for i in 0..d {
            cov[(i, i)] += floor;
        }
        if scale > 0.0 && Cholesky::new(cov.clone()).is_some() {
            return Ok(());
        }
    }
    Err(GmmError::SingularComponent { component })
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl Gmm {
    pub fn n_components(&self) -> usize {
        self.priors.len()
    }

    pub fn dims(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    fn components(&self) -> Result<Vec<Component>, GmmError> {
        (0..self.n_components())
            .map(|m| factor(self.priors[m], &self.means[m], &self.covariances[m], m))
            .collect()
    }

    /// Log density of one point.
    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64, GmmError> {
        let comps = self.components()?;
        let terms: Vec<f64> = comps.iter().map(|c| c.log_density(x)).collect();
        Ok(log_sum_exp(&terms))
    }

    /// Mean per-sample log-likelihood.
    pub fn mean_log_likelihood(&self, data: &[DVector<f64>]) -> Result<f64, GmmError> {
        let comps = self.components()?;
        let mut terms = vec![0.0; comps.len()];
        let mut total = 0.0;
        for x in data {
            for (t, c) in terms.iter_mut().zip(&comps) {
                *t = c.log_density(x);
            }
            total += log_sum_exp(&terms);
        }
        Ok(total / data.len() as f64)
    }

    /// Checks priors sum to one and every covariance is SPD.
    pub fn validate(&self) -> Result<(), GmmError> {
        let m = self.n_components();
        if m == 0 || self.means.len() != m || self.covariances.len() != m {
            return Err(GmmError::InvalidArgument("mixture shape mismatch".into()));
        }
        let sum: f64 = self.priors.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.priors.iter().any(|p| *p < 0.0) {
            return Err(GmmError::InvalidArgument(format!("priors sum to {sum}")));
        }
        self.components().map(|_| ())
    }
}

/// EM fit; see [`fit_gmm_traced`].
pub fn fit_gmm(data: &[DVector<f64>], m: usize, seed: u64) -> Result<Gmm, GmmError> {
    fit_gmm_traced(data, m, seed, EmOptions::default()).map(|(g, _)| g)
}

/// EM fit returning the mean log-likelihood after initialisation and after
/// every iteration.
///
/// Initialisation splits the samples into `m` equal-count bins along the
/// first coordinate (time); the seed only breaks ties between equal times.
pub fn fit_gmm_traced(
    data: &[DVector<f64>],
    m: usize,
    seed: u64,
    opts: EmOptions,
) -> Result<(Gmm, Vec<f64>), GmmError> {
    let n = data.len();
    let d = data.first().map_or(0, |x| x.len());
    if m == 0 || d == 0 {
        return Err(GmmError::InvalidArgument("need m >= 1 and non-empty samples".into()));
    }
    if n <= d * m {
        return Err(GmmError::InsufficientData {
            samples: n,
            components: m,
            dims: d,
        });
    }
    if data.iter().any(|x| x.len() != d) {
        return Err(GmmError::InvalidArgument("ragged sample dimensions".into()));
    }

    let mut gmm = init_time_bins(data, m, seed)?;
    let mut resp = DMatrix::<f64>::zeros(n, m);
    let mut trace = vec![e_step(&gmm, data, &mut resp)?];

    for _ in 0..opts.max_iter {
        m_step(&mut gmm, data, &resp)?;
        let ll = e_step(&gmm, data, &mut resp)?;
        let prev = *trace.last().unwrap();
        trace.push(ll);
        if ll - prev < opts.tol {
            break;
        }
    }
    Ok((gmm, trace))
}

fn init_time_bins(data: &[DVector<f64>], m: usize, seed: u64) -> Result<Gmm, GmmError> {
    let n = data.len();
    let d = data[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys: Vec<u64> = (0..n).map(|_| rng.random()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| data[a][0].total_cmp(&data[b][0]).then(keys[a].cmp(&keys[b])));

    let mut gmm = Gmm {
        priors: Vec::with_capacity(m),
        means: Vec::with_capacity(m),
        covariances: Vec::with_capacity(m),
    };
    for k in 0..m {
        let bin = &order[k * n / m..(k + 1) * n / m];
        let count = bin.len() as f64;
        let mean = bin.iter().fold(DVector::zeros(d), |acc, &i| acc + &data[i]) / count;
        let mut cov = DMatrix::zeros(d, d);
        for &i in bin {
            let c = &data[i] - &mean;
            cov += &c * c.transpose();
        }
        cov /= count;
        regularize(&mut cov, k)?;
        gmm.priors.push(count / n as f64);
        gmm.means.push(mean);
        gmm.covariances.push(cov);
    }
    Ok(gmm)
}

/// Fills responsibilities and returns the mean log-likelihood.
fn e_step(gmm: &Gmm, data: &[DVector<f64>], resp: &mut DMatrix<f64>) -> Result<f64, GmmError> {
    let comps = gmm.components()?;
    let mut terms = vec![0.0; comps.len()];
    let mut total = 0.0;
    for (i, x) in data.iter().enumerate() {
        for (t, c) in terms.iter_mut().zip(&comps) {
            *t = c.log_density(x);
        }
        let lse = log_sum_exp(&terms);
        for (k, t) in terms.iter().enumerate() {
            resp[(i, k)] = (t - lse).exp();
        }
        total += lse;
    }
    Ok(total / data.len() as f64)
}

fn m_step(gmm: &mut Gmm, data: &[DVector<f64>], resp: &DMatrix<f64>) -> Result<(), GmmError> {
    let n = data.len();
    let d = data[0].len();
    for k in 0..gmm.n_components() {
        let weight: f64 = resp.column(k).sum();
        if weight <= f64::MIN_POSITIVE * n as f64 {
            return Err(GmmError::SingularComponent { component: k });
        }
        let mut mean = DVector::zeros(d);
        for (i, x) in data.iter().enumerate() {
            mean.axpy(resp[(i, k)], x, 1.0);
        }
        mean /= weight;
        let mut cov = DMatrix::zeros(d, d);
        let mut c = DVector::zeros(d);
        for (i, x) in data.iter().enumerate() {
            c.copy_from(x);
            c -= &mean;
            cov.ger(resp[(i, k)], &c, &c, 1.0);
        }
        cov /= weight;
        cov = (&cov + cov.transpose()) * 0.5;
        regularize(&mut cov, k)?;
        gmm.priors[k] = weight / n as f64;
        gmm.means[k] = mean;
        gmm.covariances[k] = cov;
    }
    let s: f64 = gmm.priors.iter().sum();
    gmm.priors.iter_mut().for_each(|p| *p /= s);
    Ok(())
}

/// Picks the component count with the best mean held-out log-likelihood over
/// `folds`-fold cross-validation; ties go to the smaller count.
pub fn select_components(
    data: &[DVector<f64>],
    m_range: RangeInclusive<usize>,
    folds: usize,
    seed: u64,
) -> Result<usize, GmmError> {
    let n = data.len();
    if folds < 2 || n < folds {
        return Err(GmmError::InvalidArgument(format!(
            "{folds}-fold cross-validation needs at least {folds} samples, got {n}"
        )));
    }
    let candidates: Vec<usize> = m_range.filter(|&m| m >= 1).collect();
    if candidates.is_empty() {
        return Err(GmmError::InvalidArgument("empty component range".into()));
    }
    if candidates.len() == 1 {
        return Ok(candidates[0]);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: Vec<usize> = {
        let mut f = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            f[i] = pos * folds / n;
        }
        f
    };

    let jobs: Vec<(usize, usize)> = candidates
        .iter()
        .flat_map(|&m| (0..folds).map(move |f| (m, f)))
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(m, f)| {
            let (train, test): (Vec<_>, Vec<_>) =
                (0..n).partition(|&i| fold_of[i] != f);
            let train: Vec<DVector<f64>> = train.into_iter().map(|i| data[i].clone()).collect();
            let test: Vec<DVector<f64>> = test.into_iter().map(|i| data[i].clone()).collect();
            let g = fit_gmm(&train, m, seed.wrapping_add(f as u64))?;
            g.mean_log_likelihood(&test)
        })
        .collect::<Result<_, _>>()?;

    let mut best = (candidates[0], f64::NEG_INFINITY);
    for (c, &m) in candidates.iter().enumerate() {
        let mean = scores[c * folds..(c + 1) * folds].iter().sum::<f64>() / folds as f64;
        if mean > best.1 {
            best = (m, mean);
        }
    }
    Ok(best.0)
}

/// Conditional distribution of coordinates `1..` given coordinate 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GmrOutput {
    pub mean: DVector<f64>,
    /// Full mixture covariance, including the spread of component means.
    pub covariance: DMatrix<f64>,
    /// Component responsibilities at the query.
    pub weights: Vec<f64>,
}

/// Gaussian mixture regression at input `t`.
///
/// Responsibilities are computed in log space and renormalised, so queries
/// far outside the data still return the nearest component's conditional.
pub fn gmr(gmm: &Gmm, t: f64) -> GmrOutput {
    let d = gmm.dims();
    let out = d - 1;
    let m = gmm.n_components();

    let mut log_w = Vec::with_capacity(m);
    let mut cond_means = Vec::with_capacity(m);
    let mut cond_covs = Vec::with_capacity(m);
    for k in 0..m {
        let mu = &gmm.means[k];
        let s = &gmm.covariances[k];
        let s_tt = s[(0, 0)];
        let dt = t - mu[0];
        log_w.push(gmm.priors[k].ln() - 0.5 * ((TAU * s_tt).ln() + dt * dt / s_tt));

        let s_ht = s.view((1, 0), (out, 1)).column(0).into_owned();
        let mean = mu.rows(1, out).into_owned() + &s_ht * (dt / s_tt);
        let cov = s.view((1, 1), (out, out)).into_owned() - &s_ht * s_ht.transpose() / s_tt;
        cond_means.push(mean);
        cond_covs.push(cov);
    }
    let lse = log_sum_exp(&log_w);
    let mut weights: Vec<f64> = log_w.iter().map(|l| (l - lse).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    let mut mean = DVector::zeros(out);
    for (w, mu) in weights.iter().zip(&cond_means) {
        mean.axpy(*w, mu, 1.0);
    }
    let mut covariance = DMatrix::zeros(out, out);
    for ((w, mu), cov) in weights.iter().zip(&cond_means).zip(&cond_covs) {
        let c = mu - &mean;
        covariance += (cov + &c * c.transpose()) * *w;
    }
    covariance = (&covariance + covariance.transpose()) * 0.5;
    GmrOutput {
        mean,
        covariance,
        weights,
    }
}
