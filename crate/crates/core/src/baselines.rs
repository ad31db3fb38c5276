//! Point-estimate baselines: maximum-likelihood EM, Lloyd's K-Means, and a
//! randomly restarted EM search over k scored by message length.

use std::time::Instant;

use log::warn;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::coder::{message_length, MessageLength};
use crate::error::{Error, Result};
use crate::exec::{Budget, Execution};
use crate::model::{Assignment, Dataset, GaussianParam, MixtureModel};
use crate::rng::{substream, Purpose, Rng};

/// Soft class memberships, N×k row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    k: usize,
    resp: Vec<f64>,
}

impl SoftAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.resp[i * self.k..(i + 1) * self.k]
    }

    pub fn n_obs(&self) -> usize {
        self.resp.len() / self.k
    }

    /// Exclusive assignment to the most responsible class (lowest index on
    /// ties).
    pub fn harden(&self) -> Assignment {
        let labels = self
            .resp
            .chunks_exact(self.k)
            .map(|r| r.iter().enumerate().fold(0, |best, (j, &p)| if p > r[best] { j } else { best }))
            .collect();
        Assignment::new(labels, self.k).expect("argmax is a valid label")
    }
}

fn ln_joint(model: &MixtureModel, row: &[f64], out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        *o = model.weights()[j].ln()
            + model.class(j).iter().zip(row).map(|(p, &x)| p.ln_density(x)).sum::<f64>();
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `Σ_i ln Σ_j w_j f(x_i | θ_j)` in nats.
pub fn log_likelihood(data: &Dataset, model: &MixtureModel) -> f64 {
    let k = model.k();
    Execution::default().sum_rows(data.n_obs(), |i| {
        let mut buf = vec![0.0; k];
        ln_joint(model, data.row(i), &mut buf);
        log_sum_exp(&buf)
    })
}

/// Responsibilities and the log-likelihood of `model`.
pub fn e_step(data: &Dataset, model: &MixtureModel) -> (SoftAssignment, f64) {
    let k = model.k();
    let n = data.n_obs();
    let exec = if n >= crate::exec::PAR_ROW_THRESHOLD { Execution::default() } else { Execution::Sequential };
    let rows: Vec<(Vec<f64>, f64)> = exec.map_range(n, |i| {
        let mut r = vec![0.0; k];
        ln_joint(model, data.row(i), &mut r);
        let lse = log_sum_exp(&r);
        r.iter_mut().for_each(|v| *v = (*v - lse).exp());
        (r, lse)
    });
    let mut resp = Vec::with_capacity(n * k);
    let mut chunk_totals = Vec::with_capacity(n.div_ceil(crate::exec::CHUNK_ROWS));
    for chunk in rows.chunks(crate::exec::CHUNK_ROWS) {
        chunk_totals.push(chunk.iter().map(|(_, l)| l).sum::<f64>());
        for (r, _) in chunk {
            resp.extend_from_slice(r);
        }
    }
    (SoftAssignment { k, resp }, chunk_totals.into_iter().sum())
}

/// Weighted re-estimation from responsibilities. A class whose total
/// responsibility underflows keeps `previous` parameters and a tiny weight.
pub fn m_step(data: &Dataset, soft: &SoftAssignment, previous: &MixtureModel) -> MixtureModel {
    let k = soft.k();
    let m = data.n_attrs();
    let n = data.n_obs() as f64;
    let sigma_min = data.sigma_min();
    let mut nk = vec![0.0; k];
    let mut sums = vec![0.0; k * m];
    for (i, row) in data.rows().enumerate() {
        for (j, &r) in soft.row(i).iter().enumerate() {
            nk[j] += r;
            for (s, &x) in sums[j * m..(j + 1) * m].iter_mut().zip(row) {
                *s += r * x;
            }
        }
    }
    let means: Vec<f64> = (0..k * m).map(|jm| sums[jm] / nk[jm / m]).collect();
    let mut sq = vec![0.0; k * m];
    for (i, row) in data.rows().enumerate() {
        for (j, &r) in soft.row(i).iter().enumerate() {
            for ((s, &x), &mu) in sq[j * m..(j + 1) * m].iter_mut().zip(row).zip(&means[j * m..(j + 1) * m]) {
                *s += r * (x - mu) * (x - mu);
            }
        }
    }
    const DEAD: f64 = 1e-300;
    let mut weights: Vec<f64> = nk.iter().map(|&c| (c / n).max(DEAD)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let classes = (0..k)
        .map(|j| {
            if nk[j] < DEAD * n {
                return previous.class(j).to_vec();
            }
            (0..m)
                .map(|a| GaussianParam::new(means[j * m + a], (sq[j * m + a] / nk[j]).sqrt().max(sigma_min)))
                .collect()
        })
        .collect();
    MixtureModel::new(weights, classes).expect("renormalized weights and floored sigmas")
}

/// One EM iteration.
pub fn em_step(data: &Dataset, model: &MixtureModel) -> MixtureModel {
    let (soft, _) = e_step(data, model);
    m_step(data, &soft, model)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { tol: 1e-7, max_iter: 500 }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: MixtureModel,
    pub loglik: f64,
    /// Log-likelihood of the initial model followed by one value per step.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub responsibilities: SoftAssignment,
}

/// Random starting model: `k` distinct observations as means, the overall
/// per-attribute spread as every σ, equal weights.
pub fn em_init(data: &Dataset, k: usize, rng: &mut Rng) -> Result<MixtureModel> {
    if k == 0 || k > data.n_obs() {
        return Err(Error::input(format!("cannot pick {k} starting means from {} observations", data.n_obs())));
    }
    let spread: Vec<f64> = data.column_std().into_iter().map(|s| s.max(data.sigma_min())).collect();
    let classes = sample(rng, data.n_obs(), k)
        .into_iter()
        .map(|i| data.row(i).iter().zip(&spread).map(|(&mu, &s)| GaussianParam::new(mu, s)).collect())
        .collect();
    MixtureModel::new(vec![1.0 / k as f64; k], classes)
}

pub fn em_fit(data: &Dataset, k: usize, seed: u64, opts: EmOptions) -> Result<EmFit> {
    let mut rng = substream(seed, Purpose::EmRestart, 0);
    em_fit_from(data, em_init(data, k, &mut rng)?, opts, None)
}

/// EM from a given start until the log-likelihood changes by less than
/// `tol`, `max_iter` steps have run, or `deadline` passes.
pub fn em_fit_from(data: &Dataset, start: MixtureModel, opts: EmOptions, deadline: Option<Instant>) -> Result<EmFit> {
    if start.n_attrs() != data.n_attrs() {
        return Err(Error::input("model and data disagree on attribute count"));
    }
    let mut model = start;
    let (mut soft, mut ll) = e_step(data, &model);
    let mut trace = vec![ll];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            break;
        }
        model = m_step(data, &soft, &model);
        iterations += 1;
        let (next_soft, next_ll) = e_step(data, &model);
        let delta = next_ll - ll;
        soft = next_soft;
        ll = next_ll;
        trace.push(ll);
        if delta.abs() < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(EmFit { model, loglik: ll, loglik_trace: trace, iterations, converged, responsibilities: soft })
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Assignment,
    pub distortion: f64,
    /// Distortion after every assignment step.
    pub distortion_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm from `k` distinct random observations. Stops when no
/// label changes or after `max_iter` rounds. An emptied cluster keeps its
/// previous centroid.
pub fn kmeans_fit(data: &Dataset, k: usize, seed: u64, max_iter: usize) -> Result<KMeansFit> {
    if k == 0 || k > data.n_obs() {
        return Err(Error::input(format!("cannot form {k} clusters from {} observations", data.n_obs())));
    }
    let m = data.n_attrs();
    let mut rng = substream(seed, Purpose::KMeans, 0);
    let mut centroids: Vec<Vec<f64>> = sample(&mut rng, data.n_obs(), k).into_iter().map(|i| data.row(i).to_vec()).collect();
    let mut labels = vec![usize::MAX; data.n_obs()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let mut changed = false;
        let mut distortion = 0.0;
        for (i, row) in data.rows().enumerate() {
            let (best, d) = centroids
                .iter()
                .enumerate()
                .map(|(j, c)| (j, sq_dist(row, c)))
                .fold((0, f64::INFINITY), |acc, (j, d)| if d < acc.1 { (j, d) } else { acc });
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
            distortion += d;
        }
        trace.push(distortion);
        if !changed || iterations >= max_iter {
            break;
        }
        iterations += 1;
        let mut sums = vec![vec![0.0; m]; k];
        let mut counts = vec![0usize; k];
        for (row, &l) in data.rows().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(row).for_each(|(s, &x)| *s += x);
        }
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
    }
    Ok(KMeansFit {
        centroids,
        assignment: Assignment::new(labels, k)?,
        distortion: *trace.last().expect("at least one pass"),
        distortion_trace: trace,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmSearchFit {
    pub k: usize,
    pub loglik: f64,
    pub total_nits: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct EmSearchResult {
    pub model: MixtureModel,
    pub assignment: Assignment,
    pub length: MessageLength,
    pub fits: Vec<EmSearchFit>,
    /// Set when not even one fit could finish inside the budget.
    pub partial: bool,
}

impl EmSearchResult {
    pub fn k(&self) -> usize {
        self.model.k()
    }
}

type Scored = (MixtureModel, Assignment, MessageLength);

/// Randomly restarted EM, cycling k through `k_min..=k_max`. Each fit is
/// hardened to its most responsible classes and priced as a message; the
/// shortest wins.
pub fn em_search(
    data: &Dataset,
    k_min: usize,
    k_max: usize,
    budget: Budget,
    seed: u64,
    execution: Execution,
) -> Result<EmSearchResult> {
    if k_min == 0 || k_min > k_max {
        return Err(Error::input(format!("need 1 <= k_min <= k_max, got {k_min}..={k_max}")));
    }
    if k_max > data.n_obs() {
        return Err(Error::input("fewer observations than classes"));
    }
    if let Budget::Time(d) = budget {
        if d.is_zero() {
            return Err(Error::input("search budget must be positive"));
        }
    }
    let start = Instant::now();
    let deadline = budget.deadline(start);
    let span = k_max - k_min + 1;
    let opts = EmOptions::default();
    let fit_one = |index: usize| -> Result<(EmSearchFit, Option<Scored>)> {
        let k = k_min + index % span;
        let mut rng = substream(seed, Purpose::EmRestart, index as u64);
        let fit = em_fit_from(data, em_init(data, k, &mut rng)?, opts, deadline)?;
        let assignment = fit.responsibilities.harden();
        let scored = match message_length(data, &assignment, &fit.model, k_max) {
            Ok(len) => Some((fit.model, assignment, len)),
            Err(Error::OutOfPriorRange(_)) => None,
            Err(e) => return Err(e),
        };
        let summary = EmSearchFit {
            k,
            loglik: fit.loglik,
            total_nits: scored.as_ref().map_or(f64::INFINITY, |s| s.2.total),
            converged: fit.converged,
        };
        Ok((summary, scored))
    };

    let width = execution.threads();
    let mut fits: Vec<EmSearchFit> = Vec::new();
    let mut best: Option<(MixtureModel, Assignment, MessageLength)> = None;
    while budget.allows(fits.len(), start) {
        let first = fits.len();
        let batch = match budget {
            Budget::Runs(n) => width.min(n.max(1) - first),
            Budget::Time(_) => width,
        };
        for r in execution.map_range(batch, |i| fit_one(first + i)) {
            let (summary, scored) = r?;
            if let Some(s) = scored {
                if best.as_ref().is_none_or(|b| s.2.total < b.2.total) {
                    best = Some(s);
                }
            }
            fits.push(summary);
        }
    }
    let partial = !fits.iter().any(|f| f.converged) && deadline.is_some();
    if partial {
        warn!("EM search budget ran out before any fit converged");
    }
    let (model, assignment, length) =
        best.ok_or_else(|| Error::OutOfPriorRange("no EM fit could be coded within the prior ranges".into()))?;
    Ok(EmSearchResult { model, assignment, length, fits, partial })
}
