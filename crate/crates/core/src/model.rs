//! Domain types: observations with their coding priors, Gaussian class
//! parameters, mixture models and exclusive assignments.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// ½·ln(2π).
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

/// Prior ranges and measurement precision used to code a dataset.
///
/// Means are uniform on `range_mu[m]`, standard deviations uniform on
/// `(0, sigma_hi[m]]`. `eps` turns densities into probabilities and is also
/// the floor for every class standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub range_mu: Vec<Interval>,
    pub sigma_hi: Vec<f64>,
    pub eps: f64,
}

impl Priors {
    /// Same ranges on every attribute.
    pub fn uniform(n_attrs: usize, range_mu: Interval, sigma_hi: f64, eps: f64) -> Self {
        Priors {
            range_mu: vec![range_mu; n_attrs],
            sigma_hi: vec![sigma_hi; n_attrs],
            eps,
        }
    }

    fn validate(&self, n_attrs: usize) -> Result<()> {
        if self.range_mu.len() != n_attrs || self.sigma_hi.len() != n_attrs {
            return Err(Error::input(format!(
                "priors cover {} / {} attributes, data has {n_attrs}",
                self.range_mu.len(),
                self.sigma_hi.len()
            )));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::input(format!("eps must be positive, got {}", self.eps)));
        }
        for (m, (r, &s)) in self.range_mu.iter().zip(&self.sigma_hi).enumerate() {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.width() > 0.0) {
                return Err(Error::input(format!("attribute {m}: mean range [{}, {}] has no width", r.lo, r.hi)));
            }
            if !(s.is_finite() && s > self.eps) {
                return Err(Error::input(format!(
                    "attribute {m}: sigma upper bound {s} must exceed eps {}",
                    self.eps
                )));
            }
        }
        Ok(())
    }
}

/// N×M observations, row-major, plus the priors they are coded against.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    n_obs: usize,
    n_attrs: usize,
    names: Vec<String>,
    priors: Priors,
}

impl Dataset {
    /// Builds a dataset with default priors (see [`Dataset::default_priors`]).
    pub fn from_flat(values: Vec<f64>, n_attrs: usize) -> Result<Self> {
        if n_attrs == 0 {
            return Err(Error::input("dataset needs at least one attribute"));
        }
        if values.is_empty() || !values.len().is_multiple_of(n_attrs) {
            return Err(Error::input(format!(
                "{} values do not form rows of {n_attrs} attributes",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "non-finite value at row {}, attribute {}",
                pos / n_attrs,
                pos % n_attrs
            )));
        }
        let n_obs = values.len() / n_attrs;
        let names = (1..=n_attrs).map(|m| format!("x{m}")).collect();
        let priors = Self::default_priors(&values, n_obs, n_attrs);
        let ds = Dataset { values, n_obs, n_attrs, names, priors };
        ds.priors.validate(n_attrs)?;
        Ok(ds)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_attrs = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_attrs) {
            return Err(Error::input("rows have differing lengths"));
        }
        Self::from_flat(rows.concat(), n_attrs)
    }

    /// Per attribute: μ range `[min − 0.1·span, max + 0.1·span]`, σ range
    /// `(0, span]`; `eps = 0.01·pooled std`. A zero span (constant column or a
    /// single row) is treated as 1, and so is a zero pooled std. When the
    /// pooled eps would reach some attribute's σ bound, eps drops to 0.01 of
    /// the smallest span instead.
    pub fn default_priors(values: &[f64], n_obs: usize, n_attrs: usize) -> Priors {
        let mut range_mu = Vec::with_capacity(n_attrs);
        let mut sigma_hi = Vec::with_capacity(n_attrs);
        let mut var_sum = 0.0;
        for m in 0..n_attrs {
            let col = values.iter().skip(m).step_by(n_attrs);
            let (lo, hi) = col.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let span = if hi > lo { hi - lo } else { 1.0 };
            range_mu.push(Interval::new(lo - 0.1 * span, hi + 0.1 * span));
            sigma_hi.push(span);
            let mean = col.clone().sum::<f64>() / n_obs as f64;
            var_sum += col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n_obs as f64;
        }
        let pooled = (var_sum / n_attrs as f64).sqrt();
        let mut eps = 0.01 * if pooled > 0.0 { pooled } else { 1.0 };
        let min_span = sigma_hi.iter().copied().fold(f64::INFINITY, f64::min);
        if eps >= min_span {
            eps = 0.01 * min_span;
        }
        Priors { range_mu, sigma_hi, eps }
    }

    pub fn with_priors(mut self, priors: Priors) -> Result<Self> {
        priors.validate(self.n_attrs)?;
        self.priors = priors;
        Ok(self)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_attrs {
            return Err(Error::input(format!("{} names for {} attributes", names.len(), self.n_attrs)));
        }
        self.names = names;
        Ok(self)
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_attrs(&self) -> usize {
        self.n_attrs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_attrs..(i + 1) * self.n_attrs]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + Clone {
        self.values.chunks_exact(self.n_attrs)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn priors(&self) -> &Priors {
        &self.priors
    }

    pub fn eps(&self) -> f64 {
        self.priors.eps
    }

    /// Class standard deviation floor; equal to the measurement precision.
    pub fn sigma_min(&self) -> f64 {
        self.priors.eps
    }

    /// Per-attribute population standard deviation over all rows.
    pub fn column_std(&self) -> Vec<f64> {
        let n = self.n_obs as f64;
        (0..self.n_attrs)
            .map(|m| {
                let mean = self.rows().map(|r| r[m]).sum::<f64>() / n;
                (self.rows().map(|r| (r[m] - mean).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParam {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianParam {
    pub fn new(mu: f64, sigma: f64) -> Self {
        GaussianParam { mu, sigma }
    }

    pub fn density(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        (-0.5 * z * z).exp() / (self.sigma * (2.0 * PI).sqrt())
    }

    pub fn ln_density(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        -HALF_LN_2PI - self.sigma.ln() - 0.5 * z * z
    }
}

/// Code length in nits of one attribute value: `−ln(φ(x; μ, σ)·eps)`.
pub fn gaussian_nll(x: f64, p: GaussianParam, eps: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::input(format!("non-finite observation {x}")));
    }
    if eps.is_nan() || eps <= 0.0 || p.sigma.is_nan() || p.sigma <= 0.0 {
        return Err(Error::input(format!("need sigma > 0 and eps > 0, got {} and {eps}", p.sigma)));
    }
    Ok(-p.ln_density(x) - eps.ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    weights: Vec<f64>,
    classes: Vec<Vec<GaussianParam>>,
}

impl MixtureModel {
    pub fn new(weights: Vec<f64>, classes: Vec<Vec<GaussianParam>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::input("mixture needs at least one class"));
        }
        if weights.len() != classes.len() {
            return Err(Error::input(format!("{} weights for {} classes", weights.len(), classes.len())));
        }
        let n_attrs = classes[0].len();
        if n_attrs == 0 || classes.iter().any(|c| c.len() != n_attrs) {
            return Err(Error::input("classes must all have the same, nonzero number of attributes"));
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::input("class weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::input(format!("class weights sum to {total}, not 1")));
        }
        if classes.iter().flatten().any(|p| !(p.sigma > 0.0 && p.sigma.is_finite() && p.mu.is_finite())) {
            return Err(Error::input("class parameters must be finite with sigma > 0"));
        }
        Ok(MixtureModel { weights, classes })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn n_attrs(&self) -> usize {
        self.classes[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn classes(&self) -> &[Vec<GaussianParam>] {
        &self.classes
    }

    pub fn class(&self, j: usize) -> &[GaussianParam] {
        &self.classes[j]
    }

    /// Same model with classes reordered so that new class `j` is old class
    /// `order[j]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        check_permutation(order, self.k())?;
        Ok(MixtureModel {
            weights: order.iter().map(|&j| self.weights[j]).collect(),
            classes: order.iter().map(|&j| self.classes[j].clone()).collect(),
        })
    }
}

fn check_permutation(order: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    if order.len() != k || order.iter().any(|&j| j >= k || std::mem::replace(&mut seen[j], true)) {
        return Err(Error::input(format!("{order:?} is not a permutation of 0..{k}")));
    }
    Ok(())
}

/// Exclusive class membership of each observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    labels: Vec<usize>,
    k: usize,
}

impl Assignment {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::input("assignment needs k >= 1"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::input(format!("label {bad} out of range for k = {k}")));
        }
        Ok(Assignment { labels, k })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub(crate) fn set(&mut self, i: usize, label: usize) {
        debug_assert!(label < self.k);
        self.labels[i] = label;
    }

    /// Relabels so that old class `order[j]` becomes class `j`, matching
    /// [`MixtureModel::permuted`].
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        check_permutation(order, self.k)?;
        let mut inverse = vec![0; self.k];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new;
        }
        Ok(Assignment { labels: self.labels.iter().map(|&l| inverse[l]).collect(), k: self.k })
    }
}

/// Per-attribute mean and `n − 1` standard deviation of a group of rows,
/// floored at `sigma_min`; a single member gets `sigma_min`.
///
/// Members are consumed in iteration order; callers that need bit-identical
/// results across code paths must present them in the same order.
pub fn reestimate_class<'a, I>(members: I, sigma_min: f64) -> Result<Vec<GaussianParam>>
where
    I: IntoIterator<Item = &'a [f64]>,
    I::IntoIter: Clone,
{
    let iter = members.into_iter();
    let mut n = 0usize;
    let mut sums: Vec<f64> = Vec::new();
    for row in iter.clone() {
        if n == 0 {
            sums = vec![0.0; row.len()];
        } else if row.len() != sums.len() {
            return Err(Error::input("member rows have differing lengths"));
        }
        for (s, &x) in sums.iter_mut().zip(row) {
            *s += x;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyClass);
    }
    let means: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let mut sq = vec![0.0; means.len()];
    for row in iter {
        for ((acc, &x), &mu) in sq.iter_mut().zip(row).zip(&means) {
            *acc += (x - mu) * (x - mu);
        }
    }
    Ok(means
        .iter()
        .zip(&sq)
        .map(|(&mu, &ss)| {
            let sigma = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
            GaussianParam::new(mu, sigma.max(sigma_min))
        })
        .collect())
}

/// Laplace-smoothed class weights `(count_j + 1) / (N + k)`.
pub fn smoothed_weights(counts: &[usize]) -> Vec<f64> {
    let n: usize = counts.iter().sum();
    let denom = (n + counts.len()) as f64;
    counts.iter().map(|&c| (c + 1) as f64 / denom).collect()
}

/// Identity of a partition of the observations, independent of class labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartitionHash(pub u64);

impl fmt::Display for PartitionHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl std::str::FromStr for PartitionHash {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        u64::from_str_radix(s, 16)
            .map(PartitionHash)
            .map_err(|e| Error::input(format!("bad partition hash {s:?}: {e}")))
    }
}

impl Serialize for PartitionHash {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PartitionHash {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Labels renumbered in order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<u32> {
    let mut map: Vec<Option<u32>> = Vec::new();
    let mut next = 0u32;
    labels
        .iter()
        .map(|&l| {
            if l >= map.len() {
                map.resize(l + 1, None);
            }
            *map[l].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

pub fn canonical_partition_hash(a: &Assignment) -> PartitionHash {
    let mut hasher = Sha256::new();
    for l in canonical_labels(a.labels()) {
        hasher.update(l.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    PartitionHash(u64::from_le_bytes(head))
}
