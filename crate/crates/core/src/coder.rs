//! Two-part message lengths for a mixture model plus an exclusive assignment.
//!
//! Part 1 states the model under uniform priors on k, the class weights and
//! every (μ, σ), with each parameter pair quantized to a Fisher-sized cell:
//!
//! ```text
//! L_k       = ln k_max
//! L_weights = (k−1)/2 · ln(N/12 + 1) − ½ Σ_j ln w_j
//! L_params  = Σ_j Σ_m  ln(R_μ R_σ) + ½ ln 2 + ln n_j − 2 ln σ_jm + 1 + ln κ₂
//! ```
//!
//! with `n_j = max(count_j, 2)` and κ₂ = 5 / (36√3) the two-dimensional
//! quantizing constant. Part 2 codes each observation's label with
//! `−ln w` and each attribute value with
//! [`gaussian_nll`](crate::model::gaussian_nll).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{Assignment, Dataset, GaussianParam, MixtureModel, HALF_LN_2PI};

/// Optimal quantizing lattice constant in two dimensions.
pub const KAPPA_2: f64 = 0.080_187_537_387_448_04;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MessageLength {
    pub part1: f64,
    pub part2: f64,
    pub total: f64,
}

impl MessageLength {
    pub fn new(part1: f64, part2: f64) -> Self {
        MessageLength { part1, part2, total: part1 + part2 }
    }
}

fn check_counts(model: &MixtureModel, counts: &[usize], data: &Dataset) -> Result<()> {
    if counts.len() != model.k() {
        return Err(Error::input(format!("{} counts for k = {}", counts.len(), model.k())));
    }
    if counts.iter().sum::<usize>() != data.n_obs() {
        return Err(Error::input("class counts do not sum to N"));
    }
    if model.n_attrs() != data.n_attrs() {
        return Err(Error::input(format!(
            "model has {} attributes, data has {}",
            model.n_attrs(),
            data.n_attrs()
        )));
    }
    Ok(())
}

/// Length of the model part, in nits.
pub fn part1_length(model: &MixtureModel, counts: &[usize], data: &Dataset, k_max: usize) -> Result<f64> {
    check_counts(model, counts, data)?;
    let k = model.k();
    if k_max < k {
        return Err(Error::input(format!("k = {k} exceeds k_max = {k_max}")));
    }
    let priors = data.priors();
    let l_k = (k_max as f64).ln();
    let l_weights = if k == 1 {
        0.0
    } else {
        0.5 * (k - 1) as f64 * (data.n_obs() as f64 / 12.0 + 1.0).ln()
            - 0.5 * model.weights().iter().map(|w| w.ln()).sum::<f64>()
    };
    let cell = 0.5 * std::f64::consts::LN_2 + 1.0 + KAPPA_2.ln();
    let mut l_params = 0.0;
    for (j, (class, &count)) in model.classes().iter().zip(counts).enumerate() {
        let ln_n = (count.max(2) as f64).ln();
        for (m, p) in class.iter().enumerate() {
            let range = priors.range_mu[m];
            let sigma_hi = priors.sigma_hi[m];
            if !range.contains(p.mu) || !(p.sigma > 0.0 && p.sigma <= sigma_hi) {
                return Err(Error::OutOfPriorRange(format!(
                    "class {j}, attribute {m}: (mu {}, sigma {}) outside [{}, {}] x (0, {sigma_hi}]",
                    p.mu, p.sigma, range.lo, range.hi
                )));
            }
            l_params += (range.width() * sigma_hi).ln() + cell + ln_n - 2.0 * p.sigma.ln();
        }
    }
    Ok(l_k + l_weights + l_params)
}

/// Length of the data part, in nits.
pub fn part2_length(data: &Dataset, a: &Assignment, model: &MixtureModel) -> Result<f64> {
    if a.k() != model.k() || a.len() != data.n_obs() || model.n_attrs() != data.n_attrs() {
        return Err(Error::input("assignment, model and data disagree in shape"));
    }
    let coder = ModelCoder::new(model, data.eps());
    let labels = a.labels();
    Ok(Execution::default().sum_rows(data.n_obs(), |i| coder.delta(labels[i], data.row(i))))
}

pub fn message_length(data: &Dataset, a: &Assignment, model: &MixtureModel, k_max: usize) -> Result<MessageLength> {
    let part1 = part1_length(model, &a.counts(), data, k_max)?;
    let part2 = part2_length(data, a, model)?;
    Ok(MessageLength::new(part1, part2))
}

/// Precomputed per-class constants for pricing one observation under a fixed
/// model: `−ln w_j + Σ_m gaussian_nll(x_m; μ_jm, σ_jm, eps)`.
#[derive(Debug, Clone)]
pub(crate) struct ModelCoder {
    n_attrs: usize,
    neg_ln_w: Vec<f64>,
    // per class-attribute: (mu, 1 / (2σ²)); constant terms folded into `offset`
    terms: Vec<(f64, f64)>,
    offset: Vec<f64>,
}

impl ModelCoder {
    pub(crate) fn new(model: &MixtureModel, eps: f64) -> Self {
        let n_attrs = model.n_attrs();
        let ln_eps = eps.ln();
        let mut terms = Vec::with_capacity(model.k() * n_attrs);
        let mut offset = Vec::with_capacity(model.k());
        for class in model.classes() {
            let mut off = 0.0;
            for p in class {
                terms.push((p.mu, 0.5 / (p.sigma * p.sigma)));
                off += HALF_LN_2PI + p.sigma.ln() - ln_eps;
            }
            offset.push(off);
        }
        ModelCoder {
            n_attrs,
            neg_ln_w: model.weights().iter().map(|w| -w.ln()).collect(),
            terms,
            offset,
        }
    }

    /// Cost in nits of stating `row` as a member of class `j`.
    #[inline]
    pub(crate) fn delta(&self, j: usize, row: &[f64]) -> f64 {
        let terms = &self.terms[j * self.n_attrs..(j + 1) * self.n_attrs];
        let quad: f64 = terms.iter().zip(row).map(|(&(mu, h), &x)| (x - mu) * (x - mu) * h).sum();
        self.neg_ln_w[j] + self.offset[j] + quad
    }

    pub(crate) fn deltas_into(&self, row: &[f64], out: &mut [f64]) {
        for (j, d) in out.iter_mut().enumerate() {
            *d = self.delta(j, row);
        }
    }
}

/// Turns message lengths into probabilities: `p_i ∝ exp(−(L_i − L_min))`.
pub fn normalized_posteriors(lengths: &[f64]) -> Result<Vec<f64>> {
    if lengths.is_empty() {
        return Err(Error::input("no lengths to normalize"));
    }
    if lengths.iter().any(|l| !l.is_finite()) {
        return Err(Error::input("message lengths must be finite"));
    }
    let mut p = lengths.to_vec();
    softmax_neg_in_place(&mut p);
    Ok(p)
}

/// In-place `x_i ← exp(−(x_i − min)) / Σ`. Infinite entries get probability 0
/// as long as at least one entry is finite.
pub(crate) fn softmax_neg_in_place(x: &mut [f64]) {
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let mut total = 0.0;
    for v in x.iter_mut() {
        *v = (-(*v - min)).exp();
        total += *v;
    }
    for v in x.iter_mut() {
        *v /= total;
    }
}

/// One of the eight parameter cells bordering the cell of the estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborOdds {
    /// Offset in cells along μ and σ, each in {−1, 0, 1}.
    pub step_mu: i8,
    pub step_sigma: i8,
    pub point: GaussianParam,
    /// `exp(L(neighbor) − L(estimate))`, or `None` when the neighbor's
    /// representative point falls outside the prior ranges.
    pub odds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionOdds {
    pub estimate: GaussianParam,
    pub cell_mu: f64,
    pub cell_sigma: f64,
    pub length: MessageLength,
    pub neighbors: Vec<NeighborOdds>,
}

impl RegionOdds {
    pub fn available(&self) -> impl Iterator<Item = f64> + '_ {
        self.neighbors.iter().filter_map(|n| n.odds)
    }

    pub fn min_odds(&self) -> Option<f64> {
        self.available().reduce(f64::min)
    }

    pub fn max_odds(&self) -> Option<f64> {
        self.available().reduce(f64::max)
    }
}

/// Posterior odds of the estimate's parameter cell against its eight grid
/// neighbours for a single-attribute sample coded as one class.
///
/// Cell sides come from the diagonal Fisher terms: `sqrt(12σ²/n)` along μ
/// and `sqrt(12σ²/(2n))` along σ.
pub fn region_odds(sample: &Dataset) -> Result<RegionOdds> {
    if sample.n_attrs() != 1 {
        return Err(Error::input("region odds need a single-attribute sample"));
    }
    let n = sample.n_obs();
    if n < 10 {
        return Err(Error::input(format!("region odds need at least 10 observations, got {n}")));
    }
    let estimate = crate::model::reestimate_class(sample.rows(), sample.sigma_min())?[0];
    let var = estimate.sigma * estimate.sigma;
    let cell_mu = (12.0 * var / n as f64).sqrt();
    let cell_sigma = (12.0 * var / (2.0 * n as f64)).sqrt();
    let assignment = Assignment::new(vec![0; n], 1)?;
    let length_at = |p: GaussianParam| -> Result<MessageLength> {
        let model = MixtureModel::new(vec![1.0], vec![vec![p]])?;
        message_length(sample, &assignment, &model, 1)
    };
    let length = length_at(estimate)?;
    let mut neighbors = Vec::with_capacity(8);
    for step_sigma in [-1i8, 0, 1] {
        for step_mu in [-1i8, 0, 1] {
            if step_mu == 0 && step_sigma == 0 {
                continue;
            }
            let point = GaussianParam::new(
                estimate.mu + f64::from(step_mu) * cell_mu,
                estimate.sigma + f64::from(step_sigma) * cell_sigma,
            );
            let odds = if point.sigma > 0.0 {
                match length_at(point) {
                    Ok(l) => Some((l.total - length.total).exp()),
                    Err(Error::OutOfPriorRange(_)) => None,
                    Err(e) => return Err(e),
                }
            } else {
                None
            };
            neighbors.push(NeighborOdds { step_mu, step_sigma, point, odds });
        }
    }
    Ok(RegionOdds { estimate, cell_mu, cell_sigma, length, neighbors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gaussian_nll, Interval, Priors};
    use approx::assert_abs_diff_eq;

    fn observation_cost(model: &MixtureModel, j: usize, row: &[f64], eps: f64) -> Result<f64> {
        let mut cost = -model.weights()[j].ln();
        for (&x, &p) in row.iter().zip(model.class(j)) {
            cost += gaussian_nll(x, p, eps)?;
        }
        Ok(cost)
    }

    fn one_attr(values: &[f64], mu: Interval, sigma_hi: f64, eps: f64) -> Dataset {
        Dataset::from_flat(values.to_vec(), 1)
            .unwrap()
            .with_priors(Priors::uniform(1, mu, sigma_hi, eps))
            .unwrap()
    }

    #[test]
    fn kappa_matches_closed_form() {
        assert_abs_diff_eq!(KAPPA_2, 5.0 / (36.0 * 3f64.sqrt()), epsilon = 1e-17);
    }

    #[test]
    fn single_class_has_no_k_or_weight_cost() {
        let data = one_attr(&[0.0, 1.0, 2.0], Interval::new(-5.0, 5.0), 5.0, 0.01);
        let model = MixtureModel::new(vec![1.0], vec![vec![GaussianParam::new(1.0, 1.0)]]).unwrap();
        let got = part1_length(&model, &[3], &data, 1).unwrap();
        let params_only = (10.0f64 * 5.0).ln() + 0.5 * 2f64.ln() + 3f64.ln() + 1.0 + KAPPA_2.ln();
        assert_abs_diff_eq!(got, params_only, epsilon = 1e-12);
    }

    #[test]
    fn doubling_mu_range_adds_ln2_per_class_attribute() {
        let rows = vec![0.1, 0.2, -0.3, 0.4, 0.0, -0.1];
        let narrow = Dataset::from_flat(rows.clone(), 2)
            .unwrap()
            .with_priors(Priors::uniform(2, Interval::new(-2.0, 2.0), 3.0, 0.01))
            .unwrap();
        let wide = narrow.clone().with_priors(Priors::uniform(2, Interval::new(-4.0, 4.0), 3.0, 0.01)).unwrap();
        let c = vec![GaussianParam::new(0.0, 0.5), GaussianParam::new(0.1, 0.4)];
        let model = MixtureModel::new(vec![0.5, 0.5], vec![c.clone(), c]).unwrap();
        let counts = [2, 1];
        let d = part1_length(&model, &counts, &wide, 4).unwrap() - part1_length(&model, &counts, &narrow, 4).unwrap();
        assert_abs_diff_eq!(d, 4.0 * std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn out_of_range_parameters_are_rejected() {
        let data = one_attr(&[0.0, 1.0], Interval::new(-1.0, 1.0), 2.0, 0.01);
        let far = MixtureModel::new(vec![1.0], vec![vec![GaussianParam::new(3.0, 1.0)]]).unwrap();
        assert!(matches!(part1_length(&far, &[2], &data, 1), Err(Error::OutOfPriorRange(_))));
        let wide = MixtureModel::new(vec![1.0], vec![vec![GaussianParam::new(0.0, 2.5)]]).unwrap();
        assert!(matches!(part1_length(&wide, &[2], &data, 1), Err(Error::OutOfPriorRange(_))));
    }

    #[test]
    fn part2_single_point() {
        let data = one_attr(&[0.25], Interval::new(-5.0, 5.0), 5.0, 1.0);
        let model = MixtureModel::new(vec![1.0], vec![vec![GaussianParam::new(0.25, 1.0)]]).unwrap();
        let a = Assignment::new(vec![0], 1).unwrap();
        assert_abs_diff_eq!(part2_length(&data, &a, &model).unwrap(), 0.91894, epsilon = 1e-5);
    }

    #[test]
    fn coder_matches_reference_path() {
        let data = one_attr(&[0.3, -1.2, 2.2], Interval::new(-5.0, 5.0), 5.0, 0.05);
        let model = MixtureModel::new(
            vec![0.25, 0.75],
            vec![vec![GaussianParam::new(-1.0, 0.3)], vec![GaussianParam::new(1.5, 2.0)]],
        )
        .unwrap();
        let coder = ModelCoder::new(&model, data.eps());
        for row in data.rows() {
            for j in 0..2 {
                let reference = observation_cost(&model, j, row, data.eps()).unwrap();
                assert_abs_diff_eq!(coder.delta(j, row), reference, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn posterior_examples() {
        let p = normalized_posteriors(&[200.0, 200.5]).unwrap();
        assert_abs_diff_eq!(p[0], 0.6225, epsilon = 5e-5);
        assert_abs_diff_eq!(p[1], 0.3775, epsilon = 5e-5);

        let p = normalized_posteriors(&[7.0, 7.0, 7.0]).unwrap();
        for v in p {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }

        // e^0, e^-5, e^-10 normalized
        let p = normalized_posteriors(&[100.0, 105.0, 110.0]).unwrap();
        assert_abs_diff_eq!(p[0], 0.993262, epsilon = 1e-6);
        assert_abs_diff_eq!(p[1], 0.006693, epsilon = 1e-6);
        assert_abs_diff_eq!(p[2], 0.000045, epsilon = 1e-6);

        // lengths of realistic size do not underflow
        let p = normalized_posteriors(&[58_000.0, 58_001.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite() && *v > 0.0));
        assert!(normalized_posteriors(&[]).is_err());
        assert!(normalized_posteriors(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn region_odds_mu_neighbors_are_symmetric() {
        let values: Vec<f64> = (0..50).map(|i| ((i * 37 % 50) as f64 - 24.5) / 10.0).collect();
        let data = one_attr(&values, Interval::new(-5.0, 5.0), 5.0, 0.01);
        let r = region_odds(&data).unwrap();
        let odds = |sm: i8, ss: i8| r.neighbors.iter().find(|n| n.step_mu == sm && n.step_sigma == ss).unwrap().odds;
        let left = odds(-1, 0).unwrap();
        let right = odds(1, 0).unwrap();
        assert_abs_diff_eq!(left, right, epsilon = 1e-9 * left);
        assert!(r.available().all(|o| o >= 1.0));
    }

    #[test]
    fn region_odds_flags_unavailable_neighbors() {
        // estimate sits on the edge of the mean range
        let values: Vec<f64> = (0..20).map(|i| 4.9 + (i as f64) * 0.01).collect();
        let data = one_attr(&values, Interval::new(-5.0, 5.0), 5.0, 0.001);
        let r = region_odds(&data).unwrap();
        assert!(r.neighbors.iter().any(|n| n.odds.is_none()));
        assert!(region_odds(&one_attr(&[1.0, 2.0], Interval::new(-5.0, 5.0), 5.0, 0.01)).is_err());
    }
}
