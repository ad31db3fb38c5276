//! One Markov chain over mixtures with a fixed number of classes.
//!
//! A sweep is K-Means with a coin toss: every observation is reassigned by
//! drawing from its normalized posterior over classes (parameters held
//! fixed for the whole pass), then weights and class parameters are
//! recomputed from the new exclusive assignment. Raising the per-observation
//! posteriors to the power `1/c` gives the tempered chain used for annealing.

use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::coder::{message_length, softmax_neg_in_place, MessageLength, ModelCoder};
use crate::error::{Error, Result};
use crate::model::{
    canonical_partition_hash, reestimate_class, smoothed_weights, Assignment, Dataset, GaussianParam, MixtureModel,
    PartitionHash,
};
use crate::rng::Rng;

/// One retained model visit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub k: usize,
    pub sweep: u64,
    pub total_nits: f64,
    pub part1_nits: f64,
    pub part2_nits: f64,
    pub partition_hash: PartitionHash,
}

#[derive(Debug, Clone)]
pub struct ChainState {
    k: usize,
    coding_k_max: usize,
    assignment: Assignment,
    model: MixtureModel,
    temperature: f64,
    rng: Rng,
    sweep_count: u64,
}

impl ChainState {
    /// Chain positioned at `assignment`. `coding_k_max` is the largest class
    /// count the enclosing search considers; it fixes the prior on k used in
    /// message lengths.
    pub fn new(data: &Dataset, assignment: Assignment, coding_k_max: usize, mut rng: Rng) -> Result<Self> {
        if assignment.len() != data.n_obs() {
            return Err(Error::input(format!(
                "assignment has {} labels for {} observations",
                assignment.len(),
                data.n_obs()
            )));
        }
        let k = assignment.k();
        if coding_k_max < k {
            return Err(Error::input(format!("k = {k} exceeds k_max = {coding_k_max}")));
        }
        let model = derive_model(data, &assignment, &mut rng);
        Ok(ChainState { k, coding_k_max, assignment, model, temperature: 1.0, rng, sweep_count: 0 })
    }

    /// Chain started from uniformly random labels.
    pub fn random(data: &Dataset, k: usize, coding_k_max: usize, mut rng: Rng) -> Result<Self> {
        if k == 0 {
            return Err(Error::input("k must be at least 1"));
        }
        let labels = (0..data.n_obs()).map(|_| rng.random_range(0..k)).collect();
        Self::new(data, Assignment::new(labels, k)?, coding_k_max, rng)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn coding_k_max(&self) -> usize {
        self.coding_k_max
    }

    pub fn assignment(&self) -> &Assignment {
        &self.assignment
    }

    pub fn model(&self) -> &MixtureModel {
        &self.model
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn sweep_count(&self) -> u64 {
        self.sweep_count
    }

    pub fn set_temperature(&mut self, c: f64) -> Result<()> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::input(format!("temperature must be positive, got {c}")));
        }
        self.temperature = c;
        Ok(())
    }

    /// Class probabilities for observation `i` under the current model and
    /// temperature.
    pub fn assignment_probabilities(&self, i: usize, data: &Dataset) -> Vec<f64> {
        let coder = ModelCoder::new(&self.model, data.eps());
        let mut p = vec![0.0; self.k];
        self.tempered_posteriors(&coder, data.row(i), &mut p);
        p
    }

    fn tempered_posteriors(&self, coder: &ModelCoder, row: &[f64], out: &mut [f64]) {
        coder.deltas_into(row, out);
        if self.temperature != 1.0 {
            let inv = 1.0 / self.temperature;
            out.iter_mut().for_each(|d| *d *= inv);
        }
        softmax_neg_in_place(out);
    }

    fn draw(&mut self, probs: &[f64]) -> usize {
        draw_index(&mut self.rng, probs)
    }

    /// Draws and stores a new label for observation `i`, holding the model
    /// fixed.
    pub fn assign_observation(&mut self, i: usize, data: &Dataset) -> usize {
        let p = self.assignment_probabilities(i, data);
        let label = self.draw(&p);
        self.assignment.set(i, label);
        label
    }

    /// One full update: every label in index order, then weights and class
    /// parameters.
    pub fn sweep(&mut self, data: &Dataset) {
        if self.k > 1 {
            let coder = ModelCoder::new(&self.model, data.eps());
            let mut p = vec![0.0; self.k];
            for i in 0..data.n_obs() {
                self.tempered_posteriors(&coder, data.row(i), &mut p);
                let label = self.draw(&p);
                self.assignment.set(i, label);
            }
        }
        self.model = derive_model(data, &self.assignment, &mut self.rng);
        self.sweep_count += 1;
    }

    pub fn message_length(&self, data: &Dataset) -> Result<MessageLength> {
        message_length(data, &self.assignment, &self.model, self.coding_k_max)
    }

    pub fn trace_sample(&self, data: &Dataset) -> Result<TraceSample> {
        let len = self.message_length(data)?;
        Ok(TraceSample {
            k: self.k,
            sweep: self.sweep_count,
            total_nits: len.total,
            part1_nits: len.part1,
            part2_nits: len.part2,
            partition_hash: canonical_partition_hash(&self.assignment),
        })
    }

    /// Runs `n_sweeps` sweeps, returning one sample per sweep when `collect`.
    pub fn advance(&mut self, data: &Dataset, n_sweeps: usize, collect: bool) -> Result<Vec<TraceSample>> {
        self.advance_observed(data, n_sweeps, collect, |_, _| {})
    }

    /// As [`ChainState::advance`], calling `observe` after every collected
    /// sweep with the chain positioned at the sampled model.
    pub fn advance_observed<F>(
        &mut self,
        data: &Dataset,
        n_sweeps: usize,
        collect: bool,
        mut observe: F,
    ) -> Result<Vec<TraceSample>>
    where
        F: FnMut(&ChainState, &TraceSample),
    {
        let mut trace = Vec::with_capacity(if collect { n_sweeps } else { 0 });
        for _ in 0..n_sweeps {
            self.sweep(data);
            if collect {
                let sample = self.trace_sample(data)?;
                observe(self, &sample);
                trace.push(sample);
            }
        }
        Ok(trace)
    }

    pub fn run_anneal(&mut self, data: &Dataset, schedule: &AnnealSchedule) -> Result<AnnealOutcome> {
        self.run_anneal_until(data, schedule, None)
    }

    /// Annealing that gives up at `deadline` (checked after every sweep).
    pub fn run_anneal_until(
        &mut self,
        data: &Dataset,
        schedule: &AnnealSchedule,
        deadline: Option<Instant>,
    ) -> Result<AnnealOutcome> {
        schedule.validate()?;
        let mut best = Visit::capture(self, self.message_length(data)?);
        let mut t = schedule.t0;
        let mut blocks = 0;
        let mut sweeps = 0;
        let mut completed = true;
        'blocks: loop {
            self.set_temperature(t)?;
            for _ in 0..schedule.iters_per_temp {
                self.sweep(data);
                sweeps += 1;
                let len = self.message_length(data)?;
                if len.total < best.length.total {
                    best = Visit::capture(self, len);
                }
                if deadline.is_some_and(|d| Instant::now() >= d) {
                    completed = false;
                    blocks += 1;
                    break 'blocks;
                }
            }
            blocks += 1;
            t *= schedule.cool;
            if t < schedule.t_min {
                break;
            }
        }
        Ok(AnnealOutcome { best, blocks, sweeps, completed })
    }
}

/// Inverse-CDF draw from a normalized probability vector.
pub(crate) fn draw_index(rng: &mut Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // rounding left u above the final cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Weights and class parameters implied by an assignment. Empty classes get
/// parameters drawn from the prior; every parameter is kept inside the prior
/// ranges so the model can always be coded.
pub(crate) fn derive_model(data: &Dataset, assignment: &Assignment, rng: &mut Rng) -> MixtureModel {
    let k = assignment.k();
    let counts = assignment.counts();
    let priors = data.priors();
    let labels = assignment.labels();
    let classes = (0..k)
        .map(|j| {
            let members = data.rows().zip(labels).filter(move |(_, &l)| l == j).map(|(r, _)| r);
            match reestimate_class(members, data.sigma_min()) {
                Ok(params) => params
                    .into_iter()
                    .enumerate()
                    .map(|(m, p)| {
                        GaussianParam::new(priors.range_mu[m].clamp(p.mu), p.sigma.min(priors.sigma_hi[m]))
                    })
                    .collect(),
                Err(_) => prior_draw(data, rng),
            }
        })
        .collect();
    MixtureModel::new(smoothed_weights(&counts), classes).expect("smoothed weights and floored sigmas form a valid model")
}

fn prior_draw(data: &Dataset, rng: &mut Rng) -> Vec<GaussianParam> {
    let priors = data.priors();
    let eps = data.eps();
    priors
        .range_mu
        .iter()
        .zip(&priors.sigma_hi)
        .map(|(r, &hi)| {
            let mu = rng.random_range(r.lo..=r.hi);
            let u: f64 = rng.random();
            // (eps, hi]
            GaussianParam::new(mu, hi - u * (hi - eps))
        })
        .collect()
}

/// A model visited by a chain together with its length.
#[derive(Debug, Clone, PartialEq)]
pub struct Visit {
    pub model: MixtureModel,
    pub assignment: Assignment,
    pub length: MessageLength,
}

impl Visit {
    pub(crate) fn capture(state: &ChainState, length: MessageLength) -> Self {
        Visit { model: state.model.clone(), assignment: state.assignment.clone(), length }
    }

    pub fn k(&self) -> usize {
        self.model.k()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub t0: f64,
    pub cool: f64,
    pub iters_per_temp: usize,
    pub t_min: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule { t0: 2.0, cool: 0.99, iters_per_temp: 50, t_min: 0.05 }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t0 >= self.t_min && self.t0.is_finite()) {
            return Err(Error::input(format!("need t0 >= t_min > 0, got t0 = {}, t_min = {}", self.t0, self.t_min)));
        }
        if !(self.cool > 0.0 && self.cool < 1.0) {
            return Err(Error::input(format!("cooling constant must lie in (0, 1), got {}", self.cool)));
        }
        if self.iters_per_temp == 0 {
            return Err(Error::input("need at least one sweep per temperature"));
        }
        Ok(())
    }

    /// Number of temperature blocks a full run executes.
    pub fn block_count(&self) -> usize {
        let mut t = self.t0;
        let mut blocks = 0;
        loop {
            blocks += 1;
            t *= self.cool;
            if t < self.t_min {
                return blocks;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnnealOutcome {
    /// Shortest model seen, including the starting point.
    pub best: Visit,
    pub blocks: usize,
    pub sweeps: usize,
    /// False when a deadline cut the schedule short.
    pub completed: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Interval, Priors};
    use crate::rng::{substream, Purpose};
    use approx::assert_abs_diff_eq;

    fn rng(i: u64) -> Rng {
        substream(11, Purpose::Chain, i)
    }

    fn line(values: &[f64]) -> Dataset {
        Dataset::from_flat(values.to_vec(), 1)
            .unwrap()
            .with_priors(Priors::uniform(1, Interval::new(-10.0, 10.0), 10.0, 0.01))
            .unwrap()
    }

    #[test]
    fn single_class_chain_is_a_fixed_point() {
        let data = line(&[1.0, 2.0, 4.0, 7.0]);
        let mut chain = ChainState::random(&data, 1, 1, rng(0)).unwrap();
        for _ in 0..5 {
            chain.sweep(&data);
            assert_eq!(chain.assign_observation(2, &data), 0);
        }
        assert_eq!(chain.assignment().labels(), &[0, 0, 0, 0]);
        let p = chain.model().class(0)[0];
        assert_abs_diff_eq!(p.mu, 3.5);
        assert_abs_diff_eq!(p.sigma, (21.0f64 / 3.0).sqrt(), epsilon = 1e-14);
        assert_eq!(chain.model().weights(), &[1.0]);
    }

    #[test]
    fn identical_classes_split_evenly() {
        let data = line(&[0.0, 1.0]);
        let a = Assignment::new(vec![0, 1], 2).unwrap();
        let mut chain = ChainState::new(&data, a, 2, rng(1)).unwrap();
        let same = vec![GaussianParam::new(0.5, 1.0)];
        chain.model = MixtureModel::new(vec![0.5, 0.5], vec![same.clone(), same]).unwrap();
        let p = chain.assignment_probabilities(0, &data);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn half_nit_gap_gives_expected_odds() {
        let data = line(&[0.0, 1.0]);
        let a = Assignment::new(vec![0, 1], 2).unwrap();
        let mut chain = ChainState::new(&data, a, 2, rng(2)).unwrap();
        // class 1 has the same shape but its mean is 1 sd away: +0.5 nit at x = 0
        chain.model = MixtureModel::new(
            vec![0.5, 0.5],
            vec![vec![GaussianParam::new(0.0, 1.0)], vec![GaussianParam::new(1.0, 1.0)]],
        )
        .unwrap();
        let p = chain.assignment_probabilities(0, &data);
        assert_abs_diff_eq!(p[0], 0.6225, epsilon = 5e-5);
        assert_abs_diff_eq!(p[1], 0.3775, epsilon = 5e-5);
    }

    #[test]
    fn sweep_keeps_model_derived_from_assignment() {
        let data = line(&[-3.0, -2.5, -2.0, 2.0, 2.5, 3.0, 0.1]);
        let mut chain = ChainState::random(&data, 3, 5, rng(3)).unwrap();
        for _ in 0..20 {
            chain.sweep(&data);
            let counts = chain.assignment().counts();
            assert_eq!(chain.model().weights(), smoothed_weights(&counts).as_slice());
            for (j, &c) in counts.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let members = data.rows().zip(chain.assignment().labels()).filter(|(_, &l)| l == j).map(|(r, _)| r);
                let expect = reestimate_class(members, data.sigma_min()).unwrap();
                assert_eq!(chain.model().class(j), expect.as_slice());
            }
        }
        assert_eq!(chain.sweep_count(), 20);
    }

    #[test]
    fn empty_classes_are_reseeded_inside_the_prior() {
        let data = line(&[0.0, 0.1]);
        let a = Assignment::new(vec![0, 0], 3).unwrap();
        let chain = ChainState::new(&data, a, 3, rng(4)).unwrap();
        for j in 1..3 {
            let p = chain.model().class(j)[0];
            assert!((-10.0..=10.0).contains(&p.mu));
            assert!(p.sigma > 0.01 && p.sigma <= 10.0);
        }
        assert!(chain.message_length(&data).is_ok());
    }

    #[test]
    fn advance_contracts() {
        let data = line(&[-1.0, -0.8, 0.9, 1.1, 0.0]);
        let base = ChainState::random(&data, 2, 3, rng(5)).unwrap();

        let mut idle = base.clone();
        assert!(idle.advance(&data, 0, true).unwrap().is_empty());
        assert_eq!(idle.assignment(), base.assignment());
        assert_eq!(idle.sweep_count(), 0);

        let mut a = base.clone();
        let mut b = base.clone();
        let ta = a.advance(&data, 25, true).unwrap();
        let tb = b.advance(&data, 25, true).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(ta.len(), 25);
        assert_eq!(ta.last().unwrap().sweep, 25);

        let mut quiet = base.clone();
        assert!(quiet.advance(&data, 25, false).unwrap().is_empty());
        assert_eq!(quiet.assignment(), a.assignment());
        assert_eq!(quiet.model(), a.model());
    }

    #[test]
    fn hot_chain_assigns_uniformly() {
        let data = line(&[-2.0, -1.9, 2.0, 2.1]);
        let mut chain = ChainState::random(&data, 2, 2, rng(6)).unwrap();
        chain.set_temperature(1e6).unwrap();
        let mut zeros = 0usize;
        let sweeps = 5000;
        for _ in 0..sweeps {
            chain.sweep(&data);
            zeros += chain.assignment().labels().iter().filter(|&&l| l == 0).count();
        }
        let freq = zeros as f64 / (4 * sweeps) as f64;
        assert!((freq - 0.5).abs() < 0.02, "{freq}");
        assert!(chain.set_temperature(0.0).is_err());
    }

    #[test]
    fn anneal_block_counts() {
        let s = AnnealSchedule { t0: 2.0, cool: 0.99, iters_per_temp: 50, t_min: 0.01 };
        assert_eq!(s.block_count(), 528);
        assert_eq!(s.block_count(), ((0.005f64).ln() / 0.99f64.ln()).ceil() as usize);
        let s = AnnealSchedule { t0: 0.3, cool: 0.5, iters_per_temp: 3, t_min: 0.3 };
        assert_eq!(s.block_count(), 1);

        let data = line(&[-1.0, -0.9, 1.0, 1.2]);
        let mut chain = ChainState::random(&data, 2, 2, rng(7)).unwrap();
        let out = chain.run_anneal(&data, &s).unwrap();
        assert_eq!((out.blocks, out.sweeps), (1, 3));
        assert!(out.completed);
    }

    #[test]
    fn anneal_best_is_minimum_seen() {
        let data = line(&[-2.0, -1.8, -2.2, 2.0, 1.9, 2.3]);
        let mut chain = ChainState::random(&data, 2, 2, rng(8)).unwrap();
        let start = chain.message_length(&data).unwrap().total;
        let s = AnnealSchedule { t0: 1.0, cool: 0.8, iters_per_temp: 5, t_min: 0.1 };
        let out = chain.run_anneal(&data, &s).unwrap();
        assert!(out.best.length.total <= start);
        let recomputed = message_length(&data, &out.best.assignment, &out.best.model, 2).unwrap();
        assert_eq!(recomputed, out.best.length);
        assert_eq!(out.blocks, s.block_count());
    }

    #[test]
    fn bad_schedules_rejected() {
        let bad = [
            AnnealSchedule { t0: 0.5, cool: 0.9, iters_per_temp: 1, t_min: 1.0 },
            AnnealSchedule { t0: 1.0, cool: 1.0, iters_per_temp: 1, t_min: 0.1 },
            AnnealSchedule { t0: 1.0, cool: 0.9, iters_per_temp: 0, t_min: 0.1 },
            AnnealSchedule { t0: 1.0, cool: 0.9, iters_per_temp: 1, t_min: 0.0 },
        ];
        for s in bad {
            assert!(s.validate().is_err(), "{s:?}");
        }
    }
}
