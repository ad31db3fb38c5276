//! Multiple chains at equilibrium: one fixed-k chain per class count, with
//! time advancing in a single active chain that is picked at random in
//! proportion to the estimated posterior mass of its subspace.

use serde::{Deserialize, Serialize};

use crate::chain::{draw_index, ChainState, TraceSample, Visit};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::Dataset;
use crate::rng::{substream, Purpose, Rng};
use crate::subspace::{build_bins, normalize_subspaces, subspace_mass};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Sweeps discarded before a chain's samples are used.
    pub burn_in: usize,
    /// Samples collected from every chain for the initial mass estimates.
    pub samples: usize,
    /// Sweeps the active chain runs between jumps.
    pub segment: usize,
    pub seed: u64,
    /// Temperature applied to every chain; 1 samples the posterior itself.
    pub temperature: f64,
    pub execution: Execution,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            burn_in: 500,
            samples: 1000,
            segment: 100,
            seed: 0,
            temperature: 1.0,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone)]
struct Slot {
    chain: ChainState,
    burned_in: bool,
    trace: Vec<TraceSample>,
    best: Option<Visit>,
    mass: f64,
}

impl Slot {
    fn collect(&mut self, data: &Dataset, sweeps: usize) -> Result<Vec<TraceSample>> {
        let best = &mut self.best;
        let fresh = self.chain.advance_observed(data, sweeps, true, |state, s| {
            if best.as_ref().is_none_or(|b| s.total_nits < b.length.total) {
                *best = Some(Visit {
                    model: state.model().clone(),
                    assignment: state.assignment().clone(),
                    length: crate::coder::MessageLength::new(s.part1_nits, s.part2_nits),
                });
            }
        })?;
        self.trace.extend_from_slice(&fresh);
        self.mass = subspace_mass(&build_bins(&self.trace)?);
        Ok(fresh)
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    k_min: usize,
    k_max: usize,
    config: EnsembleConfig,
    slots: Vec<Slot>,
    probabilities: Vec<f64>,
    active: usize,
    jump_rng: Rng,
    visit_order: Vec<TraceSample>,
    segment_visits: Vec<usize>,
}

impl Ensemble {
    /// One chain per k in `k_min..=k_max`, each started from uniformly random
    /// labels on its own random stream.
    pub fn new(data: &Dataset, k_min: usize, k_max: usize, config: EnsembleConfig) -> Result<Self> {
        if k_min == 0 || k_min > k_max {
            return Err(Error::input(format!("need 1 <= k_min <= k_max, got {k_min}..={k_max}")));
        }
        if data.n_obs() < k_max {
            return Err(Error::input(format!("{} observations cannot populate {k_max} classes", data.n_obs())));
        }
        let slots = (k_min..=k_max)
            .map(|k| {
                let mut chain = ChainState::random(data, k, k_max, substream(config.seed, Purpose::Chain, k as u64))?;
                chain.set_temperature(config.temperature)?;
                Ok(Slot { chain, burned_in: false, trace: Vec::new(), best: None, mass: f64::INFINITY })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = slots.len();
        Ok(Ensemble {
            k_min,
            k_max,
            config,
            slots,
            probabilities: vec![1.0 / n as f64; n],
            active: 0,
            jump_rng: substream(config.seed, Purpose::Jump, 0),
            visit_order: Vec::new(),
            segment_visits: vec![0; n],
        })
    }

    /// Burns in any chain that has not been, draws `samples` sweeps from every
    /// chain, and refreshes all subspace probabilities. Chains run
    /// concurrently under [`Execution::Parallel`].
    pub fn estimate_all(&mut self, data: &Dataset) -> Result<Vec<f64>> {
        let cfg = self.config;
        let fresh = cfg.execution.map_mut(&mut self.slots, |slot| -> Result<Vec<TraceSample>> {
            if !slot.burned_in {
                slot.chain.advance(data, cfg.burn_in, false)?;
                slot.burned_in = true;
            }
            slot.collect(data, cfg.samples)
        });
        for samples in fresh {
            self.visit_order.extend(samples?);
        }
        self.renormalize()?;
        Ok(self.probabilities.clone())
    }

    fn renormalize(&mut self) -> Result<()> {
        let masses: Vec<f64> = self.slots.iter().map(|s| s.mass).collect();
        self.probabilities = normalize_subspaces(&masses)?;
        Ok(())
    }

    /// Picks the next active chain; returns its k.
    pub fn jump(&mut self) -> usize {
        self.active = jump(&self.probabilities, &mut self.jump_rng);
        self.k_min + self.active
    }

    /// Jump, advance the new active chain by one segment, and refresh its mass.
    pub fn step(&mut self, data: &Dataset) -> Result<()> {
        self.jump();
        let slot = &mut self.slots[self.active];
        if !slot.burned_in {
            slot.chain.advance(data, self.config.burn_in, false)?;
            slot.burned_in = true;
        }
        let fresh = slot.collect(data, self.config.segment)?;
        self.visit_order.extend(fresh);
        self.segment_visits[self.active] += 1;
        self.renormalize()
    }

    pub fn run(&mut self, data: &Dataset, segments: usize) -> Result<()> {
        for _ in 0..segments {
            self.step(data)?;
        }
        Ok(())
    }

    pub fn k_range(&self) -> (usize, usize) {
        (self.k_min, self.k_max)
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn active_k(&self) -> usize {
        self.k_min + self.active
    }

    pub fn chain(&self, k: usize) -> Option<&ChainState> {
        self.index(k).map(|i| &self.slots[i].chain)
    }

    pub fn trace_for(&self, k: usize) -> Option<&[TraceSample]> {
        self.index(k).map(|i| self.slots[i].trace.as_slice())
    }

    pub fn mass(&self, k: usize) -> Option<f64> {
        self.index(k).map(|i| self.slots[i].mass)
    }

    fn index(&self, k: usize) -> Option<usize> {
        (k >= self.k_min && k <= self.k_max).then(|| k - self.k_min)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn per_k_probability(&self) -> Vec<KProbability> {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(i, &p)| KProbability { k: self.k_min + i, probability: p })
            .collect()
    }

    /// Every retained sample in the order it was drawn.
    pub fn trace(&self) -> &[TraceSample] {
        &self.visit_order
    }

    /// Segments spent in each chain, indexed from `k_min`.
    pub fn segment_visits(&self) -> &[usize] {
        &self.segment_visits
    }

    /// Shortest retained model over all chains; ties go to the smaller k.
    pub fn best(&self) -> Option<&Visit> {
        self.slots
            .iter()
            .filter_map(|s| s.best.as_ref())
            .fold(None, |acc: Option<&Visit>, v| match acc {
                Some(b) if b.length.total <= v.length.total => Some(b),
                _ => Some(v),
            })
    }
}

/// Inverse-CDF draw of a chain index from normalized probabilities.
pub fn jump(probs: &[f64], rng: &mut Rng) -> usize {
    draw_index(rng, probs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KProbability {
    pub k: usize,
    pub probability: f64,
}

#[derive(Debug, Clone)]
pub struct McmcRun {
    pub trace: Vec<TraceSample>,
    pub per_k_probability: Vec<KProbability>,
    pub best: Visit,
    pub segment_visits: Vec<usize>,
}

/// Initial estimation over every chain followed by `total_segments` jumps.
pub fn mce_run(
    data: &Dataset,
    k_min: usize,
    k_max: usize,
    config: EnsembleConfig,
    total_segments: usize,
) -> Result<McmcRun> {
    if total_segments == 0 {
        return Err(Error::input("need at least one segment"));
    }
    let mut ens = Ensemble::new(data, k_min, k_max, config)?;
    ens.estimate_all(data)?;
    ens.run(data, total_segments)?;
    let best = ens.best().cloned().ok_or_else(|| Error::input("no samples were retained"))?;
    Ok(McmcRun {
        per_k_probability: ens.per_k_probability(),
        segment_visits: ens.segment_visits.clone(),
        trace: ens.visit_order,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Interval, Priors};

    fn small_data() -> Dataset {
        let v = [-2.1, -1.9, -2.0, -2.2, 2.0, 2.1, 1.8, 2.3, -1.7, 1.95];
        Dataset::from_flat(v.to_vec(), 1)
            .unwrap()
            .with_priors(Priors::uniform(1, Interval::new(-5.0, 5.0), 5.0, 0.01))
            .unwrap()
    }

    fn cfg(seed: u64) -> EnsembleConfig {
        EnsembleConfig { burn_in: 20, samples: 40, segment: 10, seed, ..Default::default() }
    }

    #[test]
    fn construction() {
        let data = small_data();
        let e = Ensemble::new(&data, 1, 1, cfg(1)).unwrap();
        assert_eq!(e.k_range(), (1, 1));
        let e = Ensemble::new(&data, 2, 5, cfg(1)).unwrap();
        assert_eq!(e.slots.len(), 4);
        assert!(Ensemble::new(&data, 3, 2, cfg(1)).is_err());
        assert!(Ensemble::new(&data, 0, 2, cfg(1)).is_err());
        assert!(Ensemble::new(&data, 1, 11, cfg(1)).is_err());

        let again = Ensemble::new(&data, 2, 5, cfg(1)).unwrap();
        for k in 2..=5 {
            assert_eq!(e.chain(k).unwrap().assignment(), again.chain(k).unwrap().assignment());
        }
    }

    #[test]
    fn substreams_are_distinct() {
        use rand::Rng as _;
        let mut firsts: Vec<u64> = (1..=6).map(|k| substream(3, Purpose::Chain, k).random()).collect();
        firsts.sort_unstable();
        firsts.dedup();
        assert_eq!(firsts.len(), 6);
    }

    #[test]
    fn single_chain_estimate() {
        let data = small_data();
        let mut e = Ensemble::new(&data, 2, 2, cfg(2)).unwrap();
        assert_eq!(e.estimate_all(&data).unwrap(), vec![1.0]);
        assert_eq!(e.chain(2).unwrap().sweep_count(), 60);
    }

    #[test]
    fn jump_edge_cases() {
        let mut rng = substream(0, Purpose::Jump, 0);
        for _ in 0..1000 {
            assert_eq!(jump(&[1.0, 0.0, 0.0], &mut rng), 0);
            assert_eq!(jump(&[0.0, 0.0, 1.0], &mut rng), 2);
        }
    }

    #[test]
    fn degenerate_ensemble_matches_plain_chain() {
        let data = small_data();
        let c = cfg(9);
        let run = mce_run(&data, 2, 2, c, 3).unwrap();
        assert_eq!(run.trace.len(), c.samples + 3 * c.segment);

        let mut chain = ChainState::random(&data, 2, 2, substream(9, Purpose::Chain, 2)).unwrap();
        chain.advance(&data, c.burn_in, false).unwrap();
        let direct = chain.advance(&data, c.samples + 3 * c.segment, true).unwrap();
        assert_eq!(run.trace, direct);
        assert_eq!(chain.sweep_count() as usize, c.burn_in + c.samples + 3 * c.segment);
    }

    #[test]
    fn only_the_active_chain_moves() {
        let data = small_data();
        let mut e = Ensemble::new(&data, 1, 3, cfg(4)).unwrap();
        e.estimate_all(&data).unwrap();
        for _ in 0..10 {
            let before = e.slots.clone();
            e.step(&data).unwrap();
            for (i, (b, a)) in before.iter().zip(&e.slots).enumerate() {
                if i == e.active {
                    assert_eq!(a.chain.sweep_count(), b.chain.sweep_count() + 10);
                } else {
                    assert_eq!(a.chain.assignment(), b.chain.assignment());
                    assert_eq!(a.chain.model(), b.chain.model());
                    assert_eq!(a.chain.sweep_count(), b.chain.sweep_count());
                }
            }
        }
    }

    #[test]
    fn best_matches_trace_minimum() {
        let data = small_data();
        let run = mce_run(&data, 1, 3, cfg(5), 6).unwrap();
        let min = run.trace.iter().map(|s| s.total_nits).fold(f64::INFINITY, f64::min);
        assert_eq!(run.best.length.total, min);
        let sum: f64 = run.per_k_probability.iter().map(|p| p.probability).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn execution_modes_agree() {
        let data = small_data();
        let seq = EnsembleConfig { execution: Execution::Sequential, ..cfg(6) };
        let par = EnsembleConfig { execution: Execution::Parallel, ..cfg(6) };
        let a = mce_run(&data, 1, 4, seq, 5).unwrap();
        let b = mce_run(&data, 1, 4, par, 5).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.per_k_probability, b.per_k_probability);
    }
}
