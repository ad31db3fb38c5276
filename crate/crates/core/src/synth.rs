//! Seeded synthetic datasets.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, GaussianParam, MixtureModel};
use crate::rng::{substream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// Six classes in six attributes; class i has mean 1 in attribute i and
    /// 0 elsewhere.
    SixGauss,
    /// Two classes in two attributes with means (1, 0) and (0, 1).
    TwoGauss2d,
    /// One class in one attribute with mean 0.
    Univariate,
    /// Explicit model supplied in [`GeneratorSpec::custom`].
    Custom,
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "six-gauss" => Ok(GeneratorKind::SixGauss),
            "two-gauss-2d" => Ok(GeneratorKind::TwoGauss2d),
            "univariate" => Ok(GeneratorKind::Univariate),
            "custom" => Ok(GeneratorKind::Custom),
            other => Err(Error::input(format!("unknown generator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    /// Standard deviation of every attribute (ignored for `Custom`).
    pub sigma: f64,
    pub per_class: usize,
    pub seed: u64,
    pub custom: Option<MixtureModel>,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, sigma: f64, per_class: usize, seed: u64) -> Self {
        GeneratorSpec { kind, sigma, per_class, seed, custom: None }
    }

    /// The model rows are drawn from; weights are equal for the built-in kinds.
    pub fn truth(&self) -> Result<MixtureModel> {
        if self.per_class == 0 {
            return Err(Error::input("per_class must be at least 1"));
        }
        let s = self.sigma;
        let needs_sigma = self.kind != GeneratorKind::Custom;
        if needs_sigma && !(s > 0.0 && s.is_finite()) {
            return Err(Error::input(format!("sigma must be positive, got {s}")));
        }
        let equal = |classes: Vec<Vec<GaussianParam>>| {
            let k = classes.len();
            MixtureModel::new(vec![1.0 / k as f64; k], classes)
        };
        match self.kind {
            GeneratorKind::SixGauss => equal(
                (0..6)
                    .map(|i| (0..6).map(|m| GaussianParam::new(if m == i { 1.0 } else { 0.0 }, s)).collect())
                    .collect(),
            ),
            GeneratorKind::TwoGauss2d => equal(vec![
                vec![GaussianParam::new(1.0, s), GaussianParam::new(0.0, s)],
                vec![GaussianParam::new(0.0, s), GaussianParam::new(1.0, s)],
            ]),
            GeneratorKind::Univariate => equal(vec![vec![GaussianParam::new(0.0, s)]]),
            GeneratorKind::Custom => {
                self.custom.clone().ok_or_else(|| Error::input("custom generator needs an explicit model"))
            }
        }
    }
}

/// Observations and the class each was drawn from.
#[derive(Debug, Clone)]
pub struct Generated {
    pub data: Dataset,
    pub labels: Vec<usize>,
    pub truth: MixtureModel,
}

/// `per_class` rows from every class, class by class.
pub fn generate(spec: &GeneratorSpec) -> Result<Generated> {
    let truth = spec.truth()?;
    let mut rng = substream(spec.seed, Purpose::Generator, 0);
    let m = truth.n_attrs();
    let mut values = Vec::with_capacity(truth.k() * spec.per_class * m);
    let mut labels = Vec::with_capacity(truth.k() * spec.per_class);
    for (j, class) in truth.classes().iter().enumerate() {
        for _ in 0..spec.per_class {
            for p in class {
                let z: f64 = StandardNormal.sample(&mut rng);
                values.push(p.mu + p.sigma * z);
            }
            labels.push(j);
        }
    }
    Ok(Generated { data: Dataset::from_flat(values, m)?, labels, truth })
}
