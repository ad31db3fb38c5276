//! File formats: CSV datasets and reports, JSON models and summaries,
//! JSON-lines traces.
//!
//! Reals are written in the shortest form that parses back to the same
//! `f64`, so every value survives a write/read cycle bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chain::{TraceSample, Visit};
use crate::ensemble::KProbability;
use crate::error::{Error, Result};
use crate::model::{Dataset, GaussianParam, Interval, MixtureModel, Priors};
use crate::subspace::{bin_usage, BinTable};

pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if names.is_empty() {
        return Err(Error::input("CSV header names no attributes"));
    }
    let mut values = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != names.len() {
            return Err(Error::input(format!("row {} has {} fields, expected {}", line + 1, record.len(), names.len())));
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::input(format!("row {}: {field:?} is not a number", line + 1)))?;
            values.push(v);
        }
    }
    let n_attrs = names.len();
    Dataset::from_flat(values, n_attrs)?.with_names(names)
}

pub fn read_dataset_file(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(File::open(path)?)
}

pub fn write_dataset<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(data.names())?;
    for row in data.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset_file(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), data)
}

pub fn write_labels<W: Write>(writer: W, labels: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["label"])?;
    for l in labels {
        w.write_record([l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels<R: Read>(reader: R) -> Result<Vec<usize>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.records()
        .map(|r| {
            let r = r?;
            r.get(0)
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| Error::input(format!("bad label row {:?}", r.as_slice())))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeDoc {
    pub mu_lo: f64,
    pub mu_hi: f64,
    pub sigma_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDoc {
    pub weight: f64,
    pub attrs: Vec<GaussianParam>,
}

/// Serialized mixture model together with the priors it was coded under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub k: usize,
    pub eps: f64,
    pub ranges: Vec<RangeDoc>,
    pub classes: Vec<ClassDoc>,
}

impl ModelDoc {
    pub fn new(model: &MixtureModel, priors: &Priors) -> Self {
        ModelDoc {
            k: model.k(),
            eps: priors.eps,
            ranges: priors
                .range_mu
                .iter()
                .zip(&priors.sigma_hi)
                .map(|(r, &s)| RangeDoc { mu_lo: r.lo, mu_hi: r.hi, sigma_hi: s })
                .collect(),
            classes: model
                .weights()
                .iter()
                .zip(model.classes())
                .map(|(&weight, attrs)| ClassDoc { weight, attrs: attrs.clone() })
                .collect(),
        }
    }

    pub fn model(&self) -> Result<MixtureModel> {
        if self.k != self.classes.len() {
            return Err(Error::input(format!("model document declares k = {} but lists {} classes", self.k, self.classes.len())));
        }
        MixtureModel::new(
            self.classes.iter().map(|c| c.weight).collect(),
            self.classes.iter().map(|c| c.attrs.clone()).collect(),
        )
    }

    pub fn priors(&self) -> Priors {
        Priors {
            range_mu: self.ranges.iter().map(|r| Interval::new(r.mu_lo, r.mu_hi)).collect(),
            sigma_hi: self.ranges.iter().map(|r| r.sigma_hi).collect(),
            eps: self.eps,
        }
    }
}

pub fn write_trace<W: Write>(mut writer: W, samples: &[TraceSample]) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut writer, s)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(reader: R) -> Result<Vec<TraceSample>> {
    BufReader::new(reader)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestDoc {
    pub k: usize,
    pub total_nits: f64,
    pub part1_nits: f64,
    pub part2_nits: f64,
    pub model: ModelDoc,
}

impl BestDoc {
    pub fn new(best: &Visit, priors: &Priors) -> Self {
        BestDoc {
            k: best.k(),
            total_nits: best.length.total,
            part1_nits: best.length.part1,
            part2_nits: best.length.part2,
            model: ModelDoc::new(&best.model, priors),
        }
    }
}

/// Final summary of a sampling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub per_k_probability: Vec<KProbability>,
    pub best: BestDoc,
}

/// Plot-ready bin table: `k, bin_center_nits, visits, distinct, unique_est,
/// included_flag`. Undetermined estimates are left blank.
pub fn write_bins<W: Write>(writer: W, table: &BinTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "bin_center_nits", "visits", "distinct", "unique_est", "included_flag"])?;
    for (bin, usage) in table.bins.iter().zip(bin_usage(table)) {
        w.write_record([
            table.k.to_string(),
            bin.center.to_string(),
            bin.visits.to_string(),
            bin.distinct.to_string(),
            bin.unique_est.map(|m| m.to_string()).unwrap_or_default(),
            u8::from(usage.included).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-k visit counts of a trace: `k, samples, frequency`.
pub fn write_visit_frequencies<W: Write>(writer: W, trace: &[TraceSample]) -> Result<()> {
    let mut counts = std::collections::BTreeMap::new();
    for s in trace {
        *counts.entry(s.k).or_insert(0usize) += 1;
    }
    let total = trace.len().max(1) as f64;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "samples", "frequency"])?;
    for (k, c) in counts {
        w.write_record([k.to_string(), c.to_string(), (c as f64 / total).to_string()])?;
    }
    w.flush()?;
    Ok(())
}
