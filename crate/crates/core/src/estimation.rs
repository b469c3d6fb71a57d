//! Accuracy estimation from judged sample units.
//!
//! Within a stratum the estimate is the mean of per-cluster accuracies
//! (`mu_hat = (1/n) Σ μ_k`) with variance `s²/n`, where `s²` is the sample
//! variance of the cluster means. Strata combine as
//! `mu_ss = Σ W_h mu_h` with margin of error `z · sqrt(Σ W_h² Var_h)`.
//! No finite-population correction is applied.

use std::collections::HashMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::batch::Batch;
use crate::sampling::DesignKind;

#[derive(Debug, Error, PartialEq)]
pub enum EstimateError {
    #[error("cluster has no judged triples")]
    EmptyCluster,
    #[error("no sampled clusters")]
    NoClusters,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid estimator configuration: {0}")]
    InvalidConfig(String),
    #[error("weights: {0}")]
    InvalidWeights(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    WrongConcept,
    OverlyGeneric,
}

impl Verdict {
    pub fn indicator(self) -> u8 {
        verdict_to_indicator(self)
    }
}

/// Both incorrect kinds count as 0.
pub fn verdict_to_indicator(verdict: Verdict) -> u8 {
    match verdict {
        Verdict::Correct => 1,
        Verdict::WrongConcept | Verdict::OverlyGeneric => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub triple_id: String,
    pub verdict: Verdict,
    pub elapsed_seconds: f64,
    pub annotator_id: String,
    pub submitted_at: DateTime<Utc>,
}

/// Append-only judgment history. The last entry for a triple is the
/// effective one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgmentLog {
    entries: Vec<Judgment>,
}

impl JudgmentLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<Judgment>) -> Self {
        Self { entries }
    }

    pub fn push(&mut self, judgment: Judgment) {
        self.entries.push(judgment);
    }

    pub fn entries(&self) -> &[Judgment] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn effective(&self) -> HashMap<&str, &Judgment> {
        let mut map = HashMap::with_capacity(self.entries.len());
        for j in &self.entries {
            map.insert(j.triple_id.as_str(), j);
        }
        map
    }

    pub fn n_distinct(&self) -> usize {
        self.effective().len()
    }

    /// Distinct triples in order of their first judgment, each paired with
    /// that first judgment.
    pub fn first_judgments(&self) -> Vec<&Judgment> {
        let mut seen = std::collections::HashSet::new();
        self.entries
            .iter()
            .filter(|j| seen.insert(j.triple_id.as_str()))
            .collect()
    }

    /// Appends entries from `other` that are not already present verbatim.
    /// Returns the number appended.
    pub fn merge(&mut self, other: &[Judgment]) -> usize {
        let mut added = 0;
        for j in other {
            if !self.entries.contains(j) {
                self.entries.push(j.clone());
                added += 1;
            }
        }
        added
    }
}

/// Fewest fully judged clusters before an estimate may count as converged.
///
/// With only a handful of clusters every sampled cluster can be perfect,
/// giving a zero variance and a spurious zero margin of error.
pub const DEFAULT_MIN_CLUSTERS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub alpha: f64,
    pub epsilon: f64,
    /// Upper `alpha/2` standard-normal quantile.
    pub z: f64,
    pub min_clusters: usize,
}

impl EstimatorConfig {
    pub fn new(alpha: f64, epsilon: f64) -> Result<Self, EstimateError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(EstimateError::InvalidConfig(format!(
                "alpha must be in (0, 1), got {alpha}"
            )));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(EstimateError::InvalidConfig(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(Self {
            alpha,
            epsilon,
            z: z_critical(alpha),
            min_clusters: DEFAULT_MIN_CLUSTERS,
        })
    }

    pub fn with_min_clusters(mut self, min_clusters: usize) -> Self {
        self.min_clusters = min_clusters;
        self
    }
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self::new(0.05, 0.05).expect("defaults are valid")
    }
}

pub fn z_critical(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

pub fn cluster_mean(indicators: &[u8]) -> Result<f64, EstimateError> {
    if indicators.is_empty() {
        return Err(EstimateError::EmptyCluster);
    }
    let sum: u64 = indicators.iter().map(|&x| x as u64).sum();
    Ok(sum as f64 / indicators.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwcsEstimate {
    pub mu_hat: f64,
    /// `s²/n`; undefined for fewer than two clusters.
    pub variance: Option<f64>,
}

pub fn twcs_estimate(cluster_means: &[f64]) -> Result<TwcsEstimate, EstimateError> {
    let n = cluster_means.len();
    if n == 0 {
        return Err(EstimateError::NoClusters);
    }
    let nf = n as f64;
    let mu_hat = cluster_means.iter().sum::<f64>() / nf;
    let variance = (n >= 2).then(|| {
        let ss: f64 = cluster_means.iter().map(|x| (x - mu_hat).powi(2)).sum();
        ss / (nf - 1.0) / nf
    });
    Ok(TwcsEstimate { mu_hat, variance })
}

/// `(mean, z·sqrt(p(1-p)/n))` for simple random samples.
pub fn srs_estimate(indicators: &[u8], config: &EstimatorConfig) -> Result<(f64, f64), EstimateError> {
    let n = indicators.len();
    if n < 2 {
        return Err(EstimateError::TooFewSamples(n));
    }
    let p = cluster_mean(indicators)?;
    Ok((p, config.z * (p * (1.0 - p) / n as f64).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumEstimate {
    pub stratum: usize,
    pub name: String,
    pub weight: f64,
    /// Fully judged sampled clusters.
    pub n: usize,
    pub n_triples: usize,
    pub cluster_means: Vec<f64>,
    pub mu_hat: Option<f64>,
    pub variance: Option<f64>,
    pub moe: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

impl StratumEstimate {
    pub fn from_cluster_means(
        stratum: usize,
        name: impl Into<String>,
        cluster_means: Vec<f64>,
        n_triples: usize,
        z: f64,
    ) -> Self {
        let est = twcs_estimate(&cluster_means).ok();
        let mut out = Self::from_summary(
            stratum,
            name,
            cluster_means.len(),
            est.map(|e| e.mu_hat),
            est.and_then(|e| e.variance),
            z,
        );
        out.n_triples = n_triples;
        out.cluster_means = cluster_means;
        out
    }

    /// A stratum known only by its point estimate and variance.
    pub fn from_summary(
        stratum: usize,
        name: impl Into<String>,
        n: usize,
        mu_hat: Option<f64>,
        variance: Option<f64>,
        z: f64,
    ) -> Self {
        let moe = variance.map(|v| z * v.max(0.0).sqrt());
        let (ci_low, ci_high) = match (mu_hat, moe) {
            (Some(mu), Some(e)) => (Some(mu - e), Some(mu + e)),
            _ => (None, None),
        };
        Self {
            stratum,
            name: name.into(),
            weight: 0.0,
            n,
            n_triples: 0,
            cluster_means: Vec::new(),
            mu_hat,
            variance,
            moe,
            ci_low,
            ci_high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub design: DesignKind,
    pub alpha: f64,
    pub epsilon: f64,
    pub z: f64,
    pub min_clusters: usize,
    /// Empty for SRS.
    pub strata: Vec<StratumEstimate>,
    /// Present once every positive-weight stratum has a judged cluster.
    pub mu_ss: Option<f64>,
    /// Present once every positive-weight stratum has two judged clusters.
    pub moe: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub converged: bool,
    /// Distinct batch triples with at least one judgment.
    pub n_triples_judged: usize,
    /// Triples inside fully judged units, i.e. those the estimate uses.
    pub n_triples_in_estimate: usize,
    pub n_clusters_judged: usize,
    /// Units with some but not all triples judged; excluded from the estimate.
    pub n_units_incomplete: usize,
}

impl EstimateReport {
    fn finish(mut self) -> Self {
        if let (Some(mu), Some(e)) = (self.mu_ss, self.moe) {
            self.ci_low = Some(mu - e);
            self.ci_high = Some(mu + e);
        }
        self.converged = self.moe.is_some_and(|e| e <= self.epsilon) && self.n_clusters_judged >= self.min_clusters;
        self
    }
}

/// Combines per-stratum estimates with weights `W_h`.
pub fn stwcs_aggregate(
    mut strata: Vec<StratumEstimate>,
    weights: &[f64],
    config: &EstimatorConfig,
) -> Result<EstimateReport, EstimateError> {
    if strata.len() != weights.len() {
        return Err(EstimateError::InvalidWeights(format!(
            "{} strata but {} weights",
            strata.len(),
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-6 {
        return Err(EstimateError::InvalidWeights(format!(
            "must be non-negative and sum to 1, sum = {total}"
        )));
    }
    let mut mu = 0.0;
    let mut var = 0.0;
    let mut mu_defined = true;
    let mut var_defined = true;
    for (s, &w) in strata.iter_mut().zip(weights) {
        s.weight = w;
        if w == 0.0 {
            continue;
        }
        match s.mu_hat {
            Some(m) => mu += w * m,
            None => mu_defined = false,
        }
        match s.variance {
            Some(v) if s.n >= 2 => var += w * w * v,
            _ => var_defined = false,
        }
    }
    let mu_ss = mu_defined.then_some(mu);
    let moe = (mu_defined && var_defined).then(|| config.z * var.max(0.0).sqrt());
    let n_clusters_judged = strata.iter().map(|s| s.n).sum();
    let n_triples_in_estimate = strata.iter().map(|s| s.n_triples).sum();
    Ok(EstimateReport {
        design: DesignKind::Stwcs,
        alpha: config.alpha,
        epsilon: config.epsilon,
        z: config.z,
        min_clusters: config.min_clusters,
        strata,
        mu_ss,
        moe,
        ci_low: None,
        ci_high: None,
        converged: false,
        n_triples_judged: n_triples_in_estimate,
        n_triples_in_estimate,
        n_clusters_judged,
        n_units_incomplete: 0,
    }
    .finish())
}

/// Running estimate fed one completed unit at a time, in sampling order.
///
/// For stratified designs units are grouped by stratum; pooled cluster
/// designs put every unit in one stratum of weight 1; SRS keeps a flat list
/// of indicators.
#[derive(Debug, Clone)]
pub struct UnitAccumulator {
    design: DesignKind,
    names: Vec<String>,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    n_triples: Vec<usize>,
    indicators: Vec<u8>,
}

impl UnitAccumulator {
    /// `strata` are `(name, triple count)` in stratum-index order.
    pub fn new(design: DesignKind, strata: &[(String, usize)]) -> Self {
        let (names, weights) = if design.is_stratified() {
            let total: usize = strata.iter().map(|s| s.1).sum();
            let total = total.max(1) as f64;
            (
                strata.iter().map(|s| s.0.clone()).collect(),
                strata.iter().map(|s| s.1 as f64 / total).collect(),
            )
        } else {
            (vec!["all".to_string()], vec![1.0])
        };
        let k = names.len();
        Self {
            design,
            names,
            weights,
            means: vec![Vec::new(); k],
            n_triples: vec![0; k],
            indicators: Vec::new(),
        }
    }

    pub fn add_unit(&mut self, stratum: usize, indicators: &[u8]) -> Result<(), EstimateError> {
        let mean = cluster_mean(indicators)?;
        if self.design == DesignKind::Srs {
            self.indicators.extend_from_slice(indicators);
            return Ok(());
        }
        let slot = if self.design.is_stratified() { stratum } else { 0 };
        let bucket = self
            .means
            .get_mut(slot)
            .ok_or_else(|| EstimateError::InvalidConfig(format!("stratum {slot} out of range")))?;
        bucket.push(mean);
        self.n_triples[slot] += indicators.len();
        Ok(())
    }

    pub fn n_units(&self) -> usize {
        match self.design {
            DesignKind::Srs => self.indicators.len(),
            _ => self.means.iter().map(Vec::len).sum(),
        }
    }

    pub fn report(&self, config: &EstimatorConfig) -> EstimateReport {
        if self.design == DesignKind::Srs {
            let n = self.indicators.len();
            let (mu_ss, moe) = match srs_estimate(&self.indicators, config) {
                Ok((mu, e)) => (Some(mu), Some(e)),
                Err(_) => (cluster_mean(&self.indicators).ok(), None),
            };
            return EstimateReport {
                design: self.design,
                alpha: config.alpha,
                epsilon: config.epsilon,
                z: config.z,
                min_clusters: config.min_clusters,
                strata: Vec::new(),
                mu_ss,
                moe,
                ci_low: None,
                ci_high: None,
                converged: false,
                n_triples_judged: n,
                n_triples_in_estimate: n,
                n_clusters_judged: n,
                n_units_incomplete: 0,
            }
            .finish();
        }
        let strata = self
            .means
            .iter()
            .enumerate()
            .map(|(h, means)| {
                StratumEstimate::from_cluster_means(
                    h,
                    self.names[h].clone(),
                    means.clone(),
                    self.n_triples[h],
                    config.z,
                )
            })
            .collect();
        let mut report = stwcs_aggregate(strata, &self.weights, config).expect("weights derived from sizes");
        report.design = self.design;
        report
    }
}

/// Recomputes the estimate from a judgment log over `batch`, using only
/// units whose every triple has been judged. Judgments for triples outside
/// the batch are ignored.
pub fn recompute_on_cluster_complete(log: &JudgmentLog, batch: &Batch, config: &EstimatorConfig) -> EstimateReport {
    let effective = log.effective();
    let strata: Vec<(String, usize)> = batch.header.strata.iter().map(|s| (s.name.clone(), s.size)).collect();
    let mut acc = UnitAccumulator::new(batch.header.design, &strata);
    let mut incomplete = 0;
    let mut judged_in_batch = 0;
    let mut scratch = Vec::new();
    for unit in batch.units() {
        scratch.clear();
        for entry in &batch.entries[unit.range.clone()] {
            if let Some(j) = effective.get(entry.record.triple_id.as_str()) {
                scratch.push(j.verdict.indicator());
            }
        }
        judged_in_batch += scratch.len();
        if scratch.len() == unit.range.len() {
            acc.add_unit(unit.stratum_index, &scratch)
                .expect("batch stratum indices match the header");
        } else if !scratch.is_empty() {
            incomplete += 1;
        }
    }
    let mut report = acc.report(config);
    report.n_triples_judged = judged_in_batch;
    report.n_units_incomplete = incomplete;
    report
}
