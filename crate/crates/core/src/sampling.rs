//! Sampling primitives and the iterative cluster samplers.
//!
//! All candidate lists are ordered before drawing: strata by index, clusters
//! by surface form, triples by id. Given a seed the draw sequence therefore
//! depends only on the corpus contents, never on input file order.

use std::collections::HashSet;
use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ClusterId, Corpus};
use crate::rng::RandomSource;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("total weight is zero")]
    ZeroTotalWeight,
    #[error("every candidate has already been sampled")]
    Exhausted,
    #[error("cannot draw {k} items from {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("corpus exhausted: no unsampled clusters or triples remain")]
    CorpusExhausted,
    #[error("invalid sampling design: {0}")]
    InvalidDesign(String),
    #[error("invalid labeler {0:?}")]
    InvalidLabeler(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    /// Simple random sampling of triples without replacement.
    Srs,
    /// Two-stage weighted cluster sampling over the unstratified corpus.
    Twcs,
    /// Stratified TWCS.
    Stwcs,
    /// Weighted cluster sampling: TWCS annotating whole clusters.
    Wcs,
}

impl DesignKind {
    pub fn is_stratified(self) -> bool {
        self == DesignKind::Stwcs
    }
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DesignKind::Srs => "srs",
            DesignKind::Twcs => "twcs",
            DesignKind::Stwcs => "stwcs",
            DesignKind::Wcs => "wcs",
        })
    }
}

impl FromStr for DesignKind {
    type Err = SamplingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "srs" => Ok(DesignKind::Srs),
            "twcs" => Ok(DesignKind::Twcs),
            "stwcs" => Ok(DesignKind::Stwcs),
            "wcs" => Ok(DesignKind::Wcs),
            other => Err(SamplingError::InvalidDesign(format!("unknown design {other:?}"))),
        }
    }
}

pub const DEFAULT_M: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingDesign {
    pub kind: DesignKind,
    /// Per-cluster cap on annotated triples; `None` means whole clusters.
    pub m: Option<usize>,
}

impl SamplingDesign {
    pub fn new(kind: DesignKind, m: Option<usize>) -> Result<Self, SamplingError> {
        match (kind, m) {
            (_, Some(0)) => Err(SamplingError::InvalidDesign("m must be at least 1".into())),
            (DesignKind::Wcs, Some(_)) => Ok(Self { kind, m: None }),
            (DesignKind::Srs, _) => Ok(Self { kind, m: None }),
            (DesignKind::Twcs | DesignKind::Stwcs, None) => {
                Err(SamplingError::InvalidDesign(format!("{kind} requires a finite m")))
            }
            _ => Ok(Self { kind, m }),
        }
    }

    pub fn stwcs(m: usize) -> Result<Self, SamplingError> {
        Self::new(DesignKind::Stwcs, Some(m))
    }

    pub fn srs() -> Self {
        Self {
            kind: DesignKind::Srs,
            m: None,
        }
    }

    pub fn cap(&self) -> usize {
        self.m.unwrap_or(usize::MAX)
    }
}

/// Draws an index with probability proportional to `weights[i]`, by
/// inverting the cumulative sum in input order.
pub fn pps_wr_pick(weights: &[f64], rng: &mut RandomSource) -> Result<usize, SamplingError> {
    let total: f64 = weights.iter().filter(|w| **w > 0.0).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(SamplingError::ZeroTotalWeight);
    }
    let target = rng.unit() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if target < acc {
                return Ok(i);
            }
        }
    }
    // Only reachable through rounding in the running sum.
    Ok(last_positive)
}

/// Core of PPS without replacement: one successive-sampling draw over the
/// unsampled entries of `sizes`, whose unsampled total is `remaining_total`.
fn pick_unsampled<I>(entries: I, remaining_total: u64, rng: &mut RandomSource) -> Option<usize>
where
    I: Iterator<Item = (u64, bool)>,
{
    if remaining_total == 0 {
        return None;
    }
    let target = rng.below(remaining_total);
    let mut acc = 0u64;
    for (i, (size, sampled)) in entries.enumerate() {
        if sampled || size == 0 {
            continue;
        }
        acc += size;
        if target < acc {
            return Some(i);
        }
    }
    None
}

/// One PPS-WOR draw: picks among candidates not in `already_sampled`, with
/// probability proportional to size renormalized over what remains.
pub fn pps_wor_pick<'a, K>(
    candidates: &'a [(K, u64)],
    already_sampled: &HashSet<K>,
    rng: &mut RandomSource,
) -> Result<&'a K, SamplingError>
where
    K: Eq + Hash,
{
    let mut any_unsampled = false;
    let mut remaining = 0u64;
    for (k, size) in candidates {
        if !already_sampled.contains(k) {
            any_unsampled = true;
            remaining += size;
        }
    }
    if !any_unsampled {
        return Err(SamplingError::Exhausted);
    }
    let entries = candidates.iter().map(|(k, s)| (*s, already_sampled.contains(k)));
    pick_unsampled(entries, remaining, rng)
        .map(|i| &candidates[i].0)
        .ok_or(SamplingError::ZeroTotalWeight)
}

/// Uniform `k`-subset without replacement, returned in draw order
/// (partial Fisher–Yates).
pub fn srs_wor_sample<T: Clone>(ids: &[T], k: usize, rng: &mut RandomSource) -> Result<Vec<T>, SamplingError> {
    if k > ids.len() {
        return Err(SamplingError::KTooLarge { k, n: ids.len() });
    }
    let mut idx: Vec<usize> = (0..ids.len()).collect();
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let j = i + rng.below((ids.len() - i) as u64) as usize;
        idx.swap(i, j);
        out.push(ids[idx[i]].clone());
    }
    Ok(out)
}

/// One draw of the iterative sampler: a cluster and the triples annotated
/// from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleUnit {
    pub stratum: usize,
    pub cluster: ClusterId,
    pub triple_ids: Vec<String>,
}

#[derive(Debug, Clone)]
struct Pool {
    /// `(stratum, index into that stratum's cluster list)`.
    clusters: Vec<(usize, usize)>,
    sizes: Vec<u64>,
    sampled: Vec<bool>,
    remaining_size: u64,
    /// Fixed first-stage weight: the pool's total triple count.
    total_size: u64,
}

impl Pool {
    fn exhausted(&self) -> bool {
        self.remaining_size == 0
    }
}

#[derive(Debug, Clone)]
enum Frame {
    Clusters(Vec<Pool>),
    Triples(Vec<String>),
}

/// Mutable sampling progress: which clusters (or triples) are used up, and
/// the ordered log of emitted units.
#[derive(Debug, Clone)]
pub struct SamplerState {
    kind: DesignKind,
    frame: Frame,
    log: Vec<SampleUnit>,
}

impl SamplerState {
    pub fn new(corpus: &Corpus, kind: DesignKind) -> Self {
        let pool_of = |members: Vec<(usize, usize)>| {
            let sizes: Vec<u64> = members
                .iter()
                .map(|&(h, c)| corpus.strata()[h].clusters[c].len() as u64)
                .collect();
            let total: u64 = sizes.iter().sum();
            Pool {
                sampled: vec![false; members.len()],
                clusters: members,
                sizes,
                remaining_size: total,
                total_size: total,
            }
        };
        let frame = match kind {
            DesignKind::Stwcs => Frame::Clusters(
                corpus
                    .strata()
                    .iter()
                    .enumerate()
                    .map(|(h, s)| pool_of((0..s.clusters.len()).map(|c| (h, c)).collect()))
                    .collect(),
            ),
            DesignKind::Twcs | DesignKind::Wcs => {
                let all = corpus
                    .strata()
                    .iter()
                    .enumerate()
                    .flat_map(|(h, s)| (0..s.clusters.len()).map(move |c| (h, c)))
                    .collect();
                Frame::Clusters(vec![pool_of(all)])
            }
            DesignKind::Srs => Frame::Triples(corpus.triples().map(|t| t.triple_id.clone()).collect()),
        };
        Self {
            kind,
            frame,
            log: Vec::new(),
        }
    }

    pub fn kind(&self) -> DesignKind {
        self.kind
    }

    pub fn log(&self) -> &[SampleUnit] {
        &self.log
    }

    pub fn is_exhausted(&self) -> bool {
        match &self.frame {
            Frame::Clusters(pools) => pools.iter().all(Pool::exhausted),
            Frame::Triples(remaining) => remaining.is_empty(),
        }
    }

    /// Cluster ids already drawn, in draw order.
    pub fn sampled_clusters(&self) -> impl Iterator<Item = &ClusterId> {
        self.log.iter().map(|u| &u.cluster)
    }
}

fn draw_cluster_unit(
    corpus: &Corpus,
    state: &mut SamplerState,
    m: usize,
    rng: &mut RandomSource,
) -> Result<SampleUnit, SamplingError> {
    let Frame::Clusters(pools) = &mut state.frame else {
        return Err(SamplingError::InvalidDesign(
            "sampler state is not cluster-based".into(),
        ));
    };
    if m == 0 {
        return Err(SamplingError::InvalidDesign("m must be at least 1".into()));
    }
    let weights: Vec<f64> = pools
        .iter()
        .map(|p| if p.exhausted() { 0.0 } else { p.total_size as f64 })
        .collect();
    let pool_idx = match pps_wr_pick(&weights, rng) {
        Ok(i) => i,
        Err(SamplingError::ZeroTotalWeight) => return Err(SamplingError::CorpusExhausted),
        Err(e) => return Err(e),
    };
    let pool = &mut pools[pool_idx];
    let entries = pool.sizes.iter().copied().zip(pool.sampled.iter().copied());
    let pick = pick_unsampled(entries, pool.remaining_size, rng).ok_or(SamplingError::CorpusExhausted)?;
    pool.sampled[pick] = true;
    pool.remaining_size -= pool.sizes[pick];
    let (stratum, cluster_idx) = pool.clusters[pick];
    let cluster = &corpus.strata()[stratum].clusters[cluster_idx];
    let take = m.min(cluster.len());
    let triple_ids = srs_wor_sample(&cluster.triple_ids, take, rng)?;
    let unit = SampleUnit {
        stratum,
        cluster: cluster.id.clone(),
        triple_ids,
    };
    state.log.push(unit.clone());
    Ok(unit)
}

/// One STWCS iteration: a stratum by PPS-WR over the fixed sizes `M[h]` of
/// strata that still have unsampled clusters, a cluster by PPS-WOR within
/// it, then `min(m, |cluster|)` triples by SRS-WOR.
pub fn stwcs_next(
    corpus: &Corpus,
    state: &mut SamplerState,
    m: usize,
    rng: &mut RandomSource,
) -> Result<SampleUnit, SamplingError> {
    if state.kind != DesignKind::Stwcs {
        return Err(SamplingError::InvalidDesign(format!(
            "state was built for {}",
            state.kind
        )));
    }
    draw_cluster_unit(corpus, state, m, rng)
}

/// One TWCS iteration over the whole corpus as a single pool. With
/// `m = usize::MAX` this is weighted cluster sampling.
pub fn twcs_next(
    corpus: &Corpus,
    state: &mut SamplerState,
    m: usize,
    rng: &mut RandomSource,
) -> Result<SampleUnit, SamplingError> {
    if !matches!(state.kind, DesignKind::Twcs | DesignKind::Wcs) {
        return Err(SamplingError::InvalidDesign(format!(
            "state was built for {}",
            state.kind
        )));
    }
    draw_cluster_unit(corpus, state, m, rng)
}

/// One SRS draw: a uniformly chosen triple among those not yet drawn.
pub fn srs_design_next(
    corpus: &Corpus,
    state: &mut SamplerState,
    rng: &mut RandomSource,
) -> Result<String, SamplingError> {
    let Frame::Triples(remaining) = &mut state.frame else {
        return Err(SamplingError::InvalidDesign("sampler state is not triple-based".into()));
    };
    if remaining.is_empty() {
        return Err(SamplingError::CorpusExhausted);
    }
    let pick = rng.below(remaining.len() as u64) as usize;
    let id = remaining.swap_remove(pick);
    let cluster = corpus.cluster_of(&id).expect("sampled triple belongs to the corpus");
    state.log.push(SampleUnit {
        stratum: cluster.stratum,
        cluster,
        triple_ids: vec![id.clone()],
    });
    Ok(id)
}

/// Draws the next unit under `design`; SRS units hold a single triple.
pub fn next_unit(
    corpus: &Corpus,
    state: &mut SamplerState,
    design: &SamplingDesign,
    rng: &mut RandomSource,
) -> Result<SampleUnit, SamplingError> {
    if state.kind != design.kind {
        return Err(SamplingError::InvalidDesign(format!(
            "state was built for {}, design is {}",
            state.kind, design.kind
        )));
    }
    match design.kind {
        DesignKind::Stwcs => stwcs_next(corpus, state, design.cap(), rng),
        DesignKind::Twcs | DesignKind::Wcs => twcs_next(corpus, state, design.cap(), rng),
        DesignKind::Srs => {
            srs_design_next(corpus, state, rng)?;
            Ok(state.log.last().cloned().expect("just pushed"))
        }
    }
}

/// Rule for synthetic correctness labels used when sizing a static batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Labeler {
    /// Correct, incorrect, correct, ... in draw order.
    Alternating,
    /// Each triple correct with probability `p`.
    Bernoulli(f64),
    Constant(bool),
}

impl fmt::Display for Labeler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Labeler::Alternating => f.write_str("alternating"),
            Labeler::Bernoulli(p) => write!(f, "bernoulli:{p}"),
            Labeler::Constant(true) => f.write_str("constant:correct"),
            Labeler::Constant(false) => f.write_str("constant:incorrect"),
        }
    }
}

impl FromStr for Labeler {
    type Err = SamplingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SamplingError::InvalidLabeler(s.to_string());
        let lower = s.trim().to_ascii_lowercase();
        if lower == "alternating" {
            return Ok(Labeler::Alternating);
        }
        if let Some(p) = lower.strip_prefix("bernoulli:") {
            let p: f64 = p.parse().map_err(|_| bad())?;
            if !(0.0..=1.0).contains(&p) {
                return Err(bad());
            }
            return Ok(Labeler::Bernoulli(p));
        }
        match lower.strip_prefix("constant:") {
            Some("correct" | "1" | "true") => Ok(Labeler::Constant(true)),
            Some("incorrect" | "0" | "false") => Ok(Labeler::Constant(false)),
            _ => Err(bad()),
        }
    }
}

/// A [`Labeler`] with its running state.
#[derive(Debug, Clone)]
pub struct SyntheticLabels {
    rule: Labeler,
    emitted: u64,
    rng: RandomSource,
}

impl SyntheticLabels {
    /// Bernoulli labels use stream 1 of `seed`, leaving stream 0 to the
    /// sampler.
    pub fn new(rule: Labeler, seed: u64) -> Self {
        Self {
            rule,
            emitted: 0,
            rng: RandomSource::stream(seed, 1),
        }
    }

    pub fn next_label(&mut self) -> bool {
        let label = match self.rule {
            Labeler::Alternating => self.emitted.is_multiple_of(2),
            Labeler::Bernoulli(p) => self.rng.bernoulli(p),
            Labeler::Constant(c) => c,
        };
        self.emitted += 1;
        label
    }
}
