//! Static sample batches: generation under synthetic labels and the JSONL
//! batch file.
//!
//! A batch file starts with one header line, followed by one line per
//! sampled triple in draw order. Consecutive lines with the same `unit`
//! index come from one sampled cluster.

use std::collections::HashSet;
use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, TripleRecord};
use crate::estimation::{EstimateError, EstimateReport, EstimatorConfig, UnitAccumulator, DEFAULT_MIN_CLUSTERS};
use crate::rng::RandomSource;
use crate::sampling::{next_unit, DesignKind, Labeler, SamplerState, SamplingDesign, SamplingError, SyntheticLabels};

#[derive(Debug, Error)]
pub enum BatchError {
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error("epsilon must be in (0, 0.5), got {0}")]
    InvalidEpsilon(f64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumInfo {
    pub name: String,
    pub size: usize,
    pub clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchHeader {
    pub seed: u64,
    pub design: DesignKind,
    pub m: Option<usize>,
    pub epsilon: f64,
    pub alpha: f64,
    /// Convergence also requires this many fully judged clusters.
    #[serde(default = "default_min_clusters")]
    pub min_clusters: usize,
    pub corpus_hash: String,
    pub labeler: String,
    /// Corpus strata sizes, so the batch can be estimated without the corpus.
    pub strata: Vec<StratumInfo>,
}

fn default_min_clusters() -> usize {
    DEFAULT_MIN_CLUSTERS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub seq: usize,
    pub unit: usize,
    pub stratum: String,
    pub stratum_index: usize,
    pub cluster_surface: String,
    #[serde(flatten)]
    pub record: TripleRecord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchUnit<'a> {
    pub index: usize,
    pub stratum_index: usize,
    pub cluster_surface: &'a str,
    /// Entry positions of the unit's triples.
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub header: BatchHeader,
    pub entries: Vec<BatchEntry>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn units(&self) -> Vec<BatchUnit<'_>> {
        let mut out: Vec<BatchUnit<'_>> = Vec::new();
        for (i, e) in self.entries.iter().enumerate() {
            match out.last_mut() {
                Some(u) if u.index == e.unit => u.range.end = i + 1,
                _ => out.push(BatchUnit {
                    index: e.unit,
                    stratum_index: e.stratum_index,
                    cluster_surface: &e.cluster_surface,
                    range: i..i + 1,
                }),
            }
        }
        out
    }

    pub fn position(&self, triple_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.record.triple_id == triple_id)
    }

    pub fn estimator_config(&self) -> Result<EstimatorConfig, EstimateError> {
        Ok(EstimatorConfig::new(self.header.alpha, self.header.epsilon)?.with_min_clusters(self.header.min_clusters))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, BatchError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(BatchError::Parse {
            line: 1,
            message: "missing header line".into(),
        })?;
        let header: BatchHeader = serde_json::from_str(first).map_err(|e| BatchError::Parse {
            line: 1,
            message: format!("header: {e}"),
        })?;
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        let mut last_unit: Option<usize> = None;
        for (i, line) in lines {
            let line_no = i + 1;
            let bad = |message: String| BatchError::Parse { line: line_no, message };
            let entry: BatchEntry = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            if entry.seq != entries.len() {
                return Err(bad(format!("expected seq {}, found {}", entries.len(), entry.seq)));
            }
            match last_unit {
                Some(u) if entry.unit != u && entry.unit != u + 1 => {
                    return Err(bad(format!("unit {} does not follow unit {u}", entry.unit)))
                }
                None if entry.unit != 0 => return Err(bad("first unit must be 0".into())),
                _ => {}
            }
            if entry.stratum_index >= header.strata.len() {
                return Err(bad(format!("stratum index {} out of range", entry.stratum_index)));
            }
            if !seen.insert(entry.record.triple_id.clone()) {
                return Err(bad(format!("triple {:?} appears twice", entry.record.triple_id)));
            }
            last_unit = Some(entry.unit);
            entries.push(entry);
        }
        Ok(Self { header, entries })
    }

    pub fn read(path: &Path) -> Result<Self, BatchError> {
        let text = fs::read_to_string(path).map_err(|source| BatchError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<(), BatchError> {
        fs::write(path, self.to_jsonl()).map_err(|source| BatchError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Simulates an annotation round with synthetic labels to size a static
/// batch: draws units under `design` until the recomputed margin of error
/// reaches `epsilon` or the corpus runs out. The estimate is refreshed only
/// after whole units, so the batch always ends on a unit boundary.
pub fn generate_static_batch(
    corpus: &Corpus,
    design: &SamplingDesign,
    epsilon: f64,
    alpha: f64,
    seed: u64,
    labeler: Labeler,
) -> Result<Batch, BatchError> {
    let config = EstimatorConfig::new(alpha, epsilon)?;
    Ok(generate_static_batch_with(corpus, design, &config, seed, labeler)?.0)
}

/// [`generate_static_batch`] with a full estimator configuration. Also
/// returns the final estimate under the synthetic labels.
pub fn generate_static_batch_with(
    corpus: &Corpus,
    design: &SamplingDesign,
    config: &EstimatorConfig,
    seed: u64,
    labeler: Labeler,
) -> Result<(Batch, EstimateReport), BatchError> {
    let epsilon = config.epsilon;
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(BatchError::InvalidEpsilon(epsilon));
    }
    let config = *config;
    let strata_sizes: Vec<(String, usize)> = corpus.strata().iter().map(|s| (s.name.clone(), s.size)).collect();
    let mut acc = UnitAccumulator::new(design.kind, &strata_sizes);
    let mut rng = RandomSource::new(seed);
    let mut labels = SyntheticLabels::new(labeler, seed);
    let mut state = SamplerState::new(corpus, design.kind);
    let mut entries = Vec::new();
    let mut indicators = Vec::new();
    loop {
        let unit = match next_unit(corpus, &mut state, design, &mut rng) {
            Ok(u) => u,
            Err(SamplingError::CorpusExhausted) => break,
            Err(e) => return Err(e.into()),
        };
        let unit_index = state.log().len() - 1;
        indicators.clear();
        for id in &unit.triple_ids {
            indicators.push(labels.next_label() as u8);
            let triple = corpus.triple(id).expect("sampled triple exists");
            entries.push(BatchEntry {
                seq: entries.len(),
                unit: unit_index,
                stratum: corpus.strata()[unit.stratum].name.clone(),
                stratum_index: unit.stratum,
                cluster_surface: unit.cluster.surface.clone(),
                record: TripleRecord::from(triple),
            });
        }
        acc.add_unit(unit.stratum, &indicators)?;
        if acc.report(&config).converged {
            break;
        }
    }
    let batch = Batch {
        header: BatchHeader {
            seed,
            design: design.kind,
            m: design.m,
            epsilon,
            alpha: config.alpha,
            min_clusters: config.min_clusters,
            corpus_hash: corpus.hash().to_string(),
            labeler: labeler.to_string(),
            strata: corpus
                .strata()
                .iter()
                .map(|s| StratumInfo {
                    name: s.name.clone(),
                    size: s.size,
                    clusters: s.clusters.len(),
                })
                .collect(),
        },
        entries,
    };
    Ok((batch, acc.report(&config)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_support::triple;
    use crate::corpus::{build_corpus, StratificationScheme};
    use crate::estimation::{stwcs_aggregate, twcs_estimate, StratumEstimate};

    fn scheme() -> StratificationScheme {
        StratificationScheme::from_pairs([("a", "A"), ("b", "B")]).unwrap()
    }

    fn corpus_of(spec: &[(&str, &str, usize)]) -> Corpus {
        let mut ts = Vec::new();
        for (label, surface, size) in spec {
            for i in 0..*size {
                ts.push(triple(&format!("{label}-{surface}-{i:03}"), surface, label));
            }
        }
        build_corpus(ts, &scheme()).unwrap()
    }

    /// Independent MoE recomputation straight from the batch lines, with
    /// alternating labels re-derived from `seq`.
    fn reference_moe_after_each_unit(batch: &Batch, config: &EstimatorConfig) -> Vec<Option<f64>> {
        let k = batch.header.strata.len();
        let total: usize = batch.header.strata.iter().map(|s| s.size).sum();
        let weights: Vec<f64> = batch
            .header
            .strata
            .iter()
            .map(|s| s.size as f64 / total as f64)
            .collect();
        let mut per_stratum: Vec<Vec<f64>> = vec![vec![]; k];
        let mut out = Vec::new();
        let mut i = 0;
        while i < batch.entries.len() {
            let unit = batch.entries[i].unit;
            let h = batch.entries[i].stratum_index;
            let mut ones = 0.0;
            let mut n = 0.0;
            while i < batch.entries.len() && batch.entries[i].unit == unit {
                if batch.entries[i].seq.is_multiple_of(2) {
                    ones += 1.0;
                }
                n += 1.0;
                i += 1;
            }
            per_stratum[h].push(ones / n);
            let strata = per_stratum
                .iter()
                .enumerate()
                .map(|(h, means)| {
                    let e = twcs_estimate(means).ok();
                    StratumEstimate::from_summary(
                        h,
                        "",
                        means.len(),
                        e.map(|e| e.mu_hat),
                        e.and_then(|e| e.variance),
                        config.z,
                    )
                })
                .collect();
            out.push(stwcs_aggregate(strata, &weights, config).unwrap().moe);
        }
        out
    }

    #[test]
    fn small_batch_matches_reference_recomputation() {
        let c = corpus_of(&[("a", "x", 2), ("a", "y", 1), ("b", "z", 3)]);
        let design = SamplingDesign::stwcs(5).unwrap();
        let config = EstimatorConfig::new(0.05, 0.4).unwrap().with_min_clusters(0);
        let (batch, _) = generate_static_batch_with(&c, &design, &config, 42, Labeler::Alternating).unwrap();
        let moes = reference_moe_after_each_unit(&batch, &config);
        let n_units = batch.units().len();
        assert_eq!(moes.len(), n_units);
        // Stops at the first unit whose MoE reaches the target, or at exhaustion.
        let first_hit = moes.iter().position(|m| m.is_some_and(|m| m <= 0.4));
        match first_hit {
            Some(i) => assert_eq!(i + 1, n_units),
            None => assert_eq!(batch.len(), c.total_size()),
        }
    }

    fn forty_clusters() -> Corpus {
        let mut spec = Vec::new();
        let names: Vec<String> = (0..40).map(|i| format!("s{i:02}")).collect();
        for (i, n) in names.iter().enumerate() {
            spec.push((if i % 2 == 0 { "a" } else { "b" }, n.as_str(), 1 + i % 4));
        }
        corpus_of(&spec)
    }

    #[test]
    fn batch_stops_on_unit_boundary() {
        let c = forty_clusters();
        let design = SamplingDesign::stwcs(5).unwrap();
        let config = EstimatorConfig::new(0.05, 0.3).unwrap().with_min_clusters(0);
        let (batch, report) = generate_static_batch_with(&c, &design, &config, 7, Labeler::Alternating).unwrap();
        let moes = reference_moe_after_each_unit(&batch, &config);
        assert!(moes.last().unwrap().unwrap() <= 0.3);
        assert_eq!(report.moe, *moes.last().unwrap());
        assert!(report.converged);
        assert!(moes[..moes.len() - 1].iter().all(|m| m.is_none_or(|m| m > 0.3)));
        // Each unit is a whole cluster (sizes are all <= m here).
        for u in batch.units() {
            let cluster = c
                .cluster(&crate::corpus::ClusterId {
                    stratum: u.stratum_index,
                    surface: u.cluster_surface.to_string(),
                })
                .unwrap();
            assert_eq!(cluster.len(), u.range.len());
        }
    }

    #[test]
    fn default_guard_keeps_drawing_past_early_convergence() {
        let c = forty_clusters();
        let design = SamplingDesign::stwcs(5).unwrap();
        let batch = generate_static_batch(&c, &design, 0.3, 0.05, 7, Labeler::Alternating).unwrap();
        assert_eq!(batch.header.min_clusters, DEFAULT_MIN_CLUSTERS);
        let config = batch.estimator_config().unwrap();
        let moes = reference_moe_after_each_unit(&batch, &config);
        assert_eq!(moes.len(), DEFAULT_MIN_CLUSTERS);
        assert!(moes.last().unwrap().unwrap() <= 0.3);
    }

    #[test]
    fn exhaustion_ends_batch() {
        let c = corpus_of(&[("a", "x", 1), ("b", "y", 1)]);
        let design = SamplingDesign::stwcs(5).unwrap();
        let batch = generate_static_batch(&c, &design, 0.01, 0.05, 1, Labeler::Alternating).unwrap();
        assert_eq!(batch.len(), 2);
    }

    #[test]
    fn batch_file_round_trip_and_determinism() {
        let c = corpus_of(&[("a", "x", 4), ("a", "y", 9), ("b", "z", 3), ("b", "w", 6)]);
        let design = SamplingDesign::stwcs(5).unwrap();
        let a = generate_static_batch(&c, &design, 0.2, 0.05, 42, Labeler::Bernoulli(0.7)).unwrap();
        let b = generate_static_batch(&c, &design, 0.2, 0.05, 42, Labeler::Bernoulli(0.7)).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        let parsed = Batch::parse(&a.to_jsonl()).unwrap();
        assert_eq!(parsed, a);
        let first = a.to_jsonl().lines().next().unwrap().to_string();
        for key in ["seed", "design", "m", "epsilon", "alpha", "corpus_hash"] {
            assert!(first.contains(&format!("\"{key}\"")), "{key}");
        }
    }

    #[test]
    fn srs_batch_has_single_triple_units() {
        let c = corpus_of(&[("a", "x", 5), ("b", "y", 5)]);
        let batch = generate_static_batch(&c, &SamplingDesign::srs(), 0.4, 0.05, 3, Labeler::Alternating).unwrap();
        assert!(batch.units().iter().all(|u| u.range.len() == 1));
        assert!(batch.len() >= 2);
    }

    #[test]
    fn parse_rejects_malformed() {
        assert!(Batch::parse("").is_err());
        let c = corpus_of(&[("a", "x", 2)]);
        let batch = generate_static_batch(
            &c,
            &SamplingDesign::stwcs(5).unwrap(),
            0.4,
            0.05,
            3,
            Labeler::Alternating,
        )
        .unwrap();
        let text = batch.to_jsonl();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(1, 2);
        match Batch::parse(&lines.join("\n")) {
            Err(BatchError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_epsilon() {
        let c = corpus_of(&[("a", "x", 2)]);
        let design = SamplingDesign::stwcs(5).unwrap();
        assert!(matches!(
            generate_static_batch(&c, &design, 0.5, 0.05, 1, Labeler::Alternating),
            Err(BatchError::InvalidEpsilon(_))
        ));
    }
}
