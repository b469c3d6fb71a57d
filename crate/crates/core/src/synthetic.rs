//! Synthetic corpora with chosen stratum and cluster shapes, for demos and
//! statistical checks.

use crate::corpus::{build_corpus, ConceptLink, Corpus, CorpusError, Location, Mention, StratificationScheme, Triple};
use crate::rng::RandomSource;
use crate::sampling::srs_wor_sample;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratumShape {
    /// Entity label given to every triple of the stratum.
    pub label: String,
    pub cluster_sizes: Vec<usize>,
}

impl StratumShape {
    pub fn new(label: impl Into<String>, cluster_sizes: Vec<usize>) -> Self {
        Self {
            label: label.into(),
            cluster_sizes,
        }
    }

    pub fn size(&self) -> usize {
        self.cluster_sizes.iter().sum()
    }
}

const CONTEXT_PREFIX: &str = "Synthetic abstract mentioning ";

/// One triple per unit of cluster size. Cluster `j` of a stratum labelled
/// `L` has surface `"L entity j"`; ids are `L-jjjjj-iii`.
pub fn synthetic_triples(shapes: &[StratumShape]) -> Vec<Triple> {
    let start = CONTEXT_PREFIX.chars().count();
    let mut out = Vec::with_capacity(shapes.iter().map(StratumShape::size).sum());
    for shape in shapes {
        let slug = shape.label.to_lowercase().replace(|c: char| !c.is_alphanumeric(), "_");
        for (j, &size) in shape.cluster_sizes.iter().enumerate() {
            let span = format!("{} entity {j}", shape.label);
            for i in 0..size {
                let id = format!("{slug}-{j:05}-{i:03}");
                out.push(Triple {
                    mention: Mention {
                        document_id: format!("doc-{slug}-{j}-{i}"),
                        text_span: span.clone(),
                        label: shape.label.clone(),
                        location: Location::Abstract,
                        start_offset: start,
                        end_offset: start + span.chars().count(),
                    },
                    concept: ConceptLink {
                        uri: format!("http://example.org/{slug}/{j}"),
                        resource: "SYNTH".into(),
                        names: vec![span.clone()],
                        definitions: vec![],
                    },
                    context_text: format!("{CONTEXT_PREFIX}{span}."),
                    triple_id: id,
                });
            }
        }
    }
    out
}

/// A scheme with one stratum per shape, named after its label.
pub fn synthetic_scheme(shapes: &[StratumShape]) -> Result<StratificationScheme, CorpusError> {
    StratificationScheme::from_pairs(shapes.iter().map(|s| (s.label.clone(), s.label.clone())))
}

pub fn synthetic_corpus(shapes: &[StratumShape]) -> Result<Corpus, CorpusError> {
    build_corpus(synthetic_triples(shapes), &synthetic_scheme(shapes)?)
}

/// A uniformly random split of `total` triples into `n_clusters` non-empty
/// clusters.
pub fn split_sizes(total: usize, n_clusters: usize, rng: &mut RandomSource) -> Vec<usize> {
    assert!(n_clusters >= 1 && n_clusters <= total, "need 1 <= n_clusters <= total");
    let candidates: Vec<usize> = (1..total).collect();
    let mut cuts = srs_wor_sample(&candidates, n_clusters - 1, rng).expect("enough cut points");
    cuts.sort_unstable();
    cuts.push(total);
    let mut prev = 0;
    cuts.into_iter()
        .map(|c| {
            let size = c - prev;
            prev = c;
            size
        })
        .collect()
}
