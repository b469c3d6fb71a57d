//! Triple corpora: parsing, surface-form normalization, stratification and
//! the stratum/cluster partition.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unknown entity label {0:?}")]
    UnknownLabel(String),
    #[error("line {line}: unknown entity label {label:?}")]
    UnknownLabelAt { line: usize, label: String },
    #[error("duplicate triple id {0:?}")]
    DuplicateId(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid stratification scheme: {0}")]
    InvalidScheme(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Location {
    Title,
    Abstract,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub document_id: String,
    pub text_span: String,
    pub label: String,
    pub location: Location,
    /// Code-point offsets into the title or abstract, end exclusive.
    pub start_offset: usize,
    pub end_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptLink {
    pub uri: String,
    pub resource: String,
    pub names: Vec<String>,
    pub definitions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub triple_id: String,
    pub mention: Mention,
    pub concept: ConceptLink,
    /// Full title or abstract the mention was found in, for display.
    pub context_text: String,
}

/// One line of a corpus JSONL file. Also embedded in batch files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleRecord {
    pub triple_id: String,
    pub doc_id: String,
    pub text_span: String,
    pub label: String,
    pub location: Location,
    pub start: usize,
    pub end: usize,
    pub uri: String,
    pub resource: String,
    pub names: Vec<String>,
    pub definitions: Vec<String>,
    pub context_text: String,
}

impl TripleRecord {
    pub fn into_triple(self) -> Result<Triple, String> {
        if self.triple_id.is_empty() {
            return Err("empty triple_id".into());
        }
        if self.text_span.is_empty() {
            return Err("empty text_span".into());
        }
        if self.start >= self.end {
            return Err(format!("start {} must be < end {}", self.start, self.end));
        }
        if self.uri.is_empty() {
            return Err("empty uri".into());
        }
        Ok(Triple {
            triple_id: self.triple_id,
            mention: Mention {
                document_id: self.doc_id,
                text_span: self.text_span,
                label: self.label,
                location: self.location,
                start_offset: self.start,
                end_offset: self.end,
            },
            concept: ConceptLink {
                uri: self.uri,
                resource: self.resource,
                names: self.names,
                definitions: self.definitions,
            },
            context_text: self.context_text,
        })
    }
}

impl From<&Triple> for TripleRecord {
    fn from(t: &Triple) -> Self {
        TripleRecord {
            triple_id: t.triple_id.clone(),
            doc_id: t.mention.document_id.clone(),
            text_span: t.mention.text_span.clone(),
            label: t.mention.label.clone(),
            location: t.mention.location,
            start: t.mention.start_offset,
            end: t.mention.end_offset,
            uri: t.concept.uri.clone(),
            resource: t.concept.resource.clone(),
            names: t.concept.names.clone(),
            definitions: t.concept.definitions.clone(),
            context_text: t.context_text.clone(),
        }
    }
}

/// Lowercases and collapses every whitespace run to a single space, trimming
/// both ends.
pub fn normalize_surface(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out.to_lowercase()
}

fn normalize_label(label: &str) -> String {
    label.trim().to_lowercase()
}

/// Deterministic mapping from entity labels to strata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratificationScheme {
    stratum_names: Vec<String>,
    label_to_stratum: BTreeMap<String, usize>,
}

impl StratificationScheme {
    /// Builds a scheme from `(label, stratum name)` pairs. Strata are indexed
    /// in order of first appearance.
    pub fn from_pairs<I, L, S>(pairs: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (L, S)>,
        L: AsRef<str>,
        S: AsRef<str>,
    {
        let mut stratum_names: Vec<String> = Vec::new();
        let mut label_to_stratum = BTreeMap::new();
        for (label, stratum) in pairs {
            let label = normalize_label(label.as_ref());
            let stratum = stratum.as_ref().trim();
            if label.is_empty() || stratum.is_empty() {
                return Err(CorpusError::InvalidScheme("empty label or stratum name".into()));
            }
            let idx = match stratum_names.iter().position(|s| s == stratum) {
                Some(i) => i,
                None => {
                    stratum_names.push(stratum.to_string());
                    stratum_names.len() - 1
                }
            };
            if let Some(prev) = label_to_stratum.insert(label.clone(), idx) {
                if prev != idx {
                    return Err(CorpusError::InvalidScheme(format!(
                        "label {label:?} maps to both {:?} and {:?}",
                        stratum_names[prev], stratum_names[idx]
                    )));
                }
            }
        }
        if stratum_names.is_empty() {
            return Err(CorpusError::InvalidScheme("no strata".into()));
        }
        Ok(Self {
            stratum_names,
            label_to_stratum,
        })
    }

    /// Parses a JSON object mapping label → stratum name.
    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let map: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(text).map_err(|e| CorpusError::InvalidScheme(e.to_string()))?;
        let mut pairs = Vec::with_capacity(map.len());
        for (label, v) in map {
            let stratum = v
                .as_str()
                .ok_or_else(|| CorpusError::InvalidScheme(format!("label {label:?}: stratum must be a string")))?
                .to_string();
            pairs.push((label, stratum));
        }
        Self::from_pairs(pairs)
    }

    pub fn from_file(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// The five label-based strata used for the GutBrainIE expert folds.
    pub fn gutbrainie() -> Self {
        const DDF: &str = "DDF";
        const MICRO: &str = "Microbiome + Bacteria";
        const BIO: &str = "Human + Animal + Anatomical Location";
        const CHEM: &str = "Chemical + Gene";
        const DRUG: &str = "Drug + Dietary Supplement + Food + Biomedical/Statistical Technique";
        Self::from_pairs([
            ("DDF", DDF),
            ("Microbiome", MICRO),
            ("Bacteria", MICRO),
            ("Human", BIO),
            ("Animal", BIO),
            ("Anatomical Location", BIO),
            ("Chemical", CHEM),
            ("Gene", CHEM),
            ("Drug", DRUG),
            ("Dietary Supplement", DRUG),
            ("Food", DRUG),
            ("Biomedical Technique", DRUG),
            ("Statistical Technique", DRUG),
        ])
        .expect("built-in scheme is well formed")
    }

    pub fn stratum_names(&self) -> &[String] {
        &self.stratum_names
    }

    pub fn len(&self) -> usize {
        self.stratum_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stratum_names.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = (&str, usize)> {
        self.label_to_stratum.iter().map(|(l, &s)| (l.as_str(), s))
    }

    pub fn assign_stratum(&self, label: &str) -> Result<usize, CorpusError> {
        self.label_to_stratum
            .get(&normalize_label(label))
            .copied()
            .ok_or_else(|| CorpusError::UnknownLabel(label.to_string()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        // Emit grouped by stratum so that reloading preserves stratum order.
        for (idx, _) in self.stratum_names.iter().enumerate() {
            for (label, &s) in &self.label_to_stratum {
                if s == idx {
                    map.insert(label.clone(), self.stratum_names[idx].clone().into());
                }
            }
        }
        serde_json::Value::Object(map)
    }
}

impl Default for StratificationScheme {
    fn default() -> Self {
        Self::gutbrainie()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClusterId {
    pub stratum: usize,
    pub surface: String,
}

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.stratum, self.surface)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub id: ClusterId,
    /// Member ids in lexicographic order.
    pub triple_ids: Vec<String>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.triple_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triple_ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stratum {
    pub name: String,
    /// Clusters ordered by surface form.
    pub clusters: Vec<Cluster>,
    pub size: usize,
}

/// An immutable, partitioned triple corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    scheme: StratificationScheme,
    triples: BTreeMap<String, Triple>,
    strata: Vec<Stratum>,
    total: usize,
    hash: String,
}

impl Corpus {
    pub fn scheme(&self) -> &StratificationScheme {
        &self.scheme
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn total_size(&self) -> usize {
        self.total
    }

    pub fn n_clusters(&self) -> usize {
        self.strata.iter().map(|s| s.clusters.len()).sum()
    }

    /// `W_h = M[h] / M`.
    pub fn weights(&self) -> Vec<f64> {
        let m = self.total as f64;
        self.strata.iter().map(|s| s.size as f64 / m).collect()
    }

    pub fn triple(&self, id: &str) -> Option<&Triple> {
        self.triples.get(id)
    }

    /// Triples in id order.
    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.triples.values()
    }

    pub fn cluster(&self, id: &ClusterId) -> Option<&Cluster> {
        let stratum = self.strata.get(id.stratum)?;
        stratum
            .clusters
            .binary_search_by(|c| c.id.surface.as_str().cmp(id.surface.as_str()))
            .ok()
            .map(|i| &stratum.clusters[i])
    }

    /// The cluster a triple belongs to.
    pub fn cluster_of(&self, triple_id: &str) -> Option<ClusterId> {
        let t = self.triples.get(triple_id)?;
        let stratum = self.scheme.assign_stratum(&t.mention.label).ok()?;
        Some(ClusterId {
            stratum,
            surface: normalize_surface(&t.mention.text_span),
        })
    }

    /// SHA-256 over the canonical serialization of the scheme and the
    /// triples in id order, hex encoded.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Per-stratum `(name, triples, clusters, weight)` rows.
    pub fn stats(&self) -> Vec<(String, usize, usize, f64)> {
        self.strata
            .iter()
            .zip(self.weights())
            .map(|(s, w)| (s.name.clone(), s.size, s.clusters.len(), w))
            .collect()
    }
}

fn corpus_hash(scheme: &StratificationScheme, triples: &BTreeMap<String, Triple>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"nelaudit-corpus-v1\n");
    hasher.update(scheme.to_json().to_string().as_bytes());
    hasher.update(b"\n");
    for t in triples.values() {
        let line = serde_json::to_string(&TripleRecord::from(t)).expect("record serializes");
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// Partitions `triples` into strata and `(stratum, surface form)` clusters.
pub fn build_corpus(triples: Vec<Triple>, scheme: &StratificationScheme) -> Result<Corpus, CorpusError> {
    if triples.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut by_id = BTreeMap::new();
    let mut grouped: Vec<BTreeMap<String, Vec<String>>> = vec![BTreeMap::new(); scheme.len()];
    for t in triples {
        let stratum = scheme.assign_stratum(&t.mention.label)?;
        let surface = normalize_surface(&t.mention.text_span);
        if by_id.contains_key(&t.triple_id) {
            return Err(CorpusError::DuplicateId(t.triple_id));
        }
        grouped[stratum].entry(surface).or_default().push(t.triple_id.clone());
        by_id.insert(t.triple_id.clone(), t);
    }
    let strata: Vec<Stratum> = grouped
        .into_iter()
        .enumerate()
        .map(|(idx, clusters)| {
            let clusters: Vec<Cluster> = clusters
                .into_iter()
                .map(|(surface, mut ids)| {
                    ids.sort();
                    Cluster {
                        id: ClusterId { stratum: idx, surface },
                        triple_ids: ids,
                    }
                })
                .collect();
            let size = clusters.iter().map(Cluster::len).sum();
            Stratum {
                name: scheme.stratum_names()[idx].clone(),
                clusters,
                size,
            }
        })
        .collect();
    let hash = corpus_hash(scheme, &by_id);
    Ok(Corpus {
        scheme: scheme.clone(),
        total: by_id.len(),
        triples: by_id,
        strata,
        hash,
    })
}

/// Parses JSONL triple records; blank lines are skipped, line numbers in
/// errors are 1-based.
pub fn parse_corpus_str(text: &str) -> Result<Vec<Triple>, CorpusError> {
    parse_lines(text, None)
}

/// Like [`parse_corpus_str`], also rejecting labels `scheme` does not know,
/// with the offending line.
pub fn parse_corpus_checked(text: &str, scheme: &StratificationScheme) -> Result<Vec<Triple>, CorpusError> {
    parse_lines(text, Some(scheme))
}

fn parse_lines(text: &str, scheme: Option<&StratificationScheme>) -> Result<Vec<Triple>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: TripleRecord = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let triple = record
            .into_triple()
            .map_err(|message| CorpusError::Parse { line: line_no, message })?;
        if let Some(scheme) = scheme {
            scheme
                .assign_stratum(&triple.mention.label)
                .map_err(|_| CorpusError::UnknownLabelAt {
                    line: line_no,
                    label: triple.mention.label.clone(),
                })?;
        }
        if !seen.insert(triple.triple_id.clone()) {
            return Err(CorpusError::Parse {
                line: line_no,
                message: format!("duplicate triple id {:?}", triple.triple_id),
            });
        }
        out.push(triple);
    }
    Ok(out)
}

pub fn parse_corpus_file(path: &Path) -> Result<Vec<Triple>, CorpusError> {
    parse_corpus_str(&read_text(path)?)
}

/// Reads, label-checks and partitions a corpus file in one go.
pub fn load_corpus_file(path: &Path, scheme: &StratificationScheme) -> Result<Corpus, CorpusError> {
    build_corpus(parse_corpus_checked(&read_text(path)?, scheme)?, scheme)
}

fn read_text(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Serialized corpus: the scheme, the triples and the hash they were built
/// with. Reloading rebuilds the partition and checks the hash.
#[derive(Debug, Serialize, Deserialize)]
pub struct CorpusBundle {
    pub format: String,
    pub corpus_hash: String,
    pub scheme: serde_json::Value,
    pub triples: Vec<TripleRecord>,
}

const BUNDLE_FORMAT: &str = "nelaudit-corpus-bundle/1";

impl CorpusBundle {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        Self {
            format: BUNDLE_FORMAT.into(),
            corpus_hash: corpus.hash().to_string(),
            scheme: corpus.scheme().to_json(),
            triples: corpus.triples().map(TripleRecord::from).collect(),
        }
    }

    pub fn into_corpus(self) -> Result<Corpus, CorpusError> {
        if self.format != BUNDLE_FORMAT {
            return Err(CorpusError::InvalidScheme(format!(
                "unsupported bundle format {:?}",
                self.format
            )));
        }
        let scheme = StratificationScheme::from_json(&self.scheme.to_string())?;
        let triples = self
            .triples
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                r.into_triple()
                    .map_err(|message| CorpusError::Parse { line: i + 1, message })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let corpus = build_corpus(triples, &scheme)?;
        if corpus.hash() != self.corpus_hash {
            return Err(CorpusError::InvalidScheme(format!(
                "bundle hash {} does not match rebuilt corpus {}",
                self.corpus_hash,
                corpus.hash()
            )));
        }
        Ok(corpus)
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        let text = serde_json::to_string(self).expect("bundle serializes");
        fs::write(path, text).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| CorpusError::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Reads a bundle file and rebuilds the corpus from it.
pub fn load_bundle(path: &Path) -> Result<Corpus, CorpusError> {
    CorpusBundle::read(path)?.into_corpus()
}
