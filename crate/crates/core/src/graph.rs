//! Triple ingestion, vocabularies, splits and the filter index.
//!
//! Files are UTF-8, one `head<TAB>relation<TAB>tail` triple per line. Ids are
//! assigned in first-appearance order over the train, valid, test concatenation,
//! so the same files always produce the same ids.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("training split is empty")]
    EmptyTrain,
    #[error("{kind} id {id} out of range (size {size})")]
    OutOfRange {
        kind: &'static str,
        id: usize,
        size: usize,
    },
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.relation, self.tail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// `(?, r, t)`: rank candidate heads.
    Head,
    /// `(h, r, ?)`: rank candidate tails.
    Tail,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Head => "head",
            Direction::Tail => "tail",
        })
    }
}

/// A partial triple with one entity slot left open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Query {
    Tail { head: usize, relation: usize },
    Head { relation: usize, tail: usize },
}

impl Query {
    /// The query obtained by removing the `direction` slot of `triple`.
    pub fn from_triple(triple: Triple, direction: Direction) -> Self {
        match direction {
            Direction::Tail => Query::Tail {
                head: triple.head,
                relation: triple.relation,
            },
            Direction::Head => Query::Head {
                relation: triple.relation,
                tail: triple.tail,
            },
        }
    }

    pub fn direction(&self) -> Direction {
        match self {
            Query::Tail { .. } => Direction::Tail,
            Query::Head { .. } => Direction::Head,
        }
    }

    pub fn relation(&self) -> usize {
        match *self {
            Query::Tail { relation, .. } | Query::Head { relation, .. } => relation,
        }
    }

    /// Fill the open slot with `entity`.
    pub fn complete(&self, entity: usize) -> Triple {
        match *self {
            Query::Tail { head, relation } => Triple::new(head, relation, entity),
            Query::Head { relation, tail } => Triple::new(entity, relation, tail),
        }
    }
}

/// Bijective name <-> dense id maps for entities and relations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    entities: Vec<String>,
    relations: Vec<String>,
    entity_ids: HashMap<String, usize>,
    relation_ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from name lists in id order. Duplicate names are rejected.
    pub fn from_names(entities: Vec<String>, relations: Vec<String>) -> Result<Self, String> {
        let mut vocab = Self::new();
        for name in entities {
            if vocab.entity_ids.contains_key(&name) {
                return Err(format!("duplicate entity name {name:?}"));
            }
            vocab.intern_entity(&name);
        }
        for name in relations {
            if vocab.relation_ids.contains_key(&name) {
                return Err(format!("duplicate relation name {name:?}"));
            }
            vocab.intern_relation(&name);
        }
        Ok(vocab)
    }

    pub fn intern_entity(&mut self, name: &str) -> usize {
        intern(&mut self.entities, &mut self.entity_ids, name)
    }

    pub fn intern_relation(&mut self, name: &str) -> usize {
        intern(&mut self.relations, &mut self.relation_ids, name)
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_ids.get(name).copied()
    }

    pub fn entity_name(&self, id: usize) -> Option<&str> {
        self.entities.get(id).map(String::as_str)
    }

    pub fn relation_name(&self, id: usize) -> Option<&str> {
        self.relations.get(id).map(String::as_str)
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entities
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relations
    }

    /// SHA-256 over the persisted two-column form of both maps.
    pub fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(b"entities\n");
        for (id, name) in self.entities.iter().enumerate() {
            hasher.update(format!("{name}\t{id}\n").as_bytes());
        }
        hasher.update(b"relations\n");
        for (id, name) in self.relations.iter().enumerate() {
            hasher.update(format!("{name}\t{id}\n").as_bytes());
        }
        hasher.finalize().into()
    }

    /// Write `entities.tsv` and `relations.tsv` (`name<TAB>id`) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|source| GraphError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write_map(&dir.join("entities.tsv"), &self.entities)?;
        write_map(&dir.join("relations.tsv"), &self.relations)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let entities = read_map(&dir.join("entities.tsv"))?;
        let relations = read_map(&dir.join("relations.tsv"))?;
        Vocabulary::from_names(entities, relations).map_err(|message| GraphError::Parse {
            path: dir.to_path_buf(),
            line: 0,
            message,
        })
    }
}

fn intern(names: &mut Vec<String>, ids: &mut HashMap<String, usize>, name: &str) -> usize {
    if let Some(&id) = ids.get(name) {
        return id;
    }
    let id = names.len();
    names.push(name.to_owned());
    ids.insert(name.to_owned(), id);
    id
}

fn write_map(path: &Path, names: &[String]) -> Result<()> {
    let io = |source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for (id, name) in names.iter().enumerate() {
        writeln!(out, "{name}\t{id}").map_err(io)?;
    }
    out.flush().map_err(io)
}

fn read_map(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut names = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let parse_err = |message: String| GraphError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let (name, id) = line
            .rsplit_once('\t')
            .ok_or_else(|| parse_err("expected name<TAB>id".into()))?;
        let id: usize = id
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("bad id {id:?}: {e}")))?;
        if id != names.len() {
            return Err(parse_err(format!("expected id {}, found {id}", names.len())));
        }
        names.push(name.to_owned());
    }
    Ok(names)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

/// Train/valid/test triples plus the filter index over their union.
///
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct TripleStore {
    n_entities: usize,
    n_relations: usize,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    known: HashSet<Triple>,
    tails: HashMap<(usize, usize), Vec<usize>>,
    heads: HashMap<(usize, usize), Vec<usize>>,
    duplicates: SplitCounts,
}

impl TripleStore {
    /// Build a store from id triples. Duplicates within a split are dropped
    /// (first occurrence kept) and counted.
    pub fn new(
        n_entities: usize,
        n_relations: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        for t in train.iter().chain(&valid).chain(&test) {
            check_id("entity", t.head, n_entities)?;
            check_id("entity", t.tail, n_entities)?;
            check_id("relation", t.relation, n_relations)?;
        }
        let (train, dup_train) = dedup(train);
        let (valid, dup_valid) = dedup(valid);
        let (test, dup_test) = dedup(test);
        if train.is_empty() {
            return Err(GraphError::EmptyTrain);
        }

        let mut known = HashSet::new();
        let mut tails: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        let mut heads: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for &t in train.iter().chain(&valid).chain(&test) {
            if known.insert(t) {
                tails.entry((t.head, t.relation)).or_default().push(t.tail);
                heads.entry((t.relation, t.tail)).or_default().push(t.head);
            }
        }
        for list in tails.values_mut().chain(heads.values_mut()) {
            list.sort_unstable();
        }

        Ok(Self {
            n_entities,
            n_relations,
            train,
            valid,
            test,
            known,
            tails,
            heads,
            duplicates: SplitCounts {
                train: dup_train,
                valid: dup_valid,
                test: dup_test,
            },
        })
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    pub fn duplicates(&self) -> SplitCounts {
        self.duplicates
    }

    pub fn is_known(&self, triple: &Triple) -> bool {
        self.known.contains(triple)
    }

    /// Number of distinct triples in the filter index.
    pub fn n_known(&self) -> usize {
        self.known.len()
    }

    /// Sorted ids of every entity completing `query` into a known-true triple.
    pub fn known_answers(&self, query: &Query) -> &[usize] {
        let hit = match *query {
            Query::Tail { head, relation } => self.tails.get(&(head, relation)),
            Query::Head { relation, tail } => self.heads.get(&(relation, tail)),
        };
        hit.map(Vec::as_slice).unwrap_or(&[])
    }

    /// Every entity id except those forming a known-true triple with `query`;
    /// `target` is always kept.
    pub fn filtered_candidates(&self, query: &Query, target: usize) -> Result<Vec<usize>> {
        self.check_query(query)?;
        check_id("entity", target, self.n_entities)?;
        let known = self.known_answers(query);
        Ok((0..self.n_entities)
            .filter(|&e| e == target || known.binary_search(&e).is_err())
            .collect())
    }

    pub fn check_query(&self, query: &Query) -> Result<()> {
        match *query {
            Query::Tail { head, relation } => {
                check_id("entity", head, self.n_entities)?;
                check_id("relation", relation, self.n_relations)
            }
            Query::Head { relation, tail } => {
                check_id("entity", tail, self.n_entities)?;
                check_id("relation", relation, self.n_relations)
            }
        }
    }

    /// Entities that never occur in the training split.
    pub fn unseen_in_train(&self) -> Vec<usize> {
        let mut seen = vec![false; self.n_entities];
        for t in &self.train {
            seen[t.head] = true;
            seen[t.tail] = true;
        }
        (0..self.n_entities).filter(|&e| !seen[e]).collect()
    }
}

fn check_id(kind: &'static str, id: usize, size: usize) -> Result<()> {
    if id < size {
        Ok(())
    } else {
        Err(GraphError::OutOfRange { kind, id, size })
    }
}

fn dedup(triples: Vec<Triple>) -> (Vec<Triple>, usize) {
    let mut seen = HashSet::with_capacity(triples.len());
    let before = triples.len();
    let kept: Vec<Triple> = triples.into_iter().filter(|t| seen.insert(*t)).collect();
    let dropped = before - kept.len();
    (kept, dropped)
}

/// Read the three split files, intern names, and build the store.
pub fn load_dataset(
    train_path: &Path,
    valid_path: &Path,
    test_path: &Path,
) -> Result<(Vocabulary, TripleStore)> {
    let mut vocab = Vocabulary::new();
    let train = read_split(train_path, &mut vocab)?;
    let valid = read_split(valid_path, &mut vocab)?;
    let test = read_split(test_path, &mut vocab)?;
    let store = TripleStore::new(vocab.n_entities(), vocab.n_relations(), train, valid, test)?;

    let dups = store.duplicates();
    if dups.train + dups.valid + dups.test > 0 {
        log::warn!(
            "dropped duplicate triples: train={} valid={} test={}",
            dups.train,
            dups.valid,
            dups.test
        );
    }
    let unseen = store.unseen_in_train();
    if !unseen.is_empty() {
        let names: Vec<&str> = unseen
            .iter()
            .take(20)
            .filter_map(|&e| vocab.entity_name(e))
            .collect();
        log::warn!(
            "{} entities appear only in valid/test and receive no gradient: {:?}{}",
            unseen.len(),
            names,
            if unseen.len() > names.len() { " ..." } else { "" }
        );
    }
    Ok((vocab, store))
}

fn read_split(path: &Path, vocab: &mut Vocabulary) -> Result<Vec<Triple>> {
    let file = fs::File::open(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut triples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| GraphError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(GraphError::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let head = vocab.intern_entity(fields[0]);
        let relation = vocab.intern_relation(fields[1]);
        let tail = vocab.intern_entity(fields[2]);
        triples.push(Triple::new(head, relation, tail));
    }
    Ok(triples)
}

/// Size summary of a loaded dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// `|train| / entities`, two decimals. This is the quantity tabulated as
    /// average degree for the standard benchmarks.
    pub avg_degree: f64,
    /// `2 |train| / entities`, two decimals: every triple adds one to the
    /// degree of each endpoint.
    pub mean_node_degree: f64,
    pub duplicates: SplitCounts,
}

pub fn compute_stats(store: &TripleStore) -> DatasetStats {
    let n = store.n_entities().max(1) as f64;
    let train = store.train().len() as f64;
    DatasetStats {
        entities: store.n_entities(),
        relations: store.n_relations(),
        train: store.train().len(),
        valid: store.valid().len(),
        test: store.test().len(),
        avg_degree: round2(train / n),
        mean_node_degree: round2(2.0 * train / n),
        duplicates: store.duplicates(),
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

impl DatasetStats {
    /// One-line JSON object.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("stats serialize")
    }
}

/// Published split sizes for common link-prediction benchmarks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceStats {
    pub name: &'static str,
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub avg_degree: f64,
}

pub const REFERENCE_STATS: &[ReferenceStats] = &[
    ReferenceStats { name: "Kinship", entities: 104, relations: 26, train: 8_544, valid: 1_068, test: 1_074, avg_degree: 82.15 },
    ReferenceStats { name: "UMLS", entities: 135, relations: 49, train: 5_216, valid: 652, test: 661, avg_degree: 38.63 },
    ReferenceStats { name: "Countries", entities: 272, relations: 2, train: 1_111, valid: 24, test: 24, avg_degree: 4.35 },
    ReferenceStats { name: "FB15K", entities: 14_951, relations: 1_345, train: 483_142, valid: 50_000, test: 59_071, avg_degree: 13.2 },
    ReferenceStats { name: "FB15K-237", entities: 14_951, relations: 237, train: 272_115, valid: 17_535, test: 20_466, avg_degree: 19.74 },
    ReferenceStats { name: "WN18", entities: 40_943, relations: 18, train: 141_442, valid: 5_000, test: 5_000, avg_degree: 1.2 },
    ReferenceStats { name: "WN18RR", entities: 40_943, relations: 11, train: 86_835, valid: 3_034, test: 3_134, avg_degree: 2.19 },
    ReferenceStats { name: "YAGO3-10", entities: 123_182, relations: 37, train: 1_079_040, valid: 5_000, test: 5_000, avg_degree: 9.6 },
    ReferenceStats { name: "DB100K", entities: 99_604, relations: 470, train: 597_572, valid: 50_000, test: 50_000, avg_degree: 12.0 },
    ReferenceStats { name: "CoDEx-S", entities: 2_034, relations: 42, train: 32_888, valid: 1_827, test: 1_828, avg_degree: 21.47 },
    ReferenceStats { name: "CoDEx-M", entities: 17_050, relations: 51, train: 185_584, valid: 10_310, test: 10_311, avg_degree: 13.45 },
    ReferenceStats { name: "CoDEx-L", entities: 77_951, relations: 69, train: 551_193, valid: 30_622, test: 30_622, avg_degree: 25.62 },
];

pub fn reference_stats(name: &str) -> Option<&'static ReferenceStats> {
    REFERENCE_STATS
        .iter()
        .find(|r| r.name.eq_ignore_ascii_case(name))
}

impl ReferenceStats {
    /// Human-readable differences between loaded counts and the reference.
    /// Empty when all counts agree.
    pub fn discrepancies(&self, stats: &DatasetStats) -> Vec<String> {
        let pairs = [
            ("entities", self.entities, stats.entities),
            ("relations", self.relations, stats.relations),
            ("train", self.train, stats.train),
            ("valid", self.valid, stats.valid),
            ("test", self.test, stats.test),
        ];
        pairs
            .iter()
            .filter(|(_, want, got)| want != got)
            .map(|(field, want, got)| {
                format!("{} {field}: reference {want}, loaded {got}", self.name)
            })
            .collect()
    }
}
