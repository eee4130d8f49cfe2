//! Link-prediction ranking and metrics.
//!
//! Every evaluation triple yields two queries, `(h, r, ?)` and `(?, r, t)`.
//! Metric averages run over queries.

use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Direction, GraphError, Query, Triple, TripleStore, Vocabulary};
use crate::models::{to_f64, EmbeddingTable, Model, ModelError, Prepared, Real};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no candidates to rank")]
    NoCandidates,
    #[error("target {0} is not a candidate")]
    TargetMissing(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("non-finite score while ranking query {0}")]
    NonFinite(Triple),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// How candidates scoring exactly like the target are counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    /// Half of the ties rank above the target.
    #[default]
    Mean,
    /// All ties rank above the target.
    Pessimistic,
    /// No ties rank above the target.
    Optimistic,
}

impl TiePolicy {
    pub const ALL: [TiePolicy; 3] = [TiePolicy::Mean, TiePolicy::Pessimistic, TiePolicy::Optimistic];

    /// `1 + greater + adjustment(ties)`.
    pub fn rank(self, greater: usize, ties: usize) -> f64 {
        let adj = match self {
            TiePolicy::Mean => ties as f64 / 2.0,
            TiePolicy::Pessimistic => ties as f64,
            TiePolicy::Optimistic => 0.0,
        };
        1.0 + greater as f64 + adj
    }

    pub fn name(self) -> &'static str {
        match self {
            TiePolicy::Mean => "mean",
            TiePolicy::Pessimistic => "pessimistic",
            TiePolicy::Optimistic => "optimistic",
        }
    }
}

impl FromStr for TiePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        TiePolicy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown tie policy {s:?}; expected mean, pessimistic or optimistic"))
    }
}

/// Rank of `target` among `candidates` given their scores.
///
/// `scores[c]` is the score of candidate entity `c`; only ids listed in
/// `candidates` compete. `target` must be listed.
pub fn rank_among(scores: &[f64], candidates: &[usize], target: usize, policy: TiePolicy) -> Result<f64> {
    if candidates.is_empty() {
        return Err(EvalError::NoCandidates);
    }
    if !candidates.contains(&target) {
        return Err(EvalError::TargetMissing(target));
    }
    let s = scores[target];
    let (mut greater, mut ties) = (0, 0);
    for &c in candidates {
        if c == target {
            continue;
        }
        if scores[c] > s {
            greater += 1;
        } else if scores[c] == s {
            ties += 1;
        }
    }
    Ok(policy.rank(greater, ties))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankResult {
    pub triple: Triple,
    pub direction: Direction,
    pub raw_rank: f64,
    pub filtered_rank: f64,
}

/// The `k` best answers to `query`, best first, skipping `exclude` (sorted
/// ids). Ties go to the lower entity id.
pub fn top_answers<S: Real>(
    model: &Model,
    table: &EmbeddingTable<S>,
    query: &Query,
    exclude: &[usize],
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    let mut scores = Vec::new();
    CandidateScorer::new(model, table)?.score_all(query, &mut scores)?;
    let mut order: Vec<usize> = (0..scores.len())
        .filter(|e| exclude.binary_search(e).is_err())
        .collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(order.into_iter().take(k).map(|e| (e, scores[e])).collect())
}

/// Reusable buffers for scoring every entity against one query.
pub struct CandidateScorer<'a, S: Real> {
    model: &'a Model,
    table: &'a EmbeddingTable<S>,
    shared: std::borrow::Cow<'a, [f64]>,
    row: Vec<f64>,
}

impl<'a, S: Real> CandidateScorer<'a, S> {
    pub fn new(model: &'a Model, table: &'a EmbeddingTable<S>) -> Result<Self> {
        model.check_table(table)?;
        Ok(Self {
            model,
            table,
            shared: table.shared_f64(),
            row: Vec::with_capacity(table.entity_width()),
        })
    }

    /// Score every entity as the missing slot of `query`, writing into `out`.
    pub fn score_all(&mut self, query: &Query, out: &mut Vec<f64>) -> Result<()> {
        let n = self.table.n_entities();
        out.clear();
        let prep: Prepared = self.model.prepare(self.table.relation(query.relation()));
        match *query {
            Query::Tail { head, .. } => {
                let h = to_f64(self.table.entity(head)).into_owned();
                for c in 0..n {
                    self.load(c);
                    out.push(self.model.score_prepared(&prep, &h, &self.row, &self.shared));
                }
            }
            Query::Head { tail, .. } => {
                let t = to_f64(self.table.entity(tail)).into_owned();
                for c in 0..n {
                    self.load(c);
                    out.push(self.model.score_prepared(&prep, &self.row, &t, &self.shared));
                }
            }
        }
        Ok(())
    }

    fn load(&mut self, id: usize) {
        self.row.clear();
        self.row.extend(self.table.entity(id).iter().map(|x| x.to_f64()));
    }
}

/// Raw and filtered rank of `target` for `query`.
pub fn rank_query<S: Real>(
    model: &Model,
    table: &EmbeddingTable<S>,
    store: &TripleStore,
    query: &Query,
    target: usize,
    policy: TiePolicy,
) -> Result<RankResult> {
    let mut scorer = CandidateScorer::new(model, table)?;
    let mut scores = Vec::new();
    rank_with(&mut scorer, &mut scores, store, query, target, policy)
}

fn rank_with<S: Real>(
    scorer: &mut CandidateScorer<'_, S>,
    scores: &mut Vec<f64>,
    store: &TripleStore,
    query: &Query,
    target: usize,
    policy: TiePolicy,
) -> Result<RankResult> {
    store.check_query(query)?;
    let triple = query.complete(target);
    if target >= store.n_entities() {
        return Err(EvalError::TargetMissing(target));
    }
    scorer.score_all(query, scores)?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite(triple));
    }
    let s = scores[target];
    let (mut greater, mut ties) = (0usize, 0usize);
    for (c, &v) in scores.iter().enumerate() {
        if c == target {
            continue;
        }
        if v > s {
            greater += 1;
        } else if v == s {
            ties += 1;
        }
    }
    let raw_rank = policy.rank(greater, ties);
    // known answers other than the target are dropped from the filtered list
    for &c in store.known_answers(query) {
        if c == target {
            continue;
        }
        if scores[c] > s {
            greater -= 1;
        } else if scores[c] == s {
            ties -= 1;
        }
    }
    Ok(RankResult {
        triple,
        direction: query.direction(),
        raw_rank,
        filtered_rank: policy.rank(greater, ties),
    })
}

/// Mean rank, mean reciprocal rank and hits at 1, 3, 10.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub mr: f64,
    pub mrr: f64,
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub hits_at_10: f64,
}

impl Metrics {
    /// Sequential summation in `f64` so the result does not depend on how
    /// the ranks were computed.
    pub fn from_ranks(ranks: &[f64]) -> Self {
        if ranks.is_empty() {
            return Self::default();
        }
        let n = ranks.len() as f64;
        let mut m = Metrics::default();
        for &r in ranks {
            m.mr += r;
            m.mrr += 1.0 / r;
            m.hits_at_1 += (r <= 1.0) as u8 as f64;
            m.hits_at_3 += (r <= 3.0) as u8 as f64;
            m.hits_at_10 += (r <= 10.0) as u8 as f64;
        }
        m.mr /= n;
        m.mrr /= n;
        m.hits_at_1 /= n;
        m.hits_at_3 /= n;
        m.hits_at_10 /= n;
        m
    }

    pub fn hits_at(ranks: &[f64], k: usize) -> f64 {
        if ranks.is_empty() {
            return 0.0;
        }
        ranks.iter().filter(|&&r| r <= k as f64).count() as f64 / ranks.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub queries: usize,
    pub tie_policy: TiePolicy,
    pub raw: Metrics,
    pub filtered: Metrics,
}

impl MetricsReport {
    pub fn from_ranks(ranks: &[RankResult], tie_policy: TiePolicy) -> Self {
        let raw: Vec<f64> = ranks.iter().map(|r| r.raw_rank).collect();
        let filtered: Vec<f64> = ranks.iter().map(|r| r.filtered_rank).collect();
        Self {
            queries: ranks.len(),
            tie_policy,
            raw: Metrics::from_ranks(&raw),
            filtered: Metrics::from_ranks(&filtered),
        }
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        obj.insert("queries".into(), self.queries.into());
        obj.insert("tie_policy".into(), self.tie_policy.name().into());
        for (suffix, m) in [("raw", &self.raw), ("filtered", &self.filtered)] {
            for (name, v) in [
                ("mr", m.mr),
                ("mrr", m.mrr),
                ("hits_at_1", m.hits_at_1),
                ("hits_at_3", m.hits_at_3),
                ("hits_at_10", m.hits_at_10),
            ] {
                obj.insert(format!("{name}_{suffix}"), v.into());
            }
        }
        serde_json::Value::Object(obj)
    }

    /// One-line JSON object.
    pub fn to_json(&self) -> String {
        self.to_json_value().to_string()
    }
}

/// Rank both directions of every triple in `triples`.
///
/// Queries run in parallel on the current rayon pool; results come back in
/// input order (tail query, then head query, per triple).
pub fn evaluate<S: Real>(
    model: &Model,
    table: &EmbeddingTable<S>,
    store: &TripleStore,
    triples: &[Triple],
    policy: TiePolicy,
) -> Result<(MetricsReport, Vec<RankResult>)> {
    model.check_table(table)?;
    let per_triple: Vec<Result<[RankResult; 2]>> = triples
        .par_iter()
        .map_init(
            || {
                let scorer = CandidateScorer::new(model, table).expect("layout checked above");
                (scorer, Vec::new())
            },
            |(scorer, scores), &t| {
                let tail = rank_with(scorer, scores, store, &Query::from_triple(t, Direction::Tail), t.tail, policy)?;
                let head = rank_with(scorer, scores, store, &Query::from_triple(t, Direction::Head), t.head, policy)?;
                Ok([tail, head])
            },
        )
        .collect();
    let mut ranks = Vec::with_capacity(2 * triples.len());
    for r in per_triple {
        ranks.extend(r?);
    }
    Ok((MetricsReport::from_ranks(&ranks, policy), ranks))
}

/// Per-query CSV with entity and relation names.
pub fn write_rank_csv<W: Write>(mut w: W, vocab: &Vocabulary, ranks: &[RankResult]) -> std::io::Result<()> {
    writeln!(w, "query_head,query_rel,query_tail,direction,raw_rank,filtered_rank")?;
    let ent = |id| vocab.entity_name(id).unwrap_or("?");
    for r in ranks {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            csv_field(ent(r.triple.head)),
            csv_field(vocab.relation_name(r.triple.relation).unwrap_or("?")),
            csv_field(ent(r.triple.tail)),
            r.direction,
            r.raw_rank,
            r.filtered_rank
        )?;
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
