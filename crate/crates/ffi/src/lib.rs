//! C ABI over the `kge` toolkit.
//!
//! Every function returns a [`KgeStatus`]; results come back through out
//! pointers. On failure a message is kept per thread and can be read with
//! [`kge_last_error`]. Handles are opaque and must be released with their
//! matching `_free` function. Strings returned as `char *` are owned by the
//! caller and released with [`kge_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use kge::eval::{evaluate, top_answers, TiePolicy};
use kge::graph::{compute_stats, load_dataset, Query, Triple, TripleStore, Vocabulary};
use kge::models::Model;
use kge::trainer::{load_checkpoint, save_checkpoint, train, Checkpoint, CheckpointError, TrainConfig, TrainError};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgeStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Bad argument: not UTF-8, an invalid config, an out-of-range id.
    InvalidArgument = 2,
    /// A file could not be read or written, or is malformed.
    Io = 3,
    /// Checkpoint and dataset vocabularies differ.
    VocabularyMismatch = 4,
    /// An entity or relation name is not in the vocabulary.
    UnknownName = 5,
    /// Training produced a non-finite loss.
    Diverged = 6,
    /// A Rust panic was caught at the boundary.
    Internal = 7,
}

/// Which evaluation split to rank.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgeSplit {
    Test = 0,
    Valid = 1,
}

/// How ties with the target are counted.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgeTiePolicy {
    Mean = 0,
    Pessimistic = 1,
    Optimistic = 2,
}

/// A loaded train/valid/test split with its vocabulary.
pub struct KgeDataset {
    vocab: Vocabulary,
    store: TripleStore,
}

/// A trained model together with its checkpoint.
pub struct KgeModel {
    ckpt: Checkpoint,
    model: Model,
    vocab: Vocabulary,
    names: Vec<CString>,
}

impl KgeModel {
    fn new(ckpt: Checkpoint) -> Result<Self, Failure> {
        let model = Model::new(ckpt.spec.clone()).map_err(|e| Failure(KgeStatus::Io, e.to_string()))?;
        let vocab = ckpt.vocabulary().map_err(checkpoint_failure)?;
        let names = vocab
            .entity_names()
            .iter()
            .map(|n| CString::new(n.as_str()).unwrap_or_default())
            .collect();
        Ok(Self {
            ckpt,
            model,
            vocab,
            names,
        })
    }
}

struct Failure(KgeStatus, String);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Run `f`, turning failures and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KgeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            KgeStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal error: {msg}"));
            KgeStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(KgeStatus::NullArgument, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(KgeStatus::InvalidArgument, msg.into())
}

fn checkpoint_failure(e: CheckpointError) -> Failure {
    match e {
        CheckpointError::Digest => Failure(KgeStatus::VocabularyMismatch, e.to_string()),
        other => Failure(KgeStatus::Io, other.to_string()),
    }
}

/// # Safety
/// `p` is null or a NUL-terminated string valid for the call.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

/// # Safety
/// `p` is null or a live handle from this library.
unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// # Safety
/// `out` is null or valid for one write.
unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

fn tie_policy(p: i32) -> Result<TiePolicy, Failure> {
    match p {
        x if x == KgeTiePolicy::Mean as i32 => Ok(TiePolicy::Mean),
        x if x == KgeTiePolicy::Pessimistic as i32 => Ok(TiePolicy::Pessimistic),
        x if x == KgeTiePolicy::Optimistic as i32 => Ok(TiePolicy::Optimistic),
        _ => Err(invalid(format!("unknown tie policy {p}"))),
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn kge_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kge_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` is null or was returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kge_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load three tab-separated triple files.
///
/// # Safety
/// Paths are NUL-terminated strings; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn kge_dataset_load(
    train: *const c_char,
    valid: *const c_char,
    test: *const c_char,
    out: *mut *mut KgeDataset,
) -> KgeStatus {
    guard(|| {
        let paths = [text(train, "train")?, text(valid, "valid")?, text(test, "test")?];
        if out.is_null() {
            return Err(null("out"));
        }
        let (vocab, store) = load_dataset(Path::new(paths[0]), Path::new(paths[1]), Path::new(paths[2]))
            .map_err(|e| Failure(KgeStatus::Io, e.to_string()))?;
        put(out, Box::into_raw(Box::new(KgeDataset { vocab, store })), "out")
    })
}

/// # Safety
/// `ds` is null or a dataset handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kge_dataset_free(ds: *mut KgeDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` is a live dataset handle; the out pointers are valid for one write.
#[no_mangle]
pub unsafe extern "C" fn kge_dataset_size(
    ds: *const KgeDataset,
    entities: *mut usize,
    relations: *mut usize,
) -> KgeStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        put(entities, ds.vocab.n_entities(), "entities")?;
        put(relations, ds.vocab.n_relations(), "relations")
    })
}

/// Dataset statistics as a JSON object; free with [`kge_string_free`].
///
/// # Safety
/// `ds` is a live dataset handle; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn kge_dataset_stats_json(ds: *const KgeDataset, out: *mut *mut c_char) -> KgeStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let json = serde_json::to_string(&compute_stats(&ds.store)).map_err(|e| invalid(e.to_string()))?;
        put(out, owned_string(json), "out")
    })
}

/// Train from a flat JSON config (same keys as the `kge train` config file).
///
/// # Safety
/// `ds` is a live dataset handle, `config_json` a NUL-terminated string,
/// `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn kge_model_train(
    ds: *const KgeDataset,
    config_json: *const c_char,
    out: *mut *mut KgeModel,
) -> KgeStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let config = TrainConfig::from_json(text(config_json, "config_json")?).map_err(|e| invalid(e.to_string()))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let outcome = train(&config, &ds.vocab, &ds.store, None, &mut |_| {}).map_err(|e| match e {
            TrainError::Diverged { .. } => Failure(KgeStatus::Diverged, e.to_string()),
            other => invalid(other.to_string()),
        })?;
        let model = KgeModel::new(outcome.checkpoint)?;
        put(out, Box::into_raw(Box::new(model)), "out")
    })
}

/// # Safety
/// `path` is a NUL-terminated string; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn kge_model_load(path: *const c_char, out: *mut *mut KgeModel) -> KgeStatus {
    guard(|| {
        let path = text(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let ckpt = load_checkpoint(Path::new(path)).map_err(checkpoint_failure)?;
        put(out, Box::into_raw(Box::new(KgeModel::new(ckpt)?)), "out")
    })
}

/// # Safety
/// `m` is a live model handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn kge_model_save(m: *const KgeModel, path: *const c_char) -> KgeStatus {
    guard(|| {
        let m = handle(m, "model")?;
        save_checkpoint(&m.ckpt, Path::new(text(path, "path")?)).map_err(checkpoint_failure)
    })
}

/// # Safety
/// `m` is null or a model handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kge_model_free(m: *mut KgeModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Hex SHA-256 of the embedding arrays; free with [`kge_string_free`].
///
/// # Safety
/// `m` is a live model handle; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn kge_model_embedding_digest(m: *const KgeModel, out: *mut *mut c_char) -> KgeStatus {
    guard(|| {
        let m = handle(m, "model")?;
        put(out, owned_string(m.ckpt.embedding_digest()), "out")
    })
}

/// Number of entities the model was trained on.
///
/// # Safety
/// `m` is a live model handle; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn kge_model_num_entities(m: *const KgeModel, out: *mut usize) -> KgeStatus {
    guard(|| {
        let m = handle(m, "model")?;
        put(out, m.vocab.n_entities(), "out")
    })
}

/// Entity id for a name.
///
/// # Safety
/// `m` is a live model handle, `name` a NUL-terminated string, `out` valid
/// for one write.
#[no_mangle]
pub unsafe extern "C" fn kge_model_entity_id(m: *const KgeModel, name: *const c_char, out: *mut usize) -> KgeStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let name = text(name, "name")?;
        let id = m
            .vocab
            .entity_id(name)
            .ok_or_else(|| Failure(KgeStatus::UnknownName, format!("unknown entity {name:?}")))?;
        put(out, id, "out")
    })
}

/// Borrowed entity name, valid while the model handle lives.
///
/// # Safety
/// `m` is a live model handle; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn kge_model_entity_name(m: *const KgeModel, id: usize, out: *mut *const c_char) -> KgeStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let name = m
            .names
            .get(id)
            .ok_or_else(|| invalid(format!("entity id {id} out of range")))?;
        put(out, name.as_ptr(), "out")
    })
}

/// Score of one named triple; higher is more plausible.
///
/// # Safety
/// `m` is a live model handle, the names NUL-terminated strings, `out`
/// valid for one write.
#[no_mangle]
pub unsafe extern "C" fn kge_model_score(
    m: *const KgeModel,
    head: *const c_char,
    relation: *const c_char,
    tail: *const c_char,
    out: *mut f64,
) -> KgeStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let unknown = |kind: &str, n: &str| Failure(KgeStatus::UnknownName, format!("unknown {kind} {n:?}"));
        let (h, r, t) = (text(head, "head")?, text(relation, "relation")?, text(tail, "tail")?);
        let triple = Triple::new(
            m.vocab.entity_id(h).ok_or_else(|| unknown("entity", h))?,
            m.vocab.relation_id(r).ok_or_else(|| unknown("relation", r))?,
            m.vocab.entity_id(t).ok_or_else(|| unknown("entity", t))?,
        );
        let s = m.model.score(&m.ckpt.table, triple).map_err(|e| invalid(e.to_string()))?;
        put(out, s, "out")
    })
}

/// Best `k` tails for `(head, relation, ?)`, best first.
///
/// Writes up to `k` ids and scores into caller buffers of length `k` and
/// the count written into `n_out`. With a non-null `filter` dataset, tails
/// already known true there are skipped.
///
/// # Safety
/// `m` is a live model handle; `filter` is null or a live dataset handle;
/// `ids` and `scores` hold at least `k` elements; `n_out` is valid for one
/// write.
#[no_mangle]
pub unsafe extern "C" fn kge_model_predict_tails(
    m: *const KgeModel,
    head: usize,
    relation: usize,
    k: usize,
    filter: *const KgeDataset,
    ids: *mut usize,
    scores: *mut f64,
    n_out: *mut usize,
) -> KgeStatus {
    guard(|| {
        let m = handle(m, "model")?;
        if k > 0 && (ids.is_null() || scores.is_null()) {
            return Err(null("ids or scores"));
        }
        if head >= m.vocab.n_entities() || relation >= m.vocab.n_relations() {
            return Err(invalid(format!("head {head} or relation {relation} out of range")));
        }
        let query = Query::Tail { head, relation };
        let known: &[usize] = match filter.as_ref() {
            Some(ds) => {
                m.ckpt.verify_vocabulary(&ds.vocab).map_err(checkpoint_failure)?;
                ds.store.known_answers(&query)
            }
            None => &[],
        };
        let top = top_answers(&m.model, &m.ckpt.table, &query, known, k).map_err(|e| invalid(e.to_string()))?;
        for (i, &(e, s)) in top.iter().enumerate() {
            ids.add(i).write(e);
            scores.add(i).write(s);
        }
        put(n_out, top.len(), "n_out")
    })
}

/// Filtered and raw metrics as a JSON object; free with
/// [`kge_string_free`]. The dataset must share the model's vocabulary.
/// `split` takes a [`KgeSplit`] value and `policy` a [`KgeTiePolicy`] value.
///
/// # Safety
/// `m` and `ds` are live handles; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn kge_model_evaluate(
    m: *const KgeModel,
    ds: *const KgeDataset,
    split: i32,
    policy: i32,
    out: *mut *mut c_char,
) -> KgeStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let ds = handle(ds, "dataset")?;
        m.ckpt.verify_vocabulary(&ds.vocab).map_err(checkpoint_failure)?;
        let triples = match split {
            x if x == KgeSplit::Test as i32 => ds.store.test(),
            x if x == KgeSplit::Valid as i32 => ds.store.valid(),
            _ => return Err(invalid(format!("unknown split {split}"))),
        };
        let (report, _) = evaluate(&m.model, &m.ckpt.table, &ds.store, triples, tie_policy(policy)?)
            .map_err(|e| invalid(e.to_string()))?;
        put(out, owned_string(report.to_json()), "out")
    })
}
