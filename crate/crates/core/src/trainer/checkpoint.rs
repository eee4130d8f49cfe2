//! Binary checkpoint format.
//!
//! Little-endian throughout:
//!
//! ```text
//! "KGEF"  u32 version
//! u8 family  u8 variant  u8 p  u8 shear_form  u32 entity_dim  u32 relation_dim
//! f64 hake_lambda  u8 has_operators  u32 n_operators  u8 letter × n
//! [u8; 32] vocabulary digest
//! u32 n_entities  u32 n_relations  (u32 len, utf-8 bytes) per name
//! u32 entity_width  u32 relation_width  u32 shared_len
//! f32 × entities  f32 × relations  f32 × shared
//! u8 optimizer  (Adagrad: the three accumulator arrays, same shapes)
//! u32 epoch  f64 best_val_mrr  u32 stale
//! [u8; 32] rng seed  u64 rng stream  u128 rng word position
//! u32 CRC32 of everything above
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use thiserror::Error;

use super::config::OptimizerKind;
use super::optim::OptimizerState;
use crate::geometry::{OperatorKind, ShearForm};
use crate::graph::Vocabulary;
use crate::models::{CompoundVariant, EmbeddingTable, Family, ModelSpec};

pub const MAGIC: &[u8; 4] = b"KGEF";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    Version(u32),
    #[error("checkpoint checksum mismatch")]
    Crc,
    #[error("checkpoint vocabulary digest does not match the loaded data")]
    Digest,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

pub type Result<T, E = CheckpointError> = std::result::Result<T, E>;

/// Enough of a ChaCha8 generator to resume its stream exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything needed to evaluate a model or continue training it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub vocab_digest: [u8; 32],
    pub entity_names: Vec<String>,
    pub relation_names: Vec<String>,
    pub table: EmbeddingTable<f32>,
    pub optimizer: OptimizerState,
    /// Completed epochs.
    pub epoch: u32,
    pub best_val_mrr: f64,
    /// Validations since the best MRR.
    pub stale: u32,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_names(self.entity_names.clone(), self.relation_names.clone())
            .map_err(CheckpointError::Malformed)
    }

    pub fn verify_vocabulary(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.digest() == self.vocab_digest {
            Ok(())
        } else {
            Err(CheckpointError::Digest)
        }
    }

    /// Hex SHA-256 over the little-endian embedding arrays.
    pub fn embedding_digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for part in [self.table.entities(), self.table.relations(), self.table.shared()] {
            for x in part {
                h.update(x.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::with_capacity(64 + 4 * (self.table.len() * 2));
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, VERSION);
        let s = &self.spec;
        w.push(s.family.code());
        w.push(s.variant.code());
        w.push(s.p);
        w.push(match s.shear_form {
            ShearForm::Product => 0,
            ShearForm::Displayed => 1,
        });
        put_u32(&mut w, s.entity_dim as u32);
        put_u32(&mut w, s.relation_dim as u32);
        w.extend_from_slice(&s.hake_lambda.to_le_bytes());
        let ops = s.operators.as_deref().unwrap_or(&[]);
        w.push(s.operators.is_some() as u8);
        put_u32(&mut w, ops.len() as u32);
        w.extend(ops.iter().map(|k| k.code()));
        w.extend_from_slice(&self.vocab_digest);
        put_u32(&mut w, self.entity_names.len() as u32);
        put_u32(&mut w, self.relation_names.len() as u32);
        for name in self.entity_names.iter().chain(&self.relation_names) {
            put_u32(&mut w, name.len() as u32);
            w.extend_from_slice(name.as_bytes());
        }
        let t = &self.table;
        put_u32(&mut w, t.entity_width() as u32);
        put_u32(&mut w, t.relation_width() as u32);
        put_u32(&mut w, t.shared().len() as u32);
        put_f32s(&mut w, t.entities());
        put_f32s(&mut w, t.relations());
        put_f32s(&mut w, t.shared());
        w.push(self.optimizer.kind().code());
        if let OptimizerState::Adagrad {
            entities,
            relations,
            shared,
        } = &self.optimizer
        {
            put_f32s(&mut w, entities);
            put_f32s(&mut w, relations);
            put_f32s(&mut w, shared);
        }
        put_u32(&mut w, self.epoch);
        w.extend_from_slice(&self.best_val_mrr.to_le_bytes());
        put_u32(&mut w, self.stale);
        w.extend_from_slice(&self.rng.seed);
        w.extend_from_slice(&self.rng.stream.to_le_bytes());
        w.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        let crc = crc32fast::hash(&w);
        put_u32(&mut w, crc);
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                CheckpointError::BadMagic
            } else {
                CheckpointError::Truncated
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        if bytes.len() < 12 {
            return Err(CheckpointError::Truncated);
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        let mut r = Reader { buf: body, at: 8 };
        let ckpt = r.checkpoint()?;
        if r.at != body.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                body.len() - r.at
            )));
        }
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().expect("4 bytes")) {
            return Err(CheckpointError::Crc);
        }
        if ckpt.vocabulary()?.digest() != ckpt.vocab_digest {
            return Err(CheckpointError::Malformed(
                "stored names do not match the stored digest".into(),
            ));
        }
        Ok(ckpt)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_bytes()).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}

/// Load and check the vocabulary digest against `vocab`.
pub fn load_checkpoint_for(path: &Path, vocab: &Vocabulary) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    ckpt.verify_vocabulary(vocab)?;
    Ok(ckpt)
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(w: &mut Vec<u8>, xs: &[f32]) {
    for x in xs {
        w.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.at..end).ok_or(CheckpointError::Truncated)?;
        self.at = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn len(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn names(&mut self, n: usize) -> Result<Vec<String>> {
        let mut out = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let len = self.len()?;
            let raw = self.take(len)?.to_vec();
            out.push(
                String::from_utf8(raw).map_err(|_| CheckpointError::Malformed("name is not utf-8".into()))?,
            );
        }
        Ok(out)
    }

    fn checkpoint(&mut self) -> Result<Checkpoint> {
        let bad = |m: &str| CheckpointError::Malformed(m.to_owned());
        let family = Family::from_code(self.u8()?).ok_or_else(|| bad("unknown model family"))?;
        let variant = CompoundVariant::from_code(self.u8()?).ok_or_else(|| bad("unknown compound variant"))?;
        let p = self.u8()?;
        let shear_form = match self.u8()? {
            0 => ShearForm::Product,
            1 => ShearForm::Displayed,
            _ => return Err(bad("unknown shear form")),
        };
        let entity_dim = self.len()?;
        let relation_dim = self.len()?;
        let hake_lambda = self.f64()?;
        let has_ops = self.u8()? != 0;
        let n_ops = self.len()?;
        let ops = self
            .take(n_ops)?
            .iter()
            .map(|&c| OperatorKind::from_letter(c as char).ok_or_else(|| bad("unknown operator letter")))
            .collect::<Result<Vec<_>>>()?;
        let spec = ModelSpec {
            family,
            entity_dim,
            relation_dim,
            p,
            variant,
            operators: has_ops.then_some(ops),
            shear_form,
            hake_lambda,
        };
        spec.validate().map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let vocab_digest = self.array::<32>()?;
        let ne = self.len()?;
        let nr = self.len()?;
        let entity_names = self.names(ne)?;
        let relation_names = self.names(nr)?;
        let ew = self.len()?;
        let rw = self.len()?;
        let sl = self.len()?;
        let layout = spec.layout();
        if (ew, rw, sl) != (layout.entity_width, layout.relation_width, layout.shared_len) {
            return Err(bad("array widths do not match the model"));
        }
        let entities = self.f32s(ne * ew)?;
        let relations = self.f32s(nr * rw)?;
        let shared = self.f32s(sl)?;
        let table = EmbeddingTable::from_parts(ne, nr, ew, rw, entities, relations, shared)
            .ok_or_else(|| bad("array sizes do not match"))?;
        let optimizer = match OptimizerKind::from_code(self.u8()?) {
            Some(OptimizerKind::Sgd) => OptimizerState::Sgd,
            Some(OptimizerKind::Adagrad) => OptimizerState::Adagrad {
                entities: self.f32s(ne * ew)?,
                relations: self.f32s(nr * rw)?,
                shared: self.f32s(sl)?,
            },
            None => return Err(bad("unknown optimizer")),
        };
        let epoch = self.u32()?;
        let best_val_mrr = self.f64()?;
        let stale = self.u32()?;
        let rng = RngState {
            seed: self.array()?,
            stream: u64::from_le_bytes(self.array()?),
            word_pos: u128::from_le_bytes(self.array()?),
        };
        Ok(Checkpoint {
            spec,
            vocab_digest,
            entity_names,
            relation_names,
            table,
            optimizer,
            epoch,
            best_val_mrr,
            stale,
            rng,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{initial_checkpoint, TrainConfig};

    fn sample() -> Checkpoint {
        let mut v = Vocabulary::new();
        for n in ["x", "y", "z"] {
            v.intern_entity(n);
        }
        v.intern_relation("likes");
        let mut c = TrainConfig::for_family(Family::CompoundE3D);
        c.model.entity_dim = 6;
        c.model.relation_dim = 6;
        c.model.operators = Some(vec![OperatorKind::Translation, OperatorKind::Reflection]);
        initial_checkpoint(&c, &v).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corruption_kinds_are_distinct() {
        let bytes = sample().to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 9]),
            Err(CheckpointError::Truncated)
        ));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&magic), Err(CheckpointError::BadMagic)));
        let mut ver = bytes.clone();
        ver[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&ver), Err(CheckpointError::Version(9))));
        let mut flip = bytes.clone();
        let n = flip.len();
        flip[n - 20] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&flip), Err(CheckpointError::Crc)));
    }

    #[test]
    fn other_vocabulary_is_rejected() {
        let c = sample();
        let other = Vocabulary::from_names(vec!["x".into(), "z".into(), "y".into()], vec!["likes".into()]).unwrap();
        assert!(matches!(c.verify_vocabulary(&other), Err(CheckpointError::Digest)));
        c.verify_vocabulary(&c.vocabulary().unwrap()).unwrap();
    }

    #[test]
    fn rng_state_resumes_stream() {
        use rand::Rng;
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let _: u64 = a.gen();
        let mut b = RngState::capture(&a).restore();
        assert_eq!(a.gen::<u64>(), b.gen::<u64>());
    }
}
