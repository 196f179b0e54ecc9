//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "CQAMTLCK"
//! version    u32      1
//! dtype      u8       4 = f32, 8 = f64
//! n_meta     u32
//!   key      u32 length + UTF-8 bytes
//!   value    u32 length + UTF-8 bytes
//! n_tensors  u32
//!   name     u32 length + UTF-8 bytes
//!   ndim     u32
//!   dims     ndim x u64
//!   values   prod(dims) x dtype, row-major
//! crc32      u32      over every preceding byte
//! ```
//!
//! Metadata keys: `kind` (`mtl`, `pair-a`, `pair-b`, `pair-c`),
//! `vocab_size`, `word_dim`, `feat_dim`, `feature_maps`, `filter_width`,
//! `max_len` and `vocab` (the non-reserved tokens in id order, one per line).

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Example, ModelDims, MtlModel, Network, PairModel, Pass, TaskScores};
use crate::nn::{DType, Parameter, Real, Tensor};
use crate::text::Vocabulary;
use crate::{Task, TaskSet};

pub const MAGIC: &[u8; 8] = b"CQAMTLCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Mtl,
    Pair(Task),
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mtl => "mtl",
            ModelKind::Pair(Task::A) => "pair-a",
            ModelKind::Pair(Task::B) => "pair-b",
            ModelKind::Pair(Task::C) => "pair-c",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "mtl" => ModelKind::Mtl,
            "pair-a" => ModelKind::Pair(Task::A),
            "pair-b" => ModelKind::Pair(Task::B),
            "pair-c" => ModelKind::Pair(Task::C),
            other => return Err(Error::Checkpoint(format!("unknown model kind `{other}`"))),
        })
    }
}

/// A network that can be written to and rebuilt from a checkpoint.
pub trait Persist<T: Real>: Network<T> + Sized {
    fn kind(&self) -> ModelKind;
    fn model_dims(&self) -> &ModelDims;
    /// A freshly initialized network of the given shape.
    fn build(kind: ModelKind, dims: ModelDims) -> Result<Self>;
}

impl<T: Real> Persist<T> for MtlModel<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Mtl
    }

    fn model_dims(&self) -> &ModelDims {
        self.dims()
    }

    fn build(kind: ModelKind, dims: ModelDims) -> Result<Self> {
        match kind {
            ModelKind::Mtl => MtlModel::new(dims, 0),
            other => Err(Error::Checkpoint(format!("expected an mtl checkpoint, found {}", other.as_str()))),
        }
    }
}

impl<T: Real> Persist<T> for PairModel<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Pair(self.task())
    }

    fn model_dims(&self) -> &ModelDims {
        self.dims()
    }

    fn build(kind: ModelKind, dims: ModelDims) -> Result<Self> {
        match kind {
            ModelKind::Pair(task) => PairModel::new(task, dims, 0),
            ModelKind::Mtl => Err(Error::Checkpoint("expected a pair checkpoint, found mtl".into())),
        }
    }
}

/// Either architecture, as read back from disk.
#[derive(Clone, Debug)]
pub enum AnyModel<T> {
    Mtl(MtlModel<T>),
    Pair(PairModel<T>),
}

impl<T: Real> Network<T> for AnyModel<T> {
    fn tasks(&self) -> TaskSet {
        match self {
            AnyModel::Mtl(m) => m.tasks(),
            AnyModel::Pair(m) => m.tasks(),
        }
    }

    fn predict(&self, example: &Example) -> Result<TaskScores<T>> {
        match self {
            AnyModel::Mtl(m) => m.predict(example),
            AnyModel::Pair(m) => m.predict(example),
        }
    }

    fn accumulate_gradients(&mut self, example: &Example, active: TaskSet, pass: &mut Pass<'_>, scale: T) -> Result<[T; 3]> {
        match self {
            AnyModel::Mtl(m) => m.accumulate_gradients(example, active, pass, scale),
            AnyModel::Pair(m) => m.accumulate_gradients(example, active, pass, scale),
        }
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        match self {
            AnyModel::Mtl(m) => m.parameters(),
            AnyModel::Pair(m) => m.parameters(),
        }
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        match self {
            AnyModel::Mtl(m) => m.parameters_mut(),
            AnyModel::Pair(m) => m.parameters_mut(),
        }
    }
}

impl<T: Real> Persist<T> for AnyModel<T> {
    fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Mtl(m) => m.kind(),
            AnyModel::Pair(m) => m.kind(),
        }
    }

    fn model_dims(&self) -> &ModelDims {
        match self {
            AnyModel::Mtl(m) => m.dims(),
            AnyModel::Pair(m) => m.dims(),
        }
    }

    fn build(kind: ModelKind, dims: ModelDims) -> Result<Self> {
        Ok(match kind {
            ModelKind::Mtl => AnyModel::Mtl(MtlModel::new(dims, 0)?),
            ModelKind::Pair(task) => AnyModel::Pair(PairModel::new(task, dims, 0)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    /// Widened to f64; narrowing back to f32 is exact.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub dtype: DType,
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<StoredTensor>,
}

impl Checkpoint {
    pub fn from_model<T: Real, N: Persist<T>>(model: &N, vocab: &Vocabulary, max_len: usize) -> Self {
        let d = model.model_dims();
        let mut metadata = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            metadata.insert(k.to_string(), v);
        };
        put("kind", model.kind().as_str().to_string());
        put("vocab_size", d.vocab_size.to_string());
        put("word_dim", d.word_dim.to_string());
        put("feat_dim", d.feat_dim.to_string());
        put("feature_maps", d.feature_maps.to_string());
        put("filter_width", d.filter_width.to_string());
        put("max_len", max_len.to_string());
        put("vocab", vocab.words().collect::<Vec<_>>().join("\n"));
        let tensors = model
            .parameters()
            .into_iter()
            .map(|p| StoredTensor {
                name: p.name().to_string(),
                shape: p.value.shape().to_vec(),
                values: p.value.data().iter().map(|v| v.as_f64()).collect(),
            })
            .collect();
        Checkpoint {
            dtype: T::DTYPE,
            metadata,
            tensors,
        }
    }

    fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata `{key}`")))
    }

    fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta(key)?
            .parse()
            .map_err(|e| Error::Checkpoint(format!("metadata `{key}`: {e}")))
    }

    pub fn kind(&self) -> Result<ModelKind> {
        ModelKind::parse(self.meta("kind")?)
    }

    pub fn dims(&self) -> Result<ModelDims> {
        Ok(ModelDims {
            vocab_size: self.meta_usize("vocab_size")?,
            word_dim: self.meta_usize("word_dim")?,
            feat_dim: self.meta_usize("feat_dim")?,
            feature_maps: self.meta_usize("feature_maps")?,
            filter_width: self.meta_usize("filter_width")?,
        })
    }

    pub fn max_len(&self) -> Result<usize> {
        self.meta_usize("max_len")
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        let raw = self.meta("vocab")?;
        let vocab = Vocabulary::from_tokens(raw.split('\n').filter(|t| !t.is_empty()));
        let expected = self.meta_usize("vocab_size")?;
        if vocab.len() != expected {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} entries, metadata says {expected}",
                vocab.len()
            )));
        }
        Ok(vocab)
    }

    /// Copies the stored values into `model`, which must have the same
    /// dimensions and parameter names.
    pub fn restore_into<T: Real, N: Persist<T>>(&self, model: &mut N) -> Result<()> {
        let dims = self.dims()?;
        if &dims != model.model_dims() {
            return Err(Error::Shape(format!(
                "dimension mismatch: checkpoint has {dims:?}, model has {:?}",
                model.model_dims()
            )));
        }
        let kind = self.kind()?;
        if kind != model.kind() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds a {} model, target is {}",
                kind.as_str(),
                model.kind().as_str()
            )));
        }
        let mut params = model.parameters_mut();
        if params.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                params.len()
            )));
        }
        for (p, t) in params.iter_mut().zip(&self.tensors) {
            if p.name() != t.name {
                return Err(Error::Checkpoint(format!(
                    "expected tensor `{}`, found `{}`",
                    p.name(),
                    t.name
                )));
            }
            let values = t.values.iter().map(|&v| T::lit(v)).collect();
            let tensor = Tensor::from_vec(&t.shape, values)?;
            if tensor.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "dimension mismatch for `{}`: {:?} vs {:?}",
                    t.name,
                    tensor.shape(),
                    p.value.shape()
                )));
            }
            p.assign(tensor)?;
        }
        Ok(())
    }

    /// Builds the stored network.
    pub fn restore<T: Real, N: Persist<T>>(&self) -> Result<N> {
        let mut model = N::build(self.kind()?, self.dims()?)?;
        self.restore_into(&mut model)?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dtype.byte_width() as u8);
        put_u32(&mut out, self.metadata.len());
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        put_u32(&mut out, self.tensors.len());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            put_u32(&mut out, t.shape.len());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &t.values {
                match self.dtype {
                    DType::F32 => (v as f32).write_le(&mut out),
                    DType::F64 => v.write_le(&mut out),
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 1 + 4 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("four bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Checkpoint("checksum mismatch (corrupt file)".into()));
        }
        let mut r = Reader { bytes: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let dtype = match r.take(1)?[0] {
            4 => DType::F32,
            8 => DType::F64,
            other => return Err(Error::Checkpoint(format!("unknown dtype code {other}"))),
        };
        let mut metadata = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            metadata.insert(k, v);
        }
        let n_tensors = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..n_tensors {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                let d = u64::from_le_bytes(r.take(8)?.try_into().expect("eight bytes"));
                shape.push(usize::try_from(d).map_err(|_| Error::Checkpoint("dimension overflow".into()))?);
            }
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` is too large")))?;
            let width = dtype.byte_width();
            let raw = r.take(count.checked_mul(width).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            let values = raw
                .chunks_exact(width)
                .map(|c| match dtype {
                    DType::F32 => f64::from(f32::read_le(c)),
                    DType::F64 => f64::read_le(c),
                })
                .collect();
            tensors.push(StoredTensor { name, shape, values });
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Checkpoint {
            dtype,
            metadata,
            tensors,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(m: usize) -> ModelDims {
        ModelDims {
            vocab_size: 12,
            word_dim: 4,
            feat_dim: 3,
            feature_maps: m,
            filter_width: 3,
        }
    }

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens((0..10).map(|i| format!("w{i}")))
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model: MtlModel<f32> = MtlModel::new(dims(5), 7).unwrap();
        let bytes = Checkpoint::from_model(&model, &vocab(), 40).to_bytes();
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(ck.max_len().unwrap(), 40);
        assert_eq!(ck.vocabulary().unwrap(), vocab());
        let restored: MtlModel<f32> = ck.restore().unwrap();
        for (a, b) in model.parameters().iter().zip(restored.parameters()) {
            let ab: Vec<u32> = a.value.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb, "{}", a.name());
        }
        assert_eq!(Checkpoint::from_model(&restored, &vocab(), 40).to_bytes(), bytes);
    }

    #[test]
    fn pair_models_round_trip_f64() {
        for task in Task::ALL {
            let model: PairModel<f64> = PairModel::new(task, dims(4), 1).unwrap();
            let bytes = Checkpoint::from_model(&model, &vocab(), 100).to_bytes();
            let any: AnyModel<f64> = Checkpoint::from_bytes(&bytes).unwrap().restore().unwrap();
            assert_eq!(any.kind(), ModelKind::Pair(task));
            assert_eq!(Checkpoint::from_model(&any, &vocab(), 100).to_bytes(), bytes);
        }
    }

    #[test]
    fn mismatched_dims_are_rejected() {
        let model: MtlModel<f32> = MtlModel::new(dims(5), 7).unwrap();
        let ck = Checkpoint::from_model(&model, &vocab(), 100);
        let mut other: MtlModel<f32> = MtlModel::new(dims(6), 7).unwrap();
        assert!(matches!(ck.restore_into(&mut other), Err(Error::Shape(_))));
        let mut pair: PairModel<f32> = PairModel::new(Task::A, dims(5), 0).unwrap();
        assert!(ck.restore_into(&mut pair).is_err());
    }

    #[test]
    fn corruption_is_detected() {
        let model: MtlModel<f32> = MtlModel::new(dims(3), 2).unwrap();
        let bytes = Checkpoint::from_model(&model, &vocab(), 100).to_bytes();
        for pos in [0, 9, bytes.len() / 2, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x40;
            assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))), "{pos}");
        }
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 7]).is_err());
        assert!(Checkpoint::from_bytes(b"short").is_err());
    }
}
