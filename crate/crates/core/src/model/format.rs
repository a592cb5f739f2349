//! Little-endian binary model files.
//!
//! Layout: magic, version, six architecture constants (windows, window,
//! vocab, embed_dim, chunk, n_chunks), K, the label table (u16 length +
//! UTF-8), K f32 thresholds, then the twelve parameter tensors, each as a
//! u8 rank, u32 dims and row-major f32 data.

use std::io::{Read, Write};

use super::{param, Arch, Model, ModelError};
use crate::nn::{DenseLayer, LayerNormParams, Tensor, LAYERNORM_EPS};

pub const MAGIC: [u8; 4] = *b"BYSR";
pub const FORMAT_VERSION: u32 = 1;

pub fn save_model<W: Write>(m: &Model<f32>, mut sink: W) -> Result<(), ModelError> {
    let mut buf = Vec::with_capacity(m.param_count().bytes_f32 + 4096);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let a = &m.arch;
    for v in [a.windows, a.window, a.vocab, a.embed_dim, a.chunk, a.n_chunks()] {
        buf.extend_from_slice(&u32_of(v)?.to_le_bytes());
    }
    buf.extend_from_slice(&u32_of(m.k())?.to_le_bytes());
    for label in &m.labels {
        let len = u16::try_from(label.len())
            .map_err(|_| ModelError::CorruptShapes(format!("label {label:?} too long")))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(label.as_bytes());
    }
    for t in &m.thresholds {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    for p in m.params() {
        let rank = u8::try_from(p.rank())
            .map_err(|_| ModelError::CorruptShapes("tensor rank above 255".into()))?;
        buf.push(rank);
        for &d in p.shape() {
            buf.extend_from_slice(&u32_of(d)?.to_le_bytes());
        }
        for v in p.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

fn u32_of(v: usize) -> Result<u32, ModelError> {
    u32::try_from(v).map_err(|_| ModelError::CorruptShapes(format!("{v} does not fit in u32")))
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        match end {
            Some(end) => {
                let s = &self.data[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(ModelError::CorruptShapes(format!("truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

fn f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect()
}

pub fn load_model<R: Read>(mut source: R) -> Result<Model<f32>, ModelError> {
    let mut data = Vec::new();
    source.read_to_end(&mut data)?;
    let mut c = Cursor { data: &data, pos: 0 };
    let magic = c.take(4, "magic").map_err(|_| ModelError::BadMagic)?;
    if magic != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(ModelError::VersionUnsupported(version));
    }
    let mut consts = [0usize; 6];
    for v in &mut consts {
        *v = c.u32("architecture")? as usize;
    }
    let [windows, window, vocab, embed_dim, chunk, n_chunks] = consts;
    let k = c.u32("class count")? as usize;
    if k < 2 {
        return Err(ModelError::BadK(k));
    }
    let mut labels = Vec::with_capacity(k);
    for _ in 0..k {
        let len = u16::from_le_bytes(c.take(2, "label length")?.try_into().expect("2 bytes"));
        let raw = c.take(len as usize, "label")?;
        let label = std::str::from_utf8(raw)
            .map_err(|_| ModelError::CorruptShapes("label is not UTF-8".into()))?;
        labels.push(label.to_owned());
    }
    let thresholds = f32s(c.take(4 * k, "thresholds")?);

    let mut tensors = Vec::with_capacity(param::COUNT);
    for name in param::NAMES {
        let rank = c.take(1, name)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32(name)? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| ModelError::CorruptShapes(format!("{name} shape overflows")))?;
        let values = f32s(c.take(len, name)?);
        tensors.push(Tensor::from_vec(&shape, values).expect("length derived from shape"));
    }
    if c.pos != data.len() {
        return Err(ModelError::CorruptShapes(format!(
            "{} trailing bytes",
            data.len() - c.pos
        )));
    }

    // hidden width is implied by h1.W's output dimension
    let hidden = tensors[param::H1_W].shape().get(1).copied().unwrap_or(0);
    let arch = Arch {
        windows,
        window,
        vocab,
        embed_dim,
        chunk,
        hidden,
    };
    arch.validate()?;
    if arch.n_chunks() != n_chunks {
        return Err(ModelError::CorruptShapes(format!(
            "n_chunks {n_chunks} inconsistent with {} tokens / chunk {chunk}",
            arch.tokens()
        )));
    }
    let expected = Model::<f32>::expected_shapes(&arch, k);
    for ((t, want), name) in tensors.iter().zip(&expected).zip(param::NAMES) {
        if t.shape() != want.as_slice() {
            return Err(ModelError::CorruptShapes(format!(
                "{name} has shape {:?}, expected {want:?}",
                t.shape()
            )));
        }
        if !t.all_finite() {
            return Err(ModelError::NonFiniteWeight(name.to_owned()));
        }
    }
    for (label, &value) in labels.iter().zip(&thresholds) {
        if !value.is_finite() {
            return Err(ModelError::NonFiniteWeight(format!("threshold for {label}")));
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(ModelError::BadThreshold {
                label: label.clone(),
                value,
            });
        }
    }

    let mut it = tensors.into_iter();
    let mut next = || it.next().expect("twelve tensors");
    let embed = DenseLayer { w: next(), b: next() };
    let h1 = DenseLayer { w: next(), b: next() };
    let ln1 = LayerNormParams { gamma: next(), beta: next(), eps: LAYERNORM_EPS };
    let h2 = DenseLayer { w: next(), b: next() };
    let ln2 = LayerNormParams { gamma: next(), beta: next(), eps: LAYERNORM_EPS };
    let out = DenseLayer { w: next(), b: next() };
    Ok(Model {
        arch,
        embed,
        h1,
        ln1,
        h2,
        ln2,
        out,
        labels,
        thresholds,
    })
}
