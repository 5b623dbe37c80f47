//! Binary weight and checkpoint files.
//!
//! Weight file, all integers and floats little-endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SPANWT1\0"
//! 8       4     format version (u32, currently 1)
//! 12      4     scale r
//! 16      4     image channels C
//! 20      4     feature channels C'
//! 24      4     block count B
//! 28      1     fused flag (0/1)
//! 29      1     activation (0 SiLU, 1 LeakyReLU)
//! 30      1     branch mask (bit0 3×3, bit1 1×1, bit2 identity)
//! 31      1     block flags (bit0 residual, bit1 attention, bit2 a trainable,
//!               bit3 b trainable, bit4 replicate padding)
//! 32      4     attention a (f32)
//! 36      4     attention b (f32)
//! 40      …     tensors in canonical order, each:
//!               name length (u16), UTF-8 name, 4 dims (u32 each), f32 payload
//! end-4   4     CRC32 (IEEE) of every preceding byte
//! ```
//!
//! Canonical order: `conv_first`, then for each block `i` and convolution
//! `j ∈ 1..=3` the `blocks.{i}.conv{j}.k3` kernel and, when present, the
//! `blocks.{i}.conv{j}.k1` kernel, then `conv_cat`, `conv_out`. Each kernel
//! is stored as `.weight` (out, in, k, k) followed by `.bias` (out, 1, 1, 1).
//!
//! A checkpoint wraps a complete weight file together with the optimiser state:
//!
//! ```text
//! magic "SPANCKP1", version u32, weight-file length u64, weight file,
//! stage u64, iteration u64, adam step u64, β1 f64, β2 f64, ε f64,
//! tensor count u32, per tensor: length u64, m (f64 × length), v (f64 × length),
//! training config as JSON (length u32 + UTF-8), CRC32 of every preceding byte
//! ```

use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::model::{BranchMask, SpabConfig, SpanConfig, SpanModel};
use crate::nn::{Activation, PadMode};
use crate::train::{AdamState, TrainConfig, TrainState};

pub const WEIGHTS_MAGIC: &[u8; 8] = b"SPANWT1\0";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPANCKP1";
pub const WEIGHTS_VERSION: u32 = 1;
pub const CHECKPOINT_VERSION: u32 = 1;

const FLAG_RESIDUAL: u8 = 1;
const FLAG_ATTENTION: u8 = 1 << 1;
const FLAG_TRAIN_A: u8 = 1 << 2;
const FLAG_TRAIN_B: u8 = 1 << 3;
const FLAG_REPLICATE: u8 = 1 << 4;

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} {v} does not fit in u32")))
}

/// Serialises a model; equal models always give identical bytes.
pub fn encode_weights(model: &SpanModel<f32>) -> Result<Vec<u8>> {
    model.validate()?;
    let cfg = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    put_u32(&mut out, WEIGHTS_VERSION);
    put_u32(&mut out, to_u32(cfg.scale, "scale")?);
    put_u32(&mut out, to_u32(cfg.image_channels, "image channels")?);
    put_u32(&mut out, to_u32(cfg.channels, "channels")?);
    put_u32(&mut out, to_u32(cfg.blocks, "blocks")?);
    out.push(model.fused as u8);
    out.push(cfg.activation.code());
    out.push(cfg.branches.bits());
    let b = &cfg.block;
    let mut flags = 0u8;
    for (on, bit) in [
        (b.use_residual, FLAG_RESIDUAL),
        (b.use_attention, FLAG_ATTENTION),
        (b.train_attention_a, FLAG_TRAIN_A),
        (b.train_attention_b, FLAG_TRAIN_B),
        (cfg.padding == PadMode::Replicate, FLAG_REPLICATE),
    ] {
        if on {
            flags |= bit;
        }
    }
    out.push(flags);
    out.extend_from_slice(&model.params.attention.a.to_le_bytes());
    out.extend_from_slice(&model.params.attention.b.to_le_bytes());
    for t in model.params.named_tensors() {
        let name = t.name.as_bytes();
        put_u16(&mut out, name.len() as u16);
        out.extend_from_slice(name);
        for d in t.dims {
            put_u32(&mut out, to_u32(d, "dimension")?);
        }
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        if self.bytes.len() - self.pos < n {
            return Err(FormatError::Truncated(what));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &'static str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self, what: &'static str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn f32(&mut self, what: &'static str) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
    fn f64(&mut self, what: &'static str) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Magic check, then CRC over everything but the trailing four bytes.
/// A magic that differs in a single byte is treated as corruption (CRC error)
/// rather than a foreign file.
fn verify_envelope<'a>(bytes: &'a [u8], magic: &[u8; 8]) -> Result<&'a [u8], FormatError> {
    if bytes.len() < magic.len() + 4 {
        if bytes.len() >= magic.len() && magic_distance(&bytes[..8], magic) > 1 {
            return Err(FormatError::BadMagic);
        }
        return Err(FormatError::Truncated("header"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if magic_distance(&bytes[..8], magic) > 1 {
        return Err(FormatError::BadMagic);
    }
    if stored != computed {
        return Err(FormatError::Crc { stored, computed });
    }
    Ok(body)
}

fn magic_distance(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::Format(FormatError::Malformed(msg.into()))
}

/// Parses a weight file held in memory.
pub fn decode_weights(bytes: &[u8]) -> Result<SpanModel<f32>> {
    let body = verify_envelope(bytes, WEIGHTS_MAGIC)?;
    let mut cur = Cursor { bytes: body, pos: 8 };
    let version = cur.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let scale = cur.u32("scale")? as usize;
    let image_channels = cur.u32("image channels")? as usize;
    let channels = cur.u32("channels")? as usize;
    let blocks = cur.u32("blocks")? as usize;
    let fused = match cur.u8("fused flag")? {
        0 => false,
        1 => true,
        v => return Err(malformed(format!("fused flag {v}"))),
    };
    let act = cur.u8("activation")?;
    let activation = Activation::from_code(act).ok_or_else(|| malformed(format!("activation code {act}")))?;
    let mask = cur.u8("branch mask")?;
    let branches = BranchMask::from_bits(mask).ok_or_else(|| malformed(format!("branch mask {mask:#b}")))?;
    let flags = cur.u8("block flags")?;
    if flags >> 5 != 0 {
        return Err(malformed(format!("unknown block flags {flags:#b}")));
    }
    let a = cur.f32("attention a")?;
    let b = cur.f32("attention b")?;
    if fused && branches != BranchMask::PLAIN {
        return Err(malformed("fused model with multi-branch mask"));
    }
    let config = SpanConfig {
        scale,
        image_channels,
        channels,
        blocks,
        block: SpabConfig {
            use_residual: flags & FLAG_RESIDUAL != 0,
            use_attention: flags & FLAG_ATTENTION != 0,
            train_attention_a: flags & FLAG_TRAIN_A != 0,
            train_attention_b: flags & FLAG_TRAIN_B != 0,
        },
        activation,
        padding: if flags & FLAG_REPLICATE != 0 { PadMode::Replicate } else { PadMode::Zero },
        branches,
    };
    config.validate()?;
    let mut model = SpanModel::<f32>::zeroed(config, fused)?;
    model.params.attention.a = a;
    model.params.attention.b = b;

    let expected: Vec<(String, [usize; 4])> =
        model.params.named_tensors().into_iter().map(|t| (t.name, t.dims)).collect();
    let mut slots = model.params.slices_mut(false, false);
    for ((name, dims), slot) in expected.iter().zip(slots.iter_mut()) {
        let len = cur.u16("tensor name length")? as usize;
        let got_name = std::str::from_utf8(cur.take(len, "tensor name")?)
            .map_err(|_| malformed("tensor name is not UTF-8"))?;
        if got_name != name {
            return Err(malformed(format!("expected tensor {name}, found {got_name}")));
        }
        let mut got_dims = [0usize; 4];
        for d in &mut got_dims {
            *d = cur.u32("tensor dims")? as usize;
        }
        if &got_dims != dims {
            return Err(malformed(format!("{name}: dims {got_dims:?}, expected {dims:?}")));
        }
        for v in slot.iter_mut() {
            *v = cur.f32("tensor payload")?;
        }
    }
    if !cur.done() {
        return Err(malformed(format!("{} trailing bytes after tensors", body.len() - cur.pos)));
    }
    Ok(model)
}

pub fn save_weights(model: &SpanModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_weights(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<SpanModel<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes)
}

/// Everything needed to continue a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SpanModel<f32>,
    pub state: TrainState,
    pub train: TrainConfig,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let weights = encode_weights(&ck.model)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u64(&mut out, weights.len() as u64);
    out.extend_from_slice(&weights);
    let st = &ck.state;
    put_u64(&mut out, st.stage);
    put_u64(&mut out, st.iteration);
    put_u64(&mut out, st.adam.t);
    put_f64(&mut out, st.adam.beta1);
    put_f64(&mut out, st.adam.beta2);
    put_f64(&mut out, st.adam.eps);
    put_u32(&mut out, to_u32(st.adam.m.len(), "tensor count")?);
    for (m, v) in st.adam.m.iter().zip(&st.adam.v) {
        put_u64(&mut out, m.len() as u64);
        for &x in m {
            put_f64(&mut out, x);
        }
        for &x in v {
            put_f64(&mut out, x);
        }
    }
    let json = serde_json::to_vec(&ck.train).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    put_u32(&mut out, to_u32(json.len(), "config length")?);
    out.extend_from_slice(&json);
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let body = verify_envelope(bytes, CHECKPOINT_MAGIC)?;
    let mut cur = Cursor { bytes: body, pos: 8 };
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let wlen = usize::try_from(cur.u64("weights length")?).map_err(|_| malformed("weights length"))?;
    let model = decode_weights(cur.take(wlen, "embedded weights")?)?;
    let stage = cur.u64("stage")?;
    let iteration = cur.u64("iteration")?;
    let t = cur.u64("adam step")?;
    let beta1 = cur.f64("beta1")?;
    let beta2 = cur.f64("beta2")?;
    let eps = cur.f64("eps")?;
    let count = cur.u32("tensor count")? as usize;
    let mut m = Vec::with_capacity(count.min(4096));
    let mut v = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = usize::try_from(cur.u64("moment length")?).map_err(|_| malformed("moment length"))?;
        if len > body.len() / 16 {
            return Err(FormatError::Truncated("moments").into());
        }
        let mut read = |what| -> Result<Vec<f64>> { (0..len).map(|_| Ok(cur.f64(what)?)).collect() };
        m.push(read("first moment")?);
        v.push(read("second moment")?);
    }
    let jlen = cur.u32("config length")? as usize;
    let train: TrainConfig =
        serde_json::from_slice(cur.take(jlen, "config")?).map_err(|e| malformed(format!("training config: {e}")))?;
    if !cur.done() {
        return Err(malformed("trailing bytes after checkpoint"));
    }
    let adam = AdamState {
        beta1,
        beta2,
        eps,
        t,
        m,
        v,
    };
    Ok(Checkpoint {
        model,
        state: TrainState { stage, iteration, adam },
        train,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(ck)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
