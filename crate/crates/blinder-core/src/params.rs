//! Named parameter and gradient collections, plus their binary wire format.
//!
//! # Parameter stream byte layout
//!
//! Parameter sets serialize to a little-endian binary stream so that other
//! implementations can interoperate:
//!
//! ```text
//! offset  size            field
//! 0       4               magic "BLP1"
//! 4       4               format version (u32, currently 1)
//! 8       8               parameter-set version counter (u64)
//! 16      4               tensor count (u32)
//! 20      ...             tensor table, per tensor:
//!                           name length (u16), name (UTF-8),
//!                           rank (u8), then rank x dimension (u32)
//! ...     ...             raw f32 data for each tensor, in table order
//! ```
//!
//! Round-trips are bit-exact. Gradient updates share the same layout (their
//! version field carries the round number).

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float; // f32/f64 math methods under no_std

use crate::tensor::{Element, Tensor, TensorError};

const MAGIC: &[u8; 4] = b"BLP1";
const FORMAT_VERSION: u32 = 1;

/// Errors from parameter bookkeeping and (de)serialization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamError {
    /// A tensor name was registered twice.
    DuplicateName(String),
    /// Gradient entries do not line up with the parameter set.
    Misaligned(String),
    /// The byte stream is truncated or structurally invalid.
    CorruptStream,
    /// The stream was produced by an incompatible format version.
    VersionMismatch { found: u32 },
    /// A non-finite value was found where finite values are required.
    NonFinite,
}

impl fmt::Display for ParamError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamError::DuplicateName(n) => write!(f, "duplicate parameter name: {n}"),
            ParamError::Misaligned(n) => write!(f, "misaligned update at parameter: {n}"),
            ParamError::CorruptStream => write!(f, "corrupt parameter stream"),
            ParamError::VersionMismatch { found } => {
                write!(f, "unsupported parameter format version {found}")
            }
            ParamError::NonFinite => write!(f, "non-finite value in update"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ParamError {}

impl From<TensorError> for ParamError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite => ParamError::NonFinite,
            _ => ParamError::CorruptStream,
        }
    }
}

/// A named tensor inside a [`ParameterSet`] or [`GradientUpdate`].
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T = f32> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// An ordered list of uniquely named weight/bias tensors. Shapes are fixed
/// once registered; the version counter increments on every optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T = f32> {
    entries: Vec<NamedTensor<T>>,
    version: u64,
}

impl<T: Element> Default for ParameterSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParameterSet<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            version: 0,
        }
    }

    /// Registers a tensor under a unique name, returning its index.
    pub fn push(&mut self, name: &str, tensor: Tensor<T>) -> Result<usize, ParamError> {
        if self.entries.iter().any(|e| e.name == name) {
            return Err(ParamError::DuplicateName(name.into()));
        }
        self.entries.push(NamedTensor {
            name: name.into(),
            tensor,
        });
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn bump_version(&mut self) {
        self.version += 1;
    }

    pub fn entries(&self) -> &[NamedTensor<T>] {
        &self.entries
    }

    /// Mutable access to the entries; names and shapes must stay untouched.
    pub fn entries_mut(&mut self) -> &mut [NamedTensor<T>] {
        &mut self.entries
    }

    pub fn tensor(&self, index: usize) -> &Tensor<T> {
        &self.entries[index].tensor
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.entries[index].tensor
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &e.tensor)
    }

    /// Checks that `update` matches this set entry-for-entry in name and shape.
    pub fn check_aligned(&self, update: &GradientUpdate<T>) -> Result<(), ParamError> {
        if self.entries.len() != update.grads.len() {
            return Err(ParamError::Misaligned("entry count".into()));
        }
        for (p, g) in self.entries.iter().zip(update.grads.iter()) {
            if p.name != g.name || p.tensor.shape() != g.tensor.shape() {
                return Err(ParamError::Misaligned(g.name.clone()));
            }
        }
        Ok(())
    }

    /// Replaces values from another set with identical structure. The version
    /// counter is taken from `other`.
    pub fn assign(&mut self, other: &ParameterSet<T>) -> Result<(), ParamError> {
        if self.entries.len() != other.entries.len() {
            return Err(ParamError::Misaligned("entry count".into()));
        }
        for (dst, src) in self.entries.iter_mut().zip(other.entries.iter()) {
            if dst.name != src.name || dst.tensor.shape() != src.tensor.shape() {
                return Err(ParamError::Misaligned(src.name.clone()));
            }
            dst.tensor = src.tensor.clone();
        }
        self.version = other.version;
        Ok(())
    }

    /// A zero-valued gradient aligned with this set.
    pub fn zero_update(&self) -> GradientUpdate<T> {
        GradientUpdate {
            grads: self
                .entries
                .iter()
                .map(|e| NamedTensor {
                    name: e.name.clone(),
                    tensor: Tensor::zeros(e.tensor.shape()),
                })
                .collect(),
            client: None,
            round: 0,
        }
    }

    /// Elementwise difference `self - other` expressed as a gradient update.
    pub fn delta(&self, other: &ParameterSet<T>) -> Result<GradientUpdate<T>, ParamError> {
        if self.entries.len() != other.entries.len() {
            return Err(ParamError::Misaligned("entry count".into()));
        }
        let mut out = self.zero_update();
        for ((d, a), b) in out
            .grads
            .iter_mut()
            .zip(self.entries.iter())
            .zip(other.entries.iter())
        {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(ParamError::Misaligned(b.name.clone()));
            }
            for ((o, &x), &y) in d
                .tensor
                .data_mut()
                .iter_mut()
                .zip(a.tensor.data())
                .zip(b.tensor.data())
            {
                *o = x - y;
            }
        }
        Ok(out)
    }

    pub fn cast<U: Element>(&self) -> ParameterSet<U> {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|e| NamedTensor {
                    name: e.name.clone(),
                    tensor: e.tensor.cast(),
                })
                .collect(),
            version: self.version,
        }
    }
}

impl ParameterSet<f32> {
    /// Serializes to the documented little-endian byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        encode_stream(&self.entries, self.version)
    }

    /// Parses a byte stream produced by [`ParameterSet::to_bytes`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ParamError> {
        let (entries, version) = decode_stream(bytes)?;
        let mut set = ParameterSet::new();
        for e in entries {
            set.push(&e.name, e.tensor)?;
        }
        set.version = version;
        Ok(set)
    }

    /// FNV-1a hash of the serialized bytes; used for determinism checks.
    pub fn checksum(&self) -> u64 {
        fnv1a(&self.to_bytes())
    }
}

/// Per-parameter gradients aligned by name with a target [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientUpdate<T = f32> {
    pub grads: Vec<NamedTensor<T>>,
    /// Client that produced the update, if it crossed the uplink.
    pub client: Option<u32>,
    /// Communication round the update belongs to.
    pub round: u64,
}

impl<T: Element> GradientUpdate<T> {
    /// In-place `self += scale * other`; entries must align.
    pub fn add_scaled(&mut self, other: &GradientUpdate<T>, scale: T) -> Result<(), ParamError> {
        if self.grads.len() != other.grads.len() {
            return Err(ParamError::Misaligned("entry count".into()));
        }
        for (a, b) in self.grads.iter_mut().zip(other.grads.iter()) {
            if a.name != b.name {
                return Err(ParamError::Misaligned(b.name.clone()));
            }
            a.tensor
                .add_scaled(&b.tensor, scale)
                .map_err(|_| ParamError::Misaligned(b.name.clone()))?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for g in &mut self.grads {
            g.tensor.scale(factor);
        }
    }

    /// Euclidean norm over all entries.
    pub fn norm_l2(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| {
                let n = g.tensor.norm_l2();
                n * n
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn ensure_finite(&self) -> Result<(), ParamError> {
        for g in &self.grads {
            g.tensor.ensure_finite()?;
        }
        Ok(())
    }

    pub fn cast<U: Element>(&self) -> GradientUpdate<U> {
        GradientUpdate {
            grads: self
                .grads
                .iter()
                .map(|e| NamedTensor {
                    name: e.name.clone(),
                    tensor: e.tensor.cast(),
                })
                .collect(),
            client: self.client,
            round: self.round,
        }
    }
}

impl GradientUpdate<f32> {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode_stream(&self.grads, self.round)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ParamError> {
        let (grads, round) = decode_stream(bytes)?;
        Ok(Self {
            grads,
            client: None,
            round,
        })
    }
}

fn encode_stream(entries: &[NamedTensor<f32>], version: u64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(e.tensor.shape().len() as u8);
        for &d in e.tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for e in entries {
        for v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ParamError> {
        let end = self.pos.checked_add(n).ok_or(ParamError::CorruptStream)?;
        if end > self.bytes.len() {
            return Err(ParamError::CorruptStream);
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16, ParamError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ParamError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ParamError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_stream(bytes: &[u8]) -> Result<(Vec<NamedTensor<f32>>, u64), ParamError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(ParamError::CorruptStream);
    }
    let format = cur.u32()?;
    if format != FORMAT_VERSION {
        return Err(ParamError::VersionMismatch { found: format });
    }
    let version = cur.u64()?;
    let count = cur.u32()? as usize;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = core::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| ParamError::CorruptStream)?
            .into();
        let rank = cur.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        shapes.push((name, shape));
    }
    let mut entries = Vec::with_capacity(count);
    for (name, shape) in shapes {
        let len: usize = shape.iter().product();
        let raw = cur.take(len.checked_mul(4).ok_or(ParamError::CorruptStream)?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(NamedTensor {
            name,
            tensor: Tensor::from_vec(shape, data)?,
        });
    }
    if cur.pos != bytes.len() {
        return Err(ParamError::CorruptStream);
    }
    Ok((entries, version))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    hash
}
