//! `.rnrf` container: 8-bit affine quantization of kept values, packed keep
//! masks, LZMA.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "RNRF"  u16 version = 1  u16 layer_count
//! LZMA stream (.lzma header: props, u32 dict size, u64 size) of, per layer:
//!   u16 name_len, name (UTF-8)
//!   u8  kind        0 dense, 1 voxel3d; bit 7 set = f32 payload
//!   u8  rank, u32 dims[rank]
//!   u8  channels
//!   f32 scale, f32 offset
//!   ceil(sites / 8) bytes of keep mask, LSB first, flat site order
//!   u32 kept_count
//!   kept_count * channels codes (u8, or f32 with the payload bit)
//! ```
//!
//! Codes are written for kept sites only, in site order, channels innermost.

use std::io::Read;

use lzma_rust2::{LzmaOptions, LzmaReader, LzmaWriter};

use crate::error::{DecodeError, Error, Result};
use crate::grid::{Layer, LayerKind, ParameterStore};

pub const MAGIC: [u8; 4] = *b"RNRF";
pub const VERSION: u16 = 1;
pub const LZMA_PRESET: u32 = 6;
/// Largest decompressed record table accepted by [`decode`].
pub const MAX_PAYLOAD: u64 = 1 << 30;

const KIND_DENSE: u8 = 0;
const KIND_VOXEL: u8 = 1;
const FULL_PRECISION: u8 = 0x80;

/// Per-layer affine map between values and 8-bit codes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantSpec {
    pub scale: f32,
    pub offset: f32,
}

impl QuantSpec {
    pub const BITS: u32 = 8;

    pub fn dequantize(self, code: u8) -> f64 {
        self.offset as f64 + code as f64 * self.scale as f64
    }

    pub fn quantize(self, v: f64) -> u8 {
        ((v - self.offset as f64) / self.scale as f64).round().clamp(0.0, 255.0) as u8
    }
}

fn kept_values(layer: &Layer) -> impl Iterator<Item = f64> + '_ {
    let c = layer.channels();
    (0..layer.sites())
        .filter(|&s| layer.is_kept(s))
        .flat_map(move |s| layer.values()[s * c..(s + 1) * c].iter().copied())
}

/// Quantizes the kept values of `layer` to 8 bits over their `[min, max]`.
pub fn quantize_layer(layer: &Layer) -> Result<(QuantSpec, Vec<u8>)> {
    if let Some(index) = layer.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            layer: layer.name().to_string(),
            index,
        });
    }
    let (lo, hi) = kept_values(layer).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let spec = if lo > hi {
        QuantSpec {
            scale: 1.0,
            offset: 0.0,
        }
    } else {
        let offset = lo as f32;
        let scale = ((hi - offset as f64) / 255.0) as f32;
        // Constancy is decided in f64: rounding the offset to f32 leaves a
        // residual that would otherwise pose as a range.
        if hi > lo && scale > 0.0 && scale.is_finite() {
            QuantSpec { scale, offset }
        } else {
            QuantSpec { scale: 1.0, offset }
        }
    };
    let codes = kept_values(layer).map(|v| spec.quantize(v)).collect();
    Ok((spec, codes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodeOptions {
    /// Store kept values as 8-bit codes; otherwise as raw f32.
    pub quantize: bool,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self { quantize: true }
    }
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::ShapeMismatch(format!("{what} {v} does not fit in u32")))
}

fn encode_layer(layer: &Layer, opts: EncodeOptions, out: &mut Vec<u8>) -> Result<()> {
    let name = layer.name().as_bytes();
    let name_len = u16::try_from(name.len())
        .map_err(|_| Error::ShapeMismatch(format!("layer name `{}` is too long", layer.name())))?;
    put_u16(out, name_len);
    out.extend_from_slice(name);

    let (kind, dims): (u8, Vec<usize>) = match layer.kind() {
        LayerKind::Dense { shape } => (KIND_DENSE, shape.clone()),
        LayerKind::VoxelGrid3D { dims, .. } => (KIND_VOXEL, dims.to_vec()),
    };
    out.push(if opts.quantize { kind } else { kind | FULL_PRECISION });
    out.push(u8::try_from(dims.len()).map_err(|_| Error::ShapeMismatch("rank exceeds 255".into()))?);
    for d in dims {
        put_u32(out, to_u32(d, "dimension")?);
    }
    out.push(u8::try_from(layer.channels()).map_err(|_| Error::ShapeMismatch("more than 255 channels".into()))?);

    let (spec, codes) = if opts.quantize {
        let (spec, codes) = quantize_layer(layer)?;
        (spec, Some(codes))
    } else {
        layer.values().iter().position(|v| !v.is_finite()).map_or(Ok(()), |index| {
            Err(Error::NonFinite {
                layer: layer.name().to_string(),
                index,
            })
        })?;
        (
            QuantSpec {
                scale: 1.0,
                offset: 0.0,
            },
            None,
        )
    };
    out.extend_from_slice(&spec.scale.to_le_bytes());
    out.extend_from_slice(&spec.offset.to_le_bytes());

    let mut bitmap = vec![0u8; layer.sites().div_ceil(8)];
    for (s, &k) in layer.keep_mask().iter().enumerate() {
        if k {
            bitmap[s / 8] |= 1 << (s % 8);
        }
    }
    out.extend_from_slice(&bitmap);
    put_u32(out, to_u32(layer.kept_count(), "kept count")?);
    match codes {
        Some(codes) => out.extend_from_slice(&codes),
        None => {
            for v in kept_values(layer) {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    Ok(())
}

/// Serializes `store`. Output is deterministic for a given store and options.
pub fn encode(store: &ParameterStore, opts: EncodeOptions) -> Result<Vec<u8>> {
    let layer_count = u16::try_from(store.layers().len())
        .map_err(|_| Error::ShapeMismatch("more than 65535 layers".into()))?;
    let mut table = Vec::new();
    for layer in store.layers() {
        encode_layer(layer, opts, &mut table)?;
    }

    let mut out = Vec::with_capacity(table.len() / 4 + 32);
    out.extend_from_slice(&MAGIC);
    put_u16(&mut out, VERSION);
    put_u16(&mut out, layer_count);
    let options = LzmaOptions::with_preset(LZMA_PRESET);
    let mut writer = LzmaWriter::new_use_header(out, &options, Some(table.len() as u64))?;
    std::io::Write::write_all(&mut writer, &table)?;
    Ok(writer.finish()?)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(DecodeError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, DecodeError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &'static str) -> Result<f32, DecodeError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

fn malformed(msg: impl Into<String>) -> DecodeError {
    DecodeError::Malformed(msg.into())
}

fn decode_layer(cur: &mut Cursor<'_>) -> Result<Layer, DecodeError> {
    let name_len = cur.u16("layer name length")? as usize;
    let name = std::str::from_utf8(cur.take(name_len, "layer name")?)
        .map_err(|_| malformed("layer name is not UTF-8"))?
        .to_string();
    let kind_byte = cur.u8("layer kind")?;
    let full_precision = kind_byte & FULL_PRECISION != 0;
    let rank = cur.u8("rank")? as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(cur.u32("dims")? as usize);
    }
    let channels = cur.u8("channels")? as usize;
    let kind = match kind_byte & !FULL_PRECISION {
        KIND_DENSE if channels == 1 => LayerKind::Dense { shape: dims },
        KIND_VOXEL if rank == 3 && channels >= 1 && dims.iter().all(|&d| d > 0) => LayerKind::VoxelGrid3D {
            dims: [dims[0], dims[1], dims[2]],
            channels,
        },
        k => {
            return Err(malformed(format!(
                "layer `{name}`: invalid kind {k} with rank {rank}, {channels} channels"
            )))
        }
    };
    let sites = dims_product(&kind).ok_or_else(|| malformed(format!("layer `{name}`: size overflow")))?;
    // Every site costs at least one mask bit, so this rejects absurd dims
    // before anything is allocated.
    if sites.div_ceil(8) > cur.remaining() {
        return Err(DecodeError::Truncated("keep mask"));
    }
    let scale = cur.f32("scale")?;
    let offset = cur.f32("offset")?;
    if !scale.is_finite() || !offset.is_finite() {
        return Err(malformed(format!("layer `{name}`: non-finite quantization parameters")));
    }
    let bitmap = cur.take(sites.div_ceil(8), "keep mask")?;
    let mask: Vec<bool> = (0..sites).map(|s| bitmap[s / 8] >> (s % 8) & 1 == 1).collect();
    if sites % 8 != 0 && bitmap[sites / 8] >> (sites % 8) != 0 {
        return Err(malformed(format!("layer `{name}`: padding bits set in keep mask")));
    }
    let kept = cur.u32("kept count")? as usize;
    if kept != mask.iter().filter(|&&k| k).count() {
        return Err(malformed(format!("layer `{name}`: kept count disagrees with mask")));
    }
    let width = if full_precision { 4 } else { 1 };
    let payload = cur.take(kept * channels * width, "values")?;
    let mut values = vec![0.0; sites * channels];
    let spec = QuantSpec { scale, offset };
    let mut codes = payload.chunks_exact(width);
    for s in (0..sites).filter(|&s| mask[s]) {
        for v in &mut values[s * channels..(s + 1) * channels] {
            let code = codes.next().expect("payload length checked");
            *v = if full_precision {
                f32::from_le_bytes(code.try_into().unwrap()) as f64
            } else {
                spec.dequantize(code[0])
            };
        }
    }
    Layer::new(name, kind, values)
        .and_then(|l| l.with_mask(mask))
        .map_err(|e| malformed(e.to_string()))
}

fn dims_product(kind: &LayerKind) -> Option<usize> {
    match kind {
        LayerKind::Dense { shape } => shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)),
        LayerKind::VoxelGrid3D { dims, channels } => dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|s| s.checked_mul(*channels).is_some()),
    }
}

/// Reads a container written by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<ParameterStore, DecodeError> {
    if bytes.len() < 4 {
        return Err(DecodeError::Truncated("magic"));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(DecodeError::BadMagic(magic));
    }
    let mut header = Cursor { buf: bytes, pos: 4 };
    let version = header.u16("version")?;
    if version != VERSION {
        return Err(DecodeError::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    let layer_count = header.u16("layer count")? as usize;
    let stream = &bytes[header.pos..];
    if stream.len() < 13 {
        return Err(DecodeError::Truncated("lzma header"));
    }
    let declared = u64::from_le_bytes(stream[5..13].try_into().unwrap());
    if declared > MAX_PAYLOAD {
        return Err(malformed(format!("declared payload of {declared} bytes exceeds limit")));
    }
    let mut rest = stream;
    let mut table = Vec::with_capacity(declared as usize);
    let mut reader = LzmaReader::new_mem_limit(&mut rest, u32::MAX, None).map_err(lzma_err)?;
    (&mut reader).take(MAX_PAYLOAD + 1).read_to_end(&mut table).map_err(lzma_err)?;
    if table.len() as u64 != declared {
        return Err(DecodeError::Truncated("lzma stream"));
    }
    // The reader buffers ahead; whatever it holds unused plus what it never
    // pulled is trailing garbage.
    let (_, unused) = reader.into_parts();
    let trailing = unused.len() + rest.len();
    if trailing != 0 {
        return Err(malformed(format!("{trailing} trailing bytes after lzma stream")));
    }

    let mut cur = Cursor { buf: &table, pos: 0 };
    let mut layers = Vec::with_capacity(layer_count.min(1024));
    for _ in 0..layer_count {
        layers.push(decode_layer(&mut cur)?);
    }
    if cur.remaining() != 0 {
        return Err(malformed(format!("{} trailing bytes after last layer", cur.remaining())));
    }
    ParameterStore::new(layers).map_err(|e| malformed(e.to_string()))
}

fn lzma_err(e: std::io::Error) -> DecodeError {
    match e.kind() {
        std::io::ErrorKind::UnexpectedEof => DecodeError::Truncated("lzma stream"),
        _ => DecodeError::Lzma(e.to_string()),
    }
}

/// Sizes for a serialized store.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressionReport {
    /// Size of a dense float32 dump of every scalar.
    pub raw_bytes: u64,
    pub encoded_bytes: u64,
    pub ratio: f64,
    pub sparsity: f64,
}

pub fn report(store: &ParameterStore, encoded_bytes: usize) -> Result<CompressionReport> {
    let sparsity = store.sparsity()?;
    if encoded_bytes == 0 {
        return Err(Error::EmptyInput);
    }
    let raw_bytes = 4 * store.total_scalars() as u64;
    Ok(CompressionReport {
        raw_bytes,
        encoded_bytes: encoded_bytes as u64,
        ratio: raw_bytes as f64 / encoded_bytes as f64,
        sparsity,
    })
}

/// Dense little-endian float32 dump of every layer, in store order.
pub fn raw_f32_dump(store: &ParameterStore) -> Vec<u8> {
    store
        .layers()
        .iter()
        .flat_map(|l| l.values().iter().flat_map(|&v| (v as f32).to_le_bytes()))
        .collect()
}

/// What a store looks like after an encode/decode round trip.
pub fn round_trip(store: &ParameterStore, opts: EncodeOptions) -> Result<ParameterStore> {
    Ok(decode(&encode(store, opts)?)?)
}
