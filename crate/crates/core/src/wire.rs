//! Binary payload format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset size field
//!      0    4 magic "LACO"
//!      4    2 version (1)
//!      6    4 sender agent id
//!     10    8 frame id
//!     18    2 L_comm
//!     20    2 H
//!     22    2 d_h
//!     24    4 salient count S
//!     28    4 latent count M
//!     32    1 dtype (0 = f32, 1 = f16)
//!     33    4 source table length (= S)
//!     37  4*S source indices (u32)
//! body, for each layer 1..=L_comm:
//!         keys   [H][S+M][d_h]
//!         values [H][S+M][d_h]
//! ```

use half::f16;
use thiserror::Error;

use crate::model::{KvCache, Origin};
use crate::sskd::{Dtype, Payload, SskdError, WIRE_VERSION};

pub const MAGIC: [u8; 4] = *b"LACO";

/// Size of the header without the source table.
pub const FIXED_HEADER_BYTES: usize = 37;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("stream truncated: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown dtype code {0}")]
    BadDtype(u8),
    #[error("{0} trailing bytes after body")]
    TrailingBytes(usize),
    #[error("invalid payload: {0}")]
    Invalid(#[from] SskdError),
}

/// Header as it appears on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireHeader {
    pub version: u16,
    pub sender: u32,
    pub frame: u64,
    pub l_comm: u16,
    pub num_heads: u16,
    pub head_dim: u16,
    pub salient: u32,
    pub latent: u32,
    pub dtype: Dtype,
    pub source_indices: Vec<u32>,
}

impl WireHeader {
    pub fn of(p: &Payload) -> Self {
        Self {
            version: WIRE_VERSION,
            sender: p.sender(),
            frame: p.frame(),
            l_comm: p.l_comm() as u16,
            num_heads: p.num_heads() as u16,
            head_dim: p.head_dim() as u16,
            salient: p.salient() as u32,
            latent: p.latent() as u32,
            dtype: p.dtype(),
            source_indices: p.source_indices().to_vec(),
        }
    }

    pub fn body_bytes(&self) -> usize {
        body_bytes(
            self.l_comm as usize,
            self.num_heads as usize,
            self.head_dim as usize,
            self.salient as usize + self.latent as usize,
            self.dtype,
        )
    }
}

fn body_bytes(
    l_comm: usize,
    num_heads: usize,
    head_dim: usize,
    tokens: usize,
    dtype: Dtype,
) -> usize {
    l_comm * num_heads * tokens * head_dim * 2 * dtype.width()
}

/// Exact serialized length: header, source table and body.
pub fn payload_size_bytes(
    l_comm: usize,
    num_heads: usize,
    head_dim: usize,
    salient: usize,
    latent: usize,
    dtype: Dtype,
) -> usize {
    FIXED_HEADER_BYTES
        + 4 * salient
        + body_bytes(l_comm, num_heads, head_dim, salient + latent, dtype)
}

pub fn serialize(p: &Payload) -> Vec<u8> {
    let h = WireHeader::of(p);
    let mut out = Vec::with_capacity(payload_size_bytes(
        p.l_comm(),
        p.num_heads(),
        p.head_dim(),
        p.salient(),
        p.latent(),
        p.dtype(),
    ));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&h.version.to_le_bytes());
    out.extend_from_slice(&h.sender.to_le_bytes());
    out.extend_from_slice(&h.frame.to_le_bytes());
    out.extend_from_slice(&h.l_comm.to_le_bytes());
    out.extend_from_slice(&h.num_heads.to_le_bytes());
    out.extend_from_slice(&h.head_dim.to_le_bytes());
    out.extend_from_slice(&h.salient.to_le_bytes());
    out.extend_from_slice(&h.latent.to_le_bytes());
    out.push(h.dtype.code());
    out.extend_from_slice(&(h.source_indices.len() as u32).to_le_bytes());
    for i in &h.source_indices {
        out.extend_from_slice(&i.to_le_bytes());
    }
    let c = p.cache();
    let (nh, dh, n) = (c.num_heads(), c.head_dim(), c.len());
    for l in 0..c.num_layers() {
        for buf in [c.layer_keys(l), c.layer_values(l)] {
            for head in 0..nh {
                for pos in 0..n {
                    let start = (pos * nh + head) * dh;
                    for &x in &buf[start..start + dh] {
                        match p.dtype() {
                            Dtype::F32 => out.extend_from_slice(&x.to_le_bytes()),
                            Dtype::F16 => out.extend_from_slice(&f16::from_f32(x).to_le_bytes()),
                        }
                    }
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.at.checked_add(n).ok_or(WireError::Truncated {
            needed: usize::MAX,
            got: self.buf.len(),
        })?;
        if end > self.buf.len() {
            return Err(WireError::Truncated {
                needed: end,
                got: self.buf.len(),
            });
        }
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

/// Parses the header and source table only.
pub fn parse_header(bytes: &[u8]) -> Result<WireHeader, WireError> {
    parse_header_at(&mut Reader { buf: bytes, at: 0 })
}

fn parse_header_at(r: &mut Reader<'_>) -> Result<WireHeader, WireError> {
    let magic = r.array::<4>()?;
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let version = r.u16()?;
    if version != WIRE_VERSION {
        return Err(WireError::UnsupportedVersion(version));
    }
    let sender = r.u32()?;
    let frame = r.u64()?;
    let l_comm = r.u16()?;
    let num_heads = r.u16()?;
    let head_dim = r.u16()?;
    let salient = r.u32()?;
    let latent = r.u32()?;
    let code = r.array::<1>()?[0];
    let dtype = Dtype::from_code(code).ok_or(WireError::BadDtype(code))?;
    let table_len = r.u32()? as usize;
    if table_len != salient as usize {
        return Err(SskdError::TableMismatch {
            table: table_len,
            salient: salient as usize,
        }
        .into());
    }
    let table = r.take(table_len.saturating_mul(4))?;
    let source_indices = table
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect();
    Ok(WireHeader {
        version,
        sender,
        frame,
        l_comm,
        num_heads,
        head_dim,
        salient,
        latent,
        dtype,
        source_indices,
    })
}

pub fn deserialize(bytes: &[u8]) -> Result<Payload, WireError> {
    let mut r = Reader { buf: bytes, at: 0 };
    let h = parse_header_at(&mut r)?;
    let (nh, dh) = (h.num_heads as usize, h.head_dim as usize);
    let n = h.salient as usize + h.latent as usize;
    let body = r.take(h.body_bytes())?;
    if r.at != bytes.len() {
        return Err(WireError::TrailingBytes(bytes.len() - r.at));
    }
    let width = h.dtype.width();
    let mut elems = body.chunks_exact(width).map(|c| match h.dtype {
        Dtype::F32 => f32::from_le_bytes(c.try_into().expect("width 4")),
        Dtype::F16 => f16::from_le_bytes(c.try_into().expect("width 2")).to_f32(),
    });
    let mut layers = Vec::with_capacity(h.l_comm as usize);
    for _ in 0..h.l_comm {
        let mut pair = [vec![0.0f32; n * nh * dh], vec![0.0f32; n * nh * dh]];
        for buf in &mut pair {
            for head in 0..nh {
                for pos in 0..n {
                    let start = (pos * nh + head) * dh;
                    for slot in &mut buf[start..start + dh] {
                        *slot = elems.next().expect("body length checked");
                    }
                }
            }
        }
        let [k, v] = pair;
        layers.push((k, v));
    }
    let origins = std::iter::repeat_n(Origin::EgoPrefill, h.salient as usize)
        .chain(std::iter::repeat_n(Origin::EgoLatent, h.latent as usize))
        .collect();
    let cache = KvCache::from_raw(nh, dh, h.sender, origins, layers).map_err(SskdError::from)?;
    Ok(Payload::new(h.frame, cache, h.salient as usize, h.source_indices)?.with_dtype(h.dtype))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn payload(l: usize, salient: usize, latent: usize) -> Payload {
        let (nh, dh) = (2, 3);
        let n = salient + latent;
        let origins = std::iter::repeat_n(Origin::EgoPrefill, salient)
            .chain(std::iter::repeat_n(Origin::EgoLatent, latent))
            .collect();
        let layers = (0..l)
            .map(|li| {
                let k = (0..n * nh * dh)
                    .map(|i| (li * 1000 + i) as f32 * 0.5)
                    .collect();
                let v = (0..n * nh * dh)
                    .map(|i| -((li * 1000 + i) as f32))
                    .collect();
                (k, v)
            })
            .collect();
        let c = KvCache::from_raw(nh, dh, 7, origins, layers).unwrap();
        Payload::new(42, c, salient, (0..salient as u32).map(|i| 2 * i).collect()).unwrap()
    }

    #[test]
    fn round_trip() {
        let p = payload(2, 3, 2);
        let bytes = serialize(&p);
        assert_eq!(bytes.len(), payload_size_bytes(2, 2, 3, 3, 2, Dtype::F32));
        assert_eq!(deserialize(&bytes).unwrap(), p);
    }

    #[test]
    fn body_is_head_major() {
        let p = payload(1, 2, 0);
        let bytes = serialize(&p);
        let body = &bytes[FIXED_HEADER_BYTES + 8..];
        let first = |i: usize| f32::from_le_bytes(body[4 * i..4 * i + 4].try_into().unwrap());
        assert_eq!(first(3), p.cache().key(0, 1, 0)[0]);
        assert_eq!(first(6), p.cache().key(0, 0, 1)[0]);
    }

    #[test]
    fn known_size() {
        assert_eq!(
            payload_size_bytes(2, 2, 4, 10, 0, Dtype::F32) - FIXED_HEADER_BYTES - 40,
            1280
        );
        assert_eq!(
            payload_size_bytes(3, 2, 4, 0, 0, Dtype::F16),
            FIXED_HEADER_BYTES
        );
    }

    #[test]
    fn framing_errors() {
        let bytes = serialize(&payload(1, 1, 1));
        for cut in 0..bytes.len() {
            assert!(matches!(
                deserialize(&bytes[..cut]),
                Err(WireError::Truncated { .. })
            ));
        }
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(deserialize(&long), Err(WireError::TrailingBytes(1)));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(deserialize(&bad), Err(WireError::BadMagic(_))));
        let mut bad = bytes;
        bad[32] = 9;
        assert_eq!(deserialize(&bad), Err(WireError::BadDtype(9)));
    }
}
