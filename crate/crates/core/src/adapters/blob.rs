//! Weight blob: little-endian header, raw `f32` row-major matrices, then the
//! SHA-256 of everything before it.
//!
//! ```text
//! magic "MOLW" | version u32 | d_in u32 | d_out u32 | ranks 3 x u32 | alphas 3 x f32
//! base d_in*d_out | A_g B_g A_n B_n A_c B_c | sha256 (32 bytes)
//! ```

use std::io::{Read, Write};

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use super::{LoraPair, MolLayer};
use crate::error::{Error, Result};

pub const WEIGHT_MAGIC: [u8; 4] = *b"MOLW";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 6 + 4 * 3;
const DIGEST_LEN: usize = 32;
const MAX_DIM: usize = 1 << 16;

fn push_matrix(buf: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            buf.extend_from_slice(&(m[(r, c)] as f32).to_le_bytes());
        }
    }
}

pub fn write_weights<W: Write>(layer: &MolLayer, out: &mut W) -> Result<()> {
    layer.validate()?;
    let mut buf = Vec::new();
    buf.extend_from_slice(&WEIGHT_MAGIC);
    let dims = [layer.d_in(), layer.d_out()]
        .into_iter()
        .chain(layer.adapters.iter().map(LoraPair::rank));
    for v in std::iter::once(VERSION as usize).chain(dims) {
        let v = u32::try_from(v).map_err(|_| Error::param("layer too large for weight blob"))?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for p in &layer.adapters {
        buf.extend_from_slice(&(p.alpha as f32).to_le_bytes());
    }
    push_matrix(&mut buf, &layer.base);
    for p in &layer.adapters {
        push_matrix(&mut buf, &p.a);
        push_matrix(&mut buf, &p.b);
    }
    let digest = Sha256::digest(&buf);
    out.write_all(&buf)?;
    out.write_all(&digest)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take4(&mut self) -> Result<[u8; 4]> {
        let end = self.pos + 4;
        let b = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::format("weight blob", "truncated"))?;
        self.pos = end;
        Ok(b.try_into().expect("four bytes"))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take4()?) as usize)
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f64::from(f32::from_le_bytes(self.take4()?)))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = self.f32()?;
            }
        }
        Ok(m)
    }
}

pub fn read_weights<R: Read>(mut input: R) -> Result<MolLayer> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN + DIGEST_LEN || bytes[..4] != WEIGHT_MAGIC {
        return Err(Error::format("weight blob", "bad magic or truncated header"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum("weight blob".into()));
    }
    let mut cur = Cursor { bytes: body, pos: 4 };
    let version = cur.u32()?;
    if version as u32 != VERSION {
        return Err(Error::format("weight blob", format!("unsupported version {version}")));
    }
    let d_in = cur.u32()?;
    let d_out = cur.u32()?;
    let ranks = [cur.u32()?, cur.u32()?, cur.u32()?];
    if [d_in, d_out].into_iter().chain(ranks).any(|v| v > MAX_DIM) {
        return Err(Error::format("weight blob", "dimension out of range"));
    }
    let expected = HEADER_LEN + 4 * (d_in * d_out + ranks.iter().map(|r| r * (d_in + d_out)).sum::<usize>());
    if body.len() != expected {
        return Err(Error::format(
            "weight blob",
            format!("{} payload bytes, expected {expected}", body.len()),
        ));
    }
    let alphas = [cur.f32()?, cur.f32()?, cur.f32()?];
    let base = cur.matrix(d_in, d_out)?;
    let mut adapters = Vec::with_capacity(3);
    for (r, alpha) in ranks.into_iter().zip(alphas) {
        let a = cur.matrix(d_in, r)?;
        let b = cur.matrix(r, d_out)?;
        adapters.push(LoraPair { a, b, alpha });
    }
    Ok(MolLayer {
        base,
        adapters: adapters.try_into().expect("three adapters"),
    })
}
