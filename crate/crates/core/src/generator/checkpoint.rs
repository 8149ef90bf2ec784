//! Binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "FXP1"                        magic
//! u32                           version (1)
//! u32 × 6                       d_z, d_w, layers, d_h, joints, resolution
//! u32                           parameter array count
//!   u64 n, f64 × n              per array
//! u8                            1 if a transfer section follows, else 0
//!   u32 d_s, u32 blocks
//!   per block: u8 kind (0 identity, 1 linear, 2 low-rank, 3 nonlinear),
//!              u32 array count, arrays as above
//! u32                           CRC-32 of every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Generator, GeneratorConfig, TransferBlock, TransferMatrix};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FXP1";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_array(buf: &mut Vec<u8>, t: &Tensor) {
    buf.extend_from_slice(&(t.len() as u64).to_le_bytes());
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_checkpoint(g: &Generator, tau: Option<&TransferMatrix>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    let c = g.config();
    for v in [c.d_z, c.d_w, c.layers, c.d_h, c.joints, c.resolution] {
        put_u32(&mut buf, v as u32);
    }
    let tensors = g.tensors();
    put_u32(&mut buf, tensors.len() as u32);
    for t in tensors {
        put_array(&mut buf, t);
    }
    match tau {
        None => buf.push(0),
        Some(tau) => {
            buf.push(1);
            put_u32(&mut buf, tau.d_s() as u32);
            put_u32(&mut buf, tau.layers() as u32);
            for block in tau.blocks() {
                buf.push(block.kind_code());
                let parts = block.tensors();
                put_u32(&mut buf, parts.len() as u32);
                for t in parts {
                    put_array(&mut buf, t);
                }
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    put_u32(&mut buf, crc);
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of data".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn array(&mut self) -> Result<Tensor> {
        let n = usize::try_from(self.u64()?)
            .map_err(|_| Error::Checkpoint("array too large".into()))?;
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| {
            Error::Checkpoint("array too large".into())
        })?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor::new(&[n], data))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(Generator, Option<TransferMatrix>)> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, not a flexpose checkpoint".into()));
    }
    if bytes.len() < 12 {
        return Err(Error::Checkpoint("checksum mismatch (file truncated)".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Checkpoint(
            "checksum mismatch (file truncated or corrupted)".into(),
        ));
    }
    let mut cur = Cursor {
        bytes: body,
        pos: 4,
    };
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = cur.u32()? as usize;
    }
    let config = GeneratorConfig {
        d_z: dims[0],
        d_w: dims[1],
        layers: dims[2],
        d_h: dims[3],
        joints: dims[4],
        resolution: dims[5],
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("config block: {e}")))?;
    let n = cur.u32()? as usize;
    let tensors = (0..n).map(|_| cur.array()).collect::<Result<Vec<_>>>()?;
    let g = Generator::from_tensors(config, tensors)?;
    let tau = match cur.u8()? {
        0 => None,
        1 => {
            let d_s = cur.u32()? as usize;
            let nb = cur.u32()? as usize;
            let mut blocks = Vec::with_capacity(nb);
            for _ in 0..nb {
                let kind = cur.u8()?;
                let count = cur.u32()? as usize;
                let parts = (0..count).map(|_| cur.array()).collect::<Result<Vec<_>>>()?;
                blocks.push(TransferBlock::from_parts(kind, d_s, parts)?);
            }
            let tau = TransferMatrix::from_blocks(d_s, blocks);
            tau.check_layout(&config)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            Some(tau)
        }
        f => return Err(Error::Checkpoint(format!("bad transfer flag {f}"))),
    };
    if cur.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok((g, tau))
}

/// Writes to a temporary sibling and renames, so readers never see a
/// partial file.
pub fn save_checkpoint(
    g: &Generator,
    tau: Option<&TransferMatrix>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_checkpoint(g, tau);
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Generator, Option<TransferMatrix>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(PathBuf::from(path)),
        _ => Error::Io(e),
    })?;
    read_checkpoint(&bytes)
}
