//! Single-file parameter checkpoint.
//!
//! Layout (little endian):
//! `MAGIC`, `u32` version, `u32`-prefixed config text, `u32` class count with
//! `u32`-prefixed labels, `u32` parameter count, then per parameter a
//! `u32`-prefixed name, `u8` block, `u8` rank, `u32` dims and `f64` values.
//! An FNV-1a hash of everything before it closes the file.

use std::fs;
use std::path::Path;

use exitrack_core::kv::KvMap;

use crate::error::NetError;
use crate::graph::Tensor;
use crate::model::{NetConfig, TrackerNet};
use crate::params::Block;

pub const MAGIC: &[u8; 8] = b"XTRKCKPT";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: TrackerNet,
    pub classes: Vec<String>,
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("length fits in u32").to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn block_code(b: Block) -> u8 {
    Block::ALL.iter().position(|&x| x == b).expect("listed") as u8
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let mut m = KvMap::new();
        self.net.cfg.write_kv(&mut m);
        put_str(&mut out, &m.to_text());
        put_u32(&mut out, self.classes.len());
        for c in &self.classes {
            put_str(&mut out, c);
        }
        put_u32(&mut out, self.net.params.len());
        for p in self.net.params.iter() {
            put_str(&mut out, &p.name);
            out.push(block_code(p.block));
            out.push(p.value.shape.len() as u8);
            for &d in &p.value.shape {
                put_u32(&mut out, d);
            }
            for v in &p.value.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let h = fnv1a(&out);
        out.extend_from_slice(&h.to_le_bytes());
        out
    }

    /// Parses and validates a checkpoint. Never panics on malformed input.
    pub fn decode(bytes: &[u8]) -> Result<Self, NetError> {
        if bytes.len() < MAGIC.len() + 4 + 8 {
            return Err(bad("file too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(bad(format!("unsupported version {version}")));
        }
        if fnv1a(body) != stored {
            return Err(bad("checksum mismatch"));
        }
        let cfg_text = r.string()?;
        let cfg = NetConfig::from_kv(&KvMap::parse(&cfg_text)?)?;
        check_limits(&cfg)?;
        let n_classes = r.u32()?;
        if n_classes != cfg.n_classes {
            return Err(bad(format!(
                "{n_classes} class labels for n_classes={}",
                cfg.n_classes
            )));
        }
        let mut classes = Vec::with_capacity(n_classes.min(1024));
        for _ in 0..n_classes {
            classes.push(r.string()?);
        }
        // shapes come from the config; the file must match them exactly
        let mut net = TrackerNet::new(cfg)?;
        let n_params = r.u32()?;
        if n_params != net.params.len() {
            return Err(bad(format!(
                "{n_params} parameters, expected {}",
                net.params.len()
            )));
        }
        for i in 0..n_params {
            let name = r.string()?;
            let block = *Block::ALL
                .get(r.u8()? as usize)
                .ok_or_else(|| bad("unknown block code"))?;
            let rank = r.u8()? as usize;
            if rank > MAX_RANK {
                return Err(bad(format!("rank {rank} too large")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()?);
            }
            let p = net.params.get_mut(i);
            if p.name != name || p.block != block || p.value.shape != shape {
                return Err(bad(format!(
                    "parameter {i} `{name}` does not match the config"
                )));
            }
            let raw = r.take(p.value.len() * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            p.value = Tensor::new(shape, data);
        }
        if r.pos != body.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint { net, classes })
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        fs::write(path, self.encode()).map_err(|source| NetError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let bytes = fs::read(path).map_err(|source| NetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::decode(&bytes)
    }
}

/// Caps sizes before any allocation driven by the file contents.
fn check_limits(cfg: &NetConfig) -> Result<(), NetError> {
    let limits = [
        ("feature_dim", cfg.feature_dim, 512),
        ("box_hidden", cfg.box_hidden, 512),
        ("n_classes", cfg.n_classes, 1024),
        ("search_size", cfg.search_size, 256),
        ("template_size", cfg.template_size, 256),
    ];
    for (key, v, max) in limits {
        if v > max {
            return Err(bad(format!("{key}={v} exceeds {max}")));
        }
    }
    Ok(())
}

fn bad(msg: impl Into<String>) -> NetError {
    NetError::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| bad("unexpected end of file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NetError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, NetError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String, NetError> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("invalid UTF-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Checkpoint {
        let net = TrackerNet::new(NetConfig {
            feature_dim: 8,
            box_hidden: 4,
            n_classes: 3,
            init_seed: 5,
            ..Default::default()
        })
        .unwrap();
        Checkpoint {
            net,
            classes: vec!["a".into(), "b".into(), "c".into()],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = small();
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = small().encode();
        let mut flipped = bytes.clone();
        flipped[bytes.len() / 2] ^= 1;
        assert!(Checkpoint::decode(&flipped).is_err());
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::decode(&bytes[..10]).is_err());
        let mut magic = bytes;
        magic[0] = b'Y';
        assert!(matches!(
            Checkpoint::decode(&magic),
            Err(NetError::Checkpoint(_))
        ));
    }

    #[test]
    fn every_prefix_fails_cleanly() {
        let bytes = small().encode();
        for n in (0..bytes.len()).step_by(97) {
            assert!(Checkpoint::decode(&bytes[..n]).is_err());
        }
    }
}
