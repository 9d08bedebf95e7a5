//! Versioned checkpoint container.
//!
//! Little-endian throughout.
//!
//! ```text
//! magic      8 bytes  "FMEDCKPT"
//! version    u32      1
//! meta_len   u32
//! meta       meta_len bytes of UTF-8 JSON (round, seed, config digest, architectures)
//! n_sections u32
//! section    repeated n_sections times:
//!              name_len u16, name (UTF-8), count u64, count × f32
//! ```
//!
//! Section names are `gen_ab`, `gen_ba`, and `client<id>.disc_ab` /
//! `client<id>.disc_ba` for every client discriminator.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federated::{ClientState, ServerState};
use crate::networks::{DiscriminatorConfig, Direction, GeneratorConfig, GeneratorParams};

pub const MAGIC: &[u8; 8] = b"FMEDCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub round: usize,
    pub seed: u64,
    pub config_digest: String,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub sections: Vec<(String, Vec<f32>)>,
}

impl Checkpoint {
    pub fn from_state(
        server: &ServerState,
        clients: &[ClientState],
        seed: u64,
        config_digest: &str,
        discriminator: DiscriminatorConfig,
    ) -> Self {
        let mut sections = vec![("gen_ab".to_string(), server.gen_ab.to_vector()), ("gen_ba".to_string(), server.gen_ba.to_vector())];
        for c in clients {
            sections.push((format!("client{}.disc_ab", c.client_id), c.disc_ab.to_vector()));
            sections.push((format!("client{}.disc_ba", c.client_id), c.disc_ba.to_vector()));
        }
        Self {
            meta: CheckpointMeta {
                round: server.round_index,
                seed,
                config_digest: config_digest.to_owned(),
                generator: server.gen_ab.config,
                discriminator,
            },
            sections,
        }
    }

    pub fn section(&self, name: &str) -> Option<&[f32]> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    fn generator(&self, name: &str, direction: Direction) -> Result<GeneratorParams> {
        let v = self.section(name).ok_or_else(|| Error::NotFound(format!("checkpoint section {name}")))?;
        GeneratorParams::zeros(self.meta.generator, direction)?.with_vector(v)
    }

    /// Global `(A→B, B→A)` generators.
    pub fn generators(&self) -> Result<(GeneratorParams, GeneratorParams)> {
        Ok((self.generator("gen_ab", Direction::AToB)?, self.generator("gen_ba", Direction::BToA)?))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::invalid(format!("checkpoint metadata: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, values) in &self.sections {
            let n = u16::try_from(name.len()).map_err(|_| Error::invalid("section name too long"))?;
            out.extend_from_slice(&n.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(buf: &[u8], path: &Path) -> Result<Self> {
        let mut pos = 0usize;
        let err = |offset: usize, m: String| Error::Parse { path: path.to_owned(), offset: offset as u64, message: m };
        let mut take = |n: usize, what: &str| -> Result<(usize, &[u8])> {
            if buf.len() - pos < n {
                return Err(err(pos, format!("truncated {what}")));
            }
            let at = pos;
            pos += n;
            Ok((at, &buf[at..at + n]))
        };
        let (_, magic) = take(8, "magic")?;
        if magic != MAGIC {
            return Err(err(0, "bad magic, not a checkpoint".into()));
        }
        let (at, v) = take(4, "version")?;
        let version = u32::from_le_bytes(v.try_into().unwrap());
        if version != VERSION {
            return Err(err(at, format!("unsupported version {version}")));
        }
        let (_, l) = take(4, "metadata length")?;
        let meta_len = u32::from_le_bytes(l.try_into().unwrap()) as usize;
        let (at, m) = take(meta_len, "metadata")?;
        let meta: CheckpointMeta = serde_json::from_slice(m).map_err(|e| err(at, format!("metadata: {e}")))?;
        let (_, n) = take(4, "section count")?;
        let n = u32::from_le_bytes(n.try_into().unwrap());
        let mut sections = Vec::new();
        for _ in 0..n {
            let (_, l) = take(2, "section name length")?;
            let (at, name) = take(u16::from_le_bytes(l.try_into().unwrap()) as usize, "section name")?;
            let name = std::str::from_utf8(name).map_err(|_| err(at, "section name is not UTF-8".into()))?.to_owned();
            let (at, c) = take(8, "section length")?;
            let count = u64::from_le_bytes(c.try_into().unwrap()) as usize;
            let bytes = count.checked_mul(4).ok_or_else(|| err(at, "section length overflows".into()))?;
            let (_, data) = take(bytes, "section data")?;
            let values = data.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            sections.push((name, values));
        }
        if pos != buf.len() {
            return Err(err(pos, format!("{} trailing bytes", buf.len() - pos)));
        }
        Ok(Self { meta, sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let g = GeneratorConfig::new(1, 2);
        let ab = GeneratorParams::<f32>::init(g, Direction::AToB, 1).unwrap();
        let ba = GeneratorParams::<f32>::init(g, Direction::BToA, 2).unwrap();
        Checkpoint {
            meta: CheckpointMeta {
                round: 2,
                seed: 9,
                config_digest: "abc".into(),
                generator: g,
                discriminator: DiscriminatorConfig::default(),
            },
            sections: vec![("gen_ab".into(), ab.to_vector()), ("gen_ba".into(), ba.to_vector()), ("client1.disc_ab".into(), vec![1.5, -2.0])],
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let back = Checkpoint::decode(&c.encode().unwrap(), Path::new("c.ckpt")).unwrap();
        assert_eq!(back, c);
        let (ab, ba) = back.generators().unwrap();
        assert_eq!(ab.direction, Direction::AToB);
        assert_eq!(ba.to_vector(), c.section("gen_ba").unwrap());
    }

    #[test]
    fn corrupt_input_is_a_parse_error() {
        let bytes = sample().encode().unwrap();
        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 1], Path::new("c")), Err(Error::Parse { .. })));
        assert!(matches!(Checkpoint::decode(b"FMEDVOL1", Path::new("c")), Err(Error::Parse { offset: 0, .. })));
    }
}
