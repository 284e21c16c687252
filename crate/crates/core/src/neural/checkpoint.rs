//! Versioned binary checkpoint container.
//!
//! Layout (little endian):
//!
//! ```text
//! "SEPKCKPT" | u32 version | u64 header_len | header (JSON) | f64 blocks | sha256
//! ```
//!
//! The header lists every block (`param:`, `adam_m:`, `adam_v:` prefixed
//! names with shapes) in payload order, plus the stage tag, lineage,
//! architecture, optimizer scalars and normalization statistics. The trailing
//! digest covers all preceding bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::NormStats;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::neural::adam::AdamState;
use crate::neural::model::{Model, ModelKind};
use crate::neural::nets::{ArchConfig, Module};

const MAGIC: &[u8; 8] = b"SEPKCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Training stage that produced a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Embedding network on the deep-clustering objective only.
    Dc,
    /// Embedding + mask networks on the joint objective without the discriminative term.
    Joint,
    /// Joint objective with the discriminative term.
    Dl,
    /// Magnitude-input permutation-invariant baseline.
    Upit,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Dc => "dc",
            Stage::Joint => "joint",
            Stage::Dl => "dl",
            Stage::Upit => "upit",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dc" => Ok(Stage::Dc),
            "joint" => Ok(Stage::Joint),
            "dl" => Ok(Stage::Dl),
            "upit" => Ok(Stage::Upit),
            _ => Err(Error::InvalidConfig(format!("unknown stage {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub stage: Stage,
    pub hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub model: Model,
    pub optimizer: AdamState,
    pub norm: NormStats,
    /// Ancestor checkpoints, oldest first.
    pub lineage: Vec<LineageEntry>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct BlockInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    stage: Stage,
    kind: ModelKind,
    arch: ArchConfig,
    norm: NormStats,
    lineage: Vec<LineageEntry>,
    metadata: BTreeMap<String, String>,
    adam: AdamState,
    blocks: Vec<BlockInfo>,
}

fn incompatible(msg: impl Into<String>) -> Error {
    Error::IncompatibleCheckpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blocks = Vec::new();
        let mut payload: Vec<&Matrix> = Vec::new();
        let mut params: Vec<(String, Matrix)> = Vec::new();
        self.model.visit("", &mut |n, m| params.push((n, m.clone())));
        for (n, m) in &params {
            blocks.push(BlockInfo {
                name: format!("param:{n}"),
                rows: m.rows(),
                cols: m.cols(),
            });
            payload.push(m);
        }
        for (prefix, map) in [("adam_m", &self.optimizer.first), ("adam_v", &self.optimizer.second)] {
            for (n, m) in map {
                blocks.push(BlockInfo {
                    name: format!("{prefix}:{n}"),
                    rows: m.rows(),
                    cols: m.cols(),
                });
                payload.push(m);
            }
        }
        let header = Header {
            stage: self.stage,
            kind: self.model.kind,
            arch: self.model.arch.clone(),
            norm: self.norm.clone(),
            lineage: self.lineage.clone(),
            metadata: self.metadata.clone(),
            adam: self.optimizer.clone(),
            blocks,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for m in payload {
            for x in m.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 8 + 32 {
            return Err(incompatible("file too short"));
        }
        if &bytes[..8] != MAGIC {
            return Err(incompatible("bad magic"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(incompatible("checksum mismatch"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(incompatible(format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| incompatible("header length out of range"))?;
        let header: Header = serde_json::from_slice(&body[20..header_end])
            .map_err(|e| incompatible(format!("header: {e}")))?;

        let mut blocks: BTreeMap<String, Matrix> = BTreeMap::new();
        let mut off = header_end;
        for b in &header.blocks {
            let n = b.rows * b.cols;
            let end = off + 8 * n;
            if end > body.len() {
                return Err(incompatible(format!("block {} truncated", b.name)));
            }
            let data = body[off..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            blocks.insert(b.name.clone(), Matrix::from_vec(b.rows, b.cols, data));
            off = end;
        }
        if off != body.len() {
            return Err(incompatible("trailing bytes after payload"));
        }

        let mut model = Model::new(header.kind, &header.arch, 0)
            .map_err(|e| incompatible(format!("architecture: {e}")))?;
        let mut missing = None;
        let mut mismatch = None;
        let mut expected = Vec::new();
        model.visit_mut("", &mut |name, p| {
            let key = format!("param:{name}");
            match blocks.get(&key) {
                None => missing = Some(name.clone()),
                Some(m) if m.shape() != p.shape() => {
                    mismatch = Some(format!("{name}: {:?} vs {:?}", m.shape(), p.shape()));
                }
                Some(m) => *p = m.clone(),
            }
            expected.push(key);
        });
        if let Some(n) = missing {
            return Err(incompatible(format!("missing parameter {n}")));
        }
        if let Some(m) = mismatch {
            return Err(incompatible(format!("shape mismatch {m}")));
        }

        let mut optimizer = header.adam;
        for (name, m) in blocks {
            if let Some(p) = name.strip_prefix("adam_m:") {
                optimizer.first.insert(p.to_string(), m);
            } else if let Some(p) = name.strip_prefix("adam_v:") {
                optimizer.second.insert(p.to_string(), m);
            } else if !expected.contains(&name) {
                return Err(incompatible(format!("unexpected block {name}")));
            }
        }
        if header.norm.bins() != header.arch.bins {
            return Err(incompatible("normalization statistics do not match bin count"));
        }
        Ok(Self {
            stage: header.stage,
            model,
            optimizer,
            norm: header.norm,
            lineage: header.lineage,
            metadata: header.metadata,
        })
    }

    /// Writes to a sibling temp file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized checkpoint, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::graph::ParamGrads;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arch() -> ArchConfig {
        ArchConfig {
            bins: 6,
            hidden: 3,
            embed_dim: 2,
            ..ArchConfig::desk()
        }
    }

    fn sample() -> Checkpoint {
        let mut model = Model::new_def(&arch(), 4).unwrap();
        let mut optimizer = AdamState::new(5e-4).unwrap();
        let mut grads = ParamGrads::default();
        model.visit("", &mut |n, m| {
            grads.0.insert(n, m.map(|x| x * 0.5 + 0.1));
        });
        optimizer.step(&mut model, &grads).unwrap();
        let mut metadata = BTreeMap::new();
        metadata.insert("seed".into(), "4".into());
        Checkpoint {
            stage: Stage::Joint,
            model,
            optimizer,
            norm: NormStats::identity(6),
            lineage: vec![LineageEntry {
                stage: Stage::Dc,
                hash: "abc".into(),
            }],
            metadata,
        }
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.stage, Stage::Joint);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Matrix::from_fn(4, 6, |_, _| rng.gen_range(-1.0..1.0));
        assert_eq!(back.model.masks(&x).unwrap(), ck.model.masks(&x).unwrap());
        assert_eq!(back.hash(), ck.hash());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::IncompatibleCheckpoint(_))));
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
        let mut wrong_magic = sample().to_bytes();
        wrong_magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong_magic).is_err());
    }

    #[test]
    fn stage_tags_parse() {
        for s in [Stage::Dc, Stage::Joint, Stage::Dl, Stage::Upit] {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
        assert!("final".parse::<Stage>().is_err());
    }
}
