//! Parameter files.
//!
//! ```text
//! magic (4 bytes) | u16 version | u32 header_len | header (key = value lines)
//! | u64 count | count f32 values
//! ```
//!
//! Little-endian throughout. The same container carries policy networks
//! (`WBCK`) and retrieval encoders.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{parse_value, ConfigError, KeyValues};
use crate::dataset::NormStats;

use super::{Arch, NnError, PolicyNet};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WBCK";
pub const CONTAINER_VERSION: u16 = 1;
const MAX_HEADER: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(u64),
    #[error("header: {0}")]
    Header(String),
    #[error("non-finite parameter at index {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Shape(#[from] NnError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<ConfigError> for CheckpointError {
    fn from(e: ConfigError) -> Self {
        CheckpointError::Header(e.to_string())
    }
}

/// Raw container: header pairs plus a flat f32 block.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub header: KeyValues,
    pub values: Vec<f32>,
}

impl Container {
    pub fn encode(&self, magic: &[u8; 4]) -> Vec<u8> {
        let text = self.header.to_string();
        let mut out = Vec::with_capacity(18 + text.len() + 4 * self.values.len());
        out.extend_from_slice(magic);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], magic: &[u8; 4]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 || &bytes[..4] != magic {
            return Err(CheckpointError::BadMagic);
        }
        let need = |n: usize| {
            if bytes.len() < n {
                Err(CheckpointError::Truncated {
                    expected: n as u64,
                    actual: bytes.len() as u64,
                })
            } else {
                Ok(())
            }
        };
        need(10)?;
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CONTAINER_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        if header_len > MAX_HEADER {
            return Err(CheckpointError::Header("header too long".into()));
        }
        need(10 + header_len + 8)?;
        let text = std::str::from_utf8(&bytes[10..10 + header_len])
            .map_err(|_| CheckpointError::Header("not UTF-8".into()))?;
        let header = KeyValues::parse(text)?;
        let at = 10 + header_len;
        let count = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let body = count
            .checked_mul(4)
            .and_then(|b| b.checked_add(at as u64 + 8))
            .ok_or_else(|| CheckpointError::Header("count overflows".into()))?;
        let actual = bytes.len() as u64;
        if actual < body {
            return Err(CheckpointError::Truncated { expected: body, actual });
        }
        if actual > body {
            return Err(CheckpointError::TrailingBytes(actual - body));
        }
        let values: Vec<f32> = bytes[at + 8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CheckpointError::NonFinite(i));
        }
        Ok(Self { header, values })
    }
}

pub(crate) fn required<'a>(kv: &'a KeyValues, key: &str) -> Result<&'a str, CheckpointError> {
    kv.get(key)
        .ok_or_else(|| CheckpointError::Header(format!("missing `{key}`")))
}

pub(crate) fn write_stats(kv: &mut KeyValues, stats: &NormStats) {
    for line in stats.to_lines().lines() {
        if let Some((k, v)) = line.split_once('=') {
            kv.push(k, v);
        }
    }
}

pub(crate) fn read_stats(kv: &KeyValues) -> Result<NormStats, CheckpointError> {
    NormStats::from_lookup(|k| kv.get(k)).map_err(CheckpointError::Header)
}

/// A trained policy network with its statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: PolicyNet,
    pub stats: NormStats,
    pub step: usize,
    pub seed: u64,
}

fn arch_header(arch: &Arch, kv: &mut KeyValues) {
    kv.push("arch.chunk_len", arch.chunk_len);
    let views: Vec<String> = arch.view_sizes.iter().map(|(w, h)| format!("{w}x{h}")).collect();
    kv.push("arch.views", views.join(","));
    kv.push("arch.pooled_side", arch.pooled_side);
    kv.push("arch.view_hidden", arch.view_hidden);
    kv.push("arch.proprio_hidden", arch.proprio_hidden);
    kv.push("arch.trunk_hidden", arch.trunk_hidden);
}

fn read_arch(kv: &KeyValues) -> Result<Arch, CheckpointError> {
    let num = |k: &str| -> Result<usize, CheckpointError> { Ok(parse_value(k, required(kv, k)?)?) };
    let mut view_sizes = [(0, 0); 3];
    let views: Vec<&str> = required(kv, "arch.views")?.split(',').collect();
    if views.len() != 3 {
        return Err(CheckpointError::Header("arch.views needs three entries".into()));
    }
    for (slot, v) in view_sizes.iter_mut().zip(views) {
        let (w, h) = v
            .split_once('x')
            .ok_or_else(|| CheckpointError::Header(format!("bad view size `{v}`")))?;
        *slot = (parse_value("arch.views", w)?, parse_value("arch.views", h)?);
    }
    let arch = Arch {
        chunk_len: num("arch.chunk_len")?,
        view_sizes,
        pooled_side: num("arch.pooled_side")?,
        view_hidden: num("arch.view_hidden")?,
        proprio_hidden: num("arch.proprio_hidden")?,
        trunk_hidden: num("arch.trunk_hidden")?,
    };
    arch.validate()?;
    // Guard against absurd allocations from corrupt headers.
    let widths = [arch.chunk_len, arch.pooled_side, arch.view_hidden, arch.proprio_hidden, arch.trunk_hidden];
    if widths.iter().any(|&w| w > 4096) || view_sizes.iter().any(|&(w, h)| w > 4096 || h > 4096) {
        return Err(CheckpointError::Header("architecture too large".into()));
    }
    Ok(arch)
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut kv = KeyValues::default();
    kv.push("kind", "bc");
    arch_header(&ck.net.arch, &mut kv);
    kv.push("step", ck.step);
    kv.push("seed", ck.seed);
    write_stats(&mut kv, &ck.stats);
    let values = ck.net.params().into_iter().map(|v| v as f32).collect();
    Container { header: kv, values }.encode(CHECKPOINT_MAGIC)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let c = Container::decode(bytes, CHECKPOINT_MAGIC)?;
    let kv = &c.header;
    if required(kv, "kind")? != "bc" {
        return Err(CheckpointError::Header("not a policy checkpoint".into()));
    }
    let arch = read_arch(kv)?;
    let mut net = PolicyNet::zeros_for(&arch);
    let values: Vec<f64> = c.values.iter().map(|&v| f64::from(v)).collect();
    net.set_params(&values)?;
    Ok(Checkpoint {
        net,
        stats: read_stats(kv)?,
        step: parse_value("step", required(kv, "step")?)?,
        seed: parse_value("seed", required(kv, "seed")?)?,
    })
}

pub fn write_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(ck)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
