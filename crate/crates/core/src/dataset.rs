//! Episode files, corpus manifests and action statistics.
//!
//! An episode file is laid out as
//!
//! ```text
//! "MAEP" | u16 version | u32 header_len | header (UTF-8, key=value lines) | records
//! ```
//!
//! Every record has the same length, computable from the header alone:
//! `u32 step | 14 f32 proprio | 3 f32 base pose | 14 f32 arm action |
//! base_dims f32 base action | raster bytes per camera in header order`.
//! All integers and floats are little-endian, with no padding.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::sim::{RasterView, ACTION_DIMS, ARM_DIMS, BASE_DIMS};

pub const MAGIC: &[u8; 4] = b"MAEP";
/// Cameras every policy sees, in this order.
pub const POLICY_CAMERAS: [&str; 3] = ["top", "lwrist", "rwrist"];
/// Extra view of table-top episodes, dropped before training.
pub const FRONT_CAMERA: &str = "front";
pub const FORMAT_VERSION: u16 = 1;
/// Lower bound applied to every standard deviation (2^-20).
pub const STD_FLOOR: f64 = 9.5367431640625e-7;
const MAX_RASTER_SIDE: usize = 4096;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("bad magic: not an episode file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("{0} unexpected bytes after the last record")]
    TrailingBytes(u64),
    #[error("header: {0}")]
    Header(String),
    #[error("step {step}: non-finite value")]
    NonFinite { step: usize },
    #[error("inconsistent episode: {0}")]
    Inconsistent(String),
    #[error("episode {index} has origin static; statistics use the mobile corpus only")]
    StaticInStats { index: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Origin {
    Mobile,
    Static,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Mobile => "mobile",
            Origin::Static => "static",
        })
    }
}

impl FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mobile" => Ok(Origin::Mobile),
            "static" => Ok(Origin::Static),
            _ => Err(format!("unknown origin `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CameraSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
}

impl CameraSpec {
    pub fn new(name: &str, width: usize, height: usize) -> Self {
        Self {
            name: name.to_string(),
            width,
            height,
        }
    }

    pub fn bytes(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpisodeHeader {
    pub version: u16,
    pub task: String,
    pub origin: Origin,
    pub control_hz: u32,
    pub arm_dims: usize,
    pub base_dims: usize,
    pub cameras: Vec<CameraSpec>,
    pub steps: usize,
    pub seed: u64,
}

impl EpisodeHeader {
    /// Bytes per record.
    pub fn record_size(&self) -> usize {
        4 + 4 * (self.arm_dims + 3 + self.arm_dims + self.base_dims)
            + self.cameras.iter().map(CameraSpec::bytes).sum::<usize>()
    }

    pub fn camera_index(&self, name: &str) -> Option<usize> {
        self.cameras.iter().position(|c| c.name == name)
    }

    fn to_text(&self) -> String {
        let cams = self
            .cameras
            .iter()
            .map(|c| format!("{}:{}x{}", c.name, c.width, c.height))
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "task={}\norigin={}\ncontrol_hz={}\narm_dims={}\nbase_dims={}\ncameras={}\nsteps={}\nseed={}\n",
            self.task, self.origin, self.control_hz, self.arm_dims, self.base_dims, cams, self.steps, self.seed
        )
    }

    fn from_text(version: u16, text: &str) -> Result<Self, DatasetError> {
        let bad = |m: String| DatasetError::Header(m);
        let mut fields: Vec<(&str, &str)> = Vec::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed line `{line}`")))?;
            if fields.iter().any(|(key, _)| *key == k) {
                return Err(bad(format!("duplicate key `{k}`")));
            }
            fields.push((k, v));
        }
        let get = |k: &str| {
            fields
                .iter()
                .find(|(key, _)| *key == k)
                .map(|(_, v)| *v)
                .ok_or_else(|| bad(format!("missing key `{k}`")))
        };
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T, DatasetError> {
            v.parse()
                .map_err(|_| DatasetError::Header(format!("bad value for `{k}`: `{v}`")))
        }
        if let Some((k, _)) = fields.iter().find(|(k, _)| {
            !matches!(
                *k,
                "task" | "origin" | "control_hz" | "arm_dims" | "base_dims" | "cameras" | "steps" | "seed"
            )
        }) {
            return Err(bad(format!("unknown key `{k}`")));
        }
        let cameras = get("cameras")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|c| {
                let (name, dims) = c
                    .split_once(':')
                    .ok_or_else(|| bad(format!("malformed camera `{c}`")))?;
                let (w, h) = dims
                    .split_once('x')
                    .ok_or_else(|| bad(format!("malformed camera `{c}`")))?;
                Ok(CameraSpec {
                    name: name.to_string(),
                    width: num("cameras", w)?,
                    height: num("cameras", h)?,
                })
            })
            .collect::<Result<Vec<_>, DatasetError>>()?;
        let header = Self {
            version,
            task: get("task")?.to_string(),
            origin: get("origin")?.parse().map_err(bad)?,
            control_hz: num("control_hz", get("control_hz")?)?,
            arm_dims: num("arm_dims", get("arm_dims")?)?,
            base_dims: num("base_dims", get("base_dims")?)?,
            cameras,
            steps: num("steps", get("steps")?)?,
            seed: num("seed", get("seed")?)?,
        };
        header.validate()?;
        Ok(header)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::Header(m.to_string()));
        if self.version != FORMAT_VERSION {
            return Err(DatasetError::UnsupportedVersion(self.version));
        }
        if self.task.is_empty() || self.task.contains(['\n', '=']) {
            return bad("task name must be non-empty without newlines or `=`");
        }
        if self.arm_dims != ARM_DIMS {
            return bad("arm_dims must be 14");
        }
        match (self.origin, self.base_dims) {
            (Origin::Mobile, BASE_DIMS) | (Origin::Static, 0) => {}
            (Origin::Static, _) => return bad("static episodes carry no base action (base_dims = 0)"),
            (Origin::Mobile, _) => return bad("mobile episodes carry base_dims = 2"),
        }
        if self.cameras.is_empty() {
            return bad("no cameras");
        }
        for (i, c) in self.cameras.iter().enumerate() {
            if c.name.is_empty() || c.name.contains([':', ',', '\n', '=']) {
                return bad("camera names must be non-empty and free of `:`, `,`, `=` and newlines");
            }
            if c.width == 0 || c.height == 0 || c.width > MAX_RASTER_SIDE || c.height > MAX_RASTER_SIDE {
                return bad("camera dimensions must be in 1..=4096");
            }
            if self.cameras[..i].iter().any(|o| o.name == c.name) {
                return bad("duplicate camera name");
            }
        }
        if self.origin == Origin::Static && self.camera_index("front").is_none() {
            return bad("static episodes include a `front` camera");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u32,
    pub proprio: [f32; ARM_DIMS],
    pub base_pose: [f32; 3],
    pub action_arms: [f32; ARM_DIMS],
    /// Empty for static episodes.
    pub action_base: Vec<f32>,
    /// One raster per header camera, in header order.
    pub rasters: Vec<Vec<u8>>,
}

impl StepRecord {
    fn floats(&self) -> impl Iterator<Item = f32> + '_ {
        self.proprio
            .iter()
            .chain(&self.base_pose)
            .chain(&self.action_arms)
            .chain(&self.action_base)
            .copied()
    }

    pub fn proprio_f64(&self) -> [f64; ARM_DIMS] {
        self.proprio.map(f64::from)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub header: EpisodeHeader,
    pub records: Vec<StepRecord>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn origin(&self) -> Origin {
        self.header.origin
    }

    /// Full 16-D action of a mobile step. `None` for static episodes.
    pub fn mobile_action(&self, step: usize) -> Option<[f64; ACTION_DIMS]> {
        let r = &self.records[step];
        if r.action_base.len() != BASE_DIMS {
            return None;
        }
        let mut a = [0.0; ACTION_DIMS];
        for (dst, src) in a.iter_mut().zip(r.action_arms.iter().chain(&r.action_base)) {
            *dst = f64::from(*src);
        }
        Some(a)
    }

    pub fn raster(&self, step: usize, camera: usize) -> RasterView<'_> {
        let c = &self.header.cameras[camera];
        RasterView {
            width: c.width,
            height: c.height,
            data: &self.records[step].rasters[camera],
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        self.header.validate()?;
        let h = &self.header;
        if self.records.len() != h.steps {
            return Err(DatasetError::Inconsistent(format!(
                "header says {} steps, found {} records",
                h.steps,
                self.records.len()
            )));
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.step as usize != i {
                return Err(DatasetError::Inconsistent(format!("record {i} has step index {}", r.step)));
            }
            if r.action_base.len() != h.base_dims {
                return Err(DatasetError::Inconsistent(format!("record {i}: base action length")));
            }
            if r.rasters.len() != h.cameras.len()
                || r.rasters.iter().zip(&h.cameras).any(|(img, c)| img.len() != c.bytes())
            {
                return Err(DatasetError::Inconsistent(format!("record {i}: raster sizes")));
            }
            if r.floats().any(|v| !v.is_finite()) {
                return Err(DatasetError::NonFinite { step: i });
            }
        }
        Ok(())
    }
}

/// Serialises an episode after validating it.
pub fn encode_episode(ep: &Episode) -> Result<Vec<u8>, DatasetError> {
    ep.validate()?;
    let text = ep.header.to_text();
    let mut out = Vec::with_capacity(10 + text.len() + ep.header.record_size() * ep.records.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ep.header.version.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for r in &ep.records {
        out.extend_from_slice(&r.step.to_le_bytes());
        for v in r.floats() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for img in &r.rasters {
            out.extend_from_slice(img);
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(DatasetError::Truncated {
                expected: self.pos as u64 + n as u64,
                actual: self.buf.len() as u64,
            }),
        }
    }

    fn u16(&mut self) -> Result<u16, DatasetError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s<const N: usize>(&mut self) -> Result<[f32; N], DatasetError> {
        let bytes = self.take(4 * N)?;
        let mut out = [0.0f32; N];
        for (o, c) in out.iter_mut().zip(bytes.chunks_exact(4)) {
            *o = f32::from_le_bytes(c.try_into().unwrap());
        }
        Ok(out)
    }
}

/// Parses an episode from bytes. Never returns a partial episode.
pub fn decode_episode(bytes: &[u8]) -> Result<Episode, DatasetError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4).map_err(|_| DatasetError::BadMagic)? != MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let version = cur.u16()?;
    if version != FORMAT_VERSION {
        return Err(DatasetError::UnsupportedVersion(version));
    }
    let header_len = cur.u32()? as usize;
    let text = std::str::from_utf8(cur.take(header_len)?)
        .map_err(|_| DatasetError::Header("header is not UTF-8".into()))?;
    let header = EpisodeHeader::from_text(version, text)?;

    let body = (header.record_size() as u64)
        .checked_mul(header.steps as u64)
        .ok_or_else(|| DatasetError::Header("step count overflows".into()))?;
    let expected = cur.pos as u64 + body;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(DatasetError::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(DatasetError::TrailingBytes(actual - expected));
    }

    let mut records = Vec::with_capacity(header.steps);
    for i in 0..header.steps {
        let step = cur.u32()?;
        let proprio = cur.f32s::<ARM_DIMS>()?;
        let base_pose = cur.f32s::<3>()?;
        let action_arms = cur.f32s::<ARM_DIMS>()?;
        let action_base = match header.base_dims {
            0 => Vec::new(),
            _ => cur.f32s::<BASE_DIMS>()?.to_vec(),
        };
        let rasters = header
            .cameras
            .iter()
            .map(|c| cur.take(c.bytes()).map(<[u8]>::to_vec))
            .collect::<Result<Vec<_>, _>>()?;
        let rec = StepRecord {
            step,
            proprio,
            base_pose,
            action_arms,
            action_base,
            rasters,
        };
        if step as usize != i {
            return Err(DatasetError::Inconsistent(format!("record {i} has step index {step}")));
        }
        if rec.floats().any(|v| !v.is_finite()) {
            return Err(DatasetError::NonFinite { step: i });
        }
        records.push(rec);
    }
    Ok(Episode { header, records })
}

pub fn write_episode(ep: &Episode, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let bytes = encode_episode(ep)?;
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_episode(path: impl AsRef<Path>) -> Result<Episode, DatasetError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_episode(&bytes)
}

/// A corpus manifest: one episode path per line. Relative paths resolve
/// against the manifest's directory; blank lines and `#` comments are skipped.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub paths: Vec<PathBuf>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Self {
        let paths = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                let p = Path::new(l);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            })
            .collect();
        Self { paths }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(Self::parse(&text, path.parent().unwrap_or(Path::new("."))))
    }

    /// Writes paths relative to the manifest directory when possible.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        let mut text = String::new();
        for p in &self.paths {
            let shown = p.strip_prefix(base).unwrap_or(p);
            text.push_str(&shown.to_string_lossy());
            text.push('\n');
        }
        fs::write(path, text).map_err(io_err(path))
    }

    /// First `n` entries; ablation subsets are manifest prefixes.
    pub fn prefix(&self, n: usize) -> Self {
        Self {
            paths: self.paths.iter().take(n).cloned().collect(),
        }
    }

    pub fn load(&self) -> Result<Vec<Episode>, DatasetError> {
        self.paths.iter().map(read_episode).collect()
    }
}

/// Per-dimension statistics of the mobile corpus. Actions are 16-D; arm
/// proprioception (14-D) is normalised with the same source-corpus rule.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub action_mean: [f64; ACTION_DIMS],
    pub action_std: [f64; ACTION_DIMS],
    pub proprio_mean: [f64; ARM_DIMS],
    pub proprio_std: [f64; ARM_DIMS],
    pub source: String,
}

impl NormStats {
    /// Zero mean, unit std.
    pub fn identity() -> Self {
        Self {
            action_mean: [0.0; ACTION_DIMS],
            action_std: [1.0; ACTION_DIMS],
            proprio_mean: [0.0; ARM_DIMS],
            proprio_std: [1.0; ARM_DIMS],
            source: "identity".into(),
        }
    }

    pub fn normalize_action(&self, a: &[f64; ACTION_DIMS]) -> [f64; ACTION_DIMS] {
        std::array::from_fn(|i| (a[i] - self.action_mean[i]) / self.action_std[i])
    }

    pub fn denormalize_action(&self, a: &[f64; ACTION_DIMS]) -> [f64; ACTION_DIMS] {
        std::array::from_fn(|i| a[i] * self.action_std[i] + self.action_mean[i])
    }

    pub fn normalize_proprio(&self, p: &[f64; ARM_DIMS]) -> [f64; ARM_DIMS] {
        std::array::from_fn(|i| (p[i] - self.proprio_mean[i]) / self.proprio_std[i])
    }

    /// Key/value lines, floats printed in shortest round-trip form.
    pub fn to_lines(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        format!(
            "stats.source={}\nstats.action_mean={}\nstats.action_std={}\nstats.proprio_mean={}\nstats.proprio_std={}\n",
            self.source,
            join(&self.action_mean),
            join(&self.action_std),
            join(&self.proprio_mean),
            join(&self.proprio_std)
        )
    }

    /// Inverse of [`to_lines`](Self::to_lines); `get` looks up a key.
    pub fn from_lookup<'a>(get: impl Fn(&str) -> Option<&'a str>) -> Result<Self, String> {
        fn arr<const N: usize>(s: Option<&str>, key: &str) -> Result<[f64; N], String> {
            let s = s.ok_or_else(|| format!("missing {key}"))?;
            let v: Vec<f64> = s
                .split(',')
                .map(|x| x.parse::<f64>().map_err(|_| format!("bad float in {key}")))
                .collect::<Result<_, _>>()?;
            v.try_into().map_err(|_| format!("{key}: expected {N} values"))
        }
        let stats = Self {
            source: get("stats.source").ok_or("missing stats.source")?.to_string(),
            action_mean: arr(get("stats.action_mean"), "stats.action_mean")?,
            action_std: arr(get("stats.action_std"), "stats.action_std")?,
            proprio_mean: arr(get("stats.proprio_mean"), "stats.proprio_mean")?,
            proprio_std: arr(get("stats.proprio_std"), "stats.proprio_std")?,
        };
        let all_finite = stats
            .action_mean
            .iter()
            .chain(&stats.action_std)
            .chain(&stats.proprio_mean)
            .chain(&stats.proprio_std)
            .all(|v| v.is_finite());
        if !all_finite || stats.action_std.iter().chain(&stats.proprio_std).any(|&s| s < STD_FLOOR) {
            return Err("statistics must be finite with std >= floor".into());
        }
        Ok(stats)
    }
}

/// Streaming per-dimension mean and population variance.
#[derive(Clone, Debug)]
struct Welford<const N: usize> {
    n: u64,
    mean: [f64; N],
    m2: [f64; N],
}

impl<const N: usize> Welford<N> {
    fn new() -> Self {
        Self {
            n: 0,
            mean: [0.0; N],
            m2: [0.0; N],
        }
    }

    fn push(&mut self, x: impl Iterator<Item = f64>) {
        self.n += 1;
        let n = self.n as f64;
        for (i, v) in x.enumerate().take(N) {
            let delta = v - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (v - self.mean[i]);
        }
    }

    fn finish(&self) -> ([f64; N], [f64; N]) {
        let n = self.n as f64;
        let std = std::array::from_fn(|i| pow2_scale((self.m2[i] / n).sqrt()));
        (self.mean, std)
    }
}

/// Nearest power of two, at least [`STD_FLOOR`]. Dividing and multiplying
/// by a power of two is exact, so a zero-padded base action survives the
/// normalise/denormalise round trip bit for bit.
pub fn pow2_scale(std: f64) -> f64 {
    if !(std > STD_FLOOR) {
        return STD_FLOOR;
    }
    2f64.powi(std.log2().round() as i32).max(STD_FLOOR)
}

/// Statistics over every step of a mobile-only corpus. Standard deviations
/// are rounded with [`pow2_scale`].
pub fn compute_norm_stats(corpus: &[Episode]) -> Result<NormStats, DatasetError> {
    if let Some(index) = corpus.iter().position(|e| e.origin() != Origin::Mobile) {
        return Err(DatasetError::StaticInStats { index });
    }
    let mut actions = Welford::<ACTION_DIMS>::new();
    let mut proprio = Welford::<ARM_DIMS>::new();
    for ep in corpus {
        for (i, r) in ep.records.iter().enumerate() {
            let a = ep
                .mobile_action(i)
                .ok_or_else(|| DatasetError::Inconsistent("mobile step without base action".into()))?;
            actions.push(a.into_iter());
            proprio.push(r.proprio.iter().map(|&v| f64::from(v)));
        }
    }
    if actions.n == 0 {
        return Err(DatasetError::EmptyCorpus);
    }
    let (action_mean, action_std) = actions.finish();
    let (proprio_mean, proprio_std) = proprio.finish();
    let tasks: Vec<&str> = {
        let mut t: Vec<&str> = corpus.iter().map(|e| e.header.task.as_str()).collect();
        t.dedup();
        t
    };
    Ok(NormStats {
        action_mean,
        action_std,
        proprio_mean,
        proprio_std,
        source: format!("mobile:{}:{}", tasks.join("+"), corpus.len()),
    })
}
