//! TTDT tensor container and JSON-lines sample manifests.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "TTDT" | u32 version=1 | u32 ndim | ndim x u64 dims | u32 dtype | payload
//! ```
//!
//! dtype 0 is f32, dtype 1 is u8 (binary masks, values restricted to {0,1}).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::IoError;

pub const MAGIC: &[u8; 4] = b"TTDT";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;
pub const DTYPE_U8: u32 = 1;

/// Dense row-major f32 tensor. Values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, String> {
        check_dims(&dims)?;
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(format!(
                "dims {dims:?} describe {n} values but {} were given",
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(format!("non-finite value {} at index {i}", data[i]));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Binary mask, row-major, values exactly 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self, String> {
        check_dims(&[height, width])?;
        if data.len() != height * width {
            return Err(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(format!("mask value {} at index {i} is not 0 or 1", data[i]));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for h in 0..height {
            for w in 0..width {
                data.push(u8::from(f(h, w)));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, h: usize, w: usize) -> bool {
        self.data[h * self.width + w] == 1
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Pixel-wise OR. Shapes must agree.
    pub fn union(&self, other: &BinaryMask) -> Option<BinaryMask> {
        if self.height != other.height || self.width != other.width {
            return None;
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a | b).collect();
        Some(BinaryMask {
            height: self.height,
            width: self.width,
            data,
        })
    }
}

fn check_dims(dims: &[usize]) -> Result<(), String> {
    if dims.is_empty() {
        return Err("tensor must have at least one dimension".into());
    }
    if let Some(i) = dims.iter().position(|&d| d == 0) {
        return Err(format!("dimension {i} has zero extent"));
    }
    Ok(())
}

fn header(dims: &[usize], dtype: u32) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 8 * dims.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    buf.extend_from_slice(&dtype.to_le_bytes());
    buf
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut buf = header(&t.dims, DTYPE_F32);
    buf.reserve(4 * t.data.len());
    for v in &t.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn encode_mask(m: &BinaryMask) -> Vec<u8> {
    let mut buf = header(&[m.height, m.width], DTYPE_U8);
    buf.extend_from_slice(&m.data);
    buf
}

struct Header {
    dims: Vec<usize>,
    dtype: u32,
    payload_offset: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header, IoError> {
    let format = |reason: String| IoError::Format {
        path: path.to_path_buf(),
        reason,
    };
    let u32_at = |off: usize| -> Result<u32, IoError> {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| format(format!("header ends before byte {}", off + 4)))
    };
    match bytes.get(0..4) {
        Some(m) if m == MAGIC => {}
        Some(m) => return Err(format(format!("bad magic {:?}", String::from_utf8_lossy(m)))),
        None => return Err(format("file shorter than magic".into())),
    }
    let version = u32_at(4)?;
    if version != VERSION {
        return Err(format(format!("unsupported version {version}")));
    }
    let ndim = u32_at(8)? as usize;
    if ndim == 0 {
        return Err(format("ndim is zero".into()));
    }
    let mut off = 12;
    let mut dims = Vec::with_capacity(ndim.min(16));
    for _ in 0..ndim {
        let d = bytes
            .get(off..off + 8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| format(format!("header ends before byte {}", off + 8)))?;
        if d == 0 {
            return Err(format(format!("dimension {} has zero extent", dims.len())));
        }
        dims.push(usize::try_from(d).map_err(|_| format(format!("dimension {d} too large")))?);
        off += 8;
    }
    let dtype = u32_at(off)?;
    if dtype != DTYPE_F32 && dtype != DTYPE_U8 {
        return Err(format(format!("unknown dtype code {dtype}")));
    }
    Ok(Header {
        dims,
        dtype,
        payload_offset: off + 4,
    })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, elem: usize, path: &Path) -> Result<&'a [u8], IoError> {
    let expected = h
        .dims
        .iter()
        .try_fold(elem, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| IoError::Format {
            path: path.to_path_buf(),
            reason: format!("dims {:?} overflow", h.dims),
        })?;
    let actual = bytes.len() - h.payload_offset;
    if actual != expected {
        return Err(IoError::Truncated {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    Ok(&bytes[h.payload_offset..])
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<Tensor, IoError> {
    let h = parse_header(bytes, path)?;
    if h.dtype != DTYPE_F32 {
        return Err(IoError::Format {
            path: path.to_path_buf(),
            reason: format!("expected f32 tensor (dtype 0), found dtype {}", h.dtype),
        });
    }
    let raw = payload(bytes, &h, 4, path)?;
    let data: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(h.dims, data).map_err(|reason| IoError::Validation {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn decode_mask(bytes: &[u8], path: &Path) -> Result<BinaryMask, IoError> {
    let h = parse_header(bytes, path)?;
    if h.dtype != DTYPE_U8 || h.dims.len() != 2 {
        return Err(IoError::Format {
            path: path.to_path_buf(),
            reason: format!(
                "expected 2-d u8 mask (dtype 1), found dtype {} with {} dims",
                h.dtype,
                h.dims.len()
            ),
        });
    }
    let raw = payload(bytes, &h, 1, path)?;
    BinaryMask::new(h.dims[0], h.dims[1], raw.to_vec()).map_err(|reason| IoError::Validation {
        path: path.to_path_buf(),
        reason,
    })
}

/// Writes `bytes` to a sibling temp file and renames it over `dest`.
pub fn write_atomic(dest: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = dest
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = dest
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, dest)
    })();
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(IoError::io(dest, e));
    }
    Ok(())
}

pub fn write_tensor(t: &Tensor, dest: &Path) -> Result<(), IoError> {
    write_atomic(dest, &encode_tensor(t))
}

pub fn read_tensor(src: &Path) -> Result<Tensor, IoError> {
    let bytes = fs::read(src).map_err(|e| IoError::io(src, e))?;
    decode_tensor(&bytes, src)
}

pub fn write_mask(m: &BinaryMask, dest: &Path) -> Result<(), IoError> {
    write_atomic(dest, &encode_mask(m))
}

pub fn read_mask(src: &Path) -> Result<BinaryMask, IoError> {
    let bytes = fs::read(src).map_err(|e| IoError::io(src, e))?;
    decode_mask(&bytes, src)
}

/// One candidate tag and the file holding its embedding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateTag {
    pub tag: String,
    pub embedding_path: PathBuf,
}

/// One image-text pair as listed in a JSON-lines manifest.
///
/// Relative paths resolve against the directory holding the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub sample_id: String,
    pub pixel_embedding_path: PathBuf,
    pub text: String,
    pub text_embedding_path: PathBuf,
    pub candidate_tags: Vec<CandidateTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_tags: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_text_mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_tag_mask_paths: Option<BTreeMap<String, PathBuf>>,
}

const REQUIRED_FIELDS: [&str; 5] = [
    "sample_id",
    "pixel_embedding_path",
    "text",
    "text_embedding_path",
    "candidate_tags",
];

/// A manifest file parsed into samples plus the directory paths resolve against.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub samples: Vec<SampleManifest>,
}

impl Manifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<SampleManifest>, IoError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| IoError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            reason: e.to_string(),
        })?;
        let schema = |field: &str, reason: String| IoError::Schema {
            path: path.to_path_buf(),
            line: lineno,
            field: field.to_string(),
            reason,
        };
        let obj = value
            .as_object()
            .ok_or_else(|| schema("<root>", "line is not a JSON object".into()))?;
        for field in REQUIRED_FIELDS {
            if !obj.contains_key(field) {
                return Err(schema(field, "missing required field".into()));
            }
        }
        let sample: SampleManifest = serde_json::from_value(value.clone()).map_err(|e| {
            let field = REQUIRED_FIELDS
                .iter()
                .chain(["gt_tags", "gt_text_mask_path", "gt_tag_mask_paths"].iter())
                .find(|f| e.to_string().contains(*f))
                .copied()
                .unwrap_or("<unknown>");
            schema(field, e.to_string())
        })?;
        if let Some(gt) = &sample.gt_tags {
            for t in gt {
                if !sample.candidate_tags.iter().any(|c| &c.tag == t) {
                    return Err(schema(
                        "gt_tags",
                        format!("ground-truth tag {t:?} is not a candidate tag"),
                    ));
                }
            }
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn load_manifest(src: &Path) -> Result<Manifest, IoError> {
    let text = fs::read_to_string(src).map_err(|e| IoError::io(src, e))?;
    let samples = parse_manifest(&text, src)?;
    let base_dir = src
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(Manifest { base_dir, samples })
}

pub fn manifest_line(s: &SampleManifest) -> String {
    serde_json::to_string(s).expect("manifest serializes")
}
