//! The stack container: a JSON sidecar `<name>.json` plus a raw payload
//! `<name>.f32` of little-endian 32-bit floats, frame-major.

use std::fs;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stack::{validate_energies, ImageStack, DEFAULT_PEAK};

pub const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub dtype: String,
    #[serde(default = "default_peak")]
    pub peak: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energies: Option<Vec<f64>>,
}

fn default_peak() -> f64 {
    DEFAULT_PEAK
}

impl Sidecar {
    pub fn for_stack(stack: &ImageStack) -> Self {
        Self {
            width: stack.width(),
            height: stack.height(),
            frames: stack.frames(),
            dtype: DTYPE.to_string(),
            peak: stack.peak(),
            energies: stack.energies().map(<[f64]>::to_vec),
        }
    }

    pub fn values(&self) -> usize {
        self.width * self.height * self.frames
    }
}

/// Strips a `.json` / `.f32` extension so that either file (or the bare
/// prefix) names the container.
pub fn container_prefix(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("f32") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    with_suffix(&container_prefix(path), ".json")
}

pub fn payload_path(path: &Path) -> PathBuf {
    with_suffix(&container_prefix(path), ".f32")
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let json_path = sidecar_path(path);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Header {
        path: json_path.clone(),
        message: e.to_string(),
    })?;
    if header.dtype != DTYPE {
        return Err(Error::Header {
            path: json_path,
            message: format!("unsupported dtype {:?}, expected {DTYPE:?}", header.dtype),
        });
    }
    if header.width == 0 || header.height == 0 || header.frames == 0 {
        return Err(Error::Header {
            path: json_path,
            message: "dimensions must be positive".into(),
        });
    }
    if !(header.peak.is_finite() && header.peak > 0.0) {
        return Err(Error::Header {
            path: json_path,
            message: format!("peak must be positive, got {}", header.peak),
        });
    }
    if let Some(e) = &header.energies {
        validate_energies(e, header.frames)?;
    }
    Ok(header)
}

fn write_sidecar(path: &Path, header: &Sidecar) -> Result<()> {
    let json_path = sidecar_path(path);
    let mut text = serde_json::to_string_pretty(header)?;
    text.push('\n');
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
}

pub fn load_stack(path: &Path) -> Result<ImageStack> {
    let header = read_sidecar(path)?;
    let raw_path = payload_path(path);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = header.values();
    if bytes.len() as u64 != expected as u64 * 4 {
        return Err(Error::SizeMismatch {
            expected,
            found_bytes: bytes.len() as u64,
        });
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let mut stack = ImageStack::new(header.width, header.height, header.frames, data)?
        .with_peak(header.peak)?;
    if let Some(e) = header.energies {
        stack = stack.with_energies(e)?;
    }
    Ok(stack)
}

pub fn save_stack(stack: &ImageStack, path: &Path) -> Result<()> {
    let prefix = container_prefix(path);
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_sidecar(&prefix, &Sidecar::for_stack(stack))?;
    let raw_path = payload_path(&prefix);
    let file = fs::File::create(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let mut w = BufWriter::new(file);
    for v in stack.data() {
        w.write_all(&(*v as f32).to_le_bytes())
            .map_err(|e| Error::io(&raw_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&raw_path, e))
}

/// Reads frames of a stored stack without loading the whole payload.
pub struct FrameReader {
    header: Sidecar,
    file: fs::File,
    path: PathBuf,
}

impl FrameReader {
    pub fn open(path: &Path) -> Result<Self> {
        let header = read_sidecar(path)?;
        let raw_path = payload_path(path);
        let file = fs::File::open(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
        let len = file
            .metadata()
            .map_err(|e| Error::io(&raw_path, e))?
            .len();
        if len != header.values() as u64 * 4 {
            return Err(Error::SizeMismatch {
                expected: header.values(),
                found_bytes: len,
            });
        }
        Ok(Self {
            header,
            file,
            path: raw_path,
        })
    }

    pub fn header(&self) -> &Sidecar {
        &self.header
    }

    /// Reads `count` frames starting at `first` into `out` (resized as needed).
    pub fn read_frames(&mut self, first: usize, count: usize, out: &mut Vec<f64>) -> Result<()> {
        let px = self.header.width * self.header.height;
        if first + count > self.header.frames {
            return Err(Error::Dimension(format!(
                "frames {first}..{} out of range",
                first + count
            )));
        }
        let mut bytes = vec![0u8; px * count * 4];
        self.file
            .seek(SeekFrom::Start((first * px * 4) as u64))
            .map_err(|e| Error::io(&self.path, e))?;
        self.file
            .read_exact(&mut bytes)
            .map_err(|e| Error::io(&self.path, e))?;
        out.clear();
        out.reserve(px * count);
        for (i, b) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    index: first * px + i,
                });
            }
            out.push(v);
        }
        Ok(())
    }
}

/// Writes a stack container frame by frame.
pub struct FrameWriter {
    header: Sidecar,
    writer: BufWriter<fs::File>,
    path: PathBuf,
    written: usize,
}

impl FrameWriter {
    pub fn create(path: &Path, header: Sidecar) -> Result<Self> {
        let prefix = container_prefix(path);
        if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_sidecar(&prefix, &header)?;
        let raw_path = payload_path(&prefix);
        let file = fs::File::create(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
        Ok(Self {
            header,
            writer: BufWriter::new(file),
            path: raw_path,
            written: 0,
        })
    }

    pub fn write_frame(&mut self, frame: &[f64]) -> Result<()> {
        let px = self.header.width * self.header.height;
        if frame.len() != px || self.written >= self.header.frames {
            return Err(Error::Dimension("frame does not fit container".into()));
        }
        for v in frame {
            self.writer
                .write_all(&(*v as f32).to_le_bytes())
                .map_err(|e| Error::io(&self.path, e))?;
        }
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.header.frames {
            return Err(Error::Dimension(format!(
                "wrote {} of {} frames",
                self.written, self.header.frames
            )));
        }
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}
