//! Audio ingestion and the serialized file formats.
//!
//! Three formats live here:
//!
//! * WAV input — RIFF/WAVE, 16-bit integer PCM, mono only. Integer sample
//!   `s` maps to `s / 32768`.
//! * Kernel container (`.lmfc`) — little-endian binary: magic `LMFC`,
//!   version `u32`, tensor count `u32`, then per tensor a `u32` name length,
//!   the UTF-8 name, a `u32` rank, one `u32` per dimension, and the values
//!   as 64-bit IEEE floats in row-major order. Bit-exact round trips are the
//!   point of the format.
//! * Feature CSV — one frame per line, each coefficient printed with 17
//!   significant digits so it survives a decimal round trip.

use crate::error::{Error, Result};
use crate::kernels::{KernelSet, MfccConfig};
use crate::linalg::Mat;
use crate::pipeline::FeatureMatrix;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

/// Magic bytes opening a kernel container.
pub const CONTAINER_MAGIC: [u8; 4] = *b"LMFC";
/// Current container format version.
pub const CONTAINER_VERSION: u32 = 1;

/// A mono audio signal with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    /// Validating constructor: non-empty, in-range samples, positive rate.
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArg { op: "waveform", reason: "no samples".into() });
        }
        if sample_rate_hz == 0 {
            return Err(Error::InvalidArg {
                op: "waveform",
                reason: "sample rate must be positive".into(),
            });
        }
        for (i, &s) in samples.iter().enumerate() {
            if !(-1.0..=1.0).contains(&s) {
                return Err(Error::InvalidArg {
                    op: "waveform",
                    reason: format!("sample {i} = {s} outside [-1, 1]"),
                });
            }
        }
        Ok(Waveform { samples, sample_rate_hz })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// One named tensor inside a container.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f64>,
}

/// Generic tensor container backing kernel serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelContainer {
    pub format_version: u32,
    pub tensors: Vec<NamedTensor>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

/// Read a mono 16-bit PCM WAV file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let trunc = || Error::TruncatedWav { path: path.to_path_buf() };

    if bytes.len() < 12 {
        return Err(trunc());
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::NotRiffWave { path: path.to_path_buf() });
    }

    let mut sample_rate = 0u32;
    let mut fmt_seen = false;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(trunc());
                }
                let f = &bytes[body..];
                let format_tag = u16::from_le_bytes([f[0], f[1]]);
                let channels = u16::from_le_bytes([f[2], f[3]]);
                sample_rate = u32::from_le_bytes([f[4], f[5], f[6], f[7]]);
                let bits_per_sample = u16::from_le_bytes([f[14], f[15]]);
                if format_tag != 1 || bits_per_sample != 16 {
                    return Err(Error::NotPcm16 { format_tag, bits_per_sample });
                }
                if channels != 1 {
                    return Err(Error::MultiChannel { channels });
                }
                fmt_seen = true;
            }
            b"data" => {
                if !fmt_seen {
                    return Err(trunc());
                }
                if body + size > bytes.len() {
                    return Err(trunc());
                }
                let samples: Vec<f64> = bytes[body..body + size]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return Waveform::new(samples, sample_rate);
            }
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body + size + (size & 1);
    }
    Err(trunc())
}

const KERNEL_TENSOR_NAMES: [&str; 5] = ["window", "dft_real", "dft_imag", "melbank", "dct"];
const CONFIG_TENSOR_NAME: &str = "config";
const CONFIG_FIELDS: usize = 10;

fn config_to_values(cfg: &MfccConfig) -> Vec<f64> {
    vec![
        cfg.sample_rate_hz as f64,
        cfg.frame_len as f64,
        cfg.frame_shift as f64,
        cfg.fft_size as f64,
        cfg.num_filters as f64,
        cfg.fmin_hz,
        cfg.fmax_hz,
        cfg.preemph,
        cfg.log_floor,
        cfg.sad_fraction,
    ]
}

fn config_from_values(v: &[f64]) -> Result<MfccConfig> {
    if v.len() != CONFIG_FIELDS {
        return Err(Error::TensorShape {
            name: CONFIG_TENSOR_NAME.into(),
            expected: vec![CONFIG_FIELDS],
            found: vec![v.len() as u32],
        });
    }
    let cfg = MfccConfig {
        sample_rate_hz: v[0] as u32,
        frame_len: v[1] as usize,
        frame_shift: v[2] as usize,
        fft_size: v[3] as usize,
        num_filters: v[4] as usize,
        fmin_hz: v[5],
        fmax_hz: v[6],
        preemph: v[7],
        log_floor: v[8],
        sad_fraction: v[9],
    };
    cfg.validate()?;
    Ok(cfg)
}

impl KernelContainer {
    pub fn from_kernel_set(ks: &KernelSet) -> Self {
        let mat_tensor = |name: &str, m: &Mat| NamedTensor {
            name: name.into(),
            dims: vec![m.rows() as u32, m.cols() as u32],
            data: m.data().to_vec(),
        };
        KernelContainer {
            format_version: CONTAINER_VERSION,
            tensors: vec![
                NamedTensor {
                    name: "window".into(),
                    dims: vec![ks.window.len() as u32],
                    data: ks.window.clone(),
                },
                mat_tensor("dft_real", &ks.dft_real),
                mat_tensor("dft_imag", &ks.dft_imag),
                mat_tensor("melbank", &ks.melbank),
                mat_tensor("dct", &ks.dct),
                NamedTensor {
                    name: CONFIG_TENSOR_NAME.into(),
                    dims: vec![CONFIG_FIELDS as u32],
                    data: config_to_values(&ks.config),
                },
            ],
        }
    }

    pub fn find(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn require(&self, name: &str) -> Result<&NamedTensor> {
        self.find(name).ok_or_else(|| Error::MissingTensor { name: name.into() })
    }

    pub fn into_kernel_set(self) -> Result<KernelSet> {
        for name in KERNEL_TENSOR_NAMES {
            self.require(name)?;
        }
        let config = config_from_values(&self.require(CONFIG_TENSOR_NAME)?.data)?;

        let matrix = |name: &str, rows: usize, cols: usize| -> Result<Mat> {
            let t = self.require(name)?;
            if t.dims != [rows as u32, cols as u32] {
                return Err(Error::TensorShape {
                    name: name.into(),
                    expected: vec![rows, cols],
                    found: t.dims.clone(),
                });
            }
            Ok(Mat::from_vec(rows, cols, t.data.clone()))
        };

        let window_t = self.require("window")?;
        if window_t.dims != [config.frame_len as u32] {
            return Err(Error::TensorShape {
                name: "window".into(),
                expected: vec![config.frame_len],
                found: window_t.dims.clone(),
            });
        }
        let n = config.fft_size;
        let ks = KernelSet {
            window: window_t.data.clone(),
            dft_real: matrix("dft_real", n, n)?,
            dft_imag: matrix("dft_imag", n, n)?,
            melbank: matrix("melbank", config.num_filters, config.num_bins())?,
            dct: matrix("dct", config.num_ceps(), config.num_ceps())?,
            config,
        };
        ks.validate()?;
        Ok(ks)
    }
}

/// Serialize a container to the LMFC binary format.
pub fn write_container(container: &KernelContainer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let res = (|| -> std::io::Result<()> {
        w.write_all(&CONTAINER_MAGIC)?;
        w.write_all(&container.format_version.to_le_bytes())?;
        w.write_all(&(container.tensors.len() as u32).to_le_bytes())?;
        for t in &container.tensors {
            w.write_all(&(t.name.len() as u32).to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            w.write_all(&(t.dims.len() as u32).to_le_bytes())?;
            for &d in &t.dims {
                w.write_all(&d.to_le_bytes())?;
            }
            for &v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    })();
    res.map_err(io_err(path))
}

/// Parse an LMFC container, checking magic, version, name uniqueness, and
/// dims/data consistency.
pub fn read_container(path: impl AsRef<Path>) -> Result<KernelContainer> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if magic != CONTAINER_MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let format_version = read_u32(&mut r, path)?;
    if format_version != CONTAINER_VERSION {
        return Err(Error::VersionMismatch { found: format_version, expected: CONTAINER_VERSION });
    }
    let count = read_u32(&mut r, path)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r, path)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(io_err(path))?;
        let name = String::from_utf8(name_bytes).map_err(|_| Error::ShapeMismatch {
            op: "read_container",
            detail: "tensor name is not valid UTF-8".into(),
        })?;
        let ndim = read_u32(&mut r, path)? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(read_u32(&mut r, path)?);
        }
        let len = dims.iter().map(|&d| d as usize).product::<usize>();
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf).map_err(io_err(path))?;
            data.push(f64::from_le_bytes(buf));
        }
        if tensors.iter().any(|t: &NamedTensor| t.name == name) {
            return Err(Error::DuplicateTensor { name });
        }
        tensors.push(NamedTensor { name, dims, data });
    }
    Ok(KernelContainer { format_version, tensors })
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(io_err(path))?;
    Ok(u32::from_le_bytes(buf))
}

/// Write a [`KernelSet`] to an LMFC container file.
pub fn write_kernels(ks: &KernelSet, path: impl AsRef<Path>) -> Result<()> {
    write_container(&KernelContainer::from_kernel_set(ks), path)
}

/// Load a [`KernelSet`], requiring all five kernel tensors plus the config.
pub fn read_kernels(path: impl AsRef<Path>) -> Result<KernelSet> {
    read_container(path)?.into_kernel_set()
}

/// Write features as CSV, one frame per line, 17 significant digits.
pub fn write_features(fm: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    for t in 0..fm.num_frames() {
        for (j, &v) in fm.frame(t).iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { what: "feature", row: t, col: j });
            }
        }
    }
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let res = (|| -> std::io::Result<()> {
        let mut line = String::new();
        for t in 0..fm.num_frames() {
            line.clear();
            for (j, &v) in fm.frame(t).iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{v:.16e}"));
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        w.flush()
    })();
    res.map_err(io_err(path))
}

/// Parse a feature CSV back into a matrix (used by tooling and tests).
pub fn read_features(path: impl AsRef<Path>, frame_shift_s: f64) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.parse::<f64>().map_err(|e| Error::ScoreParse {
                    line: i + 1,
                    reason: format!("bad float '{f}': {e}"),
                })
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    FeatureMatrix::from_rows(rows, frame_shift_s)
}

/// Append an extension to a path, keeping any existing one.
pub fn with_extension(path: &Path, ext: &str) -> PathBuf {
    let mut p = path.to_path_buf();
    let new_ext = match p.extension() {
        Some(old) => format!("{}.{ext}", old.to_string_lossy()),
        None => ext.to_string(),
    };
    p.set_extension(new_ext);
    p
}
