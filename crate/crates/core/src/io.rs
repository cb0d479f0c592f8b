//! TOMO tensor files and windowed PNG export.
//!
//! Layout: `b"TOMO"`, then little-endian `u32` version (1), `u32` dtype
//! (1 = f32, 2 = f64), `u32` rows, `u32` cols, then the row-major payload.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, TomoError};
use crate::tensor::{Real, Tensor2D};

pub const MAGIC: &[u8; 4] = b"TOMO";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

/// A tensor loaded with whatever dtype the file declares.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor2D<f32>),
    F64(Tensor2D<f64>),
}

impl AnyTensor {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            AnyTensor::F32(t) => t.dims(),
            AnyTensor::F64(t) => t.dims(),
        }
    }

    /// Converts to the requested precision; lossless when the dtypes agree.
    pub fn into_real<T: Real>(self) -> Tensor2D<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode_tensor<T: Real>(t: &Tensor2D<T>) -> Result<Vec<u8>> {
    t.ensure_finite()?;
    let mut out = Vec::with_capacity(HEADER_LEN + t.len() * T::BYTES);
    out.extend_from_slice(MAGIC);
    for word in [VERSION, T::DTYPE_CODE, t.rows() as u32, t.cols() as u32] {
        out.extend_from_slice(&word.to_le_bytes());
    }
    for &v in t.as_slice() {
        v.write_le(&mut out);
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<AnyTensor> {
    if bytes.len() < 4 {
        return Err(TomoError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let mut found = [0u8; 4];
    found.copy_from_slice(&bytes[..4]);
    if &found != MAGIC {
        return Err(TomoError::BadMagic { found });
    }
    if bytes.len() < HEADER_LEN {
        return Err(TomoError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != VERSION {
        return Err(TomoError::UnsupportedVersion(version));
    }
    let (dtype, rows, cols) = (word(1), word(2) as usize, word(3) as usize);
    match dtype {
        1 => decode_payload::<f32>(&bytes[HEADER_LEN..], rows, cols).map(AnyTensor::F32),
        2 => decode_payload::<f64>(&bytes[HEADER_LEN..], rows, cols).map(AnyTensor::F64),
        other => Err(TomoError::UnknownDtype(other)),
    }
}

fn decode_payload<T: Real>(payload: &[u8], rows: usize, cols: usize) -> Result<Tensor2D<T>> {
    let expected = rows * cols * T::BYTES;
    if payload.len() < expected {
        return Err(TomoError::Truncated {
            expected: HEADER_LEN + expected,
            found: HEADER_LEN + payload.len(),
        });
    }
    let data = payload[..expected]
        .chunks_exact(T::BYTES)
        .map(T::read_le)
        .collect();
    let t = Tensor2D::from_vec(rows, cols, data)?;
    t.ensure_finite()?;
    Ok(t)
}

pub fn save_tensor<T: Real>(t: &Tensor2D<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(t)?;
    std::fs::write(path, bytes).map_err(|e| TomoError::io(path, e))
}

pub fn load_any(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| TomoError::io(path, e))?;
    decode_tensor(&bytes)
}

/// Loads a TOMO file, converting to `T` if the stored dtype differs.
pub fn load_tensor<T: Real>(path: impl AsRef<Path>) -> Result<Tensor2D<T>> {
    load_any(path).map(AnyTensor::into_real)
}

/// Display window in the tensor's own units (HU or mm^-1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    center: f64,
    width: f64,
}

impl WindowSpec {
    pub fn new(center: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) || !center.is_finite() || !width.is_finite() {
            return Err(TomoError::InvalidConfig(format!(
                "window width must be positive and finite, got center {center}, width {width}"
            )));
        }
        Ok(WindowSpec { center, width })
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// Gray level for `v`, rounding half up.
    pub fn gray(&self, v: f64) -> u8 {
        let lo = self.center - self.width / 2.0;
        let x = ((v - lo) / self.width).clamp(0.0, 1.0);
        (x * 255.0 + 0.5).floor() as u8
    }
}

pub fn window_to_gray<T: Real>(t: &Tensor2D<T>, w: WindowSpec) -> Vec<u8> {
    t.as_slice().iter().map(|v| w.gray(v.f64())).collect()
}

pub fn export_png<T: Real>(t: &Tensor2D<T>, w: WindowSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e: std::io::Error| TomoError::io(path, e);
    let file = File::create(path).map_err(io_err)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), t.cols() as u32, t.rows() as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| match e {
        png::EncodingError::IoError(e) => io_err(e),
        other => io_err(std::io::Error::other(other)),
    };
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer
        .write_image_data(&window_to_gray(t, w))
        .map_err(to_io)?;
    writer.finish().map_err(to_io)?;
    Ok(())
}

/// Writes `contents` atomically enough for CLI use: create, write, flush.
pub(crate) fn write_text(path: &Path, contents: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| TomoError::io(path, e))?;
    f.write_all(contents.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| TomoError::io(path, e))
}
