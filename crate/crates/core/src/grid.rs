//! Dense `W×H×C` grids of reals and their binary dump format.
//!
//! Storage is channel-planar: all of channel 0 in row-major order, then
//! channel 1, and so on. The dump writes a header of three little-endian
//! `u32` (W, H, C) followed by the values as little-endian `f32` in the same
//! order.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("grid value {value} at index {index} violates {what}")]
    Invariant { what: &'static str, index: usize, value: f64 },
    #[error("channel {channel} out of range ({channels} channels)")]
    BadChannel { channel: usize, channels: usize },
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("malformed grid dump: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width * height * channels] }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self, GridError> {
        if data.len() != width * height * channels {
            return Err(GridError::ShapeMismatch(format!(
                "{} values for a {width}x{height}x{channels} grid",
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    /// Stacks single-plane slices into a multi-channel grid.
    pub fn from_planes(dims: Dims, planes: &[&[f64]]) -> Result<Self, GridError> {
        let mut data = Vec::with_capacity(dims.len() * planes.len());
        for p in planes {
            if p.len() != dims.len() {
                return Err(GridError::ShapeMismatch(format!("plane of {} values for {dims:?}", p.len())));
            }
            data.extend_from_slice(p);
        }
        Ok(Self { width: dims.width, height: dims.height, channels: planes.len(), data })
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &Grid) -> Result<(), GridError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(GridError::ShapeMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[c * self.plane_len() + y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let n = self.plane_len();
        self.data[c * n + y * self.width + x] = v;
    }

    pub fn channel_sum(&self, c: usize) -> f64 {
        self.channel(c).iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Adds `other` into `self` element-wise.
    pub fn accumulate(&mut self, other: &Grid) -> Result<(), GridError> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), GridError> {
        for v in [self.width, self.height, self.channels] {
            let v = u32::try_from(v).map_err(|_| GridError::Malformed("dimension exceeds u32".into()))?;
            w.write_all(&v.to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, GridError> {
        let mut header = [0u8; 12];
        r.read_exact(&mut header)?;
        let dim = |k: usize| u32::from_le_bytes(header[4 * k..4 * k + 4].try_into().unwrap()) as usize;
        let (width, height, channels) = (dim(0), dim(1), dim(2));
        let count = width
            .checked_mul(height)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| GridError::Malformed("dimensions overflow".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != count * 4 {
            return Err(GridError::Malformed(format!(
                "expected {} payload bytes for {width}x{height}x{channels}, found {}",
                count * 4,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Ok(Self { width, height, channels, data })
    }

    pub fn save(&self, path: &Path) -> Result<(), GridError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GridError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
