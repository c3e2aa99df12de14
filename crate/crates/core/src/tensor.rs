//! Dense row-major tensors, the numeric precision switch, and the SOMT
//! binary format used for checkpoints, datasets and attention-map export.

use std::cell::Cell;
use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Storage precision for values produced by tape operations.
///
/// Arithmetic is carried in `f64`. In [`Precision::F32`] mode every op output
/// is rounded to the nearest `f32`, so all stored activations and parameters
/// are exactly representable in 32 bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl Precision {
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            Precision::F64 => v,
            Precision::F32 => v as f32 as f64,
        }
    }

    pub fn round_slice(self, data: &mut [f64]) {
        if self == Precision::F32 {
            for v in data {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "f64" | "64" => Some(Precision::F64),
            "f32" | "32" => Some(Precision::F32),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        }
    }
}

thread_local! {
    static PRECISION: Cell<Precision> = const { Cell::new(Precision::F64) };
}

/// Current precision mode of this thread. Tapes capture it at construction.
pub fn precision() -> Precision {
    PRECISION.with(|p| p.get())
}

pub fn set_precision(p: Precision) {
    PRECISION.with(|c| c.set(p));
}

/// Sets the precision mode and restores the previous one on drop.
pub struct PrecisionGuard {
    previous: Precision,
}

impl PrecisionGuard {
    pub fn new(p: Precision) -> Self {
        let previous = precision();
        set_precision(p);
        PrecisionGuard { previous }
    }
}

impl Drop for PrecisionGuard {
    fn drop(&mut self) {
        set_precision(self.previous);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} holds {} values but {} were given",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {:?}", self.shape, shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Number of rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        let mut off = 0;
        for (i, (&ix, &ext)) in index.iter().zip(&self.shape).enumerate() {
            debug_assert!(ix < ext, "index {ix} out of range on axis {i}");
            off = off * ext + ix;
        }
        self.data[off]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_somt<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(b"SOMT")?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &e in &self.shape {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_somt<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"SOMT" {
            return Err(Error::Format(format!("bad tensor magic {magic:?}")));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let rank = u32::from_le_bytes(word) as usize;
        if rank > 16 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut word)?;
            shape.push(u32::from_le_bytes(word) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(Tensor { shape, data })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_somt(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Tensor::read_somt(&mut f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn somt_layout_is_little_endian() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        t.write_somt(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SOMT");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &2u32.to_le_bytes());
        assert_eq!(&buf[16..20], &1.0f32.to_le_bytes());
        assert_eq!(&buf[20..24], &(-2.5f32).to_le_bytes());
        assert_eq!(buf.len(), 24);
    }

    #[test]
    fn somt_rejects_bad_magic() {
        let buf = b"SOMX\0\0\0\0".to_vec();
        assert!(matches!(Tensor::read_somt(&mut &buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0, 3], vec![]).is_ok());
    }

    #[test]
    fn precision_guard_restores() {
        assert_eq!(precision(), Precision::F64);
        {
            let _g = PrecisionGuard::new(Precision::F32);
            assert_eq!(precision(), Precision::F32);
            assert_eq!(Precision::F32.round(0.1), 0.1f32 as f64);
        }
        assert_eq!(precision(), Precision::F64);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn somt_round_trip_is_exact_for_f32_values(
                dims in proptest::collection::vec(1usize..5, 0..4),
                seed in any::<u64>(),
            ) {
                let n: usize = dims.iter().product();
                let mut s = seed;
                let data: Vec<f64> = (0..n).map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((s >> 40) as f32 / 1000.0 - 5000.0) as f64
                }).collect();
                let t = Tensor::new(dims, data).unwrap();
                let mut buf = Vec::new();
                t.write_somt(&mut buf).unwrap();
                let back = Tensor::read_somt(&mut &buf[..]).unwrap();
                prop_assert_eq!(back, t);
            }
        }
    }
}
