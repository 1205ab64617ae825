use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
///
/// A `Tensor` is a plain value. Differentiation state (node identity,
/// gradient, `requires_grad`) lives in the [`Graph`](super::Graph) that a
/// tensor is recorded into, not in the tensor itself.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if let Some(axis) = shape.iter().position(|&d| d == 0) {
            return Err(Error::shape(
                "tensor",
                "extent",
                format!("axis {axis} of {shape:?} is zero"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                "length",
                format!("shape {shape:?} holds {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// Rank-0 tensor.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.data)
    }

    /// Order-sensitive checksum of the raw bits, for cheap equality probes.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.data {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    /// Writes `rank: u32`, `extents: u64 * rank`, then the values, all little-endian.
    pub fn write_le<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_le<R: Read>(r: &mut R) -> Result<Tensor> {
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let rank = u32::from_le_bytes(b4) as usize;
        if rank > 8 {
            return Err(Error::invalid(format!("tensor rank {rank} is implausible")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut b8 = [0u8; 8];
        for _ in 0..rank {
            r.read_exact(&mut b8)?;
            shape.push(u64::from_le_bytes(b8) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(&shape, data)
    }

    /// Number of bytes [`write_le`](Self::write_le) produces.
    pub fn encoded_len(&self) -> usize {
        4 + 8 * self.shape.len() + 8 * self.data.len()
    }
}

/// Inverse of pixel shuffle: `[N, C, nH, nW] -> [N, C*n*n, H, W]`.
pub fn space_to_depth(input: &Tensor, n: usize) -> Result<Tensor> {
    if input.rank() != 4 {
        return Err(Error::shape("space_to_depth", "rank", format!("{:?}", input.shape())));
    }
    let (b, c, hh, ww) = (input.dim(0), input.dim(1), input.dim(2), input.dim(3));
    if n == 0 || hh % n != 0 || ww % n != 0 {
        return Err(Error::shape(
            "space_to_depth",
            "spatial",
            format!("{hh}x{ww} not divisible by {n}"),
        ));
    }
    let (h, w) = (hh / n, ww / n);
    let mut out = vec![0.0; input.len()];
    let src = input.data();
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..n {
                for j in 0..n {
                    let oc = ci * n * n + i * n + j;
                    for y in 0..h {
                        for x in 0..w {
                            out[((bi * c * n * n + oc) * h + y) * w + x] =
                                src[((bi * c + ci) * hh + y * n + i) * ww + x * n + j];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[b, c * n * n, h, w], out)
}
