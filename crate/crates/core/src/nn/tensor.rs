use crate::error::{Error, Result};
use crate::field::Field;

/// A batch of fields, laid out `[sample][channel][row][col]`.
///
/// One sample is exactly the storage of a [`Field`], so conversion in either direction is a
/// copy of contiguous blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::invalid(format!(
                "tensor data length {} does not match {n}x{c}x{h}x{w}",
                data.len()
            )));
        }
        Ok(Tensor { n, c, h, w, data })
    }

    /// Stacks same-shaped fields into a batch.
    pub fn from_fields<'a>(fields: impl IntoIterator<Item = &'a Field>) -> Result<Self> {
        let mut it = fields.into_iter().peekable();
        let first = it.peek().ok_or_else(|| Error::invalid("empty batch"))?;
        let (h, w, c) = first.shape();
        let mut data = Vec::new();
        let mut n = 0;
        for f in it {
            if f.shape() != (h, w, c) {
                return Err(Error::invalid(format!(
                    "batch sample {n} has shape {:?}, expected {:?}",
                    f.shape(),
                    (h, w, c)
                )));
            }
            data.extend_from_slice(f.as_slice());
            n += 1;
        }
        Ok(Tensor { n, c, h, w, data })
    }

    pub fn to_fields(&self) -> Result<Vec<Field>> {
        self.data
            .chunks_exact(self.sample_len())
            .map(|s| Field::from_vec(self.h, self.w, self.c, s.to_vec()))
            .collect()
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let l = self.sample_len();
        &self.data[i * l..(i + 1) * l]
    }

    /// Copy of channels `start..end` of every sample.
    pub fn channels(&self, start: usize, end: usize) -> Tensor {
        let p = self.plane();
        let mut out = Tensor::zeros(self.n, end - start, self.h, self.w);
        for (dst, src) in out
            .data
            .chunks_exact_mut((end - start) * p)
            .zip(self.data.chunks_exact(self.sample_len()))
        {
            dst.copy_from_slice(&src[start * p..end * p]);
        }
        out
    }

    /// Concatenates along the channel axis.
    pub fn concat(parts: &[&Tensor]) -> Tensor {
        let (n, h, w) = (parts[0].n, parts[0].h, parts[0].w);
        let c: usize = parts.iter().map(|t| t.c).sum();
        let mut data = Vec::with_capacity(n * c * h * w);
        for i in 0..n {
            for t in parts {
                data.extend_from_slice(t.sample(i));
            }
        }
        Tensor { n, c, h, w, data }
    }

    /// Adds `src` into channels `start..start + src.c`.
    pub fn add_channels(&mut self, start: usize, src: &Tensor) {
        let p = self.plane();
        let sl = self.sample_len();
        for (dst, s) in self.data.chunks_exact_mut(sl).zip(src.data.chunks_exact(src.sample_len())) {
            for (d, v) in dst[start * p..(start + src.c) * p].iter_mut().zip(s) {
                *d += v;
            }
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}
