//! Dense rank-3 fields and paired datasets.
//!
//! Storage is channel-major: entry `(c, r, k)` lives at `c * rows * cols + r * cols + k`,
//! so one channel of a field is a contiguous `rows * cols` slice.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, FormatError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn new(rows: usize, cols: usize, channels: usize, fill: f64) -> Result<Self> {
        check_dims(rows, cols, channels)?;
        if !fill.is_finite() {
            return Err(Error::invalid("fill value must be finite"));
        }
        Ok(Field {
            rows,
            cols,
            channels,
            data: vec![fill; rows * cols * channels],
        })
    }

    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Result<Self> {
        Self::new(rows, cols, channels, 0.0)
    }

    /// Wraps an existing channel-major buffer.
    pub fn from_vec(rows: usize, cols: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(rows, cols, channels)?;
        if data.len() != rows * cols * channels {
            return Err(Error::invalid(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                rows,
                cols,
                channels
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite entry at flat index {i}")));
        }
        Ok(Field {
            rows,
            cols,
            channels,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(rows, cols, channels)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (channel * self.rows + row) * self.cols + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[self.index(row, col, channel)]
    }

    /// Sets one entry. Non-finite values are rejected to keep the field finite.
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::invalid("non-finite value"));
        }
        let i = self.index(row, col, channel);
        self.data[i] = value;
        Ok(())
    }

    pub fn channel_slice(&self, channel: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.data[channel * n..(channel + 1) * n]
    }

    /// Copies out one channel as a single-channel field.
    pub fn channel(&self, channel: usize) -> Result<Field> {
        if channel >= self.channels {
            return Err(Error::invalid(format!(
                "channel {channel} out of range ({} channels)",
                self.channels
            )));
        }
        Ok(Field {
            rows: self.rows,
            cols: self.cols,
            channels: 1,
            data: self.channel_slice(channel).to_vec(),
        })
    }

    /// Concatenates fields along the channel axis.
    pub fn stack(parts: &[Field]) -> Result<Field> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero fields"))?;
        let (rows, cols) = (first.rows, first.cols);
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if p.rows != rows || p.cols != cols {
                return Err(Error::invalid(format!(
                    "spatial mismatch: {}x{} vs {}x{}",
                    p.rows, p.cols, rows, cols
                )));
            }
            data.extend_from_slice(&p.data);
            channels += p.channels;
        }
        Ok(Field {
            rows,
            cols,
            channels,
            data,
        })
    }

    /// Elementwise map; fails if the result is not finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Field> {
        Field::from_vec(
            self.rows,
            self.cols,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// One channel as `rows` lines of `cols` comma-separated values.
    pub fn to_csv(&self, channel: usize) -> Result<String> {
        if channel >= self.channels {
            return Err(Error::invalid(format!("channel {channel} out of range")));
        }
        let mut out = String::with_capacity(self.rows * self.cols * 24);
        for r in 0..self.rows {
            for c in 0..self.cols {
                if c > 0 {
                    out.push(',');
                }
                write!(out, "{:e}", self.get(r, c, channel)).unwrap();
            }
            out.push('\n');
        }
        Ok(out)
    }
}

fn check_dims(rows: usize, cols: usize, channels: usize) -> Result<()> {
    if rows == 0 || cols == 0 || channels == 0 {
        return Err(Error::invalid(format!(
            "field dimensions must be positive, got {rows}x{cols}x{channels}"
        )));
    }
    Ok(())
}

/// Paired input/output fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Field>,
    outputs: Vec<Field>,
    pub names_in: Vec<String>,
    pub names_out: Vec<String>,
    pub seed: u64,
}

pub const FRDS_MAGIC: [u8; 4] = *b"FRDS";
const FRDS_VERSION: u32 = 1;
const NAMES_TAG: [u8; 4] = *b"NAME";
const FRDS_HEADER_LEN: usize = 4 + 8 * 4 + 8;

impl Dataset {
    pub fn new(
        inputs: Vec<Field>,
        outputs: Vec<Field>,
        names_in: Vec<String>,
        names_out: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != outputs.len() {
            return Err(Error::invalid(format!(
                "need N >= 1 paired samples, got {} inputs and {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        let si = inputs[0].shape();
        let so = outputs[0].shape();
        if let Some(i) = inputs.iter().position(|f| f.shape() != si) {
            return Err(Error::invalid(format!("input {i} has a different shape")));
        }
        if let Some(i) = outputs.iter().position(|f| f.shape() != so) {
            return Err(Error::invalid(format!("output {i} has a different shape")));
        }
        if names_in.len() != si.2 || names_out.len() != so.2 {
            return Err(Error::invalid("channel names do not match channel counts"));
        }
        Ok(Dataset {
            inputs,
            outputs,
            names_in,
            names_out,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Field] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[Field] {
        &self.outputs
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.inputs[0].shape()
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        self.outputs[0].shape()
    }

    /// A new dataset holding the samples at `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            indices.iter().map(|&i| self.outputs[i].clone()).collect(),
            self.names_in.clone(),
            self.names_out.clone(),
            self.seed,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (h, w, cin) = self.input_shape();
        let (ho, wo, cout) = self.output_shape();
        let n = self.len();
        let payload = n * (h * w * cin + ho * wo * cout) * 8;
        let mut buf = Vec::with_capacity(FRDS_HEADER_LEN + payload + 64);
        buf.extend_from_slice(&FRDS_MAGIC);
        for v in [FRDS_VERSION, n as u32, h as u32, w as u32, cin as u32, ho as u32, wo as u32, cout as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&self.seed.to_le_bytes());
        for f in self.inputs.iter().chain(&self.outputs) {
            for v in f.as_slice() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let names = serde_json::json!({ "in": self.names_in, "out": self.names_out }).to_string();
        buf.extend_from_slice(&NAMES_TAG);
        buf.extend_from_slice(&(names.len() as u32).to_le_bytes());
        buf.extend_from_slice(names.as_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
        let mut rd = ByteReader::new(bytes);
        let magic = rd.magic()?;
        if magic != FRDS_MAGIC {
            return Err(FormatError::BadMagic {
                expected: FRDS_MAGIC,
                found: magic,
            }
            .into());
        }
        let version = rd.u32()?;
        if version != FRDS_VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let mut dims = [0usize; 7];
        for d in dims.iter_mut() {
            *d = rd.u32()? as usize;
        }
        let [n, h, w, cin, ho, wo, cout] = dims;
        let seed = rd.u64()?;
        if n == 0 || [h, w, cin, ho, wo, cout].contains(&0) {
            return Err(FormatError::ShapeMismatch(format!(
                "zero dimension in header: N={n} in={h}x{w}x{cin} out={ho}x{wo}x{cout}"
            ))
            .into());
        }
        let in_len = h * w * cin;
        let out_len = ho * wo * cout;
        let needed = n * (in_len + out_len) * 8;
        if rd.remaining() < needed {
            return Err(FormatError::Truncated {
                needed,
                available: rd.remaining(),
            }
            .into());
        }
        let mut read_fields = |len: usize, r: usize, c: usize, ch: usize| -> Result<Vec<Field>> {
            (0..n)
                .map(|_| {
                    let data = rd.f64s(len)?;
                    Field::from_vec(r, c, ch, data).map_err(|e| {
                        Error::from(FormatError::Malformed(format!("payload: {e}")))
                    })
                })
                .collect()
        };
        let inputs = read_fields(in_len, h, w, cin)?;
        let outputs = read_fields(out_len, ho, wo, cout)?;
        let (names_in, names_out) = if rd.remaining() == 0 {
            (default_names("x", cin), default_names("y", cout))
        } else {
            let tag = rd.magic()?;
            if tag != NAMES_TAG {
                return Err(FormatError::TrailingBytes(rd.remaining() + 4).into());
            }
            let len = rd.u32()? as usize;
            let raw = rd.bytes(len)?;
            if rd.remaining() != 0 {
                return Err(FormatError::TrailingBytes(rd.remaining()).into());
            }
            parse_names(raw, cin, cout)?
        };
        Dataset::new(inputs, outputs, names_in, names_out, seed)
            .map_err(|e| FormatError::ShapeMismatch(e.to_string()).into())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Dataset> {
        Dataset::from_bytes(&fs::read(path)?)
    }
}

fn default_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn parse_names(raw: &[u8], cin: usize, cout: usize) -> Result<(Vec<String>, Vec<String>)> {
    #[derive(serde::Deserialize)]
    struct Names {
        #[serde(rename = "in")]
        names_in: Vec<String>,
        #[serde(rename = "out")]
        names_out: Vec<String>,
    }
    let names: Names = serde_json::from_slice(raw)
        .map_err(|e| FormatError::Malformed(format!("channel names: {e}")))?;
    if names.names_in.len() != cin || names.names_out.len() != cout {
        return Err(FormatError::ShapeMismatch("channel name count".into()).into());
    }
    Ok((names.names_in, names.names_out))
}

/// Little-endian cursor that reports truncation as a format error.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(FormatError::Truncated {
                needed: n,
                available: self.remaining(),
            }
            .into());
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self) -> Result<[u8; 4]> {
        Ok(self.bytes(4)?.try_into().unwrap())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.bytes(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
