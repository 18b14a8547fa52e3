//! FRM1 checkpoint container.
//!
//! Layout (little endian): magic `FRM1`, u32 version, u32 spec length + spec JSON, u64 value
//! count + learnable values, u64 running count + running means + running variances, u32 section
//! count + named f64 sections (u32 name length, name, u64 length, values), u32 meta length + meta
//! JSON. Nothing may follow the meta block.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use super::network::Network;
use super::params::ParameterSet;
use super::spec::NetworkSpec;
use crate::error::{Error, FormatError, Result};
use crate::field::ByteReader;

pub const FRM1_MAGIC: [u8; 4] = *b"FRM1";
const FRM1_VERSION: u32 = 1;

/// A network spec, its parameters, and caller-defined extras (named f64 arrays plus JSON
/// metadata) such as data normalizers or optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: ParameterSet,
    pub sections: BTreeMap<String, Vec<f64>>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(spec: NetworkSpec, params: ParameterSet) -> Self {
        Checkpoint {
            spec,
            params,
            sections: BTreeMap::new(),
            meta: serde_json::Value::Object(Default::default()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&FRM1_MAGIC);
        buf.extend_from_slice(&FRM1_VERSION.to_le_bytes());
        put_str(&mut buf, &self.spec.to_json());
        put_f64s(&mut buf, self.params.values());
        buf.extend_from_slice(&(self.params.running_mean.len() as u64).to_le_bytes());
        for v in self.params.running_mean.iter().chain(&self.params.running_var) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, vals) in &self.sections {
            put_str(&mut buf, name);
            put_f64s(&mut buf, vals);
        }
        put_str(&mut buf, &self.meta.to_string());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = ByteReader::new(bytes);
        let magic = rd.magic()?;
        if magic != FRM1_MAGIC {
            return Err(FormatError::BadMagic {
                expected: FRM1_MAGIC,
                found: magic,
            }
            .into());
        }
        let version = rd.u32()?;
        if version != FRM1_VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let spec_json = get_str(&mut rd)?;
        let spec: NetworkSpec = serde_json::from_str(&spec_json)
            .map_err(|e| FormatError::Malformed(format!("network spec: {e}")))?;
        let net = Network::new(spec.clone()).map_err(|e| FormatError::Malformed(format!("network spec: {e}")))?;
        let layout = net.layout();
        let values = get_f64s(&mut rd)?;
        if values.len() != layout.n_values {
            return Err(FormatError::ShapeMismatch(format!(
                "spec needs {} learnable values, payload has {}",
                layout.n_values,
                values.len()
            ))
            .into());
        }
        let n_running = get_len(&mut rd, 16)?;
        if n_running != layout.n_running {
            return Err(FormatError::ShapeMismatch(format!(
                "spec needs {} running statistics, payload has {n_running}",
                layout.n_running
            ))
            .into());
        }
        let running_mean = rd.f64s(n_running)?;
        let running_var = rd.f64s(n_running)?;
        let params = ParameterSet::from_parts(layout, values, running_mean, running_var)
            .map_err(|e| FormatError::Malformed(e.to_string()))?;
        let n_sections = rd.u32()?;
        let mut sections = BTreeMap::new();
        for _ in 0..n_sections {
            let name = get_str(&mut rd)?;
            let vals = get_f64s(&mut rd)?;
            sections.insert(name, vals);
        }
        let meta = serde_json::from_str(&get_str(&mut rd)?)
            .map_err(|e| FormatError::Malformed(format!("metadata: {e}")))?;
        if rd.remaining() != 0 {
            return Err(FormatError::TrailingBytes(rd.remaining()).into());
        }
        Ok(Checkpoint {
            spec,
            params,
            sections,
            meta,
        })
    }

    /// Checks that this checkpoint was made for `expected`, naming the first layer that differs.
    pub fn check_spec(&self, expected: &NetworkSpec) -> Result<()> {
        if self.spec.input != expected.input {
            return Err(Error::Mismatch {
                layer: 0,
                detail: format!(
                    "input schema {:?} in checkpoint, {:?} expected",
                    self.spec.input, expected.input
                ),
            });
        }
        let (a, b) = (&self.spec.layers, &expected.layers);
        for i in 0..a.len().max(b.len()) {
            match (a.get(i), b.get(i)) {
                (Some(x), Some(y)) if x == y => {}
                (x, y) => {
                    let show = |l: Option<&super::spec::LayerSpec>| {
                        l.map_or("nothing".to_string(), |l| serde_json::to_string(l).unwrap_or_default())
                    };
                    return Err(Error::Mismatch {
                        layer: i,
                        detail: format!("checkpoint has {}, expected {}", show(x), show(y)),
                    });
                }
            }
        }
        if self.spec.bn_eps != expected.bn_eps || self.spec.bn_momentum != expected.bn_momentum {
            return Err(Error::Mismatch {
                layer: 0,
                detail: "batch-norm settings differ".into(),
            });
        }
        Ok(())
    }
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, v: &[f64]) {
    buf.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn get_str(rd: &mut ByteReader) -> Result<String> {
    let n = rd.u32()? as usize;
    let raw = rd.bytes(n)?;
    String::from_utf8(raw.to_vec()).map_err(|_| FormatError::Malformed("string is not UTF-8".into()).into())
}

/// Reads a u64 element count and checks that `count × elem_bytes` bytes remain.
fn get_len(rd: &mut ByteReader, elem_bytes: usize) -> Result<usize> {
    let n = rd.u64()?;
    let needed = (n as usize).checked_mul(elem_bytes).filter(|_| n <= usize::MAX as u64);
    match needed {
        Some(b) if b <= rd.remaining() => Ok(n as usize),
        _ => Err(FormatError::Truncated {
            needed: needed.unwrap_or(usize::MAX),
            available: rd.remaining(),
        }
        .into()),
    }
}

fn get_f64s(rd: &mut ByteReader) -> Result<Vec<f64>> {
    let n = get_len(rd, 8)?;
    rd.f64s(n)
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&ckpt.to_bytes())?;
    f.sync_all()?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
