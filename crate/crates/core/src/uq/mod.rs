//! Monte Carlo uncertainty quantification through a field-to-field predictor.

mod kde;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::InputSampler;
use crate::field::Field;

pub use kde::{kde_pdf, kde_with_bandwidth, pdf_l1_distance, silverman_bandwidth, PdfOverlay, KDE_GRID_POINTS};

/// Anything that maps an input field to an output field.
pub trait Predictor: Sync {
    fn predict(&self, input: &Field) -> Result<Field>;

    fn output_channels(&self) -> usize;

    /// Maps a slice of inputs; the default fans out per sample.
    fn predict_batch(&self, inputs: &[Field]) -> Result<Vec<Field>> {
        inputs.par_iter().map(|x| self.predict(x)).collect()
    }
}

/// Single-pass (Welford) mean and unbiased variance per entry.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    shape: Option<(usize, usize, usize)>,
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Default for MomentAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl MomentAccumulator {
    pub fn new() -> Self {
        MomentAccumulator {
            shape: None,
            count: 0,
            mean: Vec::new(),
            m2: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, x: &Field) -> Result<()> {
        match self.shape {
            None => {
                self.shape = Some(x.shape());
                self.mean = vec![0.0; x.len()];
                self.m2 = vec![0.0; x.len()];
            }
            Some(s) if s != x.shape() => {
                return Err(Error::invalid(format!(
                    "sample shape {:?} differs from {:?}",
                    x.shape(),
                    s
                )))
            }
            _ => {}
        }
        self.count += 1;
        let k = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x.as_slice()) {
            let d = v - *m;
            *m += d / k;
            *s += d * (v - *m);
        }
        Ok(())
    }

    /// `(mean, variance)` with the `1/(N−1)` normalization.
    pub fn finish(&self) -> Result<(Field, Field)> {
        if self.count < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: self.count,
            });
        }
        let (r, c, ch) = self.shape.unwrap();
        let denom = (self.count - 1) as f64;
        Ok((
            Field::from_vec(r, c, ch, self.mean.clone())?,
            Field::from_vec(r, c, ch, self.m2.iter().map(|s| (s / denom).max(0.0)).collect())?,
        ))
    }
}

/// Mean and unbiased variance fields of a sample stream.
pub fn mc_moments<'a>(samples: impl IntoIterator<Item = &'a Field>) -> Result<(Field, Field)> {
    let mut acc = MomentAccumulator::new();
    for s in samples {
        acc.push(s)?;
    }
    acc.finish()
}

/// `(row, col, channel)` location whose marginal density is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Probe {
    pub row: usize,
    pub col: usize,
    pub channel: usize,
}

#[derive(Debug, Clone)]
pub struct PdfCurve {
    pub probe: Probe,
    pub abscissa: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

#[derive(Debug, Clone)]
pub struct UqResult {
    pub mean: Field,
    pub variance: Field,
    pub pdfs: Vec<PdfCurve>,
    /// Raw probe values, one vector per probe, in sample order.
    pub probe_samples: Vec<Vec<f64>>,
    pub n_samples: usize,
}

/// Two quasi-random interior points per output channel (additive golden-ratio recurrence).
pub fn default_probes(rows: usize, cols: usize, channels: usize) -> Vec<Probe> {
    const PHI1: f64 = 0.754_877_666_246_692_7;
    const PHI2: f64 = 0.569_840_290_998_053_2;
    let pick = |u: f64, n: usize| -> usize {
        // stay one cell away from the clamped edge when the grid allows it
        if n > 4 {
            1 + ((u * (n - 2) as f64) as usize).min(n - 3)
        } else {
            ((u * n as f64) as usize).min(n - 1)
        }
    };
    let mut out = Vec::with_capacity(2 * channels);
    let mut k = 0.0;
    for channel in 0..channels {
        for _ in 0..2 {
            k += 1.0;
            let u = (0.5 + k * PHI1).fract();
            let v = (0.5 + k * PHI2).fract();
            out.push(Probe {
                row: pick(v, rows),
                col: pick(u, cols),
                channel,
            });
        }
    }
    out
}

/// Chunk size for prediction fan-out; moments are merged in sample order after each chunk.
const UQ_CHUNK: usize = 64;

/// Draws `n` independent input fields, pushes them through `predictor`, and accumulates
/// moments and probe samples.
///
/// Sample `i` uses the noise stream `(seed, i)`, so two runs with the same seed see the same
/// input ensemble whichever predictor they use.
pub fn run_uq(
    predictor: &dyn Predictor,
    sampler: &InputSampler,
    n: usize,
    probes: &[Probe],
    seed: u64,
) -> Result<UqResult> {
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let mut acc = MomentAccumulator::new();
    let mut probe_samples = vec![Vec::with_capacity(n); probes.len()];
    for start in (0..n).step_by(UQ_CHUNK) {
        let end = (start + UQ_CHUNK).min(n);
        let inputs: Vec<Field> = (start..end)
            .into_par_iter()
            .map(|i| sampler.independent_sample(seed, i as u64).map_err(|e| e.at_sample(i)))
            .collect::<Result<_>>()?;
        let outputs = predictor.predict_batch(&inputs).map_err(|e| match e {
            Error::Sample { index, source } => Error::Sample {
                index: start + index,
                source,
            },
            other => other.at_sample(start),
        })?;
        for (y, i) in outputs.iter().zip(start..end) {
            acc.push(y).map_err(|e| e.at_sample(i))?;
            for (p, buf) in probes.iter().zip(probe_samples.iter_mut()) {
                if p.row >= y.rows() || p.col >= y.cols() || p.channel >= y.channels() {
                    return Err(Error::invalid(format!("probe {p:?} outside output field")));
                }
                buf.push(y.get(p.row, p.col, p.channel));
            }
        }
    }
    let (mean, variance) = acc.finish()?;
    let pdfs = probes
        .iter()
        .zip(&probe_samples)
        .map(|(&probe, s)| {
            let (abscissa, density, bandwidth) = kde_pdf(s)?;
            Ok(PdfCurve {
                probe,
                abscissa,
                density,
                bandwidth,
            })
        })
        .collect::<Result<_>>()?;
    Ok(UqResult {
        mean,
        variance,
        pdfs,
        probe_samples,
        n_samples: n,
    })
}

/// `|a − b| / max|b|` entrywise, normalized per channel, and its maximum.
pub fn error_map(a: &Field, b: &Field) -> Result<(Field, f64)> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (r, c, ch) = a.shape();
    let mut out = Vec::with_capacity(a.len());
    for k in 0..ch {
        let (ak, bk) = (a.channel_slice(k), b.channel_slice(k));
        let scale = bk.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let denom = scale + 1e-12 * scale;
        for (x, y) in ak.iter().zip(bk) {
            let d = (x - y).abs();
            if denom > 0.0 {
                out.push(d / denom);
            } else if d == 0.0 {
                out.push(0.0);
            } else {
                return Err(Error::DegenerateData(format!(
                    "reference channel {k} is identically zero"
                )));
            }
        }
    }
    let max = out.iter().fold(0.0f64, |m, &v| m.max(v));
    Ok((Field::from_vec(r, c, ch, out)?, max))
}

/// Binary PGM (P5, 8-bit) of one channel, min–max scaled.
pub fn to_pgm(field: &Field, channel: usize) -> Result<Vec<u8>> {
    if channel >= field.channels() {
        return Err(Error::invalid("channel out of range"));
    }
    let s = field.channel_slice(channel);
    let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{} {}\n255\n", field.cols(), field.rows()).into_bytes();
    out.extend(s.iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else {
            0
        }
    }));
    Ok(out)
}

/// Two-column `y,density` CSV.
pub fn pdf_csv(curve: &PdfCurve) -> String {
    let mut s = String::from("y,density\n");
    for (x, d) in curve.abscissa.iter().zip(&curve.density) {
        s.push_str(&format!("{x:e},{d:e}\n"));
    }
    s
}
