//! Gaussian kernel density estimation.

use crate::error::{Error, Result};
use crate::randfield::normal_pdf;

pub const KDE_GRID_POINTS: usize = 256;

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule, `1.06 · min(σ̂, IQR/1.349) · N^(−1/5)`.
///
/// Falls back to the standard deviation alone when the IQR collapses to zero.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateData("samples have zero spread".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.349) } else { sd };
    Ok(1.06 * spread * (n as f64).powf(-0.2))
}

/// Density `(1/(N h)) Σ φ((y − yᵢ)/h)` at each abscissa point.
pub fn kde_with_bandwidth(samples: &[f64], bandwidth: f64, grid: &[f64]) -> Vec<f64> {
    let scale = 1.0 / (samples.len() as f64 * bandwidth);
    grid.iter()
        .map(|&y| samples.iter().map(|&s| normal_pdf((y - s) / bandwidth)).sum::<f64>() * scale)
        .collect()
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

/// KDE on the default grid of [`KDE_GRID_POINTS`] points spanning min/max ± 3 bandwidths.
/// Returns `(abscissa, density, bandwidth)`.
pub fn kde_pdf(samples: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let h = silverman_bandwidth(samples)?;
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let grid = linspace(lo, hi, KDE_GRID_POINTS);
    let density = kde_with_bandwidth(samples, h, &grid);
    Ok((grid, density, h))
}

pub(crate) fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Two KDEs on a shared grid covering both supports, each renormalized to unit trapezoid mass.
#[derive(Debug, Clone, PartialEq)]
pub struct PdfOverlay {
    pub abscissa: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PdfOverlay {
    pub fn new(a: &[f64], b: &[f64]) -> Result<Self> {
        let (ha, hb) = (silverman_bandwidth(a)?, silverman_bandwidth(b)?);
        let min = |s: &[f64]| s.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = |s: &[f64]| s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = (min(a) - 3.0 * ha).min(min(b) - 3.0 * hb);
        let hi = (max(a) + 3.0 * ha).max(max(b) + 3.0 * hb);
        let grid = linspace(lo, hi, 4 * KDE_GRID_POINTS);
        let mut pa = kde_with_bandwidth(a, ha, &grid);
        let mut pb = kde_with_bandwidth(b, hb, &grid);
        for p in [&mut pa, &mut pb] {
            let m = trapezoid(&grid, p);
            p.iter_mut().for_each(|v| *v /= m);
        }
        Ok(PdfOverlay {
            abscissa: grid,
            a: pa,
            b: pb,
        })
    }

    /// `∫ |p_a − p_b|`.
    pub fn l1(&self) -> f64 {
        let diff: Vec<f64> = self.a.iter().zip(&self.b).map(|(x, y)| (x - y).abs()).collect();
        trapezoid(&self.abscissa, &diff)
    }

    /// Three-column `y,a,b` CSV with the given column names.
    pub fn to_csv(&self, name_a: &str, name_b: &str) -> String {
        let mut s = format!("y,{name_a},{name_b}\n");
        for ((x, a), b) in self.abscissa.iter().zip(&self.a).zip(&self.b) {
            s.push_str(&format!("{x:e},{a:e},{b:e}\n"));
        }
        s
    }
}

/// L1 distance between the two samples' KDEs, see [`PdfOverlay`].
pub fn pdf_l1_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(PdfOverlay::new(a, b)?.l1())
}
