//! Log-Gaussian random fields on the unit square.
//!
//! A realization is `g = m + L z` with `L` the lower Cholesky factor of the squared-exponential
//! covariance over the grid's cell centers and `z` a standard normal vector; when
//! `log_transform` is set the field is `exp(g)`. Driving noise comes either from Latin hypercube
//! strata ([`lhs_standard_normal`]) or from independent per-sample streams.

mod normal;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::seed::rng_for;

pub use normal::{inverse_normal_cdf, normal_cdf, normal_pdf};

pub const DEFAULT_NUGGET: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomFieldSpec {
    pub grid_n: usize,
    #[serde(default)]
    pub mean: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_corr_len")]
    pub corr_len: f64,
    #[serde(default = "default_true")]
    pub log_transform: bool,
    #[serde(default = "default_nugget")]
    pub nugget: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_sigma() -> f64 {
    0.3
}
fn default_corr_len() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}
fn default_nugget() -> f64 {
    DEFAULT_NUGGET
}

impl RandomFieldSpec {
    pub fn new(grid_n: usize) -> Self {
        RandomFieldSpec {
            grid_n,
            mean: 0.0,
            sigma: default_sigma(),
            corr_len: default_corr_len(),
            log_transform: true,
            nugget: DEFAULT_NUGGET,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_n == 0 {
            return Err(Error::invalid("grid_n must be >= 1"));
        }
        if !(self.corr_len > 0.0) || !self.corr_len.is_finite() {
            return Err(Error::invalid(format!("correlation length {} must be > 0", self.corr_len)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid(format!("sigma {} must be >= 0", self.sigma)));
        }
        if !(self.nugget >= 0.0) || !self.mean.is_finite() {
            return Err(Error::invalid("nugget must be >= 0 and mean finite"));
        }
        Ok(())
    }

    /// Number of grid points, `grid_n²`.
    pub fn dim(&self) -> usize {
        self.grid_n * self.grid_n
    }

    /// Cell-center coordinates of flat point `i` (row-major), as `(x, y)`.
    pub fn coord(&self, i: usize) -> (f64, f64) {
        let n = self.grid_n as f64;
        let (row, col) = (i / self.grid_n, i % self.grid_n);
        ((col as f64 + 0.5) / n, (row as f64 + 0.5) / n)
    }
}

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), n, "row {i} has wrong length");
            m.data[i * n..(i + 1) * n].copy_from_slice(r);
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// Squared-exponential covariance over the grid's cell centers, plus `nugget * σ²` on the
/// diagonal.
pub fn rbf_covariance(spec: &RandomFieldSpec) -> Result<SquareMatrix> {
    spec.validate()?;
    let mut k = correlation_matrix(spec);
    let s2 = spec.sigma * spec.sigma;
    k.data.iter_mut().for_each(|v| *v *= s2);
    Ok(k)
}

/// Unit-variance version of [`rbf_covariance`] (nugget included).
fn correlation_matrix(spec: &RandomFieldSpec) -> SquareMatrix {
    let n = spec.dim();
    let mut k = SquareMatrix::zeros(n);
    let inv = 1.0 / (2.0 * spec.corr_len * spec.corr_len);
    for i in 0..n {
        let (xi, yi) = spec.coord(i);
        for j in 0..=i {
            let (xj, yj) = spec.coord(j);
            let d2 = (xi - xj).powi(2) + (yi - yj).powi(2);
            let v = (-d2 * inv).exp();
            k.data[i * n + j] = v;
            k.data[j * n + i] = v;
        }
        k.data[i * n + i] += spec.nugget;
    }
    k
}

/// Lower-triangular Cholesky factor, dense row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    l: SquareMatrix,
}

impl CholeskyFactor {
    pub fn n(&self) -> usize {
        self.l.n
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.l
    }

    /// `L z`
    pub fn mul_vec(&self, z: &[f64]) -> Vec<f64> {
        let n = self.l.n;
        (0..n)
            .map(|i| {
                self.l.row(i)[..=i]
                    .iter()
                    .zip(&z[..=i])
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `L Lᵀ`
    pub fn reconstruct(&self) -> SquareMatrix {
        let n = self.l.n;
        let mut a = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = self.l.row(i)[..=j]
                    .iter()
                    .zip(&self.l.row(j)[..=j])
                    .map(|(x, y)| x * y)
                    .sum();
                a.data[i * n + j] = v;
                a.data[j * n + i] = v;
            }
        }
        a
    }
}

/// Cholesky factorization `A = L Lᵀ` of a symmetric matrix. Only the lower triangle of `a` is
/// read.
pub fn cholesky_lower(a: &SquareMatrix) -> Result<CholeskyFactor> {
    let n = a.n;
    let mut l = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let (li, lj) = if i == j {
                (&l.data[i * n..i * n + j], &l.data[i * n..i * n + j])
            } else {
                let (head, tail) = l.data.split_at(i * n);
                (&tail[..j], &head[j * n..j * n + j])
            };
            let dot: f64 = li.iter().zip(lj).map(|(x, y)| x * y).sum();
            let v = a.get(i, j) - dot;
            if i == j {
                if !(v > 0.0) {
                    return Err(Error::NotPositiveDefinite { index: i, pivot: v });
                }
                l.data[i * n + i] = v.sqrt();
            } else {
                l.data[i * n + j] = v / l.data[j * n + j];
            }
        }
    }
    Ok(CholeskyFactor { l })
}

/// Latin hypercube design mapped to standard normal marginals, `n_samples × dim` row-major.
///
/// Column `d` places one uniform draw in each of the `n_samples` equiprobable strata and
/// shuffles the stratum order independently of every other column.
pub fn lhs_standard_normal(n_samples: usize, dim: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n_samples == 0 || dim == 0 {
        return Err(Error::invalid("LHS needs n_samples >= 1 and dim >= 1"));
    }
    let mut out = vec![vec![0.0; dim]; n_samples];
    let mut rng = rng_for(seed, "lhs", 0);
    let mut perm: Vec<usize> = (0..n_samples).collect();
    let width = 1.0 / n_samples as f64;
    for d in 0..dim {
        perm.shuffle(&mut rng);
        for (row, &stratum) in perm.iter().enumerate() {
            let u: f64 = rng.sample(Open01);
            let p = ((stratum as f64 + u) * width).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
            out[row][d] = inverse_normal_cdf(p)?;
        }
    }
    Ok(out)
}

/// Independent standard normal vector from the stream `(seed, "mc", index)`.
pub fn independent_standard_normal(dim: usize, seed: u64, index: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, "mc", index);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// `m + L z` reshaped to `grid_n × grid_n × 1`, exponentiated when `log_transform` is set.
pub fn sample_field(spec: &RandomFieldSpec, factor: &CholeskyFactor, z: &[f64]) -> Result<Field> {
    let n = spec.dim();
    if z.len() != n || factor.n() != n {
        return Err(Error::invalid(format!(
            "noise length {} / factor size {} do not match grid dimension {n}",
            z.len(),
            factor.n()
        )));
    }
    let mut g = factor.mul_vec(z);
    for v in g.iter_mut() {
        *v += spec.mean;
        if spec.log_transform {
            *v = v.exp();
        }
    }
    Field::from_vec(spec.grid_n, spec.grid_n, 1, g)
}

/// A spec with its factor prepared for repeated sampling.
///
/// The correlation matrix is factored once and scaled by σ, so σ = 0 yields a zero factor
/// rather than a failed decomposition.
#[derive(Debug, Clone)]
pub struct RandomField {
    spec: RandomFieldSpec,
    factor: CholeskyFactor,
}

impl RandomField {
    pub fn new(spec: RandomFieldSpec) -> Result<Self> {
        spec.validate()?;
        let mut factor = cholesky_lower(&correlation_matrix(&spec))?;
        factor.l.data.iter_mut().for_each(|v| *v *= spec.sigma);
        Ok(RandomField { spec, factor })
    }

    pub fn spec(&self) -> &RandomFieldSpec {
        &self.spec
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn sample(&self, z: &[f64]) -> Result<Field> {
        sample_field(&self.spec, &self.factor, z)
    }
}
