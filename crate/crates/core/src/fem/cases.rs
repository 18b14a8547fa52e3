//! The three input/output mappings and ground-truth dataset generation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{solve_plate, PlateModel, PlateParams};
use crate::error::{Error, Result};
use crate::field::{Dataset, Field};
use crate::randfield::{independent_standard_normal, lhs_standard_normal, RandomField, RandomFieldSpec};
use crate::seed::derive_seed;
use crate::uq::Predictor;

/// Which fields go in and which come out.
///
/// | case        | inputs   | outputs                    |
/// |-------------|----------|----------------------------|
/// | `one2one`   | E        | w                          |
/// | `one2many`  | E        | σ_v, τ_max, τ_xy           |
/// | `many2many` | E, f     | w, σ_v                     |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    One2one,
    One2many,
    Many2many,
}

impl Case {
    pub fn input_names(self) -> &'static [&'static str] {
        match self {
            Case::One2one | Case::One2many => &["E"],
            Case::Many2many => &["E", "f"],
        }
    }

    pub fn output_names(self) -> &'static [&'static str] {
        match self {
            Case::One2one => &["w"],
            Case::One2many => &["sigma_v", "tau_max", "tau_xy"],
            Case::Many2many => &["w", "sigma_v"],
        }
    }

    pub fn in_channels(self) -> usize {
        self.input_names().len()
    }

    pub fn out_channels(self) -> usize {
        self.output_names().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            Case::One2one => "one2one",
            Case::One2many => "one2many",
            Case::Many2many => "many2many",
        }
    }
}

/// Everything needed to draw inputs and compute ground truth for one case.
#[derive(Debug, Clone)]
pub struct CaseSpec {
    pub case: Case,
    /// Law of log E; its `grid_n` is the mesh resolution.
    pub modulus_field: RandomFieldSpec,
    /// E = `modulus_scale` × field.
    pub modulus_scale: f64,
    /// Law of the load field (only used by `many2many`).
    pub load_field: Option<RandomFieldSpec>,
    /// Uniform pressure, or the multiplier on the random load field.
    pub load_scale: f64,
    pub plate: PlateParams,
}

impl CaseSpec {
    pub fn new(case: Case, grid_n: usize) -> Self {
        let modulus_field = RandomFieldSpec::new(grid_n);
        let load_field = (case == Case::Many2many).then(|| modulus_field.clone());
        CaseSpec {
            case,
            modulus_field,
            modulus_scale: 1.0,
            load_field,
            load_scale: 1.0,
            plate: PlateParams::default(),
        }
    }

    pub fn grid_n(&self) -> usize {
        self.modulus_field.grid_n
    }

    pub fn validate(&self) -> Result<()> {
        self.modulus_field.validate()?;
        self.plate.validate()?;
        if !(self.modulus_scale > 0.0) || !self.load_scale.is_finite() {
            return Err(Error::invalid("modulus scale must be > 0 and load scale finite"));
        }
        match (self.case, &self.load_field) {
            (Case::Many2many, None) => Err(Error::invalid("many2many needs a load field law")),
            (Case::Many2many, Some(lf)) if lf.grid_n != self.grid_n() => {
                Err(Error::invalid("load and modulus fields must share the grid"))
            }
            (Case::Many2many, Some(lf)) => lf.validate(),
            _ => Ok(()),
        }
    }
}

/// Maps standard normal noise vectors to input fields for a case.
#[derive(Debug, Clone)]
pub struct InputSampler {
    case: Case,
    modulus: RandomField,
    modulus_scale: f64,
    load: Option<(RandomField, f64)>,
}

impl InputSampler {
    pub fn new(spec: &CaseSpec) -> Result<Self> {
        spec.validate()?;
        let load = match (spec.case, &spec.load_field) {
            (Case::Many2many, Some(lf)) => Some((RandomField::new(lf.clone())?, spec.load_scale)),
            _ => None,
        };
        Ok(InputSampler {
            case: spec.case,
            modulus: RandomField::new(spec.modulus_field.clone())?,
            modulus_scale: spec.modulus_scale,
            load,
        })
    }

    pub fn case(&self) -> Case {
        self.case
    }

    /// Length of the noise vector consumed per sample.
    pub fn noise_dim(&self) -> usize {
        self.modulus.dim() * self.case.in_channels()
    }

    pub fn grid_n(&self) -> usize {
        self.modulus.spec().grid_n
    }

    pub fn sample(&self, z: &[f64]) -> Result<Field> {
        if z.len() != self.noise_dim() {
            return Err(Error::invalid(format!(
                "noise length {} != {}",
                z.len(),
                self.noise_dim()
            )));
        }
        let d = self.modulus.dim();
        let scale = self.modulus_scale;
        let e = self.modulus.sample(&z[..d])?.map(|v| v * scale)?;
        match &self.load {
            Some((rf, s)) => {
                let s = *s;
                let f = rf.sample(&z[d..])?.map(|v| v * s)?;
                Field::stack(&[e, f])
            }
            None => Ok(e),
        }
    }

    /// Noise for `n` samples under `scheme`, row `i` for sample `i`.
    pub fn noise(&self, n: usize, seed: u64, scheme: NoiseScheme) -> Result<Vec<Vec<f64>>> {
        match scheme {
            NoiseScheme::Lhs => lhs_standard_normal(n, self.noise_dim(), derive_seed(seed, "lhs", 0)),
            NoiseScheme::Independent => Ok((0..n as u64)
                .map(|i| independent_standard_normal(self.noise_dim(), seed, i))
                .collect()),
        }
    }

    /// Input field of sample `index` in an independent-draw ensemble.
    pub fn independent_sample(&self, seed: u64, index: u64) -> Result<Field> {
        self.sample(&independent_standard_normal(self.noise_dim(), seed, index))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseScheme {
    /// Latin hypercube strata per noise coordinate.
    Lhs,
    /// Independent streams keyed by sample index.
    Independent,
}

/// The finite-element model as a field-to-field map.
#[derive(Debug, Clone)]
pub struct FemPredictor {
    pub case: Case,
    pub plate: PlateParams,
    /// Uniform load for the single-input cases.
    pub load: f64,
}

impl FemPredictor {
    pub fn from_spec(spec: &CaseSpec) -> Self {
        FemPredictor {
            case: spec.case,
            plate: spec.plate,
            load: spec.load_scale,
        }
    }
}

impl FemPredictor {
    /// Output field and the relative residual of the linear solve.
    pub fn solve(&self, input: &Field) -> Result<(Field, f64)> {
        if input.channels() != self.case.in_channels() {
            return Err(Error::invalid(format!(
                "{} expects {} input channels, got {}",
                self.case.name(),
                self.case.in_channels(),
                input.channels()
            )));
        }
        let e = input.channel(0)?;
        let f = match self.case {
            Case::Many2many => input.channel(1)?,
            _ => Field::new(e.rows(), e.cols(), 1, self.load)?,
        };
        let sol = solve_plate(&PlateModel::new(self.plate, e, f)?)?;
        let out = match self.case {
            Case::One2one => sol.w_center,
            Case::One2many => Field::stack(&[sol.sigma_v, sol.tau_max, sol.tau_xy])?,
            Case::Many2many => Field::stack(&[sol.w_center, sol.sigma_v])?,
        };
        Ok((out, sol.residual))
    }
}

impl Predictor for FemPredictor {
    fn predict(&self, input: &Field) -> Result<Field> {
        Ok(self.solve(input)?.0)
    }

    fn output_channels(&self) -> usize {
        self.case.out_channels()
    }
}

/// Relative residuals of the solves behind a generated dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualStats {
    pub max: f64,
    pub mean: f64,
}

/// Draws `n_samples` inputs and solves the plate for each.
///
/// Samples are solved in parallel; results are gathered in sample order so the dataset does
/// not depend on the worker count.
pub fn generate_dataset(spec: &CaseSpec, n_samples: usize, seed: u64, scheme: NoiseScheme) -> Result<Dataset> {
    Ok(generate_dataset_with_stats(spec, n_samples, seed, scheme)?.0)
}

/// [`generate_dataset`] plus residual statistics of the underlying solves.
pub fn generate_dataset_with_stats(
    spec: &CaseSpec,
    n_samples: usize,
    seed: u64,
    scheme: NoiseScheme,
) -> Result<(Dataset, ResidualStats)> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be >= 1"));
    }
    let sampler = InputSampler::new(spec)?;
    let fem = FemPredictor::from_spec(spec);
    let noise = sampler.noise(n_samples, seed, scheme)?;
    let solved: Vec<(Field, Field, f64)> = noise
        .par_iter()
        .enumerate()
        .map(|(i, z)| {
            let x = sampler.sample(z).map_err(|e| e.at_sample(i))?;
            let (y, r) = fem.solve(&x).map_err(|e| e.at_sample(i))?;
            Ok((x, y, r))
        })
        .collect::<Result<_>>()?;
    let stats = ResidualStats {
        max: solved.iter().map(|s| s.2).fold(0.0, f64::max),
        mean: solved.iter().map(|s| s.2).sum::<f64>() / n_samples as f64,
    };
    let mut inputs = Vec::with_capacity(n_samples);
    let mut outputs = Vec::with_capacity(n_samples);
    for (x, y, _) in solved {
        inputs.push(x);
        outputs.push(y);
    }
    let ds = Dataset::new(
        inputs,
        outputs,
        spec.case.input_names().iter().map(|s| s.to_string()).collect(),
        spec.case.output_names().iter().map(|s| s.to_string()).collect(),
        seed,
    )?;
    Ok((ds, stats))
}
