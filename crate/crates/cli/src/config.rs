//! The run configuration: one JSON document drives every subcommand.

use std::path::{Path, PathBuf};

use fieldreg::fem::{Case, CaseSpec, PlateParams};
use fieldreg::nn::{NetworkSpec, Schema, StemMode};
use fieldreg::randfield::{RandomFieldSpec, DEFAULT_NUGGET};
use fieldreg::seed::derive_seed;
use fieldreg::train::TrainConfig;
use fieldreg::uq::{default_probes, Probe};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub case: Case,
    pub grid_n: usize,
    /// Master seed; every stage seed derives from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub random_field: FieldSection,
    #[serde(default)]
    pub fem: FemSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub uq: UqSection,
    #[serde(default)]
    pub paths: PathsSection,
}

/// Law of the input fields. The load field of `many2many` shares the kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSection {
    pub sigma: f64,
    pub corr_len: f64,
    pub mean: f64,
    pub log_transform: bool,
    pub nugget: f64,
    /// Amplitude of the modulus channel.
    pub modulus_scale: f64,
    /// Uniform pressure, or the amplitude of the random load channel.
    pub load_scale: f64,
}

impl Default for FieldSection {
    fn default() -> Self {
        let rf = RandomFieldSpec::new(1);
        FieldSection {
            sigma: rf.sigma,
            corr_len: rf.corr_len,
            mean: rf.mean,
            log_transform: rf.log_transform,
            nugget: DEFAULT_NUGGET,
            modulus_scale: 1.0,
            load_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadMode {
    Uniform,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FemSection {
    pub thickness: f64,
    pub poisson: f64,
    pub shear_correction: f64,
    /// Must agree with the case; inferred when absent.
    pub load: Option<LoadMode>,
}

impl Default for FemSection {
    fn default() -> Self {
        let p = PlateParams::default();
        FemSection {
            thickness: p.thickness,
            poisson: p.poisson,
            shear_correction: p.shear_correction,
            load: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            n_train: 1024,
            n_test: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Fr21,
    Fr25,
    Small,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// Defaults to `fr21` for `one2one` and `fr25` otherwise.
    pub preset: Option<Preset>,
    pub stem: Option<StemMode>,
    /// Required with the `custom` preset, rejected otherwise.
    pub spec: Option<NetworkSpec>,
}

/// Training hyperparameters. The shuffle seed comes from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub eta0: f64,
    pub anneal_rate: f64,
    pub anneal_every: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub eval_every: usize,
    pub channel_weights: Option<Vec<f64>>,
    pub standardize: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            eta0: t.eta0,
            anneal_rate: t.anneal_rate,
            anneal_every: t.anneal_every,
            weight_decay: t.weight_decay,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            eval_every: t.eval_every,
            channel_weights: t.channel_weights,
            standardize: t.standardize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UqSection {
    pub n_samples: usize,
    /// Defaults to two interior points per output channel.
    pub probes: Option<Vec<Probe>>,
}

impl Default for UqSection {
    fn default() -> Self {
        UqSection {
            n_samples: 2000,
            probes: None,
        }
    }
}

/// File locations. Unset paths default to files inside the output directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub out_dir: Option<PathBuf>,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.grid_n < 2 {
            return bad(format!("grid_n must be >= 2, got {}", self.grid_n));
        }
        let expected_load = match self.case {
            Case::Many2many => LoadMode::Random,
            _ => LoadMode::Uniform,
        };
        if let Some(l) = self.fem.load {
            if l != expected_load {
                return bad(format!(
                    "case {} takes a {:?} load, config asks for {:?}",
                    self.case.name(),
                    expected_load,
                    l
                ));
            }
        }
        if self.data.n_train == 0 || self.data.n_test == 0 {
            return bad("data.n_train and data.n_test must be >= 1".into());
        }
        self.case_spec().validate()?;
        self.train_config().validate()?;
        if let Some(w) = &self.train.channel_weights {
            if w.len() != self.case.out_channels() {
                return bad(format!(
                    "{} channel weights for the {} output channels of {}",
                    w.len(),
                    self.case.out_channels(),
                    self.case.name()
                ));
            }
        }
        self.network_spec()?;
        if self.uq.n_samples < 2 {
            return bad("uq.n_samples must be >= 2".into());
        }
        let n = self.grid_n;
        for p in self.probes() {
            if p.row >= n || p.col >= n || p.channel >= self.case.out_channels() {
                return bad(format!("probe {p:?} lies outside the {n}x{n}x{} output", self.case.out_channels()));
            }
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage, 0)
    }

    pub fn case_spec(&self) -> CaseSpec {
        let f = &self.random_field;
        let field = RandomFieldSpec {
            grid_n: self.grid_n,
            mean: f.mean,
            sigma: f.sigma,
            corr_len: f.corr_len,
            log_transform: f.log_transform,
            nugget: f.nugget,
            seed: 0,
        };
        let mut spec = CaseSpec::new(self.case, self.grid_n);
        spec.load_field = spec.load_field.map(|_| field.clone());
        spec.modulus_field = field;
        spec.modulus_scale = f.modulus_scale;
        spec.load_scale = f.load_scale;
        spec.plate = PlateParams {
            thickness: self.fem.thickness,
            poisson: self.fem.poisson,
            shear_correction: self.fem.shear_correction,
        };
        spec
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            eta0: t.eta0,
            anneal_rate: t.anneal_rate,
            anneal_every: t.anneal_every,
            weight_decay: t.weight_decay,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            seed: self.stage_seed("train"),
            eval_every: t.eval_every,
            channel_weights: t.channel_weights.clone(),
            standardize: t.standardize,
        }
    }

    pub fn preset(&self) -> Preset {
        self.network.preset.unwrap_or(match self.case {
            Case::One2one => Preset::Fr21,
            _ => Preset::Fr25,
        })
    }

    /// The network implied by the config, checked against the case's channel schema.
    pub fn network_spec(&self) -> Result<NetworkSpec, CliError> {
        let (n, cin, cout) = (self.grid_n, self.case.in_channels(), self.case.out_channels());
        let stem = self.network.stem.unwrap_or(StemMode::Joint);
        let preset = self.preset();
        if (preset == Preset::Custom) != self.network.spec.is_some() {
            return Err(CliError::Config(
                "network.spec must be given exactly when network.preset is \"custom\"".into(),
            ));
        }
        if preset == Preset::Custom && self.network.stem.is_some() {
            return Err(CliError::Config("network.stem only applies to the built-in presets".into()));
        }
        let spec = match preset {
            Preset::Fr21 => NetworkSpec::fr21(n, cin, cout, stem)?,
            Preset::Fr25 => NetworkSpec::fr25(n, cin, cout, stem)?,
            Preset::Small => NetworkSpec::small(n, cin, cout, stem)?,
            Preset::Custom => self.network.spec.clone().expect("checked above"),
        };
        check_schema(self.case, n, &spec)?;
        Ok(spec)
    }

    pub fn probes(&self) -> Vec<Probe> {
        self.uq
            .probes
            .clone()
            .unwrap_or_else(|| default_probes(self.grid_n, self.grid_n, self.case.out_channels()))
    }
}

/// Rejects a network whose input or output channels disagree with the case.
pub fn check_schema(case: Case, grid_n: usize, spec: &NetworkSpec) -> Result<(), CliError> {
    let output = spec.output()?;
    let want_in = Schema::new(grid_n, grid_n, case.in_channels());
    let want_out = Schema::new(grid_n, grid_n, case.out_channels());
    if spec.input != want_in || output != want_out {
        return Err(CliError::Config(format!(
            "case {} on a {grid_n}x{grid_n} grid maps {}x{}x{} -> {}x{}x{}, network maps {}x{}x{} -> {}x{}x{}",
            case.name(),
            want_in.h,
            want_in.w,
            want_in.c,
            want_out.h,
            want_out.w,
            want_out.c,
            spec.input.h,
            spec.input.w,
            spec.input.c,
            output.h,
            output.w,
            output.c
        )));
    }
    Ok(())
}
