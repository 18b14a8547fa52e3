use rand_distr::{Distribution, Normal};

use super::spec::{dense_layer_inputs, ConvSpec, LayerSpec, NetworkSpec, StemMode};
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// One conv (+ ReLU + BN unless plain) and where its values live in the flat buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub name: String,
    pub conv: ConvSpec,
    pub kernel_offset: usize,
    /// Offset of α (β follows it) in the learnable buffer, and of the running stats.
    pub bn: Option<(usize, usize)>,
}

impl Unit {
    pub fn kernel<'a>(&self, values: &'a [f64]) -> &'a [f64] {
        &values[self.kernel_offset..self.kernel_offset + self.conv.kernel_len()]
    }

    pub fn alpha<'a>(&self, values: &'a [f64]) -> &'a [f64] {
        let (o, _) = self.bn.expect("unit has batch norm");
        &values[o..o + self.conv.out_channels]
    }

    pub fn beta<'a>(&self, values: &'a [f64]) -> &'a [f64] {
        let (o, _) = self.bn.expect("unit has batch norm");
        let c = self.conv.out_channels;
        &values[o + c..o + 2 * c]
    }
}

/// Named contiguous slice of the learnable buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Units of every layer, in traversal order, plus buffer sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    /// `units[layer]` lists the units owned by that layer.
    pub units: Vec<Vec<Unit>>,
    pub blocks: Vec<Block>,
    pub n_values: usize,
    pub n_running: usize,
}

impl Layout {
    pub fn new(spec: &NetworkSpec) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut n_values = 0;
        let mut n_running = 0;
        let mut blocks = Vec::new();
        let mut add = |name: String, conv: ConvSpec| -> Unit {
            let kernel_offset = n_values;
            n_values += conv.kernel_len();
            blocks.push(Block {
                name: format!("{name}.kernel"),
                offset: kernel_offset,
                len: conv.kernel_len(),
            });
            let bn = (!conv.plain).then(|| {
                let c = conv.out_channels;
                blocks.push(Block {
                    name: format!("{name}.alpha"),
                    offset: n_values,
                    len: c,
                });
                blocks.push(Block {
                    name: format!("{name}.beta"),
                    offset: n_values + c,
                    len: c,
                });
                let o = (n_values, n_running);
                n_values += 2 * c;
                n_running += c;
                o
            });
            Unit {
                name,
                conv,
                kernel_offset,
                bn,
            }
        };
        let mut units = Vec::with_capacity(spec.layers.len());
        for (i, (layer, s)) in spec.layers.iter().zip(&shapes).enumerate() {
            let us = match layer {
                LayerSpec::Conv(c) | LayerSpec::Stem { mode: StemMode::Joint, conv: c } => {
                    vec![add(format!("layer{i}"), *c)]
                }
                LayerSpec::Stem { mode: StemMode::Separate, conv } => (0..conv.in_channels)
                    .map(|k| {
                        let per = ConvSpec {
                            in_channels: 1,
                            out_channels: conv.out_channels / conv.in_channels,
                            ..*conv
                        };
                        add(format!("layer{i}.stem{k}"), per)
                    })
                    .collect(),
                LayerSpec::DenseBlock {
                    depth,
                    growth,
                    kernel,
                    relu_eps,
                } => (1..=*depth)
                    .map(|l| {
                        let conv = ConvSpec {
                            relu_eps: *relu_eps,
                            ..ConvSpec::new(*kernel, dense_layer_inputs(s.c, *growth, l), *growth).padding(kernel / 2)
                        };
                        add(format!("layer{i}.dense{l}"), conv)
                    })
                    .collect(),
                LayerSpec::Resize { .. } => Vec::new(),
            };
            units.push(us);
        }
        Ok(Layout {
            units,
            blocks,
            n_values,
            n_running,
        })
    }

    pub fn all_units(&self) -> impl Iterator<Item = &Unit> {
        self.units.iter().flatten()
    }
}

/// Learnable values (conv kernels, BN α and β) in one flat buffer, plus BN running statistics.
///
/// `version` increments on every mutation of the learnable values, which lets a train-mode
/// tape detect that the parameters it was recorded against have since changed.
#[derive(Debug, Clone)]
pub struct ParameterSet {
    values: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    version: u64,
}

/// Equality of contents; the mutation counter is ignored.
impl PartialEq for ParameterSet {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values && self.running_mean == other.running_mean && self.running_var == other.running_var
    }
}

impl ParameterSet {
    pub fn from_parts(layout: &Layout, values: Vec<f64>, running_mean: Vec<f64>, running_var: Vec<f64>) -> Result<Self> {
        if values.len() != layout.n_values || running_mean.len() != layout.n_running || running_var.len() != layout.n_running {
            return Err(Error::invalid(format!(
                "parameter buffers ({}, {}, {}) do not match layout ({}, {})",
                values.len(),
                running_mean.len(),
                running_var.len(),
                layout.n_values,
                layout.n_running
            )));
        }
        if running_var.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("running variance must be >= 0"));
        }
        Ok(ParameterSet {
            values,
            running_mean,
            running_var,
            version: 0,
        })
    }

    /// He-normal kernels (std √(2/(h·w·C))), α = 1, β = 0, running stats (0, 1).
    pub fn init(layout: &Layout, seed: u64) -> Self {
        let mut values = vec![0.0; layout.n_values];
        for (k, u) in layout.all_units().enumerate() {
            let c = &u.conv;
            let std = (2.0 / (c.kernel_h * c.kernel_w * c.in_channels) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let mut rng = rng_for(seed, "init", k as u64);
            for v in &mut values[u.kernel_offset..u.kernel_offset + c.kernel_len()] {
                *v = normal.sample(&mut rng);
            }
            if let Some((o, _)) = u.bn {
                values[o..o + c.out_channels].fill(1.0);
            }
        }
        ParameterSet {
            values,
            running_mean: vec![0.0; layout.n_running],
            running_var: vec![1.0; layout.n_running],
            version: 0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the learnable values; invalidates outstanding tapes.
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.values
    }

    /// Learnable values (read-only) alongside mutable running statistics.
    pub(crate) fn split_running(&mut self) -> (&[f64], &mut [f64], &mut [f64]) {
        (&self.values, &mut self.running_mean, &mut self.running_var)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `Σ θ²` over all learnable values.
    pub fn sum_squares(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}
