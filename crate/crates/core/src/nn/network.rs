use super::ops::{self, BnCache};
use super::params::{Layout, ParameterSet, Unit};
use super::spec::{LayerSpec, NetworkSpec, Schema};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::field::Field;

/// A validated network: the spec plus its parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layout: Layout,
    output: Schema,
}

#[derive(Debug, Clone)]
struct UnitCache {
    mask: Vec<bool>,
    bn: Option<BnCache>,
}

#[derive(Debug, Clone)]
enum LayerCache {
    Single { input: Tensor, unit: UnitCache },
    Stem { input: Tensor, units: Vec<UnitCache> },
    Dense { features: Tensor, block_in: usize, units: Vec<UnitCache> },
    Resize { h: usize, w: usize },
}

/// Intermediates of one train-mode forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    layers: Vec<LayerCache>,
    output_shape: (usize, usize, usize, usize),
}

/// Gradients of a scalar loss with respect to the learnable values and the network input.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Congruent with [`ParameterSet::values`].
    pub params: Vec<f64>,
    pub input: Tensor,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let layout = Layout::new(&spec)?;
        let output = spec.output()?;
        Ok(Network { spec, layout, output })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn input_schema(&self) -> Schema {
        self.spec.input
    }

    pub fn output_schema(&self) -> Schema {
        self.output
    }

    pub fn init_parameters(&self, seed: u64) -> ParameterSet {
        ParameterSet::init(&self.layout, seed)
    }

    fn check_input(&self, x: &Tensor, params: &ParameterSet) -> Result<()> {
        let s = self.spec.input;
        if (x.c, x.h, x.w) != (s.c, s.h, s.w) {
            return Err(Error::invalid(format!(
                "input sample shape {}x{}x{} does not match network input {}x{}x{}",
                x.h, x.w, x.c, s.h, s.w, s.c
            )));
        }
        if x.n == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if params.len() != self.layout.n_values || params.running_mean.len() != self.layout.n_running {
            return Err(Error::invalid("parameter set does not belong to this network"));
        }
        Ok(())
    }

    /// Inference pass using BN running statistics. Pure in its inputs.
    pub fn forward(&self, params: &ParameterSet, x: &Tensor) -> Result<Tensor> {
        self.check_input(x, params)?;
        let v = params.values();
        let eps = self.spec.bn_eps;
        let unit = |u: &Unit, x: &Tensor| -> Tensor {
            let mut z = ops::conv_forward(x, &u.conv, u.kernel(v));
            if let Some((_, r)) = u.bn {
                let c = u.conv.out_channels;
                ops::relu_forward(&mut z.data, u.conv.relu_eps);
                ops::bn_infer_forward(
                    &mut z,
                    u.alpha(v),
                    u.beta(v),
                    &params.running_mean[r..r + c],
                    &params.running_var[r..r + c],
                    eps,
                );
            }
            z
        };
        let mut x = x.clone();
        for (layer, units) in self.spec.layers.iter().zip(&self.layout.units) {
            x = match layer {
                LayerSpec::Conv(_) | LayerSpec::Stem { .. } if units.len() == 1 => unit(&units[0], &x),
                LayerSpec::Stem { .. } => {
                    let parts: Vec<Tensor> = units.iter().enumerate().map(|(k, u)| unit(u, &x.channels(k, k + 1))).collect();
                    Tensor::concat(&parts.iter().collect::<Vec<_>>())
                }
                LayerSpec::DenseBlock { .. } => {
                    let mut feats = x;
                    for u in units {
                        let out = unit(u, &feats);
                        feats = Tensor::concat(&[&feats, &out]);
                    }
                    feats
                }
                LayerSpec::Resize { target_h, target_w } => ops::resize_forward(&x, *target_h, *target_w),
                LayerSpec::Conv(_) => unreachable!("conv layers own exactly one unit"),
            };
        }
        Ok(x)
    }

    /// Inference on a list of fields.
    pub fn predict(&self, params: &ParameterSet, inputs: &[Field]) -> Result<Vec<Field>> {
        self.forward(params, &Tensor::from_fields(inputs)?)?.to_fields()
    }

    /// Train-mode pass: BN uses batch statistics and the running statistics are updated.
    pub fn forward_train(&self, params: &mut ParameterSet, x: &Tensor) -> Result<(Tensor, Tape)> {
        self.check_input(x, params)?;
        let eps = self.spec.bn_eps;
        let momentum = self.spec.bn_momentum;
        let version = params.version();
        let (v, running_mean, running_var) = params.split_running();
        let mut unit = |u: &Unit, x: &Tensor| -> (Tensor, UnitCache) {
            let mut z = ops::conv_forward(x, &u.conv, u.kernel(v));
            let Some((_, r)) = u.bn else {
                return (z, UnitCache { mask: Vec::new(), bn: None });
            };
            let c = u.conv.out_channels;
            let mask = ops::relu_forward(&mut z.data, u.conv.relu_eps);
            let (cache, mean, var) = ops::bn_train_forward(&mut z, u.alpha(v), u.beta(v), eps);
            let m = (z.n * z.plane()) as f64;
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            for k in 0..c {
                let rm = &mut running_mean[r + k];
                *rm = momentum * *rm + (1.0 - momentum) * mean[k];
                let rv = &mut running_var[r + k];
                *rv = momentum * *rv + (1.0 - momentum) * var[k] * unbias;
            }
            (z, UnitCache { mask, bn: Some(cache) })
        };
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        let mut x = x.clone();
        for (layer, units) in self.spec.layers.iter().zip(&self.layout.units) {
            let (y, cache) = match layer {
                LayerSpec::Conv(_) | LayerSpec::Stem { .. } if units.len() == 1 => {
                    let (y, c) = unit(&units[0], &x);
                    (y, LayerCache::Single { input: x, unit: c })
                }
                LayerSpec::Stem { .. } => {
                    let (parts, cs): (Vec<Tensor>, Vec<UnitCache>) =
                        units.iter().enumerate().map(|(k, u)| unit(u, &x.channels(k, k + 1))).unzip();
                    let y = Tensor::concat(&parts.iter().collect::<Vec<_>>());
                    (y, LayerCache::Stem { input: x, units: cs })
                }
                LayerSpec::DenseBlock { .. } => {
                    let block_in = x.c;
                    let mut feats = x;
                    let mut cs = Vec::with_capacity(units.len());
                    for u in units {
                        let (out, c) = unit(u, &feats);
                        feats = Tensor::concat(&[&feats, &out]);
                        cs.push(c);
                    }
                    (feats.clone(), LayerCache::Dense { features: feats, block_in, units: cs })
                }
                LayerSpec::Resize { target_h, target_w } => {
                    let y = ops::resize_forward(&x, *target_h, *target_w);
                    (y, LayerCache::Resize { h: x.h, w: x.w })
                }
                LayerSpec::Conv(_) => unreachable!("conv layers own exactly one unit"),
            };
            caches.push(cache);
            x = y;
        }
        let tape = Tape {
            version,
            layers: caches,
            output_shape: x.shape(),
        };
        Ok((x, tape))
    }

    /// Reverse pass for the loss whose gradient with respect to the output is `dy`.
    ///
    /// Fails with an invalid-state error if the parameters changed since the tape was recorded.
    pub fn backward(&self, params: &ParameterSet, tape: &Tape, dy: &Tensor) -> Result<Gradients> {
        if tape.version != params.version() {
            return Err(Error::InvalidState(format!(
                "tape recorded at parameter version {}, parameters are at version {}",
                tape.version,
                params.version()
            )));
        }
        if dy.shape() != tape.output_shape {
            return Err(Error::invalid(format!(
                "output gradient shape {:?} does not match forward output {:?}",
                dy.shape(),
                tape.output_shape
            )));
        }
        let v = params.values();
        let mut grads = vec![0.0; v.len()];
        let mut unit_back = |u: &Unit, c: &UnitCache, x: &Tensor, mut dy: Tensor| -> Tensor {
            if let (Some((o, _)), Some(bn)) = (u.bn, &c.bn) {
                let (da, db) = ops::bn_backward(&mut dy, bn, u.alpha(v));
                let ch = u.conv.out_channels;
                grads[o..o + ch].iter_mut().zip(&da).for_each(|(g, d)| *g += d);
                grads[o + ch..o + 2 * ch].iter_mut().zip(&db).for_each(|(g, d)| *g += d);
                ops::relu_backward(&mut dy.data, &c.mask);
            }
            let (dx, dk) = ops::conv_backward(x, &u.conv, u.kernel(v), &dy, true);
            grads[u.kernel_offset..u.kernel_offset + dk.len()]
                .iter_mut()
                .zip(&dk)
                .for_each(|(g, d)| *g += d);
            dx.expect("input gradient requested")
        };
        let mut d = dy.clone();
        for (cache, units) in tape.layers.iter().zip(&self.layout.units).rev() {
            d = match cache {
                LayerCache::Single { input, unit } => unit_back(&units[0], unit, input, d),
                LayerCache::Stem { input, units: cs } => {
                    let per = d.c / units.len();
                    let parts: Vec<Tensor> = units
                        .iter()
                        .zip(cs)
                        .enumerate()
                        .map(|(k, (u, c))| unit_back(u, c, &input.channels(k, k + 1), d.channels(k * per, (k + 1) * per)))
                        .collect();
                    Tensor::concat(&parts.iter().collect::<Vec<_>>())
                }
                LayerCache::Dense {
                    features,
                    block_in,
                    units: cs,
                } => {
                    let growth = units.first().map_or(0, |u| u.conv.out_channels);
                    for (l, (u, c)) in units.iter().zip(cs).enumerate().rev() {
                        let cin = block_in + growth * l;
                        let dout = d.channels(cin, cin + growth);
                        let dx = unit_back(u, c, &features.channels(0, cin), dout);
                        d.add_channels(0, &dx);
                    }
                    d.channels(0, *block_in)
                }
                LayerCache::Resize { h, w } => ops::resize_adjoint(&d, *h, *w),
            };
        }
        Ok(Gradients { params: grads, input: d })
    }
}
