//! Mini-batch Adam training with step-decay learning rate, plus evaluation metrics.

mod metrics;
mod optim;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Dataset, Field};
use crate::nn::{Checkpoint, Network, ParameterSet, Tensor};
use crate::seed::rng_for;
use crate::uq::Predictor;

pub use metrics::{mean_field, r_squared, rmse};
pub use optim::{add_decay_gradient, mse_loss, regularized_loss, AdamState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub eta0: f64,
    pub anneal_rate: f64,
    pub anneal_every: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Loss weight per output channel; `None` weighs all channels equally.
    pub channel_weights: Option<Vec<f64>>,
    /// Standardize each input and output channel with training-set statistics.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 8,
            eta0: 0.005,
            anneal_rate: 0.75,
            anneal_every: 20,
            weight_decay: 7e-6,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            eval_every: 20,
            channel_weights: None,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size >= 1
            && self.anneal_every >= 1
            && self.eval_every >= 1
            && self.eta0 > 0.0
            && self.anneal_rate > 0.0
            && self.anneal_rate <= 1.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0;
        if !ok {
            return Err(Error::invalid(
                "train config needs batch_size, anneal_every, eval_every >= 1, eta0 > 0, 0 < anneal_rate <= 1, \
                 weight_decay >= 0, beta1 and beta2 in [0, 1), adam_eps > 0",
            ));
        }
        if let Some(w) = &self.channel_weights {
            if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::invalid("channel weights must be finite and >= 0"));
            }
        }
        Ok(())
    }

    fn adam_hyper(&self) -> (f64, f64, f64) {
        (self.beta1, self.beta2, self.adam_eps)
    }
}

/// `η₀ · ζ^⌊epoch / anneal_every⌋`.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.eta0 * cfg.anneal_rate.powi((epoch / cfg.anneal_every) as i32)
}

/// Per-channel affine standardization of inputs and outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
}

fn channel_moments(fields: &[Field]) -> (Vec<f64>, Vec<f64>) {
    let ch = fields[0].channels();
    let mut mean = vec![0.0; ch];
    let mut std = vec![0.0; ch];
    for c in 0..ch {
        let n = (fields.len() * fields[0].rows() * fields[0].cols()) as f64;
        let mu = fields.iter().map(|f| f.channel_slice(c).iter().sum::<f64>()).sum::<f64>() / n;
        let var = fields
            .iter()
            .map(|f| f.channel_slice(c).iter().map(|v| (v - mu) * (v - mu)).sum::<f64>())
            .sum::<f64>()
            / n;
        mean[c] = mu;
        // a constant channel is only shifted
        std[c] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    (mean, std)
}

fn affine(f: &Field, shift: &[f64], scale: &[f64], forward: bool) -> Field {
    let p = f.rows() * f.cols();
    let data = f
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / p;
            if forward {
                (v - shift[c]) / scale[c]
            } else {
                v * scale[c] + shift[c]
            }
        })
        .collect();
    Field::from_vec(f.rows(), f.cols(), f.channels(), data).expect("finite affine image")
}

impl Normalizer {
    pub fn identity(c_in: usize, c_out: usize) -> Self {
        Normalizer {
            in_mean: vec![0.0; c_in],
            in_std: vec![1.0; c_in],
            out_mean: vec![0.0; c_out],
            out_std: vec![1.0; c_out],
        }
    }

    pub fn fit(ds: &Dataset) -> Self {
        let (in_mean, in_std) = channel_moments(ds.inputs());
        let (out_mean, out_std) = channel_moments(ds.outputs());
        Normalizer {
            in_mean,
            in_std,
            out_mean,
            out_std,
        }
    }

    pub fn input(&self, f: &Field) -> Field {
        affine(f, &self.in_mean, &self.in_std, true)
    }

    pub fn output(&self, f: &Field) -> Field {
        affine(f, &self.out_mean, &self.out_std, true)
    }

    pub fn restore_output(&self, f: &Field) -> Field {
        affine(f, &self.out_mean, &self.out_std, false)
    }
}

/// A trained network with its data normalizer, usable as a [`Predictor`].
#[derive(Debug, Clone)]
pub struct Surrogate {
    pub net: Network,
    pub params: ParameterSet,
    pub norm: Normalizer,
}

/// Samples per inference batch.
const PREDICT_CHUNK: usize = 32;

impl Predictor for Surrogate {
    fn predict(&self, input: &Field) -> Result<Field> {
        Ok(self.predict_batch(std::slice::from_ref(input))?.remove(0))
    }

    fn output_channels(&self) -> usize {
        self.net.output_schema().c
    }

    fn predict_batch(&self, inputs: &[Field]) -> Result<Vec<Field>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(PREDICT_CHUNK) {
            let normed: Vec<Field> = chunk.iter().map(|f| self.norm.input(f)).collect();
            let y = self.net.forward(&self.params, &Tensor::from_fields(&normed)?)?;
            for f in y.to_fields()? {
                out.push(self.norm.restore_output(&f));
            }
        }
        Ok(out)
    }
}

/// Optimizer state and epoch counter, enough to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub epoch: usize,
    pub adam: AdamState,
}

impl Surrogate {
    pub fn to_checkpoint(&self, state: Option<&TrainingState>) -> Checkpoint {
        let mut ck = Checkpoint::new(self.net.spec().clone(), self.params.clone());
        let n = &self.norm;
        for (k, v) in [
            ("norm.in.mean", &n.in_mean),
            ("norm.in.std", &n.in_std),
            ("norm.out.mean", &n.out_mean),
            ("norm.out.std", &n.out_std),
        ] {
            ck.sections.insert(k.into(), v.clone());
        }
        if let Some(s) = state {
            ck.sections.insert("adam.m".into(), s.adam.m.clone());
            ck.sections.insert("adam.v".into(), s.adam.v.clone());
            ck.meta = serde_json::json!({ "epoch": s.epoch, "adam_step": s.adam.step });
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Option<TrainingState>)> {
        let net = Network::new(ck.spec.clone())?;
        let (cin, cout) = (net.input_schema().c, net.output_schema().c);
        let sec = |k: &str, len: usize| -> Result<Vec<f64>> {
            match ck.sections.get(k) {
                Some(v) if v.len() == len => Ok(v.clone()),
                Some(v) => Err(crate::error::FormatError::ShapeMismatch(format!(
                    "section {k} has {} values, expected {len}",
                    v.len()
                ))
                .into()),
                None => Err(crate::error::FormatError::Malformed(format!("missing section {k}")).into()),
            }
        };
        let norm = Normalizer {
            in_mean: sec("norm.in.mean", cin)?,
            in_std: sec("norm.in.std", cin)?,
            out_mean: sec("norm.out.mean", cout)?,
            out_std: sec("norm.out.std", cout)?,
        };
        let state = match (ck.meta.get("epoch"), ck.meta.get("adam_step")) {
            (Some(e), Some(s)) => {
                let n = ck.params.len();
                Some(TrainingState {
                    epoch: e.as_u64().unwrap_or(0) as usize,
                    adam: AdamState {
                        m: sec("adam.m", n)?,
                        v: sec("adam.v", n)?,
                        step: s.as_u64().unwrap_or(0),
                    },
                })
            }
            _ => None,
        };
        Ok((
            Surrogate {
                net,
                params: ck.params.clone(),
                norm,
            },
            state,
        ))
    }
}

/// One evaluation point of a training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    /// Completed epochs.
    pub epoch: usize,
    pub lr: f64,
    /// Mean regularized loss over the epoch's batches, in standardized units.
    pub train_loss: f64,
    /// Test metrics on physical (de-standardized) predictions.
    pub test_rmse: f64,
    pub test_r2: f64,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = String::from("epoch,lr,train_loss,test_rmse,test_r2\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.lr, r.train_loss, r.test_rmse, r.test_r2));
    }
    s
}

/// Test-set `(rmse, r²)` of any predictor.
pub fn evaluate(model: &dyn Predictor, test: &Dataset) -> Result<(f64, f64)> {
    let pred = model.predict_batch(test.inputs())?;
    Ok((rmse(&pred, test.outputs())?, r_squared(&pred, test.outputs())?))
}

fn check_schema(net: &Network, ds: &Dataset, what: &str) -> Result<()> {
    let (i, o) = (net.input_schema(), net.output_schema());
    if ds.input_shape() != (i.h, i.w, i.c) || ds.output_shape() != (o.h, o.w, o.c) {
        return Err(Error::invalid(format!(
            "{what} set maps {:?} -> {:?} but the network maps {:?} -> {:?}",
            ds.input_shape(),
            ds.output_shape(),
            (i.h, i.w, i.c),
            (o.h, o.w, o.c)
        )));
    }
    Ok(())
}

/// Training loop over a surrogate and its optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub surrogate: Surrogate,
    pub state: TrainingState,
    pub cfg: TrainConfig,
}

impl Trainer {
    /// Fresh run; the normalizer is fitted on `train` unless standardization is off.
    pub fn new(net: Network, params: ParameterSet, train: &Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        check_schema(&net, train, "training")?;
        let norm = if cfg.standardize {
            Normalizer::fit(train)
        } else {
            Normalizer::identity(net.input_schema().c, net.output_schema().c)
        };
        let n = params.len();
        Ok(Trainer {
            surrogate: Surrogate { net, params, norm },
            state: TrainingState {
                epoch: 0,
                adam: AdamState::new(n),
            },
            cfg,
        })
    }

    /// Continues a run from a saved surrogate and optimizer state.
    pub fn resume(surrogate: Surrogate, state: TrainingState, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if state.adam.m.len() != surrogate.params.len() {
            return Err(Error::invalid("optimizer state does not match the parameters"));
        }
        Ok(Trainer { surrogate, state, cfg })
    }

    /// Runs `cfg.epochs` more epochs, recording a history row every `eval_every` epochs and
    /// after the last one. `on_row` sees each row as soon as it exists.
    pub fn run(&mut self, train: &Dataset, test: &Dataset, mut on_row: impl FnMut(&HistoryRow)) -> Result<Vec<HistoryRow>> {
        let net = self.surrogate.net.clone();
        check_schema(&net, train, "training")?;
        check_schema(&net, test, "test")?;
        let weights = self.cfg.channel_weights.clone();
        if let Some(w) = &weights {
            if w.len() != net.output_schema().c {
                return Err(Error::invalid(format!(
                    "{} channel weights for {} output channels",
                    w.len(),
                    net.output_schema().c
                )));
            }
        }
        let norm = &self.surrogate.norm;
        let xs: Vec<Field> = train.inputs().iter().map(|f| norm.input(f)).collect();
        let ys: Vec<Field> = train.outputs().iter().map(|f| norm.output(f)).collect();
        let n = train.len();
        let start = self.state.epoch;
        let end = start + self.cfg.epochs;
        let blocks = net.layout().blocks.clone();
        let mut history = Vec::new();
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in start..end {
            let lr = lr_at(&self.cfg, epoch);
            order.sort_unstable();
            order.shuffle(&mut rng_for(self.cfg.seed, "shuffle", epoch as u64));
            let mut loss_sum = 0.0;
            for (b, idx) in order.chunks(self.cfg.batch_size).enumerate() {
                let ctx = |e: Error| match e {
                    Error::NumericalFailure { message, residual } => Error::NumericalFailure {
                        message: format!("epoch {epoch}, batch {b}: {message}"),
                        residual,
                    },
                    other => other,
                };
                let x = Tensor::from_fields(idx.iter().map(|&i| &xs[i]))?;
                let y = Tensor::from_fields(idx.iter().map(|&i| &ys[i]))?;
                let params = &mut self.surrogate.params;
                let (pred, tape) = net.forward_train(params, &x)?;
                let (mse, dy) = mse_loss(&pred, &y, weights.as_deref())?;
                let loss = regularized_loss(mse, params.values(), self.cfg.weight_decay);
                if !loss.is_finite() {
                    return Err(ctx(Error::numerical("non-finite training loss", loss)));
                }
                loss_sum += loss * idx.len() as f64;
                let mut grads = net.backward(params, &tape, &dy)?.params;
                add_decay_gradient(&mut grads, params.values(), self.cfg.weight_decay);
                self.state
                    .adam
                    .step(params.values_mut(), &grads, lr, self.cfg.adam_hyper(), &blocks)
                    .map_err(ctx)?;
            }
            self.state.epoch = epoch + 1;
            let done = epoch + 1;
            if (done - start) % self.cfg.eval_every == 0 || done == end {
                let (test_rmse, test_r2) = evaluate(&self.surrogate, test)?;
                let row = HistoryRow {
                    epoch: done,
                    lr,
                    train_loss: loss_sum / n as f64,
                    test_rmse,
                    test_r2,
                };
                on_row(&row);
                history.push(row);
            }
        }
        Ok(history)
    }
}

/// Trains `params` on `train` and returns the final surrogate and history.
pub fn fit(
    net: &Network,
    params: ParameterSet,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Surrogate, Vec<HistoryRow>)> {
    let mut t = Trainer::new(net.clone(), params, train, cfg.clone())?;
    let history = t.run(train, test, |_| {})?;
    Ok((t.surrogate, history))
}
