use crate::error::{Error, Result};
use crate::nn::{Block, Tensor};

/// `(1/N) Σᵢ Σ_c w_c ‖ŷᵢ,c − yᵢ,c‖²` and its gradient with respect to `pred`.
///
/// With no weights every channel counts once, which is the plain per-sample squared error
/// summed over all entries.
pub fn mse_loss(pred: &Tensor, target: &Tensor, channel_weights: Option<&[f64]>) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::invalid(format!(
            "prediction shape {:?} does not match target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if let Some(w) = channel_weights {
        if w.len() != pred.c {
            return Err(Error::invalid(format!("{} channel weights for {} channels", w.len(), pred.c)));
        }
    }
    let n = pred.n as f64;
    let p = pred.plane();
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.n, pred.c, pred.h, pred.w);
    for (k, ((g, a), b)) in grad
        .data
        .chunks_exact_mut(p)
        .zip(pred.data.chunks_exact(p))
        .zip(target.data.chunks_exact(p))
        .enumerate()
    {
        let wc = channel_weights.map_or(1.0, |w| w[k % pred.c]);
        let mut s = 0.0;
        for ((gi, ai), bi) in g.iter_mut().zip(a).zip(b) {
            let d = ai - bi;
            s += d * d;
            *gi = 2.0 * wc * d / n;
        }
        loss += wc * s;
    }
    Ok((loss / n, grad))
}

/// `mse + λ Σ θ²` over every learnable value.
pub fn regularized_loss(mse: f64, values: &[f64], lambda: f64) -> f64 {
    mse + lambda * values.iter().map(|v| v * v).sum::<f64>()
}

/// Adds the weight-decay gradient `2λθ` into `grads`.
pub fn add_decay_gradient(grads: &mut [f64], values: &[f64], lambda: f64) {
    for (g, v) in grads.iter_mut().zip(values) {
        *g += 2.0 * lambda * v;
    }
}

/// First and second moment buffers of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// One bias-corrected Adam update of `values`, moving against `grads`.
    ///
    /// `blocks` names the parameter slices for error messages; a non-finite gradient aborts
    /// before anything is modified.
    pub fn step(
        &mut self,
        values: &mut [f64],
        grads: &[f64],
        lr: f64,
        (beta1, beta2, eps): (f64, f64, f64),
        blocks: &[Block],
    ) -> Result<()> {
        if values.len() != grads.len() || values.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "buffer lengths differ: values {}, grads {}, moments {}",
                values.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            let name = blocks
                .iter()
                .find(|b| (b.offset..b.offset + b.len).contains(&i))
                .map_or_else(|| format!("parameter {i}"), |b| b.name.clone());
            return Err(Error::numerical(format!("non-finite gradient in {name}"), grads[i]));
        }
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((x, &g), m), v) in values.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *x -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
        Ok(())
    }
}
