use crate::error::{Error, Result};
use crate::field::Field;

fn check_pairs(pred: &[Field], target: &[Field]) -> Result<()> {
    if target.is_empty() {
        return Err(Error::invalid("metrics need at least one sample"));
    }
    if pred.len() != target.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    if let Some(i) = pred.iter().zip(target).position(|(a, b)| a.shape() != b.shape()) {
        return Err(Error::invalid(format!("sample {i}: prediction and target shapes differ")));
    }
    Ok(())
}

fn sq_dist(a: &Field, b: &Field) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `√((1/M) Σᵢ ‖ŷᵢ − yᵢ‖²)` with the norm over all entries of a field.
pub fn rmse(pred: &[Field], target: &[Field]) -> Result<f64> {
    check_pairs(pred, target)?;
    let s: f64 = pred.iter().zip(target).map(|(a, b)| sq_dist(a, b)).sum();
    Ok((s / target.len() as f64).sqrt())
}

/// Entrywise mean of a set of same-shaped fields.
pub fn mean_field(fields: &[Field]) -> Result<Field> {
    let first = fields.first().ok_or_else(|| Error::invalid("mean of an empty set"))?;
    let (r, c, ch) = first.shape();
    let mut acc = vec![0.0; first.len()];
    for f in fields {
        for (a, v) in acc.iter_mut().zip(f.as_slice()) {
            *a += v;
        }
    }
    let n = fields.len() as f64;
    Field::from_vec(r, c, ch, acc.into_iter().map(|v| v / n).collect())
}

/// `1 − Σ‖ŷᵢ − yᵢ‖² / Σ‖ȳ − yᵢ‖²`, all output channels pooled.
pub fn r_squared(pred: &[Field], target: &[Field]) -> Result<f64> {
    check_pairs(pred, target)?;
    let mean = mean_field(target)?;
    let ss_tot: f64 = target.iter().map(|y| sq_dist(&mean, y)).sum();
    if !(ss_tot > 0.0) {
        return Err(Error::DegenerateData("targets have zero variance".into()));
    }
    let ss_res: f64 = pred.iter().zip(target).map(|(a, b)| sq_dist(a, b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}
