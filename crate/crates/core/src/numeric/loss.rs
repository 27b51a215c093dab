use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAPE_EPS: f64 = 1e-7;
pub const BCE_EPS: f64 = 1e-7;

fn check_mape(pred: &Tensor, target: &Tensor, mask: &[bool]) -> Result<usize> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "mape: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let (rows, _) = pred.rows_cols();
    if rows != mask.len() {
        return Err(Error::Shape(format!("mape: {rows} steps but mask of {}", mask.len())));
    }
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(Error::EmptyMask),
        n => Ok(n),
    }
}

/// `100 * mean |target - pred| / max(|target|, eps)` over rows where `mask`
/// is true. Rows are all leading dimensions of `pred`.
pub fn mape_value(pred: &Tensor, target: &Tensor, mask: &[bool], eps: f64) -> Result<f64> {
    let n_rows = check_mape(pred, target, mask)?;
    let (_, c) = pred.rows_cols();
    let mut total = 0.0;
    for ((p, t), &m) in pred.data().chunks(c).zip(target.data().chunks(c)).zip(mask) {
        if m {
            total += p
                .iter()
                .zip(t)
                .map(|(p, t)| (t - p).abs() / t.abs().max(eps))
                .sum::<f64>();
        }
    }
    Ok(100.0 * total / (n_rows * c) as f64)
}

pub fn mape_masked(g: &mut Graph, pred: Var, target: &Tensor, mask: &[bool], eps: f64) -> Result<Var> {
    let value = mape_value(g.value(pred), target, mask, eps)?;
    let (_, c) = target.rows_cols();
    let count = mask.iter().filter(|&&m| m).count() * c;
    let p = g.value(pred).clone();
    let target = target.clone();
    let mask = mask.to_vec();
    Ok(g.push(
        Tensor::scalar(value),
        &[pred],
        Box::new(move |go| {
            let scale = 100.0 * go.item() / count as f64;
            let mut d = vec![0.0; p.len()];
            for (r, &m) in mask.iter().enumerate() {
                if !m {
                    continue;
                }
                for j in r * c..(r + 1) * c {
                    let diff = p.data()[j] - target.data()[j];
                    let sign = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    d[j] = scale * sign / target.data()[j].abs().max(eps);
                }
            }
            vec![Tensor::from_vec(p.shape().to_vec(), d).unwrap()]
        }),
    ))
}

/// Mean binary cross entropy with predictions clamped to `[eps, 1 - eps]`.
pub fn bce_value(pred: &[f64], target: &[f64], eps: f64) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "bce: {} predictions, {} targets",
            pred.len(),
            target.len()
        )));
    }
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / pred.len() as f64)
}

pub fn bce(g: &mut Graph, pred: Var, target: &[f64], eps: f64) -> Result<Var> {
    let p = g.value(pred).clone();
    let value = bce_value(p.data(), target, eps)?;
    let target = target.to_vec();
    Ok(g.push(
        Tensor::scalar(value),
        &[pred],
        Box::new(move |go| {
            let n = target.len() as f64;
            let d = p
                .data()
                .iter()
                .zip(&target)
                .map(|(&p, &t)| {
                    if p < eps || p > 1.0 - eps {
                        0.0
                    } else {
                        go.item() * (-t / p + (1.0 - t) / (1.0 - p)) / n
                    }
                })
                .collect();
            vec![Tensor::from_vec(p.shape().to_vec(), d).unwrap()]
        }),
    ))
}
