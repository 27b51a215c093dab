use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Inference,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub p: f64,
    pub mode: Mode,
}

impl DropoutSpec {
    pub fn new(p: f64, mode: Mode) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        Ok(DropoutSpec { p, mode })
    }

    fn active(&self) -> bool {
        self.mode == Mode::Train && self.p > 0.0
    }
}

/// Inverted-dropout multipliers: 0 with probability `p`, else `1 / (1 - p)`.
pub fn dropout_mask(shape: &[usize], p: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - p);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    Tensor::from_vec(shape.to_vec(), data).expect("mask matches shape")
}

pub fn dropout_apply(x: &Tensor, spec: DropoutSpec, seed: u64) -> Tensor {
    if !spec.active() {
        return x.clone();
    }
    let mask = dropout_mask(x.shape(), spec.p, seed);
    Tensor::from_vec(
        x.shape().to_vec(),
        x.data().iter().zip(mask.data()).map(|(a, m)| a * m).collect(),
    )
    .expect("same shape")
}

/// Graph form of [`dropout_apply`]; identity outside training.
pub fn dropout(g: &mut Graph, x: Var, spec: DropoutSpec, seed: u64) -> Result<Var> {
    if !spec.active() {
        return Ok(x);
    }
    let mask = dropout_mask(g.value(x).shape(), spec.p, seed);
    g.mul_const(x, &mask)
}
