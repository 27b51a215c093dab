use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{glorot_uniform, Graph, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    Sigmoid,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseParams {
    pub prefix: String,
    pub input: usize,
    pub units: usize,
    pub activation: Activation,
}

impl DenseParams {
    pub fn weight(&self) -> String {
        format!("{}.w", self.prefix)
    }

    pub fn bias(&self) -> String {
        format!("{}.b", self.prefix)
    }

    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        units: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let p = DenseParams {
            prefix: prefix.to_string(),
            input,
            units,
            activation,
        };
        store.insert(p.weight(), glorot_uniform(input, units, seed)?);
        store.insert(p.bias(), Tensor::zeros(&[units]));
        Ok(p)
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, &self.weight())?;
        let b = g.param(store, &self.bias())?;
        dense(g, x, w, b, self.activation)
    }
}

/// `activation(x W + b)` over the last dimension of `x`.
pub fn dense(g: &mut Graph, x: Var, w: Var, b: Var, activation: Activation) -> Result<Var> {
    let y = g.matmul(x, w)?;
    let y = g.add_bias(y, b)?;
    Ok(match activation {
        Activation::ReLU => g.relu(y),
        Activation::Sigmoid => g.sigmoid(y),
        Activation::Linear => y,
    })
}

/// Graph-free evaluation of [`dense`].
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor, activation: Activation) -> Result<Tensor> {
    if w.shape().len() != 2 {
        return Err(Error::Shape(format!("dense weight {:?}", w.shape())));
    }
    let mut g = Graph::new();
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let y = dense(&mut g, xv, wv, bv, activation)?;
    Ok(g.value(y).clone())
}
