//! Reverse-mode gradient recording.
//!
//! A [`Graph`] records one forward computation. Each node owns its value and,
//! if any of its inputs depends on a parameter, a closure mapping the
//! gradient of the node to gradients of its parents. [`Graph::backward`]
//! consumes the graph, so recordings never outlive a training step.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Maps the gradient of a node's output to one gradient per parent.
pub type BackwardFn = Box<dyn FnOnce(&Tensor) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    param: Option<String>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            parents: vec![],
            backward: None,
            requires_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store
            .get(name)
            .ok_or_else(|| Error::Graph(format!("unknown parameter {name}")))?
            .clone();
        self.nodes.push(Node {
            value,
            parents: vec![],
            backward: None,
            requires_grad: true,
            param: Some(name.to_string()),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an operation. `backward` is dropped unless a parent requires
    /// gradients.
    pub fn push(&mut self, value: Tensor, parents: &[Var], backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Gradients of scalar `loss` with respect to every reachable parameter.
    pub fn gradients(mut self, loss: Var) -> Result<BTreeMap<String, Tensor>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::Graph(format!(
                "loss must be a scalar, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Err(Error::Graph("loss does not depend on any parameter".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));
        let mut out = BTreeMap::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &mut self.nodes[i];
            if let Some(name) = node.param.take() {
                match out.get_mut(&name) {
                    Some(acc) => Tensor::add_assign(acc, &g),
                    None => {
                        out.insert(name, g);
                    }
                }
                continue;
            }
            let Some(backward) = node.backward.take() else { continue };
            let parents = std::mem::take(&mut node.parents);
            let parent_grads = backward(&g);
            debug_assert_eq!(parent_grads.len(), parents.len());
            for (p, pg) in parents.into_iter().zip(parent_grads) {
                if !self.nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), self.nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(out)
    }

    /// Runs the backward pass and accumulates into `store`'s gradient slots.
    pub fn backward(self, loss: Var, store: &mut ParamStore) -> Result<()> {
        for (name, g) in self.gradients(loss)? {
            store.accumulate_grad(&name, &g)?;
        }
        Ok(())
    }

    // ---- elementary operations -------------------------------------------

    /// `a [.., k] x b [k, m] -> [.., m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k) = av.rows_cols();
        if bv.shape().len() != 2 || bv.shape()[0] != k {
            return Err(Error::Shape(format!(
                "matmul {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let m = bv.shape()[1];
        let mut out = vec![0.0; n * m];
        matmul_acc(av.data(), bv.data(), &mut out, n, k, m);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        let value = Tensor::from_vec(shape, out)?;
        let (a_val, b_val) = (av.clone(), bv.clone());
        Ok(self.push(
            value,
            &[a, b],
            Box::new(move |g| {
                let mut ga = vec![0.0; n * k];
                matmul_a_bt_acc(g.data(), b_val.data(), &mut ga, n, k, m);
                let mut gb = vec![0.0; k * m];
                matmul_at_b_acc(a_val.data(), g.data(), &mut gb, n, k, m);
                vec![
                    Tensor::from_vec(a_val.shape().to_vec(), ga).unwrap(),
                    Tensor::from_vec(b_val.shape().to_vec(), gb).unwrap(),
                ]
            }),
        ))
    }

    /// Adds bias `b [m]` to every row of `x [.., m]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let (_, m) = xv.rows_cols();
        if bv.shape() != [m] {
            return Err(Error::Shape(format!("bias {:?} for {:?}", bv.shape(), xv.shape())));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(m) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        Ok(self.push(
            out,
            &[x, b],
            Box::new(move |g| {
                let mut gb = vec![0.0; m];
                for row in g.data().chunks(m) {
                    for (acc, &v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                vec![g.clone(), Tensor::vector(gb)]
            }),
        ))
    }

    fn check_same(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{op}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, &[a, b], Box::new(|g| vec![g.clone(), g.clone()])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "sub")?;
        let bv = self.value(b);
        let out = Tensor::from_vec(
            bv.shape().to_vec(),
            self.value(a).data().iter().zip(bv.data()).map(|(x, y)| x - y).collect(),
        )?;
        Ok(self.push(out, &[a, b], Box::new(|g| vec![g.clone(), g.map(|v| -v)])))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "mul")?;
        let (av, bv) = (self.value(a).clone(), self.value(b).clone());
        let out = Tensor::from_vec(
            av.shape().to_vec(),
            av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect(),
        )?;
        Ok(self.push(
            out,
            &[a, b],
            Box::new(move |g| {
                let ga = g.data().iter().zip(bv.data()).map(|(g, y)| g * y).collect();
                let gb = g.data().iter().zip(av.data()).map(|(g, x)| g * x).collect();
                vec![
                    Tensor::from_vec(av.shape().to_vec(), ga).unwrap(),
                    Tensor::from_vec(av.shape().to_vec(), gb).unwrap(),
                ]
            }),
        ))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        if self.value(a).shape() != c.shape() {
            return Err(Error::Shape(format!(
                "mul_const: {:?} vs {:?}",
                self.value(a).shape(),
                c.shape()
            )));
        }
        let out = Tensor::from_vec(
            c.shape().to_vec(),
            self.value(a).data().iter().zip(c.data()).map(|(x, y)| x * y).collect(),
        )?;
        let c = c.clone();
        Ok(self.push(
            out,
            &[a],
            Box::new(move |g| {
                vec![Tensor::from_vec(
                    c.shape().to_vec(),
                    g.data().iter().zip(c.data()).map(|(g, y)| g * y).collect(),
                )
                .unwrap()]
            }),
        ))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, df_from_out: fn(f64, f64) -> f64) -> Var {
        let x = self.value(a).clone();
        let y = x.map(f);
        let y_saved = y.clone();
        self.push(
            y,
            &[a],
            Box::new(move |g| {
                let d = g
                    .data()
                    .iter()
                    .zip(x.data().iter().zip(y_saved.data()))
                    .map(|(g, (&x, &y))| g * df_from_out(x, y))
                    .collect();
                vec![Tensor::from_vec(x.shape().to_vec(), d).unwrap()]
            }),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, tanh, |_, y| 1.0 - y * y)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let shape = x.shape().to_vec();
        let s = x.data().iter().sum();
        self.push(
            Tensor::scalar(s),
            &[a],
            Box::new(move |g| vec![Tensor::full(&shape, g.item())]),
        )
    }

    /// `sum(a * w)` for a constant `w`; used to probe every output in
    /// gradient checks.
    pub fn weighted_sum(&mut self, a: Var, w: &Tensor) -> Result<Var> {
        let p = self.mul_const(a, w)?;
        Ok(self.sum(p))
    }

    /// Concatenates along the last dimension.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (na, ca) = av.rows_cols();
        let (nb, cb) = bv.rows_cols();
        if na != nb || av.shape()[..av.shape().len() - 1] != bv.shape()[..bv.shape().len() - 1] {
            return Err(Error::Shape(format!(
                "concat {:?} with {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let mut data = Vec::with_capacity(na * (ca + cb));
        for (ra, rb) in av.data().chunks(ca).zip(bv.data().chunks(cb)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
        Ok(self.push(
            Tensor::from_vec(shape, data)?,
            &[a, b],
            Box::new(move |g| {
                let mut ga = Vec::with_capacity(na * ca);
                let mut gb = Vec::with_capacity(na * cb);
                for row in g.data().chunks(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                vec![
                    Tensor::from_vec(sa, ga).unwrap(),
                    Tensor::from_vec(sb, gb).unwrap(),
                ]
            }),
        ))
    }

    /// Picks step `steps[b]` of every row of `x [B, T, D]`, giving `[B, D]`.
    pub fn select_steps(&mut self, x: Var, steps: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let &[b, t, d] = xv.shape() else {
            return Err(Error::Shape(format!("select_steps on {:?}", xv.shape())));
        };
        if steps.len() != b || steps.iter().any(|&s| s >= t) {
            return Err(Error::Shape("select_steps index out of range".into()));
        }
        let mut data = Vec::with_capacity(b * d);
        for (i, &s) in steps.iter().enumerate() {
            let off = (i * t + s) * d;
            data.extend_from_slice(&xv.data()[off..off + d]);
        }
        let steps = steps.to_vec();
        Ok(self.push(
            Tensor::from_vec(vec![b, d], data)?,
            &[x],
            Box::new(move |g| {
                let mut gx = vec![0.0; b * t * d];
                for (i, &s) in steps.iter().enumerate() {
                    let off = (i * t + s) * d;
                    gx[off..off + d].copy_from_slice(&g.data()[i * d..(i + 1) * d]);
                }
                vec![Tensor::from_vec(vec![b, t, d], gx).unwrap()]
            }),
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let old = self.value(x).shape().to_vec();
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(
            value,
            &[x],
            Box::new(move |g| vec![g.clone().reshape(&old).unwrap()]),
        ))
    }
}

/// `tanh` through `expm1`, about twice as fast as the libm call at the same
/// accuracy.
pub fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp_m1();
    (-e / (2.0 + e)).copysign(x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
