//! Masked additive attention over all steps of a sequence.
//!
//! For every real query step `t` and real key step `s`:
//!
//! ```text
//! score(t, s) = w . tanh(W1 state_t + W2 state_s)
//! weight(t, .) = softmax over real s
//! context_t = sum_s weight(t, s) state_s
//! ```
//!
//! Padded query steps get a zero context and a zero weight row.

use super::lstm::mask_starts;
use crate::error::{Error, Result};
use crate::numeric::{glorot_uniform, matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, tanh, Graph, ParamStore, Tensor, Var};
use crate::rng::stream_seed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionParams {
    pub prefix: String,
    pub state_dim: usize,
    pub attention_dim: usize,
}

impl AttentionParams {
    pub fn w_query(&self) -> String {
        format!("{}.w_query", self.prefix)
    }

    pub fn w_key(&self) -> String {
        format!("{}.w_key", self.prefix)
    }

    pub fn score(&self) -> String {
        format!("{}.score", self.prefix)
    }

    pub fn init(store: &mut ParamStore, prefix: &str, state_dim: usize, attention_dim: usize, seed: u64) -> Result<Self> {
        let p = AttentionParams {
            prefix: prefix.to_string(),
            state_dim,
            attention_dim,
        };
        store.insert(p.w_query(), glorot_uniform(state_dim, attention_dim, stream_seed(seed, 1))?);
        store.insert(p.w_key(), glorot_uniform(state_dim, attention_dim, stream_seed(seed, 2))?);
        let v = glorot_uniform(attention_dim, 1, stream_seed(seed, 3))?.reshape(&[attention_dim])?;
        store.insert(p.score(), v);
        Ok(p)
    }

    pub fn vars(&self, g: &mut Graph, store: &ParamStore) -> Result<AttentionVars> {
        Ok(AttentionVars {
            w_query: g.param(store, &self.w_query())?,
            w_key: g.param(store, &self.w_key())?,
            score: g.param(store, &self.score())?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub w_query: Var,
    pub w_key: Var,
    pub score: Var,
}

pub struct AttentionOutput {
    /// `[B, T, D]`.
    pub contexts: Var,
    /// `[B, T, T]`, query-major.
    pub weights: Tensor,
}

pub fn additive_attention(g: &mut Graph, states: Var, mask: &[bool], w: AttentionVars) -> Result<AttentionOutput> {
    let sv = g.value(states).clone();
    let &[batch, steps, dim] = sv.shape() else {
        return Err(Error::Shape(format!("attention input {:?}", sv.shape())));
    };
    let (wq, wk, v) = (g.value(w.w_query).clone(), g.value(w.w_key).clone(), g.value(w.score).clone());
    let a_dim = v.len();
    if wq.shape() != [dim, a_dim] || wk.shape() != [dim, a_dim] || v.shape() != [a_dim] {
        return Err(Error::Shape(format!(
            "attention weights {:?} {:?} {:?} for state dim {dim}",
            wq.shape(),
            wk.shape(),
            v.shape()
        )));
    }
    let starts = mask_starts(mask, batch, steps)?;
    if let Some(b) = starts.iter().position(|&s| s >= steps) {
        return Err(Error::Mask(format!("attention row {b} is fully masked")));
    }

    // Projections of every step, [B*T, A].
    let mut pq = vec![0.0; batch * steps * a_dim];
    let mut pk = vec![0.0; batch * steps * a_dim];
    matmul_acc(sv.data(), wq.data(), &mut pq, batch * steps, dim, a_dim);
    matmul_acc(sv.data(), wk.data(), &mut pk, batch * steps, dim, a_dim);

    let mut weights = vec![0.0; batch * steps * steps];
    let mut ctx = vec![0.0; batch * steps * dim];
    let mut scores = vec![0.0; steps];
    for b in 0..batch {
        let start = starts[b];
        for t in start..steps {
            let q = &pq[(b * steps + t) * a_dim..(b * steps + t + 1) * a_dim];
            let mut max = f64::NEG_INFINITY;
            for s in start..steps {
                let k = &pk[(b * steps + s) * a_dim..(b * steps + s + 1) * a_dim];
                let e: f64 = q.iter().zip(k).zip(v.data()).map(|((q, k), w)| w * tanh(q + k)).sum();
                scores[s] = e;
                max = max.max(e);
            }
            let row = &mut weights[(b * steps + t) * steps..(b * steps + t + 1) * steps];
            let mut total = 0.0;
            for s in start..steps {
                row[s] = (scores[s] - max).exp();
                total += row[s];
            }
            let c = &mut ctx[(b * steps + t) * dim..(b * steps + t + 1) * dim];
            for s in start..steps {
                row[s] /= total;
                let st = &sv.data()[(b * steps + s) * dim..(b * steps + s + 1) * dim];
                for (cj, &x) in c.iter_mut().zip(st) {
                    *cj += row[s] * x;
                }
            }
        }
    }

    let weights = Tensor::from_vec(vec![batch, steps, steps], weights)?;
    let saved_weights = weights.clone();
    let contexts = g.push(
        Tensor::from_vec(vec![batch, steps, dim], ctx)?,
        &[states, w.w_query, w.w_key, w.score],
        Box::new(move |gout| {
            let go = gout.data();
            let wts = saved_weights.data();
            let mut ds = vec![0.0; batch * steps * dim];
            let mut dpq = vec![0.0; batch * steps * a_dim];
            let mut dpk = vec![0.0; batch * steps * a_dim];
            let mut dv = vec![0.0; a_dim];
            let mut da = vec![0.0; steps];
            for b in 0..batch {
                let start = starts[b];
                for t in start..steps {
                    let qt = b * steps + t;
                    let gt = &go[qt * dim..(qt + 1) * dim];
                    let row = &wts[qt * steps..(qt + 1) * steps];
                    let mut mean = 0.0;
                    for s in start..steps {
                        let ks = b * steps + s;
                        let st = &sv.data()[ks * dim..(ks + 1) * dim];
                        da[s] = gt.iter().zip(st).map(|(g, x)| g * x).sum();
                        mean += row[s] * da[s];
                        for (d, &gj) in ds[ks * dim..(ks + 1) * dim].iter_mut().zip(gt) {
                            *d += row[s] * gj;
                        }
                    }
                    for s in start..steps {
                        let de = row[s] * (da[s] - mean);
                        if de == 0.0 {
                            continue;
                        }
                        let ks = b * steps + s;
                        for a in 0..a_dim {
                            let u = tanh(pq[qt * a_dim + a] + pk[ks * a_dim + a]);
                            dv[a] += de * u;
                            let dz = de * v.data()[a] * (1.0 - u * u);
                            dpq[qt * a_dim + a] += dz;
                            dpk[ks * a_dim + a] += dz;
                        }
                    }
                }
            }
            let n = batch * steps;
            let mut dwq = vec![0.0; dim * a_dim];
            let mut dwk = vec![0.0; dim * a_dim];
            matmul_at_b_acc(sv.data(), &dpq, &mut dwq, n, dim, a_dim);
            matmul_at_b_acc(sv.data(), &dpk, &mut dwk, n, dim, a_dim);
            matmul_a_bt_acc(&dpq, wq.data(), &mut ds, n, dim, a_dim);
            matmul_a_bt_acc(&dpk, wk.data(), &mut ds, n, dim, a_dim);
            vec![
                Tensor::from_vec(vec![batch, steps, dim], ds).unwrap(),
                Tensor::from_vec(vec![dim, a_dim], dwq).unwrap(),
                Tensor::from_vec(vec![dim, a_dim], dwk).unwrap(),
                Tensor::vector(dv),
            ]
        }),
    );
    Ok(AttentionOutput { contexts, weights })
}
