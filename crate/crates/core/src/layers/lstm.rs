//! LSTM cell and masked sequence recurrence with backpropagation through
//! time.
//!
//! Gate columns are laid out `[input, forget, cell, output]`, each `H` wide:
//!
//! ```text
//! z = x Wx + h Wh + b
//! i = sig(z_i)  f = sig(z_f)  g = tanh(z_g)  o = sig(z_o)
//! c' = f * c + i * g
//! h' = o * tanh(c')
//! ```
//!
//! Masked steps leave `h` and `c` untouched and emit zeros.

use crate::error::{Error, Result};
use crate::numeric::{glorot_uniform, matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, sigmoid, tanh, Graph, ParamStore, Tensor, Var};
use crate::rng::stream_seed;

/// Parameter names for one LSTM direction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LstmParams {
    pub prefix: String,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmParams {
    pub fn wx(&self) -> String {
        format!("{}.wx", self.prefix)
    }

    pub fn wh(&self) -> String {
        format!("{}.wh", self.prefix)
    }

    pub fn bias(&self) -> String {
        format!("{}.b", self.prefix)
    }

    /// Registers Glorot-uniform weights and a bias that is zero except for
    /// the forget gate, which starts at 1.
    pub fn init(store: &mut ParamStore, prefix: &str, input_size: usize, hidden_size: usize, seed: u64) -> Result<Self> {
        let p = LstmParams {
            prefix: prefix.to_string(),
            input_size,
            hidden_size,
        };
        let h4 = 4 * hidden_size;
        store.insert(p.wx(), glorot_uniform(input_size, h4, stream_seed(seed, 1))?);
        store.insert(p.wh(), glorot_uniform(hidden_size, h4, stream_seed(seed, 2))?);
        let mut b = vec![0.0; h4];
        b[hidden_size..2 * hidden_size].fill(1.0);
        store.insert(p.bias(), Tensor::vector(b));
        Ok(p)
    }

    pub fn vars(&self, g: &mut Graph, store: &ParamStore) -> Result<LstmVars> {
        Ok(LstmVars {
            wx: g.param(store, &self.wx())?,
            wh: g.param(store, &self.wh())?,
            b: g.param(store, &self.bias())?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
}

fn check_weights(wx: &Tensor, wh: &Tensor, b: &Tensor, input: usize) -> Result<usize> {
    let h = wh.shape().first().copied().unwrap_or(0);
    let ok = wx.shape() == [input, 4 * h] && wh.shape() == [h, 4 * h] && b.shape() == [4 * h] && h > 0;
    if ok {
        Ok(h)
    } else {
        Err(Error::Shape(format!(
            "lstm weights wx {:?}, wh {:?}, b {:?} for input {input}",
            wx.shape(),
            wh.shape(),
            b.shape()
        )))
    }
}

/// Pre-activations `z = b + x Wx + h Wh`.
fn gates_preact(x: &[f64], h: &[f64], wx: &[f64], wh: &[f64], b: &[f64], z: &mut [f64]) {
    let h4 = z.len();
    z.copy_from_slice(b);
    for (k, &xv) in x.iter().enumerate() {
        if xv != 0.0 {
            for (zj, &w) in z.iter_mut().zip(&wx[k * h4..(k + 1) * h4]) {
                *zj += xv * w;
            }
        }
    }
    for (k, &hv) in h.iter().enumerate() {
        if hv != 0.0 {
            for (zj, &w) in z.iter_mut().zip(&wh[k * h4..(k + 1) * h4]) {
                *zj += hv * w;
            }
        }
    }
}

/// Applies gate nonlinearities in place: `z` becomes `[i, f, g, o]`.
fn activate(z: &mut [f64], hidden: usize) {
    for (j, v) in z.iter_mut().enumerate() {
        *v = if j / hidden == 2 { tanh(*v) } else { sigmoid(*v) };
    }
}

/// One LSTM step on plain vectors. Returns `(h', c')`.
pub fn lstm_step(x: &[f64], h: &[f64], c: &[f64], wx: &Tensor, wh: &Tensor, b: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let hidden = check_weights(wx, wh, b, x.len())?;
    if h.len() != hidden || c.len() != hidden {
        return Err(Error::Shape(format!(
            "lstm state sizes {} / {} for hidden {hidden}",
            h.len(),
            c.len()
        )));
    }
    let mut z = vec![0.0; 4 * hidden];
    gates_preact(x, h, wx.data(), wh.data(), b.data(), &mut z);
    activate(&mut z, hidden);
    let mut h2 = vec![0.0; hidden];
    let mut c2 = vec![0.0; hidden];
    for j in 0..hidden {
        let (i, f, g, o) = (z[j], z[hidden + j], z[2 * hidden + j], z[3 * hidden + j]);
        c2[j] = f * c[j] + i * g;
        h2[j] = o * tanh(c2[j]);
    }
    Ok((h2, c2))
}

/// Checks that each row of a `B x T` mask is `false* true*`, returning the
/// first real step per row.
pub fn mask_starts(mask: &[bool], batch: usize, steps: usize) -> Result<Vec<usize>> {
    if mask.len() != batch * steps {
        return Err(Error::Shape(format!(
            "mask of {} for {batch} x {steps}",
            mask.len()
        )));
    }
    mask.chunks(steps.max(1))
        .take(batch)
        .enumerate()
        .map(|(b, row)| {
            let start = row.iter().position(|&m| m).unwrap_or(steps);
            if row[start..].iter().all(|&m| m) {
                Ok(start)
            } else {
                Err(Error::Mask(format!("row {b} is not pre-padded")))
            }
        })
        .collect()
}

/// Per-step record kept for the backward pass. Rows are the batch entries
/// that are real at this step, in batch order.
struct StepCache {
    t: usize,
    rows: Vec<usize>,
    /// Activated gates `[i, f, g, o]`, `[n, 4H]`.
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    h_prev: Vec<f64>,
    tanh_c: Vec<f64>,
    x: Vec<f64>,
}

/// Runs one direction of an LSTM over `x [B, T, In]`. `reverse` processes
/// steps from last to first. Output is `[B, T, H]` with zeros at masked
/// steps.
pub fn lstm_sequence(
    g: &mut Graph,
    x: Var,
    mask: &[bool],
    w: LstmVars,
    reverse: bool,
) -> Result<Var> {
    let xv = g.value(x);
    let &[batch, steps, input] = xv.shape() else {
        return Err(Error::Shape(format!("lstm input {:?}", xv.shape())));
    };
    let (wx, wh, bias) = (g.value(w.wx).clone(), g.value(w.wh).clone(), g.value(w.b).clone());
    let hidden = check_weights(&wx, &wh, &bias, input)?;
    let starts = mask_starts(mask, batch, steps)?;
    let h4 = 4 * hidden;
    let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
    let xd = xv.data();

    let mut out = vec![0.0; batch * steps * hidden];
    let mut h = vec![0.0; batch * hidden];
    let mut c = vec![0.0; batch * hidden];
    let mut caches = Vec::with_capacity(steps);
    for &t in &order {
        let rows: Vec<usize> = (0..batch).filter(|&b| starts[b] <= t).collect();
        if rows.is_empty() {
            continue;
        }
        let n = rows.len();
        let mut xt = Vec::with_capacity(n * input);
        let mut h_prev = Vec::with_capacity(n * hidden);
        let mut c_prev = Vec::with_capacity(n * hidden);
        let mut z = Vec::with_capacity(n * h4);
        for &b in &rows {
            let idx = b * steps + t;
            xt.extend_from_slice(&xd[idx * input..(idx + 1) * input]);
            h_prev.extend_from_slice(&h[b * hidden..(b + 1) * hidden]);
            c_prev.extend_from_slice(&c[b * hidden..(b + 1) * hidden]);
            z.extend_from_slice(bias.data());
        }
        matmul_acc(&xt, wx.data(), &mut z, n, input, h4);
        matmul_acc(&h_prev, wh.data(), &mut z, n, hidden, h4);
        let mut tanh_c = vec![0.0; n * hidden];
        for (r, &b) in rows.iter().enumerate() {
            let zr = &mut z[r * h4..(r + 1) * h4];
            activate(zr, hidden);
            let idx = b * steps + t;
            for j in 0..hidden {
                let cn = zr[hidden + j] * c_prev[r * hidden + j] + zr[j] * zr[2 * hidden + j];
                let tc = tanh(cn);
                let hn = zr[3 * hidden + j] * tc;
                tanh_c[r * hidden + j] = tc;
                c[b * hidden + j] = cn;
                h[b * hidden + j] = hn;
                out[idx * hidden + j] = hn;
            }
        }
        caches.push(StepCache {
            t,
            rows,
            gates: z,
            c_prev,
            h_prev,
            tanh_c,
            x: xt,
        });
    }

    let value = Tensor::from_vec(vec![batch, steps, hidden], out)?;
    Ok(g.push(
        value,
        &[x, w.wx, w.wh, w.b],
        Box::new(move |gout| {
            let go = gout.data();
            let mut dx = vec![0.0; batch * steps * input];
            let mut dwx = vec![0.0; input * h4];
            let mut dwh = vec![0.0; hidden * h4];
            let mut db = vec![0.0; h4];
            let mut dh_next = vec![0.0; batch * hidden];
            let mut dc_next = vec![0.0; batch * hidden];
            for cache in caches.iter().rev() {
                let n = cache.rows.len();
                let t = cache.t;
                let mut dz = vec![0.0; n * h4];
                for (r, &b) in cache.rows.iter().enumerate() {
                    let z = &cache.gates[r * h4..(r + 1) * h4];
                    let dzr = &mut dz[r * h4..(r + 1) * h4];
                    let idx = b * steps + t;
                    for j in 0..hidden {
                        let (i, f, gg, o) = (z[j], z[hidden + j], z[2 * hidden + j], z[3 * hidden + j]);
                        let dh = dh_next[b * hidden + j] + go[idx * hidden + j];
                        let tc = cache.tanh_c[r * hidden + j];
                        let d_o = dh * tc;
                        let dc = dc_next[b * hidden + j] + dh * o * (1.0 - tc * tc);
                        let di = dc * gg;
                        let dg = dc * i;
                        let df = dc * cache.c_prev[r * hidden + j];
                        dc_next[b * hidden + j] = dc * f;
                        dzr[j] = di * i * (1.0 - i);
                        dzr[hidden + j] = df * f * (1.0 - f);
                        dzr[2 * hidden + j] = dg * (1.0 - gg * gg);
                        dzr[3 * hidden + j] = d_o * o * (1.0 - o);
                    }
                    for (acc, &d) in db.iter_mut().zip(dzr.iter()) {
                        *acc += d;
                    }
                }
                matmul_at_b_acc(&cache.x, &dz, &mut dwx, n, input, h4);
                matmul_at_b_acc(&cache.h_prev, &dz, &mut dwh, n, hidden, h4);
                let mut dxt = vec![0.0; n * input];
                matmul_a_bt_acc(&dz, wx.data(), &mut dxt, n, input, h4);
                let mut dht = vec![0.0; n * hidden];
                matmul_a_bt_acc(&dz, wh.data(), &mut dht, n, hidden, h4);
                for (r, &b) in cache.rows.iter().enumerate() {
                    let idx = b * steps + t;
                    dx[idx * input..(idx + 1) * input].copy_from_slice(&dxt[r * input..(r + 1) * input]);
                    dh_next[b * hidden..(b + 1) * hidden].copy_from_slice(&dht[r * hidden..(r + 1) * hidden]);
                }
            }
            vec![
                Tensor::from_vec(vec![batch, steps, input], dx).unwrap(),
                Tensor::from_vec(vec![input, h4], dwx).unwrap(),
                Tensor::from_vec(vec![hidden, h4], dwh).unwrap(),
                Tensor::vector(db),
            ]
        }),
    ))
}

/// Bidirectional outputs.
#[derive(Debug, Clone, Copy)]
pub struct BiOutput {
    /// `[B, T, 2H]`, forward half first.
    pub states: Var,
    /// `[B, 2H]`: forward state at the last real step, backward state at the
    /// first real step.
    pub final_state: Var,
}

pub fn bilstm_forward(
    g: &mut Graph,
    x: Var,
    mask: &[bool],
    forward: LstmVars,
    backward: LstmVars,
) -> Result<BiOutput> {
    let &[batch, steps, _] = g.value(x).shape() else {
        return Err(Error::Shape(format!("bilstm input {:?}", g.value(x).shape())));
    };
    let starts = mask_starts(mask, batch, steps)?;
    if starts.iter().any(|&s| s >= steps) {
        return Err(Error::Mask("bilstm row with no real steps".into()));
    }
    let fwd = lstm_sequence(g, x, mask, forward, false)?;
    let bwd = lstm_sequence(g, x, mask, backward, true)?;
    let states = g.concat_last(fwd, bwd)?;
    let last = vec![steps - 1; batch];
    let f_final = g.select_steps(fwd, &last)?;
    let b_final = g.select_steps(bwd, &starts)?;
    let final_state = g.concat_last(f_final, b_final)?;
    Ok(BiOutput { states, final_state })
}
