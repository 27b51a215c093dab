//! Central finite-difference gradient oracle. It only evaluates forward
//! passes, so it stays independent of every backward implementation.
#![allow(dead_code)]

use sigver_core::numeric::{Graph, ParamStore, Var};
use sigver_core::Result;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Gradients smaller than this, times the loss magnitude when it exceeds 1,
/// are compared on an absolute scale; below it the finite-difference
/// quotient is dominated by rounding of the loss.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

fn loss_value(store: &ParamStore, build: &impl Fn(&mut Graph, &ParamStore) -> Result<Var>) -> f64 {
    let mut g = Graph::new();
    let loss = build(&mut g, store).expect("forward pass");
    g.value(loss).item()
}

/// Compares analytic gradients against central differences for every
/// parameter entry in `store`.
pub fn check_gradients(store: &ParamStore, build: impl Fn(&mut Graph, &ParamStore) -> Result<Var>) -> GradCheck {
    let mut g = Graph::new();
    let loss = build(&mut g, store).expect("forward pass");
    let floor = ABS_FLOOR * g.value(loss).item().abs().max(1.0);
    let analytic = g.gradients(loss).expect("backward pass");

    let mut result = GradCheck { max_rel_error: 0.0, worst: String::new(), checked: 0 };
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let n = store.get(&name).unwrap().len();
        for i in 0..n {
            let mut plus = store.clone();
            plus.get_mut(&name).unwrap().data_mut()[i] += FD_STEP;
            let mut minus = store.clone();
            minus.get_mut(&name).unwrap().data_mut()[i] -= FD_STEP;
            let numeric = (loss_value(&plus, &build) - loss_value(&minus, &build)) / (2.0 * FD_STEP);
            let a = analytic.get(&name).map(|t| t.data()[i]).unwrap_or(0.0);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            result.checked += 1;
            if err > result.max_rel_error {
                result.max_rel_error = err;
                result.worst = format!("{name}[{i}]: analytic {a:e}, numeric {numeric:e}");
            }
        }
    }
    result
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> sigver_core::numeric::Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    sigver_core::numeric::Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Pre-padded mask for `lengths` over `steps`.
pub fn mask_for(lengths: &[usize], steps: usize) -> Vec<bool> {
    lengths.iter().flat_map(|&l| (0..steps).map(move |t| t >= steps - l)).collect()
}

pub fn assert_close(name: &str, seed: u64, r: &GradCheck) {
    assert!(r.checked > 0, "{name}: nothing checked");
    assert!(r.max_rel_error <= REL_TOL, "{name} seed {seed}: rel error {:e} at {}", r.max_rel_error, r.worst);
}

pub mod suite;
