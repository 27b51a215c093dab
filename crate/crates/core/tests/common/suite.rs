//! Gradient cases shared by the core tests and the acceptance run. Each
//! returns one check per layer variant for the given seed.

use super::{check_gradients, mask_for, random_tensor, GradCheck};
use sigver_core::layers::{
    additive_attention, bilstm_forward, dense as dense_layer, dropout, lstm_sequence, Activation, AttentionParams,
    DropoutSpec, LstmParams, Mode,
};
use sigver_core::autoencoder::{build_autoencoder, AeConfig};
use sigver_core::data::Label;
use sigver_core::numeric::{bce, mape_masked, ParamStore, BCE_EPS, MAPE_EPS};
use sigver_core::preprocess::{pad_batch, FeatureSequence, PreprocessConfig, FEATURES};
use sigver_core::siamese::{build_siamese, SiameseConfig};
use sigver_core::stream_seed;

pub type Case = fn(u64) -> Vec<(String, GradCheck)>;

pub const CASES: [(&str, Case); 9] = [
    ("dense", dense_all_activations),
    ("lstm step", lstm_single_step),
    ("bilstm T=7", bilstm_seven_steps_masked),
    ("attention", attention_with_masking),
    ("dropout", dropout_paths),
    ("mape", masked_mape),
    ("bce", binary_cross_entropy),
    ("autoencoder", autoencoder_stack),
    ("siamese", siamese_stack),
];

pub fn dense_all_activations(seed: u64) -> Vec<(String, GradCheck)> {
    let mut out = Vec::new();
    for act in [Activation::ReLU, Activation::Sigmoid, Activation::Linear] {
        let mut store = ParamStore::new();
        store.insert("x", random_tensor(&[3, 4], -1.0, 1.0, stream_seed(seed, 1)));
        store.insert("w", random_tensor(&[4, 5], -1.0, 1.0, stream_seed(seed, 2)));
        store.insert("b", random_tensor(&[5], -0.5, 0.5, stream_seed(seed, 3)));
        let proj = random_tensor(&[3, 5], -1.0, 1.0, stream_seed(seed, 4));
        let r = check_gradients(&store, |g, s| {
            let (x, w, b) = (g.param(s, "x")?, g.param(s, "w")?, g.param(s, "b")?);
            let y = dense_layer(g, x, w, b, act)?;
            g.weighted_sum(y, &proj)
        });
        out.push((format!("dense {act:?}"), r));
    }
    out
}

pub fn lstm_single_step(seed: u64) -> Vec<(String, GradCheck)> {
    let mut out = Vec::new();
    let mut store = ParamStore::new();
    let p = LstmParams::init(&mut store, "lstm", 3, 4, seed).unwrap();
    store.insert("x", random_tensor(&[2, 1, 3], -1.0, 1.0, stream_seed(seed, 9)));
    let proj = random_tensor(&[2, 1, 4], -1.0, 1.0, stream_seed(seed, 10));
    let r = check_gradients(&store, |g, s| {
        let x = g.param(s, "x")?;
        let w = p.vars(g, s)?;
        let h = lstm_sequence(g, x, &[true, true], w, false)?;
        g.weighted_sum(h, &proj)
    });
    out.push(("lstm step".to_string(), r));
    out
}

pub fn bilstm_seven_steps_masked(seed: u64) -> Vec<(String, GradCheck)> {
    let mut out = Vec::new();
    let mut store = ParamStore::new();
    let f = LstmParams::init(&mut store, "fwd", 3, 4, stream_seed(seed, 1)).unwrap();
    let bw = LstmParams::init(&mut store, "bwd", 3, 4, stream_seed(seed, 2)).unwrap();
    store.insert("x", random_tensor(&[2, 7, 3], -1.0, 1.0, stream_seed(seed, 3)));
    let mask = mask_for(&[7, 4], 7);
    let p_states = random_tensor(&[2, 7, 8], -1.0, 1.0, stream_seed(seed, 4));
    let p_final = random_tensor(&[2, 8], -1.0, 1.0, stream_seed(seed, 5));
    let r = check_gradients(&store, |g, s| {
        let x = g.param(s, "x")?;
        let (fv, bv) = (f.vars(g, s)?, bw.vars(g, s)?);
        let out = bilstm_forward(g, x, &mask, fv, bv)?;
        let a = g.weighted_sum(out.states, &p_states)?;
        let b = g.weighted_sum(out.final_state, &p_final)?;
        g.add(a, b)
    });
    out.push(("bilstm".to_string(), r));
    out
}

pub fn attention_with_masking(seed: u64) -> Vec<(String, GradCheck)> {
    let mut out = Vec::new();
    let mut store = ParamStore::new();
    let p = AttentionParams::init(&mut store, "att", 3, 4, seed).unwrap();
    store.insert("states", random_tensor(&[2, 5, 3], -1.0, 1.0, stream_seed(seed, 7)));
    let mask = mask_for(&[5, 3], 5);
    let proj = random_tensor(&[2, 5, 3], -1.0, 1.0, stream_seed(seed, 8));
    let r = check_gradients(&store, |g, s| {
        let x = g.param(s, "states")?;
        let w = p.vars(g, s)?;
        let out = additive_attention(g, x, &mask, w)?;
        g.weighted_sum(out.contexts, &proj)
    });
    out.push(("attention".to_string(), r));
    out
}

pub fn dropout_paths(seed: u64) -> Vec<(String, GradCheck)> {
    let mut out = Vec::new();
    for spec in [DropoutSpec::new(0.5, Mode::Inference).unwrap(), DropoutSpec::new(0.4, Mode::Train).unwrap()] {
        let mut store = ParamStore::new();
        store.insert("x", random_tensor(&[4, 6], -1.0, 1.0, stream_seed(seed, 1)));
        let proj = random_tensor(&[4, 6], -1.0, 1.0, stream_seed(seed, 2));
        let r = check_gradients(&store, |g, s| {
            let x = g.param(s, "x")?;
            let t = g.tanh(x);
            let y = dropout(g, t, spec, stream_seed(seed, 3))?;
            g.weighted_sum(y, &proj)
        });
        out.push((format!("dropout {:?}", spec.mode), r));
    }
    out
}

pub fn masked_mape(seed: u64) -> Vec<(String, GradCheck)> {
    let mut out = Vec::new();
    let mut store = ParamStore::new();
    store.insert("pred", random_tensor(&[2, 4, 3], -2.0, 2.0, stream_seed(seed, 1)));
    let target = random_tensor(&[2, 4, 3], 0.5, 2.0, stream_seed(seed, 2));
    let mask = mask_for(&[4, 2], 4);
    let r = check_gradients(&store, |g, s| {
        let p = g.param(s, "pred")?;
        mape_masked(g, p, &target, &mask, MAPE_EPS)
    });
    out.push(("mape".to_string(), r));
    out
}

pub fn binary_cross_entropy(seed: u64) -> Vec<(String, GradCheck)> {
    let mut out = Vec::new();
    let mut store = ParamStore::new();
    store.insert("logits", random_tensor(&[6, 1], -3.0, 3.0, stream_seed(seed, 1)));
    let target: Vec<f64> = (0..6).map(|i| ((i + seed as usize) % 2) as f64).collect();
    let r = check_gradients(&store, |g, s| {
        let z = g.param(s, "logits")?;
        let p = g.sigmoid(z);
        bce(g, p, &target, BCE_EPS)
    });
    out.push(("bce".to_string(), r));
    out
}

fn features(len: usize, seed: u64) -> FeatureSequence {
    let t = random_tensor(&[len, FEATURES], 0.5, 2.0, seed);
    let rows = t.data().chunks(FEATURES).map(|c| c.try_into().unwrap()).collect();
    FeatureSequence::new(rows, "s", Label::Genuine).unwrap()
}

/// Whole autoencoder, attention on and off, dropout off and on.
pub fn autoencoder_stack(seed: u64) -> Vec<(String, GradCheck)> {
    let mut out = Vec::new();
    let batch = pad_batch(&[features(4, stream_seed(seed, 1)), features(2, stream_seed(seed, 2))], 5).unwrap();
    for attention in [true, false] {
        for mode in [Mode::Inference, Mode::Train] {
            let cfg = AeConfig { units_per_direction: 2, use_attention: attention, dropout_p: 0.3, ..AeConfig::japanese_t4() };
            let model = build_autoencoder(&cfg, &PreprocessConfig::default(), seed).unwrap();
            let r = check_gradients(&model.params, |g, s| model.loss_node(g, s, &batch, mode, stream_seed(seed, 3)));
            out.push((format!("autoencoder attention={attention} {mode:?}"), r));
        }
    }
    out
}

/// Whole Siamese network; the shared leg sees both inputs.
pub fn siamese_stack(seed: u64) -> Vec<(String, GradCheck)> {
    let mut out = Vec::new();
    let a = random_tensor(&[4, 5], -1.0, 1.0, stream_seed(seed, 1));
    let b = random_tensor(&[4, 5], -1.0, 1.0, stream_seed(seed, 2));
    let pairs: Vec<(&[f64], &[f64])> = a.data().chunks(5).zip(b.data().chunks(5)).collect();
    let targets = [1.0, 0.0, 1.0, 0.0];
    for mode in [Mode::Inference, Mode::Train] {
        let cfg = SiameseConfig { leg_units: 3, dropout_p: 0.3, ..SiameseConfig::default() };
        let mut model = build_siamese(&cfg, 5, &PreprocessConfig::default(), seed).unwrap();
        // Zero biases put the head exactly on a ReLU kink whenever a leg is dead.
        let names: Vec<String> = model.params.names().map(str::to_string).collect();
        for (i, name) in names.iter().filter(|n| n.ends_with(".b")).enumerate() {
            let shape = model.params.get(name).unwrap().shape().to_vec();
            *model.params.get_mut(name).unwrap() = random_tensor(&shape, -0.5, 0.5, stream_seed(seed, 10 + i as u64));
        }
        let r = check_gradients(&model.params, |g, s| model.loss_node(g, s, &pairs, &targets, mode, stream_seed(seed, 3)));
        out.push((format!("siamese {mode:?}"), r));
    }
    out
}
