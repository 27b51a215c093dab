//! Sequence-to-sequence BiLSTM autoencoder.
//!
//! ```text
//! x (reversed) -> [BiLSTM]xE -> attention? -> [BiLSTM]xD -> dense(12) -> x
//! ```
//!
//! The decoder is not autoregressive: it reads the per-step attention
//! contexts (or the encoder states when attention is off) and produces the
//! whole reconstruction in one pass. The fixed-length embedding is the top
//! encoder layer's final forward and backward hidden states.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::layers::{
    additive_attention, bilstm_forward, dropout, Activation, AttentionParams, DenseParams, DropoutSpec, LstmParams, Mode,
};
use crate::numeric::{
    adam_step, early_stop, load_container, mape_masked, mape_value, save_container, AdamState, EarlyStopConfig, Graph,
    ModelFile, OptimizerConfig, ParamStore, Tensor, Var, MAPE_EPS,
};
use crate::preprocess::{pad_to_longest, FeatureSequence, Fingerprint, PaddedBatch, PreprocessConfig, FEATURES};
use crate::rng::stream_seed;

pub const PRESET_T4: &str = "japanese-t4";
pub const PRESET_T6: &str = "gpds-t6";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeConfig {
    pub preset: String,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub units_per_direction: usize,
    pub dropout_p: f64,
    pub use_attention: bool,
    pub reverse_encoder_input: bool,
    pub optimizer: OptimizerConfig,
    pub early_stop: EarlyStopConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Denominator floor of the training loss. Reported losses always use
    /// [`MAPE_EPS`].
    pub mape_epsilon: f64,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig::japanese_t4()
    }
}

impl AeConfig {
    /// One BiLSTM on each side with attention in between.
    pub fn japanese_t4() -> Self {
        AeConfig {
            preset: PRESET_T4.into(),
            encoder_layers: 1,
            decoder_layers: 1,
            units_per_direction: 64,
            dropout_p: 0.5,
            use_attention: true,
            reverse_encoder_input: true,
            optimizer: OptimizerConfig::default(),
            early_stop: EarlyStopConfig::default(),
            batch_size: 128,
            max_epochs: 1000,
            mape_epsilon: MAPE_EPS,
        }
    }

    pub fn gpds_t6() -> Self {
        AeConfig {
            preset: PRESET_T6.into(),
            encoder_layers: 2,
            decoder_layers: 2,
            dropout_p: 0.65,
            ..AeConfig::japanese_t4()
        }
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        match name {
            PRESET_T4 => Ok(AeConfig::japanese_t4()),
            PRESET_T6 => Ok(AeConfig::gpds_t6()),
            other => Err(Error::Config(format!("unknown autoencoder preset {other:?}"))),
        }
    }

    pub fn latent_dim(&self) -> usize {
        2 * self.units_per_direction
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_layers < 1 || self.decoder_layers < 1 {
            return Err(Error::Config("autoencoder needs at least one encoder and one decoder layer".into()));
        }
        if self.units_per_direction < 1 {
            return Err(Error::Config("units_per_direction must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.mape_epsilon > 0.0) {
            return Err(Error::Config("mape_epsilon must be positive".into()));
        }
        self.optimizer.validate()?;
        self.early_stop.validate()
    }
}

/// Fixed-length encoding of one signature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVector {
    pub values: Vec<f64>,
    pub subject_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedAutoencoder {
    pub params: ParamStore,
    pub config: AeConfig,
    pub preprocess: PreprocessConfig,
}

/// Per-layer parameter handles, derived from the config alone.
struct Layout {
    encoder: Vec<(LstmParams, LstmParams)>,
    attention: Option<AttentionParams>,
    decoder: Vec<(LstmParams, LstmParams)>,
    output: DenseParams,
}

fn bi_layer(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, seed: u64) -> Result<(LstmParams, LstmParams)> {
    Ok((
        LstmParams::init(store, &format!("{prefix}.fwd"), input, hidden, stream_seed(seed, 1))?,
        LstmParams::init(store, &format!("{prefix}.bwd"), input, hidden, stream_seed(seed, 2))?,
    ))
}

fn layout(store: &mut ParamStore, cfg: &AeConfig, seed: u64) -> Result<Layout> {
    let h = cfg.units_per_direction;
    let mut encoder = Vec::new();
    for l in 0..cfg.encoder_layers {
        let input = if l == 0 { FEATURES } else { 2 * h };
        encoder.push(bi_layer(store, &format!("encoder.{l}"), input, h, stream_seed(seed, 10 + l as u64))?);
    }
    let attention = if cfg.use_attention {
        Some(AttentionParams::init(store, "attention", 2 * h, h, stream_seed(seed, 100))?)
    } else {
        None
    };
    let mut decoder = Vec::new();
    for l in 0..cfg.decoder_layers {
        let input = if l == 0 && cfg.use_attention { 4 * h } else { 2 * h };
        decoder.push(bi_layer(store, &format!("decoder.{l}"), input, h, stream_seed(seed, 200 + l as u64))?);
    }
    let output = DenseParams::init(store, "output", 2 * h, FEATURES, Activation::Linear, stream_seed(seed, 300))?;
    Ok(Layout {
        encoder,
        attention,
        decoder,
        output,
    })
}

/// Fresh Glorot-initialized model. Identical seeds give identical weights.
pub fn build_autoencoder(cfg: &AeConfig, preprocess: &PreprocessConfig, seed: u64) -> Result<TrainedAutoencoder> {
    cfg.validate()?;
    preprocess.validate()?;
    let mut params = ParamStore::new();
    layout(&mut params, cfg, seed)?;
    Ok(TrainedAutoencoder {
        params,
        config: cfg.clone(),
        preprocess: preprocess.clone(),
    })
}

/// Reverses the real region of every row of `[B, T, D]` data, leaving the
/// leading padding in place. An involution.
fn reverse_rows(data: &[f64], lengths: &[usize], steps: usize, dim: usize) -> Vec<f64> {
    let mut out = data.to_vec();
    for (b, &len) in lengths.iter().enumerate() {
        let start = steps - len;
        for j in 0..len {
            let from = (b * steps + steps - 1 - j) * dim;
            let to = (b * steps + start + j) * dim;
            out[to..to + dim].copy_from_slice(&data[from..from + dim]);
        }
    }
    out
}

/// The encoder's view of a batch: each row's real region in reverse order,
/// padding still in front. Returns the input unchanged when `reverse` is off.
pub fn encoder_input(batch: &PaddedBatch, reverse: bool) -> Tensor {
    if !reverse {
        return batch.tensor.clone();
    }
    let data = reverse_rows(batch.tensor.data(), &batch.lengths, batch.steps(), FEATURES);
    Tensor::from_vec(batch.tensor.shape().to_vec(), data).expect("same shape")
}

/// Graph form of [`reverse_rows`].
fn reverse_steps(g: &mut Graph, x: Var, lengths: &[usize]) -> Result<Var> {
    let v = g.value(x);
    let &[_, steps, dim] = v.shape() else {
        return Err(Error::Shape(format!("reverse_steps input {:?}", v.shape())));
    };
    let shape = v.shape().to_vec();
    let out = Tensor::from_vec(shape.clone(), reverse_rows(v.data(), lengths, steps, dim))?;
    let lengths = lengths.to_vec();
    Ok(g.push(
        out,
        &[x],
        Box::new(move |go| vec![Tensor::from_vec(shape, reverse_rows(go.data(), &lengths, steps, dim)).unwrap()]),
    ))
}

struct Pass {
    latent: Var,
    reconstruction: Option<Var>,
}

impl TrainedAutoencoder {
    pub fn fingerprint(&self) -> Fingerprint {
        self.preprocess.fingerprint()
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim()
    }

    fn layout(&self) -> Layout {
        // Rebuilding into a scratch store is cheap next to a forward pass and
        // keeps names in one place.
        let mut scratch = ParamStore::new();
        layout(&mut scratch, &self.config, 0).expect("config validated at build time")
    }

    fn check_fingerprint(&self, found: Option<&Fingerprint>) -> Result<()> {
        let expected = self.fingerprint();
        if found != Some(&expected) {
            return Err(Error::FingerprintMismatch {
                expected: expected.to_string(),
                found: found.map_or_else(|| "none".to_string(), |f| f.to_string()),
            });
        }
        Ok(())
    }

    fn pass(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &PaddedBatch,
        mode: Mode,
        seed: u64,
        decode: bool,
    ) -> Result<Pass> {
        let lay = self.layout();
        let spec = DropoutSpec::new(self.config.dropout_p, mode)?;
        let mask = &batch.mask;
        let mut h = g.constant(encoder_input(batch, self.config.reverse_encoder_input));
        let mut latent = None;
        for (l, (f, b)) in lay.encoder.iter().enumerate() {
            let (fv, bv) = (f.vars(g, store)?, b.vars(g, store)?);
            let out = bilstm_forward(g, h, mask, fv, bv)?;
            h = dropout(g, out.states, spec, stream_seed(seed, l as u64))?;
            latent = Some(out.final_state);
        }
        let latent = latent.expect("at least one encoder layer");
        if !decode {
            return Ok(Pass {
                latent,
                reconstruction: None,
            });
        }
        // Per-step states go back to input time order so that decoder step t
        // lines up with target row t.
        if self.config.reverse_encoder_input {
            h = reverse_steps(g, h, &batch.lengths)?;
        }
        if let Some(att) = &lay.attention {
            let w = att.vars(g, store)?;
            let contexts = additive_attention(g, h, mask, w)?.contexts;
            h = g.concat_last(h, contexts)?;
        }
        for (l, (f, b)) in lay.decoder.iter().enumerate() {
            let (fv, bv) = (f.vars(g, store)?, b.vars(g, store)?);
            h = bilstm_forward(g, h, mask, fv, bv)?.states;
            h = dropout(g, h, spec, stream_seed(seed, 100 + l as u64))?;
        }
        let reconstruction = lay.output.apply(g, store, h)?;
        Ok(Pass {
            latent,
            reconstruction: Some(reconstruction),
        })
    }

    /// Masked reconstruction loss of one batch as a graph node, using the
    /// parameters in `store` rather than the model's own.
    pub fn loss_node(&self, g: &mut Graph, store: &ParamStore, batch: &PaddedBatch, mode: Mode, seed: u64) -> Result<Var> {
        let pass = self.pass(g, store, batch, mode, seed, true)?;
        // The target is always the original, un-reversed batch.
        let eps = match mode {
            Mode::Train => self.config.mape_epsilon,
            Mode::Inference => MAPE_EPS,
        };
        mape_masked(g, pass.reconstruction.unwrap(), &batch.tensor, &batch.mask, eps)
    }

    /// Inference-mode masked MAPE over a batch.
    pub fn reconstruction_loss(&self, batch: &PaddedBatch) -> Result<f64> {
        self.check_fingerprint(batch.fingerprint.as_ref())?;
        let mut g = Graph::new();
        let loss = self.loss_node(&mut g, &self.params, batch, Mode::Inference, 0)?;
        Ok(g.value(loss).item())
    }

    /// Encodes a padded batch; one latent row per sample.
    pub fn encode_batch(&self, batch: &PaddedBatch) -> Result<Vec<Vec<f64>>> {
        self.check_fingerprint(batch.fingerprint.as_ref())?;
        let mut g = Graph::new();
        let pass = self.pass(&mut g, &self.params, batch, Mode::Inference, 0, false)?;
        let d = self.latent_dim();
        Ok(g.value(pass.latent).data().chunks(d).map(<[f64]>::to_vec).collect())
    }

    pub fn encode(&self, fs: &FeatureSequence) -> Result<LatentVector> {
        Ok(self.encode_all(std::slice::from_ref(fs))?.remove(0))
    }

    /// Encodes many sequences in padded chunks of `batch_size`.
    pub fn encode_all(&self, seqs: &[FeatureSequence]) -> Result<Vec<LatentVector>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(self.config.batch_size) {
            for fs in chunk {
                self.check_fingerprint(fs.fingerprint())?;
            }
            let batch = pad_to_longest(chunk)?;
            for (fs, values) in chunk.iter().zip(self.encode_batch(&batch)?) {
                out.push(LatentVector {
                    values,
                    subject_id: fs.subject_id().to_string(),
                    label: fs.label(),
                });
            }
        }
        Ok(out)
    }

    /// Inference-mode reconstruction of the real steps of `fs`.
    pub fn reconstruct(&self, fs: &FeatureSequence) -> Result<FeatureSequence> {
        self.check_fingerprint(fs.fingerprint())?;
        let batch = pad_to_longest(std::slice::from_ref(fs))?;
        let mut g = Graph::new();
        let pass = self.pass(&mut g, &self.params, &batch, Mode::Inference, 0, true)?;
        let rows = g
            .value(pass.reconstruction.unwrap())
            .data()
            .chunks(FEATURES)
            .map(|r| std::array::from_fn(|c| r[c]))
            .collect();
        Ok(FeatureSequence::new(rows, fs.subject_id(), fs.label())?.with_fingerprint(self.fingerprint()))
    }

    pub fn to_model_file(&self) -> Result<ModelFile> {
        Ok(ModelFile {
            preset: self.config.preset.clone(),
            preprocess: self.preprocess.clone(),
            config: serde_json::to_value(&self.config)?,
            params: self.params.clone(),
        })
    }

    pub fn from_model_file(file: ModelFile) -> Result<Self> {
        let config: AeConfig = serde_json::from_value(file.config)?;
        let template = build_autoencoder(&config, &file.preprocess, 0)?;
        check_param_shapes(&template.params, &file.params)?;
        Ok(TrainedAutoencoder {
            params: file.params,
            config,
            preprocess: file.preprocess,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_container(path, &self.to_model_file()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_model_file(load_container(path)?)
    }
}

/// Verifies that `found` has exactly the tensors of `expected`, shape for shape.
pub(crate) fn check_param_shapes(expected: &ParamStore, found: &ParamStore) -> Result<()> {
    let want: Vec<(&str, &[usize])> = expected.iter().map(|(n, t)| (n, t.shape())).collect();
    let got: Vec<(&str, &[usize])> = found.iter().map(|(n, t)| (n, t.shape())).collect();
    if want != got {
        return Err(Error::Container(format!(
            "parameter layout does not match config: expected {want:?}, found {got:?}"
        )));
    }
    Ok(())
}

/// Splits sequences into padded batches of at most `batch_size`, each padded
/// to its own longest member.
pub fn make_batches(seqs: &[FeatureSequence], batch_size: usize) -> Result<Vec<PaddedBatch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    seqs.chunks(batch_size).map(pad_to_longest).collect()
}

/// Trains a fresh model on `batches`. Batch order is reshuffled every epoch;
/// the returned history holds the mean batch loss of each epoch. Weights from
/// the last epoch are kept, rounded to `f32` so they survive serialization.
pub fn train_autoencoder(
    batches: &[PaddedBatch],
    cfg: &AeConfig,
    preprocess: &PreprocessConfig,
    seed: u64,
) -> Result<(TrainedAutoencoder, Vec<f64>)> {
    train_autoencoder_monitored(batches, cfg, preprocess, seed, |_, _| Ok(()))
}

/// [`train_autoencoder`] with `monitor(epoch, model)` called after every
/// epoch, before the early-stopping check. The model passed in still has
/// full-precision weights.
pub fn train_autoencoder_monitored(
    batches: &[PaddedBatch],
    cfg: &AeConfig,
    preprocess: &PreprocessConfig,
    seed: u64,
    mut monitor: impl FnMut(usize, &TrainedAutoencoder) -> Result<()>,
) -> Result<(TrainedAutoencoder, Vec<f64>)> {
    if batches.iter().all(|b| b.batch_size() == 0) {
        return Err(Error::EmptyDataset);
    }
    let mut model = build_autoencoder(cfg, preprocess, seed)?;
    for b in batches {
        model.check_fingerprint(b.fingerprint.as_ref())?;
    }
    let batches: Vec<&PaddedBatch> = batches.iter().filter(|b| b.batch_size() > 0).collect();
    let mut adam = AdamState::new(&model.params);
    let mut order: Vec<usize> = (0..batches.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 0x5eed));
    let mut history = Vec::new();
    let mut step = 0u64;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (k, &bi) in order.iter().enumerate() {
            let mut g = Graph::new();
            let dseed = stream_seed(stream_seed(seed, epoch as u64 + 1), k as u64);
            let loss = model.loss_node(&mut g, &model.params, batches[bi], Mode::Train, dseed)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, loss: value });
            }
            total += value;
            model.params.zero_grads();
            g.backward(loss, &mut model.params)?;
            step += 1;
            adam_step(&mut model.params, &mut adam, step, &cfg.optimizer)?;
        }
        let epoch_loss = total / batches.len() as f64;
        log::debug!("autoencoder epoch {epoch}: loss {epoch_loss:.4}");
        history.push(epoch_loss);
        monitor(epoch, &model)?;
        if early_stop(&history, &cfg.early_stop) {
            break;
        }
    }
    model.params.round_to_f32();
    Ok((model, history))
}

/// Inference-mode masked MAPE of each sample on its own.
pub fn per_sample_mape(model: &TrainedAutoencoder, seqs: &[FeatureSequence]) -> Result<Vec<f64>> {
    seqs.iter()
        .map(|fs| {
            let rec = model.reconstruct(fs)?;
            let n = fs.len();
            let flat = |s: &FeatureSequence| {
                Tensor::from_vec(vec![n, FEATURES], s.rows().iter().flatten().copied().collect())
            };
            mape_value(&flat(&rec)?, &flat(fs)?, &vec![true; n], MAPE_EPS)
        })
        .collect()
}
