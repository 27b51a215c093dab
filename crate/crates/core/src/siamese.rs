//! Pair construction, subject-mean normalization and the two-legged
//! classifier.
//!
//! ```text
//! a -> leg -> dropout -\
//!                       (-) -> dense(ReLU) -> dropout -> dense(1, sigmoid)
//! b -> leg -> dropout -/
//! ```
//!
//! Both legs share one set of weights. The merge is a signed difference.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{check_param_shapes, LatentVector};
use crate::data::Label;
use crate::error::{Error, Result};
use crate::layers::{dense_forward, dropout, Activation, DenseParams, DropoutSpec, Mode};
use crate::numeric::{
    adam_step, bce, early_stop, load_container, save_container, AdamState, EarlyStopConfig, Graph, ModelFile,
    OptimizerConfig, ParamStore, Tensor, Var, BCE_EPS,
};
use crate::preprocess::{Fingerprint, PreprocessConfig};
use crate::rng::stream_seed;

pub const PRESET_T5: &str = "siamese-t5";
pub const PRESET_T7: &str = "siamese-t7";

/// Which samples feed training, see [`build_pairs`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Training data plus the references of test subjects.
    S1,
    /// Training data only.
    S2,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" | "1" => Ok(Scenario::S1),
            "S2" | "2" => Ok(Scenario::S2),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SiameseConfig {
    pub preset: String,
    pub leg_units: usize,
    pub dropout_p: f64,
    pub optimizer: OptimizerConfig,
    pub early_stop: EarlyStopConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub augment_swapped_pairs: bool,
}

impl Default for SiameseConfig {
    fn default() -> Self {
        SiameseConfig {
            preset: PRESET_T5.into(),
            leg_units: 128,
            dropout_p: 0.5,
            optimizer: OptimizerConfig::default(),
            early_stop: EarlyStopConfig::default(),
            batch_size: 128,
            max_epochs: 1000,
            augment_swapped_pairs: true,
        }
    }
}

impl SiameseConfig {
    pub fn from_preset(name: &str) -> Result<Self> {
        match name {
            // Both published stacks are identical.
            PRESET_T5 | PRESET_T7 => Ok(SiameseConfig {
                preset: name.into(),
                ..SiameseConfig::default()
            }),
            other => Err(Error::Config(format!("unknown siamese preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.leg_units < 1 || self.batch_size < 1 {
            return Err(Error::Config("leg_units and batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        self.optimizer.validate()?;
        self.early_stop.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMean {
    pub subject_id: String,
    pub mu: Vec<f64>,
}

impl SubjectMean {
    pub fn from_vectors<'a>(subject_id: &str, vectors: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut mu: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for v in vectors {
            if n == 0 {
                mu = vec![0.0; v.len()];
            } else if v.len() != mu.len() {
                return Err(Error::Shape(format!("latent of length {} vs {}", v.len(), mu.len())));
            }
            for (m, x) in mu.iter_mut().zip(v) {
                *m += x;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::InsufficientSamples {
                subject: subject_id.into(),
                message: "no vectors to average".into(),
            });
        }
        mu.iter_mut().for_each(|m| *m /= n as f64);
        Ok(SubjectMean {
            subject_id: subject_id.into(),
            mu,
        })
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.mu.len() {
            return Err(Error::Shape(format!("latent of length {} vs mean of {}", v.len(), self.mu.len())));
        }
        Ok(v.iter().zip(&self.mu).map(|(x, m)| x - m).collect())
    }
}

/// Per-subject means. References define the mean when a subject has any;
/// otherwise its genuine samples do. Forgeries never contribute.
pub fn subject_means(latents: &[LatentVector]) -> Result<BTreeMap<String, SubjectMean>> {
    let mut by_subject: BTreeMap<&str, (Vec<&[f64]>, Vec<&[f64]>)> = BTreeMap::new();
    for l in latents {
        let e = by_subject.entry(&l.subject_id).or_default();
        match l.label {
            Label::Reference => e.0.push(&l.values),
            Label::Genuine => e.1.push(&l.values),
            Label::Forged => {}
        }
    }
    let mut out = BTreeMap::new();
    for (subject, (refs, genuine)) in by_subject {
        let source = if refs.is_empty() { genuine } else { refs };
        if source.is_empty() {
            continue;
        }
        out.insert(subject.to_string(), SubjectMean::from_vectors(subject, source)?);
    }
    Ok(out)
}

pub fn mean_normalize(latents: &[LatentVector], means: &BTreeMap<String, SubjectMean>) -> Result<Vec<LatentVector>> {
    latents
        .iter()
        .map(|l| {
            let mean = means.get(&l.subject_id).ok_or_else(|| Error::MissingMean(l.subject_id.clone()))?;
            Ok(LatentVector {
                values: mean.apply(&l.values)?,
                ..l.clone()
            })
        })
        .collect()
}

/// Indices into [`PairSet::vectors`]. Target 1 means same class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiamesePair {
    pub a: usize,
    pub b: usize,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub vectors: Vec<LatentVector>,
    pub pairs: Vec<SiamesePair>,
    /// Subjects that could not contribute genuine positives.
    pub shortfalls: Vec<Shortfall>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shortfall {
    pub subject: String,
    pub message: String,
}

impl Shortfall {
    pub fn to_error(&self) -> Error {
        Error::InsufficientSamples {
            subject: self.subject.clone(),
            message: self.message.clone(),
        }
    }
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.target == 1.0).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    /// Audit export: `subject_id,idx_a,idx_b,target`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["subject_id", "idx_a", "idx_b", "target"])?;
        for p in &self.pairs {
            out.write_record([
                self.vectors[p.a].subject_id.as_str(),
                &p.a.to_string(),
                &p.b.to_string(),
                &(p.target as u8).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn combinations(idx: &[usize], target: f64, out: &mut Vec<SiamesePair>) {
    for (i, &a) in idx.iter().enumerate() {
        for &b in &idx[i + 1..] {
            out.push(SiamesePair { a, b, target });
        }
    }
}

/// Within-subject pairs over `encoded`, which should already be
/// mean-normalized.
///
/// Per subject: every genuine x forged pair is a negative; every unordered
/// genuine pair and forged pair is a positive. Under [`Scenario::S1`] every
/// unordered pair of reference samples is a positive too; under
/// [`Scenario::S2`] references are ignored. Test queries must not be passed
/// in. With `swap`, every pair also appears as `(b, a)`.
pub fn build_pairs(encoded: &[LatentVector], scenario: Scenario, swap: bool) -> Result<PairSet> {
    if let Some(first) = encoded.first() {
        if let Some(bad) = encoded.iter().find(|l| l.values.len() != first.values.len()) {
            return Err(Error::Shape(format!(
                "latent of length {} for {} vs {}",
                bad.values.len(),
                bad.subject_id,
                first.values.len()
            )));
        }
    }
    let mut groups: BTreeMap<&str, [Vec<usize>; 3]> = BTreeMap::new();
    let mut order = Vec::new();
    for (i, l) in encoded.iter().enumerate() {
        let g = groups.entry(&l.subject_id).or_insert_with(|| {
            order.push(l.subject_id.as_str());
            Default::default()
        });
        let slot = match l.label {
            Label::Genuine => 0,
            Label::Forged => 1,
            Label::Reference => 2,
        };
        g[slot].push(i);
    }

    let mut pairs = Vec::new();
    let mut shortfalls = Vec::new();
    for subject in order {
        let [genuine, forged, refs] = &groups[subject];
        for &a in genuine {
            for &b in forged {
                pairs.push(SiamesePair { a, b, target: 0.0 });
            }
        }
        combinations(genuine, 1.0, &mut pairs);
        combinations(forged, 1.0, &mut pairs);
        if scenario == Scenario::S1 {
            combinations(refs, 1.0, &mut pairs);
        }
        let has_refs = scenario == Scenario::S1 && refs.len() >= 2;
        if genuine.len() < 2 && !has_refs {
            shortfalls.push(Shortfall {
                subject: subject.to_string(),
                message: format!("{} genuine samples give no genuine pairs", genuine.len()),
            });
        }
    }
    if swap {
        let swapped: Vec<SiamesePair> = pairs
            .iter()
            .map(|p| SiamesePair {
                a: p.b,
                b: p.a,
                target: p.target,
            })
            .collect();
        pairs.extend(swapped);
    }
    for s in &shortfalls {
        log::warn!("{}", s.to_error());
    }
    Ok(PairSet {
        vectors: encoded.to_vec(),
        pairs,
        shortfalls,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedSiamese {
    pub params: ParamStore,
    pub config: SiameseConfig,
    pub latent_dim: usize,
    /// Preprocessing of the latents this model was trained on.
    pub preprocess: PreprocessConfig,
}

struct Layout {
    leg: DenseParams,
    head: DenseParams,
    out: DenseParams,
}

fn layout(store: &mut ParamStore, cfg: &SiameseConfig, latent_dim: usize, seed: u64) -> Result<Layout> {
    let u = cfg.leg_units;
    Ok(Layout {
        leg: DenseParams::init(store, "leg", latent_dim, u, Activation::ReLU, stream_seed(seed, 1))?,
        head: DenseParams::init(store, "head", u, u, Activation::ReLU, stream_seed(seed, 2))?,
        out: DenseParams::init(store, "out", u, 1, Activation::Sigmoid, stream_seed(seed, 3))?,
    })
}

pub fn build_siamese(
    cfg: &SiameseConfig,
    latent_dim: usize,
    preprocess: &PreprocessConfig,
    seed: u64,
) -> Result<TrainedSiamese> {
    cfg.validate()?;
    if latent_dim == 0 {
        return Err(Error::Config("latent_dim must be >= 1".into()));
    }
    let mut params = ParamStore::new();
    layout(&mut params, cfg, latent_dim, seed)?;
    Ok(TrainedSiamese {
        params,
        config: cfg.clone(),
        latent_dim,
        preprocess: preprocess.clone(),
    })
}

#[derive(Serialize, Deserialize)]
struct StoredConfig {
    siamese: SiameseConfig,
    latent_dim: usize,
}

impl TrainedSiamese {
    pub fn fingerprint(&self) -> Fingerprint {
        self.preprocess.fingerprint()
    }

    fn layout(&self) -> Layout {
        let mut scratch = ParamStore::new();
        layout(&mut scratch, &self.config, self.latent_dim, 0).expect("validated at build time")
    }

    /// Probabilities `[N, 1]` for rows of `a` against rows of `b`.
    fn forward(&self, g: &mut Graph, store: &ParamStore, a: Tensor, b: Tensor, mode: Mode, seed: u64) -> Result<Var> {
        let lay = self.layout();
        let spec = DropoutSpec::new(self.config.dropout_p, mode)?;
        let a = g.constant(a);
        let b = g.constant(b);
        let la = lay.leg.apply(g, store, a)?;
        let la = dropout(g, la, spec, stream_seed(seed, 1))?;
        let lb = lay.leg.apply(g, store, b)?;
        let lb = dropout(g, lb, spec, stream_seed(seed, 2))?;
        let merged = g.sub(la, lb)?;
        let h = lay.head.apply(g, store, merged)?;
        let h = dropout(g, h, spec, stream_seed(seed, 3))?;
        lay.out.apply(g, store, h)
    }

    /// Binary cross-entropy of a batch of pairs as a graph node, using the
    /// parameters in `store` rather than the model's own.
    pub fn loss_node(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        pairs: &[(&[f64], &[f64])],
        targets: &[f64],
        mode: Mode,
        seed: u64,
    ) -> Result<Var> {
        let a = self.stack(&pairs.iter().map(|p| p.0).collect::<Vec<_>>())?;
        let b = self.stack(&pairs.iter().map(|p| p.1).collect::<Vec<_>>())?;
        let p = self.forward(g, store, a, b, mode, seed)?;
        bce(g, p, targets, BCE_EPS)
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.latent_dim {
            return Err(Error::Shape(format!("latent of length {} for model of {}", v.len(), self.latent_dim)));
        }
        Ok(())
    }

    fn stack(&self, rows: &[&[f64]]) -> Result<Tensor> {
        for r in rows {
            self.check_dim(r)?;
        }
        Tensor::from_vec(vec![rows.len(), self.latent_dim], rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    /// Inference-mode same-class probability for each `(a, b)`.
    pub fn pair_probabilities(&self, pairs: &[(&[f64], &[f64])]) -> Result<Vec<f64>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let a = self.stack(&pairs.iter().map(|p| p.0).collect::<Vec<_>>())?;
        let b = self.stack(&pairs.iter().map(|p| p.1).collect::<Vec<_>>())?;
        let mut g = Graph::new();
        let p = self.forward(&mut g, &self.params, a, b, Mode::Inference, 0)?;
        Ok(g.value(p).data().to_vec())
    }

    pub fn pair_probability(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        Ok(self.pair_probabilities(&[(a, b)])?[0])
    }

    /// Output of the shared leg in inference mode.
    pub fn leg_activations(&self, v: &[f64]) -> Result<Vec<f64>> {
        let x = self.stack(&[v])?;
        let lay = self.layout();
        let w = self.params.get(&lay.leg.weight()).expect("leg weight");
        let b = self.params.get(&lay.leg.bias()).expect("leg bias");
        Ok(dense_forward(&x, w, b, Activation::ReLU)?.into_data())
    }

    pub fn to_model_file(&self) -> Result<ModelFile> {
        Ok(ModelFile {
            preset: self.config.preset.clone(),
            preprocess: self.preprocess.clone(),
            config: serde_json::to_value(StoredConfig {
                siamese: self.config.clone(),
                latent_dim: self.latent_dim,
            })?,
            params: self.params.clone(),
        })
    }

    pub fn from_model_file(file: ModelFile) -> Result<Self> {
        let stored: StoredConfig = serde_json::from_value(file.config)?;
        let template = build_siamese(&stored.siamese, stored.latent_dim, &file.preprocess, 0)?;
        check_param_shapes(&template.params, &file.params)?;
        Ok(TrainedSiamese {
            params: file.params,
            config: stored.siamese,
            latent_dim: stored.latent_dim,
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

/// Mini-batch BCE training with ADAM and early stopping on the epoch loss.
/// Pairs are reshuffled every epoch. Returns the sample-weighted mean loss
/// per epoch. Weights from the last epoch are kept, rounded to `f32`.
pub fn train_siamese(
    set: &PairSet,
    cfg: &SiameseConfig,
    preprocess: &PreprocessConfig,
    seed: u64,
) -> Result<(TrainedSiamese, Vec<f64>)> {
    if set.is_empty() {
        return Err(Error::EmptyPairs);
    }
    let positives = set.positives();
    if positives == 0 || positives == set.len() {
        return Err(Error::SingleClass);
    }
    let dim = set.vectors[0].values.len();
    let mut model = build_siamese(cfg, dim, preprocess, seed)?;
    let mut adam = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 0x5eed));
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut history = Vec::new();
    let mut step = 0u64;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (k, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let pairs: Vec<(&[f64], &[f64])> = chunk
                .iter()
                .map(|&i| (set.vectors[set.pairs[i].a].values.as_slice(), set.vectors[set.pairs[i].b].values.as_slice()))
                .collect();
            let targets: Vec<f64> = chunk.iter().map(|&i| set.pairs[i].target).collect();
            let mut g = Graph::new();
            let dseed = stream_seed(stream_seed(seed, epoch as u64 + 1), k as u64);
            let loss = model.loss_node(&mut g, &model.params, &pairs, &targets, Mode::Train, dseed)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, loss: value });
            }
            total += value * chunk.len() as f64;
            model.params.zero_grads();
            g.backward(loss, &mut model.params)?;
            step += 1;
            adam_step(&mut model.params, &mut adam, step, &cfg.optimizer)?;
        }
        let epoch_loss = total / set.len() as f64;
        log::debug!("siamese epoch {epoch}: loss {epoch_loss:.4}");
        history.push(epoch_loss);
        if early_stop(&history, &cfg.early_stop) {
            break;
        }
    }
    model.params.round_to_f32();
    Ok((model, history))
}
