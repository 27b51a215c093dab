//! End-to-end experiment: synthetic data, autoencoder, Siamese, evaluation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{make_batches, train_autoencoder, AeConfig, LatentVector, TrainedAutoencoder};
use crate::data::{split_dataset, synth_sample, synth_subject, Dataset, DatasetRole, GeneratorConfig, Label, RawSignature};
use crate::error::{Error, Result};
use crate::eval::{encode_dataset, evaluate, DecisionConfig, EvalReport};
use crate::preprocess::{preprocess_all, FeatureSequence, FilterMode, PreprocessConfig};
use crate::rng::stream_seed;
use crate::siamese::{build_pairs, mean_normalize, subject_means, train_siamese, PairSet, Scenario, SiameseConfig, TrainedSiamese};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub subjects: usize,
    pub genuine_per_subject: usize,
    pub forged_per_subject: usize,
    pub generator: GeneratorConfig,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            subjects: 30,
            genuine_per_subject: 12,
            forged_per_subject: 10,
            generator: GeneratorConfig::default(),
        }
    }
}

pub fn subject_name(i: usize) -> String {
    format!("s{i:03}")
}

/// Genuine samples first, then forgeries, subject by subject.
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    let mut samples = Vec::with_capacity(spec.subjects * (spec.genuine_per_subject + spec.forged_per_subject));
    for i in 0..spec.subjects {
        let model = synth_subject(stream_seed(seed, i as u64), &spec.generator)?;
        let name = subject_name(i);
        let mut push = |kind: Label, n: usize| {
            for k in 0..n {
                samples.push(synth_sample(&model, kind, k as u64).with_subject(name.clone()));
            }
        };
        push(Label::Genuine, spec.genuine_per_subject);
        push(Label::Forged, spec.forged_per_subject);
    }
    Ok(Dataset::new(samples, DatasetRole::Train))
}

/// First `train_subjects` subjects train, the rest test.
pub fn split_by_count(d: &Dataset, train_subjects: usize, refs: usize) -> Result<(Dataset, Dataset)> {
    let subjects = d.subjects();
    if train_subjects >= subjects.len() {
        return Err(Error::Config(format!(
            "{train_subjects} training subjects leaves no test subjects out of {}",
            subjects.len()
        )));
    }
    let train: BTreeSet<String> = subjects[..train_subjects].iter().cloned().collect();
    let test: BTreeSet<String> = subjects[train_subjects..].iter().cloned().collect();
    split_dataset(d, &train, &test, refs)
}

/// Samples the models may learn from: all training samples, plus the test
/// references under S1. Test queries never appear.
pub fn training_samples<'a>(train: &'a Dataset, test: &'a Dataset, scenario: Scenario) -> Vec<&'a RawSignature> {
    let mut out: Vec<&RawSignature> = train.samples().iter().collect();
    if scenario == Scenario::S1 {
        out.extend(test.samples().iter().filter(|s| s.label() == Label::Reference));
    }
    out
}

fn preprocess_refs(sigs: &[&RawSignature], cfg: &PreprocessConfig) -> Result<Vec<FeatureSequence>> {
    let owned: Vec<RawSignature> = sigs.iter().map(|&s| s.clone()).collect();
    Ok(preprocess_all(&owned, cfg, FilterMode::Drop)?.into_iter().map(|(_, fs)| fs).collect())
}

/// Batches of similar length waste less work on padding. The sort is
/// stable, so the result depends only on the input order.
pub fn length_sorted_batches(seqs: &[FeatureSequence], batch_size: usize) -> Result<Vec<crate::preprocess::PaddedBatch>> {
    let mut sorted: Vec<FeatureSequence> = seqs.to_vec();
    sorted.sort_by_key(FeatureSequence::len);
    make_batches(&sorted, batch_size)
}

/// Mean-normalized latents of `sigs` and the pairs built from them.
pub fn siamese_pairs(
    ae: &TrainedAutoencoder,
    sigs: &[&RawSignature],
    scenario: Scenario,
    swap: bool,
) -> Result<PairSet> {
    let seqs = preprocess_refs(sigs, &ae.preprocess)?;
    let latents = ae.encode_all(&seqs)?;
    let means = subject_means(&latents)?;
    build_pairs(&mean_normalize(&latents, &means)?, scenario, swap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Experiment {
    pub preprocess: PreprocessConfig,
    pub ae: AeConfig,
    pub siamese: SiameseConfig,
    pub scenario: Scenario,
    pub decision: DecisionConfig,
    pub seed: u64,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            preprocess: PreprocessConfig::default(),
            ae: AeConfig::default(),
            siamese: SiameseConfig::default(),
            scenario: Scenario::S2,
            decision: DecisionConfig::default(),
            seed: 0,
        }
    }
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.ae.validate()?;
        self.siamese.validate()
    }

    pub fn ae_seed(&self) -> u64 {
        stream_seed(self.seed, 1)
    }

    pub fn siamese_seed(&self) -> u64 {
        stream_seed(self.seed, 2)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub ae: TrainedAutoencoder,
    pub ae_history: Vec<f64>,
    pub siamese: TrainedSiamese,
    pub siamese_history: Vec<f64>,
    pub pairs: PairSet,
    pub report: EvalReport,
}

pub fn train_ae_stage(exp: &Experiment, train: &Dataset, test: &Dataset) -> Result<(TrainedAutoencoder, Vec<f64>)> {
    let seqs = preprocess_refs(&training_samples(train, test, exp.scenario), &exp.preprocess)?;
    let batches = length_sorted_batches(&seqs, exp.ae.batch_size)?;
    train_autoencoder(&batches, &exp.ae, &exp.preprocess, exp.ae_seed())
}

pub fn train_siamese_stage(
    exp: &Experiment,
    ae: &TrainedAutoencoder,
    train: &Dataset,
    test: &Dataset,
) -> Result<(TrainedSiamese, Vec<f64>, PairSet)> {
    let pairs = siamese_pairs(ae, &training_samples(train, test, exp.scenario), exp.scenario, exp.siamese.augment_swapped_pairs)?;
    for s in &pairs.shortfalls {
        log::warn!("{}", s.to_error());
    }
    let (sm, history) = train_siamese(&pairs, &exp.siamese, &ae.preprocess, exp.siamese_seed())?;
    Ok((sm, history, pairs))
}

/// Trains both models on `train` (and the test references under S1) and
/// evaluates on `test`.
pub fn run(exp: &Experiment, train: &Dataset, test: &Dataset) -> Result<RunOutput> {
    exp.validate()?;
    let (ae, ae_history) = train_ae_stage(exp, train, test)?;
    log::info!("autoencoder: {} epochs, final loss {:.4}", ae_history.len(), ae_history.last().unwrap_or(&f64::NAN));
    let (siamese, siamese_history, pairs) = train_siamese_stage(exp, &ae, train, test)?;
    log::info!(
        "siamese: {} pairs, {} epochs, final loss {:.4}",
        pairs.len(),
        siamese_history.len(),
        siamese_history.last().unwrap_or(&f64::NAN)
    );
    let report = evaluate(test, &ae, &siamese, &exp.decision, FilterMode::Truncate)?;
    Ok(RunOutput {
        ae,
        ae_history,
        siamese,
        siamese_history,
        pairs,
        report,
    })
}

/// Test latents split into references and queries; queries keep their raw
/// lengths.
pub fn encode_test(test: &Dataset, ae: &TrainedAutoencoder) -> Result<(Vec<LatentVector>, Vec<LatentVector>)> {
    let mut refs = Vec::new();
    let mut queries = Vec::new();
    for l in encode_dataset(test, ae, FilterMode::Truncate)?.into_iter().flatten() {
        if l.label == Label::Reference {
            refs.push(l);
        } else {
            queries.push(l);
        }
    }
    Ok((refs, queries))
}
