//! Decision rule, error rates and evaluation reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{LatentVector, TrainedAutoencoder};
use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::preprocess::{preprocess_one, FilterMode, Fingerprint};
use crate::siamese::{subject_means, SubjectMean, TrainedSiamese};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationDecision {
    pub subject_id: String,
    pub probabilities: Vec<f64>,
    pub threshold: f64,
    pub required_count: usize,
    pub accepted: bool,
    pub score: f64,
}

/// Strict majority of `references`.
pub fn default_required_count(references: usize) -> usize {
    references.div_ceil(2)
}

fn check_rule(n: usize, threshold: f64, required: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyReferences);
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::BadThreshold(format!("threshold {threshold} outside (0, 1)")));
    }
    if required < 1 || required > n {
        return Err(Error::BadThreshold(format!("required count {required} for {n} references")));
    }
    Ok(())
}

/// Applies the counting rule to given per-reference probabilities: accept
/// when at least `required` of them reach `threshold`.
pub fn decide(subject_id: &str, probabilities: Vec<f64>, threshold: f64, required: usize) -> Result<VerificationDecision> {
    check_rule(probabilities.len(), threshold, required)?;
    let votes = probabilities.iter().filter(|&&p| p >= threshold).count();
    let score = probabilities.iter().sum::<f64>() / probabilities.len() as f64;
    Ok(VerificationDecision {
        subject_id: subject_id.to_string(),
        probabilities,
        threshold,
        required_count: required,
        accepted: votes >= required,
        score,
    })
}

/// Scores `query` against every reference after subtracting `mean` from
/// all of them.
pub fn verify(
    query: &LatentVector,
    refs: &[LatentVector],
    model: &TrainedSiamese,
    mean: &SubjectMean,
    threshold: f64,
    required: usize,
) -> Result<VerificationDecision> {
    check_rule(refs.len(), threshold, required)?;
    let q = mean.apply(&query.values)?;
    let r: Vec<Vec<f64>> = refs.iter().map(|r| mean.apply(&r.values)).collect::<Result<_>>()?;
    let pairs: Vec<(&[f64], &[f64])> = r.iter().map(|r| (q.as_slice(), r.as_slice())).collect();
    let probabilities = model.pair_probabilities(&pairs)?;
    decide(&mean.subject_id, probabilities, threshold, required)
}

/// `(FAR, FRR)`: forged scores at or above `threshold`, genuine scores
/// below it.
pub fn compute_rates(genuine: &[f64], forged: &[f64], threshold: f64) -> Result<(f64, f64)> {
    if genuine.is_empty() || forged.is_empty() {
        return Err(Error::EmptyScores);
    }
    let far = forged.iter().filter(|&&s| s >= threshold).count() as f64 / forged.len() as f64;
    let frr = genuine.iter().filter(|&&s| s < threshold).count() as f64 / genuine.len() as f64;
    Ok((far, frr))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    pub eer: f64,
    pub threshold: f64,
    /// Rates at the nearest swept threshold, before interpolation.
    pub far: f64,
    pub frr: f64,
}

/// Sweeps every distinct score (plus one threshold above the maximum) and
/// finds where FAR - FRR first reaches zero. When it jumps past zero between
/// two thresholds, both rates and the threshold are interpolated linearly.
pub fn eer(genuine: &[f64], forged: &[f64]) -> Result<EerPoint> {
    if genuine.is_empty() || forged.is_empty() {
        return Err(Error::EmptyScores);
    }
    if genuine.iter().chain(forged).any(|s| s.is_nan()) {
        return Err(Error::Config("NaN score".into()));
    }
    let mut thresholds: Vec<f64> = genuine.iter().chain(forged).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(thresholds.last().unwrap().next_up());

    let mut prev: Option<(f64, f64, f64)> = None;
    for &t in &thresholds {
        let (far, frr) = compute_rates(genuine, forged, t)?;
        let d = far - frr;
        if d <= 0.0 {
            let point = match prev {
                Some((pt, pfar, pfrr)) if d < 0.0 => {
                    let pd = pfar - pfrr;
                    let lambda = pd / (pd - d);
                    let far_i = pfar + lambda * (far - pfar);
                    let frr_i = pfrr + lambda * (frr - pfrr);
                    let (near_far, near_frr) = if pd <= -d { (pfar, pfrr) } else { (far, frr) };
                    EerPoint {
                        eer: 0.5 * (far_i + frr_i),
                        threshold: pt + lambda * (t - pt),
                        far: near_far,
                        frr: near_frr,
                    }
                }
                _ => EerPoint {
                    eer: 0.5 * (far + frr),
                    threshold: t,
                    far,
                    frr,
                },
            };
            return Ok(point);
        }
        prev = Some((t, far, frr));
    }
    unreachable!("FAR is zero above the largest score")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionConfig {
    pub threshold: f64,
    /// `None` means a strict majority of each subject's references.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub required_count: Option<usize>,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        DecisionConfig {
            threshold: 0.5,
            required_count: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub subject_id: String,
    pub label: Label,
    pub score: f64,
    pub accepted: bool,
    /// Raw point count before preprocessing.
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub far: f64,
    pub frr: f64,
    pub accuracy: f64,
    pub eer: f64,
    pub eer_threshold: f64,
    pub threshold: f64,
    pub required_count: Option<usize>,
    pub n_genuine: usize,
    pub n_forged: usize,
    /// Test samples removed by the length filter.
    pub dropped: usize,
    pub fingerprint: Fingerprint,
    pub scores: Vec<ScoreRow>,
}

impl EvalReport {
    pub fn genuine_scores(&self) -> Vec<f64> {
        self.scores.iter().filter(|r| r.label == Label::Genuine).map(|r| r.score).collect()
    }

    pub fn forged_scores(&self) -> Vec<f64> {
        self.scores.iter().filter(|r| r.label == Label::Forged).map(|r| r.score).collect()
    }

    pub fn to_table(&self) -> String {
        let m = self.required_count.map_or_else(|| "majority".to_string(), |m| m.to_string());
        let rows = [
            ("samples (genuine / forged)", format!("{} / {}", self.n_genuine, self.n_forged)),
            ("decision (threshold, count)", format!("{}, {m}", self.threshold)),
            ("accuracy", format!("{:.2}%", 100.0 * self.accuracy)),
            ("FAR", format!("{:.2}%", 100.0 * self.far)),
            ("FRR", format!("{:.2}%", 100.0 * self.frr)),
            ("EER", format!("{:.2}% at {:.4}", 100.0 * self.eer, self.eer_threshold)),
            ("preprocessing", self.fingerprint.to_string()),
        ];
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
    }

    /// `subject_id,label,score,accepted`.
    pub fn write_scores_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["subject_id", "label", "score", "accepted"])?;
        for r in &self.scores {
            out.write_record([&r.subject_id, r.label.as_str(), &r.score.to_string(), &r.accepted.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Sample counts and misclassifications per raw-length bin:
    /// `bin_start,bin_end,genuine,forged,genuine_rejected,forged_accepted`.
    pub fn write_length_histogram<W: Write>(&self, w: W, bin_width: usize) -> Result<()> {
        if bin_width == 0 {
            return Err(Error::Config("bin_width must be >= 1".into()));
        }
        let mut bins: BTreeMap<usize, [usize; 4]> = BTreeMap::new();
        for r in &self.scores {
            let b = bins.entry(r.length / bin_width).or_default();
            match (r.label, r.accepted) {
                (Label::Forged, acc) => {
                    b[1] += 1;
                    b[3] += acc as usize;
                }
                (_, acc) => {
                    b[0] += 1;
                    b[2] += !acc as usize;
                }
            }
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin_start", "bin_end", "genuine", "forged", "genuine_rejected", "forged_accepted"])?;
        for (bin, c) in bins {
            let fields = [bin * bin_width, (bin + 1) * bin_width, c[0], c[1], c[2], c[3]];
            out.write_record(fields.iter().map(usize::to_string))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Preprocesses and encodes every sample of `data`; `None` marks samples the
/// length filter removed.
pub fn encode_dataset(data: &Dataset, ae: &TrainedAutoencoder, mode: FilterMode) -> Result<Vec<Option<LatentVector>>> {
    let mut kept = Vec::new();
    let mut slots = Vec::with_capacity(data.len());
    for s in data.samples() {
        match preprocess_one(s, &ae.preprocess, mode)? {
            Some(fs) => {
                slots.push(Some(kept.len()));
                kept.push(fs);
            }
            None => slots.push(None),
        }
    }
    let mut encoded: Vec<Option<LatentVector>> = ae.encode_all(&kept)?.into_iter().map(Some).collect();
    Ok(slots.into_iter().map(|s| s.and_then(|i| encoded[i].take())).collect())
}

/// Verifies every non-reference sample of `test` against its subject's
/// references. FAR/FRR/accuracy come from the counting rule; EER from the
/// mean-probability scores.
pub fn evaluate(
    test: &Dataset,
    ae: &TrainedAutoencoder,
    sm: &TrainedSiamese,
    decision: &DecisionConfig,
    mode: FilterMode,
) -> Result<EvalReport> {
    if ae.fingerprint() != sm.fingerprint() {
        return Err(Error::FingerprintMismatch {
            expected: ae.fingerprint().to_string(),
            found: sm.fingerprint().to_string(),
        });
    }
    test.check_invariants()?;
    let encoded = encode_dataset(test, ae, mode)?;
    let refs: Vec<LatentVector> = encoded.iter().flatten().filter(|l| l.label == Label::Reference).cloned().collect();
    let means = subject_means(&refs)?;
    let mut by_subject: BTreeMap<&str, Vec<LatentVector>> = BTreeMap::new();
    for r in &refs {
        by_subject.entry(&r.subject_id).or_default().push(r.clone());
    }

    let mut scores = Vec::new();
    let mut dropped = 0;
    for (sample, latent) in test.samples().iter().zip(&encoded) {
        if sample.label() == Label::Reference {
            continue;
        }
        let Some(latent) = latent else {
            dropped += 1;
            continue;
        };
        let subject_refs = by_subject.get(sample.subject_id()).ok_or_else(|| Error::InsufficientReferences {
            subject: sample.subject_id().to_string(),
            available: 0,
            required: 1,
        })?;
        let mean = &means[sample.subject_id()];
        let m = decision.required_count.unwrap_or_else(|| default_required_count(subject_refs.len()));
        let d = verify(latent, subject_refs, sm, mean, decision.threshold, m)?;
        scores.push(ScoreRow {
            subject_id: sample.subject_id().to_string(),
            label: sample.label(),
            score: d.score,
            accepted: d.accepted,
            length: sample.len(),
        });
    }

    let genuine: Vec<&ScoreRow> = scores.iter().filter(|r| r.label == Label::Genuine).collect();
    let forged: Vec<&ScoreRow> = scores.iter().filter(|r| r.label == Label::Forged).collect();
    if genuine.is_empty() || forged.is_empty() {
        return Err(Error::EmptyScores);
    }
    let (ng, nf) = (genuine.len(), forged.len());
    let far = forged.iter().filter(|r| r.accepted).count() as f64 / nf as f64;
    let frr = genuine.iter().filter(|r| !r.accepted).count() as f64 / ng as f64;
    let accuracy = 1.0 - (far * nf as f64 + frr * ng as f64) / (nf + ng) as f64;
    let point = eer(
        &genuine.iter().map(|r| r.score).collect::<Vec<_>>(),
        &forged.iter().map(|r| r.score).collect::<Vec<_>>(),
    )?;
    Ok(EvalReport {
        far,
        frr,
        accuracy,
        eer: point.eer,
        eer_threshold: point.threshold,
        threshold: decision.threshold,
        required_count: decision.required_count,
        n_genuine: ng,
        n_forged: nf,
        dropped,
        fingerprint: ae.fingerprint(),
        scores,
    })
}

/// `subject_id,label,v_0,...,v_{D-1}`, one row per vector.
pub fn write_vectors_csv<W: Write>(w: W, rows: &[(String, Label, Vec<f64>)]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
    let dim = rows.first().map_or(0, |r| r.2.len());
    let mut header = vec!["subject_id".to_string(), "label".to_string()];
    header.extend((0..dim).map(|i| format!("v_{i}")));
    out.write_record(&header)?;
    for (subject, label, v) in rows {
        if v.len() != dim {
            return Err(Error::Shape(format!("vector of length {} in export of width {dim}", v.len())));
        }
        let mut rec = vec![subject.clone(), label.as_str().to_string()];
        rec.extend(v.iter().map(f64::to_string));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes encoder latents for every sample that survives preprocessing.
/// With a Siamese model, also writes the shared-leg activations of the
/// mean-normalized latents to `legs_path`. Returns the row count.
pub fn export_embeddings(
    data: &Dataset,
    ae: &TrainedAutoencoder,
    mode: FilterMode,
    path: &Path,
    legs: Option<(&TrainedSiamese, &Path)>,
) -> Result<usize> {
    let latents: Vec<LatentVector> = encode_dataset(data, ae, mode)?.into_iter().flatten().collect();
    let rows: Vec<(String, Label, Vec<f64>)> =
        latents.iter().map(|l| (l.subject_id.clone(), l.label, l.values.clone())).collect();
    write_vectors_csv(std::io::BufWriter::new(std::fs::File::create(path)?), &rows)?;
    if let Some((sm, legs_path)) = legs {
        let means = subject_means(&latents)?;
        let mut leg_rows = Vec::with_capacity(latents.len());
        for l in &latents {
            let mean = means.get(&l.subject_id).ok_or_else(|| Error::MissingMean(l.subject_id.clone()))?;
            leg_rows.push((l.subject_id.clone(), l.label, sm.leg_activations(&mean.apply(&l.values)?)?));
        }
        write_vectors_csv(std::io::BufWriter::new(std::fs::File::create(legs_path)?), &leg_rows)?;
    }
    Ok(rows.len())
}
