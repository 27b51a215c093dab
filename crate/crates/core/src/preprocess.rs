//! Local feature extraction and sequence preparation.
//!
//! The pipeline order is fixed: features, per-sample standard normalization,
//! length filter, downsampling, zero pre-padding.

use serde::{Deserialize, Serialize};

use crate::data::{Label, RawSignature};
use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub const FEATURES: usize = 12;
pub const FEATURE_VERSION: &str = "local12-v1";

/// Channel names, in storage order.
pub const CHANNELS: [&str; FEATURES] = [
    "x", "y", "theta", "velocity", "log_curvature_radius", "acceleration",
    "dx", "dy", "dtheta", "dvelocity", "dlog_curvature_radius", "dacceleration",
];

const RHO_EPS: f64 = 1e-8;

/// Identifies the preprocessing a sequence went through. Encodings are only
/// comparable between sequences with equal fingerprints.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    pub downsample_rate: usize,
    pub max_length: usize,
    pub feature_version: String,
}

impl std::fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/K{}/max{}", self.feature_version, self.downsample_rate, self.max_length)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub downsample_rate: usize,
    /// Applied to raw lengths before downsampling.
    pub max_length: usize,
    pub epsilon: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            downsample_rate: 5,
            max_length: 2000,
            epsilon: 1e-8,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.downsample_rate < 1 {
            return Err(Error::Config("downsample_rate must be >= 1".into()));
        }
        if self.max_length < 2 {
            return Err(Error::Config("max_length must be >= 2".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint {
            downsample_rate: self.downsample_rate,
            max_length: self.max_length,
            feature_version: FEATURE_VERSION.to_string(),
        }
    }
}

/// An `L x 12` feature matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    values: Vec<[f64; FEATURES]>,
    subject_id: String,
    label: Label,
    fingerprint: Option<Fingerprint>,
}

impl FeatureSequence {
    pub fn new(values: Vec<[f64; FEATURES]>, subject_id: impl Into<String>, label: Label) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Length("feature sequence is empty".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("feature sequence contains non-finite values".into()));
        }
        Ok(FeatureSequence {
            values,
            subject_id: subject_id.into(),
            label,
            fingerprint: None,
        })
    }

    pub fn rows(&self) -> &[[f64; FEATURES]] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[c]).collect()
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn fingerprint(&self) -> Option<&Fingerprint> {
        self.fingerprint.as_ref()
    }

    pub fn with_fingerprint(mut self, fp: Fingerprint) -> Self {
        self.fingerprint = Some(fp);
        self
    }

    fn map_rows(&self, values: Vec<[f64; FEATURES]>) -> Self {
        FeatureSequence {
            values,
            subject_id: self.subject_id.clone(),
            label: self.label,
            fingerprint: self.fingerprint.clone(),
        }
    }
}

/// Central differences in the interior, one-sided at both ends.
pub fn central_difference(series: &[f64]) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 2 {
        return Err(Error::Length(format!("central difference needs >= 2 values, got {n}")));
    }
    let mut out = Vec::with_capacity(n);
    out.push(series[1] - series[0]);
    for i in 1..n - 1 {
        out.push((series[i + 1] - series[i - 1]) / 2.0);
    }
    out.push(series[n - 1] - series[n - 2]);
    Ok(out)
}

/// Removes 2-pi jumps between consecutive angles.
fn unwrap_angles(theta: &[f64]) -> Vec<f64> {
    use std::f64::consts::{PI, TAU};
    let mut out = Vec::with_capacity(theta.len());
    let mut offset = 0.0;
    for (i, &a) in theta.iter().enumerate() {
        if i > 0 {
            let d = a - theta[i - 1];
            if d > PI {
                offset -= TAU * ((d + PI) / TAU).floor();
            } else if d < -PI {
                offset += TAU * ((-d + PI) / TAU).floor();
            }
        }
        out.push(a + offset);
    }
    out
}

/// The 12 local features per pen sample: position, path-tangent angle,
/// path velocity, log curvature radius, total acceleration, then the first
/// differences of those six.
pub fn local_features(sig: &RawSignature) -> Result<FeatureSequence> {
    let x: Vec<f64> = sig.points().iter().map(|p| p.x).collect();
    let y: Vec<f64> = sig.points().iter().map(|p| p.y).collect();
    let dx = central_difference(&x)?;
    let dy = central_difference(&y)?;
    let theta: Vec<f64> = dy.iter().zip(&dx).map(|(&b, &a)| b.atan2(a)).collect();
    let dtheta = central_difference(&unwrap_angles(&theta))?;
    let v: Vec<f64> = dx.iter().zip(&dy).map(|(a, b)| a.hypot(*b)).collect();
    let rho: Vec<f64> = v
        .iter()
        .zip(&dtheta)
        .map(|(&v, &w)| ((v + RHO_EPS) / (w.abs() + RHO_EPS)).ln())
        .collect();
    let dv = central_difference(&v)?;
    let acc: Vec<f64> = dv
        .iter()
        .zip(v.iter().zip(&dtheta))
        .map(|(&dv, (&v, &w))| dv.hypot(v * w))
        .collect();
    let drho = central_difference(&rho)?;
    let dacc = central_difference(&acc)?;

    let rows = (0..x.len())
        .map(|i| {
            [
                x[i], y[i], theta[i], v[i], rho[i], acc[i], dx[i], dy[i], dtheta[i], dv[i], drho[i], dacc[i],
            ]
        })
        .collect();
    FeatureSequence::new(rows, sig.subject_id(), sig.label())
}

/// Per-channel standardization with population std; constant channels
/// become zeros.
pub fn znorm(fs: &FeatureSequence, eps: f64) -> FeatureSequence {
    let n = fs.len() as f64;
    let mut rows = fs.values.clone();
    for c in 0..FEATURES {
        let first = fs.values[0][c];
        if fs.values.iter().all(|r| r[c] == first) {
            rows.iter_mut().for_each(|r| r[c] = 0.0);
            continue;
        }
        let mean = fs.values.iter().map(|r| r[c]).sum::<f64>() / n;
        let var = fs.values.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
        let denom = var.sqrt() + eps;
        rows.iter_mut().for_each(|r| r[c] = (r[c] - mean) / denom);
    }
    fs.map_rows(rows)
}

/// Keeps rows 0, K, 2K, ...; output length is ceil(L / K).
pub fn downsample(fs: &FeatureSequence, k: usize) -> Result<FeatureSequence> {
    if k < 1 {
        return Err(Error::Config("downsample rate must be >= 1".into()));
    }
    Ok(fs.map_rows(fs.values.iter().step_by(k).copied().collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterMode {
    /// Discard over-long samples (training).
    Drop,
    /// Keep the first `max_length` rows (inference).
    Truncate,
}

/// Returns the filtered list and the number of samples that were dropped or
/// truncated.
pub fn length_filter(
    samples: Vec<FeatureSequence>,
    max_length: usize,
    mode: FilterMode,
) -> (Vec<FeatureSequence>, usize) {
    let mut affected = 0;
    let out = samples
        .into_iter()
        .filter_map(|mut s| {
            if s.len() <= max_length {
                return Some(s);
            }
            affected += 1;
            match mode {
                FilterMode::Drop => None,
                FilterMode::Truncate => {
                    s.values.truncate(max_length);
                    Some(s)
                }
            }
        })
        .collect();
    if affected > 0 {
        log::warn!("length filter ({mode:?}) affected {affected} samples over {max_length}");
    }
    (out, affected)
}

/// `B x T x 12` batch with zeros prepended; `mask[b * T + t]` is true on
/// real rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub tensor: Tensor,
    pub mask: Vec<bool>,
    pub lengths: Vec<usize>,
    pub fingerprint: Option<Fingerprint>,
}

impl PaddedBatch {
    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn steps(&self) -> usize {
        self.tensor.shape()[1]
    }

    /// The real rows of sample `b`.
    pub fn sample_rows(&self, b: usize) -> Vec<[f64; FEATURES]> {
        let t_len = self.steps();
        let start = t_len - self.lengths[b];
        (start..t_len)
            .map(|t| {
                let off = (b * t_len + t) * FEATURES;
                std::array::from_fn(|c| self.tensor.data()[off + c])
            })
            .collect()
    }
}

pub fn pad_batch(samples: &[FeatureSequence], target_len: usize) -> Result<PaddedBatch> {
    if let Some(s) = samples.iter().find(|s| s.len() > target_len) {
        return Err(Error::Length(format!(
            "sample of length {} exceeds target {target_len}",
            s.len()
        )));
    }
    let fingerprint = samples.first().and_then(|s| s.fingerprint.clone());
    if samples.iter().any(|s| s.fingerprint != fingerprint) {
        return Err(Error::FingerprintMismatch {
            expected: format!("{fingerprint:?}"),
            found: "mixed fingerprints in batch".into(),
        });
    }
    let b = samples.len();
    let mut data = vec![0.0; b * target_len * FEATURES];
    let mut mask = vec![false; b * target_len];
    for (i, s) in samples.iter().enumerate() {
        let start = target_len - s.len();
        for (j, row) in s.values.iter().enumerate() {
            let t = start + j;
            mask[i * target_len + t] = true;
            let off = (i * target_len + t) * FEATURES;
            data[off..off + FEATURES].copy_from_slice(row);
        }
    }
    Ok(PaddedBatch {
        tensor: Tensor::from_vec(vec![b, target_len, FEATURES], data)?,
        mask,
        lengths: samples.iter().map(FeatureSequence::len).collect(),
        fingerprint,
    })
}

/// Pads to the longest sample in the list.
pub fn pad_to_longest(samples: &[FeatureSequence]) -> Result<PaddedBatch> {
    let t = samples.iter().map(FeatureSequence::len).max().unwrap_or(0);
    pad_batch(samples, t)
}

/// Per-sample chain up to (not including) padding. Returns `None` when the
/// sample is dropped by the length filter.
pub fn preprocess_one(
    sig: &RawSignature,
    cfg: &PreprocessConfig,
    mode: FilterMode,
) -> Result<Option<FeatureSequence>> {
    cfg.validate()?;
    let fs = znorm(&local_features(sig)?, cfg.epsilon);
    let (mut kept, _) = length_filter(vec![fs], cfg.max_length, mode);
    match kept.pop() {
        Some(fs) => Ok(Some(downsample(&fs, cfg.downsample_rate)?.with_fingerprint(cfg.fingerprint()))),
        None => Ok(None),
    }
}

/// Processes a list of signatures, keeping the index of each survivor.
pub fn preprocess_all(
    sigs: &[RawSignature],
    cfg: &PreprocessConfig,
    mode: FilterMode,
) -> Result<Vec<(usize, FeatureSequence)>> {
    let mut out = Vec::with_capacity(sigs.len());
    for (i, s) in sigs.iter().enumerate() {
        if let Some(fs) = preprocess_one(s, cfg, mode)? {
            out.push((i, fs));
        }
    }
    Ok(out)
}
