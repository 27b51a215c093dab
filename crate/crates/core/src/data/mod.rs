//! Signature and dataset representations.
//!
//! A [`RawSignature`] is a time-ordered pen trajectory owned by one subject.
//! A [`Dataset`] is an ordered collection of signatures together with an
//! index of the samples designated as enrollment references.

mod io;
mod split;
mod synth;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_dataset, load_signature, write_manifest, write_points_csv, PointsFormat};
pub use split::split_dataset;
pub use synth::{base_trajectory, synth_sample, synth_subject, GeneratorConfig, Range, StrokeParams, SubjectModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Genuine,
    Forged,
    Reference,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Genuine => "genuine",
            Label::Forged => "forged",
            Label::Reference => "reference",
        }
    }

    /// Reference samples are genuine signatures set aside for enrollment.
    pub fn is_genuine(self) -> bool {
        matches!(self, Label::Genuine | Label::Reference)
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "genuine" => Ok(Label::Genuine),
            "forged" => Ok(Label::Forged),
            "reference" => Ok(Label::Reference),
            other => Err(Error::Manifest(format!("unknown label {other:?}"))),
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One pen sample. Timestamps are optional; a constant sampling rate is
/// assumed when they are missing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y, t: None }
    }

    pub fn with_time(x: f64, y: f64, t: f64) -> Self {
        Point { x, y, t: Some(t) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSignature {
    subject_id: String,
    label: Label,
    points: Vec<Point>,
}

impl RawSignature {
    pub fn new(subject_id: impl Into<String>, label: Label, points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::EmptySignature(points.len()));
        }
        let mut last_t = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::Config(format!("point {i} has non-finite coordinates")));
            }
            if let Some(t) = p.t {
                if !t.is_finite() || t < last_t {
                    return Err(Error::Config(format!("timestamp at point {i} decreases")));
                }
                last_t = t;
            }
        }
        Ok(RawSignature {
            subject_id: subject_id.into(),
            label,
            points,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = label;
        self
    }

    pub fn with_subject(mut self, subject_id: impl Into<String>) -> Self {
        self.subject_id = subject_id.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetRole {
    Train,
    Test,
}

/// Ordered signatures plus the reference index. Sample order is stable and
/// drives every downstream split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<RawSignature>,
    role: DatasetRole,
    reference_index: BTreeMap<String, Vec<usize>>,
}

impl Dataset {
    pub fn new(samples: Vec<RawSignature>, role: DatasetRole) -> Self {
        let mut reference_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if s.label == Label::Reference {
                reference_index.entry(s.subject_id.clone()).or_default().push(i);
            }
        }
        let d = Dataset {
            samples,
            role,
            reference_index,
        };
        debug_assert!(d.check_invariants().is_ok());
        d
    }

    /// Test datasets must give every queried subject at least one reference.
    pub fn check_invariants(&self) -> Result<()> {
        for (subject, idx) in &self.reference_index {
            for &i in idx {
                let s = self
                    .samples
                    .get(i)
                    .ok_or_else(|| Error::Manifest(format!("reference index {i} out of range")))?;
                if s.label != Label::Reference || &s.subject_id != subject {
                    return Err(Error::Manifest(format!("reference index {i} is inconsistent")));
                }
            }
        }
        if self.role == DatasetRole::Test {
            for subject in self.subjects() {
                let has_queries = self
                    .samples
                    .iter()
                    .any(|s| s.subject_id == subject && s.label != Label::Reference);
                if has_queries && !self.reference_index.contains_key(&subject) {
                    return Err(Error::InsufficientReferences {
                        subject,
                        available: 0,
                        required: 1,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn samples(&self) -> &[RawSignature] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<RawSignature> {
        self.samples
    }

    pub fn role(&self) -> DatasetRole {
        self.role
    }

    pub fn reference_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.reference_index
    }

    pub fn references(&self, subject: &str) -> Vec<&RawSignature> {
        self.reference_index
            .get(subject)
            .map(|idx| idx.iter().map(|&i| &self.samples[i]).collect())
            .unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct subject ids in order of first appearance.
    pub fn subjects(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        self.samples
            .iter()
            .filter(|s| seen.insert(s.subject_id.as_str()))
            .map(|s| s.subject_id.clone())
            .collect()
    }
}
