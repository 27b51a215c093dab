//! Enrolled references per subject, persisted as a JSON snapshot.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sigver_core::autoencoder::LatentVector;
use sigver_core::data::Label;
use sigver_core::preprocess::Fingerprint;
use sigver_core::siamese::SubjectMean;

#[derive(Debug, Clone, PartialEq)]
pub struct Enrollment {
    pub references: Vec<LatentVector>,
    pub mean: SubjectMean,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    fingerprint: Fingerprint,
    subjects: BTreeMap<String, Vec<LatentVector>>,
}

#[derive(Debug)]
pub struct EnrollmentStore {
    path: Option<PathBuf>,
    fingerprint: Fingerprint,
    subjects: BTreeMap<String, Enrollment>,
}

fn enrollment(subject: &str, references: Vec<LatentVector>) -> Result<Enrollment> {
    let mean = SubjectMean::from_vectors(subject, references.iter().map(|r| r.values.as_slice()))?;
    Ok(Enrollment { references, mean })
}

impl EnrollmentStore {
    pub fn in_memory(fingerprint: Fingerprint) -> Self {
        EnrollmentStore {
            path: None,
            fingerprint,
            subjects: BTreeMap::new(),
        }
    }

    /// Loads the snapshot at `path` if it exists. Later mutations are
    /// written back to it.
    pub fn open(path: &Path, fingerprint: Fingerprint) -> Result<Self> {
        let mut store = EnrollmentStore {
            path: Some(path.to_path_buf()),
            ..Self::in_memory(fingerprint)
        };
        if !path.exists() {
            return Ok(store);
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let snap: Snapshot = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if snap.fingerprint != store.fingerprint {
            bail!(
                "enrollment snapshot {} was built with {}, models use {}",
                path.display(),
                snap.fingerprint,
                store.fingerprint
            );
        }
        for (subject, refs) in snap.subjects {
            if refs.is_empty() {
                continue;
            }
            store.subjects.insert(subject.clone(), enrollment(&subject, refs)?);
        }
        Ok(store)
    }

    pub fn get(&self, subject: &str) -> Option<&Enrollment> {
        self.subjects.get(subject)
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Appends references and recomputes the subject's mean. Returns the new
    /// reference count.
    pub fn add_references(&mut self, subject: &str, refs: Vec<LatentVector>) -> Result<usize> {
        if refs.is_empty() {
            bail!("no references given for {subject}");
        }
        let mut all = self.subjects.get(subject).map(|e| e.references.clone()).unwrap_or_default();
        all.extend(refs.into_iter().map(|r| LatentVector {
            subject_id: subject.to_string(),
            label: Label::Reference,
            ..r
        }));
        let e = enrollment(subject, all)?;
        let n = e.references.len();
        self.subjects.insert(subject.to_string(), e);
        self.save()?;
        Ok(n)
    }

    pub fn remove(&mut self, subject: &str) -> Result<bool> {
        let removed = self.subjects.remove(subject).is_some();
        if removed {
            self.save()?;
        }
        Ok(removed)
    }

    fn save(&self) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let snap = Snapshot {
            fingerprint: self.fingerprint.clone(),
            subjects: self.subjects.iter().map(|(k, e)| (k.clone(), e.references.clone())).collect(),
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        // Write then rename so a crash never leaves a truncated snapshot.
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&snap)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sigver_core::preprocess::PreprocessConfig;

    fn lv(v: Vec<f64>) -> LatentVector {
        LatentVector {
            values: v,
            subject_id: String::new(),
            label: Label::Genuine,
        }
    }

    #[test]
    fn mean_follows_mutations_and_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.json");
        let fp = PreprocessConfig::default().fingerprint();
        let mut store = EnrollmentStore::open(&path, fp.clone()).unwrap();
        assert_eq!(store.add_references("a", vec![lv(vec![1.0, 1.0])]).unwrap(), 1);
        assert_eq!(store.get("a").unwrap().mean.mu, vec![1.0, 1.0]);
        assert_eq!(store.add_references("a", vec![lv(vec![3.0, 3.0])]).unwrap(), 2);
        assert_eq!(store.get("a").unwrap().mean.mu, vec![2.0, 2.0]);
        assert_eq!(store.get("a").unwrap().references[1].label, Label::Reference);

        let reopened = EnrollmentStore::open(&path, fp.clone()).unwrap();
        assert_eq!(reopened.get("a"), store.get("a"));

        assert!(store.remove("a").unwrap());
        assert!(!store.remove("a").unwrap());
        assert!(EnrollmentStore::open(&path, fp).unwrap().is_empty());
    }

    #[test]
    fn foreign_fingerprint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.json");
        let mut store = EnrollmentStore::open(&path, PreprocessConfig::default().fingerprint()).unwrap();
        store.add_references("a", vec![lv(vec![1.0])]).unwrap();
        let other = PreprocessConfig {
            downsample_rate: 2,
            ..PreprocessConfig::default()
        };
        assert!(EnrollmentStore::open(&path, other.fingerprint()).is_err());
    }
}
