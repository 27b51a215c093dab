use std::collections::BTreeSet;

use super::{Dataset, DatasetRole, Label, RawSignature};
use crate::error::{Error, Result};

/// Splits `d` by subject. Each test subject's first `refs_per_test_subject`
/// genuine samples, in dataset order, become references (samples already
/// labelled `Reference` count toward the quota). Samples of subjects in
/// neither set are dropped.
pub fn split_dataset(
    d: &Dataset,
    train_subjects: &BTreeSet<String>,
    test_subjects: &BTreeSet<String>,
    refs_per_test_subject: usize,
) -> Result<(Dataset, Dataset)> {
    let overlap: Vec<String> = train_subjects.intersection(test_subjects).cloned().collect();
    if !overlap.is_empty() {
        return Err(Error::Overlap(overlap));
    }

    for subject in test_subjects {
        let existing = d
            .samples()
            .iter()
            .filter(|s| s.subject_id() == subject && s.label() == Label::Reference)
            .count();
        let genuine = d
            .samples()
            .iter()
            .filter(|s| s.subject_id() == subject && s.label() == Label::Genuine)
            .count();
        if existing + genuine < refs_per_test_subject {
            return Err(Error::InsufficientReferences {
                subject: subject.clone(),
                available: existing + genuine,
                required: refs_per_test_subject,
            });
        }
    }

    let mut train: Vec<RawSignature> = Vec::new();
    let mut test: Vec<RawSignature> = Vec::new();
    let mut promoted: std::collections::BTreeMap<&str, usize> = Default::default();
    for subject in test_subjects {
        let existing = d
            .samples()
            .iter()
            .filter(|s| s.subject_id() == subject && s.label() == Label::Reference)
            .count();
        promoted.insert(subject.as_str(), refs_per_test_subject.saturating_sub(existing));
    }

    for s in d.samples() {
        if train_subjects.contains(s.subject_id()) {
            let label = if s.label() == Label::Reference { Label::Genuine } else { s.label() };
            train.push(s.clone().with_label(label));
        } else if let Some(need) = promoted.get_mut(s.subject_id()) {
            if s.label() == Label::Genuine && *need > 0 {
                *need -= 1;
                test.push(s.clone().with_label(Label::Reference));
            } else {
                test.push(s.clone());
            }
        }
    }

    let test = Dataset::new(test, DatasetRole::Test);
    test.check_invariants()?;
    Ok((Dataset::new(train, DatasetRole::Train), test))
}
