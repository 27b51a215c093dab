//! Shared inputs for the benchmarks.

use sigver_core::autoencoder::{build_autoencoder, AeConfig, TrainedAutoencoder};
use sigver_core::data::{synth_sample, synth_subject, GeneratorConfig, Label, RawSignature};
use sigver_core::preprocess::{preprocess_one, FeatureSequence, FilterMode, PreprocessConfig};

pub fn signatures(n: usize) -> Vec<RawSignature> {
    let gen = GeneratorConfig::default();
    (0..n as u64)
        .map(|i| {
            let m = synth_subject(i, &gen).expect("default generator is valid");
            synth_sample(&m, if i % 2 == 0 { Label::Genuine } else { Label::Forged }, i)
        })
        .collect()
}

pub fn feature_sequences(n: usize) -> Vec<FeatureSequence> {
    let pre = PreprocessConfig::default();
    signatures(n)
        .iter()
        .filter_map(|s| preprocess_one(s, &pre, FilterMode::Truncate).expect("synthetic samples preprocess"))
        .collect()
}

/// Untrained; timing does not depend on the weights.
pub fn autoencoder(units: usize, attention: bool) -> TrainedAutoencoder {
    let cfg = AeConfig {
        units_per_direction: units,
        use_attention: attention,
        ..AeConfig::japanese_t4()
    };
    build_autoencoder(&cfg, &PreprocessConfig::default(), 1).expect("preset is valid")
}
