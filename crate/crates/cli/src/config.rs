//! Experiment configuration: TOML (or a previous `run.json`) plus overrides.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sigver_core::autoencoder::{AeConfig, PRESET_T4};
use sigver_core::data::GeneratorConfig;
use sigver_core::eval::DecisionConfig;
use sigver_core::pipeline::{Experiment, SynthSpec};
use sigver_core::preprocess::PreprocessConfig;
use sigver_core::siamese::{Scenario, SiameseConfig};

pub const SEED_ENV: &str = "SIGVER_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthData {
    pub subjects: usize,
    pub genuine_per_subject: usize,
    pub forged_per_subject: usize,
    pub train_subjects: usize,
    pub references: usize,
    /// Defaults to the experiment seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub generator: GeneratorConfig,
}

impl Default for SynthData {
    fn default() -> Self {
        let spec = SynthSpec::default();
        SynthData {
            subjects: spec.subjects,
            genuine_per_subject: spec.genuine_per_subject,
            forged_per_subject: spec.forged_per_subject,
            train_subjects: 20,
            references: 5,
            seed: None,
            generator: spec.generator,
        }
    }
}

impl SynthData {
    pub fn spec(&self) -> SynthSpec {
        SynthSpec {
            subjects: self.subjects,
            genuine_per_subject: self.genuine_per_subject,
            forged_per_subject: self.forged_per_subject,
            generator: self.generator.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// Manifests for the two splits; test references are labelled in the
    /// test manifest.
    Files { train: PathBuf, test: PathBuf },
    Synth(SynthData),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synth(SynthData::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scenario: Scenario,
    pub out_dir: PathBuf,
    pub data: DataSource,
    pub preprocess: PreprocessConfig,
    pub ae: AeConfig,
    pub siamese: SiameseConfig,
    pub decision: DecisionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            scenario: Scenario::S2,
            out_dir: PathBuf::from("out"),
            data: DataSource::default(),
            preprocess: PreprocessConfig::default(),
            ae: AeConfig::default(),
            siamese: SiameseConfig::default(),
            decision: DecisionConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn experiment(&self) -> Experiment {
        Experiment {
            preprocess: self.preprocess.clone(),
            ae: self.ae.clone(),
            siamese: self.siamese.clone(),
            scenario: self.scenario,
            decision: self.decision.clone(),
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment().validate()?;
        if let DataSource::Synth(s) = &self.data {
            s.generator.validate()?;
            if s.train_subjects == 0 || s.train_subjects >= s.subjects {
                bail!("data.train_subjects must be in 1..{}", s.subjects);
            }
        }
        if let Some(m) = self.decision.required_count {
            if m == 0 {
                bail!("decision.required_count must be >= 1");
            }
        }
        if !(self.decision.threshold > 0.0 && self.decision.threshold < 1.0) {
            bail!("decision.threshold must be in (0, 1)");
        }
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Loads `path` (TOML, or JSON such as a `run.json`), applies `key=value`
/// overrides with dotted keys, resolves presets and makes paths absolute
/// relative to the config file. `SIGVER_SEED` replaces the seed last.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let (mut table, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let table = parse_table(p, &text)?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (table, base)
        }
        None => (toml::Table::new(), PathBuf::new()),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    resolve_preset(&mut table, "ae", PRESET_T4, |name| Ok(toml::Value::try_from(AeConfig::from_preset(name)?)?))?;
    resolve_preset(&mut table, "siamese", "siamese-t5", |name| {
        Ok(toml::Value::try_from(SiameseConfig::from_preset(name)?)?)
    })?;
    let mut cfg: ExperimentConfig = defaults_under(table)?;
    if let Ok(seed) = std::env::var(SEED_ENV) {
        cfg.seed = seed.trim().parse().with_context(|| format!("{SEED_ENV}={seed:?} is not an integer"))?;
    }
    let base = absolute(&base)?;
    cfg.out_dir = base.join(&cfg.out_dir);
    if let DataSource::Files { train, test } = &mut cfg.data {
        *train = base.join(&*train);
        *test = base.join(&*test);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(if p.is_absolute() { p.to_path_buf() } else { std::env::current_dir()?.join(p) })
}

fn parse_table(path: &Path, text: &str) -> Result<toml::Table> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let mut value: serde_json::Value = serde_json::from_str(text).with_context(|| format!("parsing {}", path.display()))?;
        // A run record wraps the resolved config.
        if let Some(inner) = value.get_mut("config") {
            value = inner.take();
        }
        match toml::Value::try_from(value)? {
            toml::Value::Table(t) => Ok(t),
            _ => bail!("{}: config must be an object", path.display()),
        }
    } else {
        toml::from_str(text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// `a.b.c=value`; the value is parsed as a TOML literal, falling back to a
/// bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| anyhow!("override {spec:?} is not key=value"))?;
    let value = parse_literal(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| anyhow!("override {spec:?}: {part} is not a table"))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Replaces `table[section]` by the named preset with the user's keys laid
/// over it.
fn resolve_preset(
    table: &mut toml::Table,
    section: &str,
    default: &str,
    preset: impl Fn(&str) -> Result<toml::Value>,
) -> Result<()> {
    let user = match table.remove(section) {
        Some(toml::Value::Table(t)) => t,
        Some(_) => bail!("[{section}] must be a table"),
        None => toml::Table::new(),
    };
    let name = match user.get("preset") {
        Some(toml::Value::String(s)) => s.clone(),
        Some(_) => bail!("{section}.preset must be a string"),
        None => default.to_string(),
    };
    let mut merged = preset(&name)?;
    merge(&mut merged, toml::Value::Table(user));
    table.insert(section.to_string(), merged);
    Ok(())
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Fills missing top-level keys from [`ExperimentConfig::default`], merging
/// nested tables so partial sections work.
fn defaults_under(table: toml::Table) -> Result<ExperimentConfig> {
    let mut value = toml::Value::try_from(ExperimentConfig::default())?;
    if let Some(toml::Value::Table(d)) = table.get("data") {
        // Switching source kind must not inherit fields of the default kind.
        if d.get("kind").and_then(|k| k.as_str()) == Some("files") {
            value.as_table_mut().expect("table").remove("data");
        }
    }
    merge(&mut value, toml::Value::Table(table));
    value.try_into().context("invalid configuration")
}

/// Everything needed to replay a command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub version: String,
    pub config: ExperimentConfig,
}

pub fn write_run_record(cfg: &ExperimentConfig, command: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.path("run.json");
    let record = RunRecord {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
    };
    std::fs::write(&path, serde_json::to_string_pretty(&record)?)?;
    Ok(path)
}
