//! The `sigver` command line and HTTP service.

pub mod config;
pub mod service;
pub mod store;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sigver_core::autoencoder::TrainedAutoencoder;
use sigver_core::data::{load_dataset, load_signature, write_manifest, write_points_csv, Dataset, DatasetRole, Label, PointsFormat};
use sigver_core::eval::{evaluate, export_embeddings, write_vectors_csv};
use sigver_core::pipeline::{split_by_count, synth_dataset, train_ae_stage, train_siamese_stage};
use sigver_core::preprocess::{preprocess_all, FilterMode};
use sigver_core::siamese::TrainedSiamese;

use crate::config::{DataSource, ExperimentConfig, SynthData};
use crate::service::AppState;
use crate::store::EnrollmentStore;

pub const AE_FILE: &str = "ae.sgv";
pub const SIAMESE_FILE: &str = "siamese.sgv";
pub const STORE_FILE: &str = "enrollments.json";

#[derive(Debug, Parser)]
#[command(name = "sigver", version, about = "Online signature verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML config, or a `run.json` written by an earlier command.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set ae.max_epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Autoencoder model file (default `<out>/ae.sgv`).
    #[arg(long)]
    pub ae: Option<PathBuf>,
    /// Siamese model file (default `<out>/siamese.sgv`).
    #[arg(long)]
    pub siamese: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Default)]
pub enum Split {
    Train,
    #[default]
    Test,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset as point files plus manifests.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        genuine: Option<usize>,
        #[arg(long)]
        forged: Option<usize>,
        /// Also write `train.csv` / `test.csv` with this many training subjects.
        #[arg(long)]
        train_subjects: Option<usize>,
        #[arg(long)]
        references: Option<usize>,
    },
    /// Validate a manifest, summarize it, and optionally split it by subject.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        train_subjects: Option<usize>,
        #[arg(long, default_value_t = 5)]
        references: usize,
    },
    /// Train the autoencoder.
    TrainAe {
        #[command(flatten)]
        common: Common,
    },
    /// Write latent vectors of a split as CSV.
    Encode {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t)]
        split: Split,
        /// Encode this manifest instead of a configured split.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "latents.csv")]
        file: PathBuf,
    },
    /// Train the Siamese classifier on latents of the trained autoencoder.
    TrainSiamese {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate both models on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Raw-length bin width of the length histogram.
        #[arg(long, default_value_t = 50)]
        bin_width: usize,
    },
    /// Add reference signatures for a subject to the enrollment store.
    Enroll {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        subject: String,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Verify one signature against a subject's enrolled references.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        subject: String,
        #[arg(long)]
        store: Option<PathBuf>,
        file: PathBuf,
    },
    /// Serve the enrollment/verification HTTP API.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Export latent vectors and first-leg activations as CSV.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t)]
        split: Split,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Ingest { .. } => "ingest",
            Command::TrainAe { .. } => "train-ae",
            Command::Encode { .. } => "encode",
            Command::TrainSiamese { .. } => "train-siamese",
            Command::Eval { .. } => "eval",
            Command::Enroll { .. } => "enroll",
            Command::Verify { .. } => "verify",
            Command::Serve { .. } => "serve",
            Command::ExportEmbeddings { .. } => "export-embeddings",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Synth { common, .. }
            | Command::Ingest { common, .. }
            | Command::TrainAe { common }
            | Command::Encode { common, .. }
            | Command::TrainSiamese { common }
            | Command::Eval { common, .. }
            | Command::Enroll { common, .. }
            | Command::Verify { common, .. }
            | Command::Serve { common, .. }
            | Command::ExportEmbeddings { common, .. } => common,
        }
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 2 on usage errors, 1 otherwise.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = config::load(common.config.as_deref(), &common.overrides)?;
    if let Some(out) = &common.out {
        cfg.out_dir = if out.is_absolute() { out.clone() } else { std::env::current_dir()?.join(out) };
    }
    Ok(cfg)
}

fn ae_path(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common.ae.clone().unwrap_or_else(|| cfg.path(AE_FILE))
}

fn siamese_path(common: &Common, cfg: &ExperimentConfig) -> PathBuf {
    common.siamese.clone().unwrap_or_else(|| cfg.path(SIAMESE_FILE))
}

fn load_ae(common: &Common, cfg: &ExperimentConfig) -> Result<TrainedAutoencoder> {
    let p = ae_path(common, cfg);
    TrainedAutoencoder::load(&p).with_context(|| format!("loading autoencoder {}", p.display()))
}

fn load_siamese(common: &Common, cfg: &ExperimentConfig) -> Result<TrainedSiamese> {
    let p = siamese_path(common, cfg);
    TrainedSiamese::load(&p).with_context(|| format!("loading siamese model {}", p.display()))
}

/// Train and test datasets named by the config.
pub fn datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.data {
        DataSource::Files { train, test } => Ok((
            load_dataset(train, DatasetRole::Train).with_context(|| format!("loading {}", train.display()))?,
            load_dataset(test, DatasetRole::Test).with_context(|| format!("loading {}", test.display()))?,
        )),
        DataSource::Synth(s) => {
            let d = synth_dataset(&s.spec(), s.seed.unwrap_or(cfg.seed))?;
            Ok(split_by_count(&d, s.train_subjects, s.references)?)
        }
    }
}

fn pick_split(cfg: &ExperimentConfig, split: Split) -> Result<Dataset> {
    let (train, test) = datasets(cfg)?;
    Ok(match split {
        Split::Train => train,
        Split::Test => test,
        Split::All => {
            let mut all = train.into_samples();
            all.extend(test.into_samples());
            Dataset::new(all, DatasetRole::Train)
        }
    })
}

fn write_history(path: &Path, history: &[f64]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,loss")?;
    for (i, l) in history.iter().enumerate() {
        writeln!(out, "{i},{l}")?;
    }
    out.flush()?;
    Ok(())
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn read_points(path: &Path) -> Result<Vec<sigver_core::data::Point>> {
    let format = PointsFormat::from_path(path).with_context(|| format!("unknown sample format for {}", path.display()))?;
    Ok(load_signature(path, format)
        .with_context(|| format!("reading {}", path.display()))?
        .points()
        .to_vec())
}

fn api<T>(r: std::result::Result<T, service::ApiError>) -> Result<T> {
    r.map_err(|e| anyhow::anyhow!("{}", e.message))
}

pub fn run(command: Command) -> Result<()> {
    let common = command.common().clone();
    let name = command.name();
    let mut cfg = load_config(&common)?;
    match command {
        Command::Synth {
            subjects,
            genuine,
            forged,
            train_subjects,
            references,
            ..
        } => {
            let mut s = match &cfg.data {
                DataSource::Synth(s) => s.clone(),
                DataSource::Files { .. } => SynthData::default(),
            };
            s.subjects = subjects.unwrap_or(s.subjects);
            s.genuine_per_subject = genuine.unwrap_or(s.genuine_per_subject);
            s.forged_per_subject = forged.unwrap_or(s.forged_per_subject);
            s.references = references.unwrap_or(s.references);
            if let Some(t) = train_subjects {
                s.train_subjects = t;
            } else if s.train_subjects >= s.subjects {
                s.train_subjects = s.subjects.saturating_sub(1).max(1);
            }
            cfg.data = DataSource::Synth(s.clone());
            synth_command(&cfg, &s, train_subjects.is_some())?;
        }
        Command::Ingest {
            manifest,
            train_subjects,
            references,
            ..
        } => ingest_command(&cfg, &manifest, train_subjects, references)?,
        Command::TrainAe { .. } => {
            let (train, test) = datasets(&cfg)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            let (ae, history) = train_ae_stage(&cfg.experiment(), &train, &test)?;
            ae.save(&ae_path(&common, &cfg))?;
            write_history(&cfg.path("ae_history.csv"), &history)?;
            println!("autoencoder: {} epochs, final loss {:.4}", history.len(), history.last().copied().unwrap_or(f64::NAN));
        }
        Command::Encode { split, manifest, file, .. } => {
            let ae = load_ae(&common, &cfg)?;
            let data = match manifest {
                Some(m) => load_dataset(&m, DatasetRole::Train)?,
                None => pick_split(&cfg, split)?,
            };
            let latents: Vec<_> = sigver_core::eval::encode_dataset(&data, &ae, FilterMode::Truncate)?
                .into_iter()
                .flatten()
                .map(|l| (l.subject_id, l.label, l.values))
                .collect();
            std::fs::create_dir_all(&cfg.out_dir)?;
            let path = cfg.out_dir.join(file);
            write_vectors_csv(std::io::BufWriter::new(std::fs::File::create(&path)?), &latents)?;
            println!("{} latent vectors written to {}", latents.len(), path.display());
        }
        Command::TrainSiamese { .. } => {
            let ae = load_ae(&common, &cfg)?;
            if ae.preprocess != cfg.preprocess {
                bail!("autoencoder was trained with {}, config asks for {}", ae.fingerprint(), cfg.preprocess.fingerprint());
            }
            let (train, test) = datasets(&cfg)?;
            let (sm, history, pairs) = train_siamese_stage(&cfg.experiment(), &ae, &train, &test)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            sm.save(&siamese_path(&common, &cfg))?;
            write_history(&cfg.path("siamese_history.csv"), &history)?;
            pairs.write_csv(std::io::BufWriter::new(std::fs::File::create(cfg.path("pairs.csv"))?))?;
            println!(
                "siamese: {} pairs ({} positive), {} epochs, final loss {:.4}",
                pairs.len(),
                pairs.positives(),
                history.len(),
                history.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Eval { bin_width, .. } => {
            let ae = load_ae(&common, &cfg)?;
            let sm = load_siamese(&common, &cfg)?;
            let (_, test) = datasets(&cfg)?;
            let report = evaluate(&test, &ae, &sm, &cfg.decision, FilterMode::Truncate)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            std::fs::write(cfg.path("report.json"), serde_json::to_string_pretty(&report)?)?;
            std::fs::write(cfg.path("report.txt"), report.to_table())?;
            report.write_scores_csv(std::fs::File::create(cfg.path("scores.csv"))?)?;
            report.write_length_histogram(std::fs::File::create(cfg.path("lengths.csv"))?, bin_width)?;
            print!("{}", report.to_table());
        }
        Command::ExportEmbeddings { split, .. } => {
            let ae = load_ae(&common, &cfg)?;
            let sm_path = siamese_path(&common, &cfg);
            let sm = if sm_path.exists() { Some(load_siamese(&common, &cfg)?) } else { None };
            let data = pick_split(&cfg, split)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            let legs_path = cfg.path("legs.csv");
            let n = export_embeddings(
                &data,
                &ae,
                FilterMode::Truncate,
                &cfg.path("latents.csv"),
                sm.as_ref().map(|m| (m, legs_path.as_path())),
            )?;
            println!("{n} rows exported to {}", cfg.out_dir.display());
        }
        Command::Enroll { subject, store, files, .. } => {
            let state = app_state(&common, &cfg, store)?;
            let samples = files.iter().map(|f| read_points(f)).collect::<Result<Vec<_>>>()?;
            let n = api(state.enroll(&subject, samples))?;
            print_json(&service::EnrollResponse { reference_count: n })?;
        }
        Command::Verify { subject, store, file, .. } => {
            let state = app_state(&common, &cfg, store)?;
            let d = api(state.verify(&subject, read_points(&file)?))?;
            print_json(&service::VerifyResponse::from(d))?;
        }
        Command::Serve { bind, store, .. } => {
            let state = Arc::new(app_state(&common, &cfg, store)?);
            write_run_record(&cfg, name)?;
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            return rt.block_on(service::serve(state, &bind));
        }
    }
    write_run_record(&cfg, name)?;
    Ok(())
}

fn write_run_record(cfg: &ExperimentConfig, name: &str) -> Result<()> {
    config::write_run_record(cfg, name).map(|_| ())
}

fn app_state(common: &Common, cfg: &ExperimentConfig, store: Option<PathBuf>) -> Result<AppState> {
    let ae = load_ae(common, cfg)?;
    let sm = load_siamese(common, cfg)?;
    let store_path = store.unwrap_or_else(|| cfg.path(STORE_FILE));
    let store = EnrollmentStore::open(&store_path, ae.fingerprint())?;
    AppState::new(ae, sm, cfg.decision.clone(), store)
}

fn synth_command(cfg: &ExperimentConfig, s: &SynthData, split: bool) -> Result<()> {
    let d = synth_dataset(&s.spec(), s.seed.unwrap_or(cfg.seed))?;
    let samples_dir = cfg.path("samples");
    std::fs::create_dir_all(&samples_dir)?;
    let mut rows = Vec::with_capacity(d.len());
    let mut counter: std::collections::BTreeMap<(String, Label), usize> = Default::default();
    for sig in d.samples() {
        let k = counter.entry((sig.subject_id().to_string(), sig.label())).or_default();
        let name = format!("samples/{}_{}_{:02}.csv", sig.subject_id(), sig.label(), *k);
        *k += 1;
        write_points_csv(&cfg.out_dir.join(&name), sig)?;
        rows.push((name, sig.subject_id().to_string(), sig.label()));
    }
    write_manifest(&cfg.path("manifest.csv"), &rows)?;
    if split {
        write_split(&cfg.out_dir, &rows, s.train_subjects, s.references)?;
    }
    println!("{} samples of {} subjects written to {}", rows.len(), s.subjects, cfg.out_dir.display());
    Ok(())
}

/// Splits manifest rows by subject order: the first `train_subjects`
/// subjects train, and each remaining subject's first `refs` genuine rows
/// become references. Writes `train.csv` and `test.csv` in `dir`.
fn write_split(dir: &Path, rows: &[(String, String, Label)], train_subjects: usize, refs: usize) -> Result<()> {
    let mut order: Vec<&str> = Vec::new();
    for (_, s, _) in rows {
        if !order.contains(&s.as_str()) {
            order.push(s);
        }
    }
    if train_subjects == 0 || train_subjects >= order.len() {
        bail!("train_subjects must be in 1..{}", order.len());
    }
    let train_set: std::collections::HashSet<&str> = order[..train_subjects].iter().copied().collect();
    let mut promoted: std::collections::HashMap<&str, usize> = Default::default();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (path, subject, label) in rows {
        if train_set.contains(subject.as_str()) {
            let label = if *label == Label::Reference { Label::Genuine } else { *label };
            train.push((path.clone(), subject.clone(), label));
        } else {
            let n = promoted.entry(subject).or_default();
            let label = match label {
                Label::Reference => {
                    *n += 1;
                    Label::Reference
                }
                Label::Genuine if *n < refs => {
                    *n += 1;
                    Label::Reference
                }
                other => *other,
            };
            test.push((path.clone(), subject.clone(), label));
        }
    }
    for (subject, n) in &promoted {
        if *n < refs {
            bail!("subject {subject} has only {n} genuine samples for {refs} references");
        }
    }
    write_manifest(&dir.join("train.csv"), &train)?;
    write_manifest(&dir.join("test.csv"), &test)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    samples: usize,
    subjects: usize,
    genuine: usize,
    forged: usize,
    references: usize,
    min_length: usize,
    max_length: usize,
    mean_length: f64,
    /// Samples the training-mode length filter would drop.
    over_length: usize,
    fingerprint: String,
}

fn ingest_command(cfg: &ExperimentConfig, manifest: &Path, train_subjects: Option<usize>, refs: usize) -> Result<()> {
    let d = load_dataset(manifest, DatasetRole::Train).with_context(|| format!("loading {}", manifest.display()))?;
    if d.is_empty() {
        bail!("manifest {} lists no samples", manifest.display());
    }
    let count = |l: Label| d.samples().iter().filter(|s| s.label() == l).count();
    let lengths: Vec<usize> = d.samples().iter().map(|s| s.len()).collect();
    let kept = preprocess_all(d.samples(), &cfg.preprocess, FilterMode::Drop)?.len();
    let summary = IngestSummary {
        samples: d.len(),
        subjects: d.subjects().len(),
        genuine: count(Label::Genuine),
        forged: count(Label::Forged),
        references: count(Label::Reference),
        min_length: lengths.iter().copied().min().unwrap_or(0),
        max_length: lengths.iter().copied().max().unwrap_or(0),
        mean_length: lengths.iter().sum::<usize>() as f64 / lengths.len() as f64,
        over_length: d.len() - kept,
        fingerprint: cfg.preprocess.fingerprint().to_string(),
    };
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.path("ingest.json"), serde_json::to_string_pretty(&summary)?)?;
    if let Some(t) = train_subjects {
        let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.is_absolute() { base } else { std::env::current_dir()?.join(base) };
        let rows = read_manifest_rows(manifest)?
            .into_iter()
            .map(|(p, s, l)| (base.join(p).to_string_lossy().into_owned(), s, l))
            .collect::<Vec<_>>();
        write_split(&cfg.out_dir, &rows, t, refs)?;
        load_dataset(&cfg.path("test.csv"), DatasetRole::Test)?;
    }
    print_json(&summary)
}

fn read_manifest_rows(path: &Path) -> Result<Vec<(String, String, Label)>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            if rec.len() != 3 {
                bail!("manifest row {rec:?} does not have 3 fields");
            }
            Ok((rec[0].to_string(), rec[1].to_string(), rec[2].parse()?))
        })
        .collect()
}
