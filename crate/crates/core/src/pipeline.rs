//! End-to-end run orchestration: run configs, output manifests, synthetic
//! corpus generation, prediction files, and atomic writes.
//!
//! A training run is described by one `RunConfig` and leaves behind a
//! self-contained run directory: the effective config, a manifest with
//! input digests and the per-epoch metric log, every epoch checkpoint,
//! the selection outcome, and the best checkpoint(s). Re-running with
//! identical inputs reproduces identical artifacts byte for byte.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    apply_normalizer, fit_normalizer, load_dataset, log_frequency, save_dataset, Dataset, Domain,
    FeatContext, FrequencyTable, Instance, Subtask,
};
use crate::encoding::{build_vocab_multi, Vocabulary, DEFAULT_MAX_LEN};
use crate::ensemble::{EnsembleSpec, MemberSource};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, export_analysis, EvaluationReport, MetricBlock, PredictionSet};
use crate::model::{init_model, init_mtl, Checkpoint, EncoderConfig};
use crate::training::{
    grid_search, select_best, train, train_mtl, train_msft, AdversarialConfig, BestSelection,
    CheckpointSet, GridPoint, Method, MsftOutcome, TrainContext, TrainingConfig,
};

/// Writes `bytes` to `path` via a sibling temp file + rename so readers
/// never observe a half-written file. Parent directories are created.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a writable path: {}", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// The base training regime a run follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseRegime {
    /// One task, one stage.
    Single,
    /// Two stages: fine-tune on the stage-1 task, continue the best
    /// snapshot on the target task.
    Msft,
    /// Both tasks trained jointly against a shared encoder.
    Mtl,
}

/// A parsed method string such as `standard`, `feat`, `adv+msft` or
/// `feat+mtl`: a base regime plus the two composable switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MethodSpec {
    pub base: BaseRegime,
    pub feat: bool,
    pub adv: bool,
}

impl MethodSpec {
    pub fn standard() -> Self {
        MethodSpec { base: BaseRegime::Single, feat: false, adv: false }
    }

    /// The per-stage training method this spec asks for.
    pub fn training_method(&self) -> Method {
        match (self.feat, self.adv) {
            (false, false) => Method::Standard,
            (true, false) => Method::Feat,
            (false, true) => Method::Adv,
            (true, true) => Method::AdvFeat,
        }
    }
}

impl FromStr for MethodSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = MethodSpec::standard();
        let mut standard_seen = false;
        let mut base_seen = false;
        let tokens: Vec<&str> = s
            .split(['+', '&'])
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            return Err(Error::invalid("empty method"));
        }
        for token in &tokens {
            match token.to_ascii_lowercase().as_str() {
                "standard" => standard_seen = true,
                "feat" if !spec.feat => spec.feat = true,
                "adv" if !spec.adv => spec.adv = true,
                "msft" if !base_seen => {
                    spec.base = BaseRegime::Msft;
                    base_seen = true;
                }
                "mtl" if !base_seen => {
                    spec.base = BaseRegime::Mtl;
                    base_seen = true;
                }
                other => {
                    return Err(Error::invalid(format!(
                        "bad method token '{other}' (expected standard, feat, adv, msft or mtl, \
                         composed with '+')"
                    )))
                }
            }
        }
        if standard_seen && (spec.feat || spec.adv || base_seen) {
            return Err(Error::invalid("'standard' cannot be composed with other tokens"));
        }
        Ok(spec)
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut tokens: Vec<&str> = Vec::new();
        if self.feat {
            tokens.push("feat");
        }
        if self.adv {
            tokens.push("adv");
        }
        match self.base {
            BaseRegime::Single => {}
            BaseRegime::Msft => tokens.push("msft"),
            BaseRegime::Mtl => tokens.push("mtl"),
        }
        if tokens.is_empty() {
            tokens.push("standard");
        }
        f.write_str(&tokens.join("+"))
    }
}

impl TryFrom<String> for MethodSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MethodSpec> for String {
    fn from(m: MethodSpec) -> String {
        m.to_string()
    }
}

/// Input file locations for a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    pub dev: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Token frequency table; required when the frequency feature is on.
    #[serde(default)]
    pub frequencies: Option<PathBuf>,
    /// Stage-1 task files (multi-step runs only).
    #[serde(default)]
    pub stage1_train: Option<PathBuf>,
    #[serde(default)]
    pub stage1_dev: Option<PathBuf>,
    /// Partner task files (multi-task runs only).
    #[serde(default)]
    pub partner_train: Option<PathBuf>,
    #[serde(default)]
    pub partner_dev: Option<PathBuf>,
}

fn default_encoder() -> String {
    "toy".into()
}

fn default_max_len() -> usize {
    DEFAULT_MAX_LEN
}

fn default_min_count() -> usize {
    1
}

fn default_seed() -> u64 {
    1
}

/// Everything a training run needs, loadable from a JSON file.
/// CLI flags override individual keys; the effective merged config is
/// echoed into the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub subtask: Subtask,
    pub method: MethodSpec,
    #[serde(default = "default_encoder")]
    pub encoder: String,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_min_count")]
    pub vocab_min_count: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub per_domain_selection: bool,
    #[serde(default)]
    pub optimizer: TrainingConfig,
    #[serde(default)]
    pub adversarial: Option<AdversarialConfig>,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self).expect("config serializes");
        write_atomic(path.as_ref(), &bytes)
    }

    pub fn validate(&self) -> Result<()> {
        EncoderConfig::preset(&self.encoder, 4, 8)?;
        if self.max_len < 4 {
            return Err(Error::invalid("max_len must be at least 4"));
        }
        if self.vocab_min_count < 1 {
            return Err(Error::invalid("vocab_min_count must be at least 1"));
        }
        self.optimizer.validate()?;
        if self.method.adv {
            match &self.adversarial {
                Some(adv) => adv.validate()?,
                None => {
                    return Err(Error::invalid(
                        "adversarial method requires an 'adversarial' config block",
                    ))
                }
            }
        } else if self.adversarial.is_some() {
            return Err(Error::invalid(
                "'adversarial' config block supplied for a non-adversarial method",
            ));
        }
        if self.method.feat && self.data.frequencies.is_none() {
            return Err(Error::invalid(
                "feat method requires data.frequencies (a token frequency table)",
            ));
        }
        match self.method.base {
            BaseRegime::Msft => {
                if self.data.stage1_train.is_none() || self.data.stage1_dev.is_none() {
                    return Err(Error::invalid(
                        "msft requires data.stage1_train and data.stage1_dev",
                    ));
                }
            }
            BaseRegime::Mtl => {
                if self.data.partner_train.is_none() || self.data.partner_dev.is_none() {
                    return Err(Error::invalid(
                        "mtl requires data.partner_train and data.partner_dev",
                    ));
                }
            }
            BaseRegime::Single => {}
        }
        Ok(())
    }
}

/// The other subtask — stage-1/partner data belongs to it.
fn other_subtask(s: Subtask) -> Subtask {
    match s {
        Subtask::SingleWord => Subtask::Mwe,
        Subtask::Mwe => Subtask::SingleWord,
    }
}

/// One dev-evaluated epoch in the manifest's metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLogEntry {
    pub task: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: Option<MetricBlock>,
}

/// The run's reproducibility record: effective config, input digests
/// (taken before training), produced artifacts in creation order, and
/// the per-epoch metric log. Written when inputs are registered and
/// extended (append-only) as artifacts appear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, String>,
    pub artifacts: Vec<String>,
    pub epoch_log: Vec<EpochLogEntry>,
}

impl RunManifest {
    fn new(config: &RunConfig) -> RunManifest {
        RunManifest {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
            inputs: BTreeMap::new(),
            artifacts: Vec::new(),
            epoch_log: Vec::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunManifest> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        write_atomic(path.as_ref(), &bytes)
    }

    fn record_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }
}

/// How the best epoch was chosen, as recorded in `selection.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SelectionSummary {
    Whole {
        epoch: usize,
        dev_pearson: f64,
    },
    PerDomain {
        epochs: BTreeMap<Domain, usize>,
        dev_pearson: BTreeMap<Domain, f64>,
    },
}

/// What `run_train` leaves behind.
#[derive(Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub manifest_path: PathBuf,
    /// `best.ckpt.json`, or one per domain under per-domain selection.
    pub best_paths: Vec<PathBuf>,
    pub selection: SelectionSummary,
    /// Best whole-dev Pearson of the primary task, when defined.
    pub best_dev_pearson: Option<f64>,
}

struct LoadedData {
    train: Dataset,
    dev: Dataset,
    stage1: Option<(Dataset, Dataset)>,
    partner: Option<(Dataset, Dataset)>,
    feat: Option<FeatContext>,
}

fn load_run_data(cfg: &RunConfig, manifest: &mut RunManifest) -> Result<LoadedData> {
    let d = &cfg.data;
    let train = load_dataset(&d.train, cfg.subtask)?;
    manifest.record_input(&d.train)?;
    let dev = load_dataset(&d.dev, cfg.subtask)?;
    manifest.record_input(&d.dev)?;
    if let Some(test) = &d.test {
        manifest.record_input(test)?;
    }
    if train.is_empty() {
        return Err(Error::invalid(format!("{}: empty training dataset", d.train.display())));
    }

    let aux = other_subtask(cfg.subtask);
    let stage1 = match (&d.stage1_train, &d.stage1_dev) {
        (Some(t), Some(v)) => {
            let s1t = load_dataset(t, aux)?;
            manifest.record_input(t)?;
            let s1d = load_dataset(v, aux)?;
            manifest.record_input(v)?;
            Some((s1t, s1d))
        }
        _ => None,
    };
    let partner = match (&d.partner_train, &d.partner_dev) {
        (Some(t), Some(v)) => {
            let pt = load_dataset(t, aux)?;
            manifest.record_input(t)?;
            let pd = load_dataset(v, aux)?;
            manifest.record_input(v)?;
            Some((pt, pd))
        }
        _ => None,
    };

    let feat = match &d.frequencies {
        Some(freq_path) => {
            let table = FrequencyTable::load(freq_path)?;
            manifest.record_input(freq_path)?;
            if cfg.method.feat {
                Some(FeatContext::fit(table, &train)?)
            } else {
                None
            }
        }
        None => None,
    };
    Ok(LoadedData { train, dev, stage1, partner, feat })
}

fn checkpoint_of(
    cfg: &RunConfig,
    subtask: Subtask,
    model: &crate::model::RegressionModel,
    vocab: &Vocabulary,
    feat: &Option<FeatContext>,
) -> Checkpoint {
    Checkpoint::new(subtask, cfg.seed, model.clone(), vocab.clone(), feat.clone())
}

fn write_epoch_set(
    dir: &Path,
    rel_prefix: &str,
    cfg: &RunConfig,
    subtask: Subtask,
    set: &CheckpointSet,
    vocab: &Vocabulary,
    feat: &Option<FeatContext>,
    manifest: &mut RunManifest,
) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for rec in &set.records {
        let name = format!("epoch_{:02}.ckpt.json", rec.epoch);
        let path = dir.join(&name);
        checkpoint_of(cfg, subtask, &rec.model, vocab, feat).save(&path)?;
        manifest.artifacts.push(format!("{rel_prefix}{name}"));
        paths.push(path);
    }
    Ok(paths)
}

fn log_epochs(manifest: &mut RunManifest, task: &str, set: &CheckpointSet) {
    for rec in &set.records {
        manifest.epoch_log.push(EpochLogEntry {
            task: task.to_string(),
            epoch: rec.epoch,
            train_loss: rec.train_loss,
            dev: rec.dev.as_ref().map(|d| d.overall.clone()),
        });
    }
}

/// What one regime execution yields before any artifact is written.
enum RegimeOutput {
    Single(CheckpointSet),
    Msft(MsftOutcome),
    Mtl { primary: CheckpointSet, partner: CheckpointSet },
}

impl RegimeOutput {
    /// The checkpoint set selection operates on: the target task's.
    fn into_primary(self) -> CheckpointSet {
        match self {
            RegimeOutput::Single(set) => set,
            RegimeOutput::Msft(out) => out.stage2,
            RegimeOutput::Mtl { primary, .. } => primary,
        }
    }
}

/// Trains one run's regime with the given optimizer settings. Pure
/// compute — no files are written.
fn run_regime(
    cfg: &RunConfig,
    enc_cfg: &EncoderConfig,
    loaded: &LoadedData,
    vocab: &Vocabulary,
    tcfg: &TrainingConfig,
) -> Result<RegimeOutput> {
    let method = cfg.method.training_method();
    let adv = cfg.adversarial.as_ref();
    let ctx = TrainContext { vocab, feat: loaded.feat.as_ref() };
    match cfg.method.base {
        BaseRegime::Single => {
            let model = init_model(enc_cfg, cfg.method.feat, cfg.seed)?;
            let set = train(model, &loaded.train, &loaded.dev, tcfg, method, adv, &ctx, None)?;
            Ok(RegimeOutput::Single(set))
        }
        BaseRegime::Msft => {
            let (s1_train, s1_dev) = loaded.stage1.as_ref().expect("validated");
            let model = init_model(enc_cfg, cfg.method.feat, cfg.seed)?;
            let out = train_msft(
                model,
                s1_train,
                s1_dev,
                &loaded.train,
                &loaded.dev,
                tcfg,
                method,
                adv,
                &ctx,
                None,
            )?;
            Ok(RegimeOutput::Msft(out))
        }
        BaseRegime::Mtl => {
            let (p_train, p_dev) = loaded.partner.as_ref().expect("validated");
            let primary_id = cfg.subtask.to_string();
            let partner_id = other_subtask(cfg.subtask).to_string();
            let mtm = init_mtl(
                enc_cfg,
                cfg.method.feat,
                &[primary_id.clone(), partner_id.clone()],
                cfg.seed,
            )?;
            let tasks = BTreeMap::from([
                (primary_id.clone(), (loaded.train.clone(), loaded.dev.clone())),
                (partner_id.clone(), (p_train.clone(), p_dev.clone())),
            ]);
            let mut sets = train_mtl(mtm, &tasks, tcfg, adv, &ctx, None)?;
            let partner = sets.remove(&partner_id).expect("partner task trained");
            let primary = sets.remove(&primary_id).expect("primary task trained");
            Ok(RegimeOutput::Mtl { primary, partner })
        }
    }
}

/// Runs one configured training job into `run_dir` and returns the
/// selection outcome. The directory afterwards holds `config.json`,
/// `manifest.json`, every epoch checkpoint, `selection.json`, and the
/// best checkpoint(s) (plus `routing.json` under per-domain selection).
pub fn run_train(cfg: &RunConfig, run_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let manifest_path = run_dir.join("manifest.json");

    let mut manifest = RunManifest::new(cfg);
    let loaded = load_run_data(cfg, &mut manifest)?;

    let mut vocab_sources: Vec<&Dataset> = vec![&loaded.train];
    if let Some((s1t, _)) = &loaded.stage1 {
        vocab_sources.push(s1t);
    }
    if let Some((pt, _)) = &loaded.partner {
        vocab_sources.push(pt);
    }
    let vocab = build_vocab_multi(&vocab_sources, cfg.vocab_min_count)?;
    let enc_cfg = EncoderConfig::preset(&cfg.encoder, vocab.len(), cfg.max_len)?;

    cfg.save(run_dir.join("config.json"))?;
    manifest.artifacts.push("config.json".into());
    let vocab_path = run_dir.join("vocab.tsv");
    vocab.save(&vocab_path)?;
    manifest.artifacts.push("vocab.tsv".into());
    // inputs and config are on disk before any training happens
    manifest.save(&manifest_path)?;

    let mut tcfg = cfg.optimizer;
    tcfg.seed = cfg.seed;

    let primary: CheckpointSet = match run_regime(cfg, &enc_cfg, &loaded, &vocab, &tcfg)? {
        RegimeOutput::Single(set) => {
            log_epochs(&mut manifest, &cfg.subtask.to_string(), &set);
            write_epoch_set(
                &run_dir.join("epochs"),
                "epochs/",
                cfg,
                cfg.subtask,
                &set,
                &vocab,
                &loaded.feat,
                &mut manifest,
            )?;
            set
        }
        RegimeOutput::Msft(out) => {
            let s1_task = other_subtask(cfg.subtask).to_string();
            log_epochs(&mut manifest, &s1_task, &out.stage1);
            log_epochs(&mut manifest, &cfg.subtask.to_string(), &out.stage2);
            write_epoch_set(
                &run_dir.join("stage1"),
                "stage1/",
                cfg,
                other_subtask(cfg.subtask),
                &out.stage1,
                &vocab,
                &loaded.feat,
                &mut manifest,
            )?;
            write_epoch_set(
                &run_dir.join("epochs"),
                "epochs/",
                cfg,
                cfg.subtask,
                &out.stage2,
                &vocab,
                &loaded.feat,
                &mut manifest,
            )?;
            let handoff = serde_json::json!({
                "stage1_best_epoch": out.stage1_best_epoch,
                "stage1_best_digest": out.stage1_best_digest,
                "stage2_init_digest": out.stage2_init_digest,
            });
            write_atomic(
                run_dir.join("handoff.json"),
                &serde_json::to_vec_pretty(&handoff).expect("handoff serializes"),
            )?;
            manifest.artifacts.push("handoff.json".into());
            out.stage2
        }
        RegimeOutput::Mtl { primary, partner } => {
            log_epochs(&mut manifest, &cfg.subtask.to_string(), &primary);
            log_epochs(&mut manifest, &other_subtask(cfg.subtask).to_string(), &partner);
            write_epoch_set(
                &run_dir.join("epochs"),
                "epochs/",
                cfg,
                cfg.subtask,
                &primary,
                &vocab,
                &loaded.feat,
                &mut manifest,
            )?;
            write_epoch_set(
                &run_dir.join("partner"),
                "partner/",
                cfg,
                other_subtask(cfg.subtask),
                &partner,
                &vocab,
                &loaded.feat,
                &mut manifest,
            )?;
            primary
        }
    };

    let selection = select_best(&primary, cfg.per_domain_selection)?;
    let mut best_paths = Vec::new();
    let summary = match &selection {
        BestSelection::Whole { epoch } => {
            let rec = primary.snapshot(*epoch)?;
            let dev_pearson = rec.dev.as_ref().expect("selected epoch has metrics").overall.pearson;
            let path = run_dir.join("best.ckpt.json");
            checkpoint_of(cfg, cfg.subtask, &rec.model, &vocab, &loaded.feat).save(&path)?;
            manifest.artifacts.push("best.ckpt.json".into());
            best_paths.push(path);
            SelectionSummary::Whole { epoch: *epoch, dev_pearson }
        }
        BestSelection::PerDomain { epochs } => {
            let mut pearson = BTreeMap::new();
            let mut routes: BTreeMap<Domain, PathBuf> = BTreeMap::new();
            for (&domain, &epoch) in epochs {
                let rec = primary.snapshot(epoch)?;
                let r = rec
                    .dev
                    .as_ref()
                    .and_then(|d| d.per_domain.get(&domain))
                    .expect("selected epoch has domain metrics")
                    .pearson;
                pearson.insert(domain, r);
                let name = format!("best_{domain}.ckpt.json");
                let path = run_dir.join(&name);
                checkpoint_of(cfg, cfg.subtask, &rec.model, &vocab, &loaded.feat).save(&path)?;
                manifest.artifacts.push(name);
                routes.insert(domain, path.clone());
                best_paths.push(path);
            }
            let routing = EnsembleSpec::new(vec![MemberSource::Routed(routes)])?;
            routing.save(run_dir.join("routing.json"))?;
            manifest.artifacts.push("routing.json".into());
            SelectionSummary::PerDomain { epochs: epochs.clone(), dev_pearson: pearson }
        }
    };
    write_atomic(
        run_dir.join("selection.json"),
        &serde_json::to_vec_pretty(&summary).expect("selection serializes"),
    )?;
    manifest.artifacts.push("selection.json".into());
    manifest.save(&manifest_path)?;

    let best_dev_pearson = match &summary {
        SelectionSummary::Whole { dev_pearson, .. } => Some(*dev_pearson),
        SelectionSummary::PerDomain { .. } => None,
    };
    Ok(TrainOutcome {
        run_dir: run_dir.to_path_buf(),
        manifest_path,
        best_paths,
        selection: summary,
        best_dev_pearson,
    })
}

/// What `run_grid_search` leaves behind.
#[derive(Debug)]
pub struct GridSearchOutcome {
    pub grid_path: PathBuf,
    pub best_point: GridPoint,
    pub best_run: TrainOutcome,
}

/// Sweeps learning rate × batch size, one full training run per point
/// (same data, same seed), ranks points by their best whole-dev
/// Pearson, writes the trial table to `<out_dir>/grid.json`, and trains
/// the winning configuration into `<out_dir>/best_run`.
pub fn run_grid_search(
    cfg: &RunConfig,
    grid: &[GridPoint],
    out_dir: &Path,
) -> Result<GridSearchOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    // trial runs keep no artifacts, so input digests are discarded here
    let mut scratch = RunManifest::new(cfg);
    let loaded = load_run_data(cfg, &mut scratch)?;
    let mut vocab_sources: Vec<&Dataset> = vec![&loaded.train];
    if let Some((s1t, _)) = &loaded.stage1 {
        vocab_sources.push(s1t);
    }
    if let Some((pt, _)) = &loaded.partner {
        vocab_sources.push(pt);
    }
    let vocab = build_vocab_multi(&vocab_sources, cfg.vocab_min_count)?;
    let enc_cfg = EncoderConfig::preset(&cfg.encoder, vocab.len(), cfg.max_len)?;

    let mut base = cfg.optimizer;
    base.seed = cfg.seed;
    let outcome = grid_search(&base, grid, |tc| {
        run_regime(cfg, &enc_cfg, &loaded, &vocab, tc).map(RegimeOutput::into_primary)
    })?;

    let trials: Vec<serde_json::Value> = outcome
        .trials
        .iter()
        .map(|t| {
            serde_json::json!({
                "learning_rate": t.point.learning_rate,
                "batch_size": t.point.batch_size,
                "best_epoch": t.best_epoch,
                "dev_pearson": t.dev_pearson,
            })
        })
        .collect();
    let best_point = outcome.trials[outcome.best_index].point;
    let grid_json = serde_json::json!({
        "trials": trials,
        "best": {
            "index": outcome.best_index,
            "learning_rate": best_point.learning_rate,
            "batch_size": best_point.batch_size,
        },
    });
    let grid_path = out_dir.join("grid.json");
    write_atomic(&grid_path, &serde_json::to_vec_pretty(&grid_json).expect("grid serializes"))?;

    let mut best_cfg = cfg.clone();
    best_cfg.optimizer = outcome.best_config;
    let best_run = run_train(&best_cfg, &out_dir.join("best_run"))?;
    Ok(GridSearchOutcome { grid_path, best_point, best_run })
}

/// Resolves a prediction source: a checkpoint file, or a run directory
/// (its `routing.json` if present, otherwise its `best.ckpt.json`).
fn resolve_predictor(source: &Path) -> Result<(EnsembleSpec, Subtask)> {
    let spec = if source.is_dir() {
        let routing = source.join("routing.json");
        if routing.exists() {
            EnsembleSpec::load(&routing)?
        } else {
            EnsembleSpec::new(vec![MemberSource::Checkpoint(source.join("best.ckpt.json"))])?
        }
    } else {
        EnsembleSpec::new(vec![MemberSource::Checkpoint(source.to_path_buf())])?
    };
    // the first reachable checkpoint names the subtask
    let subtask = match &spec.members[0] {
        MemberSource::Checkpoint(path) => Checkpoint::load(path)?.subtask,
        MemberSource::Routed(routes) => {
            let first = routes.values().next().expect("validated non-empty routing");
            Checkpoint::load(first)?.subtask
        }
        MemberSource::Predictions(_) => unreachable!("predictor specs carry checkpoints"),
    };
    Ok((spec, subtask))
}

/// Predicts a dataset with a checkpoint or run directory and writes the
/// prediction CSV. Returns the row count.
pub fn run_predict(source: &Path, data_path: &Path, out_csv: &Path) -> Result<usize> {
    let (spec, subtask) = resolve_predictor(source)?;
    let data = load_dataset(data_path, subtask)?;
    let preds = if data.is_empty() {
        PredictionSet::new()
    } else {
        crate::ensemble::predict_ensemble(&spec, Some(&data))?
    };
    preds.save_csv(out_csv)?;
    Ok(preds.len())
}

/// Evaluates a prediction CSV against a gold TSV; optionally writes the
/// JSON report. Returns the report.
pub fn run_evaluate(
    preds_path: &Path,
    gold_path: &Path,
    subtask: Subtask,
    report_path: Option<&Path>,
) -> Result<EvaluationReport> {
    let preds = PredictionSet::load_csv(preds_path)?;
    let gold = load_dataset(gold_path, subtask)?;
    let report = evaluate(&preds, &gold)?;
    if let Some(path) = report_path {
        report.save_json(path)?;
    }
    Ok(report)
}

/// Combines ensemble members into one prediction CSV. `data_path` is
/// needed whenever the spec contains checkpoint or routed members.
pub fn run_ensemble(
    spec_path: &Path,
    data_path: Option<&Path>,
    subtask: Subtask,
    out_csv: &Path,
) -> Result<usize> {
    let spec = EnsembleSpec::load(spec_path)?;
    let data = match data_path {
        Some(p) => Some(load_dataset(p, subtask)?),
        None => None,
    };
    let preds = crate::ensemble::predict_ensemble(&spec, data.as_ref())?;
    preds.save_csv(out_csv)?;
    Ok(preds.len())
}

/// Writes scatter/histogram/per-domain analysis CSVs for a prediction
/// file against its gold labels.
pub fn run_analyze(
    preds_path: &Path,
    gold_path: &Path,
    subtask: Subtask,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let preds = PredictionSet::load_csv(preds_path)?;
    let gold = load_dataset(gold_path, subtask)?;
    export_analysis(&preds, &gold, out_dir)
}

/// Everything `make_synthetic` writes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticPaths {
    pub train: PathBuf,
    pub trial: PathBuf,
    pub test: PathBuf,
    pub frequencies: PathBuf,
}

const SYNTH_CONSONANTS: [char; 12] = ['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't'];
const SYNTH_VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];
const SYNTH_VOCAB: usize = 120;
/// Label noise around the frequency-derived complexity.
const SYNTH_NOISE_STD: f64 = 0.05;

/// The deterministic synthetic lexicon with Zipf-like counts: rank k
/// gets roughly 3000/(k+1)^1.1 occurrences.
fn synthetic_lexicon() -> (Vec<String>, Vec<u64>) {
    let mut words = Vec::with_capacity(SYNTH_VOCAB);
    for i in 0..SYNTH_VOCAB {
        // stride through the c-v-c-v cube; distinct indices give
        // distinct words because the enumeration is positional
        let idx = i * 29 + 7;
        let c1 = SYNTH_CONSONANTS[idx / (5 * 12 * 5) % 12];
        let v1 = SYNTH_VOWELS[idx / (12 * 5) % 5];
        let c2 = SYNTH_CONSONANTS[idx / 5 % 12];
        let v2 = SYNTH_VOWELS[idx % 5];
        words.push(format!("{c1}{v1}{c2}{v2}"));
    }
    let counts = (0..SYNTH_VOCAB)
        .map(|k| (3000.0 / ((k + 1) as f64).powf(1.1)).ceil() as u64)
        .collect();
    (words, counts)
}

/// Generates a synthetic corpus in the standard TSV layout whose gold
/// complexity equals 1 − normalized log-frequency of the target plus
/// Gaussian noise (σ = 0.05), clamped to [0,1]. Splits are size,
/// size/10 and size/10 rows with the three domains cycled so a size
/// divisible by three balances exactly. Byte-identical per seed.
pub fn make_synthetic(
    out_dir: &Path,
    seed: u64,
    size: usize,
    subtask: Subtask,
) -> Result<SyntheticPaths> {
    if size < 10 {
        return Err(Error::invalid("synthetic corpus size must be at least 10"));
    }
    let (words, counts) = synthetic_lexicon();
    let table = FrequencyTable::new(
        words
            .iter()
            .cloned()
            .zip(counts.iter().copied())
            .collect::<BTreeMap<String, u64>>(),
    );
    let lf: Vec<f64> = words.iter().map(|w| log_frequency(w, &table)).collect();
    let norm = fit_normalizer(&lf)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = WeightedIndex::new(&counts).expect("positive counts");
    let noise = Normal::new(0.0, SYNTH_NOISE_STD).expect("positive std");

    let mut gen_split = |name: &str, rows: usize| -> Result<Dataset> {
        let instances: Vec<Instance> = (0..rows)
            .map(|i| {
                let len: usize = rng.gen_range(6..=12);
                let mut sent_words: Vec<&str> =
                    (0..len).map(|_| words[weights.sample(&mut rng)].as_str()).collect();
                // the annotated target is drawn uniformly over the
                // lexicon (not frequency-weighted) and spliced into the
                // sentence, mirroring how complexity datasets sample
                // targets across frequency bands
                let target = match subtask {
                    Subtask::SingleWord => {
                        let at = rng.gen_range(0..sent_words.len());
                        sent_words[at] = words[rng.gen_range(0..words.len())].as_str();
                        sent_words[at].to_string()
                    }
                    Subtask::Mwe => {
                        let at = rng.gen_range(0..sent_words.len() - 1);
                        sent_words[at] = words[rng.gen_range(0..words.len())].as_str();
                        sent_words[at + 1] = words[rng.gen_range(0..words.len())].as_str();
                        format!("{} {}", sent_words[at], sent_words[at + 1])
                    }
                };
                let freq_score = apply_normalizer(&norm, log_frequency(&target, &table));
                let gold = (1.0 - freq_score + noise.sample(&mut rng)).clamp(0.0, 1.0);
                Instance {
                    id: format!("{name}-{i:04}"),
                    subtask,
                    domain: Domain::ALL[i % 3],
                    sentence: sent_words.join(" "),
                    target,
                    gold: Some(gold),
                }
            })
            .collect();
        Dataset::new(subtask, instances)
    };

    let train = gen_split("train", size)?;
    let trial = gen_split("trial", size / 10)?;
    let test = gen_split("test", size / 10)?;

    let paths = SyntheticPaths {
        train: out_dir.join("train.tsv"),
        trial: out_dir.join("trial.tsv"),
        test: out_dir.join("test.tsv"),
        frequencies: out_dir.join("freq.tsv"),
    };
    save_dataset(&train, &paths.train)?;
    save_dataset(&trial, &paths.trial)?;
    save_dataset(&test, &paths.test)?;
    table.save(&paths.frequencies)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_atomic_creates_parents_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b/c.txt");
        write_atomic(&path, b"payload").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"payload");
        assert!(!path.with_file_name("c.txt.tmp").exists());
    }

    #[test]
    fn write_atomic_overwrites() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
    }

    #[test]
    fn sha256_matches_known_vector() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.txt");
        fs::write(&path, b"abc").unwrap();
        assert_eq!(
            sha256_file(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn method_strings_parse_and_canonicalize() {
        let cases = [
            ("standard", BaseRegime::Single, false, false),
            ("feat", BaseRegime::Single, true, false),
            ("adv", BaseRegime::Single, false, true),
            ("msft", BaseRegime::Msft, false, false),
            ("mtl", BaseRegime::Mtl, false, false),
            ("adv+msft", BaseRegime::Msft, false, true),
            ("adv&msft", BaseRegime::Msft, false, true),
            ("msft+adv", BaseRegime::Msft, false, true),
            ("feat+adv+mtl", BaseRegime::Mtl, true, true),
            ("ADV", BaseRegime::Single, false, true),
        ];
        for (s, base, feat, adv) in cases {
            let m: MethodSpec = s.parse().unwrap();
            assert_eq!(m.base, base, "{s}");
            assert_eq!(m.feat, feat, "{s}");
            assert_eq!(m.adv, adv, "{s}");
            // canonical form re-parses to itself
            let canon = m.to_string();
            let again: MethodSpec = canon.parse().unwrap();
            assert_eq!(m, again);
        }
        assert_eq!("adv+msft".parse::<MethodSpec>().unwrap().to_string(), "adv+msft");
        assert_eq!(MethodSpec::standard().to_string(), "standard");

        for bad in ["", "standard+adv", "msft+mtl", "fancy", "adv+adv"] {
            assert!(bad.parse::<MethodSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn method_spec_serializes_as_string() {
        let m: MethodSpec = "feat+msft".parse().unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, "\"feat+msft\"");
        let back: MethodSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
        assert!(serde_json::from_str::<MethodSpec>("\"msft+mtl\"").is_err());
    }

    #[test]
    fn synthetic_generator_is_deterministic_and_balanced() {
        let dir = tempfile::tempdir().unwrap();
        let a = make_synthetic(&dir.path().join("a"), 1, 600, Subtask::SingleWord).unwrap();
        let b = make_synthetic(&dir.path().join("b"), 1, 600, Subtask::SingleWord).unwrap();
        for (pa, pb) in [
            (&a.train, &b.train),
            (&a.trial, &b.trial),
            (&a.test, &b.test),
            (&a.frequencies, &b.frequencies),
        ] {
            assert_eq!(fs::read(pa).unwrap(), fs::read(pb).unwrap());
        }
        let train = load_dataset(&a.train, Subtask::SingleWord).unwrap();
        let trial = load_dataset(&a.trial, Subtask::SingleWord).unwrap();
        let test = load_dataset(&a.test, Subtask::SingleWord).unwrap();
        assert_eq!((train.len(), trial.len(), test.len()), (600, 60, 60));
        let parts = crate::corpus::partition_by_domain(&train);
        for domain in Domain::ALL {
            assert_eq!(parts[&domain].len(), 200, "{domain}");
        }
        // different seed, different bytes
        let c = make_synthetic(&dir.path().join("c"), 2, 600, Subtask::SingleWord).unwrap();
        assert_ne!(fs::read(&a.train).unwrap(), fs::read(&c.train).unwrap());
        // labels anti-correlate with target frequency by construction
        let table = FrequencyTable::load(&a.frequencies).unwrap();
        let lf: Vec<f64> =
            train.instances.iter().map(|i| log_frequency(&i.target, &table)).collect();
        let gold: Vec<f64> = train.instances.iter().map(|i| i.gold.unwrap()).collect();
        let r = crate::evaluation::pearson(&lf, &gold).unwrap();
        assert!(r < -0.9, "expected strong anti-correlation, got {r}");
    }

    #[test]
    fn synthetic_generator_rejects_tiny_sizes_and_supports_mwe() {
        let dir = tempfile::tempdir().unwrap();
        assert!(make_synthetic(dir.path(), 1, 5, Subtask::SingleWord).is_err());
        let p = make_synthetic(&dir.path().join("mwe"), 3, 30, Subtask::Mwe).unwrap();
        let data = load_dataset(&p.train, Subtask::Mwe).unwrap();
        assert_eq!(data.len(), 30);
        assert!(data.instances.iter().all(|i| i.target.split(' ').count() == 2));
    }

    fn base_config(data_dir: &Path) -> RunConfig {
        RunConfig {
            subtask: Subtask::SingleWord,
            method: MethodSpec::standard(),
            encoder: "toy".into(),
            max_len: 64,
            vocab_min_count: 1,
            seed: 1,
            per_domain_selection: false,
            optimizer: TrainingConfig {
                batch_size: 8,
                max_epochs: 2,
                ..TrainingConfig::default()
            },
            adversarial: None,
            data: DataConfig {
                train: data_dir.join("train.tsv"),
                dev: data_dir.join("trial.tsv"),
                test: Some(data_dir.join("test.tsv")),
                frequencies: Some(data_dir.join("freq.tsv")),
                stage1_train: None,
                stage1_dev: None,
                partner_train: None,
                partner_dev: None,
            },
        }
    }

    #[test]
    fn config_validation_catches_incoherent_methods() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base_config(dir.path());
        cfg.method = "adv".parse().unwrap();
        assert!(cfg.validate().is_err(), "adv without adversarial block");
        cfg.adversarial = Some(AdversarialConfig::default());
        assert!(cfg.validate().is_ok());
        cfg.method = MethodSpec::standard();
        assert!(cfg.validate().is_err(), "adversarial block without adv method");
        cfg.adversarial = None;
        cfg.method = "msft".parse().unwrap();
        assert!(cfg.validate().is_err(), "msft without stage-1 data");
        cfg.data.stage1_train = Some(dir.path().join("s1.tsv"));
        cfg.data.stage1_dev = Some(dir.path().join("s1d.tsv"));
        assert!(cfg.validate().is_ok());
        cfg.method = "feat".parse().unwrap();
        cfg.data.frequencies = None;
        assert!(cfg.validate().is_err(), "feat without frequencies");
        cfg.method = MethodSpec::standard();
        cfg.encoder = "enormous".into();
        assert!(cfg.validate().is_err(), "unknown encoder preset");
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = base_config(dir.path());
        let path = dir.path().join("cfg.json");
        cfg.save(&path).unwrap();
        let loaded = RunConfig::load(&path).unwrap();
        assert_eq!(cfg, loaded);

        fs::write(dir.path().join("bad.json"), br#"{"subtask":"single_word","method":"standard","data":{"train":"a","dev":"b"},"learning_rate":5}"#).unwrap();
        assert!(RunConfig::load(dir.path().join("bad.json")).is_err());
    }

    #[test]
    fn train_run_writes_complete_directory() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        make_synthetic(&data_dir, 5, 60, Subtask::SingleWord).unwrap();
        let cfg = base_config(&data_dir);
        let run_dir = dir.path().join("run");
        let out = run_train(&cfg, &run_dir).unwrap();

        for name in ["config.json", "manifest.json", "vocab.tsv", "selection.json", "best.ckpt.json"] {
            assert!(run_dir.join(name).exists(), "{name}");
        }
        assert!(run_dir.join("epochs/epoch_01.ckpt.json").exists());
        assert!(run_dir.join("epochs/epoch_02.ckpt.json").exists());

        let manifest = RunManifest::load(&out.manifest_path).unwrap();
        assert_eq!(manifest.seed, 1);
        assert_eq!(manifest.epoch_log.len(), 2);
        // train, dev, test and frequency table all digested
        assert_eq!(manifest.inputs.len(), 4);
        for artifact in &manifest.artifacts {
            assert!(run_dir.join(artifact).exists(), "{artifact}");
        }
        match out.selection {
            SelectionSummary::Whole { epoch, .. } => assert!(epoch >= 1 && epoch <= 2),
            SelectionSummary::PerDomain { .. } => panic!("whole-dev selection expected"),
        }

        // the best checkpoint predicts the test set end to end
        let preds_path = dir.path().join("preds.csv");
        let n = run_predict(&run_dir, &data_dir.join("test.tsv"), &preds_path).unwrap();
        assert_eq!(n, 6);
        let report =
            run_evaluate(&preds_path, &data_dir.join("test.tsv"), Subtask::SingleWord, None)
                .unwrap();
        assert_eq!(report.overall.count, 6);
    }

    #[test]
    fn identical_runs_reproduce_identical_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        make_synthetic(&data_dir, 9, 40, Subtask::SingleWord).unwrap();
        let cfg = base_config(&data_dir);
        let out1 = run_train(&cfg, &dir.path().join("r1")).unwrap();
        let out2 = run_train(&cfg, &dir.path().join("r2")).unwrap();
        let b1 = fs::read(&out1.best_paths[0]).unwrap();
        let b2 = fs::read(&out2.best_paths[0]).unwrap();
        assert_eq!(b1, b2);
        let p1 = dir.path().join("p1.csv");
        let p2 = dir.path().join("p2.csv");
        run_predict(&out1.run_dir, &data_dir.join("test.tsv"), &p1).unwrap();
        run_predict(&out2.run_dir, &data_dir.join("test.tsv"), &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn msft_run_produces_stage_artifacts_and_handoff() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("mwe");
        make_synthetic(&data_dir, 6, 40, Subtask::Mwe).unwrap();
        let s1_dir = dir.path().join("sw");
        make_synthetic(&s1_dir, 7, 40, Subtask::SingleWord).unwrap();

        let mut cfg = base_config(&data_dir);
        cfg.subtask = Subtask::Mwe;
        cfg.method = "msft".parse().unwrap();
        cfg.data.frequencies = None;
        cfg.data.stage1_train = Some(s1_dir.join("train.tsv"));
        cfg.data.stage1_dev = Some(s1_dir.join("trial.tsv"));
        let run_dir = dir.path().join("run");
        run_train(&cfg, &run_dir).unwrap();

        assert!(run_dir.join("stage1/epoch_01.ckpt.json").exists());
        assert!(run_dir.join("epochs/epoch_01.ckpt.json").exists());
        let handoff: serde_json::Value =
            serde_json::from_slice(&fs::read(run_dir.join("handoff.json")).unwrap()).unwrap();
        assert_eq!(handoff["stage1_best_digest"], handoff["stage2_init_digest"]);

        let best = Checkpoint::load(run_dir.join("best.ckpt.json")).unwrap();
        assert_eq!(best.subtask, Subtask::Mwe);
        let stage1 = Checkpoint::load(run_dir.join("stage1/epoch_01.ckpt.json")).unwrap();
        assert_eq!(stage1.subtask, Subtask::SingleWord);
    }

    #[test]
    fn mtl_run_trains_both_heads() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("sw");
        make_synthetic(&data_dir, 8, 40, Subtask::SingleWord).unwrap();
        let partner_dir = dir.path().join("mwe");
        make_synthetic(&partner_dir, 9, 40, Subtask::Mwe).unwrap();

        let mut cfg = base_config(&data_dir);
        cfg.method = "mtl".parse().unwrap();
        cfg.data.frequencies = None;
        cfg.data.partner_train = Some(partner_dir.join("train.tsv"));
        cfg.data.partner_dev = Some(partner_dir.join("trial.tsv"));
        let run_dir = dir.path().join("run");
        run_train(&cfg, &run_dir).unwrap();

        assert!(run_dir.join("epochs/epoch_02.ckpt.json").exists());
        assert!(run_dir.join("partner/epoch_02.ckpt.json").exists());
        let manifest = RunManifest::load(run_dir.join("manifest.json")).unwrap();
        let tasks: std::collections::BTreeSet<&str> =
            manifest.epoch_log.iter().map(|e| e.task.as_str()).collect();
        assert_eq!(tasks.into_iter().collect::<Vec<_>>(), vec!["mwe", "single_word"]);
    }

    #[test]
    fn per_domain_selection_writes_routing() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        make_synthetic(&data_dir, 11, 90, Subtask::SingleWord).unwrap();
        let mut cfg = base_config(&data_dir);
        cfg.per_domain_selection = true;
        let run_dir = dir.path().join("run");
        let out = run_train(&cfg, &run_dir).unwrap();
        assert_eq!(out.best_paths.len(), 3);
        for domain in Domain::ALL {
            assert!(run_dir.join(format!("best_{domain}.ckpt.json")).exists());
        }
        assert!(run_dir.join("routing.json").exists());
        // routed prediction covers the whole test set
        let preds_path = dir.path().join("routed.csv");
        let n = run_predict(&run_dir, &data_dir.join("test.tsv"), &preds_path).unwrap();
        assert_eq!(n, 9);
    }

    #[test]
    fn grid_search_ranks_points_and_trains_the_winner() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        make_synthetic(&data_dir, 17, 40, Subtask::SingleWord).unwrap();
        let cfg = base_config(&data_dir);
        let grid = [
            GridPoint { learning_rate: 1e-3, batch_size: 8 },
            GridPoint { learning_rate: 1e-7, batch_size: 8 },
        ];
        let out_dir = dir.path().join("sweep");
        let out = run_grid_search(&cfg, &grid, &out_dir).unwrap();

        let table: serde_json::Value =
            serde_json::from_slice(&fs::read(&out.grid_path).unwrap()).unwrap();
        assert_eq!(table["trials"].as_array().unwrap().len(), 2);
        let r0 = table["trials"][0]["dev_pearson"].as_f64().unwrap();
        let r1 = table["trials"][1]["dev_pearson"].as_f64().unwrap();
        let argmax = if r0 >= r1 { 0 } else { 1 };
        assert_eq!(table["best"]["index"], argmax);
        assert_eq!(out.best_point.learning_rate, grid[argmax].learning_rate);
        assert!(out_dir.join("best_run/best.ckpt.json").exists());
        // the winning run trains with the winning optimizer settings
        let best_cfg = RunConfig::load(out_dir.join("best_run/config.json")).unwrap();
        assert_eq!(best_cfg.optimizer.learning_rate, grid[argmax].learning_rate);
        assert_eq!(best_cfg.optimizer.batch_size, 8);
    }

    #[test]
    fn predict_empty_dataset_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        make_synthetic(&data_dir, 13, 30, Subtask::SingleWord).unwrap();
        let cfg = base_config(&data_dir);
        let run_dir = dir.path().join("run");
        run_train(&cfg, &run_dir).unwrap();

        let empty = dir.path().join("empty.tsv");
        fs::write(&empty, "id\tcorpus\tsentence\ttoken\tcomplexity\n").unwrap();
        let out_csv = dir.path().join("empty.csv");
        let n = run_predict(&run_dir, &empty, &out_csv).unwrap();
        assert_eq!(n, 0);
        assert_eq!(fs::read_to_string(&out_csv).unwrap(), "id,prediction\n");

        // a missing checkpoint names the path
        let missing = dir.path().join("nowhere.ckpt.json");
        let err = run_predict(&missing, &data_dir.join("test.tsv"), &out_csv)
            .unwrap_err()
            .to_string();
        assert!(err.contains("nowhere.ckpt.json"), "{err}");
    }
}
