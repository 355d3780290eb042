//! Run orchestration: manifest ingestion, a bounded worker pool over
//! instances, per-instance persistence, evaluation, reporting and offline
//! analysis.
//!
//! Run directory layout:
//!
//! ```text
//! <out>/run.json                  config, prices, timestamps
//! <out>/results.jsonl             one metrics record per instance
//! <out>/<id>/trajectory.jsonl
//! <out>/<id>/result.json          metrics, reports, patch and verdict
//! <out>/<id>/workspace/
//! ```

mod analyze;

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analyze::{aligned_windows, analyze, analyze_transcripts, collect_trajectory_files, AnalysisReport};

use crate::agent::{run_instance_at, AgentConfig, AgentError};
use crate::backend::{
    BackendError, ErrorPattern, ModelBackend, RemoteBackend, RemoteConfig, ScriptedPolicy, ScriptedPrm,
};
use crate::env::{evaluate_patch, load_manifest, AcceptanceVerdict, EnvError, Instance, Patch};
use crate::metrics::{aggregate, render_report, InstanceMetrics, MetricsError, PriceTable, RunMetrics};
use crate::prm::{GuidanceReport, PrmError, PrmVariant, Supervisor, SupervisorConfig, Taxonomy, VariantName};
use crate::transcript::{load_file, persist_file, StoreError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prm(#[from] PrmError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{}: {source}", path.display())]
    Store { path: PathBuf, source: StoreError },
    #[error("{}: {reason}", path.display())]
    Load { path: PathBuf, reason: String },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io { path: path.to_owned(), source }
    }

    /// Whether the error stems from bad user input rather than a runtime
    /// failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            HarnessError::Usage(_) | HarnessError::Prm(_) | HarnessError::Agent(_) | HarnessError::Env(EnvError::Manifest(_))
        )
    }
}

/// A backend named on the command line.
///
/// `scripted:<pattern>` selects a scripted policy, `scripted` (or
/// `scripted-prm`) the rule-based PRM; anything else is a remote model id.
/// The display form equals the backend's model id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    ScriptedPolicy(ErrorPattern),
    ScriptedPrm,
    Remote(String),
}

impl FromStr for BackendSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err("empty model spec".into());
        }
        if s == "scripted" || s == "scripted-prm" {
            return Ok(BackendSpec::ScriptedPrm);
        }
        if let Some(pattern) = s.strip_prefix("scripted:") {
            return pattern.parse().map(BackendSpec::ScriptedPolicy);
        }
        Ok(BackendSpec::Remote(s.to_owned()))
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::ScriptedPolicy(p) => write!(f, "scripted:{p}"),
            BackendSpec::ScriptedPrm => f.write_str("scripted-prm"),
            BackendSpec::Remote(m) => f.write_str(m),
        }
    }
}

impl Serialize for BackendSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BackendSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisorSpec {
    pub variant: VariantName,
    pub interval: usize,
    pub window: usize,
    pub prm: BackendSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifest_path: PathBuf,
    pub out_dir: PathBuf,
    pub policy: BackendSpec,
    pub supervisor: Option<SupervisorSpec>,
    pub agent: AgentConfig,
    pub parallelism: usize,
    pub seed: u64,
    #[serde(default)]
    pub resume: bool,
    /// Base URL for remote models.
    pub api_base: String,
    pub api_key_env: Option<String>,
    pub taxonomy_path: Option<PathBuf>,
}

pub const DEFAULT_API_BASE: &str = "http://localhost:8000/v1";

impl RunConfig {
    pub fn new(manifest_path: impl Into<PathBuf>, out_dir: impl Into<PathBuf>, policy: BackendSpec) -> Self {
        RunConfig {
            manifest_path: manifest_path.into(),
            out_dir: out_dir.into(),
            policy,
            supervisor: None,
            agent: AgentConfig::default(),
            parallelism: 4,
            seed: 0,
            resume: false,
            api_base: DEFAULT_API_BASE.to_owned(),
            api_key_env: None,
            taxonomy_path: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.agent.validate()?;
        if self.parallelism == 0 {
            return Err(HarnessError::Usage("parallelism must be at least 1".into()));
        }
        if matches!(self.policy, BackendSpec::ScriptedPrm) {
            return Err(HarnessError::Usage("the scripted PRM cannot act as a policy; use scripted:<pattern>".into()));
        }
        if let Some(sup) = &self.supervisor {
            if sup.interval == 0 || sup.window == 0 {
                return Err(HarnessError::Usage("--interval and --window must be at least 1".into()));
            }
            if matches!(sup.prm, BackendSpec::ScriptedPolicy(_)) {
                return Err(HarnessError::Usage("a scripted policy cannot act as the PRM; use scripted".into()));
            }
        }
        Ok(())
    }
}

/// What `result.json` holds: the metrics row plus everything needed to
/// re-evaluate and inspect the instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    #[serde(flatten)]
    pub metrics: InstanceMetrics,
    pub supervision_attempts: usize,
    #[serde(default)]
    pub guidance_reports: Vec<GuidanceReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<AcceptanceVerdict>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
    /// Rows in manifest order, including skipped instances.
    pub results: Vec<InstanceMetrics>,
}

impl RunSummary {
    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| r.error.is_some()).count()
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    config: &'a RunConfig,
    prices: &'a PriceTable,
    instances: usize,
    started_at_unix_ms: u128,
    finished_at_unix_ms: Option<u128>,
}

/// Directory name for an instance id.
pub fn instance_dir_name(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' }).collect()
}

fn instance_dir(out: &Path, id: &str) -> PathBuf {
    out.join(instance_dir_name(id))
}

/// Writes via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| HarnessError::io(path, e))
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

fn build_backend(spec: &BackendSpec, config: &RunConfig, instances: &[Instance], taxonomy: &Taxonomy) -> Result<Arc<dyn ModelBackend>, HarnessError> {
    Ok(match spec {
        BackendSpec::ScriptedPolicy(pattern) => {
            Arc::new(ScriptedPolicy::new(*pattern, instances, config.seed)?.with_taxonomy(taxonomy.clone()))
        }
        BackendSpec::ScriptedPrm => Arc::new(ScriptedPrm::new(taxonomy.clone())),
        BackendSpec::Remote(model) => {
            let mut rc = RemoteConfig::new(config.api_base.clone(), model.clone());
            rc.api_key_env = config.api_key_env.clone();
            Arc::new(RemoteBackend::new(rc)?)
        }
    })
}

fn load_taxonomy(config: &RunConfig) -> Result<Taxonomy, HarnessError> {
    Ok(match &config.taxonomy_path {
        Some(p) => Taxonomy::load(p)?,
        None => Taxonomy::default(),
    })
}

/// Executes every instance of the manifest (skipping finished ones when
/// resuming) and writes the run directory.
pub fn run(config: &RunConfig, prices: &PriceTable) -> Result<RunSummary, HarnessError> {
    config.validate()?;
    let instances = load_manifest(&config.manifest_path, config.agent.shell)?;
    let mut names = std::collections::HashSet::new();
    for inst in &instances {
        if !names.insert(instance_dir_name(&inst.id)) {
            return Err(HarnessError::Usage(format!("instance id {:?} collides with another after sanitizing", inst.id)));
        }
    }
    let taxonomy = load_taxonomy(config)?;
    let policy = build_backend(&config.policy, config, &instances, &taxonomy)?;
    let supervisor = match &config.supervisor {
        Some(spec) => {
            let backend = build_backend(&spec.prm, config, &instances, &taxonomy)?;
            let mut sc = SupervisorConfig::new(PrmVariant::preset(spec.variant));
            sc.interval = spec.interval;
            sc.window = spec.window;
            sc.params = config.agent.sampling();
            Some(Supervisor::new(sc, Arc::new(taxonomy.clone()), backend)?)
        }
        None => None,
    };

    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let started = now_ms();
    let write_manifest = |finished: Option<u128>| {
        let manifest = RunManifest {
            config,
            prices,
            instances: instances.len(),
            started_at_unix_ms: started,
            finished_at_unix_ms: finished,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("run manifest serializes") + "\n";
        write_atomic(&out.join("run.json"), text.as_bytes())
    };
    write_manifest(None)?;

    let (skipped, pending): (Vec<&Instance>, Vec<&Instance>) =
        instances.iter().partition(|inst| config.resume && read_record(&instance_dir(out, &inst.id)).is_ok());
    log::info!("{} instances to run, {} already complete", pending.len(), skipped.len());

    let next = AtomicUsize::new(0);
    let errors = Mutex::new(Vec::new());
    let workers = config.parallelism.min(pending.len()).max(1);
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(inst) = pending.get(i) else { break };
                if let Err(e) = run_one(inst, config, policy.as_ref(), supervisor.as_ref()) {
                    log::error!("{}: {e}", inst.id);
                    errors.lock().expect("error list lock").push(e);
                }
            });
        }
    });
    if let Some(e) = errors.into_inner().expect("error list lock").into_iter().next() {
        return Err(e);
    }

    let results = collect_results(out, &instances)?;
    write_results(out, &results)?;
    write_manifest(Some(now_ms()))?;
    Ok(RunSummary {
        out_dir: out.clone(),
        executed: pending.iter().map(|i| i.id.clone()).collect(),
        skipped: skipped.iter().map(|i| i.id.clone()).collect(),
        results,
    })
}

fn run_one(
    inst: &Instance,
    config: &RunConfig,
    policy: &dyn ModelBackend,
    supervisor: Option<&Supervisor>,
) -> Result<(), HarnessError> {
    let dir = instance_dir(&config.out_dir, &inst.id);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let supervision = supervisor.map(|s| (s.config().variant, s.model_id().to_owned()));
    let sup_ref = supervision.as_ref().map(|(v, m)| (v, m.as_str()));
    log::info!("{}: running", inst.id);
    let record = match run_instance_at(inst, &dir.join("workspace"), policy, supervisor, &config.agent) {
        Ok(result) => {
            let path = dir.join("trajectory.jsonl");
            persist_file(&result.transcript, &path).map_err(|source| HarnessError::Store { path, source })?;
            InstanceRecord {
                metrics: InstanceMetrics::from_trajectory(inst, &result, policy.model_id(), sup_ref),
                supervision_attempts: result.supervision_attempts,
                guidance_reports: result.guidance_reports,
                patch: result.patch.map(|p| p.unified_diff),
                verdict: result.verdict,
            }
        }
        Err(e) => InstanceRecord {
            metrics: InstanceMetrics::failed(inst, policy.model_id(), sup_ref, format!("workspace setup failed: {e}")),
            supervision_attempts: 0,
            guidance_reports: Vec::new(),
            patch: None,
            verdict: None,
        },
    };
    log::info!(
        "{}: {:?} after {} steps, resolved={}",
        inst.id,
        record.metrics.outcome,
        record.metrics.steps,
        record.metrics.resolved
    );
    write_record(&dir, &record)
}

fn write_record(dir: &Path, record: &InstanceRecord) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(record).expect("record serializes") + "\n";
    write_atomic(&dir.join("result.json"), text.as_bytes())
}

fn read_record(dir: &Path) -> Result<InstanceRecord, HarnessError> {
    let path = dir.join("result.json");
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Load { path, reason: e.to_string() })
}

fn collect_results(out: &Path, instances: &[Instance]) -> Result<Vec<InstanceMetrics>, HarnessError> {
    instances.iter().map(|inst| read_record(&instance_dir(out, &inst.id)).map(|r| r.metrics)).collect()
}

fn write_results(out: &Path, results: &[InstanceMetrics]) -> Result<(), HarnessError> {
    let mut text = String::new();
    for r in results {
        text.push_str(&serde_json::to_string(r).expect("metrics serialize"));
        text.push('\n');
    }
    write_atomic(&out.join("results.jsonl"), text.as_bytes())
}

#[derive(Deserialize)]
struct StoredManifest {
    config: RunConfig,
}

/// Re-applies every produced patch in a fresh workspace and rewrites the
/// per-instance records and `results.jsonl`.
pub fn evaluate(run_dir: &Path) -> Result<Vec<InstanceMetrics>, HarnessError> {
    let manifest_path = run_dir.join("run.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| HarnessError::io(&manifest_path, e))?;
    let stored: StoredManifest =
        serde_json::from_str(&text).map_err(|e| HarnessError::Load { path: manifest_path.clone(), reason: e.to_string() })?;
    let config = stored.config;
    let instances = load_manifest(&config.manifest_path, config.agent.shell)?;
    let policy_model = config.policy.to_string();
    let mut results = Vec::with_capacity(instances.len());
    for inst in &instances {
        let dir = instance_dir(run_dir, &inst.id);
        let variant = config.supervisor.as_ref().map(|s| PrmVariant::preset(s.variant));
        let prm_model = config.supervisor.as_ref().map(|s| s.prm.to_string());
        let sup_ref = variant.as_ref().zip(prm_model.as_deref());
        let trajectory = dir.join("trajectory.jsonl");
        let transcript = match load_file(&trajectory) {
            Ok(t) => t,
            Err(e) => {
                let row = InstanceMetrics::failed(inst, &policy_model, sup_ref, format!("missing trajectory: {e}"));
                results.push(row);
                continue;
            }
        };
        let mut record = match read_record(&dir) {
            Ok(r) => r,
            Err(e) => {
                results.push(InstanceMetrics::failed(inst, &policy_model, sup_ref, format!("missing result record: {e}")));
                continue;
            }
        };
        let outcome = transcript.outcome().expect("loaded transcripts carry an outcome");
        record.metrics.outcome = outcome;
        record.metrics.steps = transcript.len();
        match (&record.patch, outcome.has_patch()) {
            (Some(diff), true) => {
                let verdict = match Patch::from_diff(diff.as_str()) {
                    Ok(patch) => {
                        record.metrics.patch_generated = patch.nonempty;
                        evaluate_patch(inst, &patch, config.agent.shell)?
                    }
                    Err(e) => AcceptanceVerdict { accepted: false, per_test: Default::default(), apply_error: Some(e.to_string()) },
                };
                record.metrics.resolved = verdict.accepted;
                record.verdict = Some(verdict);
            }
            _ => {
                record.metrics.resolved = false;
                record.metrics.patch_generated = false;
                record.verdict = None;
            }
        }
        write_record(&dir, &record)?;
        results.push(record.metrics);
    }
    write_results(run_dir, &results)?;
    Ok(results)
}

/// Reads a `results.jsonl` file.
pub fn load_results(path: &Path) -> Result<Vec<InstanceMetrics>, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HarnessError::Load { path: path.to_owned(), reason: format!("line {}: {e}", i + 1) })
        })
        .collect()
}

/// Aggregates a results file (and optional baseline) into a table.
pub fn report(results: &Path, baseline: Option<&Path>, prices: &PriceTable) -> Result<(String, RunMetrics), HarnessError> {
    let metrics = aggregate(&load_results(results)?, prices)?;
    let base = match baseline {
        Some(p) => Some(aggregate(&load_results(p)?, prices)?),
        None => None,
    };
    Ok((render_report(&metrics, base.as_ref()), metrics))
}
