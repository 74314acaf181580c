//! Experiment configuration and the matrix runner.
//!
//! Run directory layout:
//!
//! ```text
//! <out>/config.toml                      echo of the resolved configuration
//! <out>/<experiment>/seed-<n>/memory-before.json
//! <out>/<experiment>/seed-<n>/memory-after.json
//! <out>/<experiment>/seed-<n>/sessions.jsonl
//! <out>/<experiment>/seed-<n>/metrics.json
//! <out>/report.json, <out>/report.txt
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::cases::load_cases;
use super::lint::{is_repetitive, repetition_lint, REPETITION_THRESHOLD};
use super::metrics::{aggregate, compute_accuracy, AggregateMetrics, MetricsReport};
use super::report::emit_report;
use crate::agents::{AgentEnv, GenerationSettings, PsychiatristProfile};
use crate::backend::{build_backend, Backend, BackendConfig, BackendKind, TemplateSet};
use crate::domain::{GroundTruth, Ontology, PatientCase};
use crate::error::{Error, Result};
use crate::memory::{MemoryLayer, MemoryStore};
use crate::session::{
    run_split, write_session_log, DialogueMode, SessionConfig, SessionEnv, Setting,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    OriginalDialogue,
    SimulatedDialogue,
}

impl Scenario {
    pub fn mode(self) -> DialogueMode {
        match self {
            Scenario::OriginalDialogue => DialogueMode::Replay,
            Scenario::SimulatedDialogue => DialogueMode::Simulated,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Scenario::OriginalDialogue => "od",
            Scenario::SimulatedDialogue => "sd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryVariant {
    None,
    #[serde(alias = "emr_only")]
    Emr,
    #[serde(alias = "skills_only")]
    Skills,
    Both,
}

impl MemoryVariant {
    pub const ALL: [MemoryVariant; 4] = [
        MemoryVariant::None,
        MemoryVariant::Emr,
        MemoryVariant::Skills,
        MemoryVariant::Both,
    ];

    pub fn layers(self) -> BTreeSet<MemoryLayer> {
        match self {
            MemoryVariant::None => BTreeSet::new(),
            MemoryVariant::Emr => [MemoryLayer::ElectronicMedicalRecord].into(),
            MemoryVariant::Skills => [MemoryLayer::DiagnosticSkill].into(),
            MemoryVariant::Both => {
                [MemoryLayer::ElectronicMedicalRecord, MemoryLayer::DiagnosticSkill].into()
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MemoryVariant::None => "none",
            MemoryVariant::Emr => "emr",
            MemoryVariant::Skills => "skills",
            MemoryVariant::Both => "both",
        }
    }
}

impl std::str::FromStr for MemoryVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(MemoryVariant::None),
            "emr" | "emr_only" => Ok(MemoryVariant::Emr),
            "skills" | "skills_only" => Ok(MemoryVariant::Skills),
            "both" => Ok(MemoryVariant::Both),
            other => Err(Error::Config(format!(
                "unknown memory variant `{other}` (expected none, emr, skills or both)"
            ))),
        }
    }
}

fn yes() -> bool {
    true
}

/// One cell of the experiment matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub scenario: Scenario,
    pub setting: Setting,
    pub memory: MemoryVariant,
    #[serde(default = "yes")]
    pub plugin: bool,
    /// Overrides the run-wide seed list when non-empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
    /// Overrides the split's case file when non-empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub case_paths: Vec<PathBuf>,
    /// Earlier Quiz experiment whose final memory this one starts from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_from: Option<String>,
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario, setting: Setting, memory: MemoryVariant, plugin: bool) -> Self {
        let setting_name = match setting {
            Setting::Quiz => "quiz",
            Setting::Exam => "exam",
        };
        let mut name = format!("{}-{setting_name}-{}", scenario.short(), memory.as_str());
        if !plugin {
            name.push_str("-noplugin");
        }
        ExperimentConfig {
            name,
            scenario,
            setting,
            memory,
            plugin,
            seeds: Vec::new(),
            case_paths: Vec::new(),
            memory_from: None,
        }
    }
}

/// Quiz and Exam for both scenarios and every memory variant, plus the
/// plugin ablation on simulated dialogues. Exams with memory start from the
/// matching Quiz's final store.
pub fn default_matrix() -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    let mut pair = |scenario, memory, plugin| {
        let quiz = ExperimentConfig::new(scenario, Setting::Quiz, memory, plugin);
        let mut exam = ExperimentConfig::new(scenario, Setting::Exam, memory, plugin);
        if memory != MemoryVariant::None {
            exam.memory_from = Some(quiz.name.clone());
        }
        out.push(quiz);
        out.push(exam);
    };
    for scenario in [Scenario::OriginalDialogue, Scenario::SimulatedDialogue] {
        for memory in MemoryVariant::ALL {
            pair(scenario, memory, true);
        }
    }
    pair(Scenario::SimulatedDialogue, MemoryVariant::Both, false);
    out
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub train_cases: PathBuf,
    pub test_cases: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Parallel Exam sessions.
    pub concurrency: usize,
    pub vote_k: usize,
    pub retrieve_k: usize,
    pub turn_cap: usize,
    pub weights: (f64, f64),
    pub enforce_split: bool,
    pub lint_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ontology: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
    /// Text file replacing the default psychiatrist persona.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psychiatrist_profile: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        let s = SessionConfig::default();
        RunSection {
            train_cases: PathBuf::from("cases-train.json"),
            test_cases: PathBuf::from("cases-test.json"),
            seeds: default_seeds(),
            concurrency: 4,
            vote_k: s.vote_k,
            retrieve_k: s.retrieve_k,
            turn_cap: s.turn_cap,
            weights: s.weights,
            enforce_split: true,
            lint_threshold: REPETITION_THRESHOLD,
            ontology: None,
            templates_dir: None,
            psychiatrist_profile: None,
        }
    }
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = toml::de::Deserializer::parse(text).map_err(|e| Error::schema(".", e.to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::schema(path, e.into_inner().message().to_string())
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BackendFile {
    backend: BackendConfig,
}

/// Reads a TOML file holding a single `[backend]` table. A relative
/// `script_path` resolves against the file's directory.
pub fn load_backend_file(path: &Path) -> Result<BackendConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut file: BackendFile = parse_toml(&text).map_err(|e| match e {
        Error::SchemaViolation { path: p, message } => Error::SchemaViolation {
            path: format!("{}: {p}", path.display()),
            message,
        },
        other => other,
    })?;
    file.backend.resolve_paths(path.parent().unwrap_or(Path::new("")));
    Ok(file.backend)
}

/// Top-level run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub generation: GenerationSettings,
    /// Empty means [`default_matrix`].
    #[serde(default)]
    pub experiment: Vec<ExperimentConfig>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        parse_toml(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::SchemaViolation { path: p, message } => Error::SchemaViolation {
                path: format!("{}: {p}", path.display()),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Experiments to run, in order.
    pub fn experiments(&self) -> Vec<ExperimentConfig> {
        if self.experiment.is_empty() {
            default_matrix()
        } else {
            self.experiment.clone()
        }
    }

    /// Makes every relative path absolute against `base` (normally the
    /// directory holding the run file).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.backend.resolve_paths(base);
        fix(&mut self.run.train_cases);
        fix(&mut self.run.test_cases);
        for p in [&mut self.run.ontology, &mut self.run.templates_dir, &mut self.run.psychiatrist_profile]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        for e in &mut self.experiment {
            e.case_paths.iter_mut().for_each(fix);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backend.validate()?;
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must not be empty".into()));
        }
        if self.run.concurrency == 0 {
            return Err(Error::Config("run.concurrency must be at least 1".into()));
        }
        let mut seen: BTreeMap<&str, &ExperimentConfig> = BTreeMap::new();
        let exps = self.experiments();
        for e in &exps {
            if e.name.trim().is_empty() || e.name.contains(['/', '\\']) || e.name.starts_with('.') {
                return Err(Error::Config(format!("experiment name `{}` is not a valid directory name", e.name)));
            }
            if let Some(src) = &e.memory_from {
                match seen.get(src.as_str()) {
                    Some(q) if q.setting == Setting::Quiz => {}
                    Some(_) => {
                        return Err(Error::Config(format!(
                            "experiment `{}` takes memory from `{src}`, which is not a Quiz run",
                            e.name
                        )))
                    }
                    None => {
                        return Err(Error::Config(format!(
                            "experiment `{}` takes memory from `{src}`, which must be declared earlier",
                            e.name
                        )))
                    }
                }
            }
            if seen.insert(e.name.as_str(), e).is_some() {
                return Err(Error::Config(format!("duplicate experiment name `{}`", e.name)));
            }
        }
        self.session_config(&exps[0], 0).validate()
    }

    pub fn session_config(&self, exp: &ExperimentConfig, seed: u64) -> SessionConfig {
        SessionConfig {
            mode: exp.scenario.mode(),
            setting: exp.setting,
            memory_layers_enabled: exp.memory.layers(),
            plugin_enabled: exp.plugin,
            vote_k: self.run.vote_k,
            retrieve_k: self.run.retrieve_k,
            turn_cap: self.run.turn_cap,
            rng_seed: seed,
            weights: self.run.weights,
            enforce_split: self.run.enforce_split,
        }
    }
}

/// Loaded, ready-to-run resources.
pub struct Runtime {
    pub config: RunConfig,
    pub backend: Arc<dyn Backend>,
    pub templates: TemplateSet,
    pub ontology: Ontology,
    pub psychiatrist: PsychiatristProfile,
}

impl Runtime {
    /// Builds the backend and loads templates and ontology. `config` paths
    /// must already be resolved.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let backend = build_backend(&config.backend)?;
        Self::with_backend(config, backend)
    }

    pub fn with_backend(config: RunConfig, backend: Arc<dyn Backend>) -> Result<Self> {
        config.validate()?;
        let ontology = match &config.run.ontology {
            Some(p) => Ontology::load(p)?,
            None => Ontology::default(),
        };
        let templates = match &config.run.templates_dir {
            Some(d) => TemplateSet::load_dir(d)?,
            None => TemplateSet::default(),
        };
        let psychiatrist = match &config.run.psychiatrist_profile {
            Some(p) => PsychiatristProfile {
                persona_text: std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            },
            None => PsychiatristProfile::default(),
        };
        Ok(Runtime {
            config,
            backend,
            templates,
            ontology,
            psychiatrist,
        })
    }

    pub fn agent_env(&self) -> AgentEnv<'_> {
        AgentEnv {
            backend: self.backend.as_ref(),
            templates: &self.templates,
            ontology: &self.ontology,
            generation: self.config.generation,
        }
    }

    pub fn session_env(&self) -> SessionEnv<'_> {
        SessionEnv {
            agents: self.agent_env(),
            psychiatrist: &self.psychiatrist,
        }
    }

    pub fn case_paths(&self, exp: &ExperimentConfig) -> Vec<PathBuf> {
        if !exp.case_paths.is_empty() {
            return exp.case_paths.clone();
        }
        vec![match exp.setting {
            Setting::Quiz => self.config.run.train_cases.clone(),
            Setting::Exam => self.config.run.test_cases.clone(),
        }]
    }

    /// Looks a case up in the train and test files.
    pub fn find_case(&self, case_id: &str) -> Result<PatientCase> {
        for p in [&self.config.run.train_cases, &self.config.run.test_cases] {
            if let Some(c) = load_cases(p, &self.ontology)?.into_iter().find(|c| c.case_id == case_id) {
                return Ok(c);
            }
        }
        Err(Error::UnknownCase(case_id.to_string()))
    }

    pub fn load_cases(&self, exp: &ExperimentConfig) -> Result<Vec<PatientCase>> {
        let mut cases = Vec::new();
        let mut ids = HashSet::new();
        for p in self.case_paths(exp) {
            for c in load_cases(&p, &self.ontology)? {
                if !ids.insert(c.case_id.clone()) {
                    return Err(Error::schema(
                        p.display().to_string(),
                        format!("case id `{}` appears in more than one file", c.case_id),
                    ));
                }
                cases.push(c);
            }
        }
        Ok(cases)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub metrics: MetricsReport,
    pub sessions: usize,
    pub failed_sessions: Vec<String>,
    pub skills_inserted: usize,
    pub memory_nodes_before: usize,
    pub memory_nodes_after: usize,
    /// Transcripts whose repetition score exceeds the lint threshold.
    pub repetition_flagged: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub scenario: Scenario,
    pub setting: Setting,
    pub memory: MemoryVariant,
    pub plugin: bool,
    pub seeds: Vec<SeedReport>,
    pub failed_seeds: Vec<SeedFailure>,
    pub aggregate: Option<AggregateMetrics>,
}

pub const MEMORY_BEFORE: &str = "memory-before.json";
pub const MEMORY_AFTER: &str = "memory-after.json";
pub const SESSIONS_LOG: &str = "sessions.jsonl";
pub const METRICS_FILE: &str = "metrics.json";

pub fn seed_dir(experiment_dir: &Path, seed: u64) -> PathBuf {
    experiment_dir.join(format!("seed-{seed}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run_seed(
    rt: &Runtime,
    exp: &ExperimentConfig,
    cases: &[PatientCase],
    truths: &BTreeMap<String, GroundTruth>,
    seed: u64,
    dir: &Path,
    memory_source: Option<&Path>,
) -> Result<SeedReport> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let initial = match memory_source {
        Some(src) => MemoryStore::restore(&seed_dir(src, seed).join(MEMORY_AFTER))?,
        None => MemoryStore::new(),
    };
    let before_bytes = initial.to_snapshot_bytes();
    let nodes_before = initial.len();
    std::fs::write(dir.join(MEMORY_BEFORE), &before_bytes).map_err(|e| Error::io(dir.join(MEMORY_BEFORE), e))?;

    let store = RwLock::new(initial);
    let config = rt.config.session_config(exp, seed);
    let outcomes = run_split(cases, &config, &store, rt.session_env(), rt.config.run.concurrency)?;
    write_session_log(&dir.join(SESSIONS_LOG), &outcomes)?;

    let store = store.into_inner().unwrap_or_else(|p| p.into_inner());
    let after_bytes = store.to_snapshot_bytes();
    std::fs::write(dir.join(MEMORY_AFTER), &after_bytes).map_err(|e| Error::io(dir.join(MEMORY_AFTER), e))?;
    if exp.setting == Setting::Exam && after_bytes != before_bytes {
        return Err(Error::Precondition("exam run modified the frozen memory store".into()));
    }

    let mut metrics = compute_accuracy(&outcomes, truths)?;
    metrics.seed = Some(seed);
    let threshold = rt.config.run.lint_threshold;
    let repetition_flagged = outcomes
        .iter()
        .filter(|o| exp.scenario == Scenario::SimulatedDialogue && o.is_completed())
        .filter(|o| repetition_lint(&o.transcript).is_ok_and(|s| is_repetitive(s, threshold)))
        .map(|o| o.case_id.clone())
        .collect();
    let report = SeedReport {
        seed,
        sessions: outcomes.len(),
        failed_sessions: outcomes
            .iter()
            .filter(|o| !o.is_completed())
            .map(|o| o.case_id.clone())
            .collect(),
        skills_inserted: outcomes.iter().filter(|o| o.skill_inserted.is_some()).count(),
        memory_nodes_before: nodes_before,
        memory_nodes_after: store.len(),
        repetition_flagged,
        metrics,
    };
    write_json(&dir.join(METRICS_FILE), &report)?;
    Ok(report)
}

/// Runs one experiment for every seed. A failing seed is recorded and does
/// not stop the others.
pub fn run_experiment(
    rt: &Runtime,
    exp: &ExperimentConfig,
    experiment_dir: &Path,
    memory_source: Option<&Path>,
) -> Result<ExperimentSummary> {
    let cases = rt.load_cases(exp)?;
    let truths: BTreeMap<String, GroundTruth> =
        cases.iter().map(|c| (c.case_id.clone(), c.ground_truth)).collect();
    let seeds = if exp.seeds.is_empty() { rt.config.run.seeds.clone() } else { exp.seeds.clone() };
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    for seed in seeds {
        let dir = seed_dir(experiment_dir, seed);
        match run_seed(rt, exp, &cases, &truths, seed, &dir, memory_source) {
            Ok(r) => {
                info!(
                    experiment = %exp.name, seed,
                    dep = r.metrics.dep_accuracy, su = r.metrics.su_accuracy,
                    "seed finished"
                );
                reports.push(r)
            }
            Err(e) => {
                warn!(experiment = %exp.name, seed, error = %e, "seed failed");
                failed.push(SeedFailure { seed, error: e.to_string() });
            }
        }
    }
    let metrics: Vec<MetricsReport> = reports.iter().map(|r| r.metrics.clone()).collect();
    Ok(ExperimentSummary {
        name: exp.name.clone(),
        scenario: exp.scenario,
        setting: exp.setting,
        memory: exp.memory,
        plugin: exp.plugin,
        aggregate: aggregate(&metrics),
        seeds: reports,
        failed_seeds: failed,
    })
}

/// Runs every experiment in order, then writes the reports.
pub fn run_matrix(rt: &Runtime, out_dir: &Path) -> Result<Vec<ExperimentSummary>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let echo = out_dir.join("config.toml");
    std::fs::write(&echo, rt.config.to_toml_string()?).map_err(|e| Error::io(&echo, e))?;
    if rt.config.backend.kind == BackendKind::Http {
        info!("running against a live backend; results will not be byte-reproducible");
    }
    let mut summaries = Vec::new();
    for exp in rt.config.experiments() {
        let dir = out_dir.join(&exp.name);
        let source = exp.memory_from.as_ref().map(|n| out_dir.join(n));
        summaries.push(run_experiment(rt, &exp, &dir, source.as_deref())?);
    }
    emit_report(&summaries, out_dir)?;
    Ok(summaries)
}

/// Written into the output directory before any session starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: PathBuf,
    pub backend: BackendConfig,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub experiments: Vec<String>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn new(config_path: &Path, config: &RunConfig, out_dir: &Path) -> Self {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut seeds: Vec<u64> = config.run.seeds.clone();
        for e in config.experiments() {
            seeds.extend(e.seeds);
        }
        seeds.sort_unstable();
        seeds.dedup();
        RunManifest {
            config_path: config_path.to_path_buf(),
            backend: config.backend.clone(),
            out_dir: out_dir.to_path_buf(),
            seeds,
            experiments: config.experiments().into_iter().map(|e| e.name).collect(),
            timestamp,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join(MANIFEST_FILE), self)
    }
}

/// Rebuilds experiment summaries from the per-seed metrics of a finished
/// run. Seeds without a metrics file are reported as failed.
pub fn collect_summaries(config: &RunConfig, run_dir: &Path) -> Result<Vec<ExperimentSummary>> {
    let mut out = Vec::new();
    for exp in config.experiments() {
        let dir = run_dir.join(&exp.name);
        let seeds = if exp.seeds.is_empty() { config.run.seeds.clone() } else { exp.seeds.clone() };
        let mut reports = Vec::new();
        let mut failed = Vec::new();
        for seed in seeds {
            let path = seed_dir(&dir, seed).join(METRICS_FILE);
            match std::fs::read_to_string(&path) {
                Ok(text) => {
                    let r: SeedReport = serde_json::from_str(&text)
                        .map_err(|e| Error::schema(path.display().to_string(), e.to_string()))?;
                    reports.push(r);
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => failed.push(SeedFailure {
                    seed,
                    error: format!("no {METRICS_FILE} in {}", path.parent().unwrap_or(&dir).display()),
                }),
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
        let metrics: Vec<MetricsReport> = reports.iter().map(|r| r.metrics.clone()).collect();
        out.push(ExperimentSummary {
            name: exp.name.clone(),
            scenario: exp.scenario,
            setting: exp.setting,
            memory: exp.memory,
            plugin: exp.plugin,
            aggregate: aggregate(&metrics),
            seeds: reports,
            failed_seeds: failed,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_shape() {
        let m = default_matrix();
        assert_eq!(m.len(), 18);
        let names: HashSet<_> = m.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names.len(), 18);
        let exam = m.iter().find(|e| e.name == "sd-exam-both-noplugin").unwrap();
        assert_eq!(exam.memory_from.as_deref(), Some("sd-quiz-both-noplugin"));
        assert!(m.iter().find(|e| e.name == "od-exam-none").unwrap().memory_from.is_none());
    }

    #[test]
    fn memory_variant_layers() {
        assert!(MemoryVariant::None.layers().is_empty());
        assert_eq!(MemoryVariant::Emr.layers(), [MemoryLayer::ElectronicMedicalRecord].into());
        assert_eq!(MemoryVariant::Skills.layers(), [MemoryLayer::DiagnosticSkill].into());
        assert_eq!(MemoryVariant::Both.layers().len(), 2);
        assert_eq!("skills".parse::<MemoryVariant>().unwrap(), MemoryVariant::Skills);
        assert!("all".parse::<MemoryVariant>().is_err());
    }

    #[test]
    fn config_roundtrip_and_errors() {
        let cfg = RunConfig {
            backend: BackendConfig::scripted("script.json"),
            run: RunSection::default(),
            generation: GenerationSettings::default(),
            experiment: default_matrix(),
        };
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        assert!(cfg.validate().is_ok());

        let bad = text.replace("vote_k = 5", "vote_k = \"five\"");
        match RunConfig::from_toml_str(&bad).unwrap_err() {
            Error::SchemaViolation { path, .. } => assert_eq!(path, "run.vote_k"),
            e => panic!("unexpected {e}"),
        }
        let mut order = cfg.clone();
        order.experiment.swap(0, 1);
        order.experiment[0].memory_from = Some("od-quiz-none".into());
        assert!(order.validate().is_err());
    }
}
