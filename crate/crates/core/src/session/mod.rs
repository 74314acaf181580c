//! One diagnose-and-reflect session per case, and split runners.
//!
//! A session initialises the patient, runs (or replays) the conversation,
//! summarises an EMR, retrieves memory with the EMR as query, samples and
//! votes a diagnosis, and in the Quiz setting reflects a skill and retries
//! once on a misdiagnosis before writing memory back. Exam sessions never
//! write memory.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::Path;
use std::sync::RwLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{info, warn};

use crate::agents::{
    patient_reply, psychiatrist_utterance, sample_diagnoses, summarize_emr, vote, AgentEnv,
    CallContext, EMRecord, PatientProfile, PsychiatristProfile, VoteSet,
};
use crate::domain::{labels_match, DiagnosisResult, PatientCase, SessionStage, Split, Transcript};
use crate::error::{Error, Result};
use crate::memory::{MemoryLayer, MemoryNode, MemoryStore, NodeId, RetrievalQuery};
use crate::supervisor::{
    next_stage, reflect, update_tracking, validate_turn_cap, Instruction, Skill, TrackingState,
    DEFAULT_TURN_CAP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DialogueMode {
    /// Agents converse live.
    Simulated,
    /// The case's original transcript is adopted as-is.
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    /// Training pass: memory writes, reflection and one retry.
    Quiz,
    /// Evaluation pass: frozen memory, one attempt.
    Exam,
}

impl Setting {
    pub fn expected_split(self) -> Split {
        match self {
            Setting::Quiz => Split::Train,
            Setting::Exam => Split::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub mode: DialogueMode,
    pub setting: Setting,
    /// Subset of {electronic_medical_record, diagnostic_skill}.
    pub memory_layers_enabled: BTreeSet<MemoryLayer>,
    pub plugin_enabled: bool,
    pub vote_k: usize,
    pub retrieve_k: usize,
    pub turn_cap: usize,
    pub rng_seed: u64,
    /// Relevance and importance weights for retrieval scoring.
    pub weights: (f64, f64),
    /// Reject cases whose split does not match the setting.
    pub enforce_split: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            mode: DialogueMode::Simulated,
            setting: Setting::Quiz,
            memory_layers_enabled: [MemoryLayer::ElectronicMedicalRecord, MemoryLayer::DiagnosticSkill]
                .into_iter()
                .collect(),
            plugin_enabled: true,
            vote_k: 5,
            retrieve_k: 10,
            turn_cap: DEFAULT_TURN_CAP,
            rng_seed: 0,
            weights: (1.0, 1.0),
            enforce_split: true,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory_layers_enabled.contains(&MemoryLayer::ConversationRecord) {
            return Err(Error::Config(
                "conversation records are session-local and cannot be enabled for retrieval".into(),
            ));
        }
        if self.vote_k == 0 {
            return Err(Error::Config("vote_k must be at least 1".into()));
        }
        if self.retrieve_k == 0 {
            return Err(Error::Config("retrieve_k must be at least 1".into()));
        }
        let (a, b) = self.weights;
        if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::Config("retrieval weights must be finite and non-negative".into()));
        }
        if self.mode == DialogueMode::Simulated {
            validate_turn_cap(self.turn_cap)?;
        }
        Ok(())
    }

    fn layer(&self, layer: MemoryLayer) -> bool {
        self.memory_layers_enabled.contains(&layer)
    }
}

/// Everything a session needs besides the case, config and store.
#[derive(Clone, Copy)]
pub struct SessionEnv<'a> {
    pub agents: AgentEnv<'a>,
    pub psychiatrist: &'a PsychiatristProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt_index: usize,
    pub diagnosis: DiagnosisResult,
    pub votes: VoteSet,
    pub correct: bool,
    pub retrieved_node_ids: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalPhase {
    Conversation,
    Diagnosis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalLog {
    pub phase: RetrievalPhase,
    /// Turn index of the utterance generated with this memory, or the
    /// attempt index for diagnosis retrievals.
    pub at: usize,
    pub node_ids: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    /// Turn index of the psychiatrist utterance the instruction guides.
    pub turn_index: usize,
    pub instruction: Instruction,
    /// Tracking state after the update; absent for the opening instruction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracking: Option<TrackingState>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub parse_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceDelta {
    pub node_id: NodeId,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub case_id: String,
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub session_seed: u64,
    pub transcript: Transcript,
    pub emr: Option<EMRecord>,
    pub attempts: Vec<AttemptRecord>,
    pub instructions: Vec<InstructionRecord>,
    pub retrievals: Vec<RetrievalLog>,
    pub skill: Option<Skill>,
    pub skill_inserted: Option<NodeId>,
    pub emr_inserted: Option<NodeId>,
    pub importance_updates_applied: bool,
    pub importance_deltas: Vec<ImportanceDelta>,
}

impl SessionOutcome {
    fn new(case_id: &str, session_seed: u64) -> Self {
        SessionOutcome {
            case_id: case_id.to_string(),
            status: SessionStatus::Completed,
            error: None,
            session_seed,
            transcript: Transcript::new(),
            emr: None,
            attempts: Vec::new(),
            instructions: Vec::new(),
            retrievals: Vec::new(),
            skill: None,
            skill_inserted: None,
            emr_inserted: None,
            importance_updates_applied: false,
            importance_deltas: Vec::new(),
        }
    }

    pub fn is_completed(&self) -> bool {
        self.status == SessionStatus::Completed
    }

    pub fn first_attempt(&self) -> Option<&AttemptRecord> {
        self.attempts.first()
    }
}

/// Per-session seed: the first 8 bytes of `sha256(run_seed_le || case_id)`.
/// Independent of scheduling order, so concurrent runs sample identically.
pub fn session_seed(run_seed: u64, case_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update(case_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn read_store(store: &RwLock<MemoryStore>) -> std::sync::RwLockReadGuard<'_, MemoryStore> {
    store.read().unwrap_or_else(|p| p.into_inner())
}

fn write_store(store: &RwLock<MemoryStore>) -> std::sync::RwLockWriteGuard<'_, MemoryStore> {
    store.write().unwrap_or_else(|p| p.into_inner())
}

struct Session<'a> {
    case: &'a PatientCase,
    config: &'a SessionConfig,
    store: &'a RwLock<MemoryStore>,
    env: SessionEnv<'a>,
    ctx: CallContext<'a>,
    rng: ChaCha8Rng,
    layers: Vec<MemoryLayer>,
}

impl Session<'_> {
    fn retrieve(&mut self, query_text: &str) -> Result<Vec<MemoryNode>> {
        if self.layers.is_empty() || query_text.trim().is_empty() {
            return Ok(Vec::new());
        }
        let query = RetrievalQuery::new(query_text, self.layers.iter().copied())
            .with_k(self.config.retrieve_k)
            .with_weights(self.config.weights.0, self.config.weights.1);
        read_store(self.store).sample(&query, self.env.agents.backend, &mut self.rng)
    }

    fn converse(&mut self, out: &mut SessionOutcome) -> Result<()> {
        let patient = PatientProfile::from_case(self.case, self.env.agents.ontology);
        let cap = self.config.turn_cap;
        let t = &mut out.transcript;
        t.mark_stage(SessionStage::Start)?;
        let mut stage = SessionStage::Start;
        let mut tracking = self
            .config
            .plugin_enabled
            .then(|| TrackingState::new(self.env.agents.ontology));
        let mut instruction = self.config.plugin_enabled.then(Instruction::opening);
        if let Some(ins) = &instruction {
            out.instructions.push(InstructionRecord {
                turn_index: 0,
                instruction: ins.clone(),
                tracking: None,
                parse_failed: false,
            });
        }
        loop {
            let memory = match t.last() {
                Some(u) => {
                    let query = u.text.clone();
                    let nodes = self.retrieve(&query)?;
                    if !self.layers.is_empty() {
                        out.retrievals.push(RetrievalLog {
                            phase: RetrievalPhase::Conversation,
                            at: t.next_turn_index(),
                            node_ids: nodes.iter().map(|n| n.node_id).collect(),
                        });
                    }
                    nodes
                }
                None => Vec::new(),
            };
            psychiatrist_utterance(&self.ctx, self.env.psychiatrist, &memory, instruction.as_ref(), t)?;
            patient_reply(&self.ctx, &patient, t)?;
            if stage == SessionStage::End {
                break;
            }
            if t.len() + 2 > cap {
                return Err(Error::Precondition(format!(
                    "conversation reached the turn cap of {cap} without an End stage"
                )));
            }
            let new_stage = match tracking.as_ref() {
                Some(state) => {
                    let step = update_tracking(&self.ctx, self.env.psychiatrist, state, t, cap)?;
                    out.instructions.push(InstructionRecord {
                        turn_index: t.next_turn_index(),
                        instruction: step.instruction.clone(),
                        tracking: Some(step.state.clone()),
                        parse_failed: step.parse_failed,
                    });
                    let s = step.state.stage;
                    instruction = Some(step.instruction);
                    tracking = Some(step.state);
                    s
                }
                None => next_stage(stage, t.len(), false, cap),
            };
            if new_stage != stage {
                t.mark_stage(new_stage)?;
                stage = new_stage;
            }
        }
        Ok(())
    }

    fn diagnose(&mut self, out: &mut SessionOutcome, query: &str, attempt: usize) -> Result<()> {
        let memory = self.retrieve(query)?;
        let retrieved: Vec<NodeId> = memory.iter().map(|n| n.node_id).collect();
        if !self.layers.is_empty() {
            out.retrievals.push(RetrievalLog {
                phase: RetrievalPhase::Diagnosis,
                at: attempt,
                node_ids: retrieved.clone(),
            });
        }
        let votes = sample_diagnoses(
            &self.ctx,
            self.env.psychiatrist,
            &out.transcript,
            &memory,
            self.config.vote_k,
            attempt,
        )?;
        let diagnosis = vote(&votes);
        let correct = labels_match(&diagnosis, &self.case.ground_truth);
        out.attempts.push(AttemptRecord {
            attempt_index: attempt,
            diagnosis,
            votes,
            correct,
            retrieved_node_ids: retrieved,
        });
        Ok(())
    }

    fn run(&mut self, out: &mut SessionOutcome) -> Result<()> {
        match self.config.mode {
            DialogueMode::Simulated => self.converse(out)?,
            DialogueMode::Replay => {
                if self.case.original_dialogue.is_empty() {
                    return Err(Error::Precondition(format!(
                        "case `{}` has no original dialogue to replay",
                        self.case.case_id
                    )));
                }
                out.transcript = self.case.original_dialogue.clone();
            }
        }

        let emr = summarize_emr(&self.ctx, &out.transcript)?;
        let mut query = emr.to_memory_text();
        if query.trim().is_empty() {
            query = out.transcript.render();
        }
        out.emr = Some(emr);
        self.diagnose(out, &query, 1)?;

        if self.config.setting == Setting::Exam {
            return Ok(());
        }

        let first_correct = out.attempts[0].correct;
        if !first_correct && self.config.layer(MemoryLayer::DiagnosticSkill) {
            let diag = out.attempts[0].diagnosis.clone();
            if let Some(skill) = reflect(
                &self.ctx,
                self.env.psychiatrist,
                &out.transcript,
                &diag,
                &self.case.ground_truth,
            )? {
                let id = write_store(self.store).insert(
                    MemoryLayer::DiagnosticSkill,
                    &skill.text,
                    &self.case.case_id,
                    self.env.agents.backend,
                )?;
                out.skill = Some(skill);
                out.skill_inserted = Some(id);
                self.diagnose(out, &query, 2)?;
            }
        }

        let mut store = write_store(self.store);
        if self.config.layer(MemoryLayer::ElectronicMedicalRecord) {
            let id = store.insert(
                MemoryLayer::ElectronicMedicalRecord,
                &query,
                &self.case.case_id,
                self.env.agents.backend,
            )?;
            out.emr_inserted = Some(id);
        }
        let ids = &out.attempts[0].retrieved_node_ids;
        if !ids.is_empty() {
            let before: Vec<f64> = ids
                .iter()
                .map(|id| store.get(*id).map_or(f64::NAN, |n| n.importance))
                .collect();
            store.update_importance(ids, first_correct)?;
            out.importance_deltas = ids
                .iter()
                .zip(before)
                .map(|(id, before)| ImportanceDelta {
                    node_id: *id,
                    before,
                    after: store.get(*id).map_or(f64::NAN, |n| n.importance),
                })
                .collect();
            out.importance_updates_applied = true;
        }
        Ok(())
    }
}

fn check_case(case: &PatientCase, config: &SessionConfig) -> Result<()> {
    if config.enforce_split && case.split != config.setting.expected_split() {
        return Err(Error::Precondition(format!(
            "case `{}` belongs to the {:?} split but the setting is {:?}",
            case.case_id, case.split, config.setting
        )));
    }
    Ok(())
}

/// Runs one session. Configuration and split errors are returned; failures
/// inside the session (backend errors, unparseable replies) produce an
/// outcome marked [`SessionStatus::Failed`] that keeps whatever was done.
pub fn run_session(
    case: &PatientCase,
    config: &SessionConfig,
    store: &RwLock<MemoryStore>,
    env: SessionEnv<'_>,
) -> Result<SessionOutcome> {
    config.validate()?;
    check_case(case, config)?;
    Ok(run_checked(case, config, store, env))
}

fn run_checked(
    case: &PatientCase,
    config: &SessionConfig,
    store: &RwLock<MemoryStore>,
    env: SessionEnv<'_>,
) -> SessionOutcome {
    let seed = session_seed(config.rng_seed, &case.case_id);
    let mut out = SessionOutcome::new(&case.case_id, seed);
    let mut session = Session {
        case,
        config,
        store,
        env,
        ctx: CallContext::new(env.agents, &case.case_id).with_seed(seed),
        rng: ChaCha8Rng::seed_from_u64(seed),
        layers: config.memory_layers_enabled.iter().copied().collect(),
    };
    if let Err(e) = session.run(&mut out) {
        warn!(case = %case.case_id, error = %e, "session failed");
        out.status = SessionStatus::Failed;
        out.error = Some(e.to_string());
    }
    out
}

/// Runs a split. Quiz sessions run one after another in input order so that
/// memory accumulates; Exam sessions run on up to `concurrency` threads
/// against the read-only store. Outcomes come back in input order.
pub fn run_split(
    cases: &[PatientCase],
    config: &SessionConfig,
    store: &RwLock<MemoryStore>,
    env: SessionEnv<'_>,
    concurrency: usize,
) -> Result<Vec<SessionOutcome>> {
    config.validate()?;
    for case in cases {
        check_case(case, config)?;
    }
    let outcomes: Vec<SessionOutcome> = match config.setting {
        Setting::Quiz => cases.iter().map(|c| run_checked(c, config, store, env)).collect(),
        Setting::Exam => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(concurrency.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| {
                cases
                    .par_iter()
                    .map(|c| run_checked(c, config, store, env))
                    .collect()
            })
        }
    };
    let failed = outcomes.iter().filter(|o| !o.is_completed()).count();
    info!(sessions = outcomes.len(), failed, setting = ?config.setting, "split finished");
    Ok(outcomes)
}

/// Writes one JSON line per outcome.
pub fn write_session_log(path: &Path, outcomes: &[SessionOutcome]) -> Result<()> {
    let mut buf = Vec::new();
    for o in outcomes {
        serde_json::to_writer(&mut buf, o).expect("outcome serializes");
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_session_log(path: &Path) -> Result<Vec<SessionOutcome>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::schema(format!("line {}", i + 1), e.to_string()))
        })
        .collect()
}
