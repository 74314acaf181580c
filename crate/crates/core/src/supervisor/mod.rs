//! The psychiatrist's supervisor plugin: symptom tracking, next-turn
//! instructions, the three-stage dialogue machine and skill reflection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::agents::parse::{find, parse_status_lines, sections, Section};
use crate::agents::{render_diagnosis, render_truth, CallContext, PsychiatristProfile};
use crate::backend::TemplateId;
use crate::domain::{
    labels_match, DiagnosisResult, GroundTruth, Ontology, RiskLevel, SessionStage, SymptomId,
    SymptomStatus, Transcript,
};
use crate::error::{Error, Result};

pub const DEFAULT_TURN_CAP: usize = 25;
/// Smallest cap that fits an opening, one exploring and one closing exchange.
pub const MIN_TURN_CAP: usize = 6;
/// Focus size used when the supervisor's own focus list is unusable.
const FALLBACK_FOCUS: usize = 2;

const OPENING_GUIDANCE: &str = "Greet the patient and ask what brings them in today.";
const CONTINUE_GUIDANCE: &str = "Continue exploring the symptoms that are still unknown.";
const CLOSING_GUIDANCE: &str = "Wrap up the interview and give brief advice on next steps.";

/// Next stage given the current one. `turn` is the number of utterances so
/// far. Moves at most one step per call and never backwards.
///
/// Start becomes Exploring once the opening exchange is done (turn 2).
/// Exploring becomes End when nothing is left to ask or when another
/// exploring exchange plus the closing exchange would not fit under
/// `turn_cap` utterances.
pub fn next_stage(current: SessionStage, turn: usize, queue_empty: bool, turn_cap: usize) -> SessionStage {
    match current {
        SessionStage::Start if turn >= 2 => SessionStage::Exploring,
        SessionStage::Start => SessionStage::Start,
        SessionStage::Exploring if queue_empty || turn + 4 > turn_cap => SessionStage::End,
        SessionStage::Exploring => SessionStage::Exploring,
        SessionStage::End => SessionStage::End,
    }
}

pub fn validate_turn_cap(turn_cap: usize) -> Result<()> {
    if turn_cap < MIN_TURN_CAP {
        return Err(Error::Config(format!(
            "turn_cap must be at least {MIN_TURN_CAP}, got {turn_cap}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackingState {
    pub statuses: BTreeMap<SymptomId, SymptomStatus>,
    pub stage: SessionStage,
    /// Unknown symptoms in ontology order.
    pub question_queue: Vec<SymptomId>,
    pub turn: usize,
}

impl TrackingState {
    pub fn new(ontology: &Ontology) -> Self {
        TrackingState {
            statuses: ontology.ids().map(|id| (id.clone(), SymptomStatus::Unknown)).collect(),
            stage: SessionStage::Start,
            question_queue: ontology.ids().cloned().collect(),
            turn: 0,
        }
    }

    pub fn status(&self, id: &SymptomId) -> SymptomStatus {
        self.statuses.get(id).copied().unwrap_or_default()
    }

    /// Tracking list in the same `- id: status` form the supervisor answers in.
    pub fn render(&self, ontology: &Ontology) -> String {
        ontology
            .ids()
            .map(|id| format!("- {id}: {}\n", self.status(id)))
            .collect()
    }

    /// Applies parsed statuses. Resolved symptoms never fall back to Unknown.
    fn apply(&mut self, updates: &[(SymptomId, SymptomStatus)], ontology: &Ontology) {
        for (id, status) in updates {
            if *status == SymptomStatus::Unknown {
                continue;
            }
            self.statuses.insert(id.clone(), *status);
        }
        self.question_queue = ontology
            .ids()
            .filter(|id| !self.status(id).is_resolved())
            .cloned()
            .collect();
    }
}

pub fn advance_stage(state: &TrackingState, turn_cap: usize) -> SessionStage {
    next_stage(state.stage, state.turn, state.question_queue.is_empty(), turn_cap)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub focus_symptoms: Vec<SymptomId>,
    pub guidance_text: String,
    pub stage_directive: SessionStage,
}

impl Instruction {
    /// Instruction for the psychiatrist's first utterance. Built locally; the
    /// supervisor has nothing to track before anyone has spoken.
    pub fn opening() -> Self {
        Instruction {
            focus_symptoms: Vec::new(),
            guidance_text: OPENING_GUIDANCE.to_string(),
            stage_directive: SessionStage::Start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackingStep {
    pub state: TrackingState,
    pub instruction: Instruction,
    /// The supervisor response could not be parsed; statuses were kept.
    pub parse_failed: bool,
}

const TRACKING_KEYS: [&str; 3] = ["status", "focus", "guidance"];

/// Asks the supervisor to update the tracking list from `history` and plan
/// the next psychiatrist turn.
pub fn update_tracking(
    ctx: &CallContext<'_>,
    profile: &PsychiatristProfile,
    state: &TrackingState,
    history: &Transcript,
    turn_cap: usize,
) -> Result<TrackingStep> {
    let ontology = ctx.env.ontology;
    let slots = BTreeMap::from([
        ("profile", profile.render(ontology)),
        ("tracking", state.render(ontology)),
        ("history", history.render()),
    ]);
    let prompt = ctx.render(TemplateId::Instruction, &slots)?;
    let req = ctx.request(
        TemplateId::Instruction,
        history.len(),
        prompt,
        1,
        ctx.env.generation.dialogue_temperature,
    );
    let raw = ctx.complete_one(&req)?;

    let secs = sections(&raw, &TRACKING_KEYS);
    let mut next = state.clone();
    let parse_failed = find(&secs, "status").is_none();
    if parse_failed {
        warn!(case = ctx.case_id, turn = history.len(), "tracking response unparseable, keeping previous state");
    } else {
        let updates: Vec<(SymptomId, SymptomStatus)> = find(&secs, "status")
            .map(|s| {
                parse_status_lines(&s.full_text(), ontology)
                    .into_iter()
                    .map(|(id, st, _)| (id, st))
                    .collect()
            })
            .unwrap_or_default();
        next.apply(&updates, ontology);
    }
    next.turn = history.len();
    next.stage = advance_stage(&next, turn_cap);

    let focus_symptoms = if next.stage == SessionStage::End {
        Vec::new()
    } else {
        let mut wanted: Vec<SymptomId> = Vec::new();
        if !parse_failed {
            if let Some(sec) = find(&secs, "focus") {
                for raw_id in sec.full_text().split([',', ';', '\n']) {
                    if let Some(id) = ontology.resolve(raw_id) {
                        if next.question_queue.contains(&id) && !wanted.contains(&id) {
                            wanted.push(id);
                        }
                    }
                }
            }
        }
        if wanted.is_empty() {
            wanted = next.question_queue.iter().take(FALLBACK_FOCUS).cloned().collect();
        }
        wanted
    };
    let parsed_guidance = find(&secs, "guidance").map(Section::full_text).unwrap_or_default();
    let guidance_text = if !parse_failed && !parsed_guidance.is_empty() {
        parsed_guidance
    } else if next.stage == SessionStage::End {
        CLOSING_GUIDANCE.to_string()
    } else {
        CONTINUE_GUIDANCE.to_string()
    };
    Ok(TrackingStep {
        instruction: Instruction {
            focus_symptoms,
            guidance_text,
            stage_directive: next.stage,
        },
        state: next,
        parse_failed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorSignature {
    pub dep_predicted: RiskLevel,
    pub dep_truth: RiskLevel,
    pub su_predicted: RiskLevel,
    pub su_truth: RiskLevel,
}

impl ErrorSignature {
    pub fn new(diag: &DiagnosisResult, truth: &GroundTruth) -> Self {
        ErrorSignature {
            dep_predicted: diag.depression_risk,
            dep_truth: truth.depression_risk,
            su_predicted: diag.suicide_risk,
            su_truth: truth.suicide_risk,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skill {
    pub text: String,
    pub source_case: String,
    pub error_signature: ErrorSignature,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unparsed: bool,
}

/// Reflects a diagnostic skill from a misdiagnosis. Returns `None` when the
/// diagnosis matches the ground truth.
pub fn reflect(
    ctx: &CallContext<'_>,
    profile: &PsychiatristProfile,
    history: &Transcript,
    diag: &DiagnosisResult,
    truth: &GroundTruth,
) -> Result<Option<Skill>> {
    if labels_match(diag, truth) {
        return Ok(None);
    }
    let slots = BTreeMap::from([
        ("profile", profile.render(ctx.env.ontology)),
        ("history", history.render()),
        ("diag", render_diagnosis(diag)),
        ("truth", render_truth(truth)),
    ]);
    let prompt = ctx.render(TemplateId::Skill, &slots)?;
    let req = ctx.request(TemplateId::Skill, 0, prompt, 1, ctx.env.generation.dialogue_temperature);
    let raw = ctx.complete_one(&req)?;
    let secs = sections(&raw, &["skill"]);
    let (text, unparsed) = match find(&secs, "skill").map(Section::full_text) {
        Some(t) if !t.is_empty() => (t, false),
        _ => {
            warn!(case = ctx.case_id, "skill response unparseable, storing raw text");
            (raw.trim().to_string(), true)
        }
    };
    if text.is_empty() {
        return Err(Error::ParseFailure {
            what: "skill",
            detail: "empty response".into(),
        });
    }
    Ok(Some(Skill {
        text,
        source_case: ctx.case_id.to_string(),
        error_signature: ErrorSignature::new(diag, truth),
        unparsed,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentEnv, GenerationSettings};
    use crate::backend::{RecordingBackend, ScriptFile, ScriptedBackend, TemplateSet};
    use crate::domain::Speaker;
    use std::sync::Arc;
    use SessionStage::*;

    #[test]
    fn stage_rules() {
        assert_eq!(next_stage(Start, 0, false, 25), Start);
        assert_eq!(next_stage(Start, 2, false, 25), Exploring);
        assert_eq!(next_stage(Exploring, 4, false, 25), Exploring);
        assert_eq!(next_stage(Exploring, 4, true, 25), End);
        assert_eq!(next_stage(Exploring, 20, false, 25), Exploring);
        assert_eq!(next_stage(Exploring, 22, false, 25), End);
        assert_eq!(next_stage(Exploring, 23, false, 25), End);
        assert_eq!(next_stage(End, 3, false, 25), End);
        // one step at a time
        assert_eq!(next_stage(Start, 24, true, 25), Exploring);
        assert!(validate_turn_cap(5).is_err());
        assert!(validate_turn_cap(6).is_ok());
    }

    #[test]
    fn stage_never_regresses() {
        for cap in 6..40 {
            for queue_empty in [false, true] {
                let mut stage = Start;
                for turn in 0..60 {
                    let next = next_stage(stage, turn, queue_empty, cap);
                    assert!(next >= stage);
                    stage = next;
                }
                assert_eq!(stage, End);
            }
        }
    }

    fn ctx_parts(s: ScriptFile) -> (RecordingBackend, TemplateSet, Ontology) {
        (
            RecordingBackend::new(Arc::new(ScriptedBackend::new(s).unwrap())),
            TemplateSet::default(),
            Ontology::default(),
        )
    }

    fn history(n: usize) -> Transcript {
        let mut t = Transcript::new();
        for i in 0..n {
            let sp = if i % 2 == 0 { Speaker::Psychiatrist } else { Speaker::Patient };
            t.push(sp, format!("utterance {i}"));
        }
        t
    }

    #[test]
    fn confirmed_symptom_leaves_queue() {
        let mut s = ScriptFile::new();
        s.push(
            TemplateId::Instruction,
            "c",
            2,
            0,
            "STATUS:\n- sleep-disturbance: present\nFOCUS: sleep-disturbance, anhedonia\nGUIDANCE: Ask about interest.",
        );
        let (b, t, o) = ctx_parts(s);
        let env = AgentEnv { backend: &b, templates: &t, ontology: &o, generation: GenerationSettings::default() };
        let ctx = CallContext::new(env, "c");
        let state = TrackingState::new(&o);
        let step = update_tracking(&ctx, &PsychiatristProfile::default(), &state, &history(2), 25).unwrap();
        let sleep = SymptomId::from("sleep-disturbance");
        assert_eq!(step.state.status(&sleep), SymptomStatus::Present);
        assert!(!step.state.question_queue.contains(&sleep));
        assert_eq!(step.state.question_queue.len(), o.len() - 1);
        assert_eq!(step.state.stage, Exploring);
        assert_eq!(step.instruction.focus_symptoms, vec![SymptomId::from("anhedonia")]);
        assert_eq!(step.instruction.guidance_text, "Ask about interest.");
        assert!(b.calls()[0].request.rendered_prompt.contains("- anhedonia: unknown"));
    }

    #[test]
    fn resolved_status_never_reverts() {
        let mut s = ScriptFile::new();
        s.push(TemplateId::Instruction, "c", 4, 0, "STATUS:\n- fatigue: unknown\n- anxiety: absent\nFOCUS: fatigue");
        let (b, t, o) = ctx_parts(s);
        let env = AgentEnv { backend: &b, templates: &t, ontology: &o, generation: GenerationSettings::default() };
        let ctx = CallContext::new(env, "c");
        let mut state = TrackingState::new(&o);
        state.apply(&[(SymptomId::from("fatigue"), SymptomStatus::Present)], &o);
        state.stage = Exploring;
        let step = update_tracking(&ctx, &PsychiatristProfile::default(), &state, &history(4), 25).unwrap();
        assert_eq!(step.state.status(&SymptomId::from("fatigue")), SymptomStatus::Present);
        assert_eq!(step.state.status(&SymptomId::from("anxiety")), SymptomStatus::Absent);
        // fatigue is resolved so it cannot be a focus; fall back to the queue head
        assert_eq!(step.instruction.focus_symptoms, step.state.question_queue[..2].to_vec());
    }

    #[test]
    fn all_resolved_ends() {
        let o = Ontology::default();
        let lines: String = o.ids().map(|id| format!("- {id}: absent\n")).collect();
        let mut s = ScriptFile::new();
        s.push(TemplateId::Instruction, "c", 6, 0, format!("STATUS:\n{lines}FOCUS:\nGUIDANCE: Close."));
        let (b, t, o) = ctx_parts(s);
        let env = AgentEnv { backend: &b, templates: &t, ontology: &o, generation: GenerationSettings::default() };
        let mut state = TrackingState::new(&o);
        state.stage = Exploring;
        let step = update_tracking(&CallContext::new(env, "c"), &PsychiatristProfile::default(), &state, &history(6), 25).unwrap();
        assert!(step.state.question_queue.is_empty());
        assert_eq!(step.instruction.stage_directive, End);
        assert!(step.instruction.focus_symptoms.is_empty());
    }

    #[test]
    fn parse_failure_keeps_state_and_continues() {
        let mut s = ScriptFile::new();
        s.push(TemplateId::Instruction, "c", 4, 0, "I am not sure what to say.");
        let (b, t, o) = ctx_parts(s);
        let env = AgentEnv { backend: &b, templates: &t, ontology: &o, generation: GenerationSettings::default() };
        let mut state = TrackingState::new(&o);
        state.apply(&[(SymptomId::from("depressed-mood"), SymptomStatus::Present)], &o);
        state.stage = Exploring;
        let step = update_tracking(&CallContext::new(env, "c"), &PsychiatristProfile::default(), &state, &history(4), 25).unwrap();
        assert!(step.parse_failed);
        assert_eq!(step.state.statuses, state.statuses);
        assert_eq!(step.state.turn, 4);
        assert_eq!(step.instruction.guidance_text, CONTINUE_GUIDANCE);
        assert_eq!(step.instruction.focus_symptoms, state.question_queue[..2].to_vec());
    }

    #[test]
    fn reflect_only_on_error() {
        let mut s = ScriptFile::new();
        s.push(TemplateId::Skill, "c", 0, 0, "SKILL: Do not read early waking alone as severe depression.");
        let (b, t, o) = ctx_parts(s);
        let env = AgentEnv { backend: &b, templates: &t, ontology: &o, generation: GenerationSettings::default() };
        let ctx = CallContext::new(env, "c");
        let truth = GroundTruth { depression_risk: RiskLevel::Mild, suicide_risk: RiskLevel::Control };
        let prof = PsychiatristProfile::default();
        let ok = DiagnosisResult::risks(RiskLevel::Mild, RiskLevel::Control);
        assert!(reflect(&ctx, &prof, &history(4), &ok, &truth).unwrap().is_none());
        assert!(b.calls().is_empty());

        let wrong = DiagnosisResult::risks(RiskLevel::Severe, RiskLevel::Moderate);
        let skill = reflect(&ctx, &prof, &history(4), &wrong, &truth).unwrap().unwrap();
        assert_eq!(skill.text, "Do not read early waking alone as severe depression.");
        assert_eq!(
            skill.error_signature,
            ErrorSignature {
                dep_predicted: RiskLevel::Severe,
                dep_truth: RiskLevel::Mild,
                su_predicted: RiskLevel::Moderate,
                su_truth: RiskLevel::Control,
            }
        );
        assert!(!skill.unparsed);
        let prompt = &b.calls()[0].request.rendered_prompt;
        assert!(prompt.contains("Depression risk: mild"));
        assert!(prompt.contains("Depression risk: severe"));
    }

    #[test]
    fn unlabelled_skill_is_flagged() {
        let mut s = ScriptFile::new();
        s.push(TemplateId::Skill, "c", 0, 0, "Pay more attention to sleep.");
        let (b, t, o) = ctx_parts(s);
        let env = AgentEnv { backend: &b, templates: &t, ontology: &o, generation: GenerationSettings::default() };
        let truth = GroundTruth { depression_risk: RiskLevel::Mild, suicide_risk: RiskLevel::Control };
        let wrong = DiagnosisResult::risks(RiskLevel::Control, RiskLevel::Control);
        let skill = reflect(&CallContext::new(env, "c"), &PsychiatristProfile::default(), &history(2), &wrong, &truth)
            .unwrap()
            .unwrap();
        assert!(skill.unparsed);
        assert_eq!(skill.text, "Pay more attention to sleep.");
    }
}
