//! Patient and psychiatrist behaviour: utterance generation, diagnosis
//! sampling and voting, EMR summarisation.

mod emr;
pub mod parse;
mod profile;
mod vote;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::backend::{self, render, Backend, CompletionRequest, TemplateId, TemplateSet};
use crate::domain::{
    DiagnosisResult, GroundTruth, Ontology, RiskLevel, Speaker, Transcript, Utterance,
};
use crate::error::{Error, Result};
use crate::memory::{MemoryLayer, MemoryNode};
use crate::supervisor::Instruction;

pub use emr::{parse_emr, summarize_emr, EmrSymptom, EMRecord};
pub use profile::{PatientProfile, PatientSymptom, PsychiatristProfile, Role};
pub use vote::{vote, vote_levels, ParseFailureRecord, VoteSet};

/// Risk substituted for a field that could not be parsed after retries.
pub const FALLBACK_RISK: RiskLevel = RiskLevel::Moderate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSettings {
    pub dialogue_temperature: f64,
    pub diagnosis_temperature: f64,
    /// Extra single-sample requests per unparseable response.
    pub parse_retries: usize,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        GenerationSettings {
            dialogue_temperature: 0.7,
            diagnosis_temperature: 1.0,
            parse_retries: 2,
        }
    }
}

/// Shared, read-only services every agent call needs.
#[derive(Clone, Copy)]
pub struct AgentEnv<'a> {
    pub backend: &'a dyn Backend,
    pub templates: &'a TemplateSet,
    pub ontology: &'a Ontology,
    pub generation: GenerationSettings,
}

/// Per-session call context: which case the calls belong to and the seed
/// forwarded to the backend.
#[derive(Clone, Copy)]
pub struct CallContext<'a> {
    pub env: AgentEnv<'a>,
    pub case_id: &'a str,
    pub seed: Option<u64>,
}

impl<'a> CallContext<'a> {
    pub fn new(env: AgentEnv<'a>, case_id: &'a str) -> Self {
        CallContext {
            env,
            case_id,
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub(crate) fn render(&self, id: TemplateId, slots: &BTreeMap<&str, String>) -> Result<String> {
        render(self.env.templates.get(id), slots)
    }

    pub(crate) fn request(
        &self,
        id: TemplateId,
        turn_index: usize,
        prompt: String,
        sample_count: usize,
        temperature: f64,
    ) -> CompletionRequest {
        CompletionRequest {
            template_id: id,
            case_id: self.case_id.to_string(),
            turn_index,
            sample_offset: 0,
            rendered_prompt: prompt,
            sample_count,
            temperature,
            seed: self.seed,
        }
    }

    pub(crate) fn complete(&self, req: &CompletionRequest) -> Result<Vec<String>> {
        Ok(backend::complete(self.env.backend, req)?)
    }

    pub(crate) fn complete_one(&self, req: &CompletionRequest) -> Result<String> {
        Ok(self.complete(req)?.pop().expect("sample_count is 1"))
    }
}

/// Renders retrieved memory nodes for the `memory` slot. Empty for no nodes.
pub fn render_memory(nodes: &[MemoryNode]) -> String {
    nodes
        .iter()
        .map(|n| {
            let tag = match n.layer {
                MemoryLayer::ConversationRecord => "dialogue",
                MemoryLayer::ElectronicMedicalRecord => "medical record",
                MemoryLayer::DiagnosticSkill => "skill",
            };
            format!("- [{tag} {}] {}\n", n.node_id, n.content.trim())
        })
        .collect()
}

pub fn render_instruction(instruction: &Instruction, ontology: &Ontology) -> String {
    let mut out = format!("Stage: {}\n", instruction.stage_directive);
    if !instruction.focus_symptoms.is_empty() {
        out.push_str("Ask about:\n");
        for id in &instruction.focus_symptoms {
            match ontology.get(id) {
                Some(e) => out.push_str(&format!("- {} ({})\n", e.name, e.probe)),
                None => out.push_str(&format!("- {id}\n")),
            }
        }
    }
    if !instruction.guidance_text.trim().is_empty() {
        out.push_str(&format!("Guidance: {}\n", instruction.guidance_text.trim()));
    }
    out
}

pub fn render_truth(truth: &GroundTruth) -> String {
    format!(
        "Depression risk: {}\nSuicide risk: {}\n",
        truth.depression_risk, truth.suicide_risk
    )
}

pub fn render_diagnosis(diag: &DiagnosisResult) -> String {
    let mut out = format!(
        "Depression risk: {}\nSuicide risk: {}\n",
        diag.depression_risk, diag.suicide_risk
    );
    if !diag.symptom_findings.is_empty() {
        let findings: Vec<String> = diag
            .symptom_findings
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        out.push_str(&format!("Findings: {}\n", findings.join("; ")));
    }
    if !diag.rationale.trim().is_empty() {
        out.push_str(&format!("Rationale: {}\n", diag.rationale.trim()));
    }
    out
}

/// True when `text` states either ground-truth risk in labelled form, e.g.
/// `depression risk: mild` or `SUICIDE_RISK = control`.
pub fn leaks_ground_truth(text: &str, truth: &GroundTruth) -> bool {
    let norm: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c == '_' || c == '-' { ' ' } else { c })
        .collect();
    let words: Vec<&str> = norm
        .split(|c: char| c.is_whitespace() || c == ':' || c == '=')
        .filter(|w| !w.is_empty())
        .collect();
    let check = |label: &str, level: RiskLevel| {
        words.windows(3).any(|w| {
            w[0].ends_with(label)
                && w[1] == "risk"
                && w[2].trim_matches(|c: char| !c.is_alphanumeric()) == level.as_str()
        }) || words.windows(4).any(|w| {
            w[0].ends_with(label)
                && w[1] == "risk"
                && w[2] == "is"
                && w[3].trim_matches(|c: char| !c.is_alphanumeric()) == level.as_str()
        })
    };
    check("depression", truth.depression_risk) || check("suicide", truth.suicide_risk)
}

/// Generates the patient's next reply.
pub fn patient_reply(
    ctx: &CallContext<'_>,
    profile: &PatientProfile,
    history: &mut Transcript,
) -> Result<Utterance> {
    match history.last() {
        None => {
            return Err(Error::Precondition(
                "the psychiatrist opens the session; patient cannot speak first".into(),
            ))
        }
        Some(u) if u.speaker != Speaker::Psychiatrist => {
            return Err(Error::Precondition("patient cannot speak twice in a row".into()))
        }
        _ => {}
    }
    let slots = BTreeMap::from([
        ("profile", profile.render(ctx.env.ontology)),
        ("history", history.render()),
    ]);
    let prompt = ctx.render(TemplateId::PatientReply, &slots)?;
    let req = ctx.request(
        TemplateId::PatientReply,
        history.next_turn_index(),
        prompt,
        1,
        ctx.env.generation.dialogue_temperature,
    );
    let text = ctx.complete_one(&req)?;
    Ok(history.push(Speaker::Patient, text.trim()).clone())
}

/// Generates the psychiatrist's next utterance. `instruction` is `None` when
/// the supervisor plugin is off; `memory` is empty when memory is off.
pub fn psychiatrist_utterance(
    ctx: &CallContext<'_>,
    profile: &PsychiatristProfile,
    memory: &[MemoryNode],
    instruction: Option<&Instruction>,
    history: &mut Transcript,
) -> Result<Utterance> {
    if history.last().is_some_and(|u| u.speaker == Speaker::Psychiatrist) {
        return Err(Error::Precondition("psychiatrist cannot speak twice in a row".into()));
    }
    let slots = BTreeMap::from([
        ("profile", profile.render(ctx.env.ontology)),
        ("memory", render_memory(memory)),
        (
            "instruction",
            instruction
                .map(|i| render_instruction(i, ctx.env.ontology))
                .unwrap_or_default(),
        ),
        ("history", history.render()),
    ]);
    let prompt = ctx.render(TemplateId::Dialogue, &slots)?;
    let req = ctx.request(
        TemplateId::Dialogue,
        history.next_turn_index(),
        prompt,
        1,
        ctx.env.generation.dialogue_temperature,
    );
    let text = ctx.complete_one(&req)?;
    Ok(history.push(Speaker::Psychiatrist, text.trim()).clone())
}

/// Requests `k` diagnosis samples over one shared prompt and parses them.
///
/// `attempt` (1-based) selects the fixture turn for scripted backends. A
/// sample lacking a risk field is re-requested up to `parse_retries` times;
/// if it still fails, the missing field is set to [`FALLBACK_RISK`] and the
/// failure is recorded in the vote set.
pub fn sample_diagnoses(
    ctx: &CallContext<'_>,
    profile: &PsychiatristProfile,
    history: &Transcript,
    memory: &[MemoryNode],
    k: usize,
    attempt: usize,
) -> Result<VoteSet> {
    if history.is_empty() {
        return Err(Error::Precondition("cannot diagnose an empty transcript".into()));
    }
    if k == 0 {
        return Err(Error::Precondition("vote k must be at least 1".into()));
    }
    let slots = BTreeMap::from([
        ("profile", profile.render(ctx.env.ontology)),
        ("memory", render_memory(memory)),
        ("history", history.render()),
    ]);
    let prompt = ctx.render(TemplateId::Diagnosis, &slots)?;
    let turn = attempt.saturating_sub(1);
    let temperature = ctx.env.generation.diagnosis_temperature;
    let req = ctx.request(TemplateId::Diagnosis, turn, prompt.clone(), k, temperature);
    let raw = ctx.complete(&req)?;

    let mut next_offset = k;
    let mut samples = Vec::with_capacity(k);
    let mut failures = Vec::new();
    for (i, text) in raw.into_iter().enumerate() {
        let mut parsed = parse::parse_diagnosis(&text, ctx.env.ontology);
        let mut last_raw = text;
        let mut retries = 0;
        while !parsed.missing_fields().is_empty() && retries < ctx.env.generation.parse_retries {
            let mut retry = ctx.request(TemplateId::Diagnosis, turn, prompt.clone(), 1, temperature);
            retry.sample_offset = next_offset;
            next_offset += 1;
            retries += 1;
            last_raw = ctx.complete_one(&retry)?;
            parsed = parse::parse_diagnosis(&last_raw, ctx.env.ontology);
        }
        let missing = parsed.missing_fields();
        if !missing.is_empty() {
            warn!(case = ctx.case_id, sample = i, ?missing, "diagnosis sample unparseable, using fallback");
            failures.push(ParseFailureRecord {
                sample_index: i,
                missing_fields: missing.iter().map(|s| s.to_string()).collect(),
                raw_response: last_raw,
            });
            parsed.depression_risk.get_or_insert(FALLBACK_RISK);
            parsed.suicide_risk.get_or_insert(FALLBACK_RISK);
        }
        samples.push(parsed.complete().expect("both risks set"));
    }
    Ok(VoteSet {
        samples,
        parse_failures: failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ScriptFile, ScriptedBackend};
    use crate::domain::{SymptomId, SymptomStatus};
    use crate::supervisor::Instruction;
    use crate::domain::SessionStage;

    fn env<'a>(b: &'a ScriptedBackend, t: &'a TemplateSet, o: &'a Ontology) -> AgentEnv<'a> {
        AgentEnv {
            backend: b,
            templates: t,
            ontology: o,
            generation: GenerationSettings::default(),
        }
    }

    fn opened() -> Transcript {
        let mut t = Transcript::new();
        t.push(Speaker::Psychiatrist, "Hello, what brings you here?");
        t
    }

    fn patient() -> PatientProfile {
        PatientProfile {
            case_id: "case-7".into(),
            persona_text: "28-year-old teacher".into(),
            chief_complaint: "cannot sleep".into(),
            life_events: vec!["moved cities".into()],
            symptoms: vec![PatientSymptom {
                id: "sleep-disturbance".into(),
                present: true,
                note: "wakes at 4am".into(),
            }],
        }
    }

    #[test]
    fn patient_reply_uses_fixture_and_next_turn() {
        let mut s = ScriptFile::new();
        s.push(TemplateId::PatientReply, "case-7", 1, 0, "I wake up at four every night.");
        let b = ScriptedBackend::new(s).unwrap();
        let (t, o) = (TemplateSet::default(), Ontology::default());
        let ctx = CallContext::new(env(&b, &t, &o), "case-7");
        let mut h = opened();
        let u = patient_reply(&ctx, &patient(), &mut h).unwrap();
        assert_eq!(u.text, "I wake up at four every night.");
        assert_eq!(u.turn_index, 1);
        assert_eq!(h.len(), 2);
    }

    #[test]
    fn patient_never_opens() {
        let b = ScriptedBackend::new(ScriptFile::new()).unwrap();
        let (t, o) = (TemplateSet::default(), Ontology::default());
        let ctx = CallContext::new(env(&b, &t, &o), "case-7");
        let err = patient_reply(&ctx, &patient(), &mut Transcript::new()).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn instruction_slot_follows_plugin_state() {
        let mut s = ScriptFile::new();
        s.push(TemplateId::Dialogue, "c", 0, 0, "Hello.");
        let b = crate::backend::RecordingBackend::new(std::sync::Arc::new(ScriptedBackend::new(s).unwrap()));
        let (t, o) = (TemplateSet::default(), Ontology::default());
        let e = AgentEnv { backend: &b, templates: &t, ontology: &o, generation: GenerationSettings::default() };
        let ctx = CallContext::new(e, "c");
        let ins = Instruction {
            focus_symptoms: vec![SymptomId::from("anhedonia")],
            guidance_text: "Ask gently.".into(),
            stage_directive: SessionStage::Start,
        };
        let prof = PsychiatristProfile::default();
        psychiatrist_utterance(&ctx, &prof, &[], Some(&ins), &mut Transcript::new()).unwrap();
        psychiatrist_utterance(&ctx, &prof, &[], None, &mut Transcript::new()).unwrap();
        let calls = b.calls();
        assert!(calls[0].request.rendered_prompt.contains("Guidance: Ask gently."));
        assert!(calls[0].request.rendered_prompt.contains("Loss of interest or pleasure"));
        assert!(!calls[1].request.rendered_prompt.contains("Guidance:"));
        assert!(!calls[1].request.rendered_prompt.contains("Stage:"));
    }

    fn diag_text(dep: &str, su: &str) -> String {
        format!("DEPRESSION_RISK: {dep}\nSUICIDE_RISK: {su}\nFINDINGS: fatigue=present\nRATIONALE: r")
    }

    #[test]
    fn samples_k_diagnoses() {
        let mut s = ScriptFile::new();
        let fixtures = [("mild", "control"), ("mild", "control"), ("moderate", "mild"), ("mild", "control"), ("severe", "mild")];
        for (i, (d, su)) in fixtures.iter().enumerate() {
            s.push(TemplateId::Diagnosis, "c", 0, i, diag_text(d, su));
        }
        let b = ScriptedBackend::new(s).unwrap();
        let (t, o) = (TemplateSet::default(), Ontology::default());
        let ctx = CallContext::new(env(&b, &t, &o), "c");
        let votes = sample_diagnoses(&ctx, &PsychiatristProfile::default(), &opened(), &[], 5, 1).unwrap();
        assert_eq!(votes.len(), 5);
        assert!(votes.parse_failures.is_empty());
        assert_eq!(votes.samples[2].depression_risk, RiskLevel::Moderate);
        assert_eq!(votes.samples[4].depression_risk, RiskLevel::Severe);
        assert_eq!(votes.samples[0].symptom_findings[&SymptomId::from("fatigue")], SymptomStatus::Present);
        let d = vote(&votes);
        assert_eq!((d.depression_risk, d.suicide_risk), (RiskLevel::Mild, RiskLevel::Control));
    }

    #[test]
    fn missing_field_retries_then_flags_fallback() {
        let mut s = ScriptFile::new();
        s.push(TemplateId::Diagnosis, "c", 0, 0, "DEPRESSION_RISK: mild\nRATIONALE: no suicide field");
        s.push(TemplateId::Diagnosis, "c", 0, 1, diag_text("mild", "control"));
        // retries for sample 0 draw sample indices 2 and 3
        s.push(TemplateId::Diagnosis, "c", 0, 2, "still nothing useful");
        s.push(TemplateId::Diagnosis, "c", 0, 3, "DEPRESSION_RISK: severe");
        let b = ScriptedBackend::new(s).unwrap();
        let (t, o) = (TemplateSet::default(), Ontology::default());
        let ctx = CallContext::new(env(&b, &t, &o), "c");
        let votes = sample_diagnoses(&ctx, &PsychiatristProfile::default(), &opened(), &[], 2, 1).unwrap();
        assert_eq!(votes.len(), 2);
        assert_eq!(votes.parse_failures.len(), 1);
        assert_eq!(votes.parse_failures[0].missing_fields, vec!["suicide_risk"]);
        assert_eq!(votes.samples[0].depression_risk, RiskLevel::Severe);
        assert_eq!(votes.samples[0].suicide_risk, FALLBACK_RISK);
    }

    #[test]
    fn retry_recovers_from_bad_sample() {
        let mut s = ScriptFile::new();
        s.push(TemplateId::Diagnosis, "c", 1, 0, "garbled");
        s.push(TemplateId::Diagnosis, "c", 1, 1, diag_text("control", "control"));
        let b = ScriptedBackend::new(s).unwrap();
        let (t, o) = (TemplateSet::default(), Ontology::default());
        let ctx = CallContext::new(env(&b, &t, &o), "c");
        let votes = sample_diagnoses(&ctx, &PsychiatristProfile::default(), &opened(), &[], 1, 2).unwrap();
        assert!(votes.parse_failures.is_empty());
        assert_eq!(votes.samples[0].depression_risk, RiskLevel::Control);
    }

    #[test]
    fn leak_detection() {
        let truth = GroundTruth { depression_risk: RiskLevel::Mild, suicide_risk: RiskLevel::Control };
        assert!(leaks_ground_truth(&render_truth(&truth), &truth));
        assert!(leaks_ground_truth("SUICIDE_RISK = control", &truth));
        assert!(leaks_ground_truth("the depression risk is mild.", &truth));
        assert!(!leaks_ground_truth("DEPRESSION_RISK: <one of control, mild, moderate, severe>", &truth));
        assert!(!leaks_ground_truth("depression risk: severe", &truth));
        assert!(!leaks_ground_truth("I feel mild sadness", &truth));
    }

    #[test]
    fn patient_profile_hides_truth() {
        let o = Ontology::default();
        let text = patient().render(&o);
        assert!(text.contains("wakes at 4am"));
        assert!(!text.to_lowercase().contains("risk"));
    }
}
