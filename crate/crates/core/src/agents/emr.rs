use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::parse::{find, parse_status_lines, sections, Section};
use super::CallContext;
use crate::backend::TemplateId;
use crate::domain::{Ontology, SymptomId, SymptomStatus, Transcript};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmrSymptom {
    pub status: SymptomStatus,
    #[serde(default)]
    pub note: String,
}

/// Electronic medical record summarised from one transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EMRecord {
    pub case_id: String,
    pub portrait_summary: String,
    pub chief_complaint: String,
    pub symptom_summary: BTreeMap<SymptomId, EmrSymptom>,
    pub free_text: String,
    /// Set when no response could be parsed; `free_text` then holds the raw
    /// text of the last response.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unparsed: bool,
}

impl EMRecord {
    /// Text stored in the EMR memory layer and used as the diagnosis-time
    /// retrieval query.
    pub fn to_memory_text(&self) -> String {
        let mut out = String::new();
        if !self.portrait_summary.is_empty() {
            out.push_str(&format!("Portrait: {}\n", self.portrait_summary));
        }
        if !self.chief_complaint.is_empty() {
            out.push_str(&format!("Chief complaint: {}\n", self.chief_complaint));
        }
        if !self.symptom_summary.is_empty() {
            out.push_str("Symptoms:\n");
            for (id, s) in &self.symptom_summary {
                if s.note.is_empty() {
                    out.push_str(&format!("- {id}: {}\n", s.status));
                } else {
                    out.push_str(&format!("- {id}: {} | {}\n", s.status, s.note));
                }
            }
        }
        if !self.free_text.is_empty() {
            out.push_str(&format!("Summary: {}\n", self.free_text));
        }
        out
    }
}

const EMR_KEYS: [&str; 4] = ["portrait", "chief complaint", "symptoms", "summary"];

/// Parses an EMR response. `None` when neither a symptom list nor a summary
/// section is present.
pub fn parse_emr(case_id: &str, text: &str, ontology: &Ontology) -> Option<EMRecord> {
    let secs = sections(text, &EMR_KEYS);
    let symptoms = find(&secs, "symptoms");
    let summary = find(&secs, "summary");
    if symptoms.is_none() && summary.is_none() {
        return None;
    }
    let symptom_summary = symptoms
        .map(|s| {
            parse_status_lines(&s.full_text(), ontology)
                .into_iter()
                .map(|(id, status, note)| (id, EmrSymptom { status, note }))
                .collect()
        })
        .unwrap_or_default();
    let text_of = |key| find(&secs, key).map(Section::full_text).unwrap_or_default();
    Some(EMRecord {
        case_id: case_id.to_string(),
        portrait_summary: text_of("portrait"),
        chief_complaint: text_of("chief complaint"),
        symptom_summary,
        free_text: text_of("summary"),
        unparsed: false,
    })
}

/// Summarises the full transcript into an EMR. Unparseable responses are
/// re-requested up to `parse_retries` times (sample indices 1, 2, ...); after
/// that the record keeps the raw text and is flagged `unparsed`.
pub fn summarize_emr(ctx: &CallContext<'_>, history: &Transcript) -> Result<EMRecord> {
    if history.is_empty() {
        return Err(Error::Precondition("cannot summarise an empty transcript".into()));
    }
    let slots = BTreeMap::from([("history", history.render())]);
    let prompt = ctx.render(TemplateId::Emr, &slots)?;
    let mut last = String::new();
    for attempt in 0..=ctx.env.generation.parse_retries {
        let mut req = ctx.request(TemplateId::Emr, 0, prompt.clone(), 1, ctx.env.generation.dialogue_temperature);
        req.sample_offset = attempt;
        last = ctx.complete_one(&req)?;
        if let Some(record) = parse_emr(ctx.case_id, &last, ctx.env.ontology) {
            return Ok(record);
        }
    }
    warn!(case = ctx.case_id, "EMR response unparseable, keeping raw text");
    Ok(EMRecord {
        case_id: ctx.case_id.to_string(),
        portrait_summary: String::new(),
        chief_complaint: String::new(),
        symptom_summary: BTreeMap::new(),
        free_text: last.trim().to_string(),
        unparsed: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentEnv, GenerationSettings};
    use crate::backend::{ScriptFile, ScriptedBackend, TemplateSet};
    use crate::domain::Speaker;

    const EMR: &str = "PORTRAIT: 34-year-old female nurse, married\nCHIEF_COMPLAINT: Low mood for two months.\nSYMPTOMS:\n- depressed-mood: present | most days, worse mornings\n- sleep-disturbance: present | early waking\n- suicidal-ideation: absent\n- levitation: present\nSUMMARY: Moderate depressive picture.";

    fn history() -> Transcript {
        let mut t = Transcript::new();
        t.push(Speaker::Psychiatrist, "How are you?");
        t.push(Speaker::Patient, "Low.");
        t
    }

    #[test]
    fn parses_fixture_and_drops_unknown_symptoms() {
        let r = parse_emr("c1", EMR, &Ontology::default()).unwrap();
        assert_eq!(r.chief_complaint, "Low mood for two months.");
        assert_eq!(r.symptom_summary.len(), 3);
        let mood = &r.symptom_summary[&SymptomId::from("depressed-mood")];
        assert_eq!(mood.status, SymptomStatus::Present);
        assert_eq!(mood.note, "most days, worse mornings");
        assert!(r.to_memory_text().contains("- sleep-disturbance: present | early waking"));
    }

    #[test]
    fn summarize_uses_fixture_and_retries() {
        let mut s = ScriptFile::new();
        s.push(TemplateId::Emr, "c1", 0, 0, "no structure at all");
        s.push(TemplateId::Emr, "c1", 0, 1, EMR);
        let b = ScriptedBackend::new(s).unwrap();
        let (t, o) = (TemplateSet::default(), Ontology::default());
        let env = AgentEnv { backend: &b, templates: &t, ontology: &o, generation: GenerationSettings::default() };
        let ctx = CallContext::new(env, "c1");
        let r = summarize_emr(&ctx, &history()).unwrap();
        assert!(!r.unparsed);
        assert_eq!(r.portrait_summary, "34-year-old female nurse, married");
    }

    #[test]
    fn unparseable_after_retries_is_flagged() {
        let mut s = ScriptFile::new();
        for i in 0..3 {
            s.push(TemplateId::Emr, "c1", 0, i, format!("junk {i}"));
        }
        let b = ScriptedBackend::new(s).unwrap();
        let (t, o) = (TemplateSet::default(), Ontology::default());
        let env = AgentEnv { backend: &b, templates: &t, ontology: &o, generation: GenerationSettings::default() };
        let r = summarize_emr(&CallContext::new(env, "c1"), &history()).unwrap();
        assert!(r.unparsed);
        assert_eq!(r.free_text, "junk 2");
    }

    #[test]
    fn empty_transcript_rejected() {
        let b = ScriptedBackend::new(ScriptFile::new()).unwrap();
        let (t, o) = (TemplateSet::default(), Ontology::default());
        let env = AgentEnv { backend: &b, templates: &t, ontology: &o, generation: GenerationSettings::default() };
        assert!(summarize_emr(&CallContext::new(env, "c1"), &Transcript::new()).is_err());
    }
}
