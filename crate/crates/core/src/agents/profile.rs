use serde::{Deserialize, Serialize};

use crate::domain::{Ontology, PatientCase, SymptomId};

const DEFAULT_PSYCHIATRIST: &str = include_str!("../../templates/psychiatrist_profile.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Patient,
    Psychiatrist,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientSymptom {
    pub id: SymptomId,
    pub present: bool,
    pub note: String,
}

/// What a patient agent knows about itself. Built from a case with the
/// ground-truth risks left out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub case_id: String,
    pub persona_text: String,
    pub chief_complaint: String,
    pub life_events: Vec<String>,
    pub symptoms: Vec<PatientSymptom>,
}

impl PatientProfile {
    pub fn role(&self) -> Role {
        Role::Patient
    }

    pub fn from_case(case: &PatientCase, ontology: &Ontology) -> Self {
        // ontology order keeps the rendering stable
        let mut symptoms: Vec<PatientSymptom> = case
            .symptoms
            .iter()
            .map(|(id, fact)| PatientSymptom {
                id: id.clone(),
                present: fact.present,
                note: fact.severity_note.clone(),
            })
            .collect();
        symptoms.sort_by_key(|s| ontology.position(&s.id).unwrap_or(usize::MAX));
        PatientProfile {
            case_id: case.case_id.clone(),
            persona_text: case.portrait.clone(),
            chief_complaint: case.chief_complaint.clone(),
            life_events: case.life_events.clone(),
            symptoms,
        }
    }

    pub fn render(&self, ontology: &Ontology) -> String {
        let mut out = format!("Who you are: {}\n", self.persona_text.trim());
        out.push_str(&format!("Why you came: {}\n", self.chief_complaint.trim()));
        if !self.life_events.is_empty() {
            out.push_str("Things that happened in your life:\n");
            for e in &self.life_events {
                out.push_str(&format!("- {}\n", e.trim()));
            }
        }
        let name = |id: &SymptomId| {
            ontology
                .get(id)
                .map(|e| format!("{} ({})", e.name, e.probe))
                .unwrap_or_else(|| id.to_string())
        };
        let present: Vec<_> = self.symptoms.iter().filter(|s| s.present).collect();
        let absent: Vec<_> = self.symptoms.iter().filter(|s| !s.present).collect();
        if !present.is_empty() {
            out.push_str("What you have been experiencing:\n");
            for s in present {
                if s.note.trim().is_empty() {
                    out.push_str(&format!("- {}\n", name(&s.id)));
                } else {
                    out.push_str(&format!("- {}: {}\n", name(&s.id), s.note.trim()));
                }
            }
        }
        if !absent.is_empty() {
            out.push_str("What you have NOT been experiencing:\n");
            for s in absent {
                out.push_str(&format!("- {}\n", name(&s.id)));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PsychiatristProfile {
    pub persona_text: String,
}

impl PsychiatristProfile {
    pub fn role(&self) -> Role {
        Role::Psychiatrist
    }

    /// Persona plus the symptom checklist the psychiatrist works from.
    pub fn render(&self, ontology: &Ontology) -> String {
        let mut out = self.persona_text.trim_end().to_string();
        out.push_str("\nSymptom checklist (id: name):\n");
        for e in ontology.entries() {
            out.push_str(&format!("- {}: {}\n", e.id, e.name));
        }
        out
    }
}

impl Default for PsychiatristProfile {
    fn default() -> Self {
        PsychiatristProfile {
            persona_text: DEFAULT_PSYCHIATRIST.to_string(),
        }
    }
}
