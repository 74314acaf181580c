//! Case files: one schema-versioned JSON document per split.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{Ontology, PatientCase};
use crate::error::{Error, Result};

pub const CASE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub version: u32,
    pub cases: Vec<PatientCase>,
}

impl CaseFile {
    pub fn new(cases: Vec<PatientCase>) -> Self {
        CaseFile {
            version: CASE_SCHEMA_VERSION,
            cases,
        }
    }
}

/// Parses and validates a case document.
pub fn parse_cases(text: &str, ontology: &Ontology) -> Result<Vec<PatientCase>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: CaseFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::schema(if path.is_empty() { ".".into() } else { path }, e.into_inner().to_string())
    })?;
    if file.version != CASE_SCHEMA_VERSION {
        return Err(Error::schema(
            "version",
            format!("unsupported version {} (expected {CASE_SCHEMA_VERSION})", file.version),
        ));
    }
    let mut seen = HashSet::new();
    for (i, case) in file.cases.iter().enumerate() {
        let at = |field: &str| format!("cases[{i}].{field}");
        if case.case_id.trim().is_empty() {
            return Err(Error::schema(at("case_id"), "must not be empty"));
        }
        if !seen.insert(case.case_id.as_str()) {
            return Err(Error::schema(at("case_id"), format!("duplicate case id `{}`", case.case_id)));
        }
        for id in case.symptoms.keys() {
            if !ontology.contains(id) {
                return Err(Error::schema(
                    at("symptoms"),
                    format!("symptom `{id}` is not in the ontology"),
                ));
            }
        }
        case.original_dialogue
            .validate()
            .map_err(|m| Error::schema(at("original_dialogue"), m))?;
    }
    Ok(file.cases)
}

pub fn load_cases(path: &Path, ontology: &Ontology) -> Result<Vec<PatientCase>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cases(&text, ontology).map_err(|e| match e {
        Error::SchemaViolation { path: p, message } => Error::SchemaViolation {
            path: format!("{}: {p}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn cases_to_json(cases: &[PatientCase]) -> String {
    let mut s = serde_json::to_string_pretty(&CaseFile::new(cases.to_vec())).expect("cases serialize");
    s.push('\n');
    s
}

pub fn save_cases(path: &Path, cases: &[PatientCase]) -> Result<()> {
    std::fs::write(path, cases_to_json(cases)).map_err(|e| Error::io(path, e))
}
