//! Prompt templates with named `{slot}` placeholders.
//!
//! `{{` and `}}` produce literal braces. Substitution is a single pass, so a
//! slot value that itself contains `{profile}` is emitted verbatim.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every slot name a template may reference.
pub const SLOTS: [&str; 7] = [
    "profile",
    "memory",
    "instruction",
    "history",
    "truth",
    "diag",
    "tracking",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Dialogue,
    Diagnosis,
    Emr,
    Instruction,
    Skill,
    PatientReply,
}

impl TemplateId {
    pub const ALL: [TemplateId; 6] = [
        TemplateId::Dialogue,
        TemplateId::Diagnosis,
        TemplateId::Emr,
        TemplateId::Instruction,
        TemplateId::Skill,
        TemplateId::PatientReply,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Dialogue => "dialogue",
            TemplateId::Diagnosis => "diagnosis",
            TemplateId::Emr => "emr",
            TemplateId::Instruction => "instruction",
            TemplateId::Skill => "skill",
            TemplateId::PatientReply => "patient_reply",
        }
    }

    /// Slots that must be bound when rendering; the rest render empty.
    pub fn required_slots(self) -> &'static [&'static str] {
        match self {
            TemplateId::Dialogue => &["profile", "history"],
            TemplateId::Diagnosis => &["profile", "history"],
            TemplateId::Emr => &["history"],
            TemplateId::Instruction => &["profile", "tracking", "history"],
            TemplateId::Skill => &["profile", "history", "truth", "diag"],
            TemplateId::PatientReply => &["profile", "history"],
        }
    }

    fn default_body(self) -> &'static str {
        match self {
            TemplateId::Dialogue => include_str!("../../templates/dialogue.txt"),
            TemplateId::Diagnosis => include_str!("../../templates/diagnosis.txt"),
            TemplateId::Emr => include_str!("../../templates/emr.txt"),
            TemplateId::Instruction => include_str!("../../templates/instruction.txt"),
            TemplateId::Skill => include_str!("../../templates/skill.txt"),
            TemplateId::PatientReply => include_str!("../../templates/patient_reply.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub template_id: TemplateId,
    body: String,
    segments: Vec<Segment>,
    required: BTreeSet<&'static str>,
}

impl PromptTemplate {
    pub fn new(template_id: TemplateId, body: impl Into<String>) -> Result<Self> {
        let body = body.into();
        let segments = parse_body(template_id, &body)?;
        Ok(PromptTemplate {
            template_id,
            body,
            segments,
            required: template_id.required_slots().iter().copied().collect(),
        })
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Slot names the body actually references.
    pub fn referenced_slots(&self) -> BTreeSet<&'static str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(name) => Some(*name),
                Segment::Text(_) => None,
            })
            .collect()
    }
}

fn parse_body(template_id: TemplateId, body: &str) -> Result<Vec<Segment>> {
    let mut segments = Vec::new();
    let mut text = String::new();
    let mut rest = body;
    while let Some(c) = rest.chars().next() {
        if rest.starts_with("{{") {
            text.push('{');
            rest = &rest[2..];
            continue;
        }
        if rest.starts_with("}}") {
            text.push('}');
            rest = &rest[2..];
            continue;
        }
        if c == '{' {
            let name_len = rest[1..]
                .find(|ch: char| !(ch.is_ascii_lowercase() || ch == '_'))
                .unwrap_or(rest.len() - 1);
            if name_len > 0 && rest[1 + name_len..].starts_with('}') {
                let name = &rest[1..1 + name_len];
                let slot = SLOTS.iter().find(|s| **s == name).ok_or_else(|| {
                    Error::UnknownSlot {
                        template: template_id.to_string(),
                        slot: name.to_string(),
                    }
                })?;
                if !text.is_empty() {
                    segments.push(Segment::Text(std::mem::take(&mut text)));
                }
                segments.push(Segment::Slot(slot));
                rest = &rest[name_len + 2..];
                continue;
            }
        }
        text.push(c);
        rest = &rest[c.len_utf8()..];
    }
    if !text.is_empty() {
        segments.push(Segment::Text(text));
    }
    Ok(segments)
}

/// Substitutes slot values into the template body.
pub fn render(template: &PromptTemplate, slots: &BTreeMap<&str, String>) -> Result<String> {
    for name in slots.keys() {
        if !SLOTS.contains(name) {
            return Err(Error::UnknownSlot {
                template: template.template_id.to_string(),
                slot: name.to_string(),
            });
        }
    }
    for name in &template.required {
        if !slots.contains_key(name) {
            return Err(Error::MissingSlot {
                template: template.template_id.to_string(),
                slot: name.to_string(),
            });
        }
    }
    let mut out = String::with_capacity(template.body.len() + 256);
    for seg in &template.segments {
        match seg {
            Segment::Text(t) => out.push_str(t),
            Segment::Slot(name) => {
                if let Some(v) = slots.get(name) {
                    out.push_str(v);
                }
            }
        }
    }
    Ok(out)
}

/// One template per [`TemplateId`].
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: HashMap<TemplateId, PromptTemplate>,
}

impl TemplateSet {
    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    pub fn set(&mut self, template: PromptTemplate) {
        self.templates.insert(template.template_id, template);
    }

    /// Defaults overridden by any `<template_id>.txt` present in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut set = TemplateSet::default();
        for id in TemplateId::ALL {
            let path = dir.join(format!("{}.txt", id.as_str()));
            if path.exists() {
                let body = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                set.set(PromptTemplate::new(id, body)?);
            }
        }
        Ok(set)
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        let templates = TemplateId::ALL
            .iter()
            .map(|&id| {
                let t = PromptTemplate::new(id, id.default_body()).expect("bundled template");
                (id, t)
            })
            .collect();
        TemplateSet { templates }
    }
}
