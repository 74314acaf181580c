use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SymptomId;
use crate::error::{Error, Result};

const DEFAULT_ONTOLOGY: &str = include_str!("../../templates/ontology.toml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymptomEntry {
    pub id: SymptomId,
    pub name: String,
    #[serde(default)]
    pub probe: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct OntologyFile {
    symptom: Vec<SymptomEntry>,
}

/// Ordered symptom list. Order matters: tracking queues follow it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    entries: Vec<SymptomEntry>,
    index: HashMap<SymptomId, usize>,
}

impl Ontology {
    pub fn new(entries: Vec<SymptomEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("symptom ontology is empty".into()));
        }
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.id.as_str().trim().is_empty() {
                return Err(Error::schema(format!("symptom[{i}].id"), "empty id"));
            }
            if index.insert(e.id.clone(), i).is_some() {
                return Err(Error::schema(
                    format!("symptom[{i}].id"),
                    format!("duplicate id `{}`", e.id),
                ));
            }
        }
        Ok(Ontology { entries, index })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: OntologyFile =
            toml::from_str(text).map_err(|e| Error::schema("ontology", e.to_string()))?;
        Self::new(file.symptom)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&OntologyFile {
            symptom: self.entries.clone(),
        })
        .expect("ontology serializes")
    }

    pub fn entries(&self) -> &[SymptomEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = &SymptomId> {
        self.entries.iter().map(|e| &e.id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &SymptomId) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &SymptomId) -> Option<&SymptomEntry> {
        self.index.get(id).map(|&i| &self.entries[i])
    }

    pub fn position(&self, id: &SymptomId) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Resolves loose spellings ("Sleep disturbance", "sleep_disturbance")
    /// to a known id.
    pub fn resolve(&self, raw: &str) -> Option<SymptomId> {
        let norm = normalise(raw);
        self.entries
            .iter()
            .find(|e| normalise(e.id.as_str()) == norm || normalise(&e.name) == norm)
            .map(|e| e.id.clone())
    }
}

impl Default for Ontology {
    fn default() -> Self {
        Ontology::from_toml_str(DEFAULT_ONTOLOGY).expect("bundled ontology is valid")
    }
}

fn normalise(s: &str) -> String {
    s.trim()
        .chars()
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect::<String>()
        .split('-')
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("-")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_twenty_entries() {
        let o = Ontology::default();
        assert_eq!(o.len(), 20);
        assert!(o.contains(&SymptomId::from("suicidal-ideation")));
        assert!(o.contains(&SymptomId::from("self-harm")));
        assert_eq!(o.position(&SymptomId::from("depressed-mood")), Some(0));
    }

    #[test]
    fn resolves_loose_spellings() {
        let o = Ontology::default();
        assert_eq!(
            o.resolve("Sleep_Disturbance"),
            Some(SymptomId::from("sleep-disturbance"))
        );
        assert_eq!(o.resolve("Difficulty concentrating"), Some("concentration-difficulty".into()));
        assert_eq!(o.resolve("telepathy"), None);
    }

    #[test]
    fn rejects_duplicates() {
        let text = "[[symptom]]\nid = \"a\"\nname = \"A\"\n[[symptom]]\nid = \"a\"\nname = \"B\"\n";
        assert!(matches!(
            Ontology::from_toml_str(text),
            Err(Error::SchemaViolation { .. })
        ));
    }

    #[test]
    fn toml_roundtrip() {
        let o = Ontology::default();
        assert_eq!(Ontology::from_toml_str(&o.to_toml_string()).unwrap(), o);
    }
}
