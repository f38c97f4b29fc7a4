//! Survey items and their ordinal response scales.
//!
//! A questionnaire is a JSON document with top-level `metadata` and
//! `questions[]`; each question carries an `id`, the external `source_code` it
//! was adapted from, the `prompt_text` inserted into the persona prompt, and an
//! ordinal `scale` with anchor labels for score 1 and score `cardinality`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuestionnaireError {
    #[error("failed to read questionnaire file `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed questionnaire document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("duplicate question id `{id}`")]
    DuplicateId { id: String },
    #[error("question `{id}`: field `{field}` must not be empty")]
    EmptyField { id: String, field: &'static str },
    #[error("question `{id}`: cardinality must be at least 2, got {cardinality}")]
    CardinalityTooSmall { id: String, cardinality: u32 },
    #[error("question `{id}`: level_labels has {got} entries, expected cardinality {expected}")]
    LevelLabelCount {
        id: String,
        got: usize,
        expected: u32,
    },
    #[error("question `{id}`: {end} level label `{got}` does not match the {end} anchor `{expected}`")]
    LevelLabelAnchor {
        id: String,
        end: &'static str,
        got: String,
        expected: String,
    },
}

/// Ordinal response scale: integer scores `1..=cardinality`, with score 1
/// meaning `low_label` and score `cardinality` meaning `high_label`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseScale {
    pub cardinality: u32,
    pub low_label: String,
    pub high_label: String,
    /// Optional label for every level, ordered from score 1 upward. When
    /// present its length must equal `cardinality` and its first and last
    /// entries must repeat the anchors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_labels: Option<Vec<String>>,
}

impl ResponseScale {
    pub fn binary(low_label: impl Into<String>, high_label: impl Into<String>) -> Self {
        Self {
            cardinality: 2,
            low_label: low_label.into(),
            high_label: high_label.into(),
            level_labels: None,
        }
    }

    /// Human-readable label for an in-range score.
    pub fn label_for(&self, score: u32) -> String {
        debug_assert!(score >= 1 && score <= self.cardinality);
        if let Some(labels) = &self.level_labels {
            if let Some(label) = labels.get(score as usize - 1) {
                return label.clone();
            }
        }
        if score == 1 {
            self.low_label.clone()
        } else if score == self.cardinality {
            self.high_label.clone()
        } else {
            format!("{} on a {}-point scale", score, self.cardinality)
        }
    }
}

/// One survey item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    /// Short internal name, unique within a questionnaire.
    pub id: String,
    /// External variable id the item was adapted from (e.g. a survey codebook code).
    pub source_code: String,
    /// Text inserted verbatim into the prompt's policy-proposal slot.
    pub prompt_text: String,
    pub scale: ResponseScale,
}

/// Ordered list of questions plus free-form metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Questionnaire {
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub questions: Vec<Question>,
}

impl Questionnaire {
    /// Parses and validates a questionnaire from JSON text.
    pub fn from_json_str(text: &str) -> Result<Self, QuestionnaireError> {
        let questionnaire: Questionnaire = serde_json::from_str(text)?;
        questionnaire.validate()?;
        Ok(questionnaire)
    }

    /// The bundled default questionnaire: seven items adapted from the 2022
    /// CES questionnaire.
    pub fn ces2022() -> Self {
        Self::from_json_str(include_str!("../fixtures/questionnaire_ces2022.json"))
            .expect("bundled questionnaire fixture is valid")
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.questions.iter().map(|q| q.id.as_str()).collect()
    }

    /// Canonical JSON serialization (stable field and map ordering).
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("questionnaire serializes")
    }

    /// Hex SHA-256 of the canonical serialization; used as the cache key
    /// component that pins elicited responses to the questionnaire content.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_json_string().as_bytes());
        hex_string(&hasher.finalize())
    }

    pub fn validate(&self) -> Result<(), QuestionnaireError> {
        let mut seen = BTreeSet::new();
        for q in &self.questions {
            if q.id.is_empty() {
                return Err(QuestionnaireError::EmptyField {
                    id: "<unnamed>".into(),
                    field: "id",
                });
            }
            if !seen.insert(q.id.clone()) {
                return Err(QuestionnaireError::DuplicateId { id: q.id.clone() });
            }
            if q.prompt_text.is_empty() {
                return Err(QuestionnaireError::EmptyField {
                    id: q.id.clone(),
                    field: "prompt_text",
                });
            }
            let scale = &q.scale;
            if scale.cardinality < 2 {
                return Err(QuestionnaireError::CardinalityTooSmall {
                    id: q.id.clone(),
                    cardinality: scale.cardinality,
                });
            }
            if scale.low_label.is_empty() {
                return Err(QuestionnaireError::EmptyField {
                    id: q.id.clone(),
                    field: "low_label",
                });
            }
            if scale.high_label.is_empty() {
                return Err(QuestionnaireError::EmptyField {
                    id: q.id.clone(),
                    field: "high_label",
                });
            }
            if let Some(labels) = &scale.level_labels {
                if labels.len() != scale.cardinality as usize {
                    return Err(QuestionnaireError::LevelLabelCount {
                        id: q.id.clone(),
                        got: labels.len(),
                        expected: scale.cardinality,
                    });
                }
                if labels.first() != Some(&scale.low_label) {
                    return Err(QuestionnaireError::LevelLabelAnchor {
                        id: q.id.clone(),
                        end: "first",
                        got: labels.first().cloned().unwrap_or_default(),
                        expected: scale.low_label.clone(),
                    });
                }
                if labels.last() != Some(&scale.high_label) {
                    return Err(QuestionnaireError::LevelLabelAnchor {
                        id: q.id.clone(),
                        end: "last",
                        got: labels.last().cloned().unwrap_or_default(),
                        expected: scale.high_label.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Loads and validates a questionnaire file.
pub fn load_questionnaire(path: impl AsRef<Path>) -> Result<Questionnaire, QuestionnaireError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| QuestionnaireError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Questionnaire::from_json_str(&text)
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
