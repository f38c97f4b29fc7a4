//! Persona prompt rendering.
//!
//! The user prompt asks for a one-paragraph letter to the editor from the
//! perspective of a persona, preceded by a "Position score:" line. Scale
//! anchors are spelled out in the prompt ("1 represents the position X") so
//! that the model cannot flip the polarity of the scale; the score is aligned
//! to the same ordinal scale the human survey used. The wording is fixed:
//! downstream statistics assume every respondent saw the identical instrument.

use crate::demographics::DemographicProfile;
use crate::questionnaire::Question;

/// The default system prompt for chat-completion backends.
pub const DEFAULT_SYSTEM_PROMPT: &str = "You are a helpful assistant";

/// A fully rendered single-turn exchange: system prompt plus user prompt for
/// one (question, persona) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptContext {
    pub profile: DemographicProfile,
    pub question: Question,
    pub rendered_system: String,
    pub rendered_user: String,
}

/// Prompt renderer with a configurable system prompt. The user-prompt wording
/// is not configurable.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    system_prompt: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            system_prompt: DEFAULT_SYSTEM_PROMPT.to_string(),
        }
    }
}

impl PromptTemplate {
    pub fn with_system_prompt(system_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
        }
    }

    pub fn system_prompt(&self) -> &str {
        &self.system_prompt
    }

    pub fn render(&self, question: &Question, profile: &DemographicProfile) -> PromptContext {
        let scale = &question.scale;
        let rendered_user = format!(
            "Please write a 1 paragraph letter to the editor from the perspective of a \
             politically {ideology} {gender} in the age range of {age} years who identifies \
             as {race} expressing a clear point of view on the policy proposal to: \
             \"{issue}\". Before the letter, summarize their position with a \
             \"Position score:\" statement followed by a single number (strictly numeric, \
             with no other description) representing the person's position on the issue on \
             a {cardinality}-point scale, where 1 represents the position \"{low}\" and \
             {cardinality} represents the position \"{high}\".",
            ideology = profile.ideology,
            gender = profile.gender,
            age = profile.age_bin,
            race = profile.race,
            issue = question.prompt_text,
            cardinality = scale.cardinality,
            low = scale.low_label,
            high = scale.high_label,
        );
        PromptContext {
            profile: profile.clone(),
            question: question.clone(),
            rendered_system: self.system_prompt.clone(),
            rendered_user,
        }
    }
}

/// Renders with the default system prompt.
pub fn render_prompt(question: &Question, profile: &DemographicProfile) -> PromptContext {
    PromptTemplate::default().render(question, profile)
}
