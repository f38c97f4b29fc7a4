//! Synthetic issue-polling harness.
//!
//! `pollsim` renders demographic persona prompts for survey questions, elicits
//! single-turn chat completions from a live HTTP endpoint or a seeded mock
//! respondent, extracts the ordinal "Position score" from each completion, and
//! compares the synthetic panel against human survey data: per-crosstab means,
//! bootstrap confidence intervals, Pearson correlation, and MAPE.
//!
//! Pipeline stages map onto modules:
//!
//! - [`questionnaire`] — survey items and their ordinal response scales
//! - [`demographics`] — demographic schema, crosstab cells, balanced sampling plan
//! - [`prompting`] — persona prompt rendering
//! - [`backend`] — chat-completion clients (live HTTP) and cost accounting
//! - [`mock`] — deterministic seeded mock respondent
//! - [`parsing`] — position-score extraction and parse reporting
//! - [`human_data`] — CSV ingestion and ordinal recoding of human survey data
//! - [`stats`] — cell summaries, bootstrap CIs, Pearson r, MAPE, histograms
//! - [`report`] — CSV tables, run manifest, SVG charts
//! - [`runner`] — CLI orchestration: plan, run (with cache/resume), compare

pub mod backend;
pub mod demographics;
pub mod human_data;
pub mod mock;
pub mod parsing;
pub mod prompting;
pub mod questionnaire;
pub mod report;
pub mod runner;
pub mod seed;
pub mod stats;

mod svg;

pub use backend::{BackendConfig, CompletionBackend, CompletionResult, PriceTable};
pub use demographics::{
    build_plan, enumerate_cells, AgeBin, CrosstabKey, DemographicProfile, DemographicSchema,
    SamplingPlan,
};
pub use mock::MockOpinionModel;
pub use parsing::{extract_position_score, ParseStatus, ResponseRecord};
pub use prompting::{render_prompt, PromptContext, PromptTemplate};
pub use questionnaire::{load_questionnaire, Question, Questionnaire, ResponseScale};
pub use runner::RunConfig;
pub use stats::{CellSummary, ComparisonResult, Grouping, HistogramTable, ScoreTable};
