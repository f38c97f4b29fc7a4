//! Deterministic mock respondent.
//!
//! The mock stands in for a live model during offline runs and tests. Each
//! (question, ideology) pair has a configured base mean on the question's
//! ordinal scale, optionally shifted by additive age/gender/race offsets; the
//! cell mean is clamped to `[1, cardinality]`. A draw samples an integer score
//! from a discretized-normal distribution over `1..=cardinality` whose
//! location is calibrated so that the distribution's expected value equals the
//! clamped cell mean exactly — clamping and rounding therefore introduce no
//! bias, and empirical cell means converge to the configured means. The
//! `dispersion` parameter is the latent normal's standard deviation; on a
//! 2-point scale the distribution with a given mean is unique, so dispersion
//! only shapes scales with three or more levels.
//!
//! Every draw is a pure function of (seed, question, cell, replicate):
//! results do not depend on call order or the concurrency schedule.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, CompletionBackend, CompletionResult};
use crate::prompting::PromptContext;
use crate::seed;

#[derive(Debug, Error)]
pub enum MockModelError {
    #[error("failed to read mock model file `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed mock model document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("mock model dispersion must be finite and >= 0, got {0}")]
    BadDispersion(f64),
    #[error("mock model mean for (question `{question}`, ideology `{ideology}`) is not finite")]
    BadMean { question: String, ideology: String },
}

/// Opinion parameters for one question.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuestionOpinion {
    /// Base mean per ideology label, on the question's ordinal scale.
    pub ideology_means: BTreeMap<String, f64>,
    /// Additive offsets keyed by age-bin label, e.g. `"(16, 30]"`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub age_offsets: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub gender_offsets: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub race_offsets: BTreeMap<String, f64>,
}

/// The full mock respondent model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockOpinionModel {
    pub seed: u64,
    /// Standard deviation of the latent normal behind each draw.
    pub dispersion: f64,
    pub questions: BTreeMap<String, QuestionOpinion>,
}

/// On-disk form of the model; `seed` may be omitted and supplied by the caller.
#[derive(Debug, Deserialize)]
struct MockOpinionModelFile {
    seed: Option<u64>,
    dispersion: f64,
    questions: BTreeMap<String, QuestionOpinion>,
}

impl MockOpinionModel {
    /// Loads a model file. `fallback_seed` is used when the file does not pin
    /// its own seed.
    pub fn load(path: impl AsRef<Path>, fallback_seed: u64) -> Result<Self, MockModelError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| MockModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: MockOpinionModelFile = serde_json::from_str(&text)?;
        let model = Self {
            seed: file.seed.unwrap_or(fallback_seed),
            dispersion: file.dispersion,
            questions: file.questions,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), MockModelError> {
        if !self.dispersion.is_finite() || self.dispersion < 0.0 {
            return Err(MockModelError::BadDispersion(self.dispersion));
        }
        for (qid, opinion) in &self.questions {
            let offsets = opinion
                .age_offsets
                .values()
                .chain(opinion.gender_offsets.values())
                .chain(opinion.race_offsets.values());
            for v in opinion.ideology_means.values().chain(offsets) {
                if !v.is_finite() {
                    return Err(MockModelError::BadMean {
                        question: qid.clone(),
                        ideology: String::new(),
                    });
                }
            }
        }
        Ok(())
    }

    /// The configured cell mean (base + offsets), clamped to `[1, cardinality]`.
    pub fn cell_mean(
        &self,
        question_id: &str,
        cell: &crate::demographics::CrosstabKey,
        cardinality: u32,
    ) -> Result<f64, BackendError> {
        let opinion = self
            .questions
            .get(question_id)
            .ok_or_else(|| BackendError::UnknownQuestion(question_id.to_string()))?;
        let base = opinion.ideology_means.get(&cell.ideology).ok_or_else(|| {
            BackendError::MissingIdeologyMean {
                question: question_id.to_string(),
                ideology: cell.ideology.clone(),
            }
        })?;
        let mean = base
            + opinion.age_offsets.get(&cell.age_bin.label()).unwrap_or(&0.0)
            + opinion.gender_offsets.get(&cell.gender).unwrap_or(&0.0)
            + opinion.race_offsets.get(&cell.race).unwrap_or(&0.0);
        Ok(mean.clamp(1.0, f64::from(cardinality)))
    }
}

/// Produces the mock completion for one task. Deterministic in
/// (model.seed, question, cell, replicate).
pub fn mock_complete(
    model: &MockOpinionModel,
    ctx: &PromptContext,
    replicate: u32,
) -> Result<CompletionResult, BackendError> {
    let scale = &ctx.question.scale;
    let cardinality = scale.cardinality;
    let mean = model.cell_mean(&ctx.question.id, &ctx.profile, cardinality)?;
    let pmf = score_pmf(mean, model.dispersion, cardinality);

    let mut rng = seed::derive_rng(
        model.seed,
        &[
            "mock",
            &ctx.question.id,
            &ctx.profile.to_string(),
            &replicate.to_string(),
        ],
    );
    let score = sample_score(&pmf, &mut rng);
    let text = render_letter(ctx, score, &mut rng);
    let completion_tokens = word_count(&text);

    Ok(CompletionResult {
        text,
        prompt_tokens: word_count(&ctx.rendered_system) + word_count(&ctx.rendered_user),
        completion_tokens,
        backend_id: "mock".to_string(),
        latency: std::time::Duration::ZERO,
    })
}

fn sample_score(pmf: &[f64], rng: &mut impl Rng) -> u32 {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for (i, p) in pmf.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i as u32 + 1;
        }
    }
    pmf.len() as u32
}

/// Probability mass over scores `1..=cardinality`: a normal of standard
/// deviation `dispersion` discretized onto the scale (boundary levels absorb
/// the tails), with its location chosen so the expected value equals `mean`.
/// `dispersion == 0` degenerates to a point mass at the rounded mean.
pub fn score_pmf(mean: f64, dispersion: f64, cardinality: u32) -> Vec<f64> {
    let k = cardinality as usize;
    let target = mean.clamp(1.0, cardinality as f64);
    let mut pmf = vec![0.0; k];

    if dispersion == 0.0 {
        let level = (target.round() as usize).clamp(1, k);
        pmf[level - 1] = 1.0;
        return pmf;
    }
    // Targets at (or numerically at) the scale ends are only reachable in the
    // limit; treat them as point masses.
    if target <= 1.0 + 1e-12 {
        pmf[0] = 1.0;
        return pmf;
    }
    if target >= cardinality as f64 - 1e-12 {
        pmf[k - 1] = 1.0;
        return pmf;
    }

    // On a 2-point scale the mean pins the distribution exactly.
    if k == 2 {
        pmf[1] = target - 1.0;
        pmf[0] = 1.0 - pmf[1];
        return pmf;
    }

    let location = calibrated_location(target, dispersion, cardinality);
    fill_pmf(&mut pmf, location, dispersion, cardinality);
    pmf
}

fn fill_pmf(pmf: &mut [f64], location: f64, sigma: f64, cardinality: u32) {
    let k = cardinality as usize;
    let cut = |x: f64| normal_cdf((x - location) / sigma);
    pmf[0] = cut(1.5);
    for (level, slot) in pmf.iter_mut().enumerate().take(k - 1).skip(1) {
        let score = (level + 1) as f64;
        *slot = cut(score + 0.5) - cut(score - 0.5);
    }
    pmf[k - 1] = 1.0 - cut(cardinality as f64 - 0.5);
}

fn discretized_mean(location: f64, sigma: f64, cardinality: u32) -> f64 {
    let mut pmf = vec![0.0; cardinality as usize];
    fill_pmf(&mut pmf, location, sigma, cardinality);
    pmf.iter()
        .enumerate()
        .map(|(i, p)| (i + 1) as f64 * p)
        .sum()
}

/// Bisects for the latent-normal location whose discretized mean equals
/// `target`. The discretized mean is continuous and strictly increasing in the
/// location, with range (1, cardinality), so a root always exists for targets
/// strictly inside the scale.
fn calibrated_location(target: f64, sigma: f64, cardinality: u32) -> f64 {
    let mut lo = 1.0 - 60.0 * sigma - 1.0;
    let mut hi = cardinality as f64 + 60.0 * sigma + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if discretized_mean(mid, sigma, cardinality) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * (1.0 + lo.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Standard normal CDF via a rational erfc approximation (max fractional
/// error ~1.2e-7), accurate far beyond what the calibration needs.
pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398
                                + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277))))))));
    let ans = t * poly.exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

const OPENERS: [&str; 4] = [
    "I am writing to make my view on this proposal plain.",
    "I want to add my voice to this debate.",
    "This proposal deserves a clear answer from people like me.",
    "I feel strongly enough about this proposal to write in.",
];

const FILLERS: [&str; 6] = [
    "I have followed this debate closely in my community.",
    "This issue matters a great deal to people in my situation.",
    "I urge readers to weigh the practical consequences carefully.",
    "My experience shapes how I see this question.",
    "I hope policymakers listen to voices like mine.",
    "Neighbors I talk to keep returning to this subject.",
];

fn render_letter(ctx: &PromptContext, score: u32, rng: &mut impl Rng) -> String {
    let scale = &ctx.question.scale;
    let stance = scale.label_for(score);
    let opener = OPENERS[rng.random_range(0..OPENERS.len())];
    let first = rng.random_range(0..FILLERS.len());
    let second = (first + 1 + rng.random_range(0..FILLERS.len() - 1)) % FILLERS.len();
    format!(
        "Position score: {score}\n\n{opener} As a politically {ideology} {gender} in the age \
         range of {age} years who identifies as {race}, my position on the proposal is best \
         summarized as \"{stance}\". {f1} {f2} That is why I answer this question with a \
         position of {score} on the {cardinality}-point scale.",
        ideology = ctx.profile.ideology,
        gender = lowercase_first(&ctx.profile.gender),
        age = ctx.profile.age_bin,
        race = ctx.profile.race,
        stance = stance,
        f1 = FILLERS[first],
        f2 = FILLERS[second],
        cardinality = scale.cardinality,
    )
}

fn lowercase_first(label: &str) -> String {
    let mut chars = label.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

pub(crate) fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// [`CompletionBackend`] adapter around a mock model.
pub struct MockBackend {
    model: MockOpinionModel,
}

impl MockBackend {
    pub fn new(model: MockOpinionModel) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &MockOpinionModel {
        &self.model
    }
}

impl CompletionBackend for MockBackend {
    fn id(&self) -> &'static str {
        "mock"
    }

    fn model_name(&self) -> String {
        "mock".to_string()
    }

    fn complete(
        &self,
        ctx: &PromptContext,
        replicate: u32,
    ) -> Result<CompletionResult, BackendError> {
        mock_complete(&self.model, ctx, replicate)
    }
}
