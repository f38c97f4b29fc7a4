//! Comparison statistics: cell summaries, bootstrap CIs, Pearson r, MAPE,
//! histograms, and paired synthetic/human subgroup comparisons.
//!
//! Subgroup pools aggregate raw scores, not means of cell means; on the
//! balanced synthetic side the two coincide, and on the human side raw pooling
//! matches standard crosstab practice. Confidence intervals use the percentile
//! bootstrap: resample the scores with replacement, take the mean of each
//! resample, and report the 2.5th/97.5th percentiles. Resample seeds are
//! derived per resample index, so the bounds are identical no matter how the
//! resamples are scheduled.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demographics::{enumerate_cells, CrosstabKey, DemographicSchema};
use crate::parsing::{ParseStatus, ResponseRecord};
use crate::questionnaire::Questionnaire;
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("input lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} pairs, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("correlation is undefined: the {side} side is constant")]
    ConstantInput { side: &'static str },
    #[error("MAPE is undefined: human value at index {index} is zero")]
    ZeroHumanValue { index: usize },
    #[error("MAPE needs at least one pair")]
    Empty,
}

/// Raw scores grouped by (question, crosstab cell). Every (question, cell)
/// combination in the questionnaire x schema universe is present, possibly
/// with an empty list, so downstream consumers can distinguish "no data" from
/// "not tabulated".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreTable {
    entries: BTreeMap<(String, CrosstabKey), Vec<u32>>,
}

impl ScoreTable {
    /// Builds the empty universe for a questionnaire and schema.
    pub fn empty(questionnaire: &Questionnaire, schema: &DemographicSchema) -> Self {
        let mut entries = BTreeMap::new();
        for question in &questionnaire.questions {
            for cell in enumerate_cells(schema) {
                entries.insert((question.id.clone(), cell), Vec::new());
            }
        }
        Self { entries }
    }

    /// Pools successfully parsed records. Records for unknown (question, cell)
    /// combinations are ignored.
    pub fn from_parsed_records(
        records: &[ResponseRecord],
        questionnaire: &Questionnaire,
        schema: &DemographicSchema,
    ) -> Self {
        let mut table = Self::empty(questionnaire, schema);
        for record in records {
            if record.status != ParseStatus::Parsed {
                continue;
            }
            let Some(score) = record.score else { continue };
            table.push(&record.question_id, &record.cell, score as u32);
        }
        table
    }

    /// Appends a score to an existing (question, cell) entry; ignores unknown
    /// combinations.
    pub fn push(&mut self, question_id: &str, cell: &CrosstabKey, score: u32) {
        if let Some(scores) = self
            .entries
            .get_mut(&(question_id.to_string(), cell.clone()))
        {
            scores.push(score);
        }
    }

    pub fn scores(&self, question_id: &str, cell: &CrosstabKey) -> Option<&[u32]> {
        self.entries
            .get(&(question_id.to_string(), cell.clone()))
            .map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, CrosstabKey), &Vec<u32>)> {
        self.entries.iter()
    }

    /// Total number of pooled observations.
    pub fn total_observations(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    /// All scores for one question pooled over cells selected by `filter`.
    fn pooled(&self, question_id: &str, filter: impl Fn(&CrosstabKey) -> bool) -> Vec<u32> {
        let mut pool = Vec::new();
        for ((qid, cell), scores) in &self.entries {
            if qid == question_id && filter(cell) {
                pool.extend_from_slice(scores);
            }
        }
        pool
    }
}

/// Subgroup axis used when marginalizing crosstab cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    AllCrosstabs,
    Ideology,
    Age,
    Gender,
    Race,
}

impl Grouping {
    pub const ALL: [Grouping; 5] = [
        Grouping::AllCrosstabs,
        Grouping::Ideology,
        Grouping::Age,
        Grouping::Gender,
        Grouping::Race,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Grouping::AllCrosstabs => "all_crosstabs",
            Grouping::Ideology => "ideology",
            Grouping::Age => "age",
            Grouping::Gender => "gender",
            Grouping::Race => "race",
        }
    }

    /// Subgroup labels in schema order.
    pub fn subgroups(&self, schema: &DemographicSchema) -> Vec<String> {
        match self {
            Grouping::AllCrosstabs => enumerate_cells(schema)
                .iter()
                .map(|c| c.to_string())
                .collect(),
            Grouping::Ideology => schema.ideology_bins.clone(),
            Grouping::Age => schema.age_bins.iter().map(|b| b.label()).collect(),
            Grouping::Gender => schema.gender_labels.clone(),
            Grouping::Race => schema.race_labels.clone(),
        }
    }

    fn cell_matches(&self, cell: &CrosstabKey, subgroup: &str) -> bool {
        match self {
            Grouping::AllCrosstabs => cell.to_string() == subgroup,
            Grouping::Ideology => cell.ideology == subgroup,
            Grouping::Age => cell.age_bin.label() == subgroup,
            Grouping::Gender => cell.gender == subgroup,
            Grouping::Race => cell.race == subgroup,
        }
    }
}

impl std::fmt::Display for Grouping {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Pools raw scores by subgroup. Returns, per question, the subgroups in
/// schema order with their pooled scores (possibly empty).
pub fn marginalize(
    table: &ScoreTable,
    by: Grouping,
    schema: &DemographicSchema,
) -> BTreeMap<String, Vec<(String, Vec<u32>)>> {
    let mut question_ids: Vec<String> = table
        .entries
        .keys()
        .map(|(qid, _)| qid.clone())
        .collect();
    question_ids.dedup();

    let subgroups = by.subgroups(schema);
    let mut out = BTreeMap::new();
    for qid in question_ids {
        let pools: Vec<(String, Vec<u32>)> = subgroups
            .iter()
            .map(|label| {
                (
                    label.clone(),
                    table.pooled(&qid, |cell| by.cell_matches(cell, label)),
                )
            })
            .collect();
        out.insert(qid, pools);
    }
    out
}

/// Summary statistics for one pool of ordinal scores.
///
/// `sd` is the sample standard deviation (n-1 denominator), `sem = sd/sqrt(n)`,
/// and the CI bounds are percentile-bootstrap 95% bounds. Statistics that are
/// undefined for the pool size are absent rather than NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub sem: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

impl SummaryStats {
    pub fn empty() -> Self {
        Self {
            n: 0,
            mean: None,
            sd: None,
            sem: None,
            ci_low: None,
            ci_high: None,
        }
    }
}

/// Per-(question, cell) summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub question_id: String,
    pub cell: CrosstabKey,
    pub stats: SummaryStats,
}

/// Summarizes one pool of scores: n, mean, sample SD, SEM, and a seeded
/// percentile-bootstrap 95% CI from `bootstrap_reps` resamples of size n.
/// An empty pool yields `n = 0` with absent statistics.
pub fn cell_summary(scores: &[u32], bootstrap_reps: u32, seed: u64) -> SummaryStats {
    let n = scores.len();
    if n == 0 {
        return SummaryStats::empty();
    }
    let mean = scores.iter().map(|&s| s as f64).sum::<f64>() / n as f64;
    let (sd, sem) = if n >= 2 {
        let ss: f64 = scores
            .iter()
            .map(|&s| {
                let d = s as f64 - mean;
                d * d
            })
            .sum();
        let sd = (ss / (n as f64 - 1.0)).sqrt();
        (Some(sd), Some(sd / (n as f64).sqrt()))
    } else {
        (None, None)
    };
    let (ci_low, ci_high) = bootstrap_ci(scores, bootstrap_reps, seed);
    SummaryStats {
        n,
        mean: Some(mean),
        sd,
        sem,
        ci_low: Some(ci_low),
        ci_high: Some(ci_high),
    }
}

fn bootstrap_ci(scores: &[u32], reps: u32, seed: u64) -> (f64, f64) {
    let n = scores.len();
    debug_assert!(reps >= 1 && n >= 1);
    let mut means = Vec::with_capacity(reps as usize);
    for rep in 0..reps {
        // One independent RNG per resample: the set of resample means is
        // invariant under any execution order.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed::splitmix64(
            seed ^ (u64::from(rep)).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        ));
        let mut sum = 0u64;
        for _ in 0..n {
            sum += u64::from(scores[rng.random_range(0..n)]);
        }
        means.push(sum as f64 / n as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (percentile(&means, 0.025), percentile(&means, 0.975))
}

/// Linear-interpolated percentile of an already sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Product-moment correlation of two equal-length, non-constant series.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewPairs {
            needed: 2,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(StatsError::ConstantInput { side: "first" });
    }
    if syy == 0.0 {
        return Err(StatsError::ConstantInput { side: "second" });
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Mean absolute percentage error, as a fraction: `mean(|s - h| / h)`.
pub fn mape(synthetic: &[f64], human: &[f64]) -> Result<f64, StatsError> {
    if synthetic.len() != human.len() {
        return Err(StatsError::LengthMismatch {
            left: synthetic.len(),
            right: human.len(),
        });
    }
    if synthetic.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut total = 0.0;
    for (index, (&s, &h)) in synthetic.iter().zip(human).enumerate() {
        if h == 0.0 {
            return Err(StatsError::ZeroHumanValue { index });
        }
        total += (s - h).abs() / h;
    }
    Ok(total / synthetic.len() as f64)
}

/// Score counts per ordinal level for one (question, split) pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramTable {
    pub question_id: String,
    /// Which slice of respondents this histogram covers, e.g. a gender label.
    pub split: String,
    /// Counts for levels `1..=cardinality`.
    pub counts: Vec<u64>,
    /// Normalized frequencies; all zero when the pool is empty.
    pub frequencies: Vec<f64>,
}

impl HistogramTable {
    pub fn build(
        question_id: impl Into<String>,
        split: impl Into<String>,
        scores: &[u32],
        cardinality: u32,
    ) -> Self {
        let mut counts = vec![0u64; cardinality as usize];
        for &score in scores {
            assert!(
                score >= 1 && score <= cardinality,
                "score {score} outside 1..={cardinality}"
            );
            counts[score as usize - 1] += 1;
        }
        let total: u64 = counts.iter().sum();
        let frequencies = if total == 0 {
            vec![0.0; cardinality as usize]
        } else {
            counts.iter().map(|&c| c as f64 / total as f64).collect()
        };
        Self {
            question_id: question_id.into(),
            split: split.into(),
            counts,
            frequencies,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// One subgroup's paired synthetic/human summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupPair {
    pub subgroup: String,
    pub synthetic: SummaryStats,
    pub human: SummaryStats,
    /// synthetic mean - human mean.
    pub delta: f64,
}

/// Why a correlation could not be computed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoOutcome {
    Defined,
    TooFewPairs,
    ConstantSynthetic,
    ConstantHuman,
    NoHumanData,
}

/// Paired subgroup means for one (question, grouping), with Pearson rho over
/// the pairs and MAPE of synthetic vs human means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub question_id: String,
    pub grouping: Grouping,
    pub pairs: Vec<SubgroupPair>,
    /// Subgroups with data on only one side (or neither), excluded from pairs.
    pub excluded: Vec<String>,
    pub rho: Option<f64>,
    pub rho_outcome: RhoOutcome,
    pub mape: Option<f64>,
}

/// Pairs subgroup means present on both sides and computes rho and MAPE.
/// Subgroups empty on either side are excluded and reported. With fewer than
/// two pairs (or a constant side) rho is undefined; MAPE is computed whenever
/// at least one pair exists.
pub fn compare(
    synthetic: &ScoreTable,
    human: &ScoreTable,
    grouping: Grouping,
    questionnaire: &Questionnaire,
    schema: &DemographicSchema,
    bootstrap_reps: u32,
    master_seed: u64,
) -> Vec<ComparisonResult> {
    let synthetic_pools = marginalize(synthetic, grouping, schema);
    let human_pools = marginalize(human, grouping, schema);
    let empty = Vec::new();

    questionnaire
        .questions
        .iter()
        .map(|question| {
            let qid = &question.id;
            let synth = synthetic_pools.get(qid).unwrap_or(&empty);
            let hum = human_pools.get(qid).unwrap_or(&empty);

            let mut pairs = Vec::new();
            let mut excluded = Vec::new();
            for ((label, synth_scores), (_, human_scores)) in synth.iter().zip(hum) {
                if synth_scores.is_empty() || human_scores.is_empty() {
                    excluded.push(label.clone());
                    continue;
                }
                let seed_for = |side: &str| {
                    seed::derive_u64(
                        master_seed,
                        &["summary", side, qid, grouping.label(), label],
                    )
                };
                let synthetic_stats =
                    cell_summary(synth_scores, bootstrap_reps, seed_for("synthetic"));
                let human_stats = cell_summary(human_scores, bootstrap_reps, seed_for("human"));
                let delta = synthetic_stats.mean.unwrap_or(f64::NAN)
                    - human_stats.mean.unwrap_or(f64::NAN);
                pairs.push(SubgroupPair {
                    subgroup: label.clone(),
                    synthetic: synthetic_stats,
                    human: human_stats,
                    delta,
                });
            }

            let synth_means: Vec<f64> = pairs.iter().filter_map(|p| p.synthetic.mean).collect();
            let human_means: Vec<f64> = pairs.iter().filter_map(|p| p.human.mean).collect();
            let (rho, rho_outcome) = if pairs.is_empty() {
                (None, RhoOutcome::NoHumanData)
            } else {
                match pearson_r(&synth_means, &human_means) {
                    Ok(r) => (Some(r), RhoOutcome::Defined),
                    Err(StatsError::TooFewPairs { .. }) => (None, RhoOutcome::TooFewPairs),
                    Err(StatsError::ConstantInput { side: "first" }) => {
                        (None, RhoOutcome::ConstantSynthetic)
                    }
                    Err(_) => (None, RhoOutcome::ConstantHuman),
                }
            };
            let mape_value = mape(&synth_means, &human_means).ok();

            ComparisonResult {
                question_id: qid.clone(),
                grouping,
                pairs,
                excluded,
                rho,
                rho_outcome,
                mape: mape_value,
            }
        })
        .collect()
}
