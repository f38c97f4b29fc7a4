//! Demographic schema, crosstab cells, and the balanced sampling plan.
//!
//! A schema holds four factor lists (ideology, age bins, gender, race); a
//! crosstab cell is one combination of the four. The sampling plan enumerates
//! `questions x cells x replicates` tasks so that every (question, cell) pair
//! receives exactly the same number of elicitations.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::questionnaire::Questionnaire;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("factor list `{0}` must not be empty")]
    EmptyFactor(&'static str),
    #[error("factor list `{list}` contains duplicate label `{label}`")]
    DuplicateLabel { list: &'static str, label: String },
    #[error("age bin ({lo}, {hi}] is empty or inverted")]
    BadAgeBin { lo: u32, hi: u32 },
    #[error("age bins ({a_lo}, {a_hi}] and ({b_lo}, {b_hi}] overlap or are out of order")]
    AgeBinOverlap {
        a_lo: u32,
        a_hi: u32,
        b_lo: u32,
        b_hi: u32,
    },
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("replicates per cell must be at least 1")]
    ZeroReplicates,
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// Half-open age interval `(lo, hi]`, rendered in interval notation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(u32, u32)", into = "(u32, u32)")]
pub struct AgeBin {
    pub lo: u32,
    pub hi: u32,
}

impl AgeBin {
    pub fn new(lo: u32, hi: u32) -> Self {
        Self { lo, hi }
    }

    /// Upper-inclusive membership: age 30 belongs to (16, 30], not (30, 45].
    pub fn contains(&self, age: u32) -> bool {
        age > self.lo && age <= self.hi
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for AgeBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}]", self.lo, self.hi)
    }
}

impl From<(u32, u32)> for AgeBin {
    fn from((lo, hi): (u32, u32)) -> Self {
        Self { lo, hi }
    }
}

impl From<AgeBin> for (u32, u32) {
    fn from(bin: AgeBin) -> Self {
        (bin.lo, bin.hi)
    }
}

/// Renders a half-open age interval label, e.g. `(16, 30]`.
pub fn age_interval_label(bin: &AgeBin) -> String {
    bin.to_string()
}

/// The four demographic factor lists. List order is meaningful: it fixes cell
/// enumeration order and the presentation order of subgroups everywhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicSchema {
    pub ideology_bins: Vec<String>,
    pub age_bins: Vec<AgeBin>,
    pub gender_labels: Vec<String>,
    pub race_labels: Vec<String>,
}

impl Default for DemographicSchema {
    fn default() -> Self {
        Self {
            ideology_bins: [
                "Very liberal",
                "Liberal",
                "Moderate",
                "Conservative",
                "Very conservative",
            ]
            .map(String::from)
            .to_vec(),
            age_bins: vec![
                AgeBin::new(16, 30),
                AgeBin::new(30, 45),
                AgeBin::new(45, 60),
                AgeBin::new(60, 100),
            ],
            gender_labels: ["Man", "Woman"].map(String::from).to_vec(),
            race_labels: ["white", "non-white"].map(String::from).to_vec(),
        }
    }
}

impl DemographicSchema {
    pub fn validate(&self) -> Result<(), SchemaError> {
        check_labels("ideology_bins", &self.ideology_bins)?;
        check_labels("gender_labels", &self.gender_labels)?;
        check_labels("race_labels", &self.race_labels)?;
        if self.age_bins.is_empty() {
            return Err(SchemaError::EmptyFactor("age_bins"));
        }
        for bin in &self.age_bins {
            if bin.lo >= bin.hi {
                return Err(SchemaError::BadAgeBin {
                    lo: bin.lo,
                    hi: bin.hi,
                });
            }
        }
        for pair in self.age_bins.windows(2) {
            if pair[1].lo < pair[0].hi {
                return Err(SchemaError::AgeBinOverlap {
                    a_lo: pair[0].lo,
                    a_hi: pair[0].hi,
                    b_lo: pair[1].lo,
                    b_hi: pair[1].hi,
                });
            }
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.ideology_bins.len()
            * self.age_bins.len()
            * self.gender_labels.len()
            * self.race_labels.len()
    }

    /// The age bin covering `age`, if any.
    pub fn age_bin_for(&self, age: u32) -> Option<AgeBin> {
        self.age_bins.iter().copied().find(|b| b.contains(age))
    }

    /// Schema position of each factor value, used to order keys the way the
    /// schema lists them. Returns `None` when any field is not drawn from the
    /// schema.
    pub fn key_index(&self, key: &CrosstabKey) -> Option<(usize, usize, usize, usize)> {
        Some((
            self.ideology_bins.iter().position(|l| *l == key.ideology)?,
            self.age_bins.iter().position(|b| *b == key.age_bin)?,
            self.gender_labels.iter().position(|l| *l == key.gender)?,
            self.race_labels.iter().position(|l| *l == key.race)?,
        ))
    }

    pub fn contains_key(&self, key: &CrosstabKey) -> bool {
        self.key_index(key).is_some()
    }
}

fn check_labels(name: &'static str, labels: &[String]) -> Result<(), SchemaError> {
    if labels.is_empty() {
        return Err(SchemaError::EmptyFactor(name));
    }
    for (i, label) in labels.iter().enumerate() {
        if labels[..i].contains(label) {
            return Err(SchemaError::DuplicateLabel {
                list: name,
                label: label.clone(),
            });
        }
    }
    Ok(())
}

/// One demographic crosstab cell; also the persona description for a single
/// synthetic respondent. The derived `Ord` gives a stable (run-independent)
/// total order; use [`DemographicSchema::key_index`] when schema list order is
/// wanted instead.
#[derive(
    Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct CrosstabKey {
    pub ideology: String,
    pub age_bin: AgeBin,
    pub gender: String,
    pub race: String,
}

/// A respondent persona is described by the same four fields that identify its
/// aggregation cell.
pub type DemographicProfile = CrosstabKey;

impl CrosstabKey {
    pub fn new(
        ideology: impl Into<String>,
        age_bin: AgeBin,
        gender: impl Into<String>,
        race: impl Into<String>,
    ) -> Self {
        Self {
            ideology: ideology.into(),
            age_bin,
            gender: gender.into(),
            race: race.into(),
        }
    }
}

impl fmt::Display for CrosstabKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} | {} | {} | {}",
            self.ideology, self.age_bin, self.gender, self.race
        )
    }
}

/// Enumerates every crosstab cell in deterministic schema order (ideology
/// outermost, race innermost).
pub fn enumerate_cells(schema: &DemographicSchema) -> Vec<CrosstabKey> {
    let mut cells = Vec::with_capacity(schema.cell_count());
    for ideology in &schema.ideology_bins {
        for age_bin in &schema.age_bins {
            for gender in &schema.gender_labels {
                for race in &schema.race_labels {
                    cells.push(CrosstabKey {
                        ideology: ideology.clone(),
                        age_bin: *age_bin,
                        gender: gender.clone(),
                        race: race.clone(),
                    });
                }
            }
        }
    }
    cells
}

/// One unit of elicitation work.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanTask {
    pub question_id: String,
    pub cell: CrosstabKey,
    pub replicate: u32,
}

/// The balanced elicitation plan: every (question, cell) pair appears exactly
/// `replicates_per_cell` times, in deterministic order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub replicates_per_cell: u32,
    pub tasks: Vec<PlanTask>,
}

/// Builds the balanced plan: questions x cells x replicates.
pub fn build_plan(
    questionnaire: &Questionnaire,
    schema: &DemographicSchema,
    replicates_per_cell: u32,
) -> Result<SamplingPlan, PlanError> {
    if replicates_per_cell < 1 {
        return Err(PlanError::ZeroReplicates);
    }
    schema.validate()?;
    let cells = enumerate_cells(schema);
    let mut tasks =
        Vec::with_capacity(questionnaire.questions.len() * cells.len() * replicates_per_cell as usize);
    for question in &questionnaire.questions {
        for cell in &cells {
            for replicate in 0..replicates_per_cell {
                tasks.push(PlanTask {
                    question_id: question.id.clone(),
                    cell: cell.clone(),
                    replicate,
                });
            }
        }
    }
    Ok(SamplingPlan {
        replicates_per_cell,
        tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn tiny_questionnaire(n: usize) -> Questionnaire {
        let questions = (0..n)
            .map(|i| crate::questionnaire::Question {
                id: format!("q{i}"),
                source_code: format!("SRC{i}"),
                prompt_text: format!("proposal {i}"),
                scale: crate::questionnaire::ResponseScale::binary("support", "oppose"),
            })
            .collect();
        Questionnaire {
            metadata: BTreeMap::new(),
            questions,
        }
    }

    #[test]
    fn default_schema_has_80_cells() {
        let schema = DemographicSchema::default();
        schema.validate().unwrap();
        assert_eq!(schema.cell_count(), 80);
        assert_eq!(enumerate_cells(&schema).len(), 80);
    }

    #[test]
    fn singleton_schema_has_one_cell() {
        let schema = DemographicSchema {
            ideology_bins: vec!["Moderate".into()],
            age_bins: vec![AgeBin::new(16, 30)],
            gender_labels: vec!["Woman".into()],
            race_labels: vec!["white".into()],
        };
        assert_eq!(enumerate_cells(&schema).len(), 1);
    }

    #[test]
    fn two_by_four_enumeration_matches_brute_force_product() {
        let schema = DemographicSchema {
            ideology_bins: vec!["L".into(), "C".into()],
            age_bins: vec![AgeBin::new(16, 30), AgeBin::new(30, 45)],
            gender_labels: vec!["Man".into(), "Woman".into()],
            race_labels: vec!["white".into(), "non-white".into()],
        };
        let cells = enumerate_cells(&schema);
        assert_eq!(cells.len(), 16);

        // Independent product enumeration.
        let mut expected = Vec::new();
        for i in &schema.ideology_bins {
            for a in &schema.age_bins {
                for g in &schema.gender_labels {
                    for r in &schema.race_labels {
                        expected.push(CrosstabKey::new(i.clone(), *a, g.clone(), r.clone()));
                    }
                }
            }
        }
        assert_eq!(cells, expected);
        // Stable across repeated enumeration.
        assert_eq!(cells, enumerate_cells(&schema));
    }

    #[test]
    fn default_plan_is_7x80x20() {
        let plan = build_plan(
            &Questionnaire::ces2022(),
            &DemographicSchema::default(),
            20,
        )
        .unwrap();
        assert_eq!(plan.tasks.len(), 11_200);
    }

    #[test]
    fn minimal_plan_is_a_single_task() {
        let schema = DemographicSchema {
            ideology_bins: vec!["Moderate".into()],
            age_bins: vec![AgeBin::new(16, 30)],
            gender_labels: vec!["Woman".into()],
            race_labels: vec!["white".into()],
        };
        let plan = build_plan(&tiny_questionnaire(1), &schema, 1).unwrap();
        assert_eq!(plan.tasks.len(), 1);
        assert_eq!(plan.tasks[0].replicate, 0);
    }

    #[test]
    fn plan_is_balanced_over_question_cell_pairs() {
        let schema = DemographicSchema {
            ideology_bins: vec!["L".into(), "C".into()],
            age_bins: vec![AgeBin::new(16, 30), AgeBin::new(30, 45)],
            gender_labels: vec!["Man".into(), "Woman".into()],
            race_labels: vec!["white".into(), "non-white".into()],
        };
        let plan = build_plan(&tiny_questionnaire(2), &schema, 3).unwrap();
        assert_eq!(plan.tasks.len(), 96);

        // Brute-force grouping.
        let mut counts: BTreeMap<(String, CrosstabKey), usize> = BTreeMap::new();
        for task in &plan.tasks {
            *counts
                .entry((task.question_id.clone(), task.cell.clone()))
                .or_default() += 1;
        }
        assert_eq!(counts.len(), 32);
        assert!(counts.values().all(|&c| c == 3));
    }

    #[test]
    fn zero_replicates_is_rejected() {
        let err = build_plan(&tiny_questionnaire(1), &DemographicSchema::default(), 0).unwrap_err();
        assert!(matches!(err, PlanError::ZeroReplicates));
    }

    #[test]
    fn age_interval_labels_render_interval_notation() {
        assert_eq!(age_interval_label(&AgeBin::new(16, 30)), "(16, 30]");
        assert_eq!(age_interval_label(&AgeBin::new(45, 60)), "(45, 60]");
        assert_eq!(age_interval_label(&AgeBin::new(60, 100)), "(60, 100]");
    }

    #[test]
    fn overlapping_age_bins_are_rejected() {
        let schema = DemographicSchema {
            age_bins: vec![AgeBin::new(16, 30), AgeBin::new(25, 45)],
            ..DemographicSchema::default()
        };
        assert!(matches!(
            schema.validate().unwrap_err(),
            SchemaError::AgeBinOverlap { .. }
        ));
    }

    fn small_schema_strategy() -> impl Strategy<Value = DemographicSchema> {
        (1usize..=3, 1usize..=3, 1usize..=2, 1usize..=2).prop_map(|(ni, na, ng, nr)| {
            DemographicSchema {
                ideology_bins: (0..ni).map(|i| format!("ideo{i}")).collect(),
                age_bins: (0..na as u32)
                    .map(|i| AgeBin::new(16 + 10 * i, 26 + 10 * i))
                    .collect(),
                gender_labels: (0..ng).map(|i| format!("g{i}")).collect(),
                race_labels: (0..nr).map(|i| format!("r{i}")).collect(),
            }
        })
    }

    proptest! {
        // Balance: every (question, cell) pair appears exactly n times, and two
        // plans built from equal inputs are identical.
        #[test]
        fn plans_are_balanced_and_deterministic(
            schema in small_schema_strategy(),
            questions in 1usize..=3,
            n in 1u32..=4,
        ) {
            let questionnaire = tiny_questionnaire(questions);
            let plan = build_plan(&questionnaire, &schema, n).unwrap();
            prop_assert_eq!(plan.tasks.len(), questions * schema.cell_count() * n as usize);

            let mut counts: BTreeMap<(String, CrosstabKey), u32> = BTreeMap::new();
            for task in &plan.tasks {
                prop_assert!(task.replicate < n);
                *counts.entry((task.question_id.clone(), task.cell.clone())).or_default() += 1;
            }
            prop_assert!(counts.values().all(|&c| c == n));

            let again = build_plan(&questionnaire, &schema, n).unwrap();
            prop_assert_eq!(plan, again);
        }
    }
}
