//! Human survey ingestion and ordinal recoding.
//!
//! Raw survey CSVs carry categorical answer strings, a birth year, and
//! demographic columns. The recode spec declares, per question, how each raw
//! value maps onto the ordinal scale; a `null` target drops that answer (for
//! categories like "Not sure" that have no ordinal position). Demographic maps
//! work the same way: a `null` target drops the whole respondent, since a
//! respondent without a valid cell cannot be aggregated. An undeclared raw
//! value is a fatal error with its row number — values are never coerced
//! silently. Survey weights are ignored throughout: subgroup means are
//! unweighted, which is what a balanced synthetic panel is compared against.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demographics::{AgeBin, CrosstabKey, DemographicSchema};
use crate::questionnaire::Questionnaire;
use crate::stats::ScoreTable;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read CSV `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("CSV record error at row {row}: {source}")]
    Record {
        row: usize,
        #[source]
        source: csv::Error,
    },
    #[error("CSV is missing column `{column}` named in the recode spec")]
    MissingColumn { column: String },
    #[error("row {row}: unmapped value `{value}` in column `{column}`")]
    UnmappedValue {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: column `{column}` maps `{value}` to `{label}`, which is not in the demographic schema")]
    UnknownLabel {
        row: usize,
        column: String,
        value: String,
        label: String,
    },
    #[error("row {row}: unparseable birth year `{value}`")]
    BadBirthYear { row: usize, value: String },
    #[error("question `{question}` maps `{value}` to score {score}, outside 1..={cardinality}")]
    ScoreOutOfScale {
        question: String,
        value: String,
        score: u32,
        cardinality: u32,
    },
    #[error("recode spec names unknown question `{0}`")]
    UnknownQuestion(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AgeBinError {
    #[error("age {0} is implausible (must be in 1..=129)")]
    ImplausibleAge(i64),
    #[error("age {0} falls outside every schema age bin")]
    NotCovered(i64),
}

/// Recode for one question: the CSV column and the raw-value map. A `null`
/// target drops the answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecode {
    pub column: String,
    pub map: BTreeMap<String, Option<u32>>,
}

/// Declarative mapping from raw CSV values onto the questionnaire scales and
/// the demographic schema.
///
/// Demographic maps (`ideology_map`, `gender_map`, `race_map`) map raw values
/// to schema labels; `null` drops the respondent. An empty demographic map
/// means raw values are already schema labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecodeSpec {
    /// Column holding the respondent id; row numbers are used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub respondent_id_column: Option<String>,
    pub ideology_column: String,
    #[serde(default)]
    pub ideology_map: BTreeMap<String, Option<String>>,
    pub birth_year_column: String,
    pub gender_column: String,
    #[serde(default)]
    pub gender_map: BTreeMap<String, Option<String>>,
    pub race_column: String,
    #[serde(default)]
    pub race_map: BTreeMap<String, Option<String>>,
    pub questions: BTreeMap<String, QuestionRecode>,
}

/// One ingested respondent: the crosstab cell plus per-question ordinal
/// scores. Dropped answers are simply absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanResponseRecord {
    pub respondent_id: String,
    pub cell: CrosstabKey,
    pub scores: BTreeMap<String, u32>,
}

/// Ingestion result: records plus skip counters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestOutcome {
    pub records: Vec<HumanResponseRecord>,
    /// Rows skipped because the computed age fell outside every schema bin.
    pub age_skipped: usize,
    /// Rows dropped because a demographic value mapped to null.
    pub respondents_dropped: usize,
    /// Per-question count of answers dropped by null mappings.
    pub answers_dropped: BTreeMap<String, usize>,
}

/// Bins `fielding_year - birth_year` into the schema's age bins.
/// Upper-inclusive: age 30 lands in (16, 30].
pub fn bin_age(
    birth_year: i32,
    fielding_year: i32,
    schema: &DemographicSchema,
) -> Result<AgeBin, AgeBinError> {
    let age = i64::from(fielding_year) - i64::from(birth_year);
    if age <= 0 || age >= 130 {
        return Err(AgeBinError::ImplausibleAge(age));
    }
    schema
        .age_bin_for(age as u32)
        .ok_or(AgeBinError::NotCovered(age))
}

/// Reads a CSV and recodes it onto the questionnaire scales and schema.
///
/// Rows are processed in file order and the output order is deterministic.
/// Answer-level nulls drop single scores; demographic nulls drop respondents;
/// ages outside schema coverage skip the row (counted). Everything else that
/// does not recode cleanly is a fatal error carrying the 1-based data row
/// number.
pub fn ingest_csv(
    path: impl AsRef<Path>,
    spec: &RecodeSpec,
    schema: &DemographicSchema,
    questionnaire: &Questionnaire,
    fielding_year: i32,
) -> Result<IngestOutcome, IngestError> {
    let path = path.as_ref();
    for qid in spec.questions.keys() {
        if questionnaire.question(qid).is_none() {
            return Err(IngestError::UnknownQuestion(qid.clone()));
        }
    }

    let mut reader = csv::Reader::from_path(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let headers = reader
        .headers()
        .map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?
        .clone();

    let column_index = |name: &str| -> Result<usize, IngestError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn {
                column: name.to_string(),
            })
    };

    let id_col = spec
        .respondent_id_column
        .as_deref()
        .map(column_index)
        .transpose()?;
    let ideology_col = column_index(&spec.ideology_column)?;
    let birth_col = column_index(&spec.birth_year_column)?;
    let gender_col = column_index(&spec.gender_column)?;
    let race_col = column_index(&spec.race_column)?;
    let question_cols: Vec<(&String, &QuestionRecode, usize)> = spec
        .questions
        .iter()
        .map(|(qid, recode)| Ok((qid, recode, column_index(&recode.column)?)))
        .collect::<Result<_, IngestError>>()?;

    let mut outcome = IngestOutcome {
        records: Vec::new(),
        age_skipped: 0,
        respondents_dropped: 0,
        answers_dropped: BTreeMap::new(),
    };

    for (index, row) in reader.records().enumerate() {
        let row_number = index + 1; // first data row is row 1
        let row = row.map_err(|source| IngestError::Record {
            row: row_number,
            source,
        })?;
        let field = |col: usize| row.get(col).unwrap_or("").to_string();

        let map_label = |column: &str,
                         raw: &str,
                         map: &BTreeMap<String, Option<String>>,
                         valid: &[String]|
         -> Result<Option<String>, IngestError> {
            let label = if map.is_empty() {
                Some(raw.to_string())
            } else {
                match map.get(raw) {
                    None => {
                        return Err(IngestError::UnmappedValue {
                            row: row_number,
                            column: column.to_string(),
                            value: raw.to_string(),
                        })
                    }
                    Some(None) => None,
                    Some(Some(label)) => Some(label.clone()),
                }
            };
            match label {
                None => Ok(None),
                Some(label) => {
                    if valid.contains(&label) {
                        Ok(Some(label))
                    } else {
                        Err(IngestError::UnknownLabel {
                            row: row_number,
                            column: column.to_string(),
                            value: raw.to_string(),
                            label,
                        })
                    }
                }
            }
        };

        let ideology = map_label(
            &spec.ideology_column,
            &field(ideology_col),
            &spec.ideology_map,
            &schema.ideology_bins,
        )?;
        let gender = map_label(
            &spec.gender_column,
            &field(gender_col),
            &spec.gender_map,
            &schema.gender_labels,
        )?;
        let race = map_label(
            &spec.race_column,
            &field(race_col),
            &spec.race_map,
            &schema.race_labels,
        )?;
        let (Some(ideology), Some(gender), Some(race)) = (ideology, gender, race) else {
            outcome.respondents_dropped += 1;
            continue;
        };

        let birth_raw = field(birth_col);
        let birth_year: i32 =
            birth_raw
                .trim()
                .parse()
                .map_err(|_| IngestError::BadBirthYear {
                    row: row_number,
                    value: birth_raw.clone(),
                })?;
        let age_bin = match bin_age(birth_year, fielding_year, schema) {
            Ok(bin) => bin,
            Err(_) => {
                outcome.age_skipped += 1;
                continue;
            }
        };

        let mut scores = BTreeMap::new();
        for (qid, recode, col) in &question_cols {
            let raw = field(*col);
            match recode.map.get(&raw) {
                None => {
                    return Err(IngestError::UnmappedValue {
                        row: row_number,
                        column: recode.column.clone(),
                        value: raw,
                    })
                }
                Some(None) => {
                    *outcome.answers_dropped.entry((*qid).clone()).or_default() += 1;
                }
                Some(Some(score)) => {
                    let cardinality = questionnaire
                        .question(qid)
                        .expect("validated above")
                        .scale
                        .cardinality;
                    if *score < 1 || *score > cardinality {
                        return Err(IngestError::ScoreOutOfScale {
                            question: (*qid).clone(),
                            value: raw,
                            score: *score,
                            cardinality,
                        });
                    }
                    scores.insert((*qid).clone(), *score);
                }
            }
        }

        let respondent_id = id_col
            .map(field)
            .unwrap_or_else(|| format!("row{row_number}"));
        outcome.records.push(HumanResponseRecord {
            respondent_id,
            cell: CrosstabKey {
                ideology,
                age_bin,
                gender,
                race,
            },
            scores,
        });
    }

    Ok(outcome)
}

/// Groups human scores into the per-(question, cell) table. Cells with zero
/// observations are present with empty lists.
pub fn human_cell_table(
    records: &[HumanResponseRecord],
    questionnaire: &Questionnaire,
    schema: &DemographicSchema,
) -> ScoreTable {
    let mut table = ScoreTable::empty(questionnaire, schema);
    for record in records {
        for (qid, &score) in &record.scores {
            table.push(qid, &record.cell, score);
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(dir: &tempfile::TempDir, content: &str) -> std::path::PathBuf {
        let path = dir.path().join("human.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    fn spec() -> RecodeSpec {
        let mut questions = BTreeMap::new();
        questions.insert(
            "abortion_ban".to_string(),
            QuestionRecode {
                column: "CC22_332f".into(),
                map: [
                    ("Support".to_string(), Some(1)),
                    ("Oppose".to_string(), Some(2)),
                ]
                .into(),
            },
        );
        questions.insert(
            "scotus_approval".to_string(),
            QuestionRecode {
                column: "CC22_320c".into(),
                map: [
                    ("Strongly approve".to_string(), Some(1)),
                    ("Somewhat approve".to_string(), Some(2)),
                    ("Somewhat disapprove".to_string(), Some(3)),
                    ("Strongly disapprove".to_string(), Some(4)),
                    ("Not sure".to_string(), None),
                ]
                .into(),
            },
        );
        questions.insert(
            "gun_background_checks".to_string(),
            QuestionRecode {
                column: "CC22_330e".into(),
                map: [
                    ("selected".to_string(), Some(1)),
                    ("not selected".to_string(), Some(2)),
                ]
                .into(),
            },
        );
        RecodeSpec {
            respondent_id_column: Some("caseid".into()),
            ideology_column: "ideo5".into(),
            ideology_map: BTreeMap::new(),
            birth_year_column: "birthyr".into(),
            gender_column: "gender4".into(),
            gender_map: [
                ("Man".to_string(), Some("Man".to_string())),
                ("Woman".to_string(), Some("Woman".to_string())),
                ("Non-binary".to_string(), None),
            ]
            .into(),
            race_column: "race".into(),
            race_map: [
                ("White".to_string(), Some("white".to_string())),
                ("Black".to_string(), Some("non-white".to_string())),
                ("Hispanic".to_string(), Some("non-white".to_string())),
            ]
            .into(),
            questions,
        }
    }

    const HEADER: &str = "caseid,ideo5,birthyr,gender4,race,CC22_332f,CC22_320c,CC22_330e\n";

    #[test]
    fn fixture_row_recodes_to_the_expected_cell_and_scores() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            &dir,
            &format!("{HEADER}1001,Liberal,1995,Woman,White,Oppose,Somewhat approve,selected\n"),
        );
        let outcome = ingest_csv(
            &path,
            &spec(),
            &DemographicSchema::default(),
            &Questionnaire::ces2022(),
            2022,
        )
        .unwrap();
        assert_eq!(outcome.records.len(), 1);
        let record = &outcome.records[0];
        assert_eq!(record.respondent_id, "1001");
        assert_eq!(record.cell.ideology, "Liberal");
        assert_eq!(record.cell.age_bin, AgeBin::new(16, 30)); // age 27
        assert_eq!(record.cell.gender, "Woman");
        assert_eq!(record.cell.race, "white");
        assert_eq!(record.scores["abortion_ban"], 2);
        assert_eq!(record.scores["scotus_approval"], 2);
        // Multi-select "selected" lands on the agree pole, score 1.
        assert_eq!(record.scores["gun_background_checks"], 1);
    }

    #[test]
    fn not_sure_answers_are_absent_not_invented() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            &dir,
            &format!("{HEADER}1,Moderate,1980,Man,Black,Support,Not sure,not selected\n"),
        );
        let outcome = ingest_csv(
            &path,
            &spec(),
            &DemographicSchema::default(),
            &Questionnaire::ces2022(),
            2022,
        )
        .unwrap();
        let record = &outcome.records[0];
        assert!(!record.scores.contains_key("scotus_approval"));
        assert_eq!(outcome.answers_dropped["scotus_approval"], 1);
        assert_eq!(record.scores["abortion_ban"], 1);
        assert_eq!(record.scores["gun_background_checks"], 2);
    }

    #[test]
    fn age_binning_boundaries() {
        let schema = DemographicSchema::default();
        assert_eq!(bin_age(1995, 2022, &schema).unwrap(), AgeBin::new(16, 30));
        // Upper-inclusive boundary: exactly 30 stays in (16, 30].
        assert_eq!(bin_age(1992, 2022, &schema).unwrap(), AgeBin::new(16, 30));
        assert_eq!(
            bin_age(2007, 2022, &schema).unwrap_err(),
            AgeBinError::NotCovered(15)
        );
        assert_eq!(
            bin_age(2022, 2022, &schema).unwrap_err(),
            AgeBinError::ImplausibleAge(0)
        );
        assert_eq!(
            bin_age(1880, 2022, &schema).unwrap_err(),
            AgeBinError::ImplausibleAge(142)
        );
    }

    #[test]
    fn uncovered_ages_are_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            &dir,
            &format!(
                "{HEADER}1,Liberal,2007,Man,White,Support,Not sure,selected\n\
                 2,Liberal,1980,Man,White,Support,Not sure,selected\n"
            ),
        );
        let outcome = ingest_csv(
            &path,
            &spec(),
            &DemographicSchema::default(),
            &Questionnaire::ces2022(),
            2022,
        )
        .unwrap();
        assert_eq!(outcome.records.len(), 1);
        assert_eq!(outcome.age_skipped, 1);
    }

    #[test]
    fn demographic_null_drops_the_respondent() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            &dir,
            &format!(
                "{HEADER}1,Liberal,1990,Non-binary,White,Support,Not sure,selected\n\
                 2,Conservative,1990,Man,White,Oppose,Not sure,selected\n"
            ),
        );
        let outcome = ingest_csv(
            &path,
            &spec(),
            &DemographicSchema::default(),
            &Questionnaire::ces2022(),
            2022,
        )
        .unwrap();
        assert_eq!(outcome.records.len(), 1);
        assert_eq!(outcome.respondents_dropped, 1);
        assert_eq!(outcome.records[0].cell.ideology, "Conservative");
    }

    #[test]
    fn unmapped_value_is_fatal_with_row_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            &dir,
            &format!(
                "{HEADER}1,Liberal,1990,Man,White,Support,Not sure,selected\n\
                 2,Liberal,1990,Man,White,MYSTERY,Not sure,selected\n"
            ),
        );
        let err = ingest_csv(
            &path,
            &spec(),
            &DemographicSchema::default(),
            &Questionnaire::ces2022(),
            2022,
        )
        .unwrap_err();
        match err {
            IngestError::UnmappedValue { row, column, value } => {
                assert_eq!(row, 2);
                assert_eq!(column, "CC22_332f");
                assert_eq!(value, "MYSTERY");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            &dir,
            "caseid,ideo5,birthyr,gender4,CC22_332f,CC22_320c,CC22_330e\n1,Liberal,1990,Man,Support,Not sure,selected\n",
        );
        let err = ingest_csv(
            &path,
            &spec(),
            &DemographicSchema::default(),
            &Questionnaire::ces2022(),
            2022,
        )
        .unwrap_err();
        assert!(matches!(err, IngestError::MissingColumn { column } if column == "race"));
    }

    #[test]
    fn bad_birth_year_is_fatal_with_row_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_csv(
            &dir,
            &format!("{HEADER}1,Liberal,unknown,Man,White,Support,Not sure,selected\n"),
        );
        let err = ingest_csv(
            &path,
            &spec(),
            &DemographicSchema::default(),
            &Questionnaire::ces2022(),
            2022,
        )
        .unwrap_err();
        assert!(matches!(err, IngestError::BadBirthYear { row: 1, .. }));
    }

    #[test]
    fn cell_table_groups_scores_and_keeps_empty_cells() {
        let questionnaire = Questionnaire::ces2022();
        let schema = DemographicSchema::default();
        let cell = CrosstabKey::new("Liberal", AgeBin::new(16, 30), "Woman", "white");
        let records = vec![
            HumanResponseRecord {
                respondent_id: "1".into(),
                cell: cell.clone(),
                scores: [("abortion_ban".to_string(), 1u32)].into(),
            },
            HumanResponseRecord {
                respondent_id: "2".into(),
                cell: cell.clone(),
                scores: [("abortion_ban".to_string(), 2u32)].into(),
            },
            // Record with no scores contributes nothing.
            HumanResponseRecord {
                respondent_id: "3".into(),
                cell: cell.clone(),
                scores: BTreeMap::new(),
            },
        ];
        let table = human_cell_table(&records, &questionnaire, &schema);
        assert_eq!(table.scores("abortion_ban", &cell).unwrap(), &[1, 2]);
        assert_eq!(table.total_observations(), 2);
        // Other cells exist with empty lists.
        let other = CrosstabKey::new("Moderate", AgeBin::new(30, 45), "Man", "non-white");
        assert_eq!(table.scores("abortion_ban", &other).unwrap(), &[] as &[u32]);
    }

    #[test]
    fn ingestion_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut content = HEADER.to_string();
        for i in 0..50 {
            let ideo = ["Liberal", "Moderate", "Conservative"][i % 3];
            let gender = ["Man", "Woman"][i % 2];
            let race = ["White", "Black", "Hispanic"][i % 3];
            let answer = ["Support", "Oppose"][i % 2];
            content.push_str(&format!(
                "{i},{ideo},{},{gender},{race},{answer},Not sure,selected\n",
                1950 + (i % 50)
            ));
        }
        let path = write_csv(&dir, &content);
        let questionnaire = Questionnaire::ces2022();
        let schema = DemographicSchema::default();
        let a = ingest_csv(&path, &spec(), &schema, &questionnaire, 2022).unwrap();
        let b = ingest_csv(&path, &spec(), &schema, &questionnaire, 2022).unwrap();
        assert_eq!(a, b);

        // Conservation: total grouped scores equal total present scores.
        let total_scores: usize = a.records.iter().map(|r| r.scores.len()).sum();
        let table = human_cell_table(&a.records, &questionnaire, &schema);
        assert_eq!(table.total_observations(), total_scores);
    }
}
