//! Position-score extraction from completion text.
//!
//! A score line matches, case-insensitively: optional leading whitespace,
//! `Position score`, optional whitespace, `:`, optional whitespace, an integer
//! (optional minus sign), then at most a trailing period and whitespace.
//! Nothing else may appear on the line. The first matching line supplies the
//! score; if two or more matching lines carry different values the response is
//! ambiguous. Values are taken literally — the parser never remaps a score, so
//! score 1 always means the prompt's low anchor. Fractional values such as
//! `1.5` do not match: the scale is integral and the prompt demands a single
//! strictly numeric value.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::demographics::CrosstabKey;
use crate::questionnaire::ResponseScale;

static SCORE_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*position\s+score\s*:\s*(-?\d+)\s*\.?\s*$").expect("score regex compiles")
});

/// Outcome of extracting a score from one completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    /// A single score value was found and lies within the scale.
    Parsed,
    /// A single score value was found but lies outside `[1, cardinality]`.
    OutOfRange,
    /// No score line was found.
    MissingScore,
    /// Two or more score lines with different values were found.
    Ambiguous,
}

/// One elicited answer: where it came from, the verbatim completion, and what
/// the parser made of it. Raw text is preserved unmodified for audit and
/// re-parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub question_id: String,
    pub cell: CrosstabKey,
    pub replicate: u32,
    pub raw_text: String,
    pub score: Option<i64>,
    pub status: ParseStatus,
}

impl ResponseRecord {
    pub fn from_completion(
        question_id: impl Into<String>,
        cell: CrosstabKey,
        replicate: u32,
        raw_text: impl Into<String>,
        scale: &ResponseScale,
    ) -> Self {
        let raw_text = raw_text.into();
        let (score, status) = extract_position_score(&raw_text, scale);
        Self {
            question_id: question_id.into(),
            cell,
            replicate,
            raw_text,
            score,
            status,
        }
    }
}

/// Scans completion text for the position score.
///
/// Returns `(Some(k), Parsed)` when a single value `1 <= k <= cardinality` is
/// found, `(Some(k), OutOfRange)` when the single value lies outside the
/// scale, `(None, MissingScore)` when no line matches, and `(None, Ambiguous)`
/// when matching lines disagree.
pub fn extract_position_score(text: &str, scale: &ResponseScale) -> (Option<i64>, ParseStatus) {
    let mut found: Option<i64> = None;
    for line in text.lines() {
        let Some(captures) = SCORE_LINE.captures(line) else {
            continue;
        };
        let Ok(value) = captures[1].parse::<i64>() else {
            // Overflowing digit strings are treated as no value on this line.
            continue;
        };
        match found {
            None => found = Some(value),
            Some(prev) if prev == value => {}
            Some(_) => return (None, ParseStatus::Ambiguous),
        }
    }
    match found {
        None => (None, ParseStatus::MissingScore),
        Some(value) => {
            if value >= 1 && value <= i64::from(scale.cardinality) {
                (Some(value), ParseStatus::Parsed)
            } else {
                (Some(value), ParseStatus::OutOfRange)
            }
        }
    }
}

/// Per-status counts over a batch of records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub total: usize,
    pub parsed: usize,
    pub out_of_range: usize,
    pub missing_score: usize,
    pub ambiguous: usize,
}

impl ParseReport {
    /// Fraction of records that did not parse; 0.0 for an empty batch.
    pub fn failure_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            1.0 - self.parsed as f64 / self.total as f64
        }
    }
}

/// Tallies parse outcomes for a batch.
pub fn classify_batch(records: &[ResponseRecord]) -> ParseReport {
    let mut report = ParseReport {
        total: records.len(),
        parsed: 0,
        out_of_range: 0,
        missing_score: 0,
        ambiguous: 0,
    };
    for record in records {
        match record.status {
            ParseStatus::Parsed => report.parsed += 1,
            ParseStatus::OutOfRange => report.out_of_range += 1,
            ParseStatus::MissingScore => report.missing_score += 1,
            ParseStatus::Ambiguous => report.ambiguous += 1,
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demographics::AgeBin;
    use proptest::prelude::*;

    fn scale(cardinality: u32) -> ResponseScale {
        ResponseScale {
            cardinality,
            low_label: "low".into(),
            high_label: "high".into(),
            level_labels: None,
        }
    }

    // Verbatim example completions the prompt protocol is known to elicit.
    const GUN_COMPLETION: &str = "Position score: 1\n\nAs a young, politically liberal man who identifies as non-white, I fully support the proposal to improve background checks for prospective gun buyers under the age of 21. It is unacceptable that individuals with a history of mental illness or juvenile offenses can easily acquire firearms. This new policy would ensure that authorities have enough time to properly check a person's background before they are allowed to purchase a gun. We have seen far too many tragic shootings in recent years, and it is time that we take meaningful action to prevent future tragedies. By implementing stricter background checks, we can protect ourselves and our loved ones from senseless violence.";

    const ABORTION_COMPLETION: &str = "Position score: 2\n\nAs a politically moderate woman in my late 50s who identifies as non-white, I oppose the policy proposal to make abortions illegal in all circumstances. This issue is not as simple as being pro-life or pro-choice, and I firmly believe that a woman should have the right to make decisions about her own body without interference from the government or anyone else. Making abortions illegal would only lead to unsafe and potentially life-threatening procedures, and it would be a violation of a woman's fundamental rights. Instead, we should focus on increasing access to education and resources that help prevent unwanted pregnancies in the first place, and provide support for women who do choose to carry a pregnancy to term. It is important to respect women's autonomy and trust them to make the best decisions for themselves and their families.";

    const UKRAINE_COMPLETION: &str = "Position score: 1\n\nAs a politically liberal man in the age range of 16-30 who identifies as non-white, I strongly believe that the United States should not get involved in response to Russia's 2022 invasion of Ukraine. As much as we want to be the global police, we simply do not have the resources nor the legitimacy to intervene in every conflict around the world. American imperialism has caused more harm than good in many cases, and it's time for us to realize that we cannot solve every problem with force. Furthermore, getting involved in another country's conflict has the potential to escalate the situation and put American lives at risk. Let us focus on repairing relationships with our allies and strengthening our own nation instead of stirring up more conflict.";

    #[test]
    fn reference_completions_parse_to_their_scores() {
        assert_eq!(
            extract_position_score(GUN_COMPLETION, &scale(2)),
            (Some(1), ParseStatus::Parsed)
        );
        assert_eq!(
            extract_position_score(ABORTION_COMPLETION, &scale(2)),
            (Some(2), ParseStatus::Parsed)
        );
        assert_eq!(
            extract_position_score(UKRAINE_COMPLETION, &scale(2)),
            (Some(1), ParseStatus::Parsed)
        );
    }

    #[test]
    fn refusal_is_missing_score() {
        assert_eq!(
            extract_position_score("I'm sorry, I cannot write that letter.", &scale(2)),
            (None, ParseStatus::MissingScore)
        );
    }

    #[test]
    fn out_of_range_value_is_reported_with_its_value() {
        assert_eq!(
            extract_position_score("Position score: 7", &scale(5)),
            (Some(7), ParseStatus::OutOfRange)
        );
    }

    /// Real-world-style variants; each row is (text, cardinality, expected).
    #[test]
    fn robustness_corpus_parses_per_the_documented_rule() {
        use ParseStatus::*;
        let corpus: Vec<(&str, u32, Option<i64>, ParseStatus)> = vec![
            // Case and spacing variants.
            ("Position score: 1\n\nDear editor...", 2, Some(1), Parsed),
            ("Position Score: 3\n\nDear editor...", 4, Some(3), Parsed),
            ("position score:2", 2, Some(2), Parsed),
            ("POSITION SCORE: 4", 4, Some(4), Parsed),
            ("  Position score : 2", 2, Some(2), Parsed),
            ("\tPosition score: 2", 2, Some(2), Parsed),
            ("Position  score: 2", 2, Some(2), Parsed),
            ("position\tscore: 1", 2, Some(1), Parsed),
            ("Position score: 2.", 2, Some(2), Parsed),
            ("Position score: 002", 2, Some(2), Parsed),
            ("Position score: 2\r\nDear editor,", 2, Some(2), Parsed),
            // Score line embedded mid-letter.
            ("Here is the letter.\nPosition score: 3\nDear editor...", 4, Some(3), Parsed),
            // Identical duplicate lines agree.
            ("Position score: 2\n\nbody\n\nPosition score: 2", 2, Some(2), Parsed),
            // Conflicting lines are ambiguous.
            ("Position score: 1\nbody\nPosition score: 2", 2, None, Ambiguous),
            ("Position score: 1\nPosition score: 2\nPosition score: 1", 2, None, Ambiguous),
            // Out-of-range values keep the literal value.
            ("Position score: 0", 2, Some(0), OutOfRange),
            ("Position score: -1", 2, Some(-1), OutOfRange),
            ("Position score: 10", 4, Some(10), OutOfRange),
            // Non-matching shapes are missing.
            ("Position score: 1.5", 2, None, MissingScore),
            ("Position score: five", 2, None, MissingScore),
            ("Position score: +2", 2, None, MissingScore),
            ("Position score: 2 (leaning oppose)", 2, None, MissingScore),
            ("The score is 2", 2, None, MissingScore),
            ("Position score 2", 2, None, MissingScore),
            ("", 2, None, MissingScore),
        ];
        assert!(corpus.len() >= 20);
        for (text, cardinality, score, status) in corpus {
            assert_eq!(
                extract_position_score(text, &scale(cardinality)),
                (score, status),
                "text: {text:?}"
            );
        }
    }

    #[test]
    fn classify_batch_counts_and_rates() {
        let cell = CrosstabKey::new("Liberal", AgeBin::new(16, 30), "Man", "white");
        let mk = |text: &str| {
            ResponseRecord::from_completion("q", cell.clone(), 0, text, &scale(2))
        };
        let all_good: Vec<_> = (0..10).map(|_| mk("Position score: 1")).collect();
        let report = classify_batch(&all_good);
        assert_eq!(report.parsed, 10);
        assert_eq!(report.failure_rate(), 0.0);

        let mut mixed: Vec<_> = (0..8).map(|_| mk("Position score: 2")).collect();
        mixed.push(mk("no score here"));
        mixed.push(mk("Position score: 9"));
        let report = classify_batch(&mixed);
        assert_eq!(report.total, 10);
        assert_eq!(report.parsed, 8);
        assert_eq!(report.missing_score, 1);
        assert_eq!(report.out_of_range, 1);
        assert!((report.failure_rate() - 0.2).abs() < 1e-12);
        assert_eq!(
            report.parsed + report.out_of_range + report.missing_score + report.ambiguous,
            report.total
        );
    }

    #[test]
    fn empty_batch_has_zero_failure_rate() {
        let report = classify_batch(&[]);
        assert_eq!(report.total, 0);
        assert_eq!(report.failure_rate(), 0.0);
    }

    proptest! {
        // The parser is remap-free: whatever integer the text carries is the
        // integer reported, and parsing is idempotent.
        #[test]
        fn parser_reports_literal_values(k in -50i64..200, cardinality in 2u32..=9) {
            let text = format!("Position score: {k}\n\nDear editor, ...");
            let s = scale(cardinality);
            let first = extract_position_score(&text, &s);
            let second = extract_position_score(&text, &s);
            prop_assert_eq!(first, second);
            let (value, status) = first;
            prop_assert_eq!(value, Some(k));
            if k >= 1 && k <= i64::from(cardinality) {
                prop_assert_eq!(status, ParseStatus::Parsed);
            } else {
                prop_assert_eq!(status, ParseStatus::OutOfRange);
            }
        }
    }
}
