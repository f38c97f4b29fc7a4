//! Regenerates the bundled fixtures deterministically:
//!
//! - `fixtures/mock_model_demo.json` — demo mock opinion model
//! - `fixtures/human_synthetic.csv`  — 1,000-row synthetic survey CSV
//!
//! Both files derive from the same opinion table, so demo comparisons show a
//! strong (but noisy) correspondence between the mock panel and the "human"
//! fixture. The CSV is synthetic throughout; it mirrors the column layout and
//! category wording of a CES-style export without containing any licensed
//! microdata. A few rows carry out-of-coverage ages, a "Not sure" ideology, or
//! a non-binary gender so ingestion skip paths stay exercised.
//!
//! Run with: `cargo run -p pollsim --example generate_fixtures`

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use pollsim::demographics::{AgeBin, CrosstabKey, DemographicSchema};
use pollsim::mock::{score_pmf, MockOpinionModel, QuestionOpinion};
use pollsim::seed::derive_rng;

const SEED: u64 = 20220101;
const ROWS: usize = 1000;

struct QuestionSpec {
    id: &'static str,
    cardinality: u32,
    /// Means per ideology bin, in schema order (Very liberal .. Very conservative).
    ideology_means: [f64; 5],
    /// Offsets per age bin, in schema order.
    age_offsets: [f64; 4],
    /// (Man, Woman) offsets.
    gender_offsets: [f64; 2],
    /// (white, non-white) offsets.
    race_offsets: [f64; 2],
    /// Raw CSV strings per score level.
    levels: &'static [&'static str],
    /// Raw string recoded to "no answer", if the item has one.
    not_sure: Option<&'static str>,
}

const QUESTIONS: [QuestionSpec; 7] = [
    QuestionSpec {
        id: "police_safety",
        cardinality: 4,
        ideology_means: [3.0, 2.6, 2.1, 1.7, 1.4],
        age_offsets: [0.25, 0.10, -0.10, -0.25],
        gender_offsets: [0.0, 0.05],
        race_offsets: [-0.12, 0.12],
        levels: &["Mostly safe", "Somewhat safe", "Somewhat unsafe", "Mostly unsafe"],
        not_sure: None,
    },
    QuestionSpec {
        id: "scotus_approval",
        cardinality: 4,
        ideology_means: [3.4, 3.1, 2.5, 1.9, 1.6],
        age_offsets: [0.05, 0.0, 0.0, -0.05],
        gender_offsets: [0.0, 0.05],
        race_offsets: [0.0, 0.05],
        levels: &[
            "Strongly approve",
            "Somewhat approve",
            "Somewhat disapprove",
            "Strongly disapprove",
        ],
        not_sure: Some("Not sure"),
    },
    QuestionSpec {
        id: "ukraine_war",
        cardinality: 2,
        ideology_means: [1.30, 1.40, 1.55, 1.70, 1.80],
        age_offsets: [0.04, 0.0, 0.0, -0.04],
        gender_offsets: [0.04, -0.04],
        race_offsets: [0.0, 0.0],
        levels: &["selected", "not selected"],
        not_sure: None,
    },
    QuestionSpec {
        id: "prescription_import",
        cardinality: 2,
        ideology_means: [1.15, 1.22, 1.35, 1.48, 1.55],
        age_offsets: [0.0, 0.0, 0.0, 0.0],
        gender_offsets: [-0.05, 0.10],
        race_offsets: [0.0, 0.0],
        levels: &["Support", "Oppose"],
        not_sure: None,
    },
    QuestionSpec {
        id: "abortion_ban",
        cardinality: 2,
        ideology_means: [1.95, 1.88, 1.70, 1.40, 1.20],
        age_offsets: [0.0, 0.0, 0.0, -0.02],
        gender_offsets: [-0.04, 0.04],
        race_offsets: [0.0, 0.0],
        levels: &["Support", "Oppose"],
        not_sure: None,
    },
    QuestionSpec {
        id: "increase_fuel_production",
        cardinality: 2,
        ideology_means: [1.85, 1.75, 1.55, 1.30, 1.15],
        age_offsets: [0.06, 0.02, -0.02, -0.06],
        gender_offsets: [0.0, 0.0],
        race_offsets: [0.0, 0.0],
        levels: &["selected", "not selected"],
        not_sure: None,
    },
    QuestionSpec {
        id: "gun_background_checks",
        cardinality: 2,
        ideology_means: [1.08, 1.12, 1.25, 1.45, 1.60],
        age_offsets: [0.0, 0.0, 0.0, 0.0],
        gender_offsets: [0.02, -0.02],
        race_offsets: [0.0, 0.0],
        levels: &["selected", "not selected"],
        not_sure: None,
    },
];

const DISPERSION: f64 = 0.8;

fn mock_model(schema: &DemographicSchema) -> MockOpinionModel {
    let mut questions = BTreeMap::new();
    for spec in &QUESTIONS {
        let mut opinion = QuestionOpinion::default();
        for (i, bin) in schema.ideology_bins.iter().enumerate() {
            opinion
                .ideology_means
                .insert(bin.clone(), spec.ideology_means[i]);
        }
        for (i, bin) in schema.age_bins.iter().enumerate() {
            if spec.age_offsets[i] != 0.0 {
                opinion.age_offsets.insert(bin.label(), spec.age_offsets[i]);
            }
        }
        for (i, label) in schema.gender_labels.iter().enumerate() {
            if spec.gender_offsets[i] != 0.0 {
                opinion
                    .gender_offsets
                    .insert(label.clone(), spec.gender_offsets[i]);
            }
        }
        for (i, label) in schema.race_labels.iter().enumerate() {
            if spec.race_offsets[i] != 0.0 {
                opinion
                    .race_offsets
                    .insert(label.clone(), spec.race_offsets[i]);
            }
        }
        questions.insert(spec.id.to_string(), opinion);
    }
    MockOpinionModel {
        seed: 9,
        dispersion: DISPERSION,
        questions,
    }
}

fn pick<'a>(rng: &mut impl Rng, weighted: &[(&'a str, f64)]) -> &'a str {
    let total: f64 = weighted.iter().map(|(_, w)| w).sum();
    let mut u: f64 = rng.random::<f64>() * total;
    for (value, weight) in weighted {
        u -= weight;
        if u < 0.0 {
            return value;
        }
    }
    weighted.last().unwrap().0
}

fn draw_score(rng: &mut impl Rng, mean: f64, cardinality: u32) -> u32 {
    let pmf = score_pmf(mean, DISPERSION, cardinality);
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for (i, p) in pmf.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i as u32 + 1;
        }
    }
    cardinality
}

fn main() {
    let schema = DemographicSchema::default();
    let model = mock_model(&schema);
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");

    let mut model_json = serde_json::to_string_pretty(&model).unwrap();
    model_json.push('\n');
    std::fs::write(fixtures.join("mock_model_demo.json"), model_json).unwrap();

    let mut csv = String::from(
        "caseid,ideo5,birthyr,gender4,race,CC22_307,CC22_320c,CC22_321_1,CC22_327d,CC22_332f,CC22_333e,CC22_330e\n",
    );
    for row in 0..ROWS {
        let mut rng = derive_rng(SEED, &["row", &row.to_string()]);
        let ideology = pick(
            &mut rng,
            &[
                ("Very liberal", 0.12),
                ("Liberal", 0.20),
                ("Moderate", 0.32),
                ("Conservative", 0.21),
                ("Very conservative", 0.12),
                ("Not sure", 0.03),
            ],
        );
        let gender = pick(&mut rng, &[("Man", 0.48), ("Woman", 0.50), ("Non-binary", 0.02)]);
        let race = pick(
            &mut rng,
            &[
                ("White", 0.62),
                ("Black", 0.13),
                ("Hispanic", 0.14),
                ("Asian", 0.06),
                ("Other", 0.05),
            ],
        );
        // Two rows with ages outside schema coverage keep the skip path live.
        let birthyr = match row {
            497 => 2008, // age 14
            498 => 1915, // age 107
            _ => 2022 - rng.random_range(18..=92),
        };
        let age = 2022 - birthyr;

        // Cell used for score draws; rows that ingestion will drop still get
        // plausible answers drawn from a moderate persona.
        let cell = CrosstabKey::new(
            if ideology == "Not sure" { "Moderate" } else { ideology },
            schema
                .age_bin_for(age.clamp(17, 100) as u32)
                .unwrap_or(AgeBin::new(30, 45)),
            if gender == "Non-binary" { "Man" } else { gender },
            if race == "White" { "white" } else { "non-white" },
        );

        let mut answers = Vec::new();
        for spec in &QUESTIONS {
            if let Some(not_sure) = spec.not_sure {
                if rng.random::<f64>() < 0.03 {
                    answers.push(not_sure.to_string());
                    continue;
                }
            }
            let mean = model
                .cell_mean(spec.id, &cell, spec.cardinality)
                .expect("generator questions are in the model");
            let score = draw_score(&mut rng, mean, spec.cardinality);
            answers.push(spec.levels[score as usize - 1].to_string());
        }

        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            1000 + row,
            ideology,
            birthyr,
            gender,
            race,
            answers.join(",")
        );
    }
    std::fs::write(fixtures.join("human_synthetic.csv"), csv).unwrap();
    println!("fixtures regenerated under {}", fixtures.display());
}
