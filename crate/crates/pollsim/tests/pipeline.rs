//! End-to-end runner tests against the bundled fixtures: caching, resume,
//! determinism, and the CLI surface.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use pollsim::mock::{mock_complete, MockOpinionModel};
use pollsim::prompting::PromptTemplate;
use pollsim::questionnaire::load_questionnaire;
use pollsim::runner::{cmd_all, cmd_compare, cmd_parse, cmd_plan, cmd_run, RawResponseLine, RunConfig, RunError};
use pollsim::stats::{Grouping, RhoOutcome};

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Demo config with small-run overrides suitable for tests.
fn test_config(out_dir: &Path, replicates: u32, seed: u64) -> RunConfig {
    let mut config = RunConfig::load(fixtures_dir().join("run_mock.json")).unwrap();
    config.replicates = replicates;
    config.bootstrap_reps = 100;
    config.seed = seed;
    config.out_dir = out_dir.to_path_buf();
    config
}

fn read_lines(path: &Path) -> Vec<RawResponseLine> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|line| serde_json::from_str(line).unwrap())
        .collect()
}

fn snapshot_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let relative = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(relative, fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn second_run_hits_the_cache_completely() {
    let dir = tempfile::tempdir().unwrap();
    let config = test_config(dir.path(), 2, 7);
    let first = cmd_run(&config, false).unwrap();
    assert_eq!(first.executed, first.plan_size);
    assert_eq!(first.cached, 0);

    let second = cmd_run(&config, false).unwrap();
    assert_eq!(second.executed, 0);
    assert_eq!(second.cached, second.plan_size);
    assert_eq!(second.plan_size, 7 * 80 * 2);
}

#[test]
fn interrupted_run_resumes_to_an_identical_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = test_config(dir.path(), 3, 13);
    let outcome = cmd_run(&config, false).unwrap();
    let raw_path = outcome.run_dir.join("raw_responses.jsonl");
    let reference = fs::read(&raw_path).unwrap();

    // Cut mid-run: keep 40% of the lines plus a torn final line.
    let keep = reference
        .split_inclusive(|&b| b == b'\n')
        .take(outcome.plan_size * 2 / 5)
        .flatten()
        .copied()
        .collect::<Vec<u8>>();
    let mut torn = keep.clone();
    torn.extend_from_slice(b"{\"key\":{\"questionnaire_hash\":\"tr");
    fs::write(&raw_path, &torn).unwrap();

    let resumed = cmd_run(&config, false).unwrap();
    assert_eq!(resumed.cached, outcome.plan_size * 2 / 5);
    assert_eq!(resumed.executed, outcome.plan_size - resumed.cached);

    let restored = fs::read(&raw_path).unwrap();
    assert_eq!(restored, reference, "resumed file must be byte-identical");

    // Exactly plan-size records with no duplicate keys.
    let lines = read_lines(&raw_path);
    assert_eq!(lines.len(), outcome.plan_size);
    let keys: HashSet<(String, String, u32)> = lines
        .iter()
        .map(|l| {
            (
                l.key.question_id.clone(),
                l.key.cell.to_string(),
                l.key.replicate,
            )
        })
        .collect();
    assert_eq!(keys.len(), outcome.plan_size);
}

#[test]
fn mock_pipeline_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = test_config(dir.path(), 2, 21);
    cmd_all(&config, false).unwrap();
    let first = snapshot_tree(dir.path());
    assert!(first.keys().any(|p| p.ends_with("manifest.json")));
    assert!(first.keys().any(|p| p.ends_with("raw_responses.jsonl")));

    fs::remove_dir_all(dir.path()).unwrap();
    fs::create_dir_all(dir.path()).unwrap();
    cmd_all(&config, false).unwrap();
    let second = snapshot_tree(dir.path());

    assert_eq!(
        first.keys().collect::<Vec<_>>(),
        second.keys().collect::<Vec<_>>()
    );
    for (path, bytes) in &first {
        assert_eq!(bytes, &second[path], "{} differs between runs", path.display());
    }
}

#[test]
fn cached_text_matches_a_direct_mock_query() {
    let dir = tempfile::tempdir().unwrap();
    let config = test_config(dir.path(), 2, 5);
    let outcome = cmd_run(&config, false).unwrap();
    let lines = read_lines(&outcome.run_dir.join("raw_responses.jsonl"));

    let model =
        MockOpinionModel::load(fixtures_dir().join("mock_model_demo.json"), config.seed).unwrap();
    let questionnaire = load_questionnaire(fixtures_dir().join("questionnaire_ces2022.json")).unwrap();
    let template = PromptTemplate::default();
    for line in lines.iter().step_by(97) {
        let question = questionnaire.question(&line.key.question_id).unwrap();
        let ctx = template.render(question, &line.key.cell);
        let direct = mock_complete(&model, &ctx, line.key.replicate).unwrap();
        assert_eq!(direct.text, line.text, "cache must equal a fresh mock query");
    }
}

#[test]
fn dry_run_writes_nothing_and_previews_cost() {
    let dir = tempfile::tempdir().unwrap();
    let config = test_config(dir.path(), 20, 7);
    let outcome = cmd_run(&config, true).unwrap();
    assert!(outcome.dry_run);
    assert_eq!(outcome.plan_size, 11_200);
    assert_eq!(outcome.executed, 0);
    assert!(outcome.cost_estimate_usd > 0.0);
    assert!(
        !outcome.run_dir.exists(),
        "dry run must not create the run directory"
    );
}

#[test]
fn compare_without_raw_responses_is_a_clear_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = test_config(dir.path(), 2, 7);
    let err = cmd_compare(&config).unwrap_err();
    assert!(matches!(err, RunError::MissingRawResponses(_)));
}

#[test]
fn compare_without_human_section_is_a_clear_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = test_config(dir.path(), 2, 7);
    cmd_run(&config, false).unwrap();
    config.human = None;
    let err = cmd_compare(&config).unwrap_err();
    assert!(matches!(err, RunError::MissingHumanSection));
}

#[test]
fn question_missing_from_human_data_is_reported_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = test_config(dir.path(), 2, 7);
    config
        .human
        .as_mut()
        .unwrap()
        .recode
        .questions
        .remove("ukraine_war");
    cmd_run(&config, false).unwrap();
    let outcome = cmd_compare(&config).unwrap();

    let ukraine = outcome
        .comparison("ukraine_war", Grouping::Ideology)
        .unwrap();
    assert_eq!(ukraine.rho_outcome, RhoOutcome::NoHumanData);
    assert!(ukraine.pairs.is_empty());
    assert_eq!(ukraine.excluded.len(), 5);

    // Other questions are unaffected.
    let abortion = outcome
        .comparison("abortion_ban", Grouping::Ideology)
        .unwrap();
    assert_eq!(abortion.rho_outcome, RhoOutcome::Defined);
    assert_eq!(abortion.pairs.len(), 5);

    let table = outcome.summary_table();
    assert!(table.contains("no human data"));
}

#[test]
fn changed_questionnaire_invalidates_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let config = test_config(dir.path(), 1, 7);
    let outcome = cmd_run(&config, false).unwrap();

    // Same run directory, different questionnaire content.
    let questionnaire_copy = dir.path().join("questionnaire_edited.json");
    let mut text = fs::read_to_string(&config.questionnaire).unwrap();
    text = text.replace("How do the police make you feel?", "Edited question?");
    fs::write(&questionnaire_copy, text).unwrap();
    let mut edited = config.clone();
    edited.questionnaire = questionnaire_copy;

    // The edited config hashes to a different run id, so nothing collides; to
    // provoke a mismatch, point the edited run at the old directory.
    let old_raw = outcome.run_dir.join("raw_responses.jsonl");
    let new_run = cmd_plan(&edited).unwrap();
    fs::create_dir_all(&new_run.run_dir).unwrap();
    fs::copy(&old_raw, new_run.run_dir.join("raw_responses.jsonl")).unwrap();
    let err = cmd_run(&edited, false).unwrap_err();
    assert!(matches!(err, RunError::CacheMismatch { .. }), "{err:?}");
}

#[test]
fn parse_subcommand_reports_full_success_for_mock_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = test_config(dir.path(), 2, 7);
    cmd_run(&config, false).unwrap();
    let outcome = cmd_parse(&config).unwrap();
    assert_eq!(outcome.report.total, 1120);
    assert_eq!(outcome.report.parsed, 1120);
    assert_eq!(outcome.report.failure_rate(), 0.0);
}

#[test]
fn full_scale_mock_run_parses_cleanly_and_pools_balance() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = test_config(dir.path(), 20, 7);
    config.bootstrap_reps = 100;
    let outcome = cmd_run(&config, false).unwrap();
    assert_eq!(outcome.plan_size, 11_200);
    assert_eq!(outcome.failed, 0);

    // The mock emits well-formed scores: zero parse failures at full scale.
    let parse = cmd_parse(&config).unwrap();
    assert_eq!(parse.report.total, 11_200);
    assert_eq!(parse.report.failure_rate(), 0.0);

    // Rebuild the synthetic table and recount the ideology pools: 1600
    // responses per question collapse to 5 pools of 320.
    let questionnaire =
        load_questionnaire(fixtures_dir().join("questionnaire_ces2022.json")).unwrap();
    let schema = pollsim::demographics::DemographicSchema::default();
    let lines = read_lines(&outcome.run_dir.join("raw_responses.jsonl"));
    let records: Vec<pollsim::parsing::ResponseRecord> = lines
        .iter()
        .map(|line| {
            let question = questionnaire.question(&line.key.question_id).unwrap();
            pollsim::parsing::ResponseRecord::from_completion(
                line.key.question_id.clone(),
                line.key.cell.clone(),
                line.key.replicate,
                line.text.clone(),
                &question.scale,
            )
        })
        .collect();
    let table = pollsim::stats::ScoreTable::from_parsed_records(&records, &questionnaire, &schema);
    let pools = pollsim::stats::marginalize(&table, Grouping::Ideology, &schema);
    for question in &questionnaire.questions {
        let question_pools = &pools[&question.id];
        assert_eq!(question_pools.len(), 5);
        assert!(question_pools.iter().all(|(_, scores)| scores.len() == 320));

        // Histogram recount: per-question counts sum to 1600.
        let total: usize = question_pools.iter().map(|(_, s)| s.len()).sum();
        assert_eq!(total, 1600);
        let histogram = pollsim::stats::HistogramTable::build(
            question.id.clone(),
            "all",
            &question_pools
                .iter()
                .flat_map(|(_, s)| s.iter().copied())
                .collect::<Vec<u32>>(),
            question.scale.cardinality,
        );
        assert_eq!(histogram.total(), 1600);
    }
}

#[test]
fn plan_summary_line_matches_the_expected_format() {
    let dir = tempfile::tempdir().unwrap();
    let config = test_config(dir.path(), 20, 7);
    let outcome = cmd_plan(&config).unwrap();
    assert_eq!(
        outcome.summary_line(),
        "80 cells × 20 replicates × 7 questions = 11,200 tasks"
    );
    assert!(outcome.plan_path.exists());
}

fn pollsim_command() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pollsim"))
}

#[test]
fn cli_plan_prints_the_task_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    let output = pollsim_command()
        .args(["plan", "--config"])
        .arg(fixtures_dir().join("run_mock.json"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(
        stdout.contains("80 cells × 20 replicates × 7 questions = 11,200 tasks"),
        "stdout: {stdout}"
    );
    assert!(stdout.contains("estimated cost"));
}

#[test]
fn cli_all_then_run_reports_cache_hits() {
    let dir = tempfile::tempdir().unwrap();
    let output = pollsim_command()
        .args(["all", "--config"])
        .arg(fixtures_dir().join("run_mock.json"))
        .args(["--n", "2", "--seed", "3"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert!(stdout.contains("80 cells × 2 replicates × 7 questions = 1,120 tasks"));
    assert!(stdout.contains("1,120 executed"), "stdout: {stdout}");
    assert!(stdout.contains("ideology"));

    let output = pollsim_command()
        .args(["run", "--config"])
        .arg(fixtures_dir().join("run_mock.json"))
        .args(["--n", "2", "--seed", "3"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("1,120 cached, 0 executed"), "stdout: {stdout}");
}

#[test]
fn cli_dry_run_sends_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let output = pollsim_command()
        .args(["run", "--dry-run", "--config"])
        .arg(fixtures_dir().join("run_mock.json"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("dry run"), "stdout: {stdout}");
    assert!(stdout.contains("estimated cost"));
    assert!(fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn run_directory_layout_matches_documentation() {
    let dir = tempfile::tempdir().unwrap();
    let config = test_config(dir.path(), 2, 7);
    let (_, run, compare) = cmd_all(&config, false).unwrap();
    let compare = compare.unwrap();
    assert_eq!(run.run_dir, compare.run_dir);
    for name in [
        "plan.json",
        "raw_responses.jsonl",
        "manifest.json",
        "cell_summaries.csv",
        "comparisons.csv",
        "histograms.csv",
    ] {
        assert!(compare.run_dir.join(name).exists(), "{name} missing");
    }
    let charts: Vec<_> = fs::read_dir(compare.run_dir.join("charts"))
        .unwrap()
        .collect();
    assert_eq!(charts.len(), 21);

    // The manifest config snapshot is enough to re-run identically: it parses
    // back into a RunConfig equal to the one used.
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(compare.run_dir.join("manifest.json")).unwrap())
            .unwrap();
    let embedded: RunConfig = serde_json::from_value(manifest["config"].clone()).unwrap();
    assert_eq!(embedded, config);
}
