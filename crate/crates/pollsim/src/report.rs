//! Run artifacts: CSV tables, the run manifest, and static SVG charts.
//!
//! Charts are rendered strictly from the same rows the CSVs carry, so every
//! number visible in a chart exists in an emitted table. CSV output is
//! locale-independent: `.` decimal separator, `\n` line endings, UTF-8.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demographics::DemographicSchema;
use crate::parsing::ParseReport;
use crate::questionnaire::Questionnaire;
use crate::stats::{CellSummary, ComparisonResult, Grouping, HistogramTable, SummaryStats};
use crate::svg::{Frame, SvgDoc, HUMAN_COLOR, SYNTHETIC_COLOR};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("failed to write `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write CSV `{path}`: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("failed to serialize manifest: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which panel a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Synthetic,
    Human,
}

impl Source {
    pub fn label(&self) -> &'static str {
        match self {
            Source::Synthetic => "synthetic",
            Source::Human => "human",
        }
    }
}

/// Everything needed to re-run the experiment identically against the mock
/// backend, plus run-level accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    /// Wall-clock timestamp for live runs; absent for mock runs so that equal
    /// configurations produce byte-identical manifests.
    pub created_at: Option<String>,
    pub backend_id: String,
    pub model_name: String,
    pub temperature: Option<f64>,
    pub master_seed: u64,
    pub mock_seed: Option<u64>,
    pub replicates_per_cell: u32,
    pub bootstrap_reps: u32,
    pub system_prompt: String,
    pub questionnaire_hash: String,
    pub schema: DemographicSchema,
    pub cost_estimate_usd: f64,
    pub parse_report: ParseReport,
    /// Resolved run configuration snapshot.
    pub config: serde_json::Value,
}

/// Tables produced by the compare stage, ready for emission.
#[derive(Debug, Clone)]
pub struct ReportInput {
    pub cell_summaries: Vec<(Source, CellSummary)>,
    pub comparisons: Vec<ComparisonResult>,
    pub histograms: Vec<(Source, HistogramTable)>,
    pub manifest: RunManifest,
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), ReportError> {
    let display = path.display().to_string();
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|source| ReportError::Csv {
            path: display.clone(),
            source,
        })?;
    writer
        .write_record(header)
        .map_err(|source| ReportError::Csv {
            path: display.clone(),
            source,
        })?;
    for row in rows {
        writer.write_record(&row).map_err(|source| ReportError::Csv {
            path: display.clone(),
            source,
        })?;
    }
    writer.flush().map_err(|source| ReportError::Io {
        path: display,
        source,
    })?;
    Ok(())
}

/// Writes `cell_summaries.csv`, `comparisons.csv`, `histograms.csv`, and
/// `manifest.json` into `out_dir`. Empty inputs produce headers-only files;
/// the manifest is always written.
pub fn emit_tables(input: &ReportInput, out_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(out_dir).map_err(|source| ReportError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();

    let path = out_dir.join("cell_summaries.csv");
    write_csv(
        &path,
        &[
            "source",
            "question_id",
            "ideology",
            "age",
            "gender",
            "race",
            "n",
            "mean",
            "sd",
            "sem",
            "ci_low",
            "ci_high",
        ],
        input.cell_summaries.iter().map(|(source, summary)| {
            let s = &summary.stats;
            vec![
                source.label().to_string(),
                summary.question_id.clone(),
                summary.cell.ideology.clone(),
                summary.cell.age_bin.label(),
                summary.cell.gender.clone(),
                summary.cell.race.clone(),
                s.n.to_string(),
                fmt_opt(s.mean),
                fmt_opt(s.sd),
                fmt_opt(s.sem),
                fmt_opt(s.ci_low),
                fmt_opt(s.ci_high),
            ]
        }),
    )?;
    written.push(path);

    let path = out_dir.join("comparisons.csv");
    let comparison_rows = input.comparisons.iter().flat_map(|result| {
        let stat_fields = |s: &SummaryStats| {
            vec![
                s.n.to_string(),
                fmt_opt(s.mean),
                fmt_opt(s.sd),
                fmt_opt(s.sem),
                fmt_opt(s.ci_low),
                fmt_opt(s.ci_high),
            ]
        };
        result.pairs.iter().map(move |pair| {
            let mut row = vec![
                result.question_id.clone(),
                result.grouping.label().to_string(),
                pair.subgroup.clone(),
            ];
            row.extend(stat_fields(&pair.synthetic));
            row.extend(stat_fields(&pair.human));
            row.push(pair.delta.to_string());
            row.push(fmt_opt(result.rho));
            row.push(fmt_opt(result.mape));
            row
        })
    });
    write_csv(
        &path,
        &[
            "question_id",
            "grouping",
            "subgroup",
            "synthetic_n",
            "synthetic_mean",
            "synthetic_sd",
            "synthetic_sem",
            "synthetic_ci_low",
            "synthetic_ci_high",
            "human_n",
            "human_mean",
            "human_sd",
            "human_sem",
            "human_ci_low",
            "human_ci_high",
            "delta",
            "rho",
            "mape",
        ],
        comparison_rows,
    )?;
    written.push(path);

    let path = out_dir.join("histograms.csv");
    let histogram_rows = input.histograms.iter().flat_map(|(source, table)| {
        table.counts.iter().enumerate().map(move |(index, &count)| {
            vec![
                source.label().to_string(),
                table.question_id.clone(),
                table.split.clone(),
                (index + 1).to_string(),
                count.to_string(),
                table.frequencies[index].to_string(),
            ]
        })
    });
    write_csv(
        &path,
        &["source", "question_id", "split", "level", "count", "frequency"],
        histogram_rows,
    )?;
    written.push(path);

    let path = out_dir.join("manifest.json");
    let mut manifest_json = serde_json::to_string_pretty(&input.manifest)?;
    manifest_json.push('\n');
    fs::write(&path, manifest_json).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    written.push(path);

    Ok(written)
}

/// Renders one scatter, one ideology bar chart, and one gender-split histogram
/// per question into `out_dir/charts/`.
pub fn render_charts(
    input: &ReportInput,
    questionnaire: &Questionnaire,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    let charts_dir = out_dir.join("charts");
    fs::create_dir_all(&charts_dir).map_err(|source| ReportError::Io {
        path: charts_dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();

    for question in &questionnaire.questions {
        let qid = &question.id;
        let cardinality = question.scale.cardinality;
        let ideology = input
            .comparisons
            .iter()
            .find(|c| c.question_id == *qid && c.grouping == Grouping::Ideology);

        let scatter = render_scatter(qid, cardinality, ideology);
        let path = charts_dir.join(format!("{qid}_scatter.svg"));
        fs::write(&path, scatter).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
        written.push(path);

        let bars = render_ideology_bars(qid, cardinality, ideology);
        let path = charts_dir.join(format!("{qid}_ideology_bars.svg"));
        fs::write(&path, bars).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
        written.push(path);

        let histogram = render_histogram(qid, cardinality, &input.histograms);
        let path = charts_dir.join(format!("{qid}_histogram.svg"));
        fs::write(&path, histogram).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
        written.push(path);
    }

    Ok(written)
}

/// Human mean (x) vs synthetic mean (y) per subgroup, with the y=x diagonal.
/// Thin whiskers span one SD; thick whiskers span two SEM.
fn render_scatter(qid: &str, cardinality: u32, result: Option<&ComparisonResult>) -> String {
    let k = f64::from(cardinality);
    let frame = Frame {
        x_min: 1.0,
        x_max: k,
        y_min: 1.0,
        y_max: k,
    };
    let mut doc = SvgDoc::new(&format!("{qid}: human vs synthetic subgroup means"));
    doc.line(
        "axis",
        frame.plot_left(),
        frame.plot_bottom(),
        frame.plot_right(),
        frame.plot_bottom(),
        "#333333",
        1.0,
    );
    doc.line(
        "diagonal",
        frame.x(1.0),
        frame.y(1.0),
        frame.x(k),
        frame.y(k),
        "#999999",
        1.0,
    );
    doc.text(frame.x(1.0 + (k - 1.0) / 2.0), 352.0, 11.0, "middle", "human mean");
    if let Some(result) = result {
        for pair in &result.pairs {
            let (Some(hx), Some(sy)) = (pair.human.mean, pair.synthetic.mean) else {
                continue;
            };
            let x = frame.x(hx);
            let y = frame.y(sy);
            if let Some(sd) = pair.synthetic.sd {
                doc.line(
                    "errbar-sd",
                    x,
                    frame.y((sy - sd).max(1.0)),
                    x,
                    frame.y((sy + sd).min(k)),
                    SYNTHETIC_COLOR,
                    0.8,
                );
            }
            if let Some(sd) = pair.human.sd {
                doc.line(
                    "errbar-sd",
                    frame.x((hx - sd).max(1.0)),
                    y,
                    frame.x((hx + sd).min(k)),
                    y,
                    HUMAN_COLOR,
                    0.8,
                );
            }
            if let Some(sem) = pair.synthetic.sem {
                doc.line(
                    "errbar-sem",
                    x,
                    frame.y((sy - 2.0 * sem).max(1.0)),
                    x,
                    frame.y((sy + 2.0 * sem).min(k)),
                    SYNTHETIC_COLOR,
                    2.4,
                );
            }
            if let Some(sem) = pair.human.sem {
                doc.line(
                    "errbar-sem",
                    frame.x((hx - 2.0 * sem).max(1.0)),
                    y,
                    frame.x((hx + 2.0 * sem).min(k)),
                    y,
                    HUMAN_COLOR,
                    2.4,
                );
            }
            doc.circle("mark", x, y, 4.0, SYNTHETIC_COLOR);
            doc.text(x + 6.0, y - 6.0, 9.0, "start", &pair.subgroup);
        }
    }
    doc.finish()
}

/// Synthetic and human mean per ideology bin, side by side, with bootstrap CI
/// whiskers.
fn render_ideology_bars(qid: &str, cardinality: u32, result: Option<&ComparisonResult>) -> String {
    let k = f64::from(cardinality);
    let frame = Frame {
        x_min: 0.0,
        x_max: 1.0,
        y_min: 1.0,
        y_max: k,
    };
    let mut doc = SvgDoc::new(&format!("{qid}: mean by ideology"));
    let pairs = result.map(|r| r.pairs.as_slice()).unwrap_or(&[]);
    if !pairs.is_empty() {
        let group_width = 1.0 / pairs.len() as f64;
        let bar_width = group_width * 0.3;
        for (index, pair) in pairs.iter().enumerate() {
            let center = (index as f64 + 0.5) * group_width;
            let slots = [
                (pair.synthetic, -0.55, SYNTHETIC_COLOR),
                (pair.human, 0.55, HUMAN_COLOR),
            ];
            for (stats, direction, color) in slots {
                let Some(mean) = stats.mean else { continue };
                let x0 = frame.x(center + direction * bar_width - bar_width / 2.0);
                let x1 = frame.x(center + direction * bar_width + bar_width / 2.0);
                let top = frame.y(mean);
                doc.rect("bar", x0, top, x1 - x0, frame.plot_bottom() - top, color);
                if let (Some(lo), Some(hi)) = (stats.ci_low, stats.ci_high) {
                    let cx = (x0 + x1) / 2.0;
                    doc.line("errbar-ci", cx, frame.y(lo), cx, frame.y(hi), "#333333", 1.2);
                }
            }
            doc.text(
                frame.x(center),
                frame.plot_bottom() + 14.0,
                9.0,
                "middle",
                &pair.subgroup,
            );
        }
    }
    doc.finish()
}

/// Score distribution per level, split by gender, synthetic vs human.
fn render_histogram(
    qid: &str,
    cardinality: u32,
    histograms: &[(Source, HistogramTable)],
) -> String {
    let series: Vec<(&Source, &HistogramTable)> = histograms
        .iter()
        .filter(|(_, t)| t.question_id == qid)
        .map(|(s, t)| (s, t))
        .collect();
    let frame = Frame {
        x_min: 0.0,
        x_max: f64::from(cardinality),
        y_min: 0.0,
        y_max: 1.0,
    };
    let mut doc = SvgDoc::new(&format!("{qid}: response distribution by gender"));
    let series_count = series.len().max(1) as f64;
    for (series_index, (source, table)) in series.iter().enumerate() {
        let base_color = match source {
            Source::Synthetic => SYNTHETIC_COLOR,
            Source::Human => HUMAN_COLOR,
        };
        // Second split of the same source gets a lighter shade.
        let first_of_source = series
            .iter()
            .position(|(s, _)| std::mem::discriminant(*s) == std::mem::discriminant(source))
            == Some(series_index);
        let color = if first_of_source {
            base_color.to_string()
        } else {
            lighten(base_color)
        };
        for (level_index, &frequency) in table.frequencies.iter().enumerate() {
            let slot = 1.0 / series_count;
            let x_left =
                level_index as f64 + 0.1 + (series_index as f64 + 0.1) * slot * 0.8;
            let width = slot * 0.8 * 0.8;
            let x0 = frame.x(x_left);
            let x1 = frame.x(x_left + width);
            let top = frame.y(frequency);
            doc.rect("bin", x0, top, x1 - x0, frame.plot_bottom() - top, &color);
        }
        let label = format!("{} {}", source.label(), table.split);
        doc.text(
            frame.plot_left() + 4.0,
            28.0 + 11.0 * series_index as f64,
            9.0,
            "start",
            &label,
        );
    }
    for level in 1..=cardinality {
        doc.text(
            frame.x(level as f64 - 0.5),
            frame.plot_bottom() + 14.0,
            10.0,
            "middle",
            &level.to_string(),
        );
    }
    doc.finish()
}

fn lighten(color: &str) -> String {
    match color {
        SYNTHETIC_COLOR => "#9ecae1".to_string(),
        HUMAN_COLOR => "#fdd0a2".to_string(),
        other => other.to_string(),
    }
}
