//! Batch evaluation over fixture directories: run the circle or shape
//! pipeline on every confidence map, score it against its ground-truth
//! sidecar, and aggregate per-metric statistics split into clean and
//! occluded strata.
//!
//! A fixture is a `<id>.cmap` confidence map next to a `<id>.circle` record
//! (circle suite) or `<id>.outline` polyline (shape suite). Fixture ids
//! starting with `occluded` land in the occluded stratum; everything else is
//! clean.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::circlefit::{detect_circle, DetectionConfig, FitMethod};
use crate::confmap::{ConfidenceMap, ConfidenceMapError};
use crate::io::{load_circle_record, load_polyline, TextIoError};
use crate::metrics::{circle_param_rmse, point_to_curve_rmse, MetricsError};
use crate::morph::{fit_shape, MorphConfig};
use crate::pdm::PointDistributionModel;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no *.cmap fixtures found in {0}")]
    NoFixtures(PathBuf),
    #[error("fixture {id} has no {expected} ground-truth file")]
    MissingTruth { id: String, expected: String },
    #[error("fixture {id}: {source}")]
    BadMap {
        id: String,
        source: ConfidenceMapError,
    },
    #[error("fixture {id}: {source}")]
    BadTruth { id: String, source: TextIoError },
    #[error("fixture {id}: {source}")]
    Metric { id: String, source: MetricsError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One measured value for one fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub fixture_id: String,
    pub metric: String,
    pub value: f64,
}

/// Mean/median/max of one metric within one stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricAggregate {
    pub stratum: String,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

/// Per-case records plus derived aggregates. Fixtures whose pipeline refused
/// to produce a result (detection gate, registration failure) are listed in
/// `failures` and excluded from the records.
#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub records: Vec<CaseRecord>,
    pub failures: Vec<(String, String)>,
    pub aggregates: Vec<MetricAggregate>,
}

/// Stratum a fixture belongs to, by naming convention.
pub fn stratum_of(fixture_id: &str) -> &'static str {
    if fixture_id.starts_with("occluded") {
        "occluded"
    } else {
        "clean"
    }
}

/// Recompute aggregates from per-case records: for every stratum ("all" plus
/// each populated named stratum) and metric, the count, mean, median, and
/// max, ordered by stratum then metric.
pub fn aggregate_records(records: &[CaseRecord]) -> Vec<MetricAggregate> {
    let mut groups: Vec<(String, String, Vec<f64>)> = Vec::new();
    let mut push = |stratum: &str, metric: &str, value: f64| {
        match groups
            .iter_mut()
            .find(|(s, m, _)| s == stratum && m == metric)
        {
            Some((_, _, values)) => values.push(value),
            None => groups.push((stratum.into(), metric.into(), vec![value])),
        }
    };
    for record in records {
        push("all", &record.metric, record.value);
        push(stratum_of(&record.fixture_id), &record.metric, record.value);
    }
    groups.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    groups
        .into_iter()
        .map(|(stratum, metric, mut values)| {
            values.sort_by(f64::total_cmp);
            let count = values.len();
            let mean = values.iter().sum::<f64>() / count as f64;
            let median = if count % 2 == 1 {
                values[count / 2]
            } else {
                (values[count / 2 - 1] + values[count / 2]) / 2.0
            };
            MetricAggregate {
                stratum,
                metric,
                count,
                mean,
                median,
                max: values[count - 1],
            }
        })
        .collect()
}

fn list_fixtures(dir: &Path) -> Result<Vec<(String, PathBuf)>, EvalError> {
    let mut fixtures = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("cmap") {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            fixtures.push((id, path));
        }
    }
    if fixtures.is_empty() {
        return Err(EvalError::NoFixtures(dir.to_path_buf()));
    }
    fixtures.sort();
    Ok(fixtures)
}

fn truth_path(map_path: &Path, extension: &str) -> PathBuf {
    map_path.with_extension(extension)
}

type CaseOutcome = Result<Vec<CaseRecord>, String>;

fn finish_report(outcomes: Vec<(String, CaseOutcome)>) -> EvaluationReport {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (id, outcome) in outcomes {
        match outcome {
            Ok(mut case_records) => records.append(&mut case_records),
            Err(reason) => failures.push((id, reason)),
        }
    }
    let aggregates = aggregate_records(&records);
    EvaluationReport {
        records,
        failures,
        aggregates,
    }
}

/// Run circle detection (both fit methods) on every fixture and score each
/// against its `<id>.circle` truth. Detection refusals (the foreground gate,
/// degenerate fits) become failure entries, not errors.
pub fn evaluate_circle_suite(
    dir: &Path,
    config: &DetectionConfig,
) -> Result<EvaluationReport, EvalError> {
    let fixtures = list_fixtures(dir)?;
    let cases: Vec<(String, PathBuf, PathBuf)> = fixtures
        .into_iter()
        .map(|(id, map_path)| {
            let truth = truth_path(&map_path, "circle");
            if truth.exists() {
                Ok((id, map_path, truth))
            } else {
                Err(EvalError::MissingTruth {
                    id,
                    expected: "*.circle".into(),
                })
            }
        })
        .collect::<Result<_, _>>()?;

    let outcomes: Vec<(String, CaseOutcome)> = cases
        .par_iter()
        .map(|(id, map_path, truth_path)| {
            let run = || -> Result<(String, CaseOutcome), EvalError> {
                let map = ConfidenceMap::load(map_path).map_err(|source| EvalError::BadMap {
                    id: id.clone(),
                    source,
                })?;
                let truth =
                    load_circle_record(truth_path).map_err(|source| EvalError::BadTruth {
                        id: id.clone(),
                        source,
                    })?;
                let mut records = Vec::new();
                for method in [FitMethod::Algebraic, FitMethod::Geometric] {
                    let detection = match detect_circle(
                        &map,
                        &DetectionConfig {
                            method,
                            ..*config
                        },
                    ) {
                        Ok(detection) => detection,
                        Err(error) => return Ok((id.clone(), Err(error.to_string()))),
                    };
                    let suffix = method.to_string();
                    records.push(CaseRecord {
                        fixture_id: id.clone(),
                        metric: format!("circle_rmse_{suffix}"),
                        value: circle_param_rmse(&detection.circle, &truth),
                    });
                    records.push(CaseRecord {
                        fixture_id: id.clone(),
                        metric: format!("cost_{suffix}"),
                        value: detection.cost,
                    });
                }
                Ok((id.clone(), Ok(records)))
            };
            run()
        })
        .collect::<Result<_, _>>()?;

    Ok(finish_report(outcomes))
}

/// Run the shape fit on every fixture and score landmark-to-truth-outline
/// RMSE against its `<id>.outline` truth, along with convergence statistics.
pub fn evaluate_shape_suite(
    dir: &Path,
    model: &PointDistributionModel,
    config: &MorphConfig,
) -> Result<EvaluationReport, EvalError> {
    let fixtures = list_fixtures(dir)?;
    let cases: Vec<(String, PathBuf, PathBuf)> = fixtures
        .into_iter()
        .map(|(id, map_path)| {
            let truth = truth_path(&map_path, "outline");
            if truth.exists() {
                Ok((id, map_path, truth))
            } else {
                Err(EvalError::MissingTruth {
                    id,
                    expected: "*.outline".into(),
                })
            }
        })
        .collect::<Result<_, _>>()?;

    let outcomes: Vec<(String, CaseOutcome)> = cases
        .iter()
        .map(|(id, map_path, truth_path)| {
            let run = || -> Result<(String, CaseOutcome), EvalError> {
                let map = ConfidenceMap::load(map_path).map_err(|source| EvalError::BadMap {
                    id: id.clone(),
                    source,
                })?;
                let truth = load_polyline(truth_path).map_err(|source| EvalError::BadTruth {
                    id: id.clone(),
                    source,
                })?;
                let result = match fit_shape(model, &map, config) {
                    Ok(result) => result,
                    Err(error) => return Ok((id.clone(), Err(error.to_string()))),
                };
                let rmse = point_to_curve_rmse(&result.shape.points, &truth).map_err(
                    |source| EvalError::Metric {
                        id: id.clone(),
                        source,
                    },
                )?;
                let records = vec![
                    CaseRecord {
                        fixture_id: id.clone(),
                        metric: "point_to_curve_rmse".into(),
                        value: rmse,
                    },
                    CaseRecord {
                        fixture_id: id.clone(),
                        metric: "iterations".into(),
                        value: result.iterations_used as f64,
                    },
                    CaseRecord {
                        fixture_id: id.clone(),
                        metric: "converged".into(),
                        value: if result.converged { 1.0 } else { 0.0 },
                    },
                ];
                Ok((id.clone(), Ok(records)))
            };
            run()
        })
        .collect::<Result<_, _>>()?;

    Ok(finish_report(outcomes))
}

/// One `fixture metric value` line per record, then one
/// `fixture failure reason` line per failure.
pub fn format_records(report: &EvaluationReport) -> String {
    let mut out = String::new();
    for record in &report.records {
        out.push_str(&format!(
            "{} {} {:.17e}\n",
            record.fixture_id, record.metric, record.value
        ));
    }
    for (id, reason) in &report.failures {
        out.push_str(&format!("{id} failure {reason}\n"));
    }
    out
}

/// One `stratum metric statistic value` line per aggregate statistic, plus
/// per-stratum case and failure counts.
pub fn format_summary(report: &EvaluationReport) -> String {
    let mut out = String::new();
    let mut strata: Vec<&str> = report
        .aggregates
        .iter()
        .map(|a| a.stratum.as_str())
        .collect();
    strata.dedup();
    for stratum in strata {
        let failed = report
            .failures
            .iter()
            .filter(|(id, _)| stratum == "all" || stratum_of(id) == stratum)
            .count();
        out.push_str(&format!("{stratum} failures {failed}\n"));
        for aggregate in report.aggregates.iter().filter(|a| a.stratum == stratum) {
            out.push_str(&format!(
                "{stratum} {} count {}\n",
                aggregate.metric, aggregate.count
            ));
            for (name, value) in [
                ("mean", aggregate.mean),
                ("median", aggregate.median),
                ("max", aggregate.max),
            ] {
                out.push_str(&format!(
                    "{stratum} {} {name} {value:.17e}\n",
                    aggregate.metric
                ));
            }
        }
    }
    out
}
