//! Aggregation of verdicts into per-condition accuracy tables.
//!
//! Column statistics follow the evaluation protocol: arithmetic mean over
//! available cells, sample standard deviation (n−1 denominator), and a
//! per-condition decrease versus the AE baseline. The decrease is the
//! difference of the two-decimal-rounded column averages — the AE average
//! is taken over all models while the condition average covers only the
//! models that ran it, and the rounded-operand convention is the one the
//! published bottom rows follow.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::conditions::{ConditionTag, ConflictCondition, PromptCondition};
use crate::judge::{CitationVerdict, Verdict};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("cannot aggregate an empty verdict list")]
    Empty,
    #[error("duplicate cell for model {model:?}, condition {condition}")]
    DuplicateCell {
        model: String,
        condition: ConditionTag,
    },
    #[error("cell for model {model:?}, condition {condition} is invalid: {detail}")]
    InvalidCell {
        model: String,
        condition: ConditionTag,
        detail: String,
    },
    #[error("AE column incomplete: model {model:?} has available cells but no AE baseline")]
    IncompleteBaseline { model: String },
    #[error("conflict matrix incomplete: model {model:?} lacks {condition}")]
    IncompleteConflict {
        model: String,
        condition: ConditionTag,
    },
}

/// One (model, condition) accuracy measurement. `available = false`
/// marks conditions a model skips by design (trace-visibility gating).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub model_name: String,
    pub condition: ConditionTag,
    pub n: usize,
    pub accuracy: f64,
    pub available: bool,
}

impl AccuracyCell {
    pub fn available(model: &str, condition: impl Into<ConditionTag>, n: usize, accuracy: f64) -> Self {
        AccuracyCell {
            model_name: model.to_string(),
            condition: condition.into(),
            n,
            accuracy,
            available: true,
        }
    }

    pub fn unavailable(model: &str, condition: impl Into<ConditionTag>) -> Self {
        AccuracyCell {
            model_name: model.to_string(),
            condition: condition.into(),
            n: 0,
            accuracy: 0.0,
            available: false,
        }
    }
}

/// Mean score of a non-empty verdict list.
pub fn condition_accuracy(verdicts: &[Verdict]) -> Result<f64, MetricsError> {
    if verdicts.is_empty() {
        return Err(MetricsError::Empty);
    }
    let ones = verdicts.iter().filter(|v| v.score == 1).count();
    Ok(ones as f64 / verdicts.len() as f64)
}

/// Fraction of citation verdicts with `cited = true`.
pub fn citation_rate(citations: &[CitationVerdict]) -> Result<f64, MetricsError> {
    if citations.is_empty() {
        return Err(MetricsError::Empty);
    }
    let cited = citations.iter().filter(|c| c.cited).count();
    Ok(cited as f64 / citations.len() as f64)
}

/// Signed accuracy change a warning causes versus the AE baseline.
pub fn warning_delta(ae_accuracy: f64, warned_accuracy: f64) -> f64 {
    warned_accuracy - ae_accuracy
}

/// Rounds half-up (away from zero) to two decimals. A tiny epsilon
/// absorbs binary-representation noise on exact .xx5 boundaries.
pub fn round2_half_up(value: f64) -> f64 {
    let scaled = value.abs() * 100.0 + 0.5 + 1e-9;
    value.signum() * scaled.floor() / 100.0
}

/// Per-condition column statistics, in accuracy-fraction space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub condition: ConditionTag,
    /// Mean over available cells; `None` when no cell is available.
    pub avg: Option<f64>,
    /// Sample standard deviation (n−1); `None` below two cells.
    pub std: Option<f64>,
    /// Rounded AE average minus rounded condition average; `None` for
    /// the AE column itself.
    pub decrease: Option<f64>,
    pub n_models: usize,
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Sample standard deviation with the n−1 denominator. The population
/// convention (dividing by n) is deliberately not used: it does not
/// reproduce the published column spreads.
pub fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values)?;
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

/// Population standard deviation, kept for the convention guard.
pub fn population_std(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let m = mean(values)?;
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    Some((ss / values.len() as f64).sqrt())
}

/// One model's row across a fixed condition ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model_name: String,
    /// Aligned with the table's condition list; `None` = unavailable.
    pub cells: Vec<Option<AccuracyCell>>,
}

/// The five-condition accuracy grid with column averages, sample standard
/// deviations, and decreases versus AE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub conditions: Vec<ConditionTag>,
    pub rows: Vec<ModelRow>,
    pub columns: Vec<ColumnStats>,
}

type Grid = BTreeMap<(String, ConditionTag), AccuracyCell>;

fn build_grid(
    cells: &[AccuracyCell],
    conditions: &[ConditionTag],
) -> Result<(Vec<String>, Grid), MetricsError> {
    if cells.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut models: Vec<String> = Vec::new();
    let mut grid: Grid = BTreeMap::new();
    for cell in cells {
        if cell.available {
            if cell.n == 0 {
                return Err(MetricsError::InvalidCell {
                    model: cell.model_name.clone(),
                    condition: cell.condition,
                    detail: "available cell with n = 0".to_string(),
                });
            }
            if !(0.0..=1.0).contains(&cell.accuracy) {
                return Err(MetricsError::InvalidCell {
                    model: cell.model_name.clone(),
                    condition: cell.condition,
                    detail: format!("accuracy {} outside [0, 1]", cell.accuracy),
                });
            }
        }
        if !conditions.contains(&cell.condition) {
            continue;
        }
        if !models.contains(&cell.model_name) {
            models.push(cell.model_name.clone());
        }
        let key = (cell.model_name.clone(), cell.condition);
        if grid.insert(key, cell.clone()).is_some() {
            return Err(MetricsError::DuplicateCell {
                model: cell.model_name.clone(),
                condition: cell.condition,
            });
        }
    }
    Ok((models, grid))
}

/// Aggregates cells over the five visibility conditions. Models whose
/// every cell is unavailable stay in the table as all-`--` rows but do
/// not enter column statistics; a model with some available cell must
/// have an available AE cell, because AE is the decrease baseline.
pub fn aggregate(cells: &[AccuracyCell]) -> Result<MetricsTable, MetricsError> {
    let conditions: Vec<ConditionTag> = PromptCondition::ALL
        .iter()
        .map(|&c| ConditionTag::Prompt(c))
        .collect();
    let (models, grid) = build_grid(cells, &conditions)?;

    let ae = ConditionTag::Prompt(PromptCondition::Ae);
    for model in &models {
        let has_available = conditions
            .iter()
            .any(|&c| grid.get(&(model.clone(), c)).is_some_and(|cell| cell.available));
        let ae_available = grid
            .get(&(model.clone(), ae))
            .is_some_and(|cell| cell.available);
        if has_available && !ae_available {
            return Err(MetricsError::IncompleteBaseline {
                model: model.clone(),
            });
        }
    }

    let rows: Vec<ModelRow> = models
        .iter()
        .map(|model| ModelRow {
            model_name: model.clone(),
            cells: conditions
                .iter()
                .map(|&c| grid.get(&(model.clone(), c)).filter(|cell| cell.available).cloned())
                .collect(),
        })
        .collect();

    let column_values: Vec<Vec<f64>> = conditions
        .iter()
        .enumerate()
        .map(|(idx, _)| {
            rows.iter()
                .filter_map(|row| row.cells[idx].as_ref().map(|c| c.accuracy))
                .collect()
        })
        .collect();

    let ae_avg = mean(&column_values[0]);
    let columns = conditions
        .iter()
        .zip(&column_values)
        .map(|(&condition, values)| {
            let avg = mean(values);
            let decrease = if condition == ae {
                None
            } else {
                match (ae_avg, avg) {
                    (Some(base), Some(this)) => Some(
                        (round2_half_up(base * 100.0) - round2_half_up(this * 100.0)) / 100.0,
                    ),
                    _ => None,
                }
            };
            ColumnStats {
                condition,
                avg,
                std: sample_std(values),
                decrease,
                n_models: values.len(),
            }
        })
        .collect();

    Ok(MetricsTable {
        conditions,
        rows,
        columns,
    })
}

/// Aggregates the three conflict columns. Every model must carry all
/// three conditions: the triad is evaluated together.
pub fn conflict_matrix(cells: &[AccuracyCell]) -> Result<MetricsTable, MetricsError> {
    // Published column order: both-wrong baseline first.
    let conditions: Vec<ConditionTag> = [
        ConflictCondition::WaWr,
        ConflictCondition::WaRr,
        ConflictCondition::RaWr,
    ]
    .iter()
    .map(|&c| ConditionTag::Conflict(c))
    .collect();
    let (models, grid) = build_grid(cells, &conditions)?;

    for model in &models {
        for &condition in &conditions {
            let present = grid
                .get(&(model.clone(), condition))
                .is_some_and(|cell| cell.available);
            if !present {
                return Err(MetricsError::IncompleteConflict {
                    model: model.clone(),
                    condition,
                });
            }
        }
    }

    let rows: Vec<ModelRow> = models
        .iter()
        .map(|model| ModelRow {
            model_name: model.clone(),
            cells: conditions
                .iter()
                .map(|&c| grid.get(&(model.clone(), c)).cloned())
                .collect(),
        })
        .collect();

    let columns = conditions
        .iter()
        .enumerate()
        .map(|(idx, &condition)| {
            let values: Vec<f64> = rows
                .iter()
                .filter_map(|row| row.cells[idx].as_ref().map(|c| c.accuracy))
                .collect();
            ColumnStats {
                condition,
                avg: mean(&values),
                std: sample_std(&values),
                decrease: None,
                n_models: values.len(),
            }
        })
        .collect();

    Ok(MetricsTable {
        conditions,
        rows,
        columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verdict(score: u8) -> Verdict {
        Verdict {
            problem_id: "q".to_string(),
            score,
            judge_raw: "CORRECT".to_string(),
            judge_fingerprint: "fp".to_string(),
        }
    }

    #[test]
    fn accuracy_is_the_mean_score() {
        let vs: Vec<Verdict> = [1, 1, 0, 1].iter().map(|&s| verdict(s)).collect();
        assert_eq!(condition_accuracy(&vs).unwrap(), 0.75);
        let zeros: Vec<Verdict> = [0, 0].iter().map(|&s| verdict(s)).collect();
        assert_eq!(condition_accuracy(&zeros).unwrap(), 0.0);
        assert!(condition_accuracy(&[]).is_err());
    }

    #[test]
    fn accuracy_matches_the_published_per_model_cell() {
        // Independent check: which integer count over 158 items sits
        // closest to the published 93.04%?
        let best_k = (0..=158)
            .min_by(|a, b| {
                let da = (*a as f64 / 158.0 - 0.9304).abs();
                let db = (*b as f64 / 158.0 - 0.9304).abs();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        assert_eq!(best_k, 147);
        let vs: Vec<Verdict> = (0..158).map(|i| verdict((i < 147) as u8)).collect();
        let acc = condition_accuracy(&vs).unwrap();
        assert!((acc - 0.9304).abs() < 0.0005);
    }

    #[test]
    fn rounding_is_half_up_to_two_decimals() {
        assert_eq!(round2_half_up(84.745), 84.75);
        assert_eq!(round2_half_up(84.744), 84.74);
        assert_eq!(round2_half_up(28.165), 28.17);
        assert_eq!(round2_half_up(-7.785), -7.79);
        assert_eq!(round2_half_up(0.0), 0.0);
    }

    fn cell(model: &str, condition: PromptCondition, pct: f64) -> AccuracyCell {
        AccuracyCell::available(model, condition, 158, pct / 100.0)
    }

    #[test]
    fn single_model_grid_has_zero_decrease_when_equal() {
        let cells = vec![
            cell("m", PromptCondition::Ae, 50.0),
            cell("m", PromptCondition::Af, 50.0),
        ];
        let table = aggregate(&cells).unwrap();
        let af = table.columns.last().unwrap();
        assert_eq!(af.decrease, Some(0.0));
        assert_eq!(af.std, None);
    }

    #[test]
    fn aggregate_rejects_missing_ae_baseline() {
        let cells = vec![cell("m", PromptCondition::Amr, 50.0)];
        assert!(matches!(
            aggregate(&cells),
            Err(MetricsError::IncompleteBaseline { .. })
        ));
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let mut cells = vec![
            cell("a", PromptCondition::Ae, 90.0),
            cell("a", PromptCondition::Af, 30.0),
            cell("b", PromptCondition::Ae, 80.0),
            cell("b", PromptCondition::Af, 20.0),
        ];
        let forward = aggregate(&cells).unwrap();
        cells.reverse();
        let backward = aggregate(&cells).unwrap();
        for (f, b) in forward.columns.iter().zip(&backward.columns) {
            assert_eq!(f.avg, b.avg);
            assert_eq!(f.std, b.std);
            assert_eq!(f.decrease, b.decrease);
        }
    }

    #[test]
    fn conflict_matrix_requires_the_full_triad() {
        let cells = vec![
            AccuracyCell::available("m", ConflictCondition::RaWr, 10, 0.5),
            AccuracyCell::available("m", ConflictCondition::WaRr, 10, 0.4),
        ];
        assert!(matches!(
            conflict_matrix(&cells),
            Err(MetricsError::IncompleteConflict { .. })
        ));
    }

    #[test]
    fn identical_conflict_columns_have_zero_std() {
        let mut cells = Vec::new();
        for model in ["a", "b", "c"] {
            for c in ConflictCondition::ALL {
                cells.push(AccuracyCell::available(model, c, 10, 0.3));
            }
        }
        let table = conflict_matrix(&cells).unwrap();
        for col in &table.columns {
            assert_eq!(col.avg, Some(0.3));
            assert_eq!(col.std, Some(0.0));
        }
    }

    #[test]
    fn warning_delta_is_signed() {
        assert!((warning_delta(0.84, 0.60) + 0.24).abs() < 1e-12);
        assert_eq!(warning_delta(0.5, 0.5), 0.0);
        // Consistent with a model keeping 51.3% under a hard warning
        // from a 93.04% AE baseline.
        assert!((warning_delta(0.9304, 0.513) + 0.4174).abs() < 1e-12);
    }

    #[test]
    fn column_averages_are_monotone_when_rows_are() {
        // If every model is at least as accurate under c1 as under c2,
        // the column averages order the same way.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let mut cells = Vec::new();
            let models = 1 + rng.random_range(0..6);
            for m in 0..models {
                let model = format!("m{m}");
                let mut acc = 1.0f64;
                for condition in PromptCondition::ALL {
                    acc = (acc - rng.random_range(0.0..0.2)).max(0.0);
                    cells.push(AccuracyCell::available(&model, condition, 10, acc));
                }
            }
            let table = aggregate(&cells).unwrap();
            let avgs: Vec<f64> = table.columns.iter().map(|c| c.avg.unwrap()).collect();
            for pair in avgs.windows(2) {
                assert!(pair[0] >= pair[1] - 1e-12, "column averages not monotone: {avgs:?}");
            }
        }
    }

    #[test]
    fn citation_rate_counts_cited_fraction() {
        let c = |cited| CitationVerdict {
            problem_id: "q".to_string(),
            cited,
            judge_raw: String::new(),
        };
        assert_eq!(citation_rate(&[c(true), c(true)]).unwrap(), 1.0);
        assert_eq!(citation_rate(&[c(false)]).unwrap(), 0.0);
        assert_eq!(citation_rate(&[c(true), c(false), c(false), c(false)]).unwrap(), 0.25);
        assert!(citation_rate(&[]).is_err());
    }
}
