use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Fixed;
use crate::corpus::{Label, Task};
use crate::error::{Error, Result};
use crate::mask::{FeedbackLog, LayerScope, MaskMethod};

/// Pretty JSON with a trailing newline. Key order follows struct field order.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    let mut f = fs::File::create(path)?;
    f.write_all(s.as_bytes())?;
    Ok(())
}

/// Accuracy change caused by one masking intervention, in percentage points.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaReport {
    pub method: MaskMethod,
    pub label: Label,
    /// Percent.
    pub acc_origin: f64,
    /// Percent.
    pub acc_masked: f64,
    pub delta: f64,
}

impl DeltaReport {
    /// Takes accuracies as fractions in `[0, 1]`.
    pub fn new(method: MaskMethod, label: Label, acc_origin: f64, acc_masked: f64) -> Self {
        let (o, m) = (acc_origin * 100.0, acc_masked * 100.0);
        DeltaReport {
            method,
            label,
            acc_origin: o,
            acc_masked: m,
            delta: m - o,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub method: MaskMethod,
    pub label: Label,
    pub acc_origin: Fixed,
    pub acc_masked: Fixed,
    pub delta_acc: Fixed,
}

/// Masking results grouped by method, then label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub rows: Vec<DeltaRow>,
}

pub fn delta_table(reports: &[DeltaReport]) -> DeltaTable {
    let mut sorted: Vec<&DeltaReport> = reports.iter().collect();
    sorted.sort_by_key(|r| (r.method, r.label));
    DeltaTable {
        rows: sorted
            .into_iter()
            .map(|r| DeltaRow {
                method: r.method,
                label: r.label,
                acc_origin: Fixed(r.acc_origin),
                acc_masked: Fixed(r.acc_masked),
                delta_acc: Fixed(r.delta),
            })
            .collect(),
    }
}

impl DeltaTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "label", "acc_origin", "acc_masked", "delta_acc"])?;
        for r in &self.rows {
            w.write_record([
                r.method.name().to_string(),
                r.label.name().to_string(),
                r.acc_origin.to_string(),
                r.acc_masked.to_string(),
                r.delta_acc.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<DeltaTable> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r.deserialize().collect::<std::result::Result<Vec<DeltaRow>, _>>()?;
        Ok(DeltaTable { rows })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRow {
    pub fraction: Fixed,
    pub alpha: Fixed,
    pub acc_before: Fixed,
    pub acc_after: Fixed,
}

/// One masking run as written to `reports/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskReport {
    pub method: MaskMethod,
    pub label: Label,
    pub layer_scope: LayerScope,
    pub acc_origin: Fixed,
    pub acc_masked: Fixed,
    pub delta_acc: Fixed,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback_log: Option<Vec<FeedbackRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
}

impl MaskReport {
    pub fn new(delta: &DeltaReport, scope: LayerScope, log: Option<&FeedbackLog>) -> Self {
        MaskReport {
            method: delta.method,
            label: delta.label,
            layer_scope: scope,
            acc_origin: Fixed(delta.acc_origin),
            acc_masked: Fixed(delta.acc_masked),
            delta_acc: Fixed(delta.delta),
            feedback_log: log.map(|l| {
                l.entries
                    .iter()
                    .map(|e| FeedbackRow {
                        fraction: Fixed(e.fraction),
                        alpha: Fixed(e.alpha),
                        acc_before: Fixed(e.acc_before * 100.0),
                        acc_after: Fixed(e.acc_after * 100.0),
                    })
                    .collect()
            }),
            converged: log.map(|l| l.converged),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeRow {
    pub scope: LayerScope,
    /// Percent.
    pub accuracy: Fixed,
}

/// Accuracy of one label under masking restricted to each layer scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScopeReport {
    pub label: Label,
    pub rows: Vec<ScopeRow>,
    /// Scopes from lowest to highest accuracy; tied scopes share a group.
    pub ordering: Vec<Vec<LayerScope>>,
}

/// Builds the report from `(scope, accuracy fraction)` pairs. All four
/// scopes must be present.
pub fn layer_scope_report(label: Label, results: &[(LayerScope, f64)]) -> Result<LayerScopeReport> {
    let mut rows = Vec::with_capacity(4);
    for scope in LayerScope::ALL {
        let acc = results
            .iter()
            .find(|(s, _)| *s == scope)
            .map(|(_, a)| *a)
            .ok_or_else(|| Error::InvalidInput(format!("missing layer scope {}", scope.name())))?;
        rows.push((scope, acc));
    }
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut ordering: Vec<Vec<LayerScope>> = Vec::new();
    let mut last: Option<f64> = None;
    for (scope, acc) in sorted {
        match (last, ordering.last_mut()) {
            (Some(prev), Some(group)) if prev == acc => group.push(scope),
            _ => ordering.push(vec![scope]),
        }
        last = Some(acc);
    }
    Ok(LayerScopeReport {
        label,
        rows: rows
            .into_iter()
            .map(|(scope, acc)| ScopeRow {
                scope,
                accuracy: Fixed(acc * 100.0),
            })
            .collect(),
        ordering,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCount {
    pub layer: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDistributionReport {
    pub task: Task,
    pub rows: Vec<LayerCount>,
}

impl LayerDistributionReport {
    pub fn new(task: Task, histogram: &[usize]) -> Self {
        LayerDistributionReport {
            task,
            rows: histogram
                .iter()
                .enumerate()
                .map(|(layer, &count)| LayerCount { layer, count })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringReport {
    pub target: Label,
    pub beta_grid: Vec<Fixed>,
    /// Percent of non-target sentences predicted as the target, no plan.
    pub coverage_before: Fixed,
    /// Percent, one per beta.
    pub coverage_after: Vec<Fixed>,
    /// Which neuron set was steered: `"core"` or `"label_set"`.
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionDelta {
    pub emotion: Label,
    /// Percentage points, one per omega.
    pub delta: Vec<Fixed>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub rhetoric_label: Label,
    pub omega_grid: Vec<Fixed>,
    /// Percent.
    pub emotion_acc_before: Fixed,
    /// Percent, one per omega.
    pub emotion_acc_after: Vec<Fixed>,
    pub per_emotion_delta: Vec<EmotionDelta>,
    /// `"intersection"` or `"fallback"`.
    pub injection_mode: String,
}
