//! `metrics.csv` rows: `scope,metric,index,value`, with `index` empty for
//! scalar metrics.

use shiftlab_core::datasets::GroupMetrics;

pub const METRICS_HEADER: &[&str] = &["scope", "metric", "index", "value"];

pub fn row(scope: &str, metric: &str, index: Option<usize>, value: f64) -> Vec<String> {
    vec![scope.into(), metric.into(), index.map(|i| i.to_string()).unwrap_or_default(), value.to_string()]
}

pub fn group_rows(scope: &str, m: &GroupMetrics) -> Vec<Vec<String>> {
    let mut rows =
        vec![row(scope, "robust_accuracy", None, m.robust_accuracy), row(scope, "average_accuracy", None, m.average_accuracy)];
    for (g, (&a, &c)) in m.per_group_accuracy.iter().zip(&m.group_counts).enumerate() {
        rows.push(row(scope, "group_accuracy", Some(g), a));
        rows.push(row(scope, "group_count", Some(g), c as f64));
    }
    rows
}
