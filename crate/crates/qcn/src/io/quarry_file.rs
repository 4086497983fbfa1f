//! Quarry config documents and the metrics export format.

use super::IoError;
use crate::num::Scalar;
use crate::quarry::{QuarryConfig, QuarryMetrics};

/// Parse and sanity-check a quarry config.
pub fn parse_quarry_config<T: Scalar>(text: &str) -> Result<QuarryConfig<T>, IoError> {
    let config: QuarryConfig<T> = toml::from_str(text).map_err(|e| IoError::Syntax {
        message: e.to_string(),
    })?;
    config
        .check()
        .map_err(|e| IoError::Format(e.to_string()))?;
    Ok(config)
}

pub fn serialize_quarry_config<T: Scalar>(config: &QuarryConfig<T>) -> String {
    toml::to_string(config).expect("quarry config always serializes")
}

/// Tab-delimited `name<TAB>value` lines in fixed order; map entries use
/// dotted keys. Diff-friendly and byte-stable.
pub fn format_metrics<T: Scalar>(metrics: &QuarryMetrics<T>) -> String {
    let mut out = String::new();
    let mut line = |name: &str, value: String| {
        out.push_str(name);
        out.push('\t');
        out.push_str(&value);
        out.push('\n');
    };
    line("steps", metrics.steps.to_string());
    line("loads_completed", metrics.loads_completed.to_string());
    line(
        "mean_cycle_time",
        metrics
            .mean_cycle_time
            .map(|c| c.to_string())
            .unwrap_or_else(|| "-".to_owned()),
    );
    line("deliveries", metrics.deliveries.to_string());
    line("delivered_volume", metrics.delivered_volume.to_string());
    line("throughput", metrics.throughput.to_string());
    for (sort, mass) in &metrics.delivered_mass {
        line(&format!("delivered_mass.{sort}"), mass.to_string());
    }
    for (cell, utilization) in &metrics.utilization {
        line(&format!("utilization.{cell}"), utilization.to_string());
    }
    for (cell, queue) in &metrics.mean_queue_length {
        line(&format!("mean_queue_length.{cell}"), queue.to_string());
    }
    out
}
