//! Metric values with the parameters that produced them.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    /// Bandwidth, threshold, canvas size, conventions; never empty for
    /// parameterized metrics.
    pub params: BTreeMap<String, String>,
    pub n_x: usize,
    pub n_y: usize,
    pub seed: Option<u64>,
}

impl MetricReport {
    pub fn new(metric: &str, value: f64, n_x: usize, n_y: usize) -> Self {
        MetricReport {
            metric: metric.into(),
            value,
            params: BTreeMap::new(),
            n_x,
            n_y,
            seed: None,
        }
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.into(), value.to_string());
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// One row per report: `metric,value,n_x,n_y,seed,params` with params as
/// `key=value` pairs joined by `;`.
pub fn write_reports_csv<W: Write>(reports: &[MetricReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    out.write_record(["metric", "value", "n_x", "n_y", "seed", "params"])
        .map_err(csv_err)?;
    for r in reports {
        let params = r
            .params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        out.write_record([
            r.metric.clone(),
            format!("{:e}", r.value),
            r.n_x.to_string(),
            r.n_y.to_string(),
            r.seed.map_or(String::new(), |s| s.to_string()),
            params,
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_reports_json<W: Write>(reports: &[MetricReport], w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, reports)?;
    Ok(())
}
