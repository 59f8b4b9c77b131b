use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::StepMetrics;
use crate::{Error, Result};

/// Per-step accuracies plus the last-step value and the incremental average,
/// which skips the first (non-incremental) step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub top1: Vec<f64>,
    pub top5: Vec<f64>,
    pub last_top1: f64,
    pub last_top5: f64,
    /// Mean over steps 2..=B; absent for single-step runs.
    pub average_top1: Option<f64>,
    pub average_top5: Option<f64>,
    /// Joint-training accuracy, present for upper-bound runs.
    pub upper_bound_top1: Option<f64>,
}

fn incremental_average(v: &[f64]) -> Option<f64> {
    (v.len() > 1).then(|| v[1..].iter().sum::<f64>() / (v.len() - 1) as f64)
}

impl Summary {
    pub fn from_accuracies(top1: Vec<f64>, top5: Vec<f64>) -> Result<Self> {
        if top1.is_empty() || top1.len() != top5.len() {
            return Err(Error::invalid("summary needs at least one step"));
        }
        Ok(Self {
            last_top1: *top1.last().unwrap(),
            last_top5: *top5.last().unwrap(),
            average_top1: incremental_average(&top1),
            average_top5: incremental_average(&top5),
            top1,
            top5,
            upper_bound_top1: None,
        })
    }

    /// Rows `top1`, `top5` (and `upper_bound_top1` when present) with one
    /// column per step followed by `last` and `incremental_average`.
    pub fn to_csv(&self) -> Result<String> {
        let steps = self.top1.len();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["metric".to_string()];
        header.extend((1..=steps).map(|b| format!("step{b}")));
        header.extend(["last".to_string(), "incremental_average".to_string()]);
        w.write_record(&header)?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (name, vals, last, avg) in [
            ("top1", &self.top1, self.last_top1, self.average_top1),
            ("top5", &self.top5, self.last_top5, self.average_top5),
        ] {
            let mut row = vec![name.to_string()];
            row.extend(vals.iter().map(|v| v.to_string()));
            row.push(last.to_string());
            row.push(fmt(avg));
            w.write_record(&row)?;
        }
        if let Some(u) = self.upper_bound_top1 {
            let mut row = vec!["upper_bound_top1".to_string()];
            row.extend(std::iter::repeat_n(String::new(), steps));
            row.push(u.to_string());
            row.push(String::new());
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io("flushing summary CSV", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let steps = r.headers()?.len().saturating_sub(3);
        let parse = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| Error::invalid(format!("bad number `{s}` in summary")))
            }
        };
        let mut rows = std::collections::HashMap::new();
        for rec in r.records() {
            let rec = rec?;
            let name = rec.get(0).unwrap_or_default().to_string();
            let vals = rec.iter().skip(1).map(parse).collect::<Result<Vec<_>>>()?;
            rows.insert(name, vals);
        }
        let take = |name: &str| -> Result<(Vec<f64>, f64, Option<f64>)> {
            let v = rows.get(name).ok_or_else(|| Error::invalid(format!("summary lacks row `{name}`")))?;
            let per: Option<Vec<f64>> = v[..steps].iter().copied().collect();
            let per = per.ok_or_else(|| Error::invalid(format!("row `{name}` has empty step cells")))?;
            let last = v[steps].ok_or_else(|| Error::invalid(format!("row `{name}` lacks last")))?;
            Ok((per, last, v[steps + 1]))
        };
        let (top1, last_top1, average_top1) = take("top1")?;
        let (top5, last_top5, average_top5) = take("top5")?;
        let upper_bound_top1 = rows.get("upper_bound_top1").and_then(|v| v[steps]);
        Ok(Self {
            top1,
            top5,
            last_top1,
            last_top5,
            average_top1,
            average_top5,
            upper_bound_top1,
        })
    }

    /// Plain-text table with accuracies in percent.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<8}", "");
        for b in 1..=self.top1.len() {
            let _ = write!(out, "{:>8}", format!("step{b}"));
        }
        let _ = writeln!(out, "{:>8}{:>9}", "last", "average");
        let pct = |v: f64| format!("{:.1}", 100.0 * v);
        for (name, vals, last, avg) in [
            ("top1", &self.top1, self.last_top1, self.average_top1),
            ("top5", &self.top5, self.last_top5, self.average_top5),
        ] {
            let _ = write!(out, "{name:<8}");
            for v in vals {
                let _ = write!(out, "{:>8}", pct(*v));
            }
            let _ = writeln!(out, "{:>8}{:>9}", pct(last), avg.map(pct).unwrap_or_else(|| "n/a".into()));
        }
        if let Some(u) = self.upper_bound_top1 {
            let _ = writeln!(out, "upper bound (joint training) top1: {}", pct(u));
        }
        out
    }
}

pub fn summarize(steps: &[StepMetrics]) -> Result<Summary> {
    Summary::from_accuracies(
        steps.iter().map(|m| m.top1).collect(),
        steps.iter().map(|m| m.top5).collect(),
    )
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
