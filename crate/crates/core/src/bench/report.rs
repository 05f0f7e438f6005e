use std::fmt;
use std::path::Path;

use crate::config::{ConfigKeys, KeyValues};

use super::{drift, Bench, BenchConfig, BenchError, CellSummary};

/// Delimited text report:
///
/// ```text
/// # report: mixture
/// # config: rhos = 0.3,0.5,0.7
/// # result: best = 10.0000
/// # columns: kind,demos,regime,...
/// cell,25,cotrain,...
/// ```
///
/// The `config` lines hold every key needed to regenerate the report with
/// [`rerun`]. Rows never contain timings, so a rerun is byte-identical.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub kind: String,
    pub config: KeyValues,
    pub results: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Report {
    pub fn result(&self, key: &str) -> Option<&str> {
        self.results.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn parse(text: &str) -> Result<Self, BenchError> {
        let bad = |line: usize, what: &str| BenchError::Report(format!("line {}: {what}", line + 1));
        let mut kind = None;
        let mut config = String::new();
        let mut results = Vec::new();
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix("# ") {
                let (tag, body) = rest.split_once(": ").ok_or_else(|| bad(i, "bad header"))?;
                match tag {
                    "report" => kind = Some(body.to_string()),
                    "config" => {
                        config.push_str(body);
                        config.push('\n');
                    }
                    "result" => {
                        let (k, v) = body.split_once(" = ").ok_or_else(|| bad(i, "bad result"))?;
                        results.push((k.to_string(), v.to_string()));
                    }
                    "columns" => columns = Some(body.split(',').map(str::to_string).collect()),
                    _ => return Err(bad(i, "unknown header")),
                }
            } else if !line.is_empty() {
                let cols = columns.as_ref().ok_or_else(|| bad(i, "row before columns"))?;
                let row: Vec<String> = line.split(',').map(str::to_string).collect();
                if row.len() != cols.len() {
                    return Err(bad(i, "wrong number of fields"));
                }
                rows.push(row);
            }
        }
        let config = KeyValues::parse(&config).map_err(|e| BenchError::Report(e.to_string()))?;
        Ok(Self {
            kind: kind.ok_or_else(|| BenchError::Report("missing report line".into()))?,
            config,
            results,
            columns: columns.unwrap_or_default(),
            rows,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), BenchError> {
        std::fs::write(path.as_ref(), self.to_string())
            .map_err(|e| BenchError::Report(format!("{}: {e}", path.as_ref().display())))
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# report: {}", self.kind)?;
        for (k, v) in self.config.iter() {
            writeln!(f, "# config: {k} = {v}")?;
        }
        for (k, v) in &self.results {
            writeln!(f, "# result: {k} = {v}")?;
        }
        writeln!(f, "# columns: {}", self.columns.join(","))?;
        for row in &self.rows {
            writeln!(f, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn rate(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

pub(super) fn sweep_report(
    kind: &str,
    cfg: &BenchConfig,
    names: &[String],
    cells: &[CellSummary],
    results: Vec<(String, String)>,
) -> Report {
    let mut columns: Vec<String> = ["kind", "demos", "regime", "rho", "seed", "episodes", "whole", "stderr"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    columns.extend(names.iter().map(|n| format!("rate:{n}")));
    columns.extend(["progress", "initial_loss", "final_loss", "flag"].map(String::from));
    let mut rows = Vec::new();
    for c in cells {
        let flag = c.flag.clone().unwrap_or_default();
        for r in &c.runs {
            let mut row = vec![
                "cell".to_string(),
                c.demos.to_string(),
                c.regime.to_string(),
                c.rho.to_string(),
                r.seed.to_string(),
                r.table.episodes.to_string(),
                format!("{:.4}", r.table.whole_rate()),
                "-".to_string(),
            ];
            row.extend((0..names.len()).map(|i| rate(r.table.conditional(i))));
            row.push(format!("{:.4}", r.table.mean_progress()));
            row.push(format!("{:.6}", r.initial_loss));
            row.push(format!("{:.6}", r.final_loss));
            row.push(flag.clone());
            rows.push(row);
        }
        let mut row = vec![
            "mean".to_string(),
            c.demos.to_string(),
            c.regime.to_string(),
            c.rho.to_string(),
            "-".to_string(),
            c.pooled.episodes.to_string(),
            format!("{:.4}", c.mean),
            format!("{:.4}", c.stderr),
        ];
        row.extend((0..names.len()).map(|i| rate(c.pooled.conditional(i))));
        row.push(format!("{:.4}", c.mean_progress()));
        row.push("-".to_string());
        row.push("-".to_string());
        row.push(flag);
        rows.push(row);
    }
    Report {
        kind: kind.to_string(),
        config: cfg.to_kv(),
        results,
        columns,
        rows,
    }
}

/// Regenerates a report from the configuration embedded in `text`.
pub fn rerun(text: &str) -> Result<Report, BenchError> {
    let old = Report::parse(text)?;
    match old.kind.as_str() {
        "drift" => {
            let cfg = drift::DriftConfig::from_kv(&old.config)?;
            Ok(drift::replay_drift(&cfg).report)
        }
        kind @ ("efficiency" | "mixture" | "pretrain") => {
            let cfg = BenchConfig::from_kv(&old.config)?;
            let mut bench = Bench::new(cfg)?;
            let sweep = match kind {
                "efficiency" => bench.efficiency_sweep()?,
                "mixture" => bench.mixture_sweep()?,
                _ => bench.pretrain_comparison()?,
            };
            Ok(sweep.report)
        }
        other => Err(BenchError::Report(format!("unknown report kind `{other}`"))),
    }
}
