use std::collections::BTreeMap;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::run::Report;
use crate::ReportArgs;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub object: String,
    pub k: u64,
    pub adversary: String,
    pub trials: u64,
    pub estimate: String,
    pub ci_low: String,
    pub ci_high: String,
    pub exact: String,
    pub bound: String,
    pub atomic: String,
    pub file: String,
}

fn label<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn row(file: &str, r: &Report) -> Row {
    let mc = r.monte_carlo.as_ref();
    let fmt = |x: f64| format!("{x:.6}");
    Row {
        object: label(&r.config.object),
        k: r.config.k.unwrap_or(1).max(1) as u64,
        adversary: label(&r.config.adversary),
        trials: mc.map_or(0, |m| m.trials),
        estimate: mc.map_or_else(String::new, |m| fmt(m.estimate)),
        ci_low: mc.map_or_else(String::new, |m| fmt(m.ci_low)),
        ci_high: mc.map_or_else(String::new, |m| fmt(m.ci_high)),
        exact: r.search.as_ref().map_or_else(String::new, |s| {
            if s.exact {
                s.value.clone()
            } else {
                format!("[{}, {}]", s.value, s.upper)
            }
        }),
        bound: r
            .bound
            .as_ref()
            .map_or_else(String::new, |b| b.value.clone()),
        atomic: r
            .atomic_baseline
            .as_ref()
            .map_or_else(String::new, |a| a.value.clone()),
        file: file.to_string(),
    }
}

/// Rows grouped by object kind, each group ordered by `k`.
pub fn table(reports: &[(String, Report)]) -> Vec<Row> {
    let mut groups: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for (file, r) in reports {
        let row = row(file, r);
        groups.entry(row.object.clone()).or_default().push(row);
    }
    groups
        .into_values()
        .flat_map(|mut rows| {
            rows.sort_by_key(|r| r.k);
            rows
        })
        .collect()
}

fn render(rows: &[Row]) -> String {
    let header = [
        "object",
        "k",
        "adversary",
        "trials",
        "estimate",
        "ci_low",
        "ci_high",
        "exact",
        "bound",
        "atomic",
    ];
    let cells: Vec<[String; 10]> = rows
        .iter()
        .map(|r| {
            [
                r.object.clone(),
                r.k.to_string(),
                r.adversary.clone(),
                r.trials.to_string(),
                r.estimate.clone(),
                r.ci_low.clone(),
                r.ci_high.clone(),
                r.exact.clone(),
                r.bound.clone(),
                r.atomic.clone(),
            ]
        })
        .collect();
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for c in &cells {
        for (w, s) in width.iter_mut().zip(c) {
            *w = (*w).max(s.chars().count());
        }
    }
    let line = |items: Vec<&str>| {
        items
            .iter()
            .zip(&width)
            .map(|(s, w)| format!("{s:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    let mut last_object: Option<&str> = None;
    for (r, c) in rows.iter().zip(&cells) {
        if last_object.is_some_and(|o| o != r.object) {
            out.push('\n');
        }
        last_object = Some(&r.object);
        out.push_str(&line(c.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

pub fn cmd_report(args: ReportArgs) -> Result<Vec<Row>> {
    let mut reports = Vec::new();
    for p in &args.reports {
        let text =
            std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let r: Report = serde_json::from_str(&text)
            .with_context(|| format!("{} is not a run report", p.display()))?;
        reports.push((p.display().to_string(), r));
    }
    let rows = table(&reports);
    print!("{}", render(&rows));
    if let Some(path) = &args.csv {
        let mut w =
            csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(rows)
}
