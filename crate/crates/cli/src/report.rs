//! CSV and JSON report files.

use std::fs;
use std::path::Path;

use mmrec::dataset::Dataset;
use mmrec::eval::{MetricReport, SubsetGridResult};
use mmrec::metrics::{finite_mean, finite_std, METRICS};
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    let f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

/// `metric,mean,std,n`: one row per report metric. Coverage is a single
/// catalog-level value and has no spread.
pub fn write_metrics(path: &Path, report: &MetricReport) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["metric", "mean", "std", "n"])?;
    for m in METRICS {
        match report.per_user.get(m) {
            Some(v) => {
                let n = v.iter().filter(|x| x.is_finite()).count();
                w.write_record([m.to_string(), num(finite_mean(v)), num(finite_std(v)), n.to_string()])?;
            }
            None => w.write_record([m.to_string(), num(report.get(m)), String::new(), "1".into()])?,
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Per-user metric values keyed by the user's external id.
pub fn write_per_user(path: &Path, report: &MetricReport, data: &Dataset) -> CliResult<()> {
    let cols: Vec<&str> = METRICS.iter().copied().filter(|m| report.per_user.contains_key(*m)).collect();
    let mut w = csv_writer(path)?;
    let mut header = vec!["user"];
    header.extend(&cols);
    w.write_record(&header)?;
    for (r, &u) in report.users.iter().enumerate() {
        let mut row = vec![data.user_ids[u].clone()];
        row.extend(cols.iter().map(|m| num(report.per_user[*m][r])));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Serialize)]
pub struct MetricSummary<'a> {
    pub k: usize,
    pub phase: &'a str,
    pub subset: Option<&'a [String]>,
    pub n_users_evaluated: usize,
    pub pl_excluded: usize,
    pub mean: &'a std::collections::BTreeMap<String, f64>,
}

/// `mask,subset,n_modalities,<metric means>`; subsets joined with `+`.
pub fn write_grid(path: &Path, grid: &SubsetGridResult) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["mask", "subset", "n_modalities"];
    header.extend(METRICS);
    w.write_record(&header)?;
    for row in &grid.rows {
        let mut rec = vec![row.mask.to_string(), row.subset.join("+"), row.subset.len().to_string()];
        rec.extend(METRICS.iter().map(|m| num(row.report.get(m))));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Metric means averaged over all subsets of the same size.
pub fn write_grid_by_count(path: &Path, grid: &SubsetGridResult) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["n_modalities"];
    header.extend(METRICS);
    w.write_record(&header)?;
    for c in 1..=grid.modalities.len() {
        let mut rec = vec![c.to_string()];
        rec.extend(METRICS.iter().map(|m| num(grid.mean_by_count(m, c))));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Per-user values of one metric read back from `per_user.csv`.
pub fn read_per_user(path: &Path, metric: &str) -> CliResult<(Vec<String>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let col = header
        .iter()
        .position(|h| h == metric)
        .ok_or_else(|| CliError::Usage(format!("{} has no `{metric}` column", path.display())))?;
    let (mut users, mut values) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        users.push(rec[0].to_string());
        let v = rec[col]
            .parse::<f64>()
            .map_err(|_| CliError::Usage(format!("{}: bad value `{}`", path.display(), &rec[col])))?;
        values.push(v);
    }
    Ok((users, values))
}

/// Renders every CSV in `dir` (name order) as a markdown table.
pub fn markdown_summary(dir: &Path) -> CliResult<String> {
    let mut names: Vec<_> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    names.sort();
    let mut out = format!("# Report for `{}`\n", dir.display());
    if names.is_empty() {
        out.push_str("\nNo CSV files found.\n");
    }
    for path in names {
        let mut r = csv::Reader::from_path(&path)?;
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        out.push_str(&format!("\n## {}\n\n", path.file_name().unwrap().to_string_lossy()));
        out.push_str(&format!("| {} |\n", header.join(" | ")));
        out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
        for rec in r.records() {
            let rec = rec?;
            let cells: Vec<&str> = rec.iter().collect();
            out.push_str(&format!("| {} |\n", cells.join(" | ")));
        }
    }
    Ok(out)
}
