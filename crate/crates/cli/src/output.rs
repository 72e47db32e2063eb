//! Report files: JSON, CSV tables and whitespace-separated plot data.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use levydp::harness::{CheckReport, Table};

/// File-name stem for a report: check and problem, non-alphanumerics folded to `_`.
pub fn slug(report: &CheckReport) -> String {
    let raw = format!("{}-{}", report.problem, report.check);
    let mut out = String::with_capacity(raw.len());
    for c in raw.chars() {
        if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_end_matches('_').to_string()
}

pub fn write_table(path: &Path, table: &Table) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", table.columns.join(","))?;
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()
}

/// One `x y err` file per series of the report. Nothing is recomputed.
pub fn emit_plotdata(report: &CheckReport, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let stem = slug(report);
    let mut written = Vec::new();
    for s in &report.series {
        let path = dir.join(format!("{stem}.{}.dat", s.name));
        let mut w = BufWriter::new(File::create(&path)?);
        for ((x, y), e) in s.x.iter().zip(&s.y).zip(&s.err) {
            writeln!(w, "{x} {y} {e}")?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// `reports.json`, every table as CSV and every series as plot data.
pub fn write_reports(reports: &[CheckReport], dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(reports).map_err(std::io::Error::other)?;
    std::fs::write(dir.join("reports.json"), json + "\n")?;
    for r in reports {
        let stem = slug(r);
        for t in &r.tables {
            write_table(&dir.join(format!("{stem}.{}.csv", t.name)), t)?;
        }
        emit_plotdata(r, dir)?;
    }
    Ok(())
}

pub fn summary_line(r: &CheckReport) -> String {
    let status = match (r.pass, r.counts_as_failure()) {
        (true, _) => "PASS",
        (false, true) => "FAIL",
        (false, false) => "MISS",
    };
    let fmt = |m: Option<levydp::harness::Measured>| m.map_or("-".to_string(), |m| format!("{:.6} ± {:.6}", m.value, m.std_error));
    format!(
        "{status} {:<28} {:<22} lhs {} rhs {} tol {:.6}",
        r.check,
        r.problem,
        fmt(r.lhs),
        fmt(r.rhs),
        r.tolerance.total
    )
}
