//! History CSV summaries, markdown tables, and SVG line plots.

use std::fmt::Write as _;

use fedskip::orch::{first_reaching, CSV_HEADER};
use fedskip::{Error, Result};

/// A parsed history CSV, values kept as text.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn parse_csv(text: &str) -> Result<Table> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::input("empty CSV"))?;
    let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, l) in lines.enumerate() {
        let row: Vec<String> = l.split(',').map(|s| s.trim().to_string()).collect();
        if row.len() != columns.len() {
            return Err(Error::input(format!("CSV row {} has {} fields, expected {}", i + 1, row.len(), columns.len())));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::input("CSV has no data rows"));
    }
    for c in CSV_HEADER.split(',') {
        if !columns.iter().any(|x| x == c) {
            return Err(Error::input(format!("CSV is missing column `{c}`")));
        }
    }
    Ok(Table { columns, rows })
}

impl Table {
    fn col(&self, name: &str) -> usize {
        self.columns.iter().position(|c| c == name).expect("validated column")
    }

    pub fn last(&self, name: &str) -> &str {
        &self.rows.last().expect("nonempty")[self.col(name)]
    }

    /// Column values as numbers; `NA` becomes `None`.
    pub fn values(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let c = self.col(name);
        self.rows
            .iter()
            .map(|r| match r[c].as_str() {
                "NA" => Ok(None),
                s => s.parse().map(Some).map_err(|_| Error::input(format!("column `{name}`: bad number `{s}`"))),
            })
            .collect()
    }

    /// Round at which micro-F1 first reaches `frac` of its maximum.
    pub fn rounds_to(&self, frac: f64) -> Result<Option<String>> {
        let v: Vec<f64> = self.values("micro_f1")?.into_iter().map(|x| x.unwrap_or(0.0)).collect();
        Ok(first_reaching(&v, frac)?.map(|i| self.rows[i][self.col("round")].clone()))
    }
}

pub const SUMMARY_FIELDS: [&str; 7] = ["micro_f1", "macro_f1", "auc", "loss", "uplink_bytes", "downlink_bytes", "comm_fraction"];

/// One-line summary of a run, built only from its CSV.
pub fn summary_line(method: &str, t: &Table) -> Result<String> {
    let mut s = format!("method={method} rounds={}", t.last("round"));
    for f in SUMMARY_FIELDS {
        let _ = write!(s, " final_{f}={}", t.last(f));
    }
    let r90 = t.rounds_to(0.9)?.unwrap_or_else(|| "NA".into());
    let _ = write!(s, " rounds_to_90={r90}");
    Ok(s)
}

/// Markdown comparison table, one row per method.
pub fn markdown(runs: &[(String, Table)]) -> Result<String> {
    let mut s = String::from("| method | rounds |");
    for f in SUMMARY_FIELDS {
        let _ = write!(s, " {f} |");
    }
    s.push_str(" rounds_to_90 |\n|---|---|");
    s.push_str(&"---|".repeat(SUMMARY_FIELDS.len() + 1));
    s.push('\n');
    for (name, t) in runs {
        let _ = write!(s, "| {name} | {} |", t.last("round"));
        for f in SUMMARY_FIELDS {
            let _ = write!(s, " {} |", t.last(f));
        }
        let _ = writeln!(s, " {} |", t.rounds_to(0.9)?.unwrap_or_else(|| "NA".into()));
    }
    Ok(s)
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Line plot of `metric` against round for every run.
pub fn svg_plot(runs: &[(String, Table)], metric: &str) -> Result<String> {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let mut series = Vec::new();
    let (mut xmax, mut ymin, mut ymax) = (1.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for (name, t) in runs {
        let xs = t.values("round")?;
        let ys = t.values(metric)?;
        let pts: Vec<(f64, f64)> = xs.iter().zip(&ys).filter_map(|(x, y)| Some(((*x)?, (*y)?))).collect();
        for &(x, y) in &pts {
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
        series.push((name, pts));
    }
    if !ymin.is_finite() {
        ymin = 0.0;
        ymax = 1.0;
    }
    if ymax - ymin < 1e-12 {
        ymax = ymin + 1.0;
    }
    let px = |x: f64| m + (w - 2.0 * m) * x / xmax;
    let py = |y: f64| h - m - (h - 2.0 * m) * (y - ymin) / (ymax - ymin);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n");
    let _ = writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(s, "<line x1=\"{m}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>", h - m, w - m, h - m);
    let _ = writeln!(s, "<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>", h - m);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">round</text>", w / 2.0, h - 12.0);
    let _ = writeln!(s, "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{metric}</text>", h / 2.0, h / 2.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{ymax:.3}</text>", m - 4.0, m + 4.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{ymin:.3}</text>", m - 4.0, h - m);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{xmax}</text>", w - m, h - m + 16.0);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>", path.join(" "));
        let ly = m + 16.0 * i as f64;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{ly}\" fill=\"{color}\">{name}</text>", w - m - 120.0);
    }
    s.push_str("</svg>\n");
    Ok(s)
}
