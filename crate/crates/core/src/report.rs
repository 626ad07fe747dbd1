//! Report emitters: metrics tables per outcome, importance and contribution
//! CSVs, and a minimal SVG barplot.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::eval::ClassScores;
use crate::forest::Importance;

/// Row label of the random baseline; never flagged as best.
pub const BASELINE_LABEL: &str = "Random";

/// One outcome's test-set results: model rows of precision, recall and F1
/// per category plus the macro mean, values in percent.
#[derive(Debug, Clone)]
pub struct MetricsTable {
    pub outcome: String,
    pub categories: Vec<String>,
    pub seed: u64,
    pub rows: Vec<(String, ClassScores)>,
}

impl MetricsTable {
    pub fn new(outcome: &str, categories: &[String], seed: u64) -> Self {
        Self {
            outcome: outcome.to_string(),
            categories: categories.to_vec(),
            seed,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: &str, scores: ClassScores) -> Result<()> {
        if scores.f1.len() != self.categories.len() {
            return Err(Error::SchemaMismatch(format!(
                "{label}: {} classes scored, table has {}",
                scores.f1.len(),
                self.categories.len()
            )));
        }
        self.rows.push((label.to_string(), scores));
        Ok(())
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["model".to_string(), "metric".to_string()];
        h.extend(self.categories.iter().cloned());
        h.push("mean".into());
        h
    }

    /// Index of the best F1 row for each category column and the mean
    /// column; the earliest row wins ties.
    pub fn best_f1(&self) -> Vec<Option<usize>> {
        let k = self.categories.len();
        (0..=k)
            .map(|col| {
                let mut best: Option<(usize, f64)> = None;
                for (r, (label, s)) in self.rows.iter().enumerate() {
                    if label == BASELINE_LABEL {
                        continue;
                    }
                    let v = if col < k { s.f1[col] } else { s.macro_f1 };
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((r, v));
                    }
                }
                best.map(|(r, _)| r)
            })
            .collect()
    }

    fn cells(&self) -> Vec<Vec<String>> {
        let best = self.best_f1();
        let k = self.categories.len();
        let mut out = Vec::new();
        for (r, (label, s)) in self.rows.iter().enumerate() {
            for (metric, vals, mean) in [
                ("precision", &s.precision, s.macro_precision),
                ("recall", &s.recall, s.macro_recall),
                ("f1", &s.f1, s.macro_f1),
            ] {
                let mut row = vec![label.clone(), metric.to_string()];
                for col in 0..=k {
                    let v = if col < k { vals[col] } else { mean };
                    let mut cell = format!("{:.2}", 100.0 * v);
                    if metric == "f1" && best[col] == Some(r) {
                        cell.push('*');
                    }
                    row.push(cell);
                }
                out.push(row);
            }
        }
        out
    }

    /// `*` marks the best F1 in each column.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# outcome={} seed={}\n", self.outcome, self.seed);
        s.push_str(&self.header().join(","));
        s.push('\n');
        for row in self.cells() {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self) -> String {
        let header = self.header();
        let cells = self.cells();
        let mut widths: Vec<usize> = header.iter().map(String::len).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |row: &[String]| {
            let mut s = String::new();
            for (i, (c, w)) in row.iter().zip(&widths).enumerate() {
                if i < 2 {
                    let _ = write!(s, "{c:<w$}  ");
                } else {
                    let _ = write!(s, "{c:>w$}  ");
                }
            }
            s.trim_end().to_string() + "\n"
        };
        let mut s = format!("Test set performance for {} (seed {})\n", self.outcome, self.seed);
        s.push_str(&line(&header));
        let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
        s.push_str(&"-".repeat(total));
        s.push('\n');
        for (i, row) in cells.iter().enumerate() {
            if i > 0 && i % 3 == 0 {
                s.push('\n');
            }
            s.push_str(&line(row));
        }
        s
    }
}

/// `attribute,score,normalized_score`, highest score first.
pub fn importance_csv(names: &[String], imp: &Importance) -> Result<String> {
    if names.len() != imp.raw.len() {
        return Err(Error::SchemaMismatch(format!(
            "{} names for {} importance scores",
            names.len(),
            imp.raw.len()
        )));
    }
    let mut s = String::from("attribute,score,normalized_score\n");
    for i in imp.ranking() {
        let _ = writeln!(s, "{},{:.9},{:.6}", names[i], imp.raw[i], imp.normalized[i]);
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContributionRow {
    pub category: String,
    pub attribute: String,
    pub coefficient: f64,
    /// Position by decreasing coefficient, 1-based.
    pub rank: usize,
}

pub fn contributions_csv(rows: &[ContributionRow]) -> String {
    let mut s = String::from("category,attribute,coefficient,rank\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.9},{}", r.category, r.attribute, r.coefficient, r.rank);
    }
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Horizontal barplot, bars scaled by the largest absolute value. Positive
/// bars extend right of the axis, negative ones left.
pub fn barplot_svg(title: &str, items: &[(String, f64)]) -> String {
    const ROW: usize = 18;
    const LABEL_W: usize = 200;
    const HALF: f64 = 180.0;
    let width = LABEL_W + 2 * HALF as usize + 40;
    let height = 40 + ROW * items.len() + 10;
    let scale = items.iter().map(|(_, v)| v.abs()).fold(0.0_f64, f64::max);
    let axis = LABEL_W as f64 + HALF + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="10" y="20" font-size="13">{}</text>"#, xml_escape(title));
    for (i, (name, v)) in items.iter().enumerate() {
        let y = 40 + i * ROW;
        let len = if scale > 0.0 { v.abs() / scale * HALF } else { 0.0 };
        let x = if *v >= 0.0 { axis } else { axis - len };
        let fill = if *v >= 0.0 { "#3b6ea5" } else { "#c0504d" };
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LABEL_W,
            y + 12,
            xml_escape(name)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{}" width="{len:.2}" height="{}" fill="{fill}"/>"#,
            y + 2,
            ROW - 4
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{axis:.2}" y1="34" x2="{axis:.2}" y2="{}" stroke="black"/>"#,
        height - 6
    );
    s.push_str("</svg>\n");
    s
}
