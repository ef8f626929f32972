//! Metric reports, per-page breakdowns and the answer/page confusion table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::setups::{Evaluation, SampleResult};
use crate::corpus::write_atomic;
use crate::error::{Error, Result};

/// Scores for the questions whose answer sits on one page position
/// (0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BreakdownRow {
    pub answer_page: usize,
    pub n: usize,
    pub accuracy: f64,
    pub anls: f64,
    pub page_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub accuracy: f64,
    pub anls: f64,
    pub page_accuracy: f64,
    pub n_samples: usize,
    pub breakdown: Vec<BreakdownRow>,
}

#[derive(Default)]
struct Sums {
    n: usize,
    exact: usize,
    anls: f64,
    page: usize,
}

impl Sums {
    fn add(&mut self, r: &SampleResult) {
        self.n += 1;
        self.exact += usize::from(r.exact);
        self.anls += r.anls;
        self.page += usize::from(r.page_correct);
    }

    fn ratio(&self, x: f64) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            x / self.n as f64
        }
    }
}

pub fn breakdown_by_answer_page(results: &[SampleResult]) -> Vec<BreakdownRow> {
    let mut groups: BTreeMap<usize, Sums> = BTreeMap::new();
    for r in results {
        groups.entry(r.answer_page).or_default().add(r);
    }
    groups
        .into_iter()
        .map(|(answer_page, s)| BreakdownRow {
            answer_page,
            n: s.n,
            accuracy: s.ratio(s.exact as f64),
            anls: s.ratio(s.anls),
            page_accuracy: s.ratio(s.page as f64),
        })
        .collect()
}

pub fn build_report(results: &[SampleResult]) -> MetricReport {
    let mut all = Sums::default();
    results.iter().for_each(|r| all.add(r));
    MetricReport {
        accuracy: all.ratio(all.exact as f64),
        anls: all.ratio(all.anls),
        page_accuracy: all.ratio(all.page as f64),
        n_samples: results.len(),
        breakdown: breakdown_by_answer_page(results),
    }
}

/// Counts over (answer correct?, page correct?). A correct answer with a
/// wrong page points at an answer inferred from prior bias.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub answer_right_page_right: usize,
    pub answer_right_page_wrong: usize,
    pub answer_wrong_page_right: usize,
    pub answer_wrong_page_wrong: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.answer_right_page_right + self.answer_right_page_wrong + self.answer_wrong_page_right + self.answer_wrong_page_wrong
    }
}

pub fn confusion_answer_vs_page(results: &[SampleResult]) -> Confusion {
    let mut c = Confusion::default();
    for r in results {
        match (r.exact, r.page_correct) {
            (true, true) => c.answer_right_page_right += 1,
            (true, false) => c.answer_right_page_wrong += 1,
            (false, true) => c.answer_wrong_page_right += 1,
            (false, false) => c.answer_wrong_page_wrong += 1,
        }
    }
    c
}

pub const BREAKDOWN_HEADER: &str = "answer_page,n,accuracy,anls,page_accuracy";

pub fn breakdown_csv(rows: &[BreakdownRow]) -> String {
    let mut s = format!("{BREAKDOWN_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.answer_page, r.n, r.accuracy, r.anls, r.page_accuracy);
    }
    s
}

pub fn confusion_csv(c: &Confusion) -> String {
    format!(
        "answer_correct,page_correct,count\ntrue,true,{}\ntrue,false,{}\nfalse,true,{}\nfalse,false,{}\n",
        c.answer_right_page_right, c.answer_right_page_wrong, c.answer_wrong_page_right, c.answer_wrong_page_wrong
    )
}

/// Grouped bar chart of ANLS and page accuracy per answer page.
pub fn breakdown_svg(rows: &[BreakdownRow], title: &str) -> String {
    let (w, h, left, bottom, top) = (640.0, 320.0, 48.0, 40.0, 30.0);
    let plot_w = w - left - 16.0;
    let plot_h = h - bottom - top;
    let slot = plot_w / rows.len().max(1) as f64;
    let bar = slot * 0.38;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, w / 2.0, escape(title));
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let y = top + plot_h * (1.0 - v);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, left + plot_w);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, left - 4.0, y + 4.0);
    }
    for (i, r) in rows.iter().enumerate() {
        let x = left + slot * i as f64 + slot * 0.12;
        for (k, (v, color)) in [(r.anls, "#4477aa"), (r.page_accuracy, "#ee6677")].into_iter().enumerate() {
            let bh = plot_h * v.clamp(0.0, 1.0);
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{bar:.1}" height="{bh:.1}" fill="{color}"/>"#,
                x + bar * k as f64,
                top + plot_h - bh
            );
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, x + bar, top + plot_h + 14.0, r.answer_page + 1);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">answer page</text>"#, left + plot_w / 2.0, h - 8.0);
    let _ = writeln!(s, r##"<rect x="{:.1}" y="24" width="10" height="10" fill="#4477aa"/><text x="{:.1}" y="33">ANLS</text>"##, w - 170.0, w - 156.0);
    let _ = writeln!(s, r##"<rect x="{:.1}" y="24" width="10" height="10" fill="#ee6677"/><text x="{:.1}" y="33">page accuracy</text>"##, w - 110.0, w - 96.0);
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub const REPORT_FILES: [&str; 4] = ["report.json", "breakdown.csv", "breakdown.svg", "confusion.csv"];

pub fn report_json(report: &MetricReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report).map_err(|e| Error::Validation(format!("report encoding: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Writes the four report files into `dir`, each atomically.
pub fn write_report_files(eval: &Evaluation, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let title = format!("{} setup", eval.setup);
    let contents = [
        report_json(&eval.report)?,
        breakdown_csv(&eval.report.breakdown),
        breakdown_svg(&eval.report.breakdown, &title),
        confusion_csv(&confusion_answer_vs_page(&eval.results)),
    ];
    let mut written = Vec::new();
    for (name, body) in REPORT_FILES.iter().zip(contents) {
        let path = dir.join(name);
        write_atomic(&path, body.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
