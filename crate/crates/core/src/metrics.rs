//! Confusion matrices, accuracy and F1, cross-fold aggregation and the
//! confusion heatmap.
//!
//! Degenerate ratios follow one convention throughout: 0/0 is 0 for
//! precision, recall and F1, and macro-F1 averages over every class,
//! including classes absent from the data.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(n_classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if n == 0 || counts.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("confusion matrix must be square and non-empty".into()));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    /// Element-wise sum.
    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n_classes() != self.n_classes() {
            return Err(Error::Dimension(format!(
                "cannot add {0}×{0} and {1}×{1} confusion matrices",
                self.n_classes(),
                other.n_classes()
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }
}

pub fn confusion(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(n_classes);
    for (&p, &t) in predictions.iter().zip(labels) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::Label(format!(
                "class pair (true {t}, predicted {p}) outside 0..{n_classes}"
            )));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub n_windows: u64,
    pub confusion: ConfusionMatrix,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Contract("metrics of an empty confusion matrix".into()));
    }
    let n = cm.n_classes();
    let mut precision = Vec::with_capacity(n);
    let mut recall = Vec::with_capacity(n);
    let mut f1 = Vec::with_capacity(n);
    for c in 0..n {
        let tp = cm.get(c, c) as f64;
        let p = ratio(tp, cm.col_sum(c) as f64);
        let r = ratio(tp, cm.row_sum(c) as f64);
        precision.push(p);
        recall.push(r);
        f1.push(ratio(2.0 * p * r, p + r));
    }
    Ok(MetricsReport {
        accuracy: cm.trace() as f64 / total as f64,
        macro_f1: f1.iter().sum::<f64>() / n as f64,
        per_class_f1: f1,
        per_class_precision: precision,
        per_class_recall: recall,
        n_windows: total,
        confusion: cm.clone(),
    })
}

/// Unweighted mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvAggregate {
    pub folds: usize,
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    pub per_class_f1_mean: Vec<f64>,
    /// Metrics of the element-wise sum of the fold matrices.
    pub pooled: MetricsReport,
}

pub fn aggregate_cv(reports: &[MetricsReport]) -> Result<CvAggregate> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Contract("aggregate over zero folds".into()))?;
    let n = first.per_class_f1.len();
    let mut pooled = first.confusion.clone();
    for r in &reports[1..] {
        pooled.add(&r.confusion)?;
    }
    let acc: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    let f1: Vec<f64> = reports.iter().map(|r| r.macro_f1).collect();
    let per_class_f1_mean = (0..n)
        .map(|c| reports.iter().map(|r| r.per_class_f1[c]).sum::<f64>() / reports.len() as f64)
        .collect();
    Ok(CvAggregate {
        folds: reports.len(),
        accuracy: MeanStd::of(&acc),
        macro_f1: MeanStd::of(&f1),
        per_class_f1_mean,
        pooled: metrics(&pooled)?,
    })
}

fn csv_path(svg: &Path) -> PathBuf {
    svg.with_extension("csv")
}

/// Plain CSV: header `true\predicted,<names>`, one row per true class.
pub fn confusion_csv(cm: &ConfusionMatrix, names: &[String]) -> String {
    let mut s = String::from("true\\predicted");
    for n in names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for (name, row) in names.iter().zip(cm.rows()) {
        s.push_str(name);
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_confusion_csv(text: &str) -> Result<ConfusionMatrix> {
    let bad = |m: String| Error::Contract(format!("confusion csv: {m}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty".into()))?;
    let n = header.split(',').count() - 1;
    let mut counts = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let row: std::result::Result<Vec<u64>, _> = line.split(',').skip(1).map(str::parse).collect();
        let row = row.map_err(|e| bad(format!("row {}: {e}", i + 1)))?;
        counts.push(row);
    }
    ConfusionMatrix::from_counts(counts)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Row-normalised heatmap with count annotations.
pub fn confusion_svg(cm: &ConfusionMatrix, names: &[String], title: &str) -> String {
    let n = cm.n_classes();
    let cell = 48;
    let (left, top) = (110, 70);
    let width = left + n * cell + 20;
    let height = top + n * cell + 60;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-size="16" text-anchor="middle">{}</text>"#,
        width / 2,
        escape(title)
    );
    for t in 0..n {
        let row_sum = cm.row_sum(t);
        for p in 0..n {
            let v = cm.get(t, p);
            let frac = if row_sum == 0 { 0.0 } else { v as f64 / row_sum as f64 };
            // white → dark blue
            let lerp = |a: f64, b: f64| (a + (b - a) * frac).round() as u8;
            let (r, g, b) = (lerp(247.0, 8.0), lerp(251.0, 48.0), lerp(255.0, 107.0));
            let (x, y) = (left + p * cell, top + t * cell);
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="#{r:02x}{g:02x}{b:02x}" stroke="#cccccc"/>"##
            );
            let ink = if frac > 0.5 { "white" } else { "black" };
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="12" text-anchor="middle" fill="{ink}">{v}</text>"#,
                x + cell / 2,
                y + cell / 2 + 4
            );
        }
    }
    for (i, name) in names.iter().enumerate().take(n) {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{}</text>"#,
            left - 6,
            top + i * cell + cell / 2 + 4,
            escape(name)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
            left + i * cell + cell / 2,
            top + n * cell + 18,
            escape(name)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">Predicted</text>"#,
        left + n * cell / 2,
        top + n * cell + 42
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 20 {})">True</text>"#,
        top + n * cell / 2,
        top + n * cell / 2
    );
    s.push_str("</svg>\n");
    s
}

/// Writes the heatmap to `path` and the raw matrix next to it as CSV.
/// Returns the CSV path.
pub fn render_confusion(cm: &ConfusionMatrix, names: &[String], path: &Path, title: &str) -> Result<PathBuf> {
    if names.len() != cm.n_classes() {
        return Err(Error::Contract(format!(
            "{} class names for a {}-class matrix",
            names.len(),
            cm.n_classes()
        )));
    }
    std::fs::write(path, confusion_svg(cm, names, title)).map_err(|e| Error::io(path, e))?;
    let csv = csv_path(path);
    std::fs::write(&csv, confusion_csv(cm, names)).map_err(|e| Error::io(&csv, e))?;
    Ok(csv)
}
