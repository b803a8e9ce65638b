//! Confusion matrices, per-class accuracy and report files.
//!
//! Rows are true classes and columns predictions, both in the order
//! Normal, NPI, NPC. Printed fractions use exact integer rounding (half up)
//! so a count ratio always prints the same three decimals.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{ClassLabel, NUM_CLASSES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

/// `num/den` rounded half-up to `decimals` places, formatted exactly.
pub fn format_ratio(num: u64, den: u64, decimals: u32) -> String {
    assert!(den > 0, "zero denominator");
    let scale = 10u128.pow(decimals);
    let q = (2 * num as u128 * scale + den as u128) / (2 * den as u128);
    if decimals == 0 {
        return q.to_string();
    }
    format!("{}.{:0width$}", q / scale, q % scale, width = decimals as usize)
}

impl ConfusionMatrix {
    /// Every true class needs at least one sample.
    pub fn from_counts(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Result<Self> {
        for (i, row) in counts.iter().enumerate() {
            if row.iter().sum::<u64>() == 0 {
                return Err(Error::InvalidInput(format!(
                    "no samples of true class {} in confusion matrix",
                    ClassLabel::ALL[i]
                )));
            }
        }
        Ok(ConfusionMatrix { counts })
    }

    /// Tallies (true, predicted) class indices.
    pub fn from_predictions(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::InvalidInput("cannot evaluate an empty split".into()));
        }
        if truth.len() != predicted.len() {
            return Err(Error::InvalidInput(format!("{} labels vs {} predictions", truth.len(), predicted.len())));
        }
        let mut counts = [[0u64; NUM_CLASSES]; NUM_CLASSES];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= NUM_CLASSES || p >= NUM_CLASSES {
                return Err(Error::InvalidInput(format!("class index out of range: true {t}, predicted {p}")));
            }
            counts[t][p] += 1;
        }
        ConfusionMatrix::from_counts(counts)
    }

    pub fn counts(&self) -> &[[u64; NUM_CLASSES]; NUM_CLASSES] {
        &self.counts
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn total(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.row_sum(i)).sum()
    }

    pub fn row_normalized(&self) -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
        let mut out = [[0.0; NUM_CLASSES]; NUM_CLASSES];
        for (i, row) in out.iter_mut().enumerate() {
            let s = self.row_sum(i) as f64;
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.counts[i][j] as f64 / s;
            }
        }
        out
    }

    /// Diagonal of the row-normalized matrix.
    pub fn per_class_accuracy(&self) -> [f64; NUM_CLASSES] {
        let n = self.row_normalized();
        std::array::from_fn(|i| n[i][i])
    }

    pub fn overall_accuracy(&self) -> f64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum::<u64>() as f64 / self.total() as f64
    }

    /// Normalized cell at three decimals, e.g. `0.934`.
    pub fn fraction_str(&self, i: usize, j: usize) -> String {
        format_ratio(self.counts[i][j], self.row_sum(i), 3)
    }

    /// Per-class accuracy as a percentage with one decimal, e.g. `93.4`.
    pub fn accuracy_percent_str(&self, i: usize) -> String {
        format_ratio(self.counts[i][i] * 100, self.row_sum(i), 1)
    }

    pub fn to_csv(&self) -> String {
        let header = |first: &str| {
            let cols: Vec<String> = ClassLabel::ALL.iter().map(|c| format!("predicted_{c}")).collect();
            format!("{first},{}\n", cols.join(","))
        };
        let mut s = header("counts");
        for (i, c) in ClassLabel::ALL.iter().enumerate() {
            let cells: Vec<String> = self.counts[i].iter().map(u64::to_string).collect();
            let _ = writeln!(s, "true_{c},{}", cells.join(","));
        }
        s.push_str(&header("normalized"));
        for (i, c) in ClassLabel::ALL.iter().enumerate() {
            let cells: Vec<String> = (0..NUM_CLASSES).map(|j| self.fraction_str(i, j)).collect();
            let _ = writeln!(s, "true_{c},{}", cells.join(","));
        }
        s
    }

    /// Parses [`ConfusionMatrix::to_csv`] output; the normalized block must
    /// agree with the counts.
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Parse { context: "confusion.csv".into(), message: m };
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
        let rows: Vec<csv::StringRecord> =
            rdr.records().collect::<std::result::Result<_, _>>().map_err(|e| bad(e.to_string()))?;
        if rows.len() != 2 * (NUM_CLASSES + 1) {
            return Err(bad(format!("expected {} rows, found {}", 2 * (NUM_CLASSES + 1), rows.len())));
        }
        let expect_header = |r: &csv::StringRecord, first: &str| -> Result<()> {
            let want: Vec<String> = std::iter::once(first.to_string())
                .chain(ClassLabel::ALL.iter().map(|c| format!("predicted_{c}")))
                .collect();
            if r.iter().ne(want.iter().map(String::as_str)) {
                return Err(bad(format!("bad header row {:?}", r)));
            }
            Ok(())
        };
        expect_header(&rows[0], "counts")?;
        expect_header(&rows[NUM_CLASSES + 1], "normalized")?;
        let mut counts = [[0u64; NUM_CLASSES]; NUM_CLASSES];
        for (i, c) in ClassLabel::ALL.iter().enumerate() {
            let r = &rows[1 + i];
            if r.len() != NUM_CLASSES + 1 || r[0] != format!("true_{c}") {
                return Err(bad(format!("bad counts row {:?}", r)));
            }
            for j in 0..NUM_CLASSES {
                counts[i][j] = r[1 + j].parse().map_err(|e| bad(format!("count {:?}: {e}", &r[1 + j])))?;
            }
        }
        let m = ConfusionMatrix::from_counts(counts)?;
        for (i, c) in ClassLabel::ALL.iter().enumerate() {
            let r = &rows[NUM_CLASSES + 2 + i];
            let want: Vec<String> =
                std::iter::once(format!("true_{c}")).chain((0..NUM_CLASSES).map(|j| m.fraction_str(i, j))).collect();
            if r.iter().ne(want.iter().map(String::as_str)) {
                return Err(bad(format!("normalized row {:?} disagrees with counts", r)));
            }
        }
        Ok(m)
    }

    /// Heat table in the confusion-matrix layout.
    pub fn to_svg(&self, title: &str) -> String {
        let (cell, left, top) = (90.0, 110.0, 60.0);
        let size = cell * NUM_CLASSES as f64;
        let norm = self.row_normalized();
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="13">"#,
            left + size + 20.0,
            top + size + 40.0
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{left}" y="20" font-size="15">{title}</text>"#);
        for (j, c) in ClassLabel::ALL.iter().enumerate() {
            let x = left + cell * (j as f64 + 0.5);
            let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{c}</text>"#, top - 8.0);
            let y = top + cell * (j as f64 + 0.5);
            let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{c}</text>"#, left - 8.0);
        }
        for (i, row) in norm.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let (x, y) = (left + cell * j as f64, top + cell * i as f64);
                let shade = (255.0 * (1.0 - v)).round() as u8;
                let ink = if v > 0.5 { "white" } else { "black" };
                let _ = writeln!(
                    s,
                    r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="#888"/>"##
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{}</text>"#,
                    x + cell / 2.0,
                    y + cell / 2.0 - 4.0,
                    self.fraction_str(i, j)
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}" font-size="11">({})</text>"#,
                    x + cell / 2.0,
                    y + cell / 2.0 + 12.0,
                    self.counts[i][j]
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">predicted</text>"#,
            left + size / 2.0,
            top + size + 25.0
        );
        s.push_str("</svg>\n");
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: ClassLabel,
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub split: String,
    pub seed: u64,
    pub checkpoint_sha256: String,
    pub per_class: Vec<ClassMetrics>,
    pub overall_accuracy: f64,
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
    pub row_normalized: [[f64; NUM_CLASSES]; NUM_CLASSES],
}

impl Metrics {
    pub fn new(m: &ConfusionMatrix, split: &str, seed: u64, checkpoint_sha256: &str) -> Self {
        let acc = m.per_class_accuracy();
        Metrics {
            split: split.to_string(),
            seed,
            checkpoint_sha256: checkpoint_sha256.to_string(),
            per_class: ClassLabel::ALL
                .iter()
                .enumerate()
                .map(|(i, &class)| ClassMetrics {
                    class,
                    correct: m.counts[i][i],
                    total: m.row_sum(i),
                    accuracy: acc[i],
                })
                .collect(),
            overall_accuracy: m.overall_accuracy(),
            counts: m.counts,
            row_normalized: m.row_normalized(),
        }
    }
}

/// Writes confusion.csv, metrics.json and confusion.svg into `dir`.
pub fn write_report(dir: &Path, m: &ConfusionMatrix, metrics: &Metrics) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    write("confusion.csv", m.to_csv())?;
    write("metrics.json", serde_json::to_string_pretty(metrics).expect("metrics serialize") + "\n")?;
    write("confusion.svg", m.to_svg(&format!("Confusion matrix ({})", metrics.split)))
}

/// One line per class: `Normal: 93.4% (467/500)`.
pub fn summary_lines(m: &ConfusionMatrix) -> Vec<String> {
    let mut lines: Vec<String> = ClassLabel::ALL
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{c}: {}% ({}/{})", m.accuracy_percent_str(i), m.counts[i][i], m.row_sum(i)))
        .collect();
    let correct: u64 = (0..NUM_CLASSES).map(|i| m.counts[i][i]).sum();
    lines.push(format!("overall: {}% ({correct}/{})", format_ratio(correct * 100, m.total(), 1), m.total()));
    lines
}
