//! CSV and aligned-text emitters.

use super::metrics::{class_label, EvalReport};
use super::sweep::{SweepRow, SweepStage};

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let pad = widths[c] - s.chars().count();
                if c == 0 {
                    format!("{s}{}", " ".repeat(pad))
                } else {
                    format!("{}{s}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn score_rows(report: &EvalReport) -> Vec<(String, f64, f64, bool)> {
    let mut rows = Vec::new();
    if let Some(m) = &report.multiclass {
        for (k, s) in m.per_class.iter().enumerate() {
            rows.push((class_label(k as u8), s.f1, s.iou, s.undefined));
        }
        rows.push(("mean (macro F1 / mIoU)".to_string(), m.macro_f1, m.miou, false));
    }
    rows.push((
        "binary change".to_string(),
        report.binary.f1,
        report.binary.iou,
        report.binary.undefined,
    ));
    rows
}

pub fn eval_table(report: &EvalReport) -> String {
    let mut rows = vec![vec!["class".to_string(), "F1".to_string(), "IoU".to_string()]];
    for (name, f1, iou, undefined) in score_rows(report) {
        let mark = if undefined { " *" } else { "" };
        rows.push(vec![name, format!("{f1:.3}{mark}"), format!("{iou:.3}{mark}")]);
    }
    let mut out = align(&rows);
    if score_rows(report).iter().any(|r| r.3) {
        out.push_str("* class absent from prediction and ground truth; scored 0 and left out of the mean\n");
    }
    out
}

pub fn eval_csv(report: &EvalReport) -> String {
    let mut out = String::from("class,f1,iou,undefined\n");
    for (name, f1, iou, undefined) in score_rows(report) {
        out.push_str(&format!("{name},{f1:.6},{iou:.6},{undefined}\n"));
    }
    out
}

fn stage_headers(stage: SweepStage) -> (&'static str, &'static str) {
    match stage {
        SweepStage::Geometric => ("alpha_t", "tracker ratio"),
        SweepStage::Semantic => ("alpha_g", "segmenter ratio"),
    }
}

/// Ratio as a fraction, the rest in percent, as in the published sweep tables.
pub fn sweep_table(rows: &[SweepRow], stage: SweepStage) -> String {
    let (t, r) = stage_headers(stage);
    let mut table = vec![[t, r, "Prec.", "Rec.", "F1", "IoU"].map(String::from).to_vec()];
    for row in rows {
        table.push(vec![
            format!("{:.2}", row.threshold),
            format!("{:.3}", row.matched_ratio),
            format!("{:.1}", 100.0 * row.precision),
            format!("{:.1}", 100.0 * row.recall),
            format!("{:.1}", 100.0 * row.f1),
            format!("{:.1}", 100.0 * row.iou),
        ]);
    }
    align(&table)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("threshold,matched_ratio,precision,recall,f1,iou\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.threshold, r.matched_ratio, r.precision, r.recall, r.f1, r.iou
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{evaluate, Averaging};
    use crate::types::ChangeMask;

    #[test]
    fn tables_have_one_row_per_class() {
        let gt = ChangeMask::from_labels(2, 2, 4, vec![0, 1, 2, 0]).unwrap();
        let r = evaluate(&[(gt.clone(), gt)], Averaging::Pooled).unwrap();
        let csv = eval_csv(&r);
        assert_eq!(csv.lines().count(), 1 + 4 + 2);
        assert!(csv.contains("3. not_in_view,0.000000,0.000000,true"));
        let table = eval_table(&r);
        assert!(table.contains("1. object_change"));
        assert!(table.contains('*'));
    }

    #[test]
    fn sweep_emitters() {
        let rows = [SweepRow {
            threshold: 0.1,
            matched_ratio: 0.921,
            precision: 0.779,
            recall: 0.695,
            f1: 0.689,
            iou: 0.577,
        }];
        let t = sweep_table(&rows, SweepStage::Semantic);
        assert!(
            t.lines().nth(1).unwrap().split_whitespace().collect::<Vec<_>>()
                == ["0.10", "0.921", "77.9", "69.5", "68.9", "57.7"],
            "{t}"
        );
        assert_eq!(sweep_csv(&rows).lines().count(), 2);
    }
}
