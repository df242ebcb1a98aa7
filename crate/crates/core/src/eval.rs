//! Macro precision/recall/F1 and confusion matrices whose cells are split into
//! contextual and non-contextual counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {golds} gold labels, {preds} predictions, {flags} context flags")]
    LengthMismatch { golds: usize, preds: usize, flags: usize },
    #[error("no prediction sets to report")]
    Empty,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    #[serde(rename = "c")]
    pub contextual: u64,
    #[serde(rename = "nc")]
    pub non_contextual: u64,
}

impl Cell {
    pub fn total(&self) -> u64 {
        self.contextual + self.non_contextual
    }
}

/// `cells[true][pred]`, indexed by [`Label::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub cells: [[Cell; 2]; 2],
}

impl ConfusionMatrix {
    pub fn cell(&self, gold: Label, pred: Label) -> Cell {
        self.cells[gold.index()][pred.index()]
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().map(Cell::total).sum()
    }

    /// Count of `cells[gold][pred]` across both context kinds.
    pub fn count(&self, gold: Label, pred: Label) -> u64 {
        self.cell(gold, pred).total()
    }

    /// Aligned text rendering, each cell as `contextual + non_contextual`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>10} {:>12} {:>12}", "true\\pred", "NOT", "HOF");
        for gold in Label::ALL {
            let fmt = |c: Cell| format!("{}+{}", c.contextual, c.non_contextual);
            let _ = writeln!(
                out,
                "{:>10} {:>12} {:>12}",
                gold.as_str(),
                fmt(self.cell(gold, Label::Not)),
                fmt(self.cell(gold, Label::Hof))
            );
        }
        out
    }
}

pub fn confusion(golds: &[Label], preds: &[Label], contextual: &[bool]) -> Result<ConfusionMatrix, EvalError> {
    if golds.len() != preds.len() || golds.len() != contextual.len() {
        return Err(EvalError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
            flags: contextual.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for ((g, p), &ctx) in golds.iter().zip(preds).zip(contextual) {
        let cell = &mut cm.cells[g.index()][p.index()];
        if ctx {
            cell.contextual += 1;
        } else {
            cell.non_contextual += 1;
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub confusion: [[Cell; 2]; 2],
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn class(&self, label: Label) -> &ClassMetrics {
        &self.per_class[label.as_str()]
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn class_metrics(cm: &ConfusionMatrix, class: Label) -> ClassMetrics {
    let other = Label::from_index(1 - class.index()).expect("binary labels");
    let tp = cm.count(class, class);
    let fp = cm.count(other, class);
    let fn_ = cm.count(class, other);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        support: tp + fn_,
    }
}

/// Unweighted means over NOT and HOF; macro F1 averages per-class F1.
pub fn macro_metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let per: Vec<ClassMetrics> = Label::ALL.iter().map(|&c| class_metrics(cm, c)).collect();
    MetricsReport {
        macro_precision: (per[0].precision + per[1].precision) / 2.0,
        macro_recall: (per[0].recall + per[1].recall) / 2.0,
        macro_f1: (per[0].f1 + per[1].f1) / 2.0,
        per_class: Label::ALL
            .iter()
            .zip(per)
            .map(|(l, m)| (l.as_str().to_string(), m))
            .collect(),
        confusion: cm.cells,
    }
}

pub fn evaluate(golds: &[Label], preds: &[Label], contextual: &[bool]) -> Result<MetricsReport, EvalError> {
    Ok(macro_metrics(&confusion(golds, preds, contextual)?))
}

/// One row of a comparison table; scores are percentages at two decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ReportRow>,
}

fn percent(x: f64) -> f64 {
    (x * 10000.0).round() / 100.0
}

impl ComparisonTable {
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.chars().count()).max().unwrap_or(0).max(13);
        let mut out = format!(
            "{:<width$}  {:>9}  {:>9}  {:>9}\n",
            "configuration", "precision", "recall", "f1"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.2}  {:>9.2}  {:>9.2}",
                r.name, r.macro_precision, r.macro_recall, r.macro_f1
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes") + "\n"
    }
}

/// Scores each named prediction set against the same gold labels.
pub fn report(
    configurations: &[(&str, &[Label])],
    golds: &[Label],
    contextual: &[bool],
) -> Result<ComparisonTable, EvalError> {
    if configurations.is_empty() {
        return Err(EvalError::Empty);
    }
    let rows = configurations
        .iter()
        .map(|(name, preds)| {
            let m = evaluate(golds, preds, contextual)?;
            Ok(ReportRow {
                name: name.to_string(),
                macro_precision: percent(m.macro_precision),
                macro_recall: percent(m.macro_recall),
                macro_f1: percent(m.macro_f1),
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(ComparisonTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Hof as H, Not as N};

    /// Direct per-sample tally, independent of the matrix.
    fn brute_force(golds: &[Label], preds: &[Label]) -> (f64, f64, f64) {
        let mut p = [0.0; 2];
        let mut r = [0.0; 2];
        let mut f = [0.0; 2];
        for (k, class) in [N, H].into_iter().enumerate() {
            let mut tp = 0u32;
            let mut predicted = 0u32;
            let mut actual = 0u32;
            for i in 0..golds.len() {
                if preds[i] == class {
                    predicted += 1;
                }
                if golds[i] == class {
                    actual += 1;
                    if preds[i] == class {
                        tp += 1;
                    }
                }
            }
            p[k] = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
            r[k] = if actual == 0 { 0.0 } else { tp as f64 / actual as f64 };
            f[k] = if p[k] + r[k] == 0.0 { 0.0 } else { 2.0 * p[k] * r[k] / (p[k] + r[k]) };
        }
        ((p[0] + p[1]) / 2.0, (r[0] + r[1]) / 2.0, (f[0] + f[1]) / 2.0)
    }

    #[test]
    fn six_sample_fixture() {
        let golds = [H, H, H, N, N, N];
        let preds = [H, H, N, N, N, H];
        let flags = [true, false, true, false, true, false];
        let cm = confusion(&golds, &preds, &flags).unwrap();
        assert_eq!(cm.cell(H, H), Cell { contextual: 1, non_contextual: 1 });
        assert_eq!(cm.cell(H, N), Cell { contextual: 1, non_contextual: 0 });
        assert_eq!(cm.cell(N, N), Cell { contextual: 1, non_contextual: 1 });
        assert_eq!(cm.cell(N, H), Cell { contextual: 0, non_contextual: 1 });
        let m = macro_metrics(&cm);
        for v in [m.macro_precision, m.macro_recall, m.macro_f1] {
            assert!((v - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_and_empty() {
        let golds = [H, N, N];
        let cm = confusion(&golds, &golds, &[true; 3]).unwrap();
        assert_eq!(cm.cell(H, N).total() + cm.cell(N, H).total(), 0);
        assert!(cm.cells.iter().flatten().all(|c| c.non_contextual == 0));
        let m = macro_metrics(&cm);
        assert_eq!((m.macro_precision, m.macro_recall, m.macro_f1), (1.0, 1.0, 1.0));
        let empty = confusion(&[], &[], &[]).unwrap();
        assert_eq!(empty, ConfusionMatrix::default());
        assert_eq!(macro_metrics(&empty).macro_f1, 0.0);
    }

    #[test]
    fn all_hof_predictor_on_balanced_data() {
        let golds = [H, H, N, N];
        let m = evaluate(&golds, &[H; 4], &[false; 4]).unwrap();
        assert_eq!(m.class(N).recall, 0.0);
        assert!(m.macro_f1 < 0.5);
        // HOF: P 0.5, R 1, F1 2/3; NOT: 0. Macro F1 1/3.
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(confusion(&[H], &[H, N], &[true]), Err(EvalError::LengthMismatch { .. })));
    }

    #[test]
    fn json_schema() {
        let m = evaluate(&[H, N], &[H, H], &[true, false]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        for key in ["macro_precision", "macro_recall", "macro_f1", "per_class", "confusion"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["confusion"][1][1]["c"], 1);
        assert_eq!(v["confusion"][0][1]["nc"], 1);
        assert!(v["per_class"]["HOF"]["f1"].is_number());
    }

    #[test]
    fn comparison_table() {
        let golds = [H, N];
        let table = report(&[("perfect", &golds[..])], &golds, &[true, true]).unwrap();
        assert_eq!(table.rows[0].macro_f1, 100.0);
        assert!(table.render().contains("100.00"));
        assert_eq!(report(&[], &golds, &[true, true]), Err(EvalError::Empty));
    }

    fn labels(n: usize) -> impl Strategy<Value = Vec<Label>> {
        proptest::collection::vec(prop_oneof![Just(N), Just(H)], n)
    }

    fn triple() -> impl Strategy<Value = (Vec<Label>, Vec<Label>, Vec<bool>)> {
        (0usize..40).prop_flat_map(|n| (labels(n), labels(n), proptest::collection::vec(any::<bool>(), n)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn matches_brute_force_tally((g, p, f) in triple()) {
            let m = evaluate(&g, &p, &f).unwrap();
            let (bp, br, bf) = brute_force(&g, &p);
            prop_assert_eq!(m.macro_precision, bp);
            prop_assert_eq!(m.macro_recall, br);
            prop_assert_eq!(m.macro_f1, bf);
        }

        #[test]
        fn joint_permutation_invariance((g, p, f) in triple(), seed in any::<u64>()) {
            let mut idx: Vec<usize> = (0..g.len()).collect();
            crate::rng::SplitMix64::new(seed).shuffle(&mut idx);
            let pg: Vec<Label> = idx.iter().map(|&i| g[i]).collect();
            let pp: Vec<Label> = idx.iter().map(|&i| p[i]).collect();
            let pf: Vec<bool> = idx.iter().map(|&i| f[i]).collect();
            prop_assert_eq!(evaluate(&g, &p, &f).unwrap(), evaluate(&pg, &pp, &pf).unwrap());
        }

        #[test]
        fn segregation_sums_to_total((g, p, f) in triple()) {
            let cm = confusion(&g, &p, &f).unwrap();
            prop_assert_eq!(cm.total(), g.len() as u64);
            let ctx: Vec<usize> = (0..g.len()).filter(|&i| f[i]).collect();
            let nctx: Vec<usize> = (0..g.len()).filter(|&i| !f[i]).collect();
            let sub = |ix: &[usize]| {
                let gs: Vec<Label> = ix.iter().map(|&i| g[i]).collect();
                let ps: Vec<Label> = ix.iter().map(|&i| p[i]).collect();
                confusion(&gs, &ps, &vec![true; ix.len()]).unwrap()
            };
            let (a, b) = (sub(&ctx), sub(&nctx));
            for gi in 0..2 {
                for pi in 0..2 {
                    prop_assert_eq!(cm.cells[gi][pi].contextual, a.cells[gi][pi].total());
                    prop_assert_eq!(cm.cells[gi][pi].non_contextual, b.cells[gi][pi].total());
                    prop_assert_eq!(cm.cells[gi][pi].total(), a.cells[gi][pi].total() + b.cells[gi][pi].total());
                }
            }
        }
    }
}
