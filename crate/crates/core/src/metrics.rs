//! Ranking and multi-label classification metrics.
//!
//! Everything here is binary-relevance: a candidate is relevant or it is not.
//! Ranking metrics average per-query values over the run set; classification
//! metrics pool or average per-label counts. All results land in an
//! `EvalReport` keyed by names like `acc@1` or `micro_f1`.

use std::collections::BTreeSet;
use std::fmt::Display;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::retrieval::RankedCandidates;
use crate::taxonomy::TermCode;

/// Binary relevance judgment for one query.
#[derive(Debug, Clone)]
pub struct RelevanceJudgment {
    pub query_id: String,
    pub relevant: BTreeSet<TermCode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold occurrences of the label (TP + FN).
    pub support: usize,
    /// Predicted occurrences of the label (TP + FP).
    pub predicted: usize,
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    pub per_class: Vec<ClassReport>,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no queries to evaluate")]
    NoQueries,
    #[error("query {0} has an empty ranking")]
    EmptyRanking(String),
    #[error("query {0} has an empty relevant set")]
    EmptyRelevantSet(String),
    #[error("k values must be non-empty and positive")]
    BadKs,
    #[error("{preds} predictions vs {golds} golds")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("label {0} is not in the label universe")]
    UnknownLabel(String),
}

impl EvalReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    /// Human-readable table: scalar metrics first, then the per-class block.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let width = self
            .metrics
            .keys()
            .map(|k| k.len())
            .max()
            .unwrap_or(0)
            .max("metric".len());
        out.push_str(&format!("{:width$}  value\n", "metric"));
        for (name, value) in &self.metrics {
            out.push_str(&format!("{name:width$}  {value:.4}\n"));
        }
        if !self.per_class.is_empty() {
            let lw = self
                .per_class
                .iter()
                .map(|c| c.label.len())
                .max()
                .unwrap()
                .max("label".len());
            out.push_str(&format!(
                "\n{:lw$}  precision  recall  f1      support\n",
                "label"
            ));
            for c in &self.per_class {
                out.push_str(&format!(
                    "{:lw$}  {:<9.4}  {:<6.4}  {:<6.4}  {}\n",
                    c.label, c.precision, c.recall, c.f1, c.support
                ));
            }
        }
        out
    }

    /// Machine-readable dump, one tab-separated record per line.
    pub fn render_records(&self) -> String {
        let mut out = String::new();
        for (name, value) in &self.metrics {
            out.push_str(&format!("metric\t{name}\t{value}\n"));
        }
        for c in &self.per_class {
            out.push_str(&format!(
                "class\t{}\t{}\t{}\t{}\t{}\n",
                c.label, c.precision, c.recall, c.f1, c.support
            ));
        }
        out
    }
}

fn log2(x: f64) -> f64 {
    x.ln() / std::f64::consts::LN_2
}

/// Computes Acc@K, Rec@K, Prec@K, MRR@K, NDCG@K, and MAP@K for each requested
/// K, averaged over queries. Keys are `acc@K`, `rec@K`, `prec@K`, `mrr@K`,
/// `ndcg@K`, `map@K`.
pub fn ranking_metrics(
    runs: &[(RankedCandidates, RelevanceJudgment)],
    ks: &[usize],
) -> Result<EvalReport, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::NoQueries);
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(MetricsError::BadKs);
    }
    for (run, judgment) in runs {
        if run.items.is_empty() {
            return Err(MetricsError::EmptyRanking(run.query_id.clone()));
        }
        if judgment.relevant.is_empty() {
            return Err(MetricsError::EmptyRelevantSet(judgment.query_id.clone()));
        }
    }

    let n = runs.len() as f64;
    let mut report = EvalReport::default();
    for &k in ks {
        let mut acc = 0.0;
        let mut rec = 0.0;
        let mut prec = 0.0;
        let mut mrr = 0.0;
        let mut ndcg = 0.0;
        let mut map = 0.0;
        for (run, judgment) in runs {
            let rel = &judgment.relevant;
            let top: Vec<bool> = run
                .items
                .iter()
                .take(k)
                .map(|(code, _)| rel.contains(code))
                .collect();
            let hits = top.iter().filter(|h| **h).count();

            acc += f64::from(hits > 0);
            rec += hits as f64 / rel.len() as f64;
            // Short rankings divide by what was actually returned, so a
            // perfect 1-item run still scores 1.0 at every K.
            prec += hits as f64 / k.min(run.items.len()) as f64;
            if let Some(first) = top.iter().position(|h| *h) {
                mrr += 1.0 / (first + 1) as f64;
            }

            let dcg: f64 = top
                .iter()
                .enumerate()
                .filter(|(_, h)| **h)
                .map(|(i, _)| 1.0 / log2((i + 2) as f64))
                .sum();
            let ideal: f64 = (0..rel.len().min(k))
                .map(|i| 1.0 / log2((i + 2) as f64))
                .sum();
            ndcg += dcg / ideal;

            let mut seen = 0usize;
            let mut ap = 0.0;
            for (i, hit) in top.iter().enumerate() {
                if *hit {
                    seen += 1;
                    ap += seen as f64 / (i + 1) as f64;
                }
            }
            map += ap / rel.len().min(k) as f64;
        }
        report.metrics.insert(format!("acc@{k}"), acc / n);
        report.metrics.insert(format!("rec@{k}"), rec / n);
        report.metrics.insert(format!("prec@{k}"), prec / n);
        report.metrics.insert(format!("mrr@{k}"), mrr / n);
        report.metrics.insert(format!("ndcg@{k}"), ndcg / n);
        report.metrics.insert(format!("map@{k}"), map / n);
    }
    Ok(report)
}

fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

/// Multi-label set metrics: per-label precision/recall/F1/support, micro and
/// macro aggregates, and instance-level exact match. Macro averaging skips
/// labels that never occur in either golds or predictions; a label that is
/// predicted but never gold still counts (with F1 = 0), so false alarms on
/// absent labels are not swept under the rug.
pub fn classification_metrics<L: Ord + Clone + Display>(
    preds: &[BTreeSet<L>],
    golds: &[BTreeSet<L>],
    labels: &[L],
) -> Result<EvalReport, MetricsError> {
    if preds.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::NoQueries);
    }
    let universe: BTreeSet<&L> = labels.iter().collect();
    for set in preds.iter().chain(golds) {
        for label in set {
            if !universe.contains(label) {
                return Err(MetricsError::UnknownLabel(label.to_string()));
            }
        }
    }

    let mut report = EvalReport::default();
    let (mut tp_all, mut fp_all, mut fn_all) = (0usize, 0usize, 0usize);
    let (mut macro_p, mut macro_r, mut macro_f1) = (0.0, 0.0, 0.0);
    let mut macro_n = 0usize;
    for label in labels {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (pred, gold) in preds.iter().zip(golds) {
            match (pred.contains(label), gold.contains(label)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
        let (precision, recall, f1) = prf(tp, fp, fn_);
        if tp + fp + fn_ > 0 {
            macro_p += precision;
            macro_r += recall;
            macro_f1 += f1;
            macro_n += 1;
        }
        report.per_class.push(ClassReport {
            label: label.to_string(),
            precision,
            recall,
            f1,
            support: tp + fn_,
            predicted: tp + fp,
        });
    }

    let (micro_p, micro_r, micro_f1) = prf(tp_all, fp_all, fn_all);
    report.metrics.insert("micro_precision".into(), micro_p);
    report.metrics.insert("micro_recall".into(), micro_r);
    report.metrics.insert("micro_f1".into(), micro_f1);
    let macro_n = macro_n.max(1) as f64;
    report
        .metrics
        .insert("macro_precision".into(), macro_p / macro_n);
    report.metrics.insert("macro_recall".into(), macro_r / macro_n);
    report.metrics.insert("macro_f1".into(), macro_f1 / macro_n);

    let exact = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| p == g)
        .count() as f64
        / preds.len() as f64;
    report.metrics.insert("exact_match".into(), exact);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::Stage;
    use crate::rng::{seeded_rng, uniform_usize};

    fn code(s: &str) -> TermCode {
        s.parse().unwrap()
    }

    fn run_of(codes: &[&str]) -> RankedCandidates {
        RankedCandidates {
            query_id: "q".into(),
            stage: Stage::Retrieved,
            items: codes
                .iter()
                .enumerate()
                .map(|(i, c)| (code(c), 1.0 - 0.01 * i as f64))
                .collect(),
        }
    }

    fn judged(codes: &[&str]) -> RelevanceJudgment {
        RelevanceJudgment {
            query_id: "q".into(),
            relevant: codes.iter().map(|c| code(c)).collect(),
        }
    }

    #[test]
    fn perfect_ranking_scores_one_everywhere() {
        let runs = vec![(run_of(&["A0001"]), judged(&["A0001"]))];
        let report = ranking_metrics(&runs, &[1, 5, 10]).unwrap();
        for (name, value) in &report.metrics {
            assert!((value - 1.0).abs() < 1e-12, "{name} = {value}");
        }
    }

    #[test]
    fn single_relevant_at_rank_three() {
        let runs = vec![(
            run_of(&["B0001", "B0002", "A0001", "B0003"]),
            judged(&["A0001"]),
        )];
        let report = ranking_metrics(&runs, &[10]).unwrap();
        assert_eq!(report.get("mrr@10").unwrap(), 1.0 / 3.0);
        assert_eq!(report.get("ndcg@10").unwrap(), 1.0 / log2(4.0));
        assert_eq!(report.get("acc@10").unwrap(), 1.0);
        assert_eq!(report.get("map@10").unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn miss_scores_zero_and_k_truncates() {
        let runs = vec![(run_of(&["B0001", "B0002", "A0001"]), judged(&["A0001"]))];
        let report = ranking_metrics(&runs, &[2]).unwrap();
        for name in ["acc@2", "rec@2", "prec@2", "mrr@2", "ndcg@2", "map@2"] {
            assert_eq!(report.get(name).unwrap(), 0.0, "{name}");
        }
    }

    // Definitional oracle used by the permutation sweep: recompute every
    // metric from scratch with no shared code.
    fn oracle(ranking: &[bool], n_rel: usize, k: usize) -> [f64; 6] {
        let top = &ranking[..k.min(ranking.len())];
        let hits: Vec<usize> = top
            .iter()
            .enumerate()
            .filter(|(_, h)| **h)
            .map(|(i, _)| i + 1)
            .collect();
        let acc = f64::from(!hits.is_empty());
        let rec = hits.len() as f64 / n_rel as f64;
        let prec = hits.len() as f64 / k as f64;
        let mrr = hits.first().map_or(0.0, |r| 1.0 / *r as f64);
        let dcg: f64 = hits.iter().map(|r| 1.0 / ((r + 1) as f64).log2()).sum();
        let idcg: f64 = (1..=n_rel.min(k)).map(|r| 1.0 / ((r + 1) as f64).log2()).sum();
        let mut ap = 0.0;
        for (seen, rank) in hits.iter().enumerate() {
            ap += (seen + 1) as f64 / *rank as f64;
        }
        let map = ap / n_rel.min(k) as f64;
        [acc, rec, prec, mrr, dcg / idcg, map]
    }

    #[test]
    fn all_rankings_of_five_match_oracle() {
        // 5 candidates, relevant = {A0001, A0002}; iterate all 120 orders.
        let codes = ["A0001", "A0002", "B0001", "B0002", "B0003"];
        let mut perm = [0usize, 1, 2, 3, 4];
        let mut orders = Vec::new();
        permutations(&mut perm, 0, &mut orders);
        assert_eq!(orders.len(), 120);
        for order in orders {
            let ranked: Vec<&str> = order.iter().map(|&i| codes[i]).collect();
            let rel_mask: Vec<bool> = order.iter().map(|&i| i < 2).collect();
            let runs = vec![(run_of(&ranked), judged(&["A0001", "A0002"]))];
            for k in [1, 2, 3, 5] {
                let report = ranking_metrics(&runs, &[k]).unwrap();
                let expected = oracle(&rel_mask, 2, k);
                for (name, want) in ["acc", "rec", "prec", "mrr", "ndcg", "map"]
                    .iter()
                    .zip(expected)
                {
                    let got = report.get(&format!("{name}@{k}")).unwrap();
                    assert!(
                        (got - want).abs() < 1e-9,
                        "{name}@{k} on {ranked:?}: {got} vs {want}"
                    );
                }
            }
        }
    }

    fn permutations(items: &mut [usize; 5], at: usize, out: &mut Vec<[usize; 5]>) {
        if at == items.len() {
            out.push(*items);
            return;
        }
        for i in at..items.len() {
            items.swap(at, i);
            permutations(items, at + 1, out);
            items.swap(at, i);
        }
    }

    #[test]
    fn monotone_in_k_and_bounded() {
        let mut rng = seeded_rng(7, "runs");
        for _ in 0..50 {
            let n = 3 + uniform_usize(&mut rng, 8);
            let codes: Vec<TermCode> = (0..n).map(crate::taxonomy::tests::test_code_for).collect();
            let mut order: Vec<usize> = (0..n).collect();
            crate::rng::shuffle(&mut rng, &mut order);
            let run = RankedCandidates {
                query_id: "q".into(),
                stage: Stage::Retrieved,
                items: order.iter().map(|&i| (codes[i].clone(), -(i as f64))).collect(),
            };
            let relevant: BTreeSet<TermCode> = (0..1 + uniform_usize(&mut rng, n))
                .map(|i| codes[i].clone())
                .collect();
            let runs = vec![(
                run,
                RelevanceJudgment {
                    query_id: "q".into(),
                    relevant,
                },
            )];
            let ks: Vec<usize> = (1..=n).collect();
            let report = ranking_metrics(&runs, &ks).unwrap();
            let series = |prefix: &str| -> Vec<f64> {
                ks.iter()
                    .map(|k| report.get(&format!("{prefix}@{k}")).unwrap())
                    .collect()
            };
            for prefix in ["acc", "rec"] {
                let values = series(prefix);
                assert!(values.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{prefix}");
            }
            for k in &ks {
                let acc = report.get(&format!("acc@{k}")).unwrap();
                assert!(report.get(&format!("prec@{k}")).unwrap() <= acc + 1e-12);
                assert!(report.get(&format!("mrr@{k}")).unwrap() <= acc + 1e-12);
                for prefix in ["acc", "rec", "prec", "mrr", "ndcg", "map"] {
                    let v = report.get(&format!("{prefix}@{k}")).unwrap();
                    assert!((0.0..=1.0 + 1e-12).contains(&v));
                }
            }
        }
    }

    #[test]
    fn ranking_input_validation() {
        assert!(matches!(ranking_metrics(&[], &[1]), Err(MetricsError::NoQueries)));
        let runs = vec![(run_of(&["A0001"]), judged(&["A0001"]))];
        assert!(matches!(
            ranking_metrics(&runs, &[]),
            Err(MetricsError::BadKs)
        ));
        assert!(matches!(
            ranking_metrics(&runs, &[0]),
            Err(MetricsError::BadKs)
        ));
        let empty_rel = vec![(run_of(&["A0001"]), judged(&[]))];
        assert!(matches!(
            ranking_metrics(&empty_rel, &[1]),
            Err(MetricsError::EmptyRelevantSet(_))
        ));
        let empty_run = vec![(
            RankedCandidates {
                query_id: "q".into(),
                stage: Stage::Retrieved,
                items: vec![],
            },
            judged(&["A0001"]),
        )];
        assert!(matches!(
            ranking_metrics(&empty_run, &[1]),
            Err(MetricsError::EmptyRanking(_))
        ));
    }

    fn set(labels: &[&str]) -> BTreeSet<String> {
        labels.iter().map(|s| (*s).to_owned()).collect()
    }

    #[test]
    fn perfect_classification() {
        let labels: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let golds = vec![set(&["a", "b"]), set(&["c"]), set(&[])];
        let report = classification_metrics(&golds, &golds, &labels).unwrap();
        assert_eq!(report.get("micro_f1").unwrap(), 1.0);
        assert_eq!(report.get("macro_f1").unwrap(), 1.0);
        assert_eq!(report.get("exact_match").unwrap(), 1.0);
    }

    #[test]
    fn all_empty_predictions() {
        let labels: Vec<String> = vec!["a".into(), "b".into()];
        let preds = vec![set(&[]), set(&[])];
        let golds = vec![set(&["a"]), set(&["b"])];
        let report = classification_metrics(&preds, &golds, &labels).unwrap();
        assert_eq!(report.get("micro_recall").unwrap(), 0.0);
        assert_eq!(report.get("exact_match").unwrap(), 0.0);
    }

    #[test]
    fn hand_counted_example() {
        // gold:  {a,b}   {b}     {}      pred: {a}  {b,c}  {c}
        // per label: a tp1 fp0 fn0 | b tp1 fp0 fn1 | c tp0 fp2 fn0
        let labels: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let preds = vec![set(&["a"]), set(&["b", "c"]), set(&["c"])];
        let golds = vec![set(&["a", "b"]), set(&["b"]), set(&[])];
        let report = classification_metrics(&preds, &golds, &labels).unwrap();
        assert_eq!(report.get("micro_precision").unwrap(), 2.0 / 4.0);
        assert_eq!(report.get("micro_recall").unwrap(), 2.0 / 3.0);
        let a = &report.per_class[0];
        assert_eq!((a.precision, a.recall, a.support), (1.0, 1.0, 1));
        let b = &report.per_class[1];
        assert_eq!((b.precision, b.recall, b.support), (1.0, 0.5, 2));
        let c = &report.per_class[2];
        assert_eq!((c.precision, c.recall, c.support, c.predicted), (0.0, 0.0, 0, 2));
        // Macro includes c (predicted despite zero support) with F1 = 0.
        let expected_macro = (1.0 + 2.0 / 3.0 + 0.0) / 3.0;
        assert!((report.get("macro_f1").unwrap() - expected_macro).abs() < 1e-12);
        assert_eq!(report.get("exact_match").unwrap(), 0.0);
    }

    #[test]
    fn silent_labels_excluded_from_macro() {
        let labels: Vec<String> = vec!["a".into(), "ghost".into()];
        let preds = vec![set(&["a"])];
        let golds = vec![set(&["a"])];
        let report = classification_metrics(&preds, &golds, &labels).unwrap();
        assert_eq!(report.get("macro_f1").unwrap(), 1.0);
        assert_eq!(report.per_class[1].support, 0);
    }

    #[test]
    fn micro_f1_is_harmonic_mean_and_em_bounded_by_recall() {
        let mut rng = seeded_rng(11, "cls");
        let labels: Vec<String> = (0..6).map(|i| format!("l{i}")).collect();
        for _ in 0..200 {
            let n = 1 + uniform_usize(&mut rng, 10);
            let draw = |rng: &mut _| -> BTreeSet<String> {
                labels
                    .iter()
                    .filter(|_| uniform_usize(rng, 2) == 1)
                    .cloned()
                    .collect()
            };
            let preds: Vec<_> = (0..n).map(|_| draw(&mut rng)).collect();
            // Non-empty golds so EM <= micro-recall applies.
            let golds: Vec<_> = (0..n)
                .map(|_| {
                    let mut g = draw(&mut rng);
                    if g.is_empty() {
                        g.insert(labels[0].clone());
                    }
                    g
                })
                .collect();
            let report = classification_metrics(&preds, &golds, &labels).unwrap();
            let p = report.get("micro_precision").unwrap();
            let r = report.get("micro_recall").unwrap();
            let f1 = report.get("micro_f1").unwrap();
            let harmonic = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            assert!((f1 - harmonic).abs() < 1e-12);
            assert!(report.get("exact_match").unwrap() <= r + 1e-12);
        }
    }

    #[test]
    fn classification_input_validation() {
        let labels: Vec<String> = vec!["a".into()];
        assert!(matches!(
            classification_metrics(&[set(&["a"])], &[], &labels),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            classification_metrics::<String>(&[], &[], &labels),
            Err(MetricsError::NoQueries)
        ));
        assert!(matches!(
            classification_metrics(&[set(&["zz"])], &[set(&["a"])], &labels),
            Err(MetricsError::UnknownLabel(_))
        ));
    }

    #[test]
    fn tables_and_records_render() {
        let labels: Vec<String> = vec!["a".into(), "b".into()];
        let preds = vec![set(&["a"]), set(&["b"])];
        let golds = vec![set(&["a"]), set(&["a", "b"])];
        let report = classification_metrics(&preds, &golds, &labels).unwrap();
        let table = report.render_table();
        assert!(table.contains("micro_f1"));
        assert!(table.contains("label"));
        let records = report.render_records();
        assert!(records.lines().any(|l| l.starts_with("metric\tmicro_f1\t")));
        assert!(records.lines().any(|l| l.starts_with("class\ta\t")));
    }
}
