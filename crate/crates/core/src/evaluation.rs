//! Label-quality metrics (macro precision/recall/F1, micro accuracy) and
//! predicate-classification recall@K.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::dataset::Vocab;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PredicateMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_predicate: Vec<PredicateMetrics>,
    pub macro_avg: MacroMetrics,
    /// Micro accuracy over non-abstained predictions.
    pub accuracy: f64,
    pub evaluated: usize,
    pub abstained: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// One-vs-rest precision/recall/F1 per predicate over pairs present in both
/// lists. Abstentions (`None`) are excluded from precision and accuracy but
/// count as misses for recall.
pub fn macro_prf1(
    predicted: &[(String, Option<usize>)],
    gold: &[(String, usize)],
    num_predicates: usize,
) -> Result<EvalReport> {
    let gold_map: HashMap<&str, usize> = gold.iter().map(|(id, g)| (id.as_str(), *g)).collect();
    let mut tp = vec![0usize; num_predicates];
    let mut fp = vec![0usize; num_predicates];
    let mut support = vec![0usize; num_predicates];
    let (mut evaluated, mut abstained, mut correct) = (0usize, 0usize, 0usize);
    for (id, pred) in predicted {
        let Some(&g) = gold_map.get(id.as_str()) else {
            continue;
        };
        if g >= num_predicates || pred.is_some_and(|q| q >= num_predicates) {
            return Err(Error::Validation(format!(
                "predicate index out of range for pair {id}"
            )));
        }
        evaluated += 1;
        support[g] += 1;
        match *pred {
            None => abstained += 1,
            Some(q) if q == g => {
                tp[q] += 1;
                correct += 1;
            }
            Some(q) => fp[q] += 1,
        }
    }
    if evaluated == 0 {
        return Err(Error::EmptyInput(
            "no pair ids shared by predictions and gold".into(),
        ));
    }
    let per_predicate: Vec<PredicateMetrics> = (0..num_predicates)
        .map(|p| {
            let precision = ratio(tp[p], tp[p] + fp[p]);
            let recall = ratio(tp[p], support[p]);
            PredicateMetrics {
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: support[p],
            }
        })
        .collect();
    let present: Vec<&PredicateMetrics> = per_predicate.iter().filter(|m| m.support > 0).collect();
    let mean = |f: fn(&PredicateMetrics) -> f64| {
        present.iter().map(|m| f(m)).sum::<f64>() / present.len() as f64
    };
    let macro_avg = MacroMetrics {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
    };
    Ok(EvalReport {
        per_predicate,
        macro_avg,
        accuracy: ratio(correct, evaluated - abstained),
        evaluated,
        abstained,
    })
}

impl EvalReport {
    pub fn to_json(&self, predicates: &Vocab) -> Value {
        let mut per = Map::new();
        for (p, m) in self.per_predicate.iter().enumerate() {
            per.insert(
                predicates.name(p).unwrap_or("?").to_string(),
                serde_json::to_value(m).unwrap_or(Value::Null),
            );
        }
        let mut out = Map::new();
        out.insert("per_predicate".into(), Value::Object(per));
        out.insert(
            "macro".into(),
            serde_json::to_value(self.macro_avg).unwrap_or(Value::Null),
        );
        out.insert("accuracy_micro".into(), Value::from(self.accuracy));
        out.insert("evaluated".into(), Value::from(self.evaluated));
        out.insert("abstained".into(), Value::from(self.abstained));
        Value::Object(out)
    }
}

/// Plain-text table with one row per method: Prec., Recall, F1, Acc.
/// (percentages; accuracy is micro).
pub fn format_table(rows: &[(String, &EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}",
        "Model", "Prec.", "Recall", "F1", "Acc."
    );
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{:<width$}  {:>7.2}  {:>7.2}  {:>7.2}  {:>7.2}",
            name,
            100.0 * r.macro_avg.precision,
            100.0 * r.macro_avg.recall,
            100.0 * r.macro_avg.f1,
            100.0 * r.accuracy
        );
    }
    s.push_str("(macro Prec./Recall/F1; micro Acc. over non-abstained pairs)\n");
    s
}

/// Candidates and gold relationships of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageScores {
    /// `(pair_id, per-predicate scores)` in pair order.
    pub candidates: Vec<(String, Vec<f64>)>,
    /// `(pair_id, predicate)` gold relationships.
    pub gold: Vec<(String, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecallReport {
    pub k_values: Vec<usize>,
    pub recall_at_k: Vec<f64>,
    pub total_gold: usize,
}

impl RecallReport {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.k_values
            .iter()
            .position(|&x| x == k)
            .map(|i| self.recall_at_k[i])
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        for (k, r) in self.k_values.iter().zip(&self.recall_at_k) {
            m.insert(format!("R@{k}"), Value::from(*r));
        }
        m.insert("total_gold".into(), Value::from(self.total_gold));
        Value::Object(m)
    }
}

/// Per image, ranks every `(pair, predicate)` by descending score (ties by
/// pair order, then predicate index) and counts gold relationships inside
/// the top `K`; recall@K pools the hits over all images.
pub fn predcls_recall_at_k(images: &[ImageScores], k_values: &[usize]) -> Result<RecallReport> {
    let mut hits = vec![0usize; k_values.len()];
    let mut total = 0usize;
    for im in images {
        let pos: HashMap<&str, usize> = im
            .candidates
            .iter()
            .enumerate()
            .map(|(i, (id, _))| (id.as_str(), i))
            .collect();
        let mut ranked: Vec<(f64, usize, usize)> = im
            .candidates
            .iter()
            .enumerate()
            .flat_map(|(i, (_, s))| s.iter().enumerate().map(move |(p, &v)| (v, i, p)))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let rank: HashMap<(usize, usize), usize> = ranked
            .iter()
            .enumerate()
            .map(|(r, &(_, i, p))| ((i, p), r))
            .collect();
        for (id, p) in &im.gold {
            let &i = pos
                .get(id.as_str())
                .ok_or_else(|| Error::Validation(format!("no score row for gold pair {id}")))?;
            let r = *rank.get(&(i, *p)).ok_or_else(|| {
                Error::Validation(format!("no score for predicate {p} of pair {id}"))
            })?;
            total += 1;
            for (h, &k) in hits.iter_mut().zip(k_values) {
                if r < k {
                    *h += 1;
                }
            }
        }
    }
    Ok(RecallReport {
        k_values: k_values.to_vec(),
        recall_at_k: hits.iter().map(|&h| ratio(h, total)).collect(),
        total_gold: total,
    })
}
