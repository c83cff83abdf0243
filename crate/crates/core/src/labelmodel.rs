//! Generative label model over heuristic votes.
//!
//! For a vote column `λ ∈ {-1, 0, +1}^J` and latent class `y ∈ {-1, +1}` the
//! model is `π(λ, y) = exp(y · φᵀλ) / Z(φ)`. Summing over `y` gives the
//! observed-vote likelihood `2 cosh(φᵀλ) / Z(φ)`, and because the exponent
//! factorizes over heuristics, `Z(φ) = 2 ∏_j (1 + 2 cosh φ_j)`.
//!
//! The family has no class-prior term, so a column of abstains always has
//! posterior 0.5.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dataset::Vocab;
use crate::error::{Error, Result};
use crate::heuristics::LabelMatrix;
use crate::scalar::{log_two_cosh, sigmoid, Scalar};

/// `log(1 + 2 cosh φ)` without overflow.
fn log_one_plus_two_cosh<T: Scalar>(phi: T) -> T {
    let a = phi.abs();
    let e1 = (-a).exp();
    a + (e1 + T::one() + e1 * e1).ln()
}

/// `d/dφ log(1 + 2 cosh φ) = 2 sinh φ / (1 + 2 cosh φ)`.
fn dlog_one_plus_two_cosh<T: Scalar>(phi: T) -> T {
    let a = phi.abs();
    let e1 = (-a).exp();
    let e2 = e1 * e1;
    let v = (T::one() - e2) / (e1 + T::one() + e2);
    if phi < T::zero() {
        -v
    } else {
        v
    }
}

fn score<T: Scalar>(phi: &[T], column: &[i8]) -> T {
    phi.iter()
        .zip(column)
        .fold(T::zero(), |acc, (&p, &v)| match v {
            1 => acc + p,
            -1 => acc - p,
            _ => acc,
        })
}

/// `log Z(φ)` over all `(λ, y) ∈ {-1,0,1}^J × {-1,1}`.
pub fn log_partition<T: Scalar>(phi: &[T]) -> T {
    T::lit(2.0).ln() + phi.iter().map(|&p| log_one_plus_two_cosh(p)).sum::<T>()
}

/// Distinct vote columns with multiplicities, in lexicographic order, so
/// that column order never affects summation order.
#[derive(Clone, Debug, PartialEq)]
pub struct VotePatterns {
    pub rows: usize,
    pub total: usize,
    pub patterns: Vec<(Vec<i8>, usize)>,
}

impl VotePatterns {
    pub fn from_matrix(lm: &LabelMatrix) -> Self {
        let mut map: BTreeMap<Vec<i8>, usize> = BTreeMap::new();
        for c in lm.columns() {
            *map.entry(c).or_default() += 1;
        }
        VotePatterns {
            rows: lm.rows,
            total: lm.cols,
            patterns: map.into_iter().collect(),
        }
    }

    pub fn log_likelihood<T: Scalar>(&self, phi: &[T]) -> T {
        let per_col: T = self
            .patterns
            .iter()
            .map(|(c, n)| T::from_count(*n) * log_two_cosh(score(phi, c)))
            .sum();
        per_col - T::from_count(self.total) * log_partition(phi)
    }

    pub fn gradient<T: Scalar>(&self, phi: &[T]) -> Vec<T> {
        let mut g = vec![T::zero(); phi.len()];
        for (c, n) in &self.patterns {
            let t = score(phi, c).tanh() * T::from_count(*n);
            for (gj, &v) in g.iter_mut().zip(c) {
                match v {
                    1 => *gj = *gj + t,
                    -1 => *gj = *gj - t,
                    _ => {}
                }
            }
        }
        let n = T::from_count(self.total);
        for (gj, &p) in g.iter_mut().zip(phi) {
            *gj = *gj - n * dlog_one_plus_two_cosh(p);
        }
        g
    }
}

fn check_dims<T>(phi: &[T], lm: &LabelMatrix) -> Result<()> {
    if phi.len() != lm.rows {
        return Err(Error::DimensionMismatch {
            expected: lm.rows,
            found: phi.len(),
        });
    }
    Ok(())
}

/// `Σ_i log(2 cosh(φᵀΛ_i)) − N log Z(φ)`.
pub fn marginal_log_likelihood<T: Scalar>(phi: &[T], lm: &LabelMatrix) -> Result<T> {
    check_dims(phi, lm)?;
    Ok(VotePatterns::from_matrix(lm).log_likelihood(phi))
}

pub fn mll_gradient<T: Scalar>(phi: &[T], lm: &LabelMatrix) -> Result<Vec<T>> {
    check_dims(phi, lm)?;
    Ok(VotePatterns::from_matrix(lm).gradient(phi))
}

/// `P(y = +1 | λ) = σ(2 φᵀλ)`.
pub fn posterior<T: Scalar>(phi: &[T], column: &[i8]) -> T {
    sigmoid(T::lit(2.0) * score(phi, column))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelModelConfig {
    pub init: f64,
    pub step: f64,
    pub epochs: usize,
    pub l2: f64,
    /// Recorded for provenance; training is deterministic and draws nothing.
    pub seed: u64,
    pub max_halvings: usize,
}

impl Default for LabelModelConfig {
    fn default() -> Self {
        LabelModelConfig {
            init: 0.5,
            step: 0.1,
            epochs: 500,
            l2: 1e-3,
            seed: 0,
            max_halvings: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelModelParams<T = f64> {
    pub predicate: usize,
    pub phi: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedLabelModel<T = f64> {
    pub params: LabelModelParams<T>,
    /// Regularized per-column objective after each epoch.
    pub trace: Vec<T>,
}

/// Regularized training objective: mean marginal log-likelihood per column
/// minus `(l2 / 2) ‖φ‖²`.
pub fn training_objective<T: Scalar>(pat: &VotePatterns, phi: &[T], l2: T) -> T {
    let n = T::from_count(pat.total.max(1));
    let sq: T = phi.iter().map(|&p| p * p).sum();
    pat.log_likelihood(phi) / n - l2 / T::lit(2.0) * sq
}

/// Full-batch gradient ascent with step halving on objective decrease.
pub fn train_label_model<T: Scalar>(
    lm: &LabelMatrix,
    cfg: &LabelModelConfig,
) -> Result<TrainedLabelModel<T>> {
    if lm.cols == 0 {
        return Err(Error::EmptyInput("label matrix has no columns".into()));
    }
    let pat = VotePatterns::from_matrix(lm);
    let l2 = T::lit(cfg.l2);
    let n = T::from_count(pat.total);
    let mut phi = vec![T::lit(cfg.init); lm.rows];
    let mut obj = training_objective(&pat, &phi, l2);
    if !obj.is_finite() {
        return Err(Error::NonFiniteObjective { epoch: 0 });
    }
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let grad: Vec<T> = pat
            .gradient(&phi)
            .into_iter()
            .zip(&phi)
            .map(|(g, &p)| g / n - l2 * p)
            .collect();
        if grad.iter().all(|g| g.is_zero()) {
            trace.push(obj);
            continue;
        }
        let mut step = T::lit(cfg.step);
        for _ in 0..=cfg.max_halvings {
            let cand: Vec<T> = phi.iter().zip(&grad).map(|(&p, &g)| p + step * g).collect();
            let c = training_objective(&pat, &cand, l2);
            if c.is_finite() && c >= obj {
                phi = cand;
                obj = c;
                break;
            }
            step = step / T::lit(2.0);
        }
        if !obj.is_finite() {
            return Err(Error::NonFiniteObjective { epoch });
        }
        trace.push(obj);
    }
    Ok(TrainedLabelModel {
        params: LabelModelParams {
            predicate: lm.predicate,
            phi,
        },
        trace,
    })
}

/// Per-pair distribution over predicates plus an abstain mass.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilisticLabel {
    pub pair_id: String,
    pub distribution: Vec<f64>,
    pub abstain_mass: f64,
}

impl ProbabilisticLabel {
    pub fn is_abstain(&self) -> bool {
        self.abstain_mass >= 1.0
    }

    /// Most probable predicate (lowest index on ties), `None` when abstained.
    pub fn argmax(&self) -> Option<usize> {
        if self.is_abstain() || self.distribution.is_empty() {
            return None;
        }
        let mut best = 0;
        for (i, &v) in self.distribution.iter().enumerate() {
            if v > self.distribution[best] {
                best = i;
            }
        }
        Some(best)
    }

    /// One-hot label of a ground-truth predicate.
    pub fn one_hot(pair_id: String, predicate: usize, num_predicates: usize) -> Self {
        let mut distribution = vec![0.0; num_predicates];
        distribution[predicate] = 1.0;
        ProbabilisticLabel {
            pair_id,
            distribution,
            abstain_mass: 0.0,
        }
    }
}

/// Combines independent one-vs-rest scores: a pair whose best score is
/// below `tau` abstains, otherwise scores are normalized to sum to one.
/// `scores[p][i]` is the score of predicate `p` on pair `i`.
pub fn aggregate_scores(
    pair_ids: &[String],
    scores: &[Vec<f64>],
    tau: f64,
) -> Vec<ProbabilisticLabel> {
    let np = scores.len();
    pair_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let s: Vec<f64> = scores.iter().map(|row| row[i]).collect();
            let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = s.iter().sum();
            if np == 0 || max < tau || total <= 0.0 {
                ProbabilisticLabel {
                    pair_id: id.clone(),
                    distribution: vec![0.0; np],
                    abstain_mass: 1.0,
                }
            } else {
                ProbabilisticLabel {
                    pair_id: id.clone(),
                    distribution: s.iter().map(|v| v / total).collect(),
                    abstain_mass: 0.0,
                }
            }
        })
        .collect()
}

fn check_aligned(matrices: &[LabelMatrix]) -> Result<()> {
    if let Some(first) = matrices.first() {
        for m in &matrices[1..] {
            if m.pair_ids != first.pair_ids {
                return Err(Error::Validation(format!(
                    "label matrix for predicate {} has different pair ids than predicate {}",
                    m.predicate, first.predicate
                )));
            }
        }
    }
    Ok(())
}

pub fn aggregate_labels(
    models: &[LabelModelParams],
    matrices: &[LabelMatrix],
    tau: f64,
) -> Result<Vec<ProbabilisticLabel>> {
    if models.len() != matrices.len() {
        return Err(Error::DimensionMismatch {
            expected: matrices.len(),
            found: models.len(),
        });
    }
    check_aligned(matrices)?;
    let mut scores = Vec::with_capacity(models.len());
    for (m, lm) in models.iter().zip(matrices) {
        if m.predicate != lm.predicate {
            return Err(Error::Validation(format!(
                "model for predicate {} paired with matrix for predicate {}",
                m.predicate, lm.predicate
            )));
        }
        check_dims(&m.phi, lm)?;
        scores.push(lm.columns().map(|c| posterior(&m.phi, &c)).collect());
    }
    let ids = matrices
        .first()
        .map(|m| m.pair_ids.clone())
        .unwrap_or_default();
    Ok(aggregate_scores(&ids, &scores, tau))
}

/// Fraction of non-abstaining votes that are positive; 0.5 without votes.
pub fn majority_vote(lm: &LabelMatrix) -> Vec<f64> {
    lm.columns()
        .map(|c| {
            let pos = c.iter().filter(|&&v| v == 1).count();
            let voted = c.iter().filter(|&&v| v != 0).count();
            if voted == 0 {
                0.5
            } else {
                pos as f64 / voted as f64
            }
        })
        .collect()
}

pub fn aggregate_majority(matrices: &[LabelMatrix], tau: f64) -> Result<Vec<ProbabilisticLabel>> {
    check_aligned(matrices)?;
    let scores: Vec<Vec<f64>> = matrices.iter().map(majority_vote).collect();
    let ids = matrices
        .first()
        .map(|m| m.pair_ids.clone())
        .unwrap_or_default();
    Ok(aggregate_scores(&ids, &scores, tau))
}

/// One JSON line: `{"pair_id": .., "dist": {name: p, ..}, "abstain": a}`.
/// Predicates appear in vocabulary order.
pub fn label_to_json(label: &ProbabilisticLabel, predicates: &Vocab) -> Value {
    let mut dist = Map::new();
    for (p, &v) in label.distribution.iter().enumerate() {
        dist.insert(
            predicates.name(p).unwrap_or("?").to_string(),
            Value::from(v),
        );
    }
    let mut line = Map::new();
    line.insert("pair_id".into(), Value::from(label.pair_id.clone()));
    line.insert("dist".into(), Value::Object(dist));
    line.insert("abstain".into(), Value::from(label.abstain_mass));
    Value::Object(line)
}

pub fn write_labels_jsonl<W: Write>(
    mut out: W,
    labels: &[ProbabilisticLabel],
    predicates: &Vocab,
) -> Result<()> {
    for l in labels {
        serde_json::to_writer(&mut out, &label_to_json(l, predicates))?;
        out.write_all(b"\n").map_err(|e| Error::io("<labels>", e))?;
    }
    Ok(())
}

pub fn read_labels_jsonl<R: BufRead>(
    input: R,
    predicates: &Vocab,
) -> Result<Vec<ProbabilisticLabel>> {
    let mut out = Vec::new();
    for (ln, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<labels>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::Parse {
            record: format!("labels line {}", ln + 1),
            message: m,
        };
        let v: Value = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let pair_id = v
            .get("pair_id")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("missing pair_id".into()))?
            .to_string();
        let abstain_mass = v
            .get("abstain")
            .and_then(Value::as_f64)
            .ok_or_else(|| bad("missing abstain".into()))?;
        let dist = v
            .get("dist")
            .and_then(Value::as_object)
            .ok_or_else(|| bad("missing dist".into()))?;
        let mut distribution = vec![0.0; predicates.len()];
        for (name, p) in dist {
            let idx = predicates
                .id(name)
                .ok_or_else(|| bad(format!("unknown predicate {name:?}")))?;
            distribution[idx] = p
                .as_f64()
                .ok_or_else(|| bad(format!("non-numeric mass for {name:?}")))?;
        }
        out.push(ProbabilisticLabel {
            pair_id,
            distribution,
            abstain_mass,
        });
    }
    Ok(out)
}

/// `{predicate name: [φ_1, ..]}` in vocabulary order.
pub fn phi_to_json(models: &[LabelModelParams], predicates: &Vocab) -> Value {
    let mut m = Map::new();
    for p in models {
        m.insert(
            predicates.name(p.predicate).unwrap_or("?").to_string(),
            Value::from(p.phi.clone()),
        );
    }
    Value::Object(m)
}
