//! Linear one-vs-rest predicate classifier trained with the expected
//! logistic loss under probabilistic labels.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dataset::Vocab;
use crate::error::{Error, Result};
use crate::features::{Standardizer, NUM_SPATIAL};
use crate::labelmodel::ProbabilisticLabel;
use crate::rng::substream;
use crate::scalar::{sigmoid, softplus, Scalar};

/// `θᵀ[v; 1]`, the bias being the last weight.
#[inline]
pub fn logit<T: Scalar>(theta: &[T], v: &[T]) -> T {
    let (w, b) = theta.split_at(v.len());
    w.iter().zip(v).fold(b[0], |acc, (&a, &x)| acc + a * x)
}

/// `p·log(1 + e^{-z}) + (1 − p)·log(1 + e^{z})` with `z = θᵀ[v; 1]`.
pub fn noise_aware_loss<T: Scalar>(theta: &[T], v: &[T], p_pos: T) -> T {
    let z = logit(theta, v);
    p_pos * softplus(-z) + (T::one() - p_pos) * softplus(z)
}

/// Gradient of [`noise_aware_loss`] in `θ`: `(σ(z) − p)·[v; 1]`.
pub fn noise_aware_gradient<T: Scalar>(theta: &[T], v: &[T], p_pos: T) -> Vec<T> {
    let r = sigmoid(logit(theta, v)) - p_pos;
    v.iter().map(|&x| r * x).chain(std::iter::once(r)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Batch {
    Full,
    Size(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub step: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    pub batch: Batch,
    pub max_halvings: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            step: 0.5,
            epochs: 300,
            l2: 1e-4,
            seed: 0,
            batch: Batch::Full,
            max_halvings: 20,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || self.epochs == 0 {
            return Err(Error::Config(
                "classifier step must be > 0 and epochs >= 1".into(),
            ));
        }
        if matches!(self.batch, Batch::Size(0)) {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Mean noise-aware loss plus `(l2 / 2) ‖θ‖²`.
pub fn head_objective<T: Scalar>(theta: &[T], x: &[Vec<T>], p: &[T], l2: T) -> T {
    let n = T::from_count(x.len().max(1));
    let loss: T = x
        .iter()
        .zip(p)
        .map(|(v, &q)| noise_aware_loss(theta, v, q))
        .sum();
    let sq: T = theta.iter().map(|&t| t * t).sum();
    loss / n + l2 / T::lit(2.0) * sq
}

fn head_gradient<T: Scalar>(theta: &[T], x: &[Vec<T>], p: &[T], idx: &[usize], l2: T) -> Vec<T> {
    let mut g = vec![T::zero(); theta.len()];
    for &i in idx {
        let r = sigmoid(logit(theta, &x[i])) - p[i];
        for (gj, &xj) in g.iter_mut().zip(&x[i]) {
            *gj = *gj + r * xj;
        }
        let last = g.len() - 1;
        g[last] = g[last] + r;
    }
    let n = T::from_count(idx.len().max(1));
    g.iter_mut()
        .zip(theta)
        .for_each(|(gj, &t)| *gj = *gj / n + l2 * t);
    g
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadFit<T = f64> {
    pub theta: Vec<T>,
    /// Full objective after each epoch; non-increasing.
    pub trace: Vec<T>,
}

/// Minimizes [`head_objective`] from `init` by gradient descent, halving the
/// step whenever an update would increase the objective.
pub fn fit_head<T: Scalar>(
    x: &[Vec<T>],
    p: &[T],
    cfg: &TrainConfig,
    init: Vec<T>,
    stream: u64,
) -> Result<HeadFit<T>> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(Error::EmptyInput("classifier training set".into()));
    }
    let dim = x[0].len();
    if init.len() != dim + 1 {
        return Err(Error::DimensionMismatch {
            expected: dim + 1,
            found: init.len(),
        });
    }
    let l2 = T::lit(cfg.l2);
    let mut theta = init;
    let mut obj = head_objective(&theta, x, p, l2);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let all: Vec<usize> = (0..x.len()).collect();
    let mut step = T::lit(cfg.step);
    for epoch in 0..cfg.epochs {
        match cfg.batch {
            Batch::Full => {
                let g = head_gradient(&theta, x, p, &all, l2);
                let mut s = T::lit(cfg.step);
                for _ in 0..=cfg.max_halvings {
                    let cand: Vec<T> = theta.iter().zip(&g).map(|(&t, &gj)| t - s * gj).collect();
                    let c = head_objective(&cand, x, p, l2);
                    if c.is_finite() && c <= obj {
                        theta = cand;
                        obj = c;
                        break;
                    }
                    s = s / T::lit(2.0);
                }
            }
            Batch::Size(b) => {
                let mut order = all.clone();
                order.shuffle(&mut substream(
                    cfg.seed,
                    "classifier/batches",
                    stream ^ ((epoch as u64) << 20),
                ));
                let start = theta.clone();
                for chunk in order.chunks(b) {
                    let g = head_gradient(&theta, x, p, chunk, l2);
                    theta
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(t, &gj)| *t = *t - step * gj);
                }
                let c = head_objective(&theta, x, p, l2);
                if c.is_finite() && c <= obj {
                    obj = c;
                } else {
                    theta = start;
                    step = step / T::lit(2.0);
                }
            }
        }
        if !obj.is_finite() {
            return Err(Error::NonFiniteObjective { epoch });
        }
        trace.push(obj);
    }
    Ok(HeadFit { theta, trace })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    /// `weights[p]` has the feature dimension plus a trailing bias.
    pub weights: Vec<Vec<f64>>,
    /// Applied to raw feature vectors before the linear heads.
    pub standardizer: Standardizer,
}

impl ClassifierParams {
    pub fn zeros(num_predicates: usize, dim: usize) -> Self {
        ClassifierParams {
            weights: vec![vec![0.0; dim + 1]; num_predicates],
            standardizer: Standardizer::identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.standardizer.mean.len()
    }

    pub fn to_json(&self, predicates: &Vocab) -> Value {
        let mut w = Map::new();
        for (p, th) in self.weights.iter().enumerate() {
            w.insert(
                predicates.name(p).unwrap_or("?").to_string(),
                Value::from(th.clone()),
            );
        }
        let mut m = Map::new();
        m.insert("weights".into(), Value::Object(w));
        m.insert(
            "standardizer".into(),
            serde_json::to_value(&self.standardizer).unwrap_or(Value::Null),
        );
        Value::Object(m)
    }

    /// Inverse of [`ClassifierParams::to_json`].
    pub fn from_json(v: &Value, predicates: &Vocab) -> Result<Self> {
        let bad = |m: String| Error::Parse {
            record: "classifier".into(),
            message: m,
        };
        let w = v
            .get("weights")
            .and_then(Value::as_object)
            .ok_or_else(|| bad("missing weights".into()))?;
        let standardizer: Standardizer = v
            .get("standardizer")
            .cloned()
            .ok_or_else(|| bad("missing standardizer".into()))
            .and_then(|s| serde_json::from_value(s).map_err(|e| bad(e.to_string())))?;
        let dim = standardizer.mean.len();
        let mut weights = vec![Vec::new(); predicates.len()];
        for (name, th) in w {
            let p = predicates
                .id(name)
                .ok_or_else(|| bad(format!("unknown predicate {name:?}")))?;
            let th: Vec<f64> =
                serde_json::from_value(th.clone()).map_err(|e| bad(e.to_string()))?;
            if th.len() != dim + 1 {
                return Err(Error::DimensionMismatch {
                    expected: dim + 1,
                    found: th.len(),
                });
            }
            weights[p] = th;
        }
        if let Some(p) = weights.iter().position(Vec::is_empty) {
            return Err(bad(format!(
                "no weights for {:?}",
                predicates.name(p).unwrap_or("?")
            )));
        }
        Ok(ClassifierParams {
            weights,
            standardizer,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedClassifier {
    pub params: ClassifierParams,
    pub traces: Vec<Vec<f64>>,
}

/// Trains one head per predicate on per-pair positive probabilities
/// `targets[i][p]`.
pub fn train_classifier_targets(
    features: &[Vec<f64>],
    targets: &[Vec<f64>],
    num_predicates: usize,
    cfg: &TrainConfig,
) -> Result<TrainedClassifier> {
    if features.is_empty() {
        return Err(Error::EmptyInput("no non-abstained training pairs".into()));
    }
    if features.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            found: targets.len(),
        });
    }
    let dim = features[0].len();
    if let Some(r) = features.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: r.len(),
        });
    }
    let st = Standardizer::fit(features, NUM_SPATIAL.min(dim));
    let x = st.transform(features);
    let fits = (0..num_predicates)
        .into_par_iter()
        .map(|p| {
            let py: Vec<f64> = targets.iter().map(|t| t[p]).collect();
            fit_head(&x, &py, cfg, vec![0.0; dim + 1], p as u64)
        })
        .collect::<Result<Vec<_>>>()?;
    let (weights, traces) = fits.into_iter().map(|f| (f.theta, f.trace)).unzip();
    Ok(TrainedClassifier {
        params: ClassifierParams {
            weights,
            standardizer: st,
        },
        traces,
    })
}

/// Trains on probabilistic labels; fully abstained pairs are skipped.
pub fn train_classifier(
    features: &[Vec<f64>],
    labels: &[ProbabilisticLabel],
    num_predicates: usize,
    cfg: &TrainConfig,
) -> Result<TrainedClassifier> {
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            found: labels.len(),
        });
    }
    let (x, t): (Vec<Vec<f64>>, Vec<Vec<f64>>) = features
        .iter()
        .zip(labels)
        .filter(|(_, l)| !l.is_abstain())
        .map(|(f, l)| (f.clone(), l.distribution.clone()))
        .unzip();
    train_classifier_targets(&x, &t, num_predicates, cfg)
}

/// Independent logistic scores `σ(θ_pᵀ[v; 1])`, one per predicate.
pub fn predict_scores(params: &ClassifierParams, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            found: v.len(),
        });
    }
    let z = params.standardizer.transform_row(v);
    Ok(params
        .weights
        .iter()
        .map(|th| sigmoid(logit(th, &z)))
        .collect())
}
