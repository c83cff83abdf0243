//! Non-neural comparison labelers: k-NN label propagation, a single
//! decision tree, and category-pair frequency priors.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ObjectPair, SplitDataset};
use crate::error::{Error, Result};
use crate::features::{featurize_all, FeatureMode, Standardizer, NUM_SPATIAL};
use crate::heuristics::{fit_tree, tree_predict, DecisionTree, TreeParams};
use crate::labelmodel::ProbabilisticLabel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelBandwidth {
    /// Median length of the k-NN graph edges.
    Median,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationConfig {
    pub k_neighbors: usize,
    pub kernel_bandwidth: KernelBandwidth,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub clamp: bool,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            k_neighbors: 10,
            kernel_bandwidth: KernelBandwidth::Median,
            max_iterations: 1000,
            tolerance: 1e-6,
            clamp: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropagationResult {
    /// Row-normalized class distributions of the unlabeled points.
    pub unlabeled: Vec<Vec<f64>>,
    /// Final (unnormalized) rows of the labeled points.
    pub labeled: Vec<Vec<f64>>,
    pub iterations: usize,
    pub sigma: f64,
    pub warnings: Vec<String>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Symmetric k-NN graph: `adj[i]` maps neighbor → Euclidean distance.
fn knn_graph(points: &[&[f64]], k: usize) -> Vec<BTreeMap<usize, f64>> {
    let n = points.len();
    let nearest: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(points[i], points[j]), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.truncate(k);
            d.into_iter().map(|(s, j)| (j, s.sqrt())).collect()
        })
        .collect();
    let mut adj = vec![BTreeMap::new(); n];
    for (i, nn) in nearest.into_iter().enumerate() {
        for (j, d) in nn {
            adj[i].insert(j, d);
            adj[j].insert(i, d);
        }
    }
    adj
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Iterates `F ← D⁻¹ W F` on a Gaussian-weighted symmetric k-NN graph over
/// labeled and unlabeled points.
pub fn label_propagation(
    x_labeled: &[Vec<f64>],
    y_labeled: &[usize],
    x_unlabeled: &[Vec<f64>],
    num_classes: usize,
    cfg: &PropagationConfig,
) -> Result<PropagationResult> {
    if x_labeled.is_empty() {
        return Err(Error::EmptyInput(
            "label propagation needs labeled points".into(),
        ));
    }
    if x_labeled.len() != y_labeled.len() {
        return Err(Error::DimensionMismatch {
            expected: x_labeled.len(),
            found: y_labeled.len(),
        });
    }
    if cfg.k_neighbors == 0 || !(cfg.tolerance > 0.0) {
        return Err(Error::Config(
            "k_neighbors >= 1 and tolerance > 0 required".into(),
        ));
    }
    let dim = x_labeled[0].len();
    if let Some(r) = x_labeled.iter().chain(x_unlabeled).find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: r.len(),
        });
    }
    if let Some(&c) = y_labeled.iter().find(|&&c| c >= num_classes) {
        return Err(Error::Validation(format!("label {c} out of range")));
    }

    let nl = x_labeled.len();
    let points: Vec<&[f64]> = x_labeled
        .iter()
        .chain(x_unlabeled)
        .map(Vec::as_slice)
        .collect();
    let n = points.len();
    let adj = knn_graph(&points, cfg.k_neighbors);

    let sigma = match cfg.kernel_bandwidth {
        KernelBandwidth::Fixed(s) => s,
        KernelBandwidth::Median => {
            let mut lens = Vec::new();
            for (i, nb) in adj.iter().enumerate() {
                lens.extend(nb.iter().filter(|(&j, _)| j > i).map(|(_, &d)| d));
            }
            let m = median(lens);
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    };
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!(
            "kernel bandwidth must be positive, got {sigma}"
        )));
    }
    let weights: Vec<Vec<(usize, f64)>> = adj
        .iter()
        .map(|nb| {
            nb.iter()
                .map(|(&j, &d)| (j, (-d * d / (2.0 * sigma * sigma)).exp()))
                .collect()
        })
        .collect();

    let one_hot = |c: usize| {
        let mut r = vec![0.0; num_classes];
        r[c] = 1.0;
        r
    };
    let mut f: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            if i < nl {
                one_hot(y_labeled[i])
            } else {
                vec![0.0; num_classes]
            }
        })
        .collect();

    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let next: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                if cfg.clamp && i < nl {
                    return one_hot(y_labeled[i]);
                }
                let deg: f64 = weights[i].iter().map(|(_, w)| w).sum();
                if deg <= 0.0 {
                    return f[i].clone();
                }
                let mut row = vec![0.0; num_classes];
                for &(j, w) in &weights[i] {
                    for (r, v) in row.iter_mut().zip(&f[j]) {
                        *r += w * v;
                    }
                }
                row.iter_mut().for_each(|r| *r /= deg);
                row
            })
            .collect();
        let change = next
            .iter()
            .zip(&f)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        f = next;
        if change < cfg.tolerance {
            break;
        }
    }

    let mut warnings = Vec::new();
    let labeled = f[..nl].to_vec();
    let unlabeled = f[nl..]
        .iter()
        .enumerate()
        .map(|(u, row)| {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter().map(|v| v / s).collect()
            } else {
                let msg = format!("unlabeled point {u} is not connected to any labeled point");
                warn!("{msg}");
                warnings.push(msg);
                vec![1.0 / num_classes as f64; num_classes]
            }
        })
        .collect();
    Ok(PropagationResult {
        unlabeled,
        labeled,
        iterations,
        sigma,
        warnings,
    })
}

/// Label propagation over combined features, spatial block standardized
/// and one-hot block left as is.
pub fn label_propagation_split(
    split: &SplitDataset,
    cfg: &PropagationConfig,
) -> Result<PropagationResult> {
    let nc = split.num_categories;
    let pooled: Vec<_> = split.pooled_labeled().collect();
    let lab_pairs: Vec<ObjectPair> = pooled.iter().map(|r| r.pair.clone()).collect();
    let y: Vec<usize> = pooled.iter().map(|r| r.predicate).collect();
    let xl = featurize_all::<f64>(&lab_pairs, nc, FeatureMode::Combined)?;
    let xu = featurize_all::<f64>(&split.unlabeled, nc, FeatureMode::Combined)?;
    let all: Vec<Vec<f64>> = xl.iter().chain(&xu).cloned().collect();
    let st = Standardizer::fit(&all, NUM_SPATIAL);
    label_propagation(
        &st.transform(&xl),
        &y,
        &st.transform(&xu),
        split.num_predicates,
        cfg,
    )
}

/// Fits one combined-feature tree on the pooled labeled set and predicts
/// every unlabeled pair.
pub fn single_tree_labeler(
    split: &SplitDataset,
    max_depth: Option<usize>,
) -> Result<(DecisionTree<f64>, Vec<Vec<f64>>)> {
    let nc = split.num_categories;
    let pooled: Vec<_> = split.pooled_labeled().collect();
    let pairs: Vec<ObjectPair> = pooled.iter().map(|r| r.pair.clone()).collect();
    let y: Vec<usize> = pooled.iter().map(|r| r.predicate).collect();
    let x = featurize_all::<f64>(&pairs, nc, FeatureMode::Combined)?;
    let tree = fit_tree(
        &x,
        &y,
        split.num_predicates,
        TreeParams {
            max_depth,
            min_leaf: 1,
        },
    )?;
    let xu = featurize_all::<f64>(&split.unlabeled, nc, FeatureMode::Combined)?;
    let dists = xu
        .iter()
        .map(|r| tree_predict(&tree, r))
        .collect::<Result<Vec<_>>>()?;
    Ok((tree, dists))
}

/// Per category-pair predicate counts from the labeled sets.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyTable {
    pub counts: BTreeMap<(usize, usize), Vec<f64>>,
    pub overlap_required: bool,
    pub num_predicates: usize,
}

impl FrequencyTable {
    pub fn from_split(split: &SplitDataset, overlap_required: bool) -> Self {
        let mut counts: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for r in split.pooled_labeled() {
            let (s, o) = (&r.pair.subject, &r.pair.object);
            if overlap_required && !s.bbox.overlaps(&o.bbox) {
                continue;
            }
            counts
                .entry((s.category, o.category))
                .or_insert_with(|| vec![0.0; split.num_predicates])[r.predicate] += 1.0;
        }
        FrequencyTable {
            counts,
            overlap_required,
            num_predicates: split.num_predicates,
        }
    }

    pub fn total(&self) -> f64 {
        self.counts.values().flatten().sum()
    }

    /// Normalized counts for the category pair, uniform when unseen.
    pub fn predict(&self, subject: usize, object: usize) -> Vec<f64> {
        match self.counts.get(&(subject, object)) {
            Some(c) => {
                let t: f64 = c.iter().sum();
                c.iter().map(|v| v / t).collect()
            }
            None => vec![1.0 / self.num_predicates as f64; self.num_predicates],
        }
    }
}

pub fn frequency_baseline(
    split: &SplitDataset,
    pairs: &[ObjectPair],
    overlap_required: bool,
) -> (FrequencyTable, Vec<Vec<f64>>) {
    let table = FrequencyTable::from_split(split, overlap_required);
    let dists = pairs
        .iter()
        .map(|p| table.predict(p.subject.category, p.object.category))
        .collect();
    (table, dists)
}

/// Wraps baseline distributions as non-abstaining labels.
pub fn distributions_to_labels(
    pair_ids: &[String],
    dists: Vec<Vec<f64>>,
) -> Vec<ProbabilisticLabel> {
    pair_ids
        .iter()
        .zip(dists)
        .map(|(id, d)| ProbabilisticLabel {
            pair_id: id.clone(),
            distribution: d,
            abstain_mass: 0.0,
        })
        .collect()
}

/// Distinct category pairs present among `pairs`.
pub fn category_pairs(pairs: &[ObjectPair]) -> BTreeSet<(usize, usize)> {
    pairs
        .iter()
        .map(|p| (p.subject.category, p.object.category))
        .collect()
}
