//! Automatically generated heuristics: shallow CART trees fit on the pooled
//! labeled pairs, one per (depth, feature mode), whose confident predictions
//! become one-vs-rest votes in a per-predicate label matrix.

use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ObjectPair, SplitDataset};
use crate::error::{Error, Result};
use crate::features::{featurize_all, FeatureMode};
use crate::scalar::Scalar;

const MIN_GAIN: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node<T> {
    Split {
        feature: usize,
        threshold: T,
        samples: usize,
        /// Impurity decrease of this split weighted by the fraction of
        /// training samples reaching the node.
        impurity_decrease: f64,
        left: Box<Node<T>>,
        right: Box<Node<T>>,
    },
    Leaf {
        counts: Vec<usize>,
    },
}

impl<T> Node<T> {
    fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or `min_leaf` blocks further splits.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
}

impl TreeParams {
    pub fn depth(d: usize) -> Self {
        TreeParams {
            max_depth: Some(d),
            min_leaf: 1,
        }
    }

    pub fn unbounded() -> Self {
        TreeParams {
            max_depth: None,
            min_leaf: 1,
        }
    }
}

/// Binary classification tree; samples with `x[feature] <= threshold` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree<T = f64> {
    pub root: Node<T>,
    pub num_classes: usize,
    pub num_features: usize,
    pub params: TreeParams,
}

pub fn gini(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// `n * gini` without the division, for split scoring.
fn weighted_gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let sq: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    n as f64 - sq / n as f64
}

struct Fitter<'a, T> {
    x: &'a [Vec<T>],
    y: &'a [usize],
    num_classes: usize,
    num_features: usize,
    params: TreeParams,
    total: f64,
}

struct BestSplit<T> {
    feature: usize,
    threshold: T,
    score: f64,
}

impl<T: Scalar> Fitter<'_, T> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    fn best_split(&self, idx: &[usize], parent: &[usize]) -> Option<BestSplit<T>> {
        let n = idx.len();
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<BestSplit<T>> = None;
        let mut order = idx.to_vec();
        for f in 0..self.num_features {
            order.sort_by(|&a, &b| {
                self.x[a][f]
                    .partial_cmp(&self.x[b][f])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let mut left = vec![0usize; self.num_classes];
            let mut right = parent.to_vec();
            for k in 0..n - 1 {
                let c = self.y[order[k]];
                left[c] += 1;
                right[c] -= 1;
                let (lo, hi) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if !(lo < hi) {
                    continue;
                }
                let nl = k + 1;
                let nr = n - nl;
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let score = weighted_gini(&left, nl) + weighted_gini(&right, nr);
                if best.as_ref().is_none_or(|b| score < b.score) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: (lo + hi) / T::lit(2.0),
                        score,
                    });
                }
            }
        }
        best
    }

    fn grow(&self, idx: Vec<usize>, depth: usize) -> Node<T> {
        let counts = self.counts(&idx);
        let n = idx.len();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        if pure || !depth_ok || n < 2 * self.params.min_leaf.max(1) {
            return Node::Leaf { counts };
        }
        let parent = weighted_gini(&counts, n);
        let Some(best) = self.best_split(&idx, &counts) else {
            return Node::Leaf { counts };
        };
        let gain = parent - best.score;
        if gain <= MIN_GAIN * n as f64 {
            return Node::Leaf { counts };
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.x[i][best.feature] <= best.threshold);
        Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            samples: n,
            impurity_decrease: gain / self.total,
            left: Box::new(self.grow(l, depth + 1)),
            right: Box::new(self.grow(r, depth + 1)),
        }
    }
}

/// Greedy CART fit minimizing weighted Gini impurity. Candidate thresholds
/// are midpoints between consecutive distinct values; equal-impurity
/// candidates resolve to the lowest feature index, then the lowest threshold.
pub fn fit_tree<T: Scalar>(
    x: &[Vec<T>],
    y: &[usize],
    num_classes: usize,
    params: TreeParams,
) -> Result<DecisionTree<T>> {
    if x.is_empty() {
        return Err(Error::EmptyInput("decision tree training set".into()));
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let num_features = x[0].len();
    if num_features == 0 {
        return Err(Error::EmptyInput("decision tree feature columns".into()));
    }
    if let Some(r) = x.iter().find(|r| r.len() != num_features) {
        return Err(Error::DimensionMismatch {
            expected: num_features,
            found: r.len(),
        });
    }
    if let Some(&c) = y.iter().find(|&&c| c >= num_classes) {
        return Err(Error::Validation(format!(
            "class label {c} out of range ({num_classes} classes)"
        )));
    }
    let fitter = Fitter {
        x,
        y,
        num_classes,
        num_features,
        params,
        total: x.len() as f64,
    };
    let root = fitter.grow((0..x.len()).collect(), 0);
    Ok(DecisionTree {
        root,
        num_classes,
        num_features,
        params,
    })
}

impl<T: Scalar> DecisionTree<T> {
    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn leaf_counts(&self, x: &[T]) -> Result<&[usize]> {
        if x.len() != self.num_features {
            return Err(Error::DimensionMismatch {
                expected: self.num_features,
                found: x.len(),
            });
        }
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { counts } => return Ok(counts),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if x[*feature] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    /// Class with the largest leaf count (lowest index on ties).
    pub fn predict_class(&self, x: &[T]) -> Result<usize> {
        let c = self.leaf_counts(x)?;
        Ok(argmax_counts(c))
    }

    /// Per-feature total weighted impurity decrease (not normalized).
    pub fn raw_importances(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.num_features];
        let mut stack = vec![&self.root];
        while let Some(n) = stack.pop() {
            if let Node::Split {
                feature,
                impurity_decrease,
                left,
                right,
                ..
            } = n
            {
                imp[*feature] += impurity_decrease;
                stack.push(left);
                stack.push(right);
            }
        }
        imp
    }

    pub fn training_accuracy(&self, x: &[Vec<T>], y: &[usize]) -> Result<f64> {
        let mut ok = 0usize;
        for (r, &c) in x.iter().zip(y) {
            if self.predict_class(r)? == c {
                ok += 1;
            }
        }
        Ok(ok as f64 / x.len().max(1) as f64)
    }

    pub fn to_json(&self) -> Result<String>
    where
        T: Serialize,
    {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn argmax_counts(c: &[usize]) -> usize {
    let mut best = 0;
    for (i, &v) in c.iter().enumerate() {
        if v > c[best] {
            best = i;
        }
    }
    best
}

/// The reached leaf's class histogram normalized to a distribution.
pub fn tree_predict<T: Scalar>(tree: &DecisionTree<T>, x: &[T]) -> Result<Vec<T>> {
    let counts = tree.leaf_counts(x)?;
    let total: usize = counts.iter().sum();
    let total = T::from_count(total.max(1));
    Ok(counts.iter().map(|&c| T::from_count(c) / total).collect())
}

/// The 2x-random confidence threshold, clipped to `[0.05, 0.95]`.
pub fn default_abstain_threshold(num_predicates: usize) -> f64 {
    (2.0 / num_predicates.max(1) as f64).clamp(0.05, 0.95)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicConfig {
    pub depth_grid: Vec<usize>,
    pub modes: Vec<FeatureMode>,
    pub min_leaf: usize,
    /// `None` selects [`default_abstain_threshold`].
    pub abstain_threshold: Option<f64>,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        HeuristicConfig {
            depth_grid: vec![1, 2, 3],
            modes: vec![FeatureMode::Spatial, FeatureMode::Categorical],
            min_leaf: 1,
            abstain_threshold: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heuristic {
    pub mode: FeatureMode,
    pub max_depth: usize,
    pub tree: DecisionTree<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeuristicSet {
    pub heuristics: Vec<Heuristic>,
    pub abstain_threshold: f64,
    pub num_predicates: usize,
    pub num_categories: usize,
}

impl HeuristicSet {
    pub fn len(&self) -> usize {
        self.heuristics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heuristics.is_empty()
    }

    pub fn modes(&self) -> Vec<FeatureMode> {
        let mut m: Vec<FeatureMode> = self.heuristics.iter().map(|h| h.mode).collect();
        m.sort();
        m.dedup();
        m
    }
}

/// Fits one tree per `(mode, depth)` on the pooled labeled pairs; trees are
/// ordered mode-major, depth-minor.
pub fn generate_heuristics(split: &SplitDataset, cfg: &HeuristicConfig) -> Result<HeuristicSet> {
    let np = split.num_predicates;
    let nc = split.num_categories;
    let threshold = cfg
        .abstain_threshold
        .unwrap_or_else(|| default_abstain_threshold(np));
    if !(threshold > 0.0 && threshold <= 0.95) {
        return Err(Error::Config(format!(
            "abstain threshold must lie in (0, 0.95], got {threshold}"
        )));
    }
    if cfg.depth_grid.is_empty() || cfg.modes.is_empty() {
        return Err(Error::Config("empty depth grid or mode list".into()));
    }
    let pooled: Vec<&_> = split.pooled_labeled().collect();
    if pooled.is_empty() {
        return Err(Error::EmptyInput("pooled labeled set".into()));
    }
    for (p, d) in split.labeled.iter().enumerate() {
        if d.is_empty() {
            warn!("predicate {p} has no labeled examples; it cannot appear in heuristic leaves");
        }
    }
    let pairs: Vec<ObjectPair> = pooled.iter().map(|r| r.pair.clone()).collect();
    let y: Vec<usize> = pooled.iter().map(|r| r.predicate).collect();
    let mut by_mode = BTreeMap::new();
    for &m in &cfg.modes {
        by_mode.insert(m, featurize_all::<f64>(&pairs, nc, m)?);
    }
    let combos: Vec<(FeatureMode, usize)> = cfg
        .modes
        .iter()
        .flat_map(|&m| cfg.depth_grid.iter().map(move |&d| (m, d)))
        .collect();
    let heuristics = combos
        .par_iter()
        .map(|&(mode, d)| {
            let params = TreeParams {
                max_depth: Some(d),
                min_leaf: cfg.min_leaf,
            };
            fit_tree(&by_mode[&mode], &y, np, params).map(|tree| Heuristic {
                mode,
                max_depth: d,
                tree,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HeuristicSet {
        heuristics,
        abstain_threshold: threshold,
        num_predicates: np,
        num_categories: nc,
    })
}

/// Feature matrices of a list of pairs, one per mode.
#[derive(Clone, Debug)]
pub struct PairFeatures {
    pub pair_ids: Vec<String>,
    pub by_mode: BTreeMap<FeatureMode, Vec<Vec<f64>>>,
}

impl PairFeatures {
    pub fn compute(
        pairs: &[ObjectPair],
        num_categories: usize,
        modes: &[FeatureMode],
    ) -> Result<Self> {
        let mut by_mode = BTreeMap::new();
        for &m in modes {
            by_mode.insert(m, featurize_all::<f64>(pairs, num_categories, m)?);
        }
        Ok(PairFeatures {
            pair_ids: pairs.iter().map(ObjectPair::pair_id).collect(),
            by_mode,
        })
    }

    pub fn len(&self) -> usize {
        self.pair_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pair_ids.is_empty()
    }

    fn rows(&self, mode: FeatureMode) -> Result<&[Vec<f64>]> {
        self.by_mode.get(&mode).map(Vec::as_slice).ok_or_else(|| {
            Error::Config(format!("features for mode {} not computed", mode.as_str()))
        })
    }
}

/// Confident top-class votes of every heuristic on every pair
/// (`None` = abstain).
#[derive(Clone, Debug, PartialEq)]
pub struct VoteTable {
    pub pair_ids: Vec<String>,
    pub votes: Vec<Vec<Option<usize>>>,
}

pub fn predict_votes(hs: &HeuristicSet, feats: &PairFeatures) -> Result<VoteTable> {
    let votes = hs
        .heuristics
        .par_iter()
        .map(|h| {
            let rows = feats.rows(h.mode)?;
            rows.iter()
                .map(|r| {
                    let dist = tree_predict(&h.tree, r)?;
                    let top = argmax_f64(&dist);
                    Ok((dist[top] >= hs.abstain_threshold).then_some(top))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VoteTable {
        pair_ids: feats.pair_ids.clone(),
        votes,
    })
}

fn argmax_f64(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl VoteTable {
    /// One-vs-rest binarization for predicate `p`.
    pub fn label_matrix(&self, p: usize) -> LabelMatrix {
        let rows = self.votes.len();
        let cols = self.pair_ids.len();
        let mut entries = Vec::with_capacity(rows * cols);
        for row in &self.votes {
            entries.extend(row.iter().map(|v| match v {
                Some(c) if *c == p => 1i8,
                Some(_) => -1,
                None => 0,
            }));
        }
        LabelMatrix {
            predicate: p,
            rows,
            cols,
            entries,
            pair_ids: self.pair_ids.clone(),
        }
    }
}

pub fn build_label_matrix(
    hs: &HeuristicSet,
    feats: &PairFeatures,
    p: usize,
) -> Result<LabelMatrix> {
    Ok(predict_votes(hs, feats)?.label_matrix(p))
}

/// `J x N` matrix of votes in `{-1, 0, +1}` for one predicate, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMatrix {
    pub predicate: usize,
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<i8>,
    pub pair_ids: Vec<String>,
}

impl LabelMatrix {
    pub fn from_rows(predicate: usize, rows: &[Vec<i8>], pair_ids: Vec<String>) -> Result<Self> {
        let cols = pair_ids.len();
        let mut entries = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: r.len(),
                });
            }
            if let Some(v) = r.iter().find(|v| !(-1..=1).contains(*v)) {
                return Err(Error::Validation(format!("vote {v} not in {{-1, 0, 1}}")));
            }
            entries.extend_from_slice(r);
        }
        Ok(LabelMatrix {
            predicate,
            rows: rows.len(),
            cols,
            entries,
            pair_ids,
        })
    }

    /// Builds a matrix from columns, with generated pair ids.
    pub fn from_columns(predicate: usize, cols: &[Vec<i8>]) -> Result<Self> {
        let j = cols.first().map_or(0, Vec::len);
        let rows: Vec<Vec<i8>> = (0..j)
            .map(|r| cols.iter().map(|c| c[r]).collect())
            .collect();
        let ids = (0..cols.len()).map(|i| i.to_string()).collect();
        if cols.iter().any(|c| c.len() != j) {
            return Err(Error::Validation("ragged columns".into()));
        }
        Self::from_rows(predicate, &rows, ids)
    }

    #[inline]
    pub fn get(&self, j: usize, i: usize) -> i8 {
        self.entries[j * self.cols + i]
    }

    pub fn column(&self, i: usize) -> Vec<i8> {
        (0..self.rows).map(|j| self.get(j, i)).collect()
    }

    pub fn columns(&self) -> impl Iterator<Item = Vec<i8>> + '_ {
        (0..self.cols).map(|i| self.column(i))
    }

    pub fn zeros(&self) -> usize {
        self.entries.iter().filter(|&&v| v == 0).count()
    }

    /// Nonzero entries as `(j, i, value)`.
    pub fn triplets(&self) -> Vec<(usize, usize, i8)> {
        let mut t = Vec::new();
        for j in 0..self.rows {
            for i in 0..self.cols {
                let v = self.get(j, i);
                if v != 0 {
                    t.push((j, i, v));
                }
            }
        }
        t
    }

    pub fn write_triplets<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["j", "i", "value"])?;
        for (j, i, v) in self.triplets() {
            w.write_record([j.to_string(), i.to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn single_split_at_midpoint() {
        let x = col(&[0., 1., 2., 3.]);
        let y = [0, 0, 1, 1];
        let t = fit_tree(&x, &y, 2, TreeParams::depth(1)).unwrap();
        match &t.root {
            Node::Split {
                feature, threshold, ..
            } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 1.5);
            }
            n => panic!("expected split, got {n:?}"),
        }
        assert_eq!(t.training_accuracy(&x, &y).unwrap(), 1.0);
        assert_eq!(tree_predict(&t, &[2.7]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn pure_labels_give_single_leaf() {
        let x = col(&[0., 1., 2.]);
        let t = fit_tree(&x, &[2, 2, 2], 3, TreeParams::depth(3)).unwrap();
        assert_eq!(t.depth(), 0);
        assert_eq!(tree_predict(&t, &[5.0]).unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn constant_feature_mixed_labels_is_leaf() {
        let x = col(&[1., 1., 1., 1.]);
        let t = fit_tree(&x, &[0, 1, 0, 1], 2, TreeParams::depth(3)).unwrap();
        assert_eq!(t.root, Node::Leaf { counts: vec![2, 2] });
    }

    #[test]
    fn gini_values() {
        assert_eq!(gini(&[5, 5]), 0.5);
        assert_eq!(gini(&[4, 0]), 0.0);
    }

    #[test]
    fn leaf_normalization() {
        let t = DecisionTree::<f64> {
            root: Node::Leaf { counts: vec![3, 1] },
            num_classes: 2,
            num_features: 1,
            params: TreeParams::depth(0),
        };
        assert_eq!(tree_predict(&t, &[0.0]).unwrap(), vec![0.75, 0.25]);
        assert!(matches!(
            tree_predict(&t, &[0.0, 1.0]),
            Err(Error::DimensionMismatch {
                expected: 1,
                found: 2
            })
        ));
    }

    #[test]
    fn empty_input_errors() {
        let x: Vec<Vec<f64>> = vec![];
        assert!(fit_tree(&x, &[], 2, TreeParams::depth(1)).is_err());
    }

    #[test]
    fn ties_prefer_lowest_feature() {
        // both features separate perfectly
        let x = vec![vec![0., 10.], vec![1., 11.], vec![5., 20.], vec![6., 21.]];
        let t = fit_tree(&x, &[0, 0, 1, 1], 2, TreeParams::depth(1)).unwrap();
        match t.root {
            Node::Split {
                feature, threshold, ..
            } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 3.0);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn depth_and_min_leaf_respected() {
        let x = col(&[0., 1., 2., 3., 4., 5., 6., 7.]);
        let y = [0, 1, 0, 1, 0, 1, 0, 1];
        let t = fit_tree(&x, &y, 2, TreeParams::depth(2)).unwrap();
        assert!(t.depth() <= 2);
        let t = fit_tree(
            &x,
            &y,
            2,
            TreeParams {
                max_depth: None,
                min_leaf: 3,
            },
        )
        .unwrap();
        fn check(n: &Node<f64>) {
            match n {
                Node::Leaf { counts } => assert!(counts.iter().sum::<usize>() >= 3),
                Node::Split { left, right, .. } => {
                    check(left);
                    check(right)
                }
            }
        }
        check(&t.root);
    }

    #[test]
    fn unbounded_memorizes() {
        let x = col(&[0., 1., 2., 3., 4., 5., 6., 7.]);
        let y = [0, 1, 0, 1, 2, 1, 0, 2];
        let t = fit_tree(&x, &y, 3, TreeParams::unbounded()).unwrap();
        assert_eq!(t.training_accuracy(&x, &y).unwrap(), 1.0);
    }

    #[test]
    fn tree_json_round_trip() {
        let x = col(&[0., 1., 2., 3.]);
        let t = fit_tree(&x, &[0, 0, 1, 1], 2, TreeParams::depth(1)).unwrap();
        let back: DecisionTree<f64> = serde_json::from_str(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
    }

    fn table(votes: Vec<Vec<Option<usize>>>) -> VoteTable {
        let n = votes[0].len();
        VoteTable {
            pair_ids: (0..n).map(|i| i.to_string()).collect(),
            votes,
        }
    }

    #[test]
    fn one_vs_rest_binarization() {
        let t = table(vec![vec![Some(0), Some(2), None]]);
        assert_eq!(t.label_matrix(0).entries, vec![1, -1, 0]);
        assert_eq!(t.label_matrix(1).entries, vec![-1, -1, 0]);
        assert_eq!(t.label_matrix(2).entries, vec![-1, 1, 0]);
    }

    #[test]
    fn abstain_threshold_rule() {
        assert_eq!(default_abstain_threshold(20), 0.1);
        assert_eq!(default_abstain_threshold(2), 0.95);
        assert_eq!(default_abstain_threshold(100), 0.05);
        // a leaf whose top probability is 0.08 abstains at |P| = 20
        let mut counts = vec![1usize; 20];
        counts[3] = 2;
        let total: usize = counts.iter().sum();
        assert!(2.0 / (total as f64) < default_abstain_threshold(20));
        let hs = HeuristicSet {
            heuristics: vec![Heuristic {
                mode: FeatureMode::Spatial,
                max_depth: 0,
                tree: DecisionTree {
                    root: Node::Leaf { counts },
                    num_classes: 20,
                    num_features: 8,
                    params: TreeParams::depth(0),
                },
            }],
            abstain_threshold: default_abstain_threshold(20),
            num_predicates: 20,
            num_categories: 1,
        };
        let feats = PairFeatures {
            pair_ids: vec!["a".into()],
            by_mode: [(FeatureMode::Spatial, vec![vec![0.0; 8]])]
                .into_iter()
                .collect(),
        };
        let lm = build_label_matrix(&hs, &feats, 3).unwrap();
        assert_eq!(lm.entries, vec![0]);
    }

    #[test]
    fn triplets_skip_zeros() {
        let lm =
            LabelMatrix::from_rows(0, &[vec![1, 0], vec![0, -1]], vec!["a".into(), "b".into()])
                .unwrap();
        assert_eq!(lm.triplets(), vec![(0, 0, 1), (1, 1, -1)]);
        let mut buf = Vec::new();
        lm.write_triplets(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "j,i,value\n0,0,1\n1,1,-1\n"
        );
        assert!(LabelMatrix::from_rows(0, &[vec![2]], vec!["a".into()]).is_err());
    }
}
