//! Relationship complexity: spatial subtypes by flat-kernel mean shift,
//! categorical subtypes by distinct category pairs, tree feature
//! importances, and least-squares fits of metric vs. complexity.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ObjectPair, SceneGraphDataset, SplitDataset, Vocab};
use crate::error::{Error, Result};
use crate::features::{featurize_all, FeatureMode, SPATIAL_NAMES};
use crate::heuristics::{fit_tree, TreeParams};
use crate::rng::substream;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeanShiftConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// `None` merges modes closer than half the bandwidth.
    pub merge_radius: Option<f64>,
}

impl Default for MeanShiftConfig {
    fn default() -> Self {
        MeanShiftConfig {
            max_iter: 300,
            tol: 1e-5,
            merge_radius: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanShiftResult<T> {
    pub modes: Vec<Vec<T>>,
    pub assignment: Vec<usize>,
}

fn dist2<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn lex_cmp<T: Scalar>(a: &[T], b: &[T]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Flat-kernel mean shift with per-point weights (multiplicities).
pub fn mean_shift_weighted<T: Scalar>(
    points: &[Vec<T>],
    weights: &[T],
    bandwidth: T,
    cfg: &MeanShiftConfig,
) -> Result<MeanShiftResult<T>> {
    if points.is_empty() {
        return Err(Error::EmptyInput(
            "mean shift needs at least one point".into(),
        ));
    }
    if !(bandwidth > T::zero()) || !bandwidth.is_finite() {
        return Err(Error::Config(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: p.len(),
        });
    }
    let bw2 = bandwidth * bandwidth;
    let tol = T::lit(cfg.tol);
    let converged: Vec<Vec<T>> = points
        .par_iter()
        .map(|start| {
            let mut x = start.clone();
            for _ in 0..cfg.max_iter {
                let mut acc = vec![T::zero(); dim];
                let mut wsum = T::zero();
                for (p, &w) in points.iter().zip(weights) {
                    if dist2(p, &x) <= bw2 {
                        for (a, &v) in acc.iter_mut().zip(p) {
                            *a = *a + w * v;
                        }
                        wsum = wsum + w;
                    }
                }
                if wsum <= T::zero() {
                    break;
                }
                let next: Vec<T> = acc.into_iter().map(|a| a / wsum).collect();
                let shift = dist2(&next, &x).sqrt();
                x = next;
                if shift < tol {
                    break;
                }
            }
            x
        })
        .collect();

    let merge = T::lit(cfg.merge_radius.unwrap_or(f64::NAN));
    let merge = if merge.is_nan() {
        bandwidth / T::lit(2.0)
    } else {
        merge
    };
    let merge2 = merge * merge;
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&converged[a], &converged[b]).then(a.cmp(&b)));
    let mut modes: Vec<Vec<T>> = Vec::new();
    let mut assignment = vec![0usize; points.len()];
    for i in order {
        match modes.iter().position(|m| dist2(m, &converged[i]) <= merge2) {
            Some(k) => assignment[i] = k,
            None => {
                assignment[i] = modes.len();
                modes.push(converged[i].clone());
            }
        }
    }
    Ok(MeanShiftResult { modes, assignment })
}

pub fn mean_shift<T: Scalar>(
    points: &[Vec<T>],
    bandwidth: T,
    cfg: &MeanShiftConfig,
) -> Result<MeanShiftResult<T>> {
    mean_shift_weighted(points, &vec![T::one(); points.len()], bandwidth, cfg)
}

/// Linear-interpolated `q`-quantile of a non-empty sample.
pub fn quantile<T: Scalar>(mut v: Vec<T>, q: f64) -> T {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::lit(pos - lo as f64);
    v[lo] + (v[hi] - v[lo]) * frac
}

/// Z-scores each dimension; constant dimensions are only centered.
pub fn standardize<T: Scalar>(points: &[Vec<T>]) -> Vec<Vec<T>> {
    if points.is_empty() {
        return Vec::new();
    }
    let n = T::from_count(points.len());
    let dim = points[0].len();
    let mut out = points.to_vec();
    for d in 0..dim {
        let mean = points.iter().map(|p| p[d]).sum::<T>() / n;
        let var = points
            .iter()
            .map(|p| (p[d] - mean) * (p[d] - mean))
            .sum::<T>()
            / n;
        let sd = if var > T::lit(1e-24) {
            var.sqrt()
        } else {
            T::one()
        };
        for p in out.iter_mut() {
            p[d] = (p[d] - mean) / sd;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubtypeConfig {
    /// Bandwidth = `bandwidth_scale` times this quantile of pairwise
    /// distances between distinct standardized points.
    pub quantile: f64,
    pub bandwidth_scale: f64,
    /// Modes whose basin holds less than this fraction of the instances
    /// are not counted (the largest mode always is).
    pub min_support: f64,
    /// Distinct points used for the bandwidth estimate before subsampling.
    pub max_points: usize,
    pub seed: u64,
    pub mean_shift: MeanShiftConfig,
}

impl Default for SubtypeConfig {
    fn default() -> Self {
        SubtypeConfig {
            quantile: 0.1,
            bandwidth_scale: 2.5,
            min_support: 0.05,
            max_points: 2000,
            seed: 0,
            mean_shift: MeanShiftConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpatialSubtypes {
    pub count: usize,
    pub bandwidth: f64,
    pub instances: usize,
}

/// Number of mean-shift clusters among standardized spatial features.
/// Exact duplicates are collapsed to weighted points first.
pub fn spatial_subtypes(pairs: &[ObjectPair], cfg: &SubtypeConfig) -> Result<SpatialSubtypes> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput(
            "no instances for spatial subtypes".into(),
        ));
    }
    let raw = featurize_all::<f64>(pairs, 0, FeatureMode::Spatial)?;
    let z = standardize(&raw);
    let mut uniq: BTreeMap<Vec<u64>, (Vec<f64>, f64)> = BTreeMap::new();
    for p in z {
        let key: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        uniq.entry(key).or_insert((p, 0.0)).1 += 1.0;
    }
    let (points, weights): (Vec<Vec<f64>>, Vec<f64>) = uniq.into_values().unzip();
    if points.len() == 1 {
        return Ok(SpatialSubtypes {
            count: 1,
            bandwidth: 0.0,
            instances: pairs.len(),
        });
    }
    let sub: Vec<&Vec<f64>> = if points.len() > cfg.max_points {
        let mut rng = substream(cfg.seed, "analysis/bandwidth", 0);
        let mut idx = sample(&mut rng, points.len(), cfg.max_points).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| &points[i]).collect()
    } else {
        points.iter().collect()
    };
    let mut d = Vec::with_capacity(sub.len() * (sub.len() - 1) / 2);
    for i in 0..sub.len() {
        for j in i + 1..sub.len() {
            d.push(dist2(sub[i], sub[j]).sqrt());
        }
    }
    let bandwidth = cfg.bandwidth_scale * quantile(d, cfg.quantile);
    if !(bandwidth > 0.0) {
        return Err(Error::Config(format!(
            "non-positive subtype bandwidth {bandwidth}"
        )));
    }
    let ms = mean_shift_weighted(&points, &weights, bandwidth, &cfg.mean_shift)?;
    let mut basin = vec![0.0; ms.modes.len()];
    for (&a, &w) in ms.assignment.iter().zip(&weights) {
        basin[a] += w;
    }
    let floor = cfg.min_support * pairs.len() as f64;
    let largest = basin.iter().copied().fold(0.0, f64::max);
    let count = basin
        .iter()
        .filter(|&&b| b >= floor || b == largest)
        .count();
    Ok(SpatialSubtypes {
        count,
        bandwidth,
        instances: pairs.len(),
    })
}

/// Distinct `(subject category, object category)` pairs, and the size of
/// the union of categories in either role.
pub fn categorical_subtypes(pairs: &[ObjectPair]) -> (usize, usize) {
    let pairs_set: BTreeSet<(usize, usize)> = pairs
        .iter()
        .map(|p| (p.subject.category, p.object.category))
        .collect();
    let union: BTreeSet<usize> = pairs_set.iter().flat_map(|&(a, b)| [a, b]).collect();
    (pairs_set.len(), union.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubtypeKind {
    Spatial,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubtypeReport {
    pub predicate: usize,
    pub spatial_subtypes: usize,
    pub categorical_subtypes: usize,
    pub categorical_union: usize,
    pub instances_used: usize,
    pub bandwidth: f64,
}

pub fn predicate_instances(ds: &SceneGraphDataset, p: usize) -> Vec<ObjectPair> {
    let mut out = Vec::new();
    for (ii, im) in ds.images.iter().enumerate() {
        for r in im.relationships.iter().filter(|r| r.predicate == p) {
            out.push(ds.pair(ii, r.subject, r.object));
        }
    }
    out
}

pub fn count_subtypes(
    ds: &SceneGraphDataset,
    p: usize,
    kind: SubtypeKind,
    cfg: &SubtypeConfig,
) -> Result<usize> {
    let inst = predicate_instances(ds, p);
    if inst.is_empty() {
        return Err(Error::EmptyInput(format!("predicate {p} has no instances")));
    }
    Ok(match kind {
        SubtypeKind::Spatial => spatial_subtypes(&inst, cfg)?.count,
        SubtypeKind::Categorical => categorical_subtypes(&inst).0,
    })
}

pub fn subtype_report(
    ds: &SceneGraphDataset,
    p: usize,
    cfg: &SubtypeConfig,
) -> Result<SubtypeReport> {
    let inst = predicate_instances(ds, p);
    if inst.is_empty() {
        return Err(Error::EmptyInput(format!("predicate {p} has no instances")));
    }
    let s = spatial_subtypes(&inst, cfg)?;
    let (cat, union) = categorical_subtypes(&inst);
    Ok(SubtypeReport {
        predicate: p,
        spatial_subtypes: s.count,
        categorical_subtypes: cat,
        categorical_union: union,
        instances_used: inst.len(),
        bandwidth: s.bandwidth,
    })
}

/// Reports for every predicate that has at least one instance.
pub fn subtype_reports(ds: &SceneGraphDataset, cfg: &SubtypeConfig) -> Result<Vec<SubtypeReport>> {
    let counts = ds.predicate_counts();
    (0..ds.num_predicates())
        .into_par_iter()
        .filter(|&p| counts[p] > 0)
        .map(|p| subtype_report(ds, p, cfg))
        .collect()
}

pub fn write_subtypes_csv<W: Write>(
    out: W,
    reports: &[SubtypeReport],
    predicates: &Vocab,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "predicate",
        "spatial_subtypes",
        "categorical_subtypes",
        "categorical_union",
        "instances",
        "bandwidth",
    ])?;
    for r in reports {
        w.write_record([
            predicates.name(r.predicate).unwrap_or("?").to_string(),
            r.spatial_subtypes.to_string(),
            r.categorical_subtypes.to_string(),
            r.categorical_union.to_string(),
            r.instances_used.to_string(),
            r.bandwidth.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Human-readable names of the combined feature layout.
pub fn combined_feature_names(categories: &Vocab) -> Vec<String> {
    let mut names: Vec<String> = SPATIAL_NAMES
        .iter()
        .enumerate()
        .map(|(i, n)| format!("f{} {n}", i + 1))
        .collect();
    for role in ["subj", "obj"] {
        for c in categories.names() {
            names.push(format!("{role}:{c}"));
        }
    }
    names
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImportanceReport {
    pub predicate: usize,
    /// `(feature index, name, importance)`, descending, ties by index.
    pub ranked: Vec<(usize, String, f64)>,
    /// Set when the tree is a single leaf and every importance is zero.
    pub no_splits: bool,
}

/// Gini importances of a one-vs-rest tree separating `D_p` from the other
/// labeled sets, on combined features.
pub fn feature_importances(
    split: &SplitDataset,
    p: usize,
    categories: &Vocab,
    max_depth: usize,
) -> Result<ImportanceReport> {
    if split.labeled.get(p).is_none_or(Vec::is_empty) {
        return Err(Error::EmptyInput(format!(
            "predicate {p} has no labeled examples"
        )));
    }
    let pooled: Vec<_> = split.pooled_labeled().collect();
    let pairs: Vec<ObjectPair> = pooled.iter().map(|r| r.pair.clone()).collect();
    let y: Vec<usize> = pooled
        .iter()
        .map(|r| usize::from(r.predicate == p))
        .collect();
    let x = featurize_all::<f64>(&pairs, split.num_categories, FeatureMode::Combined)?;
    let tree = fit_tree(&x, &y, 2, TreeParams::depth(max_depth))?;
    let raw = tree.raw_importances();
    let total: f64 = raw.iter().sum();
    let names = combined_feature_names(categories);
    let no_splits = total <= 0.0;
    let mut ranked: Vec<(usize, String, f64)> = raw
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("x{i}"));
            (i, name, if no_splits { 0.0 } else { v / total })
        })
        .collect();
    ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    Ok(ImportanceReport {
        predicate: p,
        ranked,
        no_splits,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FitReport<T = f64> {
    pub slope: T,
    pub intercept: T,
    pub r_squared: T,
}

/// Ordinary least squares of `ys` on `xs`; R² is 0 for constant `ys`.
pub fn linear_fit_r2<T: Scalar>(xs: &[T], ys: &[T]) -> Result<FitReport<T>> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::EmptyInput(
            "linear fit needs at least two points".into(),
        ));
    }
    let n = T::from_count(xs.len());
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let sxx: T = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    let sxy: T = xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > T::zero() {
        sxy / sxx
    } else {
        T::zero()
    };
    let intercept = my - slope * mx;
    let ss_tot: T = ys.iter().map(|&y| (y - my) * (y - my)).sum();
    let ss_res: T = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let r_squared = if ss_tot > T::zero() {
        (T::one() - ss_res / ss_tot).max(T::zero()).min(T::one())
    } else {
        T::zero()
    };
    Ok(FitReport {
        slope,
        intercept,
        r_squared,
    })
}

/// Per-predicate complexity of a limited-label split.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComplexityRow {
    pub predicate: usize,
    /// Spatial subtypes among the labeled examples.
    pub train_subtypes: usize,
    /// Spatial subtypes among the unlabeled pairs of this predicate.
    pub unlabeled_subtypes: usize,
    pub labeled_proportion: f64,
}

pub fn complexity_series(split: &SplitDataset, cfg: &SubtypeConfig) -> Result<Vec<ComplexityRow>> {
    (0..split.num_predicates)
        .into_par_iter()
        .map(|p| {
            let train: Vec<ObjectPair> = split.labeled[p].iter().map(|r| r.pair.clone()).collect();
            let unl: Vec<ObjectPair> = split
                .unlabeled
                .iter()
                .zip(&split.unlabeled_gold)
                .filter(|(_, g)| g.contains(&p))
                .map(|(pr, _)| pr.clone())
                .collect();
            let count = |v: &[ObjectPair]| -> Result<usize> {
                if v.is_empty() {
                    Ok(0)
                } else {
                    Ok(spatial_subtypes(v, cfg)?.count)
                }
            };
            let t = count(&train)?;
            let u = count(&unl)?;
            Ok(ComplexityRow {
                predicate: p,
                train_subtypes: t,
                unlabeled_subtypes: u,
                labeled_proportion: if u == 0 { 0.0 } else { t as f64 / u as f64 },
            })
        })
        .collect()
}

pub fn write_xy_csv<W: Write>(out: W, xs: &[f64], ys: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y"])?;
    for (x, y) in xs.iter().zip(ys) {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points_one_cluster() {
        let pts = vec![vec![1.0f64, 2.0]; 5];
        let r = mean_shift(&pts, 0.5, &MeanShiftConfig::default()).unwrap();
        assert_eq!(r.modes.len(), 1);
        assert_eq!(r.assignment, vec![0; 5]);
    }

    #[test]
    fn two_far_groups() {
        let mut pts = Vec::new();
        for i in 0..10 {
            let e = i as f64 * 0.01;
            pts.push(vec![e, -e]);
            pts.push(vec![100.0 + e, 100.0 - e]);
        }
        let r = mean_shift(&pts, 1.0, &MeanShiftConfig::default()).unwrap();
        assert_eq!(r.modes.len(), 2);
        assert_ne!(r.assignment[0], r.assignment[1]);
        assert_eq!(r.assignment[0], r.assignment[2]);
    }

    #[test]
    fn wide_bandwidth_single_basin() {
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64).sin() * 3.0, i as f64 * 0.2])
            .collect();
        let r = mean_shift(&pts, 50.0, &MeanShiftConfig::default()).unwrap();
        assert_eq!(r.modes.len(), 1);
    }

    #[test]
    fn mean_shift_rejects_bad_input() {
        let none: Vec<Vec<f64>> = vec![];
        assert!(mean_shift(&none, 1.0, &MeanShiftConfig::default()).is_err());
        assert!(mean_shift(&[vec![0.0]], 0.0, &MeanShiftConfig::default()).is_err());
    }

    #[test]
    fn hand_least_squares() {
        let f = linear_fit_r2(&[1.0f64, 2.0, 3.0], &[1.0, 2.0, 2.0]).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-15);
        assert!((f.intercept - 2.0 / 3.0).abs() < 1e-15);
        assert!((f.r_squared - 0.75).abs() < 1e-15);
    }

    #[test]
    fn exact_and_constant_fits() {
        let xs = [1.0f64, 2.0, 5.0, 7.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        assert_eq!(linear_fit_r2(&xs, &ys).unwrap().r_squared, 1.0);
        assert_eq!(linear_fit_r2(&xs, &[3.0; 4]).unwrap().r_squared, 0.0);
        assert!(linear_fit_r2(&xs, &[1.0]).is_err());
        let f = linear_fit_r2(&[1.0f32, 2.0, 3.0], &[1.0, 2.0, 2.0]).unwrap();
        assert!((f.r_squared - 0.75).abs() < 1e-6);
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(vec![4.0f64, 1.0, 2.0, 3.0], 0.5), 2.5);
        assert_eq!(quantile(vec![1.0f64, 2.0], 0.0), 1.0);
    }
}
