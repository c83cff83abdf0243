//! Image-agnostic features of an object pair: eight relative box statistics
//! and a concatenated one-hot encoding of the two categories.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{BoundingBox, ObjectPair};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const NUM_SPATIAL: usize = 8;

pub const SPATIAL_NAMES: [&str; NUM_SPATIAL] = [
    "dx/w",
    "dy/h",
    "dbottom/h",
    "dright/w",
    "h'/h",
    "w'/w",
    "area'/area",
    "(w'+h')/(w+h)",
];

/// Relative position and size of the object box `b'` with respect to the
/// subject box `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialFeatures<T = f64>(pub [T; NUM_SPATIAL]);

impl<T: Scalar> SpatialFeatures<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

pub fn spatial_features<T: Scalar>(
    b: &BoundingBox<T>,
    b2: &BoundingBox<T>,
) -> Result<SpatialFeatures<T>> {
    for bb in [b, b2] {
        if !(bb.h > T::zero() && bb.w > T::zero()) {
            return Err(Error::DegenerateBox {
                h: bb.h.to_f64_lossy(),
                w: bb.w.to_f64_lossy(),
            });
        }
    }
    let BoundingBox { y, x, h, w } = *b;
    let BoundingBox {
        y: y2,
        x: x2,
        h: h2,
        w: w2,
    } = *b2;
    Ok(SpatialFeatures([
        (x - x2) / w,
        (y - y2) / h,
        ((y + h) - (y2 + h2)) / h,
        ((x + w) - (x2 + w2)) / w,
        h2 / h,
        w2 / w,
        (w2 * h2) / (w * h),
        (w2 + h2) / (w + h),
    ]))
}

/// Sparse form of the concatenated one-hot `[subject | object]` vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CategoricalFeatures {
    pub subject_index: usize,
    pub object_index: usize,
    pub dimension: usize,
}

impl CategoricalFeatures {
    pub fn to_dense<T: Scalar>(&self) -> Vec<T> {
        let mut v = vec![T::zero(); self.dimension];
        v[self.subject_index] = T::one();
        v[self.object_index] = T::one();
        v
    }

    /// Inverse of [`categorical_features`].
    pub fn categories(&self) -> (usize, usize) {
        let nc = self.dimension / 2;
        (self.subject_index, self.object_index - nc)
    }
}

pub fn categorical_features(
    subject: usize,
    object: usize,
    num_categories: usize,
) -> Result<CategoricalFeatures> {
    if subject >= num_categories || object >= num_categories {
        return Err(Error::Validation(format!(
            "category pair ({subject}, {object}) out of range for |C| = {num_categories}"
        )));
    }
    Ok(CategoricalFeatures {
        subject_index: subject,
        object_index: num_categories + object,
        dimension: 2 * num_categories,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Spatial,
    Categorical,
    Combined,
}

impl FeatureMode {
    pub fn dimension(self, num_categories: usize) -> usize {
        match self {
            FeatureMode::Spatial => NUM_SPATIAL,
            FeatureMode::Categorical => 2 * num_categories,
            FeatureMode::Combined => NUM_SPATIAL + 2 * num_categories,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Spatial => "spatial",
            FeatureMode::Categorical => "categorical",
            FeatureMode::Combined => "combined",
        }
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(FeatureMode::Spatial),
            "categorical" => Ok(FeatureMode::Categorical),
            "combined" => Ok(FeatureMode::Combined),
            _ => Err(Error::Config(format!("unknown feature mode {s:?}"))),
        }
    }
}

/// Names of the columns of a feature vector in `mode`.
pub fn feature_names(mode: FeatureMode, num_categories: usize) -> Vec<String> {
    let spatial = (1..=NUM_SPATIAL).map(|i| format!("f{i}"));
    let cat = (0..2 * num_categories).map(|i| format!("cat_{i}"));
    match mode {
        FeatureMode::Spatial => spatial.collect(),
        FeatureMode::Categorical => cat.collect(),
        FeatureMode::Combined => spatial.chain(cat).collect(),
    }
}

fn box_as<T: Scalar>(b: &BoundingBox<f64>) -> BoundingBox<T> {
    BoundingBox {
        y: T::lit(b.y),
        x: T::lit(b.x),
        h: T::lit(b.h),
        w: T::lit(b.w),
    }
}

/// Dense feature vector of `pair`; combined mode is `[spatial | categorical]`.
pub fn featurize<T: Scalar>(
    pair: &ObjectPair,
    num_categories: usize,
    mode: FeatureMode,
) -> Result<Vec<T>> {
    let spatial = || spatial_features(&box_as::<T>(&pair.subject.bbox), &box_as(&pair.object.bbox));
    let categorical =
        || categorical_features(pair.subject.category, pair.object.category, num_categories);
    Ok(match mode {
        FeatureMode::Spatial => spatial()?.0.to_vec(),
        FeatureMode::Categorical => categorical()?.to_dense(),
        FeatureMode::Combined => {
            let mut v = spatial()?.0.to_vec();
            v.extend(categorical()?.to_dense::<T>());
            v
        }
    })
}

/// Row-per-pair feature matrix.
pub fn featurize_all<T: Scalar>(
    pairs: &[ObjectPair],
    num_categories: usize,
    mode: FeatureMode,
) -> Result<Vec<Vec<T>>> {
    pairs
        .iter()
        .map(|p| featurize(p, num_categories, mode))
        .collect()
}

/// Writes combined-layout rows as CSV with header `f1..f8, cat_0..`.
pub fn write_feature_csv<W: Write>(out: W, rows: &[Vec<f64>], num_categories: usize) -> Result<()> {
    let names = feature_names(FeatureMode::Combined, num_categories);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&names)?;
    for r in rows {
        if r.len() != names.len() {
            return Err(Error::DimensionMismatch {
                expected: names.len(),
                found: r.len(),
            });
        }
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn export_feature_csv(
    path: impl AsRef<Path>,
    pairs: &[ObjectPair],
    num_categories: usize,
) -> Result<()> {
    let path = path.as_ref();
    let rows = featurize_all::<f64>(pairs, num_categories, FeatureMode::Combined)?;
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_feature_csv(f, &rows, num_categories)
}

/// Per-dimension standardization. Dimensions listed in `passthrough`
/// (and constant dimensions) keep unit scale and zero shift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>], standardize_dims: usize) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; dim];
        let mut scale = vec![1.0; dim];
        if rows.is_empty() {
            return Standardizer { mean, scale };
        }
        let n = rows.len() as f64;
        for d in 0..standardize_dims.min(dim) {
            let m = rows.iter().map(|r| r[d]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[d] - m).powi(2)).sum::<f64>() / n;
            mean[d] = m;
            if var > 1e-24 {
                scale[d] = var.sqrt();
            }
        }
        Standardizer { mean, scale }
    }

    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn transform_row(&self, r: &[f64]) -> Vec<f64> {
        r.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.transform_row(r)).collect()
    }
}
