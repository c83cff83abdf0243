//! Scene-graph data model, JSON ingestion and limited-label splits.
//!
//! Boxes follow the image convention `[y, x, h, w]`: `(y, x)` is the top-left
//! corner and `y` grows downward.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox<T = f64> {
    pub y: T,
    pub x: T,
    pub h: T,
    pub w: T,
}

impl<T: Scalar> BoundingBox<T> {
    pub fn new(y: T, x: T, h: T, w: T) -> Result<Self> {
        let b = BoundingBox { y, x, h, w };
        b.validate()?;
        Ok(b)
    }

    /// Checks finiteness, positive size and non-negative position.
    pub fn validate(&self) -> Result<()> {
        let all = [self.y, self.x, self.h, self.w];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite box value in {:?}",
                all
            )));
        }
        if self.h <= T::zero() || self.w <= T::zero() {
            return Err(Error::DegenerateBox {
                h: self.h.to_f64_lossy(),
                w: self.w.to_f64_lossy(),
            });
        }
        if self.y < T::zero() || self.x < T::zero() {
            return Err(Error::Validation(format!(
                "negative box origin in {:?}",
                all
            )));
        }
        Ok(())
    }

    pub fn bottom(&self) -> T {
        self.y + self.h
    }

    pub fn right(&self) -> T {
        self.x + self.w
    }

    pub fn area(&self) -> T {
        self.h * self.w
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let dy = self.bottom().min(other.bottom()) - self.y.max(other.y);
        let dx = self.right().min(other.right()) - self.x.max(other.x);
        if dy > T::zero() && dx > T::zero() {
            dy * dx
        } else {
            T::zero()
        }
    }

    /// True when the two boxes intersect with positive area.
    pub fn overlaps(&self, other: &Self) -> bool {
        self.intersection_area(other) > T::zero()
    }

    pub fn translated(&self, dy: T, dx: T) -> Self {
        BoundingBox {
            y: self.y + dy,
            x: self.x + dx,
            ..*self
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        BoundingBox {
            y: self.y * s,
            x: self.x * s,
            h: self.h * s,
            w: self.w * s,
        }
    }
}

impl<T: Serialize + Copy> Serialize for BoundingBox<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.y, self.x, self.h, self.w].serialize(s)
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for BoundingBox<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [y, x, h, w] = <[T; 4]>::deserialize(d)?;
        Ok(BoundingBox { y, x, h, w })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub category: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relationship {
    pub subject: usize,
    pub object: usize,
    pub predicate: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub objects: Vec<ObjectInstance>,
    #[serde(default)]
    pub relationships: Vec<Relationship>,
}

/// Ordered list of unique names with a name → index lookup.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

pub type CategoryVocab = Vocab;
pub type PredicateVocab = Vocab;

impl Vocab {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(Error::Validation(format!(
                    "empty vocabulary name at index {i}"
                )));
            }
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate vocabulary name {n:?}"
                )));
            }
        }
        Ok(Vocab { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> Option<&str> {
        self.names.get(i).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        Vocab::new(v)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.names
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DatasetCounts {
    pub images: usize,
    pub objects: usize,
    pub relationships: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneGraphDataset {
    pub categories: CategoryVocab,
    pub predicates: PredicateVocab,
    pub images: Vec<ImageRecord>,
}

impl SceneGraphDataset {
    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn num_predicates(&self) -> usize {
        self.predicates.len()
    }

    pub fn counts(&self) -> DatasetCounts {
        DatasetCounts {
            images: self.images.len(),
            objects: self.images.iter().map(|im| im.objects.len()).sum(),
            relationships: self.images.iter().map(|im| im.relationships.len()).sum(),
        }
    }

    /// Number of ground-truth relationships carrying each predicate.
    pub fn predicate_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_predicates()];
        for r in self.images.iter().flat_map(|im| &im.relationships) {
            c[r.predicate] += 1;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let nc = self.num_categories();
        let np = self.num_predicates();
        for (ii, im) in self.images.iter().enumerate() {
            let rec = || format!("images[{ii}] (id {:?})", im.id);
            for (oi, o) in im.objects.iter().enumerate() {
                o.bbox
                    .validate()
                    .map_err(|e| Error::Validation(format!("{}.objects[{oi}]: {e}", rec())))?;
                if o.category >= nc {
                    return Err(Error::Validation(format!(
                        "{}.objects[{oi}]: category {} out of range (|C| = {nc})",
                        rec(),
                        o.category
                    )));
                }
            }
            for (ri, r) in im.relationships.iter().enumerate() {
                for (role, idx) in [("subject", r.subject), ("object", r.object)] {
                    if idx >= im.objects.len() {
                        return Err(Error::Validation(format!(
                            "{}.relationships[{ri}]: {role} index {idx} out of range ({} objects)",
                            rec(),
                            im.objects.len()
                        )));
                    }
                }
                if r.predicate >= np {
                    return Err(Error::Validation(format!(
                        "{}.relationships[{ri}]: predicate {} out of range (|P| = {np})",
                        rec(),
                        r.predicate
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            record: "<document>".into(),
            message: e.to_string(),
        })?;
        let obj = root.as_object().ok_or_else(|| Error::Parse {
            record: "<document>".into(),
            message: "top level must be an object".into(),
        })?;
        let field = |k: &str| {
            obj.get(k).ok_or_else(|| Error::Parse {
                record: "<document>".into(),
                message: format!("missing field {k:?}"),
            })
        };
        let vocab = |k: &str| -> Result<Vocab> {
            let names: Vec<String> =
                serde_json::from_value(field(k)?.clone()).map_err(|e| Error::Parse {
                    record: k.to_string(),
                    message: e.to_string(),
                })?;
            Vocab::new(names).map_err(|e| Error::Parse {
                record: k.to_string(),
                message: e.to_string(),
            })
        };
        let categories = vocab("categories")?;
        let predicates = vocab("predicates")?;
        let raw_images = field("images")?.as_array().ok_or_else(|| Error::Parse {
            record: "images".into(),
            message: "expected an array".into(),
        })?;
        let mut images = Vec::with_capacity(raw_images.len());
        for (i, v) in raw_images.iter().enumerate() {
            let im: ImageRecord = ImageRecord::deserialize(v).map_err(|e| Error::Parse {
                record: match v.get("id").and_then(Value::as_str) {
                    Some(id) => format!("images[{i}] (id {id:?})"),
                    None => format!("images[{i}]"),
                },
                message: e.to_string(),
            })?;
            images.push(im);
        }
        let ds = SceneGraphDataset {
            categories,
            predicates,
            images,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()?).map_err(|e| Error::io(path, e))
    }

    /// Object pair view of `(image, subject, object)`.
    pub fn pair(&self, image: usize, subject: usize, object: usize) -> ObjectPair {
        let im = &self.images[image];
        ObjectPair {
            image_id: im.id.clone(),
            image_index: image,
            subject_index: subject,
            object_index: object,
            subject: im.objects[subject],
            object: im.objects[object],
        }
    }
}

/// Reads and validates a dataset file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<SceneGraphDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ds = SceneGraphDataset::from_json_str(&text)?;
    let c = ds.counts();
    info!(
        "loaded {}: {} images, {} objects, {} relationships",
        path.display(),
        c.images,
        c.objects,
        c.relationships
    );
    Ok(ds)
}

/// A subject/object pair inside one image, without a predicate.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectPair {
    pub image_id: String,
    pub image_index: usize,
    pub subject_index: usize,
    pub object_index: usize,
    pub subject: ObjectInstance,
    pub object: ObjectInstance,
}

impl ObjectPair {
    pub fn key(&self) -> PairKey {
        PairKey {
            image: self.image_index,
            subject: self.subject_index,
            object: self.object_index,
        }
    }

    /// Stable textual identifier `image_id:subject:object`.
    pub fn pair_id(&self) -> String {
        format!(
            "{}:{}:{}",
            self.image_id, self.subject_index, self.object_index
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairKey {
    pub image: usize,
    pub subject: usize,
    pub object: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledRelationship {
    pub pair: ObjectPair,
    pub predicate: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Labeled examples per predicate.
    pub n: usize,
    /// Fraction of images whose relationships are held out for evaluation.
    pub holdout_fraction: f64,
    pub seed: u64,
    /// Sampled negative pairs per positive unlabeled pair.
    pub negative_ratio: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            n: 10,
            holdout_fraction: 0.2,
            seed: 0,
            negative_ratio: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub n: usize,
    pub num_predicates: usize,
    pub num_categories: usize,
    /// `labeled[p]` is the small labeled set for predicate `p`.
    pub labeled: Vec<Vec<LabeledRelationship>>,
    /// Unlabeled pool, ordered by `(image, subject, object)`.
    pub unlabeled: Vec<ObjectPair>,
    /// Hidden ground truth for `unlabeled` (empty for sampled negatives).
    /// Evaluation only; never consumed by the labelers.
    pub unlabeled_gold: Vec<Vec<usize>>,
    pub eval_holdout: Vec<LabeledRelationship>,
    /// Images whose relationships form `eval_holdout`, ascending.
    pub holdout_images: Vec<usize>,
    pub warnings: Vec<String>,
}

impl SplitDataset {
    /// Pooled multi-class training set: every `(pair, predicate)` in all `D_p`.
    pub fn pooled_labeled(&self) -> impl Iterator<Item = &LabeledRelationship> {
        self.labeled.iter().flatten()
    }

    pub fn pooled_len(&self) -> usize {
        self.labeled.iter().map(Vec::len).sum()
    }

    /// Distinct labeled pairs with all of their labeled predicates.
    pub fn labeled_pairs(&self) -> Vec<(ObjectPair, Vec<usize>)> {
        let mut map: BTreeMap<PairKey, (ObjectPair, Vec<usize>)> = BTreeMap::new();
        for r in self.pooled_labeled() {
            map.entry(r.pair.key())
                .or_insert_with(|| (r.pair.clone(), Vec::new()))
                .1
                .push(r.predicate);
        }
        map.into_values()
            .map(|(p, mut preds)| {
                preds.sort_unstable();
                preds.dedup();
                (p, preds)
            })
            .collect()
    }
}

impl fmt::Display for SplitDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "split(n={}): {} labeled, {} unlabeled, {} holdout relationships",
            self.n,
            self.pooled_len(),
            self.unlabeled.len(),
            self.eval_holdout.len()
        )
    }
}

/// Limited-label split with the default negative ratio.
pub fn split_limited(
    ds: &SceneGraphDataset,
    n: usize,
    holdout_fraction: f64,
    seed: u64,
) -> Result<SplitDataset> {
    split_with(
        ds,
        &SplitConfig {
            n,
            holdout_fraction,
            seed,
            ..SplitConfig::default()
        },
    )
}

pub fn split_with(ds: &SceneGraphDataset, cfg: &SplitConfig) -> Result<SplitDataset> {
    if cfg.n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&cfg.holdout_fraction) {
        return Err(Error::Config(format!(
            "holdout_fraction must be in [0, 1), got {}",
            cfg.holdout_fraction
        )));
    }
    if !(cfg.negative_ratio >= 0.0 && cfg.negative_ratio.is_finite()) {
        return Err(Error::Config(
            "negative_ratio must be finite and >= 0".into(),
        ));
    }
    let np = ds.num_predicates();
    let mut warnings = Vec::new();

    let n_holdout = (cfg.holdout_fraction * ds.images.len() as f64).floor() as usize;
    let mut image_order: Vec<usize> = (0..ds.images.len()).collect();
    image_order.shuffle(&mut substream(cfg.seed, "split/holdout", 0));
    let holdout_images: BTreeSet<usize> = image_order[..n_holdout].iter().copied().collect();

    let mut eval_holdout = Vec::new();
    let mut pool: BTreeMap<PairKey, Vec<usize>> = BTreeMap::new();
    for (ii, im) in ds.images.iter().enumerate() {
        for r in &im.relationships {
            if holdout_images.contains(&ii) {
                eval_holdout.push(LabeledRelationship {
                    pair: ds.pair(ii, r.subject, r.object),
                    predicate: r.predicate,
                });
            } else {
                pool.entry(PairKey {
                    image: ii,
                    subject: r.subject,
                    object: r.object,
                })
                .or_default()
                .push(r.predicate);
            }
        }
    }
    for preds in pool.values_mut() {
        preds.sort_unstable();
        preds.dedup();
    }

    let mut candidates: Vec<Vec<PairKey>> = vec![Vec::new(); np];
    for (k, preds) in &pool {
        for &p in preds {
            candidates[p].push(*k);
        }
    }

    let mut labeled: Vec<Vec<LabeledRelationship>> = vec![Vec::new(); np];
    let mut chosen: BTreeSet<PairKey> = BTreeSet::new();
    for p in 0..np {
        if candidates[p].is_empty() {
            let msg = format!(
                "predicate {:?} has no ground-truth instances outside the holdout; D_p is empty",
                ds.predicates.name(p).unwrap_or("?")
            );
            warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let mut order = candidates[p].clone();
        order.shuffle(&mut substream(cfg.seed, "split/labeled", p as u64));
        for k in order {
            if labeled[p].len() >= cfg.n {
                break;
            }
            if chosen.contains(&k) {
                continue;
            }
            // A multi-predicate pair counts toward every one of its predicates.
            let preds = &pool[&k];
            if preds.iter().all(|&q| labeled[q].len() < cfg.n) {
                chosen.insert(k);
                for &q in preds {
                    labeled[q].push(LabeledRelationship {
                        pair: ds.pair(k.image, k.subject, k.object),
                        predicate: q,
                    });
                }
            }
        }
        if labeled[p].len() < cfg.n {
            let msg = format!(
                "predicate {:?}: only {} labeled examples available (n = {})",
                ds.predicates.name(p).unwrap_or("?"),
                labeled[p].len(),
                cfg.n
            );
            warn!("{msg}");
            warnings.push(msg);
        }
    }

    let mut unlabeled_map: BTreeMap<PairKey, Vec<usize>> = pool
        .into_iter()
        .filter(|(k, _)| !chosen.contains(k))
        .collect();
    let positives = unlabeled_map.len();

    let want = (cfg.negative_ratio * positives as f64).round() as usize;
    if want > 0 {
        let mut negatives = Vec::new();
        for (ii, im) in ds.images.iter().enumerate() {
            if holdout_images.contains(&ii) {
                continue;
            }
            let related: BTreeSet<(usize, usize)> = im
                .relationships
                .iter()
                .map(|r| (r.subject, r.object))
                .collect();
            for s in 0..im.objects.len() {
                for o in 0..im.objects.len() {
                    if s != o && !related.contains(&(s, o)) {
                        negatives.push(PairKey {
                            image: ii,
                            subject: s,
                            object: o,
                        });
                    }
                }
            }
        }
        if negatives.len() < want {
            let msg = format!(
                "requested {want} negative pairs but only {} exist",
                negatives.len()
            );
            warn!("{msg}");
            warnings.push(msg);
        }
        negatives.shuffle(&mut substream(cfg.seed, "split/negatives", 0));
        for k in negatives.into_iter().take(want) {
            unlabeled_map.insert(k, Vec::new());
        }
    }

    let (unlabeled, unlabeled_gold) = unlabeled_map
        .into_iter()
        .map(|(k, g)| (ds.pair(k.image, k.subject, k.object), g))
        .unzip();

    Ok(SplitDataset {
        n: cfg.n,
        num_predicates: np,
        num_categories: ds.num_categories(),
        labeled,
        unlabeled,
        unlabeled_gold,
        eval_holdout,
        holdout_images: holdout_images.into_iter().collect(),
        warnings,
    })
}
