//! Deterministic synthetic scene graphs with planted spatial and
//! categorical structure.
//!
//! Generation is feature-space first: for each instance a target is drawn
//! around one of the predicate's spatial modes and a box pair realizing it
//! exactly is constructed. The eight spatial features have four degrees of
//! freedom once the subject box aspect is fixed, so a mode is given by
//! `(dx/w, dy/h, h'/h, w'/w)` plus the subject aspect `w/h`; the remaining
//! four features follow from these.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    BoundingBox, ImageRecord, ObjectInstance, Relationship, SceneGraphDataset, Vocab,
};
use crate::error::{Error, Result};
use crate::rng::substream;

const MAX_TRIES: usize = 100;
const MIN_RATIO: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialMode {
    /// Target `(dx/w, dy/h, h'/h, w'/w)`.
    pub mean: [f64; 4],
    /// Standard deviation applied independently to each target coordinate.
    pub spread: f64,
    /// Subject box aspect `w/h`.
    #[serde(default = "one")]
    pub aspect: f64,
}

fn one() -> f64 {
    1.0
}

impl SpatialMode {
    pub fn new(mean: [f64; 4], spread: f64) -> Self {
        SpatialMode {
            mean,
            spread,
            aspect: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryPair {
    pub subject: String,
    pub object: String,
    pub weight: f64,
}

impl CategoryPair {
    pub fn new(subject: &str, object: &str) -> Self {
        CategoryPair {
            subject: subject.into(),
            object: object.into(),
            weight: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredicateSpec {
    pub name: String,
    pub spatial_modes: Vec<SpatialMode>,
    pub category_pairs: Vec<CategoryPair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub categories: Vec<String>,
    pub predicates: Vec<PredicateSpec>,
    pub instances_per_predicate: usize,
    /// Planted relationships per image (the last image may hold fewer).
    pub relationships_per_image: usize,
    /// Unrelated objects added to every image.
    pub distractors_per_image: usize,
    /// Intended fraction of negative pairs in the unlabeled pool; recorded
    /// in the manifest as a split negative ratio.
    pub negative_pair_fraction: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedInstance {
    pub image_id: String,
    pub subject: usize,
    pub object: usize,
    pub predicate: usize,
    pub mode: usize,
    pub category_pair: usize,
    /// Sampled `(dx/w, dy/h, h'/h, w'/w)` target.
    pub target: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub predicates: Vec<String>,
    pub predicate_counts: Vec<usize>,
    pub modes_per_predicate: Vec<usize>,
    pub category_pairs_per_predicate: Vec<usize>,
    /// Negative pairs per positive pair matching `negative_pair_fraction`.
    pub negative_ratio: f64,
    pub instances: Vec<PlantedInstance>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let cats = Vocab::new(self.categories.clone())?;
        if self.predicates.is_empty() {
            return Err(Error::Config("synthetic spec has no predicates".into()));
        }
        if self.relationships_per_image == 0 {
            return Err(Error::Config(
                "relationships_per_image must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.negative_pair_fraction) {
            return Err(Error::Config(
                "negative_pair_fraction must be in [0, 1)".into(),
            ));
        }
        Vocab::new(self.predicates.iter().map(|p| p.name.clone()))?;
        for p in &self.predicates {
            if p.spatial_modes.is_empty() || p.category_pairs.is_empty() {
                return Err(Error::Config(format!(
                    "predicate {:?} needs at least one spatial mode and one category pair",
                    p.name
                )));
            }
            for m in &p.spatial_modes {
                if !(m.spread >= 0.0) || !(m.aspect > 0.0) || m.mean.iter().any(|v| !v.is_finite())
                {
                    return Err(Error::Config(format!(
                        "invalid spatial mode in {:?}",
                        p.name
                    )));
                }
            }
            for c in &p.category_pairs {
                if cats.id(&c.subject).is_none() || cats.id(&c.object).is_none() {
                    return Err(Error::Config(format!(
                        "unknown category in pair ({}, {}) of {:?}",
                        c.subject, c.object, p.name
                    )));
                }
                if !(c.weight > 0.0) {
                    return Err(Error::Config(
                        "category pair weights must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// The five-predicate fixture used by the acceptance suite: two
    /// predicates separated by vertical offset, two by object category, and
    /// one mixed predicate with three spatial subtypes.
    pub fn acceptance(seed: u64) -> Self {
        let categories = [
            "man",
            "woman",
            "person",
            "kite",
            "bird",
            "balloon",
            "roof",
            "ladder",
            "phone",
            "laptop",
            "window",
            "plate",
            "cup",
            "dog",
            "horse",
            "surfboard",
            "bike",
            "table",
            "tree",
            "car",
        ];
        let shared = vec![
            CategoryPair::new("man", "kite"),
            CategoryPair::new("woman", "bird"),
            CategoryPair::new("person", "balloon"),
            CategoryPair::new("man", "roof"),
            CategoryPair::new("woman", "ladder"),
        ];
        let predicates = vec![
            PredicateSpec {
                name: "fly".into(),
                spatial_modes: vec![SpatialMode::new([0.0, 4.0, 0.5, 0.6], 0.25)],
                category_pairs: shared.clone(),
            },
            PredicateSpec {
                name: "above".into(),
                spatial_modes: vec![SpatialMode::new([0.0, -2.5, 1.5, 1.4], 0.25)],
                category_pairs: shared,
            },
            PredicateSpec {
                name: "look".into(),
                spatial_modes: vec![SpatialMode::new([0.3, 1.8, 0.3, 0.3], 0.25)],
                category_pairs: vec![
                    CategoryPair::new("person", "phone"),
                    CategoryPair::new("woman", "phone"),
                    CategoryPair::new("man", "phone"),
                ],
            },
            PredicateSpec {
                name: "eat".into(),
                spatial_modes: vec![SpatialMode::new([-0.3, -2.5, 0.4, 2.2], 0.25)],
                category_pairs: vec![
                    CategoryPair::new("dog", "plate"),
                    CategoryPair::new("person", "plate"),
                ],
            },
            PredicateSpec {
                name: "ride".into(),
                spatial_modes: vec![
                    SpatialMode::new([0.0, 0.0, 3.0, 1.5], 0.1),
                    SpatialMode::new([-1.0, 0.3, 2.5, 3.0], 0.1),
                    SpatialMode::new([1.0, -0.3, 3.5, 2.0], 0.1),
                ],
                category_pairs: vec![
                    CategoryPair::new("man", "horse"),
                    CategoryPair::new("woman", "horse"),
                    CategoryPair::new("person", "horse"),
                ],
            },
        ];
        SynthSpec {
            categories: categories.iter().map(|s| s.to_string()).collect(),
            predicates,
            instances_per_predicate: 420,
            relationships_per_image: 2,
            distractors_per_image: 2,
            negative_pair_fraction: 0.2,
            seed,
        }
    }

    /// One predicate whose spatial features are planted around `k` modes
    /// spaced `separation * spread` apart, and one category pair. Modes lie
    /// on a line that moves all four free coordinates (and the derived
    /// differences) equally, so per-dimension standardization keeps the
    /// planted geometry.
    pub fn planted_modes(
        k: usize,
        separation: f64,
        spread: f64,
        instances: usize,
        seed: u64,
    ) -> Self {
        const DIR: [f64; 4] = [0.5, 0.5, -0.5, -0.5];
        let step = separation * spread;
        let modes = (0..k)
            .map(|i| {
                let t = (i as f64 - (k as f64 - 1.0) / 2.0) * step;
                let base = [0.0, 0.0, 2.0, 2.0];
                SpatialMode::new(std::array::from_fn(|d| base[d] + t * DIR[d]), spread)
            })
            .collect();
        SynthSpec {
            categories: vec!["a".into(), "b".into()],
            predicates: vec![PredicateSpec {
                name: "planted".into(),
                spatial_modes: modes,
                category_pairs: vec![CategoryPair::new("a", "b")],
            }],
            instances_per_predicate: instances,
            relationships_per_image: 4,
            distractors_per_image: 0,
            negative_pair_fraction: 0.0,
            seed,
        }
    }
}

fn weighted_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

struct Draft {
    predicate: usize,
    mode: usize,
    category_pair: usize,
    subject_cat: usize,
    object_cat: usize,
    target: [f64; 4],
    /// Subject box size and object box relative offset/size.
    subject_hw: (f64, f64),
}

fn draw_instance(
    spec: &PredicateSpec,
    predicate: usize,
    cats: &Vocab,
    rng: &mut ChaCha8Rng,
) -> Result<Draft> {
    let mode = rng.random_range(0..spec.spatial_modes.len());
    let m = &spec.spatial_modes[mode];
    let weights: Vec<f64> = spec.category_pairs.iter().map(|c| c.weight).collect();
    let cp = weighted_index(rng, &weights);
    let noise = Normal::new(0.0, m.spread.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    for _ in 0..MAX_TRIES {
        let mut t = m.mean;
        if m.spread > 0.0 {
            for v in t.iter_mut() {
                *v += noise.sample(rng);
            }
        }
        if t[2] < MIN_RATIO || t[3] < MIN_RATIO {
            continue;
        }
        let h = rng.random_range(20.0..60.0);
        let w = h * m.aspect;
        let c = &spec.category_pairs[cp];
        return Ok(Draft {
            predicate,
            mode,
            category_pair: cp,
            subject_cat: cats.id(&c.subject).expect("validated"),
            object_cat: cats.id(&c.object).expect("validated"),
            target: t,
            subject_hw: (h, w),
        });
    }
    Err(Error::Numerical(format!(
        "could not realize a feasible box pair for {:?} mode {mode} after {MAX_TRIES} tries",
        spec.name
    )))
}

/// Builds the dataset and its ground-truth manifest. Output is a pure
/// function of `spec`.
pub fn generate(spec: &SynthSpec) -> Result<(SceneGraphDataset, Manifest)> {
    spec.validate()?;
    let cats = Vocab::new(spec.categories.clone())?;
    let preds = Vocab::new(spec.predicates.iter().map(|p| p.name.clone()))?;

    let mut drafts = Vec::with_capacity(spec.instances_per_predicate * spec.predicates.len());
    for (pi, p) in spec.predicates.iter().enumerate() {
        let mut rng = substream(spec.seed, "synth/predicate", pi as u64);
        for _ in 0..spec.instances_per_predicate {
            drafts.push(draw_instance(p, pi, &cats, &mut rng)?);
        }
    }
    let mut layout = substream(spec.seed, "synth/layout", 0);
    drafts.shuffle(&mut layout);

    let mut images = Vec::new();
    let mut instances = Vec::with_capacity(drafts.len());
    for (ii, chunk) in drafts.chunks(spec.relationships_per_image).enumerate() {
        let id = format!("synth{ii:05}");
        let mut objects = Vec::new();
        let mut relationships = Vec::new();
        let mut cursor_x = layout.random_range(0.0..20.0);
        for d in chunk {
            let (h, w) = d.subject_hw;
            let [dx, dy, hr, wr] = d.target;
            // subject at the origin, object placed to realize the target
            let (oy, ox) = (-dy * h, -dx * w);
            let (oh, ow) = (hr * h, wr * w);
            let min_y = oy.min(0.0);
            let min_x = ox.min(0.0);
            let shift_y = 5.0 + layout.random_range(0.0..30.0) - min_y;
            let shift_x = cursor_x - min_x;
            let sbox = BoundingBox::new(shift_y, shift_x, h, w)?;
            let obox = BoundingBox::new(oy + shift_y, ox + shift_x, oh, ow)?;
            cursor_x = (sbox.right()).max(obox.right()) + 10.0;
            let s = objects.len();
            objects.push(ObjectInstance {
                bbox: sbox,
                category: d.subject_cat,
            });
            objects.push(ObjectInstance {
                bbox: obox,
                category: d.object_cat,
            });
            relationships.push(Relationship {
                subject: s,
                object: s + 1,
                predicate: d.predicate,
            });
            instances.push(PlantedInstance {
                image_id: id.clone(),
                subject: s,
                object: s + 1,
                predicate: d.predicate,
                mode: d.mode,
                category_pair: d.category_pair,
                target: d.target,
            });
        }
        for _ in 0..spec.distractors_per_image {
            let h = layout.random_range(10.0..80.0);
            let w = layout.random_range(10.0..80.0);
            let y = layout.random_range(0.0..200.0);
            let x = layout.random_range(0.0..cursor_x.max(1.0));
            objects.push(ObjectInstance {
                bbox: BoundingBox::new(y, x, h, w)?,
                category: layout.random_range(0..cats.len()),
            });
        }
        images.push(ImageRecord {
            id,
            objects,
            relationships,
        });
    }
    let ds = SceneGraphDataset {
        categories: cats,
        predicates: preds,
        images,
    };
    ds.validate()?;
    let f = spec.negative_pair_fraction;
    let manifest = Manifest {
        seed: spec.seed,
        predicates: spec.predicates.iter().map(|p| p.name.clone()).collect(),
        predicate_counts: ds.predicate_counts(),
        modes_per_predicate: spec
            .predicates
            .iter()
            .map(|p| p.spatial_modes.len())
            .collect(),
        category_pairs_per_predicate: spec
            .predicates
            .iter()
            .map(|p| p.category_pairs.len())
            .collect(),
        negative_ratio: f / (1.0 - f),
        instances,
    };
    Ok((ds, manifest))
}
