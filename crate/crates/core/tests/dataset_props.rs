use std::collections::BTreeSet;

use proptest::prelude::*;
use relabel::dataset::{BoundingBox, ImageRecord, ObjectInstance, PairKey, Relationship, Vocab};
use relabel::synthgen::{generate, SynthSpec};
use relabel::{load_dataset, split_with, SceneGraphDataset, SplitConfig};

fn dataset_strategy() -> impl Strategy<Value = SceneGraphDataset> {
    let image = (2usize..6).prop_flat_map(|k| {
        (
            prop::collection::vec(
                (
                    0.0..500.0f64,
                    0.0..500.0f64,
                    0.1..200.0f64,
                    0.1..200.0f64,
                    0usize..4,
                ),
                k,
            ),
            prop::collection::vec((0..k, 0..k, 0usize..3), 0..6),
        )
    });
    prop::collection::vec(image, 1..8).prop_map(|imgs| SceneGraphDataset {
        categories: Vocab::new(["a", "b", "c", "d"]).unwrap(),
        predicates: Vocab::new(["on", "near", "has"]).unwrap(),
        images: imgs
            .into_iter()
            .enumerate()
            .map(|(i, (objs, rels))| ImageRecord {
                id: format!("img{i}"),
                objects: objs
                    .into_iter()
                    .map(|(y, x, h, w, c)| ObjectInstance {
                        bbox: BoundingBox::new(y, x, h, w).unwrap(),
                        category: c,
                    })
                    .collect(),
                relationships: rels
                    .into_iter()
                    .filter(|(s, o, _)| s != o)
                    .map(|(subject, object, predicate)| Relationship {
                        subject,
                        object,
                        predicate,
                    })
                    .collect(),
            })
            .collect(),
    })
}

proptest! {
    #[test]
    fn json_round_trip_is_exact(ds in dataset_strategy()) {
        let text = ds.to_json_string().unwrap();
        let back = SceneGraphDataset::from_json_str(&text).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(back.to_json_string().unwrap(), text);
    }
}

#[test]
fn file_round_trip() {
    let (ds, _) = generate(&SynthSpec::planted_modes(2, 10.0, 0.05, 40, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.json");
    ds.save(&path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), ds);
}

fn synth() -> SceneGraphDataset {
    let mut spec = SynthSpec::acceptance(9);
    spec.instances_per_predicate = 50;
    generate(&spec).unwrap().0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn split_invariants(n in 1usize..30, seed in any::<u64>(), holdout in 0.0..0.5f64, neg in 0.0..2.0f64) {
        let ds = synth();
        let cfg = SplitConfig { n, seed, holdout_fraction: holdout, negative_ratio: neg };
        let s = split_with(&ds, &cfg).unwrap();
        prop_assert_eq!(&s, &split_with(&ds, &cfg).unwrap());

        let holdout_images: BTreeSet<usize> = s.holdout_images.iter().copied().collect();
        prop_assert_eq!(holdout_images.len(), (holdout * ds.images.len() as f64).floor() as usize);
        let labeled: BTreeSet<PairKey> = s.pooled_labeled().map(|r| r.pair.key()).collect();
        for (p, rs) in s.labeled.iter().enumerate() {
            prop_assert!(rs.iter().all(|r| r.predicate == p));
            prop_assert!(rs.iter().all(|r| !holdout_images.contains(&r.pair.image_index)));
            let available = ds
                .images
                .iter()
                .enumerate()
                .filter(|(ii, _)| !holdout_images.contains(ii))
                .flat_map(|(_, im)| im.relationships.iter())
                .filter(|r| r.predicate == p)
                .count();
            prop_assert_eq!(rs.len(), n.min(available));
        }
        let keys: Vec<PairKey> = s.unlabeled.iter().map(|p| p.key()).collect();
        prop_assert!(keys.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(s.unlabeled_gold.len(), s.unlabeled.len());
        for k in &keys {
            prop_assert!(!labeled.contains(k));
            prop_assert!(!holdout_images.contains(&k.image));
        }
        prop_assert!(s.eval_holdout.iter().all(|r| holdout_images.contains(&r.pair.image_index)));
        let positives = s.unlabeled_gold.iter().filter(|g| !g.is_empty()).count();
        let negatives = s.unlabeled.len() - positives;
        prop_assert!(negatives as f64 <= (neg * positives as f64).round() + 1.0);
    }
}
