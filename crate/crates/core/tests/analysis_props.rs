use approx::assert_relative_eq;
use proptest::prelude::*;
use relabel::analysis::{
    linear_fit_r2, mean_shift, predicate_instances, spatial_subtypes, MeanShiftConfig,
    SubtypeConfig,
};
use relabel::synthgen::{generate, SynthSpec};

fn clustered_points() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..4, 3usize..15).prop_flat_map(|(k, per)| {
        prop::collection::vec(prop::collection::vec(-0.3..0.3f64, 2), k * per).prop_map(
            move |noise| {
                noise
                    .into_iter()
                    .enumerate()
                    .map(|(i, e)| {
                        let c = (i / per) as f64 * 10.0;
                        vec![c + e[0], -c + e[1]]
                    })
                    .collect()
            },
        )
    })
}

fn sorted_modes(mut m: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    m.sort_by(|a, b| a.partial_cmp(b).unwrap());
    m
}

proptest! {
    #[test]
    fn mean_shift_ignores_point_order(pts in clustered_points(), rot in 0usize..100) {
        let cfg = MeanShiftConfig::default();
        let a = mean_shift(&pts, 1.5, &cfg).unwrap();
        let mut perm = pts.clone();
        let k = rot % perm.len();
        perm.rotate_left(k);
        perm.reverse();
        let b = mean_shift(&perm, 1.5, &cfg).unwrap();
        prop_assert_eq!(a.modes.len(), b.modes.len());
        for (x, y) in sorted_modes(a.modes).iter().zip(&sorted_modes(b.modes)) {
            for (u, v) in x.iter().zip(y) {
                assert_relative_eq!(u, v, epsilon = 1e-4);
            }
        }
    }

    #[test]
    fn mean_shift_finds_separated_clusters(pts in clustered_points()) {
        let r = mean_shift(&pts, 1.5, &MeanShiftConfig::default()).unwrap();
        let k = pts.iter().map(|p| (p[0] / 10.0).round() as i64).max().unwrap() + 1;
        prop_assert_eq!(r.modes.len() as i64, k);
        prop_assert_eq!(r.assignment.len(), pts.len());
    }

    #[test]
    fn r_squared_is_affine_invariant(
        pts in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 3..30),
        a in prop::sample::select(vec![-3.0, -0.5, 0.25, 2.0, 7.0]),
        b in -5.0..5.0f64,
        c in prop::sample::select(vec![-2.0, 0.5, 4.0]),
        d in -5.0..5.0f64,
    ) {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let sx = xs.iter().map(|x| (x - xs[0]).abs()).sum::<f64>();
        let sy = ys.iter().map(|y| (y - ys[0]).abs()).sum::<f64>();
        prop_assume!(sx > 1e-3 && sy > 1e-3);
        let f = linear_fit_r2(&xs, &ys).unwrap();
        let xs2: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let ys2: Vec<f64> = ys.iter().map(|y| c * y + d).collect();
        let g = linear_fit_r2(&xs2, &ys2).unwrap();
        assert_relative_eq!(f.r_squared, g.r_squared, epsilon = 1e-8);
        assert_relative_eq!(g.slope, f.slope * c / a, epsilon = 1e-8, max_relative = 1e-8);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&f.r_squared));
    }
}

#[test]
fn hand_computed_fit() {
    let f = linear_fit_r2(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0]).unwrap();
    assert_relative_eq!(f.slope, 0.5, epsilon = 1e-15);
    assert_relative_eq!(f.intercept, 2.0 / 3.0, epsilon = 1e-15);
    assert_relative_eq!(f.r_squared, 0.75, epsilon = 1e-15);
    let g = linear_fit_r2(&[1.0f32, 2.0, 3.0], &[1.0, 2.0, 2.0]).unwrap();
    assert_relative_eq!(g.r_squared, 0.75, epsilon = 1e-6);
}

#[test]
fn duplicating_instances_keeps_subtype_count() {
    let cfg = SubtypeConfig::default();
    for k in 1..=4 {
        let (ds, _) =
            generate(&SynthSpec::planted_modes(k, 10.0, 0.05, 200, 30 + k as u64)).unwrap();
        let inst = predicate_instances(&ds, 0);
        let once = spatial_subtypes(&inst, &cfg).unwrap();
        let twice: Vec<_> = inst.iter().chain(inst.iter()).cloned().collect();
        let dup = spatial_subtypes(&twice, &cfg).unwrap();
        assert_eq!(once.count, k);
        assert_eq!(dup.count, once.count);
        assert_relative_eq!(dup.bandwidth, once.bandwidth, max_relative = 1e-12);
    }
}

#[test]
fn subtype_count_ignores_instance_order() {
    let cfg = SubtypeConfig::default();
    let (ds, _) = generate(&SynthSpec::planted_modes(3, 10.0, 0.05, 240, 8)).unwrap();
    let inst = predicate_instances(&ds, 0);
    let mut rev = inst.clone();
    rev.reverse();
    assert_eq!(
        spatial_subtypes(&inst, &cfg).unwrap().count,
        spatial_subtypes(&rev, &cfg).unwrap().count
    );
}
