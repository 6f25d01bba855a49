use std::collections::BTreeSet;

use approx::assert_abs_diff_eq;
use loiterplan::clustering::{absorb_target, kmeans, truncate_targets};
use loiterplan::model::{Point, Target, TargetId};
use proptest::prelude::*;

fn t(id: u64, x: f64, y: f64) -> Target {
    Target::new(id, Point::new(x, y), 3.0)
}

fn wcss(groups: &[Vec<Point>]) -> f64 {
    groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| {
            let n = g.len() as f64;
            let c = Point::new(g.iter().map(|p| p.x).sum::<f64>() / n, g.iter().map(|p| p.y).sum::<f64>() / n);
            g.iter().map(|p| (*p - c).norm().powi(2)).sum::<f64>()
        })
        .sum()
}

#[test]
fn one_cluster_per_target() {
    let ts: Vec<Target> = (0..6).map(|i| t(i + 1, (i * 37 % 11) as f64 * 10.0, (i * i) as f64)).collect();
    let c = kmeans(&ts, 6, 3).unwrap();
    let clusters: BTreeSet<usize> = c.assignments.values().copied().collect();
    assert_eq!(clusters.len(), 6);
    for target in &ts {
        assert_eq!(c.centroids[c.cluster_of(target.id).unwrap()], target.position);
    }
    assert_eq!(*c.wcss_history.last().unwrap(), 0.0);
}

#[test]
fn single_cluster_centroid_is_mean() {
    let ts = [t(1, 0.0, 0.0), t(2, 10.0, 0.0), t(3, 2.0, 6.0)];
    let c = kmeans(&ts, 1, 0).unwrap();
    assert_abs_diff_eq!(c.centroids[0].x, 4.0, epsilon = 1e-12);
    assert_abs_diff_eq!(c.centroids[0].y, 2.0, epsilon = 1e-12);
}

#[test]
fn two_groups_match_exhaustive_partition() {
    let ts: Vec<Target> = [
        (0.0, 0.0),
        (12.0, 3.0),
        (5.0, -8.0),
        (-6.0, 4.0),
        (3.0, 9.0),
        (500.0, 480.0),
        (510.0, 470.0),
        (495.0, 505.0),
        (520.0, 490.0),
        (505.0, 515.0),
    ]
    .iter()
    .enumerate()
    .map(|(i, &(x, y))| t(i as u64 + 1, x, y))
    .collect();
    let n = ts.len();
    let (mut best, mut best_mask) = (f64::INFINITY, 0u32);
    for mask in 1..(1u32 << n) - 1 {
        let mut g = vec![Vec::new(), Vec::new()];
        for (i, target) in ts.iter().enumerate() {
            g[((mask >> i) & 1) as usize].push(target.position);
        }
        let w = wcss(&g);
        if w < best {
            (best, best_mask) = (w, mask);
        }
    }
    for seed in 0..20 {
        let c = kmeans(&ts, 2, seed).unwrap();
        let first = c.cluster_of(ts[0].id).unwrap();
        for (i, target) in ts.iter().enumerate() {
            let same_as_first = c.cluster_of(target.id).unwrap() == first;
            let oracle_same = (best_mask >> i) & 1 == best_mask & 1;
            assert_eq!(same_as_first, oracle_same, "seed {seed}, target {}", target.id);
        }
        assert_abs_diff_eq!(*c.wcss_history.last().unwrap(), best, epsilon = 1e-6 * best);
    }
}

#[test]
fn truncate_examples() {
    let ts = [t(1, 0.0, 0.0), t(2, 1.0, 0.0), t(3, 50.0, 0.0)];
    let same = truncate_targets(&ts, 0.0).unwrap();
    assert_eq!(same.representatives, ts.to_vec());

    let merged = truncate_targets(&ts, 2.0).unwrap();
    assert_eq!(merged.representatives.len(), 2);
    let rep = merged.representatives.iter().find(|r| r.id == TargetId(1)).unwrap();
    assert_eq!(rep.position, Point::new(0.5, 0.0));
    assert_eq!(merged.merge_map[&TargetId(2)], TargetId(1));

    let chain = [t(1, 0.0, 0.0), t(2, 1.5, 0.0), t(3, 3.0, 0.0)];
    let merged = truncate_targets(&chain, 2.0).unwrap();
    assert_eq!(merged.representatives.len(), 1);
    assert_eq!(merged.groups()[&TargetId(1)], vec![TargetId(1), TargetId(2), TargetId(3)]);
}

#[test]
fn absorb_examples() {
    let ts = [t(1, -10.0, 0.0), t(2, 10.0, 0.0), t(3, 0.0, 100.0)];
    let mut c = kmeans(&ts, 3, 1).unwrap();
    let at_centroid = c.centroids[2];
    assert_eq!(absorb_target(&mut c, &Target::new(10, at_centroid, 3.0)).unwrap(), 2);

    let left = c.cluster_of(TargetId(1)).unwrap();
    let right = c.cluster_of(TargetId(2)).unwrap();
    let got = absorb_target(&mut c, &t(11, 0.0, 0.0)).unwrap();
    assert_eq!(got, left.min(right));
    assert!(absorb_target(&mut c, &t(11, 5.0, 5.0)).is_err());
}

fn targets(min: usize, max: usize) -> impl Strategy<Value = Vec<Target>> {
    prop::collection::vec((-1000.0..1000.0f64, -1000.0..1000.0f64), min..=max)
        .prop_map(|v| v.into_iter().enumerate().map(|(i, (x, y))| t(i as u64 + 1, x, y)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lloyd_never_increases_wcss(ts in targets(2, 60), k in 1usize..8, seed: u64) {
        let k = k.min(ts.len());
        let c = kmeans(&ts, k, seed).unwrap();
        for w in c.wcss_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-9);
        }
        prop_assert_eq!(c.assignments.len(), ts.len());
        for cluster in 0..k {
            prop_assert!(!c.members(cluster).is_empty());
        }
        prop_assert_eq!(&c, &kmeans(&ts, k, seed).unwrap());
    }

    #[test]
    fn truncation_shrinks_and_partitions(ts in targets(1, 40), radius in 0.0..200.0f64) {
        let m = truncate_targets(&ts, radius).unwrap();
        prop_assert!(m.representatives.len() <= ts.len());
        let covered: Vec<TargetId> = m.groups().into_values().flatten().collect();
        let unique: BTreeSet<TargetId> = covered.iter().copied().collect();
        prop_assert_eq!(covered.len(), ts.len());
        prop_assert_eq!(unique.len(), ts.len());
        let identity = truncate_targets(&ts, 0.0).unwrap();
        prop_assert_eq!(identity.representatives, ts.clone());
    }

    #[test]
    fn absorb_only_adds(ts in targets(3, 30), k in 1usize..4, x in -1000.0..1000.0f64, y in -1000.0..1000.0f64) {
        let mut c = kmeans(&ts, k.min(ts.len()), 5).unwrap();
        let before = c.clone();
        let idx = absorb_target(&mut c, &t(10_000, x, y)).unwrap();
        prop_assert_eq!(c.centroids, before.centroids);
        prop_assert_eq!(c.assignments.len(), before.assignments.len() + 1);
        for (id, cl) in &before.assignments {
            prop_assert_eq!(c.assignments[id], *cl);
        }
        prop_assert_eq!(c.assignments[&TargetId(10_000)], idx);
    }
}
