//! K-means partitioning of targets into vehicle clusters and single-linkage
//! merging of near-coincident targets.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{dist, Point, Target, TargetId};

pub const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clustering {
    pub k: usize,
    pub centroids: Vec<Point>,
    pub assignments: BTreeMap<TargetId, usize>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub wcss_history: Vec<f64>,
    pub converged: bool,
}

impl Clustering {
    pub fn members(&self, cluster: usize) -> Vec<TargetId> {
        self.assignments
            .iter()
            .filter(|(_, &c)| c == cluster)
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn cluster_of(&self, id: TargetId) -> Option<usize> {
        self.assignments.get(&id).copied()
    }

    /// Drops a target; its cluster keeps its centroid.
    pub fn remove(&mut self, id: TargetId) -> Option<usize> {
        self.assignments.remove(&id)
    }
}

fn nearest(centroids: &[Point], p: Point) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = dist(*c, p);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn wcss(points: &[Point], labels: &[usize], centroids: &[Point]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| {
            let d = *p - centroids[l];
            d.dot(d)
        })
        .sum()
}

fn plus_plus_seeds(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| (*p - centers[0]).dot(*p - centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut x = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if x < *w {
                    chosen = i;
                    break;
                }
                x -= w;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick];
        centers.push(c);
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min((*p - c).dot(*p - c));
        }
    }
    centers
}

/// Gives every empty cluster the point farthest from its own centroid,
/// taken from a cluster that can spare one.
fn repair_empty(points: &[Point], labels: &mut [usize], centroids: &mut [Point]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            if sizes[labels[i]] < 2 {
                continue;
            }
            let d = dist(*p, centroids[labels[i]]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let i = far.expect("k <= number of points leaves a cluster with two members");
        labels[i] = empty;
        centroids[empty] = points[i];
    }
}

fn update_centroids(points: &[Point], labels: &[usize], centroids: &mut [Point]) {
    let k = centroids.len();
    let mut sum = vec![Point::ORIGIN; k];
    let mut count = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        sum[l] = sum[l] + *p;
        count[l] += 1;
    }
    for c in 0..k {
        if count[c] > 0 {
            centroids[c] = sum[c] * (1.0 / count[c] as f64);
        }
    }
}

/// Lloyd's algorithm with k-means++ seeding. Targets are processed in id
/// order so the result depends only on the set and the seed.
pub fn kmeans(targets: &[Target], k: usize, seed: u64) -> Result<Clustering> {
    if targets.is_empty() {
        return Err(Error::invalid("k-means needs at least one target"));
    }
    if k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if k > targets.len() {
        return Err(Error::invalid(format!(
            "cannot form {k} nonempty clusters from {} targets",
            targets.len()
        )));
    }
    let mut sorted: Vec<&Target> = targets.iter().collect();
    sorted.sort_by_key(|t| t.id);
    if let Some(w) = sorted.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::DuplicateTarget(w[0].id));
    }
    let points: Vec<Point> = sorted.iter().map(|t| t.position).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(&points, k, &mut rng);
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(&centroids, *p)).collect();
    repair_empty(&points, &mut labels, &mut centroids);
    update_centroids(&points, &labels, &mut centroids);
    let mut history = vec![wcss(&points, &labels, &centroids)];
    let mut converged = false;
    for _ in 0..KMEANS_MAX_ITER {
        let mut next: Vec<usize> = points.iter().map(|p| nearest(&centroids, *p)).collect();
        repair_empty(&points, &mut next, &mut centroids);
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
        update_centroids(&points, &labels, &mut centroids);
        let w = wcss(&points, &labels, &centroids);
        debug_assert!(w <= history.last().unwrap() * (1.0 + 1e-12) + 1e-9, "k-means objective increased");
        history.push(w);
    }
    Ok(Clustering {
        k,
        centroids,
        assignments: sorted.iter().map(|t| t.id).zip(labels).collect(),
        wcss_history: history,
        converged,
    })
}

/// Puts `t` in the cluster with the nearest centroid without moving any
/// centroid. Ties go to the lowest cluster index.
pub fn absorb_target(c: &mut Clustering, t: &Target) -> Result<usize> {
    if c.centroids.is_empty() {
        return Err(Error::invalid("cannot absorb into an empty clustering"));
    }
    if c.assignments.contains_key(&t.id) {
        return Err(Error::DuplicateTarget(t.id));
    }
    let idx = nearest(&c.centroids, t.position);
    c.assignments.insert(t.id, idx);
    Ok(idx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergedTargetSet {
    pub representatives: Vec<Target>,
    /// Original id to representative id.
    pub merge_map: BTreeMap<TargetId, TargetId>,
}

impl MergedTargetSet {
    /// Original ids grouped by representative.
    pub fn groups(&self) -> BTreeMap<TargetId, Vec<TargetId>> {
        let mut out: BTreeMap<TargetId, Vec<TargetId>> = BTreeMap::new();
        for (&orig, &rep) in &self.merge_map {
            out.entry(rep).or_default().push(orig);
        }
        out
    }
}

/// Single-linkage agglomeration: targets closer than `merge_radius` end up
/// in one group, chained transitively. A group is represented by its lowest
/// id, placed at the centroid, with the largest member radius.
pub fn truncate_targets(targets: &[Target], merge_radius: f64) -> Result<MergedTargetSet> {
    if !(merge_radius >= 0.0) || !merge_radius.is_finite() {
        return Err(Error::invalid(format!("merge radius must be finite and >= 0, got {merge_radius}")));
    }
    let mut sorted: Vec<&Target> = targets.iter().collect();
    sorted.sort_by_key(|t| t.id);
    if let Some(w) = sorted.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::DuplicateTarget(w[0].id));
    }
    let n = sorted.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in 0..i {
            if dist(sorted[i].position, sorted[j].position) < merge_radius {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                // the lower index, hence lower id, stays the root
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                parent[hi] = lo;
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut representatives = Vec::with_capacity(groups.len());
    let mut merge_map = BTreeMap::new();
    for (root, members) in groups {
        let mut sum = Point::ORIGIN;
        let mut radius: f64 = 0.0;
        for &m in &members {
            sum = sum + sorted[m].position;
            radius = radius.max(sorted[m].loiter_radius);
            merge_map.insert(sorted[m].id, sorted[root].id);
        }
        let position = if members.len() == 1 {
            sorted[root].position
        } else {
            sum * (1.0 / members.len() as f64)
        };
        representatives.push(Target {
            id: sorted[root].id,
            position,
            loiter_radius: radius,
        });
    }
    Ok(MergedTargetSet {
        representatives,
        merge_map,
    })
}
