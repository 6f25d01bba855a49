//! Single-cluster tours: Christofides on a metric, exhaustive search as an
//! oracle, and rotation of a cycle to a start point.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{dist, Point, Target, TargetId};

/// Largest node count accepted by [`brute_force_tsp`].
pub const BRUTE_FORCE_LIMIT: usize = 12;

/// Largest odd-vertex set matched exactly.
pub const EXACT_MATCHING_LIMIT: usize = 16;

const METRIC_TOL: f64 = 1e-9;

/// Complete graph with a symmetric distance table. Node `i` of the table is
/// `ids[i]`; ids are kept sorted so index order is id order.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricGraph {
    ids: Vec<TargetId>,
    dist: Vec<f64>,
}

impl MetricGraph {
    /// Builds a graph from an explicit table, checking it is a metric.
    pub fn new(ids: Vec<TargetId>, table: Vec<Vec<f64>>) -> Result<Self> {
        let n = ids.len();
        if table.len() != n || table.iter().any(|row| row.len() != n) {
            return Err(Error::invalid("distance table shape does not match node count"));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| ids[i]);
        if order.windows(2).any(|w| ids[w[0]] == ids[w[1]]) {
            let dup = order.windows(2).find(|w| ids[w[0]] == ids[w[1]]).unwrap()[0];
            return Err(Error::DuplicateTarget(ids[dup]));
        }
        let mut d = vec![0.0; n * n];
        for (a, &i) in order.iter().enumerate() {
            for (b, &j) in order.iter().enumerate() {
                d[a * n + b] = table[i][j];
            }
        }
        let g = MetricGraph {
            ids: order.iter().map(|&i| ids[i]).collect(),
            dist: d,
        };
        g.check_metric()?;
        Ok(g)
    }

    /// Euclidean graph over target centers. Euclidean distances are a metric
    /// by construction so the cubic triangle check is skipped.
    pub fn from_targets<'a>(targets: impl IntoIterator<Item = &'a Target>) -> Result<Self> {
        let mut pts: Vec<(TargetId, Point)> = targets.into_iter().map(|t| (t.id, t.position)).collect();
        pts.sort_by_key(|p| p.0);
        if let Some(w) = pts.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicateTarget(w[0].0));
        }
        if pts.iter().any(|p| !p.1.is_finite()) {
            return Err(Error::invalid("non-finite target position"));
        }
        let n = pts.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                let v = dist(pts[i].1, pts[j].1);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Ok(MetricGraph {
            ids: pts.into_iter().map(|p| p.0).collect(),
            dist: d,
        })
    }

    fn check_metric(&self) -> Result<()> {
        let n = self.len();
        for i in 0..n {
            if self.d(i, i) != 0.0 {
                return Err(Error::NonMetric(format!("nonzero diagonal at {}", self.ids[i])));
            }
            for j in 0..n {
                let v = self.d(i, j);
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::NonMetric(format!("bad distance {v} between {} and {}", self.ids[i], self.ids[j])));
                }
                if v != self.d(j, i) {
                    return Err(Error::NonMetric(format!("asymmetric between {} and {}", self.ids[i], self.ids[j])));
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let scale = 1.0 + self.d(i, k).max(self.d(i, j) + self.d(j, k));
                    if self.d(i, k) > self.d(i, j) + self.d(j, k) + METRIC_TOL * scale {
                        return Err(Error::NonMetric(format!(
                            "triangle inequality fails for {}, {}, {}",
                            self.ids[i], self.ids[j], self.ids[k]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[TargetId] {
        &self.ids
    }

    fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.len() + j]
    }

    fn index_of(&self, id: TargetId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    /// Closed-cycle length of a sequence of node ids.
    pub fn cycle_length(&self, cycle: &[TargetId]) -> Result<f64> {
        let idx: Vec<usize> = cycle
            .iter()
            .map(|&id| self.index_of(id).ok_or(Error::UnknownTarget(id)))
            .collect::<Result<_>>()?;
        Ok(cycle_len_idx(self, &idx))
    }
}

fn cycle_len_idx(g: &MetricGraph, idx: &[usize]) -> f64 {
    if idx.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for w in idx.windows(2) {
        total += g.d(w[0], w[1]);
    }
    total + g.d(idx[idx.len() - 1], idx[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchingKind {
    /// No odd-degree vertices needed matching.
    None,
    Exact,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChristofidesTour {
    pub cycle: Vec<TargetId>,
    pub length: f64,
    pub matching: MatchingKind,
}

/// Prim's algorithm; returns the parent of every non-root node.
fn prim(g: &MetricGraph) -> Vec<(usize, usize)> {
    let n = g.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    best[0] = 0.0;
    for _ in 0..n {
        // strict comparison picks the lowest index among equal keys
        let mut u = usize::MAX;
        for v in 0..n {
            if !in_tree[v] && (u == usize::MAX || best[v] < best[u]) {
                u = v;
            }
        }
        in_tree[u] = true;
        if parent[u] != usize::MAX {
            edges.push((parent[u], u));
        }
        for v in 0..n {
            if !in_tree[v] && g.d(u, v) < best[v] {
                best[v] = g.d(u, v);
                parent[v] = u;
            }
        }
    }
    edges
}

/// Minimum-weight perfect matching over `nodes` by DP on subsets, always
/// pairing the lowest unmatched node first.
fn exact_matching(g: &MetricGraph, nodes: &[usize]) -> Vec<(usize, usize)> {
    let k = nodes.len();
    let full = (1usize << k) - 1;
    let mut cost = vec![f64::INFINITY; 1 << k];
    let mut choice = vec![0usize; 1 << k];
    cost[0] = 0.0;
    // cost[mask] = best matching of the nodes in mask
    for mask in 1..=full {
        if mask.count_ones() % 2 == 1 {
            continue;
        }
        let i = mask.trailing_zeros() as usize;
        let rest = mask & !(1 << i);
        let mut bits = rest;
        while bits != 0 {
            let j = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            let c = g.d(nodes[i], nodes[j]) + cost[rest & !(1 << j)];
            if c < cost[mask] {
                cost[mask] = c;
                choice[mask] = j;
            }
        }
    }
    let mut pairs = Vec::with_capacity(k / 2);
    let mut mask = full;
    while mask != 0 {
        let i = mask.trailing_zeros() as usize;
        let j = choice[mask];
        pairs.push((nodes[i], nodes[j]));
        mask &= !(1 << i) & !(1 << j);
    }
    pairs
}

/// Repeatedly pairs the closest remaining two nodes.
fn greedy_matching(g: &MetricGraph, nodes: &[usize]) -> Vec<(usize, usize)> {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (a, &i) in nodes.iter().enumerate() {
        for &j in &nodes[a + 1..] {
            cand.push((g.d(i, j), i, j));
        }
    }
    cand.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used = vec![false; g.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in cand {
        if !used[i] && !used[j] {
            used[i] = true;
            used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

/// Euler circuit by Hierholzer's algorithm from node 0, always leaving by the
/// lowest-numbered unused edge.
fn euler_circuit(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (e, &(a, b)) in edges.iter().enumerate() {
        adj[a].push((b, e));
        adj[b].push((a, e));
    }
    for list in &mut adj {
        list.sort_unstable();
        list.reverse();
    }
    let mut used = vec![false; edges.len()];
    let mut stack = vec![0usize];
    let mut circuit = Vec::with_capacity(edges.len() + 1);
    while let Some(&v) = stack.last() {
        while adj[v].last().is_some_and(|&(_, e)| used[e]) {
            adj[v].pop();
        }
        match adj[v].pop() {
            Some((w, e)) => {
                used[e] = true;
                stack.push(w);
            }
            None => {
                circuit.push(v);
                stack.pop();
            }
        }
    }
    circuit.reverse();
    circuit
}

/// Christofides' algorithm. The 3/2 guarantee holds when the odd vertices
/// were matched exactly, which the result records.
pub fn christofides(g: &MetricGraph) -> Result<ChristofidesTour> {
    let n = g.len();
    if n == 0 {
        return Err(Error::invalid("christofides needs at least one node"));
    }
    if n <= 3 {
        let cycle = g.ids.clone();
        let length = cycle_len_idx(g, &(0..n).collect::<Vec<_>>());
        return Ok(ChristofidesTour {
            cycle,
            length,
            matching: MatchingKind::None,
        });
    }
    let mut edges = prim(g);
    let mut degree = vec![0usize; n];
    for &(a, b) in &edges {
        degree[a] += 1;
        degree[b] += 1;
    }
    let odd: Vec<usize> = (0..n).filter(|&v| degree[v] % 2 == 1).collect();
    let (pairs, matching) = if odd.is_empty() {
        (Vec::new(), MatchingKind::None)
    } else if odd.len() <= EXACT_MATCHING_LIMIT {
        (exact_matching(g, &odd), MatchingKind::Exact)
    } else {
        (greedy_matching(g, &odd), MatchingKind::Greedy)
    };
    edges.extend(pairs);
    let circuit = euler_circuit(n, &edges);
    let mut seen = vec![false; n];
    let order: Vec<usize> = circuit
        .into_iter()
        .filter(|&v| !std::mem::replace(&mut seen[v], true))
        .collect();
    debug_assert_eq!(order.len(), n);
    Ok(ChristofidesTour {
        length: cycle_len_idx(g, &order),
        cycle: order.into_iter().map(|i| g.ids[i]).collect(),
        matching,
    })
}

/// Optimal cycle by exhaustive search with the first node fixed.
pub fn brute_force_tsp(g: &MetricGraph) -> Result<(Vec<TargetId>, f64)> {
    let n = g.len();
    if n == 0 {
        return Err(Error::invalid("brute force needs at least one node"));
    }
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooManyNodes {
            nodes: n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    struct Search<'a> {
        g: &'a MetricGraph,
        path: Vec<usize>,
        used: Vec<bool>,
        best: f64,
        best_path: Vec<usize>,
    }
    impl Search<'_> {
        fn go(&mut self, len: f64) {
            let n = self.g.len();
            let last = *self.path.last().unwrap();
            if self.path.len() == n {
                let total = len + self.g.d(last, 0);
                if total < self.best {
                    self.best = total;
                    self.best_path.clone_from(&self.path);
                }
                return;
            }
            for v in 1..n {
                if self.used[v] {
                    continue;
                }
                let next = len + self.g.d(last, v);
                if next >= self.best {
                    continue;
                }
                self.used[v] = true;
                self.path.push(v);
                self.go(next);
                self.path.pop();
                self.used[v] = false;
            }
        }
    }
    let mut s = Search {
        g,
        path: vec![0],
        used: vec![false; n],
        best: f64::INFINITY,
        best_path: Vec::new(),
    };
    s.used[0] = true;
    s.go(0.0);
    let length = if n == 1 { 0.0 } else { s.best };
    let path = if n == 1 { vec![0] } else { s.best_path };
    Ok((path.into_iter().map(|i| g.ids[i]).collect(), length))
}

/// Rotates `cycle` so the node closest to `anchor` comes first; ties go to
/// the lowest id.
pub fn rotate_tour_to_nearest(
    cycle: &[TargetId],
    anchor: Point,
    position: impl Fn(TargetId) -> Result<Point>,
) -> Result<Vec<TargetId>> {
    let mut best: Option<(f64, TargetId, usize)> = None;
    for (i, &id) in cycle.iter().enumerate() {
        let d = dist(position(id)?, anchor);
        let better = match best {
            None => true,
            Some((bd, bid, _)) => d < bd || (d == bd && id < bid),
        };
        if better {
            best = Some((d, id, i));
        }
    }
    let Some((_, _, start)) = best else {
        return Ok(Vec::new());
    };
    let mut out = cycle.to_vec();
    out.rotate_left(start);
    Ok(out)
}
