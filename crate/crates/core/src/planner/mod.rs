//! Risk-weighted 26-connected voxel graph and deterministic shortest paths.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;

use crate::error::{Endpoint, Error, Result};
use crate::voxgrid::{GridMeta, Voxel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphParams {
    /// Minimum score of a traversable voxel.
    pub tau: f64,
    /// Weight of the risk term against path length.
    pub lambda: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self { tau: 0.05, lambda: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub to: u32,
    pub cost: f64,
}

/// Directed graph over traversable voxels. Nodes are sorted, so node order
/// is coordinate order.
#[derive(Debug, Clone, PartialEq)]
pub struct TravGraph {
    pub meta: GridMeta,
    pub params: GraphParams,
    pub nodes: Vec<Voxel>,
    pub scores: Vec<f64>,
    pub edges: Vec<Vec<Edge>>,
}

fn neighbor_offsets() -> impl Iterator<Item = (i32, i32, i32)> {
    (-1..=1).flat_map(|a| (-1..=1).flat_map(move |b| (-1..=1).map(move |c| (a, b, c)))).filter(|&o| o != (0, 0, 0))
}

/// Cost of stepping onto a voxel of score `score_to` along offset `d`.
pub fn edge_cost(resolution: f64, d: (i32, i32, i32), score_to: f64, lambda: f64) -> f64 {
    let n2 = (d.0 * d.0 + d.1 * d.1 + d.2 * d.2) as f64;
    resolution * n2.sqrt() + lambda * (1.0 - score_to)
}

pub fn build_graph(scores: &BTreeMap<Voxel, f64>, meta: &GridMeta, params: GraphParams) -> Result<TravGraph> {
    if !(params.lambda >= 0.0 && params.lambda.is_finite()) {
        return Err(Error::usage(format!("lambda must be finite and >= 0, got {}", params.lambda)));
    }
    if !params.tau.is_finite() {
        return Err(Error::usage("tau must be finite"));
    }
    let (nodes, sc): (Vec<Voxel>, Vec<f64>) = scores.iter().filter(|(_, &s)| s >= params.tau).map(|(v, &s)| (*v, s)).unzip();
    let index: BTreeMap<Voxel, u32> = nodes.iter().enumerate().map(|(i, v)| (*v, i as u32)).collect();
    let edges = nodes
        .iter()
        .map(|v| {
            neighbor_offsets()
                .filter_map(|d| {
                    let to = *index.get(&v.offset(d.0, d.1, d.2))?;
                    Some(Edge {
                        to,
                        cost: edge_cost(meta.resolution, d, sc[to as usize], params.lambda),
                    })
                })
                .collect()
        })
        .collect();
    Ok(TravGraph {
        meta: *meta,
        params,
        nodes,
        scores: sc,
        edges,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPath {
    pub voxels: Vec<Voxel>,
    /// Frame coordinates of the voxel centers.
    pub points: Vec<[f64; 3]>,
    /// Cost of the edge entering each voxel after the first.
    pub step_costs: Vec<f64>,
    pub total: f64,
    /// Sum of `resolution * |offset|` over the steps.
    pub length: f64,
    /// Sum of `1 - score` over the voxels entered.
    pub risk: f64,
}

#[derive(PartialEq)]
struct Key(f64, u32);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl TravGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn node(&self, v: Voxel) -> Option<u32> {
        self.nodes.binary_search(&v).ok().map(|i| i as u32)
    }

    /// Node closest to a frame point; ties go to the smaller coordinate.
    pub fn nearest_node(&self, p: [f64; 3]) -> Option<Voxel> {
        let d2 = |v: &Voxel| {
            let c = self.meta.center_unchecked(*v);
            (0..3).map(|a| (c[a] - p[a]) * (c[a] - p[a])).sum::<f64>()
        };
        self.nodes.iter().min_by(|a, b| d2(a).total_cmp(&d2(b)).then(a.cmp(b))).copied()
    }

    /// Minimum-cost path. Among equal-cost predecessors the smallest
    /// coordinate wins, so the result is unique.
    pub fn dijkstra(&self, start: Voxel, goal: Voxel) -> Result<Option<PlannedPath>> {
        let s = self.node(start).ok_or(Error::NotTraversable(Endpoint::Start))?;
        let g = self.node(goal).ok_or(Error::NotTraversable(Endpoint::Goal))?;
        let n = self.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![u32::MAX; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[s as usize] = 0.0;
        heap.push(Reverse(Key(0.0, s)));
        while let Some(Reverse(Key(d, u))) = heap.pop() {
            if done[u as usize] {
                continue;
            }
            done[u as usize] = true;
            if u == g {
                break;
            }
            for e in &self.edges[u as usize] {
                let t = e.to as usize;
                if done[t] {
                    continue;
                }
                let nd = d + e.cost;
                if nd < dist[t] || (nd == dist[t] && u < pred[t]) {
                    if nd < dist[t] {
                        heap.push(Reverse(Key(nd, e.to)));
                    }
                    dist[t] = nd;
                    pred[t] = u;
                }
            }
        }
        if !done[g as usize] {
            return Ok(None);
        }
        let mut chain = vec![g];
        while *chain.last().unwrap() != s {
            chain.push(pred[*chain.last().unwrap() as usize]);
        }
        chain.reverse();
        Ok(Some(self.path_of(&chain, dist[g as usize])))
    }

    fn path_of(&self, chain: &[u32], total: f64) -> PlannedPath {
        let voxels: Vec<Voxel> = chain.iter().map(|&i| self.nodes[i as usize]).collect();
        let mut step_costs = Vec::new();
        let (mut length, mut risk) = (0.0, 0.0);
        for w in chain.windows(2) {
            let (a, b) = (self.nodes[w[0] as usize], self.nodes[w[1] as usize]);
            let d = (b.i - a.i, b.j - a.j, b.k - a.k);
            let sb = self.scores[w[1] as usize];
            step_costs.push(edge_cost(self.meta.resolution, d, sb, self.params.lambda));
            length += edge_cost(self.meta.resolution, d, 1.0, 0.0);
            risk += 1.0 - sb;
        }
        PlannedPath {
            points: voxels.iter().map(|v| self.meta.center_unchecked(*v)).collect(),
            voxels,
            step_costs,
            total,
            length,
            risk,
        }
    }
}

/// Text rendering of a path: one `x y z step_cost` line per point in the
/// given coordinates, then totals.
pub fn format_path(path: &PlannedPath, points: &[[f64; 3]]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# x y z step_cost");
    for (i, p) in points.iter().enumerate() {
        let c = if i == 0 { 0.0 } else { path.step_costs[i - 1] };
        let _ = writeln!(s, "{:.6} {:.6} {:.6} {:.6}", p[0], p[1], p[2], c);
    }
    let _ = writeln!(s, "total_cost={:.6}", path.total);
    let _ = writeln!(s, "length={:.6}", path.length);
    let _ = writeln!(s, "risk={:.6}", path.risk);
    let _ = writeln!(s, "steps={}", path.step_costs.len());
    s
}
