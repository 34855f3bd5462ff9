//! Global guidance: free-space roadmaps, clearance-penalized A*, and the
//! three-state known map accumulated from robot observations.
//!
//! The roadmap is an 8-connected lattice gated by clearance; planning on a
//! partially observed map filters that fixed roadmap (unknown treated as
//! free) and re-runs A*.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::grid::{line_of_sight, supercover_visit, DistanceField, GridMeta, TraversabilityMap};

/// Observation extents in the robot frame, matching the egocentric crop.
pub const OBS_X_MIN: f64 = -2.0;
pub const OBS_X_MAX: f64 = 4.0;
pub const OBS_Y_MIN: f64 = -2.0;
pub const OBS_Y_MAX: f64 = 2.0;

/// A* edge-cost parameters: w(e) = length + lambda * max(0, d_pref - d_min).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuideCost {
    /// Clearance penalty weight per meter of deficit.
    pub lambda: f64,
    /// Preferred clearance in meters.
    pub d_pref: f64,
}

impl Default for GuideCost {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            d_pref: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RoadmapEdge {
    pub a: usize,
    pub b: usize,
    /// Euclidean length in meters.
    pub length: f64,
    /// Minimum clearance along the straight segment, in meters.
    pub d_min: f64,
}

/// Free-space graph: lattice nodes with clearance-annotated 8-neighbor edges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Roadmap {
    pub nodes: Vec<[f64; 2]>,
    pub edges: Vec<RoadmapEdge>,
    /// Per-node list of (edge index, neighbor node).
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl Roadmap {
    pub fn node_position(&self, i: usize) -> Vector2<f64> {
        Vector2::new(self.nodes[i][0], self.nodes[i][1])
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    /// Index of the node nearest to a point, restricted to `keep` and to a
    /// maximum radius. Ties resolve to the lower index.
    pub fn nearest_node(
        &self,
        p: Vector2<f64>,
        radius: f64,
        keep: Option<&[bool]>,
    ) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (i, n) in self.nodes.iter().enumerate() {
            if keep.is_some_and(|k| !k[i]) {
                continue;
            }
            let d = (Vector2::new(n[0], n[1]) - p).norm();
            if d <= radius && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        best.map(|(_, i)| i)
    }
}

/// Waypoint path on the roadmap with its total edge cost.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<[f64; 2]>,
    pub node_indices: Vec<usize>,
    pub cost: f64,
}

impl Path {
    pub fn waypoint(&self, m: usize) -> Vector2<f64> {
        Vector2::new(self.waypoints[m][0], self.waypoints[m][1])
    }

    pub fn len_m(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| {
                let d = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
                (d.0 * d.0 + d.1 * d.1).sqrt()
            })
            .sum()
    }
}

/// Three-state observed map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellState {
    Free,
    Occupied,
    Unknown,
}

#[derive(Debug, Clone)]
pub struct KnownMap {
    pub meta: GridMeta,
    states: Vec<CellState>,
    /// Replan cadence in control steps.
    pub replan_interval: usize,
}

impl KnownMap {
    pub fn new(meta: GridMeta, replan_interval: usize) -> Self {
        assert!(replan_interval >= 1);
        Self {
            meta,
            states: vec![CellState::Unknown; meta.width * meta.height],
            replan_interval,
        }
    }

    pub fn state(&self, x: usize, y: usize) -> CellState {
        self.states[x + self.meta.width * y]
    }

    pub fn set_state(&mut self, x: usize, y: usize, s: CellState) {
        self.states[x + self.meta.width * y] = s;
    }

    pub fn unknown_count(&self) -> usize {
        self.states
            .iter()
            .filter(|&&s| s == CellState::Unknown)
            .count()
    }

    /// Line of sight treating Unknown optimistically as free.
    pub fn line_of_sight_optimistic(&self, a: Vector2<f64>, b: Vector2<f64>) -> Result<bool> {
        supercover_visit(&self.meta, a, b, |x, y| {
            self.state(x, y) != CellState::Occupied
        })
    }
}

/// Builds the lattice roadmap. Nodes sit on cell centers at the given
/// spacing and are kept where the clearance is at least `r_eff`; edges
/// connect 8-neighbor lattice nodes with line of sight.
pub fn build_roadmap(
    trav: &TraversabilityMap,
    dist: &DistanceField,
    spacing: f64,
    r_eff: f64,
) -> Result<Roadmap> {
    let meta = trav.meta;
    if spacing < meta.cell_size {
        return Err(Error::Domain(format!(
            "spacing {spacing} smaller than cell size {}",
            meta.cell_size
        )));
    }
    // Lattice pitch in whole cells; nodes at cell centers never sit on cell
    // boundaries, which keeps supercover queries unambiguous.
    let step = (spacing / meta.cell_size + 1e-9).floor() as usize;
    let nx = meta.width.div_ceil(step).max(1);
    let ny = meta.height.div_ceil(step).max(1);

    let mut nodes = Vec::new();
    let mut index = vec![usize::MAX; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let cx = i * step + step / 2;
            let cy = j * step + step / 2;
            if cx >= meta.width || cy >= meta.height {
                continue;
            }
            if dist.value(cx, cy) >= r_eff {
                index[i + nx * j] = nodes.len();
                let c = meta.center_of(cx, cy);
                nodes.push([c.x, c.y]);
            }
        }
    }

    let mut edges = Vec::new();
    let mut adjacency = vec![Vec::new(); nodes.len()];
    // Scan half the neighborhood so each undirected edge appears once.
    const HALF_NEIGHBORS: [(i64, i64); 4] = [(1, 0), (-1, 1), (0, 1), (1, 1)];
    for j in 0..ny {
        for i in 0..nx {
            let a = index[i + nx * j];
            if a == usize::MAX {
                continue;
            }
            for (di, dj) in HALF_NEIGHBORS {
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                if ni < 0 || nj < 0 || ni as usize >= nx || nj as usize >= ny {
                    continue;
                }
                let b = index[ni as usize + nx * nj as usize];
                if b == usize::MAX {
                    continue;
                }
                let pa = Vector2::new(nodes[a][0], nodes[a][1]);
                let pb = Vector2::new(nodes[b][0], nodes[b][1]);
                if !line_of_sight(trav, pa, pb)? {
                    continue;
                }
                let length = (pb - pa).norm();
                let d_min = edge_min_clearance(pa, pb, dist)?;
                let e = edges.len();
                edges.push(RoadmapEdge { a, b, length, d_min });
                adjacency[a].push((e, b));
                adjacency[b].push((e, a));
            }
        }
    }

    Ok(Roadmap {
        nodes,
        edges,
        adjacency,
    })
}

/// Minimum of the distance field along a segment, sampled no coarser than
/// one cell, endpoints included.
pub fn edge_min_clearance(
    a: Vector2<f64>,
    b: Vector2<f64>,
    dist: &DistanceField,
) -> Result<f64> {
    let len = (b - a).norm();
    let n = (len / dist.meta.cell_size).ceil().max(1.0) as usize;
    let mut min = f64::INFINITY;
    for i in 0..=n {
        let p = a + (b - a) * (i as f64 / n as f64);
        let d = dist
            .at_point(p)
            .ok_or(Error::OutOfBounds { x: p.x, y: p.y })?;
        min = min.min(d);
    }
    Ok(min)
}

/// w(e) = length + lambda * max(0, d_pref - d_min).
pub fn edge_cost(length: f64, d_min: f64, cost: &GuideCost) -> f64 {
    length + cost.lambda * (cost.d_pref - d_min).max(0.0)
}

#[derive(Debug, Clone, Copy)]
struct QueueEntry {
    f: f64,
    h: f64,
    node: usize,
}

// Min-heap order: lower f first, ties by lower h, then lower node index.
impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for QueueEntry {}
impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(other.h.total_cmp(&self.h))
            .then(other.node.cmp(&self.node))
    }
}

/// A* over the full roadmap. Returns `None` when the goal is unreachable.
pub fn astar(roadmap: &Roadmap, start: usize, goal: usize, cost: &GuideCost) -> Option<Path> {
    astar_filtered(roadmap, start, goal, cost, |_| true, |_| true)
}

/// A* restricted to nodes and edges accepted by the filters. The heuristic
/// is the Euclidean distance to the goal, admissible because every edge
/// costs at least its length.
pub fn astar_filtered(
    roadmap: &Roadmap,
    start: usize,
    goal: usize,
    cost: &GuideCost,
    node_ok: impl Fn(usize) -> bool,
    edge_ok: impl Fn(usize) -> bool,
) -> Option<Path> {
    let n = roadmap.nodes.len();
    if start >= n || goal >= n || !node_ok(start) || !node_ok(goal) {
        return None;
    }
    let goal_pos = roadmap.node_position(goal);
    let h = |i: usize| (roadmap.node_position(i) - goal_pos).norm();

    let mut g_score = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    g_score[start] = 0.0;
    heap.push(QueueEntry {
        f: h(start),
        h: h(start),
        node: start,
    });

    while let Some(QueueEntry { node, .. }) = heap.pop() {
        if closed[node] {
            continue;
        }
        closed[node] = true;
        if node == goal {
            break;
        }
        for &(e, nb) in roadmap.neighbors(node) {
            if closed[nb] || !node_ok(nb) || !edge_ok(e) {
                continue;
            }
            let edge = &roadmap.edges[e];
            let tentative = g_score[node] + edge_cost(edge.length, edge.d_min, cost);
            if tentative < g_score[nb] {
                g_score[nb] = tentative;
                parent[nb] = node;
                let hn = h(nb);
                heap.push(QueueEntry {
                    f: tentative + hn,
                    h: hn,
                    node: nb,
                });
            }
        }
    }

    if !closed[goal] {
        return None;
    }
    let mut node_indices = vec![goal];
    let mut cur = goal;
    while cur != start {
        cur = parent[cur];
        node_indices.push(cur);
    }
    node_indices.reverse();
    let waypoints = node_indices.iter().map(|&i| roadmap.nodes[i]).collect();
    Some(Path {
        waypoints,
        node_indices,
        cost: g_score[goal],
    })
}

/// Marks every world cell whose center falls inside the robot-frame
/// observation rectangle with its true Free/Occupied state.
pub fn integrate_observation(known: &mut KnownMap, pose: &Pose, world: &TraversabilityMap) {
    let meta = known.meta;
    // World-frame bounding box of the observation rectangle.
    let corners = [
        Vector2::new(OBS_X_MIN, OBS_Y_MIN),
        Vector2::new(OBS_X_MIN, OBS_Y_MAX),
        Vector2::new(OBS_X_MAX, OBS_Y_MIN),
        Vector2::new(OBS_X_MAX, OBS_Y_MAX),
    ]
    .map(|c| pose.to_world(c));
    let min_x = corners.iter().map(|c| c.x).fold(f64::INFINITY, f64::min);
    let max_x = corners.iter().map(|c| c.x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = corners.iter().map(|c| c.y).fold(f64::INFINITY, f64::min);
    let max_y = corners.iter().map(|c| c.y).fold(f64::NEG_INFINITY, f64::max);

    let x0 = (((min_x - meta.origin[0]) / meta.cell_size).floor().max(0.0)) as usize;
    let y0 = (((min_y - meta.origin[1]) / meta.cell_size).floor().max(0.0)) as usize;
    let x1 = ((((max_x - meta.origin[0]) / meta.cell_size).ceil()) as usize).min(meta.width);
    let y1 = ((((max_y - meta.origin[1]) / meta.cell_size).ceil()) as usize).min(meta.height);

    for y in y0..y1 {
        for x in x0..x1 {
            let local = pose.to_local(meta.center_of(x, y));
            if local.x >= OBS_X_MIN
                && local.x <= OBS_X_MAX
                && local.y >= OBS_Y_MIN
                && local.y <= OBS_Y_MAX
            {
                let s = if world.blocked(x, y) {
                    CellState::Occupied
                } else {
                    CellState::Free
                };
                known.set_state(x, y, s);
            }
        }
    }
}

/// Plans on the known map: roadmap nodes and edges touching Occupied cells
/// are dropped, Unknown is treated as free, and start/goal snap to the
/// nearest surviving nodes within `snap_radius`.
pub fn plan_guide(
    known: &KnownMap,
    roadmap: &Roadmap,
    start: Vector2<f64>,
    goal: Vector2<f64>,
    cost: &GuideCost,
    snap_radius: f64,
) -> Result<Option<Path>> {
    let meta = known.meta;
    let mut node_keep = vec![true; roadmap.nodes.len()];
    for (i, n) in roadmap.nodes.iter().enumerate() {
        match meta.cell_of(Vector2::new(n[0], n[1])) {
            Some((x, y)) => node_keep[i] = known.state(x, y) != CellState::Occupied,
            None => node_keep[i] = false,
        }
    }
    let mut edge_keep = vec![true; roadmap.edges.len()];
    for (e, edge) in roadmap.edges.iter().enumerate() {
        if !node_keep[edge.a] || !node_keep[edge.b] {
            edge_keep[e] = false;
            continue;
        }
        edge_keep[e] = known
            .line_of_sight_optimistic(roadmap.node_position(edge.a), roadmap.node_position(edge.b))?;
    }

    let Some(s) = roadmap.nearest_node(start, snap_radius, Some(&node_keep)) else {
        return Ok(None);
    };
    let Some(g) = roadmap.nearest_node(goal, snap_radius, Some(&node_keep)) else {
        return Ok(None);
    };
    Ok(astar_filtered(
        roadmap,
        s,
        g,
        cost,
        |i| node_keep[i],
        |e| edge_keep[e],
    ))
}

/// The farthest waypoint visible from the pose on the known map (unknown
/// treated as free); falls back to the nearest waypoint when none is
/// visible.
pub fn select_local_goal(path: &Path, pose: &Pose, known: &KnownMap) -> Result<Vector2<f64>> {
    let p = pose.position();
    for m in (0..path.waypoints.len()).rev() {
        if known.line_of_sight_optimistic(p, path.waypoint(m))? {
            return Ok(path.waypoint(m));
        }
    }
    let nearest = (0..path.waypoints.len())
        .min_by(|&a, &b| {
            (path.waypoint(a) - p)
                .norm()
                .total_cmp(&(path.waypoint(b) - p).norm())
        })
        .expect("path is non-empty");
    Ok(path.waypoint(nearest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::distance_field;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn open_map(w: usize, h: usize) -> (TraversabilityMap, DistanceField) {
        let meta = GridMeta::new(w, h, 1);
        let t = TraversabilityMap::new(meta);
        let d = distance_field(&t, 10.0).unwrap();
        (t, d)
    }

    fn random_map(rng: &mut StdRng, w: usize, h: usize, density: f64) -> (TraversabilityMap, DistanceField) {
        let meta = GridMeta::new(w, h, 1);
        let mut t = TraversabilityMap::new(meta);
        for y in 0..h {
            for x in 0..w {
                if rng.random_bool(density) {
                    t.set_blocked(x, y, true);
                }
            }
        }
        let d = distance_field(&t, 10.0).unwrap();
        (t, d)
    }

    #[test]
    fn roadmap_full_lattice_on_free_map() {
        // 10 m x 10 m free map at 0.2 m spacing: 50x50 nodes, all 8-connected.
        let (t, d) = open_map(200, 200);
        let rm = build_roadmap(&t, &d, 0.2, 0.3).unwrap();
        assert_eq!(rm.nodes.len(), 50 * 50);
        // Interior node degree 8; diagonal edge length 0.2 * sqrt(2).
        let diag = rm
            .edges
            .iter()
            .find(|e| (e.length - 0.2 * std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!(diag.is_some());
        let expected_edges = 49 * 50 * 2 + 49 * 49 * 2;
        assert_eq!(rm.edges.len(), expected_edges);
    }

    #[test]
    fn roadmap_spacing_below_cell_size_rejected() {
        let (t, d) = open_map(20, 20);
        assert!(build_roadmap(&t, &d, 0.01, 0.1).is_err());
    }

    #[test]
    fn roadmap_edges_respect_walls() {
        let meta = GridMeta::new(100, 100, 1);
        let mut t = TraversabilityMap::new(meta);
        for y in 0..100 {
            t.set_blocked(50, y, true);
        }
        let d = distance_field(&t, 10.0).unwrap();
        let rm = build_roadmap(&t, &d, 0.2, 0.1).unwrap();
        for e in &rm.edges {
            let (pa, pb) = (rm.node_position(e.a), rm.node_position(e.b));
            // No edge crosses the wall at x = 2.5 m.
            assert_eq!(
                (pa.x < 2.5) == (pb.x < 2.5),
                true,
                "edge {pa:?} -> {pb:?} crosses the wall"
            );
        }
    }

    #[test]
    fn roadmap_node_count_matches_clearance_oracle() {
        let mut rng = StdRng::seed_from_u64(21);
        let (t, d) = random_map(&mut rng, 120, 120, 0.05);
        let r_eff = 0.25;
        let rm = build_roadmap(&t, &d, 0.2, r_eff).unwrap();
        // Per-point oracle over the same lattice.
        let mut count = 0;
        for j in 0..30 {
            for i in 0..30 {
                let (cx, cy) = (i * 4 + 2, j * 4 + 2);
                if d.value(cx, cy) >= r_eff {
                    count += 1;
                }
            }
        }
        assert_eq!(rm.nodes.len(), count);
    }

    #[test]
    fn edge_min_clearance_cases() {
        let (_, d) = open_map(100, 100);
        let p = Vector2::new(1.0, 1.0);
        assert_eq!(edge_min_clearance(p, p, &d).unwrap(), 10.0);
        assert_eq!(
            edge_min_clearance(p, Vector2::new(3.0, 3.0), &d).unwrap(),
            10.0
        );

        let meta = GridMeta::new(100, 100, 1);
        let mut t = TraversabilityMap::new(meta);
        for y in 0..100 {
            t.set_blocked(60, y, true);
        }
        let d = distance_field(&t, 10.0).unwrap();
        // Segment 2 cells left of the wall: clearance from dense sampling.
        let a = Vector2::new(2.925, 1.0);
        let b = Vector2::new(2.925, 3.0);
        let got = edge_min_clearance(a, b, &d).unwrap();
        let mut oracle = f64::INFINITY;
        let n = ((b - a).norm() / 0.01).ceil() as usize;
        for i in 0..=n {
            let p = a + (b - a) * (i as f64 / n as f64);
            oracle = oracle.min(d.at_point(p).unwrap());
        }
        assert!((got - oracle).abs() <= meta.cell_size);
    }

    #[test]
    fn edge_cost_formula() {
        let c = GuideCost {
            lambda: 2.0,
            d_pref: 0.3,
        };
        assert_eq!(edge_cost(1.0, 0.5, &c), 1.0);
        assert_relative_eq!(edge_cost(1.0, 0.1, &c), 1.4);
        let zero = GuideCost {
            lambda: 0.0,
            d_pref: 0.3,
        };
        assert_eq!(edge_cost(2.0, 0.0, &zero), 2.0);
    }

    fn dijkstra_cost(rm: &Roadmap, start: usize, goal: usize, c: &GuideCost) -> Option<f64> {
        let n = rm.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        dist[start] = 0.0;
        for _ in 0..n {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for i in 0..n {
                if !done[i] && dist[i] < best {
                    best = dist[i];
                    u = i;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            for &(e, v) in rm.neighbors(u) {
                let edge = &rm.edges[e];
                let w = edge_cost(edge.length, edge.d_min, c);
                if dist[u] + w < dist[v] {
                    dist[v] = dist[u] + w;
                }
            }
        }
        dist[goal].is_finite().then_some(dist[goal])
    }

    #[test]
    fn astar_matches_dijkstra_on_random_maps() {
        let mut rng = StdRng::seed_from_u64(33);
        for trial in 0..20 {
            let (t, d) = random_map(&mut rng, 80, 80, 0.08);
            let rm = build_roadmap(&t, &d, 0.2, 0.15).unwrap();
            if rm.nodes.len() < 2 {
                continue;
            }
            let c = GuideCost {
                lambda: rng.random_range(0.0..4.0),
                d_pref: rng.random_range(0.0..0.6),
            };
            for _ in 0..5 {
                let s = rng.random_range(0..rm.nodes.len());
                let g = rng.random_range(0..rm.nodes.len());
                let got = astar(&rm, s, g, &c);
                let want = dijkstra_cost(&rm, s, g, &c);
                match (got, want) {
                    (None, None) => {}
                    (Some(p), Some(w)) => {
                        assert!(
                            (p.cost - w).abs() <= 1e-9 * w.max(1.0),
                            "trial {trial}: {} vs {}",
                            p.cost,
                            w
                        );
                    }
                    (a, b) => panic!("reachability mismatch: {:?} vs {:?}", a.map(|p| p.cost), b),
                }
            }
        }
    }

    #[test]
    fn astar_start_equals_goal() {
        let (t, d) = open_map(40, 40);
        let rm = build_roadmap(&t, &d, 0.2, 0.1).unwrap();
        let p = astar(&rm, 3, 3, &GuideCost::default()).unwrap();
        assert_eq!(p.node_indices, vec![3]);
        assert_eq!(p.cost, 0.0);
    }

    #[test]
    fn astar_unreachable_returns_none() {
        let meta = GridMeta::new(100, 40, 1);
        let mut t = TraversabilityMap::new(meta);
        for y in 0..40 {
            for x in 48..52 {
                t.set_blocked(x, y, true);
            }
        }
        let d = distance_field(&t, 10.0).unwrap();
        let rm = build_roadmap(&t, &d, 0.2, 0.1).unwrap();
        let left = rm
            .nearest_node(Vector2::new(0.5, 1.0), 1.0, None)
            .unwrap();
        let right = rm
            .nearest_node(Vector2::new(4.5, 1.0), 1.0, None)
            .unwrap();
        assert!(astar(&rm, left, right, &GuideCost::default()).is_none());
    }

    #[test]
    fn known_map_starts_unknown_and_observes() {
        let meta = GridMeta::new(200, 200, 1);
        let mut world = TraversabilityMap::new(meta);
        world.set_blocked(60, 100, true); // world (3.025, 5.025)
        let mut known = KnownMap::new(meta, 5);
        assert_eq!(known.unknown_count(), 200 * 200);

        let pose = Pose::new(0.0, 5.0, 0.0);
        integrate_observation(&mut known, &pose, &world);
        // Cell at world x = 3 m is inside the [-2, 4] m window.
        assert_eq!(known.state(60, 100), CellState::Occupied);
        // Cell at world x = 5 m is beyond it.
        assert_eq!(known.state(100, 100), CellState::Unknown);

        let before = known.clone();
        integrate_observation(&mut known, &pose, &world);
        for y in 0..200 {
            for x in 0..200 {
                assert_eq!(known.state(x, y), before.state(x, y));
            }
        }
    }

    #[test]
    fn observation_monotone_unknown_decrease() {
        let meta = GridMeta::new(100, 100, 1);
        let world = TraversabilityMap::new(meta);
        let mut known = KnownMap::new(meta, 5);
        let mut last = known.unknown_count();
        for i in 0..10 {
            let pose = Pose::new(0.3 * i as f64, 2.0, 0.3 * i as f64);
            integrate_observation(&mut known, &pose, &world);
            let now = known.unknown_count();
            assert!(now <= last);
            last = now;
        }
    }

    #[test]
    fn plan_guide_all_unknown_equals_full_astar() {
        let mut rng = StdRng::seed_from_u64(44);
        let mut nontrivial = 0;
        for _ in 0..10 {
            let (t, d) = random_map(&mut rng, 100, 100, 0.02);
            let rm = build_roadmap(&t, &d, 0.2, 0.15).unwrap();
            let known = KnownMap::new(t.meta, 5);
            let c = GuideCost::default();
            let start = Vector2::new(0.5, 0.5);
            let goal = Vector2::new(4.5, 4.5);
            let via_known = plan_guide(&known, &rm, start, goal, &c, 1.0).unwrap();
            let s = rm.nearest_node(start, 1.0, None).unwrap();
            let g = rm.nearest_node(goal, 1.0, None).unwrap();
            let full = astar(&rm, s, g, &c);
            match (via_known, full) {
                (Some(a), Some(b)) => {
                    assert_eq!(a.node_indices, b.node_indices);
                    assert_eq!(a.cost, b.cost);
                    nontrivial += 1;
                }
                (None, None) => {}
                (a, b) => panic!("mismatch: {:?} vs {:?}", a.is_some(), b.is_some()),
            }
        }
        assert!(nontrivial >= 5, "only {nontrivial} solvable instances");
    }

    #[test]
    fn plan_guide_avoids_observed_corridor() {
        // Ground truth: a wall with a gap; the known map sees the gap closed.
        let meta = GridMeta::new(100, 100, 1);
        let t = TraversabilityMap::new(meta);
        let d = distance_field(&t, 10.0).unwrap();
        let rm = build_roadmap(&t, &d, 0.2, 0.1).unwrap();
        let mut known = KnownMap::new(meta, 5);
        // Wall columns at x = 2.4..2.6 m with a 0.5 m gap near the top edge.
        for y in 0..100 {
            if !(90..100).contains(&y) {
                for x in 48..52 {
                    known.set_state(x, y, CellState::Occupied);
                }
            }
        }
        let c = GuideCost { lambda: 0.0, d_pref: 0.0 };
        let start = Vector2::new(1.0, 1.0);
        let goal = Vector2::new(4.0, 1.0);
        let path = plan_guide(&known, &rm, start, goal, &c, 1.0)
            .unwrap()
            .expect("detour through the gap exists");
        // The detour through the top gap is much longer than the straight line.
        assert!(path.cost > 3.0 + 4.0);
        // On the fully known (true, free) map the straight route is taken.
        let free_known = {
            let mut k = KnownMap::new(meta, 5);
            for y in 0..100 {
                for x in 0..100 {
                    k.set_state(x, y, CellState::Free);
                }
            }
            k
        };
        let free_path = plan_guide(&free_known, &rm, start, goal, &c, 1.0)
            .unwrap()
            .unwrap();
        assert!(free_path.cost < path.cost);
    }

    #[test]
    fn plan_guide_goal_in_occupied_region_is_nopath() {
        let meta = GridMeta::new(100, 100, 1);
        let t = TraversabilityMap::new(meta);
        let d = distance_field(&t, 10.0).unwrap();
        let rm = build_roadmap(&t, &d, 0.2, 0.1).unwrap();
        let mut known = KnownMap::new(meta, 5);
        // Occupy a 2.2 m disc of cells around the goal so no node survives
        // within the 1 m snap radius.
        let goal = Vector2::new(3.0, 3.0);
        for y in 0..100 {
            for x in 0..100 {
                if (meta.center_of(x, y) - goal).norm() < 1.1 {
                    known.set_state(x, y, CellState::Occupied);
                }
            }
        }
        let got = plan_guide(
            &known,
            &rm,
            Vector2::new(0.5, 0.5),
            goal,
            &GuideCost::default(),
            1.0,
        )
        .unwrap();
        assert!(got.is_none());
    }

    #[test]
    fn local_goal_farthest_visible() {
        let meta = GridMeta::new(100, 100, 1);
        let mut known = KnownMap::new(meta, 5);
        for y in 0..100 {
            for x in 0..100 {
                known.set_state(x, y, CellState::Free);
            }
        }
        let path = Path {
            waypoints: vec![[1.0, 1.0], [2.0, 1.0], [3.0, 1.0], [4.0, 1.0]],
            node_indices: vec![0, 1, 2, 3],
            cost: 3.0,
        };
        let pose = Pose::new(1.0, 1.0, 0.0);
        // All visible: the last waypoint wins.
        let g = select_local_goal(&path, &pose, &known).unwrap();
        assert_eq!((g.x, g.y), (4.0, 1.0));

        // A wall occludes everything beyond the second waypoint.
        for y in 0..100 {
            known.set_state(50, y, CellState::Occupied); // x = 2.5 m
        }
        let g = select_local_goal(&path, &pose, &known).unwrap();
        assert_eq!((g.x, g.y), (2.0, 1.0));
        // Oracle: scan waypoints with the LOS primitive directly.
        for (i, w) in path.waypoints.iter().enumerate() {
            let vis = known
                .line_of_sight_optimistic(pose.position(), Vector2::new(w[0], w[1]))
                .unwrap();
            assert_eq!(vis, i < 2, "waypoint {i}");
        }
    }

    #[test]
    fn local_goal_fallback_nearest() {
        let meta = GridMeta::new(100, 100, 1);
        let mut known = KnownMap::new(meta, 5);
        for y in 0..100 {
            for x in 0..100 {
                known.set_state(x, y, CellState::Free);
            }
        }
        // Box the pose in so nothing is visible.
        let pose = Pose::new(1.0, 1.0, 0.0);
        for (x, y) in [(19, 20), (21, 20), (20, 19), (20, 21), (19, 19), (21, 21), (19, 21), (21, 19)] {
            known.set_state(x, y, CellState::Occupied);
        }
        let path = Path {
            waypoints: vec![[4.0, 4.0], [2.0, 2.0], [3.0, 3.0]],
            node_indices: vec![0, 1, 2],
            cost: 0.0,
        };
        let g = select_local_goal(&path, &pose, &known).unwrap();
        assert_eq!((g.x, g.y), (2.0, 2.0));
    }

    #[test]
    fn local_goal_index_monotone_on_straight_approach() {
        let meta = GridMeta::new(200, 100, 1);
        let mut known = KnownMap::new(meta, 5);
        for y in 0..100 {
            for x in 0..200 {
                known.set_state(x, y, CellState::Free);
            }
        }
        // A wall with a window at x = 5 m: approaching the window along its
        // axis widens the visible wedge beyond it, so the farthest-visible
        // waypoint index must not regress.
        for y in 0..100 {
            if !(24..36).contains(&y) {
                known.set_state(100, y, CellState::Occupied);
            }
        }
        let path = Path {
            waypoints: (0..10).map(|k| [6.0, 1.51 + 0.25 * k as f64]).collect(),
            node_indices: (0..10).collect(),
            cost: 0.0,
        };
        let mut last = 0usize;
        for step in 0..=45 {
            let pose = Pose::new(0.3 + 0.1 * step as f64, 1.51, 0.0);
            let g = select_local_goal(&path, &pose, &known).unwrap();
            let idx = path
                .waypoints
                .iter()
                .position(|w| w[0] == g.x && w[1] == g.y)
                .unwrap();
            assert!(idx >= last, "index regressed at step {step}: {idx} < {last}");
            last = idx;
        }
        assert!(last >= 3, "wedge never widened: {last}");
    }
}
