//! Undirected road graphs, point/segment geometry, rasterization and the
//! JSON graph file format.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An undirected graph embedded in the image plane.
///
/// Coordinates are in pixels with pixel centers at integer positions.
/// `size` is the optional `(width, height)` canvas the graph belongs to.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoadGraph {
    pub nodes: Vec<[f64; 2]>,
    pub edges: Vec<(usize, usize)>,
    pub size: Option<(u32, u32)>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<[f64; 2]>,
    edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    size: Option<[u32; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub total: usize,
}

impl RoadGraph {
    /// Builds and validates a graph without a declared canvas.
    pub fn new(nodes: Vec<[f64; 2]>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let g = Self { nodes, edges, size: None };
        g.validate()?;
        Ok(g)
    }

    /// Builds a graph from raw edges, dropping self-loops and repeated
    /// edges (first occurrence wins).
    pub fn from_raw_edges(nodes: Vec<[f64; 2]>, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut seen = HashSet::new();
        let edges = edges
            .into_iter()
            .filter(|&(a, b)| a != b && seen.insert(edge_key(a, b)))
            .collect();
        Self { nodes, edges, size: None }
    }

    pub fn with_size(mut self, width: u32, height: u32) -> Self {
        self.size = Some((width, height));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Checks every structural invariant, naming the first offending item.
    pub fn validate(&self) -> Result<()> {
        for (k, p) in self.nodes.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::InvalidGraph(format!("node {k} has non-finite coordinates {p:?}")));
            }
            if let Some((w, h)) = self.size {
                if p[0] < 0.0 || p[1] < 0.0 || p[0] >= w as f64 || p[1] >= h as f64 {
                    return Err(Error::InvalidGraph(format!("node {k} at {p:?} lies outside the {w}x{h} canvas")));
                }
            }
        }
        let mut seen = HashSet::with_capacity(self.edges.len());
        for (k, &(a, b)) in self.edges.iter().enumerate() {
            if a >= self.nodes.len() || b >= self.nodes.len() {
                return Err(Error::InvalidGraph(format!(
                    "edge {k} ({a}, {b}) references a node index out of range (graph has {} nodes)",
                    self.nodes.len()
                )));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("edge {k} ({a}, {b}) is a self-loop")));
            }
            if !seen.insert(edge_key(a, b)) {
                return Err(Error::InvalidGraph(format!("edge {k} ({a}, {b}) is a duplicate")));
            }
        }
        Ok(())
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.nodes.len()];
        for &(a, b) in &self.edges {
            d[a] += 1;
            d[b] += 1;
        }
        d
    }

    /// Neighbor lists with Euclidean edge lengths.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            let len = dist(self.nodes[a], self.nodes[b]);
            adj[a].push((b, len));
            adj[b].push((a, len));
        }
        adj
    }

    /// Set of edges as `(min, max)` pairs.
    pub fn edge_set(&self) -> HashSet<(usize, usize)> {
        self.edges.iter().map(|&(a, b)| edge_key(a, b)).collect()
    }

    pub fn stats(&self) -> GraphStats {
        graph_stats(self)
    }

    /// Disjoint union; the second graph's indices are shifted.
    pub fn disjoint_union(&self, other: &RoadGraph) -> RoadGraph {
        let shift = self.nodes.len();
        let mut nodes = self.nodes.clone();
        nodes.extend_from_slice(&other.nodes);
        let mut edges = self.edges.clone();
        edges.extend(other.edges.iter().map(|&(a, b)| (a + shift, b + shift)));
        RoadGraph { nodes, edges, size: self.size }
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            nodes: self.nodes.clone(),
            edges: self.edges.iter().map(|&(a, b)| [a, b]).collect(),
            size: self.size.map(|(w, h)| [w, h]),
        };
        serde_json::to_string(&file).expect("graph serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::parse(text, Path::new("<memory>"))
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let g = RoadGraph {
            nodes: file.nodes,
            edges: file.edges.into_iter().map(|[a, b]| (a, b)).collect(),
            size: file.size.map(|[w, h]| (w, h)),
        };
        g.validate()?;
        Ok(g)
    }
}

pub fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Closest point on segment `ab` to `p`, as the segment parameter `t ∈ [0,1]`
/// and the distance.
pub fn project_on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    let q = [a[0] + t * dx, a[1] + t * dy];
    (t, dist(p, q))
}

pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    project_on_segment(p, a, b).1
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<RoadGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RoadGraph::parse(&text, path)
}

pub fn save_graph(graph: &RoadGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    graph.validate()?;
    fs::write(path, graph.to_json()).map_err(|e| Error::io(path, e))
}

/// A binary raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RasterMask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u8>,
}

impl RasterMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.values[y * self.width + x] != 0
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }
}

/// Marks every pixel whose center lies within `line_width / 2` of an edge.
pub fn rasterize(graph: &RoadGraph, width: usize, height: usize, line_width: f64) -> RasterMask {
    let mut mask = RasterMask::zeros(width, height);
    if width == 0 || height == 0 {
        return mask;
    }
    let r = line_width / 2.0;
    for &(i, j) in &graph.edges {
        let (a, b) = (graph.nodes[i], graph.nodes[j]);
        let x0 = (a[0].min(b[0]) - r).floor().max(0.0) as usize;
        let y0 = (a[1].min(b[1]) - r).floor().max(0.0) as usize;
        let x1 = ((a[0].max(b[0]) + r).ceil().max(0.0) as usize).min(width - 1);
        let y1 = ((a[1].max(b[1]) + r).ceil().max(0.0) as usize).min(height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if point_segment_distance([x as f64, y as f64], a, b) <= r {
                    mask.values[y * width + x] = 1;
                }
            }
        }
    }
    mask
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.0[hi] = lo;
        true
    }
}

/// Single-linkage clustering of nodes closer than `radius`, each cluster
/// replaced by its centroid. Clustering is repeated until no two centroids
/// are within `radius`, so the result is stable under a second call.
pub fn merge_nearby_nodes(graph: &RoadGraph, radius: f64) -> RoadGraph {
    merge_nearby_nodes_with_map(graph, radius).0
}

/// As [`merge_nearby_nodes`], also returning the output node of every input node.
pub fn merge_nearby_nodes_with_map(graph: &RoadGraph, radius: f64) -> (RoadGraph, Vec<usize>) {
    let mut positions = graph.nodes.clone();
    let mut weights = vec![1.0; positions.len()];
    let mut mapping: Vec<usize> = (0..positions.len()).collect();
    loop {
        let n = positions.len();
        let mut uf = UnionFind::new(n);
        let mut merged = false;
        for i in 0..n {
            for j in i + 1..n {
                if dist(positions[i], positions[j]) <= radius {
                    merged |= uf.union(i, j);
                }
            }
        }
        if !merged {
            break;
        }
        let mut cluster_of = vec![usize::MAX; n];
        let mut sums: Vec<[f64; 3]> = Vec::new();
        for i in 0..n {
            let root = uf.find(i);
            if cluster_of[root] == usize::MAX {
                cluster_of[root] = sums.len();
                sums.push([0.0; 3]);
            }
            let c = cluster_of[root];
            cluster_of[i] = c;
            let w = weights[i];
            sums[c][0] += w * positions[i][0];
            sums[c][1] += w * positions[i][1];
            sums[c][2] += w;
        }
        positions = sums.iter().map(|s| [s[0] / s[2], s[1] / s[2]]).collect();
        weights = sums.iter().map(|s| s[2]).collect();
        for m in &mut mapping {
            *m = cluster_of[*m];
        }
    }
    let edges = graph.edges.iter().map(|&(a, b)| (mapping[a], mapping[b]));
    let mut out = RoadGraph::from_raw_edges(positions, edges);
    out.size = graph.size;
    (out, mapping)
}

pub fn graph_stats(graph: &RoadGraph) -> GraphStats {
    GraphStats {
        nodes: graph.nodes.len(),
        edges: graph.edges.len(),
        total: graph.nodes.len() + graph.edges.len(),
    }
}
