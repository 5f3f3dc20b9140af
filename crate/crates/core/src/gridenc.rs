//! Ground-truth graphs to per-cell training targets.
//!
//! Each grid cell holds at most one node. Nodes sharing a cell are replaced
//! by their centroid; edges between them disappear and edges leaving the
//! cell are re-pointed to the centroid. The node position inside its cell is
//! stored as an offset from the cell center in units of the stride, so it
//! lies in `[-0.5, 0.5]`.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::geograph::{edge_key, RoadGraph};

/// Offset of coordinate `x` from the center of cell `cell`, in strides.
pub fn encode_offset(x: f64, cell: usize, stride: usize) -> f64 {
    x / stride as f64 - cell as f64 - 0.5
}

/// Inverse of [`encode_offset`]: `(u + X + 0.5) · stride`.
pub fn decode_offset(u: f64, cell: usize, stride: usize) -> f64 {
    (u + cell as f64 + 0.5) * stride as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridTargets {
    pub grid_h: usize,
    pub grid_w: usize,
    pub stride: usize,
    /// `grid_h · grid_w` values in `{0, 1}`, row-major.
    pub junction: Vec<f64>,
    /// `grid_h · grid_w · 2` values, `(u, v)` per cell, row-major.
    pub offsets: Vec<f64>,
    /// Merged graph; its nodes are ordered by cell index.
    pub merged_graph: RoadGraph,
    /// Row-major cell index of every merged node.
    pub cell_of_node: Vec<usize>,
}

impl GridTargets {
    pub fn cells(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn junction_mask(&self) -> Vec<bool> {
        self.junction.iter().map(|&j| j > 0.5).collect()
    }

    /// Merged node held by each cell.
    pub fn node_of_cell(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.cells()];
        for (n, &c) in self.cell_of_node.iter().enumerate() {
            out[c] = Some(n);
        }
        out
    }
}

pub fn encode_targets(graph: &RoadGraph, image_w: usize, image_h: usize, stride: usize) -> Result<GridTargets> {
    if stride == 0 || image_w % stride != 0 || image_h % stride != 0 {
        return Err(Error::Config(format!("image {image_w}x{image_h} is not divisible by stride {stride}")));
    }
    let (grid_w, grid_h) = (image_w / stride, image_h / stride);
    let s = stride as f64;

    let mut cell_of_raw = Vec::with_capacity(graph.nodes.len());
    for (k, p) in graph.nodes.iter().enumerate() {
        if !(p[0] >= 0.0 && p[1] >= 0.0 && p[0] < image_w as f64 && p[1] < image_h as f64) {
            return Err(Error::InvalidGraph(format!("node {k} at {p:?} lies outside the {image_w}x{image_h} image")));
        }
        let cx = ((p[0] / s) as usize).min(grid_w - 1);
        let cy = ((p[1] / s) as usize).min(grid_h - 1);
        cell_of_raw.push(cy * grid_w + cx);
    }

    let mut occupied: Vec<usize> = cell_of_raw.clone();
    occupied.sort_unstable();
    occupied.dedup();
    let mut slot = vec![usize::MAX; grid_w * grid_h];
    for (n, &c) in occupied.iter().enumerate() {
        slot[c] = n;
    }
    let mut sums = vec![[0.0f64; 3]; occupied.len()];
    for (p, &c) in graph.nodes.iter().zip(&cell_of_raw) {
        let acc = &mut sums[slot[c]];
        acc[0] += p[0];
        acc[1] += p[1];
        acc[2] += 1.0;
    }
    let nodes: Vec<[f64; 2]> = sums.iter().map(|a| [a[0] / a[2], a[1] / a[2]]).collect();

    let mut junction = vec![0.0; grid_w * grid_h];
    let mut offsets = vec![0.0; 2 * grid_w * grid_h];
    for (n, &c) in occupied.iter().enumerate() {
        junction[c] = 1.0;
        let (cx, cy) = (c % grid_w, c / grid_w);
        offsets[2 * c] = encode_offset(nodes[n][0], cx, stride).clamp(-0.5, 0.5);
        offsets[2 * c + 1] = encode_offset(nodes[n][1], cy, stride).clamp(-0.5, 0.5);
    }

    let edges = graph.edges.iter().map(|&(a, b)| (slot[cell_of_raw[a]], slot[cell_of_raw[b]]));
    let mut merged_graph = RoadGraph::from_raw_edges(nodes, edges);
    merged_graph.size = Some((image_w as u32, image_h as u32));
    Ok(GridTargets {
        grid_h,
        grid_w,
        stride,
        junction,
        offsets,
        merged_graph,
        cell_of_node: occupied,
    })
}

/// Candidate cells for the edge branch and the label of every candidate pair.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeLabelSet {
    /// Sorted row-major cell indices.
    pub candidate_cells: Vec<usize>,
    /// Index pairs `(a, b)` into `candidate_cells` with `a < b`.
    pub pairs: Vec<(usize, usize)>,
    pub labels: Vec<f64>,
}

impl EdgeLabelSet {
    /// Label of the pair of cells `(c1, c2)`, in either order.
    pub fn label_of_cells(&self, c1: usize, c2: usize) -> Option<f64> {
        let a = self.candidate_cells.binary_search(&c1).ok()?;
        let b = self.candidate_cells.binary_search(&c2).ok()?;
        let key = edge_key(a, b);
        self.pairs.iter().position(|&p| p == key).map(|k| self.labels[k])
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l > 0.5).count()
    }
}

/// All unordered index pairs `(a, b)`, `a < b < n`, in lexicographic order.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect()
}

/// Candidates are the cells holding a ground-truth node together with the
/// cells whose predicted junction score exceeds `train_jthr`.
pub fn build_edge_labels(targets: &GridTargets, predicted_junction: &[f64], train_jthr: f64) -> EdgeLabelSet {
    let mut candidate_cells: Vec<usize> = (0..targets.cells())
        .filter(|&c| targets.junction[c] > 0.5 || predicted_junction.get(c).is_some_and(|&p| p > train_jthr))
        .collect();
    candidate_cells.sort_unstable();
    let truth: HashSet<(usize, usize)> = targets
        .merged_graph
        .edges
        .iter()
        .map(|&(a, b)| edge_key(targets.cell_of_node[a], targets.cell_of_node[b]))
        .collect();
    let pairs = all_pairs(candidate_cells.len());
    let labels = pairs
        .iter()
        .map(|&(a, b)| truth.contains(&edge_key(candidate_cells[a], candidate_cells[b])) as u8 as f64)
        .collect();
    EdgeLabelSet {
        candidate_cells,
        pairs,
        labels,
    }
}

/// Average number of ground-truth points per occupied cell after scaling all
/// coordinates by each ratio, pooled over the corpus.
pub fn ratio_analysis(graphs: &[RoadGraph], dims: &[(usize, usize)], stride: usize, ratios: &[f64]) -> Result<Vec<(f64, f64)>> {
    if graphs.is_empty() {
        return Err(Error::Invalid("ratio analysis needs a non-empty corpus".into()));
    }
    if dims.len() != graphs.len() {
        return Err(Error::Invalid(format!("{} graphs but {} image sizes", graphs.len(), dims.len())));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    for (k, (g, &(w, h))) in graphs.iter().zip(dims).enumerate() {
        if let Some(p) = g.nodes.iter().find(|p| p[0] < 0.0 || p[1] < 0.0 || p[0] >= w as f64 || p[1] >= h as f64) {
            return Err(Error::InvalidGraph(format!("graph {k}: node {p:?} lies outside its {w}x{h} image")));
        }
    }
    let total_points: usize = graphs.iter().map(|g| g.nodes.len()).sum();
    if total_points == 0 {
        return Err(Error::Invalid("ratio analysis corpus has no nodes".into()));
    }
    let s = stride as f64;
    ratios
        .iter()
        .map(|&r| {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("resize ratio {r} must be positive")));
            }
            let mut positive = 0usize;
            for g in graphs {
                let mut cells = HashMap::new();
                for p in &g.nodes {
                    let key = ((p[0] * r / s).floor() as i64, (p[1] * r / s).floor() as i64);
                    *cells.entry(key).or_insert(0usize) += 1;
                }
                positive += cells.len();
            }
            Ok((r, total_points as f64 / positive as f64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(nodes: Vec<[f64; 2]>, edges: Vec<(usize, usize)>) -> RoadGraph {
        RoadGraph::new(nodes, edges).unwrap()
    }

    #[test]
    fn node_at_cell_center() {
        let g = graph(vec![[5.0 * 32.0 + 16.0, 3.0 * 32.0 + 16.0]], vec![]);
        let t = encode_targets(&g, 256, 256, 32).unwrap();
        let c = 3 * 8 + 5;
        assert_eq!(t.junction[c], 1.0);
        assert_eq!(t.junction.iter().sum::<f64>(), 1.0);
        assert_eq!(&t.offsets[2 * c..2 * c + 2], &[0.0, 0.0]);
        assert_eq!(t.cell_of_node, vec![c]);
    }

    #[test]
    fn co_cell_nodes_merge_to_centroid() {
        let at = |fx: f64, fy: f64| [(5.0 + fx) * 32.0, (3.0 + fy) * 32.0];
        let g = graph(vec![at(0.2, 0.3), at(0.4, 0.5)], vec![(0, 1)]);
        let t = encode_targets(&g, 256, 256, 32).unwrap();
        let c = 3 * 8 + 5;
        assert!((t.offsets[2 * c] + 0.2).abs() < 1e-12);
        assert!((t.offsets[2 * c + 1] + 0.1).abs() < 1e-12);
        assert_eq!(t.merged_graph.nodes.len(), 1);
        assert!(t.merged_graph.edges.is_empty());
    }

    #[test]
    fn outside_edges_are_kept_after_merge() {
        let g = graph(vec![[10.0, 10.0], [20.0, 12.0], [100.0, 10.0]], vec![(0, 1), (1, 2), (0, 2)]);
        let t = encode_targets(&g, 128, 128, 32).unwrap();
        assert_eq!(t.merged_graph.nodes.len(), 2);
        assert_eq!(t.merged_graph.edges, vec![(0, 1)]);
        assert_eq!(t.merged_graph.nodes[0], [15.0, 11.0]);
    }

    #[test]
    fn encode_errors() {
        let g = graph(vec![[300.0, 10.0]], vec![]);
        assert!(encode_targets(&g, 256, 256, 32).is_err());
        assert!(encode_targets(&RoadGraph::default(), 250, 256, 32).is_err());
    }

    fn path_targets() -> GridTargets {
        let g = graph(vec![[16.0, 16.0], [48.0, 16.0], [80.0, 16.0]], vec![(0, 1), (1, 2)]);
        encode_targets(&g, 128, 128, 32).unwrap()
    }

    #[test]
    fn path_labels() {
        let t = path_targets();
        let labels = build_edge_labels(&t, &vec![0.0; 16], 0.5);
        assert_eq!(labels.candidate_cells, vec![0, 1, 2]);
        assert_eq!(labels.pairs.len(), 3);
        assert_eq!(labels.positives(), 2);
        assert_eq!(labels.label_of_cells(2, 0), Some(0.0));
        assert_eq!(labels.label_of_cells(1, 0), Some(1.0));
    }

    #[test]
    fn false_positive_cell_gets_negative_labels() {
        let t = path_targets();
        let mut pred = vec![0.0; 16];
        pred[15] = 0.9;
        let labels = build_edge_labels(&t, &pred, 0.5);
        assert_eq!(labels.candidate_cells, vec![0, 1, 2, 15]);
        for c in [0, 1, 2] {
            assert_eq!(labels.label_of_cells(c, 15), Some(0.0));
        }
        assert_eq!(labels.positives(), 2);
    }

    #[test]
    fn unit_threshold_keeps_only_gt_cells() {
        let t = path_targets();
        let labels = build_edge_labels(&t, &vec![1.0; 16], 1.0);
        assert_eq!(labels.candidate_cells, vec![0, 1, 2]);
    }

    #[test]
    fn ratio_examples() {
        let one = graph(vec![[100.0, 50.0]], vec![]);
        let table = ratio_analysis(&[one], &[(256, 256)], 32, &[0.25, 1.0, 3.0]).unwrap();
        assert!(table.iter().all(|&(_, avg)| avg == 1.0));

        let three = graph(vec![[1.0, 1.0], [5.0, 5.0], [200.0, 200.0]], vec![]);
        let table = ratio_analysis(&[three], &[(256, 256)], 32, &[1.0]).unwrap();
        assert_eq!(table, vec![(1.0, 1.5)]);

        assert!(ratio_analysis(&[], &[], 32, &[1.0]).is_err());
        assert!(ratio_analysis(&[RoadGraph::default()], &[(32, 32)], 32, &[1.0]).is_err());
    }
}
