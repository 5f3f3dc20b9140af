use std::collections::BTreeSet;

/// Directed message edges `(i, j)`: node `i` receives from neighbor `j`.
/// Edges are grouped by receiver; receiver `i` owns
/// `edges[offsets[i]..offsets[i + 1]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SupportGraph {
    pub edges: Vec<(usize, usize)>,
    pub offsets: Vec<usize>,
}

impl SupportGraph {
    fn from_neighbors(neighbors: Vec<Vec<usize>>) -> Self {
        let mut edges = Vec::new();
        let mut offsets = vec![0];
        for (i, nbrs) in neighbors.into_iter().enumerate() {
            if nbrs.is_empty() {
                edges.push((i, i));
            }
            edges.extend(nbrs.into_iter().map(|j| (i, j)));
            offsets.push(edges.len());
        }
        Self { edges, offsets }
    }

    pub fn nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges[self.offsets[i]..self.offsets[i + 1]].iter().map(|&(_, j)| j)
    }

    /// Distinct unordered pairs `(min, max)` among non-self edges.
    pub fn undirected_pairs(&self) -> BTreeSet<(usize, usize)> {
        self.edges
            .iter()
            .filter(|&&(i, j)| i != j)
            .map(|&(i, j)| (i.min(j), i.max(j)))
            .collect()
    }
}

/// Every node receives from every other node. A lone node receives its own
/// message so the aggregation is never empty.
pub fn complete_support(n: usize) -> SupportGraph {
    SupportGraph::from_neighbors((0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect())
}

/// Each node receives from its `k` nearest other nodes in Euclidean feature
/// distance (`k` capped at `n − 1`); ties go to the lower index.
pub fn knn_support(feats: &[f64], n: usize, d: usize, k: usize) -> SupportGraph {
    assert_eq!(feats.len(), n * d, "knn_support: feature buffer length");
    let k = k.min(n.saturating_sub(1));
    let row = |i: usize| &feats[i * d..(i + 1) * d];
    let neighbors = (0..n)
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (row(i).iter().zip(row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), j))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect();
    SupportGraph::from_neighbors(neighbors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_graph_pair_count() {
        let g = complete_support(5);
        assert_eq!(g.undirected_pairs().len(), 10);
        assert_eq!(g.edges.len(), 20);
    }

    #[test]
    fn single_node_gets_a_self_message() {
        let g = complete_support(1);
        assert_eq!(g.edges, vec![(0, 0)]);
        assert_eq!(g.offsets, vec![0, 1]);
        assert_eq!(knn_support(&[1.0, 2.0], 1, 2, 4).edges, vec![(0, 0)]);
        assert!(complete_support(0).edges.is_empty());
    }

    #[test]
    fn collinear_points_endpoint_neighbors() {
        let feats: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let g = knn_support(&feats, 6, 1, 4);
        assert_eq!(g.neighbors(0).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        assert_eq!(g.neighbors(5).collect::<Vec<_>>(), vec![4, 3, 2, 1]);
        // Node 2: distances 1 (to 1 and 3) then 2 (to 0 and 4).
        assert_eq!(g.neighbors(2).collect::<Vec<_>>(), vec![1, 3, 0, 4]);
    }

    #[test]
    fn k_is_truncated_for_small_batches() {
        let g = knn_support(&[0.0, 1.0, 5.0], 3, 1, 4);
        for i in 0..3 {
            assert_eq!(g.neighbors(i).count(), 2);
        }
    }
}
