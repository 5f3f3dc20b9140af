//! Road graph evaluation: buffered pixel F1, junction F1, APLS and the
//! complexity score.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geograph::{dist, load_graph, project_on_segment, rasterize, RoadGraph};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricConfig {
    /// Stroke width used to rasterize graphs for pixel F1.
    pub line_width: f64,
    /// Pixel F1 tolerance.
    pub buffer: f64,
    /// Junction matching radius.
    pub match_radius: f64,
    /// APLS node snapping radius.
    pub snap_radius: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            line_width: 1.0,
            buffer: 4.0,
            match_radius: 8.0,
            snap_radius: 8.0,
        }
    }
}

/// Precision, recall and F1.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        Self {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }

    fn perfect() -> Self {
        Self::new(1.0, 1.0)
    }
}

/// Harmonic mean with `0/0 → 0`.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn disk(radius: f64) -> Vec<(isize, isize)> {
    let r = radius.floor() as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64).sqrt() <= radius {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Buffered pixel F1 of the rasterized graphs on a `width × height` canvas.
/// A predicted road pixel is correct when a ground-truth road pixel lies
/// within `buffer`, and a ground-truth pixel is recalled when a predicted
/// one does. Two empty rasters score 1.
pub fn pixel_f1(pred: &RoadGraph, gt: &RoadGraph, width: usize, height: usize, line_width: f64, buffer: f64) -> Prf {
    let pm = rasterize(pred, width, height, line_width);
    let gm = rasterize(gt, width, height, line_width);
    let (np, ng) = (pm.count(), gm.count());
    if np == 0 && ng == 0 {
        return Prf::perfect();
    }
    if np == 0 || ng == 0 {
        return Prf::default();
    }
    let offsets = disk(buffer);
    let covered = |src: &crate::geograph::RasterMask, other: &crate::geograph::RasterMask| -> usize {
        let mut hits = 0;
        for y in 0..height {
            for x in 0..width {
                if !src.get(x, y) {
                    continue;
                }
                let near = offsets.iter().any(|&(dx, dy)| {
                    let (xx, yy) = (x as isize + dx, y as isize + dy);
                    xx >= 0 && yy >= 0 && (xx as usize) < width && (yy as usize) < height && other.get(xx as usize, yy as usize)
                });
                hits += near as usize;
            }
        }
        hits
    };
    Prf::new(covered(&pm, &gm) as f64 / np as f64, covered(&gm, &pm) as f64 / ng as f64)
}

/// Nodes whose degree is not two.
pub fn junctions(g: &RoadGraph) -> Vec<usize> {
    g.degrees().iter().enumerate().filter(|&(_, &d)| d != 2).map(|(i, _)| i).collect()
}

/// Greedy one-to-one matching of `a` to `b` within `radius`, closest pairs
/// first, ties by lowest index pair. Returns matched `(a, b)` index pairs.
pub fn greedy_match(a: &[[f64; 2]], b: &[[f64; 2]], radius: f64) -> Vec<(usize, usize)> {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            let d = dist(*p, *q);
            if d <= radius {
                cand.push((d, i, j));
            }
        }
    }
    cand.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let (mut used_a, mut used_b) = (vec![false; a.len()], vec![false; b.len()]);
    let mut out = Vec::new();
    for (_, i, j) in cand {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Junction F1: a predicted junction is a true positive when it is matched
/// to a ground-truth junction of the same degree.
pub fn junction_f1(pred: &RoadGraph, gt: &RoadGraph, match_radius: f64) -> Prf {
    let (jp, jg) = (junctions(pred), junctions(gt));
    if jp.is_empty() && jg.is_empty() {
        return Prf::perfect();
    }
    if jp.is_empty() || jg.is_empty() {
        return Prf::default();
    }
    let (dp, dg) = (pred.degrees(), gt.degrees());
    let pp: Vec<[f64; 2]> = jp.iter().map(|&i| pred.nodes[i]).collect();
    let pg: Vec<[f64; 2]> = jg.iter().map(|&i| gt.nodes[i]).collect();
    let tp = greedy_match(&pp, &pg, match_radius)
        .into_iter()
        .filter(|&(a, b)| dp[jp[a]] == dg[jg[b]])
        .count() as f64;
    Prf::new(tp / jp.len() as f64, tp / jg.len() as f64)
}

/// Fraction of ground-truth edges whose endpoints are matched (by position,
/// within `radius`) to predicted nodes that are joined by a predicted edge.
pub fn edge_recall(pred: &RoadGraph, gt: &RoadGraph, radius: f64) -> f64 {
    if gt.edges.is_empty() {
        return 1.0;
    }
    let mut of_gt = vec![None; gt.nodes.len()];
    for (p, g) in greedy_match(&pred.nodes, &gt.nodes, radius) {
        of_gt[g] = Some(p);
    }
    let predicted = pred.edge_set();
    let hit = gt
        .edges
        .iter()
        .filter(|&&(a, b)| match (of_gt[a], of_gt[b]) {
            (Some(x), Some(y)) => predicted.contains(&(x.min(y), x.max(y))),
            _ => false,
        })
        .count();
    hit as f64 / gt.edges.len() as f64
}

#[derive(Clone, Copy, PartialEq)]
struct State(f64, usize);

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest path lengths; unreachable nodes are `∞`.
pub fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut best = vec![f64::INFINITY; adj.len()];
    best[source] = 0.0;
    let mut heap = BinaryHeap::from([State(0.0, source)]);
    while let Some(State(d, u)) = heap.pop() {
        if d > best[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < best[v] {
                best[v] = nd;
                heap.push(State(nd, v));
            }
        }
    }
    best
}

enum Snap {
    Node(usize),
    Edge(usize, f64),
}

fn nearest_point(p: [f64; 2], h: &RoadGraph) -> Option<(f64, Snap)> {
    let mut best: Option<(f64, Snap)> = None;
    for (k, q) in h.nodes.iter().enumerate() {
        let d = dist(p, *q);
        if best.as_ref().is_none_or(|b| d < b.0) {
            best = Some((d, Snap::Node(k)));
        }
    }
    for (e, &(a, b)) in h.edges.iter().enumerate() {
        let (t, d) = project_on_segment(p, h.nodes[a], h.nodes[b]);
        if best.as_ref().is_none_or(|bst| d < bst.0) {
            let snap = if t <= 0.0 {
                Snap::Node(a)
            } else if t >= 1.0 {
                Snap::Node(b)
            } else {
                Snap::Edge(e, t)
            };
            best = Some((d, snap));
        }
    }
    best
}

/// Snaps every node of `g` onto `h` and returns the adjacency of `h` with
/// edges split at the snapped points, plus the snapped node of each `g` node.
fn snap_onto(g: &RoadGraph, h: &RoadGraph, snap_radius: f64) -> (Vec<Vec<(usize, f64)>>, Vec<Option<usize>>) {
    let mut splits: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut raw = Vec::with_capacity(g.nodes.len());
    for p in &g.nodes {
        match nearest_point(*p, h) {
            Some((d, snap)) if d <= snap_radius => {
                if let Snap::Edge(e, t) = snap {
                    splits.entry(e).or_default().push(t);
                }
                raw.push(Some(snap));
            }
            _ => raw.push(None),
        }
    }
    let mut positions = h.nodes.clone();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); h.nodes.len()];
    let mut split_node: HashMap<(usize, u64), usize> = HashMap::new();
    for (e, &(a, b)) in h.edges.iter().enumerate() {
        let mut chain = vec![a];
        if let Some(ts) = splits.get_mut(&e) {
            ts.sort_by(f64::total_cmp);
            ts.dedup();
            for &t in ts.iter() {
                let (pa, pb) = (h.nodes[a], h.nodes[b]);
                positions.push([pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]);
                adj.push(Vec::new());
                let id = positions.len() - 1;
                split_node.insert((e, t.to_bits()), id);
                chain.push(id);
            }
        }
        chain.push(b);
        for w in chain.windows(2) {
            let len = dist(positions[w[0]], positions[w[1]]);
            adj[w[0]].push((w[1], len));
            adj[w[1]].push((w[0], len));
        }
    }
    let snapped = raw
        .into_iter()
        .map(|s| {
            s.map(|s| match s {
                Snap::Node(k) => k,
                Snap::Edge(e, t) => split_node[&(e, t.to_bits())],
            })
        })
        .collect();
    (adj, snapped)
}

/// One direction of APLS: `1 − mean penalty` over node pairs connected in
/// `g`, comparing shortest paths in `g` with those between the snapped
/// nodes in `h`.
pub fn apls_one_way(g: &RoadGraph, h: &RoadGraph, snap_radius: f64) -> f64 {
    let adj_g = g.adjacency();
    let (adj_h, snapped) = snap_onto(g, h, snap_radius);
    let n = g.nodes.len();
    let mut total = 0.0;
    let mut count = 0usize;
    for a in 0..n {
        let dg = dijkstra(&adj_g, a);
        let dh = snapped[a].map(|s| dijkstra(&adj_h, s));
        for b in a + 1..n {
            let l = dg[b];
            if !l.is_finite() {
                continue;
            }
            count += 1;
            let lp = match (&dh, snapped[b]) {
                (Some(dh), Some(sb)) => dh[sb],
                _ => f64::INFINITY,
            };
            total += if !lp.is_finite() {
                1.0
            } else if l == 0.0 {
                if lp == 0.0 {
                    0.0
                } else {
                    1.0
                }
            } else {
                ((l - lp).abs() / l).min(1.0)
            };
        }
    }
    if count == 0 {
        return if h.edges.is_empty() { 1.0 } else { 0.0 };
    }
    1.0 - total / count as f64
}

/// Symmetric APLS in `[0, 1]`. An empty graph against a non-empty one
/// scores 0; two empty graphs score 1.
pub fn apls(pred: &RoadGraph, gt: &RoadGraph, snap_radius: f64) -> f64 {
    match (pred.nodes.is_empty(), gt.nodes.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (apls_one_way(gt, pred, snap_radius) + apls_one_way(pred, gt, snap_radius)) / 2.0,
    }
}

/// Graph elements per APLS point: `total / apls_percent`, `∞` when APLS is 0.
pub fn complexity_from_total(total_elements: f64, apls_percent: f64) -> f64 {
    if apls_percent > 0.0 {
        total_elements / apls_percent
    } else {
        f64::INFINITY
    }
}

pub fn complexity_score(pred: &RoadGraph, apls_percent: f64) -> f64 {
    complexity_from_total(pred.stats().total as f64, apls_percent)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneReport {
    pub scene: String,
    pub pixel: Prf,
    pub junction: Prf,
    pub apls: f64,
    pub nodes: f64,
    pub edges: f64,
    pub total: f64,
    pub complexity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub scenes: Vec<SceneReport>,
    pub macro_avg: SceneReport,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene,p_f1,j_f1,apls,nodes,edges,complexity\n");
        for r in self.scenes.iter().chain(std::iter::once(&self.macro_avg)) {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{},{},{:.3}",
                r.scene, r.pixel.f1, r.junction.f1, r.apls, r.nodes, r.edges, r.complexity
            );
        }
        out
    }
}

fn canvas(pred: &RoadGraph, gt: &RoadGraph) -> (usize, usize) {
    if let Some((w, h)) = gt.size.or(pred.size) {
        return (w as usize, h as usize);
    }
    let mut w: f64 = 1.0;
    let mut h: f64 = 1.0;
    for p in gt.nodes.iter().chain(&pred.nodes) {
        w = w.max(p[0].ceil() + 1.0);
        h = h.max(p[1].ceil() + 1.0);
    }
    (w as usize, h as usize)
}

pub fn evaluate_scene(name: &str, pred: &RoadGraph, gt: &RoadGraph, cfg: &MetricConfig) -> SceneReport {
    let (w, h) = canvas(pred, gt);
    let a = apls(pred, gt, cfg.snap_radius);
    let stats = pred.stats();
    SceneReport {
        scene: name.to_string(),
        pixel: pixel_f1(pred, gt, w, h, cfg.line_width, cfg.buffer),
        junction: junction_f1(pred, gt, cfg.match_radius),
        apls: a,
        nodes: stats.nodes as f64,
        edges: stats.edges as f64,
        total: stats.total as f64,
        complexity: complexity_from_total(stats.total as f64, 100.0 * a),
    }
}

/// Unweighted mean over scenes; the complexity is recomputed from the mean
/// element count and mean APLS.
pub fn macro_average(scenes: &[SceneReport]) -> SceneReport {
    let n = scenes.len().max(1) as f64;
    let mean = |f: &dyn Fn(&SceneReport) -> f64| scenes.iter().map(f).sum::<f64>() / n;
    let pixel = Prf {
        precision: mean(&|r| r.pixel.precision),
        recall: mean(&|r| r.pixel.recall),
        f1: mean(&|r| r.pixel.f1),
    };
    let junction = Prf {
        precision: mean(&|r| r.junction.precision),
        recall: mean(&|r| r.junction.recall),
        f1: mean(&|r| r.junction.f1),
    };
    let apls = mean(&|r| r.apls);
    let total = mean(&|r| r.total);
    SceneReport {
        scene: "MACRO".into(),
        pixel,
        junction,
        apls,
        nodes: mean(&|r| r.nodes),
        edges: mean(&|r| r.edges),
        total,
        complexity: complexity_from_total(total, 100.0 * apls),
    }
}

pub fn evaluate_graphs(scenes: &[(String, RoadGraph, RoadGraph)], cfg: &MetricConfig, jobs: usize) -> Result<EvalReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Invalid(e.to_string()))?;
    let reports: Vec<SceneReport> = pool.install(|| scenes.par_iter().map(|(n, p, g)| evaluate_scene(n, p, g, cfg)).collect());
    let macro_avg = macro_average(&reports);
    Ok(EvalReport {
        scenes: reports,
        macro_avg,
    })
}

fn json_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            names.push(path.file_name().unwrap_or_default().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// Scores every `*.json` graph in `pred_dir` against the file of the same
/// name in `gt_dir`.
pub fn evaluate(pred_dir: impl AsRef<Path>, gt_dir: impl AsRef<Path>, cfg: &MetricConfig, jobs: usize) -> Result<EvalReport> {
    let (pred_dir, gt_dir) = (pred_dir.as_ref(), gt_dir.as_ref());
    let pred_names = json_names(pred_dir)?;
    let gt_names = json_names(gt_dir)?;
    if let Some(missing) = gt_names.iter().find(|n| !pred_names.contains(n)) {
        return Err(Error::Invalid(format!("{} has no prediction in {}", missing, pred_dir.display())));
    }
    if let Some(extra) = pred_names.iter().find(|n| !gt_names.contains(n)) {
        return Err(Error::Invalid(format!("{} has no ground truth in {}", extra, gt_dir.display())));
    }
    let mut scenes = Vec::with_capacity(gt_names.len());
    for name in gt_names {
        let pred = load_graph(pred_dir.join(&name))?;
        let gt = load_graph(gt_dir.join(&name))?;
        scenes.push((name.trim_end_matches(".json").to_string(), pred, gt));
    }
    evaluate_graphs(&scenes, cfg, jobs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> RoadGraph {
        RoadGraph::new(vec![[0.0, 0.0], [100.0, 0.0], [200.0, 0.0]], vec![(0, 1), (1, 2)]).unwrap()
    }

    fn hline(y: f64) -> RoadGraph {
        RoadGraph::new(vec![[2.0, y], [60.0, y]], vec![(0, 1)]).unwrap()
    }

    #[test]
    fn f1_convention() {
        assert_eq!(f1(0.0, 0.0), 0.0);
        assert_eq!(f1(1.0, 1.0), 1.0);
        assert!((f1(0.5, 1.0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn pixel_f1_cases() {
        let g = hline(20.0);
        assert_eq!(pixel_f1(&g, &g, 64, 64, 1.0, 4.0).f1, 1.0);
        assert_eq!(pixel_f1(&RoadGraph::default(), &g, 64, 64, 1.0, 4.0).f1, 0.0);
        for off in 0..=4 {
            assert_eq!(pixel_f1(&hline(20.0 + off as f64), &g, 64, 64, 1.0, 4.0).f1, 1.0, "offset {off}");
        }
        assert_eq!(pixel_f1(&hline(25.0), &g, 64, 64, 1.0, 4.0).f1, 0.0);
    }

    fn star(center: [f64; 2], arms: usize) -> RoadGraph {
        let mut nodes = vec![center];
        let mut edges = Vec::new();
        for k in 0..arms {
            let a = k as f64 * std::f64::consts::TAU / arms as f64;
            nodes.push([center[0] + 40.0 * a.cos(), center[1] + 40.0 * a.sin()]);
            edges.push((0, k + 1));
        }
        RoadGraph::new(nodes, edges).unwrap()
    }

    #[test]
    fn junction_f1_cases() {
        let g = star([100.0, 100.0], 4);
        assert_eq!(junction_f1(&g, &g, 8.0).f1, 1.0);
        let mut missing = g.clone();
        missing.edges.pop();
        missing.nodes.pop();
        let r = junction_f1(&missing, &g, 8.0);
        // The centre is matched but has degree 3 against 4; the three
        // remaining arm ends still match.
        assert_eq!(r.precision, 3.0 / 4.0);
        assert_eq!(r.recall, 3.0 / 5.0);
    }

    #[test]
    fn junction_matching_is_one_to_one() {
        let gt = RoadGraph::new(vec![[0.0, 0.0], [4.0, 0.0]], vec![]).unwrap();
        let pred = RoadGraph::new(vec![[2.0, 0.0]], vec![]).unwrap();
        let r = junction_f1(&pred, &gt, 8.0);
        assert_eq!((r.precision, r.recall), (1.0, 0.5));
    }

    #[test]
    fn apls_hand_traced_chain() {
        let gt = chain();
        let pred = RoadGraph::new(vec![[0.0, 0.0], [100.0, 0.0]], vec![(0, 1)]).unwrap();
        assert_eq!(apls_one_way(&gt, &pred, 10.0), 1.0 - 2.0 / 3.0);
        assert_eq!(apls_one_way(&pred, &gt, 10.0), 1.0);
        assert!((apls(&pred, &gt, 10.0) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(apls(&pred, &gt, 10.0), apls(&gt, &pred, 10.0));
    }

    #[test]
    fn apls_identity_and_empty() {
        let g = chain();
        assert_eq!(apls(&g, &g, 8.0), 1.0);
        assert_eq!(apls(&RoadGraph::default(), &g, 8.0), 0.0);
        assert_eq!(apls(&RoadGraph::default(), &RoadGraph::default(), 8.0), 1.0);
    }

    #[test]
    fn apls_snaps_onto_edge_interiors() {
        // The prediction skips the middle node; it snaps onto the straight
        // predicted edge and all path lengths agree.
        let gt = chain();
        let pred = RoadGraph::new(vec![[0.0, 0.0], [200.0, 0.0]], vec![(0, 1)]).unwrap();
        assert_eq!(apls(&pred, &gt, 5.0), 1.0);
    }

    #[test]
    fn published_complexity_rows() {
        let rows = [(21615.0, 46.93, 461.0), (90662.0, 64.59, 1404.0), (18034.0, 21.27, 848.0), (25306.0, 45.09, 561.0)];
        for (total, apls, want) in rows {
            assert_eq!(complexity_from_total(total, apls).round(), want);
        }
        assert_eq!(complexity_from_total(10.0, 0.0), f64::INFINITY);
    }

    #[test]
    fn macro_average_of_two_scenes() {
        let g = chain();
        let scenes = vec![
            ("a".to_string(), g.clone(), g.clone()),
            ("b".to_string(), RoadGraph::default(), g.clone()),
        ];
        let r = evaluate_graphs(&scenes, &MetricConfig::default(), 1).unwrap();
        assert_eq!(r.scenes[0].apls, 1.0);
        assert_eq!(r.scenes[1].apls, 0.0);
        assert_eq!(r.macro_avg.apls, 0.5);
        let one = evaluate_graphs(&scenes[..1], &MetricConfig::default(), 1).unwrap();
        assert_eq!(one.macro_avg.apls, one.scenes[0].apls);
        assert_eq!(one.macro_avg.pixel, one.scenes[0].pixel);
        assert!(r.to_csv().lines().last().unwrap().starts_with("MACRO,"));
    }

    #[test]
    fn edge_recall_counts_connected_matches() {
        let gt = chain();
        let pred = RoadGraph::new(vec![[1.0, 0.0], [99.0, 0.0], [201.0, 0.0]], vec![(0, 1)]).unwrap();
        assert_eq!(edge_recall(&pred, &gt, 8.0), 0.5);
    }
}
