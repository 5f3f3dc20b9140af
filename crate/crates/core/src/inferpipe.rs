//! Turning model outputs into road graphs, and tiled inference on images
//! larger than the training window.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::extractor::{model_forward, ModelParams};
use crate::geograph::{load_graph, merge_nearby_nodes_with_map, RoadGraph};
use crate::gridenc::decode_offset;
use crate::metrics::{edge_recall, evaluate_graphs, MetricConfig};
use crate::synthgen::{list_scenes, SceneImage};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferConfig {
    pub j_thr: f64,
    pub edge_thr: f64,
    pub window: usize,
    pub overlap_stride: usize,
    pub merge_radius: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            j_thr: 0.5,
            edge_thr: 0.5,
            window: 256,
            overlap_stride: 128,
            merge_radius: 16.0,
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.j_thr) || !unit(self.edge_thr) {
            return Err(Error::Config("thresholds must lie in [0, 1]".into()));
        }
        if self.window == 0 || self.window % crate::STRIDE != 0 {
            return Err(Error::Config(format!("window {} is not a positive multiple of {}", self.window, crate::STRIDE)));
        }
        if self.overlap_stride == 0 || self.overlap_stride > self.window {
            return Err(Error::Config(format!("overlap stride must be in 1..={}", self.window)));
        }
        if !(self.merge_radius >= 0.0) {
            return Err(Error::Config("merge radius must be non-negative".into()));
        }
        Ok(())
    }
}

/// Pixel position of cell `cell` (row-major on a `grid_w`-wide grid) with
/// sub-cell offset `[u, v]`. Results are clamped to `[0, size)` so a point
/// on the far border still falls inside the canvas.
pub fn decode_point(cell: usize, offset: [f64; 2], grid_w: usize, image_w: usize, image_h: usize) -> [f64; 2] {
    let stride = image_w / grid_w;
    let (cx, cy) = (cell % grid_w, cell / grid_w);
    let clamp = |v: f64, size: usize| v.max(0.0).min((size as f64).next_down());
    [
        clamp(decode_offset(offset[0], cx, stride), image_w),
        clamp(decode_offset(offset[1], cy, stride), image_h),
    ]
}

/// Every cell whose junction-ness exceeds `j_thr`, with its decoded position.
/// `offsets` is channels-last, two values per cell.
pub fn decode_points(junction: &[f64], offsets: &[f64], grid_w: usize, j_thr: f64, image_w: usize, image_h: usize) -> Vec<(usize, [f64; 2])> {
    (0..junction.len())
        .filter(|&c| junction[c] > j_thr)
        .map(|c| (c, decode_point(c, [offsets[2 * c], offsets[2 * c + 1]], grid_w, image_w, image_h)))
        .collect()
}

/// Detected nodes with a probability for every scored pair, before the edge
/// threshold is applied.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoredGraph {
    pub nodes: Vec<[f64; 2]>,
    pub pairs: Vec<(usize, usize)>,
    pub probs: Vec<f64>,
    pub size: Option<(u32, u32)>,
}

impl ScoredGraph {
    /// Keeps the pairs with probability strictly above `edge_thr`.
    pub fn cut(&self, edge_thr: f64) -> RoadGraph {
        let edges = self.pairs.iter().zip(&self.probs).filter(|&(_, &p)| p > edge_thr).map(|(&e, _)| e);
        let mut g = RoadGraph::from_raw_edges(self.nodes.clone(), edges);
        g.size = self.size;
        g
    }
}

pub fn score_tile(tile: &SceneImage, params: &ModelParams, j_thr: f64) -> Result<ScoredGraph> {
    let out = model_forward(tile, params, j_thr)?;
    Ok(ScoredGraph {
        nodes: out.coords,
        pairs: out.scores.pairs,
        probs: out.scores.probs,
        size: Some((tile.width as u32, tile.height as u32)),
    })
}

pub fn predict_tile(tile: &SceneImage, params: &ModelParams, cfg: &InferConfig) -> Result<RoadGraph> {
    cfg.validate()?;
    if (tile.width, tile.height) != (cfg.window, cfg.window) {
        return Err(Error::Invalid(format!("tile is {}x{}, window is {}", tile.width, tile.height, cfg.window)));
    }
    Ok(score_tile(tile, params, cfg.j_thr)?.cut(cfg.edge_thr))
}

/// Tile origins along one axis: every `step` pixels, plus one tile flush
/// with the far border when the last regular tile stops short of it.
pub fn tile_positions(extent: usize, window: usize, step: usize) -> Vec<usize> {
    if extent < window {
        return Vec::new();
    }
    let last = extent - window;
    let mut out: Vec<usize> = (0..=last).step_by(step.max(1)).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Scores every tile and accumulates the results in global coordinates.
/// Nodes closer than `merge_radius` are merged and a pair scored by several
/// tiles keeps its highest probability.
pub fn sliding_window_scores(image: &SceneImage, params: &ModelParams, cfg: &InferConfig, jobs: usize) -> Result<ScoredGraph> {
    cfg.validate()?;
    if image.width < cfg.window || image.height < cfg.window {
        return Err(Error::Invalid(format!(
            "image {}x{} is smaller than the {} px window",
            image.width, image.height, cfg.window
        )));
    }
    let xs = tile_positions(image.width, cfg.window, cfg.overlap_stride);
    let ys = tile_positions(image.height, cfg.window, cfg.overlap_stride);
    let origins: Vec<(usize, usize)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Invalid(e.to_string()))?;
    let tiles: Vec<ScoredGraph> = pool.install(|| {
        origins
            .par_iter()
            .map(|&(x, y)| score_tile(&image.crop(x, y, cfg.window, cfg.window), params, cfg.j_thr))
            .collect::<Result<_>>()
    })?;

    let mut nodes = Vec::new();
    let mut pairs = Vec::new();
    let mut probs = Vec::new();
    for (&(x0, y0), tile) in origins.iter().zip(&tiles) {
        let base = nodes.len();
        nodes.extend(tile.nodes.iter().map(|p| [p[0] + x0 as f64, p[1] + y0 as f64]));
        pairs.extend(tile.pairs.iter().map(|&(a, b)| (a + base, b + base)));
        probs.extend_from_slice(&tile.probs);
    }
    let raw = RoadGraph {
        nodes,
        edges: Vec::new(),
        size: None,
    };
    let (merged, map) = merge_nearby_nodes_with_map(&raw, cfg.merge_radius);
    let mut best: HashMap<(usize, usize), f64> = HashMap::new();
    let mut order = Vec::new();
    for (&(a, b), &p) in pairs.iter().zip(&probs) {
        let (a, b) = (map[a], map[b]);
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        match best.get_mut(&key) {
            Some(q) => *q = q.max(p),
            None => {
                best.insert(key, p);
                order.push(key);
            }
        }
    }
    Ok(ScoredGraph {
        nodes: merged.nodes,
        probs: order.iter().map(|k| best[k]).collect(),
        pairs: order,
        size: Some((image.width as u32, image.height as u32)),
    })
}

pub fn sliding_window_infer(image: &SceneImage, params: &ModelParams, cfg: &InferConfig, jobs: usize) -> Result<RoadGraph> {
    Ok(sliding_window_scores(image, params, cfg, jobs)?.cut(cfg.edge_thr))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    pub p_f1: f64,
    pub j_f1: f64,
    pub apls: f64,
    /// Mean predicted node count per scene.
    pub nodes: f64,
    /// Mean predicted edge count per scene.
    pub edges: f64,
    /// Mean fraction of ground-truth edges recovered.
    pub edge_recall: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("threshold,p_f1,j_f1,apls,nodes,edges\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.6},{:.6},{:.6},{},{}", r.threshold, r.p_f1, r.j_f1, r.apls, r.nodes, r.edges);
    }
    out
}

/// Evaluates precomputed scores against ground truth at each edge threshold.
pub fn sweep_scored(scenes: &[(String, ScoredGraph, RoadGraph)], thresholds: &[f64], metrics: &MetricConfig, jobs: usize) -> Result<Vec<SweepRow>> {
    if let Some(t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Config(format!("threshold {t} is outside [0, 1]")));
    }
    let n = scenes.len().max(1) as f64;
    thresholds
        .iter()
        .map(|&thr| {
            let cut: Vec<(String, RoadGraph, RoadGraph)> =
                scenes.iter().map(|(name, s, gt)| (name.clone(), s.cut(thr), gt.clone())).collect();
            let report = evaluate_graphs(&cut, metrics, jobs)?;
            let recall = cut.iter().map(|(_, p, g)| edge_recall(p, g, metrics.match_radius)).sum::<f64>() / n;
            let m = &report.macro_avg;
            Ok(SweepRow {
                threshold: thr,
                p_f1: m.pixel.f1,
                j_f1: m.junction.f1,
                apls: m.apls,
                nodes: m.nodes,
                edges: m.edges,
                edge_recall: recall,
            })
        })
        .collect()
}

/// Runs the model once per scene in `dataset`, then evaluates every edge
/// threshold from the cached scores.
pub fn threshold_sweep(
    dataset: impl AsRef<Path>,
    params: &ModelParams,
    cfg: &InferConfig,
    thresholds: &[f64],
    metrics: &MetricConfig,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    let dataset = dataset.as_ref();
    let scenes = list_scenes(dataset)?;
    if scenes.is_empty() {
        return Err(Error::Invalid(format!("no scenes in {}", dataset.display())));
    }
    let mut scored = Vec::with_capacity(scenes.len());
    for s in &scenes {
        let image = SceneImage::load(&s.image)?;
        let gt = load_graph(&s.graph)?;
        scored.push((s.name.clone(), sliding_window_scores(&image, params, cfg, jobs)?, gt));
    }
    sweep_scored(&scored, thresholds, metrics, jobs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::ModelConfig;

    #[test]
    fn decode_examples() {
        assert_eq!(decode_point(0, [0.0, 0.0], 8, 256, 256), [16.0, 16.0]);
        // Cell (x = 3, y = 5) on an 8-wide grid.
        assert_eq!(decode_point(5 * 8 + 3, [0.25, -0.5], 8, 256, 256), [120.0, 160.0]);
        for u in [-0.5, 0.5] {
            let p = decode_point(9, [u, u], 8, 256, 256);
            assert!(p[0] >= 32.0 && p[0] <= 64.0);
        }
        let edge = decode_point(7, [0.5, -0.5], 8, 256, 256);
        assert!(edge[0] < 256.0 && edge[1] == 0.0);
    }

    #[test]
    fn decode_points_filters_strictly() {
        let j = [0.5, 0.9, 0.1, 0.51];
        let off = [0.0; 8];
        let pts = decode_points(&j, &off, 2, 0.5, 64, 64);
        assert_eq!(pts.iter().map(|p| p.0).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(pts[1].1, [48.0, 48.0]);
    }

    #[test]
    fn tile_grid_counts() {
        assert_eq!(tile_positions(512, 256, 128), vec![0, 128, 256]);
        assert_eq!(tile_positions(256, 256, 128), vec![0]);
        assert_eq!(tile_positions(600, 256, 256), vec![0, 256, 344]);
        assert!(tile_positions(100, 256, 128).is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(InferConfig::default().validate().is_ok());
        assert!(InferConfig { window: 100, ..Default::default() }.validate().is_err());
        assert!(InferConfig { overlap_stride: 0, ..Default::default() }.validate().is_err());
        assert!(InferConfig { overlap_stride: 512, ..Default::default() }.validate().is_err());
        assert!(InferConfig { edge_thr: 1.5, ..Default::default() }.validate().is_err());
    }

    fn tiny_params() -> ModelParams {
        let cfg = ModelConfig {
            n_in: 8,
            n_feat: 6,
            gnn_layers: 1,
            gnn_dim: 4,
            ..Default::default()
        };
        ModelParams::init(&cfg, 3).unwrap()
    }

    #[test]
    fn edge_threshold_extremes() {
        let p = tiny_params();
        let img = SceneImage::filled(64, 64, 0.4);
        let cfg = InferConfig {
            j_thr: 0.0,
            edge_thr: 0.0,
            window: 64,
            overlap_stride: 64,
            ..Default::default()
        };
        let all = predict_tile(&img, &p, &cfg).unwrap();
        assert_eq!(all.nodes.len(), 4);
        assert_eq!(all.edges.len(), 6);
        let none = predict_tile(&img, &p, &InferConfig { edge_thr: 1.0, ..cfg }).unwrap();
        assert_eq!(none.nodes.len(), 4);
        assert!(none.edges.is_empty());
    }

    #[test]
    fn single_tile_matches_predict_tile() {
        let p = tiny_params();
        let img = SceneImage::filled(64, 64, 0.6);
        let cfg = InferConfig {
            j_thr: 0.0,
            window: 64,
            overlap_stride: 32,
            ..Default::default()
        };
        assert_eq!(sliding_window_infer(&img, &p, &cfg, 1).unwrap(), predict_tile(&img, &p, &cfg).unwrap());
        assert!(sliding_window_infer(&SceneImage::filled(32, 64, 0.0), &p, &cfg, 1).is_err());
    }

    #[test]
    fn sweep_csv_layout() {
        let rows = [SweepRow {
            threshold: 0.5,
            p_f1: 1.0,
            j_f1: 1.0,
            apls: 1.0,
            nodes: 3.0,
            edges: 2.0,
            edge_recall: 1.0,
        }];
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().next().unwrap(), "threshold,p_f1,j_f1,apls,nodes,edges");
        assert_eq!(csv.lines().count(), 2);
    }
}
