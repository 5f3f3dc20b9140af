//! Loss assembly, augmentation and the training loop.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensornet::{Adam, AdamConfig, BatchNormState, NormMode, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::extractor::{bind, gnn_forward, heads_forward, node_batch, score_pairs, stem_forward, ModelConfig, ModelParams};
use crate::geograph::{load_graph, RoadGraph};
use crate::gridenc::{build_edge_labels, encode_targets, EdgeLabelSet, GridTargets};
use crate::synthgen::{list_scenes, SceneImage};
use crate::STRIDE;

/// Probability clamp used by every cross-entropy term.
pub const BCE_EPS: f64 = 1e-7;

/// Which cells the offset loss is computed on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetMask {
    /// Cells holding a ground-truth node.
    #[default]
    GroundTruth,
    /// Cells whose predicted junction score exceeds the training threshold.
    Predicted,
}

impl FromStr for OffsetMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ground_truth" | "gt" => Ok(Self::GroundTruth),
            "predicted" => Ok(Self::Predicted),
            _ => Err(Error::Config(format!("unknown offset mask {s:?} (ground_truth, predicted)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub junction: f64,
    pub offset: f64,
    pub edge: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            junction: 1.0,
            offset: 1.0,
            edge: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub train_jthr: f64,
    pub crop: usize,
    pub flips: bool,
    pub seed: u64,
    pub weights: LossWeights,
    pub offset_mask: OffsetMask,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 4,
            lr: 1e-3,
            train_jthr: 0.5,
            crop: 256,
            flips: true,
            seed: 0,
            weights: LossWeights::default(),
            offset_mask: OffsetMask::GroundTruth,
            checkpoint_every: 10,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.crop == 0 || self.crop % STRIDE != 0 {
            return Err(Error::Config(format!("crop {} is not a positive multiple of {STRIDE}", self.crop)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.train_jthr) {
            return Err(Error::Config("training junction threshold must lie in [0, 1]".into()));
        }
        let w = self.weights;
        if [w.junction, w.offset, w.edge].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Mean losses over one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_jun: f64,
    pub l_off: f64,
    pub l_edge: f64,
    pub l_total: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,l_jun,l_off,l_edge,l_total,seconds\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{:e},{:e},{:e},{:e},{:.3}", r.epoch, r.l_jun, r.l_off, r.l_edge, r.l_total, r.seconds);
        }
        out
    }

    /// Loss columns only, for comparing runs without wall-clock noise.
    pub fn losses(&self) -> Vec<[f64; 4]> {
        self.records.iter().map(|r| [r.l_jun, r.l_off, r.l_edge, r.l_total]).collect()
    }
}

/// The weighted loss and its unweighted components, all scalars on the tape.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub junction: Var,
    pub offset: Var,
    pub edge: Var,
    pub total: Var,
}

/// `λ_j·BCE(J, J_gt) + λ_o·MSE(offsets, V | mask) + λ_e·BCE(p, labels)`.
///
/// `junction` is `[1, H, W]`, `offsets` is channels-last `[H, W, 2]` and
/// `mask` has one entry per cell. Without edge scores the edge term is 0.
pub fn total_loss(
    tape: &mut Tape,
    junction: Var,
    offsets: Var,
    targets: &GridTargets,
    mask: &[bool],
    edge_probs: Option<Var>,
    edge_labels: &[f64],
    weights: &LossWeights,
) -> Result<LossTerms> {
    let (h, w) = (targets.grid_h, targets.grid_w);
    let j_gt = tape.constant(Tensor::from_vec(vec![1, h, w], targets.junction.clone())?);
    let l_jun = tape.bce_loss(junction, j_gt, BCE_EPS)?;
    let v = tape.constant(Tensor::from_vec(vec![h, w, 2], targets.offsets.clone())?);
    let l_off = tape.masked_mse(offsets, v, mask)?;
    let l_edge = match edge_probs {
        Some(p) => {
            let y = tape.constant(Tensor::from_vec(vec![edge_labels.len()], edge_labels.to_vec())?);
            tape.bce_loss(p, y, BCE_EPS)?
        }
        None => tape.constant(Tensor::scalar(0.0)),
    };
    let a = tape.scale(l_jun, weights.junction);
    let b = tape.scale(l_off, weights.offset);
    let c = tape.scale(l_edge, weights.edge);
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, c)?;
    Ok(LossTerms {
        junction: l_jun,
        offset: l_off,
        edge: l_edge,
        total,
    })
}

/// Mirrors the image and the graph horizontally (`x → W − 1 − x`).
pub fn flip_horizontal(image: &SceneImage, graph: &RoadGraph) -> (SceneImage, RoadGraph) {
    let (w, h) = (image.width, image.height);
    let mut data = image.data.clone();
    for row in data.chunks_exact_mut(w) {
        row.reverse();
    }
    let mut g = graph.clone();
    for p in &mut g.nodes {
        p[0] = ((w - 1) as f64 - p[0]).max(0.0);
    }
    (SceneImage { width: w, height: h, data }, g)
}

/// Mirrors the image and the graph vertically (`y → H − 1 − y`).
pub fn flip_vertical(image: &SceneImage, graph: &RoadGraph) -> (SceneImage, RoadGraph) {
    let (w, h) = (image.width, image.height);
    let mut data = Vec::with_capacity(image.data.len());
    for plane in image.data.chunks_exact(w * h) {
        for y in (0..h).rev() {
            data.extend_from_slice(&plane[y * w..(y + 1) * w]);
        }
    }
    let mut g = graph.clone();
    for p in &mut g.nodes {
        p[1] = ((h - 1) as f64 - p[1]).max(0.0);
    }
    (SceneImage { width: w, height: h, data }, g)
}

/// Random horizontal and vertical flips, each with probability 1/2. Both
/// draws are taken even when `flips` is off so the random stream does not
/// depend on the flag.
pub fn augment(image: &SceneImage, graph: &RoadGraph, flips: bool, rng: &mut impl Rng) -> (SceneImage, RoadGraph) {
    let fh = rng.random_bool(0.5);
    let fv = rng.random_bool(0.5);
    let mut out = (image.clone(), graph.clone());
    if flips && fh {
        out = flip_horizontal(&out.0, &out.1);
    }
    if flips && fv {
        out = flip_vertical(&out.0, &out.1);
    }
    out
}

/// Liang-Barsky clip of segment `a → b` to the box `[0, w] × [0, h]`.
fn clip_segment(a: [f64; 2], b: [f64; 2], w: f64, h: f64) -> Option<(f64, f64)> {
    let d = [b[0] - a[0], b[1] - a[1]];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-d[0], a[0]), (d[0], w - a[0]), (-d[1], a[1]), (d[1], h - a[1])] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

/// The part of `graph` inside the `w × h` window at `(x0, y0)`, in window
/// coordinates. Edges leaving the window end in a new node on its border.
pub fn crop_graph(graph: &RoadGraph, x0: usize, y0: usize, w: usize, h: usize) -> RoadGraph {
    let (bw, bh) = ((w - 1) as f64, (h - 1) as f64);
    let shifted: Vec<[f64; 2]> = graph.nodes.iter().map(|p| [p[0] - x0 as f64, p[1] - y0 as f64]).collect();
    let inside = |p: [f64; 2]| (0.0..=bw).contains(&p[0]) && (0.0..=bh).contains(&p[1]);
    let mut nodes = Vec::new();
    let mut index = vec![None; shifted.len()];
    for (i, &p) in shifted.iter().enumerate() {
        if inside(p) {
            index[i] = Some(nodes.len());
            nodes.push(p);
        }
    }
    let mut edges = Vec::new();
    for &(a, b) in &graph.edges {
        let (pa, pb) = (shifted[a], shifted[b]);
        let Some((t0, t1)) = clip_segment(pa, pb, bw, bh) else {
            continue;
        };
        let mut end = |node: Option<usize>, t: f64| {
            node.unwrap_or_else(|| {
                let p = [
                    (pa[0] + t * (pb[0] - pa[0])).clamp(0.0, bw),
                    (pa[1] + t * (pb[1] - pa[1])).clamp(0.0, bh),
                ];
                nodes.push(p);
                nodes.len() - 1
            })
        };
        let ia = end(index[a], t0);
        let ib = end(index[b], t1);
        edges.push((ia, ib));
    }
    let mut g = RoadGraph::from_raw_edges(nodes, edges);
    g.size = Some((w as u32, h as u32));
    g
}

/// A random `crop × crop` window of the scene, or the scene itself when it
/// already has that size.
pub fn random_crop(image: &SceneImage, graph: &RoadGraph, crop: usize, rng: &mut impl Rng) -> Result<(SceneImage, RoadGraph)> {
    if image.width < crop || image.height < crop {
        return Err(Error::Invalid(format!("scene {}x{} is smaller than the {crop} px crop", image.width, image.height)));
    }
    let x0 = rng.random_range(0..=image.width - crop);
    let y0 = rng.random_range(0..=image.height - crop);
    if (image.width, image.height) == (crop, crop) {
        return Ok((image.clone(), graph.clone()));
    }
    Ok((image.crop(x0, y0, crop, crop), crop_graph(graph, x0, y0, crop, crop)))
}

/// Loss values of one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SampleLoss {
    pub junction: f64,
    pub offset: f64,
    pub edge: f64,
    pub total: f64,
}

/// Forward and backward pass for one training sample. Returns the losses
/// and the gradient of every trainable tensor in [`ModelParams::named`]
/// order. Batch-norm running statistics in `bn` are updated.
pub fn sample_gradients(
    params: &ModelParams,
    bn: &mut [BatchNormState],
    image: &SceneImage,
    targets: &GridTargets,
    config: &TrainConfig,
) -> Result<(SampleLoss, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params, true);
    let img = tape.constant(image.to_tensor());
    let fmap = stem_forward(&mut tape, &bound, img)?;
    let grids = heads_forward(&mut tape, &bound, fmap)?;
    let junction_pred = tape.data(grids.junction).to_vec();
    let labels: EdgeLabelSet = build_edge_labels(targets, &junction_pred, config.train_jthr);

    let mut edge_probs = None;
    if labels.candidate_cells.len() >= 2 {
        let batch = node_batch(&mut tape, &grids, &labels.candidate_cells, image.width, image.height, &params.config)?;
        let feats = batch.feats.expect("non-empty batch has features");
        let x = gnn_forward(&mut tape, &bound, bn, feats, &params.config, NormMode::Train)?;
        edge_probs = Some(score_pairs(&mut tape, &bound.scorer, x, &labels.pairs)?);
    }
    let mask: Vec<bool> = match config.offset_mask {
        OffsetMask::GroundTruth => targets.junction_mask(),
        OffsetMask::Predicted => junction_pred.iter().map(|&j| j > config.train_jthr).collect(),
    };
    let offsets = tape.channels_last(grids.offsets)?;
    let terms = total_loss(&mut tape, grids.junction, offsets, targets, &mask, edge_probs, &labels.labels, &config.weights)?;
    tape.backward(terms.total)?;
    let grads = bound
        .all
        .iter()
        .map(|&v| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(v).len()]))
        .collect();
    let loss = SampleLoss {
        junction: tape.data(terms.junction)[0],
        offset: tape.data(terms.offset)[0],
        edge: tape.data(terms.edge)[0],
        total: tape.data(terms.total)[0],
    };
    Ok((loss, grads))
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Trains a freshly initialized model on `count` scenes supplied by `load`.
/// `on_epoch` sees each finished epoch and the current weights.
pub fn train_with<L, F>(count: usize, load: L, config: &TrainConfig, model: &ModelConfig, mut on_epoch: F) -> Result<(ModelParams, TrainLog)>
where
    L: Fn(usize) -> Result<(SceneImage, RoadGraph)>,
    F: FnMut(&EpochRecord, &ModelParams) -> Result<()>,
{
    config.validate()?;
    model.validate()?;
    if count == 0 {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let mut params = ModelParams::init(model, config.seed)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &params.sizes(),
    );
    let mut log = TrainLog::default();
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let mut rng = epoch_rng(config.seed, epoch);
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut rng);
        let mut sums = SampleLoss::default();
        for batch in order.chunks(config.batch_size) {
            let mut acc: Vec<Vec<f64>> = params.sizes().iter().map(|&n| vec![0.0; n]).collect();
            let mut bn: Vec<BatchNormState> = params.gnn.iter().map(|l| l.bn.clone()).collect();
            for &i in batch {
                let (image, graph) = load(i)?;
                let (image, graph) = random_crop(&image, &graph, config.crop, &mut rng)?;
                let (image, graph) = augment(&image, &graph, config.flips, &mut rng);
                let targets = encode_targets(&graph, image.width, image.height, STRIDE)?;
                let (loss, grads) = sample_gradients(&params, &mut bn, &image, &targets, config)?;
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (x, y) in a.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                sums.junction += loss.junction;
                sums.offset += loss.offset;
                sums.edge += loss.edge;
                sums.total += loss.total;
            }
            let scale = 1.0 / batch.len() as f64;
            for a in &mut acc {
                a.iter_mut().for_each(|x| *x *= scale);
            }
            adam.step(params.tensors_mut().into_iter().map(|t| t.data_mut()).zip(acc.iter().map(Vec::as_slice)));
            for (layer, state) in params.gnn.iter_mut().zip(bn) {
                layer.bn = state;
            }
            if !params.all_finite() {
                return Err(Error::Invalid(format!("non-finite weights in epoch {epoch}")));
            }
        }
        let n = count as f64;
        let record = EpochRecord {
            epoch,
            l_jun: sums.junction / n,
            l_off: sums.offset / n,
            l_edge: sums.edge / n,
            l_total: sums.total / n,
            seconds: start.elapsed().as_secs_f64(),
        };
        log.records.push(record);
        if let Some(dir) = &config.checkpoint_dir {
            if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) || epoch == config.epochs {
                params.save(checkpoint_path(dir))?;
            }
        }
        on_epoch(&record, &params)?;
    }
    Ok((params, log))
}

/// Where the latest checkpoint of a run lives.
pub fn checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("model.ckpt")
}

/// Trains on in-memory scenes.
pub fn train_samples(samples: &[(SceneImage, RoadGraph)], config: &TrainConfig, model: &ModelConfig) -> Result<(ModelParams, TrainLog)> {
    train_with(samples.len(), |i| Ok(samples[i].clone()), config, model, |_, _| Ok(()))
}

/// Trains on every scene in `dataset`, reading each from disk when needed.
pub fn train(dataset: impl AsRef<Path>, config: &TrainConfig, model: &ModelConfig) -> Result<(ModelParams, TrainLog)> {
    train_dir(dataset, config, model, |_, _| Ok(()))
}

pub fn train_dir<F>(dataset: impl AsRef<Path>, config: &TrainConfig, model: &ModelConfig, on_epoch: F) -> Result<(ModelParams, TrainLog)>
where
    F: FnMut(&EpochRecord, &ModelParams) -> Result<()>,
{
    let dataset = dataset.as_ref();
    let scenes = list_scenes(dataset)?;
    if scenes.is_empty() {
        return Err(Error::Invalid(format!("no scenes in {}", dataset.display())));
    }
    let load = |i: usize| -> Result<(SceneImage, RoadGraph)> {
        let s = &scenes[i];
        Ok((SceneImage::load(&s.image)?, load_graph(&s.graph)?))
    };
    train_with(scenes.len(), load, config, model, on_epoch)
}
