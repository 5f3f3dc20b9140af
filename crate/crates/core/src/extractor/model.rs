use tensornet::{BatchNormState, NormMode, PairInput, Tape, Tensor, Var};

use super::config::{ModelConfig, Support};
use super::params::{ConvLayer, ModelParams, ScorerParams};
use super::support::{complete_support, knn_support, SupportGraph};
use crate::error::Result;
use crate::gridenc::all_pairs;
use crate::inferpipe::decode_point;
use crate::synthgen::SceneImage;

pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct BoundConv {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundGnn {
    pub theta: Var,
    pub bias: Var,
    pub gamma: Var,
    pub beta: Var,
}

#[derive(Clone, Copy, Debug)]
pub enum BoundScorer {
    Bilinear { w: Var },
    Mlp { w1: Var, b1: Var, w2: Var, b2: Var },
}

/// Parameters placed on a tape, mirroring [`ModelParams`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub stem: Vec<BoundConv>,
    pub junction: Vec<BoundConv>,
    pub offset: Vec<BoundConv>,
    pub node: Vec<BoundConv>,
    pub gnn: Vec<BoundGnn>,
    pub scorer: BoundScorer,
    /// Every trainable variable, in [`ModelParams::named`] order.
    pub all: Vec<Var>,
}

struct Binder<'t> {
    tape: &'t mut Tape,
    trainable: bool,
    all: Vec<Var>,
}

impl Binder<'_> {
    fn put(&mut self, t: &Tensor) -> Var {
        let v = if self.trainable { self.tape.param(t.clone()) } else { self.tape.constant(t.clone()) };
        self.all.push(v);
        v
    }

    fn convs(&mut self, layers: &[ConvLayer]) -> Vec<BoundConv> {
        layers
            .iter()
            .map(|l| BoundConv {
                weight: self.put(&l.weight),
                bias: self.put(&l.bias),
            })
            .collect()
    }
}

/// Records every parameter on `tape`, as a gradient-tracking leaf when
/// `trainable` and as a constant otherwise.
pub fn bind(tape: &mut Tape, params: &ModelParams, trainable: bool) -> BoundParams {
    let mut b = Binder {
        tape,
        trainable,
        all: Vec::new(),
    };
    let stem = b.convs(&params.stem);
    let junction = b.convs(&params.junction);
    let offset = b.convs(&params.offset);
    let node = b.convs(&params.node);
    let gnn = params
        .gnn
        .iter()
        .map(|l| BoundGnn {
            theta: b.put(&l.theta),
            bias: b.put(&l.bias),
            gamma: b.put(&l.gamma),
            beta: b.put(&l.beta),
        })
        .collect();
    let scorer = match &params.scorer {
        ScorerParams::Bilinear { w } => BoundScorer::Bilinear { w: b.put(w) },
        ScorerParams::Mlp { w1, b1, w2, b2 } => BoundScorer::Mlp {
            w1: b.put(w1),
            b1: b.put(b1),
            w2: b.put(w2),
            b2: b.put(b2),
        },
    };
    BoundParams {
        stem,
        junction,
        offset,
        node,
        gnn,
        scorer,
        all: b.all,
    }
}

/// Five stride-2 3×3 convolutions with ReLU: `[3, H, W] → [n_in, H/32, W/32]`.
pub fn stem_forward(tape: &mut Tape, bound: &BoundParams, image: Var) -> Result<Var> {
    let mut x = image;
    for l in &bound.stem {
        let y = tape.conv2d(x, l.weight, l.bias, 2, 1)?;
        x = tape.relu(y);
    }
    Ok(x)
}

fn branch(tape: &mut Tape, layers: &[BoundConv], fmap: Var) -> Result<Var> {
    let mut x = fmap;
    for (k, l) in layers.iter().enumerate() {
        x = tape.conv2d(x, l.weight, l.bias, 1, 1)?;
        if k + 1 < layers.len() {
            x = tape.relu(x);
        }
    }
    Ok(x)
}

/// Outputs of the three head branches on one feature map.
#[derive(Clone, Copy, Debug)]
pub struct Grids {
    pub fmap: Var,
    /// `[1, H, W]`, sigmoid output.
    pub junction: Var,
    /// `[2, H, W]`, `0.5 · tanh` output.
    pub offsets: Var,
    /// `[n_feat, H, W]`; absent when raw stem features are embedded.
    pub node_feat: Option<Var>,
    pub grid_h: usize,
    pub grid_w: usize,
}

pub fn heads_forward(tape: &mut Tape, bound: &BoundParams, fmap: Var) -> Result<Grids> {
    let (grid_h, grid_w) = (tape.shape(fmap)[1], tape.shape(fmap)[2]);
    let j = branch(tape, &bound.junction, fmap)?;
    let junction = tape.sigmoid(j);
    let o = branch(tape, &bound.offset, fmap)?;
    let o = tape.tanh(o);
    let offsets = tape.scale(o, 0.5);
    let node_feat = if bound.node.is_empty() {
        None
    } else {
        Some(branch(tape, &bound.node, fmap)?)
    };
    Ok(Grids {
        fmap,
        junction,
        offsets,
        node_feat,
        grid_h,
        grid_w,
    })
}

/// Detected nodes and their initial embeddings.
#[derive(Clone, Debug)]
pub struct NodeBatch {
    pub cells: Vec<usize>,
    pub coords: Vec<[f64; 2]>,
    /// `[n, embed_dim]`; `None` for an empty batch.
    pub feats: Option<Var>,
}

impl NodeBatch {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Builds the node batch for the given cells. Coordinates are decoded from
/// the current offset predictions and do not carry gradient.
pub fn node_batch(tape: &mut Tape, grids: &Grids, cells: &[usize], image_w: usize, image_h: usize, config: &ModelConfig) -> Result<NodeBatch> {
    let hw = grids.grid_h * grids.grid_w;
    let off = tape.data(grids.offsets);
    let coords: Vec<[f64; 2]> = cells
        .iter()
        .map(|&c| decode_point(c, [off[c], off[hw + c]], grids.grid_w, image_w, image_h))
        .collect();
    if cells.is_empty() {
        return Ok(NodeBatch {
            cells: Vec::new(),
            coords,
            feats: None,
        });
    }
    let source = grids.node_feat.unwrap_or(grids.fmap);
    let c = tape.shape(source)[0];
    let cl = tape.channels_last(source)?;
    let flat = tape.reshape(cl, &[hw, c])?;
    let mut feats = tape.gather_rows(flat, cells)?;
    if config.embed_coords {
        let pos: Vec<f64> = coords.iter().flat_map(|p| [p[0] / image_w as f64, p[1] / image_h as f64]).collect();
        let pos = tape.constant(Tensor::from_vec(vec![cells.len(), 2], pos)?);
        feats = tape.concat_cols(feats, pos)?;
    }
    Ok(NodeBatch {
        cells: cells.to_vec(),
        coords,
        feats: Some(feats),
    })
}

/// Support graph for GNN layer `layer` given that layer's input features.
pub fn build_support_graph(config: &ModelConfig, layer_input: &[f64], initial: &[f64], n: usize, d_layer: usize, d_initial: usize) -> SupportGraph {
    match config.support {
        Support::Complete => complete_support(n),
        Support::KnnStatic => knn_support(initial, n, d_initial, config.k),
        Support::KnnDynamic => knn_support(layer_input, n, d_layer, config.k),
    }
}

/// One EdgeConv layer: `e_ij = ReLU(Θᵀ [x_i ‖ x_j − x_i] + b)`, max over the
/// in-edges of each node, then batch normalization.
pub fn edgeconv_layer(tape: &mut Tape, x: Var, support: &SupportGraph, layer: &BoundGnn, bn: &mut BatchNormState, mode: NormMode) -> Result<Var> {
    let msg = tape.pair_affine(x, layer.theta, layer.bias, &support.edges, PairInput::Difference)?;
    let msg = tape.relu(msg);
    let agg = tape.max_reduce_segments(msg, &support.offsets)?;
    Ok(tape.batchnorm(agg, layer.gamma, layer.beta, bn, mode, BN_EPS)?)
}

/// Runs every GNN layer over the node batch.
pub fn gnn_forward(tape: &mut Tape, bound: &BoundParams, bn: &mut [BatchNormState], feats: Var, config: &ModelConfig, mode: NormMode) -> Result<Var> {
    let n = tape.shape(feats)[0];
    let d0 = tape.shape(feats)[1];
    let initial = tape.data(feats).to_vec();
    let mut x = feats;
    let mut cached: Option<SupportGraph> = None;
    for (layer, state) in bound.gnn.iter().zip(bn.iter_mut()) {
        let support = match (config.support, &cached) {
            (Support::Complete | Support::KnnStatic, Some(s)) => s.clone(),
            _ => {
                let d = tape.shape(x)[1];
                let s = build_support_graph(config, tape.data(x), &initial, n, d, d0);
                cached = Some(s.clone());
                s
            }
        };
        x = edgeconv_layer(tape, x, &support, layer, state, mode)?;
    }
    Ok(x)
}

/// Edge probabilities for unordered pairs: the raw score is averaged over
/// both argument orders before the sigmoid, so `p_ij = p_ji` exactly.
pub fn score_pairs(tape: &mut Tape, scorer: &BoundScorer, x: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    let mut both = pairs.to_vec();
    both.extend(pairs.iter().map(|&(i, j)| (j, i)));
    let raw = match *scorer {
        BoundScorer::Bilinear { w } => tape.bilinear_form(x, w, &both)?,
        BoundScorer::Mlp { w1, b1, w2, b2 } => {
            let h = tape.pair_affine(x, w1, b1, &both, PairInput::Concat)?;
            let h = tape.relu(h);
            let s = tape.linear(h, w2, b2)?;
            tape.reshape(s, &[both.len()])?
        }
    };
    let sym = tape.half_mean(raw)?;
    Ok(tape.sigmoid(sym))
}

/// Scored candidate pairs; `pairs[k] = (a, b)` indexes the node batch, `a < b`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeScores {
    pub pairs: Vec<(usize, usize)>,
    pub probs: Vec<f64>,
}

/// Everything the model predicts for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    pub grid_h: usize,
    pub grid_w: usize,
    /// Junction-ness per cell, row-major.
    pub junction: Vec<f64>,
    /// `(u, v)` per cell, row-major.
    pub offsets: Vec<f64>,
    pub cells: Vec<usize>,
    pub coords: Vec<[f64; 2]>,
    pub scores: EdgeScores,
}

/// Cells whose junction-ness strictly exceeds `j_thr`.
pub fn select_cells(junction: &[f64], j_thr: f64) -> Vec<usize> {
    (0..junction.len()).filter(|&c| junction[c] > j_thr).collect()
}

/// Inference forward pass on one image with batch norm in eval mode.
pub fn model_forward(image: &SceneImage, params: &ModelParams, j_thr: f64) -> Result<ModelOutput> {
    let config = &params.config;
    config.check_image(image.width, image.height)?;
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params, false);
    let img = tape.constant(image.to_tensor());
    let fmap = stem_forward(&mut tape, &bound, img)?;
    let grids = heads_forward(&mut tape, &bound, fmap)?;
    let hw = grids.grid_h * grids.grid_w;
    let junction = tape.data(grids.junction).to_vec();
    let off = tape.data(grids.offsets);
    let offsets = (0..hw).flat_map(|c| [off[c], off[hw + c]]).collect();
    let cells = select_cells(&junction, j_thr);
    let batch = node_batch(&mut tape, &grids, &cells, image.width, image.height, config)?;
    let mut scores = EdgeScores::default();
    if let Some(feats) = batch.feats {
        let mut bn: Vec<BatchNormState> = params.gnn.iter().map(|l| l.bn.clone()).collect();
        let x = gnn_forward(&mut tape, &bound, &mut bn, feats, config, NormMode::Eval)?;
        let pairs = all_pairs(batch.len());
        if !pairs.is_empty() {
            let p = score_pairs(&mut tape, &bound.scorer, x, &pairs)?;
            scores.probs = tape.data(p).to_vec();
            scores.pairs = pairs;
        }
    }
    Ok(ModelOutput {
        grid_h: grids.grid_h,
        grid_w: grids.grid_w,
        junction,
        offsets,
        cells: batch.cells,
        coords: batch.coords,
        scores,
    })
}
