//! Trainable weights and the checkpoint file.
//!
//! A checkpoint is the 8-byte magic `ATLGCKPT`, a little-endian `u64` byte
//! length, a JSON manifest with the model configuration and the name and
//! shape of every stored array, then all arrays as little-endian `f64` in
//! manifest order. Batch-norm running statistics are stored as arrays too.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use tensornet::{BatchNormState, Tensor};

use super::config::{ModelConfig, Scorer, STEM_WIDTHS};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ATLGCKPT";

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnLayer {
    /// `Θ = [φ; θ]`, shape `[2·d_in, gnn_dim]`: the top half multiplies
    /// `x_i`, the bottom half `x_j − x_i`.
    pub theta: Tensor,
    pub bias: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub bn: BatchNormState,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScorerParams {
    Bilinear { w: Tensor },
    Mlp { w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub stem: Vec<ConvLayer>,
    pub junction: Vec<ConvLayer>,
    pub offset: Vec<ConvLayer>,
    /// Empty when the model embeds raw stem features.
    pub node: Vec<ConvLayer>,
    pub gnn: Vec<GnnLayer>,
    pub scorer: ScorerParams,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let dist = Normal::new(0.0, std).expect("finite std");
        Tensor::from_fn(shape, |_| dist.sample(&mut self.rng))
    }

    fn conv(&mut self, c_in: usize, c_out: usize, gain: f64) -> ConvLayer {
        let std = gain * (2.0 / (9 * c_in) as f64).sqrt();
        ConvLayer {
            weight: self.normal(&[c_out, c_in, 3, 3], std),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    fn branch(&mut self, c_in: usize, hidden: usize, c_out: usize, final_gain: f64) -> Vec<ConvLayer> {
        vec![self.conv(c_in, hidden, 1.0), self.conv(hidden, hidden, 1.0), self.conv(hidden, c_out, final_gain)]
    }
}

impl ModelParams {
    /// He-initialized weights, zero biases, deterministic in `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let mut widths = vec![3];
        widths.extend_from_slice(&STEM_WIDTHS);
        widths.push(config.n_in);
        let stem = widths.windows(2).map(|w| init.conv(w[0], w[1], 1.0)).collect();
        let mut junction = init.branch(config.n_in, config.n_feat, 1, 0.1);
        // Start with a low junction prior; most cells are empty.
        junction[2].bias = Tensor::full(&[1], -2.0);
        let offset = init.branch(config.n_in, config.n_feat, 2, 0.1);
        let node = if config.use_raw_features {
            Vec::new()
        } else {
            init.branch(config.n_in, config.n_feat, config.n_feat, 1.0)
        };
        let mut gnn = Vec::with_capacity(config.gnn_layers);
        let mut d = config.embed_dim();
        for _ in 0..config.gnn_layers {
            let g = config.gnn_dim;
            gnn.push(GnnLayer {
                theta: init.normal(&[2 * d, g], (2.0 / (2 * d) as f64).sqrt()),
                bias: Tensor::zeros(&[g]),
                gamma: Tensor::full(&[g], 1.0),
                beta: Tensor::zeros(&[g]),
                bn: BatchNormState::new(g),
            });
            d = g;
        }
        let scorer = match config.scorer {
            Scorer::Bilinear => ScorerParams::Bilinear {
                w: init.normal(&[d, d], 1.0 / d as f64),
            },
            Scorer::Mlp => ScorerParams::Mlp {
                w1: init.normal(&[2 * d, config.gnn_dim], (2.0 / (2 * d) as f64).sqrt()),
                b1: Tensor::zeros(&[config.gnn_dim]),
                w2: init.normal(&[config.gnn_dim, 1], (1.0 / config.gnn_dim as f64).sqrt()),
                b2: Tensor::zeros(&[1]),
            },
        };
        Ok(Self {
            config: config.clone(),
            stem,
            junction,
            offset,
            node,
            gnn,
            scorer,
        })
    }

    /// Trainable tensors in a fixed order, with their names.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (prefix, layers) in [("stem", &self.stem), ("junction", &self.junction), ("offset", &self.offset), ("node", &self.node)] {
            for (k, l) in layers.iter().enumerate() {
                out.push((format!("{prefix}.{k}.weight"), &l.weight));
                out.push((format!("{prefix}.{k}.bias"), &l.bias));
            }
        }
        for (k, l) in self.gnn.iter().enumerate() {
            out.push((format!("gnn.{k}.theta"), &l.theta));
            out.push((format!("gnn.{k}.bias"), &l.bias));
            out.push((format!("gnn.{k}.gamma"), &l.gamma));
            out.push((format!("gnn.{k}.beta"), &l.beta));
        }
        match &self.scorer {
            ScorerParams::Bilinear { w } => out.push(("scorer.w".into(), w)),
            ScorerParams::Mlp { w1, b1, w2, b2 } => {
                out.push(("scorer.w1".into(), w1));
                out.push(("scorer.b1".into(), b1));
                out.push(("scorer.w2".into(), w2));
                out.push(("scorer.b2".into(), b2));
            }
        }
        out
    }

    /// Mutable trainable tensors, same order as [`ModelParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for layers in [&mut self.stem, &mut self.junction, &mut self.offset, &mut self.node] {
            for l in layers.iter_mut() {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        for l in &mut self.gnn {
            out.push(&mut l.theta);
            out.push(&mut l.bias);
            out.push(&mut l.gamma);
            out.push(&mut l.beta);
        }
        match &mut self.scorer {
            ScorerParams::Bilinear { w } => out.push(w),
            ScorerParams::Mlp { w1, b1, w2, b2 } => {
                out.push(w1);
                out.push(b1);
                out.push(w2);
                out.push(b2);
            }
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.named().iter().map(|(_, t)| t.len()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.sizes().iter().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.all_finite())
    }

    fn stored(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out: Vec<(String, Vec<usize>, Vec<f64>)> =
            self.named().into_iter().map(|(n, t)| (n, t.shape().to_vec(), t.data().to_vec())).collect();
        for (k, l) in self.gnn.iter().enumerate() {
            let g = l.bn.running_mean.len();
            out.push((format!("gnn.{k}.running_mean"), vec![g], l.bn.running_mean.clone()));
            out.push((format!("gnn.{k}.running_var"), vec![g], l.bn.running_var.clone()));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let stored = self.stored();
        let manifest = Manifest {
            config: self.config.clone(),
            tensors: stored.iter().map(|(n, s, _)| Entry { name: n.clone(), shape: s.clone() }).collect(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serialization cannot fail");
        let mut buf = Vec::with_capacity(16 + json.len() + 8 * self.parameter_count());
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for (_, _, data) in &stored {
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Invalid(format!("checkpoint: {m}"));
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("missing ATLGCKPT magic"));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| bad("truncated header"))?;
        let len = u64::from_le_bytes(len) as usize;
        if r.len() < len {
            return Err(bad("truncated manifest"));
        }
        let (json, mut payload) = r.split_at(len);
        let manifest: Manifest = serde_json::from_slice(json).map_err(|e| bad(&format!("manifest: {e}")))?;
        let mut params = ModelParams::init(&manifest.config, 0)?;
        let expected = params.stored();
        if expected.len() != manifest.tensors.len() {
            return Err(bad("array count does not match the configuration"));
        }
        let mut values = Vec::with_capacity(expected.len());
        for ((name, shape, _), entry) in expected.iter().zip(&manifest.tensors) {
            if *name != entry.name || *shape != entry.shape {
                return Err(bad(&format!("expected {name} {shape:?}, found {} {:?}", entry.name, entry.shape)));
            }
            let n: usize = shape.iter().product();
            if payload.len() < 8 * n {
                return Err(bad(&format!("payload ends inside {name}")));
            }
            let (head, rest) = payload.split_at(8 * n);
            values.push(head.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect::<Vec<f64>>());
            payload = rest;
        }
        if !payload.is_empty() {
            return Err(bad("trailing bytes after the last array"));
        }
        let trainable = params.named().len();
        for (t, v) in params.tensors_mut().into_iter().zip(&values[..trainable]) {
            t.data_mut().copy_from_slice(v);
        }
        for (k, l) in params.gnn.iter_mut().enumerate() {
            l.bn.running_mean = values[trainable + 2 * k].clone();
            l.bn.running_var = values[trainable + 2 * k + 1].clone();
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    tensors: Vec<Entry>,
}
